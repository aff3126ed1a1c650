use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// Binary Huffman coding over a vocabulary. Internal nodes are numbered in
/// creation order, so the root is `node_count - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanCoding {
    codes: Vec<Vec<u8>>,
    paths: Vec<Vec<usize>>,
    node_count: usize,
}

impl HuffmanCoding {
    pub fn code(&self, index: usize) -> &[u8] {
        &self.codes[index]
    }

    /// Internal-node indices from the root down to the leaf's parent.
    pub fn path(&self, index: usize) -> &[usize] {
        &self.paths[index]
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Σ weight·code_length.
    pub fn weighted_length(&self, weights: &[u64]) -> u64 {
        weights
            .iter()
            .zip(&self.codes)
            .map(|(w, c)| w * c.len() as u64)
            .sum()
    }
}

pub fn build_huffman_tree(vocab: &Vocabulary) -> Result<HuffmanCoding> {
    huffman_from_weights(&vocab.counts())
}

/// Repeatedly merge the two lightest nodes. Ties go to the node created
/// first; leaves count as created in index order, before any internal node.
/// The lighter child is on the left (bit 0).
pub fn huffman_from_weights(weights: &[u64]) -> Result<HuffmanCoding> {
    let n = weights.len();
    if n == 0 {
        return Err(Error::config("cannot build a Huffman tree over an empty vocabulary"));
    }
    if n == 1 {
        return Ok(HuffmanCoding {
            codes: vec![vec![]],
            paths: vec![vec![]],
            node_count: 0,
        });
    }
    // Node ids: 0..n leaves, n.. internal. Creation order equals node id.
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        weights.iter().enumerate().map(|(i, &w)| Reverse((w, i))).collect();
    let mut children: Vec<(usize, usize)> = Vec::with_capacity(n - 1);
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        let id = n + children.len();
        children.push((a, b));
        heap.push(Reverse((wa + wb, id)));
    }

    let node_count = n - 1;
    let mut codes = vec![Vec::new(); n];
    let mut paths = vec![Vec::new(); n];
    let mut stack: Vec<(usize, Vec<u8>, Vec<usize>)> = vec![(n + node_count - 1, vec![], vec![])];
    while let Some((node, code, path)) = stack.pop() {
        if node < n {
            codes[node] = code;
            paths[node] = path;
            continue;
        }
        let internal = node - n;
        let (left, right) = children[internal];
        for (child, bit) in [(right, 1u8), (left, 0u8)] {
            let mut c = code.clone();
            c.push(bit);
            let mut p = path.clone();
            p.push(internal);
            stack.push((child, c, p));
        }
    }
    Ok(HuffmanCoding {
        codes,
        paths,
        node_count,
    })
}
