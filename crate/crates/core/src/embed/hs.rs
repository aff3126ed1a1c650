//! Hierarchical-softmax negative log-likelihood along a Huffman path.
//!
//! At each internal node the probability of taking the branch toward the
//! target is σ(s·⟨center, node⟩) with s = +1 for code bit 0 and −1 for
//! bit 1. The loss is the sum of −log of those probabilities.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HsGradient {
    pub loss: f64,
    /// ∂loss/∂center.
    pub center: Vec<f64>,
    /// ∂loss/∂node for each node on the path, in path order.
    pub nodes: Vec<Vec<f64>>,
}

#[inline]
fn branch_sign(bit: u8) -> f64 {
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}

/// ln(1 + e^x) without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss and exact gradients for one (center, target) pair.
///
/// `node_vectors` is the full internal-node matrix, row-major with the
/// same width as `center`; `path` indexes its rows.
pub fn hs_loss_and_gradient(
    center: &[f64],
    path: &[usize],
    code: &[u8],
    node_vectors: &[f64],
) -> Result<HsGradient> {
    let dim = center.len();
    if path.len() != code.len() {
        return Err(Error::config("path and code lengths differ"));
    }
    if center.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("center vector"));
    }
    let mut rows = Vec::with_capacity(path.len() * dim);
    for &node in path {
        let row = node_vectors
            .get(node * dim..(node + 1) * dim)
            .ok_or_else(|| Error::config(format!("path node {node} out of range")))?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("node vector"));
        }
        rows.extend_from_slice(row);
    }
    let mut grad_center = vec![0.0; dim];
    let mut grad_rows = vec![0.0; rows.len()];
    let loss = hs_accumulate(center, &rows, code, &mut grad_center, &mut grad_rows);
    Ok(HsGradient {
        loss,
        center: grad_center,
        nodes: grad_rows.chunks(dim.max(1)).take(path.len()).map(<[f64]>::to_vec).collect(),
    })
}

/// Buffer-reusing kernel shared with the trainer. `path_rows` holds the
/// path's node vectors back to back. Gradients are added into the outputs.
pub(crate) fn hs_accumulate(
    center: &[f64],
    path_rows: &[f64],
    code: &[u8],
    grad_center: &mut [f64],
    grad_rows: &mut [f64],
) -> f64 {
    let dim = center.len();
    let mut loss = 0.0;
    for (k, &bit) in code.iter().enumerate() {
        let row = &path_rows[k * dim..(k + 1) * dim];
        let dot: f64 = center.iter().zip(row).map(|(a, b)| a * b).sum();
        let s = branch_sign(bit);
        loss += softplus(-s * dot);
        // d/d(dot) of softplus(-s·dot)
        let g = -s * sigmoid(-s * dot);
        for (gc, r) in grad_center.iter_mut().zip(row) {
            *gc += g * r;
        }
        for (gr, c) in grad_rows[k * dim..(k + 1) * dim].iter_mut().zip(center) {
            *gr += g * c;
        }
    }
    loss
}
