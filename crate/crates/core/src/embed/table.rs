use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Item vectors published by training. Rows follow vocabulary index order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    dimension: usize,
    internal_nodes: Option<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, vectors: Vec<f64>, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::config("dimension must be >= 1"));
        }
        if vectors.len() != ids.len() * dimension {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dimension,
                got: vectors.len(),
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding vector"));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate embedding id {id:?}")));
            }
        }
        Ok(EmbeddingTable {
            ids,
            index,
            vectors,
            dimension,
            internal_nodes: None,
        })
    }

    pub(crate) fn with_internal_nodes(mut self, nodes: Vec<f64>) -> Self {
        self.internal_nodes = Some(nodes);
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Internal hierarchical-softmax node vectors, if training kept them.
    pub fn internal_nodes(&self) -> Option<&[f64]> {
        self.internal_nodes.as_deref()
    }

    /// Multiply every vector by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut t = EmbeddingTable::new(
            self.ids.clone(),
            self.vectors.iter().map(|v| v * factor).collect(),
            self.dimension,
        )?;
        t.internal_nodes = self.internal_nodes.clone();
        Ok(t)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_similarity(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            got: w.len(),
        });
    }
    let (nv, nw) = (norm(v), norm(w));
    if nv == 0.0 || nw == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    Ok((dot / (nv * nw)).clamp(-1.0, 1.0))
}

/// Top-`k` items by cosine similarity to `item_id`, excluding itself.
/// Ties go to the smaller id. Zero-norm rows are skipped.
pub fn nearest_neighbors(table: &EmbeddingTable, item_id: &str, k: usize) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::config("k must be >= 1"));
    }
    let query = table
        .get(item_id)
        .ok_or_else(|| Error::UnknownItem(item_id.to_string()))?;
    let mut scored: Vec<(&str, f64)> = Vec::with_capacity(table.len());
    for (i, id) in table.ids.iter().enumerate() {
        if id == item_id {
            continue;
        }
        match cosine_similarity(query, table.row(i)) {
            Ok(s) => scored.push((id, s)),
            Err(Error::ZeroNorm) => continue,
            Err(e) => return Err(e),
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(id, s)| (id.to_string(), s)).collect())
}

/// Text interchange form: a "count dimension" header, then one
/// space-separated line per item. Values use shortest round-trip formatting.
pub fn write_embeddings_text(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {}", table.len(), table.dimension).map_err(io)?;
    for (i, id) in table.ids.iter().enumerate() {
        write!(w, "{id}").map_err(io)?;
        for v in table.row(i) {
            write!(w, " {v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_embeddings_text(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut lines = r.lines();
    let malformed = |line: usize, m: &str| Error::Malformed {
        line,
        message: m.to_string(),
    };
    let header = lines
        .next()
        .ok_or_else(|| malformed(1, "missing header"))?
        .map_err(|e| Error::io(path, e))?;
    let mut hs = header.split_whitespace();
    let count: usize = hs
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(1, "bad vocab size"))?;
    let dim: usize = hs
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(1, "bad dimension"))?;
    let mut ids = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count * dim);
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let id = parts.next().unwrap_or_default();
        let before = vectors.len();
        for p in parts {
            vectors.push(p.parse::<f64>().map_err(|_| malformed(n + 2, "bad value"))?);
        }
        if vectors.len() - before != dim {
            return Err(malformed(n + 2, "wrong number of values"));
        }
        ids.push(id.to_string());
    }
    if ids.len() != count {
        return Err(malformed(1, "header count does not match rows"));
    }
    EmbeddingTable::new(ids, vectors, dim)
}

/// Little-endian f32 sidecar, rows in the same order as the text file.
/// Carries no ids; pair it with the text file's id column.
pub fn write_embeddings_binary(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for v in &table.vectors {
        w.write_all(&(*v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings_binary(path: impl AsRef<Path>, ids: Vec<String>, dimension: usize) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Malformed {
            line: 0,
            message: "binary sidecar length is not a multiple of 4".into(),
        });
    }
    let vectors = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EmbeddingTable::new(ids, vectors, dimension)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        let dim = rows[0].1.len();
        EmbeddingTable::new(
            rows.iter().map(|r| r.0.to_string()).collect(),
            rows.iter().flat_map(|r| r.1.iter().copied()).collect(),
            dim,
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[2.0, 2.0], &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        let s = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn knn_top1_and_full_sort() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.9, 0.1]), ("c", &[0.0, 1.0])]);
        let nn = nearest_neighbors(&t, "a", 1).unwrap();
        assert_eq!(nn[0].0, "b");
        let all = nearest_neighbors(&t, "a", 10).unwrap();
        let ids: Vec<&str> = all.iter().map(|x| x.0.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
        assert!(nearest_neighbors(&t, "zzz", 1).is_err());
    }

    #[test]
    fn knn_ties_by_id() {
        let t = table(&[("q", &[1.0, 0.0]), ("z", &[0.0, 1.0]), ("m", &[0.0, 2.0])]);
        let nn = nearest_neighbors(&t, "q", 2).unwrap();
        assert_eq!(nn[0].0, "m");
        assert_eq!(nn[1].0, "z");
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = table(&[("a", &[0.1, -1.0 / 3.0]), ("b", &[1e-300, 7.0])]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        write_embeddings_text(&t, &p).unwrap();
        assert_eq!(read_embeddings_text(&p).unwrap(), t);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("2 2\na 0.1 "));
    }

    #[test]
    fn binary_sidecar_matches_as_f32() {
        let t = table(&[("a", &[0.5, -2.0]), ("b", &[0.25, 3.0])]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        write_embeddings_binary(&t, &p).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16);
        let back = read_embeddings_binary(&p, t.ids().to_vec(), 2).unwrap();
        assert_eq!(back, t);
    }
}
