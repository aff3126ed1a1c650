use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::hs::hs_accumulate;
use super::huffman::{build_huffman_tree, HuffmanCoding};
use super::table::EmbeddingTable;
use crate::corpus::{PhraseCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub dimension: usize,
    pub window: usize,
    pub epochs: usize,
    pub initial_learning_rate: f64,
    /// Defaults to 1e-4 · initial_learning_rate.
    pub min_learning_rate: Option<f64>,
    pub seed: u64,
    pub deterministic: bool,
    /// Worker threads when `deterministic` is false.
    pub workers: usize,
    pub keep_internal_nodes: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dimension: 32,
            window: 5,
            epochs: 5,
            initial_learning_rate: 0.025,
            min_learning_rate: None,
            seed: 1,
            deterministic: true,
            workers: 1,
            keep_internal_nodes: false,
        }
    }
}

impl EmbedConfig {
    pub fn min_lr(&self) -> f64 {
        self.min_learning_rate
            .unwrap_or(1e-4 * self.initial_learning_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 1 || self.window < 1 || self.epochs < 1 {
            return Err(Error::config("dimension, window and epochs must be >= 1"));
        }
        if !(self.initial_learning_rate > 0.0) || !(self.min_lr() > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.min_lr() >= self.initial_learning_rate {
            return Err(Error::config("min_learning_rate must be below initial_learning_rate"));
        }
        Ok(())
    }
}

/// Shared f64 matrix tolerant of unsynchronized concurrent updates.
/// With a single worker it behaves exactly like a plain buffer.
struct SharedMatrix {
    cells: Vec<AtomicU64>,
    dim: usize,
}

impl SharedMatrix {
    fn from_vec(values: Vec<f64>, dim: usize) -> Self {
        SharedMatrix {
            cells: values.into_iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
            dim,
        }
    }

    fn load_row(&self, row: usize, out: &mut [f64]) {
        let cells = &self.cells[row * self.dim..(row + 1) * self.dim];
        for (o, c) in out.iter_mut().zip(cells) {
            *o = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn sub_scaled(&self, row: usize, delta: &[f64], scale: f64) {
        let cells = &self.cells[row * self.dim..(row + 1) * self.dim];
        for (c, d) in cells.iter().zip(delta) {
            let v = f64::from_bits(c.load(Ordering::Relaxed)) - scale * d;
            c.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_vec(self) -> Vec<f64> {
        self.cells
            .into_iter()
            .map(|c| f64::from_bits(c.into_inner()))
            .collect()
    }
}

struct Shared<'a> {
    input: SharedMatrix,
    nodes: SharedMatrix,
    coding: &'a HuffmanCoding,
    processed: AtomicU64,
    total_tokens: u64,
    config: &'a EmbedConfig,
}

impl Shared<'_> {
    fn learning_rate(&self) -> f64 {
        let done = self.processed.load(Ordering::Relaxed) as f64;
        let init = self.config.initial_learning_rate;
        let min = self.config.min_lr();
        (init - (init - min) * done / self.total_tokens as f64).max(min)
    }
}

struct Scratch {
    center: Vec<f64>,
    rows: Vec<f64>,
    grad_center: Vec<f64>,
    grad_rows: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            center: vec![0.0; dim],
            rows: Vec::new(),
            grad_center: vec![0.0; dim],
            grad_rows: Vec::new(),
        }
    }
}

/// One SGD step on the pair (center → target); returns the pre-update loss.
fn sgd_step(shared: &Shared, scratch: &mut Scratch, center: usize, target: usize, lr: f64) -> f64 {
    let dim = shared.input.dim;
    let path = shared.coding.path(target);
    let code = shared.coding.code(target);
    shared.input.load_row(center, &mut scratch.center);
    scratch.rows.resize(path.len() * dim, 0.0);
    for (k, &node) in path.iter().enumerate() {
        shared
            .nodes
            .load_row(node, &mut scratch.rows[k * dim..(k + 1) * dim]);
    }
    scratch.grad_center.iter_mut().for_each(|g| *g = 0.0);
    scratch.grad_rows.clear();
    scratch.grad_rows.resize(path.len() * dim, 0.0);
    let loss = hs_accumulate(
        &scratch.center,
        &scratch.rows,
        code,
        &mut scratch.grad_center,
        &mut scratch.grad_rows,
    );
    for (k, &node) in path.iter().enumerate() {
        shared
            .nodes
            .sub_scaled(node, &scratch.grad_rows[k * dim..(k + 1) * dim], lr);
    }
    shared.input.sub_scaled(center, &scratch.grad_center, lr);
    loss
}

/// Runs every epoch over `phrases`; returns per-epoch (loss sum, step count).
fn run_worker(shared: &Shared, phrases: &[Vec<usize>], rng_seed: u64) -> Vec<(f64, u64)> {
    let mut rng = seed::rng(rng_seed);
    let mut scratch = Scratch::new(shared.input.dim);
    let window = shared.config.window;
    let mut log = Vec::with_capacity(shared.config.epochs);
    for _ in 0..shared.config.epochs {
        let (mut loss, mut steps) = (0.0, 0u64);
        for phrase in phrases {
            for t in 0..phrase.len() {
                let b = rng.random_range(1..=window);
                let lr = shared.learning_rate();
                let lo = t.saturating_sub(b);
                let hi = (t + b).min(phrase.len() - 1);
                for c in lo..=hi {
                    if c == t {
                        continue;
                    }
                    loss += sgd_step(shared, &mut scratch, phrase[t], phrase[c], lr);
                    steps += 1;
                }
                shared.processed.fetch_add(1, Ordering::Relaxed);
            }
        }
        log.push((loss, steps));
    }
    log
}

fn index_corpus(corpus: &PhraseCorpus, vocab: &Vocabulary) -> Result<Vec<Vec<usize>>> {
    corpus
        .phrases()
        .iter()
        .map(|p| {
            p.tokens
                .iter()
                .map(|t| {
                    vocab.index_of(t).ok_or_else(|| {
                        Error::config(format!("phrase token {t:?} is not in the vocabulary"))
                    })
                })
                .collect()
        })
        .collect()
}

/// Mean training loss per step, one entry per epoch.
pub type EpochLosses = Vec<f64>;

pub fn train_skipgram(corpus: &PhraseCorpus, vocab: &Vocabulary, config: &EmbedConfig) -> Result<EmbeddingTable> {
    train_skipgram_logged(corpus, vocab, config).map(|(t, _)| t)
}

/// Skip-gram with hierarchical softmax. Each center token predicts the
/// Huffman path of every context token inside a window whose radius is
/// drawn uniformly from 1..=window. Learning rate decays linearly with
/// processed tokens.
pub fn train_skipgram_logged(
    corpus: &PhraseCorpus,
    vocab: &Vocabulary,
    config: &EmbedConfig,
) -> Result<(EmbeddingTable, EpochLosses)> {
    config.validate()?;
    if corpus.is_empty() || vocab.is_empty() {
        return Err(Error::NothingToTrain);
    }
    let phrases = index_corpus(corpus, vocab)?;
    let coding = build_huffman_tree(vocab)?;
    let dim = config.dimension;

    let mut init_rng = seed::rng(seed::derive(config.seed, "init"));
    let half = 0.5 / dim as f64;
    let input: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| init_rng.random_range(-half..half))
        .collect();
    let shared = Shared {
        input: SharedMatrix::from_vec(input, dim),
        nodes: SharedMatrix::from_vec(vec![0.0; coding.node_count() * dim], dim),
        coding: &coding,
        processed: AtomicU64::new(0),
        total_tokens: (config.epochs * corpus.stats().token_count) as u64,
        config,
    };

    let workers = if config.deterministic { 1 } else { config.workers.max(1) };
    let logs: Vec<Vec<(f64, u64)>> = if workers == 1 {
        vec![run_worker(&shared, &phrases, seed::derive(config.seed, "window"))]
    } else {
        let shards: Vec<Vec<Vec<usize>>> = (0..workers)
            .map(|w| phrases.iter().skip(w).step_by(workers).cloned().collect())
            .collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = shards
                .iter()
                .enumerate()
                .map(|(w, shard)| {
                    let shared = &shared;
                    let seed = seed::derive_indexed(config.seed, "window", w as u64);
                    s.spawn(move || run_worker(shared, shard, seed))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    };
    let epoch_losses = (0..config.epochs)
        .map(|e| {
            let (loss, steps) = logs
                .iter()
                .fold((0.0, 0u64), |acc, l| (acc.0 + l[e].0, acc.1 + l[e].1));
            if steps == 0 {
                0.0
            } else {
                loss / steps as f64
            }
        })
        .collect();

    let ids = vocab.entries().iter().map(|e| e.item_id.clone()).collect();
    let Shared { input, nodes, .. } = shared;
    let mut table = EmbeddingTable::new(ids, input.into_vec(), dim)?;
    if config.keep_internal_nodes {
        table = table.with_internal_nodes(nodes.into_vec());
    }
    Ok((table, epoch_losses))
}

/// Mean hierarchical-softmax loss over every (center, context) pair at the
/// full window radius. Needs a table trained with `keep_internal_nodes`.
pub fn mean_corpus_loss(table: &EmbeddingTable, corpus: &PhraseCorpus, vocab: &Vocabulary, window: usize) -> Result<f64> {
    let nodes = table
        .internal_nodes()
        .ok_or_else(|| Error::config("table has no internal node vectors"))?;
    let coding = build_huffman_tree(vocab)?;
    let phrases = index_corpus(corpus, vocab)?;
    let dim = table.dimension();
    let (mut total, mut pairs) = (0.0, 0u64);
    let mut rows = Vec::new();
    let mut gc = vec![0.0; dim];
    let mut gr = Vec::new();
    for p in &phrases {
        for t in 0..p.len() {
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(p.len() - 1);
            for c in (lo..=hi).filter(|&c| c != t) {
                let path = coding.path(p[c]);
                rows.clear();
                for &n in path {
                    rows.extend_from_slice(&nodes[n * dim..(n + 1) * dim]);
                }
                gr.clear();
                gr.resize(rows.len(), 0.0);
                total += hs_accumulate(table.row(p[t]), &rows, coding.code(p[c]), &mut gc, &mut gr);
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::NothingToTrain);
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, Phrase};

    fn toy_corpus() -> (PhraseCorpus, Vocabulary) {
        let mut phrases = Vec::new();
        for i in 0..60 {
            let base = if i % 2 == 0 { ["a", "b", "c"] } else { ["x", "y", "z"] };
            let tokens = (0..5).map(|k| base[(i + k) % 3].to_string()).collect();
            phrases.push(Phrase { tokens });
        }
        let c = PhraseCorpus::new(phrases);
        let v = build_vocabulary(&c, 1).unwrap();
        (c, v)
    }

    #[test]
    fn empty_corpus_is_error() {
        let v = Vocabulary::from_counts([("a".to_string(), 3)], 1);
        let err = train_skipgram(&PhraseCorpus::default(), &v, &EmbedConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "nothing to train");
    }

    #[test]
    fn deterministic_runs_are_bitwise_equal() {
        let (c, v) = toy_corpus();
        let cfg = EmbedConfig {
            dimension: 8,
            seed: 5,
            ..Default::default()
        };
        let a = train_skipgram(&c, &v, &cfg).unwrap();
        let b = train_skipgram(&c, &v, &cfg).unwrap();
        assert_eq!(a, b);
        let other = train_skipgram(&c, &v, &EmbedConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn initial_loss_is_ln2_per_bit() {
        let (c, v) = toy_corpus();
        // one epoch at a negligible learning rate leaves the zero node vectors untouched
        let cfg = EmbedConfig {
            dimension: 4,
            epochs: 1,
            initial_learning_rate: 1e-300,
            min_learning_rate: Some(1e-301),
            keep_internal_nodes: true,
            ..Default::default()
        };
        let (t, _) = train_skipgram_logged(&c, &v, &cfg).unwrap();
        let coding = build_huffman_tree(&v).unwrap();
        let loss = mean_corpus_loss(&t, &c, &v, 1).unwrap();
        // every pair pays ln2 per code bit
        let (mut bits, mut pairs) = (0.0, 0.0);
        for p in c.phrases() {
            for t in 0..p.tokens.len() {
                for ctx in [t.wrapping_sub(1), t + 1] {
                    if let Some(tok) = p.tokens.get(ctx) {
                        bits += coding.code(v.index_of(tok).unwrap()).len() as f64;
                        pairs += 1.0;
                    }
                }
            }
        }
        assert!((loss - std::f64::consts::LN_2 * bits / pairs).abs() < 1e-12);
    }

    #[test]
    fn hogwild_mode_still_learns() {
        let (c, v) = toy_corpus();
        let cfg = EmbedConfig {
            dimension: 8,
            deterministic: false,
            workers: 3,
            epochs: 10,
            ..Default::default()
        };
        let (t, losses) = train_skipgram_logged(&c, &v, &cfg).unwrap();
        assert_eq!(t.len(), 6);
        assert!(losses.last().unwrap() < &losses[0]);
    }

    #[test]
    fn rejects_bad_config_and_unfiltered_corpus() {
        let (c, v) = toy_corpus();
        let bad = EmbedConfig {
            window: 0,
            ..Default::default()
        };
        assert!(train_skipgram(&c, &v, &bad).is_err());
        let small = Vocabulary::from_counts([("a".to_string(), 3)], 1);
        assert!(train_skipgram(&c, &small, &EmbedConfig::default()).is_err());
    }
}
