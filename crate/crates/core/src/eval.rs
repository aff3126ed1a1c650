//! Mean reciprocal rank of sold items, bootstrap confidence intervals over
//! query groups, and paired model comparisons.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetVariant, RankingDataset};
use crate::error::{Error, Result};
use crate::lambdamart::{score_dataset, TreeEnsemble};
use crate::seed;

pub const DEFAULT_RESAMPLES: usize = 1000;

/// 1 / (1-based position of the first positive); 0 without a positive.
pub fn reciprocal_rank(ranked_labels: &[u8]) -> f64 {
    ranked_labels
        .iter()
        .position(|&l| l == 1)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub dataset_variant: DatasetVariant,
    pub mrr: f64,
    pub bootstrap: BootstrapCi,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_query_rr_path: Option<String>,
    /// Keyed by query id; stored next to the report, not inside it.
    #[serde(skip)]
    pub per_query_rr: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn write_per_query(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for (q, rr) in &self.per_query_rr {
            writeln!(w, "{q}\t{rr}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_per_query(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
        let path = path.as_ref();
        let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut out = BTreeMap::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let (q, v) = line.split_once('\t').ok_or_else(|| Error::Malformed {
                line: n + 1,
                message: "expected query_id<TAB>rr".into(),
            })?;
            let v: f64 = v.parse().map_err(|_| Error::Malformed {
                line: n + 1,
                message: "bad reciprocal rank".into(),
            })?;
            out.insert(q.to_string(), v);
        }
        Ok(out)
    }
}

/// Per-group reciprocal rank for given instance scores (dataset order).
/// Ranks by score descending, ties by item id ascending.
pub fn per_query_rr(ds: &RankingDataset, scores: &[f64]) -> Result<BTreeMap<String, f64>> {
    if scores.len() != ds.instance_count() {
        return Err(Error::SchemaMismatch(format!(
            "{} scores for {} instances",
            scores.len(),
            ds.instance_count()
        )));
    }
    let mut out = BTreeMap::new();
    let mut offset = 0;
    for g in &ds.groups {
        let s = &scores[offset..offset + g.instances.len()];
        offset += g.instances.len();
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| {
            s[b].total_cmp(&s[a])
                .then_with(|| g.instances[a].item_id.cmp(&g.instances[b].item_id))
        });
        let ranked: Vec<u8> = idx.iter().map(|&i| g.instances[i].label).collect();
        if out.insert(g.query_id.clone(), reciprocal_rank(&ranked)).is_some() {
            return Err(Error::SchemaMismatch(format!("duplicate query {:?}", g.query_id)));
        }
    }
    Ok(out)
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn evaluate(model: &TreeEnsemble, ds: &RankingDataset, model_name: &str, resamples: usize, seed_value: u64) -> Result<EvalReport> {
    if ds.groups.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scores = score_dataset(model, ds)?;
    report_from_scores(ds, &scores, model_name, resamples, seed_value)
}

pub fn report_from_scores(
    ds: &RankingDataset,
    scores: &[f64],
    model_name: &str,
    resamples: usize,
    seed_value: u64,
) -> Result<EvalReport> {
    if ds.groups.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rr = per_query_rr(ds, scores)?;
    let values: Vec<f64> = rr.values().copied().collect();
    Ok(EvalReport {
        model_name: model_name.to_string(),
        dataset_variant: ds.variant,
        mrr: mean(values.iter().copied()),
        bootstrap: bootstrap_mrr(&values, resamples, seed_value)?,
        per_query_rr_path: None,
        per_query_rr: rr,
    })
}

/// Nearest-rank percentile of an ascending-sorted sample.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Means of `resamples` same-size resamples drawn with replacement. Each
/// resample has its own derived seed, so results do not depend on how the
/// loop is scheduled.
pub fn bootstrap_means(values: &[f64], resamples: usize, seed_value: u64) -> Vec<f64> {
    let n = values.len();
    (0..resamples)
        .map(|r| {
            let mut rng = seed::rng(seed::derive_indexed(seed_value, "bootstrap", r as u64));
            let mut sum = 0.0;
            for _ in 0..n {
                sum += values[rng.random_range(0..n)];
            }
            sum / n as f64
        })
        .collect()
}

fn summarize(mut means: Vec<f64>, resamples: usize, seed_value: u64) -> BootstrapCi {
    means.sort_by(f64::total_cmp);
    BootstrapCi {
        median: nearest_rank(&means, 50.0),
        ci_low: nearest_rank(&means, 2.5),
        ci_high: nearest_rank(&means, 97.5),
        resamples,
        seed: seed_value,
    }
}

/// Median and 95% interval of the resampled MRR.
pub fn bootstrap_mrr(per_query_rr: &[f64], resamples: usize, seed_value: u64) -> Result<BootstrapCi> {
    if per_query_rr.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if resamples == 0 {
        return Err(Error::config("resamples must be >= 1"));
    }
    Ok(summarize(
        bootstrap_means(per_query_rr, resamples, seed_value),
        resamples,
        seed_value,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub base_model: String,
    pub treated_model: String,
    pub base_mrr: f64,
    pub treated_mrr: f64,
    /// (treated − base) / base.
    pub relative_improvement: f64,
    pub absolute_improvement: f64,
    /// Paired bootstrap of the per-query RR difference (treated − base).
    pub difference: BootstrapCi,
    pub significant: bool,
}

pub fn compare_models(base: &EvalReport, treated: &EvalReport, resamples: usize, seed_value: u64) -> Result<Comparison> {
    if !base.per_query_rr.keys().eq(treated.per_query_rr.keys()) {
        return Err(Error::SchemaMismatch(
            "reports cover different query sets".into(),
        ));
    }
    let diffs: Vec<f64> = base
        .per_query_rr
        .values()
        .zip(treated.per_query_rr.values())
        .map(|(b, t)| t - b)
        .collect();
    let difference = bootstrap_mrr(&diffs, resamples, seed_value)?;
    let absolute = treated.mrr - base.mrr;
    Ok(Comparison {
        base_model: base.model_name.clone(),
        treated_model: treated.model_name.clone(),
        base_mrr: base.mrr,
        treated_mrr: treated.mrr,
        relative_improvement: if base.mrr == 0.0 { 0.0 } else { absolute / base.mrr },
        absolute_improvement: absolute,
        significant: difference.ci_low > 0.0 || difference.ci_high < 0.0,
        difference,
    })
}
