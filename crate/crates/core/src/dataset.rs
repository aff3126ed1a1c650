//! Ranking datasets built from ranking-week impressions: feature assembly,
//! high-coverage filtering and train/validation/test splitting.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ClickSession, Period};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::features::{
    cos_distance_avg, cos_distance_last, price_ratio_mean, title_jaccard_sim, ClickContext,
    FeatureValue, COS_DISTANCE_AVG, COS_DISTANCE_LAST, MISSING, PERSONALIZATION_FEATURES,
    PRICE_RATIO_MEAN, TITLE_JACCARD_SIM,
};
use crate::seed;

pub const MIN_ITEMS_TRAIN: usize = 3;
pub const MIN_ITEMS_TEST: usize = 20;

/// Which personalization columns a model sees on top of the base features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSelection {
    Baseline,
    DistanceAvg,
    DistanceLast,
    PriceTitle,
    All,
}

impl FeatureSelection {
    pub const ALL_VARIANTS: [FeatureSelection; 5] = [
        FeatureSelection::Baseline,
        FeatureSelection::DistanceAvg,
        FeatureSelection::DistanceLast,
        FeatureSelection::PriceTitle,
        FeatureSelection::All,
    ];

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            FeatureSelection::Baseline => &[],
            FeatureSelection::DistanceAvg => &[COS_DISTANCE_AVG],
            FeatureSelection::DistanceLast => &[COS_DISTANCE_LAST],
            FeatureSelection::PriceTitle => &[PRICE_RATIO_MEAN, TITLE_JACCARD_SIM],
            FeatureSelection::All => &PERSONALIZATION_FEATURES,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSelection::Baseline => "baseline",
            FeatureSelection::DistanceAvg => "distance_avg",
            FeatureSelection::DistanceLast => "distance_last",
            FeatureSelection::PriceTitle => "price_title",
            FeatureSelection::All => "all",
        }
    }

    /// Report label, e.g. `Distance_Avg`.
    pub fn model_name(self) -> &'static str {
        match self {
            FeatureSelection::Baseline => "Baseline",
            FeatureSelection::DistanceAvg => "Distance_Avg",
            FeatureSelection::DistanceLast => "Distance_Last",
            FeatureSelection::PriceTitle => "Price_Title",
            FeatureSelection::All => "All",
        }
    }
}

impl fmt::Display for FeatureSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL_VARIANTS
            .into_iter()
            .find(|v| v.as_str() == s.to_ascii_lowercase() || v.model_name() == s)
            .ok_or_else(|| Error::config(format!("unknown model variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetVariant {
    Full,
    HighCoverage,
}

impl DatasetVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetVariant::Full => "full",
            DatasetVariant::HighCoverage => "high_coverage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Train, Role::Validation, Role::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingInstance {
    pub query_id: String,
    pub item_id: String,
    pub label: u8,
    /// Aligned with the dataset's feature schema.
    pub features: Vec<FeatureValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub query_id: String,
    pub instances: Vec<RankingInstance>,
    /// Empty for groups read back from a dataset file.
    pub context: ClickContext,
}

impl QueryGroup {
    pub fn has_positive(&self) -> bool {
        self.instances.iter().any(|i| i.label == 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingDataset {
    pub groups: Vec<QueryGroup>,
    /// Base feature names first, then personalization features.
    pub feature_schema: Vec<String>,
    pub variant: DatasetVariant,
    /// `None` until the dataset is split.
    pub role: Option<Role>,
}

fn is_personalization(name: &str) -> bool {
    PERSONALIZATION_FEATURES.contains(&name)
}

impl RankingDataset {
    pub fn instance_count(&self) -> usize {
        self.groups.iter().map(|g| g.instances.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.feature_schema.iter().position(|n| n == name)
    }

    /// Keep the base columns plus the personalization columns of `selection`.
    pub fn select(&self, selection: FeatureSelection) -> Result<RankingDataset> {
        let mut keep: Vec<usize> = self
            .feature_schema
            .iter()
            .enumerate()
            .filter(|(_, n)| !is_personalization(n))
            .map(|(i, _)| i)
            .collect();
        for col in selection.columns() {
            keep.push(self.column(col).ok_or_else(|| {
                Error::SchemaMismatch(format!("dataset lacks column {col}"))
            })?);
        }
        let groups = self
            .groups
            .iter()
            .map(|g| QueryGroup {
                query_id: g.query_id.clone(),
                context: g.context.clone(),
                instances: g
                    .instances
                    .iter()
                    .map(|inst| RankingInstance {
                        features: keep.iter().map(|&k| inst.features[k]).collect(),
                        ..inst.clone()
                    })
                    .collect(),
            })
            .collect();
        Ok(RankingDataset {
            groups,
            feature_schema: keep.iter().map(|&k| self.feature_schema[k].clone()).collect(),
            variant: self.variant,
            role: self.role,
        })
    }

    /// Fraction of instances with each column present, in schema order.
    pub fn coverage(&self) -> Vec<(String, f64)> {
        let total = self.instance_count();
        self.feature_schema
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let present = self
                    .groups
                    .iter()
                    .flat_map(|g| &g.instances)
                    .filter(|i| i.features[k].present)
                    .count();
                let frac = if total == 0 { 0.0 } else { present as f64 / total as f64 };
                (name.clone(), frac)
            })
            .collect()
    }
}

fn personalization_value(
    name: &str,
    candidate: &str,
    ctx: &ClickContext,
    table: &EmbeddingTable,
    catalog: &Catalog,
) -> Result<FeatureValue> {
    let item = catalog.require(candidate)?;
    Ok(match name {
        COS_DISTANCE_AVG => cos_distance_avg(candidate, ctx, table),
        COS_DISTANCE_LAST => cos_distance_last(candidate, ctx, table),
        PRICE_RATIO_MEAN => price_ratio_mean(item.price, ctx),
        TITLE_JACCARD_SIM => title_jaccard_sim(&item.title_tokens, ctx),
        other => unreachable!("unknown personalization feature {other}"),
    })
}

/// One query group per ranking-week impression.
pub fn build_instances(
    sessions: &[ClickSession],
    catalog: &Catalog,
    table: &EmbeddingTable,
    selection: FeatureSelection,
) -> Result<RankingDataset> {
    let mut base_names: Option<Vec<String>> = None;
    let mut groups = Vec::new();
    for s in sessions {
        if s.period != Period::RankingWeek {
            return Err(Error::WrongPeriod("embedding_week", "ranking_week"));
        }
        for imp in &s.impressions {
            let ctx = ClickContext::from_clicks(&imp.context_clicks, catalog)?;
            let mut instances = Vec::with_capacity(imp.candidates.len());
            for cand in &imp.candidates {
                catalog.require(cand)?;
                let base = imp.base_features.get(cand).ok_or_else(|| {
                    Error::SchemaMismatch(format!(
                        "impression {:?} has no base features for {cand:?}",
                        imp.query_id
                    ))
                })?;
                let names: Vec<String> = base.keys().cloned().collect();
                match &base_names {
                    None => base_names = Some(names),
                    Some(expected) if *expected != names => {
                        return Err(Error::SchemaMismatch(format!(
                            "impression {:?}: base features {names:?} differ from {expected:?}",
                            imp.query_id
                        )))
                    }
                    Some(_) => {}
                }
                let mut features: Vec<FeatureValue> =
                    base.values().map(|&v| FeatureValue::present(v)).collect();
                for col in selection.columns() {
                    features.push(personalization_value(col, cand, &ctx, table, catalog)?);
                }
                instances.push(RankingInstance {
                    query_id: imp.query_id.clone(),
                    item_id: cand.clone(),
                    label: imp.label(cand),
                    features,
                });
            }
            if !instances.is_empty() {
                groups.push(QueryGroup {
                    query_id: imp.query_id.clone(),
                    instances,
                    context: ctx,
                });
            }
        }
    }
    let mut feature_schema = base_names.unwrap_or_default();
    feature_schema.extend(selection.columns().iter().map(|s| s.to_string()));
    Ok(RankingDataset {
        groups,
        feature_schema,
        variant: DatasetVariant::Full,
        role: None,
    })
}

/// Restrict to candidates and queries where the embedding features are
/// defined. Rules apply in order: drop unembedded candidates; drop groups
/// with no embedded context click; drop the candidate equal to the most
/// recent embedded click; keep groups with a positive and enough items
/// (`min_items_test` for the test role, `min_items_train` otherwise).
pub fn filter_high_coverage(
    ds: &RankingDataset,
    table: &EmbeddingTable,
    min_items_train: usize,
    min_items_test: usize,
) -> RankingDataset {
    let min_items = match ds.role {
        Some(Role::Test) => min_items_test,
        _ => min_items_train,
    };
    let groups = ds
        .groups
        .iter()
        .filter_map(|g| {
            let last = g.context.last_embedded(table)?;
            let instances: Vec<RankingInstance> = g
                .instances
                .iter()
                .filter(|i| table.contains(&i.item_id) && i.item_id != last)
                .cloned()
                .collect();
            let group = QueryGroup {
                query_id: g.query_id.clone(),
                instances,
                context: g.context.clone(),
            };
            (group.has_positive() && group.instances.len() >= min_items).then_some(group)
        })
        .collect();
    RankingDataset {
        groups,
        feature_schema: ds.feature_schema.clone(),
        variant: DatasetVariant::HighCoverage,
        role: ds.role,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

/// Seeded split by query group. Validation and test sizes are
/// `floor(n·fraction)` (at least one each); train gets the remainder.
pub fn split_dataset(
    ds: &RankingDataset,
    fractions: SplitFractions,
    seed_value: u64,
) -> Result<(RankingDataset, RankingDataset, RankingDataset)> {
    for (name, f) in [
        ("train", fractions.train),
        ("validation", fractions.validation),
        ("test", fractions.test),
    ] {
        if !(f > 0.0) {
            return Err(Error::config(format!("empty {name} fraction")));
        }
    }
    if (fractions.train + fractions.validation + fractions.test - 1.0).abs() > 1e-9 {
        return Err(Error::config("split fractions must sum to 1"));
    }
    let n = ds.groups.len();
    if n < 3 {
        return Err(Error::config(format!("cannot split {n} query groups three ways")));
    }
    let take = |f: f64| ((n as f64 * f + 1e-9).floor() as usize).max(1);
    let n_val = take(fractions.validation);
    let n_test = take(fractions.test);
    if n_val + n_test >= n {
        return Err(Error::config("split leaves no training groups"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed_value));
    let n_train = n - n_val - n_test;
    let part = |idx: &[usize], role: Role| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        RankingDataset {
            groups: idx.iter().map(|&i| ds.groups[i].clone()).collect(),
            feature_schema: ds.feature_schema.clone(),
            variant: ds.variant,
            role: Some(role),
        }
    };
    Ok((
        part(&order[..n_train], Role::Train),
        part(&order[n_train..n_train + n_val], Role::Validation),
        part(&order[n_train + n_val..], Role::Test),
    ))
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// Tab-separated, one instance per line, header first. Personalization
/// columns are followed by one `<name>_present` 0/1 column each.
pub fn write_dataset_tsv(ds: &RankingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let pers: Vec<usize> = (0..ds.feature_schema.len())
        .filter(|&k| is_personalization(&ds.feature_schema[k]))
        .collect();
    let mut header = vec!["query_id".to_string(), "item_id".into(), "label".into()];
    header.extend(ds.feature_schema.iter().cloned());
    header.extend(pers.iter().map(|&k| format!("{}_present", ds.feature_schema[k])));
    writeln!(w, "{}", header.join("\t")).map_err(io)?;
    for inst in ds.groups.iter().flat_map(|g| &g.instances) {
        let mut cols = vec![inst.query_id.clone(), inst.item_id.clone(), inst.label.to_string()];
        cols.extend(inst.features.iter().map(|f| fmt_value(f.value)));
        cols.extend(pers.iter().map(|&k| (inst.features[k].present as u8).to_string()));
        writeln!(w, "{}", cols.join("\t")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset_tsv(path: impl AsRef<Path>, variant: DatasetVariant, role: Option<Role>) -> Result<RankingDataset> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut lines = r.lines();
    let malformed = |line: usize, m: String| Error::Malformed { line, message: m };
    let header = lines
        .next()
        .ok_or_else(|| malformed(1, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 3 || cols[..3] != ["query_id", "item_id", "label"] {
        return Err(malformed(1, "header must start with query_id, item_id, label".into()));
    }
    let rest = &cols[3..];
    let n_pers_flags = rest.iter().filter(|c| c.ends_with("_present")).count();
    let schema: Vec<String> = rest[..rest.len() - n_pers_flags].iter().map(|s| s.to_string()).collect();
    let pers: Vec<usize> = (0..schema.len()).filter(|&k| is_personalization(&schema[k])).collect();
    if pers.len() != n_pers_flags {
        return Err(malformed(1, "presence columns do not match personalization columns".into()));
    }
    let mut groups: Vec<QueryGroup> = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(malformed(lineno, format!("expected {} columns, got {}", cols.len(), f.len())));
        }
        let label: u8 = match f[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(malformed(lineno, format!("bad label {other:?}"))),
        };
        let mut features = Vec::with_capacity(schema.len());
        for k in 0..schema.len() {
            let v: f64 = f[3 + k]
                .parse()
                .map_err(|_| malformed(lineno, format!("bad value in column {}", schema[k])))?;
            features.push(FeatureValue::present(v));
        }
        for (j, &k) in pers.iter().enumerate() {
            match f[3 + schema.len() + j] {
                "1" => {}
                "0" => features[k] = FeatureValue::missing(),
                other => return Err(malformed(lineno, format!("bad presence flag {other:?}"))),
            }
            if !features[k].present && features[k].value != MISSING {
                return Err(malformed(lineno, "missing value without sentinel".into()));
            }
        }
        let inst = RankingInstance {
            query_id: f[0].to_string(),
            item_id: f[1].to_string(),
            label,
            features,
        };
        match groups.last_mut() {
            Some(g) if g.query_id == inst.query_id => g.instances.push(inst),
            _ => {
                if !seen.insert(inst.query_id.clone()) {
                    return Err(malformed(lineno, format!("query {:?} is not contiguous", inst.query_id)));
                }
                groups.push(QueryGroup {
                    query_id: inst.query_id.clone(),
                    instances: vec![inst],
                    context: ClickContext::default(),
                });
            }
        }
    }
    Ok(RankingDataset {
        groups,
        feature_schema: schema,
        variant,
        role,
    })
}
