//! Session-context personalization features for one candidate item.

use std::collections::{BTreeSet, HashMap};

use crate::catalog::Catalog;
use crate::embed::{cosine_similarity, EmbeddingTable};
use crate::error::Result;

/// Value stored for an absent feature.
pub const MISSING: f64 = -999.0;
/// Number of preceding clicks the features look at.
pub const CONTEXT_LEN: usize = 5;

pub const COS_DISTANCE_AVG: &str = "cos_distance_avg";
pub const COS_DISTANCE_LAST: &str = "cos_distance_last";
pub const PRICE_RATIO_MEAN: &str = "price_ratio_mean";
pub const TITLE_JACCARD_SIM: &str = "title_jaccard_sim";

/// All personalization features in their fixed column order.
pub const PERSONALIZATION_FEATURES: [&str; 4] = [
    COS_DISTANCE_AVG,
    COS_DISTANCE_LAST,
    PRICE_RATIO_MEAN,
    TITLE_JACCARD_SIM,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureValue {
    pub value: f64,
    pub present: bool,
}

impl FeatureValue {
    pub fn present(value: f64) -> Self {
        FeatureValue {
            value,
            present: true,
        }
    }

    pub fn missing() -> Self {
        FeatureValue {
            value: MISSING,
            present: false,
        }
    }

    /// `None` when missing.
    pub fn get(self) -> Option<f64> {
        self.present.then_some(self.value)
    }
}

/// The most recent clicks of a session (at most five, oldest first) with the
/// item content the features need.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClickContext {
    recent_clicks: Vec<String>,
    prices: HashMap<String, f64>,
    title_tokens: HashMap<String, BTreeSet<String>>,
}

impl ClickContext {
    /// Keeps the last five clicks and looks up their price and title tokens.
    pub fn from_clicks(clicks: &[String], catalog: &Catalog) -> Result<Self> {
        let start = clicks.len().saturating_sub(CONTEXT_LEN);
        let recent: Vec<String> = clicks[start..].to_vec();
        let mut prices = HashMap::new();
        let mut title_tokens = HashMap::new();
        for id in &recent {
            let item = catalog.require(id)?;
            prices.insert(id.clone(), item.price);
            title_tokens.insert(id.clone(), item.title_tokens.clone());
        }
        Ok(ClickContext {
            recent_clicks: recent,
            prices,
            title_tokens,
        })
    }

    /// Builds a context directly from (id, price, tokens) triples, oldest first.
    pub fn from_parts(parts: Vec<(String, f64, BTreeSet<String>)>) -> Self {
        let start = parts.len().saturating_sub(CONTEXT_LEN);
        let mut ctx = ClickContext::default();
        for (id, price, tokens) in parts.into_iter().skip(start) {
            ctx.prices.insert(id.clone(), price);
            ctx.title_tokens.insert(id.clone(), tokens);
            ctx.recent_clicks.push(id);
        }
        ctx
    }

    pub fn recent_clicks(&self) -> &[String] {
        &self.recent_clicks
    }

    pub fn is_empty(&self) -> bool {
        self.recent_clicks.is_empty()
    }

    /// Most recent click that has an embedding.
    pub fn last_embedded<'a>(&'a self, table: &EmbeddingTable) -> Option<&'a str> {
        self.recent_clicks
            .iter()
            .rev()
            .find(|id| table.contains(id))
            .map(String::as_str)
    }

    pub fn any_embedded(&self, table: &EmbeddingTable) -> bool {
        self.last_embedded(table).is_some()
    }
}

fn cos_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    cosine_similarity(a, b).ok().map(|s| 1.0 - s)
}

/// Mean of 1 − cos over the context items that have embeddings.
pub fn cos_distance_avg(candidate: &str, ctx: &ClickContext, table: &EmbeddingTable) -> FeatureValue {
    let Some(cv) = table.get(candidate) else {
        return FeatureValue::missing();
    };
    let dists: Vec<f64> = ctx
        .recent_clicks
        .iter()
        .filter_map(|id| table.get(id))
        .filter_map(|v| cos_distance(cv, v))
        .collect();
    if dists.is_empty() {
        return FeatureValue::missing();
    }
    FeatureValue::present(dists.iter().sum::<f64>() / dists.len() as f64)
}

/// 1 − cos against the most recent context click that has an embedding.
pub fn cos_distance_last(candidate: &str, ctx: &ClickContext, table: &EmbeddingTable) -> FeatureValue {
    let Some(cv) = table.get(candidate) else {
        return FeatureValue::missing();
    };
    ctx.recent_clicks
        .iter()
        .rev()
        .filter_map(|id| table.get(id))
        .find_map(|v| cos_distance(cv, v))
        .map_or_else(FeatureValue::missing, FeatureValue::present)
}

/// Candidate price over the mean price of all context clicks.
pub fn price_ratio_mean(candidate_price: f64, ctx: &ClickContext) -> FeatureValue {
    if ctx.is_empty() {
        return FeatureValue::missing();
    }
    let mean = ctx
        .recent_clicks
        .iter()
        .map(|id| ctx.prices[id])
        .sum::<f64>()
        / ctx.recent_clicks.len() as f64;
    FeatureValue::present(candidate_price / mean)
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Jaccard similarity of title tokens against the last click.
pub fn title_jaccard_sim(candidate_tokens: &BTreeSet<String>, ctx: &ClickContext) -> FeatureValue {
    match ctx.recent_clicks.last() {
        None => FeatureValue::missing(),
        Some(last) => FeatureValue::present(jaccard(candidate_tokens, &ctx.title_tokens[last])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::tokenize_title;
    use proptest::prelude::*;

    fn table(rows: &[(&str, [f64; 2])]) -> EmbeddingTable {
        EmbeddingTable::new(
            rows.iter().map(|r| r.0.to_string()).collect(),
            rows.iter().flat_map(|r| r.1).collect(),
            2,
        )
        .unwrap()
    }

    fn ctx(ids: &[&str]) -> ClickContext {
        ClickContext::from_parts(
            ids.iter()
                .map(|id| (id.to_string(), 1.0, BTreeSet::new()))
                .collect(),
        )
    }

    fn priced(prices: &[f64]) -> ClickContext {
        ClickContext::from_parts(
            prices
                .iter()
                .enumerate()
                .map(|(i, &p)| (format!("p{i}"), p, BTreeSet::new()))
                .collect(),
        )
    }

    #[test]
    fn avg_distance_examples() {
        let t = table(&[("cand", [1.0, 0.0]), ("x", [1.0, 0.0]), ("y", [0.0, 1.0])]);
        let f = cos_distance_avg("cand", &ctx(&["x", "y"]), &t);
        assert!(f.present && (f.value - 0.5).abs() < 1e-8);

        let f = cos_distance_avg("nope", &ctx(&["x", "y"]), &t);
        assert_eq!(f, FeatureValue { value: -999.0, present: false });

        let f = cos_distance_avg("cand", &ctx(&["x", "unembedded"]), &t);
        assert!(f.present && f.value.abs() < 1e-8);
    }

    #[test]
    fn last_distance_examples() {
        let t = table(&[("cand", [1.0, 0.0]), ("same", [1.0, 0.0]), ("orth", [0.0, 1.0])]);
        let f = cos_distance_last("cand", &ctx(&["orth", "same"]), &t);
        assert!(f.present && f.value.abs() < 1e-8);

        let f = cos_distance_last("cand", &ctx(&["orth", "gone"]), &t);
        assert!(f.present && (f.value - 1.0).abs() < 1e-8);

        assert!(!cos_distance_last("cand", &ctx(&["a", "b"]), &t).present);
    }

    #[test]
    fn context_keeps_last_five() {
        let c = ctx(&["1", "2", "3", "4", "5", "6", "7"]);
        assert_eq!(c.recent_clicks(), &["3", "4", "5", "6", "7"]);
        // an embedding on the 6th-most-recent click is out of reach
        let t = table(&[("cand", [1.0, 0.0]), ("2", [1.0, 0.0])]);
        assert!(!cos_distance_last("cand", &c, &t).present);
    }

    #[test]
    fn price_ratio_examples() {
        assert_eq!(price_ratio_mean(10.0, &priced(&[5.0, 15.0])), FeatureValue::present(1.0));
        assert_eq!(price_ratio_mean(20.0, &priced(&[10.0])), FeatureValue::present(2.0));
        assert!(!price_ratio_mean(20.0, &priced(&[])).present);
    }

    #[test]
    fn jaccard_examples() {
        let with_last = |title: &str| {
            ClickContext::from_parts(vec![
                ("old".into(), 1.0, tokenize_title("totally unrelated")),
                ("last".into(), 1.0, tokenize_title(title)),
            ])
        };
        let cand = tokenize_title("red summer dress");
        assert_eq!(title_jaccard_sim(&cand, &with_last("blue summer dress")).value, 0.5);
        assert_eq!(title_jaccard_sim(&cand, &with_last("Red Summer DRESS")).value, 1.0);
        assert_eq!(title_jaccard_sim(&cand, &with_last("laptop bag")).value, 0.0);
        assert_eq!(title_jaccard_sim(&BTreeSet::new(), &with_last("")), FeatureValue::present(0.0));
        assert!(!title_jaccard_sim(&cand, &ctx(&[])).present);
    }

    fn arb_vec() -> impl Strategy<Value = [f64; 2]> {
        [-5.0f64..5.0, -5.0f64..5.0].prop_filter("nonzero", |v| v[0].abs() + v[1].abs() > 1e-3)
    }

    proptest! {
        #[test]
        fn distance_properties(
            cand in arb_vec(),
            rows in prop::collection::vec(arb_vec(), 1..6),
            scale in 0.01f64..100.0,
        ) {
            let mut named = vec![("cand".to_string(), cand)];
            for (i, r) in rows.iter().enumerate() {
                named.push((format!("c{i}"), *r));
            }
            let t = EmbeddingTable::new(
                named.iter().map(|n| n.0.clone()).collect(),
                named.iter().flat_map(|n| n.1).collect(),
                2,
            ).unwrap();
            let ids: Vec<&str> = named[1..].iter().map(|n| n.0.as_str()).collect();
            let c = ctx(&ids);
            let avg = cos_distance_avg("cand", &c, &t);
            let last = cos_distance_last("cand", &c, &t);
            prop_assert!((0.0..=2.0).contains(&avg.value));
            prop_assert!((0.0..=2.0).contains(&last.value));
            let s = t.scaled(scale).unwrap();
            prop_assert!((cos_distance_avg("cand", &c, &s).value - avg.value).abs() < 1e-9);
            prop_assert!((cos_distance_last("cand", &c, &s).value - last.value).abs() < 1e-9);

            // one embedded context item: both features agree
            let single = ctx(&["ghost", ids[0], "phantom"]);
            prop_assert!((cos_distance_avg("cand", &single, &t).value
                - cos_distance_last("cand", &single, &t).value).abs() < 1e-12);
        }

        #[test]
        fn jaccard_symmetric_and_bounded(a in prop::collection::btree_set("[a-d]", 0..4),
                                         b in prop::collection::btree_set("[a-d]", 0..4)) {
            let j = jaccard(&a, &b);
            prop_assert_eq!(j, jaccard(&b, &a));
            prop_assert!((0.0..=1.0).contains(&j));
        }

        #[test]
        fn price_ratio_positive(p in 0.01f64..1e4, ctxp in prop::collection::vec(0.01f64..1e4, 1..8)) {
            prop_assert!(price_ratio_mean(p, &priced(&ctxp)).value > 0.0);
        }
    }
}
