//! Seeded synthetic marketplace: clustered items, cluster-coherent click
//! sessions, and ranking-week impressions whose sales depend on cluster
//! match and price proximity to the session context.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ClickSession, Impression, Item, Period};
use crate::error::{Error, Result};
use crate::features::CONTEXT_LEN;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceModel {
    /// Cluster log-price means are drawn uniformly from this interval.
    pub log_mean_min: f64,
    pub log_mean_max: f64,
    pub log_sd: f64,
}

impl Default for PriceModel {
    fn default() -> Self {
        PriceModel {
            log_mean_min: 5f64.ln(),
            log_mean_max: 500f64.ln(),
            log_sd: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TitleModel {
    pub cluster_pool_size: usize,
    pub noise_pool_size: usize,
    /// Inclusive range of cluster-pool tokens per title.
    pub cluster_tokens: [usize; 2],
    pub noise_tokens: [usize; 2],
}

impl Default for TitleModel {
    fn default() -> Self {
        TitleModel {
            cluster_pool_size: 12,
            noise_pool_size: 40,
            cluster_tokens: [3, 6],
            noise_tokens: [0, 2],
        }
    }
}

/// Weights of the latent utility maximized by the sold candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaleModel {
    pub cluster_weight: f64,
    pub price_weight: f64,
    pub relevance_weight: f64,
    pub popularity_weight: f64,
    /// Scale of the Gumbel noise.
    pub noise_scale: f64,
}

impl Default for SaleModel {
    fn default() -> Self {
        SaleModel {
            cluster_weight: 2.0,
            price_weight: 2.0,
            relevance_weight: 1.0,
            popularity_weight: 0.3,
            noise_scale: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub n_items: usize,
    pub n_clusters: usize,
    /// Probability that a click stays in the session's preferred cluster.
    pub cluster_coherence: f64,
    pub n_sessions_embedding: usize,
    pub n_sessions_ranking: usize,
    /// Inclusive ranges.
    pub clicks_per_session: [usize; 2],
    pub candidates_per_impression: [usize; 2],
    pub impressions_per_session: [usize; 2],
    /// Share of each candidate list drawn from the preferred cluster.
    pub same_cluster_candidate_fraction: f64,
    pub price_model: PriceModel,
    pub title_model: TitleModel,
    pub sale_model: SaleModel,
    pub base_feature_noise: f64,
    /// Share of items that never appear in embedding-week sessions.
    pub withheld_fraction: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            n_items: 2000,
            n_clusters: 5,
            cluster_coherence: 0.9,
            n_sessions_embedding: 50_000,
            n_sessions_ranking: 10_000,
            clicks_per_session: [2, 10],
            candidates_per_impression: [25, 40],
            impressions_per_session: [1, 2],
            same_cluster_candidate_fraction: 0.3,
            price_model: PriceModel::default(),
            title_model: TitleModel::default(),
            sale_model: SaleModel::default(),
            base_feature_noise: 1.0,
            withheld_fraction: 0.0,
            seed: 1,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::config(m.to_string()));
        if self.n_clusters == 0 || self.n_clusters > self.n_items {
            return err("need 1 <= n_clusters <= n_items");
        }
        if !(self.cluster_coherence > 0.0 && self.cluster_coherence <= 1.0) {
            return err("cluster_coherence must lie in (0, 1]");
        }
        for (name, r) in [
            ("clicks_per_session", self.clicks_per_session),
            ("candidates_per_impression", self.candidates_per_impression),
            ("impressions_per_session", self.impressions_per_session),
            ("title_model.cluster_tokens", self.title_model.cluster_tokens),
            ("title_model.noise_tokens", self.title_model.noise_tokens),
        ] {
            if r[0] > r[1] {
                return Err(Error::config(format!("{name} range is empty")));
            }
        }
        if self.candidates_per_impression[0] == 0 {
            return err("impressions need at least one candidate");
        }
        if self.candidates_per_impression[1] > self.n_items {
            return err("more candidates than items");
        }
        if self.title_model.cluster_tokens[1] > self.title_model.cluster_pool_size
            || self.title_model.noise_tokens[1] > self.title_model.noise_pool_size
        {
            return err("title token counts exceed pool sizes");
        }
        if !(0.0..=1.0).contains(&self.same_cluster_candidate_fraction) {
            return err("same_cluster_candidate_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.withheld_fraction) {
            return err("withheld_fraction must lie in [0, 1)");
        }
        if self.price_model.log_mean_min > self.price_model.log_mean_max || self.price_model.log_sd < 0.0 {
            return err("invalid price model");
        }
        Ok(())
    }
}

/// Latent state of a generated world, used by statistical oracles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cluster_of: BTreeMap<String, usize>,
    /// Filled in by session generation.
    pub user_preference: BTreeMap<String, usize>,
    pub popularity: BTreeMap<String, f64>,
    /// Items kept out of embedding-week sessions.
    pub withheld: BTreeSet<String>,
}

impl GroundTruth {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Item ids grouped by cluster, ascending.
    pub fn members(&self, n_clusters: usize) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); n_clusters];
        for (id, &c) in &self.cluster_of {
            out[c].push(id.clone());
        }
        out
    }
}

fn item_id(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len();
    format!("it{i:0width$}")
}

fn cluster_token(cluster: usize, j: usize) -> String {
    const SYLLABLES: [&str; 16] = [
        "ka", "lo", "mi", "nu", "pe", "ra", "so", "ti", "va", "ze", "bo", "du", "fi", "gu", "ho", "ju",
    ];
    // letters for readability, numeric suffix keeps pools disjoint
    format!("{}{}{cluster}x{j}", SYLLABLES[cluster % 16], SYLLABLES[j % 16])
}

fn uniform_in(rng: &mut Rng, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

/// Items are assigned to clusters round-robin; titles mix cluster-pool and
/// shared noise tokens; prices are log-normal around a per-cluster mean.
pub fn generate_world(spec: &WorldSpec) -> Result<(Catalog, GroundTruth)> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, "world"));
    let tm = &spec.title_model;
    let pm = &spec.price_model;
    let log_means: Vec<f64> = (0..spec.n_clusters)
        .map(|_| {
            if pm.log_mean_max > pm.log_mean_min {
                rng.random_range(pm.log_mean_min..=pm.log_mean_max)
            } else {
                pm.log_mean_min
            }
        })
        .collect();
    let noise_pool: Vec<String> = (0..tm.noise_pool_size).map(|j| format!("common{j}")).collect();
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let mut catalog = Catalog::new();
    let mut truth = GroundTruth::default();
    for i in 0..spec.n_items {
        let cluster = i % spec.n_clusters;
        let id = item_id(i, spec.n_items);
        let pool: Vec<String> = (0..tm.cluster_pool_size).map(|j| cluster_token(cluster, j)).collect();
        let n_own = uniform_in(&mut rng, tm.cluster_tokens);
        let mut words: Vec<String> = pool.choose_multiple(&mut rng, n_own).cloned().collect();
        let n_noise = uniform_in(&mut rng, tm.noise_tokens);
        words.extend(noise_pool.choose_multiple(&mut rng, n_noise).cloned());
        words.shuffle(&mut rng);
        let log_price = log_means[cluster] + pm.log_sd * std_normal.sample(&mut rng);
        let price = ((log_price.exp() * 100.0).round() / 100.0).max(0.01);
        catalog.insert(Item::new(id.clone(), words.join(" "), price)?)?;
        truth.cluster_of.insert(id.clone(), cluster);
        truth.popularity.insert(id, std_normal.sample(&mut rng));
    }
    let mut ids: Vec<String> = truth.cluster_of.keys().cloned().collect();
    ids.shuffle(&mut rng);
    let n_withheld = (spec.withheld_fraction * spec.n_items as f64).round() as usize;
    truth.withheld = ids.into_iter().take(n_withheld).collect();
    Ok((catalog, truth))
}

struct Pools {
    /// Per cluster, all members.
    all: Vec<Vec<String>>,
    /// Per cluster, members allowed in embedding-week sessions.
    visible: Vec<Vec<String>>,
    every: Vec<String>,
    every_visible: Vec<String>,
}

impl Pools {
    fn new(truth: &GroundTruth, n_clusters: usize) -> Self {
        let all = truth.members(n_clusters);
        let visible: Vec<Vec<String>> = all
            .iter()
            .map(|m| m.iter().filter(|id| !truth.withheld.contains(*id)).cloned().collect())
            .collect();
        Pools {
            every: all.concat(),
            every_visible: visible.concat(),
            all,
            visible,
        }
    }
}

fn draw_clicks(rng: &mut Rng, spec: &WorldSpec, own: &[String], everyone: &[String]) -> Vec<String> {
    let n = uniform_in(rng, spec.clicks_per_session);
    (0..n)
        .map(|_| {
            let pool = if !own.is_empty() && rng.random_bool(spec.cluster_coherence) {
                own
            } else {
                everyone
            };
            pool.choose(rng).unwrap().clone()
        })
        .collect()
}

pub fn generate_sessions(catalog: &Catalog, truth: &mut GroundTruth, spec: &WorldSpec) -> Result<Vec<ClickSession>> {
    spec.validate()?;
    if truth.cluster_of.len() != catalog.len() {
        return Err(Error::config("ground truth does not match the catalog"));
    }
    let pools = Pools::new(truth, spec.n_clusters);
    if pools.every_visible.is_empty() {
        return Err(Error::config("every item is withheld"));
    }
    let mut rng = seed::rng(seed::derive(spec.seed, "sessions"));
    let mut sessions = Vec::with_capacity(spec.n_sessions_embedding + spec.n_sessions_ranking);

    let width = |n: usize| n.saturating_sub(1).to_string().len();
    let we = width(spec.n_sessions_embedding);
    for s in 0..spec.n_sessions_embedding {
        let pref = rng.random_range(0..spec.n_clusters);
        let session_id = format!("e{s:0we$}");
        truth.user_preference.insert(session_id.clone(), pref);
        sessions.push(ClickSession {
            session_id,
            period: Period::EmbeddingWeek,
            clicks: draw_clicks(&mut rng, spec, &pools.visible[pref], &pools.every_visible),
            impressions: vec![],
        });
    }

    let sm = &spec.sale_model;
    let gumbel = Gumbel::new(0.0, 1.0).unwrap();
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let wr = width(spec.n_sessions_ranking);
    for s in 0..spec.n_sessions_ranking {
        let pref = rng.random_range(0..spec.n_clusters);
        let session_id = format!("r{s:0wr$}");
        truth.user_preference.insert(session_id.clone(), pref);
        let clicks = draw_clicks(&mut rng, spec, &pools.all[pref], &pools.every);
        let n_imp = uniform_in(&mut rng, spec.impressions_per_session);
        let mut impressions = Vec::with_capacity(n_imp);
        for q in 0..n_imp {
            let k = rng.random_range(0..=clicks.len());
            let context: Vec<String> = clicks[..k].to_vec();

            let m = uniform_in(&mut rng, spec.candidates_per_impression);
            let n_same = ((m as f64 * spec.same_cluster_candidate_fraction).round() as usize)
                .min(pools.all[pref].len());
            let mut candidates: Vec<String> = pools.all[pref]
                .choose_multiple(&mut rng, n_same)
                .cloned()
                .collect();
            let off: Vec<&String> = pools
                .every
                .iter()
                .filter(|id| truth.cluster_of[*id] != pref)
                .collect();
            let n_off = (m - n_same).min(off.len());
            candidates.extend(off.choose_multiple(&mut rng, n_off).map(|s| (*s).clone()));
            candidates.shuffle(&mut rng);

            let recent = &context[context.len().saturating_sub(CONTEXT_LEN)..];
            let anchor = if recent.is_empty() {
                // no context: the typical price of the preferred cluster
                let members = &pools.all[pref];
                members
                    .iter()
                    .map(|id| catalog.require(id).map(|it| it.price.ln()))
                    .sum::<Result<f64>>()?
                    / members.len() as f64
            } else {
                let prices: Result<Vec<f64>> = recent.iter().map(|id| catalog.require(id).map(|it| it.price)).collect();
                let prices = prices?;
                (prices.iter().sum::<f64>() / prices.len() as f64).ln()
            };

            let mut best = (f64::NEG_INFINITY, 0usize);
            let mut base_features = BTreeMap::new();
            for (ci, cand) in candidates.iter().enumerate() {
                let item = catalog.require(cand)?;
                let relevance = std_normal.sample(&mut rng);
                let popularity = truth.popularity[cand];
                let matched = f64::from(u8::from(truth.cluster_of[cand] == pref));
                let utility = sm.cluster_weight * matched
                    - sm.price_weight * (item.price.ln() - anchor).abs()
                    + sm.relevance_weight * relevance
                    + sm.popularity_weight * popularity
                    + sm.noise_scale * gumbel.sample(&mut rng);
                if utility > best.0 {
                    best = (utility, ci);
                }
                let observed = relevance + spec.base_feature_noise * std_normal.sample(&mut rng);
                base_features.insert(
                    cand.clone(),
                    BTreeMap::from([
                        ("log_price".to_string(), item.price.ln()),
                        ("popularity".to_string(), popularity),
                        ("relevance".to_string(), observed),
                    ]),
                );
            }
            impressions.push(Impression {
                query_id: format!("{session_id}q{q}"),
                context_clicks: context,
                labels: BTreeMap::from([(candidates[best.1].clone(), 1u8)]),
                candidates,
                base_features,
            });
        }
        sessions.push(ClickSession {
            session_id,
            period: Period::RankingWeek,
            clicks,
            impressions,
        });
    }
    Ok(sessions)
}

/// Split a mixed session list by period.
pub fn by_period(sessions: &[ClickSession], period: Period) -> Vec<ClickSession> {
    sessions.iter().filter(|s| s.period == period).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::jaccard;

    fn small() -> WorldSpec {
        WorldSpec {
            n_items: 10,
            n_clusters: 5,
            n_sessions_embedding: 50,
            n_sessions_ranking: 20,
            candidates_per_impression: [4, 6],
            ..Default::default()
        }
    }

    #[test]
    fn round_robin_clusters() {
        let (c, t) = generate_world(&small()).unwrap();
        assert_eq!(c.len(), 10);
        let members = t.members(5);
        assert!(members.iter().all(|m| m.len() == 2));
        assert_eq!(t.cluster_of["it3"], 3);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = small();
        let (a, mut ta) = generate_world(&spec).unwrap();
        let (b, mut tb) = generate_world(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            generate_sessions(&a, &mut ta, &spec).unwrap(),
            generate_sessions(&b, &mut tb, &spec).unwrap()
        );
        let (other, _) = generate_world(&WorldSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn full_coherence_single_cluster_sessions() {
        let spec = WorldSpec {
            cluster_coherence: 1.0,
            ..small()
        };
        let (c, mut t) = generate_world(&spec).unwrap();
        for s in generate_sessions(&c, &mut t, &spec).unwrap() {
            let clusters: BTreeSet<usize> = s.clicks.iter().map(|id| t.cluster_of[id]).collect();
            assert!(clusters.len() <= 1);
            if let Some(&k) = clusters.iter().next() {
                assert_eq!(k, t.user_preference[&s.session_id]);
            }
        }
    }

    #[test]
    fn one_sale_per_impression_and_valid_sessions() {
        let spec = small();
        let (c, mut t) = generate_world(&spec).unwrap();
        let sessions = generate_sessions(&c, &mut t, &spec).unwrap();
        for s in &sessions {
            s.validate().unwrap();
            for imp in &s.impressions {
                assert_eq!(imp.sold().count(), 1);
                assert_eq!(imp.base_features.len(), imp.candidates.len());
            }
        }
        let emb: BTreeSet<&str> = sessions
            .iter()
            .filter(|s| s.period == Period::EmbeddingWeek)
            .map(|s| s.session_id.as_str())
            .collect();
        assert!(sessions
            .iter()
            .filter(|s| s.period == Period::RankingWeek)
            .all(|s| !emb.contains(s.session_id.as_str())));
    }

    #[test]
    fn withheld_items_absent_from_embedding_week() {
        let spec = WorldSpec {
            n_items: 200,
            n_clusters: 4,
            withheld_fraction: 0.85,
            n_sessions_embedding: 300,
            n_sessions_ranking: 10,
            ..Default::default()
        };
        let (c, mut t) = generate_world(&spec).unwrap();
        assert_eq!(t.withheld.len(), 170);
        for s in generate_sessions(&c, &mut t, &spec).unwrap() {
            if s.period == Period::EmbeddingWeek {
                assert!(s.clicks.iter().all(|id| !t.withheld.contains(id)));
            }
        }
    }

    #[test]
    fn titles_more_similar_within_cluster() {
        let spec = WorldSpec {
            n_items: 300,
            n_clusters: 6,
            ..Default::default()
        };
        let (c, t) = generate_world(&spec).unwrap();
        let items: Vec<_> = c.iter().collect();
        let (mut same, mut ns, mut diff, mut nd) = (0.0, 0, 0.0, 0);
        for (i, a) in items.iter().enumerate() {
            for b in &items[i + 1..] {
                let j = jaccard(&a.title_tokens, &b.title_tokens);
                if t.cluster_of[&a.item_id] == t.cluster_of[&b.item_id] {
                    same += j;
                    ns += 1;
                } else {
                    diff += j;
                    nd += 1;
                }
            }
        }
        assert!(same / ns as f64 > diff / nd as f64);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_world(&WorldSpec { n_clusters: 11, ..small() }).is_err());
        assert!(generate_world(&WorldSpec { cluster_coherence: 0.0, ..small() }).is_err());
        assert!(generate_world(&WorldSpec { clicks_per_session: [5, 2], ..small() }).is_err());
    }
}
