//! Item catalog and click-session logs, read from and written to
//! line-delimited JSON, plus the title tokenizer every consumer shares.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase the title and split it on every maximal run of
/// non-alphanumeric characters. Empty tokens are dropped; duplicates collapse.
pub fn tokenize_title(title: &str) -> BTreeSet<String> {
    title
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub item_id: String,
    pub title: String,
    pub title_tokens: BTreeSet<String>,
    pub price: f64,
}

impl Item {
    pub fn new(item_id: impl Into<String>, title: impl Into<String>, price: f64) -> Result<Self> {
        let item_id = item_id.into();
        if item_id.is_empty() {
            return Err(Error::config("empty item_id"));
        }
        if !(price > 0.0) || !price.is_finite() {
            return Err(Error::config(format!("non-positive price for {item_id:?}")));
        }
        let title = title.into();
        Ok(Item {
            title_tokens: tokenize_title(&title),
            item_id,
            title,
            price,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    items: BTreeMap<String, Item>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert an item, rejecting a duplicate id.
    pub fn insert(&mut self, item: Item) -> Result<()> {
        if self.items.contains_key(&item.item_id) {
            return Err(Error::DuplicateItem {
                id: item.item_id,
                first: 0,
                second: 0,
            });
        }
        self.items.insert(item.item_id.clone(), item);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.items.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&Item> {
        self.items
            .get(id)
            .ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Item> {
        self.items.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    EmbeddingWeek,
    RankingWeek,
}

impl Period {
    pub fn as_str(self) -> &'static str {
        match self {
            Period::EmbeddingWeek => "embedding_week",
            Period::RankingWeek => "ranking_week",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "embedding_week" => Some(Period::EmbeddingWeek),
            "ranking_week" => Some(Period::RankingWeek),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Impression {
    pub query_id: String,
    /// Clicks that preceded this impression, most recent last.
    pub context_clicks: Vec<String>,
    pub candidates: Vec<String>,
    /// 1 = sold. Defined for every candidate.
    pub labels: BTreeMap<String, u8>,
    pub base_features: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Impression {
    pub fn label(&self, item_id: &str) -> u8 {
        self.labels.get(item_id).copied().unwrap_or(0)
    }

    pub fn sold(&self) -> impl Iterator<Item = &str> {
        self.candidates
            .iter()
            .filter(|c| self.label(c) == 1)
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickSession {
    pub session_id: String,
    pub period: Period,
    pub clicks: Vec<String>,
    pub impressions: Vec<Impression>,
}

impl ClickSession {
    /// Check the per-impression invariants: context is a prefix of the
    /// clicks, candidates are unique, sold items are candidates.
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidSession {
            session_id: self.session_id.clone(),
            message,
        };
        for imp in &self.impressions {
            let ctx = &imp.context_clicks;
            if ctx.len() > self.clicks.len() || self.clicks[..ctx.len()] != ctx[..] {
                let absent = ctx.iter().find(|c| !self.clicks.contains(c));
                return Err(bad(match absent {
                    Some(c) => format!(
                        "impression {:?} references context click {c:?} absent from the session's clicks",
                        imp.query_id
                    ),
                    None => format!(
                        "impression {:?} context is not a prefix of the session's clicks",
                        imp.query_id
                    ),
                }));
            }
            let mut seen = BTreeSet::new();
            for c in &imp.candidates {
                if !seen.insert(c.as_str()) {
                    return Err(bad(format!(
                        "impression {:?} lists candidate {c:?} twice",
                        imp.query_id
                    )));
                }
            }
            for id in imp.labels.keys() {
                if !seen.contains(id.as_str()) {
                    return Err(bad(format!(
                        "impression {:?} sold item {id:?} is not a candidate",
                        imp.query_id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CatalogLine {
    item_id: String,
    title: String,
    price: f64,
}

#[derive(Serialize, Deserialize)]
struct ImpressionLine {
    query_id: String,
    context_clicks: Vec<String>,
    candidates: Vec<String>,
    sold: Vec<String>,
    base_features: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Serialize, Deserialize)]
struct SessionLine {
    session_id: String,
    period: String,
    clicks: Vec<String>,
    impressions: Vec<ImpressionLine>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn nonblank_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>>> {
    let owned = path.to_path_buf();
    Ok(open(path)?
        .lines()
        .enumerate()
        .map(move |(i, l)| l.map(|l| (i + 1, l)).map_err(|e| Error::io(&owned, e)))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty())))
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let mut items = BTreeMap::new();
    let mut first_line: HashMap<String, usize> = HashMap::new();
    for entry in nonblank_lines(path.as_ref())? {
        let (line, text) = entry?;
        let raw: CatalogLine = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            line,
            message: e.to_string(),
        })?;
        if !(raw.price > 0.0) || !raw.price.is_finite() {
            return Err(Error::NonPositivePrice { line });
        }
        if raw.item_id.is_empty() {
            return Err(Error::Malformed {
                line,
                message: "empty item_id".into(),
            });
        }
        if let Some(&first) = first_line.get(&raw.item_id) {
            return Err(Error::DuplicateItem {
                id: raw.item_id,
                first,
                second: line,
            });
        }
        first_line.insert(raw.item_id.clone(), line);
        let item = Item {
            title_tokens: tokenize_title(&raw.title),
            item_id: raw.item_id,
            title: raw.title,
            price: raw.price,
        };
        items.insert(item.item_id.clone(), item);
    }
    Ok(Catalog { items })
}

pub fn write_catalog(catalog: &Catalog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for item in catalog.iter() {
        let line = CatalogLine {
            item_id: item.item_id.clone(),
            title: item.title.clone(),
            price: item.price,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_sessions(path: impl AsRef<Path>) -> Result<Vec<ClickSession>> {
    let mut sessions = Vec::new();
    for entry in nonblank_lines(path.as_ref())? {
        let (line, text) = entry?;
        let raw: SessionLine = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            line,
            message: e.to_string(),
        })?;
        let period = Period::parse(&raw.period).ok_or_else(|| Error::UnknownPeriod {
            tag: raw.period.clone(),
            line,
        })?;
        let impressions = raw
            .impressions
            .into_iter()
            .map(|imp| Impression {
                labels: imp.sold.into_iter().map(|s| (s, 1u8)).collect(),
                query_id: imp.query_id,
                context_clicks: imp.context_clicks,
                candidates: imp.candidates,
                base_features: imp.base_features,
            })
            .collect();
        let session = ClickSession {
            session_id: raw.session_id,
            period,
            clicks: raw.clicks,
            impressions,
        };
        session.validate()?;
        sessions.push(session);
    }
    Ok(sessions)
}

pub fn write_sessions(sessions: &[ClickSession], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for s in sessions {
        let line = SessionLine {
            session_id: s.session_id.clone(),
            period: s.period.as_str().to_string(),
            clicks: s.clicks.clone(),
            impressions: s
                .impressions
                .iter()
                .map(|imp| ImpressionLine {
                    query_id: imp.query_id.clone(),
                    context_clicks: imp.context_clicks.clone(),
                    candidates: imp.candidates.clone(),
                    sold: imp.sold().map(str::to_string).collect(),
                    base_features: imp.base_features.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
