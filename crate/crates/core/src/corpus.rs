//! Click phrases and the frequency-thresholded item vocabulary.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::catalog::{ClickSession, Period};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_PHRASE_COUNT: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phrase {
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub phrase_count: usize,
    pub token_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhraseCorpus {
    phrases: Vec<Phrase>,
    stats: CorpusStats,
}

impl PhraseCorpus {
    pub fn new(phrases: Vec<Phrase>) -> Self {
        let stats = CorpusStats {
            phrase_count: phrases.len(),
            token_count: phrases.iter().map(|p| p.tokens.len()).sum(),
        };
        PhraseCorpus { phrases, stats }
    }

    pub fn phrases(&self) -> &[Phrase] {
        &self.phrases
    }

    pub fn stats(&self) -> CorpusStats {
        self.stats
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub item_id: String,
    pub phrase_count: u64,
}

/// Item ids kept for embedding training. Index `i` is the i-th entry of
/// `entries`, ordered by descending phrase count then ascending id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<String, usize>,
    min_phrase_count: u64,
}

impl Vocabulary {
    /// Build from raw counts; entries below the threshold are dropped.
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>, min_phrase_count: u64) -> Self {
        let mut entries: Vec<VocabEntry> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_phrase_count)
            .map(|(item_id, phrase_count)| VocabEntry {
                item_id,
                phrase_count,
            })
            .collect();
        entries.sort_by(|a, b| {
            b.phrase_count
                .cmp(&a.phrase_count)
                .then_with(|| a.item_id.cmp(&b.item_id))
        });
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.item_id.clone(), i))
            .collect();
        Vocabulary {
            entries,
            index,
            min_phrase_count,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.index.contains_key(item_id)
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn min_phrase_count(&self) -> u64 {
        self.min_phrase_count
    }

    pub fn counts(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.phrase_count).collect()
    }
}

/// One phrase per embedding-week session with at least two clicks.
pub fn extract_phrases(sessions: &[ClickSession]) -> Result<PhraseCorpus> {
    let mut phrases = Vec::new();
    for s in sessions {
        if s.period != Period::EmbeddingWeek {
            return Err(Error::WrongPeriod("ranking_week", "embedding_week"));
        }
        if s.clicks.len() >= 2 {
            phrases.push(Phrase {
                tokens: s.clicks.clone(),
            });
        }
    }
    Ok(PhraseCorpus::new(phrases))
}

/// Count, per id, the number of distinct phrases it appears in.
pub fn build_vocabulary(corpus: &PhraseCorpus, min_phrase_count: u64) -> Result<Vocabulary> {
    if min_phrase_count < 1 {
        return Err(Error::config("min_phrase_count must be >= 1"));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for p in corpus.phrases() {
        let distinct: BTreeSet<&str> = p.tokens.iter().map(String::as_str).collect();
        for id in distinct {
            *counts.entry(id).or_default() += 1;
        }
    }
    Ok(Vocabulary::from_counts(
        counts.into_iter().map(|(k, v)| (k.to_string(), v)),
        min_phrase_count,
    ))
}

/// Drop out-of-vocabulary ids, then drop phrases shorter than two tokens.
pub fn filter_phrases(corpus: &PhraseCorpus, vocab: &Vocabulary) -> PhraseCorpus {
    let phrases = corpus
        .phrases()
        .iter()
        .filter_map(|p| {
            let tokens: Vec<String> = p
                .tokens
                .iter()
                .filter(|t| vocab.contains(t))
                .cloned()
                .collect();
            (tokens.len() >= 2).then_some(Phrase { tokens })
        })
        .collect();
    PhraseCorpus::new(phrases)
}

pub fn write_phrases(corpus: &PhraseCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for p in corpus.phrases() {
        writeln!(w, "{}", p.tokens.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_phrases(path: impl AsRef<Path>) -> Result<PhraseCorpus> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut phrases = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = line.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect();
        if !tokens.is_empty() {
            phrases.push(Phrase { tokens });
        }
    }
    Ok(PhraseCorpus::new(phrases))
}

pub fn write_vocab(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (i, e) in vocab.entries().iter().enumerate() {
        writeln!(w, "{}\t{}\t{}", e.item_id, i, e.phrase_count).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_vocab(path: impl AsRef<Path>, min_phrase_count: u64) -> Result<Vocabulary> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut counts = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let cols: Vec<&str> = line.split('\t').collect();
        let malformed = |message: &str| Error::Malformed {
            line: n + 1,
            message: message.to_string(),
        };
        if cols.len() != 3 {
            return Err(malformed("expected item_id, index, phrase_count"));
        }
        let index: usize = cols[1].parse().map_err(|_| malformed("bad index"))?;
        if index != n {
            return Err(malformed("indices must be dense and in order"));
        }
        let count: u64 = cols[2].parse().map_err(|_| malformed("bad phrase_count"))?;
        counts.push((cols[0].to_string(), count));
    }
    let vocab = Vocabulary::from_counts(counts, min_phrase_count);
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn phrase(ids: &[&str]) -> Phrase {
        Phrase {
            tokens: ids.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn session(id: &str, period: Period, clicks: &[&str]) -> ClickSession {
        ClickSession {
            session_id: id.into(),
            period,
            clicks: clicks.iter().map(|s| s.to_string()).collect(),
            impressions: vec![],
        }
    }

    #[test]
    fn phrase_per_multi_click_session() {
        let s = vec![
            session("1", Period::EmbeddingWeek, &["a", "b", "c"]),
            session("2", Period::EmbeddingWeek, &["a"]),
        ];
        let c = extract_phrases(&s).unwrap();
        assert_eq!(c.phrases(), &[phrase(&["a", "b", "c"])]);
        assert_eq!(c.stats(), CorpusStats { phrase_count: 1, token_count: 3 });
    }

    #[test]
    fn ranking_week_is_a_leak() {
        let s = vec![session("1", Period::RankingWeek, &["a", "b"])];
        assert!(extract_phrases(&s).is_err());
    }

    #[test]
    fn threshold_boundary() {
        let mut phrases = vec![];
        for _ in 0..16 {
            phrases.push(phrase(&["in", "x"]));
        }
        for _ in 0..15 {
            phrases.push(phrase(&["out", "y"]));
        }
        let v = build_vocabulary(&PhraseCorpus::new(phrases), 16).unwrap();
        assert!(v.contains("in"));
        assert!(v.contains("x"));
        assert!(!v.contains("out"));
    }

    #[test]
    fn repeated_in_one_phrase_counts_once() {
        let v = build_vocabulary(&PhraseCorpus::new(vec![phrase(&["a", "b", "a"])]), 1).unwrap();
        assert_eq!(v.entries()[v.index_of("a").unwrap()].phrase_count, 1);
    }

    #[test]
    fn index_order_count_desc_then_id() {
        let c = PhraseCorpus::new(vec![phrase(&["b", "c"]), phrase(&["b", "a"]), phrase(&["d", "e"])]);
        let v = build_vocabulary(&c, 1).unwrap();
        let ids: Vec<&str> = v.entries().iter().map(|e| e.item_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c", "d", "e"]);
    }

    #[test]
    fn empty_corpus_empty_vocab() {
        assert!(build_vocabulary(&PhraseCorpus::default(), 16).unwrap().is_empty());
    }

    #[test]
    fn filter_examples() {
        let v = Vocabulary::from_counts([("a".to_string(), 5), ("c".to_string(), 5)], 1);
        let c = PhraseCorpus::new(vec![phrase(&["a", "b", "c"]), phrase(&["a", "b"])]);
        assert_eq!(filter_phrases(&c, &v).phrases(), &[phrase(&["a", "c"])]);

        let all = PhraseCorpus::new(vec![phrase(&["a", "c", "a"])]);
        assert_eq!(filter_phrases(&all, &v), all);
    }

    fn arb_corpus() -> impl Strategy<Value = PhraseCorpus> {
        prop::collection::vec(prop::collection::vec(0u8..12, 2..7), 0..40).prop_map(|ps| {
            PhraseCorpus::new(
                ps.into_iter()
                    .map(|p| Phrase {
                        tokens: p.into_iter().map(|t| format!("i{t}")).collect(),
                    })
                    .collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn filtered_tokens_in_vocab_and_counts_never_grow(c in arb_corpus(), min in 1u64..6) {
            let v = build_vocabulary(&c, min).unwrap();
            let f = filter_phrases(&c, &v);
            for p in f.phrases() {
                prop_assert!(p.tokens.len() >= 2);
                for t in &p.tokens {
                    prop_assert!(v.contains(t));
                }
            }
            let v2 = build_vocabulary(&f, 1).unwrap();
            for e in v2.entries() {
                let before = v.entries()[v.index_of(&e.item_id).unwrap()].phrase_count;
                prop_assert!(e.phrase_count <= before);
            }
            // indices are a pure function of counts and ids
            let again = build_vocabulary(&c, min).unwrap();
            prop_assert_eq!(again, v);
        }
    }

    #[test]
    fn vocab_and_phrase_files_round_trip() {
        let c = PhraseCorpus::new(vec![phrase(&["a", "b"]), phrase(&["b", "c", "a"])]);
        let v = build_vocabulary(&c, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_vocab(&v, dir.path().join("v.tsv")).unwrap();
        write_phrases(&c, dir.path().join("p.txt")).unwrap();
        assert_eq!(read_vocab(dir.path().join("v.tsv"), 1).unwrap(), v);
        assert_eq!(read_phrases(dir.path().join("p.txt")).unwrap(), c);
    }
}
