use srank_core::corpus::{build_vocabulary, filter_phrases, Phrase, PhraseCorpus};
use srank_core::embed::{
    cosine_similarity, hs_loss_and_gradient, huffman_from_weights, mean_corpus_loss, train_skipgram, EmbedConfig,
};
use srank_core::seed;
use rand::Rng;

/// Phrases drawn from two disjoint item cliques, `a0..a9` and `b0..b9`.
fn two_clique_corpus(n: usize) -> PhraseCorpus {
    let mut rng = seed::rng(77);
    let phrases = (0..n)
        .map(|_| {
            let clique = if rng.random_bool(0.5) { "a" } else { "b" };
            let len = rng.random_range(2..8);
            Phrase {
                tokens: (0..len).map(|_| format!("{clique}{}", rng.random_range(0..10))).collect(),
            }
        })
        .collect();
    PhraseCorpus::new(phrases)
}

fn config(epochs: usize) -> EmbedConfig {
    EmbedConfig {
        dimension: 16,
        epochs,
        seed: 5,
        keep_internal_nodes: true,
        ..Default::default()
    }
}

#[test]
fn corpus_loss_lower_after_five_epochs_than_one() {
    let corpus = two_clique_corpus(2000);
    let vocab = build_vocabulary(&corpus, 1).unwrap();
    let corpus = filter_phrases(&corpus, &vocab);
    let after = |epochs| {
        let table = train_skipgram(&corpus, &vocab, &config(epochs)).unwrap();
        mean_corpus_loss(&table, &corpus, &vocab, 5).unwrap()
    };
    let (one, five) = (after(1), after(5));
    assert!(five < one, "epoch 1 {one}, epoch 5 {five}");
}

#[test]
fn intra_clique_cosine_exceeds_inter_clique() {
    let corpus = two_clique_corpus(3000);
    let vocab = build_vocabulary(&corpus, 1).unwrap();
    let table = train_skipgram(&filter_phrases(&corpus, &vocab), &vocab, &config(5)).unwrap();
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
    let ids = table.ids().to_vec();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            let c = cosine_similarity(table.get(a).unwrap(), table.get(b).unwrap()).unwrap();
            if a[..1] == b[..1] {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    let (intra, inter) = (intra / ni as f64, inter / nx as f64);
    assert!(intra > inter, "intra {intra}, inter {inter}");
}

#[test]
fn gradient_matches_finite_differences_componentwise() {
    let mut rng = seed::rng(9);
    let h = 1e-5;
    for _ in 0..50 {
        let dim = 8;
        let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nodes: Vec<f64> = (0..3 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let path = [0, 1, 2];
        let code: Vec<u8> = (0..3).map(|_| rng.random_range(0..2)).collect();
        let g = hs_loss_and_gradient(&center, &path, &code, &nodes).unwrap();
        let loss = |c: &[f64], n: &[f64]| hs_loss_and_gradient(c, &path, &code, n).unwrap().loss;
        let check = |analytic: f64, numeric: f64| {
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            assert!(rel < 1e-4, "analytic {analytic}, numeric {numeric}");
        };
        for k in 0..dim {
            let (mut p, mut m) = (center.clone(), center.clone());
            p[k] += h;
            m[k] -= h;
            check(g.center[k], (loss(&p, &nodes) - loss(&m, &nodes)) / (2.0 * h));
        }
        for (i, &node) in path.iter().enumerate() {
            for k in 0..dim {
                let (mut p, mut m) = (nodes.clone(), nodes.clone());
                p[node * dim + k] += h;
                m[node * dim + k] -= h;
                check(g.nodes[i][k], (loss(&center, &p) - loss(&center, &m)) / (2.0 * h));
            }
        }
    }
}

#[test]
fn huffman_codes_are_as_short_as_weights_allow() {
    // Kraft equality holds for the full binary tree Huffman builds
    let weights = [40u64, 30, 20, 5, 3, 1, 1];
    let coding = huffman_from_weights(&weights).unwrap();
    let kraft: f64 = (0..weights.len()).map(|i| 0.5f64.powi(coding.code(i).len() as i32)).sum();
    assert_eq!(kraft, 1.0);
    assert!(coding.code(0).len() <= coding.code(6).len());
}
