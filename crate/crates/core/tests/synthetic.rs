use srank_core::catalog::{load_catalog, load_sessions, write_catalog, write_sessions, Period};
use srank_core::synth::{generate_sessions, generate_world, GroundTruth, WorldSpec};

fn spec() -> WorldSpec {
    WorldSpec {
        n_items: 1000,
        n_clusters: 5,
        cluster_coherence: 0.9,
        n_sessions_embedding: 2000,
        n_sessions_ranking: 10_000,
        seed: 21,
        ..Default::default()
    }
}

#[test]
fn sold_items_mostly_in_preferred_cluster() {
    let spec = spec();
    let (catalog, mut truth) = generate_world(&spec).unwrap();
    let sessions = generate_sessions(&catalog, &mut truth, &spec).unwrap();
    let (mut hit, mut total) = (0, 0);
    for s in sessions.iter().filter(|s| s.period == Period::RankingWeek) {
        let pref = truth.user_preference[&s.session_id];
        for imp in &s.impressions {
            for sold in imp.sold() {
                total += 1;
                hit += usize::from(truth.cluster_of[sold] == pref);
            }
        }
    }
    let frac = hit as f64 / total as f64;
    assert!(frac >= 0.8, "{hit}/{total}");
}

#[test]
fn generated_files_load_cleanly() {
    let spec = WorldSpec {
        n_sessions_ranking: 300,
        ..spec()
    };
    let (catalog, mut truth) = generate_world(&spec).unwrap();
    let sessions = generate_sessions(&catalog, &mut truth, &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_catalog(&catalog, dir.path().join("catalog.jsonl")).unwrap();
    write_sessions(&sessions, dir.path().join("sessions.jsonl")).unwrap();
    truth.save(dir.path().join("truth.json")).unwrap();
    assert_eq!(load_catalog(dir.path().join("catalog.jsonl")).unwrap(), catalog);
    assert_eq!(load_sessions(dir.path().join("sessions.jsonl")).unwrap(), sessions);
    assert_eq!(GroundTruth::load(dir.path().join("truth.json")).unwrap(), truth);
    assert_eq!(truth.user_preference.len(), sessions.len());
    assert_eq!(truth.cluster_of.len(), catalog.len());
}
