use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

mod common;

use common::shop::{fixture, shop, write};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rspn_engine::ensemble::{
    self, build_base_ensemble, from_bytes, optimize_ensemble, rank_candidates, to_bytes, EnsembleParams,
    FORMAT_VERSION,
};
use rspn_engine::par::Execution;
use rspn_engine::query::{execute, QueryOptions};
use rspn_engine::schema::{load_schema, Database};
use rspn_engine::synth::{generate, SynthConfig};
use rspn_engine::Error;

fn exact() -> EnsembleParams {
    EnsembleParams {
        exact: true,
        ..EnsembleParams::default()
    }
}

fn sets(ens: &ensemble::Ensemble) -> BTreeSet<BTreeSet<String>> {
    ens.rspns
        .iter()
        .map(|m| m.table_set.iter().cloned().collect())
        .collect()
}

fn set(tables: &[&str]) -> BTreeSet<String> {
    tables.iter().map(|s| s.to_string()).collect()
}

#[test]
fn base_ensemble_follows_dependencies() {
    let dir = tempfile::tempdir().unwrap();
    let db = shop(dir.path());
    let ens = build_base_ensemble(&db, &exact(), &fixture(), Execution::Sequential).unwrap();
    let expected: BTreeSet<_> = [
        set(&["customer", "orders"]),
        set(&["orders", "orderline"]),
        set(&["customer", "state"]),
    ]
    .into_iter()
    .collect();
    assert_eq!(sets(&ens), expected);
}

#[test]
fn optimizer_ranks_by_mean_dependency() {
    let dir = tempfile::tempdir().unwrap();
    let db = shop(dir.path());
    let mut ens = build_base_ensemble(&db, &exact(), &fixture(), Execution::Sequential).unwrap();
    let ranked = rank_candidates(&mut ens, &db, Execution::Sequential).unwrap();
    let first = set(&ranked[0].table_set.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_eq!(first, set(&["customer", "orders", "orderline"]));
    assert!((ranked[0].mean_rdc - 0.6).abs() < 1e-12);
    let second = &ranked[1];
    assert_eq!(
        set(&second.table_set.iter().map(|s| s.as_str()).collect::<Vec<_>>()),
        set(&["state", "customer", "orders"])
    );
    assert!((second.mean_rdc - 1.4 / 3.0).abs() < 1e-12);
    assert!(ranked.iter().all(|c| c.table_set.len() >= 3));

    // budget for exactly the best candidate
    let b = ranked[0].estimated_cost / ens.base_proxy_cost;
    let before = sets(&ens);
    let grown = optimize_ensemble(ens.clone(), &db, b, Execution::Sequential).unwrap();
    let added: Vec<_> = sets(&grown).difference(&before).cloned().collect();
    assert_eq!(added, vec![set(&["customer", "orders", "orderline"])]);

    let same = optimize_ensemble(ens.clone(), &db, 0.0, Execution::Sequential).unwrap();
    assert_eq!(sets(&same), before);
    assert!(optimize_ensemble(ens, &db, -1.0, Execution::Sequential).is_err());
}

#[test]
fn single_table_schema_gives_one_model() {
    let db = generate(&SynthConfig {
        tables: 1,
        root_rows: 200,
        ..SynthConfig::default()
    })
    .unwrap();
    let ens = build_base_ensemble(&db, &EnsembleParams::default(), &BTreeMap::new(), Execution::Sequential).unwrap();
    assert_eq!(ens.rspns.len(), 1);
}

#[test]
fn independent_tables_get_single_models() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "schema.toml",
        r#"
[[tables]]
name = "a"
csv = "a.csv"
primary_key = "id"
columns = [ { name = "id", kind = "continuous" }, { name = "x", kind = "continuous" } ]

[[tables]]
name = "b"
csv = "b.csv"
primary_key = "id"
columns = [ { name = "id", kind = "continuous" }, { name = "y", kind = "categorical" } ]
"#,
    );
    write(dir.path(), "a.csv", "id,x\n1,3\n2,5\n3,8\n");
    write(dir.path(), "b.csv", "id,y\n1,p\n2,q\n");
    let db = Database::load(load_schema(&dir.path().join("schema.toml")).unwrap()).unwrap();
    let ens = build_base_ensemble(&db, &exact(), &BTreeMap::new(), Execution::Sequential).unwrap();
    assert_eq!(sets(&ens), [set(&["a"]), set(&["b"])].into_iter().collect());

    // a strong link between FK-connected tables still yields a join model
    let db = generate(&SynthConfig {
        tables: 2,
        root_rows: 200,
        ..SynthConfig::default()
    })
    .unwrap();
    let strong = [(("t0".to_string(), "t1".to_string()), 0.9)].into_iter().collect();
    let weak = [(("t0".to_string(), "t1".to_string()), 0.05)].into_iter().collect();
    let ens = build_base_ensemble(&db, &EnsembleParams::default(), &strong, Execution::Sequential).unwrap();
    assert_eq!(sets(&ens), [set(&["t0", "t1"])].into_iter().collect());
    let ens = build_base_ensemble(&db, &EnsembleParams::default(), &weak, Execution::Sequential).unwrap();
    assert_eq!(sets(&ens), [set(&["t0"]), set(&["t1"])].into_iter().collect());
}

fn toy() -> (Database, ensemble::Ensemble) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/schema.toml");
    let db = Database::load(load_schema(&path).unwrap()).unwrap();
    let ens = build_base_ensemble(&db, &exact(), &BTreeMap::new(), Execution::Sequential).unwrap();
    (db, ens)
}

#[test]
fn save_load_round_trip() {
    let (_, ens) = toy();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    ensemble::save(&ens, &path).unwrap();
    let back = ensemble::load(&path).unwrap();
    assert_eq!(to_bytes(&back).unwrap(), to_bytes(&ens).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let regions = ["EUROPE", "ASIA", "AFRICA"];
    let channels = ["ONLINE", "STORE"];
    for _ in 0..100 {
        let sql = format!(
            "SELECT COUNT(*) FROM customer JOIN orders WHERE c_age <= {} AND c_region = '{}' AND o_channel = '{}'",
            rng.random_range(0..100),
            regions[rng.random_range(0..3)],
            channels[rng.random_range(0..2)]
        );
        let a = execute(&sql, &ens, &QueryOptions::default()).unwrap().estimate.unwrap();
        let b = execute(&sql, &back, &QueryOptions::default()).unwrap().estimate.unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn truncated_file_fails() {
    let (_, ens) = toy();
    let bytes = to_bytes(&ens).unwrap();
    for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Persistence(_))), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0xff;
    assert!(matches!(from_bytes(&flipped), Err(Error::Persistence(_))));
}

#[test]
fn version_bump_is_rejected() {
    let (_, ens) = toy();
    let mut bytes = to_bytes(&ens).unwrap();
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match from_bytes(&bytes) {
        Err(Error::UnsupportedVersion { found, expected }) => {
            assert_eq!((found, expected), (FORMAT_VERSION + 1, FORMAT_VERSION));
        }
        other => panic!("expected a version error, got {other:?}"),
    }
}
