use std::collections::BTreeMap;
use std::path::PathBuf;

use rspn_engine::ensemble::{build_base_ensemble, Ensemble, EnsembleParams};
use rspn_engine::par::Execution;
use rspn_engine::query::{execute, estimate_cardinality, parse_query, select_rspns, QueryCase, QueryOptions};
use rspn_engine::schema::{load_schema, Database};
use rspn_engine::value::Datum;

fn toy_db() -> Database {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/schema.toml");
    Database::load(load_schema(&path).unwrap()).unwrap()
}

/// Exact models; `joined` selects one model over the customer-orders join
/// instead of one per table.
fn toy_ensemble(joined: bool) -> Ensemble {
    let db = toy_db();
    let params = EnsembleParams {
        exact: true,
        ..EnsembleParams::default()
    };
    let dep = if joined { 1.0 } else { 0.0 };
    let overrides = BTreeMap::from([(("customer".to_string(), "orders".to_string()), dep)]);
    build_base_ensemble(&db, &params, &overrides, Execution::Sequential).unwrap()
}

fn value(sql: &str, ens: &Ensemble) -> (f64, QueryCase) {
    let r = execute(sql, ens, &QueryOptions::default()).unwrap();
    (r.estimate.unwrap().value, r.case)
}

const Q1: &str = "SELECT COUNT(*) FROM customer c WHERE c.c_region = 'EUROPE'";
const Q2: &str =
    "SELECT COUNT(*) FROM customer c JOIN orders o WHERE o.o_channel = 'ONLINE' AND c.c_region = 'EUROPE'";

#[test]
fn single_table_count() {
    let ens = toy_ensemble(false);
    assert_eq!(ens.rspns.len(), 2);
    let (v, case) = value(Q1, &ens);
    assert!((v - 2.0).abs() < 1e-9, "{v}");
    assert_eq!(case, QueryCase::ExactMatch);
}

#[test]
fn exact_join_count() {
    let ens = toy_ensemble(true);
    assert_eq!(ens.rspns.len(), 1);
    let (v, case) = value(Q2, &ens);
    assert!((v - 1.0).abs() < 1e-9, "{v}");
    assert_eq!(case, QueryCase::ExactMatch);
}

#[test]
fn larger_model_count() {
    let ens = toy_ensemble(true);
    let (v, case) = value(Q1, &ens);
    assert!((v - 2.0).abs() < 1e-9, "{v}");
    assert_eq!(case, QueryCase::Superset);
}

#[test]
fn combined_models_count() {
    let ens = toy_ensemble(false);
    let (v, case) = value(Q2, &ens);
    assert!((v - 1.0).abs() < 1e-9, "{v}");
    assert_eq!(case, QueryCase::Combined);
    let ast = parse_query(Q2, &ens.schema).unwrap();
    assert_eq!(select_rspns(&ast, &ens).unwrap().steps.len(), 2);
}

#[test]
fn avg_and_sum() {
    for joined in [false, true] {
        let ens = toy_ensemble(joined);
        let (avg, _) = value("SELECT AVG(c_age) FROM customer WHERE c_region = 'EUROPE'", &ens);
        assert!((avg - 35.0).abs() < 1e-9, "{avg}");
        let (sum, _) = value("SELECT SUM(c_age) FROM customer WHERE c_region = 'EUROPE'", &ens);
        assert!((sum - 70.0).abs() < 1e-9, "{sum}");
    }
}

#[test]
fn join_avg_weights_by_orders() {
    // per joined row: ages 20, 20, 80, 80 of the four orders
    for joined in [false, true] {
        let ens = toy_ensemble(joined);
        let (avg, _) = value("SELECT AVG(c_age) FROM customer JOIN orders WHERE c_region = 'EUROPE'", &ens);
        if joined {
            assert!((avg - 20.0).abs() < 1e-9, "{avg}");
        }
        let (count, _) = value("SELECT COUNT(*) FROM customer JOIN orders", &ens);
        assert!((count - 4.0).abs() < 1e-9, "{count}");
    }
}

#[test]
fn group_by_region() {
    for joined in [false, true] {
        let ens = toy_ensemble(joined);
        let r = execute(
            "SELECT COUNT(*) FROM customer GROUP BY c_region",
            &ens,
            &QueryOptions::default(),
        )
        .unwrap();
        let groups: BTreeMap<Datum, f64> = r
            .groups
            .iter()
            .map(|g| (g.key[0].clone(), g.estimate.value))
            .collect();
        assert_eq!(groups.len(), 2);
        assert!((groups[&Datum::str("EUROPE")] - 2.0).abs() < 1e-9);
        assert!((groups[&Datum::str("ASIA")] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn outer_joins() {
    for joined in [false, true] {
        let ens = toy_ensemble(joined);
        let (full, _) = value("SELECT COUNT(*) FROM customer FULL OUTER JOIN orders", &ens);
        assert!((full - 5.0).abs() < 1e-9, "full {full} joined={joined}");
        let (left, _) = value("SELECT COUNT(*) FROM customer LEFT JOIN orders", &ens);
        assert!((left - 5.0).abs() < 1e-9, "left {left} joined={joined}");
        let (right, _) = value("SELECT COUNT(*) FROM customer RIGHT JOIN orders", &ens);
        assert!((right - 4.0).abs() < 1e-9, "right {right} joined={joined}");
        let (eu, _) = value(
            "SELECT COUNT(*) FROM customer LEFT JOIN orders WHERE c_region = 'EUROPE'",
            &ens,
        );
        assert!((eu - 3.0).abs() < 1e-9, "left eu {eu} joined={joined}");
    }
}

#[test]
fn cardinality_rounds() {
    let ens = toy_ensemble(false);
    assert_eq!(estimate_cardinality(Q2, &ens).unwrap(), 1);
    assert_eq!(estimate_cardinality("SELECT COUNT(*) FROM orders", &ens).unwrap(), 4);
    assert_eq!(
        estimate_cardinality("SELECT COUNT(*) FROM customer WHERE c_age > 100", &ens).unwrap(),
        1
    );
}

#[test]
fn exact_intervals_are_tight() {
    let ens = toy_ensemble(false);
    let r = execute(Q1, &ens, &QueryOptions::default()).unwrap();
    let e = r.estimate.unwrap();
    assert!(e.ci_low <= e.value && e.value <= e.ci_high);
    assert!(e.variance > 0.0);
}
