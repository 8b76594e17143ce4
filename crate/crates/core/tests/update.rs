use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rspn_engine::ensemble::{build_base_ensemble, Ensemble, EnsembleParams};
use rspn_engine::oracle::ScanOracle;
use rspn_engine::par::Execution;
use rspn_engine::query::{execute, parse_query, QueryOptions};
use rspn_engine::schema::{full_outer_join_sample, Database};
use rspn_engine::spn::{NodeKind, Rspn};
use rspn_engine::synth::{generate, SynthConfig, CATEGORIES};
use rspn_engine::update::{apply_batch, derive_updates, Direction, TableOp, UpdateBatch};
use rspn_engine::value::{Datum, Value};

fn num(x: f64) -> Value {
    Some(Datum::Num(x))
}

fn cat(i: usize) -> Value {
    Some(Datum::Str(CATEGORIES[i].into()))
}

fn small_db(seed: u64) -> Database {
    generate(&SynthConfig {
        tables: 3,
        root_rows: 40,
        fanout: 1.5,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// Rows of the full outer join over the model's tables, in model column
/// order, as a multiset.
fn model_rows(db: &Database, m: &Rspn) -> BTreeMap<Vec<Value>, i64> {
    let t = full_outer_join_sample(db, &m.table_set, usize::MAX, 0).unwrap();
    let idx: Vec<usize> = m.columns.iter().map(|c| t.column_index(&c.name).unwrap()).collect();
    let mut out = BTreeMap::new();
    for r in 0..t.num_rows() {
        let row: Vec<Value> = idx.iter().map(|&i| t.data[i].get(r)).collect();
        *out.entry(row).or_insert(0) += 1;
    }
    out
}

/// Random inserts and deletes that keep every foreign key valid.
fn random_ops(db: &Database, rng: &mut ChaCha8Rng, n: usize) -> Vec<TableOp> {
    let mut next_id = [1000.0, 1000.0, 1000.0];
    let mut live: Vec<Vec<f64>> = (0..3)
        .map(|t| {
            let tab = db.require(&format!("t{t}")).unwrap();
            let ids = tab.column(&format!("t{t}.id")).unwrap();
            (0..tab.num_rows()).filter_map(|r| ids.get(r).and_then(|d| d.as_f64())).collect()
        })
        .collect();
    let mut parent_of: BTreeMap<(usize, u64), f64> = BTreeMap::new();
    for t in 1..3 {
        let tab = db.require(&format!("t{t}")).unwrap();
        let ids = tab.column(&format!("t{t}.id")).unwrap();
        let ps = tab.column(&format!("t{t}.parent_id")).unwrap();
        for r in 0..tab.num_rows() {
            let id = ids.get(r).unwrap().as_f64().unwrap();
            parent_of.insert((t, id as u64), ps.get(r).unwrap().as_f64().unwrap());
        }
    }
    let referenced = |t: usize, id: f64, parent_of: &BTreeMap<(usize, u64), f64>, live: &[Vec<f64>]| {
        t < 2 && live[t + 1].iter().any(|c| parent_of.get(&(t + 1, *c as u64)) == Some(&id))
    };
    let mut ops = Vec::new();
    while ops.len() < n {
        let t = rng.random_range(0..3);
        if rng.random_bool(0.65) {
            let id = next_id[t];
            next_id[t] += 1.0;
            let c = rng.random_range(0..5);
            let x = rng.random_range(10..90) as f64;
            let opt = if rng.random_bool(0.2) { None } else { num(x / 3.0) };
            let values = if t == 0 {
                vec![num(id), cat(c), num(x), opt]
            } else {
                let p = live[t - 1][rng.random_range(0..live[t - 1].len())];
                parent_of.insert((t, id as u64), p);
                vec![num(id), num(p), cat(c), num(x), opt]
            };
            live[t].push(id);
            ops.push(TableOp::Insert {
                table: format!("t{t}"),
                values,
            });
        } else {
            let candidates: Vec<usize> = (0..live[t].len())
                .filter(|&i| !referenced(t, live[t][i], &parent_of, &live))
                .collect();
            if candidates.is_empty() || live[t].len() < 3 {
                continue;
            }
            let id = live[t].swap_remove(candidates[rng.random_range(0..candidates.len())]);
            ops.push(TableOp::Delete {
                table: format!("t{t}"),
                key: Datum::Num(id),
            });
        }
    }
    ops
}

fn exact_ensemble(db: &Database, link: f64) -> Ensemble {
    let overrides = [
        (("t0".to_string(), "t1".to_string()), link),
        (("t1".to_string(), "t2".to_string()), link),
    ]
    .into_iter()
    .collect();
    let p = EnsembleParams {
        exact: true,
        ..EnsembleParams::default()
    };
    build_base_ensemble(db, &p, &overrides, Execution::Sequential).unwrap()
}

fn apply(ens: &mut Ensemble, db: &mut Database, ops: &[TableOp]) {
    let models: Vec<&Rspn> = ens.rspns.iter().collect();
    let derived = derive_updates(db, &models, ops).unwrap();
    for (m, operations) in ens.rspns.iter_mut().zip(derived) {
        let batch = UpdateBatch {
            operations,
            applied_sample_rate: m.sample_rate,
        };
        apply_batch(m, &batch, 1).unwrap();
    }
}

#[test]
fn derived_updates_track_the_join() {
    for seed in 0..4 {
        let mut db = small_db(seed);
        let ens = exact_ensemble(&db, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let ops = random_ops(&db, &mut rng, 60);
        let models: Vec<&Rspn> = ens.rspns.iter().collect();
        let mut tracked: Vec<_> = models.iter().map(|m| model_rows(&db, m)).collect();
        let derived = derive_updates(&mut db, &models, &ops).unwrap();
        for ((m, rows), changes) in models.iter().zip(&mut tracked).zip(derived) {
            for (dir, row) in changes {
                *rows.entry(row).or_insert(0) += dir.sign();
            }
            rows.retain(|_, n| *n != 0);
            assert!(rows.values().all(|n| *n > 0), "{}: negative multiplicity", m.id);
            assert_eq!(*rows, model_rows(&db, m), "{} seed {seed}", m.id);
        }
    }
}

#[test]
fn updated_single_table_models_answer_exactly() {
    let mut db = small_db(7);
    let mut ens = exact_ensemble(&db, 0.0);
    assert_eq!(ens.rspns.len(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ops = random_ops(&db, &mut rng, 80);
    apply(&mut ens, &mut db, &ops);
    let oracle = ScanOracle::new(&db);
    for t in 0..3 {
        let mut queries = vec![format!("SELECT COUNT(*) FROM t{t}"), format!("SELECT AVG(t{t}.num) FROM t{t}")];
        for c in CATEGORIES {
            queries.push(format!("SELECT COUNT(*) FROM t{t} WHERE t{t}.cat = '{c}'"));
        }
        for k in [20, 40, 60] {
            queries.push(format!("SELECT COUNT(*) FROM t{t} WHERE t{t}.num <= {k}"));
            queries.push(format!("SELECT SUM(t{t}.opt) FROM t{t} WHERE t{t}.opt IS NOT NULL"));
        }
        for sql in queries {
            let truth = oracle.evaluate(&parse_query(&sql, &db.schema).unwrap()).unwrap().scalar().unwrap();
            let est = execute(&sql, &ens, &QueryOptions::default()).unwrap().estimate.unwrap().value;
            assert!((est - truth).abs() <= 1e-9 * truth.abs().max(1.0), "{sql}: {est} vs {truth}");
        }
    }
}

fn shape(m: &Rspn) -> Vec<(Vec<usize>, Vec<usize>, &'static str)> {
    m.nodes
        .iter()
        .map(|n| {
            let kind = match n.kind {
                NodeKind::Sum { .. } => "sum",
                NodeKind::Product { .. } => "product",
                NodeKind::Leaf(_) => "leaf",
            };
            (n.scope.clone(), n.children().to_vec(), kind)
        })
        .collect()
}

#[test]
fn insert_then_delete_restores_estimates() {
    let db = generate(&SynthConfig {
        tables: 2,
        root_rows: 1500,
        ..SynthConfig::default()
    })
    .unwrap();
    let overrides = [(("t0".to_string(), "t1".to_string()), 0.9)].into_iter().collect();
    let ens = build_base_ensemble(&db, &EnsembleParams::default(), &overrides, Execution::Sequential).unwrap();
    let m0 = ens.rspns[0].clone();
    let fresh = full_outer_join_sample(&db, &m0.table_set, 300, 9).unwrap();
    let idx: Vec<usize> = m0.columns.iter().map(|c| fresh.column_index(&c.name).unwrap()).collect();
    let tuples: Vec<Vec<Value>> = (0..fresh.num_rows())
        .map(|r| idx.iter().map(|&i| fresh.data[i].get(r)).collect())
        .collect();
    let mut updated = ens.clone();
    let m = &mut updated.rspns[0];
    let ins = UpdateBatch {
        operations: tuples.iter().map(|t| (Direction::Insert, t.clone())).collect(),
        applied_sample_rate: m.sample_rate,
    };
    apply_batch(m, &ins, 3).unwrap();
    assert_eq!(shape(m), shape(&m0));
    let grown = execute("SELECT COUNT(*) FROM t0 JOIN t1", &updated, &QueryOptions::default()).unwrap();
    let base = execute("SELECT COUNT(*) FROM t0 JOIN t1", &ens, &QueryOptions::default()).unwrap();
    assert!(grown.estimate.unwrap().value > base.estimate.unwrap().value);

    let m = &mut updated.rspns[0];
    let del = UpdateBatch {
        operations: tuples.iter().rev().map(|t| (Direction::Delete, t.clone())).collect(),
        applied_sample_rate: m.sample_rate,
    };
    apply_batch(m, &del, 3).unwrap();
    assert_eq!(shape(m), shape(&m0));
    assert_eq!(m.n_samples, m0.n_samples);
    for sql in [
        "SELECT COUNT(*) FROM t0 JOIN t1",
        "SELECT COUNT(*) FROM t0 JOIN t1 WHERE t0.cat = 'A' AND t1.num <= 40",
        "SELECT AVG(t1.num) FROM t0 JOIN t1 WHERE t0.cat IN ('B', 'C')",
        "SELECT COUNT(*) FROM t0 WHERE t0.opt IS NOT NULL",
    ] {
        let a = execute(sql, &ens, &QueryOptions::default()).unwrap().estimate.unwrap();
        let b = execute(sql, &updated, &QueryOptions::default()).unwrap().estimate.unwrap();
        assert!((a.value - b.value).abs() <= 1e-9 * a.value.abs().max(1.0), "{sql}: {} vs {}", a.value, b.value);
    }
}

#[test]
fn empty_batch_changes_nothing() {
    let mut db = small_db(2);
    let ens = exact_ensemble(&db, 0.9);
    let mut updated = ens.clone();
    apply(&mut updated, &mut db, &[]);
    assert_eq!(updated, ens);
}

#[test]
fn deleting_a_referenced_row_fails() {
    let mut db = small_db(3);
    let ens = exact_ensemble(&db, 0.9);
    let models: Vec<&Rspn> = ens.rspns.iter().collect();
    let ids = db.require("t1").unwrap().column("t1.parent_id").unwrap();
    let parent = ids.get(0).unwrap();
    let op = TableOp::Delete {
        table: "t0".into(),
        key: parent,
    };
    assert!(derive_updates(&mut db, &models, &[op]).is_err());
}
