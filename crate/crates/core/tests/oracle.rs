//! The scan oracle against a brute-force nested-loop evaluator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rspn_engine::oracle::{ExactAnswer, ScanOracle};
use rspn_engine::query::parse_query;
use rspn_engine::schema::Database;
use rspn_engine::synth::{generate, SynthConfig, CATEGORIES};
use rspn_engine::value::{Datum, Value};

#[derive(Debug, Clone, Copy)]
enum Filter {
    NumAtMost(usize, i64),
    CatIs(usize, usize),
    OptPresent(usize),
}

#[derive(Debug, Clone, Copy)]
enum Agg {
    Count,
    SumNum(usize),
    AvgOpt(usize),
}

fn cell(db: &Database, t: usize, col: &str, row: usize) -> Value {
    let name = format!("t{t}");
    db.require(&name)
        .unwrap()
        .column(&format!("{name}.{col}"))
        .unwrap()
        .get(row)
}

fn num(v: &Value) -> Option<f64> {
    match v {
        Some(Datum::Num(x)) => Some(*x),
        _ => None,
    }
}

/// Nested-loop join of the chain t0..tk in order with the given kinds.
fn brute_join(db: &Database, tables: usize, kinds: &[&str]) -> Vec<Vec<Option<usize>>> {
    let rows = |t: usize| db.require(&format!("t{t}")).unwrap().num_rows();
    let mut tuples: Vec<Vec<Option<usize>>> = (0..rows(0)).map(|r| vec![Some(r)]).collect();
    for (k, kind) in kinds.iter().enumerate().take(tables - 1) {
        let child = k + 1;
        let mut out = Vec::new();
        let mut matched = vec![false; rows(child)];
        for t in &tuples {
            let mut any = false;
            if let Some(p) = t[k] {
                let key = num(&cell(db, k, "id", p));
                for (c, m) in matched.iter_mut().enumerate() {
                    if key.is_some() && num(&cell(db, child, "parent_id", c)) == key {
                        let mut n = t.clone();
                        n.push(Some(c));
                        out.push(n);
                        *m = true;
                        any = true;
                    }
                }
            }
            if !any && matches!(*kind, "LEFT" | "FULL") {
                let mut n = t.clone();
                n.push(None);
                out.push(n);
            }
        }
        if matches!(*kind, "RIGHT" | "FULL") {
            for (c, m) in matched.iter().enumerate() {
                if !m {
                    let mut n = vec![None; child];
                    n.push(Some(c));
                    out.push(n);
                }
            }
        }
        tuples = out;
    }
    tuples
}

fn brute(db: &Database, tables: usize, kinds: &[&str], filters: &[Filter], agg: Agg) -> Option<f64> {
    let (mut n, mut s) = (0.0, 0.0);
    for t in brute_join(db, tables, kinds) {
        let keep = filters.iter().all(|f| match *f {
            Filter::NumAtMost(i, k) => t[i].and_then(|r| num(&cell(db, i, "num", r))).is_some_and(|x| x <= k as f64),
            Filter::CatIs(i, c) => t[i].is_some_and(|r| cell(db, i, "cat", r) == Some(Datum::Str(CATEGORIES[c].into()))),
            Filter::OptPresent(i) => t[i].is_some_and(|r| cell(db, i, "opt", r).is_some()),
        });
        if !keep {
            continue;
        }
        match agg {
            Agg::Count => n += 1.0,
            Agg::SumNum(i) | Agg::AvgOpt(i) => {
                let col = if matches!(agg, Agg::SumNum(_)) { "num" } else { "opt" };
                if let Some(x) = t[i].and_then(|r| num(&cell(db, i, col, r))) {
                    n += 1.0;
                    s += x;
                }
            }
        }
    }
    match agg {
        Agg::Count => Some(n),
        Agg::SumNum(_) => Some(s),
        Agg::AvgOpt(_) => (n > 0.0).then(|| s / n),
    }
}

#[test]
fn scan_oracle_matches_nested_loops() {
    let db = generate(&SynthConfig {
        tables: 3,
        root_rows: 25,
        fanout: 1.6,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let oracle = ScanOracle::new(&db);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let kinds = ["INNER", "LEFT", "RIGHT", "FULL"];
    let mut outer = 0;
    for q in 0..100 {
        let tables = rng.random_range(1..=3);
        let joins: Vec<&str> = (1..tables).map(|_| kinds[rng.random_range(0..4)]).collect();
        outer += joins.iter().filter(|k| **k != "INNER").count();
        let mut filters = Vec::new();
        for _ in 0..rng.random_range(0..3) {
            let i = rng.random_range(0..tables);
            filters.push(match rng.random_range(0..3) {
                0 => Filter::NumAtMost(i, rng.random_range(10..80)),
                1 => Filter::CatIs(i, rng.random_range(0..5)),
                _ => Filter::OptPresent(i),
            });
        }
        let t = rng.random_range(0..tables);
        let agg = match rng.random_range(0..3) {
            0 => Agg::Count,
            1 => Agg::SumNum(t),
            _ => Agg::AvgOpt(t),
        };
        let select = match agg {
            Agg::Count => "COUNT(*)".to_string(),
            Agg::SumNum(i) => format!("SUM(t{i}.num)"),
            Agg::AvgOpt(i) => format!("AVG(t{i}.opt)"),
        };
        let mut sql = format!("SELECT {select} FROM t0");
        for (k, kind) in joins.iter().enumerate() {
            let kw = if *kind == "INNER" { "JOIN".to_string() } else { format!("{kind} JOIN") };
            sql += &format!(" {kw} t{}", k + 1);
        }
        let conds: Vec<String> = filters
            .iter()
            .map(|f| match *f {
                Filter::NumAtMost(i, k) => format!("t{i}.num <= {k}"),
                Filter::CatIs(i, c) => format!("t{i}.cat = '{}'", CATEGORIES[c]),
                Filter::OptPresent(i) => format!("t{i}.opt IS NOT NULL"),
            })
            .collect();
        if !conds.is_empty() {
            sql += &format!(" WHERE {}", conds.join(" AND "));
        }
        let ast = parse_query(&sql, &db.schema).unwrap();
        let got = oracle.evaluate(&ast).unwrap();
        let want = brute(&db, tables, &joins, &filters, agg);
        match (got, want) {
            (ExactAnswer::Scalar(Some(a)), Some(b)) => assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{q}: {sql}: {a} vs {b}"),
            (ExactAnswer::Scalar(None), None) => {}
            (g, w) => panic!("{q}: {sql}: {g:?} vs {w:?}"),
        }
    }
    assert!(outer > 20);
}

#[test]
fn grouped_answers_partition_the_total() {
    let db = generate(&SynthConfig {
        tables: 2,
        root_rows: 40,
        ..SynthConfig::default()
    })
    .unwrap();
    let oracle = ScanOracle::new(&db);
    let total = parse_query("SELECT COUNT(*) FROM t0 JOIN t1 WHERE t1.num <= 60", &db.schema).unwrap();
    let grouped = parse_query("SELECT COUNT(*) FROM t0 JOIN t1 WHERE t1.num <= 60 GROUP BY t0.cat", &db.schema).unwrap();
    let total = oracle.evaluate(&total).unwrap().scalar().unwrap();
    let ExactAnswer::Groups(groups) = oracle.evaluate(&grouped).unwrap() else {
        panic!("expected groups")
    };
    assert_eq!(groups.values().sum::<f64>(), total);
    assert!(groups.len() > 1);
}
