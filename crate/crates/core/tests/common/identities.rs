//! Algebraic invariants of the estimator over random queries, runnable
//! with any case count.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseResult, TestRunner};
use rspn_engine::ensemble::{build_base_ensemble, from_bytes, to_bytes, Ensemble, EnsembleParams};
use rspn_engine::par::Execution;
use rspn_engine::query::{execute, QueryCase, QueryOptions};
use rspn_engine::rdc::{rdc, RdcParams};
use rspn_engine::synth::{generate, SynthConfig, CATEGORIES};
use rspn_engine::value::{Datum, Value};

fn link(v: f64) -> BTreeMap<(String, String), f64> {
    [(("t0".to_string(), "t1".to_string()), v)].into_iter().collect()
}

/// Learned models over a two-table schema, one joint and one per table.
fn learned() -> &'static (Ensemble, Ensemble) {
    static CELL: OnceLock<(Ensemble, Ensemble)> = OnceLock::new();
    CELL.get_or_init(|| {
        let db = generate(&SynthConfig {
            tables: 2,
            root_rows: 2000,
            ..SynthConfig::default()
        })
        .unwrap();
        let p = EnsembleParams::default();
        (
            build_base_ensemble(&db, &p, &link(0.9), Execution::Sequential).unwrap(),
            build_base_ensemble(&db, &p, &link(0.0), Execution::Sequential).unwrap(),
        )
    })
}

/// Exact models over a small schema, one joint and one per table.
fn exact() -> &'static (Ensemble, Ensemble) {
    static CELL: OnceLock<(Ensemble, Ensemble)> = OnceLock::new();
    CELL.get_or_init(|| {
        let db = generate(&SynthConfig {
            tables: 2,
            root_rows: 300,
            seed: 4,
            ..SynthConfig::default()
        })
        .unwrap();
        let p = EnsembleParams {
            exact: true,
            ..EnsembleParams::default()
        };
        (
            build_base_ensemble(&db, &p, &link(0.9), Execution::Sequential).unwrap(),
            build_base_ensemble(&db, &p, &link(0.0), Execution::Sequential).unwrap(),
        )
    })
}

#[derive(Debug, Clone)]
enum Cond {
    Cat(usize, Vec<usize>),
    AtMost(usize, i64),
    AtLeast(usize, i64),
    OptPresent(usize),
}

impl Cond {
    fn sql(&self) -> String {
        let list = |c: &[usize]| c.iter().map(|i| format!("'{}'", CATEGORIES[*i])).collect::<Vec<_>>().join(", ");
        match self {
            Cond::Cat(t, c) if c.len() == 1 => format!("t{t}.cat = '{}'", CATEGORIES[c[0]]),
            Cond::Cat(t, c) => format!("t{t}.cat IN ({})", list(c)),
            Cond::AtMost(t, k) => format!("t{t}.num <= {k}"),
            Cond::AtLeast(t, k) => format!("t{t}.num >= {k}"),
            Cond::OptPresent(t) => format!("t{t}.opt IS NOT NULL"),
        }
    }

    fn table(&self) -> usize {
        match self {
            Cond::Cat(t, _) | Cond::AtMost(t, _) | Cond::AtLeast(t, _) | Cond::OptPresent(t) => *t,
        }
    }
}

fn cond(tables: usize) -> impl Strategy<Value = Cond> {
    let t = 0..tables;
    prop_oneof![
        (t.clone(), proptest::sample::subsequence((0..5).collect::<Vec<_>>(), 1..4)).prop_map(|(t, c)| Cond::Cat(t, c)),
        (t.clone(), 10i64..90).prop_map(|(t, k)| Cond::AtMost(t, k)),
        (t.clone(), 10i64..90).prop_map(|(t, k)| Cond::AtLeast(t, k)),
        t.prop_map(Cond::OptPresent),
    ]
}

/// Query shape: 0 = t0 only, 1 = t1 only, 2 = t0 JOIN t1.
fn shape() -> impl Strategy<Value = (usize, Vec<Cond>)> {
    (0usize..3).prop_flat_map(|s| {
        let tables = if s == 2 { 2 } else { 1 };
        (Just(s), proptest::collection::vec(cond(tables), 0..4)).prop_map(move |(s, cs)| {
            let cs = cs
                .into_iter()
                .map(|c| match (s, c) {
                    (1, Cond::Cat(_, v)) => Cond::Cat(1, v),
                    (1, Cond::AtMost(_, k)) => Cond::AtMost(1, k),
                    (1, Cond::AtLeast(_, k)) => Cond::AtLeast(1, k),
                    (1, Cond::OptPresent(_)) => Cond::OptPresent(1),
                    (_, c) => c,
                })
                .collect();
            (s, cs)
        })
    })
}

fn query(select: &str, s: usize, conds: &[Cond], tail: &str) -> String {
    let from = ["t0", "t1", "t0 JOIN t1"][s];
    let mut q = format!("SELECT {select} FROM {from}");
    if !conds.is_empty() {
        q += " WHERE ";
        q += &conds.iter().map(Cond::sql).collect::<Vec<_>>().join(" AND ");
    }
    q + tail
}

fn value(sql: &str, ens: &Ensemble) -> f64 {
    execute(sql, ens, &QueryOptions::default()).unwrap().estimate.unwrap().value
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> TestCaseResult) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn pick(joint: bool) -> &'static Ensemble {
    let (a, b) = learned();
    if joint {
        a
    } else {
        b
    }
}

pub fn sum_is_count_times_avg(cases: u32) -> Result<(), String> {
    run(cases, (shape(), any::<bool>()), |((s, conds), joint)| {
        let ens = pick(joint);
        let target = if s == 1 { "t1.num" } else { "t0.num" };
        let count = value(&query("COUNT(*)", s, &conds, ""), ens);
        if count <= 1e-9 {
            return Ok(());
        }
        let avg = execute(&query(&format!("AVG({target})"), s, &conds, ""), ens, &QueryOptions::default())
            .unwrap()
            .estimate
            .unwrap()
            .value;
        let sum = value(&query(&format!("SUM({target})"), s, &conds, ""), ens);
        prop_assert!(close(sum, count * avg, 1e-9), "{} vs {} * {}", sum, count, avg);
        Ok(())
    })
}

pub fn groups_partition_the_count(cases: u32) -> Result<(), String> {
    run(cases, (shape(), any::<bool>()), |((s, conds), joint)| {
        let ens = pick(joint);
        let key = if s == 1 { "t1.cat" } else { "t0.cat" };
        let total = value(&query("COUNT(*)", s, &conds, ""), ens);
        let opts = QueryOptions {
            min_group_count: f64::NEG_INFINITY,
            ..QueryOptions::default()
        };
        let grouped = execute(&query("COUNT(*)", s, &conds, &format!(" GROUP BY {key}")), ens, &opts).unwrap();
        let sum: f64 = grouped.groups.iter().map(|g| g.estimate.value).sum();
        prop_assert!(close(sum, total, 1e-6), "{} vs {}", sum, total);
        Ok(())
    })
}

fn on_table(c: Cond, t: usize) -> Cond {
    match c {
        Cond::Cat(_, v) => Cond::Cat(t, v),
        Cond::AtMost(_, k) => Cond::AtMost(t, k),
        Cond::AtLeast(_, k) => Cond::AtLeast(t, k),
        Cond::OptPresent(_) => Cond::OptPresent(t),
    }
}

pub fn strengthening_never_increases_count(cases: u32) -> Result<(), String> {
    run(cases, (shape(), cond(2), any::<bool>()), |((s, conds), extra, joint)| {
        let ens = pick(joint);
        let extra = match s {
            0 => on_table(extra, 0),
            1 => on_table(extra, 1),
            _ => extra,
        };
        let base = value(&query("COUNT(*)", s, &conds, ""), ens);
        let mut more = conds.clone();
        more.push(extra);
        let strong = value(&query("COUNT(*)", s, &more, ""), ens);
        prop_assert!(strong <= base * (1.0 + 1e-9) + 1e-9, "{} > {}", strong, base);
        Ok(())
    })
}

pub fn exact_and_larger_models_agree(cases: u32) -> Result<(), String> {
    run(cases, (0usize..2, proptest::collection::vec(cond(1), 0..4)), |(s, conds)| {
        let (joint, single) = exact();
        let conds: Vec<Cond> = conds.into_iter().map(|c| on_table(c, s)).collect();
        let sql = query("COUNT(*)", s, &conds, "");
        let small = execute(&sql, single, &QueryOptions::default()).unwrap();
        let large = execute(&sql, joint, &QueryOptions::default()).unwrap();
        prop_assert_eq!(small.case, QueryCase::ExactMatch);
        prop_assert_eq!(large.case, QueryCase::Superset);
        let (x, y) = (small.estimate.unwrap().value, large.estimate.unwrap().value);
        prop_assert!(close(x, y, 1e-9), "{} vs {}", x, y);
        Ok(())
    })
}

pub fn save_load_preserves_answers(cases: u32) -> Result<(), String> {
    static BACK: OnceLock<Ensemble> = OnceLock::new();
    let ens = pick(true);
    let back = BACK.get_or_init(|| from_bytes(&to_bytes(ens).unwrap()).unwrap());
    run(cases, shape(), |(s, conds)| {
        let sql = query("COUNT(*)", s, &conds, "");
        let a = execute(&sql, ens, &QueryOptions::default()).unwrap();
        let b = execute(&sql, back, &QueryOptions::default()).unwrap();
        prop_assert_eq!(a.estimate, b.estimate);
        prop_assert_eq!(a.case, b.case);
        Ok(())
    })
}

pub fn rdc_is_symmetric_and_rank_invariant(cases: u32) -> Result<(), String> {
    let strategy = (proptest::collection::vec((-50i32..50, -50i32..50), 4..120), any::<u64>());
    run(cases, strategy, |(pairs, seed)| {
        let params = RdcParams {
            seed,
            ..RdcParams::default()
        };
        let x: Vec<Value> = pairs.iter().map(|p| Some(Datum::Num(p.0 as f64))).collect();
        let y: Vec<Value> = pairs.iter().map(|p| Some(Datum::Num(p.1 as f64))).collect();
        let r = rdc(&x, &y, &params);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(r, rdc(&y, &x, &params));
        // strictly increasing maps preserve ranks
        let fx: Vec<Value> = pairs.iter().map(|p| Some(Datum::Num((p.0 as f64 / 10.0).exp()))).collect();
        let fy: Vec<Value> = pairs.iter().map(|p| Some(Datum::Num(3.0 * p.1 as f64 - 7.0))).collect();
        prop_assert_eq!(r, rdc(&fx, &fy, &params));
        Ok(())
    })
}

pub type Identity = fn(u32) -> Result<(), String>;

pub const ALL: [(&str, Identity); 6] = [
    ("SUM = COUNT x AVG", sum_is_count_times_avg),
    ("group-by partition", groups_partition_the_count),
    ("monotone under strengthening", strengthening_never_increases_count),
    ("exact-match and larger model agree", exact_and_larger_models_agree),
    ("save/load equivalence", save_load_preserves_answers),
    ("RDC symmetry and rank invariance", rdc_is_symmetric_and_rank_invariant),
];
