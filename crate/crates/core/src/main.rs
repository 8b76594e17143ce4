use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use rspn_engine::ensemble::{self, build_base_ensemble, optimize_ensemble, EnsembleParams};
use rspn_engine::eval::{evaluate_workload, generate_workload, WorkloadKind, WorkloadParams};
use rspn_engine::learn::LearnParams;
use rspn_engine::par::Execution;
use rspn_engine::query::{estimate_cardinality, execute, QueryOptions};
use rspn_engine::schema::{load_schema, Database};
use rspn_engine::update::{apply_batch, derive_updates, Direction, TableOp, UpdateBatch};
use rspn_engine::value::{Datum, Value};
use rspn_engine::{Error, Result};

#[derive(Parser)]
#[command(name = "rspn", version, about = "Learned cardinality estimation and approximate query answering")]
struct Cli {
    /// Run every data-parallel loop sequentially.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Count,
    Avg,
}

#[derive(Subcommand)]
enum Command {
    /// Learn an ensemble from a schema configuration and its CSV files.
    Learn {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        rdc_threshold: f64,
        /// Smallest row slice, as a fraction of the learning sample.
        #[arg(long, default_value_t = 0.01)]
        min_instance_slice: f64,
        /// Extra learning budget relative to the base ensemble.
        #[arg(long, default_value_t = 0.0)]
        budget_factor: f64,
        /// Row cap of each learning sample.
        #[arg(long, default_value_t = 1_000_000)]
        max_rows: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Build exact models over distinct rows instead of learning.
        #[arg(long)]
        exact: bool,
    },
    /// Answer a COUNT, SUM or AVG query.
    Query {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sql: String,
        #[arg(long, default_value_t = 0.95)]
        confidence_level: f64,
        /// Groups with a smaller estimated count are omitted.
        #[arg(long, default_value_t = 0.5)]
        min_group_count: f64,
        /// Include the compiled expressions and chosen models.
        #[arg(long)]
        show_plan: bool,
    },
    /// Estimate the result size of a query.
    Cardinality {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sql: String,
    },
    /// Apply inserts and deletes from a CSV feed.
    ///
    /// Each record is `I,<table>,<declared column values...>` or
    /// `D,<table>,<primary key>`; lines starting with `#` are ignored.
    Update {
        #[arg(long)]
        model: PathBuf,
        /// Schema whose CSV files hold the database state before the feed.
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        updates: PathBuf,
        /// Where to write the updated model; defaults to `--model`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare the model against exact answers computed by scanning.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// One SQL statement per line.
        #[arg(long, conflicts_with = "generate")]
        workload: Option<PathBuf>,
        /// Number of random queries to generate.
        #[arg(long)]
        generate: Option<usize>,
        #[arg(long, value_enum, default_value_t = Kind::Count)]
        kind: Kind,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        max_tables: usize,
        /// Also write the per-query report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print per-model statistics.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RSPN_LOG", "warn")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match run(cli.command, exec) {
        Ok(out) => {
            let text = serde_json::to_string_pretty(&out).expect("serializable");
            // a closed pipe is not an error for the caller
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.to_string(), "exit_code": e.exit_code() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command, exec: Execution) -> Result<Json> {
    match command {
        Command::Learn {
            schema,
            output,
            rdc_threshold,
            min_instance_slice,
            budget_factor,
            max_rows,
            seed,
            exact,
        } => {
            let db = Database::load(load_schema(&schema)?)?;
            let params = EnsembleParams {
                learn: LearnParams {
                    rdc_threshold,
                    min_instance_fraction: min_instance_slice,
                    seed,
                    ..LearnParams::default()
                },
                max_rows,
                exact,
                ..EnsembleParams::default()
            };
            params.learn.validate()?;
            let start = Instant::now();
            let base = build_base_ensemble(&db, &params, &BTreeMap::new(), exec)?;
            let ens = optimize_ensemble(base, &db, budget_factor, exec)?;
            let secs = start.elapsed().as_secs_f64();
            ensemble::save(&ens, &output)?;
            Ok(json!({
                "model": output,
                "rspns": ens.rspns.iter().map(|m| json!({"id": m.id, "tables": m.table_set, "samples": m.n_samples})).collect::<Vec<_>>(),
                "dependencies": ens.dependencies,
                "learning_seconds": secs,
                "base_cost_seconds": ens.base_cost,
                "budget_factor": ens.budget_factor,
            }))
        }
        Command::Query {
            model,
            sql,
            confidence_level,
            min_group_count,
            show_plan,
        } => {
            if !(confidence_level > 0.0 && confidence_level < 1.0) {
                return Err(Error::Config("confidence level must lie in (0, 1)".into()));
            }
            let ens = ensemble::load(&model)?;
            let opts = QueryOptions {
                confidence_level,
                min_group_count,
                ..QueryOptions::default()
            };
            let start = Instant::now();
            let r = execute(&sql, &ens, &opts)?;
            let latency_us = start.elapsed().as_secs_f64() * 1e6;
            let mut out = json!({
                "query": r.query,
                "case": r.case.label(),
                "latency_us": latency_us,
                "warnings": r.warnings,
            });
            if let Some(e) = r.estimate {
                out["value"] = json!(e.value);
                out["variance"] = json!(e.variance);
                out["ci"] = json!([e.ci_low, e.ci_high]);
            } else {
                out["group_columns"] = json!(r.group_columns);
                out["groups"] = json!(r
                    .groups
                    .iter()
                    .map(|g| json!({
                        "key": g.key.iter().map(datum_json).collect::<Vec<_>>(),
                        "value": g.estimate.value,
                        "ci": [g.estimate.ci_low, g.estimate.ci_high],
                    }))
                    .collect::<Vec<_>>());
            }
            if show_plan {
                out["plan"] = json!({
                    "rspns": r.plan.steps.iter().map(|s| json!({
                        "id": s.rspn_id,
                        "assigned": s.assigned,
                        "overlap": s.overlap,
                        "score": s.score,
                    })).collect::<Vec<_>>(),
                    "expressions": r.expressions,
                });
            }
            Ok(out)
        }
        Command::Cardinality { model, sql } => {
            let ens = ensemble::load(&model)?;
            let start = Instant::now();
            let n = estimate_cardinality(&sql, &ens)?;
            let latency_us = start.elapsed().as_secs_f64() * 1e6;
            Ok(json!({ "cardinality": n, "latency_us": latency_us }))
        }
        Command::Update {
            model,
            schema,
            updates,
            output,
            seed,
        } => {
            let mut ens = ensemble::load(&model)?;
            let mut db = Database::load(load_schema(&schema)?)?;
            let ops = read_updates(&updates, &db)?;
            let start = Instant::now();
            let per_model = {
                let models: Vec<&_> = ens.rspns.iter().collect();
                derive_updates(&mut db, &models, &ops)?
            };
            let mut reports = Vec::new();
            for (i, (m, operations)) in ens.rspns.iter_mut().zip(per_model).enumerate() {
                let batch = UpdateBatch {
                    operations,
                    applied_sample_rate: m.sample_rate,
                };
                let rep = apply_batch(m, &batch, seed.wrapping_add(i as u64))?;
                let inserts = batch.operations.iter().filter(|(d, _)| *d == Direction::Insert).count();
                reports.push(json!({
                    "id": m.id,
                    "operations": rep.total,
                    "applied": rep.applied,
                    "inserts": inserts,
                    "deletes": rep.total - inserts,
                }));
            }
            let secs = start.elapsed().as_secs_f64();
            ens.validate()?;
            let target = output.unwrap_or(model);
            ensemble::save(&ens, &target)?;
            Ok(json!({
                "model": target,
                "table_operations": ops.len(),
                "rspns": reports,
                "seconds": secs,
                "operations_per_second": if secs > 0.0 { ops.len() as f64 / secs } else { 0.0 },
            }))
        }
        Command::Evaluate {
            model,
            schema,
            workload,
            generate,
            kind,
            seed,
            max_tables,
            csv,
        } => {
            let ens = ensemble::load(&model)?;
            let db = Database::load(load_schema(&schema)?)?;
            let queries: Vec<String> = match (workload, generate) {
                (Some(path), _) => std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with("--"))
                    .map(String::from)
                    .collect(),
                (None, Some(n)) => generate_workload(
                    &db,
                    &WorkloadParams {
                        kind: match kind {
                            Kind::Count => WorkloadKind::Count,
                            Kind::Avg => WorkloadKind::Avg,
                        },
                        queries: n,
                        max_tables,
                        seed,
                        ..WorkloadParams::default()
                    },
                ),
                (None, None) => return Err(Error::Config("pass --workload or --generate".into())),
            };
            let report = evaluate_workload(&queries, &ens, &db, &QueryOptions::default(), exec);
            if let Some(path) = csv {
                write_file(&path, report.to_csv()?.as_bytes())?;
            }
            serde_json::to_value(&report).map_err(|e| Error::Invariant(e.to_string()))
        }
        Command::Inspect { model } => {
            let ens = ensemble::load(&model)?;
            let models: Vec<Json> = ens
                .rspns
                .iter()
                .map(|m| {
                    let s = m.stats();
                    let scope: Vec<&str> = m.columns.iter().map(|c| c.name.as_str()).collect();
                    let n = m.rdc.columns.len();
                    let mut pairs = Vec::new();
                    for i in 0..n {
                        for j in i + 1..n {
                            pairs.push(m.rdc.at(i, j));
                        }
                    }
                    let max = pairs.iter().copied().fold(0.0f64, f64::max);
                    let mean = if pairs.is_empty() { 0.0 } else { pairs.iter().sum::<f64>() / pairs.len() as f64 };
                    json!({
                        "id": m.id,
                        "tables": m.table_set,
                        "scope": scope,
                        "nodes": {"sum": s.sum, "product": s.product, "leaf": s.leaf, "total": m.nodes.len()},
                        "depth": s.depth,
                        "samples": m.n_samples,
                        "population": m.population(),
                        "sample_rate": m.sample_rate,
                        "rdc": {"columns": n, "max_pairwise": max, "mean_pairwise": mean},
                    })
                })
                .collect();
            Ok(json!({
                "rspns": models,
                "tables": ens.schema.tables.iter().map(|t| &t.name).collect::<Vec<_>>(),
                "base_cost_seconds": ens.base_cost,
                "budget_factor": ens.budget_factor,
                "format_version": ensemble::FORMAT_VERSION,
            }))
        }
    }
}

fn datum_json(d: &Datum) -> Json {
    match d {
        Datum::Num(x) => json!(x),
        Datum::Str(s) => json!(s.as_ref()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Parse the update feed against the schema's declared columns.
fn read_updates(path: &Path, db: &Database) -> Result<Vec<TableOp>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut ops = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv {
            table: "updates".into(),
            message: e.to_string(),
        })?;
        let bad = |m: String| Error::Update(format!("update record {}: {m}", line + 1));
        let op = rec.get(0).map(str::trim).unwrap_or("");
        let table = rec.get(1).map(str::trim).unwrap_or("");
        let def = db.schema.table(table).ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        let fields: Vec<&str> = rec.iter().skip(2).collect();
        match op {
            "I" | "i" => {
                if fields.len() != def.columns.len() {
                    return Err(bad(format!(
                        "{table} declares {} columns, got {}",
                        def.columns.len(),
                        fields.len()
                    )));
                }
                let values = def
                    .columns
                    .iter()
                    .zip(&fields)
                    .map(|(c, f)| parse_field(f, c.kind))
                    .collect::<Result<Vec<Value>>>()?;
                ops.push(TableOp::Insert {
                    table: table.to_string(),
                    values,
                });
            }
            "D" | "d" => {
                let [key] = fields.as_slice() else {
                    return Err(bad("a delete names exactly one primary key".into()));
                };
                let pk = def.column(&def.primary_key).expect("validated schema");
                let key = parse_field(key, pk.kind)?.ok_or_else(|| bad("empty primary key".into()))?;
                ops.push(TableOp::Delete {
                    table: table.to_string(),
                    key,
                });
            }
            other => return Err(bad(format!("operation must be I or D, got {other:?}"))),
        }
    }
    Ok(ops)
}

fn parse_field(text: &str, kind: rspn_engine::value::ColumnKind) -> Result<Value> {
    let t = text.trim();
    if t.is_empty() {
        return Ok(None);
    }
    Datum::parse(t, kind)
        .map(Some)
        .ok_or_else(|| Error::Update(format!("cannot parse {t:?} as a {kind:?} value")))
}
