//! CLI for the drawdown-crossing selling rule.
//!
//! Subcommands:
//! - `table1` / `table2`: Monte Carlo regret tables for the slope-switching
//!   model (fixed up-probability across intensities / fixed intensity across
//!   up-probabilities).
//! - `table3`: the q-mean threshold and its quantile level per exponent.
//! - `verify`: exhaustive optimality verification on random scenario trees.
//! - `apply`: run the crossing rule on a CSV price series.
//!
//! Every command echoes its fully resolved configuration (seed included)
//! into the output, so runs can be reproduced byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ultimax::forecast::ForecastSpec;
use ultimax::montecarlo::{run_experiment, ExperimentSpec, ModelParams, RegretReport};
use ultimax::oracle::{random_tree, TreeGenConfig};
use ultimax::paths::PricePath;
use ultimax::special::solve_zq;
use ultimax::stopping::{estimated_regret, perfect_stop, realized_regret, StoppingRuleSpec};
use ultimax::PoissonSlopeParams;

#[derive(Parser)]
#[command(name = "ultimax", version, about = "Selling near the ultimate maximum: regret tables, threshold solver, tree verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Regret table across switching intensities (slope-switching model)
    Table1(Table1Args),
    /// Regret table across up-move probabilities at fixed intensity
    Table2(Table2Args),
    /// q-mean threshold table: z_q and the matched quantile level delta
    Table3(Table3Args),
    /// Verify the crossing rule's optimality on random scenario trees
    Verify(VerifyArgs),
    /// Apply the crossing rule to a CSV price series (header `t,price`)
    Apply(ApplyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct OutputArgs {
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format (tables default to csv; verify/apply emit json)
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Round CSV table values to 2 decimals
    #[arg(long)]
    paper_rounding: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// Horizon T
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Downward slope magnitude
    #[arg(long, default_value_t = 1.0)]
    down_slope: f64,
    /// Upward slope magnitude (also the worst-case forecast rate)
    #[arg(long, default_value_t = 1.0)]
    up_slope: f64,
    /// Monte Carlo sample count
    #[arg(long, default_value_t = 1_000_000)]
    n_paths: u64,
    /// Master seed for the per-path streams
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct Table1Args {
    /// Switching intensities, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,10,50,100,1000")]
    lambdas: Vec<f64>,
    /// Up-move probability
    #[arg(long, default_value_t = 0.5)]
    p_up: f64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct Table2Args {
    /// Up-move probabilities, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
    p_list: Vec<f64>,
    /// Switching intensity
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct Table3Args {
    /// Exponents of the q-mean objective, comma separated (each > 1)
    #[arg(long, value_delimiter = ',', default_value = "1.1,2,4,6,8,10")]
    q_list: Vec<f64>,
    /// Volatility entering c_delta = sigma * z_q
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// Number of random trees to verify
    #[arg(long, default_value_t = 100)]
    tree_count: u64,
    /// Tree depth (levels below the root), capped at 5
    #[arg(long, default_value_t = 4)]
    max_depth: usize,
    /// Max children per node, capped at 3
    #[arg(long, default_value_t = 3)]
    max_branching: usize,
    /// Cap on enumerable rules per tree
    #[arg(long, default_value_t = 20_000)]
    max_rules: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ApplyArgs {
    /// Price series CSV (header `t,price`, first row at t = 0)
    #[arg(long)]
    csv: PathBuf,
    /// Forecast as inline JSON (starts with `{`) or a path to a JSON file;
    /// e.g. {"kind":"lipschitz","L2":1.0,"T":1.0}
    #[arg(long)]
    forecast: String,
    /// Crossing tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[command(flatten)]
    output: OutputArgs,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Table1(args) => table1(args),
        Command::Table2(args) => table2(args),
        Command::Table3(args) => table3(args),
        Command::Verify(args) => verify(args),
        Command::Apply(args) => apply(args),
    }
}

/// Perfect-rule and fixed-time summaries pulled out of a report.
fn table_row(report: &RegretReport, key: f64) -> (Vec<f64>, Value) {
    let stats: Vec<Value> = report
        .rules
        .iter()
        .map(|r| {
            json!({
                "rule": r.rule,
                "mean_stop_time": r.mean_stop_time,
                "mean_realized_regret": r.mean_realized_regret,
                "mean_estimated_regret": r.mean_estimated_regret,
                "ci99_stop_time": r.ci99_stop_time,
                "ci99_realized_regret": r.ci99_realized_regret,
                "ci99_estimated_regret": r.ci99_estimated_regret,
            })
        })
        .collect();
    let mut cols = vec![key, report.rules[0].mean_stop_time, report.rules[0].mean_realized_regret];
    cols.extend(report.rules[1..].iter().map(|r| r.mean_realized_regret));
    (cols, Value::Array(stats))
}

fn table1(args: Table1Args) -> Result<()> {
    if args.lambdas.is_empty() {
        bail!("--lambdas must not be empty");
    }
    let m = &args.model;
    let forecast = ForecastSpec::lipschitz(m.up_slope, m.horizon)?;
    let config = json!({
        "command": "table1",
        "lambdas": args.lambdas, "p_up": args.p_up,
        "horizon": m.horizon, "down_slope": m.down_slope, "up_slope": m.up_slope,
        "n_paths": m.n_paths, "seed": m.seed,
        "fixed_stop_times": [m.horizon / 2.0],
    });
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for &lambda in &args.lambdas {
        let spec = ExperimentSpec {
            model: ModelParams::PoissonSlope(PoissonSlopeParams {
                lambda,
                p_up: args.p_up,
                down_slope: m.down_slope,
                up_slope: m.up_slope,
                x0: 0.0,
                horizon: m.horizon,
            }),
            rules: vec![
                StoppingRuleSpec::Perfect { forecast: forecast.clone() },
                StoppingRuleSpec::Deterministic { u: m.horizon / 2.0 },
            ],
            forecast: forecast.clone(),
            n_paths: m.n_paths,
            master_seed: m.seed,
        };
        let report = run_experiment(&spec)?;
        let (cols, detail) = table_row(&report, lambda);
        rows.push(cols);
        details.push(detail);
    }
    emit_table(
        &args.output,
        &["lambda", "mean_stop_time", "realized_regret", "realized_regret_u_half"],
        &rows,
        config,
        details,
    )
}

fn table2(args: Table2Args) -> Result<()> {
    if args.p_list.is_empty() {
        bail!("--p-list must not be empty");
    }
    let m = &args.model;
    let forecast = ForecastSpec::lipschitz(m.up_slope, m.horizon)?;
    let us = [0.0, m.horizon / 2.0, m.horizon];
    let config = json!({
        "command": "table2",
        "p_list": args.p_list, "lambda": args.lambda,
        "horizon": m.horizon, "down_slope": m.down_slope, "up_slope": m.up_slope,
        "n_paths": m.n_paths, "seed": m.seed,
        "fixed_stop_times": us,
    });
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for &p_up in &args.p_list {
        let mut rules = vec![StoppingRuleSpec::Perfect { forecast: forecast.clone() }];
        rules.extend(us.iter().map(|&u| StoppingRuleSpec::Deterministic { u }));
        let spec = ExperimentSpec {
            model: ModelParams::PoissonSlope(PoissonSlopeParams {
                lambda: args.lambda,
                p_up,
                down_slope: m.down_slope,
                up_slope: m.up_slope,
                x0: 0.0,
                horizon: m.horizon,
            }),
            rules,
            forecast: forecast.clone(),
            n_paths: m.n_paths,
            master_seed: m.seed,
        };
        let report = run_experiment(&spec)?;
        let (cols, detail) = table_row(&report, p_up);
        rows.push(cols);
        details.push(detail);
    }
    emit_table(
        &args.output,
        &["p", "mean_stop_time", "realized_regret", "realized_regret_u0", "realized_regret_u_half", "realized_regret_u_full"],
        &rows,
        config,
        details,
    )
}

fn table3(args: Table3Args) -> Result<()> {
    if args.q_list.is_empty() {
        bail!("--q-list must not be empty");
    }
    let config = json!({ "command": "table3", "q_list": args.q_list, "sigma": args.sigma });
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for &q in &args.q_list {
        let sol = solve_zq(q, args.sigma)?;
        rows.push(vec![sol.q, sol.z_q, sol.delta]);
        details.push(serde_json::to_value(&sol)?);
    }
    emit_table(&args.output, &["q", "z_q", "delta"], &rows, config, details)
}

fn verify(args: VerifyArgs) -> Result<()> {
    if args.max_depth == 0 || args.max_depth > 5 {
        bail!("--max-depth must lie in 1..=5 (rule counts grow doubly exponentially)");
    }
    if args.max_branching == 0 || args.max_branching > 3 {
        bail!("--max-branching must lie in 1..=3");
    }
    if args.output.format == Some(Format::Csv) {
        bail!("verify emits a JSON summary; use --format json");
    }
    let config = json!({
        "command": "verify",
        "tree_count": args.tree_count, "max_depth": args.max_depth,
        "max_branching": args.max_branching, "max_rules": args.max_rules,
        "seed": args.seed,
    });
    let mut passed = 0u64;
    let mut total_rules = 0u64;
    let mut failures = Vec::new();
    for i in 0..args.tree_count {
        let gen_config = TreeGenConfig {
            depth: 1 + (i as usize % args.max_depth),
            max_branching: args.max_branching,
            max_rules: args.max_rules,
            horizon: 1.0,
        };
        let tree = random_tree(&gen_config, args.seed.wrapping_add(i))?;
        let report = tree.verify_perfection(args.max_rules)?;
        total_rules += report.rule_count;
        if report.pass {
            passed += 1;
        } else {
            failures.push(json!({
                "tree_index": i,
                "report": report,
            }));
        }
    }
    let body = json!({
        "config": config,
        "summary": {
            "trees": args.tree_count,
            "passed": passed,
            "failed": args.tree_count - passed,
            "total_rules_enumerated": total_rules,
            "failures": failures,
        },
    });
    write_output(&args.output.out, &format!("{}\n", serde_json::to_string_pretty(&body)?))
}

fn apply(args: ApplyArgs) -> Result<()> {
    if args.output.format == Some(Format::Csv) {
        bail!("apply emits a JSON stop report; use --format json");
    }
    let csv_text = fs::read_to_string(&args.csv)
        .with_context(|| format!("reading price series {}", args.csv.display()))?;
    let path = PricePath::from_csv_str(&csv_text)
        .with_context(|| format!("parsing price series {}", args.csv.display()))?;
    let forecast_text = if args.forecast.trim_start().starts_with('{') {
        args.forecast.clone()
    } else {
        fs::read_to_string(&args.forecast)
            .with_context(|| format!("reading forecast spec {}", args.forecast))?
    };
    let forecast: ForecastSpec =
        serde_json::from_str(&forecast_text).context("parsing forecast spec JSON")?;

    let stop = perfect_stop(&path, &forecast, args.tol)?;
    let realized = realized_regret(&path, stop.stop_time)?;
    let estimated = estimated_regret(&path, stop.stop_time, &forecast)?;

    let body = json!({
        "config": {
            "command": "apply",
            "csv": args.csv,
            "forecast": forecast,
            "tol": args.tol,
        },
        "result": {
            "stop_time": stop.stop_time,
            "stop_price": stop.stop_price,
            "drawdown_at_stop": stop.drawdown_at_stop,
            "psi_at_stop": stop.psi_at_stop,
            "realized_regret": realized,
            "estimated_regret": estimated,
        },
    });
    write_output(&args.output.out, &format!("{}\n", serde_json::to_string_pretty(&body)?))
}

fn emit_table(
    output: &OutputArgs,
    header: &[&str],
    rows: &[Vec<f64>],
    config: Value,
    details: Vec<Value>,
) -> Result<()> {
    let text = match output.format.unwrap_or(Format::Csv) {
        Format::Json => {
            let json_rows: Vec<Value> = rows
                .iter()
                .zip(details)
                .map(|(cols, detail)| {
                    let mut obj = serde_json::Map::new();
                    for (name, value) in header.iter().zip(cols) {
                        obj.insert((*name).to_string(), json!(value));
                    }
                    obj.insert("rules".into(), detail);
                    Value::Object(obj)
                })
                .collect();
            format!("{}\n", serde_json::to_string_pretty(&json!({ "config": config, "rows": json_rows }))?)
        }
        Format::Csv => {
            let mut text = format!("# config: {config}\n{}\n", header.join(","));
            for cols in rows {
                let mut line = String::new();
                for (i, v) in cols.iter().enumerate() {
                    if i > 0 {
                        line.push(',');
                    }
                    if output.paper_rounding {
                        write!(line, "{v:.2}")?;
                    } else {
                        write!(line, "{v:?}")?;
                    }
                }
                text.push_str(&line);
                text.push('\n');
            }
            text
        }
    };
    write_output(&output.out, &text)
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
