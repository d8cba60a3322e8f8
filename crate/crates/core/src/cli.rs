//! `polycentroid` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O, 2 usage or validation, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::analysis::{self, compare, leading_order_estimate, Figure1Config};
use crate::error::{Error, Result};
use crate::maxent::solve_maxent;
use crate::model::{self, write_atomic, ConstraintSet};
use crate::saddle::{centroid_first_order, centroid_second_order, solve_saddle, SolverOptions};
use crate::sampler::{chart, run_chains, SampleStatsExport, WalkParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "polycentroid",
    version,
    about = "Centroid inference under linear constraints"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// First-order saddle-point centroid.
    C1,
    /// Second-order (Gaussian fluctuation) centroid.
    C2,
    /// Maximum-entropy solution.
    Maxent,
    /// Leading-order expansion shared by c1 and maxent.
    Leading,
}

#[derive(Debug, clap::Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.5)]
    pub damping: f64,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.max_iter,
            residual_tolerance: self.tol,
            damping: self.damping,
            initial_multipliers: None,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate Gaussian random constraints.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        c: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Redraw (with derived seeds) until the solution set has an interior.
        #[arg(long)]
        feasible: bool,
    },
    /// Solve for a point estimate and write it as CSV.
    Solve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        out: PathBuf,
        /// Metadata JSON; defaults to `<out>.meta.json`.
        #[arg(long)]
        meta: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Hit-and-run walk over the solution set.
    Sample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = parse_count)]
        steps: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "10000", value_parser = parse_count)]
        burn_in: u64,
        #[arg(long, default_value_t = 10)]
        thin: u64,
        #[arg(long, default_value_t = 1)]
        chains: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two distribution CSVs.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Sample statistics whose standard deviations normalize the gaps.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single random constraint experiment: estimators against a long walk.
    Experiment {
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value = "10000000", value_parser = parse_count)]
        steps: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "10000", value_parser = parse_count)]
        burn_in: u64,
        #[arg(long, default_value_t = 10)]
        thin: u64,
        #[arg(long, default_value_t = 1)]
        chains: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Accepts plain integers and exact float notation such as `1e7`.
fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = s.parse().map_err(|_| format!("not a count: {s}"))?;
    if f >= 0.0 && f.fract() == 0.0 && f < u64::MAX as f64 {
        Ok(f as u64)
    } else {
        Err(format!("not a non-negative integer: {s}"))
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn manifest(command: &str, parameters: Value) -> Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "parameters": parameters,
    })
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("json value serializes");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn default_meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen {
            n,
            c,
            sigma,
            seed,
            out,
            feasible,
        } => {
            let (cs, used_seed, retries) = if feasible {
                let g = analysis::gen_feasible_constraints(n, c, sigma, seed)?;
                (g.constraints, g.seed, g.retries)
            } else {
                (
                    analysis::gen_gaussian_constraints(n, c, sigma, seed)?,
                    seed,
                    0,
                )
            };
            let m = manifest(
                "gen",
                json!({"n": n, "c": c, "sigma": sigma, "seed": seed,
                       "feasible": feasible, "coefficient_seed": used_seed, "retries": retries}),
            );
            model::write_constraints(&cs, &out, Some(m))
        }
        Command::Solve {
            input,
            method,
            out,
            meta,
            solver,
        } => {
            let cs = model::read_constraints_lenient(&input)?;
            let opts = solver.options();
            opts.check()?;
            let (values, details) = solve(&cs, method, &opts)?;
            let mut m = manifest(
                "solve",
                json!({"in": input, "method": format!("{method:?}").to_lowercase(),
                       "max_iter": opts.max_iterations, "tol": opts.residual_tolerance,
                       "damping": opts.damping}),
            );
            m["result"] = details;
            m["constraint_residuals"] = json!(cs.residuals(&values));
            model::write_distribution(&values, &out)?;
            write_json(&meta.unwrap_or_else(|| default_meta_path(&out)), &m)
        }
        Command::Sample {
            input,
            steps,
            seed,
            burn_in,
            thin,
            chains,
            out,
        } => {
            let params = WalkParams {
                n_steps: steps,
                seed,
                burn_in,
                thinning: thin,
            };
            params.check()?;
            let cs = model::read_constraints_lenient(&input)?;
            let ch = chart(&cs, None)?;
            let stats = run_chains(&ch, params, chains)?;
            let mut v =
                serde_json::to_value(SampleStatsExport::from(&stats)).expect("stats serialize");
            v["manifest"] = manifest(
                "sample",
                json!({"in": input, "steps": steps, "seed": seed, "burn_in": burn_in,
                       "thin": thin, "chains": chains}),
            );
            write_json(&out, &v)
        }
        Command::Compare { a, b, stats, out } => {
            let va = model::read_distribution(&a)?;
            let vb = model::read_distribution(&b)?;
            let widths = match &stats {
                Some(path) => Some(
                    read_stats(path)?
                        .variance
                        .iter()
                        .map(|v| v.sqrt())
                        .collect::<Vec<_>>(),
                ),
                None => None,
            };
            let report = compare(&va, &vb, widths.as_deref())?;
            let mut v = serde_json::to_value(&report).expect("report serializes");
            v["manifest"] = manifest("compare", json!({"a": a, "b": b, "stats": stats}));
            write_json(&out, &v)
        }
        Command::Experiment {
            n,
            sigma,
            steps,
            seed,
            burn_in,
            thin,
            chains,
            out,
        } => {
            let cfg = Figure1Config {
                n,
                sigma_f: sigma,
                walk_steps: steps,
                burn_in,
                thinning: thin,
                chains,
                seed,
            };
            let bundle = analysis::run_figure1(&cfg)?;
            bundle.write(&out)
        }
    }
}

fn read_stats(path: &Path) -> Result<SampleStatsExport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn solve(cs: &ConstraintSet, method: Method, opts: &SolverOptions) -> Result<(Vec<f64>, Value)> {
    Ok(match method {
        Method::C1 => {
            let sp = solve_saddle(cs, opts)?;
            let p = centroid_first_order(cs, &sp)?;
            (p.into_vec(), json!({"saddle": sp}))
        }
        Method::C2 => {
            let sp = solve_saddle(cs, opts)?;
            let c2 = centroid_second_order(cs, &sp)?;
            let details = json!({
                "saddle": sp,
                "normalization_shift": c2.normalization_shift,
                "second_order_constraint_residuals": c2.constraint_residuals,
            });
            (c2.distribution.into_vec(), details)
        }
        Method::Maxent => {
            let me = solve_maxent(cs, opts)?;
            let details = json!({
                "multipliers": me.multipliers,
                "log_norm": me.log_norm,
                "entropy": me.entropy,
                "residual_norm": me.residual_norm,
                "iterations": me.iterations,
            });
            (me.distribution.into_vec(), details)
        }
        Method::Leading => (leading_order_estimate(cs)?, json!({})),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accept_float_notation() {
        assert_eq!(parse_count("1e7"), Ok(10_000_000));
        assert_eq!(parse_count("250"), Ok(250));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }

    #[test]
    fn meta_path_is_sibling() {
        assert_eq!(
            default_meta_path(Path::new("/tmp/x/p.csv")),
            PathBuf::from("/tmp/x/p.csv.meta.json")
        );
    }
}
