//! Command-line front end. Exit codes: 0 success, 1 usage or contract error,
//! 2 a check ran and failed.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::datasets::{write_pair_csv, ShiftSpec};
use crate::error::{Error, Result};
use crate::gradcheck::grad_check;
use crate::oracle::*;
use crate::trainer::{build_domains, emit_report, run_experiment, DataSpec, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

/// Largest relative error `grad-check` accepts.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "udalab",
    version,
    about = "Domain adaptation under label shift: trainer and exact oracle"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every seed of a config and report accuracies.
    Train {
        config: PathBuf,
        /// Directory for records.csv and summary.json (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an exact check on a discrete instance.
    OracleCheck {
        /// terms, bound2, bound3, bound4, tightness, tightness-weighted,
        /// inductive-weights, minent or dann-cdan
        check: String,
        instance: PathBuf,
    },
    /// Write a domain pair as CSV.
    GenData { spec: PathBuf, out: PathBuf },
    /// Audit the tape's gradients against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        graphs: usize,
    },
}

/// `oracle-check` input: the instance plus whatever the check needs.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckInput {
    pub p_s: Vec<Vec<f64>>,
    pub p_t: Vec<Vec<f64>>,
    /// Predictions, `C x m`.
    #[serde(default)]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub w: Option<Vec<f64>>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Cell map `z -> psi[z]` for `inductive-weights`.
    #[serde(default)]
    pub partition: Option<Vec<usize>>,
    /// Deterministic prediction per cell for `dann-cdan`.
    #[serde(default)]
    pub class_of: Option<Vec<usize>>,
    #[serde(default)]
    pub b_scalar: Option<f64>,
    #[serde(default)]
    pub b_vec: Option<f64>,
}

/// `gen-data` input.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataSpec {
    pub data: DataSpec,
    #[serde(default)]
    pub source_shift: Option<ShiftSpec>,
}

#[derive(Debug, Serialize)]
pub struct CheckOutput {
    pub check: String,
    pub inputs_hash: String,
    pub values: Value,
    pub holds: Option<bool>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn need<T: Clone>(v: &Option<T>, field: &str, check: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::Contract(format!("check '{check}' needs field '{field}'")))
}

/// Run a named check on parsed input.
pub fn oracle_check(check: &str, input: &CheckInput) -> Result<(Value, Option<bool>)> {
    let inst = DiscreteInstance::from_tables(&InstanceTables {
        p_s: input.p_s.clone(),
        p_t: input.p_t.clone(),
    })?;
    let default = CriticFamily::for_classes(inst.classes());
    let fam = CriticFamily::new(
        input.b_scalar.unwrap_or(default.b_scalar),
        input.b_vec.unwrap_or(default.b_vec),
    )?;
    let g = || -> Result<Predictions> { Predictions::from_rows(&need(&input.g, "g", check)?) };
    let w = |fallback: fn(&DiscreteInstance) -> Result<WeightTable>| match &input.w {
        Some(w) => WeightTable::new(&inst, w.clone()),
        None => fallback(&inst),
    };
    let uniform = |i: &DiscreteInstance| Ok(WeightTable::uniform(i));

    Ok(match check {
        "terms" => {
            let w = w(uniform)?;
            let mut v = json!({
                "inv": inv_exact(&inst, &fam),
                "tsf": tsf_exact(&inst, &fam),
                "d_fc": d_fc_exact(&inst, &fam),
                "inv_weighted": inv_weighted_exact(&inst, &w, &fam)?,
                "tsf_weighted": tsf_weighted_exact(&inst, &w, &fam)?,
            });
            if input.g.is_some() {
                v["tsf_hat"] = json!(tsf_hat_exact(&inst, &w, &g()?, &fam)?);
            }
            (v, Some(true))
        }
        "bound2" => bound(verify_bound2(&inst, &g()?, &fam)?)?,
        "bound3" => bound(verify_bound3(&inst, &w(uniform)?, &g()?, &fam)?)?,
        "bound4" => {
            let beta = need(&input.beta, "beta", check)?;
            bound(verify_bound4(
                &inst,
                &w(WeightTable::optimal)?,
                &g()?,
                beta,
                &fam,
            )?)?
        }
        "minent" => {
            let alpha = need(&input.alpha, "alpha", check)?;
            bound(check_minent_bound(&inst, &w(uniform)?, &g()?, alpha, &fam)?)?
        }
        "tightness" => {
            let r = check_tightness(&inst, &fam);
            (serde_json::to_value(&r)?, Some(r.consistent))
        }
        "tightness-weighted" => {
            let r = check_tightness_weighted(&inst, &fam)?;
            (serde_json::to_value(&r)?, Some(r.consistent))
        }
        "inductive-weights" => {
            let psi = need(&input.partition, "partition", check)?;
            let coarse = psi.iter().max().map_or(0, |k| k + 1);
            let r = check_inductive_weights(&inst, &psi, coarse, &fam)?;
            (serde_json::to_value(&r)?, Some(r.consistent))
        }
        "dann-cdan" => {
            let r = check_dann_cdan_equality(&inst, &need(&input.class_of, "class_of", check)?)?;
            (serde_json::to_value(&r)?, Some(r.equal))
        }
        other => return Err(Error::Contract(format!("unknown check '{other}'"))),
    })
}

fn bound(r: BoundReport) -> Result<(Value, Option<bool>)> {
    let holds = r.holds;
    Ok((serde_json::to_value(&r)?, holds))
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    writeln!(out, "{text}").map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train { config, out: dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_experiment(&cfg)?;
            if let Some(dir) = dir.or_else(|| cfg.output.clone()) {
                emit_report(&report, &dir)?;
            }
            emit(out, &report.summary)?;
            Ok(EXIT_OK)
        }
        Command::OracleCheck { check, instance } => {
            let bytes = read(&instance)?;
            let input: CheckInput = serde_json::from_slice(&bytes)?;
            let (values, holds) = oracle_check(&check, &input)?;
            let report = CheckOutput {
                check,
                inputs_hash: hex::encode(Sha256::digest(&bytes)),
                values,
                holds,
            };
            emit(out, &report)?;
            Ok(match holds {
                Some(true) => EXIT_OK,
                Some(false) => EXIT_FAILED,
                None => EXIT_USAGE,
            })
        }
        Command::GenData { spec, out: path } => {
            let spec: GenDataSpec = serde_json::from_slice(&read(&spec)?)?;
            let (src, tgt) = build_domains(&spec.data, spec.source_shift.as_ref())?;
            write_pair_csv(&path, &src, &tgt)?;
            emit(
                out,
                &json!({
                    "out": path,
                    "source_counts": src.class_counts(),
                    "target_counts": tgt.class_counts(),
                }),
            )?;
            Ok(EXIT_OK)
        }
        Command::GradCheck { seed, graphs } => {
            let report = grad_check(seed, graphs)?;
            emit(out, &report)?;
            Ok(if report.max_rel_error < GRAD_TOL {
                EXIT_OK
            } else {
                EXIT_FAILED
            })
        }
    }
}
