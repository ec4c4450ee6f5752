//! Batch front end: `measure-flow <command> --config <file> --out <dir>`.
//!
//! Exit codes: 0 every check passed, 1 a tolerance failed (reports are still written),
//! 2 the scenario file is malformed, 3 the computation itself failed.

mod commands;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    VerifyIto,
    VerifyJump,
    VerifySingular,
    FpConsistency,
    SolveLq,
    VerifyLqOptimality,
    SimulateMv,
    CheckMvValue,
    ConvergenceSweep,
}

#[derive(Debug, Parser)]
#[command(name = "measure-flow", version, about = "Ito formula checks for flows of measures")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// `dotted.path=value`, value parsed as JSON (bare strings allowed).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// One asserted tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    pub fn le(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, pass: value <= bound }
    }

    pub fn within(name: &str, value: f64, range: [f64; 2]) -> Self {
        Check { name: name.into(), value, bound: range[1], pass: (range[0]..=range[1]).contains(&value) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: Command,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub details: Value,
}

/// A computed command: its report plus extra files (name, bytes).
pub struct Outcome {
    pub report: Report,
    pub files: Vec<(String, Vec<u8>)>,
}

#[derive(Debug)]
pub enum CliError {
    Schema(String),
    Failure(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Failure(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "schema error: {m}"),
            CliError::Failure(e) => write!(f, "computation failed: {e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Failure(_) => 3,
        }
    }
}

/// git's blob hash, with SHA-256 as in git's sha256 object format.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(p.to_string(), v);
                    return Ok(());
                }
                map.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = p.parse().map_err(|_| CliError::Schema(format!("{key}: `{p}` is not an index")))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| CliError::Schema(format!("{key}: index {idx} >= {len}")))?;
                if last {
                    *slot = v;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::Schema(format!("{key}: `{p}` is inside a scalar"))),
        };
    }
    Err(CliError::Schema(format!("empty override key `{key}`")))
}

/// Applies `key=value` overrides to a parsed scenario.
pub fn apply_overrides(mut cfg: Value, overrides: &[String]) -> Result<Value, CliError> {
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| CliError::Schema(format!("override `{o}` is not key=value")))?;
        let val = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        set_path(&mut cfg, k.trim(), val)?;
    }
    Ok(cfg)
}

/// Deserializes with the failing field's path in the message.
pub fn parse_config<T: serde::de::DeserializeOwned>(cfg: &Value) -> Result<T, CliError> {
    serde_path_to_error::deserialize(cfg).map_err(|e| {
        let path = e.path().to_string();
        CliError::Schema(format!("{path}: {}", e.into_inner()))
    })
}

/// Runs a command on an already parsed scenario.
pub fn execute(command: Command, cfg: &Value) -> Result<Outcome, CliError> {
    commands::dispatch(command, cfg)
}

fn summary(rep: &Report) -> String {
    let mut s = format!(
        "command: {}\nresult: {}\n",
        serde_json::to_value(rep.command).unwrap().as_str().unwrap_or(""),
        if rep.pass { "PASS" } else { "FAIL" }
    );
    for c in &rep.checks {
        s += &format!("{} {}: {:e} (bound {:e})\n", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value, c.bound);
    }
    s
}

/// Reads, runs and writes everything; returns the exit code.
pub fn run(args: &Args) -> Result<i32, CliError> {
    let raw = fs::read(&args.config).map_err(|e| CliError::Schema(format!("{}: {e}", args.config.display())))?;
    let parsed: Value = serde_json::from_slice(&raw)
        .map_err(|e| CliError::Schema(format!("{}: line {} column {}: {e}", args.config.display(), e.line(), e.column())))?;
    let cfg = apply_overrides(parsed, &args.overrides)?;
    let outcome = match args.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Failure(Error::Invalid(e.to_string())))?;
            pool.install(|| execute(args.command, &cfg))?
        }
        None => execute(args.command, &cfg)?,
    };
    write_outputs(&args.out, args.command, &cfg, &raw, &args.overrides, &outcome)?;
    Ok(if outcome.report.pass { 0 } else { 1 })
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: Command,
    scenario_hash: String,
    overrides: &'a [String],
    config: &'a Value,
    version: &'static str,
}

pub fn write_outputs(
    out: &Path,
    command: Command,
    cfg: &Value,
    raw: &[u8],
    overrides: &[String],
    outcome: &Outcome,
) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Failure(Error::Io(e));
    fs::create_dir_all(out).map_err(io)?;
    fs::write(out.join("report.json"), pretty(&outcome.report)).map_err(io)?;
    let manifest = Manifest {
        command,
        scenario_hash: content_hash(raw),
        overrides,
        config: cfg,
        version: env!("CARGO_PKG_VERSION"),
    };
    fs::write(out.join("manifest.json"), pretty(&manifest)).map_err(io)?;
    fs::write(out.join("summary.txt"), summary(&outcome.report)).map_err(io)?;
    for (name, bytes) in &outcome.files {
        fs::write(out.join(name), bytes).map_err(io)?;
    }
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

/// Entry point shared by the binary and the tests.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&args) {
        Ok(code) => {
            if code != 0 {
                eprintln!("tolerance check failed; see {}", args.out.join("summary.txt").display());
            }
            code
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
