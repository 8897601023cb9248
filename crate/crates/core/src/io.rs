//! File formats for traces, profiles, estimates and predictor reports.
//!
//! CSV files carry their metadata in leading `# key=value` comment lines.
//! JSON files store matrices column-major: an array of per-user columns.
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value reads back bit-exactly.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::model::{CountMatrix, EstimatedProfiles, MixConfig, ObservationPair, SenderProfiles};
use crate::theory::TheoryReport;

pub const TRACE_FORMAT: &str = "sda-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Format(format!("unknown format '{other}'"))),
        }
    }
}

fn sniff(text: &str) -> Format {
    if text.trim_start().starts_with('{') {
        Format::Json
    } else {
        Format::Csv
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// A simulated trace together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub config: MixConfig,
    pub obs: ObservationPair,
}

#[derive(Serialize, Deserialize)]
struct TraceJson {
    format: String,
    version: u32,
    n_users: usize,
    threshold: u32,
    rounds: usize,
    seed: u64,
    x: Vec<Vec<u32>>,
    y: Vec<Vec<u32>>,
}

fn columns(m: &CountMatrix) -> Vec<Vec<u32>> {
    (0..m.cols()).map(|c| m.column(c)).collect()
}

fn from_columns(cols: &[Vec<u32>], rounds: usize) -> Result<CountMatrix> {
    if cols.iter().any(|c| c.len() != rounds) {
        return Err(Error::Format(format!("every column must have {rounds} rounds")));
    }
    let data = (0..rounds).flat_map(|r| cols.iter().map(move |c| c[r])).collect();
    CountMatrix::from_row_major(rounds, cols.len(), data)
}

/// Parses `# key=value,key=value` comment lines into pairs, with their line numbers.
fn header_pairs(text: &str) -> Vec<(usize, String, String)> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let Some(rest) = line.strip_prefix('#') else { break };
        for part in rest.split(',') {
            if let Some((k, v)) = part.split_once('=') {
                out.push((ln + 1, k.trim().to_string(), v.trim().to_string()));
            }
        }
    }
    out
}

fn header_value<T: FromStr>(pairs: &[(usize, String, String)], key: &str, path: &Path) -> Result<T> {
    let (ln, _, v) = pairs
        .iter()
        .find(|(_, k, _)| k == key)
        .ok_or_else(|| parse_err(path, 1, format!("missing header field '{key}'")))?;
    v.parse()
        .map_err(|_| parse_err(path, *ln, format!("invalid value '{v}' for '{key}'")))
}

/// Data lines (not comments, not blank), with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_row<T: FromStr>(line: &str, ln: usize, path: &Path) -> Result<Vec<T>> {
    line.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse()
                .map_err(|_| parse_err(path, ln, format!("cannot parse '{v}'")))
        })
        .collect()
}

fn join<T: std::fmt::Display>(v: impl IntoIterator<Item = T>) -> String {
    let mut s = String::new();
    for (k, x) in v.into_iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x}");
    }
    s
}

pub fn write_trace<W: Write>(mut w: W, trace: &Trace, format: Format) -> Result<()> {
    let c = &trace.config;
    match format {
        Format::Json => {
            let j = TraceJson {
                format: TRACE_FORMAT.into(),
                version: TRACE_VERSION,
                n_users: c.n_users,
                threshold: c.threshold,
                rounds: c.rounds,
                seed: c.seed,
                x: columns(trace.obs.x()),
                y: columns(trace.obs.y()),
            };
            serde_json::to_writer(&mut w, &j)?;
            writeln!(w)?;
        }
        Format::Csv => {
            writeln!(w, "# {TRACE_FORMAT} v{TRACE_VERSION}")?;
            writeln!(
                w,
                "# n_users={},threshold={},rounds={},seed={}",
                c.n_users, c.threshold, c.rounds, c.seed
            )?;
            let n = c.n_users;
            writeln!(
                w,
                "{}",
                join((0..n).map(|i| format!("x{i}")).chain((0..n).map(|j| format!("y{j}"))))
            )?;
            for r in 0..trace.obs.rounds() {
                writeln!(w, "{}", join(trace.obs.x().row(r).iter().chain(trace.obs.y().row(r))))?;
            }
        }
    }
    Ok(())
}

pub fn parse_trace(text: &str, path: &Path) -> Result<Trace> {
    let (config, x, y) = match sniff(text) {
        Format::Json => {
            let j: TraceJson = serde_json::from_str(text).map_err(|e| parse_err(path, e.line(), e.to_string()))?;
            if j.format != TRACE_FORMAT || j.version != TRACE_VERSION {
                return Err(parse_err(path, 1, format!("unsupported trace format {} v{}", j.format, j.version)));
            }
            if j.x.len() != j.n_users || j.y.len() != j.n_users {
                return Err(parse_err(path, 1, "column count does not match n_users"));
            }
            let cfg = MixConfig::new(j.n_users, j.threshold, j.rounds, j.seed)?;
            (cfg, from_columns(&j.x, j.rounds)?, from_columns(&j.y, j.rounds)?)
        }
        Format::Csv => {
            let h = header_pairs(text);
            let cfg = MixConfig::new(
                header_value(&h, "n_users", path)?,
                header_value(&h, "threshold", path)?,
                header_value(&h, "rounds", path)?,
                header_value(&h, "seed", path)?,
            )?;
            let n = cfg.n_users;
            let mut x = Vec::with_capacity(cfg.rounds * n);
            let mut y = Vec::with_capacity(cfg.rounds * n);
            let mut rows = 0;
            for (ln, line) in data_lines(text) {
                if line.starts_with('x') {
                    continue; // column header
                }
                let v: Vec<u32> = parse_row(line, ln, path)?;
                if v.len() != 2 * n {
                    return Err(parse_err(path, ln, format!("expected {} counts, got {}", 2 * n, v.len())));
                }
                x.extend_from_slice(&v[..n]);
                y.extend_from_slice(&v[n..]);
                rows += 1;
            }
            if rows != cfg.rounds {
                return Err(parse_err(path, 1, format!("header says {} rounds, found {rows}", cfg.rounds)));
            }
            (
                cfg,
                CountMatrix::from_row_major(rows, n, x)?,
                CountMatrix::from_row_major(rows, n, y)?,
            )
        }
    };
    let obs = ObservationPair::new(x, y, config.threshold)?;
    Ok(Trace { config, obs })
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    parse_trace(&std::fs::read_to_string(path)?, path)
}

#[derive(Serialize, Deserialize)]
struct ProfilesJson {
    n_users: usize,
    profiles: Vec<Vec<f64>>,
}

/// Rows are recipients, columns are senders.
pub fn write_profiles<W: Write>(mut w: W, profiles: &SenderProfiles, format: Format) -> Result<()> {
    let m = profiles.matrix();
    match format {
        Format::Json => {
            let j = ProfilesJson {
                n_users: profiles.n_users(),
                profiles: (0..m.ncols()).map(|i| profiles.column(i).to_vec()).collect(),
            };
            serde_json::to_writer(&mut w, &j)?;
            writeln!(w)?;
        }
        Format::Csv => {
            writeln!(w, "# n_users={}", profiles.n_users())?;
            for row in m.row_iter() {
                writeln!(w, "{}", join(row.iter()))?;
            }
        }
    }
    Ok(())
}

/// Reads and validates a profile matrix.
pub fn parse_profiles(text: &str, path: &Path) -> Result<SenderProfiles> {
    let m = match sniff(text) {
        Format::Json => {
            let j: ProfilesJson = serde_json::from_str(text).map_err(|e| parse_err(path, e.line(), e.to_string()))?;
            let n = j.profiles.len();
            if j.n_users != n || j.profiles.iter().any(|c| c.len() != n) {
                return Err(parse_err(path, 1, "profile matrix must be n_users x n_users"));
            }
            DMatrix::from_column_slice(n, n, &j.profiles.concat())
        }
        Format::Csv => {
            let rows = data_lines(text)
                .map(|(ln, l)| parse_row::<f64>(l, ln, path))
                .collect::<Result<Vec<_>>>()?;
            let n = rows.len();
            if n == 0 || rows.iter().any(|r| r.len() != n) {
                return Err(parse_err(path, 1, "profile matrix must be square and nonempty"));
            }
            DMatrix::from_row_slice(n, n, &rows.concat())
        }
    };
    SenderProfiles::new(m)
}

pub fn read_profiles(path: &Path) -> Result<SenderProfiles> {
    parse_profiles(&std::fs::read_to_string(path)?, path)
}

#[derive(Serialize, Deserialize)]
struct EstimateJson {
    attack: AttackKind,
    seed: Option<u64>,
    n_users: usize,
    undefined_users: Vec<usize>,
    condition_number: Option<f64>,
    /// One column per sender; `null` when undefined.
    profiles: Vec<Option<Vec<f64>>>,
}

/// Writes raw estimates. Undefined columns are `NaN` in CSV and `null` in JSON.
pub fn write_estimate<W: Write>(mut w: W, est: &EstimatedProfiles, seed: Option<u64>, format: Format) -> Result<()> {
    let n = est.n_users();
    match format {
        Format::Json => {
            let j = EstimateJson {
                attack: est.attack,
                seed,
                n_users: n,
                undefined_users: est.undefined_users.iter().copied().collect(),
                condition_number: est.condition_number.filter(|c| c.is_finite()),
                profiles: (0..n)
                    .map(|i| est.is_defined(i).then(|| est.column(i).to_vec()))
                    .collect(),
            };
            serde_json::to_writer(&mut w, &j)?;
            writeln!(w)?;
        }
        Format::Csv => {
            writeln!(w, "# attack={}", est.attack)?;
            if let Some(s) = seed {
                writeln!(w, "# seed={s}")?;
            }
            writeln!(w, "# n_users={n}")?;
            writeln!(w, "# undefined_users={}", est.undefined_users.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"))?;
            if let Some(c) = est.condition_number {
                writeln!(w, "# condition_number={c}")?;
            }
            for row in est.est.row_iter() {
                writeln!(w, "{}", join(row.iter()))?;
            }
        }
    }
    Ok(())
}

pub fn parse_estimate(text: &str, path: &Path) -> Result<(EstimatedProfiles, Option<u64>)> {
    match sniff(text) {
        Format::Json => {
            let j: EstimateJson = serde_json::from_str(text).map_err(|e| parse_err(path, e.line(), e.to_string()))?;
            let n = j.n_users;
            let mut est = DMatrix::from_element(n, n, f64::NAN);
            for (i, col) in j.profiles.iter().enumerate() {
                if let Some(c) = col {
                    if c.len() != n {
                        return Err(parse_err(path, 1, format!("column {i} has {} entries", c.len())));
                    }
                    est.column_mut(i).copy_from_slice(c);
                }
            }
            Ok((
                EstimatedProfiles {
                    est,
                    attack: j.attack,
                    undefined_users: j.undefined_users.into_iter().collect(),
                    condition_number: j.condition_number,
                },
                j.seed,
            ))
        }
        Format::Csv => {
            let h = header_pairs(text);
            let attack: AttackKind = header_value(&h, "attack", path)?;
            let seed = h.iter().any(|(_, k, _)| k == "seed").then(|| header_value(&h, "seed", path)).transpose()?;
            let condition_number = h
                .iter()
                .any(|(_, k, _)| k == "condition_number")
                .then(|| header_value(&h, "condition_number", path))
                .transpose()?;
            let undef: String = header_value(&h, "undefined_users", path)?;
            let undefined_users = undef
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| parse_err(path, 1, format!("bad user index '{s}'"))))
                .collect::<Result<_>>()?;
            let rows = data_lines(text)
                .map(|(ln, l)| parse_row::<f64>(l, ln, path))
                .collect::<Result<Vec<_>>>()?;
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(parse_err(path, 1, "estimate matrix must be square"));
            }
            Ok((
                EstimatedProfiles {
                    est: DMatrix::from_row_slice(n, n, &rows.concat()),
                    attack,
                    undefined_users,
                    condition_number,
                },
                seed,
            ))
        }
    }
}

pub fn write_theory<W: Write>(mut w: W, report: &TheoryReport, format: Format) -> Result<()> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, report)?;
            writeln!(w)?;
        }
        Format::Csv => {
            writeln!(
                w,
                "# n_users={},threshold={},rounds={},avg_uniformity_lsda={}",
                report.n_users, report.threshold, report.rounds, report.avg_uniformity_lsda
            )?;
            writeln!(w, "user,uniformity,background_uniformity,avg_uniformity_sda2,mse_lsda,mse_sda2")?;
            for i in 0..report.n_users {
                writeln!(
                    w,
                    "{i},{},{},{},{},{}",
                    report.uniformities[i],
                    report.background_uniformities[i],
                    report.avg_uniformity_sda2_per_user[i],
                    report.per_user_mse_lsda[i],
                    report.per_user_mse_sda2[i]
                )?;
            }
        }
    }
    Ok(())
}

/// Opens `path` for writing, or stdout for `None` / `-`.
pub fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) if p.as_os_str() != "-" => Ok(Box::new(std::io::BufWriter::new(std::fs::File::create(p)?))),
        _ => Ok(Box::new(std::io::stdout().lock())),
    }
}
