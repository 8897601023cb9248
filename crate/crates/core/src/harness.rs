//! Experiment orchestration: sweeps, repetitions, theory overlays, output files.
//!
//! An experiment is described by a small key-value file:
//!
//! ```text
//! schema = 1
//! n_users = 100
//! threshold = 10
//! rounds = 20000
//! seed = 7
//! profiles = ring          # or file:<path>, relative to the spec file
//! friends = 10
//! self_send = true
//! frequencies = uniform    # or geometric:<ratio>
//! sweep = friends: 10, 25, 50, 100
//! attacks = SDA0, SDA1, SDA2, LSDA
//! repetitions = 10
//! output = results/friends
//! ```
//!
//! Every `(sweep value, repetition)` pair draws from its own random stream
//! `(value_index << 32) | repetition` of the base seed, so the output does
//! not depend on the number of worker threads and dropping a repetition
//! leaves every other row unchanged.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::attacks::{run_attack, AttackKind, AttackOptions};
use crate::error::{Error, Result};
use crate::metrics::{box_stats, mse_summary, BoxStats};
use crate::model::{MixConfig, SenderFrequencies, SenderProfiles};
use crate::par;
use crate::theory::TheoryReport;
use crate::traffic::{ring_profiles, simulate_stream, RngStream};

pub const SPEC_SCHEMA: u32 = 1;

/// How sending frequencies are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FrequencyModel {
    Uniform,
    /// `f_i ∝ ratio^i`
    Geometric(f64),
}

impl FrequencyModel {
    pub fn build(&self, n_users: usize) -> Result<SenderFrequencies> {
        match *self {
            FrequencyModel::Uniform => Ok(SenderFrequencies::uniform(n_users)),
            FrequencyModel::Geometric(r) => SenderFrequencies::geometric(n_users, r),
        }
    }
}

impl fmt::Display for FrequencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrequencyModel::Uniform => f.write_str("uniform"),
            FrequencyModel::Geometric(r) => write!(f, "geometric:{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSource {
    Ring,
    Matrix { path: PathBuf, profiles: SenderProfiles },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepVar {
    Friends,
    Rounds,
    Threshold,
    NUsers,
    Skew,
}

impl SweepVar {
    /// Column name used in the result CSV.
    pub fn column(self) -> &'static str {
        match self {
            SweepVar::Friends => "M",
            SweepVar::Rounds => "rho",
            SweepVar::Threshold => "t",
            SweepVar::NUsers => "N",
            SweepVar::Skew => "skew",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "friends" | "m" => SweepVar::Friends,
            "rounds" | "rho" => SweepVar::Rounds,
            "threshold" | "t" => SweepVar::Threshold,
            "n_users" | "n" => SweepVar::NUsers,
            "skew" | "frequency_skew" => SweepVar::Skew,
            _ => return None,
        })
    }

    fn is_integer(self) -> bool {
        self != SweepVar::Skew
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    /// Base configuration; `seed` is the base seed of every stream.
    pub base: MixConfig,
    pub friends: usize,
    pub self_send: bool,
    pub frequencies: FrequencyModel,
    pub profiles: ProfileSource,
    pub sweep: SweepVar,
    pub values: Vec<f64>,
    pub attacks: Vec<AttackKind>,
    pub repetitions: usize,
    pub output: Option<PathBuf>,
    pub options: AttackOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base: MixConfig {
                n_users: 20,
                threshold: 5,
                rounds: 1000,
                seed: 0,
            },
            friends: 5,
            self_send: true,
            frequencies: FrequencyModel::Uniform,
            profiles: ProfileSource::Ring,
            sweep: SweepVar::Friends,
            values: vec![5.0],
            attacks: AttackKind::ALL.to_vec(),
            repetitions: 1,
            output: None,
            options: AttackOptions::default(),
        }
    }
}

/// Ground truth and configuration of one sweep value.
#[derive(Debug, Clone)]
pub struct Cell {
    pub config: MixConfig,
    pub friends: Option<usize>,
    pub freqs: SenderFrequencies,
    pub profiles: SenderProfiles,
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(Error::Format(format!("{what} must be a nonnegative integer, got {v}")));
    }
    Ok(v as usize)
}

impl ExperimentSpec {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let base_dir = path.parent().unwrap_or(Path::new("."));
        let mut spec = ExperimentSpec::default();
        let mut schema = None;
        let mut profile_file: Option<(usize, String)> = None;
        let mut sweep_seen = false;

        for (ln, raw) in text.lines().enumerate() {
            let ln = ln + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(ln, format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<u64> { v.parse().map_err(|_| err(ln, format!("{key}: '{v}' is not an integer"))) };
            match key {
                "schema" => schema = Some(num(value)?),
                "n_users" => spec.base.n_users = num(value)? as usize,
                "threshold" => {
                    spec.base.threshold =
                        u32::try_from(num(value)?).map_err(|_| err(ln, "threshold too large".into()))?
                }
                "rounds" => spec.base.rounds = num(value)? as usize,
                "seed" => spec.base.seed = num(value)?,
                "friends" => spec.friends = num(value)? as usize,
                "repetitions" => spec.repetitions = num(value)? as usize,
                "self_send" => {
                    spec.self_send = value
                        .parse()
                        .map_err(|_| err(ln, format!("self_send: expected true or false, got '{value}'")))?
                }
                "lsda_min_norm" => {
                    spec.options.min_norm_fallback = value
                        .parse()
                        .map_err(|_| err(ln, format!("lsda_min_norm: expected true or false, got '{value}'")))?
                }
                "frequencies" => {
                    spec.frequencies = if value == "uniform" {
                        FrequencyModel::Uniform
                    } else if let Some(r) = value.strip_prefix("geometric:") {
                        FrequencyModel::Geometric(
                            r.trim().parse().map_err(|_| err(ln, format!("bad geometric ratio '{r}'")))?,
                        )
                    } else {
                        return Err(err(ln, format!("frequencies: expected uniform or geometric:<ratio>, got '{value}'")));
                    }
                }
                "profiles" => {
                    if value == "ring" {
                        spec.profiles = ProfileSource::Ring;
                        profile_file = None;
                    } else if let Some(p) = value.strip_prefix("file:") {
                        profile_file = Some((ln, p.trim().to_string()));
                    } else {
                        return Err(err(ln, format!("profiles: expected ring or file:<path>, got '{value}'")));
                    }
                }
                "sweep" => {
                    let (var, vals) = value
                        .split_once(':')
                        .ok_or_else(|| err(ln, "sweep: expected '<variable>: v1, v2, ...'".into()))?;
                    spec.sweep = SweepVar::parse(var)
                        .ok_or_else(|| err(ln, format!("unknown sweep variable '{}'", var.trim())))?;
                    spec.values = vals
                        .split(',')
                        .map(|v| v.trim().parse::<f64>().map_err(|_| err(ln, format!("bad sweep value '{}'", v.trim()))))
                        .collect::<Result<_>>()?;
                    if spec.sweep.is_integer() {
                        for &v in &spec.values {
                            as_count(v, spec.sweep.column()).map_err(|e| err(ln, e.to_string()))?;
                        }
                    }
                    sweep_seen = true;
                }
                "attacks" => {
                    spec.attacks = value
                        .split(',')
                        .map(|a| a.parse().map_err(|e: Error| err(ln, e.to_string())))
                        .collect::<Result<_>>()?;
                }
                "output" => spec.output = Some(PathBuf::from(value)),
                other => return Err(err(ln, format!("unknown key '{other}'"))),
            }
        }
        match schema {
            Some(s) if s == u64::from(SPEC_SCHEMA) => {}
            Some(s) => return Err(err(1, format!("unsupported schema {s}, expected {SPEC_SCHEMA}"))),
            None => return Err(err(1, "missing 'schema' key".into())),
        }
        if !sweep_seen {
            spec.values = vec![spec.friends as f64];
        }
        if let Some((ln, p)) = profile_file {
            let full = base_dir.join(&p);
            let profiles = crate::io::read_profiles(&full).map_err(|e| err(ln, format!("{}: {e}", full.display())))?;
            spec.profiles = ProfileSource::Matrix { path: PathBuf::from(p), profiles };
        }
        spec.check().map_err(|e| err(1, e.to_string()))?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Structural checks, plus building every cell once so bad values fail early.
    pub fn check(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.values.is_empty() {
            v.push("sweep value list is empty".to_string());
        }
        if self.repetitions < 1 {
            v.push("repetitions must be >= 1".to_string());
        }
        if self.attacks.is_empty() {
            v.push("attack list is empty".to_string());
        }
        if matches!(self.profiles, ProfileSource::Matrix { .. }) && matches!(self.sweep, SweepVar::Friends | SweepVar::NUsers) {
            v.push(format!("cannot sweep {} with a fixed profile matrix", self.sweep.column()));
        }
        if !v.is_empty() {
            return Err(Error::Format(v.join("; ")));
        }
        for &value in &self.values {
            self.cell(value)?;
        }
        Ok(())
    }

    /// Builds the configuration and ground truth for one sweep value.
    pub fn cell(&self, value: f64) -> Result<Cell> {
        let mut config = self.base;
        let mut friends = self.friends;
        let mut freq_model = self.frequencies;
        match self.sweep {
            SweepVar::Friends => friends = as_count(value, "M")?,
            SweepVar::Rounds => config.rounds = as_count(value, "rho")?,
            SweepVar::Threshold => config.threshold = as_count(value, "t")? as u32,
            SweepVar::NUsers => config.n_users = as_count(value, "N")?,
            SweepVar::Skew => freq_model = FrequencyModel::Geometric(value),
        }
        let config = MixConfig::new(config.n_users, config.threshold, config.rounds, config.seed)?;
        let (profiles, friends) = match &self.profiles {
            ProfileSource::Ring => (ring_profiles(config.n_users, friends, !self.self_send)?, Some(friends)),
            ProfileSource::Matrix { profiles, .. } => {
                if profiles.n_users() != config.n_users {
                    return Err(Error::Dimension(format!(
                        "profile matrix has {} users, config has {}",
                        profiles.n_users(),
                        config.n_users
                    )));
                }
                (profiles.clone(), None)
            }
        };
        let freqs = freq_model.build(config.n_users)?;
        crate::model::validate(&config, &freqs, &profiles).map_err(Error::Invalid)?;
        Ok(Cell {
            config,
            friends,
            freqs,
            profiles,
        })
    }

    pub fn stream(&self, value_index: usize, repetition: usize) -> RngStream {
        RngStream::new(self.base.seed, ((value_index as u64) << 32) | repetition as u64)
    }

    /// Key-value echo of the spec, as recorded in the JSON summary.
    pub fn echo(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("schema", SPEC_SCHEMA.to_string());
        m.insert("n_users", self.base.n_users.to_string());
        m.insert("threshold", self.base.threshold.to_string());
        m.insert("rounds", self.base.rounds.to_string());
        m.insert("seed", self.base.seed.to_string());
        m.insert("friends", self.friends.to_string());
        m.insert("self_send", self.self_send.to_string());
        m.insert("frequencies", self.frequencies.to_string());
        m.insert(
            "profiles",
            match &self.profiles {
                ProfileSource::Ring => "ring".to_string(),
                ProfileSource::Matrix { path, .. } => format!("file:{}", path.display()),
            },
        );
        m.insert(
            "sweep",
            format!(
                "{}: {}",
                self.sweep.column(),
                self.values.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
            ),
        );
        m.insert("attacks", self.attacks.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "));
        m.insert("repetitions", self.repetitions.to_string());
        m.insert("lsda_min_norm", self.options.min_norm_fallback.to_string());
        m
    }
}

/// One attack on one repetition of one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub attack: AttackKind,
    pub value: f64,
    pub repetition: usize,
    pub seed: u64,
    pub stream_id: u64,
    /// NaN when the attack failed for this repetition.
    pub average_mse: f64,
    pub n_defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub attack: AttackKind,
    pub value: f64,
    pub repetition: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub attack: AttackKind,
    pub value: f64,
    pub n_ok: usize,
    /// `None` when every repetition failed.
    pub stats: Option<BoxStats>,
}

/// Predicted average MSE over users, from ground truth only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryOverlay {
    pub value: f64,
    pub mse_lsda: Option<f64>,
    pub mse_sda2: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub sweep: SweepVar,
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellSummary>,
    pub theory: Vec<TheoryOverlay>,
    pub failures: Vec<Failure>,
}

impl ExperimentResult {
    pub fn cell(&self, attack: AttackKind, value: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.attack == attack && c.value == value)
    }

    pub fn overlay(&self, value: f64) -> Option<&TheoryOverlay> {
        self.theory.iter().find(|t| t.value == value)
    }

    /// Mean of `average_mse` over successful repetitions.
    pub fn mean_mse(&self, attack: AttackKind, value: f64) -> Option<f64> {
        self.cell(attack, value).and_then(|c| c.stats).map(|s| s.mean)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "attack,{},repetition,seed,average_mse,n_defined", self.sweep.column())?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.attack, r.value, r.repetition, r.seed, r.average_mse, r.n_defined)?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut w: W, spec: &ExperimentSpec) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            spec: BTreeMap<&'static str, String>,
            frequency_family: &'static str,
            stream_rule: &'static str,
            cells: &'a [CellSummary],
            theory: &'a [TheoryOverlay],
            failures: &'a [Failure],
        }
        let s = Summary {
            spec: spec.echo(),
            frequency_family: "geometric: f_i = ratio^i / sum_k ratio^k (i = 0..N-1); skew sweeps set ratio",
            stream_rule: "ChaCha8 seeded with seed, stream (value_index << 32) | repetition",
            cells: &self.cells,
            theory: &self.theory,
            failures: &self.failures,
        };
        serde_json::to_writer_pretty(&mut w, &s)?;
        writeln!(w)?;
        Ok(())
    }

    /// Writes `results.csv` and `summary.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, spec: &ExperimentSpec) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("results.csv"))?);
        self.write_csv(&mut csv)?;
        csv.flush()?;
        let mut json = std::io::BufWriter::new(std::fs::File::create(dir.join("summary.json"))?);
        self.write_json(&mut json, spec)?;
        json.flush()?;
        Ok(())
    }
}

fn run_repetition(spec: &ExperimentSpec, cell: &Cell, value: f64, vi: usize, rep: usize) -> Vec<(ResultRow, Option<Failure>)> {
    let stream = spec.stream(vi, rep);
    let row = |attack, mse, n| ResultRow {
        attack,
        value,
        repetition: rep,
        seed: stream.seed,
        stream_id: stream.stream_id,
        average_mse: mse,
        n_defined: n,
    };
    let fail = |attack, e: &Error| Failure {
        attack,
        value,
        repetition: rep,
        error: e.to_string(),
    };
    let obs = match simulate_stream(&cell.config, &cell.freqs, &cell.profiles, stream) {
        Ok(o) => o,
        Err(e) => return spec.attacks.iter().map(|&a| (row(a, f64::NAN, 0), Some(fail(a, &e)))).collect(),
    };
    spec.attacks
        .iter()
        .map(|&a| {
            match run_attack(a, &obs, &spec.options).and_then(|est| mse_summary(&cell.profiles, &est)) {
                Ok(rep) => (row(a, rep.average, rep.n_defined), None),
                Err(e) => (row(a, f64::NAN, 0), Some(fail(a, &e))),
            }
        })
        .collect()
}

/// Runs every sweep value and repetition. Per-repetition attack failures are
/// recorded, not fatal.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.check()?;
    let cells = spec.values.iter().map(|&v| spec.cell(v)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|vi| (0..spec.repetitions).map(move |rep| (vi, rep)))
        .collect();
    let outcomes = par::map_slice(&jobs, |&(vi, rep)| run_repetition(spec, &cells[vi], spec.values[vi], vi, rep));

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in outcomes.into_iter().flatten() {
        rows.push(r);
        failures.extend(f);
    }

    let mut summaries = Vec::new();
    for &value in &spec.values {
        for &attack in &spec.attacks {
            let samples: Vec<f64> = rows
                .iter()
                .filter(|r| r.attack == attack && r.value == value && r.average_mse.is_finite())
                .map(|r| r.average_mse)
                .collect();
            summaries.push(CellSummary {
                attack,
                value,
                n_ok: samples.len(),
                stats: box_stats(&samples).ok(),
            });
        }
    }

    let theory = spec
        .values
        .iter()
        .zip(&cells)
        .map(|(&value, cell)| {
            match TheoryReport::compute(&cell.profiles, &cell.freqs, cell.config.threshold, cell.config.rounds) {
                Ok(r) => TheoryOverlay {
                    value,
                    mse_lsda: Some(r.mean_mse_lsda()),
                    mse_sda2: Some(r.mean_mse_sda2()),
                    note: None,
                },
                Err(e) => TheoryOverlay {
                    value,
                    mse_lsda: None,
                    mse_sda2: None,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(ExperimentResult {
        sweep: spec.sweep,
        rows,
        cells: summaries,
        theory,
        failures,
    })
}
