//! Domain types shared by the simulator, the attacks, and the predictors.
//!
//! Layout conventions used everywhere in the crate:
//! observation matrices are indexed `(round, user)` and profile matrices are
//! indexed `(recipient, sender)`, so sender `i`'s profile is column `i`.
//! Users are 0-based internally.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::error::{Error, Result};

/// Tolerance for stochasticity sums of constructed inputs.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// A single violated invariant, with a human-readable location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl Violation {
    fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Parameters of a threshold-mix run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixConfig {
    pub n_users: usize,
    pub threshold: u32,
    pub rounds: usize,
    pub seed: u64,
}

impl MixConfig {
    pub fn new(n_users: usize, threshold: u32, rounds: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            n_users,
            threshold,
            rounds,
            seed,
        };
        let v = cfg.violations();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Invalid(v))
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.n_users < 2 {
            v.push(Violation::new("config.n_users", format!("must be >= 2, got {}", self.n_users)));
        }
        if self.threshold < 1 {
            v.push(Violation::new("config.threshold", "must be >= 1"));
        }
        if self.rounds < 1 {
            v.push(Violation::new("config.rounds", "must be >= 1"));
        }
        v
    }
}

/// Probability that a message entering the mix comes from each user.
#[derive(Debug, Clone, PartialEq)]
pub struct SenderFrequencies(Vec<f64>);

impl SenderFrequencies {
    pub fn new(freq: Vec<f64>) -> Result<Self> {
        let f = Self(freq);
        let v = f.violations();
        if v.is_empty() {
            Ok(f)
        } else {
            Err(Error::Invalid(v))
        }
    }

    /// Wraps a vector without checking it. Use [`validate`] before relying on it.
    pub fn from_raw(freq: Vec<f64>) -> Self {
        Self(freq)
    }

    pub fn uniform(n_users: usize) -> Self {
        Self(vec![1.0 / n_users as f64; n_users])
    }

    /// Geometric weights `ratio^i`, normalized to sum to one. `ratio = 1` is uniform.
    pub fn geometric(n_users: usize, ratio: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0) {
            return Err(Error::Invalid(vec![Violation::new(
                "frequencies.ratio",
                format!("must be finite and > 0, got {ratio}"),
            )]));
        }
        let w: Vec<f64> = (0..n_users).map(|i| ratio.powi(i as i32)).collect();
        let total: f64 = w.iter().sum();
        Self::new(w.into_iter().map(|x| x / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for (i, &f) in self.0.iter().enumerate() {
            if !(f.is_finite() && f >= 0.0) {
                v.push(Violation::new(format!("frequencies[{i}]"), format!("must be >= 0, got {f}")));
            }
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            v.push(Violation::new("frequencies", format!("must sum to 1, got {sum}")));
        }
        v
    }
}

/// Column-stochastic matrix; entry `(j, i)` is the probability that sender `i`
/// addresses recipient `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SenderProfiles(DMatrix<f64>);

impl SenderProfiles {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        let p = Self(probs);
        let v = p.violations();
        if v.is_empty() {
            Ok(p)
        } else {
            Err(Error::Invalid(v))
        }
    }

    pub fn from_raw(probs: DMatrix<f64>) -> Self {
        Self(probs)
    }

    pub fn n_users(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Sender `i`'s profile over recipients.
    pub fn column(&self, i: usize) -> &[f64] {
        let n = self.0.nrows();
        &self.0.as_slice()[i * n..(i + 1) * n]
    }

    pub fn get(&self, recipient: usize, sender: usize) -> f64 {
        self.0[(recipient, sender)]
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let m = &self.0;
        if m.nrows() != m.ncols() {
            v.push(Violation::new(
                "profiles",
                format!("must be square, got {}x{}", m.nrows(), m.ncols()),
            ));
            return v;
        }
        for i in 0..m.ncols() {
            let col = self.column(i);
            for (j, &p) in col.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    v.push(Violation::new(
                        format!("profiles[recipient {j}, sender {i}]"),
                        format!("must lie in [0, 1], got {p}"),
                    ));
                }
            }
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                v.push(Violation::new(
                    format!("profiles[sender {i}]"),
                    format!("column must sum to 1, got {sum}"),
                ));
            }
        }
        v
    }
}

/// Row-major matrix of message counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u32>,
}

impl CountMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [u32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<u32> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.data
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| f64::from(self.get(r, c)))
    }
}

/// Inputs `x` and outputs `y` of a threshold mix over `rounds` rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationPair {
    x: CountMatrix,
    y: CountMatrix,
    threshold: u32,
}

impl ObservationPair {
    pub fn new(x: CountMatrix, y: CountMatrix, threshold: u32) -> Result<Self> {
        if x.rows() != y.rows() || x.cols() != y.cols() {
            return Err(Error::Dimension(format!(
                "x is {}x{} but y is {}x{}",
                x.rows(),
                x.cols(),
                y.rows(),
                y.cols()
            )));
        }
        let mut v = Vec::new();
        for (name, m) in [("x", &x), ("y", &y)] {
            for r in 0..m.rows() {
                let s: u64 = m.row(r).iter().map(|&c| u64::from(c)).sum();
                if s != u64::from(threshold) {
                    v.push(Violation::new(
                        format!("{name}[round {r}]"),
                        format!("row must sum to threshold {threshold}, got {s}"),
                    ));
                }
            }
        }
        if !v.is_empty() {
            return Err(Error::Invalid(v));
        }
        Ok(Self { x, y, threshold })
    }

    pub(crate) fn new_unchecked(x: CountMatrix, y: CountMatrix, threshold: u32) -> Self {
        Self { x, y, threshold }
    }

    pub fn x(&self) -> &CountMatrix {
        &self.x
    }

    pub fn y(&self) -> &CountMatrix {
        &self.y
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn rounds(&self) -> usize {
        self.x.rows()
    }

    pub fn n_users(&self) -> usize {
        self.x.cols()
    }
}

/// Raw output of an attack. Columns of undefined users are filled with NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedProfiles {
    pub est: DMatrix<f64>,
    pub attack: AttackKind,
    pub undefined_users: BTreeSet<usize>,
    /// Condition number of the normal-equation matrix, when the attack solves one jointly.
    pub condition_number: Option<f64>,
}

impl EstimatedProfiles {
    pub fn n_users(&self) -> usize {
        self.est.ncols()
    }

    pub fn is_defined(&self, i: usize) -> bool {
        !self.undefined_users.contains(&i)
    }

    pub fn column(&self, i: usize) -> &[f64] {
        let n = self.est.nrows();
        &self.est.as_slice()[i * n..(i + 1) * n]
    }

    /// Clamps every defined column to `[0, 1]` and rescales it to sum to one.
    /// A column that clamps to all zeros becomes uniform.
    pub fn clamped(&self) -> Self {
        let mut out = self.clone();
        let n = out.est.nrows();
        for i in 0..out.est.ncols() {
            if !self.is_defined(i) {
                continue;
            }
            let mut col = out.est.column_mut(i);
            col.apply(|p| *p = p.clamp(0.0, 1.0));
            let s = col.sum();
            if s > 0.0 {
                col /= s;
            } else {
                col.fill(1.0 / n as f64);
            }
        }
        out
    }
}

/// `x⁺`: 1 where a user sent at least one message in a round, else 0.
pub fn binary_indicator(x: &CountMatrix) -> CountMatrix {
    CountMatrix {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().map(|&c| u32::from(c > 0)).collect(),
    }
}

/// Messages sent by everyone except user `i`, per round: `t·1 − x_i`.
pub fn background_vector(x: &CountMatrix, i: usize, t: u32) -> Result<Vec<u32>> {
    if i >= x.cols() {
        return Err(Error::UserOutOfRange {
            index: i,
            n_users: x.cols(),
        });
    }
    (0..x.rows())
        .map(|r| {
            t.checked_sub(x.get(r, i)).ok_or_else(|| {
                Error::Invalid(vec![Violation::new(
                    format!("x[round {r}, user {i}]"),
                    format!("count exceeds threshold {t}"),
                )])
            })
        })
        .collect()
}

/// Checks every invariant of the configuration and ground truth, returning
/// all violations found.
pub fn validate(
    config: &MixConfig,
    freqs: &SenderFrequencies,
    profiles: &SenderProfiles,
) -> std::result::Result<(), Vec<Violation>> {
    let mut v = config.violations();
    if freqs.len() != config.n_users {
        v.push(Violation::new(
            "frequencies",
            format!("expected {} entries, got {}", config.n_users, freqs.len()),
        ));
    }
    v.extend(freqs.violations());
    let m = profiles.matrix();
    if m.ncols() != config.n_users || m.nrows() != config.n_users {
        v.push(Violation::new(
            "profiles",
            format!(
                "expected {n}x{n}, got {}x{}",
                m.nrows(),
                m.ncols(),
                n = config.n_users
            ),
        ));
    }
    v.extend(profiles.violations());
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}
