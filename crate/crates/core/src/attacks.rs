//! The statistical disclosure attack family.
//!
//! The per-user attacks (SDA, SDA0, SDA1, SDA2) only need a handful of
//! per-user inner products between observation columns. Those are gathered
//! in one pass over the rounds with exact integer arithmetic, which keeps
//! the profile-sum identity exact up to the final division. LSDA builds the
//! full normal equations `XᵀX P = XᵀY` and solves them with one Cholesky
//! factorization shared across all recipients.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EstimatedProfiles, ObservationPair};
use crate::par;

/// Condition numbers of `XᵀX` above this are logged as a warning.
pub const CONDITION_WARN: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "SDA")]
    Sda,
    #[serde(rename = "SDA0")]
    Sda0,
    #[serde(rename = "SDA1")]
    Sda1,
    #[serde(rename = "SDA2")]
    Sda2,
    #[serde(rename = "LSDA")]
    Lsda,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Sda,
        AttackKind::Sda0,
        AttackKind::Sda1,
        AttackKind::Sda2,
        AttackKind::Lsda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Sda => "SDA",
            AttackKind::Sda0 => "SDA0",
            AttackKind::Sda1 => "SDA1",
            AttackKind::Sda2 => "SDA2",
            AttackKind::Lsda => "LSDA",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Format(format!("unknown attack '{s}' (expected SDA, SDA0, SDA1, SDA2 or LSDA)")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttackOptions {
    /// Fall back to a minimum-norm solution when `XᵀX` is singular instead of failing.
    pub min_norm_fallback: bool,
}

/// Background profile estimated from the rounds where user `i` was silent.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundEstimate {
    pub value: Vec<f64>,
    pub rounds_used: usize,
}

/// Column totals of `y`, shared by every per-user attack on one observation.
#[derive(Debug, Clone)]
struct Totals {
    y: Vec<u64>,
}

impl Totals {
    fn new(obs: &ObservationPair) -> Self {
        let n = obs.n_users();
        let mut y = vec![0u64; n];
        for r in 0..obs.rounds() {
            for (acc, &c) in y.iter_mut().zip(obs.y().row(r)) {
                *acc += u64::from(c);
            }
        }
        Self { y }
    }
}

/// Inner products involving user `i`'s sending column.
#[derive(Debug, Clone)]
struct UserSums {
    /// `x⁺ᵀ1`
    rounds_present: u64,
    /// `x_iᵀ1`, equal to `x⁺ᵀx_i`
    sum_x: u64,
    /// `x_iᵀx_i`
    sum_x2: u64,
    /// `x⁺ᵀy_j` for every j
    plus_y: Vec<u64>,
    /// `x_iᵀy_j` for every j
    x_y: Vec<u64>,
}

impl UserSums {
    fn collect(obs: &ObservationPair, i: usize) -> Self {
        let n = obs.n_users();
        let mut s = UserSums {
            rounds_present: 0,
            sum_x: 0,
            sum_x2: 0,
            plus_y: vec![0; n],
            x_y: vec![0; n],
        };
        for r in 0..obs.rounds() {
            let xi = u64::from(obs.x().get(r, i));
            if xi == 0 {
                continue;
            }
            s.rounds_present += 1;
            s.sum_x += xi;
            s.sum_x2 += xi * xi;
            for (j, &c) in obs.y().row(r).iter().enumerate() {
                if c > 0 {
                    let c = u64::from(c);
                    s.plus_y[j] += c;
                    s.x_y[j] += xi * c;
                }
            }
        }
        s
    }
}

fn check_user(obs: &ObservationPair, i: usize) -> Result<()> {
    if i >= obs.n_users() {
        return Err(Error::UserOutOfRange {
            index: i,
            n_users: obs.n_users(),
        });
    }
    Ok(())
}

fn background_from(obs: &ObservationPair, totals: &Totals, s: &UserSums, i: usize) -> Result<BackgroundEstimate> {
    let absent = obs.rounds() as u64 - s.rounds_present;
    if absent == 0 {
        return Err(Error::BackgroundUndefined(i));
    }
    let denom = f64::from(obs.threshold()) * absent as f64;
    let value = totals
        .y
        .iter()
        .zip(&s.plus_y)
        .map(|(&tot, &plus)| (tot - plus) as f64 / denom)
        .collect();
    Ok(BackgroundEstimate {
        value,
        rounds_used: absent as usize,
    })
}

/// Mean output of the rounds where user `i` sent nothing, divided by `t`.
pub fn estimate_background(obs: &ObservationPair, i: usize) -> Result<BackgroundEstimate> {
    check_user(obs, i)?;
    background_from(obs, &Totals::new(obs), &UserSums::collect(obs, i), i)
}

fn sda_from(obs: &ObservationPair, s: &UserSums, i: usize) -> Result<Vec<f64>> {
    if s.rounds_present == 0 {
        return Err(Error::UndefinedUser(i));
    }
    let n = obs.n_users() as f64;
    let t = f64::from(obs.threshold());
    let present = s.rounds_present as f64;
    Ok(s.plus_y
        .iter()
        .map(|&py| py as f64 / present - (t - 1.0) / n)
        .collect())
}

/// Original SDA: average output in the rounds where `i` took part, minus a
/// uniform background of `t - 1` messages.
pub fn sda(obs: &ObservationPair, i: usize) -> Result<Vec<f64>> {
    check_user(obs, i)?;
    sda_from(obs, &UserSums::collect(obs, i), i)
}

fn sda0_from(obs: &ObservationPair, totals: &Totals, s: &UserSums, i: usize) -> Result<Vec<f64>> {
    if s.sum_x == 0 {
        return Err(Error::UndefinedUser(i));
    }
    let bg = background_from(obs, totals, s, i)?;
    let t = u64::from(obs.threshold());
    let own = s.sum_x as f64;
    // x⁺ᵀx_b = t·x⁺ᵀ1 − x⁺ᵀx_i
    let weight = (t * s.rounds_present - s.sum_x) as f64 / own;
    Ok(s.plus_y
        .iter()
        .zip(&bg.value)
        .map(|(&py, &b)| py as f64 / own - weight * b)
        .collect())
}

/// SDA0: rounds where `i` took part, normalized by the number of messages `i`
/// actually sent, with an estimated background.
pub fn sda0(obs: &ObservationPair, i: usize) -> Result<Vec<f64>> {
    check_user(obs, i)?;
    sda0_from(obs, &Totals::new(obs), &UserSums::collect(obs, i), i)
}

fn sda1_from(obs: &ObservationPair, totals: &Totals, s: &UserSums, i: usize) -> Result<Vec<f64>> {
    if s.sum_x2 == 0 {
        return Err(Error::UndefinedUser(i));
    }
    let bg = background_from(obs, totals, s, i)?;
    let t = u64::from(obs.threshold());
    let own = s.sum_x2 as f64;
    // x_iᵀx_b = t·x_iᵀ1 − x_iᵀx_i
    let weight = (t * s.sum_x - s.sum_x2) as f64 / own;
    Ok(s.x_y
        .iter()
        .zip(&bg.value)
        .map(|(&xy, &b)| xy as f64 / own - weight * b)
        .collect())
}

/// SDA1: like SDA0 but each round is weighted by the number of messages `i` sent in it.
pub fn sda1(obs: &ObservationPair, i: usize) -> Result<Vec<f64>> {
    check_user(obs, i)?;
    sda1_from(obs, &Totals::new(obs), &UserSums::collect(obs, i), i)
}

/// Joint solution `(p̂_{j,i}, p̂_{j,b})` for every recipient `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sda2Estimate {
    pub profile: Vec<f64>,
    pub background: Vec<f64>,
}

fn sda2_from(obs: &ObservationPair, totals: &Totals, s: &UserSums) -> Result<Sda2Estimate> {
    let t = i128::from(obs.threshold());
    let rho = obs.rounds() as i128;
    let sum_x = i128::from(s.sum_x);
    // Gram matrix of U = (x_i, x_b), x_b = t·1 − x_i
    let a = i128::from(s.sum_x2);
    let b = t * sum_x - a;
    let c = t * t * rho - 2 * t * sum_x + a;
    let det = a * c - b * b;
    if det == 0 {
        return Err(Error::Singular { rank: 1, n: 2 });
    }
    let det_f = det as f64;
    let (profile, background) = s
        .x_y
        .iter()
        .zip(&totals.y)
        .map(|(&xy, &ytot)| {
            let r1 = i128::from(xy);
            let r2 = t * i128::from(ytot) - r1;
            ((c * r1 - b * r2) as f64 / det_f, (a * r2 - b * r1) as f64 / det_f)
        })
        .unzip();
    Ok(Sda2Estimate { profile, background })
}

/// SDA2: per-user 2×2 least squares of `y_j` on `(x_i, x_b)` over all rounds.
pub fn sda2_joint(obs: &ObservationPair, i: usize) -> Result<Sda2Estimate> {
    check_user(obs, i)?;
    sda2_from(obs, &Totals::new(obs), &UserSums::collect(obs, i))
}

pub fn sda2(obs: &ObservationPair, i: usize) -> Result<Vec<f64>> {
    sda2_joint(obs, i).map(|e| e.profile)
}

/// Exact `XᵀX` and `XᵀY`, accumulated over the nonzero entries of each round.
pub fn normal_equations(obs: &ObservationPair) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = obs.n_users();
    let mut xtx = vec![0u64; n * n];
    let mut xty = vec![0u64; n * n];
    let mut xs: Vec<(usize, u64)> = Vec::new();
    let mut ys: Vec<(usize, u64)> = Vec::new();
    for r in 0..obs.rounds() {
        xs.clear();
        ys.clear();
        xs.extend(obs.x().row(r).iter().enumerate().filter(|(_, &c)| c > 0).map(|(k, &c)| (k, u64::from(c))));
        ys.extend(obs.y().row(r).iter().enumerate().filter(|(_, &c)| c > 0).map(|(k, &c)| (k, u64::from(c))));
        for &(a, xa) in &xs {
            for &(b, xb) in &xs {
                xtx[a * n + b] += xa * xb;
            }
            for &(j, yj) in &ys {
                xty[a * n + j] += xa * yj;
            }
        }
    }
    let to_f = |v: Vec<u64>| DMatrix::from_row_iterator(n, n, v.into_iter().map(|c| c as f64));
    (to_f(xtx), to_f(xty))
}

/// Numerical rank and 2-norm condition number of a symmetric PSD matrix.
pub fn rank_and_condition(gram: &DMatrix<f64>) -> (usize, f64) {
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = max * gram.nrows() as f64 * f64::EPSILON;
    let rank = eig.iter().filter(|&&v| v > tol).count();
    let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let cond = if rank < gram.nrows() || min <= 0.0 { f64::INFINITY } else { max / min };
    (rank, cond)
}

/// LSDA: `P̂ᵀ = (XᵀX)⁻¹XᵀY`, solved for every recipient at once.
pub fn lsda(obs: &ObservationPair, opts: &AttackOptions) -> Result<EstimatedProfiles> {
    let n = obs.n_users();
    let (gram, xty) = normal_equations(obs);
    let (rank, cond) = rank_and_condition(&gram);
    if cond > CONDITION_WARN {
        log::warn!("LSDA normal equations are ill-conditioned (condition number {cond:.3e})");
    }
    let mut undefined_users = BTreeSet::new();
    // sol[(k, j)] = p̂_{j,k}
    let sol = if rank < n {
        if !opts.min_norm_fallback {
            return Err(Error::Singular { rank, n });
        }
        log::warn!("XᵀX has rank {rank} of {n}; using the minimum-norm solution");
        undefined_users.extend((0..n).filter(|&k| gram[(k, k)] == 0.0));
        gram.clone()
            .svd(true, true)
            .solve(&xty, f64::EPSILON * n as f64)
            .map_err(|e| Error::Format(e.to_string()))?
    } else {
        let chol = gram.clone().cholesky().ok_or(Error::Singular { rank, n })?;
        let cols = par::map_range(n, |j| chol.solve(&DVector::from_column_slice(xty.column(j).as_slice())));
        DMatrix::from_columns(&cols)
    };
    let mut est = sol.transpose();
    for &k in &undefined_users {
        est.column_mut(k).fill(f64::NAN);
    }
    Ok(EstimatedProfiles {
        est,
        attack: AttackKind::Lsda,
        undefined_users,
        condition_number: Some(cond),
    })
}

/// Runs one attack over every user. Per-user failures become `undefined_users`;
/// an LSDA singularity (without fallback) aborts.
pub fn run_attack(kind: AttackKind, obs: &ObservationPair, opts: &AttackOptions) -> Result<EstimatedProfiles> {
    if kind == AttackKind::Lsda {
        return lsda(obs, opts);
    }
    let n = obs.n_users();
    let totals = Totals::new(obs);
    let columns = par::map_range(n, |i| {
        let s = UserSums::collect(obs, i);
        match kind {
            AttackKind::Sda => sda_from(obs, &s, i),
            AttackKind::Sda0 => sda0_from(obs, &totals, &s, i),
            AttackKind::Sda1 => sda1_from(obs, &totals, &s, i),
            AttackKind::Sda2 => sda2_from(obs, &totals, &s).map(|e| e.profile),
            AttackKind::Lsda => unreachable!(),
        }
    });
    let mut est = DMatrix::from_element(n, n, f64::NAN);
    let mut undefined_users = BTreeSet::new();
    for (i, col) in columns.into_iter().enumerate() {
        match col {
            Ok(v) => est.column_mut(i).copy_from_slice(&v),
            Err(Error::UndefinedUser(_) | Error::BackgroundUndefined(_) | Error::Singular { .. }) => {
                undefined_users.insert(i);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EstimatedProfiles {
        est,
        attack: kind,
        undefined_users,
        condition_number: None,
    })
}
