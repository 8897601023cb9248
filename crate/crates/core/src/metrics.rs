//! Estimation error and summary statistics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EstimatedProfiles, SenderProfiles};

/// Squared Euclidean distance between sender `i`'s true and estimated profiles.
pub fn mse_per_user(truth: &SenderProfiles, est: &EstimatedProfiles, i: usize) -> Result<f64> {
    let n = truth.n_users();
    if i >= n || i >= est.n_users() {
        return Err(Error::UserOutOfRange { index: i, n_users: n });
    }
    if !est.is_defined(i) {
        return Err(Error::UndefinedUser(i));
    }
    Ok(truth
        .column(i)
        .iter()
        .zip(est.column(i))
        .map(|(p, q)| (p - q) * (p - q))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    /// NaN for excluded users.
    pub per_user: Vec<f64>,
    /// Mean over defined users only.
    pub average: f64,
    pub excluded_users: BTreeSet<usize>,
    pub n_defined: usize,
}

pub fn mse_summary(truth: &SenderProfiles, est: &EstimatedProfiles) -> Result<MseReport> {
    if truth.n_users() != est.n_users() {
        return Err(Error::Dimension(format!(
            "truth has {} users, estimate has {}",
            truth.n_users(),
            est.n_users()
        )));
    }
    let mut per_user = Vec::with_capacity(truth.n_users());
    let mut sum = 0.0;
    let mut n_defined = 0;
    for i in 0..truth.n_users() {
        match mse_per_user(truth, est, i) {
            Ok(v) => {
                sum += v;
                n_defined += 1;
                per_user.push(v);
            }
            Err(Error::UndefinedUser(_)) => per_user.push(f64::NAN),
            Err(e) => return Err(e),
        }
    }
    if n_defined == 0 {
        return Err(Error::EmptyReport);
    }
    Ok(MseReport {
        per_user,
        average: sum / n_defined as f64,
        excluded_users: est.undefined_users.clone(),
        n_defined,
    })
}

/// Box-plot summary with the mean as the central mark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub mean: f64,
    pub p25: f64,
    pub p75: f64,
    pub min: f64,
    pub max: f64,
}

/// Percentile of sorted data by linear interpolation between order
/// statistics: rank `q/100 · (n − 1)`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = (q / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn box_stats(samples: &[f64]) -> Result<BoxStats> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(BoxStats {
        // keeps a constant sample exactly constant despite summation rounding
        mean: mean.clamp(sorted[0], sorted[sorted.len() - 1]),
        p25: percentile_sorted(&sorted, 25.0),
        p75: percentile_sorted(&sorted, 75.0),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}
