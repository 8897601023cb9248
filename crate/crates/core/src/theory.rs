//! Closed-form predictors computed from the ground truth.
//!
//! Nothing here looks at observations. These are the asymptotic quantities
//! used to design experiments and to overlay predictions on measured errors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SenderFrequencies, SenderProfiles};

/// `1 − Σ_j p_j²`. Zero for a single-recipient profile, `(N−1)/N` for a uniform one.
pub fn uniformity(profile: &[f64]) -> f64 {
    1.0 - profile.iter().map(|p| p * p).sum::<f64>()
}

/// Mixture of every other user's profile, weighted by `f_k / (1 − f_i)`.
pub fn background_profile(profiles: &SenderProfiles, freqs: &SenderFrequencies, i: usize) -> Result<Vec<f64>> {
    let n = profiles.n_users();
    if i >= n {
        return Err(Error::UserOutOfRange { index: i, n_users: n });
    }
    let f = freqs.as_slice();
    let rest = 1.0 - f[i];
    if rest <= 0.0 {
        return Err(Error::NoBackground(i));
    }
    let mut out = vec![0.0; n];
    for k in (0..n).filter(|&k| k != i && f[k] > 0.0) {
        let w = f[k] / rest;
        for (o, &p) in out.iter_mut().zip(profiles.column(k)) {
            *o += w * p;
        }
    }
    Ok(out)
}

/// `t(t−1)…(t−n+1)`; zero once `n > t`.
pub fn falling_factorial(t: u32, n: u32) -> f64 {
    (0..n).map(|k| f64::from(t) - f64::from(k)).map(|v| v.max(0.0)).product()
}

/// `R = E{xxᵀ} = t[F + (t−1) F 1 F]` for one round of multinomial sender counts.
pub fn autocorrelation(freqs: &SenderFrequencies, t: u32) -> DMatrix<f64> {
    let f = freqs.as_slice();
    let n = f.len();
    let t = f64::from(t);
    DMatrix::from_fn(n, n, |a, b| {
        let diag = if a == b { f[a] } else { 0.0 };
        t * (diag + (t - 1.0) * f[a] * f[b])
    })
}

/// `R⁻¹ = (1/t)[F⁻¹ − (1 − 1/t) 1]`, from the inversion lemma for diagonal plus rank one.
pub fn autocorrelation_inverse(freqs: &SenderFrequencies, t: u32) -> Result<DMatrix<f64>> {
    let f = freqs.as_slice();
    if let Some(i) = f.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroFrequency(i));
    }
    let n = f.len();
    let t = f64::from(t);
    let shift = 1.0 - 1.0 / t;
    Ok(DMatrix::from_fn(n, n, |a, b| {
        let diag = if a == b { 1.0 / f[a] } else { 0.0 };
        (diag - shift) / t
    }))
}

/// Quantities that the conditional covariance of recipient `j` depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryIntermediates {
    /// `s_k = p_{j,k}(1 − p_{j,k})`
    pub binomial_variances: Vec<f64>,
    /// `η_j = Σ_k f_k s_k`
    pub eta: f64,
    /// `t⁽¹⁾, t⁽²⁾, t⁽³⁾`
    pub falling_factorials: [f64; 3],
}

impl TheoryIntermediates {
    pub fn new(profiles: &SenderProfiles, freqs: &SenderFrequencies, t: u32, j: usize) -> Self {
        let s: Vec<f64> = (0..profiles.n_users())
            .map(|k| {
                let p = profiles.get(j, k);
                p * (1.0 - p)
            })
            .collect();
        let eta = s.iter().zip(freqs.as_slice()).map(|(s, f)| s * f).sum();
        Self {
            binomial_variances: s,
            eta,
            falling_factorials: [1, 2, 3].map(|n| falling_factorial(t, n)),
        }
    }
}

/// `E{Xᵀ Σ_{y_j|X} X}` in closed form:
/// `ρ{F(η t⁽³⁾ 1 + S 1 t⁽²⁾ + 1 S t⁽²⁾)F} + ρ{(η t⁽²⁾ I + t S)F}`.
pub fn covariance_middle_term(
    profiles: &SenderProfiles,
    freqs: &SenderFrequencies,
    t: u32,
    rounds: usize,
    j: usize,
) -> DMatrix<f64> {
    let ti = TheoryIntermediates::new(profiles, freqs, t, j);
    let f = freqs.as_slice();
    let s = &ti.binomial_variances;
    let [t1, t2, t3] = ti.falling_factorials;
    let eta = ti.eta;
    let rho = rounds as f64;
    DMatrix::from_fn(f.len(), f.len(), |a, b| {
        let rank_terms = f[a] * (eta * t3 + s[a] * t2 + s[b] * t2) * f[b];
        let diag = if a == b { (eta * t2 + t1 * s[a]) * f[a] } else { 0.0 };
        rho * (rank_terms + diag)
    })
}

/// Asymptotic covariance of LSDA's estimate of recipient `j`'s row,
/// `(ρR)⁻¹ E{XᵀΣX} (ρR)⁻¹`. Entry `(i, i)` is `Var{p̂_{j,i}}`.
pub fn profile_covariance(
    profiles: &SenderProfiles,
    freqs: &SenderFrequencies,
    t: u32,
    rounds: usize,
    j: usize,
) -> Result<DMatrix<f64>> {
    let rinv = autocorrelation_inverse(freqs, t)? / rounds as f64;
    let mid = covariance_middle_term(profiles, freqs, t, rounds, j);
    Ok(&rinv * mid * &rinv)
}

fn check_user_freq(freqs: &SenderFrequencies, i: usize) -> Result<f64> {
    let f = *freqs.as_slice().get(i).ok_or(Error::UserOutOfRange {
        index: i,
        n_users: freqs.len(),
    })?;
    if f <= 0.0 {
        return Err(Error::ZeroFrequency(i));
    }
    Ok(f)
}

fn mse_formula(f_i: f64, u_i: f64, avg_uniformity: f64, t: u32, rounds: usize) -> f64 {
    let t = f64::from(t);
    ((1.0 / f_i - 1.0) * (1.0 - 1.0 / t) * avg_uniformity + u_i / (f_i * t)) / rounds as f64
}

/// `Σ_k f_k u_k`
pub fn average_uniformity(profiles: &SenderProfiles, freqs: &SenderFrequencies) -> f64 {
    freqs
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, f)| f * uniformity(profiles.column(k)))
        .sum()
}

/// `f_i u_i + (1 − f_i) u_{b_i}`: the average uniformity when the population is
/// just user `i` and its background.
pub fn two_user_uniformity(profiles: &SenderProfiles, freqs: &SenderFrequencies, i: usize) -> Result<f64> {
    let f = check_user_freq(freqs, i)?;
    let u_i = uniformity(profiles.column(i));
    if f >= 1.0 {
        return Ok(u_i);
    }
    let u_b = uniformity(&background_profile(profiles, freqs, i)?);
    Ok(f * u_i + (1.0 - f) * u_b)
}

/// Predicted LSDA error for sender `i` after `rounds` rounds.
pub fn mse_lsda_theory(
    profiles: &SenderProfiles,
    freqs: &SenderFrequencies,
    t: u32,
    rounds: usize,
    i: usize,
) -> Result<f64> {
    let f = check_user_freq(freqs, i)?;
    let u_i = uniformity(profiles.column(i));
    Ok(mse_formula(f, u_i, average_uniformity(profiles, freqs), t, rounds))
}

/// Predicted SDA2 error for sender `i`; same form as LSDA with the two-user average uniformity.
pub fn mse_sda2_theory(
    profiles: &SenderProfiles,
    freqs: &SenderFrequencies,
    t: u32,
    rounds: usize,
    i: usize,
) -> Result<f64> {
    let f = check_user_freq(freqs, i)?;
    let u_i = uniformity(profiles.column(i));
    Ok(mse_formula(f, u_i, two_user_uniformity(profiles, freqs, i)?, t, rounds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub n_users: usize,
    pub threshold: u32,
    pub rounds: usize,
    pub per_user_mse_lsda: Vec<f64>,
    pub per_user_mse_sda2: Vec<f64>,
    pub avg_uniformity_lsda: f64,
    pub avg_uniformity_sda2_per_user: Vec<f64>,
    pub uniformities: Vec<f64>,
    pub background_uniformities: Vec<f64>,
}

impl TheoryReport {
    /// Requires every user to have a positive frequency and none to have frequency one.
    pub fn compute(profiles: &SenderProfiles, freqs: &SenderFrequencies, t: u32, rounds: usize) -> Result<Self> {
        let n = profiles.n_users();
        if freqs.len() != n {
            return Err(Error::Dimension(format!("{} frequencies for {n} users", freqs.len())));
        }
        let uniformities: Vec<f64> = (0..n).map(|i| uniformity(profiles.column(i))).collect();
        let background_uniformities = (0..n)
            .map(|i| background_profile(profiles, freqs, i).map(|b| uniformity(&b)))
            .collect::<Result<Vec<_>>>()?;
        let avg = average_uniformity(profiles, freqs);
        let f = freqs.as_slice();
        let two_user: Vec<f64> = (0..n)
            .map(|i| f[i] * uniformities[i] + (1.0 - f[i]) * background_uniformities[i])
            .collect();
        if let Some(i) = f.iter().position(|&v| v <= 0.0) {
            return Err(Error::ZeroFrequency(i));
        }
        Ok(Self {
            n_users: n,
            threshold: t,
            rounds,
            per_user_mse_lsda: (0..n).map(|i| mse_formula(f[i], uniformities[i], avg, t, rounds)).collect(),
            per_user_mse_sda2: (0..n)
                .map(|i| mse_formula(f[i], uniformities[i], two_user[i], t, rounds))
                .collect(),
            avg_uniformity_lsda: avg,
            avg_uniformity_sda2_per_user: two_user,
            uniformities,
            background_uniformities,
        })
    }

    pub fn mean_mse_lsda(&self) -> f64 {
        mean(&self.per_user_mse_lsda)
    }

    pub fn mean_mse_sda2(&self) -> f64 {
        mean(&self.per_user_mse_sda2)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
