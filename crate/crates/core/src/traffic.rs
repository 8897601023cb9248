//! Synthetic threshold-mix traffic.
//!
//! Each round draws `t` messages. A message's sender is drawn from the sender
//! frequencies and its recipient, independently, from that sender's profile.
//! The per-round sender counts are therefore multinomial and each recipient
//! count is a sum of binomials given the senders.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{CountMatrix, MixConfig, ObservationPair, SenderFrequencies, SenderProfiles};

/// One reproducible random stream. Identical `(seed, stream_id)` pairs give
/// identical draws; distinct stream ids are independent ChaCha streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Precomputed samplers for a fixed ground truth.
#[derive(Debug, Clone)]
pub struct RoundSampler {
    senders: WeightedIndex<f64>,
    recipients: Vec<WeightedIndex<f64>>,
    n_users: usize,
    threshold: u32,
}

impl RoundSampler {
    pub fn new(freqs: &SenderFrequencies, profiles: &SenderProfiles, threshold: u32) -> Result<Self> {
        let n = freqs.len();
        if profiles.n_users() != n {
            return Err(Error::Dimension(format!(
                "{n} frequencies but {} profiles",
                profiles.n_users()
            )));
        }
        let senders = WeightedIndex::new(freqs.as_slice())
            .map_err(|e| Error::Format(format!("sender frequencies: {e}")))?;
        let recipients = (0..n)
            .map(|i| {
                WeightedIndex::new(profiles.column(i))
                    .map_err(|e| Error::Format(format!("profile of sender {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            senders,
            recipients,
            n_users: n,
            threshold,
        })
    }

    /// Fills one round of sender and recipient counts. Both slices must be zeroed.
    pub fn fill_round<R: Rng + ?Sized>(&self, rng: &mut R, x_row: &mut [u32], y_row: &mut [u32]) {
        for _ in 0..self.threshold {
            let i = self.senders.sample(rng);
            let j = self.recipients[i].sample(rng);
            x_row[i] += 1;
            y_row[j] += 1;
        }
    }

    pub fn sample_round<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<u32>, Vec<u32>) {
        let mut x = vec![0; self.n_users];
        let mut y = vec![0; self.n_users];
        self.fill_round(rng, &mut x, &mut y);
        (x, y)
    }

    /// Recipients only, for a fixed row of sender counts.
    pub fn sample_recipients<R: Rng + ?Sized>(&self, rng: &mut R, x_row: &[u32]) -> Vec<u32> {
        let mut y = vec![0; self.n_users];
        for (i, &c) in x_row.iter().enumerate() {
            for _ in 0..c {
                y[self.recipients[i].sample(rng)] += 1;
            }
        }
        y
    }
}

/// Draws a single round `(x_row, y_row)`.
pub fn sample_round<R: Rng + ?Sized>(
    freqs: &SenderFrequencies,
    profiles: &SenderProfiles,
    threshold: u32,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<u32>)> {
    Ok(RoundSampler::new(freqs, profiles, threshold)?.sample_round(rng))
}

/// Simulates `config.rounds` independent rounds on stream 0 of `config.seed`.
pub fn simulate(
    config: &MixConfig,
    freqs: &SenderFrequencies,
    profiles: &SenderProfiles,
) -> Result<ObservationPair> {
    simulate_stream(config, freqs, profiles, RngStream::new(config.seed, 0))
}

/// Simulates on an explicit stream. The config's seed is ignored.
pub fn simulate_stream(
    config: &MixConfig,
    freqs: &SenderFrequencies,
    profiles: &SenderProfiles,
    stream: RngStream,
) -> Result<ObservationPair> {
    if let Err(v) = crate::model::validate(config, freqs, profiles) {
        return Err(Error::Invalid(v));
    }
    let sampler = RoundSampler::new(freqs, profiles, config.threshold)?;
    let mut rng = stream.rng();
    let mut x = CountMatrix::zeros(config.rounds, config.n_users);
    let mut y = CountMatrix::zeros(config.rounds, config.n_users);
    for r in 0..config.rounds {
        sampler.fill_round(&mut rng, x.row_mut(r), y.row_mut(r));
    }
    Ok(ObservationPair::new_unchecked(x, y, config.threshold))
}

/// Ring profiles: sender `i` spreads uniformly over `M` friends
/// `(i + k) mod N`. With `exclude_self` the friends are `k = 1..=M`, otherwise
/// `k = 0..M` and every user's first friend is itself.
pub fn ring_profiles(n_users: usize, n_friends: usize, exclude_self: bool) -> Result<SenderProfiles> {
    let max = if exclude_self { n_users.saturating_sub(1) } else { n_users };
    if n_friends < 1 || n_friends > max {
        return Err(Error::Invalid(vec![crate::model::Violation {
            location: "ring.n_friends".into(),
            message: format!("must be in 1..={max}, got {n_friends}"),
        }]));
    }
    let offset = usize::from(exclude_self);
    let w = 1.0 / n_friends as f64;
    let mut m = DMatrix::zeros(n_users, n_users);
    for i in 0..n_users {
        for k in 0..n_friends {
            m[((i + k + offset) % n_users, i)] = w;
        }
    }
    SenderProfiles::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::uniformity;

    #[test]
    fn degenerate_round_is_deterministic() {
        let f = SenderFrequencies::new(vec![1.0, 0.0]).unwrap();
        let p = SenderProfiles::new(DMatrix::from_column_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let mut rng = RngStream::new(1, 0).rng();
        for _ in 0..20 {
            let (x, y) = sample_round(&f, &p, 4, &mut rng).unwrap();
            assert_eq!(x, vec![4, 0]);
            assert_eq!(y, vec![0, 4]);
        }
    }

    #[test]
    fn single_round_and_determinism() {
        let cfg = MixConfig::new(5, 3, 1, 9).unwrap();
        let f = SenderFrequencies::uniform(5);
        let p = ring_profiles(5, 2, false).unwrap();
        let obs = simulate(&cfg, &f, &p).unwrap();
        assert_eq!((obs.rounds(), obs.n_users()), (1, 5));

        let cfg = MixConfig::new(5, 3, 300, 9).unwrap();
        let a = simulate(&cfg, &f, &p).unwrap();
        let b = simulate(&cfg, &f, &p).unwrap();
        assert_eq!(a, b);
        let c = simulate_stream(&cfg, &f, &p, RngStream::new(9, 1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rows_conserve_threshold() {
        let cfg = MixConfig::new(7, 6, 500, 3).unwrap();
        let f = SenderFrequencies::geometric(7, 0.7).unwrap();
        let p = ring_profiles(7, 3, true).unwrap();
        let obs = simulate(&cfg, &f, &p).unwrap();
        for r in 0..obs.rounds() {
            assert_eq!(obs.x().row(r).iter().sum::<u32>(), 6);
            assert_eq!(obs.y().row(r).iter().sum::<u32>(), 6);
        }
    }

    #[test]
    fn ring_literal_formula() {
        let p = ring_profiles(4, 1, false).unwrap();
        assert_eq!(p.matrix(), &DMatrix::identity(4, 4));

        let p = ring_profiles(100, 10, false).unwrap();
        for i in 0..100 {
            let col = p.column(i);
            assert_eq!(col.iter().filter(|&&v| v == 0.1).count(), 10);
            assert_eq!(col.iter().filter(|&&v| v == 0.0).count(), 90);
            assert!((uniformity(col) - 0.9).abs() < 1e-12);
        }
        // each recipient is covered by exactly M senders
        for j in 0..100 {
            let row: f64 = p.matrix().row(j).sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_exclude_self() {
        let p = ring_profiles(5, 2, true).unwrap();
        for i in 0..5 {
            assert_eq!(p.get(i, i), 0.0);
            assert_eq!(p.get((i + 1) % 5, i), 0.5);
            assert_eq!(p.get((i + 2) % 5, i), 0.5);
        }
        assert!(ring_profiles(5, 5, true).is_err());
        assert!(ring_profiles(5, 0, false).is_err());
        assert!(ring_profiles(5, 6, false).is_err());
    }

    #[test]
    fn multinomial_mean() {
        let f = SenderFrequencies::uniform(3);
        let p = ring_profiles(3, 3, false).unwrap();
        let s = RoundSampler::new(&f, &p, 3).unwrap();
        let mut rng = RngStream::new(11, 0).rng();
        let rounds = 100_000;
        let mut sum = [0u64; 3];
        for _ in 0..rounds {
            let (x, _) = s.sample_round(&mut rng);
            for i in 0..3 {
                sum[i] += u64::from(x[i]);
            }
        }
        // Var(x_i) = t f (1 - f) = 2/3
        let se = (2.0f64 / 3.0 / rounds as f64).sqrt();
        for &s in &sum {
            let mean = s as f64 / rounds as f64;
            assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
        }
    }

    #[test]
    fn conditional_recipient_mean() {
        // E{y_j | x} = sum_i x_i p_{j,i}
        let f = SenderFrequencies::uniform(3);
        let p = SenderProfiles::new(DMatrix::from_column_slice(
            3,
            3,
            &[0.2, 0.3, 0.5, 0.6, 0.4, 0.0, 0.1, 0.1, 0.8],
        ))
        .unwrap();
        let s = RoundSampler::new(&f, &p, 6).unwrap();
        let x_row = [1u32, 2, 3];
        let mut rng = RngStream::new(5, 2).rng();
        let n = 100_000;
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        for _ in 0..n {
            let y = s.sample_recipients(&mut rng, &x_row);
            for j in 0..3 {
                let v = f64::from(y[j]);
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        for j in 0..3 {
            let expect: f64 = (0..3).map(|i| f64::from(x_row[i]) * p.get(j, i)).sum();
            let mean = sum[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - expect).abs() < 5.0 * se, "j={j} mean={mean} expect={expect}");
        }
    }
}
