//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test --release -p sda-core --test acceptance -- --nocapture` to see them.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sda_core::attacks::{lsda, sda2};
use sda_core::harness::{run_experiment, ExperimentResult, ExperimentSpec};
use sda_core::theory::{autocorrelation, autocorrelation_inverse, covariance_middle_term, TheoryReport};
use sda_core::traffic::{ring_profiles, simulate_stream, RngStream, RoundSampler};
use sda_core::{
    run_attack, AttackKind, AttackOptions, CountMatrix, MixConfig, ObservationPair, SenderFrequencies, SenderProfiles,
};

fn report(id: u32, ok: bool, detail: String) {
    println!("[{}] criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} failed: {detail}");
}

fn random_truth(rng: &mut ChaCha8Rng, n: usize) -> (SenderProfiles, SenderFrequencies) {
    let mut m = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0f64));
    for mut c in m.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0f64)).collect();
    let s: f64 = w.iter().sum();
    let f = SenderFrequencies::from_raw(w.iter().map(|v| v / s).collect());
    (SenderProfiles::from_raw(m), f)
}

#[test]
fn c01_profile_sum_identity() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for inst in 0..50u64 {
        let n = [5, 20][(inst % 2) as usize];
        let t = [2, 10][((inst / 2) % 2) as usize];
        let (p, f) = random_truth(&mut rng, n);
        let cfg = MixConfig::new(n, t, 2000, inst).unwrap();
        let obs = simulate_stream(&cfg, &f, &p, RngStream::new(inst, 0)).unwrap();
        for kind in AttackKind::ALL {
            let est = run_attack(kind, &obs, &AttackOptions::default()).unwrap();
            for i in (0..n).filter(|&i| est.is_defined(i)) {
                worst = worst.max((est.column(i).iter().sum::<f64>() - 1.0).abs());
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        worst <= 1e-9 && secs < 60.0,
        format!("{checked} profiles, max |sum - 1| = {worst:.2e} (tol 1e-9), {secs:.1}s"),
    );
}

/// Gaussian elimination with partial pivoting on an augmented system.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

#[test]
fn c02_oracle_equivalence() {
    let xr = [[1u32, 2, 0], [0, 1, 2], [3, 0, 0], [1, 1, 1], [0, 0, 3]];
    let yr = [[0u32, 1, 2], [1, 1, 1], [2, 0, 1], [1, 2, 0], [0, 3, 0]];
    let t = 3u32;
    let obs = ObservationPair::new(
        CountMatrix::from_rows(&xr.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap(),
        CountMatrix::from_rows(&yr.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap(),
        t,
    )
    .unwrap();
    let xf = |r: usize, i: usize| f64::from(xr[r][i]);
    let yf = |r: usize, j: usize| f64::from(yr[r][j]);

    let est = lsda(&obs, &AttackOptions::default()).unwrap();
    let mut lsda_err = 0.0f64;
    for j in 0..3 {
        let a: Vec<Vec<f64>> = (0..3)
            .map(|p| (0..3).map(|q| (0..5).map(|r| xf(r, p) * xf(r, q)).sum()).collect())
            .collect();
        let b: Vec<f64> = (0..3).map(|p| (0..5).map(|r| xf(r, p) * yf(r, j)).sum()).collect();
        let sol = gauss_solve(a, b);
        for i in 0..3 {
            lsda_err = lsda_err.max((sol[i] - est.est[(j, i)]).abs());
        }
    }

    let mut sda2_err = 0.0f64;
    for i in 0..3 {
        let got = sda2(&obs, i).unwrap();
        let xi: Vec<f64> = (0..5).map(|r| xf(r, i)).collect();
        let xb: Vec<f64> = (0..5).map(|r| f64::from(t) - xf(r, i)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        let (a11, a12, a22) = (dot(&xi, &xi), dot(&xi, &xb), dot(&xb, &xb));
        let det = a11 * a22 - a12 * a12;
        for j in 0..3 {
            let yj: Vec<f64> = (0..5).map(|r| yf(r, j)).collect();
            let (b1, b2) = (dot(&xi, &yj), dot(&xb, &yj));
            let cramer = (b1 * a22 - a12 * b2) / det;
            sda2_err = sda2_err.max((cramer - got[j]).abs());
        }
    }
    report(
        2,
        lsda_err <= 1e-12 && sda2_err <= 1e-12,
        format!("LSDA vs Gauss {lsda_err:.2e}, SDA2 vs Cramer {sda2_err:.2e} (tol 1e-12)"),
    );
}

fn ring_experiment(friends: &str, rounds: &str, reps: usize) -> ExperimentResult {
    let text = format!(
        "schema = 1\nn_users = 20\nthreshold = 5\nseed = 11\nfriends = 5\nrounds = 10000\n\
         sweep = {friends}: {rounds}\nattacks = SDA0, SDA1, SDA2, LSDA\nrepetitions = {reps}\n"
    );
    run_experiment(&ExperimentSpec::parse(&text, std::path::Path::new("acceptance.spec")).unwrap()).unwrap()
}

/// N=20, t=5, uniform f, ρ=10000, 30 repetitions, M ∈ {5, 20}.
fn n20_sweep() -> &'static ExperimentResult {
    static CELL: OnceLock<ExperimentResult> = OnceLock::new();
    CELL.get_or_init(|| ring_experiment("friends", "5, 20", 30))
}

fn within(measured: f64, predicted: f64, tol: f64) -> (bool, f64) {
    let rel = (measured - predicted) / predicted;
    (rel.abs() <= tol, rel)
}

#[test]
fn c03_lsda_theory_match() {
    let r = n20_sweep();
    let m = r.mean_mse(AttackKind::Lsda, 5.0).unwrap();
    let p = r.overlay(5.0).unwrap().mse_lsda.unwrap();
    let (ok, rel) = within(m, p, 0.15);
    report(3, ok, format!("LSDA mean MSE {m:.4e} vs predicted {p:.4e}, rel {:+.1}% (tol 15%)", 100.0 * rel));
}

#[test]
fn c04_sda2_theory_match() {
    let r = n20_sweep();
    let m = r.mean_mse(AttackKind::Sda2, 5.0).unwrap();
    let p = r.overlay(5.0).unwrap().mse_sda2.unwrap();
    let (ok, rel) = within(m, p, 0.15);
    report(4, ok, format!("SDA2 mean MSE {m:.4e} vs predicted {p:.4e}, rel {:+.1}% (tol 15%)", 100.0 * rel));
}

#[test]
fn c05_ordering() {
    let r = n20_sweep();
    let mse = |k, m| r.mean_mse(k, m).unwrap();
    let (l, s0, s1, s2) = (
        mse(AttackKind::Lsda, 5.0),
        mse(AttackKind::Sda0, 5.0),
        mse(AttackKind::Sda1, 5.0),
        mse(AttackKind::Sda2, 5.0),
    );
    let order = l <= s2 && s1.max(s2) < s0;
    let (lu, su) = (mse(AttackKind::Lsda, 20.0), mse(AttackKind::Sda2, 20.0));
    let advantage = (su - lu) / su;
    report(
        5,
        order && advantage < 0.10,
        format!(
            "M=5: LSDA {l:.3e} <= SDA2 {s2:.3e}, max(SDA1 {s1:.3e}, SDA2) < SDA0 {s0:.3e}; \
             M=N: LSDA advantage {:.2}% (< 10%)",
            100.0 * advantage
        ),
    );
}

#[test]
fn c06_inverse_rounds_scaling() {
    let r = ring_experiment("rounds", "5000, 10000", 30);
    let a = r.mean_mse(AttackKind::Lsda, 5000.0).unwrap();
    let b = r.mean_mse(AttackKind::Lsda, 10000.0).unwrap();
    let ratio = a / b;
    report(
        6,
        (ratio - 2.0).abs() <= 0.2 * 2.0,
        format!("LSDA MSE(5000)/MSE(10000) = {ratio:.3} (2 ± 20%)"),
    );
}

#[test]
fn c07_lsda_unbiased() {
    let n = 10;
    let reps = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (p, f) = random_truth(&mut rng, n);
    let cfg = MixConfig::new(n, 5, 2000, 77).unwrap();
    let ests: Vec<DMatrix<f64>> = sda_core::par::map_range(reps, |r| {
        let obs = simulate_stream(&cfg, &f, &p, RngStream::new(77, r as u64)).unwrap();
        lsda(&obs, &AttackOptions::default()).unwrap().est
    });
    let mut pass = 0;
    for j in 0..n {
        for i in 0..n {
            let vals: Vec<f64> = ests.iter().map(|e| e[(j, i)]).collect();
            let mean = vals.iter().sum::<f64>() / reps as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt();
            if (mean - p.get(j, i)).abs() < 4.0 * se {
                pass += 1;
            }
        }
    }
    let frac = pass as f64 / (n * n) as f64;
    report(7, frac >= 0.99, format!("{pass}/{} entries with |bias| < 4 SE (need >= 99%)", n * n));
}

#[test]
fn c08_autocorrelation() {
    let f = SenderFrequencies::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let t = 5;
    let p = ring_profiles(4, 2, false).unwrap();
    let sampler = RoundSampler::new(&f, &p, t).unwrap();
    let mut rng = RngStream::new(8, 0).rng();
    let rho = 100_000;
    let mut sum = DMatrix::<f64>::zeros(4, 4);
    let mut sq = DMatrix::<f64>::zeros(4, 4);
    for _ in 0..rho {
        let (x, _) = sampler.sample_round(&mut rng);
        for a in 0..4 {
            for b in 0..4 {
                let v = f64::from(x[a] * x[b]);
                sum[(a, b)] += v;
                sq[(a, b)] += v * v;
            }
        }
    }
    let r = autocorrelation(&f, t);
    let mut worst_z = 0.0f64;
    for a in 0..4 {
        for b in 0..4 {
            let mean = sum[(a, b)] / rho as f64;
            let var = sq[(a, b)] / rho as f64 - mean * mean;
            let se = (var / rho as f64).sqrt();
            worst_z = worst_z.max((mean - r[(a, b)]).abs() / se);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let w: Vec<f64> = (0..50).map(|_| rng.random_range(0.01..1.0f64)).collect();
    let s: f64 = w.iter().sum();
    let f50 = SenderFrequencies::new(w.iter().map(|v| v / s).collect()).unwrap();
    let ident = autocorrelation(&f50, 10) * autocorrelation_inverse(&f50, 10).unwrap();
    let id_err = (ident - DMatrix::<f64>::identity(50, 50)).abs().max();
    report(
        8,
        worst_z <= 5.0 && id_err <= 1e-9,
        format!("max |E{{xxᵀ}} - R| = {worst_z:.2} SE (tol 5), |R R⁻¹ - I| = {id_err:.2e} (tol 1e-9)"),
    );
}

#[test]
fn c09_middle_term() {
    let p = SenderProfiles::new(DMatrix::from_column_slice(
        3,
        3,
        &[0.2, 0.3, 0.5, 0.6, 0.4, 0.0, 0.1, 0.1, 0.8],
    ))
    .unwrap();
    let f = SenderFrequencies::new(vec![0.5, 0.3, 0.2]).unwrap();
    let t = 4;
    let rho = 100_000;
    let sampler = RoundSampler::new(&f, &p, t).unwrap();
    let mut worst_z = 0.0f64;
    for j in 0..3 {
        let s: Vec<f64> = (0..3).map(|k| p.get(j, k) * (1.0 - p.get(j, k))).collect();
        let mut rng = RngStream::new(9, j as u64).rng();
        let mut sum = DMatrix::<f64>::zeros(3, 3);
        let mut sq = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..rho {
            let (x, _) = sampler.sample_round(&mut rng);
            let cond_var: f64 = (0..3).map(|k| f64::from(x[k]) * s[k]).sum();
            for a in 0..3 {
                for b in 0..3 {
                    let v = f64::from(x[a] * x[b]) * cond_var;
                    sum[(a, b)] += v;
                    sq[(a, b)] += v * v;
                }
            }
        }
        let closed = covariance_middle_term(&p, &f, t, rho, j) / rho as f64;
        for a in 0..3 {
            for b in 0..3 {
                let mean = sum[(a, b)] / rho as f64;
                let var = sq[(a, b)] / rho as f64 - mean * mean;
                let se = (var / rho as f64).sqrt();
                worst_z = worst_z.max((mean - closed[(a, b)]).abs() / se);
            }
        }
    }
    report(9, worst_z <= 5.0, format!("max deviation {worst_z:.2} SE over 3 recipients (tol 5)"));
}

#[test]
fn c10_friends_sweep_n100() {
    let start = std::time::Instant::now();
    let text = "schema = 1\nn_users = 100\nthreshold = 10\nrounds = 20000\nseed = 2013\n\
                sweep = friends: 10, 25, 50, 100\nattacks = SDA0, SDA1, SDA2, LSDA\nrepetitions = 10\n";
    let spec = ExperimentSpec::parse(text, std::path::Path::new("friends.spec")).unwrap();
    let r = run_experiment(&spec).unwrap();
    let mut ok = r.failures.is_empty();
    let mut lines = Vec::new();
    let mut gaps = Vec::new();
    for m in [10.0, 25.0, 50.0, 100.0] {
        let (l, s2) = (r.mean_mse(AttackKind::Lsda, m).unwrap(), r.mean_mse(AttackKind::Sda2, m).unwrap());
        let o = r.overlay(m).unwrap();
        let (ok_l, rel_l) = within(l, o.mse_lsda.unwrap(), 0.20);
        let (ok_s, rel_s) = within(s2, o.mse_sda2.unwrap(), 0.20);
        ok &= ok_l && ok_s;
        gaps.push((s2 - l) / l);
        lines.push(format!("M={m}: LSDA {:+.1}%, SDA2 {:+.1}%", 100.0 * rel_l, 100.0 * rel_s));
    }
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    ok &= monotone;
    let gap_txt: Vec<String> = gaps.iter().map(|g| format!("{:.2}%", 100.0 * g)).collect();
    report(
        10,
        ok,
        format!(
            "{} (tol 20%); SDA2/LSDA gap [{}] shrinking: {monotone}; {:.1}s",
            lines.join(", "),
            gap_txt.join(", "),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn theory_report_matches_overlay() {
    // overlays are plain averages of the per-user predictors
    let p = ring_profiles(20, 5, false).unwrap();
    let f = SenderFrequencies::uniform(20);
    let rep = TheoryReport::compute(&p, &f, 5, 10000).unwrap();
    let o = n20_sweep().overlay(5.0).unwrap();
    assert_eq!(o.mse_lsda, Some(rep.mean_mse_lsda()));
    assert_eq!(o.mse_sda2, Some(rep.mean_mse_sda2()));
}
