use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sda_core::harness::{run_experiment, ExperimentSpec, FrequencyModel};
use sda_core::io::{self, Format, Trace};
use sda_core::traffic::{ring_profiles, simulate_stream, RngStream};
use sda_core::{par, run_attack, validate, AttackKind, AttackOptions, MixConfig, SenderProfiles};

#[derive(Parser)]
#[command(name = "sda", version, about = "Threshold-mix simulator and statistical disclosure attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Truth {
    /// Number of users (N)
    #[arg(short = 'n', long, default_value_t = 100)]
    n_users: usize,
    /// Messages per round (t)
    #[arg(short, long, default_value_t = 10)]
    threshold: u32,
    /// Ring profile: number of friends per user (M)
    #[arg(short = 'm', long, default_value_t = 10)]
    friends: usize,
    /// Exclude the sender itself from its ring of friends
    #[arg(long)]
    no_self: bool,
    /// Read the profile matrix from a file instead of using a ring
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Geometric frequency ratio; omit for uniform frequencies
    #[arg(long)]
    skew: Option<f64>,
}

impl Truth {
    fn build(&self) -> sda_core::Result<(SenderProfiles, sda_core::SenderFrequencies)> {
        let profiles = match &self.profiles {
            Some(p) => io::read_profiles(p)?,
            None => ring_profiles(self.n_users, self.friends, self.no_self)?,
        };
        let n = profiles.n_users();
        let freqs = match self.skew {
            Some(r) => FrequencyModel::Geometric(r),
            None => FrequencyModel::Uniform,
        }
        .build(n)?;
        Ok((profiles, freqs))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a threshold mix and write the observed trace
    Simulate {
        #[command(flatten)]
        truth: Truth,
        /// Number of rounds (rho)
        #[arg(short, long, default_value_t = 20_000)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random stream within the seed
        #[arg(long, default_value_t = 0)]
        stream: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run one attack on a trace file
    Attack {
        trace: PathBuf,
        #[arg(short, long)]
        kind: AttackKind,
        /// Use a minimum-norm solution when LSDA's normal equations are singular
        #[arg(long)]
        min_norm: bool,
        /// Clamp estimates to [0, 1] and renormalize each profile
        #[arg(long)]
        clamp: bool,
        /// Ground-truth profiles; when given, the per-user MSE is printed to stderr
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Print the asymptotic MSE predictors for LSDA and SDA2
    Theory {
        #[command(flatten)]
        truth: Truth,
        #[arg(short, long, default_value_t = 20_000)]
        rounds: usize,
        /// Write the per-user report instead of the summary line
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run an experiment described by a spec file
    Experiment {
        spec: PathBuf,
        /// Output directory; overrides the spec's `output`
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Overrides the spec's base seed
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads
        #[arg(short, long)]
        jobs: Option<usize>,
    },
}

fn run(cli: Cli) -> sda_core::Result<()> {
    match cli.command {
        Command::Simulate {
            truth,
            rounds,
            seed,
            stream,
            out,
            format,
        } => {
            let (profiles, freqs) = truth.build()?;
            let config = MixConfig::new(profiles.n_users(), truth.threshold, rounds, seed)?;
            validate(&config, &freqs, &profiles).map_err(sda_core::Error::Invalid)?;
            let obs = simulate_stream(&config, &freqs, &profiles, RngStream::new(seed, stream))?;
            io::write_trace(io::output(out.as_ref())?, &Trace { config, obs }, format)?;
        }
        Command::Attack {
            trace,
            kind,
            min_norm,
            clamp,
            truth,
            out,
            format,
        } => {
            let t = io::read_trace(&trace)?;
            let mut est = run_attack(kind, &t.obs, &AttackOptions { min_norm_fallback: min_norm })?;
            if clamp {
                est = est.clamped();
            }
            if let Some(path) = truth {
                let p = io::read_profiles(&path)?;
                let r = sda_core::metrics::mse_summary(&p, &est)?;
                eprintln!("{kind}: average MSE {:.6e} over {} users", r.average, r.n_defined);
            }
            io::write_estimate(io::output(out.as_ref())?, &est, Some(t.config.seed), format)?;
        }
        Command::Theory {
            truth,
            rounds,
            out,
            format,
        } => {
            let (profiles, freqs) = truth.build()?;
            let report = sda_core::theory::TheoryReport::compute(&profiles, &freqs, truth.threshold, rounds)?;
            match out {
                Some(path) => io::write_theory(io::output(Some(&path))?, &report, format)?,
                None => {
                    println!("mse_lsda={:.6e}", report.mean_mse_lsda());
                    println!("mse_sda2={:.6e}", report.mean_mse_sda2());
                }
            }
        }
        Command::Experiment { spec, out, seed, jobs } => {
            let mut s = ExperimentSpec::read(&spec)?;
            if let Some(seed) = seed {
                s.base.seed = seed;
            }
            let dir = out
                .or_else(|| s.output.clone())
                .ok_or_else(|| sda_core::Error::Format("no output directory: pass --out or set 'output'".into()))?;
            let result = par::with_jobs(jobs, || run_experiment(&s))?;
            for f in &result.failures {
                log::warn!("{} at {}={} repetition {}: {}", f.attack, result.sweep.column(), f.value, f.repetition, f.error);
            }
            result.write_dir(&dir, &s)?;
            eprintln!("wrote {} rows to {}", result.rows.len(), dir.join("results.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
