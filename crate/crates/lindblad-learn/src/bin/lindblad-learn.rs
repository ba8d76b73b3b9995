use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use lindblad_learn::experiments::{
    cmd_chi_spectroscopy, cmd_condition_sweep, cmd_end_to_end, cmd_learn_coefficients,
    cmd_learn_structure, cmd_lowerbound, cmd_simulate, sweep_summary, ChiConfig, CoefficientConfig,
    EndToEndConfig, LowerboundConfig, RunSettings, SimulateConfig, StructureConfig, SweepConfig,
};
use lindblad_learn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lindblad-learn",
    version,
    about = "Learn sparse Lindbladians from simulated dynamics"
)]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// exact | noise | noise:EPS | sampled:SHOTS
    #[arg(long, global = true, default_value = "exact")]
    backend: String,
    /// Known SPAM retentions as rP,rM
    #[arg(long, global = true)]
    spam: Option<String>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chi rates and probe expectations of a model over a time grid
    Simulate(SimulateArgs),
    /// Learn the Hamiltonian and dissipator supports
    LearnStructure(StructureArgs),
    /// Learn coefficients on given candidate structures
    LearnCoefficients(CoefficientArgs),
    /// Structure learning followed by coefficient learning
    EndToEnd(EndToEndArgs),
    /// Conditioning factors of probe designs on lattice families
    ConditionSweep(SweepArgs),
    /// Chi time traces, derivatives and classifications
    ChiSpectroscopy(ChiArgs),
    /// Counting and mixing certificates for the lower-bound instances
    Lowerbound(LowerboundArgs),
}

#[derive(Args)]
struct ConfigFile {
    /// JSON configuration; replaces the command-specific flags
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    file: ConfigFile,
    #[arg(long, required_unless_present = "config")]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.5,1")]
    times: Vec<f64>,
    /// Probes as INPUT/OBSERVABLE, e.g. P:XI/ZI or +XI/YI
    #[arg(long, value_delimiter = ',')]
    probe: Vec<String>,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
}

#[derive(Args)]
struct StructureArgs {
    #[command(flatten)]
    file: ConfigFile,
    #[arg(long, required_unless_present = "config")]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    eta: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct CoefficientArgs {
    #[command(flatten)]
    file: ConfigFile,
    #[arg(long, required_unless_present = "config")]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    s_h: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    s_d: Option<Vec<String>>,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// probe | shadow
    #[arg(long, default_value = "probe")]
    mode: String,
}

#[derive(Args)]
struct EndToEndArgs {
    #[command(flatten)]
    file: ConfigFile,
    #[arg(long, required_unless_present = "config")]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    eta: f64,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value = "probe")]
    mode: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    file: ConfigFile,
    #[arg(long, value_delimiter = ',', default_value = "4,6,9,12")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    seeds: usize,
}

#[derive(Args)]
struct ChiArgs {
    #[command(flatten)]
    file: ConfigFile,
    #[arg(long, required_unless_present = "config")]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    eta: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args)]
struct LowerboundArgs {
    #[command(flatten)]
    file: ConfigFile,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    kappa: usize,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long, default_value_t = 4)]
    states: usize,
}

fn load_or<T: DeserializeOwned>(file: &ConfigFile, build: impl FnOnce() -> T) -> Result<T> {
    match &file.config {
        Some(path) => Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?),
        None => Ok(build()),
    }
}

fn model_path(m: Option<PathBuf>) -> PathBuf {
    m.expect("clap enforces --model when no config file is given")
}

fn parse_probe(s: &str) -> Result<(String, String)> {
    let (i, o) = s.split_once('/').ok_or_else(|| {
        Error::InvalidArgument(format!("probe {s:?} must look like INPUT/OBSERVABLE"))
    })?;
    Ok((i.to_string(), o.to_string()))
}

fn run(cli: Cli) -> Result<String> {
    let settings = RunSettings {
        seed: cli.seed,
        backend: cli.backend,
        spam: cli.spam,
        out: cli.out,
    };
    // Validate global settings before any work.
    settings.backend()?;
    settings.spam()?;
    Ok(match cli.command {
        Command::Simulate(a) => {
            let probes = a
                .probe
                .iter()
                .map(|s| parse_probe(s))
                .collect::<Result<Vec<_>>>()?;
            let cfg = load_or(&a.file, || SimulateConfig {
                model: model_path(a.model),
                times: a.times,
                probes,
                eps: a.eps,
                delta: a.delta,
            })?;
            format!("simulate: {} rows", cmd_simulate(&cfg, &settings)?.len())
        }
        Command::LearnStructure(a) => {
            let cfg = load_or(&a.file, || StructureConfig {
                model: model_path(a.model),
                eta: a.eta,
                delta: a.delta,
                m: a.m,
                lambda: a.lambda,
            })?;
            let r = cmd_learn_structure(&cfg, &settings)?;
            format!(
                "learn-structure: |S_D| = {}, |S_H| = {}, dissipator exact: {}, hamiltonian covered: {}",
                r.s_d_hat.len(),
                r.s_h_hat.len(),
                r.dissipator_exact,
                r.hamiltonian_covered
            )
        }
        Command::LearnCoefficients(a) => {
            let cfg = load_or(&a.file, || CoefficientConfig {
                model: model_path(a.model),
                s_h: a.s_h,
                s_d: a.s_d,
                eps: a.eps,
                delta: a.delta,
                mode: a.mode,
            })?;
            let r = cmd_learn_coefficients(&cfg, &settings)?;
            format!(
                "learn-coefficients: M = {}, nu = {:.4}, max error = {:.3e}",
                r.m_hat, r.estimate.nu, r.max_error
            )
        }
        Command::EndToEnd(a) => {
            let cfg = load_or(&a.file, || EndToEndConfig {
                model: model_path(a.model),
                eta: a.eta,
                eps: a.eps,
                delta: a.delta,
                m: a.m,
                mode: a.mode,
            })?;
            let r = cmd_end_to_end(&cfg, &settings)?;
            format!(
                "end-to-end: M = {}, max error = {:.3e}, false positives = {}",
                r.m_hat, r.max_error, r.false_positives
            )
        }
        Command::ConditionSweep(a) => {
            let cfg = load_or(&a.file, || SweepConfig {
                sizes: a.sizes,
                seeds: a.seeds,
            })?;
            let rows = cmd_condition_sweep(&cfg, &settings)?;
            let mut msg = String::from("condition-sweep:");
            for s in sweep_summary(&rows) {
                msg.push_str(&format!(
                    "\n  n = {:2}: nu in [{:.2}, {:.2}], median {:.2} over {} seeds",
                    s.n, s.nu_min, s.nu_max, s.nu_median, s.runs
                ));
            }
            msg
        }
        Command::ChiSpectroscopy(a) => {
            let cfg = load_or(&a.file, || ChiConfig {
                model: model_path(a.model),
                eta: a.eta,
                delta: a.delta,
                m: a.m,
            })?;
            let (rows, derivs) = cmd_chi_spectroscopy(&cfg, &settings)?;
            format!(
                "chi-spectroscopy: {} chi rows, {} derivative rows",
                rows.len(),
                derivs.len()
            )
        }
        Command::Lowerbound(a) => {
            let cfg = load_or(&a.file, || LowerboundConfig {
                n: a.n,
                kappa: a.kappa,
                times: a.times,
                states: a.states,
            })?;
            let r = cmd_lowerbound(&cfg, &settings)?;
            format!(
                "lowerbound: M = {}, N* = {:.3}, t0 = {:.5}, min count = {}",
                r.m_kappa, r.n_star, r.t0, r.min_count_null
            )
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: could not configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let start = Instant::now();
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            eprintln!("wall time: {:.3} s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
