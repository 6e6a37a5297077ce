use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use limitflow_cli::config::RunConfig;
use limitflow_cli::{configure_workers, registry, run, RunError, WORKERS_ENV};

#[derive(Debug, Parser)]
#[command(name = "limitflow", version, about = "Numerical checks of inductive-limit dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of the ChaCha8 generator; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Tolerance override for every experiment run that takes one.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the experiment ids.
    List,
    /// Print an experiment's config block and default tolerance.
    Describe { id: String },
    /// Run the experiment named by the config key `experiment`.
    Run,
    /// Run every experiment.
    Suite,
    /// Spin-cube and wavelet embedding exactness.
    Diagnostics,
    /// Ensemble convergence of a seeded generator net.
    EvolutionCheck,
    /// Trotter product error against step count.
    Trotter,
    /// Heat, harmonic-oscillator and Lindblad classical limits; selected by `classical_limit.kind`.
    ClassicalLimit,
    /// Mean-field bracket, flip generator and gradient checks.
    MeanField,
    /// Transverse Ising chain limits and boundary conditions.
    SpinChain,
    /// Fermion chain renormalization flow. The Thompson check runs via `run` or `suite`.
    FermionRg,
}

fn describe(id: &str) -> Result<String, RunError> {
    let entry = registry::lookup(id).or_else(|e| {
        // Subcommand names describe their first id.
        registry::resolve(id).map(|ids| registry::lookup(ids[0]).expect("resolved ids exist")).map_err(|_| e)
    })?;
    let defaults = toml::Value::try_from(RunConfig::default()).map_err(|e| RunError::Config(e.to_string()))?;
    let block = defaults.get(entry.section).cloned().unwrap_or(toml::Value::Table(Default::default()));
    let mut table = toml::map::Map::new();
    table.insert(entry.section.to_string(), block);
    let schema = toml::to_string_pretty(&toml::Value::Table(table)).map_err(|e| RunError::Config(e.to_string()))?;
    let tol = entry.default_tol.map_or("none".to_string(), |t| format!("{t:e}"));
    Ok(format!(
        "id: {}\nsubcommand: {}\nsummary: {}\ndefault tolerance: {tol}\n\n{schema}",
        entry.id, entry.command, entry.summary
    ))
}

fn execute(cli: Cli) -> Result<bool, RunError> {
    match &cli.command {
        Command::List => {
            registry::ids().iter().for_each(|id| println!("{id}"));
            return Ok(true);
        }
        Command::Describe { id } => {
            print!("{}", describe(id)?);
            return Ok(true);
        }
        _ => {}
    }
    configure_workers(std::env::var(WORKERS_ENV).ok().as_deref())?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    let ids: Vec<&'static str> = match &cli.command {
        Command::Run => {
            let name = cfg
                .experiment
                .clone()
                .ok_or_else(|| RunError::Config("`run` needs the config key `experiment`".into()))?;
            registry::resolve(&name)?
        }
        Command::Suite => registry::ids(),
        Command::Diagnostics => registry::resolve("diagnostics")?,
        Command::EvolutionCheck => registry::resolve("evolution-check")?,
        Command::Trotter => registry::resolve("trotter")?,
        Command::ClassicalLimit => {
            use limitflow_cli::config::ClassicalKind;
            match cfg.classical_limit.kind {
                ClassicalKind::All => registry::resolve("classical-limit")?,
                ClassicalKind::Heat => vec!["classical-limit.heat"],
                ClassicalKind::Ho => vec!["classical-limit.ho"],
                ClassicalKind::Lindblad => vec!["classical-limit.lindblad"],
            }
        }
        Command::MeanField => registry::resolve("mean-field")?,
        Command::SpinChain => registry::resolve("spin-chain")?,
        Command::FermionRg => registry::resolve("fermion-rg")?,
        Command::List | Command::Describe { .. } => unreachable!(),
    };
    if let Some(tol) = cli.tol {
        for id in &ids {
            if registry::lookup(id)?.default_tol.is_some() {
                cfg.tolerances.insert(id.to_string(), tol);
            }
        }
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("limitflow-out"));
    let (manifest, outcomes) = run(&cfg, &ids, &out)?;
    for o in &outcomes {
        let mark = if o.verdict.pass { "PASS" } else { "FAIL" };
        println!("{mark} {} ({:.1} s)", o.verdict.id, o.elapsed.as_secs_f64());
    }
    println!("manifest: {}", out.join("manifest.json").display());
    Ok(manifest.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
