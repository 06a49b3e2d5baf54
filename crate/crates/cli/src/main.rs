//! `pdqrng`: simulate the generator, certify its output and check it.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdqrng::config::RunConfig;

/// Name of the configuration file looked up in `$PDQRNG_CONFIG_DIR`.
const CONFIG_FILE_NAME: &str = "pdqrng.toml";

#[derive(Debug, Parser)]
#[command(name = "pdqrng", version, about = "Phase-diffusion QRNG simulator, randomness metrology and test tools")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration. Defaults to $PDQRNG_CONFIG_DIR/pdqrng.toml when
    /// that file exists, otherwise the built-in measured defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// RNG seed; overrides `simulation.rng_seed` from the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    /// Write the resulting bits to stdout as headerless packed bytes, for
    /// piping into external test suites. Summaries move to stderr.
    #[arg(long, global = true)]
    pub stdout_raw: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full chain (laser pulses, comparator, parity extractor) and
    /// write bit files.
    Simulate(commands::SimulateArgs),
    /// Apply the parity extractor, distillation or block parity to a bit file.
    Extract(commands::ExtractArgs),
    /// Predictability table: combined noise, ε bound and freshness time per
    /// distrust level.
    Report(commands::ReportArgs),
    /// Two-point autocorrelation of a bit file as CSV.
    Autocorr(commands::AutocorrArgs),
    /// Run the built-in statistical test battery on a bit file.
    Battery(commands::BatteryArgs),
    /// Phase-dispersion scaling analysis of heterodyne traces.
    Heterodyne(commands::HeterodyneArgs),
    /// End-to-end throughput benchmark.
    Bench(commands::BenchArgs),
    /// Convert a bit file to an external test-suite format.
    Export(commands::ExportArgs),
}

fn load_config(global: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let path = match &global.config {
        Some(p) => Some(p.clone()),
        None => std::env::var_os("PDQRNG_CONFIG_DIR")
            .map(|d| PathBuf::from(d).join(CONFIG_FILE_NAME))
            .filter(|p| p.is_file()),
    };
    let mut config = match path {
        Some(p) => {
            log::info!("configuration from {}", p.display());
            RunConfig::load(&p).map_err(|e| anyhow::Error::new(e).context(format!("loading {}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.simulation.rng_seed = seed;
    }
    Ok(config)
}

/// 1 for configuration or usage errors, 2 for I/O and file format, 3 for
/// numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    use pdqrng::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::ConfigParse(_) | E::InvalidArgument(_) => 1,
                E::Io(_) | E::Format(_) => 2,
                E::Numerical(_) | E::FitNonConvergence { .. } | E::InsufficientData(_) => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
        if cause.is::<commands::UsageError>() {
            return 1;
        }
    }
    1
}

/// A closed downstream pipe (`pdqrng export ... | head`) is not a failure.
fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        let io = c
            .downcast_ref::<std::io::Error>()
            .or_else(|| match c.downcast_ref::<pdqrng::Error>() {
                Some(pdqrng::Error::Io(e)) => Some(e),
                _ => None,
            });
        io.is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(commands::UsageError("--threads must be ≥ 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let config = load_config(&cli.global)?;
    let g = &cli.global;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(g, &config, a),
        Command::Extract(a) => commands::extract(g, a),
        Command::Report(a) => commands::report(g, &config, a),
        Command::Autocorr(a) => commands::autocorr(g, &config, a),
        Command::Battery(a) => commands::battery(g, a),
        Command::Heterodyne(a) => commands::heterodyne(g, &config, a),
        Command::Bench(a) => commands::bench(g, &config, a),
        Command::Export(a) => commands::export(g, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_flag_is_documented_in_help() {
        let mut root = Cli::command();
        root.build();
        for sub in root.get_subcommands() {
            let mut sub = sub.clone();
            let help = sub.render_long_help().to_string();
            for arg in sub.get_arguments() {
                let Some(long) = arg.get_long() else { continue };
                assert!(help.contains(&format!("--{long}")), "{}: --{long} missing from help", sub.get_name());
                assert!(arg.get_help().is_some(), "{}: --{long} has no description", sub.get_name());
            }
        }
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        let cfg: anyhow::Error = pdqrng::Error::InvalidArgument("x".into()).into();
        let io: anyhow::Error = pdqrng::Error::Io(std::io::Error::other("x")).into();
        let num: anyhow::Error = pdqrng::Error::Numerical("x".into()).into();
        assert_eq!(exit_code(&cfg), 1);
        assert_eq!(exit_code(&io.context("reading")), 2);
        assert_eq!(exit_code(&num), 3);
    }
}
