use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdmix::postproc::SelectionMode;
use pdmix::sampler::InitStrategy;
use pdmix::WeightMode;
use pdmix_cli::bench::{bench_command, parse_presets, parse_scenarios, BenchOptions};
use pdmix_cli::run::{read_manifest, run_command};
use pdmix_cli::summarize::{summarize_command, validate_command};
use pdmix_cli::{resolve, CliError, CliResult, ConfigFile, KappaRule, Preset, RunConfig};

/// Clustering of mixed-type survey data with a Poisson–Dirichlet mixture of
/// latent Gaussians.
#[derive(Parser)]
#[command(name = "pdmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one or more chains and write the output directory.
    Run {
        #[command(flatten)]
        flags: RunFlags,
        /// Replay the configuration stored in a run manifest.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
    /// Run simulated scenarios with the study settings.
    Bench(BenchFlags),
    /// Reselect and profile the partitions of a finished run.
    Summarize {
        /// Output directory of the run.
        #[arg(long)]
        run: PathBuf,
        /// Chain to summarise; all chains are pooled when omitted.
        #[arg(long)]
        chain: Option<usize>,
        #[arg(long, value_parser = parse_selection)]
        selection: Option<SelectionMode>,
        /// Write the summary table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the configuration, schema and data without sampling.
    Validate {
        #[command(flatten)]
        flags: RunFlags,
    },
}

/// Flags mirror the config file; they win over it.
#[derive(Args)]
struct RunFlags {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    weight_column: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thinning: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    /// Worker threads for the chains (0: one per core).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = parse_weight_mode)]
    weight_mode: Option<WeightMode>,
    /// A number, or a multiple of the mean weight such as `2*wbar` or `wbar/15`.
    #[arg(long)]
    kappa: Option<KappaRule>,
    /// A, B, C, or custom (constants from the config file).
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long, value_parser = parse_selection)]
    selection: Option<SelectionMode>,
    #[arg(long, value_parser = parse_init)]
    init: Option<InitStrategy>,
    /// Also post-process the partitions of all chains together.
    #[arg(long)]
    pool: bool,
    /// Also write the similarity matrix as CSV.
    #[arg(long)]
    similarity_csv: bool,
    /// Verify structural invariants after every sweep.
    #[arg(long)]
    check_invariants: bool,
}

#[derive(Args)]
struct BenchFlags {
    /// Scenario list such as `I,III`, or `study1`, `study2`, `all`.
    #[arg(long, default_value = "study1")]
    scenario: String,
    /// Preset list such as `A,C`, or `all`.
    #[arg(long, default_value = "all")]
    preset: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short, default_value = "pdmix-bench")]
    output: PathBuf,
    #[arg(long, default_value_t = 4700)]
    iterations: usize,
    #[arg(long, default_value_t = 200)]
    burn_in: usize,
    #[arg(long, default_value_t = 3)]
    thinning: usize,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    check_invariants: bool,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_selection(s: &str) -> Result<SelectionMode, String> {
    parse_enum(s)
}

fn parse_weight_mode(s: &str) -> Result<WeightMode, String> {
    parse_enum(s)
}

fn parse_init(s: &str) -> Result<InitStrategy, String> {
    parse_enum(s)
}

impl RunFlags {
    fn resolve(self) -> CliResult<RunConfig> {
        let base = match &self.config {
            Some(path) => ConfigFile::read(path)?,
            None => ConfigFile::default(),
        };
        let top = ConfigFile {
            data: self.data,
            schema: self.schema,
            output: self.output,
            weight_column: self.weight_column,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thinning: self.thinning,
            seed: self.seed,
            chains: self.chains,
            threads: self.threads,
            weight_mode: self.weight_mode,
            kappa: self.kappa,
            preset: self.preset,
            selection: self.selection,
            init: self.init,
            pool: self.pool.then_some(true),
            similarity_csv: self.similarity_csv.then_some(true),
            check_invariants: self.check_invariants.then_some(true),
            ..ConfigFile::default()
        };
        resolve(base.overlay(top))
    }
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Run { flags, manifest } => {
            let config = match manifest {
                Some(path) => {
                    let mut config = read_manifest(&path)?.config;
                    if let Some(out) = flags.output {
                        config.output = out;
                    }
                    config
                }
                None => flags.resolve()?,
            };
            let m = run_command(&config)?;
            for c in &m.chains {
                println!(
                    "chain {}: modal r = {}, reported r = {}, HM = {}, mean a = {:.4}, {:.1}s",
                    c.chain, c.reported.modal_r, c.reported.selection.r, c.reported.hm, c.mean_a, c.elapsed_secs
                );
            }
            if let Some(p) = &m.pooled {
                println!("pooled: modal r = {}, reported r = {}, HM = {}", p.modal_r, p.selection.r, p.hm);
            }
            println!("outputs in {}", config.output.display());
        }
        Command::Bench(b) => {
            let opts = BenchOptions {
                scenarios: parse_scenarios(&b.scenario).map_err(CliError::Usage)?,
                presets: parse_presets(&b.preset).map_err(CliError::Usage)?,
                seed: b.seed,
                output: b.output,
                iterations: b.iterations,
                burn_in: b.burn_in,
                thinning: b.thinning,
                threads: b.threads,
                check_invariants: b.check_invariants,
            };
            println!("scenario,preset,modal_r,selected_r,mean_a,mean_b,seconds");
            for r in bench_command(&opts)? {
                println!(
                    "{},{},{},{},{:.4},{:.4},{:.1}",
                    r.scenario, r.preset, r.modal_r, r.selected_r, r.mean_a, r.mean_b, r.elapsed_secs
                );
            }
        }
        Command::Summarize {
            run,
            chain,
            selection,
            out,
        } => {
            let (reported, csv) = summarize_command(&run, chain, selection)?;
            eprintln!(
                "selection {:?}: draw {}, r = {}, HM = {}",
                reported.mode, reported.selection.index, reported.selection.r, reported.hm
            );
            match out {
                Some(path) => pdmix_cli::data::write_text(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Validate { flags } => println!("{}", validate_command(&flags.resolve()?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
