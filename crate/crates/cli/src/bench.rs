//! The `bench` verb: simulated scenarios run with the study settings.
//!
//! Each scenario/preset pair gets a bundle directory holding the generated
//! `data.csv` and `schema.toml`, a `config.toml` that replays the run with
//! `pdmix run`, and the usual run outputs. `histograms.csv` at the top
//! collects every cluster-count histogram.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use pdmix::simgen::{generate, Scenario, ScenarioSpec};
use pdmix::PriorPreset;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{KappaRule, Preset, RunConfig};
use crate::data::{write_dataset, write_schema, write_text};
use crate::error::{CliError, CliResult};
use crate::run::{run_command, Manifest};

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub scenarios: Vec<Scenario>,
    pub presets: Vec<PriorPreset>,
    pub seed: u64,
    pub output: PathBuf,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub threads: usize,
    pub check_invariants: bool,
}

/// Headline numbers of one bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub scenario: Scenario,
    pub preset: PriorPreset,
    pub seed: u64,
    pub dir: PathBuf,
    pub modal_r: usize,
    pub selected_r: usize,
    pub histogram: Vec<f64>,
    pub mean_a: f64,
    pub mean_b: f64,
    pub elapsed_secs: f64,
}

fn preset(p: PriorPreset) -> Preset {
    match p {
        PriorPreset::A => Preset::A,
        PriorPreset::B => Preset::B,
        PriorPreset::C => Preset::C,
    }
}

/// Generate one scenario, write its inputs and run it.
pub fn bench_one(scenario: Scenario, prior: PriorPreset, opts: &BenchOptions) -> CliResult<(BenchResult, Manifest)> {
    let sim = generate(&ScenarioSpec::new(scenario, opts.seed))?;
    let dir = bundle_dir(&opts.output, scenario, prior);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let data = dir.join("data.csv");
    let schema = dir.join("schema.toml");
    write_dataset(&data, &sim.dataset, &sim.schema)?;
    write_schema(&schema, &sim.specs)?;

    let config = RunConfig {
        data,
        schema,
        output: dir.clone(),
        weight_column: Some("weight".into()),
        iterations: opts.iterations,
        burn_in: opts.burn_in,
        thinning: opts.thinning,
        seed: opts.seed,
        chains: 1,
        threads: 1,
        weight_mode: sim.weight_mode,
        kappa: KappaRule::Absolute(sim.kappa),
        preset: preset(prior),
        priors: prior.priors(),
        tuning: Default::default(),
        selection: Default::default(),
        init: Default::default(),
        pool: false,
        similarity_csv: false,
        check_invariants: opts.check_invariants,
    };
    write_text(&dir.join("config.toml"), &replay_toml(&config))?;
    let manifest = run_command(&config)?;
    let chain = &manifest.chains[0];
    let result = BenchResult {
        scenario,
        preset: prior,
        seed: opts.seed,
        dir,
        modal_r: chain.reported.modal_r,
        selected_r: chain.reported.selection.r,
        histogram: chain.reported.histogram.clone(),
        mean_a: chain.mean_a,
        mean_b: chain.mean_b,
        elapsed_secs: chain.elapsed_secs,
    };
    info!(
        "scenario {scenario} prior {prior}: modal r {}, selected r {}, mean a {:.3}",
        result.modal_r, result.selected_r, result.mean_a
    );
    Ok((result, manifest))
}

/// A config file, relative to the bundle, that reruns `config`.
fn replay_toml(config: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "data = \"data.csv\"\nschema = \"schema.toml\"\noutput = \"replay\"");
    let _ = writeln!(s, "weight_column = \"weight\"");
    let _ = writeln!(
        s,
        "iterations = {}\nburn_in = {}\nthinning = {}\nseed = {}",
        config.iterations, config.burn_in, config.thinning, config.seed
    );
    let mode = serde_json::to_string(&config.weight_mode).unwrap_or_default();
    let _ = writeln!(s, "weight_mode = {mode}");
    let _ = writeln!(s, "kappa = \"{}\"", config.kappa);
    let _ = writeln!(s, "preset = \"{:?}\"", config.preset);
    if config.check_invariants {
        let _ = writeln!(s, "check_invariants = true");
    }
    s
}

/// Run the whole grid, one bundle per worker.
pub fn bench_command(opts: &BenchOptions) -> CliResult<Vec<BenchResult>> {
    let grid: Vec<(Scenario, PriorPreset)> = opts
        .scenarios
        .iter()
        .flat_map(|&s| opts.presets.iter().map(move |&p| (s, p)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<CliResult<(BenchResult, Manifest)>> =
        pool.install(|| grid.par_iter().map(|&(s, p)| bench_one(s, p, opts)).collect());
    let results = results
        .into_iter()
        .map(|r| r.map(|(b, _)| b))
        .collect::<CliResult<Vec<_>>>()?;
    write_text(&opts.output.join("histograms.csv"), &histograms_csv(&results))?;
    Ok(results)
}

pub fn histograms_csv(results: &[BenchResult]) -> String {
    let mut s = String::from("scenario,preset,r,probability\n");
    for b in results {
        for (r, p) in b.histogram.iter().enumerate().skip(1) {
            let _ = writeln!(s, "{},{},{r},{p}", b.scenario, b.preset);
        }
    }
    s
}

/// Parse `all`, `study1`, `study2` or a comma-separated list.
pub fn parse_scenarios(text: &str) -> Result<Vec<Scenario>, String> {
    match text.trim().to_ascii_lowercase().as_str() {
        "all" => return Ok(Scenario::ALL.to_vec()),
        "study1" => return Ok(vec![Scenario::I, Scenario::II, Scenario::III]),
        "study2" => return Ok(vec![Scenario::IV, Scenario::V, Scenario::VI]),
        _ => {}
    }
    text.split(',').map(|s| s.trim().parse().map_err(|e| format!("{e}"))).collect()
}

/// Parse `all` or a comma-separated list of A, B, C.
pub fn parse_presets(text: &str) -> Result<Vec<PriorPreset>, String> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(PriorPreset::ALL.to_vec());
    }
    text.split(',').map(|s| s.parse().map_err(|e| format!("{e}"))).collect()
}

pub fn bundle_dir(output: &Path, scenario: Scenario, prior: PriorPreset) -> PathBuf {
    output.join(format!("{scenario}-{prior}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_scenarios("study1").unwrap().len(), 3);
        assert_eq!(parse_scenarios("I, iv").unwrap(), vec![Scenario::I, Scenario::IV]);
        assert!(parse_scenarios("VII").is_err());
        assert_eq!(parse_presets("all").unwrap().len(), 3);
        assert_eq!(parse_presets("c").unwrap(), vec![PriorPreset::C]);
        assert!(parse_presets("D").is_err());
    }
}
