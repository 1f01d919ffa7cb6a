//! Run configuration: a TOML file, overlaid by command-line flags, resolved
//! into a validated [`RunConfig`].

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pdmix::sampler::InitStrategy;
use pdmix::postproc::SelectionMode;
use pdmix::{PriorPreset, Priors, SamplerConfig, Tuning, WeightMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// How the kernel scale `κ` is fixed: a number, or a multiple of the mean
/// design weight `w̄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaRule {
    Absolute(f64),
    MeanWeight(f64),
}

impl KappaRule {
    pub fn resolve(self, mean_weight: f64) -> f64 {
        match self {
            KappaRule::Absolute(k) => k,
            KappaRule::MeanWeight(m) => m * mean_weight,
        }
    }
}

impl Default for KappaRule {
    fn default() -> Self {
        KappaRule::Absolute(1.0)
    }
}

impl fmt::Display for KappaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KappaRule::Absolute(k) => write!(f, "{k}"),
            KappaRule::MeanWeight(m) => write!(f, "{m}*wbar"),
        }
    }
}

fn positive(x: f64, text: &str) -> Result<f64, String> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("kappa rule {text:?} must give a positive value"))
    }
}

impl FromStr for KappaRule {
    type Err = String;

    /// Accepts `2.5`, `wbar`, `2*wbar`, `wbar*2` and `wbar/15`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let num = |x: &str| x.parse::<f64>().map_err(|_| format!("cannot read kappa rule {s:?}"));
        if t == "wbar" {
            return Ok(KappaRule::MeanWeight(1.0));
        }
        if let Some(k) = t.strip_suffix("*wbar") {
            return Ok(KappaRule::MeanWeight(positive(num(k)?, s)?));
        }
        if let Some(k) = t.strip_prefix("wbar*") {
            return Ok(KappaRule::MeanWeight(positive(num(k)?, s)?));
        }
        if let Some(k) = t.strip_prefix("wbar/") {
            return Ok(KappaRule::MeanWeight(1.0 / positive(num(k)?, s)?));
        }
        Ok(KappaRule::Absolute(positive(num(&t)?, s)?))
    }
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum KappaText {
    Number(f64),
    Text(String),
}

impl Serialize for KappaRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            KappaRule::Absolute(k) => KappaText::Number(*k),
            KappaRule::MeanWeight(_) => KappaText::Text(self.to_string()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for KappaRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match KappaText::deserialize(d)? {
            KappaText::Number(k) => positive(k, &k.to_string()).map(KappaRule::Absolute),
            KappaText::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// A named variance preset or user-supplied constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    A,
    B,
    C,
    #[serde(rename = "custom")]
    Custom,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Preset::A),
            "b" => Ok(Preset::B),
            "c" => Ok(Preset::C),
            "custom" => Ok(Preset::Custom),
            _ => Err(format!("unknown prior preset {s:?}; expected A, B, C or custom")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceFile {
    pub d0_z: Option<f64>,
    pub d1_z: Option<f64>,
    pub d0_mu: Option<f64>,
    pub d1_mu: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdFile {
    pub alpha: Option<f64>,
    pub d0_a: Option<f64>,
    pub d1_a: Option<f64>,
    pub d0_b: Option<f64>,
    pub d1_b: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningFile {
    pub phi_sigma: Option<f64>,
    pub phi_rho: Option<f64>,
    pub phi_b: Option<f64>,
}

/// Everything a config file may set. Every field is optional here;
/// [`resolve`] fills defaults and reports what is missing.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub weight_column: Option<String>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thinning: Option<usize>,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub threads: Option<usize>,
    pub weight_mode: Option<WeightMode>,
    pub kappa: Option<KappaRule>,
    pub preset: Option<Preset>,
    /// Variance constants, read only with `preset = "custom"`.
    pub custom: Option<VarianceFile>,
    /// Overrides of the Poisson–Dirichlet hyperprior constants.
    pub pd: Option<PdFile>,
    pub tuning: Option<TuningFile>,
    pub selection: Option<SelectionMode>,
    pub init: Option<InitStrategy>,
    pub pool: Option<bool>,
    pub similarity_csv: Option<bool>,
    pub check_invariants: Option<bool>,
}

impl ConfigFile {
    /// Read a TOML file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut file: ConfigFile =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut file.data, &mut file.schema, &mut file.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(file)
    }

    /// Fields set in `top` win over fields set here.
    pub fn overlay(self, top: ConfigFile) -> ConfigFile {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigFile { $($f: top.$f.or(self.$f),)* } };
        }
        pick!(
            data, schema, output, weight_column, iterations, burn_in, thinning, seed, chains, threads,
            weight_mode, kappa, preset, custom, pd, tuning, selection, init, pool, similarity_csv,
            check_invariants
        )
    }
}

/// Fully validated run settings with presets expanded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub output: PathBuf,
    pub weight_column: Option<String>,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub chains: usize,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub weight_mode: WeightMode,
    pub kappa: KappaRule,
    pub preset: Preset,
    pub priors: Priors,
    pub tuning: Tuning,
    pub selection: SelectionMode,
    pub init: InitStrategy,
    /// Also pool the stored partitions of every chain.
    pub pool: bool,
    pub similarity_csv: bool,
    pub check_invariants: bool,
}

impl RunConfig {
    /// Sampler settings for chain `chain`; chains share the seed and differ
    /// in rng stream.
    pub fn sampler(&self, chain: usize, kappa: f64) -> SamplerConfig {
        SamplerConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thinning: self.thinning,
            kappa,
            seed: self.seed,
            stream: chain as u64,
            weight_mode: self.weight_mode,
            priors: self.priors,
            tuning: self.tuning,
            check_invariants: self.check_invariants,
            init: self.init,
        }
    }
}

fn required<T>(v: Option<T>, name: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Usage(format!("missing field `{name}`")))
}

/// Fill defaults, expand the preset and validate.
pub fn resolve(file: ConfigFile) -> CliResult<RunConfig> {
    let preset = file.preset.unwrap_or(Preset::C);
    let mut priors = match preset {
        Preset::A => PriorPreset::A.priors(),
        Preset::B => PriorPreset::B.priors(),
        Preset::C => PriorPreset::C.priors(),
        Preset::Custom => {
            let c = required(file.custom, "custom")?;
            Priors {
                d0_z: required(c.d0_z, "custom.d0_z")?,
                d1_z: required(c.d1_z, "custom.d1_z")?,
                d0_mu: required(c.d0_mu, "custom.d0_mu")?,
                d1_mu: required(c.d1_mu, "custom.d1_mu")?,
                ..PriorPreset::C.priors()
            }
        }
    };
    if preset != Preset::Custom && file.custom.is_some() {
        return Err(CliError::Usage(format!(
            "[custom] variance constants need preset = \"custom\", not {preset:?}"
        )));
    }
    let pd = file.pd.unwrap_or_default();
    priors.alpha = pd.alpha.unwrap_or(priors.alpha);
    priors.d0_a = pd.d0_a.unwrap_or(priors.d0_a);
    priors.d1_a = pd.d1_a.unwrap_or(priors.d1_a);
    priors.d0_b = pd.d0_b.unwrap_or(priors.d0_b);
    priors.d1_b = pd.d1_b.unwrap_or(priors.d1_b);

    let t = file.tuning.unwrap_or_default();
    let defaults = Tuning::default();
    let tuning = Tuning {
        phi_sigma: t.phi_sigma.unwrap_or(defaults.phi_sigma),
        phi_rho: t.phi_rho.unwrap_or(defaults.phi_rho),
        phi_b: t.phi_b.unwrap_or(defaults.phi_b),
        ..defaults
    };

    let sampler = SamplerConfig::default();
    let config = RunConfig {
        data: required(file.data, "data")?,
        schema: required(file.schema, "schema")?,
        output: file.output.unwrap_or_else(|| PathBuf::from("pdmix-out")),
        weight_column: file.weight_column,
        iterations: file.iterations.unwrap_or(sampler.iterations),
        burn_in: file.burn_in.unwrap_or(sampler.burn_in),
        thinning: file.thinning.unwrap_or(sampler.thinning),
        seed: file.seed.unwrap_or(0),
        chains: file.chains.unwrap_or(1),
        threads: file.threads.unwrap_or(0),
        weight_mode: file.weight_mode.unwrap_or(WeightMode::Ignore),
        kappa: file.kappa.unwrap_or_default(),
        preset,
        priors,
        tuning,
        selection: file.selection.unwrap_or_default(),
        init: file.init.unwrap_or_default(),
        pool: file.pool.unwrap_or(false),
        similarity_csv: file.similarity_csv.unwrap_or(false),
        check_invariants: file.check_invariants.unwrap_or(false),
    };
    if config.chains == 0 {
        return Err(CliError::Usage("chains must be at least 1".into()));
    }
    if config.weight_mode == WeightMode::Design && config.weight_column.is_none() {
        return Err(CliError::Usage("weight_mode = \"design\" needs a weight_column".into()));
    }
    // κ itself is checked once w̄ is known
    config.sampler(0, 1.0).validate()?;
    Ok(config)
}

/// Read and resolve a config file on its own.
pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    resolve(ConfigFile::read(path)?)
}
