//! The `summarize` and `validate` verbs.

use std::path::Path;

use log::warn;
use pdmix::postproc::{cluster_summary, expand_variables, SelectionMode};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::run::{chain_dir, load_inputs, read_manifest, read_partitions, report, sha256_file, Reported};

/// Reselect and profile the stored partitions of a finished run. `chain`
/// `None` pools every chain. Returns the selection and the summary CSV.
pub fn summarize_command(
    run_dir: &Path,
    chain: Option<usize>,
    mode: Option<SelectionMode>,
) -> CliResult<(Reported, String)> {
    let manifest = read_manifest(&run_dir.join("manifest.json"))?;
    let config = &manifest.config;
    if sha256_file(&config.data)? != manifest.data_sha256 {
        warn!("{} changed since the run", config.data.display());
    }
    let inputs = load_inputs(config)?;
    let chains: Vec<usize> = match chain {
        Some(k) if k >= config.chains => {
            return Err(CliError::Usage(format!("run has {} chain(s), no chain {k}", config.chains)))
        }
        Some(k) => vec![k],
        None => (0..config.chains).collect(),
    };
    let mut partitions = Vec::new();
    for k in chains {
        partitions.extend(read_partitions(&chain_dir(run_dir, k).join("partitions.csv"))?.1);
    }
    let expanded = expand_variables(&inputs.dataset, &inputs.schema);
    let (_, reported) = report(
        &partitions,
        &expanded,
        inputs.dataset.weights(),
        mode.unwrap_or(config.selection),
    )?;
    let summary = cluster_summary(&reported.selection.labels, &inputs.dataset, &inputs.schema)?;
    Ok((reported, summary.to_csv()))
}

/// Load and check the inputs of `config` without sampling.
pub fn validate_command(config: &RunConfig) -> CliResult<String> {
    let inputs = load_inputs(config)?;
    let kappa = config.kappa.resolve(inputs.dataset.mean_weight());
    config.sampler(0, kappa).validate()?;
    Ok(format!(
        "ok: {} records, {} variables, latent dimension {}, mean weight {}, kappa {kappa}",
        inputs.dataset.n(),
        inputs.schema.p(),
        inputs.schema.q(),
        inputs.dataset.mean_weight()
    ))
}
