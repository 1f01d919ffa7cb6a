//! The `run` verb: load, sample every chain, post-process and write the
//! output directory.
//!
//! Layout of the output directory:
//!
//! ```text
//! manifest.json            resolved config, input hashes, per-chain results
//! chain-<k>/trace.csv      iteration, r, a, b, free variances, base variances
//! chain-<k>/partitions.csv one stored partition per row
//! chain-<k>/histogram.csv  posterior probability of each cluster count
//! chain-<k>/similarity.bin n as u64 LE, then n² f64 LE row-major
//! chain-<k>/selected.csv   record, cluster of the reported partition
//! chain-<k>/summary.csv    weighted profile of the reported partition
//! chain-<k>/checkpoint.json final sampler state
//! pooled/...               the same post-processing over all chains
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use pdmix::postproc::{
    cluster_summary, dahl_select, expand_variables, hm_measure, min_hm_select, similarity, Expanded, Selection,
    SelectionMode, SimilarityMatrix,
};
use pdmix::sampler::{Chain, Checkpoint};
use pdmix::schema::validate_dataset;
use pdmix::{ChainOutput, Dataset, Schema};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::{read_dataset, read_schema, write_text};
use crate::error::{CliError, CliResult};

/// Schema and data as loaded for a run.
pub struct Inputs {
    pub schema: Schema,
    pub dataset: Dataset,
}

/// Read and validate the schema and data named in `config`.
pub fn load_inputs(config: &RunConfig) -> CliResult<Inputs> {
    let schema = read_schema(&config.schema)?;
    let dataset = read_dataset(&config.data, &schema, config.weight_column.as_deref())?;
    let issues = validate_dataset(&dataset, &schema);
    if !issues.is_empty() {
        let mut msg = format!("{} data issue(s):", issues.len());
        for i in issues.iter().take(20) {
            let _ = write!(msg, "\n  {i}");
        }
        return Err(CliError::Data(msg));
    }
    Ok(Inputs { schema, dataset })
}

/// Post-processed result of one set of stored partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reported {
    pub mode: SelectionMode,
    pub selection: Selection,
    /// Heterogeneity measure of the reported partition.
    pub hm: f64,
    pub modal_r: usize,
    pub histogram: Vec<f64>,
}

/// Similarity matrix, selection and heterogeneity of `partitions`.
pub fn report(
    partitions: &[Vec<u32>],
    expanded: &Expanded,
    weights: &[f64],
    mode: SelectionMode,
) -> CliResult<(SimilarityMatrix, Reported)> {
    let sim = similarity(partitions)?;
    let selection = match mode {
        SelectionMode::Dahl => dahl_select(partitions, &sim)?,
        SelectionMode::MinHm => min_hm_select(partitions, expanded, weights)?,
    };
    let hm = hm_measure(&selection.labels, expanded, weights);
    let histogram = histogram(partitions);
    let modal_r = modal(&histogram);
    Ok((
        sim,
        Reported {
            mode,
            selection,
            hm,
            modal_r,
            histogram,
        },
    ))
}

/// Probability of each cluster count, indexed by `r`.
pub fn histogram(partitions: &[Vec<u32>]) -> Vec<f64> {
    let rs: Vec<usize> = partitions.iter().map(|p| pdmix::postproc::cluster_count(p)).collect();
    let max = rs.iter().copied().max().unwrap_or(0);
    let mut h = vec![0.0; max + 1];
    for r in &rs {
        h[*r] += 1.0;
    }
    let total = rs.len().max(1) as f64;
    h.iter_mut().for_each(|x| *x /= total);
    h
}

/// Smallest `r` with the largest probability.
pub fn modal(histogram: &[f64]) -> usize {
    let mut best = 0;
    for (r, &p) in histogram.iter().enumerate() {
        if p > histogram[best] {
            best = r;
        }
    }
    best
}

pub fn histogram_csv(h: &[f64]) -> String {
    let mut s = String::from("r,probability\n");
    for (r, p) in h.iter().enumerate().skip(1) {
        let _ = writeln!(s, "{r},{p}");
    }
    s
}

pub fn trace_csv(out: &ChainOutput) -> String {
    let mut s = String::from("iteration,r,a,b");
    for j in 0..out.sigma2.first().map_or(0, Vec::len) {
        let _ = write!(s, ",sigma2_{j}");
    }
    for l in 0..out.sigma2_mu.first().map_or(0, Vec::len) {
        let _ = write!(s, ",sigma2_mu_{l}");
    }
    s.push('\n');
    for k in 0..out.partitions.len() {
        let _ = write!(s, "{},{},{},{}", out.kept_iterations[k], out.r[k], out.a[k], out.b[k]);
        for v in out.sigma2[k].iter().chain(&out.sigma2_mu[k]) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn partitions_csv(iterations: &[usize], partitions: &[Vec<u32>]) -> String {
    let n = partitions.first().map_or(0, Vec::len);
    let mut s = String::from("iteration");
    for i in 0..n {
        let _ = write!(s, ",record_{i}");
    }
    s.push('\n');
    for (t, p) in iterations.iter().zip(partitions) {
        let _ = write!(s, "{t}");
        for l in p {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
    }
    s
}

/// Parse a file written by [`partitions_csv`].
pub fn read_partitions(path: &Path) -> CliResult<(Vec<usize>, Vec<Vec<u32>>)> {
    let bad = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut iterations = Vec::new();
    let mut partitions = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let mut cells = record.iter().map(|c| c.parse::<u64>());
        let t = cells.next().and_then(|c| c.ok()).ok_or_else(|| bad("missing iteration".into()))?;
        iterations.push(t as usize);
        partitions.push(
            cells
                .map(|c| c.ok().and_then(|x| u32::try_from(x).ok()))
                .collect::<Option<Vec<u32>>>()
                .ok_or_else(|| bad("unreadable label".into()))?,
        );
    }
    Ok((iterations, partitions))
}

pub fn selected_csv(labels: &[u32]) -> String {
    let mut s = String::from("record,cluster\n");
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(s, "{i},{l}");
    }
    s
}

fn write_similarity(dir: &Path, sim: &SimilarityMatrix, csv: bool) -> CliResult<()> {
    let path = dir.join("similarity.bin");
    let mut bytes = Vec::with_capacity(8 + 8 * sim.n() * sim.n());
    sim.write_binary(&mut bytes).map_err(|e| CliError::io(&path, e))?;
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    if csv {
        write_text(&dir.join("similarity.csv"), &sim.to_csv())?;
    }
    Ok(())
}

/// Write the post-processing outputs of one set of partitions into `dir`.
pub fn write_report(
    dir: &Path,
    iterations: &[usize],
    partitions: &[Vec<u32>],
    inputs: &Inputs,
    expanded: &Expanded,
    config: &RunConfig,
) -> CliResult<Reported> {
    let weights = inputs.dataset.weights();
    let (sim, reported) = report(partitions, expanded, weights, config.selection)?;
    write_text(&dir.join("partitions.csv"), &partitions_csv(iterations, partitions))?;
    write_text(&dir.join("histogram.csv"), &histogram_csv(&reported.histogram))?;
    write_similarity(dir, &sim, config.similarity_csv)?;
    write_text(&dir.join("selected.csv"), &selected_csv(&reported.selection.labels))?;
    let summary = cluster_summary(&reported.selection.labels, &inputs.dataset, &inputs.schema)?;
    write_text(&dir.join("summary.csv"), &summary.to_csv())?;
    Ok(reported)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain: usize,
    pub seed: u64,
    pub stream: u64,
    pub elapsed_secs: f64,
    pub stored_draws: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Accepted/proposed for variance, correlation, a and b moves.
    pub acceptance: [f64; 4],
    pub reported: Reported,
}

/// Machine-readable record of a run; its `config` reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub kappa: f64,
    pub data_sha256: String,
    pub schema_sha256: String,
    pub records: usize,
    pub latent_dim: usize,
    pub chains: Vec<ChainRecord>,
    pub pooled: Option<Reported>,
    pub total_secs: f64,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn rate((acc, total): (usize, usize)) -> f64 {
    if total == 0 {
        0.0
    } else {
        acc as f64 / total as f64
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Run every chain of `config`, write the output directory and return the
/// manifest.
pub fn run_command(config: &RunConfig) -> CliResult<Manifest> {
    let start = Instant::now();
    let inputs = load_inputs(config)?;
    let kappa = config.kappa.resolve(inputs.dataset.mean_weight());
    config.sampler(0, kappa).validate()?;
    info!(
        "{} records, {} variables, latent dimension {}, kappa {kappa}",
        inputs.dataset.n(),
        inputs.schema.p(),
        inputs.schema.q()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<CliResult<(ChainOutput, Checkpoint)>> = pool.install(|| {
        (0..config.chains)
            .into_par_iter()
            .map(|k| {
                let mut chain = Chain::new(&inputs.schema, &inputs.dataset, config.sampler(k, kappa))?;
                let out = chain.run()?;
                info!("chain {k} finished in {:.1}s", out.elapsed_secs);
                Ok((out, chain.checkpoint()))
            })
            .collect()
    });

    // all writes happen here, on the coordinating thread
    let out_dir = &config.output;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let expanded = expand_variables(&inputs.dataset, &inputs.schema);
    let mut records = Vec::with_capacity(config.chains);
    let mut outputs = Vec::with_capacity(config.chains);
    for (k, result) in results.into_iter().enumerate() {
        let (out, checkpoint) = result?;
        let dir = chain_dir(out_dir, k);
        write_text(&dir.join("trace.csv"), &trace_csv(&out))?;
        let reported = write_report(&dir, &out.kept_iterations, &out.partitions, &inputs, &expanded, config)?;
        let json = serde_json::to_string(&checkpoint).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_text(&dir.join("checkpoint.json"), &json)?;
        info!(
            "chain {k}: modal r {}, reported r {}, HM {}",
            reported.modal_r, reported.selection.r, reported.hm
        );
        let acc = &out.acceptance;
        records.push(ChainRecord {
            chain: k,
            seed: config.seed,
            stream: k as u64,
            elapsed_secs: out.elapsed_secs,
            stored_draws: out.partitions.len(),
            mean_a: mean(&out.a),
            mean_b: mean(&out.b),
            acceptance: [rate(acc.variance), rate(acc.correlation), rate(acc.a), rate(acc.b)],
            reported,
        });
        outputs.push(out);
    }

    let pooled = if config.pool {
        let iterations: Vec<usize> = outputs.iter().flat_map(|o| o.kept_iterations.iter().copied()).collect();
        let partitions: Vec<Vec<u32>> = outputs.iter().flat_map(|o| o.partitions.iter().cloned()).collect();
        Some(write_report(&out_dir.join("pooled"), &iterations, &partitions, &inputs, &expanded, config)?)
    } else {
        None
    };

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        kappa,
        data_sha256: sha256_file(&config.data)?,
        schema_sha256: sha256_file(&config.schema)?,
        records: inputs.dataset.n(),
        latent_dim: inputs.schema.q(),
        chains: records,
        pooled,
        total_secs: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(&out_dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

pub fn chain_dir(out: &Path, k: usize) -> PathBuf {
    out.join(format!("chain-{k}"))
}

pub fn read_manifest(path: &Path) -> CliResult<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_and_mode() {
        let parts = vec![vec![0, 0, 1], vec![0, 1, 2], vec![0, 0, 1], vec![0, 0, 0]];
        let h = histogram(&parts);
        assert_eq!(h, vec![0.0, 0.25, 0.5, 0.25]);
        assert_eq!(modal(&h), 2);
        // ties go to the smaller count
        assert_eq!(modal(&[0.0, 0.5, 0.5]), 1);
        assert_eq!(histogram_csv(&h), "r,probability\n1,0.25\n2,0.5\n3,0.25\n");
    }

    #[test]
    fn partitions_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let parts = vec![vec![0, 1, 1, 2], vec![0, 0, 0, 0]];
        write_text(&p, &partitions_csv(&[203, 206], &parts)).unwrap();
        assert_eq!(read_partitions(&p).unwrap(), (vec![203, 206], parts));
    }
}
