use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use pdmix::postproc::{expand_variables, hm_measure, SelectionMode};
use pdmix::simgen::{generate, Scenario, ScenarioSpec};
use pdmix::PriorPreset;
use pdmix_cli::bench::{bench_one, BenchOptions};
use pdmix_cli::data::{read_dataset, read_schema, write_dataset, write_schema};
use pdmix_cli::run::{read_manifest, read_partitions, run_command};
use pdmix_cli::{parse_config, KappaRule, RunConfig};

fn bench_options(dir: &Path, iterations: usize) -> BenchOptions {
    BenchOptions {
        scenarios: vec![],
        presets: vec![],
        seed: 1,
        output: dir.to_path_buf(),
        iterations,
        burn_in: 200,
        thinning: 3,
        threads: 1,
        check_invariants: false,
    }
}

/// Write a scenario's data and schema and return a short-run config.
fn scenario_config(dir: &Path, scenario: Scenario, iterations: usize) -> RunConfig {
    let sim = generate(&ScenarioSpec::new(scenario, 3)).unwrap();
    let data = dir.join("data.csv");
    let schema = dir.join("schema.toml");
    write_dataset(&data, &sim.dataset, &sim.schema).unwrap();
    write_schema(&schema, &sim.specs).unwrap();
    fs::write(
        dir.join("run.toml"),
        format!(
            "data = \"data.csv\"\nschema = \"schema.toml\"\noutput = \"out\"\nweight_column = \"weight\"\n\
             iterations = {iterations}\nburn_in = 100\nthinning = 2\nseed = 11\nkappa = {}\n\
             weight_mode = \"{}\"\n",
            sim.kappa,
            serde_json::to_value(sim.weight_mode).unwrap().as_str().unwrap()
        ),
    )
    .unwrap();
    parse_config(&dir.join("run.toml")).unwrap()
}

fn read(path: PathBuf) -> Vec<u8> {
    fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn simulated_data_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    for s in Scenario::ALL {
        let sim = generate(&ScenarioSpec::new(s, 7)).unwrap();
        let data = dir.path().join(format!("{s}.csv"));
        let schema_path = dir.path().join(format!("{s}.toml"));
        write_dataset(&data, &sim.dataset, &sim.schema).unwrap();
        write_schema(&schema_path, &sim.specs).unwrap();
        let schema = read_schema(&schema_path).unwrap();
        assert_eq!(schema, sim.schema, "scenario {s}");
        assert_eq!(read_dataset(&data, &schema, Some("weight")).unwrap(), sim.dataset, "scenario {s}");
    }
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = scenario_config(dir.path(), Scenario::III, 500);
    config.chains = 2;
    config.threads = 2;
    config.pool = true;
    let first = run_command(&config).unwrap();
    let a = config.output.clone();
    config.output = dir.path().join("again");
    run_command(&config).unwrap();
    let b = config.output.clone();
    for file in ["chain-0/partitions.csv", "chain-0/summary.csv", "chain-1/trace.csv", "pooled/selected.csv"] {
        assert_eq!(read(a.join(file)), read(b.join(file)), "{file}");
    }
    // chains use separate streams
    assert_ne!(read(a.join("chain-0/partitions.csv")), read(a.join("chain-1/partitions.csv")));
    assert_eq!(first.chains.len(), 2);
    assert!(first.pooled.is_some());
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenario_config(dir.path(), Scenario::V, 400);
    run_command(&config).unwrap();
    let mut replay = read_manifest(&config.output.join("manifest.json")).unwrap().config;
    replay.output = dir.path().join("replay");
    run_command(&replay).unwrap();
    for file in ["partitions.csv", "similarity.bin", "selected.csv", "summary.csv", "trace.csv", "checkpoint.json"] {
        assert_eq!(
            read(config.output.join("chain-0").join(file)),
            read(replay.output.join("chain-0").join(file)),
            "{file}"
        );
    }
}

#[test]
fn min_hm_selection_is_never_worse_than_dahl() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = scenario_config(dir.path(), Scenario::II, 800);
    let dahl = run_command(&config).unwrap().chains[0].reported.clone();
    config.selection = SelectionMode::MinHm;
    config.output = dir.path().join("min-hm");
    let min = run_command(&config).unwrap().chains[0].reported.clone();
    assert!(min.hm <= dahl.hm, "{} > {}", min.hm, dahl.hm);

    // exhaustive check over the stored partitions
    let (_, partitions) = read_partitions(&config.output.join("chain-0/partitions.csv")).unwrap();
    let schema = read_schema(&config.schema).unwrap();
    let ds = read_dataset(&config.data, &schema, Some("weight")).unwrap();
    let ex = expand_variables(&ds, &schema);
    let best = partitions
        .iter()
        .map(|p| hm_measure(p, &ex, ds.weights()))
        .fold(f64::INFINITY, f64::min);
    assert_eq!(min.hm, best);
}

#[test]
fn config_examples() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        fs::write(&p, format!("data = \"d.csv\"\nschema = \"s.toml\"\n{body}")).unwrap();
        p
    };
    let c = parse_config(&write("c.toml", "preset = \"C\"")).unwrap();
    assert_eq!((c.priors.d0_z, c.priors.d1_z), (2.1, 30.0));
    let a = parse_config(&write("a.toml", "preset = \"A\"")).unwrap();
    assert_eq!([a.priors.d0_z, a.priors.d1_z, a.priors.d0_mu, a.priors.d1_mu], [0.1; 4]);
    assert_eq!(c.data, dir.path().join("d.csv"));

    let k = parse_config(&write("k.toml", "kappa = \"2*wbar\"")).unwrap();
    assert_eq!(k.kappa, KappaRule::MeanWeight(2.0));
    assert_eq!(k.kappa.resolve(2500.0), 5000.0);
}

#[test]
fn kappa_rule_uses_the_mean_weight_of_the_data() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), "[[variables]]\nname = \"x\"\nkind = \"continuous\"\n").unwrap();
    fs::write(dir.path().join("d.csv"), "x,w\n0.1,2000\n0.5,3000\n-0.2,2500\n").unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "data = \"d.csv\"\nschema = \"s.toml\"\nweight_column = \"w\"\nweight_mode = \"design\"\n\
         kappa = \"2*wbar\"\niterations = 210\noutput = \"o\"\n",
    )
    .unwrap();
    let m = run_command(&parse_config(&dir.path().join("c.toml")).unwrap()).unwrap();
    assert_eq!(m.kappa, 5000.0);
}

#[test]
fn scenario_one_prior_c_reports_three_groups() {
    let dir = tempfile::tempdir().unwrap();
    let (result, manifest) = bench_one(Scenario::I, PriorPreset::C, &bench_options(dir.path(), 4700)).unwrap();
    assert_eq!(result.modal_r, 3, "histogram {:?}", result.histogram);
    assert_eq!(manifest.chains[0].stored_draws, 1500);
    let bundle = dir.path().join("I-C");
    for f in ["data.csv", "schema.toml", "config.toml", "manifest.json", "chain-0/histogram.csv"] {
        assert!(bundle.join(f).exists(), "{f}");
    }
}

fn pdmix(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pdmix"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    scenario_config(d, Scenario::II, 300);
    assert_eq!(pdmix(&["validate", "-c", "run.toml"], d).status.code(), Some(0));
    assert_eq!(pdmix(&["run", "--no-such-flag"], d).status.code(), Some(1));
    assert_eq!(pdmix(&["run", "-c", "run.toml", "--burn-in", "400"], d).status.code(), Some(1));
    assert_eq!(pdmix(&["validate", "-c", "missing.toml"], d).status.code(), Some(1));

    fs::write(d.join("bad.csv"), "y1,y3,weight\n1,7,1\n").unwrap();
    let out = pdmix(&["validate", "-c", "run.toml", "--data", "bad.csv"], d);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(d.join("neg.csv"), "y1,y3,weight\n1,0,-1\n").unwrap();
    assert_eq!(pdmix(&["validate", "-c", "run.toml", "--data", "neg.csv"], d).status.code(), Some(2));

    let run = pdmix(&["run", "-c", "run.toml", "--seed", "5"], d);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let summary = pdmix(&["summarize", "--run", "out", "--selection", "min-hm"], d);
    assert_eq!(summary.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&summary.stdout).starts_with("group,records,weight,share_pct,y1,y3"));
    assert_eq!(pdmix(&["summarize", "--run", "out", "--chain", "4"], d).status.code(), Some(1));
}
