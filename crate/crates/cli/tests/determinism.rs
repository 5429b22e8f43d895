//! Every experiment, tiny scale, run with 1 and 4 threads: identical bytes.

use tubelight_cli::config::{ExperimentConfig, Workers};
use tubelight_cli::report::{evaluate, Status};
use tubelight_cli::{run, CliError, RunManifest};

const CONFIGS: &[&str] = &[
    "experiment = \"simulate2d\"\ns_values = [5.0, 20.0]\nn_rays = 300\nseed = 11\nv_grid = [0.5, 1.0]",
    "experiment = \"simulate3d\"\ns_values = [5.0]\nn_rays = 200\nseed = 12",
    "experiment = \"gamma\"\ns_values = [5.0]\nn_rays = 200\nn_ladders = 400\nseed = 13",
    "experiment = \"renewal\"\nmodel = \"cylinder3d\"\nwindow = 20.0\nn_bins = 40\nn_rays = 200\nseed = 14",
    "experiment = \"ladder\"\nmodel = \"strip2d\"\nn_rays = 500\nseed = 15",
    "experiment = \"occupation\"\nmodel = \"cylinder3d\"\ns_values = [10.0]\nn_rays = 200\nseed = 16",
    "experiment = \"brightness\"\ns_values = [10.0]\nn_rays = 300\nseed = 17\nannuli = [[0.3, 0.6]]",
    "experiment = \"wh-solve\"\nkernel = \"u2d\"\nt = 0.5\ns_max = 10.0\ngrid_step = 0.5\noracle_ladders = 2000\nseed = 18",
    "experiment = \"eye\"\ns_values = [10.0]\nn_rays = 2000\nseed = 19\ny = 0.5\neps = 0.2\nmin_in_window = 10",
];

fn run_with(text: &str, dir: &std::path::Path, workers: usize) -> RunManifest {
    let mut cfg = ExperimentConfig::from_toml_str(text).unwrap();
    cfg.output_dir = Some(dir.to_path_buf());
    cfg.workers = Workers::Count(workers);
    // small levels censor a few rays; the threshold is not what is under test
    cfg.censor_threshold = Some(1.0);
    match run(cfg.resolve(None).unwrap()) {
        Ok(m) => m,
        Err(CliError::PartialRun(msg)) => panic!("unexpected partial run: {msg}"),
        Err(e) => panic!("{text}: {e}"),
    }
}

#[test]
fn outputs_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    for (i, text) in CONFIGS.iter().enumerate() {
        let a = run_with(text, &tmp.path().join(format!("{i}-w1")), 1);
        let b = run_with(text, &tmp.path().join(format!("{i}-w4")), 4);
        assert!(!a.outputs.is_empty(), "{text}");
        assert_eq!(a.outputs, b.outputs, "{text}");
        assert_eq!(a.metrics, b.metrics, "{text}");
        manifests.push(a);
        manifests.push(b);
    }
    let c12 = &evaluate(&manifests)[11];
    assert_eq!(c12.status, Status::Pass, "{}", c12.detail);
    for exp in ["simulate2d", "wh-solve", "eye"] {
        assert!(c12.detail.contains(exp), "{}", c12.detail);
    }
}

#[test]
fn different_seeds_differ() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_with(CONFIGS[4], &tmp.path().join("a"), 2);
    let b = run_with(&CONFIGS[4].replace("seed = 15", "seed = 16"), &tmp.path().join("b"), 2);
    assert_ne!(a.outputs, b.outputs);
}
