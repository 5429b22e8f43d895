//! Runs the desk-scale acceptance suite and prints one line per criterion.
//!
//! Artifacts are kept under `$CARGO_TARGET_TMPDIR/acceptance` for inspection
//! with `tubelight report`. Setting `TUBELIGHT_ACCEPTANCE_FULL=1` raises the
//! s = 10^4 level to 10^5 rays, which takes hours on one core.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use tubelight_cli::config::{ExperimentConfig, Workers};
use tubelight_cli::report::{evaluate, render, Status};
use tubelight_cli::{run, CliError, RunManifest};

const SUITE: &[(&str, &str)] = &[
    ("sim2d-lo", "experiment = \"simulate2d\"\ns_values = [100.0, 1000.0]\nn_rays = 100000\nmax_steps = 3000000\nseed = 101\nt_grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]\nv_grid = [0.25, 0.5, 0.75, 1.0]"),
    ("gamma", "experiment = \"gamma\"\ns_values = [200.0]\nn_rays = 100000\nn_ladders = 1000000\nseed = 102"),
    ("ladder-3d", "experiment = \"ladder\"\nmodel = \"cylinder3d\"\nn_rays = 1000000\nn_steps = 10000000\nseed = 103"),
    ("ladder-2d", "experiment = \"ladder\"\nmodel = \"strip2d\"\nn_rays = 1000\nn_steps = 1000000\nseed = 104"),
    ("occupation", "experiment = \"occupation\"\nmodel = \"cylinder3d\"\ns_values = [100.0]\nn_rays = 10000\nmax_steps = 2000000\nseed = 105\nintervals = [[-0.8, -0.2]]"),
    ("brightness", "experiment = \"brightness\"\ns_values = [100.0]\nn_rays = 10000\nmax_steps = 2000000\nseed = 106\nannuli = [[0.2, 0.8]]"),
    ("wh-u2d", "experiment = \"wh-solve\"\nkernel = \"u2d\"\nt = 0.5\ns_max = 1000.0\ngrid_step = 0.25\noracle_ladders = 1000000\nseed = 107"),
    ("wh-u2d-tilde", "experiment = \"wh-solve\"\nkernel = \"u2d_tilde\"\nt = 0.5\ns_max = 1000.0\ngrid_step = 0.25"),
];

const DESK_HI: &str = "experiment = \"simulate2d\"\ns_values = [10000.0]\nn_rays = 2000\nmax_steps = 100000000\nseed = 108";
const FULL_HI: &str = "experiment = \"simulate2d\"\ns_values = [10000.0]\nn_rays = 100000\nmax_steps = 300000000\nseed = 108";

/// Repeated at 1 and 4 threads for the reproducibility check.
const REPEATED: &[&str] = &[
    "experiment = \"simulate2d\"\ns_values = [100.0]\nn_rays = 2000\nmax_steps = 3000000\nseed = 201",
    "experiment = \"gamma\"\ns_values = [20.0]\nn_rays = 1000\nn_ladders = 10000\nseed = 202",
    "experiment = \"wh-solve\"\nkernel = \"u2d\"\nt = 0.5\ns_max = 50.0\ngrid_step = 0.25\noracle_ladders = 20000\nseed = 203",
];

fn execute(text: &str, dir: &Path, workers: Option<usize>) -> RunManifest {
    let mut cfg = ExperimentConfig::from_toml_str(text).expect("suite config parses");
    cfg.output_dir = Some(dir.to_path_buf());
    if let Some(w) = workers {
        cfg.workers = Workers::Count(w);
    }
    let cfg = cfg.resolve(None).expect("suite config resolves");
    let clock = Instant::now();
    let manifest = match run(cfg.clone()) {
        Ok(m) => m,
        Err(CliError::PartialRun(msg)) => {
            eprintln!("  censoring above threshold: {msg}");
            RunManifest::read(&dir.join(format!("{}.manifest.json", cfg.experiment))).expect("partial run leaves a manifest")
        }
        Err(e) => panic!("{}: {e}", dir.display()),
    };
    eprintln!("  {} in {:.1} s", dir.display(), clock.elapsed().as_secs_f64());
    manifest
}

fn main() -> ExitCode {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if root.exists() {
        std::fs::remove_dir_all(&root).expect("clearing previous artifacts");
    }
    let full = std::env::var_os("TUBELIGHT_ACCEPTANCE_FULL").is_some_and(|v| v == "1");

    let mut runs = Vec::new();
    for (name, text) in SUITE {
        runs.push(execute(text, &root.join(name), None));
    }
    runs.push(execute(if full { FULL_HI } else { DESK_HI }, &root.join("sim2d-hi"), None));
    for (i, text) in REPEATED.iter().enumerate() {
        for w in [1, 4] {
            runs.push(execute(text, &root.join(format!("repeat{i}-w{w}")), Some(w)));
        }
    }

    let results = evaluate(&runs);
    print!("{}", render(&results, runs.len()));
    let passed = results.iter().filter(|c| c.status == Status::Pass).count();
    println!("{passed}/{} criteria pass; artifacts in {}", results.len(), root.display());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
