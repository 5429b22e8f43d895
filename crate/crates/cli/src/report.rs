//! Pass/fail summary of the acceptance checks over a directory of runs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use tubelight::cylinder3d::{GAMMA_SLOPE_AT_ZERO, LADDER_MEAN_3D};
use tubelight::sampling::{STEP_3D_MEAN_ABS, STEP_3D_SECOND_MOMENT};

use crate::config::{Experiment, Kernel, Model};
use crate::error::{CliError, CliResult};
use crate::experiments::brightness_target;
use crate::manifest::{close, RunManifest, RunStatus, MANIFEST_SUFFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    NotRun,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::NotRun => "not run",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    /// The law or property being checked.
    pub anchor: &'static str,
    pub status: Status,
    pub detail: String,
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

/// Finished manifests (complete or partial) anywhere under `dir`.
pub fn load_manifests(dir: &Path) -> CliResult<Vec<RunManifest>> {
    let mut paths: Vec<_> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.file_name().to_string_lossy().ends_with(MANIFEST_SUFFIX))
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let m = RunManifest::read(&p)?;
        if matches!(m.status, RunStatus::Complete | RunStatus::Partial) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::MissingArtifacts(dir.to_path_buf()));
    }
    Ok(out)
}

struct Runs<'a>(&'a [RunManifest]);

impl Runs<'_> {
    fn of(&self, exp: Experiment) -> impl Iterator<Item = &RunManifest> {
        self.0.iter().filter(move |m| m.config.experiment == exp)
    }

    /// First value of a metric across runs of `exp` passing `filter`.
    fn metric(
        &self,
        exp: Experiment,
        filter: impl Fn(&RunManifest) -> bool,
        name: &str,
        s: Option<f64>,
        at: &[(&str, f64)],
    ) -> Option<f64> {
        self.of(exp).filter(|m| filter(m)).find_map(|m| m.metric(name, s, at))
    }

    fn sim2d(&self, name: &str, s: f64, at: &[(&str, f64)]) -> Option<f64> {
        self.metric(Experiment::Simulate2d, |_| true, name, Some(s), at)
    }
}

fn not_run(id: u8, anchor: &'static str, missing: &str) -> CriterionResult {
    CriterionResult {
        id,
        anchor,
        status: Status::NotRun,
        detail: format!("missing {missing}"),
    }
}

fn model_is(m: Model) -> impl Fn(&RunManifest) -> bool {
    move |r| r.config.model == Some(m)
}

pub fn evaluate(runs: &[RunManifest]) -> Vec<CriterionResult> {
    let r = Runs(runs);
    vec![
        c1(&r),
        c2(&r),
        c3(&r),
        c4(&r),
        c5(&r),
        c6(&r),
        c7(&r),
        c8(&r),
        c9(&r),
        c10(&r),
        c11(&r),
        c12(runs),
    ]
}

fn c1(r: &Runs) -> CriterionResult {
    const A: &str = "cylinder step moments";
    let get = |n: &str| r.metric(Experiment::Ladder, model_is(Model::Cylinder3d), n, None, &[]);
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, target) in [
        ("step_mean", 0.0),
        ("step_second_moment", STEP_3D_SECOND_MOMENT),
        ("step_mean_abs", STEP_3D_MEAN_ABS),
    ] {
        let (Some(v), Some(se)) = (get(name), get(&format!("{name}_se"))) else {
            return not_run(1, A, "ladder run with model = cylinder3d");
        };
        let z = (v - target) / se;
        ok &= z.abs() <= 4.0;
        parts.push(format!("{name} = {v:.5} ({z:+.2} sigma)"));
    }
    let n = get("step_draws").unwrap_or(0.0);
    CriterionResult {
        id: 1,
        anchor: A,
        status: verdict(ok),
        detail: format!("{}; n = {n:.0}, within 4 sigma", parts.join(", ")),
    }
}

fn c2(r: &Runs) -> CriterionResult {
    const A: &str = "strip step law F(x) = 1/2 + x / (2 sqrt(1 + x^2))";
    let get = |n: &str| r.metric(Experiment::Ladder, model_is(Model::Strip2d), n, None, &[]);
    let (Some(ks), Some(crit)) = (get("step_ks"), get("step_ks_critical_1pct")) else {
        return not_run(2, A, "ladder run with model = strip2d");
    };
    CriterionResult {
        id: 2,
        anchor: A,
        status: verdict(ks < crit),
        detail: format!("KS = {ks:.5}, 1% critical value {crit:.5}"),
    }
}

/// Rays per level the exit-height check asks for.
pub const UNIFORMITY_RAYS: u64 = 100_000;

fn c3(r: &Runs) -> CriterionResult {
    const A: &str = "exit height uniform on [0, 1]";
    let big = |m: &RunManifest| m.config.n_rays.is_some_and(|n| n >= UNIFORMITY_RAYS);
    let mut levels: Vec<f64> = r
        .of(Experiment::Simulate2d)
        .filter(|m| big(m))
        .flat_map(|m| m.levels("ks_exit_uniform"))
        .filter(|&s| s >= 1e3)
        .collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.is_empty() {
        return not_run(3, A, "simulate2d at s >= 1000 with >= 100000 rays");
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for s in levels {
        let ks = r
            .metric(Experiment::Simulate2d, big, "ks_exit_uniform", Some(s), &[])
            .expect("level listed");
        let th = if s >= 1e4 { 0.02 } else { 0.03 };
        ok &= ks < th;
        parts.push(format!("KS = {ks:.4} at s = {s} (< {th})"));
    }
    CriterionResult {
        id: 3,
        anchor: A,
        status: verdict(ok),
        detail: parts.join(", "),
    }
}

fn c4(r: &Runs) -> CriterionResult {
    const A: &str = "undershoot ratio law u(s, t) -> t^2";
    let (Some(hi), Some(lo)) = (r.sim2d("max_dev_t_squared", 1e3, &[]), r.sim2d("max_dev_t_squared", 1e2, &[])) else {
        return not_run(4, A, "simulate2d at s = 100 and s = 1000");
    };
    CriterionResult {
        id: 4,
        anchor: A,
        status: verdict(hi < 0.03 && hi < lo),
        detail: format!("max |u - t^2| = {hi:.4} at s = 1000 (< 0.03), {lo:.4} at s = 100 (must shrink)"),
    }
}

fn c5(r: &Runs) -> CriterionResult {
    const A: &str = "joint undershoot/parity law (1/2) t v^2 and parity split 1/2";
    let at = [("t", 1.0), ("v", 0.5)];
    let (Some(even), Some(odd), Some(par)) = (
        r.sim2d("joint_even", 1e3, &at),
        r.sim2d("joint_odd", 1e3, &at),
        r.sim2d("parity_even", 1e3, &[]),
    ) else {
        return not_run(5, A, "simulate2d at s = 1000 with t = 1 and v = 0.5 on its grids");
    };
    let within = |x: f64, target: f64| (x / target - 1.0).abs() <= 0.15;
    let ok = within(even, 0.125) && within(even + odd, 0.25) && (par - 0.5).abs() <= 0.01;
    CriterionResult {
        id: 5,
        anchor: A,
        status: verdict(ok),
        detail: format!(
            "even event {even:.4} (0.125 +- 15%), both parities {:.4} (0.25 +- 15%), P(even) = {par:.4} (0.5 +- 0.01)",
            even + odd
        ),
    }
}

fn c6(r: &Runs) -> CriterionResult {
    const A: &str = "log-scaled undershoot uniform (trend)";
    let ks: Option<Vec<f64>> = [1e2, 1e3, 1e4].iter().map(|&s| r.sim2d("ks_log_undershoot", s, &[])).collect();
    let Some(ks) = ks else {
        return not_run(6, A, "simulate2d at s = 100, 1000 and 10000");
    };
    CriterionResult {
        id: 6,
        anchor: A,
        status: verdict(ks[0] > ks[1] && ks[1] > ks[2]),
        detail: format!(
            "KS = {:.4} / {:.4} / {:.4} at s = 100 / 1000 / 10000, strictly decreasing",
            ks[0], ks[1], ks[2]
        ),
    }
}

fn c7(r: &Runs) -> CriterionResult {
    const A: &str = "cylinder ladder mean sqrt(pi)/2";
    let Some(m) = r.metric(Experiment::Ladder, model_is(Model::Cylinder3d), "ladder_mean", None, &[]) else {
        return not_run(7, A, "ladder run with model = cylinder3d");
    };
    let rel = m / LADDER_MEAN_3D - 1.0;
    CriterionResult {
        id: 7,
        anchor: A,
        status: verdict(rel.abs() <= 0.01),
        detail: format!("mean = {m:.5} vs {LADDER_MEAN_3D:.5} ({:+.2}%, within 1%)", 100.0 * rel),
    }
}

fn c8(r: &Runs) -> CriterionResult {
    const A: &str = "Gamma: direct vs ladder formula, convexity, slope, bounds";
    let get = |n: &str| r.metric(Experiment::Gamma, |_| true, n, Some(200.0), &[]);
    let slope = r.metric(
        Experiment::Gamma,
        |_| true,
        "slope_at_zero",
        Some(200.0),
        &[("h", crate::experiments::SLOPE_H)],
    );
    let (Some(sup), Some(bz), Some(slope)) = (get("sup_difference"), get("bound_max_z"), slope) else {
        return not_run(8, A, "gamma run at s = 200");
    };
    let cz = get("convexity_min_z").unwrap_or(0.0);
    let ok = sup < 0.03 && cz >= -3.0 && (slope - GAMMA_SLOPE_AT_ZERO).abs() <= 0.02 && bz <= 3.0;
    CriterionResult {
        id: 8,
        anchor: A,
        status: verdict(ok),
        detail: format!(
            "sup diff {sup:.4} (< 0.03), min 2nd-difference z {cz:.2} (>= -3), slope {slope:.4} (0.410 +- 0.02), worst bound z {bz:.2} (<= 3)"
        ),
    }
}

fn c9(r: &Runs) -> CriterionResult {
    const A: &str = "occupation of (-0.8 s, -0.2 s) scales like (0.64 - 0.04) s^2 / pi";
    let at = [("a1", -0.8), ("a2", -0.2)];
    let Some(v) = r.metric(
        Experiment::Occupation,
        model_is(Model::Cylinder3d),
        "scaled_occupation",
        Some(100.0),
        &at,
    ) else {
        return not_run(9, A, "occupation run, model = cylinder3d, s = 100, interval [-0.8, -0.2]");
    };
    let target = 0.6 / PI;
    let rel = v / target - 1.0;
    CriterionResult {
        id: 9,
        anchor: A,
        status: verdict(rel.abs() <= 0.1),
        detail: format!("M/s^2 = {v:.4} vs {target:.4} ({:+.1}%, within 10%)", 100.0 * rel),
    }
}

fn c10(r: &Runs) -> CriterionResult {
    const A: &str = "centre brightness constant (r2 - r1) / (2 pi^2)";
    let at = [("r1", 0.2), ("r2", 0.8)];
    let get = |n: &str| r.metric(Experiment::Brightness, |_| true, n, Some(100.0), &at);
    let (Some(v), Some(err)) = (get("brightness"), get("brightness_analytic_error")) else {
        return not_run(10, A, "brightness run at s = 100 with annulus [0.2, 0.8]");
    };
    let target = brightness_target(0.2, 0.8);
    let rel = v / target - 1.0;
    CriterionResult {
        id: 10,
        anchor: A,
        status: verdict(rel.abs() <= 0.15 && err <= 1e-12),
        detail: format!(
            "profile {v:.5} vs {target:.5} ({:+.1}%, within 15%), analytic error {err:.1e} (<= 1e-12)",
            100.0 * rel
        ),
    }
}

fn c11(r: &Runs) -> CriterionResult {
    const A: &str = "Wiener-Hopf solver vs renewal route and Monte Carlo";
    let wh = |k: Kernel| {
        move |m: &RunManifest| {
            m.config.kernel == Some(k) && m.config.t.is_some_and(|t| close(t, 0.5)) && m.config.s_max.is_some_and(|s| s >= 1e3)
        }
    };
    let Some(sup) = r.metric(Experiment::WhSolve, wh(Kernel::U2d), "oracle_sup_difference", None, &[]) else {
        return not_run(11, A, "wh-solve with kernel u2d, t = 0.5, s_max >= 1000 and oracle_ladders");
    };
    let mut ok = sup <= 0.03;
    let mut parts = vec![format!("sup |iterative - renewal| = {sup:.4} (<= 0.03)")];
    for s in [1e2, 1e3] {
        let w = r.metric(Experiment::WhSolve, wh(Kernel::U2d), "w", Some(s), &[]);
        let mc = r.sim2d("u_hat", s, &[("t", 0.5)]);
        let (Some(w), Some(mc)) = (w, mc) else {
            return not_run(11, A, "simulate2d at s = 100 and 1000 with t = 0.5 on the grid");
        };
        ok &= (w - mc).abs() <= 0.02;
        parts.push(format!("W({s}) = {w:.4} vs MC {mc:.4}"));
    }
    let tilde: Option<Vec<f64>> = [1e2, 1e3]
        .iter()
        .map(|&s| r.metric(Experiment::WhSolve, wh(Kernel::U2dTilde), "w", Some(s), &[]))
        .collect();
    let Some(tilde) = tilde else {
        return not_run(11, A, "wh-solve with kernel u2d_tilde, t = 0.5, s_max >= 1000");
    };
    ok &= tilde[1] < tilde[0] && tilde[1] >= -1e-6;
    parts.push(format!("u~ = {:.4} -> {:.4} at s = 100 -> 1000 (decreasing)", tilde[0], tilde[1]));
    CriterionResult {
        id: 11,
        anchor: A,
        status: verdict(ok),
        detail: parts.join(", "),
    }
}

fn c12(runs: &[RunManifest]) -> CriterionResult {
    const A: &str = "byte-identical outputs across runs and worker counts";
    let mut groups: BTreeMap<String, Vec<&RunManifest>> = BTreeMap::new();
    for m in runs {
        let mut key = m.config.clone();
        key.output_dir = None;
        key.workers = Default::default();
        groups
            .entry(serde_json::to_string(&key).expect("config serializes"))
            .or_default()
            .push(m);
    }
    let repeated: Vec<&Vec<&RunManifest>> = groups.values().filter(|g| g.len() >= 2).collect();
    if repeated.is_empty() {
        return not_run(12, A, "repeated runs of one config");
    }
    let mut ok = true;
    let mut spans = false;
    let mut checked = Vec::new();
    for g in &repeated {
        let same = g.iter().all(|m| m.outputs == g[0].outputs);
        ok &= same;
        let threads: Vec<usize> = g.iter().map(|m| m.threads).collect();
        spans |= threads.contains(&1) && threads.contains(&4);
        checked.push(format!(
            "{} x{} (threads {threads:?}){}",
            g[0].config.experiment,
            g.len(),
            if same { "" } else { " DIFFER" }
        ));
    }
    CriterionResult {
        id: 12,
        anchor: A,
        status: verdict(ok && spans),
        detail: format!(
            "{}{}",
            checked.join(", "),
            if spans { "" } else { "; no group spans 1 and 4 threads" }
        ),
    }
}

/// Render one line per criterion.
pub fn render(results: &[CriterionResult], n_runs: usize) -> String {
    let mut s = format!("acceptance summary over {n_runs} run(s)\n");
    for c in results {
        let _ = writeln!(s, "[{:>2}] {:<7}  {}: {}", c.id, c.status, c.anchor, c.detail);
    }
    s
}

pub fn report(dir: &Path) -> CliResult<String> {
    let runs = load_manifests(dir)?;
    Ok(render(&evaluate(&runs), runs.len()))
}
