//! Dispatch from a resolved config to the model crate, producing tables,
//! scalar metrics and censoring records.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use tubelight::batch::{Censoring, RayBlock};
use tubelight::cylinder3d::{
    brightness_analytic, brightness_profile, disc_exit_law_from, disc_linear_bound, gamma_direct, gamma_formula, trace_exit_3d,
    BrightnessOptions, Exit3dBatch, GAMMA_SLOPE_AT_ZERO,
};
use tubelight::sampling::step_cdf_2d;
use tubelight::stats::{ks_critical_value, ks_distance, mean_ci, EmpiricalCdf};
use tubelight::strip2d::{eye_conditional_from, joint_exit_law_from, log_scaled, undershoot_ratio_law_from, Exit2dBatch};
use tubelight::walk::{
    default_max_steps_2d, default_max_steps_3d, first_ladder, first_passage, ladder_pairs, occupation_batch, renewal_estimate,
    renewal_from_ladder_heights, Cylinder3dStep, FirstPassageRecord, Intervals, Stepper, Strip2dStep,
};
use tubelight::wienerhopf::{solve_min_iterative, solve_via_renewal, Forcing, SolveOptions, WienerHopfProblem};

use crate::config::{Experiment, ExperimentConfig, Kernel, Model};
use crate::error::{CliError, CliResult};
use crate::output::{read_pairs, s_label, Table};

/// Step cap for ladder epochs when none is configured.
pub const DEFAULT_LADDER_CAP: u64 = 1_000_000;
/// Forward-difference width for the slope of the undershoot-ratio law at 0.
pub const SLOPE_H: f64 = 0.01;

/// One RNG block: rays `0..n_rays` use streams `base_stream + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    pub seed: u64,
    pub base_stream: u64,
    pub n_rays: u64,
    pub max_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringRecord {
    pub experiment: Experiment,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    pub total: u64,
    pub censored: u64,
    pub rate: f64,
    /// Set when `rate` exceeds the run's threshold.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub at: BTreeMap<String, f64>,
    pub value: f64,
}

#[derive(Debug, Default)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    pub blocks: Vec<BlockRecord>,
    pub censoring: Vec<CensoringRecord>,
    pub metrics: Vec<Metric>,
    /// Input files read by the run, with their digests.
    pub inputs: Vec<(String, Vec<u8>)>,
}

impl RunOutput {
    /// Register RNG block number `index` of the run.
    fn block(&mut self, label: &str, s: Option<f64>, seed: u64, index: u64, n_rays: u64, max_steps: u64) -> RayBlock {
        let base_stream = index << 40;
        self.blocks.push(BlockRecord {
            label: label.to_string(),
            s,
            seed,
            base_stream,
            n_rays,
            max_steps,
        });
        RayBlock::new(seed, base_stream, n_rays)
    }

    fn censor(&mut self, experiment: Experiment, label: &str, s: Option<f64>, c: Censoring, threshold: f64) {
        self.censoring.push(CensoringRecord {
            experiment,
            label: label.to_string(),
            s,
            total: c.total,
            censored: c.censored,
            rate: c.rate(),
            flagged: c.rate() > threshold,
        });
    }

    fn metric(&mut self, name: &str, s: Option<f64>, at: &[(&str, f64)], value: f64) {
        self.metrics.push(Metric {
            name: name.to_string(),
            s,
            at: at.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            value,
        });
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    n_rays: u64,
    threshold: f64,
    out: RunOutput,
}

impl Ctx<'_> {
    fn s_values(&self) -> Vec<f64> {
        self.cfg.s_values.clone().unwrap_or_default()
    }

    fn cap(&self, default: impl Fn(f64) -> u64, s: f64) -> u64 {
        self.cfg.max_steps.unwrap_or_else(|| default(s))
    }

    fn censor(&mut self, label: &str, s: Option<f64>, c: Censoring) {
        let (exp, th) = (self.cfg.experiment, self.threshold);
        self.out.censor(exp, label, s, c, th);
    }
}

pub fn execute(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    let mut ctx = Ctx {
        cfg,
        seed: cfg.seed.unwrap_or(0),
        n_rays: cfg.n_rays.unwrap_or(0),
        threshold: cfg.censor_threshold(),
        out: RunOutput::default(),
    };
    match cfg.experiment {
        Experiment::Simulate2d => simulate2d(&mut ctx)?,
        Experiment::Simulate3d => simulate3d(&mut ctx)?,
        Experiment::Gamma => gamma(&mut ctx)?,
        Experiment::Renewal => renewal(&mut ctx)?,
        Experiment::Ladder => ladder(&mut ctx)?,
        Experiment::Occupation => occupation(&mut ctx)?,
        Experiment::Brightness => brightness(&mut ctx)?,
        Experiment::WhSolve => wh_solve(&mut ctx)?,
        Experiment::Eye => eye(&mut ctx)?,
    }
    Ok(ctx.out)
}

fn strip_passages(ctx: &mut Ctx, k: usize, s: f64) -> CliResult<Vec<FirstPassageRecord>> {
    let cap = ctx.cap(default_max_steps_2d, s);
    let block = ctx.out.block("rays", Some(s), ctx.seed, k as u64, ctx.n_rays, cap);
    let recs = block.map(|_, rng| first_passage(&mut Strip2dStep, s, cap, rng));
    Ok(recs.into_iter().collect::<Result<_, _>>()?)
}

fn uniform_ks(xs: Vec<f64>) -> CliResult<f64> {
    Ok(ks_distance(&EmpiricalCdf::new(xs)?, |x| x.clamp(0.0, 1.0)))
}

fn simulate2d(ctx: &mut Ctx) -> CliResult<()> {
    let t_grid = ctx.cfg.t_grid.clone().unwrap_or_default();
    let v_grid = ctx.cfg.v_grid.clone().unwrap_or_default();
    for (k, s) in ctx.s_values().into_iter().enumerate() {
        let recs = strip_passages(ctx, k, s)?;
        let label = s_label(s);
        let mut rays = Table::new(
            format!("simulate2d_s{label}_rays.csv"),
            &["ray", "n_steps", "overshoot", "undershoot", "lambda", "y_exit", "censored"],
        );
        let batch = Exit2dBatch::from_records(s, &recs);
        let mut exits = batch.exits.iter();
        for (i, r) in recs.iter().enumerate() {
            let (lambda, y) = if r.censored {
                (f64::NAN, f64::NAN)
            } else {
                let e = exits.next().expect("one exit per uncensored ray");
                (e.lambda, e.y_exit)
            };
            rays.push(vec![
                (i as u64).into(),
                r.n_steps.into(),
                r.overshoot.into(),
                r.undershoot.into(),
                lambda.into(),
                y.into(),
                r.censored.into(),
            ]);
        }
        ctx.out.tables.push(rays);
        ctx.censor("rays", Some(s), batch.censoring);
        if batch.exits.is_empty() {
            continue;
        }

        let law = undershoot_ratio_law_from(&batch, &t_grid)?;
        let mut table = Table::new(format!("simulate2d_s{label}_law.csv"), &["t", "u_hat", "se", "t_squared"]);
        let mut max_dev: f64 = 0.0;
        for ((&t, &p), &se) in law.t.iter().zip(&law.prob).zip(&law.std_error) {
            table.push(vec![t.into(), p.into(), se.into(), (t * t).into()]);
            ctx.out.metric("u_hat", Some(s), &[("t", t)], p);
            if (0.1 - 1e-9..=0.9 + 1e-9).contains(&t) {
                max_dev = max_dev.max((p - t * t).abs());
            }
        }
        ctx.out.tables.push(table);
        ctx.out.metric("max_dev_t_squared", Some(s), &[], max_dev);

        let joint = joint_exit_law_from(&batch, &t_grid, &v_grid)?;
        let mut table = Table::new(
            format!("simulate2d_s{label}_joint.csv"),
            &["t", "v", "undershoot_even", "undershoot_odd", "angle_down", "angle_up"],
        );
        for (i, &t) in joint.t.iter().enumerate() {
            for (j, &v) in joint.v.iter().enumerate() {
                let cells = [
                    joint.undershoot_even[i][j],
                    joint.undershoot_odd[i][j],
                    joint.angle_down[i][j],
                    joint.angle_up[i][j],
                ];
                table.push([t, v].into_iter().chain(cells).map(Into::into).collect());
                ctx.out.metric("joint_even", Some(s), &[("t", t), ("v", v)], cells[0]);
                ctx.out.metric("joint_odd", Some(s), &[("t", t), ("v", v)], cells[1]);
            }
        }
        ctx.out.tables.push(table);

        let parity = batch.parity_even_fraction();
        ctx.out.metric("parity_even", Some(s), &[], parity.estimate);
        ctx.out.metric("parity_even_se", Some(s), &[], parity.std_error);
        ctx.out.metric("ks_exit_uniform", Some(s), &[], uniform_ks(batch.exit_heights())?);
        let scaled: Vec<f64> = batch.exits.iter().map(|e| log_scaled(e.fp.undershoot, s)).collect();
        ctx.out.metric("ks_log_undershoot", Some(s), &[], uniform_ks(scaled)?);
        ctx.out.metric("n_exits", Some(s), &[], batch.exits.len() as f64);
    }
    Ok(())
}

fn simulate3d(ctx: &mut Ctx) -> CliResult<()> {
    let r_grid = ctx.cfg.r_grid.clone().unwrap_or_default();
    for (k, s) in ctx.s_values().into_iter().enumerate() {
        let cap = ctx.cap(default_max_steps_3d, s);
        let block = ctx.out.block("rays", Some(s), ctx.seed, k as u64, ctx.n_rays, cap);
        let raw = block.map(|_, rng| trace_exit_3d(s, cap, rng));
        let label = s_label(s);
        let mut rays = Table::new(
            format!("simulate3d_s{label}_rays.csv"),
            &["ray", "n_steps", "overshoot", "undershoot", "exit_y", "exit_z", "censored"],
        );
        let mut batch = Exit3dBatch {
            level_s: s,
            exits: Vec::new(),
            censoring: Censoring::default(),
        };
        for (i, r) in raw.into_iter().enumerate() {
            let i = i as u64;
            match r {
                Ok(e) => {
                    let fp = e.fp;
                    rays.push(vec![
                        i.into(),
                        fp.n_steps.into(),
                        fp.overshoot.into(),
                        fp.undershoot.into(),
                        e.exit_point.0.into(),
                        e.exit_point.1.into(),
                        false.into(),
                    ]);
                    batch.censoring.record(false);
                    batch.exits.push(e);
                }
                Err(tubelight::Error::CensoredPath { steps }) => {
                    let nan = f64::NAN;
                    rays.push(vec![
                        i.into(),
                        steps.into(),
                        nan.into(),
                        nan.into(),
                        nan.into(),
                        nan.into(),
                        true.into(),
                    ]);
                    batch.censoring.record(true);
                }
                Err(e) => return Err(e.into()),
            }
        }
        ctx.out.tables.push(rays);
        ctx.censor("rays", Some(s), batch.censoring);
        if batch.exits.is_empty() {
            continue;
        }

        let disc = disc_exit_law_from(&batch, &r_grid)?;
        let mut table = Table::new(format!("simulate3d_s{label}_disc.csv"), &["r", "prob", "se", "linear_bound"]);
        for ((&r, &p), &se) in disc.r.iter().zip(&disc.prob).zip(&disc.std_error) {
            table.push(vec![r.into(), p.into(), se.into(), disc_linear_bound(r).into()]);
            ctx.out.metric("disc_prob", Some(s), &[("r", r)], p);
        }
        ctx.out.tables.push(table);
    }
    Ok(())
}

fn gamma(ctx: &mut Ctx) -> CliResult<()> {
    let t_grid = ctx.cfg.t_grid.clone().unwrap_or_default();
    let n_ladders = ctx.cfg.n_ladders.unwrap_or(ctx.n_rays);
    let ladder_cap = ctx.cfg.max_steps.unwrap_or(DEFAULT_LADDER_CAP);
    for (k, s) in ctx.s_values().into_iter().enumerate() {
        let cap = ctx.cap(default_max_steps_3d, s);
        let k = 2 * k as u64;
        let direct_block = ctx.out.block("direct", Some(s), ctx.seed, k, ctx.n_rays, cap);
        let direct = gamma_direct(s, &t_grid, cap, &direct_block)?;
        ctx.censor("direct", Some(s), direct.censoring);
        let ladder_block = ctx.out.block("ladders", Some(s), ctx.seed, k + 1, n_ladders, ladder_cap);
        let (formula, pairs) = gamma_formula(&t_grid, ladder_cap, &ladder_block)?;
        ctx.censor("ladders", Some(s), formula.censoring);

        let mut table = Table::new(
            format!("gamma_s{}.csv", s_label(s)),
            &["t", "gamma_direct", "gamma_formula", "se_direct", "se_formula"],
        );
        let (mut sup, mut bound_z) = (0.0f64, f64::NEG_INFINITY);
        for (i, &t) in t_grid.iter().enumerate() {
            let (d, f) = (direct.prob[i], formula.value[i]);
            let (sd, sf) = (direct.std_error[i], formula.std_error[i]);
            table.push(vec![t.into(), d.into(), f.into(), sd.into(), sf.into()]);
            sup = sup.max((d - f).abs());
            for (g, se) in [(d, sd), (f, sf)] {
                let excess = (GAMMA_SLOPE_AT_ZERO * t - g).max(g - t);
                let z = if se > 0.0 {
                    excess / se
                } else if excess > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                bound_z = bound_z.max(z);
            }
        }
        ctx.out.tables.push(table);
        ctx.out.metric("sup_difference", Some(s), &[], sup);
        ctx.out.metric("bound_max_z", Some(s), &[], bound_z);

        let mut convex_z = f64::INFINITY;
        for w in t_grid.windows(3) {
            let h = 0.5 * (w[2] - w[0]);
            let d2 = pairs.second_difference(w[1], h)?;
            let z = if d2.std_error > 0.0 {
                d2.estimate / d2.std_error
            } else {
                d2.estimate.signum() * f64::INFINITY
            };
            convex_z = convex_z.min(if d2.estimate == 0.0 { 0.0 } else { z });
        }
        if convex_z.is_finite() {
            ctx.out.metric("convexity_min_z", Some(s), &[], convex_z);
        }
        let slope = pairs.slope_at_zero(SLOPE_H)?;
        ctx.out.metric("slope_at_zero", Some(s), &[("h", SLOPE_H)], slope.estimate);
        ctx.out.metric("slope_at_zero_se", Some(s), &[("h", SLOPE_H)], slope.std_error);
    }
    Ok(())
}

fn model(cfg: &ExperimentConfig) -> Model {
    cfg.model.expect("resolved config has a model")
}

fn model_name(m: Model) -> &'static str {
    match m {
        Model::Strip2d => "strip2d",
        Model::Cylinder3d => "cylinder3d",
    }
}

fn renewal(ctx: &mut Ctx) -> CliResult<()> {
    let m = model(ctx.cfg);
    let window = ctx.cfg.window.expect("resolved");
    let n_bins = ctx.cfg.n_bins.expect("resolved");
    let est = match m {
        Model::Strip2d => {
            let cap = ctx.cap(default_max_steps_2d, window);
            let block = ctx.out.block("paths", None, ctx.seed, 0, ctx.n_rays, cap);
            renewal_estimate(&Strip2dStep, window, n_bins, cap, &block)?
        }
        Model::Cylinder3d => {
            let cap = ctx.cap(default_max_steps_3d, window);
            let block = ctx.out.block("paths", None, ctx.seed, 0, ctx.n_rays, cap);
            renewal_estimate(&Cylinder3dStep, window, n_bins, cap, &block)?
        }
    };
    ctx.censor("paths", None, est.censoring);
    let mut table = Table::new(format!("renewal_{}.csv", model_name(m)), &["bin_lo", "bin_hi", "mass"]);
    for (e, &mass) in est.bin_edges.windows(2).zip(&est.mass) {
        table.push(vec![e[0].into(), e[1].into(), mass.into()]);
    }
    ctx.out.tables.push(table);
    ctx.out.metric("total_mass", None, &[("window", window)], est.total());
    Ok(())
}

fn step_draws<S: Stepper + Copy + Sync + Send>(stepper: S, block: &RayBlock) -> Vec<f64> {
    block.map(|_, rng| {
        let mut st = stepper;
        st.next_step(rng)
    })
}

fn ladder(ctx: &mut Ctx) -> CliResult<()> {
    let m = model(ctx.cfg);
    let cap = ctx.cfg.max_steps.unwrap_or(DEFAULT_LADDER_CAP);
    let block = ctx.out.block("ladders", None, ctx.seed, 0, ctx.n_rays, cap);
    let raw = match m {
        Model::Strip2d => block.map(|_, rng| first_ladder(&mut Strip2dStep, cap, rng)),
        Model::Cylinder3d => block.map(|_, rng| first_ladder(&mut Cylinder3dStep, cap, rng)),
    };
    let mut table = Table::new(format!("ladder_{}.csv", model_name(m)), &["ray", "u0", "o0", "epoch", "censored"]);
    let mut o0 = Vec::with_capacity(raw.len());
    for (i, p) in raw.iter().enumerate() {
        let i = i as u64;
        match p {
            Some(p) => {
                table.push(vec![i.into(), p.u0.into(), p.o0.into(), p.epoch.into(), false.into()]);
                o0.push(p.o0);
            }
            None => table.push(vec![i.into(), f64::NAN.into(), f64::NAN.into(), cap.into(), true.into()]),
        }
    }
    ctx.out.tables.push(table);
    ctx.censor("ladders", None, raw.iter().map(Option::is_none).collect());
    if !o0.is_empty() {
        let mean = mean_ci(&o0, 0.95)?;
        ctx.out.metric("ladder_mean", None, &[], mean.estimate);
        ctx.out.metric("ladder_mean_se", None, &[], mean.std_error);
    }

    let n_steps = ctx.cfg.n_steps.unwrap_or(ctx.n_rays);
    let step_block = ctx.out.block("steps", None, ctx.seed, 1, n_steps, 1);
    match m {
        Model::Strip2d => {
            let xs = step_draws(Strip2dStep, &step_block);
            let ks = ks_distance(&EmpiricalCdf::new(xs)?, step_cdf_2d);
            ctx.out.metric("step_ks", None, &[], ks);
            ctx.out
                .metric("step_ks_critical_1pct", None, &[], ks_critical_value(n_steps as usize, 0.01));
        }
        Model::Cylinder3d => {
            let xs = step_draws(Cylinder3dStep, &step_block);
            for (name, ys) in [
                ("step_mean", xs.clone()),
                ("step_second_moment", xs.iter().map(|x| x * x).collect()),
                ("step_mean_abs", xs.iter().map(|x| x.abs()).collect()),
            ] {
                let c = mean_ci(&ys, 0.95)?;
                ctx.out.metric(name, None, &[], c.estimate);
                ctx.out.metric(&format!("{name}_se"), None, &[], c.std_error);
            }
        }
    }
    ctx.out.metric("step_draws", None, &[], n_steps as f64);
    Ok(())
}

fn occupation(ctx: &mut Ctx) -> CliResult<()> {
    let m = model(ctx.cfg);
    let rel = ctx.cfg.intervals.clone().unwrap_or_default();
    let mut table = Table::new(
        format!("occupation_{}.csv", model_name(m)),
        &["s", "x1", "x2", "mean", "se", "scaled_mean", "scaled_se"],
    );
    for (k, s) in ctx.s_values().into_iter().enumerate() {
        let iv = Intervals::new(rel.iter().map(|&[a, b]| (a * s, b * s)).collect())?;
        let summary = match m {
            Model::Strip2d => {
                let cap = ctx.cap(default_max_steps_2d, s);
                let block = ctx.out.block("paths", Some(s), ctx.seed, k as u64, ctx.n_rays, cap);
                occupation_batch(&Strip2dStep, s, &iv, cap, &block)?
            }
            Model::Cylinder3d => {
                let cap = ctx.cap(default_max_steps_3d, s);
                let block = ctx.out.block("paths", Some(s), ctx.seed, k as u64, ctx.n_rays, cap);
                occupation_batch(&Cylinder3dStep, s, &iv, cap, &block)?
            }
        };
        ctx.censor("paths", Some(s), summary.censoring);
        let s2 = s * s;
        for ((&[a, b], &mean), &se) in rel.iter().zip(&summary.mean).zip(&summary.std_error) {
            table.push(vec![
                s.into(),
                (a * s).into(),
                (b * s).into(),
                mean.into(),
                se.into(),
                (mean / s2).into(),
                (se / s2).into(),
            ]);
            ctx.out.metric("scaled_occupation", Some(s), &[("a1", a), ("a2", b)], mean / s2);
            ctx.out.metric("scaled_occupation_se", Some(s), &[("a1", a), ("a2", b)], se / s2);
        }
    }
    ctx.out.tables.push(table);
    Ok(())
}

/// Limit constant of the normalized annulus brightness.
pub fn brightness_target(r1: f64, r2: f64) -> f64 {
    (r2 - r1) / (2.0 * PI * PI)
}

fn brightness(ctx: &mut Ctx) -> CliResult<()> {
    let annuli: Vec<(f64, f64)> = ctx
        .cfg
        .annuli
        .clone()
        .unwrap_or_default()
        .into_iter()
        .map(|[a, b]| (a, b))
        .collect();
    let mut table = Table::new("brightness.csv", &["s", "r1", "r2", "value", "se", "target", "analytic"]);
    for (k, s) in ctx.s_values().into_iter().enumerate() {
        let mut opts = BrightnessOptions::new(s);
        opts.max_steps = ctx.cap(default_max_steps_3d, s);
        let block = ctx.out.block("paths", Some(s), ctx.seed, k as u64, ctx.n_rays, opts.max_steps);
        let est = brightness_profile(s, &annuli, &opts, &block)?;
        if let Some(first) = est.first() {
            ctx.censor("paths", Some(s), first.censoring);
        }
        for e in &est {
            let analytic = brightness_analytic(e.r1, e.r2, |a| 2.0 * a / PI);
            let target = brightness_target(e.r1, e.r2);
            table.push(vec![
                s.into(),
                e.r1.into(),
                e.r2.into(),
                e.value.into(),
                e.std_error.into(),
                target.into(),
                analytic.into(),
            ]);
            let at = [("r1", e.r1), ("r2", e.r2)];
            ctx.out.metric("brightness", Some(s), &at, e.value);
            ctx.out.metric("brightness_se", Some(s), &at, e.std_error);
            ctx.out.metric("brightness_analytic_error", Some(s), &at, (analytic - target).abs());
        }
    }
    ctx.out.tables.push(table);
    Ok(())
}

fn eye(ctx: &mut Ctx) -> CliResult<()> {
    let t_grid = ctx.cfg.t_grid.clone().unwrap_or_default();
    let (y, eps) = (ctx.cfg.y.expect("resolved"), ctx.cfg.eps.expect("resolved"));
    let min_in_window = ctx.cfg.min_in_window.expect("resolved");
    for (k, s) in ctx.s_values().into_iter().enumerate() {
        let recs = strip_passages(ctx, k, s)?;
        let batch = Exit2dBatch::from_records(s, &recs);
        ctx.censor("rays", Some(s), batch.censoring);
        let eye = eye_conditional_from(&batch, y, eps, &t_grid, min_in_window)?;
        let mut table = Table::new(
            format!("eye_s{}.csv", s_label(s)),
            &["t", "from_below", "from_above", "se_below", "se_above"],
        );
        for ((&t, &b), &a) in eye.t.iter().zip(&eye.from_below).zip(&eye.from_above) {
            table.push(vec![t.into(), b.into(), a.into(), eye.std_error(b).into(), eye.std_error(a).into()]);
        }
        ctx.out.tables.push(table);
        let below = batch
            .exits
            .iter()
            .filter(|e| e.y_exit > y - eps && e.y_exit <= y && e.lambda >= 0.0)
            .count();
        ctx.out.metric(
            "from_below_mass",
            Some(s),
            &[("y", y), ("eps", eps)],
            below as f64 / eye.in_window as f64,
        );
        ctx.out
            .metric("in_window", Some(s), &[("y", y), ("eps", eps)], eye.in_window as f64);
    }
    Ok(())
}

fn forcing(ctx: &mut Ctx) -> CliResult<Forcing> {
    let cfg = ctx.cfg;
    let f = match cfg.kernel.expect("resolved") {
        Kernel::U2d => Forcing::U2d {
            t: cfg.t.expect("resolved"),
        },
        Kernel::U2dTilde => Forcing::U2dTilde {
            t: cfg.t.expect("resolved"),
        },
        Kernel::Decay => Forcing::Decay {
            c: cfg.decay_c.expect("resolved"),
            alpha: cfg.decay_alpha.expect("resolved"),
        },
        Kernel::Zero => Forcing::Zero,
        Kernel::Tabulated => {
            let path = cfg.forcing_csv.as_ref().expect("resolved");
            let bytes = std::fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))?;
            let (s, g) = read_pairs(path)?;
            ctx.out.inputs.push((path.display().to_string(), bytes));
            Forcing::tabulated(s, g).map_err(|e| CliError::config("forcing_csv", e.to_string()))?
        }
    };
    f.validate().map_err(|e| CliError::config("kernel", e.to_string()))?;
    Ok(f)
}

fn wh_solve(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.cfg;
    let (s_max, h, tol) = (
        cfg.s_max.expect("resolved"),
        cfg.grid_step.expect("resolved"),
        cfg.tol.expect("resolved"),
    );
    let g = forcing(ctx)?;
    let problem = WienerHopfProblem::strip2d(g.clone(), s_max, h, tol)?;
    let opts = SolveOptions {
        tol,
        scheme: cfg.scheme.unwrap_or_default(),
        ..SolveOptions::default()
    };
    let sol = solve_min_iterative(&problem, &opts)?;
    let mut table = Table::new("wh_solve.csv", &["s", "W"]);
    for (&s, &w) in sol.s.iter().zip(&sol.w) {
        table.push(vec![s.into(), w.into()]);
    }
    ctx.out.tables.push(table);
    ctx.out.metric("residual", None, &[], sol.residual);
    ctx.out.metric("iterations", None, &[], sol.iterations as f64);
    ctx.out.metric("truncation_error_bound", None, &[], sol.truncation_error_bound);
    ctx.out.metric("y_truncation", None, &[], problem.y_truncation);
    let mut decade = 1.0;
    while decade <= s_max {
        ctx.out.metric("w", Some(decade), &[], sol.value_at(decade));
        decade *= 10.0;
    }
    ctx.out.metric("w", Some(s_max), &[], sol.value_at(s_max));

    if let Some(n) = cfg.oracle_ladders {
        let cap = cfg.max_steps.unwrap_or(DEFAULT_LADDER_CAP);
        let minus_window = cfg.oracle_minus_window.expect("resolved");
        let mut heights = Vec::with_capacity(2);
        for (i, label) in ["plus_ladders", "minus_ladders"].into_iter().enumerate() {
            let block = ctx.out.block(label, None, ctx.seed, i as u64, n, cap);
            let (pairs, c) = ladder_pairs(&Strip2dStep, cap, &block);
            ctx.censor(label, None, c);
            heights.push(pairs.into_iter().map(|p| p.o0).collect::<Vec<_>>());
        }
        // the strip step is symmetric, so descending heights share the ascending law
        let plus = renewal_from_ladder_heights(&heights[0], s_max + h, h)?;
        let minus = renewal_from_ladder_heights(&heights[1], minus_window, h)?;
        let ren = solve_via_renewal(&g, &plus, &minus, s_max, h)?;
        let mut table = Table::new("wh_renewal.csv", &["s", "W_renewal", "W_iterative", "difference"]);
        let mut sup: f64 = 0.0;
        for (&s, &w) in ren.s.iter().zip(&ren.w) {
            let it = sol.value_at(s);
            sup = sup.max((w - it).abs());
            table.push(vec![s.into(), w.into(), it.into(), (w - it).into()]);
        }
        ctx.out.tables.push(table);
        ctx.out.metric("oracle_sup_difference", None, &[], sup);
    }
    Ok(())
}
