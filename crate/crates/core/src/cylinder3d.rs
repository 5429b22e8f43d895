//! The 3D model: a ray bouncing inside the unit cylinder, started on the
//! wall at `(-s, 0, -1)` and leaving through the disc at `x = 0`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{Censoring, RayBlock};
use crate::error::{invalid, Error, Result};
use crate::sampling::{sample_bounce_draw, BounceDraw, ReflectionDirection};
use crate::stats::{integrate, logspace, pairwise_sum, ratio_estimator_ci, ConfidenceSummary};
use crate::walk::{first_passage, Cylinder3dStep, FirstPassageRecord, Intervals, LadderPair};

/// `Gamma'(0) = 2/sqrt(pi) - 4/pi^(3/2)`, also the slope of the lower
/// linear bound on `Gamma`.
pub const GAMMA_SLOPE_AT_ZERO: f64 = 0.410_030_678_594_846_3;
/// Mean first ladder height of the axial walk, `sqrt(pi)/2`.
pub const LADDER_MEAN_3D: f64 = 0.886_226_925_452_758;

const RENORMALIZE_EVERY: u64 = 1024;

/// Reflection point: axial coordinate relative to the start plus its
/// position on the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CylinderState {
    pub fn start() -> Self {
        Self { x: 0.0, y: 0.0, z: -1.0 }
    }

    /// Move to the next wall contact along the chord described by `d`.
    #[inline]
    pub fn bounce(&mut self, d: &BounceDraw) {
        let v = d.sin_theta;
        let cos2 = (1.0 - v) * (1.0 + v);
        let cos_t = cos2.sqrt();
        let denom = cos2 + v * v * d.sin_phi * d.sin_phi;
        let r = 2.0 * cos_t / denom;
        let tangential = r * d.sin_phi * v;
        let normal = r * cos_t;
        let (y, z) = (self.y, self.z);
        self.x += 2.0 * v * cos_t * d.cos_phi / denom;
        self.y = y - z * tangential - y * normal;
        self.z = z + y * tangential - z * normal;
    }

    pub fn renormalize(&mut self) {
        let n = self.y.hypot(self.z);
        self.y /= n;
        self.z /= n;
    }

    pub fn circle_defect(&self) -> f64 {
        (self.y * self.y + self.z * self.z - 1.0).abs()
    }
}

fn draw_of(d: &ReflectionDirection) -> BounceDraw {
    let (sp, cp) = d.phi.sin_cos();
    BounceDraw {
        sin_theta: d.sin_theta,
        sin_phi: sp,
        cos_phi: cp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord3D {
    pub level_s: f64,
    /// Where the ray crosses the disc `x = 0`.
    pub exit_point: (f64, f64),
    /// Unit direction of the last chord.
    pub exit_dir: [f64; 3],
    pub fp: FirstPassageRecord,
    /// Last wall contact before the exit.
    pub last_contact: (f64, f64),
}

impl ExitRecord3D {
    pub fn exit_radius(&self) -> f64 {
        self.exit_point.0.hypot(self.exit_point.1)
    }
}

/// Trace a ray from bounces supplied by `next`. Returns the exit record or
/// `CensoredPath`.
pub fn trace_exit_3d_with<F>(level_s: f64, max_steps: u64, mut next: F) -> Result<ExitRecord3D>
where
    F: FnMut() -> BounceDraw,
{
    if !(level_s > 0.0 && level_s.is_finite()) {
        return Err(invalid(format!("level must be positive and finite, got {level_s}")));
    }
    let mut state = CylinderState::start();
    for n in 1..=max_steps {
        let prev = state;
        state.bounce(&next());
        if n % RENORMALIZE_EVERY == 0 {
            state.renormalize();
        }
        if state.x > level_s {
            let dx = state.x - prev.x;
            let f = (level_s - prev.x) / dx;
            let (dy, dz) = (state.y - prev.y, state.z - prev.z);
            let norm = (dx * dx + dy * dy + dz * dz).sqrt();
            return Ok(ExitRecord3D {
                level_s,
                exit_point: (prev.y + f * dy, prev.z + f * dz),
                exit_dir: [dx / norm, dy / norm, dz / norm],
                fp: FirstPassageRecord {
                    level_s,
                    n_steps: n,
                    s_before: prev.x,
                    s_after: state.x,
                    overshoot: state.x - level_s,
                    undershoot: level_s - prev.x,
                    parity_even: n % 2 == 0,
                    censored: false,
                },
                last_contact: (prev.y, prev.z),
            });
        }
    }
    Err(Error::CensoredPath { steps: max_steps })
}

pub fn trace_exit_3d<R: Rng + ?Sized>(level_s: f64, max_steps: u64, rng: &mut R) -> Result<ExitRecord3D> {
    trace_exit_3d_with(level_s, max_steps, || sample_bounce_draw(rng))
}

/// Trace with prescribed bounces, e.g. for hand-checked geometry.
pub fn trace_exit_3d_forced(level_s: f64, max_steps: u64, bounces: &[ReflectionDirection]) -> Result<ExitRecord3D> {
    let mut it = bounces.iter().cycle();
    trace_exit_3d_with(level_s, max_steps, || draw_of(it.next().unwrap()))
}

/// Reflection points `(k, x, y, z)` up to and including the first one past
/// the exit plane, for external plotting.
pub fn trace_trajectory_3d<R: Rng + ?Sized>(level_s: f64, max_steps: u64, rng: &mut R) -> Vec<(u64, CylinderState)> {
    let mut state = CylinderState::start();
    let mut out = vec![(0, state)];
    for n in 1..=max_steps {
        state.bounce(&sample_bounce_draw(rng));
        if n % RENORMALIZE_EVERY == 0 {
            state.renormalize();
        }
        out.push((n, state));
        if state.x > level_s {
            break;
        }
    }
    out
}

/// Exit records for a block of rays, censored rays counted and dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exit3dBatch {
    pub level_s: f64,
    pub exits: Vec<ExitRecord3D>,
    pub censoring: Censoring,
}

pub fn simulate_3d(level_s: f64, max_steps: u64, block: &RayBlock) -> Result<Exit3dBatch> {
    let raw = block.map(|_, rng| trace_exit_3d(level_s, max_steps, rng));
    let mut exits = Vec::with_capacity(raw.len());
    let mut censoring = Censoring::default();
    for r in raw {
        match r {
            Ok(e) => {
                censoring.record(false);
                exits.push(e);
            }
            Err(Error::CensoredPath { .. }) => censoring.record(true),
            Err(e) => return Err(e),
        }
    }
    Ok(Exit3dBatch { level_s, exits, censoring })
}

fn check_grid(grid: &[f64], lo: f64, hi: f64, name: &str) -> Result<()> {
    if grid.iter().any(|&t| !(t >= lo && t <= hi)) {
        return Err(invalid(format!("{name} grid must lie in [{lo}, {hi}]")));
    }
    Ok(())
}

/// Empirical `P(U_s / (U_s + O_s) <= t)` at finite `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaDirect {
    pub level_s: f64,
    pub t: Vec<f64>,
    pub prob: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Fraction of rays with `U_s == 0`.
    pub atom_at_zero: f64,
    pub censoring: Censoring,
}

pub fn gamma_direct(level_s: f64, t_grid: &[f64], max_steps: u64, block: &RayBlock) -> Result<GammaDirect> {
    check_grid(t_grid, 0.0, 1.0, "t")?;
    let recs = block.map(|_, rng| first_passage(&mut Cylinder3dStep, level_s, max_steps, rng));
    let recs: Vec<FirstPassageRecord> = recs.into_iter().collect::<Result<_>>()?;
    gamma_direct_from_records(level_s, t_grid, &recs)
}

pub fn gamma_direct_from_records(level_s: f64, t_grid: &[f64], recs: &[FirstPassageRecord]) -> Result<GammaDirect> {
    let censoring: Censoring = recs.iter().map(|r| r.censored).collect();
    let ratios: Vec<f64> = recs.iter().filter(|r| !r.censored).map(|r| r.undershoot_ratio()).collect();
    if ratios.is_empty() {
        return Err(invalid("every ray was censored"));
    }
    let n = ratios.len() as f64;
    let (prob, se) = t_grid
        .iter()
        .map(|&t| {
            let p = ratios.iter().filter(|&&r| r <= t).count() as f64 / n;
            (p, (p * (1.0 - p) / n).sqrt())
        })
        .unzip();
    let zeros = recs.iter().filter(|r| !r.censored && r.undershoot == 0.0).count() as f64;
    Ok(GammaDirect {
        level_s,
        t: t_grid.to_vec(),
        prob,
        std_error: se,
        atom_at_zero: zeros / n,
        censoring,
    })
}

/// First ladder pairs `(U_0, O_0)`; evaluates the stationary functional
/// `Gamma(t) = E[(t O_0 - (1 - t) U_0)^+] / E[O_0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderPairs {
    pairs: Vec<LadderPair>,
}

impl LadderPairs {
    pub fn new(pairs: Vec<LadderPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(invalid("need at least one ladder pair"));
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[LadderPair] {
        &self.pairs
    }

    fn numerator(&self, t: f64) -> Vec<f64> {
        self.pairs.iter().map(|p| (t * p.o0 - (1.0 - t) * p.u0).max(0.0)).collect()
    }

    fn overshoots(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.o0).collect()
    }

    pub fn mean_overshoot(&self) -> ConfidenceSummary {
        crate::stats::mean_ci(&self.overshoots(), 0.95).expect("non-empty")
    }

    pub fn gamma(&self, t: f64) -> Result<ConfidenceSummary> {
        ratio_estimator_ci(&self.numerator(t), &self.overshoots(), 0.95)
    }

    /// `Gamma(t - h) - 2 Gamma(t) + Gamma(t + h)` with its joint standard error.
    pub fn second_difference(&self, t: f64, h: f64) -> Result<ConfidenceSummary> {
        let (a, b, c) = (self.numerator(t - h), self.numerator(t), self.numerator(t + h));
        let combo: Vec<f64> = a.iter().zip(&b).zip(&c).map(|((a, b), c)| a - 2.0 * b + c).collect();
        ratio_estimator_ci(&combo, &self.overshoots(), 0.95)
    }

    /// Forward difference `Gamma(h) / h`.
    pub fn slope_at_zero(&self, h: f64) -> Result<ConfidenceSummary> {
        let g = self.gamma(h)?;
        Ok(ConfidenceSummary {
            estimate: g.estimate / h,
            std_error: g.std_error / h,
            lower: g.lower / h,
            upper: g.upper / h,
            ..g
        })
    }

    /// Upper bound `Gamma((1 + r)/2) - Gamma((1 - r)/2)` on the disc exit law.
    pub fn disc_bound(&self, r: f64) -> Result<ConfidenceSummary> {
        let (a, b) = (self.numerator(0.5 * (1.0 + r)), self.numerator(0.5 * (1.0 - r)));
        let diff: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b).collect();
        ratio_estimator_ci(&diff, &self.overshoots(), 0.95)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaFormula {
    pub t: Vec<f64>,
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_ladders: usize,
    pub censoring: Censoring,
}

/// Sample first ladder pairs of the axial walk.
pub fn sample_ladder_pairs(max_steps: u64, block: &RayBlock) -> Result<(LadderPairs, Censoring)> {
    let (pairs, censoring) = crate::walk::ladder_pairs(&Cylinder3dStep, max_steps, block);
    Ok((LadderPairs::new(pairs)?, censoring))
}

pub fn gamma_formula(t_grid: &[f64], max_steps: u64, block: &RayBlock) -> Result<(GammaFormula, LadderPairs)> {
    check_grid(t_grid, 0.0, 1.0, "t")?;
    let (pairs, censoring) = sample_ladder_pairs(max_steps, block)?;
    let est: Vec<ConfidenceSummary> = t_grid.iter().map(|&t| pairs.gamma(t)).collect::<Result<_>>()?;
    Ok((
        GammaFormula {
            t: t_grid.to_vec(),
            value: est.iter().map(|c| c.estimate).collect(),
            std_error: est.iter().map(|c| c.std_error).collect(),
            n_ladders: pairs.len(),
            censoring,
        },
        pairs,
    ))
}

/// Paired direct and formula estimates on one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub t: Vec<f64>,
    pub direct: GammaDirect,
    pub formula: GammaFormula,
}

impl GammaEstimate {
    pub fn sup_difference(&self) -> f64 {
        self.direct
            .prob
            .iter()
            .zip(&self.formula.value)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Linear upper bound `a(r)` on `P(Y_s in B_r(0))` in the limit.
pub fn disc_linear_bound(r: f64) -> f64 {
    let c = 0.5 - 0.5 * GAMMA_SLOPE_AT_ZERO;
    (1.0 - c) * r + c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscExitLaw {
    pub level_s: f64,
    pub r: Vec<f64>,
    pub prob: Vec<f64>,
    pub std_error: Vec<f64>,
    pub censoring: Censoring,
}

pub fn disc_exit_law_from(batch: &Exit3dBatch, r_grid: &[f64]) -> Result<DiscExitLaw> {
    check_grid(r_grid, 0.0, 1.0, "r")?;
    if batch.exits.is_empty() {
        return Err(invalid("no uncensored exits"));
    }
    let n = batch.exits.len() as f64;
    let (prob, se) = r_grid
        .iter()
        .map(|&r| {
            let p = batch.exits.iter().filter(|e| e.exit_radius() <= r).count() as f64 / n;
            (p, (p * (1.0 - p) / n).sqrt())
        })
        .unzip();
    Ok(DiscExitLaw {
        level_s: batch.level_s,
        r: r_grid.to_vec(),
        prob,
        std_error: se,
        censoring: batch.censoring,
    })
}

pub fn disc_exit_law(level_s: f64, r_grid: &[f64], max_steps: u64, block: &RayBlock) -> Result<DiscExitLaw> {
    disc_exit_law_from(&simulate_3d(level_s, max_steps, block)?, r_grid)
}

/// Brightness of an annulus of exit directions at the tube centre,
/// normalized by `s / (pi delta^2)` in the `delta -> 0` limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrightnessEstimate {
    pub level_s: f64,
    pub r1: f64,
    pub r2: f64,
    pub value: f64,
    pub std_error: f64,
    /// Edges in `a = distance / s`, increasing.
    pub a_edges: Vec<f64>,
    /// Mean visits per path in each `a` bin.
    pub mean_visits: Vec<f64>,
    pub censoring: Censoring,
}

/// Centre-hitting kernel used by the semi-analytic estimator: a wall point
/// at distance `a s` behind the opening sends a ray through `B_delta(0)`
/// with probability `delta^2 / (4 s^3 a^3)`, so after normalization each
/// visit contributes `1 / (4 pi s^2 a^3)`.
fn kernel_weight(level_s: f64, a: f64) -> f64 {
    1.0 / (4.0 * PI * level_s * level_s * a * a * a)
}

/// `a` bins for an annulus, log-spaced over `(1/r2, 1/r1)`.
fn annulus_bins(r1: f64, r2: f64, n_bins: usize) -> Vec<f64> {
    logspace(1.0 / r2, 1.0 / r1, n_bins + 1)
}

fn check_annulus(r1: f64, r2: f64) -> Result<()> {
    if !(r1 > 0.0 && r1 <= r2 && r2 < 1.0) {
        return Err(invalid(format!("annulus ({r1}, {r2}) must satisfy 0 < r1 <= r2 < 1")));
    }
    Ok(())
}

/// Options for [`brightness_profile`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrightnessOptions {
    pub n_bins: usize,
    pub max_steps: u64,
    /// Minimum total visits required in the bin nearest `a = 1/r1`.
    pub min_tail_visits: u64,
}

impl BrightnessOptions {
    pub fn new(level_s: f64) -> Self {
        Self {
            n_bins: 64,
            max_steps: crate::walk::default_max_steps_3d(level_s),
            min_tail_visits: 50,
        }
    }
}

/// Semi-analytic brightness: sampled occupation of the axial walk in the
/// annulus' `a` window, integrated against [`kernel_weight`]. Censored walks
/// keep the visits made before the cap.
pub fn brightness_profile(
    level_s: f64,
    annuli: &[(f64, f64)],
    opts: &BrightnessOptions,
    block: &RayBlock,
) -> Result<Vec<BrightnessEstimate>> {
    annuli
        .iter()
        .map(|&(r1, r2)| brightness_one(level_s, r1, r2, opts, block))
        .collect()
}

fn brightness_one(level_s: f64, r1: f64, r2: f64, opts: &BrightnessOptions, block: &RayBlock) -> Result<BrightnessEstimate> {
    check_annulus(r1, r2)?;
    if r1 == r2 {
        return Ok(BrightnessEstimate {
            level_s,
            r1,
            r2,
            value: 0.0,
            std_error: 0.0,
            a_edges: vec![],
            mean_visits: vec![],
            censoring: Censoring::default(),
        });
    }
    let a_edges = annulus_bins(r1, r2, opts.n_bins);
    // relative position S_k - s = -a s; increasing order means decreasing a
    let bounds: Vec<(f64, f64)> = a_edges.windows(2).rev().map(|w| (-w[1] * level_s, -w[0] * level_s)).collect();
    let intervals = Intervals::new(bounds)?;
    let weights: Vec<f64> = a_edges
        .windows(2)
        .rev()
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            // mean of a^-3 over the bin
            let avg = (lo.powi(-2) - hi.powi(-2)) / (2.0 * (hi - lo));
            avg * kernel_weight(level_s, 1.0)
        })
        .collect();
    let runs = block.map(|_, rng| crate::walk::occupation_counts(&mut Cylinder3dStep, level_s, &intervals, opts.max_steps, rng));
    let runs: Vec<_> = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let per_path: Vec<f64> = runs
        .iter()
        .map(|r| r.counts.iter().zip(&weights).map(|(&c, w)| c as f64 * w).sum())
        .collect();
    let n = per_path.len() as f64;
    let value = pairwise_sum(&per_path) / n;
    let var = per_path.iter().map(|x| (x - value) * (x - value)).sum::<f64>() / (n - 1.0).max(1.0);
    let k = intervals.len();
    let totals: Vec<u64> = (0..k).map(|i| runs.iter().map(|r| r.counts[i]).sum()).collect();
    // intervals[0] is the bin with the largest a, i.e. nearest 1/r1
    if totals[0] < opts.min_tail_visits {
        return Err(Error::UnreliableTail {
            a: 1.0 / r1,
            visits: totals[0],
            required: opts.min_tail_visits,
        });
    }
    let mean_visits: Vec<f64> = totals.iter().rev().map(|&t| t as f64 / n).collect();
    Ok(BrightnessEstimate {
        level_s,
        r1,
        r2,
        value,
        std_error: (var / n).sqrt(),
        a_edges,
        mean_visits,
        censoring: runs.iter().map(|r| r.censored).collect(),
    })
}

/// Kernel integral of an occupation density `rho(a)` (per unit `a`,
/// normalized by `s^2`) over the annulus window.
pub fn brightness_analytic(r1: f64, r2: f64, rho: impl Fn(f64) -> f64) -> f64 {
    if r1 == r2 {
        return 0.0;
    }
    integrate(|a| rho(a) / (4.0 * PI * a * a * a), 1.0 / r2, 1.0 / r1, 1e-15)
}

/// Exact density (per unit area of the exit disc) that a Lambertian ray
/// leaving a wall point `d` behind the opening crosses the disc at its
/// centre.
pub fn center_hit_density(d: f64) -> f64 {
    1.0 / (2.0 * PI * (1.0 + d * d).powf(1.5))
}

/// Next-event brightness estimate with the exact hitting density: every
/// pre-exit wall contact at distance `d` whose direction to the centre falls
/// in the annulus contributes `s * center_hit_density(d)`.
pub fn brightness_next_event(level_s: f64, r1: f64, r2: f64, max_steps: u64, block: &RayBlock) -> Result<ConfidenceSummary> {
    check_annulus(r1, r2)?;
    let (lo, hi) = (r1 / level_s, r2 / level_s);
    let runs = block.map(|_, rng| {
        let mut acc = 0.0;
        let fp = crate::walk::first_passage_visiting(&mut Cylinder3dStep, level_s, max_steps, rng, |x| {
            let d = level_s - x;
            let transverse = 1.0 / d.hypot(1.0);
            if lo < transverse && transverse <= hi {
                acc += level_s * center_hit_density(d);
            }
        });
        fp.map(|_| acc)
    });
    let xs: Vec<f64> = runs.into_iter().collect::<Result<_>>()?;
    crate::stats::mean_ci(&xs, 0.95)
}

/// Angle of a point on the cross-section, in `(-pi, pi]`.
pub fn polar_angle(y: f64, z: f64) -> f64 {
    z.atan2(y)
}
