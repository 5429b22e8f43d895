//! The 2D model: a ray bouncing between the walls `y = 0` and `y = 1`,
//! started at `(-s, 0)` and leaving through the edge `x = 0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{Censoring, RayBlock};
use crate::error::{invalid, Error, Result};
use crate::sampling::open_unit;
use crate::stats::{proportion_ci, ConfidenceSummary, Histogram};
use crate::walk::{first_passage, first_passage_visiting, FirstPassageRecord, Stepper, Strip2dStep};

/// Exit angle `Lambda_s` (positive when the ray moves up) and exit height
/// `Y_s` of the crossing step.
pub fn exit_angle_position(overshoot: f64, undershoot: f64, parity_even: bool) -> (f64, f64) {
    let step = overshoot + undershoot;
    let angle = (1.0 / step).atan();
    if parity_even {
        (-angle, overshoot / step)
    } else {
        (angle, undershoot / step)
    }
}

/// `sqrt(log x / log s)`, with `x <= 1` mapped to 0.
pub fn log_scaled(x: f64, level_s: f64) -> f64 {
    if x <= 1.0 {
        0.0
    } else {
        (x.ln() / level_s.ln()).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord2D {
    pub level_s: f64,
    pub lambda: f64,
    pub y_exit: f64,
    pub fp: FirstPassageRecord,
}

impl ExitRecord2D {
    pub fn from_passage(fp: FirstPassageRecord) -> Self {
        let (lambda, y_exit) = exit_angle_position(fp.overshoot, fp.undershoot, fp.parity_even);
        Self {
            level_s: fp.level_s,
            lambda,
            y_exit,
            fp,
        }
    }

    /// `sqrt(log cot|Lambda_s| / log s)`.
    pub fn scaled_angle(&self) -> f64 {
        log_scaled(self.fp.overshoot + self.fp.undershoot, self.level_s)
    }

    /// `sqrt(log U_s / log s)`.
    pub fn scaled_undershoot(&self) -> f64 {
        log_scaled(self.fp.undershoot, self.level_s)
    }
}

pub fn trace_exit_2d_with<S: Stepper, R: Rng + ?Sized>(stepper: &mut S, level_s: f64, max_steps: u64, rng: &mut R) -> Result<ExitRecord2D> {
    let fp = first_passage(stepper, level_s, max_steps, rng)?;
    if fp.censored {
        return Err(Error::CensoredPath { steps: fp.n_steps });
    }
    Ok(ExitRecord2D::from_passage(fp))
}

pub fn trace_exit_2d<R: Rng + ?Sized>(level_s: f64, max_steps: u64, rng: &mut R) -> Result<ExitRecord2D> {
    trace_exit_2d_with(&mut Strip2dStep, level_s, max_steps, rng)
}

/// Reflection points of one ray in tube coordinates, including the first
/// one past the exit edge, plus the exit point itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline2D {
    pub contacts: Vec<(f64, f64)>,
    pub exit: (f64, f64),
    pub record: ExitRecord2D,
}

impl Polyline2D {
    /// The visible path: contacts inside the tube followed by the exit point.
    pub fn truncated(&self) -> Vec<(f64, f64)> {
        let mut pts = self.contacts[..self.contacts.len() - 1].to_vec();
        pts.push(self.exit);
        pts
    }

    /// `(Lambda, Y)` from intersecting the last segment with `x = 0`.
    pub fn geometric_exit(&self) -> (f64, f64) {
        let n = self.contacts.len();
        let (x0, y0) = self.contacts[n - 2];
        let (x1, y1) = self.contacts[n - 1];
        let y = y0 + (0.0 - x0) * (y1 - y0) / (x1 - x0);
        ((y1 - y0).atan2(x1 - x0), y)
    }
}

pub fn trace_path_2d_with<S: Stepper, R: Rng + ?Sized>(stepper: &mut S, level_s: f64, max_steps: u64, rng: &mut R) -> Result<Polyline2D> {
    let mut contacts = Vec::new();
    let mut k = 0u64;
    let fp = first_passage_visiting(stepper, level_s, max_steps, rng, |x| {
        contacts.push((x - level_s, (k % 2) as f64));
        k += 1;
    })?;
    if fp.censored {
        return Err(Error::CensoredPath { steps: fp.n_steps });
    }
    contacts.push((fp.s_after - level_s, (k % 2) as f64));
    let record = ExitRecord2D::from_passage(fp);
    Ok(Polyline2D {
        contacts,
        exit: (0.0, record.y_exit),
        record,
    })
}

pub fn trace_path_2d<R: Rng + ?Sized>(level_s: f64, max_steps: u64, rng: &mut R) -> Result<Polyline2D> {
    trace_path_2d_with(&mut Strip2dStep, level_s, max_steps, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exit2dBatch {
    pub level_s: f64,
    pub exits: Vec<ExitRecord2D>,
    pub censoring: Censoring,
}

impl Exit2dBatch {
    pub fn from_records(level_s: f64, recs: &[FirstPassageRecord]) -> Self {
        Self {
            level_s,
            exits: recs
                .iter()
                .filter(|r| !r.censored)
                .map(|&r| ExitRecord2D::from_passage(r))
                .collect(),
            censoring: recs.iter().map(|r| r.censored).collect(),
        }
    }

    fn n(&self) -> Result<f64> {
        if self.exits.is_empty() {
            return Err(invalid("no uncensored exits"));
        }
        Ok(self.exits.len() as f64)
    }

    fn fraction(&self, pred: impl Fn(&ExitRecord2D) -> bool) -> f64 {
        self.exits.iter().filter(|e| pred(e)).count() as f64 / self.exits.len() as f64
    }

    pub fn parity_even_fraction(&self) -> ConfidenceSummary {
        let k = self.exits.iter().filter(|e| e.fp.parity_even).count() as u64;
        proportion_ci(k, self.exits.len() as u64, 0.95)
    }

    /// `P(|Lambda_s| > threshold)`.
    pub fn large_angle_fraction(&self, threshold: f64) -> ConfidenceSummary {
        let k = self.exits.iter().filter(|e| e.lambda.abs() > threshold).count() as u64;
        proportion_ci(k, self.exits.len() as u64, 0.95)
    }

    pub fn exit_heights(&self) -> Vec<f64> {
        self.exits.iter().map(|e| e.y_exit).collect()
    }

    pub fn angle_histogram(&self, edges: Vec<f64>) -> Result<Histogram> {
        let mut h = Histogram::new(edges)?;
        h.extend(self.exits.iter().map(|e| e.lambda));
        Ok(h)
    }
}

pub fn simulate_2d(level_s: f64, max_steps: u64, block: &RayBlock) -> Result<Exit2dBatch> {
    let recs = block.map(|_, rng| first_passage(&mut Strip2dStep, level_s, max_steps, rng));
    let recs: Vec<FirstPassageRecord> = recs.into_iter().collect::<Result<_>>()?;
    Ok(Exit2dBatch::from_records(level_s, &recs))
}

fn check_grid(grid: &[f64], name: &str) -> Result<()> {
    if grid.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(invalid(format!("{name} grid must lie in [0, 1]")));
    }
    Ok(())
}

/// Empirical `u(s, t) = P(U_s / (O_s + U_s) <= t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndershootLaw {
    pub level_s: f64,
    pub t: Vec<f64>,
    pub prob: Vec<f64>,
    pub std_error: Vec<f64>,
    pub censoring: Censoring,
}

pub fn undershoot_ratio_law_from(batch: &Exit2dBatch, t_grid: &[f64]) -> Result<UndershootLaw> {
    check_grid(t_grid, "t")?;
    let n = batch.n()?;
    let (prob, se) = t_grid
        .iter()
        .map(|&t| {
            let p = batch.fraction(|e| e.fp.undershoot_ratio() <= t);
            (p, (p * (1.0 - p) / n).sqrt())
        })
        .unzip();
    Ok(UndershootLaw {
        level_s: batch.level_s,
        t: t_grid.to_vec(),
        prob,
        std_error: se,
        censoring: batch.censoring,
    })
}

pub fn undershoot_ratio_law(level_s: f64, t_grid: &[f64], max_steps: u64, block: &RayBlock) -> Result<UndershootLaw> {
    undershoot_ratio_law_from(&simulate_2d(level_s, max_steps, block)?, t_grid)
}

/// Joint exit-law events on a `(t, v)` grid, indexed `[i_t][i_v]`.
///
/// * `undershoot_even` / `undershoot_odd`:
///   `P(sqrt(log U_s / log s) <= t, U_s / (U_s + O_s) <= v, parity)`
/// * `angle_down` (`Lambda_s <= 0`) / `angle_up` (`Lambda_s >= 0`):
///   `P(sqrt(log cot|Lambda_s| / log s) <= t, side, Y_s <= v)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLawSummary {
    pub level_s: f64,
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub undershoot_even: Vec<Vec<f64>>,
    pub undershoot_odd: Vec<Vec<f64>>,
    pub angle_down: Vec<Vec<f64>>,
    pub angle_up: Vec<Vec<f64>>,
    pub n: u64,
    pub censoring: Censoring,
}

impl JointLawSummary {
    /// Binomial standard error of a cell probability.
    pub fn std_error(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.n as f64).sqrt()
    }
}

pub fn joint_exit_law_from(batch: &Exit2dBatch, t_grid: &[f64], v_grid: &[f64]) -> Result<JointLawSummary> {
    check_grid(t_grid, "t")?;
    check_grid(v_grid, "v")?;
    batch.n()?;
    let table = |pred: &dyn Fn(&ExitRecord2D, f64, f64) -> bool| -> Vec<Vec<f64>> {
        t_grid
            .iter()
            .map(|&t| v_grid.iter().map(|&v| batch.fraction(|e| pred(e, t, v))).collect())
            .collect()
    };
    let under = |e: &ExitRecord2D, t: f64, v: f64| e.scaled_undershoot() <= t && e.fp.undershoot_ratio() <= v;
    let angle = |e: &ExitRecord2D, t: f64, v: f64| e.scaled_angle() <= t && e.y_exit <= v;
    Ok(JointLawSummary {
        level_s: batch.level_s,
        t: t_grid.to_vec(),
        v: v_grid.to_vec(),
        undershoot_even: table(&|e, t, v| e.fp.parity_even && under(e, t, v)),
        undershoot_odd: table(&|e, t, v| !e.fp.parity_even && under(e, t, v)),
        angle_down: table(&|e, t, v| e.lambda <= 0.0 && angle(e, t, v)),
        angle_up: table(&|e, t, v| e.lambda >= 0.0 && angle(e, t, v)),
        n: batch.exits.len() as u64,
        censoring: batch.censoring,
    })
}

pub fn joint_exit_law(level_s: f64, t_grid: &[f64], v_grid: &[f64], max_steps: u64, block: &RayBlock) -> Result<JointLawSummary> {
    joint_exit_law_from(&simulate_2d(level_s, max_steps, block)?, t_grid, v_grid)
}

/// Law of `(sqrt(log cot|Lambda_s| / log s), sign Lambda_s)` given
/// `Y_s in (y - eps, y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeConditional {
    pub level_s: f64,
    pub y: f64,
    pub eps: f64,
    pub t: Vec<f64>,
    /// Rays arriving from below (`Lambda_s >= 0`).
    pub from_below: Vec<f64>,
    /// Rays arriving from above (`Lambda_s < 0`).
    pub from_above: Vec<f64>,
    pub in_window: u64,
    pub n: u64,
    pub censoring: Censoring,
}

impl EyeConditional {
    pub fn std_error(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.in_window as f64).sqrt()
    }
}

pub fn eye_conditional_from(batch: &Exit2dBatch, y: f64, eps: f64, t_grid: &[f64], min_in_window: u64) -> Result<EyeConditional> {
    if !(0.0 < eps && eps < y && y <= 1.0) {
        return Err(invalid(format!("need 0 < eps < y <= 1, got y = {y}, eps = {eps}")));
    }
    check_grid(t_grid, "t")?;
    let window: Vec<&ExitRecord2D> = batch.exits.iter().filter(|e| e.y_exit > y - eps && e.y_exit <= y).collect();
    let k = window.len() as u64;
    if k < min_in_window.max(1) {
        return Err(Error::InsufficientConditioningMass {
            found: k,
            required: min_in_window.max(1),
        });
    }
    let frac = |pred: &dyn Fn(&ExitRecord2D) -> bool| window.iter().filter(|e| pred(e)).count() as f64 / k as f64;
    Ok(EyeConditional {
        level_s: batch.level_s,
        y,
        eps,
        t: t_grid.to_vec(),
        from_below: t_grid
            .iter()
            .map(|&t| frac(&|e| e.lambda >= 0.0 && e.scaled_angle() <= t))
            .collect(),
        from_above: t_grid.iter().map(|&t| frac(&|e| e.lambda < 0.0 && e.scaled_angle() <= t)).collect(),
        in_window: k,
        n: batch.exits.len() as u64,
        censoring: batch.censoring,
    })
}

pub fn eye_conditional(
    level_s: f64,
    y: f64,
    eps: f64,
    t_grid: &[f64],
    max_steps: u64,
    min_in_window: u64,
    block: &RayBlock,
) -> Result<EyeConditional> {
    eye_conditional_from(&simulate_2d(level_s, max_steps, block)?, y, eps, t_grid, min_in_window)
}

/// One draw of the approximation `R arccot(s^(V^2))`, `V` uniform and
/// `P(R = 1) = y`.
pub fn heuristic_angle<R: Rng + ?Sized>(level_s: f64, y: f64, rng: &mut R) -> f64 {
    let v = open_unit(rng);
    let sign = if open_unit(rng) < y { 1.0 } else { -1.0 };
    sign * (1.0 / level_s.powf(v * v)).atan()
}

pub fn heuristic_angle_histogram(level_s: f64, y: f64, edges: Vec<f64>, block: &RayBlock) -> Result<Histogram> {
    let mut h = Histogram::new(edges)?;
    h.extend(block.map(|_, rng| heuristic_angle(level_s, y, rng)));
    Ok(h)
}
