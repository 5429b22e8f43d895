//! Minimal solutions of `W(s) = g(s) + int_{-inf}^{s} W(s - y) F(dy)` on
//! `[0, s_max]`, by direct discretization and by the renewal representation.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampling::{step_cdf_2d, step_density_2d, step_tail_2d, step_tail_2d_scaled};
use crate::walk::RenewalMeasureEstimate;

/// Law of the walk increment.
pub trait StepLaw: Sync + Send {
    fn density(&self, x: f64) -> f64;
    fn cdf(&self, x: f64) -> f64;
    fn tail(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }
}

/// Increment of the strip walk.
#[derive(Debug, Clone, Copy, Default)]
pub struct Strip2dLaw;

impl StepLaw for Strip2dLaw {
    fn density(&self, x: f64) -> f64 {
        step_density_2d(x)
    }
    fn cdf(&self, x: f64) -> f64 {
        step_cdf_2d(x)
    }
    fn tail(&self, x: f64) -> f64 {
        step_tail_2d(x)
    }
}

/// Inhomogeneous term `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Forcing {
    /// `P(X > s/t)` for the strip step; its solution is `u(s, t)`.
    U2d {
        t: f64,
    },
    /// `P(X > s/t) - t^2 P(X > s)`; its solution is `u(s, t) - t^2`.
    U2dTilde {
        t: f64,
    },
    /// `c / (1 + s^(2 + alpha))`.
    Decay {
        c: f64,
        alpha: f64,
    },
    Zero,
    /// Linear interpolation of `(s, g)` pairs, held constant past either end.
    Tabulated {
        s: Vec<f64>,
        g: Vec<f64>,
    },
}

impl Forcing {
    pub fn tabulated(s: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if s.len() != g.len() || s.len() < 2 {
            return Err(invalid("tabulated forcing needs at least two (s, g) rows"));
        }
        if s.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("tabulated s must be strictly increasing"));
        }
        Ok(Self::Tabulated { s, g })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Forcing::U2d { t } | Forcing::U2dTilde { t } if !(0.0..=1.0).contains(&t) => {
                Err(invalid(format!("t must lie in [0, 1], got {t}")))
            }
            Forcing::Decay { c, alpha } if !(c >= 0.0 && alpha > 0.0) => Err(invalid(format!(
                "decay forcing needs c >= 0 and alpha > 0, got c = {c}, alpha = {alpha}"
            ))),
            Forcing::Tabulated { ref g, .. } if g.iter().any(|&x| !(x >= 0.0 && x.is_finite())) => {
                Err(invalid("tabulated g must be finite and nonnegative"))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Forcing::U2d { t } => step_tail_2d_scaled(s, *t),
            Forcing::U2dTilde { t } => (step_tail_2d_scaled(s, *t) - t * t * step_tail_2d(s)).max(0.0),
            Forcing::Decay { c, alpha } => c / (1.0 + s.powf(2.0 + alpha)),
            Forcing::Zero => 0.0,
            Forcing::Tabulated { s: xs, g } => {
                let k = xs.partition_point(|&x| x <= s);
                if k == 0 {
                    g[0]
                } else if k == xs.len() {
                    g[k - 1]
                } else {
                    let f = (s - xs[k - 1]) / (xs[k] - xs[k - 1]);
                    g[k - 1] + f * (g[k] - g[k - 1])
                }
            }
        }
    }
}

/// Values of `W` assumed beyond the computational grid `[0, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Exterior {
    /// `W(x) = W(L)`. Solutions vary on the scale of `x` itself, so this
    /// is accurate even though the walk often wanders past `L`.
    #[default]
    Edge,
    Constant(f64),
}

#[derive(Clone)]
pub struct WienerHopfProblem {
    pub law: Arc<dyn StepLaw>,
    pub forcing: Forcing,
    pub s_max: f64,
    pub grid_step: f64,
    /// The grid extends `y_truncation` past `s_max`.
    pub y_truncation: f64,
    pub exterior: Exterior,
}

impl std::fmt::Debug for WienerHopfProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WienerHopfProblem")
            .field("forcing", &self.forcing)
            .field("s_max", &self.s_max)
            .field("grid_step", &self.grid_step)
            .field("y_truncation", &self.y_truncation)
            .field("exterior", &self.exterior)
            .finish()
    }
}

/// Smallest `Y` (to 1%) with `F(-Y) <= eps`.
pub fn truncation_for<L: StepLaw + ?Sized>(law: &L, eps: f64) -> f64 {
    let mut hi = 1.0;
    while law.cdf(-hi) > eps {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 0.01 * hi {
        let mid = 0.5 * (lo + hi);
        if law.cdf(-mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

impl WienerHopfProblem {
    pub fn new(law: Arc<dyn StepLaw>, forcing: Forcing, s_max: f64, grid_step: f64, y_truncation: f64) -> Result<Self> {
        forcing.validate()?;
        if !(s_max > 0.0 && s_max.is_finite()) || !(grid_step > 0.0) || grid_step > s_max {
            return Err(invalid(format!(
                "need 0 < grid_step <= s_max, got h = {grid_step}, s_max = {s_max}"
            )));
        }
        if !(y_truncation >= 0.0 && y_truncation.is_finite()) {
            return Err(invalid("y_truncation must be finite and nonnegative"));
        }
        Ok(Self {
            law,
            forcing,
            s_max,
            grid_step,
            y_truncation,
            exterior: Exterior::Edge,
        })
    }

    /// Strip kernel with the cutoff chosen so that `F(-Y) < tol / 10`.
    pub fn strip2d(forcing: Forcing, s_max: f64, grid_step: f64, tol: f64) -> Result<Self> {
        let y = truncation_for(&Strip2dLaw, 0.1 * tol);
        Self::new(Arc::new(Strip2dLaw), forcing, s_max, grid_step, y)
    }

    pub fn with_exterior(mut self, exterior: Exterior) -> Self {
        self.exterior = exterior;
        self
    }

    fn n_out(&self) -> usize {
        (self.s_max / self.grid_step).round() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// BiCGSTAB on the discretized system.
    #[default]
    Krylov,
    /// Fixed-point sweeps from `W = 0`, checked for monotonicity.
    Monotone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: Scheme,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20_000,
            scheme: Scheme::Krylov,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerHopfSolution {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub iterations: usize,
    /// Sup norm of the discrete defect.
    pub residual: f64,
    pub truncation_error_bound: f64,
    pub scheme: Scheme,
}

impl WienerHopfSolution {
    /// Linear interpolation on the grid.
    pub fn value_at(&self, s: f64) -> f64 {
        interpolate(&self.w, self.s[1] - self.s[0], s)
    }
}

fn interpolate(values: &[f64], h: f64, s: f64) -> f64 {
    let x = (s / h).max(0.0);
    let k = x.floor() as usize;
    if k + 1 >= values.len() {
        return *values.last().unwrap();
    }
    let f = x - k as f64;
    values[k] + f * (values[k + 1] - values[k])
}

// 8-point Gauss-Legendre on [-1, 1]
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        acc += w * (f(c - r * x) + f(c + r * x));
    }
    acc * r
}

/// The truncated operator `W -> A W + c e` on the grid `x_j = j h`,
/// `j < n`, with hat-function product integration.
struct Discretized {
    n: usize,
    fft_len: usize,
    kernel_hat: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `kL(i h)`: the part of column 0 lying left of the grid.
    first_col_excess: Vec<f64>,
    /// `kR((i - n + 1) h)`: the part of column `n - 1` beyond the grid.
    last_col_excess: Vec<f64>,
    /// `F(x_i - L)`, the mass landing beyond the grid.
    beyond: Vec<f64>,
    edge: bool,
    rhs: Vec<f64>,
}

impl Discretized {
    fn new(p: &WienerHopfProblem) -> Self {
        let h = p.grid_step;
        let n = ((p.s_max + p.y_truncation) / h).ceil() as usize + 1;
        let big_l = (n - 1) as f64 * h;
        let law = &*p.law;
        // index d = i - j + n - 1, offset m = (i - j) h
        let (kr, kl): (Vec<f64>, Vec<f64>) = (0..2 * n - 1)
            .into_par_iter()
            .map(|d| {
                let m = (d as f64 - (n - 1) as f64) * h;
                let kr = gauss_legendre(|y| (1.0 - (m - y) / h) * law.density(y), m - h, m);
                let kl = gauss_legendre(|y| (1.0 - (y - m) / h) * law.density(y), m, m + h);
                (kr, kl)
            })
            .unzip();
        let fft_len = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let mut kernel_hat = vec![Complex::new(0.0, 0.0); fft_len];
        for i in 0..n {
            kernel_hat[i].re = kr[i + n - 1] + kl[i + n - 1];
        }
        for j in 1..n {
            kernel_hat[fft_len - j].re = kr[n - 1 - j] + kl[n - 1 - j];
        }
        forward.process(&mut kernel_hat);
        let scale = 1.0 / fft_len as f64;
        kernel_hat.iter_mut().for_each(|z| *z *= scale);
        let beyond: Vec<f64> = (0..n).map(|i| law.cdf(i as f64 * h - big_l)).collect();
        let c = match p.exterior {
            Exterior::Edge => 0.0,
            Exterior::Constant(c) => c,
        };
        let rhs = (0..n)
            .into_par_iter()
            .map(|i| p.forcing.eval(i as f64 * h) + c * beyond[i])
            .collect();
        Self {
            n,
            fft_len,
            kernel_hat,
            forward,
            inverse,
            first_col_excess: (0..n).map(|i| kl[i + n - 1]).collect(),
            last_col_excess: (0..n).map(|i| kr[i]).collect(),
            beyond,
            edge: p.exterior == Exterior::Edge,
            rhs,
        }
    }

    fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_len];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.inverse.process(&mut buf);
        let (x0, xl) = (x[0], x[self.n - 1]);
        let edge = if self.edge { xl } else { 0.0 };
        (0..self.n)
            .map(|i| buf[i].re - self.first_col_excess[i] * x0 - self.last_col_excess[i] * xl + self.beyond[i] * edge)
            .collect()
    }

    /// `b - (I - A) x`.
    fn defect(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.apply_a(x);
        (0..self.n).map(|i| self.rhs[i] + ax[i] - x[i]).collect()
    }

    fn picard_sweep(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.apply_a(x);
        self.rhs.iter().zip(ax).map(|(b, a)| b + a).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// The discrete system amplifies a defect by up to the expected number of
/// walk steps before exit (about 1e5 on desk-scale grids), so the Krylov
/// solve targets a defect this much smaller than the requested accuracy.
const KRYLOV_DEFECT_FACTOR: f64 = 1e-7;

/// BiCGSTAB for `(I - A) x = b`, restarted whenever the recurrence stalls.
/// Returns the iterate and iteration count once the true defect is below
/// `tol` in sup norm.
fn bicgstab(sys: &Discretized, tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = sys.n;
    let op = |v: &[f64]| -> Vec<f64> {
        let av = sys.apply_a(v);
        v.iter().zip(av).map(|(x, a)| x - a).collect()
    };
    let mut x = vec![0.0; n];
    let mut iters = 0;
    loop {
        let mut r = sys.defect(&x);
        let d = sup_norm(&r);
        if d < tol {
            return Ok((x, iters));
        }
        if iters >= max_iter {
            return Err(Error::NonConvergence {
                iterations: iters,
                defect: d,
            });
        }
        let r_hat = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        while iters < max_iter {
            iters += 1;
            let rho_new = dot(&r_hat, &r);
            if rho_new.abs() < 1e-300 || omega.abs() < 1e-300 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            v = op(&p);
            alpha = rho / dot(&r_hat, &v);
            let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
            if sup_norm(&s) < 0.25 * tol {
                x.iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
                break;
            }
            let t = op(&s);
            omega = dot(&t, &s) / dot(&t, &t);
            for i in 0..n {
                x[i] += alpha * p[i] + omega * s[i];
                r[i] = s[i] - omega * t[i];
            }
            if sup_norm(&r) < 0.25 * tol {
                break;
            }
        }
    }
}

fn check_direction(prev: &[f64], next: &[f64], increasing: bool, sweep: usize, h: f64) -> Result<()> {
    for (i, (a, b)) in prev.iter().zip(next).enumerate() {
        let slack = 1e-12 * (1.0 + a.abs());
        let bad = if increasing { *b < a - slack } else { *b > a + slack };
        if bad {
            return Err(Error::NonMonotone { sweep, s: i as f64 * h });
        }
    }
    Ok(())
}

/// `sweeps` fixed-point sweeps from the constant `start`, restricted to
/// `[0, s_max]`. From 0 the iterates must increase and from a
/// supersolution they must decrease; either failure is `NonMonotone`.
pub fn picard_sweeps(problem: &WienerHopfProblem, start: f64, sweeps: usize) -> Result<Vec<f64>> {
    let sys = Discretized::new(problem);
    let mut w = vec![start; sys.n];
    for k in 1..=sweeps {
        let next = sys.picard_sweep(&w);
        check_direction(&w, &next, start == 0.0, k, problem.grid_step)?;
        w = next;
    }
    w.truncate(problem.n_out());
    Ok(w)
}

pub fn solve_min_iterative(problem: &WienerHopfProblem, opts: &SolveOptions) -> Result<WienerHopfSolution> {
    if !(opts.tol > 0.0) {
        return Err(invalid("tol must be positive"));
    }
    let sys = Discretized::new(problem);
    let (mut w, iterations) = match opts.scheme {
        Scheme::Krylov => bicgstab(&sys, (opts.tol * KRYLOV_DEFECT_FACTOR).max(1e-14), opts.max_iter)?,
        Scheme::Monotone => {
            let mut w = vec![0.0; sys.n];
            let mut k = 0;
            loop {
                k += 1;
                let next = sys.picard_sweep(&w);
                check_direction(&w, &next, true, k, problem.grid_step)?;
                let change = w.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                w = next;
                if change < opts.tol {
                    break (w, k);
                }
                if k >= opts.max_iter {
                    return Err(Error::NonConvergence {
                        iterations: k,
                        defect: change,
                    });
                }
            }
        }
    };
    let residual = sup_norm(&sys.defect(&w));
    // roundoff can leave the minimal solution slightly negative
    w.iter_mut().for_each(|x| *x = x.max(0.0));
    let y_cut = (sys.n - 1) as f64 * problem.grid_step - problem.s_max;
    let far = problem.law.cdf(-y_cut);
    let n_out = problem.n_out();
    let bound = match problem.exterior {
        Exterior::Constant(c) => far * w.iter().fold(0.0f64, |m, x| m.max((x - c).abs())),
        Exterior::Edge => far * (w[sys.n - 1] - w[n_out - 1]).abs(),
    };
    if bound > opts.tol {
        return Err(Error::TruncationDominates { bound, tol: opts.tol });
    }
    w.truncate(n_out);
    Ok(WienerHopfSolution {
        s: (0..n_out).map(|i| i as f64 * problem.grid_step).collect(),
        w,
        iterations,
        residual,
        truncation_error_bound: bound,
        scheme: opts.scheme,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalSolution {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
}

/// Point masses of a renewal estimate at bin midpoints, including the unit
/// atom at 0.
fn atoms(u: &RenewalMeasureEstimate) -> Vec<(f64, f64)> {
    std::iter::once((0.0, 1.0))
        .chain(u.midpoints().zip(u.mass.iter().copied()).filter(|&(_, m)| m > 0.0))
        .collect()
}

/// `W = G * U+` with `G(s) = int g(s - y) U-(dy)`. `minus` holds the
/// descending renewal measure reflected to `[0, inf)`; its window should
/// reach well past `s_max`, as mass beyond it is dropped from `G`.
pub fn solve_via_renewal(
    forcing: &Forcing,
    plus: &RenewalMeasureEstimate,
    minus: &RenewalMeasureEstimate,
    s_max: f64,
    grid_step: f64,
) -> Result<RenewalSolution> {
    forcing.validate()?;
    if !(grid_step > 0.0 && s_max >= grid_step) {
        return Err(invalid("need 0 < grid_step <= s_max"));
    }
    if plus.window_max() < s_max {
        return Err(Error::WindowTooSmall {
            window: plus.window_max(),
            s_max,
        });
    }
    let minus_atoms = atoms(minus);
    let half = 0.5 * grid_step;
    let n_g = (s_max / half).ceil() as usize + 2;
    let g_conv: Vec<f64> = (0..n_g)
        .into_par_iter()
        .map(|k| {
            let x = k as f64 * half;
            minus_atoms.iter().map(|&(m, w)| w * forcing.eval(x + m)).sum()
        })
        .collect();
    let plus_bins: Vec<(f64, f64, f64)> = plus
        .bin_edges
        .windows(2)
        .zip(&plus.mass)
        .filter(|&(_, &m)| m > 0.0)
        .map(|(e, &m)| (e[0], e[1], m))
        .collect();
    let n_out = (s_max / grid_step).round() as usize + 1;
    let w = (0..n_out)
        .into_par_iter()
        .map(|j| {
            let s = j as f64 * grid_step;
            // unit atom at 0, then each bin's mass spread evenly over the bin;
            // a bin straddling s contributes only its part inside [0, s]
            let mut acc = interpolate(&g_conv, half, s);
            for &(a, b, m) in plus_bins.iter().take_while(|&&(a, _, _)| a < s) {
                if b <= s {
                    acc += m * interpolate(&g_conv, half, s - 0.5 * (a + b));
                } else {
                    acc += m * (s - a) / (b - a) * interpolate(&g_conv, half, 0.5 * (s - a));
                }
            }
            acc
        })
        .collect();
    Ok(RenewalSolution {
        s: (0..n_out).map(|j| j as f64 * grid_step).collect(),
        w,
    })
}

/// `P(Z+ >= t) = int_{(-inf, 0]} P(X > t - y) U-(dy)`, first ascending
/// ladder height tail from the descending renewal measure.
pub fn ladder_tail_from_renewal<L: StepLaw + ?Sized>(law: &L, minus: &RenewalMeasureEstimate, t: f64) -> f64 {
    atoms(minus).iter().map(|&(m, w)| w * law.tail(t + m)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::RayBlock;
    use crate::walk::{first_passage_visiting, ladder_pairs, renewal_from_ladder_heights, Strip2dStep};
    use approx::assert_abs_diff_eq;

    fn problem(forcing: Forcing, s_max: f64, h: f64) -> WienerHopfProblem {
        WienerHopfProblem::strip2d(forcing, s_max, h, 1e-6).unwrap()
    }

    #[test]
    fn forcing_values() {
        assert_abs_diff_eq!(Forcing::U2d { t: 1.0 }.eval(3.0), step_tail_2d(3.0), epsilon = 1e-16);
        assert_eq!(Forcing::U2d { t: 0.5 }.eval(0.0), 0.5);
        assert_eq!(Forcing::U2dTilde { t: 1.0 }.eval(7.0), 0.0);
        assert_eq!(Forcing::Decay { c: 1.0, alpha: 0.5 }.eval(0.0), 1.0);
        let tab = Forcing::tabulated(vec![0.0, 2.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(tab.eval(1.5), 0.25);
        assert_eq!(tab.eval(9.0), 0.0);
        assert!(Forcing::tabulated(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(Forcing::U2d { t: 1.5 }.validate().is_err());
    }

    #[test]
    fn gauss_legendre_is_exact_for_degree_15() {
        let v = gauss_legendre(|x| x.powi(15) + x.powi(14), 0.0, 1.0);
        assert_abs_diff_eq!(v, 1.0 / 16.0 + 1.0 / 15.0, epsilon = 1e-14);
    }

    #[test]
    fn truncation_matches_tail() {
        let y = truncation_for(&Strip2dLaw, 1e-7);
        assert!(Strip2dLaw.cdf(-y) <= 1e-7);
        assert!(Strip2dLaw.cdf(-0.98 * y) > 1e-7);
    }

    #[test]
    fn fft_matvec_matches_dense() {
        let p = WienerHopfProblem::new(Arc::new(Strip2dLaw), Forcing::Zero, 3.0, 0.5, 2.0)
            .unwrap()
            .with_exterior(Exterior::Constant(0.0));
        let sys = Discretized::new(&p);
        let n = sys.n;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 1.0).collect();
        let h = p.grid_step;
        // dense product integration; the end hats are cut at 0 and L
        let kr = |m: f64| gauss_legendre(|y| (1.0 - (m - y) / h) * step_density_2d(y), m - h, m);
        let kl = |m: f64| gauss_legendre(|y| (1.0 - (y - m) / h) * step_density_2d(y), m, m + h);
        let dense: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let m = (i as f64 - j as f64) * h;
                        let w = match j {
                            0 => kr(m),
                            j if j == n - 1 => kl(m),
                            _ => kr(m) + kl(m),
                        };
                        w * x[j]
                    })
                    .sum()
            })
            .collect();
        let fast = sys.apply_a(&x);
        for (a, b) in fast.iter().zip(&dense) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn row_mass_is_conserved() {
        for ext in [Exterior::Edge, Exterior::Constant(1.0)] {
            let p = problem(Forcing::U2d { t: 1.0 }, 50.0, 0.25).with_exterior(ext);
            let sys = Discretized::new(&p);
            let d = sys.defect(&vec![1.0; sys.n]);
            assert!(sup_norm(&d) < 1e-12, "{}", sup_norm(&d));
        }
    }

    #[test]
    fn certain_exit_gives_one() {
        let p = problem(Forcing::U2d { t: 1.0 }, 200.0, 0.25);
        let sol = solve_min_iterative(&p, &SolveOptions::default()).unwrap();
        for w in &sol.w {
            assert_abs_diff_eq!(*w, 1.0, epsilon = 1e-6);
        }
        assert!(sol.residual < 1e-6);
    }

    #[test]
    fn zero_forcing_gives_zero() {
        for scheme in [Scheme::Krylov, Scheme::Monotone] {
            let p = problem(Forcing::Zero, 100.0, 0.5);
            let sol = solve_min_iterative(
                &p,
                &SolveOptions {
                    scheme,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(sol.w.iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn minimal_solution_is_sandwiched() {
        let p = problem(Forcing::U2d { t: 0.5 }, 100.0, 0.5);
        let sol = solve_min_iterative(&p, &SolveOptions::default()).unwrap();
        let below = picard_sweeps(&p, 0.0, 300).unwrap();
        let above = picard_sweeps(&p, 1.0, 300).unwrap();
        for i in 0..sol.w.len() {
            assert!(below[i] <= sol.w[i] + 1e-6 && sol.w[i] <= above[i] + 1e-6, "i = {i}");
        }
        // the monotone scheme approaches from below
        assert!(below[10] > 0.2 && below[10] < sol.w[10]);
    }

    #[test]
    fn monotone_reports_nonconvergence() {
        let p = problem(Forcing::U2d { t: 0.5 }, 100.0, 0.5);
        let r = solve_min_iterative(
            &p,
            &SolveOptions {
                scheme: Scheme::Monotone,
                max_iter: 20,
                tol: 1e-8,
            },
        );
        assert!(matches!(r, Err(Error::NonConvergence { iterations: 20, .. })));
    }

    #[test]
    fn short_truncation_is_reported() {
        let p = WienerHopfProblem::new(Arc::new(Strip2dLaw), Forcing::U2d { t: 0.5 }, 50.0, 0.5, 5.0)
            .unwrap()
            .with_exterior(Exterior::Constant(0.0));
        let r = solve_min_iterative(&p, &SolveOptions::default());
        assert!(matches!(r, Err(Error::TruncationDominates { .. })));
    }

    #[test]
    fn halving_the_grid_step_is_second_order() {
        let sols: Vec<WienerHopfSolution> = [0.5, 0.25, 0.125]
            .iter()
            .map(|&h| solve_min_iterative(&problem(Forcing::U2d { t: 0.5 }, 200.0, h), &SolveOptions::default()).unwrap())
            .collect();
        let grid = &sols[0].s;
        let change = |a: &WienerHopfSolution, b: &WienerHopfSolution| {
            grid.iter().map(|&s| (a.value_at(s) - b.value_at(s)).abs()).fold(0.0, f64::max)
        };
        let (d1, d2) = (change(&sols[0], &sols[1]), change(&sols[1], &sols[2]));
        assert!(d1 / d2 > 3.0, "{d1} {d2}");
        assert!(d2 < 0.01, "{d2}");
    }

    fn decay_walk_sum(s: f64, n: u64, cap: u64) -> (f64, f64) {
        let g = Forcing::Decay { c: 1.0, alpha: 0.5 };
        let sums = RayBlock::new(50, 0, n).map(|_, rng| {
            let mut acc = 0.0;
            first_passage_visiting(&mut Strip2dStep, s, cap, rng, |x| acc += g.eval(s - x)).unwrap();
            acc
        });
        let m = sums.iter().sum::<f64>() / n as f64;
        let v = sums.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        (m, (v / n as f64).sqrt())
    }

    #[test]
    fn decaying_forcing_matches_walk_sum() {
        // W(s) = E sum_{k < N_s} g(s - S_k)
        let sol = solve_min_iterative(
            &problem(Forcing::Decay { c: 1.0, alpha: 0.5 }, 20.0, 0.25),
            &SolveOptions::default(),
        )
        .unwrap();
        for s in [2.0, 10.0] {
            let (m, se) = decay_walk_sum(s, 20_000, 1_000_000);
            assert!(
                (sol.value_at(s) - m).abs() < 4.0 * se + 0.01,
                "s = {s}: {} vs {m} +- {se}",
                sol.value_at(s)
            );
        }
    }

    #[test]
    fn decaying_forcing_solution_decreases() {
        let sol = solve_min_iterative(
            &problem(Forcing::Decay { c: 1.0, alpha: 0.5 }, 1000.0, 0.25),
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(sol.w.iter().all(|&w| w >= 0.0));
        let pts = [10.0, 100.0, 300.0, 1000.0].map(|s| sol.value_at(s));
        assert!(pts.windows(2).all(|w| w[1] < w[0]), "{pts:?}");
    }

    #[test]
    fn decaying_forcing_solution_small_at_1e3() {
        let sol = solve_min_iterative(
            &problem(Forcing::Decay { c: 1.0, alpha: 0.5 }, 1000.0, 0.25),
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(sol.value_at(1000.0) < 0.05, "{}", sol.value_at(1000.0));
    }

    #[test]
    fn renewal_counts_lattice_points() {
        // unit ladder heights: U+ has unit atoms at 1, 2, 3, ...; no descents
        let plus = renewal_from_ladder_heights(&[1.0; 10], 20.0, 0.25).unwrap();
        let minus = RenewalMeasureEstimate {
            bin_edges: vec![0.0, 20.0],
            mass: vec![0.0],
            n_paths: 1,
            censoring: Default::default(),
        };
        let g = Forcing::tabulated(vec![0.0, 0.125, 0.1251, 30.0], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let sol = solve_via_renewal(&g, &plus, &minus, 10.0, 0.0625).unwrap();
        let at = |s: f64| sol.w[(s / 0.0625).round() as usize];
        for k in 0..10 {
            assert_abs_diff_eq!(at(k as f64 + 0.125), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(at(k as f64 + 0.5), 0.0, epsilon = 1e-12);
        }
        assert!(matches!(
            solve_via_renewal(&g, &plus, &minus, 100.0, 0.125),
            Err(Error::WindowTooSmall { .. })
        ));
    }

    #[test]
    fn ladder_identity_on_strip_walk() {
        let (pairs, _) = ladder_pairs(&Strip2dStep, 10_000_000, &RayBlock::new(40, 0, 100_000));
        let heights: Vec<f64> = pairs.iter().map(|p| p.o0).collect();
        let (other, _) = ladder_pairs(&Strip2dStep, 10_000_000, &RayBlock::new(41, 0, 100_000));
        let u = renewal_from_ladder_heights(&other.iter().map(|p| p.o0).collect::<Vec<_>>(), 400.0, 0.05).unwrap();
        let n = heights.len() as f64;
        for t in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let emp = heights.iter().filter(|&&z| z >= t).count() as f64 / n;
            let th = ladder_tail_from_renewal(&Strip2dLaw, &u, t);
            assert!((emp - th).abs() < 0.01, "t = {t}: {emp} vs {th}");
        }
    }
}
