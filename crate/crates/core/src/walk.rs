//! One-dimensional random walks: first passage, ladders, renewal measures
//! and occupation counts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{Censoring, RayBlock};
use crate::error::{invalid, Error, Result};
use crate::sampling::{sample_bounce_draw, sample_step_2d};
use crate::stats::{linspace, pairwise_sum};

/// Source of walk increments.
pub trait Stepper {
    fn next_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64;
}

/// Axial step of the strip model, `tan(theta)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Strip2dStep;

impl Stepper for Strip2dStep {
    #[inline]
    fn next_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        sample_step_2d(rng)
    }
}

/// Axial step of the cylinder model.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cylinder3dStep;

impl Stepper for Cylinder3dStep {
    #[inline]
    fn next_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        sample_bounce_draw(rng).x_step()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantStep(pub f64);

impl Stepper for ConstantStep {
    fn next_step<R: Rng + ?Sized>(&mut self, _: &mut R) -> f64 {
        self.0
    }
}

/// Replays a fixed cycle of steps.
#[derive(Debug, Clone)]
pub struct CycleSteps {
    steps: Vec<f64>,
    next: usize,
}

impl CycleSteps {
    pub fn new(steps: Vec<f64>) -> Self {
        assert!(!steps.is_empty(), "cycle needs at least one step");
        Self { steps, next: 0 }
    }
}

impl Stepper for CycleSteps {
    fn next_step<R: Rng + ?Sized>(&mut self, _: &mut R) -> f64 {
        let x = self.steps[self.next];
        self.next = (self.next + 1) % self.steps.len();
        x
    }
}

/// Default step cap for the strip walk at level `s`.
pub fn default_max_steps_2d(s: f64) -> u64 {
    (50.0 * s * s).clamp(1.0, 1e18) as u64
}

/// Default step cap for the cylinder walk at level `s`.
pub fn default_max_steps_3d(s: f64) -> u64 {
    (20.0 * s * s).clamp(1.0, 1e18) as u64
}

/// Summary of one walk run until it first exceeds `level_s`.
///
/// When `censored` is set the walk stopped at the cap: `n_steps` is the cap,
/// `s_after` the final position and `s_before` the one before it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstPassageRecord {
    pub level_s: f64,
    pub n_steps: u64,
    pub s_before: f64,
    pub s_after: f64,
    pub overshoot: f64,
    pub undershoot: f64,
    pub parity_even: bool,
    pub censored: bool,
}

impl FirstPassageRecord {
    fn new(level_s: f64, n_steps: u64, s_before: f64, s_after: f64, censored: bool) -> Self {
        Self {
            level_s,
            n_steps,
            s_before,
            s_after,
            overshoot: s_after - level_s,
            undershoot: level_s - s_before,
            parity_even: n_steps.is_multiple_of(2),
            censored,
        }
    }

    /// `U_s / (U_s + O_s)`, the crossing step's fraction spent below the level.
    pub fn undershoot_ratio(&self) -> f64 {
        self.undershoot / (self.undershoot + self.overshoot)
    }

    /// Size of the crossing step, `O_s + U_s`.
    pub fn last_step(&self) -> f64 {
        self.s_after - self.s_before
    }
}

fn check_level(level_s: f64, max_steps: u64) -> Result<()> {
    if !(level_s > 0.0 && level_s.is_finite()) {
        return Err(invalid(format!("level must be positive and finite, got {level_s}")));
    }
    if max_steps == 0 {
        return Err(invalid("max_steps must be at least 1"));
    }
    Ok(())
}

pub fn first_passage<S: Stepper, R: Rng + ?Sized>(
    stepper: &mut S,
    level_s: f64,
    max_steps: u64,
    rng: &mut R,
) -> Result<FirstPassageRecord> {
    first_passage_visiting(stepper, level_s, max_steps, rng, |_| {})
}

/// First passage that also reports every pre-crossing position
/// `S_0 = 0, S_1, ..., S_{N-1}` to `visit`.
pub fn first_passage_visiting<S, R, F>(
    stepper: &mut S,
    level_s: f64,
    max_steps: u64,
    rng: &mut R,
    mut visit: F,
) -> Result<FirstPassageRecord>
where
    S: Stepper,
    R: Rng + ?Sized,
    F: FnMut(f64),
{
    check_level(level_s, max_steps)?;
    let mut pos = 0.0;
    let mut prev = 0.0;
    visit(pos);
    for n in 1..=max_steps {
        prev = pos;
        pos += stepper.next_step(rng);
        if pos > level_s {
            return Ok(FirstPassageRecord::new(level_s, n, prev, pos, false));
        }
        visit(pos);
    }
    Ok(FirstPassageRecord::new(level_s, max_steps, prev, pos, true))
}

/// Undershoot and overshoot of the first strict ascent above 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderPair {
    pub u0: f64,
    pub o0: f64,
    /// First strict ascent time `T_1`.
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderSample {
    pub heights: Vec<f64>,
    pub epochs: Vec<u64>,
    pub first_pair: LadderPair,
}

/// First strict ascent of a fresh walk, or `None` if it takes more than
/// `max_steps` steps.
pub fn first_ladder<S: Stepper, R: Rng + ?Sized>(stepper: &mut S, max_steps: u64, rng: &mut R) -> Option<LadderPair> {
    let mut pos = 0.0;
    for n in 1..=max_steps {
        let prev = pos;
        pos += stepper.next_step(rng);
        if pos > 0.0 {
            return Some(LadderPair {
                u0: -prev,
                o0: pos,
                epoch: n,
            });
        }
    }
    None
}

/// Strict ascending ladder epochs and heights of one walk. Each ladder may
/// take at most `max_steps` steps.
pub fn ladder_sample<S: Stepper, R: Rng + ?Sized>(stepper: &mut S, n_ladders: usize, max_steps: u64, rng: &mut R) -> Result<LadderSample> {
    if n_ladders == 0 {
        return Err(invalid("n_ladders must be at least 1"));
    }
    if max_steps == 0 {
        return Err(invalid("max_steps must be at least 1"));
    }
    let mut heights = Vec::with_capacity(n_ladders);
    let mut epochs = Vec::with_capacity(n_ladders);
    let mut first_pair = None;
    let (mut pos, mut max, mut n, mut since) = (0.0f64, 0.0f64, 0u64, 0u64);
    while heights.len() < n_ladders {
        let prev = pos;
        pos += stepper.next_step(rng);
        n += 1;
        since += 1;
        if pos > max {
            if first_pair.is_none() {
                first_pair = Some(LadderPair {
                    u0: -prev,
                    o0: pos,
                    epoch: n,
                });
            }
            heights.push(pos);
            epochs.push(n);
            max = pos;
            since = 0;
        } else if since >= max_steps {
            return Err(Error::CensoredLadder { completed: heights.len() });
        }
    }
    Ok(LadderSample {
        heights,
        epochs,
        first_pair: first_pair.expect("at least one ladder"),
    })
}

/// First ladder pairs for a block of independent walks, in ray order.
pub fn ladder_pairs<S>(stepper: &S, max_steps: u64, block: &RayBlock) -> (Vec<LadderPair>, Censoring)
where
    S: Stepper + Clone + Sync + Send,
{
    let raw = block.map(|_, rng| first_ladder(&mut stepper.clone(), max_steps, rng));
    let censoring = raw.iter().map(Option::is_none).collect();
    (raw.into_iter().flatten().collect(), censoring)
}

/// Binned estimate of a renewal measure on `[0, window_max]`, without the
/// unit atom at 0. Bin masses are located at bin midpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalMeasureEstimate {
    pub bin_edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub n_paths: u64,
    pub censoring: Censoring,
}

impl RenewalMeasureEstimate {
    pub fn window_max(&self) -> f64 {
        *self.bin_edges.last().unwrap()
    }

    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }

    /// Mass of bins whose upper edge is `<= t`, i.e. `U([0, t))` when `t` is
    /// an edge.
    pub fn mass_below(&self, t: f64) -> f64 {
        let k = self.bin_edges[1..].partition_point(|&e| e <= t);
        self.mass[..k].iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

fn bin_index(edges: &[f64], x: f64) -> Option<usize> {
    let last = *edges.last()?;
    if x < edges[0] || x > last {
        None
    } else if x == last {
        Some(edges.len() - 2)
    } else {
        Some(edges.partition_point(|&e| e <= x) - 1)
    }
}

/// Ladder heights of one walk inside `[0, window_max]`, stopping once a
/// height exceeds the window. Returns the heights and whether the walk hit
/// `max_steps` first.
fn ladder_heights_in_window<S: Stepper, R: Rng + ?Sized>(
    stepper: &mut S,
    window_max: f64,
    max_steps: u64,
    rng: &mut R,
) -> (Vec<f64>, bool) {
    let mut out = Vec::new();
    let (mut pos, mut max) = (0.0f64, 0.0f64);
    for _ in 0..max_steps {
        pos += stepper.next_step(rng);
        if pos > max {
            if pos > window_max {
                return (out, false);
            }
            out.push(pos);
            max = pos;
        }
    }
    (out, true)
}

/// Direct renewal estimate: the mean number of strict ladder heights per
/// bin, counting every walk until its ladder leaves the window. Censored
/// walks contribute the heights they reached.
pub fn renewal_estimate<S>(stepper: &S, window_max: f64, n_bins: usize, max_steps: u64, block: &RayBlock) -> Result<RenewalMeasureEstimate>
where
    S: Stepper + Clone + Sync + Send,
{
    if !(window_max > 0.0) || n_bins == 0 || block.n_rays == 0 {
        return Err(invalid("renewal estimate needs window_max > 0, n_bins > 0, n_paths > 0"));
    }
    let edges = linspace(0.0, window_max, n_bins + 1);
    let per_path = block.map(|_, rng| ladder_heights_in_window(&mut stepper.clone(), window_max, max_steps, rng));
    let mut counts = vec![0u64; n_bins];
    let mut censoring = Censoring::default();
    for (heights, censored) in &per_path {
        censoring.record(*censored);
        for &h in heights {
            if let Some(k) = bin_index(&edges, h) {
                counts[k] += 1;
            }
        }
    }
    let n = block.n_rays as f64;
    Ok(RenewalMeasureEstimate {
        bin_edges: edges,
        mass: counts.into_iter().map(|c| c as f64 / n).collect(),
        n_paths: block.n_rays,
        censoring,
    })
}

/// Renewal measure built from a sample of i.i.d. first ladder heights by
/// solving `U = F + F * U` on the lattice `j h / 2`.
///
/// Heights are rounded to the nearest lattice point, so lattice point `j`
/// stands for the bin `[(j - 1/2) h/2, (j + 1/2) h/2)` (`[0, h/4)` for
/// `j = 0`), and the result uses those bins.
pub fn renewal_from_ladder_heights(heights: &[f64], window_max: f64, h: f64) -> Result<RenewalMeasureEstimate> {
    if heights.is_empty() || !(h > 0.0) || !(window_max > h) {
        return Err(invalid("need heights, h > 0 and window_max > h"));
    }
    let half = 0.5 * h;
    let k_max = (window_max / half).floor() as usize;
    let n = heights.len() as f64;
    let mut f = vec![0.0; k_max + 1];
    for &x in heights {
        let j = (x / half).round() as usize;
        if j <= k_max {
            f[j] += 1.0 / n;
        }
    }
    if f[0] >= 1.0 {
        return Err(invalid("every ladder height rounds to 0; refine h"));
    }
    let scale = 1.0 / (1.0 - f[0]);
    let mut u = vec![0.0; k_max + 1];
    for j in 0..=k_max {
        let mut acc = f[j];
        for i in 1..=j {
            acc += f[i] * u[j - i];
        }
        u[j] = acc * scale;
    }
    let mut edges = vec![0.0];
    edges.extend((1..=k_max + 1).map(|j| (j as f64 - 0.5) * half));
    Ok(RenewalMeasureEstimate {
        bin_edges: edges,
        mass: u,
        n_paths: heights.len() as u64,
        censoring: Censoring::default(),
    })
}

/// Open intervals `(x1, x2)` of positions relative to the level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervals {
    bounds: Vec<(f64, f64)>,
    sorted_disjoint: bool,
}

impl Intervals {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(invalid("need at least one interval"));
        }
        for &(a, b) in &bounds {
            if !(a < b && b <= 0.0) {
                return Err(invalid(format!("interval ({a}, {b}) must satisfy x1 < x2 <= 0")));
            }
        }
        let sorted_disjoint = bounds.windows(2).all(|w| w[0].1 <= w[1].0);
        Ok(Self { bounds, sorted_disjoint })
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    #[inline]
    fn count(&self, x: f64, counts: &mut [u64]) {
        if self.sorted_disjoint {
            let k = self.bounds.partition_point(|iv| iv.0 < x);
            if k > 0 && x < self.bounds[k - 1].1 {
                counts[k - 1] += 1;
            }
        } else {
            for (c, &(a, b)) in counts.iter_mut().zip(&self.bounds) {
                if a < x && x < b {
                    *c += 1;
                }
            }
        }
    }
}

/// Visit counts of one walk: number of `k <= N_s - 1` with `S_k - s` in
/// each interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationCount {
    pub level_s: f64,
    pub counts: Vec<u64>,
    pub censored: bool,
}

pub fn occupation_counts<S: Stepper, R: Rng + ?Sized>(
    stepper: &mut S,
    level_s: f64,
    intervals: &Intervals,
    max_steps: u64,
    rng: &mut R,
) -> Result<OccupationCount> {
    let mut counts = vec![0u64; intervals.len()];
    let fp = first_passage_visiting(stepper, level_s, max_steps, rng, |x| intervals.count(x - level_s, &mut counts))?;
    Ok(OccupationCount {
        level_s,
        counts,
        censored: fp.censored,
    })
}

/// Mean visit counts over a block of walks. Censored walks keep the visits
/// made before the cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationSummary {
    pub level_s: f64,
    pub intervals: Intervals,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub censoring: Censoring,
}

pub fn occupation_batch<S>(stepper: &S, level_s: f64, intervals: &Intervals, max_steps: u64, block: &RayBlock) -> Result<OccupationSummary>
where
    S: Stepper + Clone + Sync + Send,
{
    check_level(level_s, max_steps)?;
    if block.n_rays == 0 {
        return Err(invalid("need at least one path"));
    }
    let runs = block.map(|_, rng| occupation_counts(&mut stepper.clone(), level_s, intervals, max_steps, rng));
    let runs: Vec<OccupationCount> = runs.into_iter().collect::<Result<_>>()?;
    let censoring = runs.iter().map(|r| r.censored).collect();
    let n = runs.len() as f64;
    let mut mean = Vec::with_capacity(intervals.len());
    let mut se = Vec::with_capacity(intervals.len());
    for k in 0..intervals.len() {
        let xs: Vec<f64> = runs.iter().map(|r| r.counts[k] as f64).collect();
        let m = pairwise_sum(&xs) / n;
        let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
        let var = if runs.len() > 1 { pairwise_sum(&sq) / (n - 1.0) } else { 0.0 };
        mean.push(m);
        se.push((var / n).sqrt());
    }
    Ok(OccupationSummary {
        level_s,
        intervals: intervals.clone(),
        mean,
        std_error: se,
        censoring,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn rng() -> crate::rng::StreamRng {
        RngStream::new(0, 0).rng()
    }

    #[test]
    fn unit_steps_first_passage() {
        let fp = first_passage(&mut ConstantStep(1.0), 2.5, 100, &mut rng()).unwrap();
        assert_eq!(fp.n_steps, 3);
        assert_eq!(fp.overshoot, 0.5);
        assert_eq!(fp.undershoot, 0.5);
        assert!(!fp.parity_even);
        assert!(!fp.censored);
    }

    #[test]
    fn alternating_steps_first_passage() {
        let fp = first_passage(&mut CycleSteps::new(vec![2.0, -1.0]), 1.5, 100, &mut rng()).unwrap();
        assert_eq!(fp.n_steps, 1);
        assert_eq!(fp.overshoot, 0.5);
        assert_eq!(fp.undershoot, 1.5);
    }

    #[test]
    fn censoring_and_bad_arguments() {
        let fp = first_passage(&mut ConstantStep(-1.0), 1.0, 10, &mut rng()).unwrap();
        assert!(fp.censored);
        assert_eq!(fp.n_steps, 10);
        assert!(first_passage(&mut ConstantStep(1.0), 0.0, 10, &mut rng()).is_err());
        assert!(first_passage(&mut ConstantStep(1.0), 1.0, 0, &mut rng()).is_err());
    }

    #[test]
    fn record_invariants_random_walks() {
        let mut r = rng();
        for s in [0.3, 5.0, 40.0] {
            for _ in 0..2000 {
                let fp = first_passage(&mut Strip2dStep, s, 1_000_000, &mut r).unwrap();
                if fp.censored {
                    continue;
                }
                assert!(fp.overshoot > 0.0 && fp.undershoot >= 0.0);
                assert!(fp.s_before <= s && s < fp.s_after);
                assert_eq!(fp.parity_even, fp.n_steps % 2 == 0);
            }
        }
    }

    #[test]
    fn unit_ladders() {
        let l = ladder_sample(&mut ConstantStep(1.0), 5, 10, &mut rng()).unwrap();
        assert_eq!(l.heights, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(l.epochs, vec![1, 2, 3, 4, 5]);
        assert_eq!(
            l.first_pair,
            LadderPair {
                u0: 0.0,
                o0: 1.0,
                epoch: 1
            }
        );
    }

    #[test]
    fn ladder_first_pair_matches_first_height() {
        let mut r = rng();
        for _ in 0..500 {
            let Ok(l) = ladder_sample(&mut Cylinder3dStep, 4, 1_000_000, &mut r) else {
                continue;
            };
            assert_eq!(l.first_pair.o0, l.heights[0]);
            assert_eq!(l.first_pair.epoch, l.epochs[0]);
            assert!(l.first_pair.u0 >= 0.0);
            assert!(l.heights.windows(2).all(|w| w[0] < w[1]));
            assert!(l.epochs.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn ladder_censoring() {
        let r = ladder_sample(&mut CycleSteps::new(vec![1.0, -5.0]), 3, 20, &mut rng());
        assert_eq!(r, Err(Error::CensoredLadder { completed: 1 }));
    }

    #[test]
    fn unit_renewal_measure() {
        let block = RayBlock::new(0, 0, 3);
        let est = renewal_estimate(&ConstantStep(1.0), 10.0, 20, 1000, &block).unwrap();
        for k in 0..10 {
            assert_eq!(est.mass_below(k as f64 + 0.5), k as f64);
        }
        assert_eq!(est.total(), 10.0);
        assert_eq!(est.censoring.censored, 0);
    }

    #[test]
    fn renewal_from_unit_heights() {
        // every ladder height is 1: U has unit atoms at 1, 2, 3, ...
        let heights = vec![1.0; 10];
        let est = renewal_from_ladder_heights(&heights, 10.0, 2.0).unwrap();
        let pts: Vec<(f64, f64)> = est.midpoints().zip(est.mass.iter().copied()).filter(|p| p.1 > 0.0).collect();
        assert_eq!(pts.len(), 10);
        for (k, (x, m)) in pts.iter().enumerate() {
            assert!((x - (k + 1) as f64).abs() < 1e-12);
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn renewal_routes_agree_3d() {
        let block = RayBlock::new(4, 0, 4000);
        let direct = renewal_estimate(&Cylinder3dStep, 20.0, 80, 10_000_000, &block).unwrap();
        let (pairs, _) = ladder_pairs(&Cylinder3dStep, 100_000, &RayBlock::new(4, 1 << 32, 200_000));
        let hs: Vec<f64> = pairs.iter().map(|p| p.o0).collect();
        let lattice = renewal_from_ladder_heights(&hs, 20.0, 0.25).unwrap();
        let (a, b) = (direct.mass_below(20.0), lattice.mass_below(20.0));
        assert!((a / b - 1.0).abs() < 0.03, "{a} {b}");
    }

    #[test]
    fn occupation_unit_steps() {
        let iv = Intervals::new(vec![(-5.5, -4.5)]).unwrap();
        let oc = occupation_counts(&mut ConstantStep(1.0), 10.0, &iv, 100, &mut rng()).unwrap();
        assert_eq!(oc.counts, vec![1]);
    }

    #[test]
    fn occupation_additivity() {
        let s = 30.0;
        let whole = Intervals::new(vec![(-0.8 * s, -0.2 * s)]).unwrap();
        let parts = Intervals::new(vec![(-0.8 * s, -0.5 * s), (-0.5 * s, -0.2 * s)]).unwrap();
        let overlapping = Intervals::new(vec![(-0.8 * s, -0.2 * s), (-0.8 * s, -0.5 * s)]).unwrap();
        for i in 0..200 {
            let stream = RngStream::new(9, i);
            let a = occupation_counts(&mut Cylinder3dStep, s, &whole, 100_000, &mut stream.rng()).unwrap();
            let b = occupation_counts(&mut Cylinder3dStep, s, &parts, 100_000, &mut stream.rng()).unwrap();
            let c = occupation_counts(&mut Cylinder3dStep, s, &overlapping, 100_000, &mut stream.rng()).unwrap();
            assert_eq!(a.counts[0], b.counts[0] + b.counts[1]);
            assert_eq!(c.counts, vec![a.counts[0], b.counts[0]]);
        }
    }

    #[test]
    fn intervals_validation() {
        assert!(Intervals::new(vec![(-1.0, -2.0)]).is_err());
        assert!(Intervals::new(vec![(-1.0, 0.5)]).is_err());
        assert!(Intervals::new(vec![]).is_err());
        // below -s is allowed
        assert!(Intervals::new(vec![(-500.0, -120.0)]).is_ok());
    }
}
