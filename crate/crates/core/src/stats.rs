//! Empirical distributions, goodness of fit and interval estimates.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};

/// Sorted sample with a right-continuous step CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("empirical CDF needs at least one sample"));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(invalid("empirical CDF sample contains NaN"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of the sample `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.sorted.partition_point(|&v| v <= x);
        k as f64 / self.sorted.len() as f64
    }

    /// Lower empirical quantile.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let k = ((p * n as f64).ceil() as usize).clamp(1, n);
        self.sorted[k - 1]
    }
}

/// Kolmogorov-Smirnov distance between an empirical CDF and a continuous
/// reference, taken over sample points and their left limits.
pub fn ks_distance(ecdf: &EmpiricalCdf, cdf: impl Fn(f64) -> f64) -> f64 {
    let xs = ecdf.values();
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j + 1 < xs.len() && xs[j + 1] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max((i as f64 / n - f).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    d
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &EmpiricalCdf, b: &EmpiricalCdf) -> f64 {
    let (x, y) = (a.values(), b.values());
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic one-sample KS critical value `sqrt(-ln(alpha/2)/2) / sqrt(n)`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}

/// Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Approximate p-value of a one-sample KS distance (Stephens' correction).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
}

fn normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Two-sided normal quantile for a confidence level, e.g. 1.96 at 0.95.
pub fn z_for_level(level: f64) -> f64 {
    normal().inverse_cdf(0.5 + level / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSummary {
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub n: usize,
}

impl ConfidenceSummary {
    pub fn normal(estimate: f64, std_error: f64, level: f64, n: usize) -> Self {
        let z = z_for_level(level);
        Self {
            estimate,
            std_error,
            lower: estimate - z * std_error,
            upper: estimate + z * std_error,
            level,
            n,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Sum with a fixed binary tree shape, so the result depends only on the
/// order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

pub fn mean_ci(xs: &[f64], level: f64) -> Result<ConfidenceSummary> {
    if xs.is_empty() {
        return Err(invalid("mean of an empty sample"));
    }
    let se = (variance(xs) / xs.len() as f64).sqrt();
    Ok(ConfidenceSummary::normal(mean(xs), se, level, xs.len()))
}

/// Binomial proportion with its normal-approximation interval.
pub fn proportion_ci(successes: u64, n: u64, level: f64) -> ConfidenceSummary {
    let p = if n == 0 { f64::NAN } else { successes as f64 / n as f64 };
    let se = (p * (1.0 - p) / n as f64).sqrt();
    ConfidenceSummary::normal(p, se, level, n as usize)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialTest {
    pub z: f64,
    pub p_value: f64,
}

/// Two-sided test of `H0: p = p0`, normal approximation with continuity
/// correction.
pub fn binomial_test(successes: u64, n: u64, p0: f64) -> BinomialTest {
    let nf = n as f64;
    let mu = nf * p0;
    let sd = (nf * p0 * (1.0 - p0)).sqrt();
    let dev = ((successes as f64 - mu).abs() - 0.5).max(0.0);
    let z = dev / sd;
    BinomialTest {
        z,
        p_value: (2.0 * (1.0 - normal().cdf(z))).min(1.0),
    }
}

/// Ratio of means `mean(num) / mean(den)` with a delta-method interval.
pub fn ratio_estimator_ci(num: &[f64], den: &[f64], level: f64) -> Result<ConfidenceSummary> {
    if num.len() != den.len() || num.is_empty() {
        return Err(invalid("ratio estimator needs paired, non-empty samples"));
    }
    let n = num.len();
    let (mn, md) = (mean(num), mean(den));
    if md <= 0.0 || md.is_nan() {
        return Err(Error::DegenerateDenominator(md));
    }
    let ratio = mn / md;
    // linearized residuals num - ratio * den
    let lin: Vec<f64> = num.iter().zip(den).map(|(a, b)| a - ratio * b).collect();
    let se = (variance(&lin) / n as f64).sqrt() / md;
    Ok(ConfidenceSummary::normal(ratio, se, level, n))
}

/// Percentile bootstrap interval for a ratio of means.
pub fn ratio_bootstrap_ci<R: Rng + ?Sized>(
    num: &[f64],
    den: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<ConfidenceSummary> {
    let base = ratio_estimator_ci(num, den, level)?;
    let n = num.len();
    let mut reps = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..n {
            let k = rng.random_range(0..n);
            a += num[k];
            b += den[k];
        }
        if b > 0.0 {
            reps.push(a / b);
        }
    }
    let ecdf = EmpiricalCdf::new(reps)?;
    let alpha = 1.0 - level;
    let sd = variance(ecdf.values()).sqrt();
    Ok(ConfidenceSummary {
        estimate: base.estimate,
        std_error: sd,
        lower: ecdf.quantile(alpha / 2.0).min(base.estimate),
        upper: ecdf.quantile(1.0 - alpha / 2.0).max(base.estimate),
        level,
        n,
    })
}

/// Fixed-edge histogram; mergeable, so per-worker histograms can be reduced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    underflow: u64,
    overflow: u64,
}

impl Histogram {
    /// Bins `[e_i, e_{i+1})`; values equal to the last edge land in the last bin.
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("histogram edges must be strictly increasing, at least two"));
        }
        let bins = edges.len() - 1;
        Ok(Self {
            edges,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        })
    }

    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("histogram needs at least one bin"));
        }
        Self::new(linspace(lo, hi, bins + 1))
    }

    pub fn add(&mut self, x: f64) {
        let last = *self.edges.last().unwrap();
        if x < self.edges[0] {
            self.underflow += 1;
        } else if x > last {
            self.overflow += 1;
        } else if x == last {
            *self.counts.last_mut().unwrap() += 1;
        } else {
            let k = self.edges.partition_point(|&e| e <= x) - 1;
            self.counts[k] += 1;
        }
    }

    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.edges != other.edges {
            return Err(invalid("cannot merge histograms with different edges"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        Ok(())
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn underflow(&self) -> u64 {
        self.underflow
    }

    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

impl Extend<f64> for Histogram {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    v[n - 1] = hi;
    v
}

pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect();
    v[0] = lo;
    v[n - 1] = hi;
    v
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(&f, a, b, fa, fm, fb, whole, tol, 50)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn ks_of_own_quantiles() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_distance(&EmpiricalCdf::new(xs).unwrap(), |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn ks_uniform_sample_below_critical() {
        let n = 100_000;
        let mut rng = RngStream::new(1, 0).rng();
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let d = ks_distance(&EmpiricalCdf::new(xs).unwrap(), |x| x.clamp(0.0, 1.0));
        assert!(d < ks_critical_value(n, 0.01));
        assert!((ks_critical_value(n, 0.01) * (n as f64).sqrt() - 1.6276).abs() < 1e-3);
    }

    #[test]
    fn ks_constant_sample() {
        let d = ks_distance(&EmpiricalCdf::new(vec![0.3; 50]).unwrap(), |x| x.clamp(0.0, 1.0));
        assert!(d >= 0.5);
    }

    #[test]
    fn kolmogorov_survival_known_values() {
        // 1% and 5% critical points of the limiting distribution
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 2e-4);
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 2e-4);
    }

    #[test]
    fn ecdf_limits() {
        let e = EmpiricalCdf::new(vec![3.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(e.eval(f64::NEG_INFINITY), 0.0);
        assert_eq!(e.eval(f64::INFINITY), 1.0);
        assert_eq!(e.eval(0.99), 0.0);
        assert_eq!(e.eval(2.0), 0.75);
        assert_eq!(e.eval(3.0), 1.0);
        assert!(EmpiricalCdf::new(vec![]).is_err());
        assert!(EmpiricalCdf::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn ratio_identical_samples() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let c = ratio_estimator_ci(&xs, &xs, 0.95).unwrap();
        assert_eq!(c.estimate, 1.0);
        assert!(c.std_error < 1e-12);
    }

    #[test]
    fn ratio_known_multiple() {
        let mut rng = RngStream::new(2, 0).rng();
        let den: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() + 0.1).collect();
        let num: Vec<f64> = den.iter().map(|x| 2.0 * x).collect();
        let c = ratio_estimator_ci(&num, &den, 0.95).unwrap();
        assert!((c.estimate - 2.0).abs() < 1e-12);
        assert!(c.contains(2.0));
        let b = ratio_bootstrap_ci(&num, &den, 0.95, 400, &mut rng).unwrap();
        assert!(b.contains(2.0));
    }

    #[test]
    fn ratio_interval_shrinks_with_n() {
        let mut rng = RngStream::new(3, 0).rng();
        let mut widths = Vec::new();
        for n in [1_000, 16_000] {
            let den: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let num: Vec<f64> = den.iter().map(|x| x * rng.random::<f64>()).collect();
            let c = ratio_estimator_ci(&num, &den, 0.95).unwrap();
            assert!(c.contains(c.estimate));
            widths.push(c.upper - c.lower);
        }
        let shrink = widths[0] / widths[1];
        assert!((shrink - 4.0).abs() < 1.0, "{shrink}");
    }

    #[test]
    fn ratio_degenerate_denominator() {
        let r = ratio_estimator_ci(&[1.0, 2.0], &[-1.0, 0.5], 0.95);
        assert!(matches!(r, Err(Error::DegenerateDenominator(_))));
    }

    #[test]
    fn binomial_test_fair_and_biased() {
        assert!(binomial_test(5000, 10_000, 0.5).p_value > 0.9);
        assert!(binomial_test(5300, 10_000, 0.5).p_value < 1e-6);
    }

    #[test]
    fn simpson_integrates_polynomial_and_power() {
        let v = integrate(|x| x * x * x, 0.0, 2.0, 1e-13);
        assert!((v - 4.0).abs() < 1e-12);
        let v = integrate(|a| a.powi(-3), 1.25, 5.0, 1e-14);
        let exact = 0.5 * (1.25f64.powi(-2) - 5f64.powi(-2));
        assert!((v - exact).abs() < 1e-13);
    }

    #[test]
    fn histogram_edges_behaviour() {
        let mut h = Histogram::uniform(0.0, 10.0, 10).unwrap();
        h.extend([-1.0, 0.0, 0.99, 1.0, 9.5, 10.0, 11.0]);
        assert_eq!(h.counts()[0], 2);
        assert_eq!(h.counts()[1], 1);
        assert_eq!(h.counts()[9], 2);
        assert_eq!(h.underflow(), 1);
        assert_eq!(h.overflow(), 1);
        assert_eq!(h.total(), 7);
    }

    proptest! {
        #[test]
        fn histogram_merge_is_concatenation(a in proptest::collection::vec(-2.0f64..12.0, 0..200),
                                            b in proptest::collection::vec(-2.0f64..12.0, 0..200)) {
            let mut ha = Histogram::uniform(0.0, 10.0, 7).unwrap();
            ha.extend(a.iter().copied());
            let mut hb = Histogram::uniform(0.0, 10.0, 7).unwrap();
            hb.extend(b.iter().copied());
            let mut hc = Histogram::uniform(0.0, 10.0, 7).unwrap();
            hc.extend(a.iter().chain(&b).copied());
            ha.merge(&hb).unwrap();
            prop_assert_eq!(&ha, &hc);
            prop_assert_eq!(hc.total() as usize, a.len() + b.len());
        }

        #[test]
        fn ecdf_monotone(xs in proptest::collection::vec(-1e3f64..1e3, 1..100), a in -2e3f64..2e3, b in -2e3f64..2e3) {
            let e = EmpiricalCdf::new(xs).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(e.eval(lo) <= e.eval(hi));
        }

        #[test]
        fn pairwise_sum_close_to_naive(xs in proptest::collection::vec(-1e3f64..1e3, 0..1000)) {
            let naive: f64 = xs.iter().sum();
            prop_assert!((pairwise_sum(&xs) - naive).abs() < 1e-8);
        }
    }
}
