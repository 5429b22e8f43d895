//! Lambertian samplers and the closed-form laws of the derived steps.
//!
//! The reflection angle `theta` measured from the inward normal has density
//! `cos(theta) / 2` on `(-pi/2, pi/2)`, so `sin(theta)` is uniform on
//! `(-1, 1)`. Everything below is written in terms of `v = sin(theta)` to
//! stay accurate near grazing angles.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;

/// `E|X|` for the 3D axial step.
pub const STEP_3D_MEAN_ABS: f64 = 2.0 - 4.0 / PI;
/// `E[X^2]` for the 3D axial step.
pub const STEP_3D_SECOND_MOMENT: f64 = FRAC_PI_2;
/// Tail constant `c` in `P(X > x) ~ c / x^2` for the 2D step.
pub const STEP_2D_TAIL_CONSTANT: f64 = 0.25;

/// Uniform draw on the open interval `(0, 1)`.
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleSample {
    pub theta: f64,
    /// `sin(theta)`, uniform on `(-1, 1)`.
    pub v: f64,
}

impl AngleSample {
    /// Inverse-CDF map from a uniform `u` in `(0, 1)`.
    pub fn from_uniform(u: f64) -> Self {
        let v = 2.0 * u - 1.0;
        Self { theta: v.asin(), v }
    }

    /// `cos(theta)` computed as `sqrt((1 - v)(1 + v))`.
    pub fn cos_theta(&self) -> f64 {
        ((1.0 - self.v) * (1.0 + self.v)).sqrt()
    }
}

pub fn sample_theta<R: Rng + ?Sized>(rng: &mut R) -> AngleSample {
    AngleSample::from_uniform(open_unit(rng))
}

pub fn theta_cdf(t: f64) -> f64 {
    if t <= -FRAC_PI_2 {
        0.0
    } else if t >= FRAC_PI_2 {
        1.0
    } else {
        0.5 * (t.sin() + 1.0)
    }
}

pub fn theta_density(t: f64) -> f64 {
    if t.abs() < FRAC_PI_2 {
        0.5 * t.cos()
    } else {
        0.0
    }
}

/// Azimuth of a 3D bounce as `(sin(phi), cos(phi))`, `phi` uniform on
/// `(-pi/2, pi/2)`, drawn as the direction of a uniform point in the right
/// half of the unit disc.
#[inline]
pub fn sample_azimuth<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    loop {
        let a = open_unit(rng);
        let b = 2.0 * rng.random::<f64>() - 1.0;
        let r2 = a * a + b * b;
        if r2 < 1.0 {
            let r = r2.sqrt();
            return (b / r, a / r);
        }
    }
}

pub fn sample_phi<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let (sp, cp) = sample_azimuth(rng);
    sp.atan2(cp)
}

/// `tan(theta)` written as `v / sqrt(1 - v^2)`.
#[inline]
pub fn step_2d_from_sine(v: f64) -> f64 {
    v / ((1.0 - v) * (1.0 + v)).sqrt()
}

#[inline]
pub fn sample_step_2d<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    step_2d_from_sine(2.0 * open_unit(rng) - 1.0)
}

/// `P(X > x)` for the 2D step, free of cancellation for large `|x|`.
pub fn step_tail_2d(x: f64) -> f64 {
    if x >= 0.0 {
        let r = x.hypot(1.0);
        0.5 / (r * (r + x))
    } else {
        1.0 - step_tail_2d(-x)
    }
}

/// `F(x) = 1/2 + x / (2 sqrt(1 + x^2))`.
pub fn step_cdf_2d(x: f64) -> f64 {
    if x <= 0.0 {
        step_tail_2d(-x)
    } else {
        1.0 - step_tail_2d(x)
    }
}

pub fn step_density_2d(x: f64) -> f64 {
    0.5 * (1.0 + x * x).powf(-1.5)
}

/// `P(X > s / t)` for `s >= 0`, `t` in `[0, 1]`, as
/// `t^2 / (2 sqrt(t^2 + s^2) (sqrt(t^2 + s^2) + s))`.
pub fn step_tail_2d_scaled(s: f64, t: f64) -> f64 {
    debug_assert!(s >= 0.0);
    if t <= 0.0 {
        return if s > 0.0 { 0.0 } else { 0.5 };
    }
    let r = t.hypot(s);
    t * t / (2.0 * r * (r + s))
}

/// One 3D bounce: the Lambertian pair `(theta, phi)` and the chord it spans.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionDirection {
    pub theta: f64,
    pub phi: f64,
    /// `sin(theta)`.
    pub sin_theta: f64,
    /// Chord length to the next wall contact (tube radius 1).
    pub r: f64,
    /// Axial displacement `r cos(phi) sin(theta)`.
    pub x_step: f64,
}

impl ReflectionDirection {
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        let (sp, cp) = phi.sin_cos();
        Self::from_draw(BounceDraw {
            sin_theta: theta.sin(),
            sin_phi: sp,
            cos_phi: cp,
        })
    }

    pub fn from_draw(d: BounceDraw) -> Self {
        Self {
            theta: d.sin_theta.asin(),
            phi: d.sin_phi.atan2(d.cos_phi),
            sin_theta: d.sin_theta,
            r: d.chord(),
            x_step: d.x_step(),
        }
    }

    pub fn cos_theta(&self) -> f64 {
        ((1.0 - self.sin_theta) * (1.0 + self.sin_theta)).sqrt()
    }

    /// Length of the chord projected onto the tube cross-section.
    pub fn transverse_chord(&self) -> f64 {
        let v = self.sin_theta;
        let cos2 = (1.0 - v) * (1.0 + v);
        let sp = self.phi.sin();
        2.0 * cos2.sqrt() / (cos2 + v * v * sp * sp).sqrt()
    }
}

/// Raw random content of a bounce; the angles themselves are only
/// materialized by [`ReflectionDirection`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BounceDraw {
    pub sin_theta: f64,
    pub sin_phi: f64,
    pub cos_phi: f64,
}

impl BounceDraw {
    #[inline]
    fn parts(&self) -> (f64, f64) {
        let v = self.sin_theta;
        let cos2 = (1.0 - v) * (1.0 + v);
        // 1 - cos^2(phi) sin^2(theta), written without cancellation
        let denom = cos2 + v * v * self.sin_phi * self.sin_phi;
        (cos2.sqrt(), denom)
    }

    #[inline]
    pub fn chord(&self) -> f64 {
        let (c, denom) = self.parts();
        2.0 * c / denom
    }

    #[inline]
    pub fn x_step(&self) -> f64 {
        let (c, denom) = self.parts();
        2.0 * self.sin_theta * c * self.cos_phi / denom
    }
}

#[inline]
pub fn sample_bounce_draw<R: Rng + ?Sized>(rng: &mut R) -> BounceDraw {
    let sin_theta = 2.0 * open_unit(rng) - 1.0;
    let (sin_phi, cos_phi) = sample_azimuth(rng);
    BounceDraw {
        sin_theta,
        sin_phi,
        cos_phi,
    }
}

pub fn sample_bounce_3d<R: Rng + ?Sized>(rng: &mut R) -> ReflectionDirection {
    ReflectionDirection::from_draw(sample_bounce_draw(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::stats::{binomial_test, ks_critical_value, ks_distance, mean_ci, EmpiricalCdf};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn theta_inverse_cdf_examples() {
        assert_eq!(AngleSample::from_uniform(0.5).theta, 0.0);
        assert_abs_diff_eq!(AngleSample::from_uniform(0.75).theta, PI / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn theta_cdf_examples() {
        assert_eq!(theta_cdf(0.0), 0.5);
        assert_abs_diff_eq!(theta_cdf(PI / 6.0), 0.75, epsilon = 1e-15);
        assert_eq!(theta_cdf(-PI), 0.0);
        assert_eq!(theta_cdf(PI), 1.0);
    }

    #[test]
    fn mean_cos_theta_is_quarter_pi() {
        let mut rng = RngStream::new(11, 0).rng();
        let xs: Vec<f64> = (0..1_000_000).map(|_| sample_theta(&mut rng).cos_theta()).collect();
        let ci = mean_ci(&xs, 0.95).unwrap();
        assert!((ci.estimate - PI / 4.0).abs() < 3.0 * ci.std_error, "{ci:?}");
    }

    #[test]
    fn angle_sample_sine_matches_theta() {
        let mut rng = RngStream::new(3, 9).rng();
        for _ in 0..10_000 {
            let a = sample_theta(&mut rng);
            assert!(a.theta.abs() < FRAC_PI_2);
            assert!((a.theta.sin() - a.v).abs() < 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn step_2d_examples() {
        assert_eq!(step_2d_from_sine(0.0), 0.0);
        let x = step_2d_from_sine(0.5);
        assert_abs_diff_eq!(x, 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(step_cdf_2d(x), 0.75, epsilon = 1e-15);
        assert_eq!(step_cdf_2d(0.0), 0.5);
    }

    #[test]
    fn step_2d_tail_constant() {
        for x in [1e3, 1e5, 1e8] {
            assert_abs_diff_eq!(x * x * step_tail_2d(x), STEP_2D_TAIL_CONSTANT, epsilon = 1e-6);
        }
        // direct formula loses everything here, the rearranged one does not
        assert!(step_tail_2d(1e9) > 0.0);
    }

    #[test]
    fn step_2d_mean_abs_is_one() {
        // infinite variance: the mean converges at rate sqrt(log n / n)
        let mut rng = RngStream::new(5, 1).rng();
        let n = 1_000_000;
        let m = (0..n).map(|_| sample_step_2d(&mut rng).abs()).sum::<f64>() / n as f64;
        assert!((m - 1.0).abs() < 0.02, "{m}");
    }

    #[test]
    fn bounce_examples() {
        let d = ReflectionDirection::from_angles(0.0, 0.7);
        assert_abs_diff_eq!(d.r, 2.0, epsilon = 1e-15);
        assert_eq!(d.x_step, 0.0);

        let d = ReflectionDirection::from_angles(PI / 3.0, FRAC_PI_2);
        assert_abs_diff_eq!(d.r, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.x_step, 0.0, epsilon = 1e-15);

        let d = ReflectionDirection::from_angles(PI / 4.0, 0.0);
        assert_abs_diff_eq!(d.r, 2.0 * 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(d.x_step, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn bounce_geometry_invariants() {
        let mut rng = RngStream::new(1, 2).rng();
        for _ in 0..100_000 {
            let d = sample_bounce_3d(&mut rng);
            let (st, ct) = d.theta.sin_cos();
            let expect_r = 2.0 * ct / (1.0 - d.phi.cos().powi(2) * st * st);
            assert!((st - d.sin_theta).abs() < 4.0 * f64::EPSILON);
            assert!((d.r - expect_r).abs() <= 1e-9 * expect_r.max(1.0));
            assert!((d.x_step - d.r * d.phi.cos() * st).abs() <= 1e-9 * d.r.max(1.0));
            assert!(d.r > 0.0);
            assert!(d.transverse_chord() <= 2.0 + 1e-12);
            if d.theta != 0.0 {
                assert_eq!(d.x_step.signum(), d.theta.signum());
            }
        }
    }

    #[test]
    fn ks_theta_and_phi() {
        let n = 1_000_000;
        let mut rng = RngStream::new(21, 0).rng();
        let (th, ph): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|_| {
                let d = sample_bounce_3d(&mut rng);
                (d.theta, d.phi)
            })
            .unzip();
        let crit = ks_critical_value(n, 0.01);
        let d = ks_distance(&EmpiricalCdf::new(th).unwrap(), theta_cdf);
        assert!(d < crit, "theta ks {d}");
        let d = ks_distance(&EmpiricalCdf::new(ph).unwrap(), |x| ((x + FRAC_PI_2) / PI).clamp(0.0, 1.0));
        assert!(d < crit, "phi ks {d}");
    }

    #[test]
    fn ks_step_2d() {
        let n = 1_000_000;
        let mut rng = RngStream::new(22, 0).rng();
        let xs: Vec<f64> = (0..n).map(|_| sample_step_2d(&mut rng)).collect();
        let d = ks_distance(&EmpiricalCdf::new(xs).unwrap(), step_cdf_2d);
        assert!(d < ks_critical_value(n, 0.01), "{d}");
    }

    #[test]
    fn step_signs_are_fair() {
        let n = 200_000u64;
        let mut rng = RngStream::new(23, 0).rng();
        let pos2 = (0..n).filter(|_| sample_step_2d(&mut rng) > 0.0).count() as u64;
        let pos3 = (0..n).filter(|_| sample_bounce_3d(&mut rng).x_step > 0.0).count() as u64;
        assert!(binomial_test(pos2, n, 0.5).p_value > 0.01);
        assert!(binomial_test(pos3, n, 0.5).p_value > 0.01);
    }

    #[test]
    fn overshoot_ratio_inequalities() {
        let ts = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];
        for &s in &[0.0, 0.01, 0.3, 1.0, 2.5, 10.0, 100.0, 1e4] {
            for (i, &t1) in ts.iter().enumerate() {
                for &t2 in &ts[..i] {
                    let ratio = step_tail_2d_scaled(s, t1) / step_tail_2d_scaled(s, t2);
                    assert!(ratio < t1 * t1 / (t2 * t2), "s={s} t1={t1} t2={t2}");
                }
                let gap = step_tail_2d_scaled(s, t1) - t1 * t1 * step_tail_2d(s);
                assert!(gap >= -1e-17 && gap <= 4.0 / (1.0 + s * s).powi(2), "s={s} t={t1}");
            }
        }
    }

    #[test]
    fn scaled_tail_matches_direct_tail() {
        for &s in &[0.0, 0.5, 3.0, 1e3] {
            for &t in &[0.1, 0.5, 1.0] {
                let direct = step_tail_2d(s / t);
                assert!((step_tail_2d_scaled(s, t) - direct).abs() <= 1e-13 * direct);
            }
        }
    }

    #[test]
    fn sampler_streams_reproduce() {
        let s = RngStream::new(99, 5);
        let a: Vec<u64> = {
            let mut r = s.rng();
            (0..1000).map(|_| sample_bounce_3d(&mut r).x_step.to_bits()).collect()
        };
        let b: Vec<u64> = {
            let mut r = s.rng();
            (0..1000).map(|_| sample_bounce_3d(&mut r).x_step.to_bits()).collect()
        };
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn cdf_is_symmetric_and_monotone(x in -1e6f64..1e6, dx in 1e-6f64..10.0) {
            prop_assert!((step_cdf_2d(-x) - (1.0 - step_cdf_2d(x))).abs() < 1e-15);
            prop_assert!(step_cdf_2d(x + dx) >= step_cdf_2d(x));
            let f = step_cdf_2d(x);
            prop_assert!(f > 0.0 && f < 1.0);
        }
    }
}
