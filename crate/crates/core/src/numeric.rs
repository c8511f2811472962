//! Scalar helpers: compensated summation, the normal distribution, and
//! small polynomial types used to carry the β₀-dependence of statistics.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if libm::fabs(self.sum) >= libm::fabs(v) {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sum a slice with compensation.
pub fn sum(xs: &[f64]) -> f64 {
    let mut acc = Neumaier::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / SQRT_2PI
}

/// Standard normal CDF, `Φ(x) = erfc(−x/√2)/2`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Upper tail `1 − Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard normal quantile.
///
/// Acklam's rational approximation (relative error about 1.15e−9) followed by
/// one Halley step against `erfc`, which brings the error to the 1e−15 level
/// over the open unit interval.
pub fn norm_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log1p(-p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley refinement; work with the smaller tail to keep precision.
    let e = if p < 0.5 {
        norm_cdf(x) - p
    } else {
        (1.0 - p) - norm_sf(x)
    };
    let u = e * SQRT_2PI * libm::exp(0.5 * x * x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Critical value `q = Φ⁻¹(1 − α/2)²` for a two-sided test of level α.
pub fn chi2_1_critical(alpha: f64) -> f64 {
    let z = norm_quantile(1.0 - 0.5 * alpha);
    z * z
}

/// Affine function of β₀: `c0 + c1·β₀`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Lin {
    pub c0: f64,
    pub c1: f64,
}

impl Lin {
    pub const ZERO: Lin = Lin { c0: 0.0, c1: 0.0 };

    pub fn new(c0: f64, c1: f64) -> Self {
        Lin { c0, c1 }
    }

    pub fn constant(c0: f64) -> Self {
        Lin { c0, c1: 0.0 }
    }

    pub fn eval(&self, b: f64) -> f64 {
        self.c0 + self.c1 * b
    }

    pub fn scale(self, s: f64) -> Lin {
        Lin { c0: self.c0 * s, c1: self.c1 * s }
    }
}

impl Add for Lin {
    type Output = Lin;
    fn add(self, o: Lin) -> Lin {
        Lin { c0: self.c0 + o.c0, c1: self.c1 + o.c1 }
    }
}

impl Sub for Lin {
    type Output = Lin;
    fn sub(self, o: Lin) -> Lin {
        Lin { c0: self.c0 - o.c0, c1: self.c1 - o.c1 }
    }
}

impl AddAssign for Lin {
    fn add_assign(&mut self, o: Lin) {
        self.c0 += o.c0;
        self.c1 += o.c1;
    }
}

impl Mul for Lin {
    type Output = Quad;
    fn mul(self, o: Lin) -> Quad {
        Quad {
            q0: self.c0 * o.c0,
            q1: self.c0 * o.c1 + self.c1 * o.c0,
            q2: self.c1 * o.c1,
        }
    }
}

/// Quadratic in β₀: `q0 + q1·β₀ + q2·β₀²`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Quad {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
}

impl Quad {
    pub const ZERO: Quad = Quad { q0: 0.0, q1: 0.0, q2: 0.0 };

    pub fn new(q0: f64, q1: f64, q2: f64) -> Self {
        Quad { q0, q1, q2 }
    }

    pub fn constant(q0: f64) -> Self {
        Quad { q0, q1: 0.0, q2: 0.0 }
    }

    pub fn eval(&self, b: f64) -> f64 {
        self.q0 + b * (self.q1 + b * self.q2)
    }

    pub fn scale(self, s: f64) -> Quad {
        Quad { q0: self.q0 * s, q1: self.q1 * s, q2: self.q2 * s }
    }

    /// Product truncated at degree two. Callers only multiply factors whose
    /// degrees add up to at most two, so nothing is actually dropped.
    #[inline]
    pub fn mul_trunc(self, o: Quad) -> Quad {
        debug_assert!(
            (self.q2 == 0.0 || (o.q1 == 0.0 && o.q2 == 0.0))
                && (o.q2 == 0.0 || (self.q1 == 0.0 && self.q2 == 0.0)),
            "degree overflow in truncated product"
        );
        Quad {
            q0: self.q0 * o.q0,
            q1: self.q0 * o.q1 + self.q1 * o.q0,
            q2: self.q0 * o.q2 + self.q1 * o.q1 + self.q2 * o.q0,
        }
    }

    /// Full product, giving a quartic.
    pub fn mul_full(self, o: Quad) -> Quartic {
        Quartic {
            c: [
                self.q0 * o.q0,
                self.q0 * o.q1 + self.q1 * o.q0,
                self.q0 * o.q2 + self.q1 * o.q1 + self.q2 * o.q0,
                self.q1 * o.q2 + self.q2 * o.q1,
                self.q2 * o.q2,
            ],
        }
    }
}

impl Add for Quad {
    type Output = Quad;
    fn add(self, o: Quad) -> Quad {
        Quad { q0: self.q0 + o.q0, q1: self.q1 + o.q1, q2: self.q2 + o.q2 }
    }
}

impl Sub for Quad {
    type Output = Quad;
    fn sub(self, o: Quad) -> Quad {
        Quad { q0: self.q0 - o.q0, q1: self.q1 - o.q1, q2: self.q2 - o.q2 }
    }
}

impl Neg for Quad {
    type Output = Quad;
    fn neg(self) -> Quad {
        Quad { q0: -self.q0, q1: -self.q1, q2: -self.q2 }
    }
}

impl AddAssign for Quad {
    fn add_assign(&mut self, o: Quad) {
        self.q0 += o.q0;
        self.q1 += o.q1;
        self.q2 += o.q2;
    }
}

impl From<Lin> for Quad {
    fn from(l: Lin) -> Quad {
        Quad { q0: l.c0, q1: l.c1, q2: 0.0 }
    }
}

/// Quartic in β₀, coefficients in increasing degree.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Quartic {
    pub c: [f64; 5],
}

impl Quartic {
    pub fn eval(&self, b: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &ci| acc * b + ci)
    }

    pub fn scale(self, s: f64) -> Quartic {
        let mut c = self.c;
        for ci in c.iter_mut() {
            *ci *= s;
        }
        Quartic { c }
    }
}

impl AddAssign for Quartic {
    fn add_assign(&mut self, o: Quartic) {
        for (a, b) in self.c.iter_mut().zip(o.c.iter()) {
            *a += *b;
        }
    }
}

/// Compensated accumulator for [`Quad`] values.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadAcc {
    a: [Neumaier; 3],
}

impl QuadAcc {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, q: Quad) {
        self.a[0].add(q.q0);
        self.a[1].add(q.q1);
        self.a[2].add(q.q2);
    }

    pub fn value(&self) -> Quad {
        Quad::new(self.a[0].value(), self.a[1].value(), self.a[2].value())
    }
}

/// Compensated accumulator for [`Quartic`] values.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuarticAcc {
    a: [Neumaier; 5],
}

impl QuarticAcc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, q: Quartic) {
        for (acc, v) in self.a.iter_mut().zip(q.c.iter()) {
            acc.add(*v);
        }
    }

    pub fn value(&self) -> Quartic {
        let mut c = [0.0; 5];
        for (ci, acc) in c.iter_mut().zip(self.a.iter()) {
            *ci = acc.value();
        }
        Quartic { c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-6, 0.001, 0.025, 0.3, 0.5, 0.7, 0.975, 0.999, 1.0 - 1e-9] {
            let x = norm_quantile(p);
            let back = if p < 0.5 { norm_cdf(x) } else { 1.0 - norm_sf(x) };
            assert!((back - p).abs() <= 1e-12 * p.max(1e-3), "p={p} x={x} back={back}");
        }
    }

    #[test]
    fn known_quantiles() {
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-13);
        assert!((norm_quantile(0.995) - 2.575_829_303_548_901).abs() < 1e-13);
        assert!((norm_quantile(0.5)).abs() < 1e-15);
        assert!((chi2_1_critical(0.05) - 3.841_458_820_694_124).abs() < 1e-12);
    }

    #[test]
    fn neumaier_beats_naive() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(sum(&xs), 2.0);
    }

    #[test]
    fn lin_products() {
        let a = Lin::new(1.0, 2.0);
        let b = Lin::new(3.0, -1.0);
        let q = a * b;
        for &t in &[-2.0, 0.5, 3.0] {
            assert!((q.eval(t) - a.eval(t) * b.eval(t)).abs() < 1e-12);
        }
        let quart = q.mul_full(q);
        for &t in &[-2.0, 0.5, 3.0] {
            assert!((quart.eval(t) - q.eval(t).powi(2)).abs() < 1e-9);
        }
    }
}
