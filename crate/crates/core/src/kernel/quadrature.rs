//! Globally adaptive 21-point Gauss–Kronrod quadrature.
//!
//! Finite intervals are bisected where the local error estimate is largest
//! until the total estimated error drops below `max(abs_tol, rel_tol·|I|)`.
//! Infinite endpoints are either truncated around a caller-supplied envelope
//! ([`integrate_enveloped`]) or mapped onto a finite interval by
//! `x = a ± s·(1 − t)/t` ([`integrate`], [`integrate_mapped`]).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Tolerances and limits for adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Half-width, in envelope scales, of the window kept for unbounded domains.
    pub tail_cut: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            max_subdivisions: 2000,
            tail_cut: 8.0,
        }
    }
}

impl QuadratureSpec {
    pub fn new(abs_tol: f64, rel_tol: f64, max_subdivisions: usize, tail_cut: f64) -> Result<Self> {
        let spec = Self {
            abs_tol,
            rel_tol,
            max_subdivisions,
            tail_cut,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Purely relative accuracy, for integrals whose magnitude is unknown.
    pub fn relative(rel_tol: f64) -> Self {
        Self {
            abs_tol: 1e-300,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::domain("quadrature tolerances must be positive"));
        }
        if !(self.tail_cut >= 6.0) {
            return Err(Error::domain("tail_cut must be at least 6"));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::domain("max_subdivisions must be positive"));
        }
        Ok(())
    }
}

/// Center and scale of the mass of an integrand on an unbounded domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub center: f64,
    pub scale: f64,
}

impl Envelope {
    pub fn new(center: f64, scale: f64) -> Self {
        Self { center, scale }
    }
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_707_754_426,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
// Gauss weights for the odd-indexed Kronrod nodes 1, 3, 5, 7, 9.
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One 21-point Kronrod rule with the QUADPACK error heuristic.
fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Segment {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = fc * WGK[10];
    let mut gauss = 0.0;
    let mut abs_k = kronrod.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        kronrod += WGK[j] * (f1 + f2);
        abs_k += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = kronrod * half;
    let res_abs = abs_k * half.abs();
    let res_asc = asc * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Segment {
        lo,
        hi,
        value,
        error,
    }
}

/// Adaptive integration over consecutive finite pieces `points[0] < points[1] < …`.
///
/// The pieces form the initial subdivision; placing a point on a known
/// discontinuity of `f` speeds convergence considerably.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, points: &[f64], spec: &QuadratureSpec) -> Result<f64> {
    spec.validate()?;
    if points.len() < 2 {
        return Err(Error::domain("need at least two integration points"));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::domain("integrate_pieces needs finite points"));
    }
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in points.windows(2) {
        if !(w[1] >= w[0]) {
            return Err(Error::domain("integration points must be nondecreasing"));
        }
        if w[1] == w[0] {
            continue;
        }
        let seg = gauss_kronrod(&f, w[0], w[1]);
        total += seg.value;
        total_err += seg.error;
        heap.push(seg);
    }
    if !total.is_finite() {
        return Err(Error::domain("integrand is not finite on the domain"));
    }
    let mut subdivisions = heap.len();
    while total_err > spec.abs_tol.max(spec.rel_tol * total.abs()) {
        if subdivisions >= spec.max_subdivisions {
            return Err(Error::Quadrature {
                estimate: total,
                error: total_err,
                subdivisions,
            });
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // Interval exhausted at machine resolution; keep it as is.
            heap.push(Segment {
                error: 0.0,
                ..worst
            });
            total_err -= worst.error;
            continue;
        }
        let left = gauss_kronrod(&f, worst.lo, mid);
        let right = gauss_kronrod(&f, mid, worst.hi);
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        subdivisions += 1;
        if !total.is_finite() {
            return Err(Error::domain("integrand is not finite on the domain"));
        }
    }
    // Re-sum to shed accumulated roundoff from incremental updates.
    Ok(heap.iter().map(|s| s.value).sum())
}

/// Adaptive integration of `f` over `[lo, hi]`; infinite endpoints use a unit-scale map.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, spec: &QuadratureSpec) -> Result<f64> {
    integrate_mapped(f, lo, hi, 1.0, spec)
}

/// Like [`integrate`], with `scale` setting how fast infinite tails are compressed.
pub fn integrate_mapped<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    scale: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if lo.is_nan() || hi.is_nan() {
        return Err(Error::domain("integration bounds are NaN"));
    }
    if hi < lo {
        return integrate_mapped(f, hi, lo, scale, spec).map(|v| -v);
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::domain("mapping scale must be positive"));
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => integrate_pieces(f, &[lo, hi], spec),
        (true, false) => {
            let g = |t: f64| {
                if t <= 0.0 {
                    return 0.0;
                }
                let x = lo + scale * (1.0 - t) / t;
                f(x) * scale / (t * t)
            };
            integrate_pieces(g, &[0.0, 1.0], spec)
        }
        (false, true) => {
            let g = |t: f64| {
                if t <= 0.0 {
                    return 0.0;
                }
                let x = hi - scale * (1.0 - t) / t;
                f(x) * scale / (t * t)
            };
            integrate_pieces(g, &[0.0, 1.0], spec)
        }
        (false, false) => {
            let g = |t: f64| {
                if t <= 0.0 {
                    return 0.0;
                }
                let u = scale * (1.0 - t) / t;
                (f(u) + f(-u)) * scale / (t * t)
            };
            integrate_pieces(g, &[0.0, 1.0], spec)
        }
    }
}

/// Integrate over `[lo, hi] ∩ [center − cut·scale, center + cut·scale]`.
///
/// Extra `breaks` inside the window become initial subdivision points.
pub fn integrate_enveloped<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    envelope: Envelope,
    breaks: &[f64],
    spec: &QuadratureSpec,
) -> Result<f64> {
    if !(envelope.scale > 0.0 && envelope.scale.is_finite() && envelope.center.is_finite()) {
        return Err(Error::domain("envelope needs finite center and positive scale"));
    }
    let a = lo.max(envelope.center - spec.tail_cut * envelope.scale);
    let b = hi.min(envelope.center + spec.tail_cut * envelope.scale);
    if !(b > a) {
        return Ok(0.0);
    }
    let mut points = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    points.extend(inner);
    points.push(b);
    integrate_pieces(f, &points, spec)
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;
const LOG_DROP: f64 = 44.0;

/// Natural log of `∫ exp(log_f(x)) dx` over `[lo, hi]` for a unimodal `log_f`.
///
/// The peak is located by bracketing outward from `hint.center` and a golden
/// section search. The window is then cut where `log_f` has fallen by 44
/// below the peak and the rescaled integrand `exp(log_f − peak)` is
/// integrated adaptively, so the result does not underflow even when the
/// integral itself is far below the smallest double.
pub fn ln_integrate_unimodal<F: Fn(f64) -> f64>(
    log_f: F,
    lo: f64,
    hi: f64,
    hint: Envelope,
    breaks: &[f64],
    spec: &QuadratureSpec,
) -> Result<f64> {
    spec.validate()?;
    if lo.is_nan() || hi.is_nan() || !(hi > lo) {
        return Err(Error::domain("unimodal integration needs lo < hi"));
    }
    if !(hint.scale > 0.0 && hint.scale.is_finite() && hint.center.is_finite()) {
        return Err(Error::domain("envelope needs finite center and positive scale"));
    }
    let f = |x: f64| {
        let v = log_f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let clamp = |x: f64| {
        if lo.is_finite() && x <= lo {
            lo
        } else if hi.is_finite() && x >= hi {
            hi
        } else {
            x
        }
    };
    // Keep probes strictly inside so that boundary singularities are avoided.
    let inner = |x: f64, toward: f64| {
        let c = clamp(x);
        if (lo.is_finite() && c <= lo) || (hi.is_finite() && c >= hi) {
            c + 1e-12 * (toward - c)
        } else {
            c
        }
    };
    let width_cap = if lo.is_finite() && hi.is_finite() { hi - lo } else { f64::INFINITY };
    let step = hint.scale.min(0.25 * width_cap);
    let mut b = clamp(hint.center);
    if lo.is_finite() && hi.is_finite() && (b <= lo || b >= hi) {
        b = 0.5 * (lo + hi);
    } else if b <= lo {
        b = lo + step;
    } else if b >= hi {
        b = hi - step;
    }
    let mut fb = f(b);
    if !fb.is_finite() {
        // Look for a finite starting value on a widening ladder.
        let mut found = false;
        'search: for k in 0..60 {
            let d = step * 1.5f64.powi(k);
            for x in [b - d, b + d] {
                let x = inner(x, b);
                let v = f(x);
                if v.is_finite() {
                    b = x;
                    fb = v;
                    found = true;
                    break 'search;
                }
            }
        }
        if !found {
            return Ok(f64::NEG_INFINITY);
        }
    }
    // Bracket the peak.
    let mut a = inner(b - step, b);
    let mut fa = f(a);
    let mut guard = 0;
    while fa > fb && guard < 200 {
        let na = inner(a - 2.0 * (b - a).max(step), a);
        b = a;
        fb = fa;
        if na >= a {
            break;
        }
        a = na;
        fa = f(a);
        guard += 1;
    }
    let mut c = inner(b + step, b);
    let mut fc = f(c);
    guard = 0;
    while fc > fb && guard < 200 {
        let nc = inner(c + 2.0 * (c - b).max(step), c);
        b = c;
        fb = fc;
        if nc <= c {
            break;
        }
        c = nc;
        fc = f(c);
        guard += 1;
    }
    if fa > fb {
        a = clamp(a);
    }
    if fc > fb {
        c = clamp(c);
    }
    // Golden-section search on [a, c].
    let (mut x0, mut x3) = (a, c);
    let mut x1 = x0 + GOLDEN * (x3 - x0);
    let mut x2 = x3 - GOLDEN * (x3 - x0);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if (x3 - x0).abs() <= 1e-10 * (x1.abs() + x2.abs()).max(hint.scale) {
            break;
        }
        if f1 >= f2 {
            x3 = x2;
            x2 = x1;
            f2 = f1;
            x1 = x0 + GOLDEN * (x3 - x0);
            f1 = f(x1);
        } else {
            x0 = x1;
            x1 = x2;
            f1 = f2;
            x2 = x3 - GOLDEN * (x3 - x0);
            f2 = f(x2);
        }
    }
    let (mut mode, mut peak) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    for (x, v) in [(a, fa), (b, fb), (c, fc)] {
        if v > peak {
            mode = x;
            peak = v;
        }
    }
    if !peak.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let scale = hint.scale.min(0.25 * width_cap).max(1e-300);
    let left = cut_point(&f, mode, peak, -1.0, scale, lo)?;
    let right = cut_point(&f, mode, peak, 1.0, scale, hi)?;
    let mut points = vec![left];
    let mut inside: Vec<f64> = breaks
        .iter()
        .copied()
        .chain(std::iter::once(mode))
        .filter(|&x| x > left && x < right)
        .collect();
    inside.sort_by(f64::total_cmp);
    inside.dedup();
    points.extend(inside);
    points.push(right);
    let value = integrate_pieces(|x| (f(x) - peak).exp(), &points, &spec.with_abs_tol(1e-300))?;
    Ok(peak + value.ln())
}

/// Walk from `mode` in direction `dir` until `f` drops by [`LOG_DROP`] or the boundary is reached.
fn cut_point<F: Fn(f64) -> f64>(f: &F, mode: f64, peak: f64, dir: f64, scale: f64, bound: f64) -> Result<f64> {
    let target = peak - LOG_DROP;
    let mut inside = mode;
    let mut step = scale;
    for _ in 0..2000 {
        let mut x = mode + dir * step;
        if bound.is_finite() && (x - bound) * dir >= 0.0 {
            x = bound;
        }
        if f(x) < target {
            let mut outside = x;
            for _ in 0..60 {
                let mid = 0.5 * (inside + outside);
                if f(mid) < target {
                    outside = mid;
                } else {
                    inside = mid;
                }
            }
            return Ok(outside);
        }
        if x == bound {
            return Ok(bound);
        }
        inside = x;
        step *= 2.0;
        if !step.is_finite() {
            break;
        }
    }
    Err(Error::Degenerate("log-integrand does not decay toward an infinite boundary".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::special::{norm_cdf, norm_pdf};

    #[test]
    fn rules_are_exact_on_polynomials() {
        for k in 0..=19 {
            let seg = gauss_kronrod(&|x: f64| x.powi(k), 0.0, 1.0);
            let want = 1.0 / (k as f64 + 1.0);
            assert!((seg.value - want).abs() < 1e-15, "degree {k}");
        }
        // Kronrod alone stays exact up to degree 31.
        let seg = gauss_kronrod(&|x: f64| x.powi(30), -1.0, 1.0);
        assert!((seg.value - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn basic_integrals() {
        let spec = QuadratureSpec::default();
        let v = integrate(|x| x, 0.0, 1.0, &spec).unwrap();
        assert!((v - 0.5).abs() < 1e-10);
        let v = integrate(norm_pdf, f64::NEG_INFINITY, f64::INFINITY, &spec).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
        let v = integrate(norm_pdf, 1.0, f64::INFINITY, &spec).unwrap();
        assert!((v - (1.0 - norm_cdf(1.0))).abs() < 1e-8);
        let v = integrate(norm_pdf, f64::NEG_INFINITY, -2.0, &spec).unwrap();
        assert!((v - norm_cdf(-2.0)).abs() < 1e-8);
        let v = integrate_enveloped(norm_pdf, f64::NEG_INFINITY, f64::INFINITY, Envelope::new(0.0, 1.0), &[], &spec)
            .unwrap();
        assert!((v - 1.0).abs() < 1e-8);
    }

    #[test]
    fn indicator_integrand_converges() {
        let spec = QuadratureSpec::default();
        let f = |z: f64| if z > 1.0 { norm_pdf(z) } else { 0.0 };
        let v = integrate_enveloped(f, f64::NEG_INFINITY, f64::INFINITY, Envelope::new(0.0, 1.0), &[], &spec)
            .unwrap();
        assert!((v - (1.0 - norm_cdf(1.0))).abs() < 1e-8);
    }

    #[test]
    fn halving_initial_subdivision_is_harmless() {
        let spec = QuadratureSpec::default();
        let f = |x: f64| (3.0 * x).sin() * (-x * x).exp();
        let one = integrate_pieces(f, &[-1.0, 2.0], &spec).unwrap();
        let two = integrate_pieces(f, &[-1.0, 0.5, 2.0], &spec).unwrap();
        assert!((one - two).abs() <= spec.rel_tol * one.abs());
    }

    #[test]
    fn unimodal_log_integrals() {
        let spec = QuadratureSpec::default();
        // Standard normal mass far in the tail, ln Φ(−38).
        let v = ln_integrate_unimodal(
            crate::kernel::special::ln_norm_pdf,
            f64::NEG_INFINITY,
            -38.0,
            Envelope::new(0.0, 1.0),
            &[],
            &spec,
        )
        .unwrap();
        assert!((v - crate::kernel::special::ln_norm_cdf(-38.0)).abs() < 1e-6);
        // Gamma(5, 1) mass on [0, 2] is P(5, 2).
        let g = |x: f64| crate::kernel::special::ln_gamma_pdf(x, 5.0, 1.0);
        let v = ln_integrate_unimodal(g, 0.0, 2.0, Envelope::new(5.0, 2.0), &[], &spec).unwrap();
        let want = crate::kernel::special::reg_gamma_lower(5.0, 2.0).unwrap().ln();
        assert!((v - want).abs() < 1e-7);
        let v = ln_integrate_unimodal(g, 0.0, f64::INFINITY, Envelope::new(100.0, 1.0), &[], &spec).unwrap();
        assert!(v.abs() < 1e-7);
    }

    #[test]
    fn reversed_bounds_and_failures() {
        let spec = QuadratureSpec::default();
        let v = integrate(|x| x, 1.0, 0.0, &spec).unwrap();
        assert!((v + 0.5).abs() < 1e-12);
        let tight = QuadratureSpec {
            max_subdivisions: 3,
            abs_tol: 1e-300,
            rel_tol: 1e-15,
            ..QuadratureSpec::default()
        };
        let err = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, &tight).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
        assert!(QuadratureSpec::new(1e-9, 1e-7, 10, 5.0).is_err());
        assert!(QuadratureSpec::new(0.0, 1e-7, 10, 8.0).is_err());
    }
}
