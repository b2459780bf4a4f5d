//! One-variable function engine: evaluation with derivatives, sup-norms,
//! level crossings, and the built-in library of test functions.

use crate::jet::Jet;
use crate::{Error, Result, Scalar};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// A power of two `2^k`, stored by its exponent so that levels far below the
/// floating point range stay exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DyadicLevel {
    pub k: i32,
}

impl DyadicLevel {
    pub fn new(k: i32) -> Self {
        DyadicLevel { k }
    }

    pub fn value<T: Scalar>(self) -> T {
        T::lit(2.0).powi(self.k)
    }

    /// Largest dyadic not exceeding `x` (x > 0).
    pub fn floor_of<T: Scalar>(x: T) -> Option<Self> {
        if !(x > T::zero()) || !x.is_finite() {
            return None;
        }
        Some(Self::floor_of_log2(x.log2()))
    }

    /// Largest dyadic `2^k` with `k <= log2x`.
    pub fn floor_of_log2<T: Scalar>(log2x: T) -> Self {
        let mut k = log2x.floor().as_f64() as i32;
        // log2 of an exact power of two can land one ulp low.
        if T::lit((k + 1) as f64) <= log2x {
            k += 1;
        }
        DyadicLevel { k }
    }

    /// Parses `2^k` notation, a bare exponent, or a positive power of two.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some(e) = s.strip_prefix("2^") {
            return e.trim_matches(|c| c == '(' || c == ')').parse().ok().map(Self::new);
        }
        if let Ok(k) = s.parse::<i32>() {
            if k <= 0 {
                return Some(Self::new(k));
            }
        }
        let v: f64 = s.parse().ok()?;
        let lvl = Self::floor_of(v)?;
        (lvl.value::<f64>() == v).then_some(lvl)
    }
}

impl fmt::Display for DyadicLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "2^{}", self.k)
    }
}

type ValueFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;
type DerivFn<T> = Arc<dyn Fn(T, usize) -> T + Send + Sync>;
type LogFn<T> = Arc<dyn Fn(T) -> (i8, T) + Send + Sync>;

#[derive(Clone)]
enum Form<T: Scalar> {
    /// exp(-1/x^2) sin(1/x)
    OscFlat,
    /// exp(-1/x^2)
    ExpFlat,
    Monomial(i32),
    /// y^3 / 6
    CubicSixth,
    /// ascending coefficients c_0 + c_1 x + ...
    Poly(Vec<T>),
    Custom {
        value: ValueFn<T>,
        derivs: Option<DerivFn<T>>,
        log: Option<LogFn<T>>,
    },
}

/// A real function on a closed interval with derivative access up to
/// `order_r`, optional log-domain evaluation, and an optional declared bound
/// on `|f^(r)|`.
///
/// Immutable after construction; clones share user closures.
#[derive(Clone)]
pub struct SmoothFn1D<T: Scalar> {
    name: String,
    domain: (T, T),
    order_r: usize,
    c_r_bound: Option<T>,
    form: Form<T>,
}

impl<T: Scalar> fmt::Debug for SmoothFn1D<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFn1D")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("order_r", &self.order_r)
            .field("c_r_bound", &self.c_r_bound)
            .finish()
    }
}

/// Polynomials and monomials are C^infinity with exact derivatives; this is
/// the order they advertise.
const POLY_ORDER: usize = 16;

impl<T: Scalar> SmoothFn1D<T> {
    /// Looks up a library function by key: `oscflat`, `exp-flat`,
    /// `cubic-sixth`, `monomial:m`, `poly:[c0,c1,...]` (ascending powers).
    pub fn library(key: &str) -> Result<Self> {
        let key = key.trim();
        let unit = (T::zero(), T::one());
        let f = match key {
            "oscflat" => Self::with_form("oscflat", unit, 3, Form::OscFlat),
            "exp-flat" => Self::with_form("exp-flat", unit, 3, Form::ExpFlat),
            "cubic-sixth" => Self::with_form("cubic-sixth", (-T::one(), T::one()), POLY_ORDER, Form::CubicSixth),
            _ => {
                if let Some(m) = key.strip_prefix("monomial:") {
                    let m: i32 = m.trim().parse().map_err(|_| Error::UnknownKey(key.into()))?;
                    if m < 0 {
                        return Err(Error::UnknownKey(key.into()));
                    }
                    Self::with_form(key, unit, POLY_ORDER, Form::Monomial(m))
                } else if let Some(body) = key.strip_prefix("poly:") {
                    let body = body.trim().trim_start_matches('[').trim_end_matches(']');
                    let coeffs = body
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| s.trim().parse::<f64>().map(T::lit))
                        .collect::<std::result::Result<Vec<T>, _>>()
                        .map_err(|_| Error::UnknownKey(key.into()))?;
                    if coeffs.is_empty() {
                        return Err(Error::UnknownKey(key.into()));
                    }
                    Self::with_form(key, unit, POLY_ORDER, Form::Poly(coeffs))
                } else {
                    return Err(Error::UnknownKey(key.into()));
                }
            }
        };
        Ok(f)
    }

    pub fn polynomial(coeffs: Vec<T>) -> Self {
        let name = format!(
            "poly:[{}]",
            coeffs.iter().map(|c| format!("{}", c)).collect::<Vec<_>>().join(",")
        );
        Self::with_form(&name, (T::zero(), T::one()), POLY_ORDER, Form::Poly(coeffs))
    }

    /// A user function known only through its values; derivatives fall back
    /// to central differences.
    pub fn from_fn(
        name: &str,
        domain: (T, T),
        order_r: usize,
        f: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Self {
        Self::with_form(name, domain, order_r, Form::Custom { value: Arc::new(f), derivs: None, log: None })
    }

    fn with_form(name: &str, domain: (T, T), order_r: usize, form: Form<T>) -> Self {
        SmoothFn1D { name: name.to_string(), domain, order_r, c_r_bound: None, form }
    }

    /// Registers closed-form derivatives `d(x, k)` for `1 <= k <= order_r`.
    pub fn with_derivatives(mut self, d: impl Fn(T, usize) -> T + Send + Sync + 'static) -> Self {
        if let Form::Custom { derivs, .. } = &mut self.form {
            *derivs = Some(Arc::new(d));
        }
        self
    }

    /// Registers a log-domain evaluator returning `(sign, log2|f|)`.
    pub fn with_log(mut self, l: impl Fn(T) -> (i8, T) + Send + Sync + 'static) -> Self {
        if let Form::Custom { log, .. } = &mut self.form {
            *log = Some(Arc::new(l));
        }
        self
    }

    pub fn with_domain(mut self, a: T, b: T) -> Self {
        self.domain = (a, b);
        self
    }

    pub fn with_order(mut self, r: usize) -> Self {
        self.order_r = r;
        self
    }

    pub fn with_c_r_bound(mut self, c: T) -> Self {
        self.c_r_bound = Some(c);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> (T, T) {
        self.domain
    }

    pub fn order_r(&self) -> usize {
        self.order_r
    }

    pub fn c_r_bound(&self) -> Option<T> {
        self.c_r_bound
    }

    pub fn has_log(&self) -> bool {
        !matches!(&self.form, Form::Custom { log: None, .. })
    }

    pub fn has_closed_derivatives(&self) -> bool {
        !matches!(&self.form, Form::Custom { derivs: None, .. })
    }

    /// Checked evaluation of the k-th derivative.
    pub fn eval(&self, x: T, k: usize) -> Result<T> {
        let (a, b) = self.domain;
        if !(x >= a && x <= b) {
            return Err(Error::Domain { x: x.as_f64(), a: a.as_f64(), b: b.as_f64() });
        }
        if k > self.order_r {
            return Err(Error::Capability { k, order: self.order_r });
        }
        let v = self.deriv(x, k);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation(x.as_f64()))
        }
    }

    /// Unchecked value.
    #[inline]
    pub fn value(&self, x: T) -> T {
        match &self.form {
            Form::OscFlat => {
                if x == T::zero() || flat_underflow(x) {
                    T::zero()
                } else {
                    let r = x.recip();
                    (-r * r).exp() * r.sin()
                }
            }
            Form::ExpFlat => {
                if x == T::zero() || flat_underflow(x) {
                    T::zero()
                } else {
                    (-(x * x).recip()).exp()
                }
            }
            Form::Monomial(m) => x.powi(*m),
            Form::CubicSixth => x * x * x / T::lit(6.0),
            Form::Poly(c) => horner(c, x),
            Form::Custom { value, .. } => value(x),
        }
    }

    /// Unchecked k-th derivative: closed form when registered, otherwise the
    /// central-difference fallback.
    pub fn deriv(&self, x: T, k: usize) -> T {
        if k == 0 {
            return self.value(x);
        }
        match &self.form {
            Form::OscFlat | Form::ExpFlat if k <= 3 => {
                if x == T::zero() || flat_underflow(x) {
                    return T::zero();
                }
                let r = Jet::var(x).recip();
                let g = (-(r * r)).exp();
                let j = if matches!(self.form, Form::OscFlat) { g * r.sin() } else { g };
                j.deriv(k)
            }
            Form::Monomial(m) => monomial_deriv(*m, x, k),
            Form::CubicSixth => match k {
                1 => x * x / T::lit(2.0),
                2 => x,
                3 => T::one(),
                _ => T::zero(),
            },
            Form::Poly(c) => horner(&poly_deriv(c, k), x),
            Form::Custom { derivs: Some(d), .. } => d(x, k),
            _ => self.fd_derivative(x, k),
        }
    }

    /// Central-difference k-th derivative with step eps^{1/(k+2)} max(1,|x|).
    /// Orders 1..=3 use fourth-order stencils; higher orders use the
    /// second-order binomial stencil. The
    /// step is snapped to a power of two so stencil offsets are exact, and the
    /// stencil is shifted inward when it would leave the domain.
    pub fn fd_derivative(&self, x: T, k: usize) -> T {
        if k == 0 {
            return self.value(x);
        }
        let high = k <= 3;
        let nominal = T::epsilon().powf(T::one() / T::lit((k + 2) as f64)) * x.abs().max(T::one());
        let h = T::lit(2.0).powi(nominal.log2().round().as_f64() as i32);
        let reach = if high { [0.0, 2.0, 2.0, 3.0][k] } else { k as f64 / 2.0 };
        let half_span = h * T::lit(reach);
        let (a, b) = self.domain;
        let mut c = x;
        if b - a > T::lit(2.0) * half_span {
            if c - half_span < a {
                c = a + half_span;
            }
            if c + half_span > b {
                c = b - half_span;
            }
        }
        let at = |m: f64| self.value(c + T::lit(m) * h);
        let odd = |m: f64| at(m) - at(-m);
        let even = |m: f64| at(m) + at(-m);
        let acc = match k {
            1 => (T::lit(8.0) * odd(1.0) - odd(2.0)) / T::lit(12.0),
            2 => (T::lit(16.0) * even(1.0) - even(2.0) - T::lit(30.0) * at(0.0)) / T::lit(12.0),
            3 => (T::lit(8.0) * odd(2.0) - T::lit(13.0) * odd(1.0) - odd(3.0)) / T::lit(8.0),
            _ => {
                let mut acc = T::zero();
                let mut binom = 1.0f64;
                for j in 0..=k {
                    let sgn = if j % 2 == 0 { 1.0 } else { -1.0 };
                    acc = acc + T::lit(sgn * binom) * at(k as f64 / 2.0 - j as f64);
                    binom = binom * (k - j) as f64 / (j + 1) as f64;
                }
                acc
            }
        };
        acc / h.powi(k as i32)
    }

    /// `(sign, log2|f(x)|)` when a log-domain form exists.
    pub fn log_eval(&self, x: T) -> Option<(i8, T)> {
        let l2e = T::LOG2_E();
        let out = match &self.form {
            Form::OscFlat => {
                if x == T::zero() {
                    (0, T::neg_infinity())
                } else {
                    let r = x.recip();
                    let s = r.sin();
                    (sign_of(s), -l2e * r * r + s.abs().log2())
                }
            }
            Form::ExpFlat => {
                if x == T::zero() {
                    (0, T::neg_infinity())
                } else {
                    (1, -l2e / (x * x))
                }
            }
            Form::Monomial(m) => {
                let s = if *m % 2 == 1 { sign_of(x) } else if x == T::zero() && *m > 0 { 0 } else { 1 };
                (s, T::lit(*m as f64) * x.abs().log2())
            }
            Form::CubicSixth => (sign_of(x), T::lit(3.0) * x.abs().log2() - T::lit(6.0).log2()),
            Form::Poly(c) => {
                let v = horner(c, x);
                (sign_of(v), v.abs().log2())
            }
            Form::Custom { log: Some(l), .. } => l(x),
            Form::Custom { log: None, .. } => return None,
        };
        Some(out)
    }

    /// Log-domain magnitude, from `log_eval` when available, otherwise from
    /// the plain value.
    pub fn log_magnitude(&self, x: T) -> (i8, T) {
        self.log_eval(x).unwrap_or_else(|| {
            let v = self.value(x);
            (sign_of(v), v.abs().log2())
        })
    }
}

fn flat_underflow<T: Scalar>(x: T) -> bool {
    // exp(-1/x^2) underflows far below anything polynomial in 1/x can lift.
    let cutoff = -T::min_positive_value().ln() + T::lit(40.0);
    (x * x).recip() > cutoff
}

pub(crate) fn sign_of<T: Scalar>(v: T) -> i8 {
    if v > T::zero() {
        1
    } else if v < T::zero() {
        -1
    } else {
        0
    }
}

fn horner<T: Scalar>(c: &[T], x: T) -> T {
    c.iter().rev().fold(T::zero(), |acc, &ci| acc * x + ci)
}

fn poly_deriv<T: Scalar>(c: &[T], k: usize) -> Vec<T> {
    let mut d = c.to_vec();
    for _ in 0..k {
        if d.len() <= 1 {
            return vec![T::zero()];
        }
        d = d.iter().enumerate().skip(1).map(|(i, &ci)| ci * T::lit(i as f64)).collect();
    }
    d
}

fn monomial_deriv<T: Scalar>(m: i32, x: T, k: usize) -> T {
    if k as i32 > m {
        return T::zero();
    }
    let mut coef = 1.0;
    for i in 0..k as i32 {
        coef *= (m - i) as f64;
    }
    T::lit(coef) * x.powi(m - k as i32)
}

fn check_interval<T: Scalar>(f: &SmoothFn1D<T>, j: (T, T)) -> Result<()> {
    let (a, b) = f.domain;
    if !(j.1 > j.0) {
        return Err(Error::EmptyInterval(j.0.as_f64(), j.1.as_f64()));
    }
    if j.0 < a || j.1 > b {
        let x = if j.0 < a { j.0 } else { j.1 };
        return Err(Error::Domain { x: x.as_f64(), a: a.as_f64(), b: b.as_f64() });
    }
    Ok(())
}

const SUP_SAMPLES: usize = 2048;
const SUP_REFINE: usize = 8;

/// Estimate of `sup_J |f^(k)|`: a uniform sweep, then golden-section
/// refinement around the largest sampled peaks. Never below the sampled max.
pub fn sup_norm<T: Scalar>(f: &SmoothFn1D<T>, j: (T, T), k: usize) -> Result<T> {
    check_interval(f, j)?;
    if k > f.order_r {
        return Err(Error::Capability { k, order: f.order_r });
    }
    let n = SUP_SAMPLES;
    let h = (j.1 - j.0) / T::lit(n as f64);
    let xs: Vec<T> = (0..=n).map(|i| if i == n { j.1 } else { j.0 + h * T::lit(i as f64) }).collect();
    let vals: Vec<T> = xs.iter().map(|&x| f.deriv(x, k).abs()).collect();
    if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation(xs[i].as_f64()));
    }
    let mut best = vals.iter().fold(T::zero(), |m, &v| m.max(v));

    let mut peaks: Vec<usize> = (0..=n)
        .filter(|&i| {
            let l = if i == 0 { T::neg_infinity() } else { vals[i - 1] };
            let r = if i == n { T::neg_infinity() } else { vals[i + 1] };
            vals[i] >= l && vals[i] >= r
        })
        .collect();
    peaks.sort_by(|&p, &q| vals[q].partial_cmp(&vals[p]).unwrap_or(std::cmp::Ordering::Equal));
    peaks.truncate(SUP_REFINE);
    let g = |x: T| f.deriv(x, k).abs();
    for p in peaks {
        let lo = xs[p.saturating_sub(1)];
        let hi = xs[(p + 1).min(n)];
        best = best.max(golden_max(&g, lo, hi, 80));
    }
    Ok(best)
}

fn golden_max<T: Scalar>(g: &impl Fn(T) -> T, mut lo: T, mut hi: T, iters: usize) -> T {
    let inv_phi = T::lit(0.618_033_988_749_894_9);
    let mut c = hi - (hi - lo) * inv_phi;
    let mut d = lo + (hi - lo) * inv_phi;
    let (mut gc, mut gd) = (g(c), g(d));
    let mut best = gc.max(gd);
    for _ in 0..iters {
        if gc > gd {
            hi = d;
            d = c;
            gd = gc;
            c = hi - (hi - lo) * inv_phi;
            gc = g(c);
        } else {
            lo = c;
            c = d;
            gc = gd;
            d = lo + (hi - lo) * inv_phi;
            gd = g(d);
        }
        best = best.max(gc).max(gd);
        if hi - lo <= T::epsilon() * (lo.abs() + hi.abs()) {
            break;
        }
    }
    best
}

/// Knobs for the crossing search.
#[derive(Clone, Copy, Debug)]
pub struct CrossingOptions<T> {
    /// Uniform bracketing grid size.
    pub grid: usize,
    /// Minimum feature size; crossings closer than this merge. `None` means
    /// `2^-20 |J|`.
    pub feature: Option<T>,
}

impl<T> Default for CrossingOptions<T> {
    fn default() -> Self {
        CrossingOptions { grid: 4096, feature: None }
    }
}

/// Levels below this are compared in the log domain when the function has a
/// log form (2^-400, raised to stay representable for narrow types).
pub fn log_domain_threshold<T: Scalar>() -> T {
    let floor = T::min_positive_value() / T::epsilon();
    T::lit(2.0).powi(-400).max(floor)
}

/// All solutions of `f(x) = c` in `J`, separated by more than the feature
/// size, each located by bisection to `1e-14 |J|`.
pub fn find_level_crossings<T: Scalar>(f: &SmoothFn1D<T>, j: (T, T), c: T) -> Vec<T> {
    find_level_crossings_with(f, j, c, &CrossingOptions::default())
}

pub fn find_level_crossings_with<T: Scalar>(
    f: &SmoothFn1D<T>,
    j: (T, T),
    c: T,
    opts: &CrossingOptions<T>,
) -> Vec<T> {
    if !(j.1 > j.0) {
        return Vec::new();
    }
    let use_log = c != T::zero() && c.abs() < log_domain_threshold::<T>() && f.log_eval(j.0).is_some();
    if use_log {
        let s = sign_of(c);
        return find_log_level_crossings_with(f, j, s, c.abs().log2(), opts);
    }
    let side = |x: T| sign_of(f.value(x) - c);
    let resid = |x: T| (f.value(x) - c).abs();
    let extremum = |lo: T, hi: T| -> Option<T> {
        if f.order_r == 0 {
            return None;
        }
        let d0 = sign_of(f.deriv(lo, 1));
        let d1 = sign_of(f.deriv(hi, 1));
        if d0 == 0 || d1 == 0 || d0 == d1 {
            return None;
        }
        let tol = (hi - lo) * T::lit(1e-6);
        Some(bisect_boundary(lo, hi, tol, |x| sign_of(f.deriv(x, 1)) == d0))
    };
    scan_crossings(j, opts, side, resid, Some(extremum))
}

/// Crossings of `f = sign * 2^log2c` computed entirely through `log_eval`.
pub fn find_log_level_crossings<T: Scalar>(f: &SmoothFn1D<T>, j: (T, T), sign: i8, log2c: T) -> Vec<T> {
    find_log_level_crossings_with(f, j, sign, log2c, &CrossingOptions::default())
}

pub fn find_log_level_crossings_with<T: Scalar>(
    f: &SmoothFn1D<T>,
    j: (T, T),
    sign: i8,
    log2c: T,
    opts: &CrossingOptions<T>,
) -> Vec<T> {
    if !(j.1 > j.0) {
        return Vec::new();
    }
    // Side of f relative to the target, decided from (sign, log2|f|) only.
    let side = |x: T| -> i8 {
        let (s, l) = f.log_magnitude(x);
        if s == sign && sign != 0 {
            let above = sign_of(l - log2c);
            above * sign
        } else if sign > 0 {
            -1
        } else {
            1
        }
    };
    let resid = |x: T| {
        let (s, l) = f.log_magnitude(x);
        if s == sign {
            (l - log2c).abs()
        } else {
            T::infinity()
        }
    };
    scan_crossings(j, opts, side, resid, None::<fn(T, T) -> Option<T>>)
}

fn scan_crossings<T: Scalar>(
    j: (T, T),
    opts: &CrossingOptions<T>,
    side: impl Fn(T) -> i8,
    resid: impl Fn(T) -> T,
    extremum: Option<impl Fn(T, T) -> Option<T>>,
) -> Vec<T> {
    let len = j.1 - j.0;
    let n = opts.grid.max(2);
    let tol = len * T::lit(1e-14);
    let feature = opts.feature.unwrap_or(len * T::lit(2.0).powi(-20));
    let h = len / T::lit(n as f64);
    let xs: Vec<T> = (0..=n).map(|i| if i == n { j.1 } else { j.0 + h * T::lit(i as f64) }).collect();
    let ss: Vec<i8> = xs.iter().map(|&x| side(x)).collect();

    let refine = |lo: T, hi: T, s_lo: i8| -> T {
        let x = bisect_boundary(lo, hi, tol, |x| side(x) == s_lo);
        // report the bracket end closer to the level
        let other = (x + tol).min(hi);
        if resid(other) < resid(x) {
            other
        } else {
            x
        }
    };

    let mut roots = Vec::new();
    let mut i = 0;
    while i <= n {
        if ss[i] == 0 {
            // run of exact hits: keep the run's ends
            let start = i;
            while i < n && ss[i + 1] == 0 {
                i += 1;
            }
            roots.push(xs[start]);
            if i > start {
                roots.push(xs[i]);
            }
            i += 1;
            continue;
        }
        if i < n {
            let (s0, s1) = (ss[i], ss[i + 1]);
            if s1 != 0 && s0 != s1 {
                roots.push(refine(xs[i], xs[i + 1], s0));
            } else if s1 == s0 {
                if let Some(ext) = &extremum {
                    if let Some(xe) = ext(xs[i], xs[i + 1]) {
                        let se = side(xe);
                        if se != s0 {
                            if se == 0 {
                                roots.push(xe);
                            } else {
                                roots.push(refine(xs[i], xe, s0));
                                roots.push(refine(xe, xs[i + 1], se));
                            }
                        }
                    }
                }
            }
        }
        i += 1;
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut merged: Vec<T> = Vec::with_capacity(roots.len());
    for r in roots {
        match merged.last() {
            Some(&last) if r - last <= feature => {}
            _ => merged.push(r),
        }
    }
    merged
}

/// Bisection for the switch point of a predicate that holds at `lo` and
/// fails at `hi`; returns the last point known to satisfy it.
pub fn bisect_boundary<T: Scalar>(mut lo: T, mut hi: T, tol: T, holds: impl Fn(T) -> bool) -> T {
    while hi - lo > tol {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
