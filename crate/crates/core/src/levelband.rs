//! Level-band decomposition of one-variable functions: disjoint intervals on
//! which `|f|` stays within a factor of the dyadic level `λ`, the alternation
//! certificate check, and the partial sums over sign components.

use crate::funcore::{
    bisect_boundary, find_level_crossings, find_level_crossings_with, find_log_level_crossings_with, sign_of,
    sup_norm, CrossingOptions, DyadicLevel, SmoothFn1D,
};
use crate::{Error, Result, Scalar};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Sampling grid used to find components and to seed each walk step.
const PARTITION_SAMPLES: usize = 1 << 16;
/// Below this truncation level the partition works on `log2|f|`.
const PLAIN_FLOOR_EXP: i32 = -60;
const LOG_FLOOR_EXP: i32 = -400;

#[derive(Clone, Debug, PartialEq)]
pub struct LevelBandInterval<T> {
    pub level: DyadicLevel,
    /// Ordinal within its level, in left-to-right order.
    pub iota: usize,
    /// Half-open `[l, u)`.
    pub span: (T, T),
    pub sign: i8,
    pub is_boundary: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelBandPartition<T> {
    pub domain: (T, T),
    pub intervals: Vec<LevelBandInterval<T>>,
    pub lambda_min: DyadicLevel,
    /// Closure of `[a,b]` minus the intervals: where `|f|` fell below the
    /// truncation level or no band could be certified.
    pub residual: Vec<(T, T)>,
    /// Whether the construction ran on `log2|f|`.
    pub log_domain: bool,
}

impl<T: Scalar> LevelBandPartition<T> {
    /// Interval count per level exponent. Boundary intervals are left out
    /// unless asked for, matching how the count bound is stated.
    pub fn counts_per_level(&self, include_boundary: bool) -> BTreeMap<i32, usize> {
        let mut m = BTreeMap::new();
        for iv in &self.intervals {
            if include_boundary || !iv.is_boundary {
                *m.entry(iv.level.k).or_insert(0) += 1;
            }
        }
        m
    }

    pub fn report(&self, function: &str, r: usize) -> PartitionReport {
        PartitionReport {
            function: function.to_string(),
            r,
            lambda_min: self.lambda_min.k,
            log_domain: self.log_domain,
            intervals: self
                .intervals
                .iter()
                .map(|iv| IntervalRecord {
                    k_exponent: iv.level.k,
                    iota: iv.iota,
                    l: iv.span.0.as_f64(),
                    u: iv.span.1.as_f64(),
                    sign: iv.sign,
                    boundary: iv.is_boundary,
                })
                .collect(),
            residual: self.residual.iter().map(|&(l, u)| [l.as_f64(), u.as_f64()]).collect(),
            counts_per_level: self.counts_per_level(false),
        }
    }
}

/// JSON form of a partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub function: String,
    pub r: usize,
    pub lambda_min: i32,
    pub log_domain: bool,
    pub intervals: Vec<IntervalRecord>,
    pub residual: Vec<[f64; 2]>,
    pub counts_per_level: BTreeMap<i32, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub k_exponent: i32,
    pub iota: usize,
    pub l: f64,
    pub u: f64,
    pub sign: i8,
    pub boundary: bool,
}

/// `10 r (1 + len c_r^{1/r} λ^{-1/r})`, the per-level interval budget.
pub fn count_bound<T: Scalar>(r: usize, len: T, c_r: T, lambda: DyadicLevel) -> T {
    let rf = T::lit(r as f64);
    let inv_r = rf.recip();
    // λ^{-1/r} through the exponent so that tiny levels do not underflow
    let lam_term = T::lit(2.0).powf(T::lit(-(lambda.k as f64)) * inv_r);
    T::lit(10.0) * rf * (T::one() + len * c_r.powf(inv_r) * lam_term)
}

/// `(sign, log2|f|)` through whichever evaluation path the partition uses.
struct Probe<'a, T: Scalar> {
    f: &'a SmoothFn1D<T>,
    log_mode: bool,
}

impl<T: Scalar> Probe<'_, T> {
    fn at(&self, x: T) -> Result<(i8, T)> {
        let (s, l) = if self.log_mode {
            self.f.log_magnitude(x)
        } else {
            let v = self.f.value(x);
            if !v.is_finite() {
                return Err(Error::Evaluation(x.as_f64()));
            }
            (sign_of(v), v.abs().log2())
        };
        if l.is_nan() || l == T::infinity() {
            return Err(Error::Evaluation(x.as_f64()));
        }
        Ok((s, l))
    }

    /// Crossings of `f = sign 2^e` inside `[lo, hi]`.
    fn crossings(&self, lo: T, hi: T, sign: i8, e: i32, grid: usize) -> Vec<T> {
        if !(hi > lo) {
            return Vec::new();
        }
        let opts = CrossingOptions { grid, feature: None };
        if self.log_mode {
            find_log_level_crossings_with(self.f, (lo, hi), sign, T::lit(e as f64), &opts)
        } else {
            let c = T::lit(sign as f64) * DyadicLevel::new(e).value::<T>();
            find_level_crossings_with(self.f, (lo, hi), c, &opts)
        }
    }
}

struct Samples<T> {
    xs: Vec<T>,
    sign: Vec<i8>,
    log2: Vec<T>,
}

enum Step<T> {
    Exit { at: T, level: i32 },
    End,
}

struct Walker<'a, T: Scalar> {
    probe: Probe<'a, T>,
    s: &'a Samples<T>,
    domain: (T, T),
    kmin: i32,
    out: Vec<LevelBandInterval<T>>,
}

impl<T: Scalar> Walker<'_, T> {
    fn in_band(&self, i: usize, sign: i8, j: i32) -> bool {
        let l = self.s.log2[i];
        self.s.sign[i] == sign && l > T::lit((j - 1) as f64) && l < T::lit((j + 1) as f64)
    }

    /// Index of the first sample strictly beyond `c` in direction `dir`.
    fn first_beyond(&self, c: T, dir: i32) -> Option<usize> {
        let xs = &self.s.xs;
        if dir > 0 {
            let i = xs.partition_point(|&x| x <= c);
            (i < xs.len()).then_some(i)
        } else {
            let i = xs.partition_point(|&x| x < c);
            i.checked_sub(1)
        }
    }

    fn ordered(a: T, b: T) -> (T, T) {
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// From `c` with `|f(c)| = 2^j`, the first point in direction `dir` where
    /// `|f|` leaves the open band `(2^{j-1}, 2^{j+1})` (or changes sign).
    fn step(&self, c: T, j: i32, sign: i8, dir: i32) -> Result<Step<T>> {
        let end = if dir > 0 { self.domain.1 } else { self.domain.0 };
        let mut last_in = c;
        let mut spanned = 0usize;
        let mut idx = self.first_beyond(c, dir);
        let mut out_sample = None;
        while let Some(i) = idx {
            spanned += 1;
            if !self.in_band(i, sign, j) {
                out_sample = Some(i);
                break;
            }
            last_in = self.s.xs[i];
            idx = if dir > 0 {
                (i + 1 < self.s.xs.len()).then_some(i + 1)
            } else {
                i.checked_sub(1)
            };
        }
        let far = match out_sample {
            Some(i) => self.s.xs[i],
            None => end,
        };
        let (lo, hi) = Self::ordered(c, far);
        let grid = 64 + 4 * spanned;
        let mut best: Option<(T, i32)> = None;
        for e in [j - 1, j + 1] {
            let roots = self.probe.crossings(lo, hi, sign, e, grid);
            let cand = if dir > 0 {
                roots.into_iter().find(|&x| x > c)
            } else {
                roots.into_iter().rev().find(|&x| x < c)
            };
            if let Some(x) = cand {
                let closer = match best {
                    None => true,
                    Some((b, _)) => (x - c).abs() < (b - c).abs(),
                };
                if closer {
                    best = Some((x, e));
                }
            }
        }
        if let Some((at, level)) = best {
            return Ok(Step::Exit { at, level });
        }
        match out_sample {
            None => Ok(Step::End),
            Some(i) => {
                // bracketed but not resolved as a crossing: locate the edge of
                // the band directly
                let level = if self.s.sign[i] == sign && self.s.log2[i] >= T::lit((j + 1) as f64) {
                    j + 1
                } else {
                    j - 1
                };
                let inside = |x: T| match self.probe.at(x) {
                    Ok((s, l)) => s == sign && l > T::lit((j - 1) as f64) && l < T::lit((j + 1) as f64),
                    Err(_) => false,
                };
                let tol = (self.domain.1 - self.domain.0) * T::lit(1e-14);
                let at = if dir > 0 {
                    bisect_boundary(last_in, far, tol, inside)
                } else {
                    // mirror so the predicate holds at the low end
                    let m = bisect_boundary(-last_in, -far, tol, |y| inside(-y));
                    -m
                };
                Ok(Step::Exit { at, level })
            }
        }
    }

    fn emit(&mut self, a: T, b: T, level: i32, sign: i8) {
        let (l, u) = Self::ordered(a, b);
        if !(u > l) {
            return;
        }
        let is_boundary = l <= self.domain.0 || u >= self.domain.1;
        self.out.push(LevelBandInterval { level: DyadicLevel::new(level), iota: 0, span: (l, u), sign, is_boundary });
    }

    /// Closes a walk that reached the domain end inside its band.
    fn emit_tail(&mut self, c: T, end: T, sign: i8) -> Result<()> {
        let (l, u) = Self::ordered(c, end);
        if !(u > l) {
            return Ok(());
        }
        let (lo, hi) = band_extent(&self.probe, l, u, 256)?;
        let level = tail_level(lo, hi);
        if level >= self.kmin {
            self.emit(l, u, level, sign);
        }
        Ok(())
    }

    /// Walks from `c` (where `|f| = 2^j`) in direction `dir` until the
    /// component is exhausted, resuming above the truncation level whenever
    /// `|f|` climbs back within `limit`.
    fn walk(&mut self, mut c: T, mut j: i32, sign: i8, dir: i32, limit: T) -> Result<()> {
        loop {
            match self.step(c, j, sign, dir)? {
                Step::End => {
                    let end = if dir > 0 { self.domain.1 } else { self.domain.0 };
                    return self.emit_tail(c, end, sign);
                }
                Step::Exit { at, level } if level >= self.kmin && resolvable(c, at) => {
                    self.emit(c, at, j.min(level), sign);
                    c = at;
                    j = level;
                }
                Step::Exit { at, .. } => match self.resume(at, sign, dir, limit) {
                    Some(x) => {
                        c = x;
                        j = self.kmin;
                    }
                    None => return Ok(()),
                },
            }
        }
    }

    /// Next point beyond `from` (toward `limit`) where `|f|` rises through
    /// the truncation level.
    fn resume(&self, from: T, sign: i8, dir: i32, limit: T) -> Option<T> {
        let kmin = T::lit(self.kmin as f64);
        let mut idx = self.first_beyond(from, dir);
        let mut prev = from;
        while let Some(i) = idx {
            let x = self.s.xs[i];
            if (dir > 0 && x > limit) || (dir < 0 && x < limit) {
                return None;
            }
            if self.s.sign[i] == sign && self.s.log2[i] > kmin {
                let (lo, hi) = Self::ordered(prev, x);
                let roots = self.probe.crossings(lo, hi, sign, self.kmin, 64);
                let r = if dir > 0 { roots.last().copied() } else { roots.first().copied() };
                return r.filter(|&r| (r - from) * T::lit(dir as f64) > T::zero());
            }
            prev = x;
            idx = if dir > 0 {
                (i + 1 < self.s.xs.len()).then_some(i + 1)
            } else {
                i.checked_sub(1)
            };
        }
        None
    }
}

/// Bands narrower than this many ulps (near simple zeros of very flat
/// functions) cannot be located reliably; the walk treats them like the
/// truncation level.
const MIN_WIDTH_ULPS: f64 = 64.0;

fn resolvable<T: Scalar>(c: T, at: T) -> bool {
    (at - c).abs() > T::lit(MIN_WIDTH_ULPS) * T::epsilon() * c.abs().max(at.abs())
}

/// Min and max of `log2|f|` over `n` points of `[l, u]` including the ends.
fn band_extent<T: Scalar>(p: &Probe<'_, T>, l: T, u: T, n: usize) -> Result<(T, T)> {
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for i in 0..=n {
        let x = if i == n { u } else { l + (u - l) * T::lit(i as f64 / n as f64) };
        let (_, lg) = p.at(x)?;
        lo = lo.min(lg);
        hi = hi.max(lg);
    }
    Ok((lo, hi))
}

/// Level of a boundary interval from its `log2|f|` range: the largest dyadic
/// below the minimum, raised once if the maximum reaches four times it.
fn tail_level<T: Scalar>(lo: T, hi: T) -> i32 {
    let level = DyadicLevel::floor_of_log2(lo).k;
    if hi >= T::lit((level + 2) as f64) {
        level + 1
    } else {
        level
    }
}

/// Partitions `{f != 0}` into intervals on which `λ/2 < |f| < 4λ`, for dyadic
/// `λ >= lambda_min`.
///
/// Each sign component (samples with `|f| >= lambda_min/2`) is anchored at a
/// point where `|f|` equals the largest dyadic below its sampled maximum;
/// from there the walk moves to the first point in each direction where `|f|`
/// has halved or doubled, so consecutive endpoints carry values `{λ, 2λ}` and
/// each interval gets the smaller of the two. Intervals reaching the ends of
/// the domain are flagged as boundary intervals.
pub fn partition_level_bands<T: Scalar>(
    f: &SmoothFn1D<T>,
    r: usize,
    lambda_min: DyadicLevel,
) -> Result<LevelBandPartition<T>> {
    if f.order_r() < r {
        return Err(Error::Capability { k: r, order: f.order_r() });
    }
    let log_mode = lambda_min.k < PLAIN_FLOOR_EXP;
    if log_mode && (!f.has_log() || lambda_min.k < LOG_FLOOR_EXP) {
        return Err(Error::Contract(format!(
            "truncation level {lambda_min} needs a log-domain form and must be at least 2^{LOG_FLOOR_EXP}"
        )));
    }
    let probe = Probe { f, log_mode };
    let domain = f.domain();
    let (a, b) = domain;
    let n = PARTITION_SAMPLES;
    let mut s = Samples { xs: Vec::with_capacity(n + 1), sign: Vec::with_capacity(n + 1), log2: Vec::with_capacity(n + 1) };
    for i in 0..=n {
        let x = if i == n { b } else { a + (b - a) * T::lit(i as f64 / n as f64) };
        let (sg, l) = probe.at(x)?;
        s.xs.push(x);
        s.sign.push(sg);
        s.log2.push(l);
    }

    let kmin = lambda_min.k;
    let floor = T::lit((kmin - 1) as f64);
    // components: maximal runs of one sign with |f| >= lambda_min / 2
    let mut comps: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i <= n {
        if s.sign[i] != 0 && s.log2[i] >= floor {
            let start = i;
            while i < n && s.sign[i + 1] == s.sign[start] && s.log2[i + 1] >= floor {
                i += 1;
            }
            comps.push((start, i));
        }
        i += 1;
    }

    let mut w = Walker { probe, s: &s, domain, kmin, out: Vec::new() };
    for &(i0, i1) in &comps {
        let sign = s.sign[i0];
        let (imax, lmax) = (i0..=i1).fold((i0, T::neg_infinity()), |acc, i| if s.log2[i] > acc.1 { (i, s.log2[i]) } else { acc });
        let k0 = DyadicLevel::floor_of_log2(lmax).k;
        if k0 < kmin {
            continue;
        }
        let xstar = s.xs[imax];
        // the first sample outside the component on each side bounds the walks
        let left_limit = if i0 > 0 { s.xs[i0 - 1] } else { a };
        let right_limit = if i1 < n { s.xs[i1 + 1] } else { b };

        let anchor = if lmax == T::lit(k0 as f64) {
            Some(xstar)
        } else {
            let mut cands = Vec::new();
            let below = T::lit(k0 as f64);
            if let Some(il) = (i0..imax).rev().find(|&i| s.log2[i] < below).or((i0 > 0).then(|| i0 - 1)) {
                let lo = s.xs[il];
                let roots = w.probe.crossings(lo, xstar, sign, k0, 64 + 4 * (imax - il));
                cands.extend(roots.last().copied());
            }
            if let Some(ir) = (imax + 1..=i1).find(|&i| s.log2[i] < below).or((i1 < n).then_some(i1 + 1)) {
                let hi = s.xs[ir];
                let roots = w.probe.crossings(xstar, hi, sign, k0, 64 + 4 * (ir - imax));
                cands.extend(roots.first().copied());
            }
            cands.into_iter().min_by(|p, q| {
                (*p - xstar).abs().partial_cmp(&(*q - xstar).abs()).unwrap_or(std::cmp::Ordering::Equal)
            })
        };
        match anchor {
            Some(c0) => {
                w.walk(c0, k0, sign, 1, right_limit)?;
                w.walk(c0, k0, sign, -1, left_limit)?;
            }
            None => {
                // the component never drops to its anchor level: one interval
                let (lo, hi) = (s.xs[i0], s.xs[i1]);
                let l = if i0 == 0 { a } else { lo };
                let u = if i1 == n { b } else { hi };
                let (mn, mx) = band_extent(&w.probe, l, u, 1024)?;
                let level = tail_level(mn, mx);
                if level >= kmin {
                    w.emit(l, u, level, sign);
                }
            }
        }
    }

    let mut intervals = w.out;
    intervals.sort_by(|p, q| p.span.0.partial_cmp(&q.span.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut per_level: BTreeMap<i32, usize> = BTreeMap::new();
    for iv in &mut intervals {
        let c = per_level.entry(iv.level.k).or_insert(0);
        iv.iota = *c;
        *c += 1;
    }
    let mut residual = Vec::new();
    let mut cursor = a;
    for iv in &intervals {
        if iv.span.0 > cursor {
            residual.push((cursor, iv.span.0));
        }
        cursor = cursor.max(iv.span.1);
    }
    if b > cursor {
        residual.push((cursor, b));
    }
    Ok(LevelBandPartition { domain, intervals, lambda_min, residual, log_domain: log_mode })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parity {
    /// `(f(t_m) - b)(-1)^m >= a`
    EvenFirst,
    /// `(f(t_m) - b)(-1)^{m+1} >= a`
    OddFirst,
}

/// Points `t_0 < ... < t_r` at which `f - b` alternates in sign with margin
/// `a`, on the span `J` they certify.
#[derive(Clone, Debug, PartialEq)]
pub struct AlternationCertificate<T> {
    pub points: Vec<T>,
    pub pivot: T,
    pub gap: T,
    pub parity: Parity,
    pub span: (T, T),
}

impl<T: Scalar> AlternationCertificate<T> {
    /// Certificate whose span is the hull of its points.
    pub fn new(points: Vec<T>, pivot: T, gap: T, parity: Parity) -> Self {
        let span = match (points.first(), points.last()) {
            (Some(&l), Some(&u)) => (l, u),
            _ => (T::zero(), T::zero()),
        };
        AlternationCertificate { points, pivot, gap, parity, span }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    ValidAndBoundHolds,
    ValidButBoundViolated,
    Invalid,
}

/// Relative slack for the sign pattern and for the length inequality, which
/// is a tie on extremal examples.
const ALTERNATION_TIE: f64 = 1e-12;

/// Checks the alternation pattern and then that the span is at least
/// `2 (a / sup|f^(r)|)^{1/r}` with `r = #points - 1`.
pub fn check_alternation_certificate<T: Scalar>(
    cert: &AlternationCertificate<T>,
    f: &SmoothFn1D<T>,
) -> Result<Verdict> {
    let pts = &cert.points;
    if pts.len() < 2 {
        return Err(Error::MalformedCertificate(format!("{} points; at least 2 are needed", pts.len())));
    }
    if !(cert.gap > T::zero()) {
        return Err(Error::MalformedCertificate("gap must be positive".into()));
    }
    let r = pts.len() - 1;
    if r > f.order_r() {
        return Err(Error::Capability { k: r, order: f.order_r() });
    }
    let tie = T::lit(ALTERNATION_TIE);
    let mut prev = None;
    for (m, &t) in pts.iter().enumerate() {
        if prev.is_some_and(|p| t <= p) || t < cert.span.0 || t > cert.span.1 {
            return Ok(Verdict::Invalid);
        }
        prev = Some(t);
        let v = f.eval(t, 0)?;
        let flip = (m % 2 == 1) ^ (cert.parity == Parity::OddFirst);
        let d = if flip { cert.pivot - v } else { v - cert.pivot };
        if d < cert.gap - tie * cert.gap.max(v.abs()).max(T::one()) {
            return Ok(Verdict::Invalid);
        }
    }
    let len = cert.span.1 - cert.span.0;
    let sup = sup_norm(f, cert.span, r)?;
    let bound = T::lit(2.0) * (cert.gap / sup).powf(T::lit(r as f64).recip());
    if len >= bound * (T::one() - tie) {
        Ok(Verdict::ValidAndBoundHolds)
    } else {
        Ok(Verdict::ValidButBoundViolated)
    }
}

/// A random degree-`r` polynomial on `[0,1]` interpolating alternating values
/// `b ± (a + u_m)` at random increasing nodes, with the matching certificate.
pub fn random_certified_instance<R: Rng>(rng: &mut R, r: usize) -> (SmoothFn1D<f64>, AlternationCertificate<f64>) {
    assert!(r >= 1);
    let mut t: Vec<f64> = (0..=r).map(|_| rng.gen_range(0.0..1.0)).collect();
    t.sort_by(|p, q| p.partial_cmp(q).unwrap());
    // keep nodes apart so the interpolation stays well conditioned
    for m in 1..=r {
        if t[m] - t[m - 1] < 0.02 {
            t[m] = t[m - 1] + 0.02;
        }
    }
    let scale = t[r].max(1.0);
    for x in &mut t {
        *x /= scale;
    }
    let b: f64 = rng.gen_range(-1.0..1.0);
    let a: f64 = rng.gen_range(0.05..1.0);
    let parity = if rng.gen_bool(0.5) { Parity::EvenFirst } else { Parity::OddFirst };
    let vals: Vec<f64> = (0..=r)
        .map(|m| {
            let up = (m % 2 == 0) ^ (parity == Parity::OddFirst);
            let extra = rng.gen_range(0.0..0.5) * a;
            if up {
                b + a + extra
            } else {
                b - a - extra
            }
        })
        .collect();
    let coeffs = interpolate(&t, &vals);
    let f = SmoothFn1D::polynomial(coeffs);
    let cert = AlternationCertificate::new(t, b, a, parity);
    (f, cert)
}

/// Monomial coefficients of the interpolant through `(x_i, y_i)`, via Newton
/// divided differences.
fn interpolate(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut dd = y.to_vec();
    for lvl in 1..n {
        for i in (lvl..n).rev() {
            dd[i] = (dd[i] - dd[i - 1]) / (x[i] - x[i - lvl]);
        }
    }
    // expand the Newton form by Horner on polynomials
    let mut coeffs = vec![0.0; n];
    for i in (0..n).rev() {
        // coeffs = coeffs * (X - x_i) + dd_i
        let mut next = vec![0.0; n];
        for (p, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            if p + 1 < n {
                next[p + 1] += c;
            }
            next[p] -= c * x[i];
        }
        next[0] += dd[i];
        coeffs = next;
    }
    coeffs
}

/// Partial sums of `Σ_k (sup_{I_k} |f|)^ε` over the sign components `I_k`
/// of `f`, largest terms first. Components on which `f` vanishes
/// identically (flat zones) contribute nothing and are dropped.
pub fn sjolin_partial_sums<T: Scalar>(f: &SmoothFn1D<T>, eps: T, n_components: usize) -> Result<Vec<T>> {
    if !(eps > T::zero() && eps <= T::one()) {
        return Err(Error::Contract(format!("exponent {eps} must lie in (0, 1]")));
    }
    let (a, b) = f.domain();
    let mut cuts = vec![a];
    cuts.extend(find_level_crossings(f, (a, b), T::zero()).into_iter().filter(|&x| x > a && x < b));
    cuts.push(b);
    let mut sups = Vec::with_capacity(cuts.len());
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            let s = sup_norm(f, (w[0], w[1]), 0)?;
            if s > T::zero() {
                sups.push(s);
            }
        }
    }
    sups.sort_by(|p, q| q.partial_cmp(p).unwrap_or(std::cmp::Ordering::Equal));
    let mut acc = T::zero();
    Ok(sups
        .into_iter()
        .take(n_components)
        .map(|s| {
            acc = acc + s.powf(eps);
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_reproduces_nodes() {
        let x = [0.1, 0.3, 0.7, 0.9];
        let y = [1.0, -2.0, 0.5, 3.0];
        let c = interpolate(&x, &y);
        for (xi, yi) in x.iter().zip(y) {
            let v = c.iter().rev().fold(0.0, |acc, ci| acc * xi + ci);
            assert!((v - yi).abs() < 1e-12);
        }
    }

    #[test]
    fn count_bound_arithmetic() {
        assert_eq!(count_bound(1, 1.0f64, 1.0, DyadicLevel::new(0)), 20.0);
        assert_eq!(count_bound(2, 2.0f64, 4.0, DyadicLevel::new(-2)), 180.0);
    }
}
