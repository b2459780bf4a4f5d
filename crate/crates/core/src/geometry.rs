//! Phase surfaces `xy + ε h(y)`, their transversality functionals, the
//! dyadic strip and rectangle decompositions of `Q × Q`, admissible pairs of
//! boxes, and the two rescalings (strip normalisation and δ-scaling).

use crate::funcore::{find_level_crossings, DyadicLevel, SmoothFn1D};
use crate::{Error, Result, Scalar};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Point2 { x, y }
    }
}

/// Certifies `C3/4 <= h''' <= C3` on the working rectangle together with
/// `h(0) = h'(0) = h''(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicType<T> {
    pub c3: T,
}

/// Amplitude factor inside the extension integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Amplitude {
    #[default]
    Unit,
    /// Smooth bump equal to 1 on the inner half of the window.
    Bump,
}

const CUBIC_SAMPLES: usize = 1024;
const SAMPLE_ATTEMPTS: usize = 100_000;
const CUBIC_REL_TOL: f64 = 1e-9;
const CUBIC_TAYLOR_TOL: f64 = 1e-12;

/// `φ(x, y) = x y + ε h(y)` on a working rectangle.
#[derive(Clone, Debug)]
pub struct PhaseSurface<T: Scalar> {
    pub epsilon: T,
    pub h: SmoothFn1D<T>,
    pub cubic_type: Option<CubicType<T>>,
    pub amplitude: Amplitude,
    /// `([x0, x1], [y0, y1])`, default `Q = [-1,1]^2`.
    pub window: ((T, T), (T, T)),
}

impl<T: Scalar> PhaseSurface<T> {
    pub fn new(epsilon: T, h: SmoothFn1D<T>) -> Self {
        let one = T::one();
        PhaseSurface { epsilon, h, cubic_type: None, amplitude: Amplitude::Unit, window: ((-one, one), (-one, one)) }
    }

    /// A surface whose perturbation is certified to be of coarse cubic type
    /// on the `y`-range of the window (or the domain of `h` if smaller).
    pub fn cubic(epsilon: T, h: SmoothFn1D<T>) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::Contract("cubic-type surfaces need epsilon > 0".into()));
        }
        let mut s = Self::new(epsilon, h);
        s.cubic_type = Some(certify_cubic(&s.h, s.y_range())?);
        Ok(s)
    }

    pub fn with_window(mut self, x: (T, T), y: (T, T)) -> Self {
        self.window = (x, y);
        self
    }

    pub fn with_amplitude(mut self, a: Amplitude) -> Self {
        self.amplitude = a;
        self
    }

    fn y_range(&self) -> (T, T) {
        let (a, b) = self.h.domain();
        (self.window.1 .0.max(a), self.window.1 .1.min(b))
    }

    pub fn phi(&self, z: Point2<T>) -> T {
        z.x * z.y + self.epsilon * self.h.value(z.y)
    }

    pub fn grad(&self, z: Point2<T>) -> Point2<T> {
        Point2::new(z.y, z.x + self.epsilon * self.h.deriv(z.y, 1))
    }

    /// `[[φ_xx, φ_xy], [φ_xy, φ_yy]] = [[0, 1], [1, ε h''(y)]]`.
    pub fn hessian(&self, z: Point2<T>) -> [[T; 2]; 2] {
        [[T::zero(), T::one()], [T::one(), self.epsilon * self.h.deriv(z.y, 2)]]
    }
}

fn certify_cubic<T: Scalar>(h: &SmoothFn1D<T>, (lo, hi): (T, T)) -> Result<CubicType<T>> {
    let tay = T::lit(CUBIC_TAYLOR_TOL);
    let (a, b) = h.domain();
    if T::zero() < a || T::zero() > b {
        return Err(Error::Contract("cubic type needs 0 in the domain of h".into()));
    }
    for k in 0..3 {
        let v = h.deriv(T::zero(), k);
        if v.abs() > tay {
            return Err(Error::Contract(format!("h^({k})(0) = {v} is not zero")));
        }
    }
    let (mn, mx) = third_derivative_range(h, lo, hi);
    let rel = T::lit(CUBIC_REL_TOL);
    if !(mn > T::zero()) || mn < mx / T::lit(4.0) * (T::one() - rel) {
        return Err(Error::Contract(format!("h''' ranges over [{mn}, {mx}], not within a factor 4")));
    }
    Ok(CubicType { c3: mx })
}

fn third_derivative_range<T: Scalar>(h: &SmoothFn1D<T>, lo: T, hi: T) -> (T, T) {
    let mut mn = T::infinity();
    let mut mx = T::neg_infinity();
    for i in 0..=CUBIC_SAMPLES {
        let y = lo + (hi - lo) * T::lit(i as f64 / CUBIC_SAMPLES as f64);
        let v = h.deriv(y, 3);
        mn = mn.min(v);
        mx = mx.max(v);
    }
    (mn, mx)
}

/// `τ_z(z1, z2) = x2 - x1 + ε [h'(y2) - h'(y1) - h''(y)(y2 - y1)/2]`.
pub fn tau<T: Scalar>(s: &PhaseSurface<T>, z: Point2<T>, z1: Point2<T>, z2: Point2<T>) -> T {
    let h = &s.h;
    let half = T::lit(0.5);
    z2.x - z1.x + s.epsilon * (h.deriv(z2.y, 1) - h.deriv(z1.y, 1) - half * h.deriv(z.y, 2) * (z2.y - z1.y))
}

/// `⟨(Hφ)^{-1}(z) (∇φ(z2) - ∇φ(z1)), ∇φ(z2') - ∇φ(z1')⟩`.
pub fn gamma_tilde<T: Scalar>(
    s: &PhaseSurface<T>,
    z: Point2<T>,
    z1: Point2<T>,
    z2: Point2<T>,
    z1p: Point2<T>,
    z2p: Point2<T>,
) -> Result<T> {
    let [[p, q], [r, t]] = s.hessian(z);
    let det = p * t - q * r;
    if !(det.abs() > T::epsilon()) {
        return Err(Error::Singular(format!("Hessian determinant {det} at ({}, {})", z.x, z.y)));
    }
    let (g1, g2) = (s.grad(z1), s.grad(z2));
    let (u1, u2) = (g2.x - g1.x, g2.y - g1.y);
    // inverse via the adjugate
    let w1 = (t * u1 - q * u2) / det;
    let w2 = (-r * u1 + p * u2) / det;
    let (g1p, g2p) = (s.grad(z1p), s.grad(z2p));
    Ok(w1 * (g2p.x - g1p.x) + w2 * (g2p.y - g1p.y))
}

/// The diagonal form `Γ_z(z1, z2) = gamma_tilde(z, z1, z2, z1, z2)`.
pub fn gamma<T: Scalar>(s: &PhaseSurface<T>, z: Point2<T>, z1: Point2<T>, z2: Point2<T>) -> Result<T> {
    gamma_tilde(s, z, z1, z2, z1, z2)
}

/// `|τ_{z1}(z1, z2) - τ_{z2}(z1, z2)|`.
pub fn tau_gap<T: Scalar>(s: &PhaseSurface<T>, z1: Point2<T>, z2: Point2<T>) -> T {
    (tau(s, z1, z1, z2) - tau(s, z2, z1, z2)).abs()
}

/// Checks that `c0` is a power of two at least 8.
fn check_c0(c0: u32) -> Result<()> {
    if c0 < 8 || !c0.is_power_of_two() {
        return Err(Error::Contract(format!("C0 = {c0} must be a power of two >= 8")));
    }
    Ok(())
}

/// A pair of horizontal strips `V_j = [-1,1] × [jρ, jρ + ρ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StripPair {
    pub rho: DyadicLevel,
    pub j1: i64,
    pub j2: i64,
    pub c0: u32,
}

impl StripPair {
    pub fn interval(&self, side: usize) -> (f64, f64) {
        let rho: f64 = self.rho.value();
        let j = if side == 1 { self.j1 } else { self.j2 };
        (j as f64 * rho, (j + 1) as f64 * rho)
    }
}

/// Whether two aligned dyadic cells (indices at one scale, parents obtained
/// by halving the index) are related: not adjacent, with adjacent parents.
pub fn related(m1: i64, m2: i64) -> bool {
    (m1 - m2).abs() >= 2 && (m1.div_euclid(2) - m2.div_euclid(2)).abs() == 1
}

/// All strip pairs at scale `ρ` whose enclosing intervals of length
/// `C0 ρ / 8` are related, in lexicographic `(j1, j2)` order.
pub fn whitney_strips(rho: DyadicLevel, c0: u32) -> Result<Vec<StripPair>> {
    check_c0(c0)?;
    let sub = (c0 / 8) as i64;
    // enclosing intervals have length 2^(rho.k) * sub; they and their
    // parents must fit in [-1, 1)
    let len_exp = rho.k + sub.trailing_zeros() as i32;
    if len_exp > -1 {
        return Ok(Vec::new());
    }
    let per_side = 1i64 << (-len_exp);
    let mut out = Vec::new();
    for m1 in -per_side..per_side {
        for m2 in -per_side..per_side {
            if !related(m1, m2) {
                continue;
            }
            for k1 in 0..sub {
                for k2 in 0..sub {
                    out.push(StripPair { rho, j1: m1 * sub + k1, j2: m2 * sub + k2, c0 });
                }
            }
        }
    }
    out.sort_by_key(|p| (p.j1, p.j2));
    Ok(out)
}

/// Which side's box is the sheared parallelogram of width `ρ(1∧δ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    /// `U1` sheared, `U2` curved; `|τ_{z1}| ~ C0² ερ²δ`.
    Type1,
    /// Mirror image: `U2` sheared, `U1` curved; `|τ_{z2}| ~ C0² ερ²δ`.
    Type2,
}

/// An admissible pair of boxes in `V1 × V2`, given by its lattice
/// parameters. For type 1 the sheared box sits at `(x1_0, y1_0)` and the
/// curved box is parametrised by `t2_0`; type 2 swaps the roles of the two
/// strips.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissiblePair {
    pub kind: PairKind,
    pub strips: StripPair,
    pub delta: DyadicLevel,
    pub epsilon: f64,
    /// `x1_0` (type 1) or `x2_0` (type 2): lattice corner of the sheared box.
    pub x_sheared: f64,
    /// `t2_0` (type 1) or `t1_0` (type 2): lattice offset of the curved box.
    pub t_curved: f64,
    pub y1_0: f64,
    pub y2_0: f64,
    pub z1_0: Point2<f64>,
    pub z2_0: Point2<f64>,
}

/// Ratio ranges returned by [`check_sizeofdeltas`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeStats {
    /// `|τ|/(C0² ερ²δ)` for the small transversality (`τ_{z1}` for type 1).
    pub small: (f64, f64),
    /// `|τ|/(C0² ερ²(1∨δ))` for the other one.
    pub large: (f64, f64),
    pub samples: usize,
    pub pass: bool,
}

impl AdmissiblePair {
    pub fn rho(&self) -> f64 {
        self.strips.rho.value()
    }

    /// Lattice spacing `ε ρ² δ` (the x-width of both boxes).
    pub fn width(&self) -> f64 {
        self.epsilon * self.rho() * self.rho() * self.delta.value::<f64>()
    }

    fn sheared_height(&self) -> f64 {
        self.rho() * self.delta.value::<f64>().min(1.0)
    }

    fn c0sq(&self) -> f64 {
        let c0 = self.strips.c0 as f64;
        c0 * c0
    }

    /// Is `z` in `U_side`? Direct box inequalities, plus the parent strip.
    pub fn membership(&self, s: &PhaseSurface<f64>, z: Point2<f64>, side: usize) -> bool {
        if !(-1.0..=1.0).contains(&z.x) {
            return false;
        }
        let sheared_side = if self.kind == PairKind::Type1 { 1 } else { 2 };
        let w = self.width();
        let eps = self.epsilon;
        if side == sheared_side {
            let y0 = if side == 1 { self.y1_0 } else { self.y2_0 };
            let dy = z.y - y0;
            let u = z.x - self.x_sheared + eps * s.h.deriv(y0, 2) / 2.0 * dy;
            (0.0..self.sheared_height()).contains(&dy) && (0.0..w).contains(&u)
        } else {
            // curved box anchored at the other side's base height
            let (y0, yref) = if side == 2 { (self.y2_0, self.y1_0) } else { (self.y1_0, self.y2_0) };
            let dy = z.y - y0;
            let h = &s.h;
            let u = z.x - self.t_curved
                + eps * (h.deriv(z.y, 1) - h.deriv(yref, 1) - h.deriv(yref, 2) / 2.0 * (z.y - yref));
            (0.0..self.rho()).contains(&dy) && (0.0..w).contains(&u)
        }
    }

    /// Curved-box membership written through τ: for type 1,
    /// `0 <= τ_{z1_0}(z1_0, z) - a0 < ε ρ² δ` with `a0 = τ_{z1_0}(z1_0, z2_0)`.
    /// Sheared-side queries fall back to [`membership`](Self::membership).
    pub fn membership_tau_form(&self, s: &PhaseSurface<f64>, z: Point2<f64>, side: usize) -> bool {
        let curved_side = if self.kind == PairKind::Type1 { 2 } else { 1 };
        if side != curved_side {
            return self.membership(s, z, side);
        }
        if !(-1.0..=1.0).contains(&z.x) {
            return false;
        }
        let (base, y0) = if side == 2 { (self.z1_0, self.y2_0) } else { (self.z2_0, self.y1_0) };
        // a0 = t_curved - x_sheared by the identity for the base points
        let a0 = self.t_curved - self.x_sheared;
        let v = tau(s, base, base, z) - a0;
        (0.0..self.rho()).contains(&(z.y - y0)) && (0.0..self.width()).contains(&v)
    }

    /// A uniform sample of `U_side`, rejecting only points outside the parent
    /// strip (each box is a sheared or curved region of constant x-width, so
    /// it can be sampled directly).
    pub fn sample<R: Rng>(&self, s: &PhaseSurface<f64>, side: usize, rng: &mut R) -> Result<Point2<f64>> {
        let sheared_side = if self.kind == PairKind::Type1 { 1 } else { 2 };
        let w = self.width();
        let eps = self.epsilon;
        for _ in 0..SAMPLE_ATTEMPTS {
            let u = rng.gen::<f64>() * w;
            let z = if side == sheared_side {
                let y0 = if side == 1 { self.y1_0 } else { self.y2_0 };
                let dy = rng.gen::<f64>() * self.sheared_height();
                Point2::new(self.x_sheared - eps * s.h.deriv(y0, 2) / 2.0 * dy + u, y0 + dy)
            } else {
                let (y0, yref) = if side == 2 { (self.y2_0, self.y1_0) } else { (self.y1_0, self.y2_0) };
                let y = y0 + rng.gen::<f64>() * self.rho();
                let h = &s.h;
                let shift = eps * (h.deriv(y, 1) - h.deriv(yref, 1) - h.deriv(yref, 2) / 2.0 * (y - yref));
                Point2::new(self.t_curved - shift + u, y)
            };
            if (-1.0..=1.0).contains(&z.x) {
                return Ok(z);
            }
        }
        Err(Error::Sampling(format!("box {side} of {:?} misses its strip", self.kind)))
    }

    /// `(|τ_small|/(C0² ερ²δ), |τ_large|/(C0² ερ²(1∨δ)))` at a pair of points.
    pub fn ratios(&self, s: &PhaseSurface<f64>, z1: Point2<f64>, z2: Point2<f64>) -> (f64, f64) {
        let t1 = tau(s, z1, z1, z2).abs();
        let t2 = tau(s, z2, z1, z2).abs();
        let d: f64 = self.delta.value();
        let base = self.c0sq() * self.epsilon * self.rho() * self.rho();
        let (small, large) = if self.kind == PairKind::Type1 { (t1, t2) } else { (t2, t1) };
        (small / (base * d), large / (base * d.max(1.0)))
    }
}

/// Sampled ranges of the two normalised transversalities over `U1 × U2`.
/// Passes iff the small one stays in `[1/8, 8]` and the large one in
/// `[1/1000, 1000]`.
pub fn check_sizeofdeltas<R: Rng>(
    p: &AdmissiblePair,
    s: &PhaseSurface<f64>,
    n: usize,
    rng: &mut R,
) -> Result<SizeStats> {
    if n == 0 {
        return Err(Error::Contract("at least one sample is needed".into()));
    }
    let mut small = (f64::INFINITY, f64::NEG_INFINITY);
    let mut large = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let (z1, z2) = if i == 0 { (p.z1_0, p.z2_0) } else { (p.sample(s, 1, rng)?, p.sample(s, 2, rng)?) };
        let (a, b) = p.ratios(s, z1, z2);
        small = (small.0.min(a), small.1.max(a));
        large = (large.0.min(b), large.1.max(b));
    }
    let pass = small.0 >= 1.0 / 8.0 && small.1 <= 8.0 && large.0 >= 1.0 / 1000.0 && large.1 <= 1000.0;
    Ok(SizeStats { small, large, samples: n, pass })
}

/// Outcome of [`sizeofdeltas_sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub pairs: usize,
    pub failures: usize,
    /// Extreme small-ratio and large-ratio values over all pairs.
    pub small: (f64, f64),
    pub large: (f64, f64),
}

/// Runs [`check_sizeofdeltas`] on every admissible pair of both kinds over all
/// strip pairs at scale `ρ`. Pair `i` of strip pair `k` and kind `t` draws
/// from its own stream, so the result does not depend on thread scheduling.
pub fn sizeofdeltas_sweep(
    s: &PhaseSurface<f64>,
    rho: DyadicLevel,
    c0: u32,
    delta: DyadicLevel,
    n: usize,
    seed: u64,
) -> Result<SweepSummary> {
    use rand::SeedableRng;
    use rayon::prelude::*;
    let strips = whitney_strips(rho, c0)?;
    let mut jobs = Vec::new();
    for (k, sp) in strips.iter().enumerate() {
        for (t, kind) in [PairKind::Type1, PairKind::Type2].into_iter().enumerate() {
            jobs.push((k, t, *sp, kind));
        }
    }
    let per_job: Vec<Result<SweepSummary>> = jobs
        .par_iter()
        .map(|&(k, t, sp, kind)| {
            let mut acc = SweepSummary {
                pairs: 0,
                failures: 0,
                small: (f64::INFINITY, f64::NEG_INFINITY),
                large: (f64::INFINITY, f64::NEG_INFINITY),
            };
            for (i, p) in enumerate_admissible_pairs(sp, s, delta, kind)?.enumerate() {
                let stream = ((k as u64) << 33) | ((t as u64) << 32) | i as u64;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                let st = check_sizeofdeltas(&p, s, n, &mut rng)?;
                acc.pairs += 1;
                acc.failures += usize::from(!st.pass);
                acc.small = (acc.small.0.min(st.small.0), acc.small.1.max(st.small.1));
                acc.large = (acc.large.0.min(st.large.0), acc.large.1.max(st.large.1));
            }
            Ok(acc)
        })
        .collect();
    let mut out = SweepSummary {
        pairs: 0,
        failures: 0,
        small: (f64::INFINITY, f64::NEG_INFINITY),
        large: (f64::INFINITY, f64::NEG_INFINITY),
    };
    for r in per_job {
        let a = r?;
        out.pairs += a.pairs;
        out.failures += a.failures;
        out.small = (out.small.0.min(a.small.0), out.small.1.max(a.small.1));
        out.large = (out.large.0.min(a.large.0), out.large.1.max(a.large.1));
    }
    Ok(out)
}

/// Streams every admissible pair of the given kind over the strip pair: all
/// lattice parameters passing both size conditions whose base points lie in
/// their strips. Ordered by sheared-box height, then by lattice index of the
/// sheared corner, then of the curved offset.
pub fn enumerate_admissible_pairs<'a>(
    sp: StripPair,
    s: &'a PhaseSurface<f64>,
    delta: DyadicLevel,
    kind: PairKind,
) -> Result<impl Iterator<Item = AdmissiblePair> + 'a> {
    check_c0(sp.c0)?;
    let eps = s.epsilon;
    let rho: f64 = sp.rho.value();
    let d: f64 = delta.value();
    let w = eps * rho * rho * d;
    if !(w > 0.0) || w > 1.0 {
        return Err(Error::Contract(format!("lattice width ερ²δ = {w} must lie in (0, 1]")));
    }
    let n = (2.0 / w).round() as i64;
    let c0sq = (sp.c0 as i64) * (sp.c0 as i64);
    let (dlo, dhi) = (c0sq / 4, 4 * c0sq);
    let big = c0sq as f64 * eps * rho * rho * d.max(1.0);
    let (lo2, hi2) = (big / 512.0, 5.0 * big);
    let heights = (1.0 / d.min(1.0)).round() as i64;
    let (i1, i2) = (sp.interval(1), sp.interval(2));
    // the sheared box lives in the strip of its own side
    let (sheared_strip, curved_strip) = if kind == PairKind::Type1 { (i1, i2) } else { (i2, i1) };
    let step = rho * d.min(1.0);
    let h = &s.h;

    let iter = (0..heights).flat_map(move |m| {
        let ys = sheared_strip.0 + m as f64 * step;
        let yc = curved_strip.0;
        // curved-box base point offset: x_c = t - κ
        let kappa = eps * (h.deriv(yc, 1) - h.deriv(ys, 1) - h.deriv(ys, 2) / 2.0 * (yc - ys));
        // τ at the curved base minus τ at the sheared base, as a function of
        // the lattice gap: g = (ε/2)(h''(ys) - h''(yc))(yc - ys)
        let g = eps / 2.0 * (h.deriv(ys, 2) - h.deriv(yc, 2)) * (yc - ys);
        (0..n).flat_map(move |i| {
            let xs = -1.0 + i as f64 * w;
            let gaps = (-dhi + 1..=-dlo).chain(dlo..dhi);
            gaps.filter_map(move |dd| {
                let j = i + dd;
                if j < 0 || j >= n {
                    return None;
                }
                let t = -1.0 + j as f64 * w;
                // the lattice gap fixes the small transversality; the other
                // one picks up the curvature term g (sign flips with roles)
                let other = match kind {
                    PairKind::Type1 => (t - xs) + g,
                    PairKind::Type2 => (xs - t) - g,
                };
                if !(other.abs() >= lo2 && other.abs() < hi2) {
                    return None;
                }
                let xc = t - kappa;
                if !(-1.0..1.0).contains(&xc) {
                    return None;
                }
                let (z1_0, z2_0, y1_0, y2_0) = match kind {
                    PairKind::Type1 => (Point2::new(xs, ys), Point2::new(xc, yc), ys, yc),
                    PairKind::Type2 => (Point2::new(xc, yc), Point2::new(xs, ys), yc, ys),
                };
                Some(AdmissiblePair {
                    kind,
                    strips: sp,
                    delta,
                    epsilon: eps,
                    x_sheared: xs,
                    t_curved: t,
                    y1_0,
                    y2_0,
                    z1_0,
                    z2_0,
                })
            })
        })
    });
    Ok(iter)
}

/// Coordinate change attached to a rescaling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScalingMap {
    /// `y' = (y - c)/d`, `x' = x + shear (y - c)` with `shear = F''(c)/2`.
    StripNormalize { c: f64, d: f64, shear: f64 },
    /// `x̄ = x/δ`, `ȳ = y`.
    DeltaScale { delta: f64 },
}

impl ScalingMap {
    pub fn forward(&self, z: Point2<f64>) -> Point2<f64> {
        match *self {
            ScalingMap::StripNormalize { c, d, shear } => Point2::new(z.x + shear * (z.y - c), (z.y - c) / d),
            ScalingMap::DeltaScale { delta } => Point2::new(z.x / delta, z.y),
        }
    }

    pub fn inverse(&self, z: Point2<f64>) -> Point2<f64> {
        match *self {
            ScalingMap::StripNormalize { c, d, shear } => Point2::new(z.x - shear * d * z.y, c + d * z.y),
            ScalingMap::DeltaScale { delta } => Point2::new(z.x * delta, z.y),
        }
    }

    /// Jacobian determinant of `forward`.
    pub fn determinant(&self) -> f64 {
        match *self {
            ScalingMap::StripNormalize { d, .. } => 1.0 / d,
            ScalingMap::DeltaScale { delta } => 1.0 / delta,
        }
    }

    /// Exponent of `d_I` relating the normalised and original estimates.
    pub fn norm_exponent(r: f64, q: f64) -> f64 {
        1.0 - 2.0 / r - 1.0 / q
    }
}

/// Normalises the strip `y ∈ I = (c - d, c + d)` on which `F''' = (εh)'''`
/// lies in `[λ/2, 4λ]` to `x'y' + ε' h̃(y')` on `y' ∈ [-1, 1]`, with
/// `ε' = d² λ` and `h̃` the Taylor remainder of `F` at `c` divided by `d ε'`.
/// The cubic-type certificate is attached when the sampled `h̃'''` stays
/// within a factor 4.
pub fn rescale_strip(
    s: &PhaseSurface<f64>,
    interval: (f64, f64),
    lam: f64,
) -> Result<(PhaseSurface<f64>, ScalingMap)> {
    let (l, u) = interval;
    if !(u > l) || !(lam > 0.0) {
        return Err(Error::Contract(format!("bad strip ({l}, {u}) or level {lam}")));
    }
    let eps = s.epsilon;
    let (mn, mx) = third_derivative_range(&s.h, l, u);
    let (mn, mx) = (eps * mn, eps * mx);
    let slack = 1.0 + CUBIC_REL_TOL;
    if mn < lam / 2.0 / slack || mx > 4.0 * lam * slack {
        return Err(Error::Contract(format!("F''' ranges over [{mn}, {mx}] on ({l}, {u}), outside [λ/2, 4λ] for λ = {lam}")));
    }
    let c = 0.5 * (l + u);
    let d = 0.5 * (u - l);
    let eps_new = d * d * lam;
    let h = s.h.clone();
    let (f0, f1, f2) = (eps * h.value(c), eps * h.deriv(c, 1), eps * h.deriv(c, 2));
    let scale = 1.0 / (d * eps_new);
    let hv = h.clone();
    let value = move |y: f64| {
        let big = eps * hv.value(c + d * y) - f0 - f1 * d * y - f2 * d * d * y * y / 2.0;
        big * scale
    };
    let hd = h.clone();
    let derivs = move |y: f64, k: usize| {
        let x = c + d * y;
        // d/dy' of F(c + d y') carries a factor d per derivative
        let raw = match k {
            1 => d * (eps * hd.deriv(x, 1) - f1 - f2 * d * y),
            2 => d * d * (eps * hd.deriv(x, 2) - f2),
            3 => d * d * d * eps * hd.deriv(x, 3),
            _ => f64::NAN,
        };
        raw * scale
    };
    let name = format!("rescaled[{}; {l}, {u}]", h.name());
    let h_new = SmoothFn1D::from_fn(&name, (-1.0, 1.0), 3, value).with_derivatives(derivs);
    let mut out = PhaseSurface::new(eps_new, h_new);
    out.amplitude = s.amplitude;
    out.cubic_type = certify_cubic(&out.h, (-1.0, 1.0)).ok();
    Ok((out, ScalingMap::StripNormalize { c, d, shear: f2 / 2.0 }))
}

/// The δ-scaled prototype `φ^s(x̄, ȳ) = x̄ȳ + F(ȳ)/δ` with `F = ε h`, and the
/// two regions
/// `U1^s = [0, c0²) × [0, c0 δ)` and
/// `U2^s = {0 <= x̄ + F'(ȳ)/δ - a/δ < c0², 0 <= ȳ - b < c0}`.
/// The unscaled regions (`x = δ x̄`) are available as well.
#[derive(Clone, Debug)]
pub struct ScaledPrototype {
    pub surface: PhaseSurface<f64>,
    pub delta: f64,
    pub c0: f64,
    pub a: f64,
    pub b: f64,
    pub map: ScalingMap,
}

impl ScaledPrototype {
    fn f(&self, y: f64, k: usize) -> f64 {
        self.surface.epsilon * self.surface.h.deriv(y, k)
    }

    pub fn abar(&self) -> f64 {
        self.a / self.delta
    }

    pub fn phi_s(&self, z: Point2<f64>) -> f64 {
        z.x * z.y + self.f(z.y, 0) / self.delta
    }

    pub fn grad_s(&self, z: Point2<f64>) -> Point2<f64> {
        Point2::new(z.y, z.x + self.f(z.y, 1) / self.delta)
    }

    pub fn hessian_s(&self, z: Point2<f64>) -> [[f64; 2]; 2] {
        [[0.0, 1.0], [1.0, self.f(z.y, 2) / self.delta]]
    }

    pub fn in_u1_s(&self, z: Point2<f64>) -> bool {
        (0.0..self.c0 * self.c0).contains(&z.x) && (0.0..self.c0 * self.delta).contains(&z.y)
    }

    pub fn in_u2_s(&self, z: Point2<f64>) -> bool {
        let u = z.x + self.f(z.y, 1) / self.delta - self.abar();
        (0.0..self.c0 * self.c0).contains(&u) && (0.0..self.c0).contains(&(z.y - self.b))
    }

    /// `U1 = [0, c0² δ) × [0, c0 δ)` in the original coordinates.
    pub fn in_u1(&self, z: Point2<f64>) -> bool {
        self.in_u1_s(self.map.forward(z))
    }

    /// `U2 = {0 <= y - b < c0, 0 <= x + F'(y) - a < c0² δ}`.
    pub fn in_u2(&self, z: Point2<f64>) -> bool {
        self.in_u2_s(self.map.forward(z))
    }

    /// Uniform sample of `U_i^s` (both are boxes of constant x-width over
    /// their y-range).
    pub fn sample_s<R: Rng>(&self, side: usize, rng: &mut R) -> Point2<f64> {
        let c2 = self.c0 * self.c0;
        if side == 1 {
            Point2::new(rng.gen::<f64>() * c2, rng.gen::<f64>() * self.c0 * self.delta)
        } else {
            let y = self.b + rng.gen::<f64>() * self.c0;
            Point2::new(self.abar() - self.f(y, 1) / self.delta + rng.gen::<f64>() * c2, y)
        }
    }
}

pub fn delta_scale(s: &PhaseSurface<f64>, delta: DyadicLevel, c0: f64, a: f64, b: f64) -> Result<ScaledPrototype> {
    let d: f64 = delta.value();
    if !(d > 0.0 && d <= 0.1) {
        return Err(Error::Contract(format!("δ = {d} must lie in (0, 1/10]")));
    }
    if !(a.abs() >= d / 4.0 && a.abs() <= 4.0 * d) {
        return Err(Error::Contract(format!("|a| = {} must lie in [δ/4, 4δ]", a.abs())));
    }
    if !(b.abs() >= 0.5 && b.abs() <= 2.0) {
        return Err(Error::Contract(format!("|b| = {} must lie in [1/2, 2]", b.abs())));
    }
    if !(c0 > 0.0 && c0 < 1.0) {
        return Err(Error::Contract(format!("c0 = {c0} must lie in (0, 1)")));
    }
    if s.cubic_type.is_none() {
        return Err(Error::Contract("δ-scaling needs a coarse cubic-type perturbation".into()));
    }
    Ok(ScaledPrototype { surface: s.clone(), delta: d, c0, a, b, map: ScalingMap::DeltaScale { delta: d } })
}

/// `TV_i^s(z1, z2)`: the determinant of `(∇φ^s(z1) - ∇φ^s(z2), Hφ^s(z_i) ω)`
/// over `√(1+|∇φ^s(z1)|²) √(1+|∇φ^s(z2)|²) |Hφ^s(z_i) ω|`, where `ω` is the
/// gradient difference rotated by 90 degrees (the intersection-curve
/// tangent to leading order).
pub fn refined_transversality(p: &ScaledPrototype, i: usize, z1: Point2<f64>, z2: Point2<f64>) -> Result<f64> {
    let (g1, g2) = (p.grad_s(z1), p.grad_s(z2));
    let diff = (g2.x - g1.x, g2.y - g1.y);
    let omega = (-diff.1, diff.0);
    let zi = if i == 1 { z1 } else { z2 };
    let hm = p.hessian_s(zi);
    let hw = (hm[0][0] * omega.0 + hm[0][1] * omega.1, hm[1][0] * omega.0 + hm[1][1] * omega.1);
    let norm_hw = hw.0.hypot(hw.1);
    if !(norm_hw > 0.0) {
        return Err(Error::Singular("Hφ^s ω vanishes".into()));
    }
    let col = (g1.x - g2.x, g1.y - g2.y);
    let det = col.0 * hw.1 - col.1 * hw.0;
    let n1 = (1.0 + g1.x * g1.x + g1.y * g1.y).sqrt();
    let n2 = (1.0 + g2.x * g2.x + g2.y * g2.y).sqrt();
    Ok(det / (n1 * n2 * norm_hw))
}

/// The window split by the sign of `h'''(y) - d r / 100`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThirdDerivativeSplit {
    pub x: (f64, f64),
    /// `y`-intervals where `h''' > threshold`.
    pub above: Vec<(f64, f64)>,
    /// `y`-intervals (possibly single points) where `h''' <= threshold`.
    pub below: Vec<(f64, f64)>,
    pub threshold: f64,
}

/// Splits the rectangle `W = x × y` into `{h''' > d r/100}` and
/// `{h''' <= d r/100}` along `y`, using the crossings of `h''' = d r/100`.
pub fn split_by_third_derivative(
    s: &PhaseSurface<f64>,
    w: ((f64, f64), (f64, f64)),
    d: f64,
    r_len: f64,
) -> ThirdDerivativeSplit {
    let thr = d * r_len / 100.0;
    let (x, (y0, y1)) = w;
    let h = s.h.clone();
    let h3 = SmoothFn1D::from_fn("h'''", (y0, y1), 0, move |y| h.deriv(y, 3));
    let above_at = |y: f64| s.h.deriv(y, 3) > thr;
    let mut cuts = vec![y0];
    cuts.extend(find_level_crossings(&h3, (y0, y1), thr).into_iter().filter(|&c| c > y0 && c < y1));
    cuts.push(y1);
    let mut above: Vec<(f64, f64)> = Vec::new();
    let mut below: Vec<(f64, f64)> = Vec::new();
    let push = |v: &mut Vec<(f64, f64)>, seg: (f64, f64)| match v.last_mut() {
        Some(last) if last.1 == seg.0 => last.1 = seg.1,
        _ => v.push(seg),
    };
    for win in cuts.windows(2) {
        let (lo, hi) = (win[0], win[1]);
        if above_at(0.5 * (lo + hi)) {
            push(&mut above, (lo, hi));
        } else {
            push(&mut below, (lo, hi));
        }
    }
    // isolated points where the threshold is only touched
    for &c in &cuts {
        if !above_at(c) && !below.iter().any(|&(l, u)| l <= c && c <= u) {
            below.push((c, c));
        }
    }
    below.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    ThirdDerivativeSplit { x, above, below, threshold: thr }
}

/// An axis-aligned rectangle `x × y` of the Whitney decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: (f64, f64),
    pub y: (f64, f64),
    /// `(k, l)` cell indices at the current scales.
    pub k: i64,
    pub l: i64,
}

/// Streams related rectangle pairs at scales `d = 2^-j1` (in `x` over
/// `omega_x`) and `r = 2^-j2` (in `y` over `[0, eta1]`): both coordinates
/// related, i.e. cells not adjacent but with adjacent dyadic parents. Cells
/// are aligned at the left end of each range.
pub fn whitney_rectangles(
    omega_x: (f64, f64),
    eta1: DyadicLevel,
    j1: u32,
    j2: u32,
) -> impl Iterator<Item = (Rect, Rect)> {
    let d = 2f64.powi(-(j1 as i32));
    let r = 2f64.powi(-(j2 as i32));
    let nx = ((omega_x.1 - omega_x.0) / d).round() as i64;
    let ny = (eta1.value::<f64>() / r).round() as i64;
    let xs: Vec<(i64, i64)> = related_pairs(nx);
    let ys: Vec<(i64, i64)> = related_pairs(ny);
    let x0 = omega_x.0;
    xs.into_iter().flat_map(move |(k, kp)| {
        let ys = ys.clone();
        ys.into_iter().map(move |(l, lp)| {
            let rect = |k: i64, l: i64| Rect {
                x: (x0 + k as f64 * d, x0 + (k + 1) as f64 * d),
                y: (l as f64 * r, (l + 1) as f64 * r),
                k,
                l,
            };
            (rect(k, l), rect(kp, lp))
        })
    })
}

/// Ordered related index pairs among `n` aligned cells.
fn related_pairs(n: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for a in 0..n {
        // related cells are 2 or 3 apart
        for b in (a - 3).max(0)..(a + 4).min(n) {
            if related(a, b) {
                out.push((a, b));
            }
        }
    }
    out
}
