//! The Fourier extension operator
//! `E f(ξ) = ∫ f(x,y) η(x,y) e^{-i(ξ1 x + ξ2 y + ξ3 φ(x,y))} dx dy`
//! on affine frequency lattices, discrete norms with a fixed reduction
//! order, and the two scaling scans.
//!
//! Every region used here is an x-interval of fixed width sliding along y:
//! `{(x, y) : y0 <= y < y1, 0 <= x - L(y) < w}`. Densities are piecewise
//! constant on a cell grid in the sheared coordinates `(u, y) = (x - L(y), y)`
//! (unit Jacobian), so quadrature panels never straddle a discontinuity.

use crate::funcore::DyadicLevel;
use crate::geometry::{rescale_strip, Amplitude, PhaseSurface, ScaledPrototype, ScalingMap};
use crate::levelband::LevelBandPartition;
use crate::{Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};
use std::sync::Arc;

/// Gauss–Legendre nodes and weights on [-1, 1], 8 points.
const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

const REDUCTION_BLOCK: usize = 4096;
const AUDIT_POINTS: usize = 10;
const AUDIT_REFINE: usize = 4;
/// Node chunk size for the tensor evaluation.
const NODE_CHUNK: usize = 4096;

type LeftEdge = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

/// `{y0 <= y < y1, 0 <= x - L(y) < width}` with `L` and `L'` supplied together.
#[derive(Clone)]
pub struct Region {
    pub name: String,
    pub y: (f64, f64),
    pub width: f64,
    left: LeftEdge,
}

impl std::fmt::Debug for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Region").field("name", &self.name).field("y", &self.y).field("width", &self.width).finish()
    }
}

impl Region {
    pub fn rect(x: (f64, f64), y: (f64, f64)) -> Self {
        let x0 = x.0;
        Region { name: format!("rect[{},{}]x[{},{}]", x.0, x.1, y.0, y.1), y, width: x.1 - x.0, left: Arc::new(move |_| (x0, 0.0)) }
    }

    /// A region with left edge `L(y)` and slope `L'(y)`.
    pub fn sliding(name: &str, y: (f64, f64), width: f64, left: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        Region { name: name.to_string(), y, width, left: Arc::new(left) }
    }

    pub fn left(&self, y: f64) -> (f64, f64) {
        (self.left)(y)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.y.0..self.y.1).contains(&y) && (0.0..self.width).contains(&(x - self.left(y).0))
    }

    pub fn area(&self) -> f64 {
        self.width * (self.y.1 - self.y.0)
    }
}

impl ScaledPrototype {
    /// `U1 = [0, c0² δ) × [0, c0 δ)` in the original coordinates.
    pub fn u1_region(&self) -> Region {
        let c0 = self.c0;
        Region::rect((0.0, c0 * c0 * self.delta), (0.0, c0 * self.delta))
    }

    /// `U2 = {b <= y < b + c0, 0 <= x + F'(y) - a < c0² δ}`.
    pub fn u2_region(&self) -> Region {
        let (eps, h, a) = (self.surface.epsilon, self.surface.h.clone(), self.a);
        let c0 = self.c0;
        Region::sliding("prototype-U2", (self.b, self.b + c0), c0 * c0 * self.delta, move |y| {
            (a - eps * h.deriv(y, 1), -eps * h.deriv(y, 2))
        })
    }
}

/// A density on a region: piecewise constant on an `nu × ny` cell grid in
/// sheared coordinates, times an optional plane wave `e^{-i(a x + b y)}`.
#[derive(Clone, Debug)]
pub struct SampledDensity {
    pub region: Region,
    pub nu: usize,
    pub ny: usize,
    /// Row-major in y: `values[j * nu + i]`.
    pub values: Vec<Complex64>,
    pub carrier: (f64, f64),
}

impl SampledDensity {
    pub fn from_values(region: Region, nu: usize, ny: usize, values: Vec<Complex64>) -> Result<Self> {
        if nu == 0 || ny == 0 || values.len() != nu * ny {
            return Err(Error::Contract(format!("{} values for a {nu}x{ny} grid", values.len())));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Contract("density values must be finite".into()));
        }
        Ok(SampledDensity { region, nu, ny, values, carrier: (0.0, 0.0) })
    }

    pub fn constant(region: Region, nu: usize, ny: usize, c: Complex64) -> Self {
        SampledDensity { region, nu, ny, values: vec![c; nu * ny], carrier: (0.0, 0.0) }
    }

    /// Cell values taken at cell centres.
    pub fn from_fn(region: Region, nu: usize, ny: usize, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let mut values = Vec::with_capacity(nu * ny);
        let (du, dy) = (region.width / nu as f64, (region.y.1 - region.y.0) / ny as f64);
        for j in 0..ny {
            let y = region.y.0 + (j as f64 + 0.5) * dy;
            let l = region.left(y).0;
            for i in 0..nu {
                values.push(f(l + (i as f64 + 0.5) * du, y));
            }
        }
        SampledDensity { region, nu, ny, values, carrier: (0.0, 0.0) }
    }

    /// Independent complex Gaussian cell values, normalised to unit L².
    pub fn random_unit<R: Rng>(region: Region, nu: usize, ny: usize, rng: &mut R) -> Self {
        let mut values: Vec<Complex64> = (0..nu * ny).map(|_| Complex64::new(gaussian(rng), gaussian(rng))).collect();
        let mut d = SampledDensity { region, nu, ny, values: Vec::new(), carrier: (0.0, 0.0) };
        let cell = d.cell_area();
        let norm = (values.iter().map(|v| v.norm_sqr()).sum::<f64>() * cell).sqrt();
        for v in &mut values {
            *v /= norm;
        }
        d.values = values;
        d
    }

    pub fn cell_area(&self) -> f64 {
        self.region.area() / (self.nu * self.ny) as f64
    }

    /// Multiplies by `e^{-i(a x + b y)}`.
    pub fn modulate(&self, a: f64, b: f64) -> Self {
        let mut out = self.clone();
        out.carrier = (self.carrier.0 + a, self.carrier.1 + b);
        out
    }

    /// `α self + β other` on the same grid and carrier.
    pub fn combine(&self, alpha: Complex64, other: &Self, beta: Complex64) -> Result<Self> {
        if self.nu != other.nu || self.ny != other.ny || self.carrier != other.carrier || self.region.name != other.region.name {
            return Err(Error::Contract("densities live on different grids".into()));
        }
        let mut out = self.clone();
        for (o, (a, b)) in out.values.iter_mut().zip(self.values.iter().zip(&other.values)) {
            *o = alpha * a + beta * b;
        }
        Ok(out)
    }

    /// Value at a point of the region (zero outside).
    pub fn value_at(&self, x: f64, y: f64) -> Complex64 {
        if !self.region.contains(x, y) {
            return Complex64::new(0.0, 0.0);
        }
        let r = &self.region;
        let u = x - r.left(y).0;
        let i = ((u / r.width * self.nu as f64) as usize).min(self.nu - 1);
        let j = (((y - r.y.0) / (r.y.1 - r.y.0) * self.ny as f64) as usize).min(self.ny - 1);
        self.values[j * self.nu + i] * Complex64::from_polar(1.0, -(self.carrier.0 * x + self.carrier.1 * y))
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box–Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// `lq_norm` of a density, `q = f64::INFINITY` for the sup.
pub fn lq_norm(f: &SampledDensity, q: f64) -> Result<f64> {
    norm_of(f.values.iter().map(|v| v.norm()).collect(), f.cell_area(), q)
}

fn norm_of(mags: Vec<f64>, cell: f64, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::Contract(format!("norm exponent {q} must be >= 1")));
    }
    if q.is_infinite() {
        return Ok(mags.into_iter().fold(0.0, f64::max));
    }
    let powered: Vec<f64> = mags.into_iter().map(|m| m.powf(q)).collect();
    Ok((deterministic_sum(&powered) * cell).powf(1.0 / q))
}

/// Block sums in parallel, then a pairwise tree whose shape depends only on
/// the input length.
pub fn deterministic_sum(v: &[f64]) -> f64 {
    let mut level: Vec<f64> = v.par_chunks(REDUCTION_BLOCK).map(|c| c.iter().sum()).collect();
    if level.is_empty() {
        return 0.0;
    }
    while level.len() > 1 {
        level = level.chunks(2).map(|p| p.iter().sum()).collect();
    }
    level[0]
}

/// `origin + i e1 + j e2 + k e3` for `i < dims[0]`, etc.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub origin: [f64; 3],
    pub axes: [[f64; 3]; 3],
    pub dims: [usize; 3],
}

impl Lattice {
    /// Axis-aligned lattice with the given spacings.
    pub fn rect(origin: [f64; 3], spacing: [f64; 3], dims: [usize; 3]) -> Self {
        let mut axes = [[0.0; 3]; 3];
        for a in 0..3 {
            axes[a][a] = spacing[a];
        }
        Lattice { origin, axes, dims }
    }

    /// Centred axis-aligned lattice covering `[-half, half]` on each axis.
    pub fn centred(half: [f64; 3], dims: [usize; 3]) -> Self {
        let mut origin = [0.0; 3];
        let mut spacing = [0.0; 3];
        for a in 0..3 {
            if dims[a] > 1 {
                spacing[a] = 2.0 * half[a] / (dims[a] - 1) as f64;
                origin[a] = -half[a];
            } else {
                spacing[a] = 1.0;
            }
        }
        Lattice::rect(origin, spacing, dims)
    }

    pub fn single(xi: [f64; 3]) -> Self {
        Lattice::rect(xi, [1.0; 3], [1, 1, 1])
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, idx: [usize; 3]) -> [f64; 3] {
        let mut p = self.origin;
        for a in 0..3 {
            for c in 0..3 {
                p[c] += idx[a] as f64 * self.axes[a][c];
            }
        }
        p
    }

    pub fn cell_volume(&self) -> f64 {
        let [a, b, c] = self.axes;
        (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])).abs()
    }

    fn corners(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(8);
        for m in 0..8 {
            let idx = [0, 1, 2].map(|a| if m >> a & 1 == 1 { self.dims[a].saturating_sub(1) } else { 0 });
            out.push(self.point(idx));
        }
        out
    }

    fn unflatten(&self, n: usize) -> [usize; 3] {
        let k = n % self.dims[2];
        let j = (n / self.dims[2]) % self.dims[1];
        let i = n / (self.dims[2] * self.dims[1]);
        [i, j, k]
    }
}

/// Values of `E f` on a lattice, index `(i * n2 + j) * n3 + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub lattice: Lattice,
    pub values: Vec<Complex64>,
    /// Max deviation from the refined quadrature on the audit points,
    /// relative to the largest audited value.
    pub audit_error: f64,
    /// Quadrature nodes used.
    pub nodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Maximum number of quadrature nodes (before the audit refinement).
    pub node_budget: usize,
    pub audit_tol: f64,
    /// Extra panels per cell and axis on top of the phase rule.
    pub min_panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { node_budget: 1 << 22, audit_tol: 1e-6, min_panels: 1 }
    }
}

struct Nodes {
    /// `(x, y, φ(x, y))`
    pos: Vec<[f64; 3]>,
    weight: Vec<Complex64>,
}

fn bump(t: f64) -> f64 {
    // smooth step: 0 for t <= 0, 1 for t >= 1
    let g = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
    let (a, b) = (g(t), g(1.0 - t));
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Amplitude at a point: 1, or a smooth bump equal to 1 on the inner half of
/// the window and vanishing at its edges.
pub fn amplitude(s: &PhaseSurface<f64>, x: f64, y: f64) -> f64 {
    match s.amplitude {
        Amplitude::Unit => 1.0,
        Amplitude::Bump => {
            let along = |t: f64, (lo, hi): (f64, f64)| {
                let r = ((t - lo) / (hi - lo) - 0.5).abs() * 2.0;
                bump((1.0 - r) * 2.0)
            };
            along(x, s.window.0) * along(y, s.window.1)
        }
    }
}

/// Panels per cell in `(u, y)` keeping the phase variation within π/2.
fn panels_for(s: &PhaseSurface<f64>, f: &SampledDensity, lat: &Lattice, min_panels: usize) -> (usize, usize) {
    let r = &f.region;
    let (du, dy) = (r.width / f.nu as f64, (r.y.1 - r.y.0) / f.ny as f64);
    let corners = lat.corners();
    let (ca, cb) = f.carrier;
    let mut gu: f64 = 0.0;
    let mut gy: f64 = 0.0;
    // sample the phase gradient on a 3x3 pattern per cell row / column
    let sy = (4 * f.ny).max(8);
    let su = (4 * f.nu).max(8);
    for jy in 0..=sy {
        let y = r.y.0 + (r.y.1 - r.y.0) * jy as f64 / sy as f64;
        let (l, lp) = r.left(y);
        let h1 = s.h.deriv(y, 1);
        for iu in 0..=su {
            let x = l + r.width * iu as f64 / su as f64;
            let phi_x = y;
            let phi_y = x + s.epsilon * h1;
            for xi in &corners {
                let (a, b, c) = (xi[0] + ca, xi[1] + cb, xi[2]);
                gu = gu.max((a + c * phi_x).abs());
                gy = gy.max((a * lp + b + c * (phi_y + phi_x * lp)).abs());
            }
        }
    }
    // a margin for the sampled maximum
    let safety = 1.25;
    let nu = ((safety * gu * du / FRAC_PI_2).ceil() as usize).max(min_panels);
    let ny = ((safety * gy * dy / FRAC_PI_2).ceil() as usize).max(min_panels);
    (nu, ny)
}

fn build_nodes(s: &PhaseSurface<f64>, f: &SampledDensity, pu: usize, py: usize) -> Nodes {
    let r = &f.region;
    let (du, dy) = (r.width / f.nu as f64, (r.y.1 - r.y.0) / f.ny as f64);
    let (hu, hy) = (du / pu as f64, dy / py as f64);
    let total = f.nu * f.ny * pu * py * 64;
    let mut pos = Vec::with_capacity(total);
    let mut weight = Vec::with_capacity(total);
    let (ca, cb) = f.carrier;
    for j in 0..f.ny {
        for q in 0..py {
            let y_lo = r.y.0 + j as f64 * dy + q as f64 * hy;
            for (ny_, wy) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
                let y = y_lo + 0.5 * hy * (ny_ + 1.0);
                let l = r.left(y).0;
                let eh = s.epsilon * s.h.value(y);
                for i in 0..f.nu {
                    let v = f.values[j * f.nu + i];
                    if v == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    for p in 0..pu {
                        let u_lo = i as f64 * du + p as f64 * hu;
                        for (nx_, wx) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
                            let x = l + u_lo + 0.5 * hu * (nx_ + 1.0);
                            let w = 0.25 * hu * hy * wx * wy * amplitude(s, x, y);
                            pos.push([x, y, x * y + eh]);
                            weight.push(v * w * Complex64::from_polar(1.0, -(ca * x + cb * y)));
                        }
                    }
                }
            }
        }
    }
    Nodes { pos, weight }
}

/// Sum over nodes at every lattice point, using per-axis phase factors.
fn evaluate(nodes: &Nodes, lat: &Lattice) -> Vec<Complex64> {
    let [n1, n2, n3] = lat.dims;
    let mut out = vec![Complex64::new(0.0, 0.0); n1 * n2 * n3];
    for (pos, weight) in nodes.pos.chunks(NODE_CHUNK).zip(nodes.weight.chunks(NODE_CHUNK)) {
        let m = pos.len();
        let dot = |v: &[f64; 3], e: &[f64; 3]| v[0] * e[0] + v[1] * e[1] + v[2] * e[2];
        let base: Vec<Complex64> =
            pos.iter().zip(weight).map(|(p, w)| w * Complex64::from_polar(1.0, -dot(p, &lat.origin))).collect();
        // factors[a][idx * m + n] = e^{-i idx (e_a · v_n)}
        let factors: Vec<Vec<Complex64>> = (0..3)
            .map(|a| {
                let mut f = Vec::with_capacity(lat.dims[a] * m);
                for idx in 0..lat.dims[a] {
                    for p in pos {
                        f.push(Complex64::from_polar(1.0, -(idx as f64) * dot(p, &lat.axes[a])));
                    }
                }
                f
            })
            .collect();
        out.par_chunks_mut(n2 * n3).enumerate().for_each(|(i, slab)| {
            let fa = &factors[0][i * m..(i + 1) * m];
            let mut t = vec![Complex64::new(0.0, 0.0); m];
            for j in 0..n2 {
                let fb = &factors[1][j * m..(j + 1) * m];
                for n in 0..m {
                    t[n] = base[n] * fa[n] * fb[n];
                }
                for k in 0..n3 {
                    let fc = &factors[2][k * m..(k + 1) * m];
                    let mut acc = Complex64::new(0.0, 0.0);
                    for n in 0..m {
                        acc += t[n] * fc[n];
                    }
                    slab[j * n3 + k] += acc;
                }
            }
        });
    }
    out
}

fn direct_sum(nodes: &Nodes, xi: [f64; 3]) -> Complex64 {
    nodes
        .pos
        .iter()
        .zip(&nodes.weight)
        .map(|(p, w)| w * Complex64::from_polar(1.0, -(xi[0] * p[0] + xi[1] * p[1] + xi[2] * p[2])))
        .sum()
}

/// `E f` on the lattice by tensor Gauss–Legendre panels (8 nodes per panel
/// and axis, phase variation at most π/2 per panel). A 4x refined rule is
/// evaluated on 10 audit points; if it disagrees by more than the
/// tolerance, the panel count doubles until it agrees or the node budget
/// runs out.
pub fn extend(s: &PhaseSurface<f64>, f: &SampledDensity, lat: &Lattice, cfg: &QuadratureConfig) -> Result<FieldGrid> {
    if lat.is_empty() {
        return Err(Error::Contract("empty frequency lattice".into()));
    }
    let (mut pu, mut py) = panels_for(s, f, lat, cfg.min_panels.max(1));
    let n_total = lat.len();
    let audit_idx: Vec<usize> = (0..AUDIT_POINTS.min(n_total)).map(|t| t * n_total / AUDIT_POINTS.min(n_total)).collect();
    loop {
        let needed = f.nu * f.ny * pu * py * 64;
        if needed > cfg.node_budget {
            return Err(Error::Resource { needed, budget: cfg.node_budget });
        }
        let nodes = build_nodes(s, f, pu, py);
        let fine = build_nodes(s, f, pu * AUDIT_REFINE, py * AUDIT_REFINE);
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for &n in &audit_idx {
            let xi = lat.point(lat.unflatten(n));
            let (a, b) = (direct_sum(&nodes, xi), direct_sum(&fine, xi));
            worst = worst.max((a - b).norm());
            scale = scale.max(b.norm());
        }
        let audit_error = if scale > 0.0 { worst / scale } else { worst };
        if audit_error <= cfg.audit_tol {
            let values = evaluate(&nodes, lat);
            return Ok(FieldGrid { lattice: *lat, values, audit_error, nodes: nodes.pos.len() });
        }
        pu *= 2;
        py *= 2;
    }
}

/// Discrete `L^r` norm (Riemann sum over lattice cells).
pub fn lr_norm(g: &FieldGrid, r: f64) -> Result<f64> {
    norm_of(g.values.iter().map(|v| v.norm()).collect(), g.lattice.cell_volume(), r)
}

/// `‖g1 g2‖_p` on a common lattice.
pub fn bilinear_norm(g1: &FieldGrid, g2: &FieldGrid, p: f64) -> Result<f64> {
    if g1.lattice != g2.lattice {
        return Err(Error::Contract("bilinear norm needs identical lattices".into()));
    }
    norm_of(g1.values.iter().zip(&g2.values).map(|(a, b)| (a * b).norm()).collect(), g1.lattice.cell_volume(), p)
}

const FIELD_MAGIC: &[u8; 4] = b"FSF1";

/// Little-endian: magic, dims (3 × u64), origin (3 × f64), lattice axes
/// (9 × f64, row per axis), then `(re, im)` pairs as f32.
pub fn write_field<W: Write>(g: &FieldGrid, mut w: W) -> std::io::Result<()> {
    w.write_all(FIELD_MAGIC)?;
    for d in g.lattice.dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for o in g.lattice.origin {
        w.write_all(&o.to_le_bytes())?;
    }
    for a in g.lattice.axes {
        for c in a {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    let mut buf = Vec::with_capacity(g.values.len() * 8);
    for v in &g.values {
        buf.extend_from_slice(&(v.re as f32).to_le_bytes());
        buf.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

/// Reads a field written by [`write_field`]; values come back at f32
/// precision and the audit data is not stored.
pub fn read_field<R: Read>(mut r: R) -> std::io::Result<FieldGrid> {
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(bad("not a field file"));
    }
    let mut b8 = [0u8; 8];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        r.read_exact(&mut b8)?;
        *d = u64::from_le_bytes(b8) as usize;
    }
    let mut read_f64 = |r: &mut R| -> std::io::Result<f64> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    let mut origin = [0.0; 3];
    for o in &mut origin {
        *o = read_f64(&mut r)?;
    }
    let mut axes = [[0.0; 3]; 3];
    for a in &mut axes {
        for c in a.iter_mut() {
            *c = read_f64(&mut r)?;
        }
    }
    let n: usize = dims.iter().product();
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    let values = buf
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    Ok(FieldGrid { lattice: Lattice { origin, axes, dims }, values, audit_error: f64::NAN, nodes: 0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    /// `δ` for the bilinear scan, the half-length `d_I` for the strip scan.
    pub delta: f64,
    /// Largest normalised norm over the trials.
    pub norm: f64,
    /// Trial attaining it.
    pub trial_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormScanResult {
    pub points: Vec<ScanPoint>,
    /// Least-squares slope of log2(norm) against log2(delta).
    pub slope: f64,
    pub target_exponent: f64,
    pub seed: u64,
    pub trials: usize,
    /// The finite frequency domain the norms are taken over.
    pub truncation: String,
}

impl NormScanResult {
    pub fn slope_minus_target(&self) -> f64 {
        self.slope - self.target_exponent
    }

    /// `max/min` of `norm · delta^{-target}` over the scan.
    pub fn normalized_spread(&self) -> f64 {
        let v: Vec<f64> = self.points.iter().map(|p| p.norm * p.delta.powf(-self.target_exponent)).collect();
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mn = v.iter().cloned().fold(f64::INFINITY, f64::min);
        mx / mn
    }

    /// CSV with columns `delta,norm,trial_max,target_exponent`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("delta,norm,trial_max,target_exponent\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.delta, p.norm, p.trial_max, self.target_exponent));
        }
        s
    }
}

pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Which bilinear exponent the scan is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BilinearForm {
    /// `7/2 - 6/p`, norms in the original coordinates.
    Unscaled,
    /// `5/2 - 4/p`, norms in the δ-scaled coordinates.
    Scaled,
}

impl BilinearForm {
    pub fn target(self, p: f64) -> f64 {
        match self {
            BilinearForm::Unscaled => 3.5 - 6.0 / p,
            BilinearForm::Scaled => 2.5 - 4.0 / p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearScanConfig {
    pub p: f64,
    pub c0: f64,
    pub b: f64,
    pub trials: usize,
    /// Cells per density in each direction.
    pub cells: usize,
    /// Lattice points per axis.
    pub points: usize,
    /// Half-widths of the frequency box in units of the natural scales
    /// `1/(c0² δ)` (ξ1, ξ3) and `1/(c0 δ)` (ξ2).
    pub reach: f64,
    pub form: BilinearForm,
    pub quad: QuadratureConfig,
}

impl Default for BilinearScanConfig {
    fn default() -> Self {
        BilinearScanConfig {
            p: 2.0,
            c0: 0.5,
            b: 1.0,
            trials: 3,
            cells: 4,
            points: 16,
            reach: 8.0,
            form: BilinearForm::Unscaled,
            quad: QuadratureConfig::default(),
        }
    }
}

/// The prototype pair for one `δ` (no `δ <= 1/10` restriction, `a = δ`).
pub fn prototype_family_member(s: &PhaseSurface<f64>, delta: f64, c0: f64, b: f64) -> ScaledPrototype {
    ScaledPrototype { surface: s.clone(), delta, c0, a: delta, b, map: ScalingMap::DeltaScale { delta } }
}

/// For each `δ`, the max over seeded random unit-L² pairs `(f1, f2)` on
/// `(U1, U2)` of `‖E_{U1} f1 · E_{U2} f2‖_p`. The frequency box scales with
/// the boxes: `|ξ1|, |ξ3| <= reach/(c0² δ)`, `|ξ2| <= reach/(c0 δ)`. In the
/// scaled form the norm is converted to δ-scaled coordinates.
pub fn scan_bilinear_scaling(
    s: &PhaseSurface<f64>,
    deltas: &[DyadicLevel],
    seed: u64,
    cfg: &BilinearScanConfig,
) -> Result<NormScanResult> {
    if deltas.len() < 3 {
        return Err(Error::Contract("a scan needs at least three scales".into()));
    }
    if !(cfg.p > 5.0 / 3.0) {
        return Err(Error::Contract(format!("p = {} must exceed 5/3", cfg.p)));
    }
    let mut points = Vec::new();
    for (di, dl) in deltas.iter().enumerate() {
        let d: f64 = dl.value();
        let proto = prototype_family_member(s, d, cfg.c0, cfg.b);
        let (r1, r2) = (proto.u1_region(), proto.u2_region());
        let k13 = cfg.reach / (cfg.c0 * cfg.c0 * d);
        let k2 = cfg.reach / (cfg.c0 * d);
        let lat = Lattice::centred([k13, k2, k13], [cfg.points; 3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(di as u64);
        let mut best = (f64::NEG_INFINITY, 0);
        for t in 0..cfg.trials {
            let f1 = SampledDensity::random_unit(r1.clone(), cfg.cells, cfg.cells, &mut rng);
            let f2 = SampledDensity::random_unit(r2.clone(), cfg.cells, cfg.cells, &mut rng);
            let g1 = extend(s, &f1, &lat, &cfg.quad)?;
            let g2 = extend(s, &f2, &lat, &cfg.quad)?;
            let mut v = bilinear_norm(&g1, &g2, cfg.p)? / (lq_norm(&f1, 2.0)? * lq_norm(&f2, 2.0)?);
            if cfg.form == BilinearForm::Scaled {
                // E f(ξ) = δ E^s f^s(δξ1, ξ2, δξ3) and ‖f‖ = δ^{1/2} ‖f^s‖
                v *= d.powf(2.0 / cfg.p - 1.0);
            }
            if v > best.0 {
                best = (v, t);
            }
        }
        points.push(ScanPoint { delta: d, norm: best.0, trial_max: best.1 });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.delta.log2()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.norm.log2()).collect();
    Ok(NormScanResult {
        slope: fit_slope(&xs, &ys),
        target_exponent: cfg.form.target(cfg.p),
        points,
        seed,
        trials: cfg.trials,
        truncation: format!(
            "|xi1|,|xi3| <= {}/(c0^2 delta), |xi2| <= {}/(c0 delta), {}^3 points",
            cfg.reach, cfg.reach, cfg.points
        ),
    })
}

/// A strip `y ∈ span` on which `F''' = ε h'''` sits in `[λ/2, 4λ]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripSpec {
    pub span: (f64, f64),
    pub lambda: f64,
}

/// Strips from the positive intervals of a level-band partition of `h'''`,
/// with levels scaled by `ε`.
pub fn strips_from_partition(p: &LevelBandPartition<f64>, epsilon: f64) -> Vec<StripSpec> {
    p.intervals
        .iter()
        .filter(|iv| iv.sign > 0)
        .map(|iv| StripSpec { span: iv.span, lambda: epsilon * iv.level.value::<f64>() })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripScanConfig {
    pub r: f64,
    pub q: f64,
    pub cells: usize,
    pub points: usize,
    /// Half-width of the normalised frequency box.
    pub reach: f64,
    pub quad: QuadratureConfig,
}

impl Default for StripScanConfig {
    fn default() -> Self {
        StripScanConfig { r: 4.0, q: 2.0, cells: 4, points: 12, reach: 12.0, quad: QuadratureConfig::default() }
    }
}

/// For each strip, `‖E_I g‖_r / ‖g‖_q` with `g ≡ 1` on `[-1, 1] × I`,
/// evaluated in the original coordinates on the preimage of the normalised
/// cuboid `[-reach, reach]³` under the strip rescaling. The fitted slope
/// against `d_I` is compared with `1 - 2/r - 1/q`.
pub fn scan_strip_scaling(s: &PhaseSurface<f64>, strips: &[StripSpec], cfg: &StripScanConfig) -> Result<NormScanResult> {
    if strips.len() < 3 {
        return Err(Error::Contract("a scan needs at least three strips".into()));
    }
    let mut points = Vec::new();
    for st in strips {
        let (_, map) = rescale_strip(s, st.span, st.lambda)?;
        let ScalingMap::StripNormalize { c, d, shear } = map else { unreachable!() };
        let fp = s.epsilon * s.h.deriv(c, 1);
        // η1 = ξ1 + c ξ3, η2 = d (ξ2 + F'(c) ξ3 - shear η1), η3 = d ξ3
        let to_xi = |eta: [f64; 3]| {
            let x3 = eta[2] / d;
            let x1 = eta[0] - c * x3;
            let x2 = eta[1] / d - fp * x3 + shear * eta[0];
            [x1, x2, x3]
        };
        let n = cfg.points;
        let step = 2.0 * cfg.reach / (n - 1) as f64;
        let origin = to_xi([-cfg.reach; 3]);
        let zero = to_xi([0.0; 3]);
        let axes = [0, 1, 2].map(|a| {
            let mut e = [0.0; 3];
            e[a] = step;
            let p = to_xi(e);
            [p[0] - zero[0], p[1] - zero[1], p[2] - zero[2]]
        });
        let lat = Lattice { origin, axes, dims: [n; 3] };
        let g = SampledDensity::constant(Region::rect((-1.0, 1.0), st.span), cfg.cells, cfg.cells, Complex64::new(1.0, 0.0));
        let field = extend(s, &g, &lat, &cfg.quad)?;
        let v = lr_norm(&field, cfg.r)? / lq_norm(&g, cfg.q)?;
        points.push(ScanPoint { delta: d, norm: v, trial_max: 0 });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.delta.log2()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.norm.log2()).collect();
    Ok(NormScanResult {
        slope: fit_slope(&xs, &ys),
        target_exponent: ScalingMap::norm_exponent(cfg.r, cfg.q),
        points,
        seed: 0,
        trials: 1,
        truncation: format!("normalised cuboid |eta| <= {} with {}^3 points", cfg.reach, cfg.points),
    })
}
