//! Slowly decaying wave packets for phases with `∂₁²φ = 0`: index lattices,
//! tubes and hollow shells, the packet decomposition, cube covers, the
//! windowed-sum and product bounds, intersection curves of translated
//! patches, and incidence counting.
//!
//! The decomposition runs on a sampled grid of spacing `h = 2π/(R M)`, so
//! the frequency lattice `R ℤ²` is exactly the dual of one `M × M` period.
//! With that choice both partitions of unity are exact at the discrete level:
//! `Σ_v ψ_v = 1` on every node and `Σ_η K_η = δ` for the convolution kernels
//! `K_η(z) = e^{iη·z} k(z)` whose transforms are the frequency cutoffs `χ_η`.
//! The reference extension `E_h` is the same grid sum, so the packets add up
//! to `E_h f` up to the frequency window and rounding.

use crate::extension::{amplitude, fit_slope, SampledDensity};
use crate::geometry::{PhaseSurface, Point2, ScaledPrototype};
use crate::{Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

/// Half-width of the spatial window `ψ` in units of `1/R`.
const PSI_REACH: f64 = 0.7;
/// Reconstruction residual above which the window counts as too small.
const TRUNCATION_LIMIT: f64 = 1e-2;

// ---------------------------------------------------------------------------
// special functions

/// Error function: Taylor series below 2.5, continued fraction above.
pub(crate) fn erf(x: f64) -> f64 {
    if x.abs() < 2.5 {
        let x2 = x * x;
        let (mut term, mut sum, mut n) = (x, x, 0.0);
        loop {
            n += 1.0;
            term *= -x2 / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        sum * 2.0 / PI.sqrt()
    } else {
        x.signum() * (1.0 - erfc(x.abs()))
    }
}

pub(crate) fn erfc(x: f64) -> f64 {
    if x < 2.5 {
        return 1.0 - erf(x);
    }
    let mut t = x;
    for n in (1..=160).rev() {
        t = x + 0.5 * n as f64 / t;
    }
    (-x * x).exp() / (PI.sqrt() * t)
}

fn bump_on(t: f64, reach: f64) -> f64 {
    let s = t / reach;
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// The one-dimensional spatial window: a bump of half-width 0.7 divided by
/// its integer periodization, so `Σ_k ψ(t - k) = 1`.
pub fn psi_profile(t: f64) -> f64 {
    let b = bump_on(t, PSI_REACH);
    if b == 0.0 {
        return 0.0;
    }
    let k0 = t.round();
    let p: f64 = (-1..=1).map(|k| bump_on(t - k0 - k as f64, PSI_REACH)).sum();
    b / p
}

/// Gaussian width of the convolution kernel in units of `1/R`.
const KERNEL_SPREAD: f64 = 1.0;
/// Kernel truncation radius in units of `1/R` (`e^{-36}` relative).
const KERNEL_CUT: f64 = 8.5;

/// Convolution kernel of the frequency cutoff, in units of `R/2π`:
/// `sinc(s/2) e^{-s²/2σ²}`. It vanishes at `s ∈ 2πℤ \ {0}`, so the lattice
/// translates of its transform sum to one; the transform is the indicator of
/// `[-1/2, 1/2]` smoothed by a Gaussian, with a Gaussian tail.
fn cutoff_kernel(s: f64) -> f64 {
    if s.abs() > KERNEL_CUT {
        return 0.0;
    }
    let sinc = if s == 0.0 { 1.0 } else { (s / 2.0).sin() / (s / 2.0) };
    sinc * (-s * s / (2.0 * KERNEL_SPREAD * KERNEL_SPREAD)).exp()
}

// ---------------------------------------------------------------------------
// phases

/// A phase on a parameter domain, linear in the first variable.
pub trait PacketPhase: Sync {
    fn phase(&self, z: [f64; 2]) -> f64;
    fn gradient(&self, z: [f64; 2]) -> [f64; 2];
    /// Amplitude of the extension operator (absorbed into the density).
    fn amplitude(&self, _z: [f64; 2]) -> f64 {
        1.0
    }
}

impl PacketPhase for PhaseSurface<f64> {
    fn phase(&self, z: [f64; 2]) -> f64 {
        self.phi(Point2::new(z[0], z[1]))
    }

    fn gradient(&self, z: [f64; 2]) -> [f64; 2] {
        let g = self.grad(Point2::new(z[0], z[1]));
        [g.x, g.y]
    }

    fn amplitude(&self, z: [f64; 2]) -> f64 {
        amplitude(self, z[0], z[1])
    }
}

impl PacketPhase for ScaledPrototype {
    fn phase(&self, z: [f64; 2]) -> f64 {
        self.phi_s(Point2::new(z[0], z[1]))
    }

    fn gradient(&self, z: [f64; 2]) -> [f64; 2] {
        let g = self.grad_s(Point2::new(z[0], z[1]));
        [g.x, g.y]
    }
}

/// Re-parametrization of a phase `φ(x, y) = x y + G(y)` by `u = φ`:
/// `φ̃(u, y) = (u - G(y)) / y`, with the Jacobian `1/|y|` moved into the
/// amplitude. Packets of this phase live in the swapped frame.
#[derive(Clone, Debug)]
pub struct SideTwo<P>(pub P);

impl<P: PacketPhase> SideTwo<P> {
    /// `(u, y) -> (x, y)`
    pub fn to_original(&self, z: [f64; 2]) -> [f64; 2] {
        let g = self.0.phase([0.0, z[1]]);
        [(z[0] - g) / z[1], z[1]]
    }

    /// `(x, y) -> (u, y)`
    pub fn from_original(&self, z: [f64; 2]) -> [f64; 2] {
        [self.0.phase(z), z[1]]
    }
}

impl<P: PacketPhase> PacketPhase for SideTwo<P> {
    fn phase(&self, z: [f64; 2]) -> f64 {
        self.to_original(z)[0]
    }

    fn gradient(&self, z: [f64; 2]) -> [f64; 2] {
        let (u, y) = (z[0], z[1]);
        let g = self.0.phase([0.0, y]);
        let gp = self.0.gradient([0.0, y])[1];
        [1.0 / y, -gp / y - (u - g) / (y * y)]
    }

    fn amplitude(&self, z: [f64; 2]) -> f64 {
        self.0.amplitude(self.to_original(z)) / z[1].abs()
    }
}

// ---------------------------------------------------------------------------
// indices and tubes

/// Coordinates the packets of a family live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    #[default]
    Standard,
    /// `(ξ1, ξ2, τ) -> (τ, ξ2, ξ1)`, for re-parametrized second patches.
    Swapped,
}

impl Frame {
    /// Maps original coordinates to the frame (an involution).
    pub fn apply(self, p: [f64; 3]) -> [f64; 3] {
        match self {
            Frame::Standard => p,
            Frame::Swapped => [p[2], p[1], p[0]],
        }
    }
}

/// `w = (η, v)` with `η ∈ R ℤ²` and `v ∈ R⁻¹ ℤ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketIndex {
    pub eta: [f64; 2],
    pub v: [f64; 2],
    pub r: f64,
    pub kappa: f64,
    pub frame: Frame,
}

impl PacketIndex {
    pub fn on_lattice(&self) -> bool {
        let near = |t: f64| (t - t.round()).abs() <= 1e-9;
        self.eta.iter().all(|&e| near(e / self.r)) && self.v.iter().all(|&v| near(v * self.r))
    }
}

/// Lattice descriptions for one scale: the direction lattice inside `U'`
/// and a square window of the translation lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexLattices {
    pub r: f64,
    pub kappa: f64,
    pub v: Vec<[f64; 2]>,
    pub eta: Vec<[f64; 2]>,
}

/// `𝒱 = R⁻¹ℤ² ∩ U'` for the closed box `U'`, and `{η ∈ Rℤ² : |η|∞ <= window·R}`.
pub fn build_index(u_prime: ([f64; 2], [f64; 2]), r: f64, kappa: f64, window: usize) -> IndexLattices {
    let (lo, hi) = u_prime;
    let range = |a: usize| ((lo[a] * r - 1e-9).ceil() as i64)..=((hi[a] * r + 1e-9).floor() as i64);
    let mut v = Vec::new();
    for i in range(0) {
        for j in range(1) {
            v.push([i as f64 / r, j as f64 / r]);
        }
    }
    let w = window as i64;
    let mut eta = Vec::new();
    for i in -w..=w {
        for j in -w..=w {
            eta.push([i as f64 * r, j as f64 * r]);
        }
    }
    IndexLattices { r, kappa, v, eta }
}

/// Which part of a tube a membership test refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shell {
    /// The tube itself.
    Solid,
    /// `ν = 1`: the inflated tube; `1 < ν < ν_max`: the hollow shell between
    /// the `ν/2` and `ν` inflations; `ν = ν_max`: everything outside the
    /// `ν_max/2` inflation (within the length cap).
    Nu(u32),
}

/// Smallest power of two `>= R'^{1-2γ}` (at least 2).
pub fn nu_max(r_prime: f64, gamma: f64) -> u32 {
    let target = r_prime.powf(1.0 - 2.0 * gamma);
    let mut nu = 2u32;
    while (nu as f64) < target - 1e-9 {
        nu *= 2;
    }
    nu
}

/// `1, 2, 4, ..., ν_max`
pub fn dyadic_levels(nu_max: u32) -> Vec<u32> {
    let mut out = vec![1];
    while *out.last().unwrap() < nu_max {
        out.push(out.last().unwrap() * 2);
    }
    out
}

/// Axis-aligned cube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub centre: [f64; 3],
    pub side: f64,
}

impl Cube {
    pub fn lo(&self) -> [f64; 3] {
        self.centre.map(|c| c - 0.5 * self.side)
    }

    pub fn hi(&self) -> [f64; 3] {
        self.centre.map(|c| c + 0.5 * self.side)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| (p[a] - self.centre[a]).abs() <= 0.5 * self.side)
    }
}

/// `T_w = {|ξ - η + τ∇φ(v)| <= R, |τ| <= R²/κ}` in the frame of the packet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub index: PacketIndex,
    /// `∇φ(v)` of the phase the index belongs to.
    pub gradient: [f64; 2],
}

impl Tube {
    pub fn new<P: PacketPhase + ?Sized>(index: PacketIndex, phase: &P) -> Self {
        Tube { index, gradient: phase.gradient(index.v) }
    }

    pub fn radius(&self) -> f64 {
        self.index.r
    }

    pub fn half_length(&self) -> f64 {
        self.index.r * self.index.r / self.index.kappa
    }

    pub fn length(&self) -> f64 {
        2.0 * self.half_length()
    }

    /// Unit axis direction in original coordinates.
    pub fn direction(&self) -> [f64; 3] {
        let g = self.gradient;
        let d = self.index.frame.apply([-g[0], -g[1], 1.0]);
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        d.map(|t| t / n)
    }

    /// Axis point at frame height `t`.
    fn centre_at(&self, t: f64) -> [f64; 2] {
        [self.index.eta[0] - t * self.gradient[0], self.index.eta[1] - t * self.gradient[1]]
    }

    /// `ξ - η + τ∇φ(v)` and `τ`, in the frame.
    pub fn offset(&self, p: [f64; 3]) -> ([f64; 2], f64) {
        let q = self.index.frame.apply(p);
        let c = self.centre_at(q[2]);
        ([q[0] - c[0], q[1] - c[1]], q[2])
    }

    pub fn radial_distance(&self, p: [f64; 3]) -> f64 {
        let (o, _) = self.offset(p);
        o[0].hypot(o[1])
    }

    /// Membership in the tube inflated radially by `inflate`.
    pub fn contains(&self, p: [f64; 3], inflate: f64) -> bool {
        let (o, t) = self.offset(p);
        t.abs() <= self.half_length() && o[0].hypot(o[1]) <= inflate * self.radius()
    }

    /// Membership in a shell; `inflate` is `R'^γ`.
    pub fn in_shell(&self, p: [f64; 3], shell: Shell, inflate: f64, nu_max: u32) -> bool {
        let (o, t) = self.offset(p);
        if t.abs() > self.half_length() {
            return false;
        }
        let d = o[0].hypot(o[1]);
        let rho = inflate * self.radius();
        match shell {
            Shell::Solid => d <= self.radius(),
            Shell::Nu(1) => d <= rho,
            Shell::Nu(nu) if nu == nu_max => d > 0.5 * nu as f64 * rho,
            Shell::Nu(nu) if nu.is_power_of_two() && nu < nu_max => {
                d > 0.5 * nu as f64 * rho && d <= nu as f64 * rho
            }
            Shell::Nu(_) => false,
        }
    }

    /// Range `[min, max]` of the radial distance over the cube clipped to the
    /// length cap; `None` if the cube misses the slab.
    pub fn cube_distances(&self, q: &Cube) -> Option<(f64, f64)> {
        let (a, b) = (self.index.frame.apply(q.lo()), self.index.frame.apply(q.hi()));
        let lo = [a[0].min(b[0]), a[1].min(b[1]), a[2].min(b[2])];
        let hi = [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])];
        let cap = self.half_length();
        let (t0, t1) = (lo[2].max(-cap), hi[2].min(cap));
        if t0 > t1 {
            return None;
        }
        let (c0, c1) = (self.centre_at(t0), self.centre_at(t1));
        let dmin = segment_box_distance(c0, c1, [lo[0], lo[1]], [hi[0], hi[1]]);
        let mut dmax: f64 = 0.0;
        for c in [c0, c1] {
            for x in [lo[0], hi[0]] {
                for y in [lo[1], hi[1]] {
                    dmax = dmax.max((x - c[0]).hypot(y - c[1]));
                }
            }
        }
        Some((dmin, dmax))
    }

    /// Horizontal gap between the solid tube and the cube (0 if they meet).
    pub fn separation(&self, q: &Cube) -> Option<f64> {
        self.cube_distances(q).map(|(dmin, _)| (dmin - self.radius()).max(0.0))
    }

    /// Bit `i` set iff the shell `ν = 2^i` meets the cube.
    pub fn shells_meeting(&self, q: &Cube, inflate: f64, nu_max: u32) -> u32 {
        let Some((dmin, dmax)) = self.cube_distances(q) else {
            return 0;
        };
        let rho = inflate * self.radius();
        let mut mask = 0;
        let (mut i, mut nu) = (0, 1u32);
        while nu <= nu_max {
            let hit = if nu == 1 {
                dmin <= rho
            } else if nu == nu_max {
                dmax > 0.5 * nu as f64 * rho
            } else {
                dmin <= nu as f64 * rho && dmax > 0.5 * nu as f64 * rho
            };
            if hit {
                mask |= 1 << i;
            }
            i += 1;
            nu *= 2;
        }
        mask
    }
}

fn point_box_distance(p: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    let dx = (lo[0] - p[0]).max(0.0).max(p[0] - hi[0]);
    let dy = (lo[1] - p[1]).max(0.0).max(p[1] - hi[1]);
    dx.hypot(dy)
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Liang–Barsky clip of the segment against the box.
fn segment_meets_box(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> bool {
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for ax in 0..2 {
        let d = b[ax] - a[ax];
        for (p, q) in [(-d, a[ax] - lo[ax]), (d, hi[ax] - a[ax])] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
    }
    t0 <= t1
}

fn segment_box_distance(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    if segment_meets_box(a, b, lo, hi) {
        return 0.0;
    }
    let mut d = point_box_distance(a, lo, hi).min(point_box_distance(b, lo, hi));
    for x in [lo[0], hi[0]] {
        for y in [lo[1], hi[1]] {
            d = d.min(point_segment_distance([x, y], a, b));
        }
    }
    d
}

// ---------------------------------------------------------------------------
// decomposition

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeConfig {
    pub r: f64,
    pub kappa: f64,
    /// Packets are kept for `|η|∞ <= window · R`.
    pub window: usize,
    /// Grid samples per period `2π/R`; the frequency torus holds `M²` lattice points.
    pub oversample: usize,
    /// Largest half-width, in lattice steps, of the maximal-function windows.
    pub maximal_radius: usize,
    pub frame: Frame,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig { r: 8.0, kappa: 1.0, window: 10, oversample: 32, maximal_radius: 2, frame: Frame::Standard }
    }
}

/// A packet: its index and the coefficient `c_w >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavePacket {
    pub index: PacketIndex,
    pub coefficient: f64,
}

/// Grid values on an index rectangle, `values[i0 * dims[1] + i1]`.
#[derive(Clone, Debug)]
struct Field {
    base: [i64; 2],
    dims: [usize; 2],
    values: Vec<Complex64>,
}

impl Field {
    fn zeros(base: [i64; 2], dims: [usize; 2]) -> Self {
        Field { base, dims, values: vec![Complex64::new(0.0, 0.0); dims[0] * dims[1]] }
    }

    fn add_scaled(&mut self, other: &Field, s: Complex64) {
        let o0 = (other.base[0] - self.base[0]) as usize;
        let o1 = (other.base[1] - self.base[1]) as usize;
        for i0 in 0..other.dims[0] {
            let row = (o0 + i0) * self.dims[1] + o1;
            for i1 in 0..other.dims[1] {
                self.values[row + i1] += s * other.values[i0 * other.dims[1] + i1];
            }
        }
    }
}

struct Grid {
    h: f64,
    lo: [i64; 2],
    dims: [usize; 2],
    phase: Vec<f64>,
    /// density times amplitude
    density: Vec<Complex64>,
}

impl Grid {
    fn flat(&self, n: [i64; 2]) -> usize {
        (n[0] - self.lo[0]) as usize * self.dims[1] + (n[1] - self.lo[1]) as usize
    }
}

struct Patch {
    v: [f64; 2],
    base: [i64; 2],
    size: usize,
    values: Vec<Complex64>,
}

/// The packets of one density together with everything needed to evaluate
/// them. Packet `k` has direction index `k / n` and translation
/// `(j0, j1) = (k % n / s - W, k % n % s - W)` with `s = 2W + 1`, `n = s²`.
pub struct Decomposition<P> {
    phase: P,
    pub config: DecomposeConfig,
    grid: Grid,
    patches: Vec<Patch>,
    kernel_reach: i64,
    pub packets: Vec<WavePacket>,
    /// Relative reconstruction residual on the check points.
    pub residual: f64,
}

/// Support box of a density in parameter coordinates.
pub type Support = ([f64; 2], [f64; 2]);

/// Decomposes `E_h (density · amplitude)` into packets. Fails with a
/// truncation error if the window leaves a residual above 1e-2.
pub fn decompose<P: PacketPhase + Clone>(
    phase: &P,
    density: &(dyn Fn([f64; 2]) -> Complex64 + Sync),
    support: Support,
    cfg: &DecomposeConfig,
) -> Result<Decomposition<P>> {
    let (r, m) = (cfg.r, cfg.oversample);
    if !(r.is_finite() && r >= 1.0) {
        return Err(Error::Contract(format!("R = {r} must be at least 1")));
    }
    if !(cfg.kappa.is_finite() && cfg.kappa >= 1.0) {
        return Err(Error::Contract(format!("κ = {} must be at least 1", cfg.kappa)));
    }
    if cfg.window == 0 || m % 2 != 0 || m < 2 * cfg.window + 2 {
        return Err(Error::Contract(format!("need an even oversampling >= 2·window + 2, got M = {m}, window = {}", cfg.window)));
    }
    let (lo, hi) = support;
    if !(lo[0] < hi[0] && lo[1] < hi[1]) {
        return Err(Error::Contract("empty support box".into()));
    }
    let h = 2.0 * PI / (r * m as f64);
    let half = (PSI_REACH * m as f64 / (2.0 * PI)).ceil() as i64 + 1;
    let reach = (KERNEL_CUT * m as f64 / (2.0 * PI)).ceil() as i64;

    let krange = |a: usize| ((lo[a] * r - PSI_REACH).floor() as i64 + 1)..=((hi[a] * r + PSI_REACH).ceil() as i64 - 1);
    let mut centres = Vec::new();
    for k0 in krange(0) {
        for k1 in krange(1) {
            centres.push([k0 as f64 / r, k1 as f64 / r]);
        }
    }
    let base_of = |v: [f64; 2]| [(v[0] / h).round() as i64 - half, (v[1] / h).round() as i64 - half];
    let size = (2 * half + 1) as usize;
    let mut glo = [i64::MAX; 2];
    let mut ghi = [i64::MIN; 2];
    for v in &centres {
        let b = base_of(*v);
        for a in 0..2 {
            glo[a] = glo[a].min(b[a] - reach);
            ghi[a] = ghi[a].max(b[a] + size as i64 + reach);
        }
    }
    let dims = [(ghi[0] - glo[0]) as usize, (ghi[1] - glo[1]) as usize];
    let nodes: Vec<[f64; 2]> = (0..dims[0] * dims[1])
        .map(|n| [(glo[0] + (n / dims[1]) as i64) as f64 * h, (glo[1] + (n % dims[1]) as i64) as f64 * h])
        .collect();
    let phase_vals: Vec<f64> = nodes.par_iter().map(|z| phase.phase(*z)).collect();
    let dens: Vec<Complex64> = nodes
        .par_iter()
        .map(|&z| {
            if (0..2).all(|a| z[a] >= lo[a] && z[a] <= hi[a]) {
                let v = density(z);
                if v == Complex64::new(0.0, 0.0) {
                    v
                } else {
                    v * phase.amplitude(z)
                }
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let grid = Grid { h, lo: glo, dims, phase: phase_vals, density: dens };

    let patches: Vec<Patch> = centres
        .iter()
        .map(|&v| {
            let base = base_of(v);
            let mut values = Vec::with_capacity(size * size);
            for i0 in 0..size as i64 {
                let n0 = base[0] + i0;
                let w0 = psi_profile(r * (n0 as f64 * h - v[0]));
                for i1 in 0..size as i64 {
                    let n1 = base[1] + i1;
                    let w1 = psi_profile(r * (n1 as f64 * h - v[1]));
                    values.push(grid.density[grid.flat([n0, n1])] * (w0 * w1));
                }
            }
            Patch { v, base, size, values }
        })
        .collect();

    let w = cfg.window as i64;
    let per = ((2 * w + 1) * (2 * w + 1)) as usize;
    let coeffs: Vec<Vec<f64>> = patches.par_iter().map(|p| patch_coefficients(p, h, cfg)).collect();
    let mut packets = Vec::with_capacity(patches.len() * per);
    for (p, cs) in patches.iter().zip(&coeffs) {
        for (n, &c) in cs.iter().enumerate() {
            let j = [(n / (2 * w + 1) as usize) as i64 - w, (n % (2 * w + 1) as usize) as i64 - w];
            let index = PacketIndex { eta: [j[0] as f64 * r, j[1] as f64 * r], v: p.v, r, kappa: cfg.kappa, frame: cfg.frame };
            packets.push(WavePacket { index, coefficient: c });
        }
    }
    let mut dec = Decomposition { phase: phase.clone(), config: *cfg, grid, patches, kernel_reach: reach, packets, residual: 0.0 };
    let pts = dec.check_points();
    let reference: Vec<Complex64> = pts.iter().map(|&p| dec.extension_at(p)).collect();
    let rebuilt = dec.reconstruct_at(&pts);
    let scale = reference.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let err = reference.iter().zip(&rebuilt).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    dec.residual = if scale > 0.0 { err / scale } else { err };
    if dec.residual > TRUNCATION_LIMIT {
        return Err(Error::Truncation(dec.residual));
    }
    Ok(dec)
}

/// `c_(η,v) = R · M(|ψ_v f|^)(η)` on the window, with the maximal function
/// taken over centred square windows of the frequency lattice.
fn patch_coefficients(p: &Patch, h: f64, cfg: &DecomposeConfig) -> Vec<f64> {
    let (m, r, s) = (cfg.oversample, cfg.r, p.size);
    // direct DFT, separable: spec[j0][j1] = h² Σ G[i0][i1] e^{-i R (j0 z0 + j1 z1)}
    let factors = |a: usize| -> Vec<Complex64> {
        let mut f = Vec::with_capacity(m * s);
        for jj in 0..m {
            let j = jj as f64 - (m / 2) as f64;
            for i in 0..s {
                let z = (p.base[a] + i as i64) as f64 * h;
                f.push(Complex64::from_polar(1.0, -j * r * z));
            }
        }
        f
    };
    let (fx, fy) = (factors(0), factors(1));
    let mut tmp = vec![Complex64::new(0.0, 0.0); m * s];
    for j0 in 0..m {
        for i0 in 0..s {
            let e = fx[j0 * s + i0];
            for i1 in 0..s {
                tmp[j0 * s + i1] += p.values[i0 * s + i1] * e;
            }
        }
    }
    let mut mag = vec![0.0; m * m];
    for j0 in 0..m {
        for j1 in 0..m {
            let acc: Complex64 = (0..s).map(|i1| tmp[j0 * s + i1] * fy[j1 * s + i1]).sum();
            mag[j0 * m + j1] = (acc * h * h).norm();
        }
    }
    let w = cfg.window as i64;
    let half = (m / 2) as i64;
    let at = |a: i64, b: i64| mag[((a + half).rem_euclid(m as i64) * m as i64 + (b + half).rem_euclid(m as i64)) as usize];
    let mut out = Vec::with_capacity(((2 * w + 1) * (2 * w + 1)) as usize);
    for j0 in -w..=w {
        for j1 in -w..=w {
            let mut best: f64 = 0.0;
            for rad in 0..=cfg.maximal_radius as i64 {
                let mut sum = 0.0;
                for a in -rad..=rad {
                    for b in -rad..=rad {
                        sum += at(j0 + a, j1 + b);
                    }
                }
                best = best.max(sum / ((2 * rad + 1) * (2 * rad + 1)) as f64);
            }
            out.push(r * best);
        }
    }
    out
}

/// Bounding box of a sampled region in `(x, y)`.
fn region_box(f: &SampledDensity) -> Support {
    let reg = &f.region;
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..=64 {
        let y = reg.y.0 + (reg.y.1 - reg.y.0) * t as f64 / 64.0;
        let l = reg.left(y).0;
        x0 = x0.min(l);
        x1 = x1.max(l + reg.width);
    }
    ([x0, reg.y.0], [x1, reg.y.1])
}

/// Decomposition of `E f` for a density on a first-type patch (`κ` from the config).
pub fn decompose_sampled(
    s: &PhaseSurface<f64>,
    f: &SampledDensity,
    cfg: &DecomposeConfig,
) -> Result<Decomposition<PhaseSurface<f64>>> {
    let cfg = DecomposeConfig { frame: Frame::Standard, ..*cfg };
    let dens = |z: [f64; 2]| f.value_at(z[0], z[1]);
    decompose(s, &dens, region_box(f), &cfg)
}

/// Decomposition of `E f` after solving `u = φ(x, y)` for `x`; packets live
/// in the swapped frame. The region must stay away from `y = 0`.
pub fn decompose_side_two(
    s: &PhaseSurface<f64>,
    f: &SampledDensity,
    cfg: &DecomposeConfig,
) -> Result<Decomposition<SideTwo<PhaseSurface<f64>>>> {
    let (lo, hi) = region_box(f);
    if lo[1] <= 0.0 && hi[1] >= 0.0 {
        return Err(Error::Contract("re-parametrization needs y bounded away from 0".into()));
    }
    let adapter = SideTwo(s.clone());
    let (mut u0, mut u1) = (f64::INFINITY, f64::NEG_INFINITY);
    for a in 0..=32 {
        for b in 0..=32 {
            let x = lo[0] + (hi[0] - lo[0]) * a as f64 / 32.0;
            let y = lo[1] + (hi[1] - lo[1]) * b as f64 / 32.0;
            let u = s.phi(Point2::new(x, y));
            u0 = u0.min(u);
            u1 = u1.max(u);
        }
    }
    let pad = 1e-9 * (1.0 + u1.abs().max(u0.abs()));
    let cfg = DecomposeConfig { frame: Frame::Swapped, ..*cfg };
    let dens = |z: [f64; 2]| {
        let x = adapter.to_original(z);
        f.value_at(x[0], x[1])
    };
    decompose(&adapter, &dens, ([u0 - pad, lo[1]], [u1 + pad, hi[1]]), &cfg)
}

impl<P: PacketPhase> Decomposition<P> {
    pub fn phase(&self) -> &P {
        &self.phase
    }

    fn per_patch(&self) -> usize {
        let s = 2 * self.config.window + 1;
        s * s
    }

    /// Distinct directions `v` (one per spatial window).
    pub fn directions(&self) -> Vec<[f64; 2]> {
        self.patches.iter().map(|p| p.v).collect()
    }

    /// Packet numbers sharing the direction with number `d`.
    pub fn packets_of_direction(&self, d: usize) -> std::ops::Range<usize> {
        d * self.per_patch()..(d + 1) * self.per_patch()
    }

    pub fn tube(&self, k: usize) -> Tube {
        Tube::new(self.packets[k].index, &self.phase)
    }

    pub fn grid_spacing(&self) -> f64 {
        self.grid.h
    }

    /// `h k(d h) e^{iη d h}` for `d = -B..=B`.
    fn axis_kernel(&self, eta: f64) -> Vec<Complex64> {
        let (h, r, b) = (self.grid.h, self.config.r, self.kernel_reach);
        (-b..=b)
            .map(|d| {
                let t = d as f64 * h;
                Complex64::from_polar(h * r / (2.0 * PI) * cutoff_kernel(r * t), eta * t)
            })
            .collect()
    }

    /// Kernel of the sum over the window: `h k(d h) Σ_{|j|<=W} e^{i j R d h}`.
    fn window_kernel(&self) -> Vec<Complex64> {
        let (h, r, b, w) = (self.grid.h, self.config.r, self.kernel_reach, self.config.window as i64);
        (-b..=b)
            .map(|d| {
                let t = d as f64 * h;
                let dirichlet: f64 = (-w..=w).map(|j| (j as f64 * r * t).cos()).sum();
                Complex64::new(h * r / (2.0 * PI) * cutoff_kernel(r * t) * dirichlet, 0.0)
            })
            .collect()
    }

    fn convolve(&self, p: &Patch, kx: &[Complex64], ky: &[Complex64]) -> Field {
        let b = self.kernel_reach as usize;
        let s = p.size;
        let so = s + 2 * b;
        let mut t = vec![Complex64::new(0.0, 0.0); so * s];
        for o0 in 0..so {
            for i0 in 0..s {
                let d = o0 as i64 - i0 as i64; // offset + B
                if !(0..=2 * b as i64).contains(&d) {
                    continue;
                }
                let kv = kx[d as usize];
                if kv == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for i1 in 0..s {
                    t[o0 * s + i1] += p.values[i0 * s + i1] * kv;
                }
            }
        }
        let mut out = Field::zeros([p.base[0] - b as i64, p.base[1] - b as i64], [so, so]);
        for o0 in 0..so {
            for o1 in 0..so {
                let mut acc = Complex64::new(0.0, 0.0);
                for i1 in o1.saturating_sub(2 * b)..s.min(o1 + 1) {
                    acc += t[o0 * s + i1] * ky[o1 - i1];
                }
                out.values[o0 * so + o1] = acc;
            }
        }
        out
    }

    /// `F_w = (ψ_v f) * K_η` on its grid rectangle.
    fn packet_field(&self, k: usize) -> Field {
        let p = &self.patches[k / self.per_patch()];
        let eta = self.packets[k].index.eta;
        self.convolve(p, &self.axis_kernel(eta[0]), &self.axis_kernel(eta[1]))
    }

    fn global_zeros(&self) -> Field {
        Field::zeros(self.grid.lo, self.grid.dims)
    }

    /// `h² Σ F(z) e^{-i(ξ·z + τ φ(z))}` at a point given in the packet frame.
    fn transform(&self, f: &Field, q: [f64; 3]) -> Complex64 {
        let g = &self.grid;
        let mut acc = Complex64::new(0.0, 0.0);
        for i0 in 0..f.dims[0] {
            let n0 = f.base[0] + i0 as i64;
            let x = n0 as f64 * g.h;
            let row = g.flat([n0, f.base[1]]);
            for i1 in 0..f.dims[1] {
                let v = f.values[i0 * f.dims[1] + i1];
                if v.re == 0.0 && v.im == 0.0 {
                    continue;
                }
                let y = (f.base[1] + i1 as i64) as f64 * g.h;
                let arg = q[0] * x + q[1] * y + q[2] * g.phase[row + i1];
                acc += v * Complex64::from_polar(1.0, -arg);
            }
        }
        acc * (g.h * g.h)
    }

    fn density_field(&self) -> Field {
        Field { base: self.grid.lo, dims: self.grid.dims, values: self.grid.density.clone() }
    }

    /// The reference extension `E_h f` at a point in original coordinates.
    pub fn extension_at(&self, p: [f64; 3]) -> Complex64 {
        self.transform(&self.density_field(), self.config.frame.apply(p))
    }

    /// `Σ_w c_w p_w` over all packets of the decomposition.
    pub fn reconstruct_at(&self, points: &[[f64; 3]]) -> Vec<Complex64> {
        let kw = self.window_kernel();
        let mut acc = self.global_zeros();
        for p in &self.patches {
            acc.add_scaled(&self.convolve(p, &kw, &kw), Complex64::new(1.0, 0.0));
        }
        points.par_iter().map(|&p| self.transform(&acc, self.config.frame.apply(p))).collect()
    }

    /// `Σ_j a_j F_(jR, v)` for one direction, through a single 2-D kernel
    /// `h² k(d0 h) k(d1 h) Σ_j a_j e^{i R j·d h}`.
    fn weighted_patch_field(&self, d: usize, weights: &[f64]) -> Field {
        let p = &self.patches[d];
        let (h, r, b) = (self.grid.h, self.config.r, self.kernel_reach);
        let w = self.config.window as i64;
        let side = (2 * w + 1) as usize;
        let nk = (2 * b + 1) as usize;
        let radial: Vec<f64> =
            (-b..=b).map(|d| h * r / (2.0 * PI) * cutoff_kernel(r * d as f64 * h)).collect();
        let wave = |j: i64, d: i64| Complex64::from_polar(1.0, j as f64 * r * d as f64 * h);
        // partial[j0][d1] = Σ_j1 a[j0][j1] e^{i R j1 d1 h}
        let mut partial = vec![Complex64::new(0.0, 0.0); side * nk];
        for j0 in 0..side {
            for j1 in 0..side {
                let a = weights[j0 * side + j1];
                if a == 0.0 {
                    continue;
                }
                for (i, d1) in (-b..=b).enumerate() {
                    partial[j0 * nk + i] += wave(j1 as i64 - w, d1) * a;
                }
            }
        }
        let mut kernel = vec![Complex64::new(0.0, 0.0); nk * nk];
        for (i0, d0) in (-b..=b).enumerate() {
            for j0 in 0..side {
                let e = wave(j0 as i64 - w, d0) * radial[i0];
                for i1 in 0..nk {
                    kernel[i0 * nk + i1] += e * partial[j0 * nk + i1] * radial[i1];
                }
            }
        }
        let s = p.size;
        let so = s + 2 * b as usize;
        let mut out = Field::zeros([p.base[0] - b, p.base[1] - b], [so, so]);
        for a0 in 0..s {
            for a1 in 0..s {
                let g = p.values[a0 * s + a1];
                if g == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for i0 in 0..nk {
                    let row = (a0 + i0) * so + a1;
                    let krow = &kernel[i0 * nk..(i0 + 1) * nk];
                    for (i1, kv) in krow.iter().enumerate() {
                        out.values[row + i1] += g * kv;
                    }
                }
            }
        }
        out
    }

    /// `Σ_{k ∈ ks} weight(k) F_k`, grouped by direction.
    fn grouped_sum(&self, ks: &[usize], weight: impl Fn(usize) -> Result<f64>) -> Result<Field> {
        let per = self.per_patch();
        let mut by_dir: HashMap<usize, Vec<f64>> = HashMap::new();
        for &k in ks {
            let a = weight(k)?;
            by_dir.entry(k / per).or_insert_with(|| vec![0.0; per])[k % per] += a;
        }
        let mut dirs: Vec<_> = by_dir.into_iter().collect();
        dirs.sort_by_key(|(d, _)| *d);
        let parts: Vec<Field> = dirs.par_iter().map(|(d, a)| self.weighted_patch_field(*d, a)).collect();
        let mut acc = self.global_zeros();
        for f in &parts {
            acc.add_scaled(f, Complex64::new(1.0, 0.0));
        }
        Ok(acc)
    }

    /// Sum of the packet densities `F_w` (not normalised) over the listed packets.
    fn raw_sum(&self, ks: &[usize]) -> Field {
        self.grouped_sum(ks, |_| Ok(1.0)).expect("unit weights")
    }

    fn normalised_sum(&self, ks: &[usize]) -> Result<Field> {
        self.grouped_sum(ks, |k| {
            let c = self.packets[k].coefficient;
            if c == 0.0 {
                Err(Error::UndefinedPacket)
            } else {
                Ok(1.0 / c)
            }
        })
    }

    /// `q_w = c_w p_w` at a point.
    pub fn eval_unnormalised(&self, k: usize, p: [f64; 3]) -> Complex64 {
        self.transform(&self.packet_field(k), self.config.frame.apply(p))
    }

    /// `p_w(ξ, τ)`.
    pub fn eval_packet(&self, k: usize, p: [f64; 3]) -> Result<Complex64> {
        self.eval_packets(k, &[p]).map(|v| v[0])
    }

    pub fn eval_packets(&self, k: usize, points: &[[f64; 3]]) -> Result<Vec<Complex64>> {
        let c = self.packets[k].coefficient;
        if c == 0.0 {
            return Err(Error::UndefinedPacket);
        }
        let f = self.packet_field(k);
        Ok(points.par_iter().map(|&p| self.transform(&f, self.config.frame.apply(p)) / c).collect())
    }

    /// `Σ_{w ∈ ks} p_w` at the points.
    pub fn eval_sum(&self, ks: &[usize], points: &[[f64; 3]]) -> Result<Vec<Complex64>> {
        let f = self.normalised_sum(ks)?;
        Ok(points.par_iter().map(|&p| self.transform(&f, self.config.frame.apply(p))).collect())
    }

    /// `Σ_{w ∈ ks} q_w`, the plain sum of unnormalised packets.
    pub fn eval_raw_sum(&self, ks: &[usize], points: &[[f64; 3]]) -> Vec<Complex64> {
        let f = self.raw_sum(ks);
        points.par_iter().map(|&p| self.transform(&f, self.config.frame.apply(p))).collect()
    }

    /// `‖Σ_{w ∈ ks} p_w(·, τ)‖_{L²(ℝ²)}` by Plancherel over one period of the
    /// grid transform: `(2π)² h² Σ |F(z) e^{-iτφ(z)}|²`.
    pub fn sum_l2(&self, ks: &[usize], tau: f64) -> Result<f64> {
        let f = self.normalised_sum(ks)?;
        let g = &self.grid;
        let mut acc = 0.0;
        for (n, v) in f.values.iter().enumerate() {
            acc += (v * Complex64::from_polar(1.0, -tau * g.phase[n])).norm_sqr();
        }
        Ok(2.0 * PI * g.h * acc.sqrt())
    }

    pub fn coefficient_l2(&self) -> f64 {
        self.packets.iter().map(|p| p.coefficient * p.coefficient).sum::<f64>().sqrt()
    }

    /// `‖f · amplitude‖₂` on the grid.
    pub fn density_l2(&self) -> f64 {
        self.grid.h * self.grid.density.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Fraction of `‖F_w‖²` within `radius` of `v` (the inverse transform of
    /// `p_w(·, 0)` is `F_w`).
    pub fn localisation(&self, k: usize, radius: f64) -> f64 {
        let f = self.packet_field(k);
        let v = self.packets[k].index.v;
        let h = self.grid.h;
        let (mut inside, mut total) = (0.0, 0.0);
        for i0 in 0..f.dims[0] {
            for i1 in 0..f.dims[1] {
                let e = f.values[i0 * f.dims[1] + i1].norm_sqr();
                let z = [(f.base[0] + i0 as i64) as f64 * h, (f.base[1] + i1 as i64) as f64 * h];
                total += e;
                if (z[0] - v[0]).hypot(z[1] - v[1]) <= radius {
                    inside += e;
                }
            }
        }
        if total > 0.0 {
            inside / total
        } else {
            1.0
        }
    }

    /// `R⁻¹ (1 + |o1|/R)⁻² (1 + |o2|/R)⁻²` with `o = ξ - η + τ∇φ(v)` in the frame.
    pub fn envelope(&self, k: usize, p: [f64; 3]) -> f64 {
        let t = self.tube(k);
        let (o, _) = t.offset(p);
        let r = self.config.r;
        (1.0 / r) * (1.0 + o[0].abs() / r).powi(-2) * (1.0 + o[1].abs() / r).powi(-2)
    }

    /// Points where the reconstruction is checked: a 7×7 grid of
    /// `|ζ|∞ <= W R / 2` carried along the central direction, at five heights
    /// spanning `|τ| <= R²/κ`.
    pub fn check_points(&self) -> Vec<[f64; 3]> {
        let (r, w) = (self.config.r, self.config.window as f64);
        let vs = self.directions();
        let mut c = [0.0, 0.0];
        for v in &vs {
            c[0] += v[0] / vs.len() as f64;
            c[1] += v[1] / vs.len() as f64;
        }
        let g = self.phase.gradient(c);
        let cap = r * r / self.config.kappa;
        let mut out = Vec::new();
        for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let tau = t * cap;
            for a in 0..7 {
                for b in 0..7 {
                    let z = [(a as f64 / 3.0 - 1.0) * 0.5 * w * r, (b as f64 / 3.0 - 1.0) * 0.5 * w * r];
                    let q = [z[0] - tau * g[0], z[1] - tau * g[1], tau];
                    out.push(self.config.frame.apply(q));
                }
            }
        }
        out
    }
}

/// Largest `|p_w| / envelope` over packets and sample points: `packets`
/// seeded choices among the nonzero ones, `per_packet` points each with
/// `|τ| <= R²/κ` and per-axis offsets up to `max_offset · R` from the axis.
pub fn fit_decay_constant<P: PacketPhase>(
    dec: &Decomposition<P>,
    packets: usize,
    per_packet: usize,
    max_offset: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let live: Vec<usize> = (0..dec.packets.len()).filter(|&k| dec.packets[k].coefficient > 0.0).collect();
    if live.is_empty() {
        return Err(Error::UndefinedPacket);
    }
    let r = dec.config.r;
    let cap = r * r / dec.config.kappa;
    let mut worst: f64 = 0.0;
    for _ in 0..packets {
        let k = live[rng.gen_range(0..live.len())];
        let t = dec.tube(k);
        let pts: Vec<[f64; 3]> = (0..per_packet)
            .map(|_| {
                let tau = rng.gen_range(-cap..=cap);
                let o = [rng.gen_range(-max_offset..=max_offset) * r, rng.gen_range(-max_offset..=max_offset) * r];
                let e = t.index.eta;
                let q = [e[0] - tau * t.gradient[0] + o[0], e[1] - tau * t.gradient[1] + o[1], tau];
                t.index.frame.apply(q)
            })
            .collect();
        let vals = dec.eval_packets(k, &pts)?;
        for (p, v) in pts.iter().zip(vals) {
            worst = worst.max(v.norm() / dec.envelope(k, *p));
        }
    }
    Ok(worst)
}

/// Largest `‖Σ_{w∈W} p_w(·,τ)‖₂ / |W|^{1/2}` over seeded random subsets of
/// the nonzero packets, at `τ = 0` and `τ = R²/(2κ)`.
pub fn fit_orthogonality_constant<P: PacketPhase>(dec: &Decomposition<P>, subsets: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let live: Vec<usize> = (0..dec.packets.len()).filter(|&k| dec.packets[k].coefficient > 0.0).collect();
    if live.is_empty() {
        return Err(Error::UndefinedPacket);
    }
    let r = dec.config.r;
    let mut worst: f64 = 0.0;
    for _ in 0..subsets {
        let size = rng.gen_range(1..=live.len());
        let chosen: Vec<usize> = rand::seq::index::sample(&mut rng, live.len(), size).into_iter().map(|i| live[i]).collect();
        for tau in [0.0, r * r / (2.0 * dec.config.kappa)] {
            worst = worst.max(dec.sum_l2(&chosen, tau)? / (size as f64).sqrt());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// cube cover

/// Gaussian smoothing width of the cube profile, in cube sides.
const CUBE_SMOOTHING: f64 = 3.0;

/// One-dimensional cube profile in units of the side: the indicator of
/// `[-1/2, 1/2]` convolved with a Gaussian. Integer translates sum to one
/// exactly (the erf terms telescope) and the transform is
/// `sinc(s/2) e^{-σ² s²/2}`.
pub fn cube_profile(t: f64) -> f64 {
    let k = 1.0 / (CUBE_SMOOTHING * std::f64::consts::SQRT_2);
    if t.abs() > 8.0 {
        // difference of two tails, computed without cancellation
        let (a, b) = ((t.abs() - 0.5) * k, (t.abs() + 0.5) * k);
        return 0.5 * (erfc(a) - erfc(b));
    }
    0.5 * (erf((t + 0.5) * k) - erf((t - 0.5) * k))
}

/// Cubes of side `R` centred on `R ℤ³` covering a cuboid, with smooth
/// cutoffs `χ_q(p) = Π_a χ((p_a - c_a)/R)`. The cutoffs of all cubes within
/// the margin sum to one on the cuboid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeCover {
    pub side: f64,
    pub centre: [f64; 3],
    pub half: [f64; 3],
    /// Per-axis inclusive index ranges of the cubes meeting the cuboid.
    pub ranges: [(i64, i64); 3],
    /// Extra cube layers needed for the partition to be exact to 1e-10.
    pub margin: i64,
}

impl CubeCover {
    pub fn new(centre: [f64; 3], half: [f64; 3], side: f64) -> Result<Self> {
        if !(side > 0.0) || half.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Contract("cube cover needs positive side and extents".into()));
        }
        let ranges = [0, 1, 2].map(|a| {
            let lo = ((centre[a] - half[a]) / side - 0.5).ceil() as i64;
            let hi = ((centre[a] + half[a]) / side + 0.5).floor() as i64;
            (lo, hi)
        });
        let k = 1.0 / (CUBE_SMOOTHING * std::f64::consts::SQRT_2);
        let mut margin = 1;
        while erfc(margin as f64 * k) >= 1e-10 {
            margin += 1;
        }
        Ok(CubeCover { side, centre, half, ranges, margin })
    }

    /// Cubes meeting the cuboid.
    pub fn cubes(&self) -> Vec<Cube> {
        let [r0, r1, r2] = self.ranges;
        let mut out = Vec::new();
        for i in r0.0..=r0.1 {
            for j in r1.0..=r1.1 {
                for k in r2.0..=r2.1 {
                    let c = [i as f64 * self.side, j as f64 * self.side, k as f64 * self.side];
                    out.push(Cube { centre: c, side: self.side });
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.ranges.iter().map(|(a, b)| (b - a + 1) as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cutoff(&self, q: &Cube, p: [f64; 3]) -> f64 {
        (0..3).map(|a| cube_profile((p[a] - q.centre[a]) / self.side)).product()
    }

    /// `Σ_q χ_q(p)` over the cubes of the cover and its margin.
    pub fn partition_sum(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| {
                let (lo, hi) = self.ranges[a];
                let t = p[a] / self.side;
                // small terms first
                let mut ks: Vec<i64> = (lo - self.margin..=hi + self.margin).collect();
                ks.sort_by(|x, y| (t - *y as f64).abs().total_cmp(&(t - *x as f64).abs()));
                ks.iter().map(|&k| cube_profile(t - k as f64)).sum::<f64>()
            })
            .product()
    }

    /// Fraction of `∫|χ̂_q|²` inside the ball of radius `1/R`.
    pub fn transform_mass_fraction(&self) -> f64 {
        let spec = |s: f64| {
            let sinc = if s == 0.0 { 1.0 } else { (s / 2.0).sin() / (s / 2.0) };
            sinc * sinc * (-CUBE_SMOOTHING * CUBE_SMOOTHING * s * s).exp()
        };
        // the 1-D factor decays like e^{-9 s²}, so [-3, 3] holds all of it
        let (nodes, weights) = gauss_legendre(64);
        let line: f64 = nodes.iter().zip(&weights).map(|(x, w)| 3.0 * w * spec(3.0 * x)).sum();
        let total = line.powi(3);
        let mut inside = 0.0;
        let nphi = 64;
        for (xr, wr) in nodes.iter().zip(&weights) {
            let rad = 0.5 * (xr + 1.0);
            for (xc, wc) in nodes.iter().zip(&weights) {
                let sin_t = (1.0 - xc * xc).sqrt();
                for k in 0..nphi {
                    let ph = 2.0 * PI * k as f64 / nphi as f64;
                    let s = [rad * sin_t * ph.cos(), rad * sin_t * ph.sin(), rad * xc];
                    let v = spec(s[0]) * spec(s[1]) * spec(s[2]);
                    inside += 0.5 * wr * wc * (2.0 * PI / nphi as f64) * rad * rad * v;
                }
            }
        }
        inside / total
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (mut q0, mut q1) = (1.0, z);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let dq = n as f64 * (z * q1 - q0) / (z * z - 1.0);
                w[i] = 2.0 / ((1.0 - z * z) * dq * dq);
                break;
            }
        }
        x[i] = z;
    }
    (x, w)
}

// ---------------------------------------------------------------------------
// windowed sums and products

/// Sup of `|Σ_{w∈Y} p_w| χ_q` for the packets of one direction whose solid
/// tubes stay at least `d R` from the cube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedSup {
    pub d: f64,
    pub packets: usize,
    pub sup: f64,
    /// `sup · R · (1 + d)`, bounded if the sum decays like the claim.
    pub scaled: f64,
}

/// Samples `|Σ_{w∈Y} p_w χ_q|` on a `per_axis³` grid over `q` padded by
/// `3R` on each side.
pub fn windowed_sup<P: PacketPhase>(
    dec: &Decomposition<P>,
    direction: usize,
    q: &Cube,
    d: f64,
    per_axis: usize,
) -> Result<WindowedSup> {
    let r = dec.config.r;
    let ks: Vec<usize> = dec
        .packets_of_direction(direction)
        .filter(|&k| dec.packets[k].coefficient > 0.0)
        .filter(|&k| dec.tube(k).separation(q).is_some_and(|s| s >= d * r))
        .collect();
    if ks.is_empty() {
        return Err(Error::Contract(format!("no packets at distance >= {d}R from the cube")));
    }
    let cover = CubeCover { side: q.side, centre: q.centre, half: [q.side / 2.0; 3], ranges: [(0, 0); 3], margin: 0 };
    let pad = 3.0 * r;
    let n = per_axis.max(2);
    let mut pts = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let t = [i, j, k].map(|m| m as f64 / (n - 1) as f64 - 0.5);
                pts.push([0, 1, 2].map(|a| q.centre[a] + t[a] * (q.side + 2.0 * pad)));
            }
        }
    }
    let vals = dec.eval_sum(&ks, &pts)?;
    let sup = pts.iter().zip(&vals).map(|(p, v)| v.norm() * cover.cutoff(q, *p)).fold(0.0, f64::max);
    Ok(WindowedSup { d, packets: ks.len(), sup, scaled: sup * r * (1.0 + d) })
}

/// Angle between the axes of two tubes, in `[0, π/2]`.
pub fn axis_angle(t1: &Tube, t2: &Tube) -> f64 {
    let (a, b) = (t1.direction(), t2.direction());
    let c: f64 = (0..3).map(|i| a[i] * b[i]).sum::<f64>().abs().min(1.0);
    c.acos()
}

/// Smallest angle for which a pair of tubes counts as transversal.
pub const TRANSVERSAL_ANGLE: f64 = 0.1;

/// Closest points of two tube axes (points in original coordinates).
fn closest_approach(t1: &Tube, t2: &Tube) -> [f64; 3] {
    let axis_point = |t: &Tube| t.index.frame.apply([t.index.eta[0], t.index.eta[1], 0.0]);
    let (p, q) = (axis_point(t1), axis_point(t2));
    let (u, v) = (t1.direction(), t2.direction());
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let w = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    let (b, d, e) = (dot(u, v), dot(u, w), dot(v, w));
    let den = 1.0 - b * b;
    let (s, t) = if den < 1e-12 { (0.0, e) } else { ((b * e - d) / den, (e - b * d) / den) };
    [0, 1, 2].map(|i| 0.5 * (p[i] + s * u[i] + q[i] + t * v[i]))
}

/// `∫|p_{w1} p_{w2}|` over the box of half-width `8R` around the closest
/// approach of the two axes, midpoint rule with spacing `R/2`.
pub fn product_integral<P: PacketPhase, Q: PacketPhase>(
    d1: &Decomposition<P>,
    k1: usize,
    d2: &Decomposition<Q>,
    k2: usize,
) -> Result<f64> {
    let (t1, t2) = (d1.tube(k1), d2.tube(k2));
    let angle = axis_angle(&t1, &t2);
    if angle < TRANSVERSAL_ANGLE {
        return Err(Error::Contract(format!("axes meet at {angle:.3} rad, below {TRANSVERSAL_ANGLE}")));
    }
    let r = d1.config.r.max(d2.config.r);
    let c = closest_approach(&t1, &t2);
    let n = 32;
    let step = 16.0 * r / n as f64;
    let mut pts = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let o = [i, j, k].map(|m| (m as f64 + 0.5) * step - 8.0 * r);
                pts.push([c[0] + o[0], c[1] + o[1], c[2] + o[2]]);
            }
        }
    }
    let a = d1.eval_packets(k1, &pts)?;
    let b = d2.eval_packets(k2, &pts)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x.norm() * y.norm()).sum::<f64>() * step.powi(3))
}

// ---------------------------------------------------------------------------
// intersection curves

/// `Π = (S1 - (v1', φ(v1'))) ∩ (S2 - (v2', φ(v2')))` as a polyline of points
/// `(u, φ(u + v1') - φ(v1'))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionCurve {
    pub points: Vec<[f64; 3]>,
    /// `v1' = v2'`: the translated patches coincide.
    pub degenerate: bool,
}

const NEWTON_STEPS: usize = 30;

/// Traces `φ(u+v1') - φ(v1') = φ(u+v2') - φ(v2')` through the `u`-window
/// by predictor–corrector continuation with arc step `step`.
pub fn intersection_curve<P: PacketPhase + ?Sized>(
    phase: &P,
    v1p: [f64; 2],
    v2p: [f64; 2],
    step: f64,
    window: ([f64; 2], [f64; 2]),
) -> IntersectionCurve {
    if v1p == v2p {
        return IntersectionCurve { points: Vec::new(), degenerate: true };
    }
    let add = |u: [f64; 2], v: [f64; 2]| [u[0] + v[0], u[1] + v[1]];
    let (p1, p2) = (phase.phase(v1p), phase.phase(v2p));
    let gap = |u: [f64; 2]| phase.phase(add(u, v1p)) - p1 - phase.phase(add(u, v2p)) + p2;
    let grad = |u: [f64; 2]| {
        let (a, b) = (phase.gradient(add(u, v1p)), phase.gradient(add(u, v2p)));
        [a[0] - b[0], a[1] - b[1]]
    };
    let (lo, hi) = window;
    let inside = |u: [f64; 2]| (0..2).all(|a| u[a] >= lo[a] && u[a] <= hi[a]);
    let scale = 1.0 + p1.abs() + p2.abs();
    let correct = |mut u: [f64; 2]| -> Option<[f64; 2]> {
        for _ in 0..NEWTON_STEPS {
            let (g, dg) = (gap(u), grad(u));
            let n2 = dg[0] * dg[0] + dg[1] * dg[1];
            if n2 == 0.0 {
                return None;
            }
            u = [u[0] - g * dg[0] / n2, u[1] - g * dg[1] / n2];
            if gap(u).abs() <= 1e-14 * scale {
                return Some(u);
            }
        }
        (gap(u).abs() <= 1e-10 * scale).then_some(u)
    };

    let start = if inside([0.0, 0.0]) {
        Some([0.0, 0.0])
    } else {
        // coarse grid search for a sign change along grid edges
        let n = 64;
        let at = |i: usize, j: usize| [lo[0] + (hi[0] - lo[0]) * i as f64 / n as f64, lo[1] + (hi[1] - lo[1]) * j as f64 / n as f64];
        let mut found = None;
        'outer: for i in 0..=n {
            for j in 0..=n {
                let a = at(i, j);
                for b in [(i < n).then(|| at(i + 1, j)), (j < n).then(|| at(i, j + 1))].into_iter().flatten() {
                    let (ga, gb) = (gap(a), gap(b));
                    if ga == 0.0 || ga.signum() != gb.signum() {
                        let (mut x, mut y) = (a, b);
                        for _ in 0..80 {
                            let m = [(x[0] + y[0]) / 2.0, (x[1] + y[1]) / 2.0];
                            if gap(m).signum() == gap(x).signum() {
                                x = m;
                            } else {
                                y = m;
                            }
                        }
                        found = Some(x);
                        break 'outer;
                    }
                }
            }
        }
        found
    };
    let Some(start) = start else {
        return IntersectionCurve { points: Vec::new(), degenerate: false };
    };
    let span = (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
    let max_steps = (4.0 * span / step).ceil() as usize + 16;
    let trace = |sign: f64| -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        let mut u = start;
        for _ in 0..max_steps {
            let g = grad(u);
            let n = g[0].hypot(g[1]);
            if n == 0.0 {
                break;
            }
            let t = [-g[1] / n * sign, g[0] / n * sign];
            let Some(next) = correct([u[0] + step * t[0], u[1] + step * t[1]]) else { break };
            if !inside(next) {
                break;
            }
            // closed curve
            if !out.is_empty() && (next[0] - start[0]).hypot(next[1] - start[1]) < 0.5 * step {
                break;
            }
            out.push(next);
            u = next;
        }
        out
    };
    let mut back = trace(-1.0);
    back.reverse();
    back.push(start);
    back.extend(trace(1.0));
    let points = back.into_iter().map(|u| [u[0], u[1], phase.phase(add(u, v1p)) - p1]).collect();
    IntersectionCurve { points, degenerate: false }
}

/// Distance from a point to a segment in ℝ³.
fn segment_distance3(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let w = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let t = if dd == 0.0 { 0.0 } else { ((w[0] * d[0] + w[1] * d[1] + w[2] * d[2]) / dd).clamp(0.0, 1.0) };
    let e = [w[0] - t * d[0], w[1] - t * d[1], w[2] - t * d[2]];
    (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
}

/// The indices whose graph point `(v - v_ref, φ(v) - φ(v_ref))` lies within
/// `1/R` of the polyline, and their distinct directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveFilter {
    pub selected: Vec<usize>,
    pub directions: Vec<[f64; 2]>,
}

pub fn filter_by_curve<P: PacketPhase + ?Sized>(
    phase: &P,
    indices: &[PacketIndex],
    curve: &[[f64; 3]],
    v_ref: [f64; 2],
    r: f64,
) -> CurveFilter {
    let tol = 1.0 / r;
    let mut selected = Vec::new();
    if curve.is_empty() || indices.is_empty() {
        return CurveFilter { selected, directions: Vec::new() };
    }
    // segments bucketed by the cells their padded 2-D bounding boxes touch
    let cell = tol.max(1e-12);
    let key = |x: f64, y: f64| ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let segs: Vec<([f64; 3], [f64; 3])> = if curve.len() == 1 {
        vec![(curve[0], curve[0])]
    } else {
        curve.windows(2).map(|w| (w[0], w[1])).collect()
    };
    for (i, (a, b)) in segs.iter().enumerate() {
        let (x0, x1) = (a[0].min(b[0]) - tol, a[0].max(b[0]) + tol);
        let (y0, y1) = (a[1].min(b[1]) - tol, a[1].max(b[1]) + tol);
        let (k0, l0) = key(x0, y0);
        let (k1, l1) = key(x1, y1);
        for k in k0..=k1 {
            for l in l0..=l1 {
                buckets.entry((k, l)).or_default().push(i);
            }
        }
    }
    let p_ref = phase.phase(v_ref);
    let mut dirs: Vec<(i64, i64)> = Vec::new();
    for (n, idx) in indices.iter().enumerate() {
        let u = [idx.v[0] - v_ref[0], idx.v[1] - v_ref[1]];
        let Some(list) = buckets.get(&key(u[0], u[1])) else { continue };
        let g = [u[0], u[1], phase.phase(idx.v) - p_ref];
        if list.iter().any(|&i| segment_distance3(g, segs[i].0, segs[i].1) <= tol) {
            selected.push(n);
            dirs.push(((idx.v[0] * idx.r).round() as i64, (idx.v[1] * idx.r).round() as i64));
        }
    }
    dirs.sort_unstable();
    dirs.dedup();
    let directions = dirs.into_iter().map(|(a, b)| [a as f64 / r, b as f64 / r]).collect();
    CurveFilter { selected, directions }
}

// ---------------------------------------------------------------------------
// incidence counting

/// `2^⌊log₂ n⌋`, and 0 for 0.
pub fn dyadic_class(n: u32) -> u32 {
    if n == 0 {
        0
    } else {
        1 << (31 - n.leading_zeros())
    }
}

/// A class of cubes sharing the dyadic sizes of all `|W_j^ν(q)|`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MuClass {
    /// `μ_{ν,j}` at `[j * levels + level]` (`j = 0, 1` for the two families).
    pub mu: Vec<u32>,
    pub cubes: Vec<usize>,
}

/// Exact incidence counts `|W_j^ν(q)|` for two tube families and a cube list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountProfile {
    pub gamma: f64,
    pub r_prime: f64,
    /// `R'^γ`
    pub inflate: f64,
    pub nu_max: u32,
    pub nus: Vec<u32>,
    pub tubes: [usize; 2],
    pub cubes: usize,
    /// `|W_j^{ν_l}(q)|` at `[(q * 2 + j) * levels + l]`.
    pub counts: Vec<u32>,
    pub mu_classes: Vec<MuClass>,
    /// Position of each cube's class in `mu_classes`.
    pub cube_class: Vec<usize>,
}

/// Counts, for every cube and every shell level, the tubes of each family
/// whose shell meets the cube.
pub fn count_profile(families: [&[Tube]; 2], cubes: &[Cube], gamma: f64, r_prime: f64) -> Result<CountProfile> {
    if !(gamma > 0.0 && gamma < 0.25) {
        return Err(Error::Contract(format!("γ = {gamma} must lie in (0, 1/4)")));
    }
    if !(r_prime >= 1.0) {
        return Err(Error::Contract(format!("R' = {r_prime} must be at least 1")));
    }
    let inflate = r_prime.powf(gamma);
    let nu_max = nu_max(r_prime, gamma);
    let nus = dyadic_levels(nu_max);
    let levels = nus.len();
    let counts: Vec<u32> = cubes
        .par_iter()
        .flat_map_iter(|q| {
            let mut row = vec![0u32; 2 * levels];
            for (j, fam) in families.iter().enumerate() {
                for t in fam.iter() {
                    let mask = t.shells_meeting(q, inflate, nu_max);
                    for (l, slot) in row[j * levels..(j + 1) * levels].iter_mut().enumerate() {
                        *slot += (mask >> l) & 1;
                    }
                }
            }
            row
        })
        .collect();
    let mut by_key: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut mu_classes: Vec<MuClass> = Vec::new();
    let mut cube_class = Vec::with_capacity(cubes.len());
    for q in 0..cubes.len() {
        let key: Vec<u32> = counts[q * 2 * levels..(q + 1) * 2 * levels].iter().map(|&n| dyadic_class(n)).collect();
        let id = *by_key.entry(key.clone()).or_insert_with(|| {
            mu_classes.push(MuClass { mu: key, cubes: Vec::new() });
            mu_classes.len() - 1
        });
        mu_classes[id].cubes.push(q);
        cube_class.push(id);
    }
    Ok(CountProfile {
        gamma,
        r_prime,
        inflate,
        nu_max,
        nus,
        tubes: [families[0].len(), families[1].len()],
        cubes: cubes.len(),
        counts,
        mu_classes,
        cube_class,
    })
}

impl CountProfile {
    pub fn levels(&self) -> usize {
        self.nus.len()
    }

    pub fn level_of(&self, nu: u32) -> Option<usize> {
        self.nus.iter().position(|&n| n == nu)
    }

    /// `|W_j^ν(q)|` for family `j ∈ {0, 1}`.
    pub fn count(&self, q: usize, j: usize, level: usize) -> u32 {
        self.counts[(q * 2 + j) * self.levels() + level]
    }

    /// `W_j^ν(q)` recomputed from the tubes of family `j`.
    pub fn members(&self, tubes: &[Tube], q: &Cube, level: usize) -> Vec<usize> {
        (0..tubes.len())
            .filter(|&i| (tubes[i].shells_meeting(q, self.inflate, self.nu_max) >> level) & 1 == 1)
            .collect()
    }

    /// For each tube, the number of cubes of a class (restricted to `allowed`)
    /// whose `ν`-shell incidence contains it.
    pub fn lambda_counts(&self, tubes: &[Tube], cubes: &[Cube], class: usize, level: usize, allowed: &(dyn Fn(usize) -> bool + Sync)) -> Vec<u32> {
        let qs: Vec<usize> = self.mu_classes[class].cubes.iter().copied().filter(|&q| allowed(q)).collect();
        tubes
            .par_iter()
            .map(|t| qs.iter().filter(|&&q| (t.shells_meeting(&cubes[q], self.inflate, self.nu_max) >> level) & 1 == 1).count() as u32)
            .collect()
    }

    /// `cube, j, nu, count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cube,family,nu,count\n");
        for q in 0..self.cubes {
            for j in 0..2 {
                for (l, nu) in self.nus.iter().enumerate() {
                    out.push_str(&format!("{q},{},{nu},{}\n", j + 1, self.count(q, j, l)));
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// counting probe

/// Two tube families over a `δR² × R² × R²` cuboid of side-`R` cubes: a fan of
/// first-patch tubes through the central cube (`η = 0`, one tube per
/// direction) and seeded translates of re-parametrized second-patch tubes.
pub struct TubeFan {
    pub prototype: ScaledPrototype,
    pub r_prime: f64,
    pub r: f64,
    pub gamma: f64,
    pub tubes1: Vec<Tube>,
    pub tubes2: Vec<Tube>,
    pub cover: CubeCover,
    pub cubes: Vec<Cube>,
    /// Index of the central cube.
    pub q0: usize,
    /// Tubes of the fan whose direction lies near the intersection curve.
    pub filtered: Vec<usize>,
    /// Half extents of the box around `q0` excluded from the λ counts.
    pub exclusion: [f64; 3],
}

pub const FAN_DELTA: f64 = 0.5;
pub const FAN_C0: f64 = 0.5;
pub const FAN_B: f64 = 1.0;
pub const FAN_SECOND_FAMILY: usize = 500;

pub fn tube_fan(s: &PhaseSurface<f64>, r_prime: f64, gamma: f64, seed: u64) -> Result<TubeFan> {
    let delta = FAN_DELTA;
    let proto = crate::extension::prototype_family_member(s, delta, FAN_C0, FAN_B);
    let r = r_prime / delta;
    let c2 = FAN_C0 * FAN_C0;

    let lat1 = build_index(([0.0, 0.0], [c2, FAN_C0 * delta]), r, 1.0, 0);
    let tubes1: Vec<Tube> = lat1
        .v
        .iter()
        .filter(|v| proto.in_u1_s(Point2::new(v[0], v[1])))
        .map(|&v| Tube::new(PacketIndex { eta: [0.0, 0.0], v, r, kappa: 1.0, frame: Frame::Standard }, &proto))
        .collect();

    let side_two = SideTwo(proto.clone());
    let (mut u0, mut u1) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..=64 {
        let y = FAN_B + FAN_C0 * k as f64 / 64.0;
        let x0 = proto.abar() - proto.surface.epsilon * proto.surface.h.deriv(y, 1) / delta;
        for x in [x0, x0 + c2] {
            let u = proto.phi_s(Point2::new(x, y));
            u0 = u0.min(u);
            u1 = u1.max(u);
        }
    }
    let lat2 = build_index(([u0, FAN_B], [u1, FAN_B + FAN_C0]), r, 1.0 / delta, 0);
    let v2: Vec<[f64; 2]> = lat2
        .v
        .iter()
        .copied()
        .filter(|&z| {
            let x = side_two.to_original(z);
            proto.in_u2_s(Point2::new(x[0], x[1]))
        })
        .collect();

    let half = [delta * r * r / 2.0, r * r / 2.0, r * r / 2.0];
    let cover = CubeCover::new([0.0; 3], half, r)?;
    let cubes = cover.cubes();
    let q0 = cubes.iter().position(|q| q.contains([0.0; 3])).expect("cover contains the origin");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tubes2: Vec<Tube> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    if !v2.is_empty() {
        for _ in 0..FAN_SECOND_FAMILY {
            let v = v2[rng.gen_range(0..v2.len())];
            let p = [0, 1, 2].map(|a| rng.gen_range(-half[a]..=half[a]));
            let g = side_two.gradient(v);
            let f = Frame::Swapped.apply(p);
            let eta = [((f[0] + f[2] * g[0]) / r).round() * r, ((f[1] + f[2] * g[1]) / r).round() * r];
            let key = ((v[0] * r).round() as i64, (v[1] * r).round() as i64, (eta[0] / r) as i64, (eta[1] / r) as i64);
            if seen.insert(key) {
                let index = PacketIndex { eta, v, r, kappa: 1.0 / delta, frame: Frame::Swapped };
                tubes2.push(Tube { index, gradient: g });
            }
        }
    }

    let v1p = [c2 / 2.0, FAN_C0 * delta / 2.0];
    let y2 = FAN_B + FAN_C0 / 2.0;
    let v2p = [proto.abar() - proto.surface.epsilon * proto.surface.h.deriv(y2, 1) / delta + c2 / 2.0, y2];
    let curve = intersection_curve(&proto, v1p, v2p, 0.25 / r, ([-v1p[0], -v1p[1]], [c2 - v1p[0], FAN_C0 * delta - v1p[1]]));
    let indices: Vec<PacketIndex> = tubes1.iter().map(|t| t.index).collect();
    let filtered = filter_by_curve(&proto, &indices, &curve.points, v1p, r).selected;

    let rt = r_prime.powf(1.0 - 2.0 * gamma) / delta;
    let exclusion = [delta * rt * rt / 2.0, rt * rt / 2.0, rt * rt / 2.0];
    Ok(TubeFan { prototype: proto, r_prime, r, gamma, tubes1, tubes2, cover, cubes, q0, filtered, exclusion })
}

/// Left side `λ_{ν1,1} μ_{ν2,2} |[W_1^{λ,μ} ∩ W_1^{ν1}(q0)]^Π|` (maximised
/// over classes) against `ν1² ν2² |W_2|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeomProbe {
    pub r_prime: f64,
    pub nu1: u32,
    pub nu2: u32,
    pub tubes1: usize,
    pub tubes2: usize,
    pub cubes: usize,
    pub filtered: usize,
    pub left: f64,
    pub right: f64,
    /// `None` when the right side vanishes or no class contributes.
    pub ratio: Option<f64>,
    pub note: Option<String>,
}

pub fn geom_inequality_probe(fan: &TubeFan, profile: &CountProfile, nu1: u32, nu2: u32) -> Result<GeomProbe> {
    let (Some(l1), Some(l2)) = (profile.level_of(nu1), profile.level_of(nu2)) else {
        return Err(Error::Contract(format!("ν1 = {nu1}, ν2 = {nu2} must be dyadic levels up to {}", profile.nu_max)));
    };
    let right = (nu1 as f64).powi(2) * (nu2 as f64).powi(2) * fan.tubes2.len() as f64;
    let mut report = GeomProbe {
        r_prime: fan.r_prime,
        nu1,
        nu2,
        tubes1: fan.tubes1.len(),
        tubes2: fan.tubes2.len(),
        cubes: fan.cubes.len(),
        filtered: fan.filtered.len(),
        left: 0.0,
        right,
        ratio: None,
        note: None,
    };
    if fan.tubes2.is_empty() {
        report.note = Some("second family empty: ratio undefined".into());
        return Ok(report);
    }
    let at_q0: std::collections::HashSet<usize> = profile.members(&fan.tubes1, &fan.cubes[fan.q0], l1).into_iter().collect();
    let candidates: Vec<usize> = fan.filtered.iter().copied().filter(|i| at_q0.contains(i)).collect();
    let c0 = fan.cubes[fan.q0].centre;
    let allowed = |q: usize| (0..3).any(|a| (fan.cubes[q].centre[a] - c0[a]).abs() > fan.exclusion[a]);
    let levels = profile.levels();
    let mut left: f64 = 0.0;
    for (id, class) in profile.mu_classes.iter().enumerate() {
        let mu2 = class.mu[levels + l2];
        if mu2 == 0 || candidates.is_empty() {
            continue;
        }
        let lam = profile.lambda_counts(&fan.tubes1, &fan.cubes, id, l1, &allowed);
        let mut by_class: HashMap<u32, usize> = HashMap::new();
        for &i in &candidates {
            let c = dyadic_class(lam[i]);
            if c > 0 {
                *by_class.entry(c).or_default() += 1;
            }
        }
        for (lambda, n) in by_class {
            left = left.max(lambda as f64 * mu2 as f64 * n as f64);
        }
    }
    report.left = left;
    if left > 0.0 {
        report.ratio = Some(left / right);
    } else {
        report.note = Some("no class contributes: all buckets empty".into());
    }
    Ok(report)
}

/// Probe reports over several `R'` with the fitted growth exponent of the
/// ratio in `R'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeomSweep {
    pub reports: Vec<GeomProbe>,
    /// Slope of `log ratio` against `log R'` (over the defined ratios).
    pub slope: Option<f64>,
    pub pass: bool,
}

pub const GEOM_GROWTH_LIMIT: f64 = 0.5;

pub fn geom_probe_sweep(s: &PhaseSurface<f64>, r_primes: &[f64], gamma: f64, nu1: u32, nu2: u32, seed: u64) -> Result<GeomSweep> {
    let mut reports = Vec::new();
    for &rp in r_primes {
        let fan = tube_fan(s, rp, gamma, seed)?;
        let profile = count_profile([&fan.tubes1, &fan.tubes2], &fan.cubes, gamma, rp)?;
        reports.push(geom_inequality_probe(&fan, &profile, nu1, nu2)?);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = reports.iter().filter_map(|r| r.ratio.map(|q| (r.r_prime.ln(), q.ln()))).unzip();
    let slope = (xs.len() >= 2).then(|| fit_slope(&xs, &ys));
    let pass = slope.is_some_and(|s| s <= GEOM_GROWTH_LIMIT);
    Ok(GeomSweep { reports, slope, pass })
}
