//! The acceptance suite: one function per criterion, each returning a report
//! with its measured values, the pinned tolerance and any CSV tables.
//!
//! Criteria 1–13 run here; the determinism criterion (14) compares two
//! complete runs of `accept` and lives with the integration test.

use crate::artifact::{csv_table, ArtifactDir, Envelope};
use crate::{CliError, Result};
use flatsaddle::extension::{
    extend, fit_slope, prototype_family_member, scan_bilinear_scaling, BilinearScanConfig, Lattice, QuadratureConfig,
    Region, SampledDensity,
};
use flatsaddle::funcore::{sup_norm, DyadicLevel};
use flatsaddle::geometry::{
    gamma, tau, tau_gap, whitney_rectangles, whitney_strips, Amplitude, PhaseSurface, Point2,
};
use flatsaddle::levelband::{check_alternation_certificate, count_bound, partition_level_bands, random_certified_instance, Verdict};
use flatsaddle::wavepacket::{
    axis_angle, build_index, count_profile, decompose, decompose_sampled, dyadic_levels, filter_by_curve,
    fit_decay_constant, fit_orthogonality_constant, geom_inequality_probe, intersection_curve, product_integral,
    tube_fan, windowed_sup, Cube, DecomposeConfig, Frame, PacketIndex, Tube, GEOM_GROWTH_LIMIT,
};
use flatsaddle::{Partition, Point, SmoothFn, Surface};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

// ---------------------------------------------------------------- tolerances

pub const BAND_SAMPLES: usize = 1000;
pub const COVERAGE_TOL: f64 = 1e-10;
pub const PLAIN_FLOOR: i32 = -40;
pub const LOG_FLOOR: i32 = -200;
pub const TREND_LEVELS: [i32; 4] = [25, 50, 100, 200];
pub const TREND_SLOPE: (f64, f64) = (0.3, 0.7);
pub const CERTIFICATE_INSTANCES: usize = 200;
pub const ALGEBRA_SAMPLES: usize = 100_000;
pub const ALGEBRA_TOL: f64 = 1e-12;
pub const SIZE_SAMPLES: usize = 1000;
/// `(ε, ρ, δ, C0)` of the admissible-pair sweeps.
pub const SIZE_SETTINGS: [(f64, i32, i32, u32); 3] = [(0.25, -2, 2, 8), (0.25, -2, 1, 8), (1.0, -2, 0, 8)];
pub const TILING_EXP: i32 = -6;
pub const TWO_OVER_PI_TOL: f64 = 1e-6;
pub const LINEARITY_TOL: f64 = 1e-10;
pub const MODULATION_TOL: f64 = 1e-8;
pub const RECONSTRUCTION_TOL: f64 = 1e-3;
pub const DECAY_LIMIT: f64 = 100.0;
pub const DECAY_STABILITY: f64 = 4.0;
pub const ORTHOGONALITY_LIMIT: f64 = 10.0;
pub const ORTHOGONALITY_SUBSETS: usize = 100;
pub const COEFFICIENT_LIMIT: f64 = 10.0;
pub const COEFFICIENT_DENSITIES: usize = 50;
pub const ENVELOPE_RATIO: f64 = 4.0;
pub const PRODUCT_SPREAD: f64 = 4.0;
pub const BILINEAR_SPREAD: f64 = 10.0;
pub const CURVE_COUNT_LIMIT: f64 = 8.0;
pub const CURVE_PAIRS: usize = 16;
pub const GEOM_GAMMA: f64 = 0.1;

/// `(id, name, runtime budget in seconds)`.
pub const CRITERIA: [(u32, &str, f64); 14] = [
    (1, "partition correctness", 30.0),
    (2, "count bound", 60.0),
    (3, "flat-oscillation trend", 60.0),
    (4, "alternation lemma", 10.0),
    (5, "transversality algebra", 10.0),
    (6, "admissible pairs", 60.0),
    (7, "whitney tilings", 30.0),
    (8, "extension operator", 30.0),
    (9, "wave packets", 600.0),
    (10, "franz bounds", 300.0),
    (11, "bilinear scaling probe", 900.0),
    (12, "intersection-curve count", 120.0),
    (13, "geometric counting probe", 300.0),
    (14, "determinism", f64::INFINITY),
];

/// Criteria that fail for reasons outside the implementation, with the reason.
pub const KNOWN_UNATTAINABLE: [(u32, &str); 1] = [(
    3,
    "the bands of oscflat below 2^-62 next to its zeros 1/(nπ) are narrower than one ulp of x, \
     so no pair of f64 endpoints bounds them; the counts come out 3, 3, 3, 1 instead of 3, 3, 5, 7",
)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub tolerance: String,
    pub measured: BTreeMap<String, Value>,
}

pub struct CriterionRun {
    pub report: CriterionReport,
    /// `(file name, CSV bytes)`
    pub tables: Vec<(String, Vec<u8>)>,
}

struct Builder {
    id: u32,
    measured: BTreeMap<String, Value>,
    tables: Vec<(String, Vec<u8>)>,
}

impl Builder {
    fn new(id: u32) -> Self {
        Builder { id, measured: BTreeMap::new(), tables: Vec::new() }
    }

    fn set(&mut self, key: &str, v: impl Serialize) {
        self.measured.insert(key.to_string(), json!(v));
    }

    fn table(&mut self, suffix: &str, bytes: Vec<u8>) {
        self.tables.push((format!("criterion-{:02}-{suffix}.csv", self.id), bytes));
    }

    fn finish(self, pass: bool, tolerance: impl Into<String>) -> CriterionRun {
        let name = CRITERIA[self.id as usize - 1].1.to_string();
        CriterionRun {
            report: CriterionReport { id: self.id, name, pass, tolerance: tolerance.into(), measured: self.measured },
            tables: self.tables,
        }
    }
}

/// Seed of the `k`-th stochastic component of criterion `id`.
fn sub_seed(seed: u64, id: u32, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(((id as u64) << 16) | k)
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

pub fn run_criterion(id: u32, seed: u64) -> Result<CriterionRun> {
    match id {
        1 => partition_correctness(seed),
        2 => count_bound_holds(seed),
        3 => flat_oscillation_trend(),
        4 => alternation_lemma(seed),
        5 => transversality_algebra(seed),
        6 => admissible_pairs(seed),
        7 => whitney_tilings(),
        8 => extension_operator(seed),
        9 => wave_packets(seed),
        10 => franz_bounds(),
        11 => bilinear_probe(seed),
        12 => curve_count(seed),
        13 => geometric_counting(seed),
        _ => Err(CliError::usage("accept.only", format!("criterion {id} is not run by the suite"))),
    }
}

/// Summary written as `summary.json` by `accept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub seed: u64,
    pub criteria: Vec<CriterionReport>,
    pub known_unattainable: Vec<u32>,
    pub failed: Vec<u32>,
}

/// Runs the criteria, writing one JSON report per criterion, its tables and
/// `summary.json`. Timings go to `on_done` only, so the artifact tree is a
/// pure function of the seed.
pub fn run_suite(
    dir: &ArtifactDir,
    config: &crate::config::AcceptArgs,
    mut on_done: impl FnMut(&CriterionReport, f64),
) -> Result<SuiteSummary> {
    let ids: Vec<u32> = config.only.clone().unwrap_or_else(|| (1..=13).collect());
    let mut reports = Vec::new();
    for id in ids {
        let t = Instant::now();
        let run = run_criterion(id, config.seed)?;
        let secs = t.elapsed().as_secs_f64();
        let slug = run.report.name.replace([' ', '-'], "_");
        let env = Envelope::new("accept", config, run.report.pass, &run.report)?;
        dir.write_json(&format!("criterion-{id:02}-{slug}.json"), &env)?;
        for (name, bytes) in &run.tables {
            dir.write(name, bytes)?;
        }
        on_done(&run.report, secs);
        reports.push(run.report);
    }
    let failed: Vec<u32> = reports.iter().filter(|r| !r.pass).map(|r| r.id).collect();
    let summary = SuiteSummary {
        seed: config.seed,
        criteria: reports,
        known_unattainable: KNOWN_UNATTAINABLE.iter().map(|k| k.0).collect(),
        failed,
    };
    let env = Envelope::new("accept", config, summary.failed.is_empty(), &summary)?;
    dir.write_json("summary.json", &env)?;
    Ok(summary)
}

// ---------------------------------------------------------------- 1–3

/// Band, disjointness and coverage checks of one partition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub intervals: usize,
    /// Intervals with a sample outside `λ/2 < |f| < 4λ` or a sign flip.
    pub band_violations: usize,
    pub overlaps: usize,
    /// Measure of `[a, b]` covered neither by intervals nor by the residual.
    pub uncovered: f64,
}

impl BandCheck {
    pub fn pass(&self, len: f64) -> bool {
        self.band_violations == 0 && self.overlaps == 0 && self.uncovered <= COVERAGE_TOL * len
    }
}

pub fn band_check(f: &SmoothFn, p: &Partition) -> BandCheck {
    let (a, b) = f.domain();
    let mut out = BandCheck { intervals: p.intervals.len(), ..Default::default() };
    for iv in &p.intervals {
        let (l, u) = iv.span;
        let k = iv.level.k as f64;
        let bad = u <= l
            || (0..BAND_SAMPLES).any(|i| {
                let x = l + (u - l) * (i as f64 + 0.5) / BAND_SAMPLES as f64;
                let (s, lg) = f.log_magnitude(x);
                s != iv.sign || !(lg > k - 1.0 && lg < k + 2.0)
            });
        out.band_violations += usize::from(bad);
    }
    let mut pieces: Vec<(f64, f64)> = p.intervals.iter().map(|iv| iv.span).chain(p.residual.iter().copied()).collect();
    pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut cursor = a;
    for (l, u) in pieces {
        if l < cursor - 1e-15 {
            out.overlaps += 1;
        }
        out.uncovered += (l - cursor).max(0.0);
        cursor = cursor.max(u);
    }
    out.uncovered += (b - cursor).max(0.0);
    out
}

/// Per-level counts against the bound: `(level, count, bound)` rows.
pub fn count_rows(f: &SmoothFn, r: usize, p: &Partition) -> Result<Vec<(i32, usize, f64)>> {
    let (a, b) = f.domain();
    let c_r = sup_norm(f, (a, b), r)?;
    Ok(p.counts_per_level(false)
        .into_iter()
        .map(|(k, n)| (k, n, count_bound(r, b - a, c_r, DyadicLevel::new(k))))
        .collect())
}

/// Fixed library keys plus five seeded random polynomials on `[0, 1]`.
fn function_library(seed: u64) -> Result<Vec<SmoothFn>> {
    let mut lib = Vec::new();
    for key in ["monomial:1", "monomial:2", "monomial:3", "oscflat", "exp-flat"] {
        lib.push(SmoothFn::library(key)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..5 {
        let degree = rng.gen_range(3..=6);
        lib.push(SmoothFn::polynomial((0..=degree).map(|_| rng.gen_range(-1.0..1.0)).collect()));
    }
    Ok(lib)
}

fn partition_correctness(seed: u64) -> Result<CriterionRun> {
    let mut b = Builder::new(1);
    let mut rows = Vec::new();
    let mut pass = true;
    for f in function_library(sub_seed(seed, 1, 0))? {
        let p = partition_level_bands(&f, 3, DyadicLevel::new(PLAIN_FLOOR))?;
        let c = band_check(&f, &p);
        let (lo, hi) = f.domain();
        pass &= c.pass(hi - lo);
        rows.push(vec![f.name().to_string(), c.intervals.to_string(), c.band_violations.to_string(), c.overlaps.to_string(), fmt(c.uncovered)]);
    }
    b.set("functions", rows.len());
    b.set("intervals", rows.iter().map(|r| r[1].parse::<usize>().unwrap_or(0)).sum::<usize>());
    b.set("band_violations", rows.iter().map(|r| r[2].parse::<usize>().unwrap_or(0)).sum::<usize>());
    b.table("bands", csv_table(&["function", "intervals", "band_violations", "overlaps", "uncovered"], rows)?);
    Ok(b.finish(pass, format!("λ/2 < |f| < 4λ at {BAND_SAMPLES} samples per interval; no overlap; uncovered ≤ {COVERAGE_TOL:e}·|I|")))
}

fn count_bound_holds(seed: u64) -> Result<CriterionRun> {
    let mut b = Builder::new(2);
    let mut rows = Vec::new();
    let mut violations = 0usize;
    let mut worst: f64 = 0.0;
    let mut cases: Vec<(SmoothFn, i32)> = function_library(sub_seed(seed, 1, 0))?.into_iter().map(|f| (f, PLAIN_FLOOR)).collect();
    cases.push((SmoothFn::library("oscflat")?, LOG_FLOOR));
    for (f, floor) in &cases {
        for r in 1..=3 {
            let p = partition_level_bands(f, r, DyadicLevel::new(*floor))?;
            for (k, n, bound) in count_rows(f, r, &p)? {
                violations += usize::from(n as f64 > bound);
                worst = worst.max(n as f64 / bound);
                rows.push(vec![f.name().to_string(), r.to_string(), floor.to_string(), k.to_string(), n.to_string(), fmt(bound)]);
            }
        }
    }
    b.set("violations", violations);
    b.set("worst_count_over_bound", worst);
    b.table("counts", csv_table(&["function", "r", "lambda_min", "level", "count", "bound"], rows)?);
    Ok(b.finish(violations == 0, "count ≤ 10r(1 + |I| C_r^{1/r} λ^{-1/r}) at every level, r ∈ {1,2,3}"))
}

fn flat_oscillation_trend() -> Result<CriterionRun> {
    let mut b = Builder::new(3);
    let f = SmoothFn::library("oscflat")?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = Vec::new();
    for k in TREND_LEVELS {
        let p = partition_level_bands(&f, 3, DyadicLevel::new(-k))?;
        // intervals of the band at λ itself
        let n = p.intervals.iter().filter(|iv| iv.level.k == -k).count();
        let loglog = (k as f64 * std::f64::consts::LN_2).ln();
        xs.push(loglog);
        ys.push((n.max(1) as f64).ln());
        rows.push(vec![k.to_string(), n.to_string(), p.log_domain.to_string()]);
    }
    let slope = fit_slope(&xs, &ys);
    b.set("counts", rows.iter().map(|r| r[1].parse::<usize>().unwrap_or(0)).collect::<Vec<_>>());
    b.set("slope", slope);
    b.table("counts", csv_table(&["k", "intervals", "log_domain"], rows)?);
    let pass = slope >= TREND_SLOPE.0 && slope <= TREND_SLOPE.1;
    Ok(b.finish(pass, format!("slope of log count on log log(1/λ) in [{}, {}]", TREND_SLOPE.0, TREND_SLOPE.1)))
}

// ---------------------------------------------------------------- 4–7

fn alternation_lemma(seed: u64) -> Result<CriterionRun> {
    let mut b = Builder::new(4);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 4, 0));
    let mut rows = Vec::new();
    let mut bad = 0usize;
    for i in 0..CERTIFICATE_INSTANCES {
        let r = 1 + i % 4;
        let (f, cert) = random_certified_instance(&mut rng, r);
        let v = check_alternation_certificate(&cert, &f)?;
        bad += usize::from(v != Verdict::ValidAndBoundHolds);
        rows.push(vec![i.to_string(), r.to_string(), format!("{v:?}")]);
    }
    b.set("instances", CERTIFICATE_INSTANCES);
    b.set("violations", bad);
    b.table("verdicts", csv_table(&["instance", "r", "verdict"], rows)?);
    Ok(b.finish(bad == 0, "every instance valid-and-bound-holds"))
}

/// Surfaces of the algebra checks, each with the `y`-range to sample.
pub fn algebra_surfaces() -> Result<Vec<(Surface, (f64, f64))>> {
    Ok(vec![
        (PhaseSurface::new(1.0, SmoothFn::library("cubic-sixth")?), (-1.0, 1.0)),
        (PhaseSurface::new(0.3, SmoothFn::library("oscflat")?), (0.05, 1.0)),
        (PhaseSurface::new(2.0, SmoothFn::polynomial(vec![0.1, -0.5, 0.25, 1.5, -0.75])), (0.0, 1.0)),
    ])
}

/// Largest scaled deviations `(Γ − 2(y2−y1)τ, τ-gap − closed form)` over
/// random tuples; each is divided by `1 + |value|`.
pub fn algebra_deviation(s: &Surface, y: (f64, f64), samples: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pt = |rng: &mut ChaCha8Rng| Point2::new(rng.gen_range(-1.0..1.0), rng.gen_range(y.0..y.1));
    let (mut gam, mut gap): (f64, f64) = (0.0, 0.0);
    for _ in 0..samples {
        let (z, z1, z2) = (pt(&mut rng), pt(&mut rng), pt(&mut rng));
        let g = gamma(s, z, z1, z2)?;
        let expect = 2.0 * (z2.y - z1.y) * tau(s, z, z1, z2);
        gam = gam.max((g - expect).abs() / (1.0 + g.abs().max(expect.abs())));
        let closed = s.epsilon / 2.0 * (s.h.deriv(z2.y, 2) - s.h.deriv(z1.y, 2)).abs() * (z2.y - z1.y).abs();
        gap = gap.max((tau_gap(s, z1, z2) - closed).abs() / (1.0 + closed));
    }
    Ok((gam, gap))
}

fn transversality_algebra(seed: u64) -> Result<CriterionRun> {
    let mut b = Builder::new(5);
    let mut worst: (f64, f64) = (0.0, 0.0);
    let mut rows = Vec::new();
    for (i, (s, y)) in algebra_surfaces()?.into_iter().enumerate() {
        let (g, t) = algebra_deviation(&s, y, ALGEBRA_SAMPLES, sub_seed(seed, 5, i as u64))?;
        worst = (worst.0.max(g), worst.1.max(t));
        rows.push(vec![s.h.name().to_string(), fmt(s.epsilon), fmt(g), fmt(t)]);
    }
    b.set("gamma_identity_deviation", worst.0);
    b.set("tau_gap_deviation", worst.1);
    b.set("samples_per_surface", ALGEBRA_SAMPLES);
    b.table("deviations", csv_table(&["h", "epsilon", "gamma_identity", "tau_gap"], rows)?);
    let pass = worst.0 <= ALGEBRA_TOL && worst.1 <= ALGEBRA_TOL;
    Ok(b.finish(pass, format!("both deviations ≤ {ALGEBRA_TOL:e} relative to 1 + |value|")))
}

fn admissible_pairs(seed: u64) -> Result<CriterionRun> {
    let mut b = Builder::new(6);
    let mut rows = Vec::new();
    let mut pass = true;
    let mut total = 0usize;
    for (i, &(eps, rho, delta, c0)) in SIZE_SETTINGS.iter().enumerate() {
        let s = PhaseSurface::cubic(eps, SmoothFn::library("cubic-sixth")?)?;
        let sw = flatsaddle::geometry::sizeofdeltas_sweep(
            &s,
            DyadicLevel::new(rho),
            c0,
            DyadicLevel::new(delta),
            SIZE_SAMPLES,
            sub_seed(seed, 6, i as u64),
        )?;
        pass &= sw.pairs > 0 && sw.failures == 0;
        total += sw.pairs;
        rows.push(vec![
            fmt(eps),
            format!("2^{rho}"),
            format!("2^{delta}"),
            c0.to_string(),
            sw.pairs.to_string(),
            sw.failures.to_string(),
            fmt(sw.small.0),
            fmt(sw.small.1),
            fmt(sw.large.0),
            fmt(sw.large.1),
        ]);
    }
    b.set("pairs", total);
    b.table(
        "sweeps",
        csv_table(&["epsilon", "rho", "delta", "c0", "pairs", "failures", "small_min", "small_max", "large_min", "large_max"], rows)?,
    );
    Ok(b.finish(pass, format!("small ratio in [1/8, 8] and large ratio in [1/1000, 1000] at {SIZE_SAMPLES} samples per pair")))
}

/// Cells of `[-1,1)²` at resolution `2^cell_exp` (finer strips inside)
/// whose coverage by strip pairs differs from "once iff at least two cells
/// apart".
pub fn strip_tiling_mismatches(c0: u32, cell_exp: i32) -> Result<usize> {
    let sub_exp = (c0 / 8).trailing_zeros() as i32;
    let fine_exp = cell_exp - sub_exp;
    let n = 2usize << (-fine_exp);
    let off = (n / 2) as i64;
    let mut cover = vec![0u8; n * n];
    for len_exp in cell_exp..=-1 {
        let rho = DyadicLevel::new(len_exp - sub_exp);
        let w = 1i64 << (rho.k - fine_exp);
        for p in whitney_strips(rho, c0)? {
            for a in p.j1 * w..(p.j1 + 1) * w {
                for c in p.j2 * w..(p.j2 + 1) * w {
                    let i = ((a + off) as usize) * n + (c + off) as usize;
                    cover[i] = cover[i].saturating_add(1);
                }
            }
        }
    }
    let per_cell = 1usize << sub_exp;
    let mut bad = 0;
    for a in 0..n {
        for c in 0..n {
            let expect = u8::from((a / per_cell).abs_diff(c / per_cell) >= 2);
            bad += usize::from(cover[a * n + c] != expect);
        }
    }
    Ok(bad)
}

/// Same check for rectangle pairs of `[-1,1) × [0,1/4)` in 4D.
pub fn rectangle_tiling_mismatches(cell_exp: i32) -> Result<usize> {
    let cell = 2f64.powi(cell_exp);
    let nx = (2.0 / cell) as usize;
    let ny = (0.25 / cell) as usize;
    let idx = |a: usize, b: usize, c: usize, d: usize| ((a * ny + b) * nx + c) * ny + d;
    let mut cover = vec![0u8; nx * ny * nx * ny];
    let depth = (-cell_exp) as u32;
    for j1 in 1..=depth {
        for j2 in 0..=depth {
            for (w1, w2) in whitney_rectangles((-1.0, 1.0), DyadicLevel::new(-2), j1, j2) {
                let xr = |r: (f64, f64)| (((r.0 + 1.0) / cell) as usize, ((r.1 + 1.0) / cell) as usize);
                let yr = |r: (f64, f64)| ((r.0 / cell) as usize, (r.1 / cell) as usize);
                let (a0, a1) = xr(w1.x);
                let (b0, b1) = yr(w1.y);
                let (c0, c1) = xr(w2.x);
                let (d0, d1) = yr(w2.y);
                for a in a0..a1 {
                    for bb in b0..b1 {
                        for c in c0..c1 {
                            for d in d0..d1 {
                                let i = idx(a, bb, c, d);
                                cover[i] = cover[i].saturating_add(1);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut bad = 0;
    for a in 0..nx {
        for c in 0..nx {
            for bb in 0..ny {
                for d in 0..ny {
                    let expect = u8::from(a.abs_diff(c) >= 2 && bb.abs_diff(d) >= 2);
                    bad += usize::from(cover[idx(a, bb, c, d)] != expect);
                }
            }
        }
    }
    Ok(bad)
}

fn whitney_tilings() -> Result<CriterionRun> {
    let mut b = Builder::new(7);
    let s8 = strip_tiling_mismatches(8, TILING_EXP)?;
    let s16 = strip_tiling_mismatches(16, TILING_EXP)?;
    let rect = rectangle_tiling_mismatches(TILING_EXP)?;
    b.set("strip_mismatches_c0_8", s8);
    b.set("strip_mismatches_c0_16", s16);
    b.set("rectangle_mismatches", rect);
    b.set("resolution", format!("2^{TILING_EXP}"));
    Ok(b.finish(s8 + s16 + rect == 0, "every off-diagonal cell pair covered exactly once, adjacent pairs never"))
}

// ---------------------------------------------------------------- 8

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn extension_operator(seed: u64) -> Result<CriterionRun> {
    let mut b = Builder::new(8);
    let cubic_sixth = SmoothFn::library("cubic-sixth")?;
    let saddle = PhaseSurface::new(0.0, cubic_sixth.clone());
    let cubic = PhaseSurface::new(1.0, cubic_sixth);
    let qc = QuadratureConfig::default();

    let unit = SampledDensity::constant(Region::rect((0.0, 1.0), (0.0, 1.0)), 1, 1, c(1.0, 0.0));
    let v = extend(&saddle, &unit, &Lattice::single([PI, 0.0, 0.0]), &qc)?.values[0];
    let closed = (v.norm() - 2.0 / PI).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 8, 0));
    let curved = Region::sliding("curved", (0.5, 1.0), 0.3, |y| (0.1 - y * y / 2.0, -y));
    let f = SampledDensity::random_unit(curved.clone(), 3, 3, &mut rng);
    let g = SampledDensity::random_unit(curved, 3, 3, &mut rng);
    let (al, be) = (c(0.7, -1.3), c(-2.0, 0.4));
    let h = f.combine(al, &g, be)?;
    let lat = Lattice::centred([25.0, 25.0, 25.0], [4; 3]);
    let lc = QuadratureConfig { min_panels: 2, ..Default::default() };
    let (ef, eg, eh) = (extend(&cubic, &f, &lat, &lc)?, extend(&cubic, &g, &lat, &lc)?, extend(&cubic, &h, &lat, &lc)?);
    let scale = eh.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let linearity = (0..lat.len()).map(|n| (eh.values[n] - (al * ef.values[n] + be * eg.values[n])).norm()).fold(0.0, f64::max) / scale;

    let m = SampledDensity::random_unit(Region::rect((-0.5, 0.5), (0.0, 1.0)), 3, 2, &mut rng);
    let (a, bb) = (4.0, -9.0);
    let base = Lattice::rect([-10.0, -10.0, -10.0], [5.0, 5.0, 5.0], [5, 5, 5]);
    let shifted = Lattice { origin: [base.origin[0] + a, base.origin[1] + bb, base.origin[2]], ..base };
    let g1 = extend(&cubic, &m.modulate(a, bb), &base, &qc)?;
    let g2 = extend(&cubic, &m, &shifted, &qc)?;
    let modulation = g1.values.iter().zip(&g2.values).map(|(u, w)| (u - w).norm()).fold(0.0, f64::max);

    b.set("two_over_pi_error", closed);
    b.set("linearity_error", linearity);
    b.set("modulation_error", modulation);
    let pass = closed <= TWO_OVER_PI_TOL && linearity <= LINEARITY_TOL && modulation <= MODULATION_TOL;
    Ok(b.finish(
        pass,
        format!("| |Eg(π,0,0)| − 2/π | ≤ {TWO_OVER_PI_TOL:e}; linearity ≤ {LINEARITY_TOL:e} relative; modulation ≤ {MODULATION_TOL:e}"),
    ))
}

// ---------------------------------------------------------------- 9–10

fn packet_surface() -> Result<Surface> {
    Ok(PhaseSurface::new(0.5, SmoothFn::library("cubic-sixth")?))
}

fn packet_patch() -> Region {
    Region::rect((0.1, 0.35), (0.2, 0.45))
}

fn wave_packets(seed: u64) -> Result<CriterionRun> {
    let mut b = Builder::new(9);
    let s = packet_surface()?;
    let smooth_s = s.clone().with_window((0.1, 0.35), (0.2, 0.45)).with_amplitude(Amplitude::Bump);
    let smooth_f = SampledDensity::constant(packet_patch(), 4, 4, c(1.0, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 9, 0));
    let random_f = SampledDensity::random_unit(packet_patch(), 8, 8, &mut rng);

    let mut residual: f64 = 0.0;
    let mut decay = Vec::new();
    let mut orth = 0.0;
    let mut rows = Vec::new();
    for r in [8.0, 16.0] {
        let cfg = DecomposeConfig { r, ..Default::default() };
        let ds = decompose_sampled(&smooth_s, &smooth_f, &cfg)?;
        let dr = decompose_sampled(&s, &random_f, &cfg)?;
        residual = residual.max(ds.residual).max(dr.residual);
        let d = fit_decay_constant(&dr, 6, 150, 8.0, sub_seed(seed, 9, 1))?;
        decay.push(d);
        if r == 8.0 {
            orth = fit_orthogonality_constant(&dr, ORTHOGONALITY_SUBSETS, sub_seed(seed, 9, 2))?;
        }
        rows.push(vec![fmt(r), fmt(ds.residual), fmt(dr.residual), fmt(d)]);
    }
    b.table("reconstruction", csv_table(&["R", "smooth_residual", "random_residual", "decay_constant"], rows)?);

    let cfg = DecomposeConfig::default();
    let mut ratio: f64 = 0.0;
    let mut rows = Vec::new();
    for i in 0..COEFFICIENT_DENSITIES {
        let f = SampledDensity::random_unit(packet_patch(), 8, 8, &mut rng);
        let d = decompose_sampled(&s, &f, &cfg)?;
        let q = d.coefficient_l2() / d.density_l2();
        ratio = ratio.max(q);
        rows.push(vec![i.to_string(), fmt(q)]);
    }
    b.table("coefficients", csv_table(&["density", "coefficient_ratio"], rows)?);

    let dmax = decay.iter().cloned().fold(0.0, f64::max);
    let dmin = decay.iter().cloned().fold(f64::INFINITY, f64::min);
    b.set("reconstruction_residual", residual);
    b.set("decay_constants", &decay);
    b.set("orthogonality_constant", orth);
    b.set("coefficient_constant", ratio);
    let pass = residual <= RECONSTRUCTION_TOL
        && dmax <= DECAY_LIMIT
        && dmax <= DECAY_STABILITY * dmin
        && orth <= ORTHOGONALITY_LIMIT
        && ratio <= COEFFICIENT_LIMIT;
    Ok(b.finish(
        pass,
        format!(
            "residual ≤ {RECONSTRUCTION_TOL:e} (R = 8, 16); decay C ≤ {DECAY_LIMIT} and within ×{DECAY_STABILITY} across R; \
             orthogonality C ≤ {ORTHOGONALITY_LIMIT} over {ORTHOGONALITY_SUBSETS} subsets; coefficient C ≤ {COEFFICIENT_LIMIT} over {COEFFICIENT_DENSITIES} densities"
        ),
    ))
}

fn bump(t: f64) -> f64 {
    if t.abs() < 1.0 {
        (-1.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

/// Decomposition of a bump of half-width `0.6/R` centred at `v`.
fn bump_decomposition(
    s: &Surface,
    v: [f64; 2],
    cfg: DecomposeConfig,
) -> Result<flatsaddle::wavepacket::Decomposition<Surface>> {
    let r = cfg.r;
    let dens = move |z: [f64; 2]| c(bump((z[0] - v[0]) * r / 0.6) * bump((z[1] - v[1]) * r / 0.6), 0.0);
    let w = 0.6 / r;
    Ok(decompose(s, &dens, ([v[0] - w, v[1] - w], [v[0] + w, v[1] + w]), &cfg)?)
}

fn franz_bounds() -> Result<CriterionRun> {
    let mut b = Builder::new(10);
    let s = packet_surface()?;
    let mut rows = Vec::new();
    let mut envelope: f64 = 0.0;
    for r in [8.0, 16.0] {
        let v = [0.25, 0.25];
        let d = bump_decomposition(&s, v, DecomposeConfig { r, window: 12, ..Default::default() })?;
        let dir = d
            .directions()
            .iter()
            .position(|w| (w[0] - v[0]).abs() < 1e-9 && (w[1] - v[1]).abs() < 1e-9)
            .ok_or(CliError::Core(flatsaddle::Error::UndefinedPacket))?;
        let q = Cube { centre: [0.0; 3], side: r };
        let base = windowed_sup(&d, dir, &q, 0.0, 13)?;
        for dd in [0.0, 2.0, 8.0] {
            let w = if dd == 0.0 { base } else { windowed_sup(&d, dir, &q, dd, 13)? };
            let ratio = w.scaled / base.scaled;
            envelope = envelope.max(ratio);
            rows.push(vec!["windowed-sup".into(), fmt(r), fmt(dd), w.packets.to_string(), fmt(w.sup), fmt(ratio)]);
        }
    }
    let mut products = Vec::new();
    for r in [8.0, 16.0, 32.0] {
        let cfg = DecomposeConfig { r, ..Default::default() };
        let pick = |v: [f64; 2]| -> Result<_> {
            let d = bump_decomposition(&s, v, cfg)?;
            let k = d
                .packets
                .iter()
                .position(|p| p.index.eta == [0.0, 0.0] && (p.index.v[0] - v[0]).abs() < 1e-9 && (p.index.v[1] - v[1]).abs() < 1e-9)
                .ok_or(CliError::Core(flatsaddle::Error::UndefinedPacket))?;
            Ok((d, k))
        };
        let (d1, k1) = pick([0.0, 0.0])?;
        let (d2, k2) = pick([0.5, 0.5])?;
        let integral = product_integral(&d1, k1, &d2, k2)?;
        let angle = axis_angle(&d1.tube(k1), &d2.tube(k2));
        products.push(integral / r);
        rows.push(vec!["product".into(), fmt(r), fmt(angle), String::new(), fmt(integral), fmt(integral / r)]);
    }
    let spread = products.iter().cloned().fold(0.0, f64::max) / products.iter().cloned().fold(f64::INFINITY, f64::min);
    b.set("envelope_ratio", envelope);
    b.set("product_over_r", &products);
    b.set("product_spread", spread);
    b.table("franz", csv_table(&["part", "R", "d_or_angle", "packets", "value", "normalised"], rows)?);
    let pass = envelope <= ENVELOPE_RATIO && spread <= PRODUCT_SPREAD;
    Ok(b.finish(
        pass,
        format!(
            "sup·R(1+d) ≤ {ENVELOPE_RATIO} × its d = 0 value for d ∈ {{0, 2, 8}}, R ∈ {{8, 16}}; \
             ∫|p1 p2|/R within ×{PRODUCT_SPREAD} over R ∈ {{8, 16, 32}}"
        ),
    ))
}

// ---------------------------------------------------------------- 11–13

fn bilinear_probe(seed: u64) -> Result<CriterionRun> {
    let mut b = Builder::new(11);
    let s = PhaseSurface::new(1.0, SmoothFn::library("cubic-sixth")?);
    let deltas: Vec<DyadicLevel> = (1..=4).map(|k| DyadicLevel::new(-k)).collect();
    let res = scan_bilinear_scaling(&s, &deltas, sub_seed(seed, 11, 0), &BilinearScanConfig::default())?;
    let spread = res.normalized_spread();
    b.set("normalized_spread", spread);
    b.set("slope", res.slope);
    b.set("target_exponent", res.target_exponent);
    b.set("truncation", &res.truncation);
    b.table("scan", res.to_csv().into_bytes());
    Ok(b.finish(spread <= BILINEAR_SPREAD, format!("max/min of norm(δ)·δ^(-1/2) ≤ {BILINEAR_SPREAD}")))
}

fn curve_count(seed: u64) -> Result<CriterionRun> {
    let mut b = Builder::new(12);
    let s = packet_surface()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 12, 0));
    let mut rows = Vec::new();
    let mut fitted: f64 = 0.0;
    for delta in [0.25, 0.125] {
        for r in [16.0, 32.0] {
            let p = prototype_family_member(&s, delta, 0.5, 1.0);
            let (c2, top) = (0.25, 0.5 * delta);
            let lat = build_index(([0.0, 0.0], [c2, top]), r, 1.0, 0);
            let idx: Vec<PacketIndex> = lat
                .v
                .iter()
                .filter(|v| p.in_u1_s(Point::new(v[0], v[1])))
                .map(|&v| PacketIndex { eta: [0.0; 2], v, r, kappa: 1.0, frame: Frame::Standard })
                .collect();
            let mut worst = 0usize;
            for _ in 0..CURVE_PAIRS {
                let (a, bb) = (p.sample_s(1, &mut rng), p.sample_s(2, &mut rng));
                let (v1, v2) = ([a.x, a.y], [bb.x, bb.y]);
                let pad = 1.0 / r;
                let window = ([-v1[0] - pad, -v1[1] - pad], [c2 - v1[0] + pad, top - v1[1] + pad]);
                let curve = intersection_curve(&p, v1, v2, 0.25 / r, window);
                worst = worst.max(filter_by_curve(&p, &idx, &curve.points, v1, r).directions.len());
            }
            let cst = worst as f64 / (delta * r);
            fitted = fitted.max(cst);
            rows.push(vec![fmt(delta), fmt(r), idx.len().to_string(), worst.to_string(), fmt(cst)]);
        }
    }
    b.set("fitted_constant", fitted);
    b.table("curves", csv_table(&["delta", "R", "directions", "max_selected", "constant"], rows)?);
    Ok(b.finish(fitted <= CURVE_COUNT_LIMIT, format!("one C ≤ {CURVE_COUNT_LIMIT} with |[W]| ≤ C δR over (δ, R) ∈ {{1/4, 1/8}} × {{16, 32}}")))
}

/// Shell mask of a tube and a cube by per-height cross-sections: the radial
/// distance over the cross-section at height τ ranges between the distance
/// from the axis point to the square and the farthest corner; the minimum
/// over τ is found by ternary search (it is convex in τ), the maximum sits
/// at an end of the τ range.
pub fn brute_shell_mask(t: &Tube, q: &Cube, inflate: f64, nu_max: u32) -> u32 {
    let (a, b) = (t.index.frame.apply(q.lo()), t.index.frame.apply(q.hi()));
    let lo = [0, 1, 2].map(|i| a[i].min(b[i]));
    let hi = [0, 1, 2].map(|i| a[i].max(b[i]));
    let cap = t.half_length();
    let (t0, t1) = (lo[2].max(-cap), hi[2].min(cap));
    if t0 > t1 {
        return 0;
    }
    let centre = |tau: f64| [t.index.eta[0] - tau * t.gradient[0], t.index.eta[1] - tau * t.gradient[1]];
    let near = |tau: f64| {
        let c = centre(tau);
        let dx = (lo[0] - c[0]).max(0.0).max(c[0] - hi[0]);
        let dy = (lo[1] - c[1]).max(0.0).max(c[1] - hi[1]);
        dx.hypot(dy)
    };
    let far = |tau: f64| {
        let c = centre(tau);
        let dx = (lo[0] - c[0]).abs().max((hi[0] - c[0]).abs());
        let dy = (lo[1] - c[1]).abs().max((hi[1] - c[1]).abs());
        dx.hypot(dy)
    };
    let (mut l, mut h) = (t0, t1);
    for _ in 0..200 {
        let (m1, m2) = (l + (h - l) / 3.0, h - (h - l) / 3.0);
        if near(m1) <= near(m2) {
            h = m2;
        } else {
            l = m1;
        }
    }
    let dmin = near(0.5 * (l + h)).min(near(t0)).min(near(t1));
    let dmax = far(t0).max(far(t1));
    let rho = inflate * t.radius();
    let mut mask = 0;
    for (i, nu) in dyadic_levels(nu_max).into_iter().enumerate() {
        let (inner, outer) = if nu == 1 {
            (-1.0, rho)
        } else if nu == nu_max {
            (0.5 * nu as f64 * rho, f64::INFINITY)
        } else {
            (0.5 * nu as f64 * rho, nu as f64 * rho)
        };
        if dmin <= outer && dmax > inner {
            mask |= 1 << i;
        }
    }
    mask
}

/// Cells `(cube, family, level)` where `count_profile` and the brute-force
/// counter disagree.
pub fn brute_force_disagreements(families: [&[Tube]; 2], cubes: &[Cube], gamma: f64, r_prime: f64) -> Result<usize> {
    let prof = count_profile(families, cubes, gamma, r_prime)?;
    let mut bad = 0;
    for (q, cube) in cubes.iter().enumerate() {
        let masks: [Vec<u32>; 2] = [0, 1].map(|j| families[j].iter().map(|t| brute_shell_mask(t, cube, prof.inflate, prof.nu_max)).collect());
        for (j, m) in masks.iter().enumerate() {
            for l in 0..prof.levels() {
                let brute = m.iter().filter(|&&x| (x >> l) & 1 == 1).count() as u32;
                bad += usize::from(prof.count(q, j, l) != brute);
            }
        }
    }
    Ok(bad)
}

fn random_incidence_instance(seed: u64) -> (Vec<Tube>, Vec<Tube>, Vec<Cube>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = 4.0;
    let mk = |rng: &mut ChaCha8Rng, frame| {
        let eta = [rng.gen_range(-6..=6) as f64 * r, rng.gen_range(-6..=6) as f64 * r];
        let v = [rng.gen_range(-4..=4) as f64 / r, rng.gen_range(-4..=4) as f64 / r];
        Tube { index: PacketIndex { eta, v, r, kappa: 1.0, frame }, gradient: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)] }
    };
    let fam1: Vec<Tube> = (0..300).map(|_| mk(&mut rng, Frame::Standard)).collect();
    let fam2: Vec<Tube> = (0..200).map(|_| mk(&mut rng, Frame::Swapped)).collect();
    let cubes = (0..1000)
        .map(|_| Cube { centre: [0, 1, 2].map(|_| (rng.gen_range(-40.0..40.0) / r).round() * r), side: r })
        .collect();
    (fam1, fam2, cubes)
}

fn geometric_counting(seed: u64) -> Result<CriterionRun> {
    let mut b = Builder::new(13);
    let s = packet_surface()?;
    let fan_seed = sub_seed(seed, 13, 0);
    let pairs = [(1u32, 1u32), (1, 4), (2, 2)];
    let mut rows = Vec::new();
    let mut series: BTreeMap<(u32, u32), Vec<(f64, f64)>> = BTreeMap::new();
    let mut disagreements = 0usize;
    for rp in [8.0, 16.0, 32.0] {
        let fan = tube_fan(&s, rp, GEOM_GAMMA, fan_seed)?;
        let prof = count_profile([&fan.tubes1, &fan.tubes2], &fan.cubes, GEOM_GAMMA, rp)?;
        for &(n1, n2) in &pairs {
            let g = geom_inequality_probe(&fan, &prof, n1, n2)?;
            if let Some(q) = g.ratio {
                series.entry((n1, n2)).or_default().push((rp.ln(), q.ln()));
            }
            rows.push(vec![
                fmt(rp),
                n1.to_string(),
                n2.to_string(),
                g.tubes1.to_string(),
                g.tubes2.to_string(),
                g.cubes.to_string(),
                fmt(g.left),
                fmt(g.right),
                g.ratio.map(fmt).unwrap_or_default(),
            ]);
        }
        if rp == 8.0 {
            // exact agreement on a strided subset of the fixture's cubes
            let sub: Vec<Cube> = fan.cubes.iter().step_by(13).copied().collect();
            disagreements += brute_force_disagreements([&fan.tubes1, &fan.tubes2], &sub, GEOM_GAMMA, rp)?;
            b.table("incidence", prof.to_csv().into_bytes());
        }
    }
    let (f1, f2, cubes) = random_incidence_instance(sub_seed(seed, 13, 1));
    disagreements += brute_force_disagreements([&f1, &f2], &cubes, GEOM_GAMMA, 16.0)?;

    let mut slopes = BTreeMap::new();
    let mut pass = disagreements == 0;
    for &(n1, n2) in &pairs {
        let pts = series.get(&(n1, n2)).cloned().unwrap_or_default();
        let slope = (pts.len() >= 2).then(|| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            fit_slope(&xs, &ys)
        });
        // pairs whose ratio is never defined on the fixture are reported only
        if let Some(sl) = slope {
            pass &= sl <= GEOM_GROWTH_LIMIT;
        }
        slopes.insert(format!("nu{n1}_nu{n2}"), slope);
    }
    pass &= slopes.get("nu1_nu1").is_some_and(|s| s.is_some());
    b.set("growth_exponents", &slopes);
    b.set("brute_force_disagreements", disagreements);
    b.table("ratios", csv_table(&["R_prime", "nu1", "nu2", "tubes1", "tubes2", "cubes", "left", "right", "ratio"], rows)?);
    Ok(b.finish(
        pass,
        format!("fitted growth of left/right in R' ≤ {GEOM_GROWTH_LIMIT} over R' ∈ {{8, 16, 32}}; brute-force counts agree exactly"),
    ))
}
