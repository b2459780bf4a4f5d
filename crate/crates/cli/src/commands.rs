//! One runner per subcommand. Each writes `report.json` (enveloped) plus its
//! CSV tables into the output directory and returns the console summary.

use crate::acceptance::{
    algebra_deviation, algebra_surfaces, band_check, count_rows, rectangle_tiling_mismatches, run_suite,
    strip_tiling_mismatches, BILINEAR_SPREAD, COEFFICIENT_LIMIT, DECAY_LIMIT, KNOWN_UNATTAINABLE, ORTHOGONALITY_LIMIT,
    ORTHOGONALITY_SUBSETS, RECONSTRUCTION_TOL,
};
use crate::artifact::{csv_table, ArtifactDir, Envelope};
use crate::config::*;
use crate::{CliError, Result};
use flatsaddle::extension::{
    extend, scan_bilinear_scaling, scan_strip_scaling, strips_from_partition, write_field, BilinearForm,
    BilinearScanConfig, Lattice, QuadratureConfig, Region, SampledDensity, StripScanConfig,
};
use flatsaddle::funcore::DyadicLevel;
use flatsaddle::geometry::{check_sizeofdeltas, enumerate_admissible_pairs, whitney_strips, Amplitude, PairKind, PhaseSurface};
use flatsaddle::levelband::{
    check_alternation_certificate, partition_level_bands, random_certified_instance, sjolin_partial_sums,
    AlternationCertificate, Parity, Verdict,
};
use flatsaddle::wavepacket::{
    count_profile, decompose_sampled, fit_decay_constant, fit_orthogonality_constant, geom_inequality_probe,
    geom_probe_sweep, tube_fan,
};
use flatsaddle::{SmoothFn, Surface};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

/// What a run reports back to the console.
pub struct Outcome {
    pub pass: bool,
    pub lines: Vec<String>,
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn report<R: Serialize>(dir: &ArtifactDir, cfg: &ExperimentConfig, pass: bool, result: &R) -> Result<()> {
    dir.write_json("report.json", &Envelope::new(cfg.name(), cfg, pass, result)?)?;
    Ok(())
}

fn level(v: f64) -> DyadicLevel {
    // validated as an exact power of two
    DyadicLevel::floor_of(v).unwrap_or(DyadicLevel::new(0))
}

pub fn run(cfg: &ExperimentConfig, dir: &ArtifactDir) -> Result<Outcome> {
    match cfg {
        ExperimentConfig::Partition(a) => partition(cfg, a, dir),
        ExperimentConfig::Certificate(a) => certificate(cfg, a, dir),
        ExperimentConfig::Sjolin(a) => sjolin(cfg, a, dir),
        ExperimentConfig::Geometry(g) => match &g.action {
            GeometryAction::CheckSizeofdeltas(a) => sizeofdeltas(cfg, a, dir),
            GeometryAction::Algebra(a) => algebra(cfg, a, dir),
            GeometryAction::Whitney(a) => whitney(cfg, a, dir),
        },
        ExperimentConfig::Admissible(a) => admissible(cfg, a, dir),
        ExperimentConfig::Extend(a) => extension(cfg, a, dir),
        ExperimentConfig::ScanBilinear(a) => scan_bilinear(cfg, a, dir),
        ExperimentConfig::ScanStrip(a) => scan_strip(cfg, a, dir),
        ExperimentConfig::Wavepacket(w) => match &w.action {
            WavepacketAction::Decompose(a) => packet_manifest(cfg, a, dir),
            WavepacketAction::Check(a) => packet_checks(cfg, a, dir),
            WavepacketAction::Count(a) => incidence(cfg, a, dir),
            WavepacketAction::GeomProbe(a) => single_probe(cfg, a, dir),
        },
        ExperimentConfig::GeomProbe(a) => probe_sweep(cfg, a, dir),
        ExperimentConfig::Accept(a) => accept(a, dir),
    }
}

// ---------------------------------------------------------------- 1D

fn partition(cfg: &ExperimentConfig, a: &PartitionArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let f = SmoothFn::library(&a.function)?;
    let p = partition_level_bands(&f, a.r, DyadicLevel::new(a.lambda_min))?;
    let check = band_check(&f, &p);
    let counts = count_rows(&f, a.r, &p)?;
    let over = counts.iter().filter(|(_, n, b)| *n as f64 > *b).count();
    let (lo, hi) = f.domain();
    let pass = check.pass(hi - lo) && over == 0;
    let intervals = p.intervals.iter().map(|iv| {
        vec![
            iv.level.k.to_string(),
            iv.iota.to_string(),
            fmt(iv.span.0),
            fmt(iv.span.1),
            iv.sign.to_string(),
            iv.is_boundary.to_string(),
        ]
    });
    dir.write("intervals.csv", &csv_table(&["level", "iota", "l", "u", "sign", "boundary"], intervals)?)?;
    let rows = counts.iter().map(|(k, n, b)| vec![k.to_string(), n.to_string(), fmt(*b)]);
    dir.write("counts.csv", &csv_table(&["level", "count", "bound"], rows)?)?;
    let result = json!({
        "partition": p.report(f.name(), a.r),
        "band_check": check,
        "levels_over_bound": over,
    });
    report(dir, cfg, pass, &result)?;
    Ok(Outcome {
        pass,
        lines: vec![format!(
            "{}: {} intervals over {} levels, {} band violations, {} levels over the bound{}",
            f.name(),
            p.intervals.len(),
            counts.len(),
            check.band_violations,
            over,
            if p.log_domain { " (log domain)" } else { "" }
        )],
    })
}

fn certificate(cfg: &ExperimentConfig, a: &CertificateArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let mut rows = Vec::new();
    if let (Some(points), Some(key)) = (&a.points, &a.function) {
        let f = SmoothFn::library(key)?;
        let parity = match a.parity {
            ParityArg::EvenFirst => Parity::EvenFirst,
            ParityArg::OddFirst => Parity::OddFirst,
        };
        let cert = AlternationCertificate::new(points.clone(), a.pivot, a.gap, parity);
        let v = check_alternation_certificate(&cert, &f)?;
        rows.push((0usize, points.len() - 1, v));
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed.unwrap_or_default());
        for i in 0..a.instances {
            let r = 1 + i % a.r_max;
            let (f, cert) = random_certified_instance(&mut rng, r);
            rows.push((i, r, check_alternation_certificate(&cert, &f)?));
        }
    }
    let tally = |want: Verdict| rows.iter().filter(|r| r.2 == want).count();
    let (good, violated, invalid) = (tally(Verdict::ValidAndBoundHolds), tally(Verdict::ValidButBoundViolated), tally(Verdict::Invalid));
    let pass = good == rows.len();
    let table = rows.iter().map(|(i, r, v)| vec![i.to_string(), r.to_string(), serde_json::to_value(v).map(|x| x.as_str().unwrap_or_default().to_string()).unwrap_or_default()]);
    dir.write("verdicts.csv", &csv_table(&["instance", "r", "verdict"], table)?)?;
    let verdicts: Vec<Verdict> = rows.iter().map(|r| r.2).collect();
    report(dir, cfg, pass, &json!({ "verdicts": verdicts, "valid_and_bound_holds": good, "bound_violated": violated, "invalid": invalid }))?;
    Ok(Outcome { pass, lines: vec![format!("{} certificates: {good} hold, {violated} violate the bound, {invalid} invalid", rows.len())] })
}

fn sjolin(cfg: &ExperimentConfig, a: &SjolinArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let f = SmoothFn::library(&a.function)?;
    let sums = sjolin_partial_sums(&f, a.eps, a.n)?;
    let pass = sums.iter().all(|s| s.is_finite());
    let rows = sums.iter().enumerate().map(|(n, s)| vec![(n + 1).to_string(), fmt(*s)]);
    dir.write("partial_sums.csv", &csv_table(&["components", "partial_sum"], rows)?)?;
    report(dir, cfg, pass, &json!({ "function": f.name(), "eps": a.eps, "partial_sums": sums }))?;
    let last = sums.last().copied().unwrap_or(0.0);
    Ok(Outcome { pass, lines: vec![format!("{}: {} components, partial sum {last:.6e}", f.name(), sums.len())] })
}

// ---------------------------------------------------------------- geometry

fn cubic_surface(key: &str, eps: f64) -> Result<Surface> {
    Ok(PhaseSurface::cubic(eps, SmoothFn::library(key)?)?)
}

fn kinds(k: KindArg) -> Vec<PairKind> {
    match k {
        KindArg::Type1 => vec![PairKind::Type1],
        KindArg::Type2 => vec![PairKind::Type2],
        KindArg::Both => vec![PairKind::Type1, PairKind::Type2],
    }
}

fn kind_name(k: PairKind) -> &'static str {
    match k {
        PairKind::Type1 => "type1",
        PairKind::Type2 => "type2",
    }
}

fn sizeofdeltas(cfg: &ExperimentConfig, a: &SizeArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let s = cubic_surface(&a.surface, a.eps)?;
    let (rho, delta) = (level(a.rho), level(a.delta));
    let mut rows = Vec::new();
    let (mut pairs, mut failures) = (0usize, 0usize);
    // the same per-pair streams as the library sweep
    for (k, sp) in whitney_strips(rho, a.c0)?.into_iter().enumerate() {
        for (t, kind) in [PairKind::Type1, PairKind::Type2].into_iter().enumerate() {
            for (i, p) in enumerate_admissible_pairs(sp, &s, delta, kind)?.enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                rng.set_stream(((k as u64) << 33) | ((t as u64) << 32) | i as u64);
                let st = check_sizeofdeltas(&p, &s, a.n, &mut rng)?;
                pairs += 1;
                failures += usize::from(!st.pass);
                rows.push(vec![
                    sp.j1.to_string(),
                    sp.j2.to_string(),
                    kind_name(kind).to_string(),
                    i.to_string(),
                    fmt(st.small.0),
                    fmt(st.small.1),
                    fmt(st.large.0),
                    fmt(st.large.1),
                    st.pass.to_string(),
                ]);
            }
        }
    }
    dir.write(
        "pairs.csv",
        &csv_table(&["j1", "j2", "kind", "pair", "small_min", "small_max", "large_min", "large_max", "pass"], rows)?,
    )?;
    let pass = pairs > 0 && failures == 0;
    report(dir, cfg, pass, &json!({ "pairs": pairs, "failures": failures }))?;
    Ok(Outcome { pass, lines: vec![format!("{pairs} admissible pairs, {failures} outside the size brackets")] })
}

fn algebra(cfg: &ExperimentConfig, a: &AlgebraArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut pass = true;
    for (i, (s, y)) in algebra_surfaces()?.into_iter().enumerate() {
        let (g, t) = algebra_deviation(&s, y, a.samples, a.seed.wrapping_add(i as u64))?;
        pass &= g <= crate::acceptance::ALGEBRA_TOL && t <= crate::acceptance::ALGEBRA_TOL;
        lines.push(format!("{} (ε = {}): Γ identity {g:.2e}, τ gap {t:.2e}", s.h.name(), s.epsilon));
        rows.push(vec![s.h.name().to_string(), fmt(s.epsilon), fmt(g), fmt(t)]);
    }
    dir.write("deviations.csv", &csv_table(&["h", "epsilon", "gamma_identity", "tau_gap"], rows.clone())?)?;
    report(dir, cfg, pass, &rows)?;
    Ok(Outcome { pass, lines })
}

fn whitney(cfg: &ExperimentConfig, a: &WhitneyArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let s8 = strip_tiling_mismatches(8, a.cell_exp)?;
    let s16 = strip_tiling_mismatches(16, a.cell_exp)?;
    let rect = rectangle_tiling_mismatches(a.cell_exp)?;
    let pass = s8 + s16 + rect == 0;
    report(dir, cfg, pass, &json!({ "strip_mismatches_c0_8": s8, "strip_mismatches_c0_16": s16, "rectangle_mismatches": rect }))?;
    Ok(Outcome { pass, lines: vec![format!("mismatched cells: strips {s8} (C0 = 8), {s16} (C0 = 16); rectangles {rect}")] })
}

fn admissible(cfg: &ExperimentConfig, a: &AdmissibleArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let s = cubic_surface(&a.surface, a.eps)?;
    let (rho, delta) = (level(a.rho), level(a.delta));
    let mut rows = Vec::new();
    let mut total = 0usize;
    for sp in whitney_strips(rho, a.c0)? {
        for kind in kinds(a.kind) {
            for p in enumerate_admissible_pairs(sp, &s, delta, kind)? {
                total += 1;
                if rows.len() < a.limit {
                    rows.push(vec![
                        sp.j1.to_string(),
                        sp.j2.to_string(),
                        kind_name(kind).to_string(),
                        fmt(p.z1_0.x),
                        fmt(p.z1_0.y),
                        fmt(p.z2_0.x),
                        fmt(p.z2_0.y),
                        fmt(p.width()),
                    ]);
                }
            }
        }
    }
    let written = rows.len();
    dir.write("pairs.csv", &csv_table(&["j1", "j2", "kind", "z1_x", "z1_y", "z2_x", "z2_y", "width"], rows)?)?;
    let pass = total > 0;
    report(dir, cfg, pass, &json!({ "pairs": total, "written": written }))?;
    Ok(Outcome { pass, lines: vec![format!("{total} admissible pairs ({written} written)")] })
}

// ---------------------------------------------------------------- extension

fn density_setup(a: &DensityArgs) -> Result<(Surface, SampledDensity)> {
    let (x, y) = parse_region(&a.region).map_err(|m| CliError::usage("region", m))?;
    let mut s = PhaseSurface::new(a.eps, SmoothFn::library(&a.surface)?);
    if a.amplitude == AmplitudeArg::Bump {
        s = s.with_window(x, y).with_amplitude(Amplitude::Bump);
    }
    let region = Region::rect(x, y);
    let f = match a.density {
        DensityKind::Constant => SampledDensity::constant(region, a.cells, a.cells, Complex64::new(1.0, 0.0)),
        DensityKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed.unwrap_or_default());
            SampledDensity::random_unit(region, a.cells, a.cells, &mut rng)
        }
    };
    Ok((s, f))
}

fn extension(cfg: &ExperimentConfig, a: &ExtendArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let (s, f) = density_setup(&a.density)?;
    let (origin, dims, spacing) = parse_grid(&a.grid).map_err(|m| CliError::usage("extend.grid", m))?;
    let qc = QuadratureConfig::default();
    let g = extend(&s, &f, &Lattice::rect(origin, spacing, dims), &qc)?;
    let mut bytes = Vec::new();
    write_field(&g, &mut bytes)?;
    dir.write(&a.field, &bytes)?;
    let max = g.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let pass = g.audit_error <= qc.audit_tol;
    report(dir, cfg, pass, &json!({ "points": g.values.len(), "nodes": g.nodes, "audit_error": g.audit_error, "max_abs": max, "field": a.field }))?;
    Ok(Outcome {
        pass,
        lines: vec![format!("{} points, {} nodes, audit error {:.2e}, max |Ef| {max:.6}", g.values.len(), g.nodes, g.audit_error)],
    })
}

fn scan_bilinear(cfg: &ExperimentConfig, a: &ScanBilinearArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let s = PhaseSurface::new(a.eps, SmoothFn::library(&a.surface)?);
    let deltas: Vec<DyadicLevel> = a.deltas.iter().map(|&d| level(d)).collect();
    let form = match a.form {
        FormArg::Unscaled => BilinearForm::Unscaled,
        FormArg::Scaled => BilinearForm::Scaled,
    };
    let sc = BilinearScanConfig { p: a.p, trials: a.trials, points: a.points, reach: a.reach, form, ..Default::default() };
    let res = scan_bilinear_scaling(&s, &deltas, a.seed, &sc)?;
    let spread = res.normalized_spread();
    let pass = spread <= BILINEAR_SPREAD;
    dir.write("scan.csv", res.to_csv().as_bytes())?;
    report(dir, cfg, pass, &json!({ "scan": res, "normalized_spread": spread }))?;
    Ok(Outcome {
        pass,
        lines: vec![format!("slope {:.3} (target {:.3}), normalised spread {spread:.3}", res.slope, res.target_exponent)],
    })
}

fn scan_strip(cfg: &ExperimentConfig, a: &ScanStripArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let h = SmoothFn::library(&a.surface)?;
    let s = PhaseSurface::new(a.eps, h.clone());
    let hd = h.clone();
    let third = SmoothFn::from_fn("h'''", h.domain(), 1, move |y| h.deriv(y, 3)).with_derivatives(move |y, k| hd.deriv(y, 3 + k));
    let part = partition_level_bands(&third, 1, DyadicLevel::new(a.lambda_min))?;
    let strips = strips_from_partition(&part, a.eps);
    let sc = StripScanConfig { r: a.r, q: a.q, points: a.points, reach: a.reach, ..Default::default() };
    let res = scan_strip_scaling(&s, &strips, &sc)?;
    let spread = res.normalized_spread();
    let pass = spread <= BILINEAR_SPREAD;
    dir.write("scan.csv", res.to_csv().as_bytes())?;
    report(dir, cfg, pass, &json!({ "strips": strips, "scan": res, "normalized_spread": spread }))?;
    Ok(Outcome {
        pass,
        lines: vec![format!(
            "{} strips, slope {:.4} (target {:.4}), normalised spread {spread:.3}",
            strips.len(),
            res.slope,
            res.target_exponent
        )],
    })
}

// ---------------------------------------------------------------- packets

fn packet_decomposition(a: &PacketArgs) -> Result<flatsaddle::wavepacket::Decomposition<Surface>> {
    let (s, f) = density_setup(&a.density)?;
    let dc = flatsaddle::wavepacket::DecomposeConfig { r: a.r, kappa: a.kappa, window: a.window, ..Default::default() };
    Ok(decompose_sampled(&s, &f, &dc)?)
}

fn packet_manifest(cfg: &ExperimentConfig, a: &PacketArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let d = packet_decomposition(a)?;
    let rows = d.packets.iter().filter(|p| p.coefficient > 0.0).map(|p| {
        let i = p.index;
        vec![fmt(i.eta[0]), fmt(i.eta[1]), fmt(i.v[0]), fmt(i.v[1]), fmt(p.coefficient)]
    });
    dir.write("packets.csv", &csv_table(&["eta1", "eta2", "v1", "v2", "coefficient"], rows)?)?;
    let live = d.packets.iter().filter(|p| p.coefficient > 0.0).count();
    let pass = d.residual <= RECONSTRUCTION_TOL;
    let result = json!({
        "directions": d.directions().len(),
        "packets": d.packets.len(),
        "nonzero": live,
        "residual": d.residual,
        "coefficient_l2": d.coefficient_l2(),
        "density_l2": d.density_l2(),
    });
    report(dir, cfg, pass, &result)?;
    Ok(Outcome {
        pass,
        lines: vec![format!("{} directions, {live} nonzero packets, reconstruction residual {:.2e}", d.directions().len(), d.residual)],
    })
}

fn packet_checks(cfg: &ExperimentConfig, a: &PacketArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let d = packet_decomposition(a)?;
    let seed = a.density.seed.unwrap_or_default();
    let decay = fit_decay_constant(&d, 6, 150, 8.0, seed)?;
    let orth = fit_orthogonality_constant(&d, ORTHOGONALITY_SUBSETS, seed.wrapping_add(1))?;
    let coeff = d.coefficient_l2() / d.density_l2();
    let pass = d.residual <= RECONSTRUCTION_TOL && decay <= DECAY_LIMIT && orth <= ORTHOGONALITY_LIMIT && coeff <= COEFFICIENT_LIMIT;
    let result = json!({
        "residual": d.residual,
        "decay_constant": decay,
        "orthogonality_constant": orth,
        "coefficient_constant": coeff,
    });
    report(dir, cfg, pass, &result)?;
    Ok(Outcome {
        pass,
        lines: vec![format!("residual {:.2e}, decay C {decay:.3}, orthogonality C {orth:.3}, coefficient C {coeff:.3}", d.residual)],
    })
}

fn packet_surface() -> Result<Surface> {
    Ok(PhaseSurface::new(0.5, SmoothFn::library("cubic-sixth")?))
}

fn incidence(cfg: &ExperimentConfig, a: &FanArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let fan = tube_fan(&packet_surface()?, a.r_prime, a.gamma, a.seed)?;
    let prof = count_profile([&fan.tubes1, &fan.tubes2], &fan.cubes, a.gamma, a.r_prime)?;
    dir.write("incidence.csv", prof.to_csv().as_bytes())?;
    let levels = prof.levels();
    let mut header: Vec<String> = vec!["class".into(), "cubes".into()];
    for j in 1..=2 {
        header.extend(prof.nus.iter().map(|nu| format!("mu_{j}_{nu}")));
    }
    let rows = prof.mu_classes.iter().enumerate().map(|(i, c)| {
        let mut r = vec![i.to_string(), c.cubes.len().to_string()];
        r.extend(c.mu.iter().take(2 * levels).map(|m| m.to_string()));
        r
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    dir.write("classes.csv", &csv_table(&header, rows)?)?;
    let result = json!({
        "tubes": prof.tubes,
        "cubes": prof.cubes,
        "nu_max": prof.nu_max,
        "nus": prof.nus,
        "classes": prof.mu_classes.len(),
    });
    report(dir, cfg, true, &result)?;
    Ok(Outcome {
        pass: true,
        lines: vec![format!(
            "{} + {} tubes, {} cubes, shells up to ν = {}, {} classes",
            prof.tubes[0],
            prof.tubes[1],
            prof.cubes,
            prof.nu_max,
            prof.mu_classes.len()
        )],
    })
}

fn single_probe(cfg: &ExperimentConfig, a: &FanArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let fan = tube_fan(&packet_surface()?, a.r_prime, a.gamma, a.seed)?;
    let prof = count_profile([&fan.tubes1, &fan.tubes2], &fan.cubes, a.gamma, a.r_prime)?;
    let g = geom_inequality_probe(&fan, &prof, a.nu1, a.nu2)?;
    report(dir, cfg, true, &g)?;
    let ratio = g.ratio.map_or_else(|| "undefined".to_string(), |q| format!("{q:.4}"));
    Ok(Outcome { pass: true, lines: vec![format!("R' = {}: left {:.4e}, right {:.4e}, ratio {ratio}", g.r_prime, g.left, g.right)] })
}

fn probe_sweep(cfg: &ExperimentConfig, a: &GeomProbeArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let sw = geom_probe_sweep(&packet_surface()?, &a.r_primes, a.gamma, a.nu1, a.nu2, a.seed)?;
    let rows = sw.reports.iter().map(|g| {
        vec![fmt(g.r_prime), g.tubes1.to_string(), g.tubes2.to_string(), g.cubes.to_string(), fmt(g.left), fmt(g.right), g.ratio.map(fmt).unwrap_or_default()]
    });
    dir.write("probe.csv", &csv_table(&["R_prime", "tubes1", "tubes2", "cubes", "left", "right", "ratio"], rows)?)?;
    report(dir, cfg, sw.pass, &sw)?;
    let slope = sw.slope.map_or_else(|| "undefined".to_string(), |s| format!("{s:.3}"));
    Ok(Outcome { pass: sw.pass, lines: vec![format!("growth exponent of the ratio in R': {slope}")] })
}

// ---------------------------------------------------------------- accept

fn accept(a: &AcceptArgs, dir: &ArtifactDir) -> Result<Outcome> {
    let mut lines = Vec::new();
    let summary = run_suite(dir, a, |r, secs| {
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        let line = format!("{verdict} {:>2} {}", r.id, r.name);
        println!("{line}");
        eprintln!("timing {} {secs:.3}", r.id);
        lines.push(line);
    })?;
    for (id, why) in KNOWN_UNATTAINABLE {
        if summary.failed.contains(&id) {
            lines.push(format!("criterion {id} is known to be unattainable: {why}"));
        }
    }
    // the per-criterion lines were already printed as they finished
    let lines = lines.split_off(summary.criteria.len());
    Ok(Outcome { pass: summary.failed.is_empty(), lines })
}
