use flatsaddle::extension::{extend, prototype_family_member, Lattice, QuadratureConfig, Region, SampledDensity};
use flatsaddle::funcore::SmoothFn1D;
use flatsaddle::geometry::{Amplitude, PhaseSurface};
use flatsaddle::wavepacket::*;
use flatsaddle::{Error, Point, Surface};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn surface() -> Surface {
    PhaseSurface::new(0.5, SmoothFn1D::library("cubic-sixth").unwrap())
}

fn saddle() -> Surface {
    PhaseSurface::new(0.0, SmoothFn1D::library("cubic-sixth").unwrap())
}

fn patch() -> Region {
    Region::rect((0.1, 0.35), (0.2, 0.45))
}

fn bump(t: f64) -> f64 {
    if t.abs() < 1.0 {
        (-1.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

fn cfg(r: f64) -> DecomposeConfig {
    DecomposeConfig { r, ..Default::default() }
}

/// A density smooth up to the boundary: the amplitude vanishes at the edges
/// of the patch.
fn smooth_setup() -> (Surface, SampledDensity) {
    let s = surface().with_window((0.1, 0.35), (0.2, 0.45)).with_amplitude(Amplitude::Bump);
    let f = SampledDensity::constant(patch(), 4, 4, c(1.0, 0.0));
    (s, f)
}

fn index(eta: [f64; 2], v: [f64; 2], r: f64, kappa: f64) -> PacketIndex {
    PacketIndex { eta, v, r, kappa, frame: Frame::Standard }
}

// ---------------------------------------------------------------- lattices

#[test]
fn index_lattice_sizes() {
    assert_eq!(build_index(([0.0, 0.0], [1.0, 1.0]), 4.0, 1.0, 0).v.len(), 25);
    assert_eq!(build_index(([0.0, 0.0], [1.0, 0.25]), 4.0, 1.0, 0).v.len(), 10);
    assert_eq!(build_index(([0.0, 0.0], [1.0, 1.0]), 4.0, 1.0, 8).eta.len(), 289);
}

#[test]
fn index_points_lie_on_the_lattices() {
    let lat = build_index(([-0.3, 0.1], [0.45, 0.9]), 16.0, 2.0, 3);
    for v in &lat.v {
        for e in &lat.eta {
            assert!(index(*e, *v, 16.0, 2.0).on_lattice());
        }
    }
    assert!(!index([1.0, 0.0], [0.0, 0.0], 16.0, 1.0).on_lattice());
}

#[test]
fn dyadic_helpers() {
    assert_eq!(nu_max(32.0, 0.1), 16);
    assert_eq!(nu_max(8.0, 0.1), 8);
    assert_eq!(nu_max(1.0, 0.2), 2);
    assert_eq!(dyadic_levels(8), vec![1, 2, 4, 8]);
    assert_eq!([0, 1, 2, 3, 4, 7, 8, 1000].map(dyadic_class), [0, 1, 2, 2, 4, 4, 8, 512]);
}

// ---------------------------------------------------------------- profiles

/// `erf(b) - erf(a)` by composite Simpson on the Gaussian.
fn erf_diff(a: f64, b: f64) -> f64 {
    let n = 20_000;
    let h = (b - a) / n as f64;
    let g = |t: f64| (-t * t).exp();
    let mut s = g(a) + g(b);
    for i in 1..n {
        s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 * 2.0 / PI.sqrt()
}

#[test]
fn cube_profile_matches_gaussian_quadrature() {
    let k = 1.0 / (3.0 * 2f64.sqrt());
    for t in [0.0, 0.3, 1.0, 2.5, 7.0, 12.0, 25.0] {
        let oracle = 0.5 * erf_diff((t - 0.5) * k, (t + 0.5) * k);
        let got = cube_profile(t);
        assert!((got - oracle).abs() <= 1e-12 + 1e-9 * oracle, "t={t}: {got} vs {oracle}");
        assert_eq!(got, cube_profile(-t));
    }
}

#[test]
fn psi_profile_partitions_unity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let t: f64 = rng.gen_range(-5.0..5.0);
        let s: f64 = (-8..=8).map(|k| psi_profile(t - k as f64)).sum();
        assert!((s - 1.0).abs() < 1e-14, "{t}: {s}");
    }
    assert_eq!(psi_profile(0.7), 0.0);
    assert_eq!(psi_profile(-0.71), 0.0);
    assert_eq!(psi_profile(0.25), 1.0);
}

// ---------------------------------------------------------------- tubes

fn sample_tube(rng: &mut ChaCha8Rng) -> Tube {
    let r = [4.0, 8.0, 16.0][rng.gen_range(0..3)];
    let eta = [rng.gen_range(-3..=3) as f64 * r, rng.gen_range(-3..=3) as f64 * r];
    let v = [rng.gen_range(-8..=8) as f64 / r, rng.gen_range(-8..=8) as f64 / r];
    let frame = if rng.gen::<bool>() { Frame::Standard } else { Frame::Swapped };
    let kappa = rng.gen_range(1.0..4.0);
    Tube { index: PacketIndex { eta, v, r, kappa, frame }, gradient: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)] }
}

#[test]
fn tube_examples() {
    let t = Tube { index: index([16.0, -8.0], [0.25, 0.5], 8.0, 2.0), gradient: [0.5, 0.25] };
    assert!(t.in_shell([16.0, -8.0, 0.0], Shell::Solid, 2.0, 8));
    assert_eq!(t.half_length(), 32.0);
    assert_eq!(t.length(), 64.0);
    // beyond the length cap nothing belongs
    let far = [16.0 - 33.0 * 0.5, -8.0 - 33.0 * 0.25, 33.0];
    assert!(!t.in_shell(far, Shell::Solid, 2.0, 8));
    for nu in [1, 2, 4, 8] {
        assert!(!t.in_shell(far, Shell::Nu(nu), 2.0, 8));
    }
    // radial distance 1.6 ν R'^γ R / 2 with ν = 2
    let (inflate, r) = (2.0, 8.0);
    let d = 1.6 * 2.0 * inflate * r / 2.0;
    let p = [16.0 + d, -8.0, 0.0];
    assert!(t.in_shell(p, Shell::Nu(2), inflate, 8));
    assert!(!t.in_shell(p, Shell::Nu(1), inflate, 8));
    assert!(!t.in_shell(p, Shell::Solid, inflate, 8));
    assert!(!t.in_shell(p, Shell::Nu(3), inflate, 8));
}

#[test]
fn swapped_frame_exchanges_first_and_height() {
    let t = Tube { index: PacketIndex { eta: [2.0, 3.0], v: [0.0, 0.0], r: 1.0, kappa: 1.0, frame: Frame::Swapped }, gradient: [0.0, 0.0] };
    // frame point (2, 3, 0.5) is the original point (0.5, 3, 2)
    assert!(t.contains([0.5, 3.0, 2.0], 1.0));
    assert!(!t.contains([2.0, 3.0, 0.5], 1.0));
    let d = t.direction();
    assert!((d[0] - 1.0).abs() < 1e-15 && d[1] == 0.0 && d[2] == 0.0);
}

proptest! {
    #[test]
    fn shells_partition_the_slab(seed in 0u64..10_000, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = sample_tube(&mut rng);
        let inflate: f64 = rng.gen_range(1.0..3.0);
        let nu_max = [2u32, 4, 8, 16][rng.gen_range(0..4)];
        let scale = 2.0 * nu_max as f64 * inflate * t.radius();
        let tau = z * t.half_length() * 1.2;
        let q = [t.index.eta[0] - tau * t.gradient[0] + x * scale, t.index.eta[1] - tau * t.gradient[1] + y * scale, tau];
        let p = t.index.frame.apply(q);
        let hits = dyadic_levels(nu_max).into_iter().filter(|&nu| t.in_shell(p, Shell::Nu(nu), inflate, nu_max)).count();
        let capped = z.abs() * 1.2 <= 1.0;
        prop_assert_eq!(hits, usize::from(capped));
        if t.in_shell(p, Shell::Solid, inflate, nu_max) {
            prop_assert!(t.in_shell(p, Shell::Nu(1), inflate, nu_max));
        }
    }
}

/// Shell mask by exhaustive per-height cross-sections: the radial distance
/// over the cross-section at height τ ranges over
/// `[dist(axis point, square), max corner distance]`; the minimum over τ is
/// found by ternary search (the function is convex), the maximum sits at an
/// end of the τ range.
fn brute_mask(t: &Tube, q: &Cube, inflate: f64, nu_max: u32) -> u32 {
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

fn random_cubes(rng: &mut ChaCha8Rng, n: usize, side: f64, spread: f64) -> Vec<Cube> {
    (0..n)
        .map(|_| Cube { centre: [0, 1, 2].map(|_| (rng.gen_range(-spread..spread) / side).round() * side), side })
        .collect()
}

#[test]
fn shell_masks_match_cross_section_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..4000 {
        let t = sample_tube(&mut rng);
        let q = random_cubes(&mut rng, 1, t.radius(), 6.0 * t.radius() * t.radius().sqrt(), )[0];
        let inflate = rng.gen_range(1.0..2.0);
        assert_eq!(t.shells_meeting(&q, inflate, 8), brute_mask(&t, &q, inflate, 8), "{t:?} {q:?}");
    }
}

// ---------------------------------------------------------------- counting

#[test]
fn single_tube_along_cubes() {
    let r = 4.0;
    let t = Tube { index: index([0.0, 0.0], [0.0, 0.0], r, 1.0), gradient: [0.0, 0.0] };
    let axis: Vec<Cube> = (-2..=2).map(|k| Cube { centre: [0.0, 0.0, k as f64 * r], side: r }).collect();
    let far: Vec<Cube> = (-2..=2).map(|k| Cube { centre: [40.0 * r, 0.0, k as f64 * r], side: r }).collect();
    let cubes: Vec<Cube> = axis.iter().chain(&far).copied().collect();
    let prof = count_profile([&[t], &[]], &cubes, 0.1, 16.0).unwrap();
    for q in 0..axis.len() {
        assert_eq!(prof.count(q, 0, 0), 1);
    }
    for q in axis.len()..cubes.len() {
        assert_eq!(prof.count(q, 0, 0), 0);
    }
}

#[test]
fn parallel_pair_meets_mid_cubes_in_the_second_shell() {
    // R'^γ = 2, offset 3 R'^γ R: mid cubes sit at 1.5 ρ from both axes
    let (r, r_prime, gamma): (f64, f64, f64) = (4.0, 32.0, 0.2);
    let rho = r_prime.powf(gamma) * r;
    let mk = |x: f64| Tube { index: index([x, 0.0], [0.0, 0.0], r, 1.0), gradient: [0.0, 0.0] };
    let tubes = [mk(-1.5 * rho), mk(1.5 * rho)];
    let cubes: Vec<Cube> = (-3..=3).map(|k| Cube { centre: [0.0, 0.0, k as f64 * r], side: r }).collect();
    let prof = count_profile([&tubes, &[]], &cubes, gamma, r_prime).unwrap();
    let two = prof.level_of(2).unwrap();
    for q in 0..cubes.len() {
        for l in 0..prof.levels() {
            assert_eq!(prof.count(q, 0, l), if l == two { 2 } else { 0 }, "cube {q} level {l}");
        }
    }
}

#[test]
fn count_profile_matches_brute_force_and_ignores_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (r, r_prime, gamma): (f64, f64, f64) = (4.0, 16.0, 0.1);
    let mk = |rng: &mut ChaCha8Rng, frame| {
        let eta = [rng.gen_range(-6..=6) as f64 * r, rng.gen_range(-6..=6) as f64 * r];
        let v = [rng.gen_range(-4..=4) as f64 / r, rng.gen_range(-4..=4) as f64 / r];
        Tube { index: PacketIndex { eta, v, r, kappa: 1.0, frame }, gradient: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)] }
    };
    let fam1: Vec<Tube> = (0..300).map(|_| mk(&mut rng, Frame::Standard)).collect();
    let fam2: Vec<Tube> = (0..200).map(|_| mk(&mut rng, Frame::Swapped)).collect();
    let cubes = random_cubes(&mut rng, 1000, r, 40.0);
    let prof = count_profile([&fam1, &fam2], &cubes, gamma, r_prime).unwrap();
    let inflate = r_prime.powf(gamma);
    for (q, cube) in cubes.iter().enumerate() {
        for (j, fam) in [&fam1, &fam2].into_iter().enumerate() {
            for l in 0..prof.levels() {
                let brute = fam.iter().filter(|t| (brute_mask(t, cube, inflate, prof.nu_max) >> l) & 1 == 1).count() as u32;
                assert_eq!(prof.count(q, j, l), brute);
            }
        }
    }
    let total: usize = prof.mu_classes.iter().map(|m| m.cubes.len()).sum();
    assert_eq!(total, cubes.len());
    let mut shuffled = fam1.clone();
    shuffled.reverse();
    shuffled.swap(3, 100);
    let again = count_profile([&shuffled, &fam2], &cubes, gamma, r_prime).unwrap();
    assert_eq!(prof.counts, again.counts);
    assert!(prof.to_csv().starts_with("cube,family,nu,count\n"));
}

#[test]
fn count_profile_rejects_bad_gamma() {
    assert!(matches!(count_profile([&[], &[]], &[], 0.3, 8.0), Err(Error::Contract(_))));
}

// ---------------------------------------------------------------- cube cover

#[test]
fn cube_cover_partitions_the_cuboid() {
    let cover = CubeCover::new([0.0; 3], [32.0, 128.0, 128.0], 16.0).unwrap();
    assert_eq!(cover.len(), cover.cubes().len());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let p = [rng.gen_range(-32.0..32.0), rng.gen_range(-128.0..128.0), rng.gen_range(-128.0..128.0)];
        assert!((cover.partition_sum(p) - 1.0).abs() < 1e-8);
    }
}

#[test]
fn cube_transform_concentrates_in_the_unit_ball() {
    let cover = CubeCover::new([0.0; 3], [1.0; 3], 1.0).unwrap();
    let got = cover.transform_mass_fraction();
    // midpoint rule over [-3, 3]³
    let spec = |s: f64| {
        let sinc = if s == 0.0 { 1.0 } else { (s / 2.0).sin() / (s / 2.0) };
        sinc * sinc * (-9.0 * s * s).exp()
    };
    let n = 120;
    let h = 6.0 / n as f64;
    let (mut inside, mut total) = (0.0, 0.0);
    for i in 0..n {
        let x = -3.0 + (i as f64 + 0.5) * h;
        for j in 0..n {
            let y = -3.0 + (j as f64 + 0.5) * h;
            for k in 0..n {
                let z = -3.0 + (k as f64 + 0.5) * h;
                let v = spec(x) * spec(y) * spec(z);
                total += v;
                if x * x + y * y + z * z <= 1.0 {
                    inside += v;
                }
            }
        }
    }
    assert!((got - inside / total).abs() < 2e-3, "{got} vs {}", inside / total);
    assert!(got >= 0.999, "{got}");
}

// ---------------------------------------------------------------- decomposition

#[test]
fn zero_density_has_zero_coefficients() {
    let f = SampledDensity::constant(patch(), 4, 4, c(0.0, 0.0));
    let d = decompose_sampled(&surface(), &f, &cfg(8.0)).unwrap();
    assert!(d.packets.iter().all(|p| p.coefficient == 0.0));
    assert!(matches!(d.eval_packet(0, [0.0; 3]), Err(Error::UndefinedPacket)));
    assert!(matches!(d.sum_l2(&[0, 1], 0.0), Err(Error::UndefinedPacket)));
}

#[test]
fn decomposition_contracts() {
    let f = SampledDensity::constant(patch(), 4, 4, c(1.0, 0.0));
    let s = surface();
    for bad in [
        DecomposeConfig { r: 0.5, ..cfg(8.0) },
        DecomposeConfig { kappa: 0.5, ..cfg(8.0) },
        DecomposeConfig { oversample: 33, ..cfg(8.0) },
        DecomposeConfig { window: 16, oversample: 32, ..cfg(8.0) },
    ] {
        assert!(matches!(decompose_sampled(&s, &f, &bad), Err(Error::Contract(_))), "{bad:?}");
    }
    let tiny = DecomposeConfig { window: 1, oversample: 4, ..cfg(8.0) };
    match decompose_sampled(&s, &f, &tiny) {
        Err(Error::Truncation(res)) => assert!(res > 1e-2),
        other => panic!("expected truncation, got {:?}", other.map(|d| d.residual)),
    }
    let across = SampledDensity::constant(Region::rect((0.1, 0.3), (-0.1, 0.2)), 2, 2, c(1.0, 0.0));
    assert!(matches!(decompose_side_two(&s, &across, &cfg(8.0)), Err(Error::Contract(_))));
}

#[test]
fn single_bump_peaks_at_its_packet() {
    let r = 8.0;
    let v0 = [2.0 / r, 3.0 / r];
    let eta0 = [2.0 * r, -r];
    // support inside the plateau of ψ_{v0}, modulated to frequency η0
    let dens = move |z: [f64; 2]| {
        let b = bump((z[0] - v0[0]) * r / 0.29) * bump((z[1] - v0[1]) * r / 0.29);
        Complex64::from_polar(b, eta0[0] * z[0] + eta0[1] * z[1])
    };
    let sup = ([v0[0] - 0.3 / r, v0[1] - 0.3 / r], [v0[0] + 0.3 / r, v0[1] + 0.3 / r]);
    let d = decompose(&saddle(), &dens, sup, &cfg(r)).unwrap();
    let top = d.packets.iter().max_by(|a, b| a.coefficient.total_cmp(&b.coefficient)).unwrap();
    assert_eq!(top.index.eta, eta0);
    assert!((top.index.v[0] - v0[0]).abs() < 1e-12 && (top.index.v[1] - v0[1]).abs() < 1e-12);
    // only the one window sees the data; its coefficients fall off ring by ring
    let mut rings = vec![0.0f64; 2 * d.config.window + 1];
    for p in &d.packets {
        if (p.index.v[0] - v0[0]).abs() > 1e-12 || (p.index.v[1] - v0[1]).abs() > 1e-12 {
            assert_eq!(p.coefficient, 0.0);
            continue;
        }
        let ring = (0..2).map(|a| ((p.index.eta[a] - eta0[a]) / r).abs().round() as usize).max().unwrap();
        rings[ring] = rings[ring].max(p.coefficient);
    }
    for w in rings[..=8].windows(2) {
        assert!(w[1] < w[0], "{rings:?}");
    }
}

#[test]
fn grid_extension_matches_quadrature_for_smooth_data() {
    let (s, f) = smooth_setup();
    // the amplitude ramps over a quarter of the patch; resolve it with ~20 nodes
    let d = decompose_sampled(&s, &f, &DecomposeConfig { oversample: 256, window: 12, ..cfg(8.0) }).unwrap();
    let pts = [[0.0, 0.0, 0.0], [10.0, -4.0, 20.0], [-15.0, 6.0, -40.0], [3.0, 25.0, 60.0]];
    let lat = |p: [f64; 3]| Lattice::single(p);
    for p in pts {
        let reference = extend(&s, &f, &lat(p), &QuadratureConfig::default()).unwrap().values[0];
        let grid = d.extension_at(p);
        assert!((grid - reference).norm() <= 1e-6 * (1.0 + reference.norm()), "{p:?}: {grid} vs {reference}");
    }
}

#[test]
fn reconstruction_of_smooth_and_random_data() {
    let (s, f) = smooth_setup();
    for r in [8.0, 16.0] {
        let d = decompose_sampled(&s, &f, &cfg(r)).unwrap();
        assert!(d.residual <= 1e-3, "R={r}: {}", d.residual);
        let pts = d.check_points();
        let direct: Vec<Complex64> = pts.iter().map(|&p| d.extension_at(p)).collect();
        let all: Vec<usize> = (0..d.packets.len()).collect();
        let raw = d.eval_raw_sum(&all, &pts);
        let scale = direct.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let err = direct.iter().zip(&raw).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err <= 1e-3 * scale);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = SampledDensity::random_unit(patch(), 8, 8, &mut rng);
    let d = decompose_sampled(&surface(), &f, &cfg(8.0)).unwrap();
    assert!(d.residual <= 1e-3, "{}", d.residual);
}

#[test]
fn packet_evaluation_is_consistent() {
    let (s, f) = smooth_setup();
    let d = decompose_sampled(&s, &f, &cfg(8.0)).unwrap();
    let k = (0..d.packets.len()).max_by(|&a, &b| d.packets[a].coefficient.total_cmp(&d.packets[b].coefficient)).unwrap();
    let p = [1.0, -2.0, 5.0];
    let one = d.eval_packet(k, p).unwrap();
    let un = d.eval_unnormalised(k, p);
    assert!((one * d.packets[k].coefficient - un).norm() < 1e-12 * (1.0 + un.norm()));
    let sum = d.eval_sum(&[k], &[p]).unwrap()[0];
    assert!((sum - one).norm() < 1e-12 * (1.0 + one.norm()));
    // Plancherel against a direct Riemann sum of |p_w(·, 0)|²
    let l2 = d.sum_l2(&[k], 0.0).unwrap();
    let r = d.config.r;
    let t = d.tube(k);
    let (n, span) = (120, 12.0 * r);
    let h = span / n as f64;
    let mut pts = Vec::new();
    for i in 0..n {
        for j in 0..n {
            pts.push([t.index.eta[0] - span / 2.0 + (i as f64 + 0.5) * h, t.index.eta[1] - span / 2.0 + (j as f64 + 0.5) * h, 0.0]);
        }
    }
    let direct = (d.eval_packets(k, &pts).unwrap().iter().map(|v| v.norm_sqr()).sum::<f64>() * h * h).sqrt();
    assert!((direct - l2).abs() < 2e-2 * l2, "{direct} vs {l2}");
    let json = serde_json::to_string(&d.packets[k]).unwrap();
    let back: WavePacket = serde_json::from_str(&json).unwrap();
    assert_eq!(back, d.packets[k]);
}

#[test]
fn packets_localise_in_frequency() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = SampledDensity::random_unit(patch(), 8, 8, &mut rng);
    let d = decompose_sampled(&surface(), &f, &cfg(8.0)).unwrap();
    let mut worst: f64 = 1.0;
    for k in (0..d.packets.len()).step_by(7) {
        if d.packets[k].coefficient > 0.0 {
            worst = worst.min(d.localisation(k, 3.0 / 8.0));
        }
    }
    assert!(worst >= 0.99, "{worst}");
}

#[test]
fn decay_orthogonality_and_coefficient_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = SampledDensity::random_unit(patch(), 8, 8, &mut rng);
    let d = decompose_sampled(&surface(), &f, &cfg(8.0)).unwrap();
    let decay = fit_decay_constant(&d, 6, 150, 8.0, 1).unwrap();
    assert!(decay > 0.0 && decay <= 100.0, "{decay}");
    let orth = fit_orthogonality_constant(&d, 10, 2).unwrap();
    assert!(orth > 0.0 && orth <= 10.0, "{orth}");
    let ratio = d.coefficient_l2() / d.density_l2();
    assert!(ratio <= 10.0, "{ratio}");
}

#[test]
fn second_patch_decomposition() {
    let s = surface();
    let f = SampledDensity::constant(Region::rect((0.1, 0.35), (0.5, 0.625)), 4, 4, c(1.0, 0.0));
    let d = decompose_side_two(&s, &f, &DecomposeConfig { kappa: 4.0, ..cfg(8.0) }).unwrap();
    assert!(d.residual <= 1e-2);
    assert!(d.packets.iter().all(|p| p.index.frame == Frame::Swapped && p.index.kappa == 4.0));
    // the re-parametrized grid transform is the same extension
    let adapter = d.phase();
    let z = adapter.to_original(adapter.from_original([0.2, 0.55]));
    assert!((z[0] - 0.2).abs() < 1e-14 && (z[1] - 0.55).abs() < 1e-14);
    let k = (0..d.packets.len()).max_by(|&a, &b| d.packets[a].coefficient.total_cmp(&d.packets[b].coefficient)).unwrap();
    let t = d.tube(k);
    let axis = Frame::Swapped.apply([t.index.eta[0], t.index.eta[1], 0.0]);
    assert!(t.contains(axis, 1.0));
}

// ---------------------------------------------------------------- franz

#[test]
fn windowed_sup_and_product_contracts() {
    let r = 8.0;
    let v = [0.25, 0.25];
    let dens = move |z: [f64; 2]| c(bump((z[0] - v[0]) * r / 0.6) * bump((z[1] - v[1]) * r / 0.6), 0.0);
    let sup = ([v[0] - 0.6 / r, v[1] - 0.6 / r], [v[0] + 0.6 / r, v[1] + 0.6 / r]);
    let d = decompose(&surface(), &dens, sup, &DecomposeConfig { window: 6, oversample: 16, ..cfg(r) }).unwrap();
    let dir = d.directions().iter().position(|w| (w[0] - v[0]).abs() < 1e-12 && (w[1] - v[1]).abs() < 1e-12).unwrap();
    let q = Cube { centre: [0.0; 3], side: r };
    assert!(matches!(windowed_sup(&d, dir, &q, 100.0, 5), Err(Error::Contract(_))));
    let near = windowed_sup(&d, dir, &q, 0.0, 5).unwrap();
    let far = windowed_sup(&d, dir, &q, 2.0, 5).unwrap();
    assert!(far.packets < near.packets && far.sup > 0.0);
    let k = d.packets_of_direction(dir).find(|&k| d.packets[k].coefficient > 0.0).unwrap();
    assert!(matches!(product_integral(&d, k, &d, k), Err(Error::Contract(_))));
}

// ---------------------------------------------------------------- curves

#[test]
fn saddle_curve_is_the_line() {
    let (a, b) = ([0.1, 0.2], [0.4, -0.3]);
    let curve = intersection_curve(&saddle(), a, b, 0.01, ([-0.5, -0.5], [0.5, 0.5]));
    assert!(!curve.degenerate && curve.points.len() > 50);
    // u1 (a2 - b2) = u2 (b1 - a1)
    let n = [a[1] - b[1], a[0] - b[0]];
    let norm = n[0].hypot(n[1]);
    for p in &curve.points {
        assert!((p[0] * n[0] + p[1] * n[1]).abs() / norm < 1e-10, "{p:?}");
        assert!(p[0].abs() <= 0.5 + 1e-12 && p[1].abs() <= 0.5 + 1e-12);
    }
    for w in curve.points.windows(2) {
        let step = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        assert!(step <= 0.01 + 1e-9);
    }
    let same = intersection_curve(&saddle(), a, a, 0.01, ([-0.5, -0.5], [0.5, 0.5]));
    assert!(same.degenerate && same.points.is_empty());
}

#[test]
fn curve_found_when_origin_is_outside_the_window() {
    let (a, b) = ([0.1, 0.2], [0.4, -0.3]);
    let curve = intersection_curve(&saddle(), a, b, 0.01, ([0.1, -0.5], [0.5, 0.5]));
    assert!(!curve.points.is_empty());
    let n = [a[1] - b[1], a[0] - b[0]];
    for p in &curve.points {
        assert!((p[0] * n[0] + p[1] * n[1]).abs() < 1e-9);
    }
    let none = intersection_curve(&saddle(), a, b, 0.01, ([0.3, -0.5], [0.5, -0.3]));
    assert!(none.points.is_empty());
}

#[test]
fn prototype_curve_tangent() {
    let s = PhaseSurface::new(1.0, SmoothFn1D::library("cubic-sixth").unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for delta in [0.25, 0.125] {
        let p = prototype_family_member(&s, delta, 0.05, 1.0);
        let want = [-p.abar(), p.b];
        for _ in 0..20 {
            let (v1, v2) = (p.sample_s(1, &mut rng), p.sample_s(2, &mut rng));
            let curve = intersection_curve(&p, [v1.x, v1.y], [v2.x, v2.y], 1e-3, ([-0.01, -0.01], [0.01, 0.01]));
            let i = curve.points.iter().position(|q| q[0] == 0.0 && q[1] == 0.0).unwrap();
            let (q0, q1) = (curve.points[i.saturating_sub(1)], curve.points[(i + 1).min(curve.points.len() - 1)]);
            let t = [q1[0] - q0[0], q1[1] - q0[1]];
            let cos = (t[0] * want[0] + t[1] * want[1]).abs() / (t[0].hypot(t[1]) * want[0].hypot(want[1]));
            assert!(cos.min(1.0).acos() < 0.2, "angle {}", cos.acos());
        }
    }
}

#[test]
fn filter_matches_exhaustive_search() {
    let s = surface();
    let r = 16.0;
    let lat = build_index(([0.0, 0.0], [0.5, 0.5]), r, 1.0, 0);
    let idx: Vec<PacketIndex> = lat.v.iter().map(|&v| index([0.0; 2], v, r, 1.0)).collect();
    let (v1, v2) = ([0.25, 0.25], [0.3, 0.9]);
    let curve = intersection_curve(&s, v1, v2, 0.02, ([-0.25, -0.25], [0.25, 0.25]));
    let got = filter_by_curve(&s, &idx, &curve.points, v1, r);
    let p_ref = s.phi(Point::new(v1[0], v1[1]));
    let seg = |p: [f64; 3], a: [f64; 3], b: [f64; 3]| {
        // dense sampling along the segment
        (0..=400)
            .map(|i| {
                let t = i as f64 / 400.0;
                let q = [0, 1, 2].map(|k| a[k] + t * (b[k] - a[k]) - p[k]);
                (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut brute = Vec::new();
    for (n, w) in idx.iter().enumerate() {
        let g = [w.v[0] - v1[0], w.v[1] - v1[1], s.phi(Point::new(w.v[0], w.v[1])) - p_ref];
        let dist = curve.points.windows(2).map(|x| seg(g, x[0], x[1])).fold(f64::INFINITY, f64::min);
        if dist <= 1.0 / r - 1e-6 {
            brute.push(n);
        } else if dist <= 1.0 / r + 1e-6 {
            // boundary case: defer to the exact test
            if got.selected.contains(&n) {
                brute.push(n);
            }
        }
    }
    assert_eq!(got.selected, brute);
    assert!(!brute.is_empty());
    assert_eq!(got.directions.len(), brute.len());
    let empty = filter_by_curve(&s, &[], &curve.points, v1, r);
    assert!(empty.selected.is_empty() && empty.directions.is_empty());
}

// ---------------------------------------------------------------- probe

#[test]
fn geom_probe_arithmetic() {
    let s = surface();
    let fan = tube_fan(&s, 8.0, 0.1, 3).unwrap();
    assert_eq!(fan.r, 16.0);
    assert!(fan.tubes1.iter().all(|t| t.index.eta == [0.0, 0.0]));
    assert!(!fan.tubes2.is_empty() && fan.tubes2.len() <= FAN_SECOND_FAMILY);
    let prof = count_profile([&fan.tubes1, &fan.tubes2], &fan.cubes, 0.1, 8.0).unwrap();
    // every fan tube passes through the central cube
    assert_eq!(prof.count(fan.q0, 0, 0) as usize, fan.tubes1.len());
    let one = geom_inequality_probe(&fan, &prof, 1, 1).unwrap();
    let two = geom_inequality_probe(&fan, &prof, 1, 2).unwrap();
    assert_eq!(two.right, 4.0 * one.right);
    assert!(one.ratio.is_some_and(|q| q.is_finite() && q > 0.0));
    let mut empty = tube_fan(&s, 8.0, 0.1, 3).unwrap();
    empty.tubes2.clear();
    let prof = count_profile([&empty.tubes1, &empty.tubes2], &empty.cubes, 0.1, 8.0).unwrap();
    let skipped = geom_inequality_probe(&empty, &prof, 1, 1).unwrap();
    assert!(skipped.ratio.is_none() && skipped.note.is_some());
    assert!(matches!(geom_inequality_probe(&fan, &prof, 3, 1), Err(Error::Contract(_))));
}
