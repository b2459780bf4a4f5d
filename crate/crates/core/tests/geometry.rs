use flatsaddle::funcore::{DyadicLevel, SmoothFn1D};
use flatsaddle::geometry::*;
use flatsaddle::{Error, Point, SmoothFn, Surface};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cubic_sixth() -> SmoothFn {
    SmoothFn1D::library("cubic-sixth").unwrap()
}

fn zero_fn() -> SmoothFn {
    SmoothFn1D::from_fn("zero", (-1.0, 1.0), 3, |_| 0.0).with_derivatives(|_, _| 0.0)
}

fn pt(x: f64, y: f64) -> Point {
    Point2::new(x, y)
}

/// Surfaces used by the algebra checks, each with the y-range to draw from.
fn algebra_surfaces() -> Vec<(Surface, (f64, f64))> {
    vec![
        (PhaseSurface::new(1.0, cubic_sixth()), (-1.0, 1.0)),
        (PhaseSurface::new(0.3, SmoothFn1D::library("oscflat").unwrap()), (0.05, 1.0)),
        (PhaseSurface::new(2.0, SmoothFn1D::polynomial(vec![0.1, -0.5, 0.25, 1.5, -0.75])), (0.0, 1.0)),
    ]
}

fn random_point<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> Point {
    pt(rng.gen_range(-1.0..1.0), rng.gen_range(lo..hi))
}

#[test]
fn gamma_is_twice_height_gap_times_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (s, yr) in algebra_surfaces() {
        for _ in 0..100_000 {
            let (z, z1, z2) = (random_point(&mut rng, yr), random_point(&mut rng, yr), random_point(&mut rng, yr));
            let g = gamma(&s, z, z1, z2).unwrap();
            let t = tau(&s, z, z1, z2);
            let expect = 2.0 * (z2.y - z1.y) * t;
            let scale = 1.0 + g.abs().max(expect.abs());
            assert!((g - expect).abs() <= 1e-12 * scale, "{}: {g} vs {expect}", s.h.name());
        }
    }
}

#[test]
fn tau_gap_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (s, yr) in algebra_surfaces() {
        for _ in 0..100_000 {
            let (z1, z2) = (random_point(&mut rng, yr), random_point(&mut rng, yr));
            let closed = s.epsilon / 2.0 * (s.h.deriv(z2.y, 2) - s.h.deriv(z1.y, 2)).abs() * (z2.y - z1.y).abs();
            let got = tau_gap(&s, z1, z2);
            assert!((got - closed).abs() <= 1e-12 * (1.0 + closed), "{got} vs {closed}");
        }
    }
}

#[test]
fn gamma_hand_example() {
    // ∇φ(0,0) = 0, ∇φ(1,1) = (1, 3/2) and Hφ(0,0)^{-1} swaps coordinates
    let s = PhaseSurface::new(1.0, cubic_sixth());
    let g = gamma(&s, pt(0.0, 0.0), pt(0.0, 0.0), pt(1.0, 1.0)).unwrap();
    assert!((g - 3.0).abs() < 1e-15);
    let s32 = PhaseSurface::<f32>::new(1.0, SmoothFn1D::library("cubic-sixth").unwrap());
    let o = Point2::new(0.0f32, 0.0);
    let g32 = gamma(&s32, o, o, Point2::new(1.0, 1.0)).unwrap();
    assert!((g32 - 3.0).abs() < 1e-6);
}

#[test]
fn gamma_tilde_flat_surface_is_cross_pairing() {
    let s = PhaseSurface::new(0.0, cubic_sixth());
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let p: Vec<Point> = (0..5).map(|_| random_point(&mut rng, (-1.0, 1.0))).collect();
        // differences (a, b) = (Δy, Δx) and (c, d) likewise
        let (a, b) = (p[2].y - p[1].y, p[2].x - p[1].x);
        let (c, d) = (p[4].y - p[3].y, p[4].x - p[3].x);
        let g = gamma_tilde(&s, p[0], p[1], p[2], p[3], p[4]).unwrap();
        assert!((g - (b * c + a * d)).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]
    #[test]
    fn tau_is_antisymmetric_and_gamma_symmetric(
        x1 in -1.0f64..1.0, y1 in -1.0f64..1.0, x2 in -1.0f64..1.0, y2 in -1.0f64..1.0,
        y in -1.0f64..1.0, eps in 0.0f64..4.0,
    ) {
        let s = PhaseSurface::new(eps, cubic_sixth());
        let (z, z1, z2) = (pt(0.0, y), pt(x1, y1), pt(x2, y2));
        prop_assert!((tau(&s, z, z1, z2) + tau(&s, z, z2, z1)).abs() < 1e-14);
        let g12 = gamma(&s, z, z1, z2).unwrap();
        let g21 = gamma(&s, z, z2, z1).unwrap();
        prop_assert!((g12 - g21).abs() < 1e-13);
    }
}

#[test]
fn strips_reject_bad_constants_and_empty_at_coarse_scale() {
    assert!(whitney_strips(DyadicLevel::new(0), 16).unwrap().is_empty());
    assert!(matches!(whitney_strips(DyadicLevel::new(-4), 12), Err(Error::Contract(_))));
    assert!(matches!(whitney_strips(DyadicLevel::new(-4), 4), Err(Error::Contract(_))));
}

#[test]
fn strip_pairs_are_separated_by_the_expected_gap() {
    for c0 in [8u32, 16, 32] {
        for k in -6..=-2 {
            let pairs = whitney_strips(DyadicLevel::new(k), c0).unwrap();
            for p in &pairs {
                let gap = (p.j2 - p.j1).abs();
                assert!(gap as u32 > c0 / 8 && (gap as u32) < c0 / 2, "{p:?}");
            }
            let mut sorted = pairs.clone();
            sorted.sort_by_key(|p| (p.j1, p.j2));
            assert_eq!(sorted, pairs);
        }
    }
}

/// Coverage of `[-1,1)^2` by strip pairs over every scale whose enclosing
/// intervals run from 1/2 down to cells of size `2^cell_exp`. Counting is
/// done on the finest strips; a pair of them is covered exactly once when
/// their enclosing cells are at least two cells apart, otherwise never.
fn strip_tiling(c0: u32, cell_exp: i32) {
    let sub_exp = (c0 / 8).trailing_zeros() as i32;
    let fine_exp = cell_exp - sub_exp;
    let n = 2usize << (-fine_exp);
    let off = (n / 2) as i64;
    let mut cover = vec![0u8; n * n];
    for len_exp in cell_exp..=-1 {
        let rho = DyadicLevel::new(len_exp - sub_exp);
        let w = 1i64 << (rho.k - fine_exp);
        for p in whitney_strips(rho, c0).unwrap() {
            for a in p.j1 * w..(p.j1 + 1) * w {
                for b in p.j2 * w..(p.j2 + 1) * w {
                    cover[((a + off) as usize) * n + (b + off) as usize] += 1;
                }
            }
        }
    }
    let per_cell = 1usize << sub_exp;
    for a in 0..n {
        for b in 0..n {
            let expect = u8::from((a / per_cell).abs_diff(b / per_cell) >= 2);
            assert_eq!(cover[a * n + b], expect, "strips ({a},{b}) with C0 = {c0}");
        }
    }
}

#[test]
fn strip_pairs_tile_off_diagonal_once() {
    strip_tiling(8, -6);
    strip_tiling(16, -6);
}

#[test]
fn strip_subdivision_is_complete() {
    // for C0 = 16 each related pair of enclosing intervals yields all 2x2 sub-strips
    let pairs = whitney_strips(DyadicLevel::new(-5), 16).unwrap();
    let mut groups = std::collections::BTreeMap::<(i64, i64), usize>::new();
    for p in &pairs {
        *groups.entry((p.j1.div_euclid(2), p.j2.div_euclid(2))).or_default() += 1;
    }
    assert!(groups.values().all(|&c| c == 4));
    assert!(groups.keys().all(|&(m1, m2)| related(m1, m2)));
}

fn related_brute(n: i64) -> usize {
    let mut c = 0;
    for a in 0..n {
        for b in 0..n {
            let adjacent = (a - b).abs() <= 1;
            let parent_adjacent = (a / 2 - b / 2).abs() == 1;
            if !adjacent && parent_adjacent {
                c += 1;
            }
        }
    }
    c
}

#[test]
fn rectangle_counts_match_brute_force() {
    let eta1 = DyadicLevel::new(-2);
    for j1 in 1..=5u32 {
        for j2 in 2..=6u32 {
            let got = whitney_rectangles((-1.0, 1.0), eta1, j1, j2).count();
            let nx = 2i64 << j1;
            let ny = (1i64 << j2) / 4;
            assert_eq!(got, related_brute(nx) * related_brute(ny), "j1 = {j1}, j2 = {j2}");
        }
    }
}

#[test]
fn rectangles_tile_off_diagonal_once() {
    // x cells of 2^-6 on [-1,1), y cells of 2^-6 on [0, 1/4)
    let (nx, ny) = (128usize, 16usize);
    let idx = |a: usize, b: usize, c: usize, d: usize| ((a * ny + b) * nx + c) * ny + d;
    let mut cover = vec![0u8; nx * ny * nx * ny];
    let cell = 1.0 / 64.0;
    for j1 in 1..=6u32 {
        for j2 in 0..=6u32 {
            for (w1, w2) in whitney_rectangles((-1.0, 1.0), DyadicLevel::new(-2), j1, j2) {
                let xr = |r: (f64, f64)| (((r.0 + 1.0) / cell) as usize, ((r.1 + 1.0) / cell) as usize);
                let yr = |r: (f64, f64)| ((r.0 / cell) as usize, (r.1 / cell) as usize);
                let (a0, a1) = xr(w1.x);
                let (b0, b1) = yr(w1.y);
                let (c0, c1) = xr(w2.x);
                let (d0, d1) = yr(w2.y);
                for a in a0..a1 {
                    for b in b0..b1 {
                        for c in c0..c1 {
                            for d in d0..d1 {
                                cover[idx(a, b, c, d)] += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    for a in 0..nx {
        for c in 0..nx {
            for b in 0..ny {
                for d in 0..ny {
                    let expect = u8::from(a.abs_diff(c) >= 2 && b.abs_diff(d) >= 2);
                    assert_eq!(cover[idx(a, b, c, d)], expect, "({a},{b}) vs ({c},{d})");
                }
            }
        }
    }
}

/// Counts type-1 pairs from the closed forms for `h = y³/6`: the curved base
/// point sits at `t - ε(yc - ys) yc / 2` and the curvature correction of the
/// second transversality is `-ε (yc - ys)² / 2`.
fn type1_count_oracle(sp: StripPair, eps: f64, delta: f64) -> u64 {
    let rho = sp.rho.value::<f64>();
    let w = eps * rho * rho * delta;
    let n = (2.0 / w).round() as i64;
    let c0sq = (sp.c0 * sp.c0) as i64;
    let big = c0sq as f64 * eps * rho * rho * delta.max(1.0);
    let heights = (1.0 / delta.min(1.0)).round() as i64;
    let yc = sp.j2 as f64 * rho;
    let mut total = 0u64;
    for m in 0..heights {
        let ys = sp.j1 as f64 * rho + m as f64 * rho * delta.min(1.0);
        let kappa = eps * (yc - ys) * yc / 2.0;
        let g = -eps * (yc - ys) * (yc - ys) / 2.0;
        // curved offsets t = -1 + j w with -1 <= t - kappa < 1
        let jlo = (kappa / w).ceil() as i64;
        let jhi = ((2.0 + kappa) / w).ceil() as i64;
        for d in (c0sq / 4)..(4 * c0sq) {
            for d in [d, -d] {
                let other = (d as f64 * w + g).abs();
                if other < big / 512.0 || other >= 5.0 * big {
                    continue;
                }
                let lo = 0.max(-d).max(jlo - d);
                let hi = n.min(n - d).min(jhi - d);
                total += (hi - lo).max(0) as u64;
            }
        }
    }
    total
}

#[test]
fn admissible_count_matches_lattice_oracle() {
    let s = PhaseSurface::cubic(0.25, cubic_sixth()).unwrap();
    let sp = whitney_strips(DyadicLevel::new(-4), 16).unwrap()[0];
    let got = enumerate_admissible_pairs(sp, &s, DyadicLevel::new(-2), PairKind::Type1).unwrap().count() as u64;
    let expect = type1_count_oracle(sp, 0.25, 0.25);
    assert_eq!(got, expect);
    assert!(got > 50_000_000, "{got}");
    // a second, smaller setting with δ > 1
    let sp = whitney_strips(DyadicLevel::new(-3), 8).unwrap()[5];
    let got = enumerate_admissible_pairs(sp, &s, DyadicLevel::new(1), PairKind::Type1).unwrap().count() as u64;
    assert_eq!(got, type1_count_oracle(sp, 0.25, 2.0));
}

#[test]
fn unperturbed_count_is_pure_lattice_distance() {
    let s = PhaseSurface::new(0.25, zero_fn());
    let sp = whitney_strips(DyadicLevel::new(-3), 16).unwrap()[3];
    let delta = 0.25;
    let got = enumerate_admissible_pairs(sp, &s, DyadicLevel::new(-2), PairKind::Type1).unwrap().count() as u64;
    // N = 2/(ερ²δ) = 2048 lattice points, gaps 64 <= |d| < 1024, 4 heights
    let n = 2048u64;
    let per_height: u64 = (64..1024u64).map(|d| 2 * (n - d)).sum();
    assert_eq!(got, (1.0 / delta) as u64 * per_height);
}

fn small_setting() -> (Surface, Vec<StripPair>) {
    let s = PhaseSurface::cubic(0.25, cubic_sixth()).unwrap();
    (s, whitney_strips(DyadicLevel::new(-2), 8).unwrap())
}

#[test]
fn base_points_realise_the_lattice_gap() {
    let (s, strips) = small_setting();
    for sp in &strips {
        for p in enumerate_admissible_pairs(*sp, &s, DyadicLevel::new(1), PairKind::Type1).unwrap() {
            let t = tau(&s, p.z1_0, p.z1_0, p.z2_0);
            assert!((t - (p.t_curved - p.x_sheared)).abs() < 1e-14, "{p:?}");
        }
        for p in enumerate_admissible_pairs(*sp, &s, DyadicLevel::new(1), PairKind::Type2).unwrap() {
            let t = tau(&s, p.z2_0, p.z1_0, p.z2_0);
            assert!((t - (p.x_sheared - p.t_curved)).abs() < 1e-14, "{p:?}");
        }
    }
}

#[test]
fn type_two_mirrors_type_one() {
    let (s, strips) = small_setting();
    let delta = DyadicLevel::new(2);
    for sp in &strips {
        let swapped = StripPair { j1: sp.j2, j2: sp.j1, ..*sp };
        let t2: Vec<_> = enumerate_admissible_pairs(*sp, &s, delta, PairKind::Type2).unwrap().collect();
        let t1: Vec<_> = enumerate_admissible_pairs(swapped, &s, delta, PairKind::Type1).unwrap().collect();
        assert_eq!(t1.len(), t2.len());
        for (a, b) in t1.iter().zip(&t2) {
            assert_eq!((a.z1_0, a.z2_0), (b.z2_0, b.z1_0));
            assert_eq!((a.x_sheared, a.t_curved), (b.x_sheared, b.t_curved));
        }
    }
}

#[test]
fn membership_forms_agree_and_samples_are_members() {
    let (s, strips) = small_setting();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    for (k, sp) in strips.iter().enumerate().step_by(3) {
        for kind in [PairKind::Type1, PairKind::Type2] {
            let delta = DyadicLevel::new(if k % 2 == 0 { 1 } else { 0 });
            for p in enumerate_admissible_pairs(*sp, &s, delta, kind).unwrap().step_by(97) {
                for side in [1, 2] {
                    let z0 = if side == 1 { p.z1_0 } else { p.z2_0 };
                    let rho = p.rho();
                    for _ in 0..500 {
                        let z = pt(
                            z0.x + rng.gen_range(-0.2..0.2),
                            z0.y + rng.gen_range(-0.1 * rho..1.1 * rho),
                        );
                        assert_eq!(p.membership(&s, z, side), p.membership_tau_form(&s, z, side), "{p:?} {z:?}");
                        checked += 1;
                    }
                    for _ in 0..50 {
                        let z = p.sample(&s, side, &mut rng).unwrap();
                        assert!(p.membership(&s, z, side), "{p:?} side {side} {z:?}");
                    }
                }
            }
        }
    }
    assert!(checked >= 100_000, "{checked}");
}

/// Ratio ranges over a 10x10 grid in each box (edges included).
fn grid_ratios(p: &AdmissiblePair, s: &Surface) -> ((f64, f64), (f64, f64)) {
    let rho = p.rho();
    let w = p.width();
    let hs = rho * p.delta.value::<f64>().min(1.0);
    let eps = p.epsilon;
    let h = &s.h;
    let box_points = |side: usize| -> Vec<Point> {
        let sheared = (side == 1) == (p.kind == PairKind::Type1);
        let mut out = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                let (fy, fu) = (i as f64 / 9.0 * (1.0 - 1e-12), j as f64 / 9.0 * (1.0 - 1e-12));
                let z = if sheared {
                    let y0 = if side == 1 { p.y1_0 } else { p.y2_0 };
                    let dy = fy * hs;
                    pt(p.x_sheared - eps * h.deriv(y0, 2) / 2.0 * dy + fu * w, y0 + dy)
                } else {
                    let (y0, yr) = if side == 2 { (p.y2_0, p.y1_0) } else { (p.y1_0, p.y2_0) };
                    let y = y0 + fy * rho;
                    let shift = eps * (h.deriv(y, 1) - h.deriv(yr, 1) - h.deriv(yr, 2) / 2.0 * (y - yr));
                    pt(p.t_curved - shift + fu * w, y)
                };
                if z.x.abs() <= 1.0 {
                    out.push(z);
                }
            }
        }
        out
    };
    let (u1, u2) = (box_points(1), box_points(2));
    let mut small = (f64::INFINITY, f64::NEG_INFINITY);
    let mut large = small;
    for &a in &u1 {
        for &b in &u2 {
            let (x, y) = p.ratios(s, a, b);
            small = (small.0.min(x), small.1.max(x));
            large = (large.0.min(y), large.1.max(y));
        }
    }
    (small, large)
}

#[test]
fn sampled_ratios_agree_with_grid_oracle() {
    let (s, strips) = small_setting();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let close = |a: f64, b: f64| (a - b).abs() <= 0.1 * a.abs().max(b.abs());
    for sp in strips.iter().step_by(4) {
        for kind in [PairKind::Type1, PairKind::Type2] {
            for p in enumerate_admissible_pairs(*sp, &s, DyadicLevel::new(2), kind).unwrap().step_by(211) {
                let st = check_sizeofdeltas(&p, &s, 1000, &mut rng).unwrap();
                assert!(st.pass, "{st:?}");
                let (gs, gl) = grid_ratios(&p, &s);
                assert!(close(st.small.0, gs.0) && close(st.small.1, gs.1), "{st:?} vs {gs:?}");
                assert!(close(st.large.0, gl.0) && close(st.large.1, gl.1), "{st:?} vs {gl:?}");
            }
        }
    }
}

#[test]
fn sweep_is_deterministic_and_passes_at_large_delta() {
    let (s, _) = small_setting();
    let a = sizeofdeltas_sweep(&s, DyadicLevel::new(-2), 8, DyadicLevel::new(2), 50, 9).unwrap();
    let b = sizeofdeltas_sweep(&s, DyadicLevel::new(-2), 8, DyadicLevel::new(2), 50, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.pairs > 0 && a.failures == 0, "{a:?}");
}

#[test]
fn admissible_pair_json_round_trip() {
    let (s, strips) = small_setting();
    let p = enumerate_admissible_pairs(strips[0], &s, DyadicLevel::new(1), PairKind::Type2).unwrap().next().unwrap();
    let back: AdmissiblePair = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
    assert_eq!(p, back);
}

#[test]
fn enumeration_rejects_oversized_lattice() {
    let s = PhaseSurface::cubic(1.0, cubic_sixth()).unwrap();
    let sp = whitney_strips(DyadicLevel::new(-2), 8).unwrap()[0];
    // ερ²δ = 2 > 1
    assert!(enumerate_admissible_pairs(sp, &s, DyadicLevel::new(5), PairKind::Type1).is_err());
}

#[test]
fn rescaled_cubic_is_cubic_again() {
    let s = PhaseSurface::cubic(0.25, cubic_sixth()).unwrap();
    let (r, map) = rescale_strip(&s, (0.25, 0.75), 0.25).unwrap();
    // d = 1/4, so ε' = d²λ = 1/64 and the normalised perturbation is y³/6 again
    assert!((r.epsilon - 1.0 / 64.0).abs() < 1e-15);
    for i in 0..=20 {
        let y = -1.0 + i as f64 / 10.0;
        assert!((r.h.value(y) - y * y * y / 6.0).abs() < 1e-12);
        for k in 1..=3 {
            assert!((r.h.deriv(y, k) - cubic_sixth().deriv(y, k)).abs() < 1e-12);
        }
    }
    assert!((r.cubic_type.unwrap().c3 - 1.0).abs() < 1e-12);
    assert!((map.determinant() - 4.0).abs() < 1e-15);
}

#[test]
fn rescaling_preserves_phase_up_to_affine_terms() {
    let h = SmoothFn1D::polynomial(vec![0.0, 0.0, 0.0, 1.0 / 6.0, 0.2]);
    let s = PhaseSurface::new(0.5, h.clone());
    let (l, u) = (0.3, 0.7);
    // F''' = ε(1 + 4.8 y) ranges over [1.22, 2.18] on (0.3, 0.7)
    let lam = 1.0;
    let (r, map) = rescale_strip(&s, (l, u), lam).unwrap();
    let ScalingMap::StripNormalize { c, d, .. } = map else { panic!() };
    let f = |y: f64, k: usize| 0.5 * h.deriv(y, k);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let z = pt(rng.gen_range(-1.0..1.0), rng.gen_range(l..u));
        let zp = map.forward(z);
        let lhs = s.phi(z) - c * z.x - f(c, 0) - f(c, 1) * (z.y - c);
        let rhs = d * r.phi(zp);
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        let back = map.inverse(zp);
        assert!((back.x - z.x).abs() < 1e-12 && (back.y - z.y).abs() < 1e-12);
    }
}

#[test]
fn rescaling_contracts() {
    let s = PhaseSurface::cubic(0.25, cubic_sixth()).unwrap();
    // F''' = 1/4, not within [λ/2, 4λ] for λ = 1
    assert!(matches!(rescale_strip(&s, (0.25, 0.75), 1.0), Err(Error::Contract(_))));
    assert!(matches!(rescale_strip(&s, (0.75, 0.25), 0.25), Err(Error::Contract(_))));
    // a band ratio of 6 is allowed by the rescaling but not by the cubic-type certificate
    let h = SmoothFn1D::polynomial(vec![0.0, 0.0, 0.0, 1.0 / 6.0, 5.0 / 24.0]);
    let (r, _) = rescale_strip(&PhaseSurface::new(1.0, h), (0.0, 1.0), 1.6).unwrap();
    assert!(r.cubic_type.is_none());
}

#[test]
fn identity_scaling_map() {
    let m = ScalingMap::StripNormalize { c: 0.0, d: 1.0, shear: 0.0 };
    let z = pt(0.3, -0.7);
    assert_eq!(m.forward(z), z);
    assert_eq!(m.inverse(z), z);
    assert_eq!(m.determinant(), 1.0);
    assert!((ScalingMap::norm_exponent(4.0, 2.0) - 0.0).abs() < 1e-15);
    assert!((ScalingMap::norm_exponent(3.0, 1.0) + 2.0 / 3.0).abs() < 1e-15);
}

fn prototype(delta_k: i32) -> ScaledPrototype {
    let s = PhaseSurface::cubic(1.0, cubic_sixth()).unwrap();
    let d = 2f64.powi(delta_k);
    delta_scale(&s, DyadicLevel::new(delta_k), 1.0 / 8.0, d, 1.0).unwrap()
}

fn op_norm(m: [[f64; 2]; 2]) -> f64 {
    // symmetric: largest |eigenvalue|
    let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mean + rad).abs().max((mean - rad).abs())
}

#[test]
fn scaled_prototype_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in [-4, -6, -8] {
        let p = prototype(k);
        let d = p.delta;
        for _ in 0..2000 {
            let (z1, z2) = (p.sample_s(1, &mut rng), p.sample_s(2, &mut rng));
            assert!(p.in_u1_s(z1) && p.in_u2_s(z2));
            // membership commutes with the coordinate change
            assert!(p.in_u1(p.map.inverse(z1)) && p.in_u2(p.map.inverse(z2)));
            let n1 = op_norm(p.hessian_s(z1));
            let n2 = op_norm(p.hessian_s(z2));
            assert!((0.5..=2.0).contains(&n1), "{n1}");
            assert!(n2 >= 0.25 / d && n2 <= 4.0 / d, "{n2}");
            for g in [p.grad_s(z1), p.grad_s(z2)] {
                assert!(g.x.hypot(g.y) <= 10.0);
            }
            // the rotated gradient difference is (-ā, b) up to O(c0)
            let (g1, g2) = (p.grad_s(z1), p.grad_s(z2));
            let omega = (-(g2.y - g1.y), g2.x - g1.x);
            let err = (omega.0 + p.abar()).hypot(omega.1 - p.b);
            assert!(err <= 4.0 * p.c0, "{err}");
            for i in [1, 2] {
                let tv = refined_transversality(&p, i, z1, z2).unwrap();
                assert!(tv.is_finite() && tv.abs() > 0.0);
            }
        }
    }
}

#[test]
fn delta_scale_contracts() {
    let cubic = PhaseSurface::cubic(1.0, cubic_sixth()).unwrap();
    let plain = PhaseSurface::new(1.0, cubic_sixth());
    let d = DyadicLevel::new(-4);
    let dv = 1.0 / 16.0;
    assert!(delta_scale(&cubic, DyadicLevel::new(-1), 0.1, 0.5, 1.0).is_err());
    assert!(delta_scale(&cubic, d, 0.1, dv / 8.0, 1.0).is_err());
    assert!(delta_scale(&cubic, d, 0.1, dv, 3.0).is_err());
    assert!(delta_scale(&plain, d, 0.1, dv, 1.0).is_err());
    let p = delta_scale(&cubic, d, 0.1, -dv, -1.0).unwrap();
    let z = pt(0.01, 0.001);
    assert!(matches!(refined_transversality(&p, 1, z, z), Err(Error::Singular(_))));
}

#[test]
fn third_derivative_split() {
    // h''' = y on [0,1]
    let s = PhaseSurface::new(1.0, SmoothFn1D::polynomial(vec![0.0, 0.0, 0.0, 0.0, 1.0 / 24.0]));
    let w = ((0.0, 1.0), (0.0, 1.0));
    let sp = split_by_third_derivative(&s, w, 0.25, 0.25);
    assert_eq!(sp.above.len(), 1);
    assert_eq!(sp.below.len(), 1);
    assert!((sp.above[0].0 - 1.0 / 1600.0).abs() < 1e-12 && sp.above[0].1 == 1.0);
    assert!(sp.below[0].0 == 0.0 && (sp.below[0].1 - 1.0 / 1600.0).abs() < 1e-12);
    let zero = split_by_third_derivative(&s, w, 0.0, 0.25);
    assert_eq!(zero.above, vec![(0.0, 1.0)]);
    assert_eq!(zero.below, vec![(0.0, 0.0)]);
}

#[test]
fn cubic_certificate_requirements() {
    assert!(PhaseSurface::cubic(1.0, cubic_sixth()).is_ok());
    // h(0) != 0
    let shifted = SmoothFn1D::from_fn("shifted", (-1.0, 1.0), 3, |y: f64| 1.0 + y * y * y / 6.0)
        .with_derivatives(|y, k| [0.0, y * y / 2.0, y, 1.0][k]);
    assert!(PhaseSurface::cubic(1.0, shifted).is_err());
    // h''' changes sign
    let quartic = SmoothFn1D::from_fn("quartic", (-1.0, 1.0), 3, |y: f64| y.powi(4))
        .with_derivatives(|y, k| [y.powi(4), 4.0 * y.powi(3), 12.0 * y * y, 24.0 * y][k]);
    assert!(PhaseSurface::cubic(1.0, quartic).is_err());
    assert!(PhaseSurface::cubic(0.0, cubic_sixth()).is_err());
}
