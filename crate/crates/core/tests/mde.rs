mod common;

use common::*;
use ethlab::linalg::{self, c};
use ethlab::mde::{self, Deformation, DensityProfile, MdeSolution, SpectralPoint};
use ethlab::c64;
use proptest::prelude::*;
use std::sync::OnceLock;

fn zero64() -> &'static Deformation {
    static D: OnceLock<Deformation> = OnceLock::new();
    D.get_or_init(|| Deformation::zero(64))
}

fn zero_profile() -> &'static DensityProfile {
    static P: OnceLock<DensityProfile> = OnceLock::new();
    P.get_or_init(|| DensityProfile::compute(&Deformation::zero(8)))
}

fn randdiag_profile() -> &'static (Deformation, DensityProfile) {
    static P: OnceLock<(Deformation, DensityProfile)> = OnceLock::new();
    P.get_or_init(|| {
        let d = Deformation::random_diag(40, 11);
        let p = DensityProfile::compute(&d);
        (d, p)
    })
}

fn full_random(n: usize, seed: u64) -> Deformation {
    let mut r = rng(seed);
    let g = gaussian(n, n, 0.7 / (n as f64).sqrt(), &mut r);
    Deformation::new(g).unwrap()
}

fn deformations() -> Vec<Deformation> {
    vec![
        Deformation::zero(12),
        Deformation::shift(12, c(0.5, 0.0)),
        Deformation::random_diag(12, 3),
        full_random(12, 5),
    ]
}

#[test]
fn semicircle_value_at_i() {
    let m = mde::solve_m(zero64(), SpectralPoint::from_parts(0.0, 1.0)).unwrap();
    let want = c(0.0, (5f64.sqrt() - 1.0) / 2.0);
    assert!((m - want).norm() < 1e-13, "{m}");
}

#[test]
fn shift_matches_cubic_root() {
    // root of −a³ + w a² + (|z|²−1) a − w|z|² = 0 with Im(a − w) > 0
    let want = c(-0.10080607649680412, 0.8301308802686754);
    let w = c(0.3, 0.1);
    let d = Deformation::shift(16, c(0.5, 0.0));
    let m = mde::solve_m(&d, SpectralPoint::new(w)).unwrap();
    assert!((m - want).norm() < 1e-10, "{m}");
    let a = w + m;
    assert!((-1.0 / m - (a - 0.25 / a)).norm() < 1e-10);
}

#[test]
fn boundary_values_of_semicircle() {
    let d = zero64();
    let m0 = mde::boundary_m(d, 0.0).unwrap();
    assert!((m0 - c(0.0, 1.0)).norm() < 1e-9, "{m0}");
    let m3 = mde::boundary_m(d, 3.0).unwrap();
    assert!(m3.im.abs() <= 1e-7);
    // m(3) = (−3 + √5)/2
    assert!((m3.re - (-3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-9);
    assert!((mde::scdos(d, 0.0).unwrap() - 1.0 / std::f64::consts::PI).abs() < 1e-9);
    assert!(mde::scdos(d, 2.5).unwrap() <= 1e-7);
}

#[test]
fn boundary_symmetry() {
    let d = Deformation::random_diag(30, 2);
    for &e in &[0.1, 0.7, 1.3, 2.2, 3.5] {
        let p = mde::boundary_m(&d, e).unwrap();
        let q = mde::boundary_m(&d, -e).unwrap();
        assert!((q + p.conj()).norm() < 1e-9, "e = {e}: {p} vs {q}");
    }
}

#[test]
fn build_m_zero_is_scalar() {
    let d = Deformation::zero(6);
    let w = SpectralPoint::from_parts(0.0, 1.0);
    let sol = MdeSolution::new(&d, w).unwrap();
    let want = linalg::scale(linalg::eye(12).as_ref(), sol.m);
    assert!(max_abs_diff(&sol.mat, &want) < 1e-14);
}

#[test]
fn mde_invariants_on_several_deformations() {
    for d in deformations() {
        for &(e, eta) in &[(0.2, 0.5), (-0.7, 0.05), (1.1, -0.3), (0.0, 0.01)] {
            let w = SpectralPoint::from_parts(e, eta);
            let sol = MdeSolution::new(&d, w).unwrap();
            assert!(sol.residual <= 1e-12, "{}: residual {}", d.label(), sol.residual);
            assert!(sol.m.im * eta > 0.0);
            assert!((linalg::tr_avg(sol.mat.as_ref()) - sol.m).norm() <= 1e-10);
            assert!(sol.mde_defect(&d) <= 1e-8, "{}: defect {}", d.label(), sol.mde_defect(&d));
            let neg = MdeSolution::new(&d, SpectralPoint::new(-w.w)).unwrap();
            let lhs = linalg::eminus_left(sol.mat.as_ref());
            let rhs = linalg::eminus_right(neg.mat.as_ref());
            assert!(linalg::frob(linalg::add(lhs.as_ref(), rhs.as_ref()).as_ref()) <= 1e-8);
        }
    }
}

#[test]
fn m_ward_and_saturation() {
    for d in deformations() {
        let w1 = c(0.3, 0.2);
        let w2 = c(-0.5, -0.4);
        let s1 = MdeSolution::new(&d, w1.into()).unwrap();
        let s2 = MdeSolution::new(&d, w2.into()).unwrap();
        let k = (w1 - w2) + (s1.m - s2.m);
        let prod = linalg::mul(s2.mat.as_ref(), s1.mat.as_ref());
        let lhs = linalg::sub(s1.mat.as_ref(), s2.mat.as_ref());
        let defect = linalg::frob(linalg::axpy(lhs.as_ref(), -k, prod.as_ref()).as_ref());
        assert!(defect <= 1e-8, "{}: {defect}", d.label());

        let mm = linalg::mul(s1.mat.as_ref(), linalg::adjoint(s1.mat.as_ref()).as_ref());
        let q = linalg::tr_avg(mm.as_ref()).re;
        let im = linalg::tr_avg(s1.im_m().as_ref()).re;
        assert!(((1.0 - q) * im - w1.im * q).abs() <= 1e-10);
    }
}

#[test]
fn svd_reconstructs_deformation() {
    for d in deformations() {
        assert!(d.reconstruction_error() <= 1e-12, "{}", d.label());
        let nu = d.singular_values();
        assert!(nu.windows(2).all(|p| p[0] <= p[1]));
        assert!(nu[0] >= 0.0);
        assert_eq!(d.norm(), *nu.last().unwrap());
    }
}

#[test]
fn singular_denominator_is_reported() {
    let d = Deformation::shift(4, c(1.0, 0.0));
    // a = w + m with w + m = ν exactly
    let err = mde::build_m(&d, SpectralPoint::boundary(1.0), c(0.0, 0.0)).unwrap_err();
    assert!(matches!(err, ethlab::EthError::SingularDenominator { .. }));
}

#[test]
fn density_profile_of_semicircle() {
    let p = zero_profile();
    assert!((p.mass() - 1.0).abs() <= 1e-6, "mass {}", p.mass());
    assert!((p.mass_trapezoid() - 1.0).abs() <= 1e-4);
    assert!(p.rho.iter().all(|&r| r >= 0.0));
    for (x, r) in p.grid.iter().zip(&p.rho).step_by(37) {
        let exact = if x.abs() < 2.0 { (4.0 - x * x).sqrt() / (2.0 * std::f64::consts::PI) } else { 0.0 };
        assert!((r - exact).abs() < 2e-4, "x = {x}: {r} vs {exact}");
    }
    for (&x, &f) in p.grid.iter().zip(&p.cdf).step_by(41) {
        assert!((f - semicircle_cdf(x)).abs() < 1e-6, "cdf at {x}: {f}");
    }
    let csv = p.to_csv();
    assert!(csv.starts_with("e,rho\n"));
}

#[test]
fn kappa_bulk_of_semicircle() {
    let p = zero_profile();
    let b = p.bulk(0.01).unwrap();
    assert_eq!(b.len(), 1);
    let a = 1.472268377976354;
    assert!((b.intervals[0].0 + a).abs() < 1e-6 && (b.intervals[0].1 - a).abs() < 1e-6, "{:?}", b);
    let thr = 0.01f64.cbrt();
    for (&x, &r) in p.grid.iter().zip(&p.rho) {
        assert_eq!(b.contains(x), r >= thr, "x = {x}");
    }
    assert!(matches!(p.bulk(0.5), Err(ethlab::EthError::EmptyBulk { .. })));
}

#[test]
fn two_component_bulk_for_large_shift() {
    let d = Deformation::shift(4, c(0.98, 0.0));
    let p = DensityProfile::compute(&d);
    let b = p.bulk(0.001).unwrap();
    assert_eq!(b.len(), 2, "{:?}", b);
    assert!(b.intervals[0].1 < 0.0 && b.intervals[1].0 > 0.0);
}

#[test]
fn bulk_nesting_and_separation() {
    let (_, p) = randdiag_profile();
    let kappas = [0.0005, 0.002, 0.008, 0.02];
    for pair in kappas.windows(2) {
        let (small, large) = (pair[0], pair[1]);
        let outer = p.bulk(small).unwrap();
        let inner = p.bulk(large).unwrap();
        for &(a, b) in &inner.intervals {
            assert!(outer.contains(a) && outer.contains(b));
        }
        let mut gap = f64::INFINITY;
        for &(oa, ob) in &outer.intervals {
            for &(ia, ib) in &inner.intervals {
                for edge in [oa, ob] {
                    gap = gap.min((edge - ia).abs().min((edge - ib).abs()));
                    if ia <= edge && edge <= ib {
                        gap = 0.0;
                    }
                }
            }
        }
        assert!(gap > 0.0);
    }
}

#[test]
fn bulk_boundedness_proxy() {
    let (d, p) = randdiag_profile();
    let kappa = 0.01;
    let b = p.bulk(kappa).unwrap();
    for &(lo, hi) in &b.intervals {
        for k in 0..5 {
            let e = lo + (hi - lo) * (k as f64 + 0.5) / 5.0;
            for &eta in &[1e-3, 0.1, 1.0] {
                let s = MdeSolution::new(d, SpectralPoint::from_parts(e, eta)).unwrap();
                assert!(linalg::op_norm(s.mat.as_ref()) <= 10.0 / kappa.powf(2.0 / 3.0));
            }
        }
    }
}

#[test]
fn density_symmetry_and_mass_random_diag() {
    let (_, p) = randdiag_profile();
    assert!((p.mass() - 1.0).abs() <= 1e-6);
    for &x in p.grid.iter().step_by(53) {
        assert!((p.rho_at(x) - p.rho_at(-x)).abs() <= 1e-9, "x = {x}");
    }
}

#[test]
fn semicircle_quantiles() {
    let q = zero_profile().quantiles(100);
    assert!((q.get(50) - 0.8079455065990344).abs() < 1e-8, "{}", q.get(50));
    assert!((q.get(100) - 2.0).abs() < 1e-4);
    assert!((q.get(-100) + 2.0).abs() < 1e-4);
    for i in 1..100isize {
        let t = (i + 100) as f64 / 200.0;
        assert!((semicircle_cdf(q.get(i)) - t).abs() < 1e-8, "i = {i}");
        assert!((q.get(i) + q.get(-i)).abs() < 1e-9, "i = {i}");
    }
}

#[test]
fn quantiles_random_diag_consistent_with_table() {
    let (_, p) = randdiag_profile();
    let n = 40;
    let q = p.quantiles(n);
    for i in q.indices() {
        assert!((q.get(i) + q.get(-i)).abs() < 1e-9, "i = {i}");
        if i.unsigned_abs() < n {
            let t = (i + n as isize) as f64 / (2 * n) as f64;
            assert!((p.cdf_at(q.get(i)) - t).abs() < 1e-8);
            let rough = p.quantile_from_table(t);
            let rho = p.rho_at(q.get(i));
            assert!((rough - q.get(i)).abs() <= 2.0 / (n as f64 * rho), "i = {i}");
        }
    }
}

#[test]
fn spec_strings_parse() {
    let dir = tempfile::tempdir().unwrap();
    let diag = dir.path().join("d.txt");
    std::fs::write(&diag, "0.5\n-0.25\n1.0\n").unwrap();
    let d = Deformation::from_spec(&format!("diag:{}", diag.display()), 3).unwrap();
    assert_eq!(d.singular_values(), &[0.25, 0.5, 1.0]);
    let full = dir.path().join("f.txt");
    std::fs::write(&full, "1,0 0,1\n0,0 2,0\n").unwrap();
    let f = Deformation::from_spec(&format!("full:{}", full.display()), 2).unwrap();
    assert!(f.reconstruction_error() < 1e-12);
    assert!(Deformation::from_spec(&format!("full:{}", full.display()), 3).is_err());
    let s = Deformation::from_spec("shift:0.5,0.1", 5).unwrap();
    assert!((s.lambda()[(2, 2)] - c(-0.5, -0.1)).norm() == 0.0);
    assert!(Deformation::from_spec("zero", 4).unwrap().norm() == 0.0);
    assert!(Deformation::from_spec("randdiag:7", 9).unwrap().norm() <= 1.0);
    assert!(Deformation::from_spec("bogus", 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conjugate_symmetry(e in -3.0f64..3.0, eta in 1e-3f64..5.0) {
        let d = Deformation::random_diag(16, 1);
        let m = mde::solve_m(&d, SpectralPoint::from_parts(e, eta)).unwrap();
        let mc = mde::solve_m(&d, SpectralPoint::from_parts(e, -eta)).unwrap();
        prop_assert!((mc - m.conj()).norm() < 1e-12);
    }

    #[test]
    fn residual_and_halfplane(e in -4.0f64..4.0, logeta in -6.0f64..3.0, seed in 0u64..20) {
        let d = Deformation::random_diag(24, seed);
        let w = SpectralPoint::from_parts(e, 10f64.powf(logeta));
        let m = mde::solve_m(&d, w).unwrap();
        prop_assert!(m.im > 0.0);
        let a = w.w + m;
        prop_assert!((m - d.self_energy(a)).norm() <= 1e-12);
    }

    #[test]
    fn m_ward_random(e1 in -2.0f64..2.0, e2 in -2.0f64..2.0, y1 in 0.01f64..2.0, y2 in -2.0f64..-0.01) {
        let d = full_random(8, 9);
        let s1 = MdeSolution::new(&d, SpectralPoint::from_parts(e1, y1)).unwrap();
        let s2 = MdeSolution::new(&d, SpectralPoint::from_parts(e2, y2)).unwrap();
        let k = (s1.w.w - s2.w.w) + (s1.m - s2.m);
        let prod = linalg::mul(s2.mat.as_ref(), s1.mat.as_ref());
        let lhs = linalg::sub(s1.mat.as_ref(), s2.mat.as_ref());
        prop_assert!(linalg::frob(linalg::axpy(lhs.as_ref(), -k, prod.as_ref()).as_ref()) <= 1e-8);
    }
}

#[test]
fn large_w_converges() {
    let d = Deformation::random_diag(10, 4);
    let w = SpectralPoint::new(c64::new(9e5, 3e5));
    let m = mde::solve_m(&d, w).unwrap();
    assert!((m + 1.0 / w.w).norm() < 1e-10);
}
