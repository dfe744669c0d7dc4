mod common;

use common::*;
use ethlab::ensemble::{self, SpectralSample};
use ethlab::linalg::{self, c};
use ethlab::mde::{Deformation, DensityProfile};
use ethlab::verify::{self, IdentityOptions, Rectangle, ScanConfig, ScanReport};
use ethlab::CMat;
use faer::Mat;

fn small(deformation: &str, n_list: Vec<usize>, trials: usize) -> ScanConfig {
    ScanConfig { deformation: deformation.into(), n_list, trials, eta_points: 3, ..Default::default() }
}

fn series_mean(rep: &ScanReport, name: &str) -> Vec<f64> {
    rep.series(name).map(|g| g.stats.mean).collect()
}

#[test]
fn gauss_kronrod_is_exact_on_polynomials() {
    for k in 0..=20 {
        let f = |x: f64| Mat::from_fn(2, 2, |i, j| c(x.powi(k) * (1 + i + j) as f64, 0.0));
        let (v, err) = verify::gauss_kronrod(f, 0.0, 1.0, 1e-14).unwrap();
        let exact = 1.0 / (k + 1) as f64;
        assert!((v[(1, 1)].re - 3.0 * exact).abs() < 1e-13, "k={k}");
        assert!(err <= 1e-14);
    }
}

#[test]
fn gauss_kronrod_adapts_to_a_peak() {
    // ∫ 1/(x²+ε²) over [−1, 1] = 2 atan(1/ε)/ε
    let eps = 1e-3;
    let f = |x: f64| Mat::from_fn(1, 1, |_, _| c(1.0 / (x * x + eps * eps), 0.0));
    let (v, _) = verify::gauss_kronrod(f, -1.0, 1.0, 1e-8).unwrap();
    let exact = 2.0 * (1.0 / eps).atan() / eps;
    assert!((v[(0, 0)].re - exact).abs() < 1e-8 * exact);
}

#[test]
fn abs_resolvent_representation() {
    let def = Deformation::zero(32);
    let cfg = ensemble::SampleConfig::new(32, ensemble::EntryDist::ComplexGaussian, 5).unwrap();
    let h = SpectralSample::draw(&cfg, &def).unwrap().h();
    let d = verify::abs_resolvent_quadrature(&h, 0.3, 0.2, 1e-5).unwrap();
    assert!(d <= 1e-5, "{d:e}");
}

#[test]
fn contour_product_example() {
    let def = Deformation::random_diag(32, 3);
    let cfg = ensemble::SampleConfig::new(32, ensemble::EntryDist::ComplexGaussian, 6).unwrap();
    let h = SpectralSample::draw(&cfg, &def).unwrap().h();
    let rect = Rectangle { x0: -1.0, x1: 1.0, y0: 0.15, y1: 1.0 };
    let d = verify::contour_product(&h, c(0.1, 0.3), c(-0.2, 0.4), rect, 4000).unwrap();
    assert!(d <= 1e-4, "{d:e}");
    // a rectangle missing one of the points is rejected
    assert!(verify::contour_product(&h, c(0.1, 0.3), c(-0.2, 1.4), rect, 100).is_err());
}

#[test]
fn identity_suite_passes_on_three_deformations() {
    let rep = verify::run_identity_suite(&IdentityOptions::default()).unwrap();
    assert!(rep.pass, "{:?}", rep.failures());
    assert_eq!(rep.total_samples, 3);
}

#[test]
fn recursion_equivalence_on_fifty_specs() {
    let (count, err) = verify::recursion_equivalence(11, 50).unwrap();
    assert_eq!(count, 50);
    assert!(err <= 1e-8, "{err:e}");
}

#[test]
fn eth_coefficients_of_trivial_observables() {
    let def = Deformation::shift(16, c(0.5, 0.0));
    let p = DensityProfile::compute(&def);
    let gammas = [-0.7, 0.1, 0.9];
    for (x, y) in verify::eth_coefficients(&def, &p, &linalg::eye(32), &gammas) {
        assert!((x - c(1.0, 0.0)).norm() < 1e-12 && y.norm() < 1e-12);
    }
    for (x, y) in verify::eth_coefficients(&def, &p, &linalg::e_minus(32), &gammas) {
        assert!(x.norm() < 1e-12 && (y - c(1.0, 0.0)).norm() < 1e-12);
    }
}

#[test]
fn singvec_fractions_reduce_to_trace_for_scalar_shift() {
    let def = Deformation::shift(12, c(0.5, 0.0));
    let p = DensityProfile::compute(&def);
    let b = verify::test_observable(12, 3);
    let tr = linalg::tr_avg(b.as_ref());
    for e in [0.2, 0.8, 1.3] {
        let f = verify::singvec_fractions(&def, &p, &b, e);
        assert!((f[0] - tr).norm() < 1e-8 && (f[1] - tr).norm() < 1e-8, "e={e}");
    }
}

#[test]
fn singvec_fractions_match_closed_forms() {
    for def in [Deformation::random_diag(10, 4), Deformation::shift(10, c(0.3, 0.4))] {
        let p = DensityProfile::compute(&def);
        let mut r = rng(9);
        let b = gaussian(10, 10, 1.0, &mut r);
        for e in [0.1, 0.6] {
            let fast = verify::singvec_fractions(&def, &p, &b, e);
            let direct = verify::singvec_fractions_direct(&def, &p, &b, e);
            for k in 0..3 {
                assert!((fast[k] - direct[k]).norm() < 1e-8, "{} e={e} k={k}", def.label());
            }
        }
    }
}

#[test]
fn identity_observable_gives_orthonormality() {
    // B = I: ⟨u_i,u_j⟩ = δ_ij and the fraction is one
    let def = Deformation::random_diag(16, 2);
    let p = DensityProfile::compute(&def);
    let f = verify::singvec_fractions(&def, &p, &linalg::eye(16), 0.4);
    assert!((f[0] - c(1.0, 0.0)).norm() < 1e-10 && (f[1] - c(1.0, 0.0)).norm() < 1e-10);
}

#[test]
fn overlap_bulk_criterion_for_ginibre() {
    // Λ = 0: (1/N)Σ 1/(|μ|² + κ^{2/3}) ≥ 1 ⇔ |μ|² ≤ 1 − κ^{2/3}
    let def = Deformation::zero(8);
    let k: f64 = 0.216;
    let r = (1.0 - k.powf(2.0 / 3.0)).sqrt();
    assert!((r - 0.8).abs() < 1e-3);
    assert!(verify::in_overlap_bulk(&def, c(0.79, 0.0), k));
    assert!(!verify::in_overlap_bulk(&def, c(0.0, 0.81), k));
}

#[test]
fn config_rejects_bad_fields() {
    let mut cfg = ScanConfig::default();
    assert!(cfg.validate().is_ok());
    cfg.kappa = -1.0;
    assert!(cfg.validate().is_err());
    let err = serde_json::from_str::<ScanConfig>(r#"{"trails": 5}"#).unwrap_err();
    assert!(err.to_string().contains("trails"));
}

#[test]
fn default_eta_grid_is_geometric() {
    let cfg = ScanConfig::default();
    let etas = cfg.etas(256);
    assert_eq!(etas.len(), 8);
    assert!((etas[0] - 1.0).abs() < 1e-15);
    assert!((etas[7] - 256f64.powf(-0.8)).abs() < 1e-12);
    let r = etas[1] / etas[0];
    assert!(etas.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
}

#[test]
fn too_few_trials_is_an_error() {
    let cfg = small("zero", vec![16], 5);
    assert!(matches!(verify::run_single_law(&cfg), Err(ethlab::EthError::InsufficientTrials { got: 5, need: 20 })));
}

#[test]
fn single_law_small_scan_is_consistent() {
    let rep = verify::run_single_law(&small("zero", vec![32, 64], 20)).unwrap();
    assert_eq!(rep.total_samples, 40);
    assert_eq!(rep.excluded_samples, 0);
    assert!(rep.grid.iter().all(|g| g.stats.count == 20));
    assert!(rep.fitted_exponent.is_some_and(f64::is_finite));
    let csv = rep.csv();
    assert!(csv["err_av"].starts_with("N,eta,e,trial,statistic\n"));
}

#[test]
fn scans_are_deterministic_across_worker_counts() {
    let mut cfg = small("shift:0.5,0", vec![24], 6);
    let a = verify::run_eth(&cfg).unwrap();
    cfg.workers = 3;
    let b = verify::run_eth(&cfg).unwrap();
    assert_eq!(serde_json::to_value(&a.grid).unwrap(), serde_json::to_value(&b.grid).unwrap());
    assert_eq!(a.rows, b.rows);
}

#[test]
fn variance_along_e_minus_vanishes_for_equal_singular_values() {
    // at e = 0 the off-diagonal part of Im M vanishes, so equal singular values make
    // E₋Im M proportional to E₋, and ⟨GE₋⟩ = ⟨ME₋⟩ = 0 identically
    for def in ["zero", "shift:0.5,0"] {
        let cfg = ScanConfig { eta_grid: Some(vec![0.05, 0.2]), ..small(def, vec![32], 20) };
        let rep = verify::run_variance_decomposition(&cfg).unwrap();
        let minus = series_mean(&rep, "var_minus");
        let par = series_mean(&rep, "var_par");
        assert!(minus.iter().all(|&v| v < 1e-28), "{def} {minus:?}");
        assert!(par.iter().all(|&v| v > 1e-8), "{def} {par:?}");
    }
}

#[test]
fn variance_directions_are_ordered_with_deformation() {
    let cfg = ScanConfig { eta_grid: Some(vec![0.05]), ..small("randdiag:7", vec![64], 20) };
    let rep = verify::run_variance_decomposition(&cfg).unwrap();
    let par = series_mean(&rep, "var_par")[0];
    let minus = series_mean(&rep, "var_minus")[0];
    let reg = series_mean(&rep, "var_reg")[0];
    assert!(minus > 1e-12 && minus < par && reg < par, "par {par:e} minus {minus:e} reg {reg:e}");
}

#[test]
fn rigidity_symmetry_is_exact() {
    let rep = verify::run_rigidity(&small("zero", vec![32], 4)).unwrap();
    let sym = rep.checks.iter().find(|c| c.name.starts_with("index symmetry")).unwrap();
    assert!(sym.pass && sym.value <= 1e-12);
}

#[test]
fn mix_seed_separates_labels() {
    assert_ne!(verify::mix_seed(0, 1), verify::mix_seed(0, 2));
    assert_ne!(verify::mix_seed(0, 1), verify::mix_seed(1, 1));
    assert_eq!(verify::mix_seed(3, 4), verify::mix_seed(3, 4));
}

#[test]
fn test_observable_is_hermitian_with_unit_norm() {
    let a: CMat = verify::test_observable(20, 1);
    assert!((linalg::op_norm(a.as_ref()) - 1.0).abs() < 1e-12);
    let adj = linalg::adjoint(a.as_ref());
    assert!(max_abs_diff(&a, &adj) < 1e-15);
}
