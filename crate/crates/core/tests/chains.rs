mod common;

use common::*;
use ethlab::chains::{self, ChainSpec, Expansion};
use ethlab::linalg::{self, c};
use ethlab::mde::{Deformation, MdeSolution, SpectralPoint};
use ethlab::stability;
use ethlab::CMat;
use proptest::prelude::*;

fn pt(re: f64, im: f64) -> SpectralPoint {
    SpectralPoint::from_parts(re, im)
}

fn full_random(n: usize, seed: u64) -> Deformation {
    let mut r = rng(seed);
    Deformation::new(gaussian(n, n, 0.8 / (n as f64).sqrt(), &mut r)).unwrap()
}

fn observables(n2: usize, count: usize, seed: u64) -> Vec<CMat> {
    let mut r = rng(seed);
    (0..count).map(|_| gaussian(n2, n2, 1.0, &mut r)).collect()
}

const WS: [(f64, f64); 6] = [(0.2, 0.3), (-0.1, -0.25), (0.35, 0.4), (0.0, -0.5), (-0.3, 0.2), (0.15, -0.35)];

fn points(k: usize) -> Vec<SpectralPoint> {
    WS[..k].iter().map(|&(e, h)| pt(e, h)).collect()
}

#[test]
fn single_point_chain_is_m() {
    let d = Deformation::random_diag(5, 1);
    let spec = ChainSpec::new(vec![pt(0.1, 0.2)], vec![]).unwrap();
    let m = MdeSolution::new(&d, pt(0.1, 0.2)).unwrap().mat;
    assert!(max_abs_diff(&chains::chain_m(&d, &spec).unwrap(), &m) < 1e-14);
    for which in [Expansion::Right, Expansion::Left] {
        let v = chains::chain_m_variant(&d, &spec, 1, which).unwrap();
        assert!(max_abs_diff(&v, &m) < 1e-14);
    }
}

#[test]
fn two_chain_matches_x_operator_form() {
    for d in [Deformation::zero(4), Deformation::random_diag(4, 2), full_random(4, 5)] {
        let ws = points(2);
        let b = observables(8, 1, 11).remove(0);
        let m1 = MdeSolution::new(&d, ws[0]).unwrap().mat;
        let m2 = MdeSolution::new(&d, ws[1]).unwrap().mat;
        let x = stability::x_op(&b, &m1, &m2).unwrap();
        let expect = linalg::mul3(m1.as_ref(), x.as_ref(), m2.as_ref());
        let got = chains::chain_m(&d, &ChainSpec::new(ws, vec![b]).unwrap()).unwrap();
        assert!(chains::relative_error(&got, &expect) < 1e-10, "{}", d.label());
    }
}

#[test]
fn identity_insertion_is_a_divided_difference() {
    // G(w)G(w′) = (G(w) − G(w′))/(w − w′) survives the deterministic approximation
    for d in [Deformation::shift(4, c(0.4, 0.0)), Deformation::random_diag(5, 7), full_random(4, 9)] {
        let n2 = d.dim() * 2;
        for (a, b) in [((0.1, 0.2), (0.3, -0.15)), ((0.1, 0.2), (-0.2, 0.35))] {
            let (w, wp) = (pt(a.0, a.1), pt(b.0, b.1));
            let m = MdeSolution::new(&d, w).unwrap().mat;
            let mp = MdeSolution::new(&d, wp).unwrap().mat;
            let expect = linalg::scale(linalg::sub(m.as_ref(), mp.as_ref()).as_ref(), (w.w - wp.w).inv());
            let spec = ChainSpec::new(vec![w, wp], vec![linalg::eye(n2)]).unwrap();
            let got = chains::chain_m(&d, &spec).unwrap();
            assert!(chains::relative_error(&got, &expect) < 1e-9, "{} {w} {wp}", d.label());
        }
    }
}

#[test]
fn three_chain_with_identities_is_a_second_divided_difference() {
    let d = Deformation::random_diag(4, 4);
    let ws = points(3);
    let ms: Vec<CMat> = ws.iter().map(|&w| MdeSolution::new(&d, w).unwrap().mat).collect();
    let dd = |i: usize, j: usize| {
        linalg::scale(linalg::sub(ms[i].as_ref(), ms[j].as_ref()).as_ref(), (ws[i].w - ws[j].w).inv())
    };
    let expect = linalg::scale(linalg::sub(dd(0, 1).as_ref(), dd(1, 2).as_ref()).as_ref(), (ws[0].w - ws[2].w).inv());
    let spec = ChainSpec::new(ws, vec![linalg::eye(8), linalg::eye(8)]).unwrap();
    let got = chains::chain_m(&d, &spec).unwrap();
    assert!(chains::relative_error(&got, &expect) < 1e-9);
}

#[test]
fn pivoted_expansions_agree_with_definition() {
    for d in [Deformation::zero(3), Deformation::random_diag(4, 6), full_random(3, 12)] {
        let n2 = d.dim() * 2;
        for k in 2..=4 {
            let spec = ChainSpec::new(points(k), observables(n2, k - 1, 100 + k as u64)).unwrap();
            let base = chains::chain_m(&d, &spec).unwrap();
            for j in 1..=k {
                for which in [Expansion::Right, Expansion::Left] {
                    let v = chains::chain_m_variant(&d, &spec, j, which).unwrap();
                    let err = chains::relative_error(&v, &base);
                    assert!(err < 1e-8, "{} k={k} j={j} {which:?}: {err:e}", d.label());
                }
            }
        }
    }
}

#[test]
fn memo_does_not_change_values() {
    let d = Deformation::random_diag(3, 21);
    for k in 2..=5 {
        let spec = ChainSpec::new(points(k), observables(6, k - 1, 7 * k as u64)).unwrap();
        let a = chains::chain_m(&d, &spec).unwrap();
        let b = chains::chain_m_unmemoized(&d, &spec).unwrap();
        assert!(max_abs_diff(&a, &b) <= 1e-12 * linalg::frob(a.as_ref()).max(1.0));
    }
}

#[test]
fn chain_of_six_evaluates() {
    let d = Deformation::random_diag(3, 2);
    let spec = ChainSpec::new(points(6), observables(6, 5, 3)).unwrap();
    let m = chains::chain_m(&d, &spec).unwrap();
    assert!(linalg::frob(m.as_ref()).is_finite());
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(ChainSpec::new(vec![], vec![]).is_err());
    assert!(ChainSpec::new(points(3), observables(4, 1, 0)).is_err());
    assert!(ChainSpec::new(vec![pt(0.1, 0.2), pt(0.3, 0.0)], observables(4, 1, 0)).is_err());
    let mut seven = points(6);
    seven.push(pt(0.0, 1.0));
    assert!(ChainSpec::new(seven, observables(4, 6, 0)).is_err());
    let d = Deformation::zero(2);
    let spec = ChainSpec::new(points(2), observables(4, 1, 0)).unwrap();
    assert!(chains::chain_m_variant(&d, &spec, 0, Expansion::Right).is_err());
    assert!(chains::chain_m_variant(&d, &spec, 3, Expansion::Left).is_err());
}

#[test]
fn ward_contrast_for_unregularized_identity() {
    // ⟨M(w, I, w̄)⟩ = ⟨Im M(w)⟩/η blows up, the bound for a regular chain does not
    let d = Deformation::zero(4);
    let eta = 1e-3;
    let w = pt(0.0, eta);
    let spec = ChainSpec::new(vec![w, w.conj()], vec![linalg::eye(8)]).unwrap();
    let rep = chains::chain_bounds_report(&d, &spec, Some(&linalg::eye(8))).unwrap();
    let im = linalg::tr_avg(MdeSolution::new(&d, w).unwrap().im_m().as_ref()).re;
    assert!((rep.trace.unwrap() - im / eta).abs() < 1e-8 * im / eta);
    assert!(rep.trace_ratio().unwrap() > chains::C_CHECK);
    assert!(!rep.within());
}

#[test]
fn regular_chains_respect_bounds() {
    let d = Deformation::random_diag(6, 3);
    let n2 = 12;
    let raw = observables(n2, 4, 77);
    for eta in [0.05, 0.01] {
        for k in 2..=3 {
            let ws: Vec<SpectralPoint> =
                (0..k).map(|i| pt(0.1 * i as f64, if i % 2 == 0 { eta } else { -eta })).collect();
            let delta = 2.5;
            let spec = ChainSpec::regularized(&d, ws.clone(), raw[..k - 1].to_vec(), delta).unwrap();
            let closing = ethlab::stability::Regularizer::new(&d, ws[k - 1], ws[0], delta)
                .unwrap()
                .apply(&raw[k - 1])
                .a_reg;
            let rep = chains::chain_bounds_report(&d, &spec, Some(&closing)).unwrap();
            assert!(rep.within(), "eta={eta} k={k} norm={} trace={:?}", rep.norm_ratio(), rep.trace_ratio());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn chain_is_linear_in_each_slot(seed in 0u64..1000, slot in 0usize..3, s in -2.0f64..2.0) {
        let d = Deformation::random_diag(3, seed % 7);
        let ws = points(4);
        let bs = observables(6, 3, seed);
        let extra = observables(6, 1, seed + 5000).remove(0);
        let mut mixed = bs.clone();
        mixed[slot] = linalg::axpy(bs[slot].as_ref(), c(s, 0.5), extra.as_ref());
        let mut only = bs.clone();
        only[slot] = extra;
        let f = |b: Vec<CMat>| chains::chain_m(&d, &ChainSpec::new(ws.clone(), b).unwrap()).unwrap();
        let lhs = f(mixed);
        let rhs = linalg::axpy(f(bs).as_ref(), c(s, 0.5), f(only).as_ref());
        prop_assert!(chains::relative_error(&lhs, &rhs) < 1e-10);
    }
}
