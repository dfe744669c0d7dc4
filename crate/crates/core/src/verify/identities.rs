//! Exact identities of `M`, the stability operator and the resolvent, checked to rounding
//! or quadrature tolerance, plus the randomized recursion-equivalence check of the chains.

use std::collections::BinaryHeap;
use std::f64::consts::PI;

use faer::Mat;
use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::laws::random_observable;
use super::{mix_seed, Check, ScanReport};
use crate::chains::{self, Expansion};
use crate::ensemble::{self, EntryDist, SampleConfig, SpectralSample};
use crate::error::{EthError, Result};
use crate::linalg::{self, CMat, c64};
use crate::mde::{Deformation, MdeSolution, SpectralPoint};
use crate::stability::{self, Regularizer};

/// Number of randomized chain specs in the recursion check.
pub const RECURSION_SPECS: usize = 50;

/// Worst relative disagreement between `chain_m` and every pivoted expansion, over `count`
/// random specs of length 2 to 4 with bulk real parts. Returns `(count, max error)`.
pub fn recursion_equivalence(seed: u64, count: usize) -> Result<(usize, f64)> {
    let mut worst = 0.0f64;
    for s in 0..count {
        let label = mix_seed(seed, 7000 + s as u64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(label);
        let n = 4;
        let def = match s % 3 {
            0 => Deformation::zero(n),
            1 => Deformation::shift(n, c64::new(0.5, 0.0)),
            _ => Deformation::random_diag(n, label),
        };
        let k = 2 + s % 3;
        let ws: Vec<SpectralPoint> = (0..k)
            .map(|_| {
                let e = rng.gen_range(-0.5..0.5);
                let eta: f64 = rng.gen_range(0.05..1.0);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                SpectralPoint::from_parts(e, sign * eta)
            })
            .collect();
        let bs: Vec<CMat> = (0..k - 1).map(|j| random_observable(2 * n, label ^ (j as u64 + 1))).collect();
        let ms = chains::solve_all(&def, &ws)?;
        let base = chains::chain_m_with(&ms, &bs)?;
        for j in 1..=k {
            for which in [Expansion::Right, Expansion::Left] {
                let v = chains::chain_m_variant_with(&ms, &bs, j, which)?;
                worst = worst.max(chains::relative_error(&v, &base));
            }
        }
    }
    Ok((count, worst))
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
/// Gauss weights at `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const MAX_INTERVALS: usize = 4000;

struct Piece {
    a: f64,
    b: f64,
    value: CMat,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Size of a matrix for error control: `‖T‖_F/√dim`.
fn scaled_norm(t: &CMat) -> f64 {
    linalg::frob(t.as_ref()) / (t.nrows() as f64).sqrt()
}

fn gk15<F: Fn(f64) -> CMat>(f: &F, a: f64, b: f64) -> Piece {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = linalg::scale(fc.as_ref(), c64::new(WGK[7], 0.0));
    let mut gauss = linalg::scale(fc.as_ref(), c64::new(WG[3], 0.0));
    for k in 0..7 {
        let pair = linalg::add(f(c - h * XGK[k]).as_ref(), f(c + h * XGK[k]).as_ref());
        kron = linalg::axpy(kron.as_ref(), c64::new(WGK[k], 0.0), pair.as_ref());
        if k % 2 == 1 {
            gauss = linalg::axpy(gauss.as_ref(), c64::new(WG[k / 2], 0.0), pair.as_ref());
        }
    }
    let value = linalg::scale(kron.as_ref(), c64::new(h, 0.0));
    let err = scaled_norm(&linalg::sub(kron.as_ref(), gauss.as_ref())) * h.abs();
    Piece { a, b, value, err }
}

/// Adaptive Gauss-Kronrod (7/15) quadrature of a matrix-valued function on `[a, b]`,
/// bisecting the worst interval until the summed error estimate is below `tol`.
/// Returns the integral and the final error estimate.
pub fn gauss_kronrod<F: Fn(f64) -> CMat>(f: F, a: f64, b: f64, tol: f64) -> Result<(CMat, f64)> {
    let mut heap = BinaryHeap::new();
    heap.push(gk15(&f, a, b));
    let mut total: f64 = heap.iter().map(|p| p.err).sum();
    while total > tol {
        if heap.len() >= MAX_INTERVALS {
            return Err(EthError::QuadratureFailure { what: format!("Gauss-Kronrod on [{a}, {b}]"), defect: total });
        }
        let worst = heap.pop().unwrap();
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(gk15(&f, worst.a, mid));
        heap.push(gk15(&f, mid, worst.b));
        total = heap.iter().map(|p| p.err).sum();
    }
    let mut pieces = heap.into_vec();
    pieces.sort_by(|p, q| p.a.total_cmp(&q.a));
    let mut sum = Mat::zeros(pieces[0].value.nrows(), pieces[0].value.ncols());
    for p in &pieces {
        sum = linalg::add(sum.as_ref(), p.value.as_ref());
    }
    Ok((sum, total))
}

/// Truncation point of the `|G|` integral.
pub const ABS_CUTOFF: f64 = 1e3;

/// `|G(e+iη)| = (2/π)∫₀^∞ ((H−e)²+η²+s²)⁻¹ ds`, integrated adaptively on `[0, 10³]` with the
/// tail `(2/π)/10³·I` added; returns the largest entry of the difference to the spectral `|G|`.
pub fn abs_resolvent_quadrature(h: &CMat, e: f64, eta: f64, tol: f64) -> Result<f64> {
    let n = h.nrows();
    let eig = h
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|err| EthError::Invalid(format!("eigendecomposition failed: {err:?}")))?;
    let lam: Vec<f64> = (0..n).map(|k| eig.S().column_vector()[k].re).collect();
    let u = eig.U();
    let spectral_abs = {
        let scaled = Mat::from_fn(n, n, |a, k| u[(a, k)] / ((lam[k] - e).powi(2) + eta * eta).sqrt());
        &scaled * u.adjoint()
    };
    let shifted = Mat::from_fn(n, n, |i, j| h[(i, j)] - if i == j { c64::new(e, 0.0) } else { c64::new(0.0, 0.0) });
    let base = &shifted * &shifted;
    let f = |s: f64| {
        let k = Mat::from_fn(n, n, |i, j| base[(i, j)] + if i == j { c64::new(eta * eta + s * s, 0.0) } else { c64::new(0.0, 0.0) });
        linalg::inverse(k.as_ref())
    };
    let (integral, _) = gauss_kronrod(f, 0.0, ABS_CUTOFF, tol * 1e-2)?;
    let mut approx = linalg::scale(integral.as_ref(), c64::new(2.0 / PI, 0.0));
    for i in 0..n {
        approx[(i, i)] += 2.0 / PI / ABS_CUTOFF;
    }
    Ok(max_entry(&linalg::sub(approx.as_ref(), spectral_abs.as_ref())))
}

fn max_entry(t: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..t.ncols() {
        for i in 0..t.nrows() {
            m = m.max(t[(i, j)].norm());
        }
    }
    m
}

/// Rectangle `[x₀, x₁] × [y₀, y₁]` in the upper (or lower, with negative `y`) half-plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rectangle {
    fn contains(&self, w: c64) -> bool {
        self.x0 < w.re && w.re < self.x1 && self.y0 < w.im && w.im < self.y1
    }

    /// Corners counterclockwise.
    fn corners(&self) -> [c64; 4] {
        [
            c64::new(self.x0, self.y0),
            c64::new(self.x1, self.y0),
            c64::new(self.x1, self.y1),
            c64::new(self.x0, self.y1),
        ]
    }
}

/// `G(w₁)G(w₂) = (1/2πi)∮ G(z)/((z−w₁)(z−w₂)) dz` over a rectangle enclosing both `w`'s and
/// avoiding the real axis; trapezoid rule with `nodes_per_unit` nodes per unit length on each
/// side, applied per eigenvalue. Returns the largest entry of the difference to the direct product.
pub fn contour_product(h: &CMat, w1: c64, w2: c64, rect: Rectangle, nodes_per_unit: usize) -> Result<f64> {
    if !(rect.contains(w1) && rect.contains(w2)) || rect.y0 * rect.y1 <= 0.0 {
        return Err(EthError::Invalid(format!("contour {rect:?} must enclose {w1} and {w2} off the real axis")));
    }
    let n = h.nrows();
    let eig = h
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|err| EthError::Invalid(format!("eigendecomposition failed: {err:?}")))?;
    let lam: Vec<f64> = (0..n).map(|k| eig.S().column_vector()[k].re).collect();
    let u = eig.U();
    let corners = rect.corners();
    let mut sums = vec![linalg::CSum::default(); n];
    for side in 0..4 {
        let (za, zb) = (corners[side], corners[(side + 1) % 4]);
        let len = (zb - za).norm();
        let steps = ((len * nodes_per_unit as f64).ceil() as usize).max(2);
        let dz = (zb - za) / steps as f64;
        for s in 0..=steps {
            let z = za + dz * s as f64;
            let wt = if s == 0 || s == steps { 0.5 } else { 1.0 };
            let kernel = dz * wt / ((z - w1) * (z - w2));
            for (k, acc) in sums.iter_mut().enumerate() {
                acc.add(kernel / (c64::new(lam[k], 0.0) - z));
            }
        }
    }
    let two_pi_i = c64::new(0.0, 2.0 * PI);
    let d: Vec<c64> = sums.iter().map(|s| s.value() / two_pi_i).collect();
    let contour = {
        let scaled = Mat::from_fn(n, n, |a, k| u[(a, k)] * d[k]);
        &scaled * u.adjoint()
    };
    let direct = ensemble::resolvent(h, w1)? * ensemble::resolvent(h, w2)?;
    Ok(max_entry(&linalg::sub(contour.as_ref(), direct.as_ref())))
}

/// Settings of the identity suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityOptions {
    pub n: usize,
    pub deformations: Vec<String>,
    /// Spectral points `(e, Im w)`; every ordered pair is used for two-point identities.
    pub points: Vec<(f64, f64)>,
    pub seed: u64,
    /// Exact identities.
    pub exact_tol: f64,
    /// `|G|` quadrature at `abs_point`.
    pub abs_point: (f64, f64),
    pub abs_tol: f64,
    /// Contour product at `contour_points` around `contour`.
    pub contour_points: [(f64, f64); 2],
    pub contour: Rectangle,
    pub contour_nodes: usize,
    pub contour_tol: f64,
}

impl Default for IdentityOptions {
    fn default() -> Self {
        IdentityOptions {
            n: 32,
            deformations: vec!["zero".into(), "shift:0.5,0".into(), "randdiag:7".into()],
            points: vec![(0.1, 0.3), (-0.2, 0.4), (0.3, -0.2), (0.0, 0.05)],
            seed: 0,
            exact_tol: 1e-10,
            abs_point: (0.3, 0.2),
            abs_tol: 1e-5,
            contour_points: [(0.1, 0.3), (-0.2, 0.4)],
            contour: Rectangle { x0: -1.0, x1: 1.0, y0: 0.15, y1: 1.0 },
            contour_nodes: 4000,
            contour_tol: 1e-4,
        }
    }
}

/// Worst defects of the exact identities on one deformation, keyed by identity name.
fn exact_defects(def: &Deformation, opts: &IdentityOptions, sample: &SpectralSample) -> Result<Vec<(&'static str, f64)>> {
    let n2 = 2 * def.dim();
    let em = linalg::e_minus(n2);
    let sols: Vec<MdeSolution> = opts
        .points
        .iter()
        .map(|&(e, y)| MdeSolution::new(def, SpectralPoint::from_parts(e, y)))
        .collect::<Result<_>>()?;
    let h = sample.h();
    let t = random_observable(n2, mix_seed(opts.seed, 8100));
    let mut d = [0.0f64; 12];
    for s in &sols {
        let w = s.w.w;
        d[0] = d[0].max(s.residual);
        d[1] = d[1].max(s.mde_defect(def));
        // saturation (1 − ⟨MM*⟩)⟨Im M⟩ = Im w ⟨MM*⟩
        let mms = linalg::tr_avg((&s.mat * s.mat.adjoint()).as_ref()).re;
        let im = linalg::tr_avg(s.im_m().as_ref()).re;
        d[3] = d[3].max(((1.0 - mms) * im - w.im * mms).abs());
        // E₋M(w) + M(−w)E₋ = 0
        let minus = MdeSolution::new(def, SpectralPoint::new(-w))?;
        let chi = linalg::add(linalg::mul(em.as_ref(), s.mat.as_ref()).as_ref(), linalg::mul(minus.mat.as_ref(), em.as_ref()).as_ref());
        d[4] = d[4].max(max_entry(&chi));
        let g = ensemble::resolvent(&h, w)?;
        let gm = ensemble::resolvent(&h, -w)?;
        let chi_g = linalg::add(linalg::mul(em.as_ref(), g.as_ref()).as_ref(), linalg::mul(gm.as_ref(), em.as_ref()).as_ref());
        d[5] = d[5].max(max_entry(&chi_g));
        d[6] = d[6].max(linalg::tr_avg_eminus(g.as_ref()).norm());
    }
    for (i, s1) in sols.iter().enumerate() {
        for (j, s2) in sols.iter().enumerate() {
            if i == j {
                continue;
            }
            let (m1, m2) = (&s1.mat, &s2.mat);
            // M-Ward: M₁ − M₂ = [(w₁−w₂) + (⟨M₁⟩−⟨M₂⟩)] M₂M₁
            let c = s1.w.w - s2.w.w + linalg::tr_avg(m1.as_ref()) - linalg::tr_avg(m2.as_ref());
            let rhs = linalg::scale(linalg::mul(m2.as_ref(), m1.as_ref()).as_ref(), c);
            d[2] = d[2].max(max_entry(&linalg::sub(linalg::sub(m1.as_ref(), m2.as_ref()).as_ref(), rhs.as_ref())));
            // B[R_σ] = β_σ R_σ and ⟨E_σ B[T]⟩ = β_σ⟨E_σ T⟩
            let eigs = stability::stability_eigs(s1, s2);
            for sigma in [1, -1] {
                let tr = eigs.get(sigma);
                let br = stability::stability_apply(m1, m2, &tr.right);
                let expect = linalg::scale(tr.right.as_ref(), tr.beta);
                d[7] = d[7].max(max_entry(&linalg::sub(br.as_ref(), expect.as_ref())));
                let bt = stability::stability_apply(m1, m2, &t);
                let lhs = linalg::tr_avg_sigma(bt.as_ref(), sigma);
                let rhs = tr.beta * linalg::tr_avg_sigma(t.as_ref(), sigma);
                d[7] = d[7].max((lhs - rhs).norm());
            }
            // X[B] − S[M₁X[B]M₂] = B and B[B⁻¹[Y]] = Y
            let x = stability::x_op(&t, m1, m2)?;
            let back = linalg::sub(x.as_ref(), linalg::s_op(linalg::mul3(m1.as_ref(), x.as_ref(), m2.as_ref()).as_ref()).as_ref());
            d[8] = d[8].max(max_entry(&linalg::sub(back.as_ref(), t.as_ref())));
            let inv = stability::stability_inverse(m1, m2, &t)?;
            let again = stability::stability_apply(m1, m2, &inv);
            d[8] = d[8].max(max_entry(&linalg::sub(again.as_ref(), t.as_ref())));
            // regularization with both cutoffs equal to one
            let reg = Regularizer::new(def, s1.w, s2.w, 2.5)?;
            if reg.cut_plus == 1.0 && reg.cut_minus == 1.0 {
                let r = reg.apply(&t);
                let twice = reg.apply(&r.a_reg);
                d[9] = d[9].max(max_entry(&linalg::sub(twice.a_reg.as_ref(), r.a_reg.as_ref())));
                for sigma in [1, -1] {
                    if let Some(k) = reg.kernel(sigma) {
                        d[10] = d[10].max(linalg::tr_avg_prod(r.a_reg.as_ref(), k.as_ref()).norm());
                    }
                }
            }
        }
    }
    d[11] = sols.iter().map(|s| (linalg::tr_avg(s.mat.as_ref()) - s.m).norm()).fold(0.0, f64::max);
    Ok(vec![
        ("fixed-point residual", d[0]),
        ("MDE defect ‖M⁻¹ + w − Λ̂ + S[M]‖_F", d[1]),
        ("M-Ward identity", d[2]),
        ("saturation", d[3]),
        ("chiral symmetry of M", d[4]),
        ("chiral symmetry of G", d[5]),
        ("⟨GE₋⟩ = 0", d[6]),
        ("stability eigentriples", d[7]),
        ("x_op and stability inverse", d[8]),
        ("regularization idempotence", d[9]),
        ("regularization orthogonality", d[10]),
        ("⟨M⟩ = m", d[11]),
    ])
}

/// Exact identities on every deformation, the `|G|` integral representation and the contour
/// representation of `G(w₁)G(w₂)`.
pub fn run_identity_suite(opts: &IdentityOptions) -> Result<ScanReport> {
    if opts.n < 2 || opts.deformations.is_empty() || opts.points.len() < 2 {
        return Err(EthError::config("identities", "need N ≥ 2, a deformation and two spectral points"));
    }
    let mut rep = ScanReport::new("identities", 1);
    for spec in &opts.deformations {
        let def = Deformation::from_spec(spec, opts.n)?;
        let cfg = SampleConfig::new(opts.n, EntryDist::ComplexGaussian, mix_seed(opts.seed, 8000))?;
        let sample = SpectralSample::draw(&cfg, &def)?;
        rep.total_samples += 1;
        for (name, v) in exact_defects(&def, opts, &sample)? {
            // the Frobenius defect of the matrix equation is held to the looser 1e-8
            let tol = if name.starts_with("MDE defect") { opts.exact_tol.max(1e-8) } else { opts.exact_tol };
            rep.check(Check::at_most(format!("{spec}: {name}"), v, tol));
        }
        let h = sample.h();
        let abs = abs_resolvent_quadrature(&h, opts.abs_point.0, opts.abs_point.1, opts.abs_tol)?;
        rep.check(Check::at_most(format!("{spec}: |G| integral representation"), abs, opts.abs_tol));
        let [p1, p2] = opts.contour_points;
        let cp = contour_product(&h, c64::new(p1.0, p1.1), c64::new(p2.0, p2.1), opts.contour, opts.contour_nodes)?;
        rep.check(Check::at_most(format!("{spec}: contour representation of G₁G₂"), cp, opts.contour_tol));
    }
    Ok(rep.finish())
}
