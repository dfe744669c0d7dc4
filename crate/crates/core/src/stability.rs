//! Two-body stability operator `B[T] = T − M₁S[T]M₂`, its two nontrivial
//! eigentriples, cutoff functions and the `(w, w′)`-regularization of observables.
//!
//! `S[M₁E_σM₂] = σ⟨M₁E_σM₂E_σ⟩E_σ` because the mixed traces `⟨M₁E₊M₂E₋⟩`
//! vanish, so `R_σ = M₁E_σM₂` is an exact eigenvector with eigenvalue
//! `β_σ = 1 − σ⟨M₁E_σM₂E_σ⟩` and left eigenvector `E_σ`.

use crate::error::{EthError, Result};
use crate::linalg::{self, CMat, c64};
use crate::mde::{Deformation, MdeSolution, SpectralPoint};

/// Guard on active regularization denominators.
pub const DENOMINATOR_GUARD: f64 = 1e-6;
/// Guard on `|β±|` for inverting `1 − S[M₁·M₂]`.
pub const BETA_GUARD: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Eigentriple {
    pub sigma: i32,
    pub beta: c64,
    /// `M₁E_σM₂`.
    pub right: CMat,
    /// `E_σ`.
    pub left: CMat,
    /// `⟨L, R⟩ = ⟨E_σ M₁E_σM₂⟩`.
    pub normalization: c64,
}

#[derive(Clone, Debug)]
pub struct StabilityEigs {
    pub plus: Eigentriple,
    pub minus: Eigentriple,
    /// `𝔰 = −sgn(Im w₁ Im w₂)`.
    pub crit_sign: i32,
}

impl StabilityEigs {
    pub fn critical(&self) -> &Eigentriple {
        if self.crit_sign > 0 { &self.plus } else { &self.minus }
    }

    pub fn noncritical(&self) -> &Eigentriple {
        if self.crit_sign > 0 { &self.minus } else { &self.plus }
    }

    pub fn get(&self, sigma: i32) -> &Eigentriple {
        if sigma > 0 { &self.plus } else { &self.minus }
    }
}

/// `𝔰_{w,w′} = −sgn(Im w Im w′)`.
pub fn relative_sign(w: SpectralPoint, wp: SpectralPoint) -> i32 {
    if w.sign() * wp.sign() > 0 { -1 } else { 1 }
}

/// `⟨M₁E_σM₂E_σ⟩`.
pub fn sandwich_trace(m1: &CMat, m2: &CMat, sigma: i32) -> c64 {
    let n2 = m1.nrows();
    let em = linalg::e_sigma(n2, sigma);
    let r = linalg::mul3(m1.as_ref(), em.as_ref(), m2.as_ref());
    linalg::tr_avg_sigma(r.as_ref(), sigma)
}

/// `β_σ = 1 − σ⟨M₁E_σM₂E_σ⟩`.
pub fn beta(m1: &CMat, m2: &CMat, sigma: i32) -> c64 {
    c64::new(1.0, 0.0) - sandwich_trace(m1, m2, sigma) * sigma as f64
}

pub fn stability_eigs(s1: &MdeSolution, s2: &MdeSolution) -> StabilityEigs {
    let n2 = s1.mat.nrows();
    let triple = |sigma: i32| {
        let e = linalg::e_sigma(n2, sigma);
        let right = linalg::mul3(s1.mat.as_ref(), e.as_ref(), s2.mat.as_ref());
        let t = linalg::tr_avg_sigma(right.as_ref(), sigma);
        Eigentriple {
            sigma,
            beta: c64::new(1.0, 0.0) - t * sigma as f64,
            normalization: t,
            right,
            left: e,
        }
    };
    StabilityEigs { plus: triple(1), minus: triple(-1), crit_sign: relative_sign(s1.w, s2.w) }
}

/// `B[T] = T − M₁S[T]M₂`.
pub fn stability_apply(m1: &CMat, m2: &CMat, t: &CMat) -> CMat {
    let s = linalg::s_op(t.as_ref());
    let r = linalg::mul3(m1.as_ref(), s.as_ref(), m2.as_ref());
    linalg::sub(t.as_ref(), r.as_ref())
}

/// `B⁻¹[Y] = Y + Σ_σ σ⟨YE_σ⟩/β_σ · M₁E_σM₂`.
pub fn stability_inverse(m1: &CMat, m2: &CMat, y: &CMat) -> Result<CMat> {
    let n2 = y.nrows();
    let mut out = y.clone();
    for sigma in [1, -1] {
        let b = beta(m1, m2, sigma);
        if b.norm() < BETA_GUARD {
            return Err(EthError::SingularStability { sign: sign_name(sigma), value: b.norm() });
        }
        let coeff = linalg::tr_avg_sigma(y.as_ref(), sigma) * sigma as f64 / b;
        let e = linalg::e_sigma(n2, sigma);
        let r = linalg::mul3(m1.as_ref(), e.as_ref(), m2.as_ref());
        out = linalg::axpy(out.as_ref(), coeff, r.as_ref());
    }
    Ok(out)
}

/// `X₁₂[B] = (1 − S[M₁·M₂])⁻¹[B] = B + Σ_τ τ⟨M₁BM₂E_τ⟩/β_τ · E_τ`.
pub fn x_op(b: &CMat, m1: &CMat, m2: &CMat) -> Result<CMat> {
    let n2 = b.nrows();
    let mbm = linalg::mul3(m1.as_ref(), b.as_ref(), m2.as_ref());
    let mut out = b.clone();
    for tau in [1, -1] {
        let bt = beta(m1, m2, tau);
        if bt.norm() < BETA_GUARD {
            return Err(EthError::SingularStability { sign: sign_name(tau), value: bt.norm() });
        }
        let coeff = linalg::tr_avg_sigma(mbm.as_ref(), tau) * tau as f64 / bt;
        let half = n2 / 2;
        for i in 0..n2 {
            let s = if tau > 0 || i < half { 1.0 } else { -1.0 };
            out[(i, i)] += coeff * s;
        }
    }
    Ok(out)
}

fn sign_name(sigma: i32) -> &'static str {
    if sigma > 0 { "+" } else { "-" }
}

fn smooth_step_part(s: f64) -> f64 {
    if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() }
}

/// Bump `φ_δ`: 1 on `|x| ≤ δ/2`, 0 on `|x| ≥ δ`, smooth step in between.
pub fn bump(x: f64, delta: f64) -> f64 {
    let ax = x.abs();
    if ax <= delta / 2.0 {
        return 1.0;
    }
    if ax >= delta {
        return 0.0;
    }
    let t = (ax - delta / 2.0) / (delta / 2.0);
    let a = smooth_step_part(1.0 - t);
    let b = smooth_step_part(t);
    a / (a + b)
}

/// `(1_δ^+(w,w′), 1_δ^−(w,w′))`.
pub fn cutoffs(w: SpectralPoint, wp: SpectralPoint, delta: f64) -> (f64, f64) {
    let im = bump(w.w.im, delta) * bump(wp.w.im, delta);
    (bump(w.e() - wp.e(), delta) * im, bump(w.e() + wp.e(), delta) * im)
}

/// `min(0.1, κ/10)`.
pub fn default_delta(kappa: f64) -> f64 {
    (kappa / 10.0).min(0.1)
}

#[derive(Clone, Debug)]
pub struct RegularizedObservable {
    pub a: CMat,
    pub w: SpectralPoint,
    pub wp: SpectralPoint,
    pub delta: f64,
    pub cut_plus: f64,
    pub cut_minus: f64,
    /// Subtracted coefficient along `E₊` before the cutoff.
    pub coeff_plus: c64,
    /// Subtracted coefficient along `E₋` before the cutoff.
    pub coeff_minus: c64,
    pub a_reg: CMat,
}

/// One active branch of the regularization along `E_σ`.
#[derive(Clone, Debug)]
struct Branch {
    /// `M(w″)E_σM(w)`, so that the numerator is `⟨A K⟩`.
    kernel: CMat,
    denominator: c64,
}

/// Precomputed `(w, w′)`-regularization, reusable for many observables.
#[derive(Clone, Debug)]
pub struct Regularizer {
    pub w: SpectralPoint,
    pub wp: SpectralPoint,
    pub delta: f64,
    pub crit_sign: i32,
    pub cut_plus: f64,
    pub cut_minus: f64,
    plus: Option<Branch>,
    minus: Option<Branch>,
}

impl Regularizer {
    /// `Re w`, `Re w′` are expected in the bulk; only the denominators are checked.
    pub fn new(def: &Deformation, w: SpectralPoint, wp: SpectralPoint, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(EthError::Invalid(format!("delta must be positive, got {delta}")));
        }
        let s = relative_sign(w, wp);
        let (cut_plus, cut_minus) = cutoffs(w, wp, delta);
        let mw = if cut_plus > 0.0 || cut_minus > 0.0 { Some(MdeSolution::new(def, w)?) } else { None };
        let n2 = 2 * def.dim();
        let branch = |sigma: i32, cut: f64| -> Result<Option<Branch>> {
            if cut <= 0.0 {
                return Ok(None);
            }
            let mw = mw.as_ref().unwrap();
            // σ = τ𝔰 pairs with w″ = Re w′ + τ i Im w′
            let tau = sigma * s;
            let wpp = SpectralPoint::from_parts(wp.e(), tau as f64 * wp.w.im);
            let mpp = MdeSolution::new(def, wpp)?;
            let e = linalg::e_sigma(n2, sigma);
            let kernel = linalg::mul3(mpp.mat.as_ref(), e.as_ref(), mw.mat.as_ref());
            let denominator = sandwich_trace(&mw.mat, &mpp.mat, sigma);
            if denominator.norm() < DENOMINATOR_GUARD {
                return Err(EthError::UnstableDenominator { branch: sign_name(sigma), value: denominator.norm() });
            }
            Ok(Some(Branch { kernel, denominator }))
        };
        Ok(Regularizer {
            w,
            wp,
            delta,
            crit_sign: s,
            cut_plus,
            cut_minus,
            plus: branch(1, cut_plus)?,
            minus: branch(-1, cut_minus)?,
        })
    }

    /// Uncut coefficients `(c₊, c₋)`; zero for inactive branches.
    pub fn coefficients(&self, a: &CMat) -> (c64, c64) {
        let coeff = |b: &Option<Branch>| match b {
            Some(b) => linalg::tr_avg_prod(a.as_ref(), b.kernel.as_ref()) / b.denominator,
            None => c64::new(0.0, 0.0),
        };
        (coeff(&self.plus), coeff(&self.minus))
    }

    /// Subtracted `(cut₊c₊, cut₋c₋)`.
    pub fn subtracted(&self, a: &CMat) -> (c64, c64) {
        let (cp, cm) = self.coefficients(a);
        (cp * self.cut_plus, cm * self.cut_minus)
    }

    pub fn apply(&self, a: &CMat) -> RegularizedObservable {
        let (cp, cm) = self.coefficients(a);
        let (dp, dm) = (cp * self.cut_plus, cm * self.cut_minus);
        let n2 = a.nrows();
        let half = n2 / 2;
        let mut a_reg = a.clone();
        for i in 0..n2 {
            let em = if i < half { 1.0 } else { -1.0 };
            a_reg[(i, i)] -= dp + dm * em;
        }
        RegularizedObservable {
            a: a.clone(),
            w: self.w,
            wp: self.wp,
            delta: self.delta,
            cut_plus: self.cut_plus,
            cut_minus: self.cut_minus,
            coeff_plus: cp,
            coeff_minus: cm,
            a_reg,
        }
    }

    /// `M(w″)E_σM(w)` for an active branch, i.e. the direction whose overlap is removed.
    pub fn kernel(&self, sigma: i32) -> Option<&CMat> {
        let b = if sigma > 0 { &self.plus } else { &self.minus };
        b.as_ref().map(|b| &b.kernel)
    }
}

/// `Å^{w,w′}`.
pub fn regularize(
    def: &Deformation,
    a: &CMat,
    w: SpectralPoint,
    wp: SpectralPoint,
    delta: f64,
) -> Result<RegularizedObservable> {
    Ok(Regularizer::new(def, w, wp, delta)?.apply(a))
}

#[derive(Clone, Debug)]
pub struct PerturbationDefect {
    /// `Å^{w₂,w₁′} − Å^{w₁,w₁′}` measured on span{E₊, E₋}.
    pub first: f64,
    /// `Å^{w₁,w₂′} − Å^{w₁,w₁′}` measured on span{E₊, E₋}.
    pub second: f64,
    /// Components of the two differences orthogonal to span{E₊, E₋}.
    pub first_off_span: f64,
    pub second_off_span: f64,
    pub first_bound: f64,
    pub second_bound: f64,
}

impl PerturbationDefect {
    pub fn within_bounds(&self) -> bool {
        self.first <= self.first_bound && self.second <= self.second_bound
    }
}

/// Proportionality constant asserted for the perturbative estimate.
pub const PERTURBATION_C: f64 = 20.0;

/// Coordinates of `D` on `E₊`, `E₋` and the norm of the rest.
fn span_split(d: &CMat) -> (c64, c64, f64) {
    let p = linalg::tr_avg(d.as_ref());
    let q = linalg::tr_avg_eminus(d.as_ref());
    let n2 = d.nrows();
    let half = n2 / 2;
    let mut rest = d.clone();
    for i in 0..n2 {
        let em = if i < half { 1.0 } else { -1.0 };
        rest[(i, i)] -= p + q * em;
    }
    (p, q, linalg::frob(rest.as_ref()) / (n2 as f64).sqrt())
}

pub fn regularize_perturbation_check(
    def: &Deformation,
    a: &CMat,
    w1: SpectralPoint,
    w1p: SpectralPoint,
    w2: SpectralPoint,
    w2p: SpectralPoint,
    delta: f64,
) -> Result<PerturbationDefect> {
    let base = regularize(def, a, w1, w1p, delta)?.a_reg;
    let moved_first = regularize(def, a, w2, w1p, delta)?.a_reg;
    let moved_second = regularize(def, a, w1, w2p, delta)?.a_reg;
    let measure = |m: &CMat| {
        let d = linalg::sub(m.as_ref(), base.as_ref());
        let (p, q, rest) = span_split(&d);
        ((p.norm_sqr() + q.norm_sqr()).sqrt(), rest)
    };
    let (first, first_off_span) = measure(&moved_first);
    let (second, second_off_span) = measure(&moved_second);
    Ok(PerturbationDefect {
        first,
        second,
        first_off_span,
        second_off_span,
        first_bound: PERTURBATION_C * (w1.w - w2.w).norm().min(1.0),
        second_bound: PERTURBATION_C * (w1p.w - w2p.w).norm().min(1.0),
    })
}
