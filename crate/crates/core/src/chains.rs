//! Deterministic approximations `M(w₁, B₁, …, B_{k−1}, w_k)` of resolvent chains
//! `G₁B₁G₂ ⋯ B_{k−1}G_k`.
//!
//! The defining recursion is
//!
//! ```text
//! M(w₁,…,w_k) = B₁ₖ⁻¹[ M₁B₁M(w₂,…,w_k) + Σ_σ Σ_{l=2}^{k−1} σ M₁⟨M(w₁,…,w_l)E_σ⟩E_σM(w_l,…,w_k) ]
//! ```
//!
//! with `B₁ₖ = 1 − M₁S[·]M_k`. The pivoted expansions to the right and to the
//! left are available as [`chain_m_variant`]; every sub-chain they need is
//! evaluated with the defining recursion, so agreement is a real cross-check.

use std::collections::HashMap;

use crate::error::{EthError, Result};
use crate::linalg::{self, CMat, c64};
use crate::mde::{Deformation, MdeSolution, SpectralPoint};
use crate::stability::{self, Regularizer};

pub const MAX_CHAIN: usize = 6;
/// Allowed ratio between observed values and the norm/trace bounds.
pub const C_CHECK: f64 = 50.0;

#[derive(Clone, Debug)]
pub struct ChainSpec {
    pub ws: Vec<SpectralPoint>,
    pub bs: Vec<CMat>,
    pub regular_flags: Vec<bool>,
}

impl ChainSpec {
    pub fn new(ws: Vec<SpectralPoint>, bs: Vec<CMat>) -> Result<Self> {
        let flags = vec![false; bs.len()];
        Self::with_flags(ws, bs, flags)
    }

    pub fn with_flags(ws: Vec<SpectralPoint>, bs: Vec<CMat>, regular_flags: Vec<bool>) -> Result<Self> {
        if ws.is_empty() || ws.len() > MAX_CHAIN {
            return Err(EthError::Invalid(format!("chain length {} outside 1..={MAX_CHAIN}", ws.len())));
        }
        if bs.len() + 1 != ws.len() || regular_flags.len() != bs.len() {
            return Err(EthError::Invalid(format!(
                "{} spectral parameters need {} matrices, got {}",
                ws.len(),
                ws.len() - 1,
                bs.len()
            )));
        }
        if let Some(w) = ws.iter().find(|w| w.sign() == 0) {
            return Err(EthError::Invalid(format!("chain spectral parameter {w} is real")));
        }
        Ok(ChainSpec { ws, bs, regular_flags })
    }

    /// Chain whose matrices are regularized, `Å_i = Å_i^{w_i, w_{i+1}}`.
    pub fn regularized(def: &Deformation, ws: Vec<SpectralPoint>, raw: Vec<CMat>, delta: f64) -> Result<Self> {
        let mut bs = Vec::with_capacity(raw.len());
        for (i, a) in raw.iter().enumerate() {
            bs.push(Regularizer::new(def, ws[i], ws[i + 1], delta)?.apply(a).a_reg);
        }
        let flags = vec![true; bs.len()];
        Self::with_flags(ws, bs, flags)
    }

    pub fn len(&self) -> usize {
        self.ws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ws.is_empty()
    }

    pub fn eta(&self) -> f64 {
        self.ws.iter().map(|w| w.eta()).fold(f64::INFINITY, f64::min)
    }
}

/// `M(w_i)` for every spectral parameter of a spec.
pub fn solve_all(def: &Deformation, ws: &[SpectralPoint]) -> Result<Vec<CMat>> {
    ws.iter().map(|&w| MdeSolution::new(def, w).map(|s| s.mat)).collect()
}

/// A chain `M(w_{i₁}, C₁, w_{i₂}, …)` given by the one-point solutions and the matrices in between.
struct Chain<'a> {
    ms: Vec<&'a CMat>,
    bs: Vec<CMat>,
    memo: Option<HashMap<(usize, usize), CMat>>,
}

impl<'a> Chain<'a> {
    fn new(ms: Vec<&'a CMat>, bs: Vec<CMat>, memoize: bool) -> Self {
        Chain { ms, bs, memo: memoize.then(HashMap::new) }
    }

    fn full(&mut self) -> Result<CMat> {
        let last = self.ms.len() - 1;
        self.sub(0, last)
    }

    fn sub(&mut self, s: usize, e: usize) -> Result<CMat> {
        if s == e {
            return Ok(self.ms[s].clone());
        }
        if let Some(hit) = self.memo.as_ref().and_then(|m| m.get(&(s, e))) {
            return Ok(hit.clone());
        }
        let n2 = self.ms[s].nrows();
        let tail = self.sub(s + 1, e)?;
        let mut y = linalg::mul3(self.ms[s].as_ref(), self.bs[s].as_ref(), tail.as_ref());
        for l in s + 1..e {
            let head = self.sub(s, l)?;
            let rest = self.sub(l, e)?;
            for sigma in [1, -1] {
                let t = linalg::tr_avg_sigma(head.as_ref(), sigma) * sigma as f64;
                let es = linalg::e_sigma(n2, sigma);
                let term = linalg::mul3(self.ms[s].as_ref(), es.as_ref(), rest.as_ref());
                y = linalg::axpy(y.as_ref(), t, term.as_ref());
            }
        }
        let out = stability::stability_inverse(self.ms[s], self.ms[e], &y)?;
        if let Some(m) = self.memo.as_mut() {
            m.insert((s, e), out.clone());
        }
        Ok(out)
    }
}

/// `M(w₁, B₁, …, w_k)` from the defining recursion, memoizing contiguous sub-chains.
pub fn chain_m(def: &Deformation, spec: &ChainSpec) -> Result<CMat> {
    let ms = solve_all(def, &spec.ws)?;
    chain_m_with(&ms, &spec.bs)
}

/// As [`chain_m`] with precomputed `M(w_i)`.
pub fn chain_m_with(ms: &[CMat], bs: &[CMat]) -> Result<CMat> {
    Chain::new(ms.iter().collect(), bs.to_vec(), true).full()
}

/// The defining recursion without the memo table.
pub fn chain_m_unmemoized(def: &Deformation, spec: &ChainSpec) -> Result<CMat> {
    let ms = solve_all(def, &spec.ws)?;
    Chain::new(ms.iter().collect(), spec.bs.clone(), false).full()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expansion {
    /// Expansion of the pivot resolvent to the right.
    Right,
    /// Expansion of the pivot resolvent to the left.
    Left,
}

/// `prefix · M(w_{idx₀}, C₁, …) · suffix`.
struct Term {
    prefix: Option<CMat>,
    idx: Vec<usize>,
    bs: Vec<CMat>,
    suffix: Option<CMat>,
}

impl Term {
    fn eval(&self, ms: &[CMat]) -> Result<CMat> {
        let sub: Vec<&CMat> = self.idx.iter().map(|&i| &ms[i]).collect();
        let mut out = Chain::new(sub, self.bs.clone(), true).full()?;
        if let Some(p) = &self.prefix {
            out = linalg::mul(p.as_ref(), out.as_ref());
        }
        if let Some(s) = &self.suffix {
            out = linalg::mul(out.as_ref(), s.as_ref());
        }
        Ok(out)
    }
}

/// Evaluates the pivoted recursive relation at pivot `j` (1-based).
///
/// For `k = 1` both families reduce to `M(w₁)`.
pub fn chain_m_variant(def: &Deformation, spec: &ChainSpec, j: usize, which: Expansion) -> Result<CMat> {
    let ms = solve_all(def, &spec.ws)?;
    chain_m_variant_with(&ms, &spec.bs, j, which)
}

pub fn chain_m_variant_with(ms: &[CMat], bs: &[CMat], j: usize, which: Expansion) -> Result<CMat> {
    let k = ms.len();
    if j == 0 || j > k {
        return Err(EthError::Invalid(format!("pivot {j} outside 1..={k}")));
    }
    if k == 1 {
        return Ok(ms[0].clone());
    }
    let n2 = ms[0].nrows();
    // 0-based pivot and helpers for B_i (1-based in the formulas, B₀ = B_k = E₊)
    let p = j - 1;
    let b = |i: usize| -> CMat { if i == 0 || i == k { linalg::eye(n2) } else { bs[i - 1].clone() } };
    let e = |sigma: i32| linalg::e_sigma(n2, sigma);
    // sub-chain M(w_a, B_a, …, w_c) with 0-based endpoints
    let sub = |a: usize, c: usize| -> Result<CMat> {
        let refs: Vec<&CMat> = (a..=c).map(|i| &ms[i]).collect();
        Chain::new(refs, bs[a..c].to_vec(), true).full()
    };
    // chain over `left ++ right` (0-based index ranges) with `mid` joining them;
    // an empty side turns `mid` into a prefix or suffix
    let joined = |left: std::ops::Range<usize>, mid: CMat, right: std::ops::Range<usize>| -> Term {
        let mut idx: Vec<usize> = left.clone().collect();
        let mut cs: Vec<CMat> = left.clone().skip(1).map(|i| bs[i - 1].clone()).collect();
        let (prefix, suffix);
        if left.is_empty() {
            prefix = Some(mid);
            suffix = None;
            cs.clear();
        } else if right.is_empty() {
            prefix = None;
            suffix = Some(mid);
        } else {
            prefix = None;
            suffix = None;
            cs.push(mid);
        }
        let right_first = right.start;
        for i in right.clone() {
            if i > right_first {
                cs.push(bs[i - 1].clone());
            }
            idx.push(i);
        }
        Term { prefix, idx, bs: cs, suffix }
    };

    // B_{j−1} M_j B_j joins w_{j−1} and w_{j+1}
    let merged = linalg::mul3(b(j - 1).as_ref(), ms[p].as_ref(), b(j).as_ref());
    let mut out = joined(0..p, merged, p + 1..k).eval(ms)?;

    for sigma in [1, -1] {
        let sg = sigma as f64;
        let es = e(sigma);
        match which {
            Expansion::Right => {
                for l in 0..p {
                    // M(w₁,…,w_l, E_σ, w_j, …, w_k)·⟨M(w_l,…,w_{j−1})B_{j−1}M_jE_σ⟩
                    let chain = joined(0..l + 1, es.clone(), p..k).eval(ms)?;
                    let inner = sub(l, p - 1)?;
                    let t = linalg::tr_avg_sigma(
                        linalg::mul3(inner.as_ref(), b(j - 1).as_ref(), ms[p].as_ref()).as_ref(),
                        sigma,
                    );
                    out = linalg::axpy(out.as_ref(), t * sg, chain.as_ref());
                }
                for l in p + 1..k {
                    // M(w₁,…,w_{j−1}, B_{j−1}M_jE_σ, w_l, …, w_k)·⟨M(w_j,…,w_l)E_σ⟩
                    let mid = linalg::mul3(b(j - 1).as_ref(), ms[p].as_ref(), es.as_ref());
                    let chain = joined(0..p, mid, l..k).eval(ms)?;
                    let t = linalg::tr_avg_sigma(sub(p, l)?.as_ref(), sigma);
                    out = linalg::axpy(out.as_ref(), t * sg, chain.as_ref());
                }
            }
            Expansion::Left => {
                for l in 0..p {
                    // M(w₁,…,w_l, E_σM_jB_j, w_{j+1}, …, w_k)·⟨M(w_l,…,w_j)E_σ⟩
                    let mid = linalg::mul3(es.as_ref(), ms[p].as_ref(), b(j).as_ref());
                    let chain = joined(0..l + 1, mid, p + 1..k).eval(ms)?;
                    let t = linalg::tr_avg_sigma(sub(l, p)?.as_ref(), sigma);
                    out = linalg::axpy(out.as_ref(), t * sg, chain.as_ref());
                }
                for l in p + 1..k {
                    // M(w₁,…,w_j, E_σ, w_l, …, w_k)·⟨M_jB_jM(w_{j+1},…,w_l)E_σ⟩
                    let chain = joined(0..p + 1, es.clone(), l..k).eval(ms)?;
                    let inner = sub(p + 1, l)?;
                    let t = linalg::tr_avg_sigma(
                        linalg::mul3(ms[p].as_ref(), b(j).as_ref(), inner.as_ref()).as_ref(),
                        sigma,
                    );
                    out = linalg::axpy(out.as_ref(), t * sg, chain.as_ref());
                }
            }
        }
    }
    Ok(out)
}

/// Relative Frobenius distance `‖A − B‖/max(‖B‖, 1e-300)`.
pub fn relative_error(a: &CMat, b: &CMat) -> f64 {
    linalg::frob(linalg::sub(a.as_ref(), b.as_ref()).as_ref()) / linalg::frob(b.as_ref()).max(1e-300)
}

#[derive(Clone, Debug)]
pub struct ChainBounds {
    pub eta: f64,
    pub norm: f64,
    pub norm_bound: f64,
    /// `|⟨M(w₁,…,w_k)A_k⟩|` when a closing observable was given.
    pub trace: Option<f64>,
    pub trace_bound: Option<f64>,
    pub c_check: f64,
}

impl ChainBounds {
    pub fn norm_ratio(&self) -> f64 {
        self.norm / self.norm_bound
    }

    pub fn trace_ratio(&self) -> Option<f64> {
        Some(self.trace? / self.trace_bound?)
    }

    pub fn within(&self) -> bool {
        self.norm_ratio() <= self.c_check && self.trace_ratio().is_none_or(|r| r <= self.c_check)
    }
}

/// Norm of the chain and, with `closing`, the trace `⟨M(w₁,…,w_k)A_k⟩`, against the
/// `η ≤ 1` bounds `η^{−⌊n/2⌋}` and `η^{−(⌊n/2⌋−1)} ∨ 1`.
pub fn chain_bounds_report(def: &Deformation, spec: &ChainSpec, closing: Option<&CMat>) -> Result<ChainBounds> {
    let m = chain_m(def, spec)?;
    let eta = spec.eta().min(1.0);
    let n_b = spec.bs.len() as i32;
    let norm = linalg::op_norm(m.as_ref());
    let norm_bound = eta.powi(-(n_b / 2));
    let (trace, trace_bound) = match closing {
        Some(a) => {
            let n_a = n_b + 1;
            let t = linalg::tr_avg_prod(m.as_ref(), a.as_ref()).norm();
            (Some(t), Some(eta.powi(-(n_a / 2 - 1)).max(1.0)))
        }
        None => (None, None),
    };
    Ok(ChainBounds { eta, norm, norm_bound, trace, trace_bound, c_check: C_CHECK })
}

/// `⟨M(w₁, B₁, w₂) B₂⟩`, the deterministic value of `⟨G₁B₁G₂B₂⟩`.
pub fn two_chain_trace(def: &Deformation, w1: SpectralPoint, b1: &CMat, w2: SpectralPoint, b2: &CMat) -> Result<c64> {
    let spec = ChainSpec::new(vec![w1, w2], vec![b1.clone()])?;
    let m = chain_m(def, &spec)?;
    Ok(linalg::tr_avg_prod(m.as_ref(), b2.as_ref()))
}
