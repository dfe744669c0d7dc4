//! Scalar self-consistent equation, matrix solution `M(w)` and the density.
//!
//! For a deformation `Λ` with singular values `ν_i` the scalar equation is
//!
//! ```text
//! m = (1/2N) Σ_{σ=±, i} 1/(σν_i − (w+m)) = (1/N) Σ_i a/(ν_i² − a²),   a = w + m
//! ```
//!
//! and `M(w) = (Λ̂ − a)⁻¹` with `Λ̂ = [[0, Λ], [Λ*, 0]]`, assembled blockwise
//! from the cached SVD of `Λ`.

use std::fmt;
use std::path::Path;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{EthError, Result};
use crate::linalg::{self, CMat, c64};

const FP_BUDGET: usize = 2000;
const NEWTON_BUDGET: usize = 100;
const SOLVE_TOL: f64 = 1e-12;
const SCHEDULE_FLOOR: f64 = 1e-7;
const SCHEDULE_AGREE: f64 = 1e-7;
const GRID_POINTS: usize = 4001;
const REFINE: usize = 8;
const REFINE_JUMP: f64 = 0.05;
/// Density below which a point counts as outside the support.
const RHO_EDGE: f64 = 1e-9;
const NEWTON_RHO_MIN: f64 = 1e-4;

/// Spectral parameter `w` with its sign and optional bulk tag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralPoint {
    pub w: c64,
    pub bulk: Option<bool>,
}

impl SpectralPoint {
    pub fn new(w: c64) -> Self {
        SpectralPoint { w, bulk: None }
    }

    pub fn from_parts(e: f64, im: f64) -> Self {
        Self::new(c64::new(e, im))
    }

    pub fn boundary(e: f64) -> Self {
        Self::new(c64::new(e, 0.0))
    }

    pub fn e(&self) -> f64 {
        self.w.re
    }

    pub fn eta(&self) -> f64 {
        self.w.im.abs()
    }

    pub fn sign(&self) -> i32 {
        if self.w.im > 0.0 {
            1
        } else if self.w.im < 0.0 {
            -1
        } else {
            0
        }
    }

    pub fn conj(&self) -> Self {
        SpectralPoint { w: self.w.conj(), bulk: self.bulk }
    }

    pub fn with_bulk(mut self, bulk: &BulkSet) -> Self {
        self.bulk = Some(bulk.contains(self.e()));
        self
    }
}

impl From<c64> for SpectralPoint {
    fn from(w: c64) -> Self {
        Self::new(w)
    }
}

impl fmt::Display for SpectralPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:+}i", self.w.re, self.w.im)
    }
}

/// Distinct values of `ν²` with weight `multiplicity/N`.
#[derive(Clone, Debug)]
struct NuGroups {
    nu: Vec<f64>,
    nu2: Vec<f64>,
    weight: Vec<f64>,
}

impl NuGroups {
    fn new(nu: &[f64]) -> Self {
        let n = nu.len() as f64;
        let mut sorted: Vec<f64> = nu.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut out = NuGroups { nu: vec![], nu2: vec![], weight: vec![] };
        for v in sorted {
            if out.nu.last() == Some(&v) {
                *out.weight.last_mut().unwrap() += 1.0 / n;
            } else {
                out.nu.push(v);
                out.nu2.push(v * v);
                out.weight.push(1.0 / n);
            }
        }
        out
    }

    /// `(1/N) Σ a/(ν²−a²)`.
    fn f(&self, a: c64) -> c64 {
        let a2 = a * a;
        let mut s = c64::new(0.0, 0.0);
        for (&n2, &wt) in self.nu2.iter().zip(&self.weight) {
            s += wt / (n2 - a2);
        }
        s * a
    }

    /// `F(a)` together with `F′(a) = (1/N) Σ (ν²+a²)/(ν²−a²)²`.
    fn f_df(&self, a: c64) -> (c64, c64) {
        let a2 = a * a;
        let mut s = c64::new(0.0, 0.0);
        let mut d = c64::new(0.0, 0.0);
        for (&n2, &wt) in self.nu2.iter().zip(&self.weight) {
            let r = 1.0 / (n2 - a2);
            s += wt * r;
            d += wt * (n2 + a2) * r * r;
        }
        (s * a, d)
    }
}

/// Deterministic deformation `Λ` with its SVD `Λ = U diag(ν) V*`, `ν` ascending.
#[derive(Clone, Debug)]
pub struct Deformation {
    n: usize,
    lambda: CMat,
    u: CMat,
    nu: Vec<f64>,
    v: CMat,
    norm: f64,
    diagonal: bool,
    groups: NuGroups,
    label: String,
}

impl Deformation {
    pub fn new(lambda: CMat) -> Result<Self> {
        let n = lambda.nrows();
        if n == 0 || lambda.ncols() != n {
            return Err(EthError::Invalid(format!(
                "deformation must be square and nonempty, got {}x{}",
                lambda.nrows(),
                lambda.ncols()
            )));
        }
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || lambda[(i, j)] == c64::new(0.0, 0.0)));
        let (u, nu, v) = if diagonal {
            diagonal_svd(&lambda)
        } else {
            let svd = lambda
                .svd()
                .map_err(|e| EthError::Invalid(format!("SVD of deformation failed: {e:?}")))?;
            // faer sorts singular values in nonincreasing order
            let u = Mat::from_fn(n, n, |i, j| svd.U()[(i, n - 1 - j)]);
            let v = Mat::from_fn(n, n, |i, j| svd.V()[(i, n - 1 - j)]);
            let s = svd.S().column_vector();
            let nu = (0..n).map(|j| s[n - 1 - j].re.max(0.0)).collect();
            (u, nu, v)
        };
        let norm = *nu.last().unwrap();
        let groups = NuGroups::new(&nu);
        Ok(Deformation { n, lambda, u, nu, v, norm, diagonal, groups, label: "custom".into() })
    }

    pub fn zero(n: usize) -> Self {
        let mut d = Self::new(Mat::zeros(n, n)).expect("zero deformation");
        d.label = "zero".into();
        d
    }

    /// `Λ = −z·I`.
    pub fn shift(n: usize, z: c64) -> Self {
        let lambda = Mat::from_fn(n, n, |i, j| if i == j { -z } else { c64::new(0.0, 0.0) });
        let mut d = Self::new(lambda).expect("shift deformation");
        d.label = format!("shift:{},{}", z.re, z.im);
        d
    }

    pub fn diag(values: &[c64]) -> Result<Self> {
        let n = values.len();
        let lambda = Mat::from_fn(n, n, |i, j| if i == j { values[i] } else { c64::new(0.0, 0.0) });
        let mut d = Self::new(lambda)?;
        d.label = "diag".into();
        Ok(d)
    }

    /// Random real diagonal with entries uniform in `[−1, 1]`.
    pub fn random_diag(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<c64> = (0..n).map(|_| c64::new(rng.gen_range(-1.0..=1.0), 0.0)).collect();
        let mut d = Self::diag(&vals).expect("random diagonal deformation");
        d.label = format!("randdiag:{seed}");
        d
    }

    /// Parses `zero`, `shift:<re>,<im>`, `diag:<file>`, `full:<file>` or `randdiag:<seed>`.
    pub fn from_spec(spec: &str, n: usize) -> Result<Self> {
        let bad = |msg: String| EthError::config("deformation", msg);
        let (kind, arg) = match spec.split_once(':') {
            Some((k, a)) => (k.trim(), a.trim()),
            None => (spec.trim(), ""),
        };
        let mut d = match kind {
            "zero" => Self::zero(n),
            "shift" => {
                let (re, im) = arg
                    .split_once(',')
                    .ok_or_else(|| bad(format!("expected shift:<re>,<im>, got `{spec}`")))?;
                let re: f64 = re.trim().parse().map_err(|_| bad(format!("bad real part in `{spec}`")))?;
                let im: f64 = im.trim().parse().map_err(|_| bad(format!("bad imaginary part in `{spec}`")))?;
                Self::shift(n, c64::new(re, im))
            }
            "randdiag" => {
                let seed: u64 = arg.parse().map_err(|_| bad(format!("bad seed in `{spec}`")))?;
                Self::random_diag(n, seed)
            }
            "diag" => {
                let vals = read_diag_file(Path::new(arg))?;
                if vals.len() != n {
                    return Err(bad(format!("{arg} has {} entries, expected N = {n}", vals.len())));
                }
                let vals: Vec<c64> = vals.into_iter().map(|x| c64::new(x, 0.0)).collect();
                Self::diag(&vals)?
            }
            "full" => {
                let m = read_full_file(Path::new(arg))?;
                if m.nrows() != n {
                    return Err(bad(format!("{arg} is {}x{}, expected N = {n}", m.nrows(), m.ncols())));
                }
                Self::new(m)?
            }
            _ => return Err(bad(format!("unknown deformation kind `{kind}`"))),
        };
        d.label = spec.to_string();
        Ok(d)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> &CMat {
        &self.lambda
    }

    pub fn u(&self) -> &CMat {
        &self.u
    }

    pub fn v(&self) -> &CMat {
        &self.v
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.nu
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `Λ̂ = [[0, Λ], [Λ*, 0]]`.
    pub fn hat(&self) -> CMat {
        linalg::chiral_block(self.lambda.as_ref())
    }

    /// Relative error of `U diag(ν) V*` against `Λ`.
    pub fn reconstruction_error(&self) -> f64 {
        let n = self.n;
        let us = Mat::from_fn(n, n, |i, j| self.u[(i, j)] * self.nu[j]);
        let rec = &us * self.v.adjoint();
        let err = linalg::frob(linalg::sub(rec.as_ref(), self.lambda.as_ref()).as_ref());
        err / linalg::frob(self.lambda.as_ref()).max(1.0)
    }

    /// Singular values of `Λ − z`, ascending.
    pub fn shifted_singular_values(&self, z: c64) -> Vec<f64> {
        let n = self.n;
        let mut s: Vec<f64> = if self.diagonal {
            (0..n).map(|i| (self.lambda[(i, i)] - z).norm()).collect()
        } else {
            let shifted = Mat::from_fn(n, n, |i, j| {
                if i == j { self.lambda[(i, j)] - z } else { self.lambda[(i, j)] }
            });
            shifted.singular_values().unwrap_or_default()
        };
        s.sort_by(f64::total_cmp);
        s
    }

    /// `(1/N) Σ a/(ν²−a²)` for this deformation.
    pub fn self_energy(&self, a: c64) -> c64 {
        self.groups.f(a)
    }
}

fn diagonal_svd(lambda: &CMat) -> (CMat, Vec<f64>, CMat) {
    let n = lambda.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lambda[(i, i)].norm().total_cmp(&lambda[(j, j)].norm()));
    let nu: Vec<f64> = order.iter().map(|&i| lambda[(i, i)].norm()).collect();
    let mut u = Mat::zeros(n, n);
    let mut v = Mat::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let d = lambda[(i, i)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c64::new(1.0, 0.0) };
        u[(i, col)] = phase;
        v[(i, col)] = c64::new(1.0, 0.0);
    }
    (u, nu, v)
}

fn read_diag_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| EthError::config("deformation", format!("{}: cannot parse `{l}`", path.display())))
        })
        .collect()
}

fn read_full_file(path: &Path) -> Result<CMat> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<c64>> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            let (re, im) = tok.split_once(',').ok_or_else(|| {
                EthError::config("deformation", format!("{}: expected re,im pair, got `{tok}`", path.display()))
            })?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| EthError::config("deformation", format!("{}: cannot parse `{tok}`", path.display())))
            };
            row.push(c64::new(parse(re)?, parse(im)?));
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(EthError::config("deformation", format!("{}: matrix is not square", path.display())));
    }
    Ok(Mat::from_fn(n, n, |i, j| rows[i][j]))
}

fn residual(groups: &NuGroups, w: c64, m: c64) -> f64 {
    (m - groups.f(w + m)).norm()
}

/// Newton iteration on `g(m) = m − F(w+m)`; the iterate stays in the closed
/// half plane of `sign` (`sign = 0` means the upper closed half plane at real `w`).
fn newton(groups: &NuGroups, w: c64, m0: c64, sign: i32) -> (c64, f64) {
    let s = if sign < 0 { -1.0 } else { 1.0 };
    let admissible = |m: c64| if sign == 0 { m.im >= 0.0 } else { m.im * s > 0.0 };
    let mut m = m0;
    let mut res = residual(groups, w, m);
    for _ in 0..NEWTON_BUDGET {
        if res <= 1e-15 {
            break;
        }
        let (f, df) = groups.f_df(w + m);
        let step = (m - f) / (1.0 - df);
        if !step.re.is_finite() || !step.im.is_finite() {
            break;
        }
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let mut cand = m - step * t;
            if sign == 0 && cand.im < 0.0 && m.im < 1e-9 {
                cand.im = 0.0;
            }
            if admissible(cand) {
                let r = residual(groups, w, cand);
                if r < res || t < 1e-6 {
                    next = Some((cand, r));
                    break;
                }
            }
            t *= 0.5;
        }
        match next {
            Some((cand, r)) => {
                let moved = (cand - m).norm();
                m = cand;
                res = r;
                if moved <= 1e-16 * m.norm().max(1e-300) {
                    break;
                }
            }
            None => break,
        }
    }
    (m, res)
}

/// Damped fixed point followed by a Newton polish.
fn solve_scalar(groups: &NuGroups, w: c64, m0: c64) -> (c64, f64) {
    let s = if w.im > 0.0 { 1.0 } else { -1.0 };
    let mut m = m0;
    let mut alpha = 0.5;
    let mut streak = 0;
    let mut prev = f64::INFINITY;
    for _ in 0..FP_BUDGET {
        let f = groups.f(w + m);
        let defect = (f - m).norm();
        if defect < 1e-3 {
            break;
        }
        if defect < prev {
            streak += 1;
        } else {
            streak = 0;
            alpha = 0.5;
        }
        if streak >= 5 {
            alpha = 1.0;
        }
        let mut next = m * (1.0 - alpha) + f * alpha;
        if next.im * s <= 0.0 {
            next.im = s * 0.5 * m.im.abs().max(1e-300);
        }
        prev = defect;
        m = next;
    }
    newton(groups, w, m, if s > 0.0 { 1 } else { -1 })
}

/// Solves the scalar equation at `Im w ≠ 0`.
pub fn solve_m(def: &Deformation, w: SpectralPoint) -> Result<c64> {
    solve_m_from(def, w, None)
}

/// As [`solve_m`] with an optional warm start.
pub fn solve_m_from(def: &Deformation, w: SpectralPoint, start: Option<c64>) -> Result<c64> {
    if w.sign() == 0 {
        return Err(EthError::Invalid("solve_m needs Im w != 0; use boundary_m".into()));
    }
    if w.w.norm() > 1e6 {
        return Err(EthError::Invalid(format!("|w| = {} exceeds 1e6", w.w.norm())));
    }
    let s = w.sign() as f64;
    let m0 = match start {
        Some(m) if m.im * s > 0.0 => m,
        _ => c64::new(0.0, s),
    };
    let (m, res) = solve_scalar(&def.groups, w.w, m0);
    if res > SOLVE_TOL || m.im * s <= 0.0 {
        return Err(EthError::NoConvergence { w: w.to_string(), residual: res });
    }
    Ok(m)
}

/// Result of the `η ↓ 0` continuation at a real energy.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryValue {
    pub m: c64,
    /// Smallest `η` of the schedule that was evaluated.
    pub last_eta: f64,
    /// Distance between the last two schedule values.
    pub spread: f64,
    pub converged: bool,
}

fn continuation(groups: &NuGroups, e: f64) -> BoundaryValue {
    let mut m = c64::new(0.0, 1.0);
    let mut prev: Option<c64> = None;
    let mut spread = f64::INFINITY;
    let mut last_eta = 1.0;
    let mut stable = false;
    for j in 0..64 {
        let eta = (0.5f64).powi(j).max(SCHEDULE_FLOOR);
        let (next, _) = solve_scalar(groups, c64::new(e, eta), m);
        m = next;
        last_eta = eta;
        if let Some(p) = prev {
            spread = (m - p).norm();
            if spread < SCHEDULE_AGREE {
                stable = true;
                break;
            }
        }
        prev = Some(m);
        if eta == SCHEDULE_FLOOR {
            break;
        }
    }
    // Newton at η = 0 from the last schedule value
    let (polished, res) = newton(groups, c64::new(e, 0.0), m, 0);
    if res <= 1e-13 && polished.im >= 0.0 && (polished - m).norm() <= 1e-3 {
        return BoundaryValue { m: polished, last_eta, spread, converged: true };
    }
    BoundaryValue { m, last_eta, spread, converged: stable }
}

/// `lim_{η↓0} m(e+iη)`.
pub fn boundary_m(def: &Deformation, e: f64) -> Result<c64> {
    let bv = boundary_value(def, e);
    if bv.converged {
        Ok(bv.m)
    } else {
        Err(EthError::NoConvergence {
            w: format!("{e}+i0 (last stable eta {:e})", bv.last_eta),
            residual: bv.spread,
        })
    }
}

/// The continuation record; never fails, `converged` tells whether the limit is trusted.
pub fn boundary_value(def: &Deformation, e: f64) -> BoundaryValue {
    continuation(&def.groups, e)
}

/// Boundary value from a nearby guess: a real-axis Newton polish, with the
/// full continuation as fallback.
fn boundary_near(groups: &NuGroups, e: f64, guess: c64) -> c64 {
    let (m, res) = newton(groups, c64::new(e, 0.0), guess, 0);
    if res <= 1e-13 && m.im >= 0.0 && (m - guess).norm() <= 0.05 {
        return m;
    }
    continuation(groups, e).m
}

/// `ρ(e) = Im m(e+i0)/π`.
pub fn scdos(def: &Deformation, e: f64) -> Result<f64> {
    Ok(boundary_m(def, e)?.im.max(0.0) / std::f64::consts::PI)
}

/// Diagonal coefficients of `M` in the singular bases of `Λ`:
/// `M₁₁ = U diag(f) U*`, `M₂₂ = V diag(f) V*`, `M₁₂ = U diag(g) V*`, `M₂₁ = V diag(g) U*`
/// with `f = a/(ν²−a²)` and `g = ν/(ν²−a²)`.
#[derive(Clone, Debug)]
pub struct MCoeffs {
    pub a: c64,
    pub f: Vec<c64>,
    pub g: Vec<c64>,
}

pub fn m_coeffs(def: &Deformation, w: c64, m: c64) -> Result<MCoeffs> {
    let a = w + m;
    let a2 = a * a;
    let mut f = Vec::with_capacity(def.n);
    let mut g = Vec::with_capacity(def.n);
    for &nu in &def.nu {
        let den = nu * nu - a2;
        if den.norm() < 1e-12 {
            return Err(EthError::SingularDenominator { value: den.norm() });
        }
        f.push(a / den);
        g.push(nu / den);
    }
    Ok(MCoeffs { a, f, g })
}

/// Sandwiches `diag(d)` between `P` and `Q*`.
fn sandwich(p: &CMat, d: &[c64], q: &CMat) -> CMat {
    let n = p.nrows();
    let pd = Mat::from_fn(n, n, |i, j| p[(i, j)] * d[j]);
    &pd * q.adjoint()
}

/// `M(w)` from `m`.
pub fn build_m(def: &Deformation, w: SpectralPoint, m: c64) -> Result<CMat> {
    let co = m_coeffs(def, w.w, m)?;
    let m11 = sandwich(&def.u, &co.f, &def.u);
    let m22 = sandwich(&def.v, &co.f, &def.v);
    let m12 = sandwich(&def.u, &co.g, &def.v);
    let m21 = sandwich(&def.v, &co.g, &def.u);
    Ok(linalg::block(m11.as_ref(), m12.as_ref(), m21.as_ref(), m22.as_ref()))
}

#[derive(Clone, Debug)]
pub struct MdeSolution {
    pub w: SpectralPoint,
    pub m: c64,
    pub mat: CMat,
    pub residual: f64,
}

impl MdeSolution {
    /// Solves at `Im w ≠ 0`, or takes the boundary value at real `w`.
    pub fn new(def: &Deformation, w: SpectralPoint) -> Result<Self> {
        let m = if w.sign() == 0 { boundary_m(def, w.e())? } else { solve_m(def, w)? };
        let mat = build_m(def, w, m)?;
        Ok(MdeSolution { w, m, mat, residual: residual(&def.groups, w.w, m) })
    }

    /// `‖M⁻¹ + (w − Λ̂ + S[M])‖_F`.
    pub fn mde_defect(&self, def: &Deformation) -> f64 {
        let inv = linalg::inverse(self.mat.as_ref());
        let s = linalg::s_op(self.mat.as_ref());
        let hat = def.hat();
        let n2 = self.mat.nrows();
        let d = Mat::from_fn(n2, n2, |i, j| {
            let wi = if i == j { self.w.w } else { c64::new(0.0, 0.0) };
            inv[(i, j)] + wi - hat[(i, j)] + s[(i, j)]
        });
        linalg::frob(d.as_ref())
    }

    pub fn im_m(&self) -> CMat {
        linalg::im_part(self.mat.as_ref())
    }
}

/// `(1/2N) Σ_σ,i` primitive of `m` evaluated at a real point, giving the CDF of `ρ`.
fn cdf_exact(groups: &NuGroups, x: f64, m: c64) -> f64 {
    let a = c64::new(x, 0.0) + m;
    let theta = |z: c64| -f64::atan2((-z.im).max(0.0), z.re);
    let mut s = linalg::KSum::default();
    for (&nu, &wt) in groups.nu.iter().zip(&groups.weight) {
        s.add(0.5 * wt * (theta(c64::new(nu, 0.0) - a) + theta(c64::new(-nu, 0.0) - a)));
    }
    (-s.value() - 0.5 * (m * m).im) / std::f64::consts::PI
}

/// CDF of the self-consistent density at `x`.
pub fn density_cdf(def: &Deformation, x: f64) -> f64 {
    let m = boundary_value(def, x).m;
    cdf_exact(&def.groups, x, m)
}

/// Disjoint closed intervals of the κ-bulk.
#[derive(Clone, Debug, PartialEq)]
pub struct BulkSet {
    pub kappa: f64,
    pub intervals: Vec<(f64, f64)>,
}

impl BulkSet {
    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= x && x <= b)
    }

    /// Distance from `x` to the complement; 0 outside.
    pub fn depth(&self, x: f64) -> f64 {
        self.intervals
            .iter()
            .filter(|&&(a, b)| a <= x && x <= b)
            .map(|&(a, b)| (x - a).min(b - x))
            .fold(0.0, f64::max)
    }

    pub fn contains_with_margin(&self, x: f64, margin: f64) -> bool {
        self.contains(x) && self.depth(x) >= margin
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Quantiles `γ_i`, `1 ≤ |i| ≤ N`.
#[derive(Clone, Debug)]
pub struct QuantileTable {
    pub n: usize,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl QuantileTable {
    pub fn get(&self, i: isize) -> f64 {
        assert!(i != 0 && i.unsigned_abs() <= self.n, "quantile index {i} out of range");
        if i > 0 { self.pos[i as usize - 1] } else { self.neg[(-i) as usize - 1] }
    }

    pub fn indices(&self) -> impl Iterator<Item = isize> + '_ {
        let n = self.n as isize;
        (-n..=n).filter(|&i| i != 0)
    }
}

/// Tabulated density on a refined grid of the support box.
#[derive(Clone, Debug)]
pub struct DensityProfile {
    pub support_box: (f64, f64),
    pub grid: Vec<f64>,
    pub m: Vec<c64>,
    pub rho: Vec<f64>,
    /// Exact CDF at the grid points.
    pub cdf: Vec<f64>,
    /// Trapezoid cumulative integral of `rho`.
    pub cumulative: Vec<f64>,
    /// Grid points where the continuation did not settle.
    pub unsettled: usize,
    groups: NuGroups,
}

impl DensityProfile {
    pub fn compute(def: &Deformation) -> Self {
        let groups = def.groups.clone();
        let lo = -def.norm - 3.0;
        let hi = def.norm + 3.0;
        let h = (hi - lo) / (GRID_POINTS - 1) as f64;
        let coarse: Vec<f64> = (0..GRID_POINTS).map(|k| lo + h * k as f64).collect();
        let coarse_vals: Vec<BoundaryValue> = coarse.iter().map(|&x| continuation(&groups, x)).collect();
        let rho_of = |bv: &BoundaryValue| bv.m.im.max(0.0) / std::f64::consts::PI;

        let mut grid = Vec::with_capacity(GRID_POINTS * 2);
        let mut vals = Vec::with_capacity(GRID_POINTS * 2);
        for k in 0..GRID_POINTS {
            grid.push(coarse[k]);
            vals.push(coarse_vals[k]);
            if k + 1 == GRID_POINTS {
                break;
            }
            let (r0, r1) = (rho_of(&coarse_vals[k]), rho_of(&coarse_vals[k + 1]));
            let edge = (r0 > RHO_EDGE) != (r1 > RHO_EDGE);
            if (r1 - r0).abs() > REFINE_JUMP || edge {
                for s in 1..REFINE {
                    let x = coarse[k] + h * s as f64 / REFINE as f64;
                    grid.push(x);
                    vals.push(continuation(&groups, x));
                }
            }
        }
        let m: Vec<c64> = vals.iter().map(|v| v.m).collect();
        let rho: Vec<f64> = vals.iter().map(rho_of).collect();
        let unsettled = vals.iter().filter(|v| !v.converged).count();
        let cdf: Vec<f64> = grid.iter().zip(&m).map(|(&x, &mm)| cdf_exact(&groups, x, mm)).collect();
        let mut cumulative = vec![0.0; grid.len()];
        for k in 1..grid.len() {
            cumulative[k] = cumulative[k - 1] + 0.5 * (rho[k] + rho[k - 1]) * (grid[k] - grid[k - 1]);
        }
        DensityProfile { support_box: (lo, hi), grid, m, rho, cdf, cumulative, unsettled, groups }
    }

    /// Total mass from the exact primitive.
    pub fn mass(&self) -> f64 {
        self.cdf.last().unwrap() - self.cdf[0]
    }

    pub fn mass_trapezoid(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// `m(x+i0)` using the nearest grid value as warm start.
    pub fn m_at(&self, x: f64) -> c64 {
        let k = self.grid.partition_point(|&g| g < x).min(self.grid.len() - 1);
        let k = if k > 0 && (self.grid[k - 1] - x).abs() < (self.grid[k] - x).abs() { k - 1 } else { k };
        boundary_near(&self.groups, x, self.m[k])
    }

    /// `ρ(x)` using the nearest grid value as warm start.
    pub fn rho_at(&self, x: f64) -> f64 {
        self.m_at(x).im.max(0.0) / std::f64::consts::PI
    }

    pub fn cdf_at(&self, x: f64) -> f64 {
        cdf_exact(&self.groups, x, self.m_at(x))
    }

    /// Rightmost point of the support.
    pub fn right_edge(&self) -> f64 {
        let k = self.rho.iter().rposition(|&r| r > RHO_EDGE).expect("density vanishes on the grid");
        self.bisect_edge(self.grid[k], self.grid[(k + 1).min(self.grid.len() - 1)])
    }

    /// Leftmost point of the support.
    pub fn left_edge(&self) -> f64 {
        let k = self.rho.iter().position(|&r| r > RHO_EDGE).expect("density vanishes on the grid");
        self.bisect_edge(self.grid[k], self.grid[k.saturating_sub(1)])
    }

    /// Bisection between `inside` (ρ > threshold) and `outside`.
    fn bisect_edge(&self, mut inside: f64, mut outside: f64) -> f64 {
        for _ in 0..200 {
            if (inside - outside).abs() <= 1e-15 * inside.abs().max(1.0) {
                break;
            }
            let mid = 0.5 * (inside + outside);
            if self.rho_at(mid) > RHO_EDGE {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    }

    /// κ-bulk: where `ρ ≥ κ^{1/3}`.
    pub fn bulk(&self, kappa: f64) -> Result<BulkSet> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(EthError::Invalid(format!("kappa must lie in (0,1), got {kappa}")));
        }
        let thr = kappa.cbrt();
        let above: Vec<bool> = self.rho.iter().map(|&r| r >= thr).collect();
        let mut intervals = Vec::new();
        let mut k = 0;
        while k < above.len() {
            if !above[k] {
                k += 1;
                continue;
            }
            let start = k;
            while k + 1 < above.len() && above[k + 1] {
                k += 1;
            }
            let end = k;
            let left = if start == 0 { self.grid[0] } else { self.bisect_level(self.grid[start], self.grid[start - 1], thr) };
            let right = if end + 1 == above.len() {
                self.grid[end]
            } else {
                self.bisect_level(self.grid[end], self.grid[end + 1], thr)
            };
            intervals.push((left, right));
            k += 1;
        }
        if intervals.is_empty() {
            return Err(EthError::EmptyBulk { kappa });
        }
        Ok(BulkSet { kappa, intervals })
    }

    /// Bisection on `ρ − thr` between `above` and `below`; the result stays on the `above` side.
    fn bisect_level(&self, mut above: f64, mut below: f64, thr: f64) -> f64 {
        while (above - below).abs() > 1e-10 {
            let mid = 0.5 * (above + below);
            if self.rho_at(mid) >= thr {
                above = mid;
            } else {
                below = mid;
            }
        }
        above
    }

    /// Quantile table for `N`.
    pub fn quantiles(&self, n: usize) -> QuantileTable {
        let right = self.right_edge();
        let left = self.left_edge();
        let mut pos = Vec::with_capacity(n);
        let mut neg = Vec::with_capacity(n);
        for i in 1..=n {
            if i == n {
                pos.push(right);
                neg.push(left);
                continue;
            }
            let t_pos = (i + n) as f64 / (2 * n) as f64;
            let t_neg = (n - i) as f64 / (2 * n) as f64;
            pos.push(self.invert_cdf(t_pos));
            neg.push(self.invert_cdf(t_neg));
        }
        QuantileTable { n, pos, neg }
    }

    /// Initial guess from the trapezoid table.
    pub fn quantile_from_table(&self, t: f64) -> f64 {
        let total = self.mass_trapezoid();
        let target = t * total;
        let k = self.cumulative.partition_point(|&c| c < target).clamp(1, self.grid.len() - 1);
        let (c0, c1) = (self.cumulative[k - 1], self.cumulative[k]);
        let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        self.grid[k - 1] + frac * (self.grid[k] - self.grid[k - 1])
    }

    /// Solves `F(x) = t` with safeguarded Newton on the exact CDF.
    pub fn invert_cdf(&self, t: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < t).clamp(1, self.grid.len() - 1);
        let mut lo = self.grid[k - 1];
        let mut hi = self.grid[k];
        // widen in case the tabulated CDF is off by rounding at the cell boundary
        let (mut klo, mut khi) = (k - 1, k);
        while klo > 0 && self.cdf_at(lo) > t {
            klo -= 1;
            lo = self.grid[klo];
        }
        while khi + 1 < self.grid.len() && self.cdf_at(hi) < t {
            khi += 1;
            hi = self.grid[khi];
        }
        let mut x = self.quantile_from_table(t).clamp(lo, hi);
        let mut guess = self.m_at(x);
        for _ in 0..200 {
            let m = boundary_near(&self.groups, x, guess);
            guess = m;
            let r = cdf_exact(&self.groups, x, m) - t;
            if r.abs() < 1e-13 {
                return x;
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if hi - lo < 1e-15 * x.abs().max(1.0) {
                return 0.5 * (lo + hi);
            }
            let rho = m.im.max(0.0) / std::f64::consts::PI;
            let newton = x - r / rho;
            x = if rho >= NEWTON_RHO_MIN && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        x
    }

    /// CSV with columns `e,rho`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("e,rho\n");
        for (x, r) in self.grid.iter().zip(&self.rho) {
            s.push_str(&format!("{x},{r}\n"));
        }
        s
    }
}

/// κ-bulk of the density of `def`.
pub fn kappa_bulk(def: &Deformation, kappa: f64) -> Result<BulkSet> {
    DensityProfile::compute(def).bulk(kappa)
}

/// Quantiles `γ_i` for `|i| ≤ n`.
pub fn quantiles(def: &Deformation, n: usize) -> Result<QuantileTable> {
    if n == 0 {
        return Err(EthError::Invalid("quantiles need N >= 1".into()));
    }
    Ok(DensityProfile::compute(def).quantiles(n))
}
