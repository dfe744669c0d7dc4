//! i.i.d. samples, their Hermitization, chiral eigen-data, left/right eigenvectors,
//! overlaps and the Ornstein–Uhlenbeck eigenvalue flow.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{EthError, Result};
use crate::linalg::{self, CMat, c64};
use crate::mde::Deformation;

/// Minimal eigenvalue gap below which a sample is flagged degenerate.
pub const DEGENERACY_GAP: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryDist {
    ComplexGaussian,
    UniformPhase,
}

impl fmt::Display for EntryDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntryDist::ComplexGaussian => "complex-gaussian",
            EntryDist::UniformPhase => "uniform-phase",
        })
    }
}

impl FromStr for EntryDist {
    type Err = EthError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complex-gaussian" | "gaussian" => Ok(EntryDist::ComplexGaussian),
            "uniform-phase" | "phase" => Ok(EntryDist::UniformPhase),
            _ => Err(EthError::config("dist", format!("unknown entry distribution `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleConfig {
    pub n: usize,
    pub dist: EntryDist,
    pub seed: u64,
    /// PRNG stream; trials of one experiment share the seed and differ in the stream.
    pub stream: u64,
}

impl SampleConfig {
    pub fn new(n: usize, dist: EntryDist, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(EthError::config("N", format!("dimension must be at least 2, got {n}")));
        }
        Ok(SampleConfig { n, dist, seed, stream: 0 })
    }

    pub fn trial(self, trial: u64) -> Self {
        SampleConfig { stream: trial, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}

fn draw_entry(dist: EntryDist, rng: &mut ChaCha8Rng) -> c64 {
    match dist {
        EntryDist::ComplexGaussian => {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            c64::new(re / SQRT_2, im / SQRT_2)
        }
        EntryDist::UniformPhase => {
            let theta = rng.gen_range(0.0..2.0 * PI);
            c64::new(theta.cos(), theta.sin())
        }
    }
}

/// `N×N` matrix with i.i.d. entries `χ/√N`, `Eχ = Eχ² = 0`, `E|χ|² = 1`.
pub fn sample_iid(cfg: &SampleConfig) -> CMat {
    let mut rng = cfg.rng();
    sample_with(cfg.n, cfg.dist, &mut rng)
}

fn sample_with(n: usize, dist: EntryDist, rng: &mut ChaCha8Rng) -> CMat {
    let s = 1.0 / (n as f64).sqrt();
    let mut x = Mat::zeros(n, n);
    // row-major fill keeps dumps readable line by line
    for i in 0..n {
        for j in 0..n {
            x[(i, j)] = draw_entry(dist, rng) * s;
        }
    }
    x
}

/// `[[0, X+Λ], [(X+Λ)*, 0]]`.
pub fn hermitise(x: &CMat, lambda: &CMat) -> CMat {
    let y = linalg::add(x.as_ref(), lambda.as_ref());
    linalg::chiral_block(y.as_ref())
}

/// Eigen-data of a Hermitization with exact chiral pairing.
///
/// Index `i ∈ {±1, …, ±N}` is stored in column `N+i−1` for `i > 0` and `N+i` for `i < 0`,
/// so the eigenvalues ascend with the column.
#[derive(Clone, Debug)]
pub struct ChiralSpectrum {
    pub n: usize,
    /// `σ₁ ≤ … ≤ σ_N`.
    pub sigma: Vec<f64>,
    /// Left singular vectors as columns, `Yv_i = σ_i u_i`.
    pub u: CMat,
    pub v: CMat,
    pub min_gap: f64,
    pub degenerate: bool,
}

impl ChiralSpectrum {
    pub fn col(&self, i: isize) -> usize {
        let n = self.n as isize;
        assert!(i != 0 && i.abs() <= n, "index {i} outside ±1..=±{n}");
        (if i > 0 { n + i - 1 } else { n + i }) as usize
    }

    pub fn index(&self, col: usize) -> isize {
        let n = self.n as isize;
        let c = col as isize;
        if c >= n { c - n + 1 } else { c - n }
    }

    pub fn lambda(&self, i: isize) -> f64 {
        let s = self.sigma[i.unsigned_abs() - 1];
        if i > 0 { s } else { -s }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        (0..2 * self.n).map(|c| self.lambda(self.index(c))).collect()
    }

    /// `w_i = (u_i, ±v_i)/√2`.
    pub fn eigvec(&self, i: isize) -> Vec<c64> {
        let k = i.unsigned_abs() - 1;
        let sgn = if i > 0 { 1.0 } else { -1.0 };
        let mut w = Vec::with_capacity(2 * self.n);
        w.extend((0..self.n).map(|a| self.u[(a, k)] / SQRT_2));
        w.extend((0..self.n).map(|a| self.v[(a, k)] * (sgn / SQRT_2)));
        w
    }

    /// All `2N` eigenvectors as columns, ascending eigenvalues.
    pub fn eigvecs(&self) -> CMat {
        let n = self.n;
        Mat::from_fn(2 * n, 2 * n, |a, c| {
            let i = self.index(c);
            let k = i.unsigned_abs() - 1;
            if a < n {
                self.u[(a, k)] / SQRT_2
            } else if i > 0 {
                self.v[(a - n, k)] / SQRT_2
            } else {
                -self.v[(a - n, k)] / SQRT_2
            }
        })
    }

    /// `G(w) = (H − w)⁻¹` assembled blockwise from the singular triplets.
    pub fn resolvent(&self, w: c64) -> CMat {
        let (f, g) = self.coefficients(w);
        sandwich_blocks(&self.u, &self.v, &f, &g)
    }

    /// `f_i = w/(σ_i² − w²)`, `g_i = σ_i/(σ_i² − w²)`.
    pub fn coefficients(&self, w: c64) -> (Vec<c64>, Vec<c64>) {
        resolvent_coefficients(&self.sigma, w)
    }

    /// `⟨w_i, A w_j⟩` for all `i, j` from four `N×N` sandwiches.
    pub fn block_overlaps(&self, a: &CMat) -> ChiralOverlaps {
        let n = self.n;
        let blk = |r: usize, c: usize| a.as_ref().submatrix(r, c, n, n);
        ChiralOverlaps {
            uu: self.u.adjoint() * blk(0, 0) * &self.u,
            uv: self.u.adjoint() * blk(0, n) * &self.v,
            vu: self.v.adjoint() * blk(n, 0) * &self.u,
            vv: self.v.adjoint() * blk(n, n) * &self.v,
        }
    }

    /// `W* A W` indexed by columns, so `⟨w_i, A w_j⟩ = out[(col(i), col(j))]`.
    pub fn overlaps(&self, a: &CMat) -> CMat {
        let w = self.eigvecs();
        w.adjoint() * a * &w
    }
}

/// Sandwiches of an observable with the singular vectors; `uv = U*A₁₂V` and so on.
#[derive(Clone, Debug)]
pub struct ChiralOverlaps {
    pub uu: CMat,
    pub uv: CMat,
    pub vu: CMat,
    pub vv: CMat,
}

impl ChiralOverlaps {
    /// `⟨w_i, A w_j⟩`.
    pub fn get(&self, i: isize, j: isize) -> c64 {
        let (k, l) = (i.unsigned_abs() - 1, j.unsigned_abs() - 1);
        let s = if i > 0 { 1.0 } else { -1.0 };
        let t = if j > 0 { 1.0 } else { -1.0 };
        (self.uu[(k, l)] + self.uv[(k, l)] * t + self.vu[(k, l)] * s + self.vv[(k, l)] * (s * t)) * 0.5
    }
}

pub(crate) fn resolvent_coefficients(s: &[f64], w: c64) -> (Vec<c64>, Vec<c64>) {
    let w2 = w * w;
    let mut f = Vec::with_capacity(s.len());
    let mut g = Vec::with_capacity(s.len());
    for &x in s {
        let d = (c64::new(x * x, 0.0) - w2).inv();
        f.push(w * d);
        g.push(d * x);
    }
    (f, g)
}

/// `[[U diag(f) U*, U diag(g) V*], [V diag(g) U*, V diag(f) V*]]`.
pub fn sandwich_blocks(u: &CMat, v: &CMat, f: &[c64], g: &[c64]) -> CMat {
    let n = u.nrows();
    let scaled = |m: &CMat, d: &[c64]| Mat::from_fn(n, n, |a, k| m[(a, k)] * d[k]);
    let uf = scaled(u, f);
    let ug = scaled(u, g);
    let vf = scaled(v, f);
    let vg = scaled(v, g);
    let a11 = &uf * u.adjoint();
    let a12 = &ug * v.adjoint();
    let a21 = &vg * u.adjoint();
    let a22 = &vf * v.adjoint();
    linalg::block(a11.as_ref(), a12.as_ref(), a21.as_ref(), a22.as_ref())
}

/// `⟨R(z) T⟩` for every `R = [[U f U*, U g V*], [V g U*, V f V*]]` built on a fixed singular
/// basis, after an `O(N³)` precomputation of the diagonal sandwiches of `T`; each evaluation is `O(N)`.
#[derive(Clone, Debug)]
pub struct DiagonalTrace {
    s: Vec<f64>,
    p: Vec<c64>,
    q: Vec<c64>,
}

impl DiagonalTrace {
    pub fn new(u: &CMat, v: &CMat, s: &[f64], t: &CMat) -> Self {
        let n = u.nrows();
        let t11 = t.as_ref().submatrix(0, 0, n, n);
        let t12 = t.as_ref().submatrix(0, n, n, n);
        let t21 = t.as_ref().submatrix(n, 0, n, n);
        let t22 = t.as_ref().submatrix(n, n, n, n);
        let diag = |l: &CMat, m: faer::MatRef<'_, c64>, r: &CMat| -> Vec<c64> {
            let mr = m * r;
            (0..n)
                .map(|k| (0..n).map(|a| l[(a, k)].conj() * mr[(a, k)]).sum::<c64>())
                .collect()
        };
        let d11 = diag(u, t11, u);
        let d22 = diag(v, t22, v);
        let d21 = diag(v, t21, u);
        let d12 = diag(u, t12, v);
        DiagonalTrace {
            s: s.to_vec(),
            p: d11.iter().zip(&d22).map(|(a, b)| a + b).collect(),
            q: d21.iter().zip(&d12).map(|(a, b)| a + b).collect(),
        }
    }

    /// For an ensemble sample: `⟨G(w) T⟩`.
    pub fn for_sample(spec: &ChiralSpectrum, t: &CMat) -> Self {
        Self::new(&spec.u, &spec.v, &spec.sigma, t)
    }

    /// For the deterministic solution: evaluate at `z = w + m(w)` to get `⟨M(w) T⟩`.
    pub fn for_deformation(def: &Deformation, t: &CMat) -> Self {
        Self::new(def.u(), def.v(), def.singular_values(), t)
    }

    pub fn eval(&self, z: c64) -> c64 {
        let (f, g) = resolvent_coefficients(&self.s, z);
        let mut acc = linalg::CSum::default();
        for k in 0..self.s.len() {
            acc.add(f[k] * self.p[k] + g[k] * self.q[k]);
        }
        acc.value() / (2 * self.s.len()) as f64
    }
}

/// Chiral eigen-decomposition of a Hermitization `H = [[0, Y], [Y*, 0]]`, read off the SVD of `Y`.
pub fn spectral(h: &CMat) -> Result<ChiralSpectrum> {
    let n = h.nrows() / 2;
    if h.nrows() != 2 * n || h.ncols() != 2 * n || n == 0 {
        return Err(EthError::Invalid(format!("not a Hermitization: {}x{}", h.nrows(), h.ncols())));
    }
    let y = h.as_ref().submatrix(0, n, n, n).to_owned();
    spectral_of(&y)
}

/// As [`spectral`] from `Y = X + Λ` directly.
pub fn spectral_of(y: &CMat) -> Result<ChiralSpectrum> {
    let n = y.nrows();
    let svd = y.svd().map_err(|e| EthError::Invalid(format!("SVD failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let mut u = Mat::from_fn(n, n, |a, k| svd.U()[(a, n - 1 - k)]);
    let mut v = Mat::from_fn(n, n, |a, k| svd.V()[(a, n - 1 - k)]);
    let sigma: Vec<f64> = (0..n).map(|k| s[n - 1 - k].re.max(0.0)).collect();
    for k in 0..n {
        let mut best = 0;
        for a in 1..n {
            if u[(a, k)].norm() > u[(best, k)].norm() {
                best = a;
            }
        }
        let z = u[(best, k)];
        if z.norm() > 0.0 {
            let phase = z.conj() / z.norm();
            for a in 0..n {
                u[(a, k)] *= phase;
                v[(a, k)] *= phase;
            }
        }
    }
    let mut min_gap = 2.0 * sigma[0];
    for k in 1..n {
        min_gap = min_gap.min(sigma[k] - sigma[k - 1]);
    }
    Ok(ChiralSpectrum { n, sigma, u, v, min_gap, degenerate: min_gap < DEGENERACY_GAP })
}

/// Eigenvalues, biorthonormal left/right eigenvectors and overlaps of a non-Hermitian matrix.
#[derive(Clone, Debug)]
pub struct LeftRight {
    pub mus: Vec<c64>,
    /// Right eigenvectors as columns.
    pub r: CMat,
    /// `l_jᵗ` is row `j`, so `l_jᵗ r_i = δ_ij`.
    pub l_t: CMat,
    /// `O_ij = ⟨r_j, r_i⟩⟨l_j, l_i⟩`.
    pub overlap: CMat,
    pub min_gap: f64,
    pub degenerate: bool,
}

impl LeftRight {
    pub fn n(&self) -> usize {
        self.mus.len()
    }

    pub fn left(&self, i: usize) -> Vec<c64> {
        (0..self.n()).map(|a| self.l_t[(i, a)]).collect()
    }

    pub fn right(&self, i: usize) -> Vec<c64> {
        (0..self.n()).map(|a| self.r[(a, i)]).collect()
    }

    pub fn biorthogonality_defect(&self) -> f64 {
        let p = &self.l_t * &self.r;
        let mut d = 0.0f64;
        for i in 0..self.n() {
            for j in 0..self.n() {
                let delta = if i == j { 1.0 } else { 0.0 };
                d = d.max((p[(i, j)] - delta).norm());
            }
        }
        d
    }
}

pub fn left_right(y: &CMat) -> Result<LeftRight> {
    let n = y.nrows();
    let eig = y.eigen().map_err(|e| EthError::Invalid(format!("eigendecomposition failed: {e:?}")))?;
    let mus: Vec<c64> = eig.S().column_vector().iter().copied().collect();
    let r = eig.U().to_owned();
    let l_t = linalg::inverse(r.as_ref());
    let p = r.adjoint() * &r;
    let q = &l_t * l_t.adjoint();
    let overlap = Mat::from_fn(n, n, |i, j| p[(j, i)] * q[(i, j)]);
    let mut min_gap = f64::INFINITY;
    for i in 0..n {
        for j in 0..i {
            min_gap = min_gap.min((mus[i] - mus[j]).norm());
        }
    }
    Ok(LeftRight { mus, r, l_t, overlap, min_gap, degenerate: min_gap < DEGENERACY_GAP })
}

/// `κ(μ_i) = √O_ii`.
pub fn condition_number(lr: &LeftRight, i: usize) -> Result<f64> {
    if lr.degenerate {
        return Err(EthError::DegenerateSpectrum { gap: lr.min_gap });
    }
    Ok(lr.overlap[(i, i)].re.max(0.0).sqrt())
}

/// `|μ_i(Y + tE) − μ_i|/t` for the unit-norm rank-one `E = l̄_i r_i*/(‖l_i‖‖r_i‖)`,
/// which maximizes the first-order response.
pub fn condition_number_fd(y: &CMat, lr: &LeftRight, i: usize, t: f64) -> Result<f64> {
    let n = lr.n();
    let l = lr.left(i);
    let r = lr.right(i);
    let nl = l.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nr = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let e = Mat::from_fn(n, n, |a, b| l[a].conj() * r[b].conj() / (nl * nr));
    let yt = linalg::axpy(y.as_ref(), c64::new(t, 0.0), e.as_ref());
    let mus = yt.eigenvalues().map_err(|e| EthError::Invalid(format!("eigenvalues failed: {e:?}")))?;
    let nearest = mus
        .iter()
        .map(|&m| (m - lr.mus[i]).norm())
        .fold(f64::INFINITY, f64::min);
    Ok(nearest / t)
}

/// One draw with everything derived from it.
#[derive(Clone, Debug)]
pub struct SpectralSample {
    pub cfg: SampleConfig,
    pub x: CMat,
    /// `X + Λ`.
    pub y: CMat,
    pub chiral: ChiralSpectrum,
    pub lr: Option<LeftRight>,
}

impl SpectralSample {
    pub fn draw(cfg: &SampleConfig, def: &Deformation) -> Result<Self> {
        Self::build(cfg, def, false)
    }

    pub fn draw_with_eigenvectors(cfg: &SampleConfig, def: &Deformation) -> Result<Self> {
        Self::build(cfg, def, true)
    }

    fn build(cfg: &SampleConfig, def: &Deformation, left_right_data: bool) -> Result<Self> {
        if def.dim() != cfg.n {
            return Err(EthError::config("N", format!("deformation has dimension {}, sample {}", def.dim(), cfg.n)));
        }
        let x = sample_iid(cfg);
        Self::from_matrix(*cfg, x, def, left_right_data)
    }

    pub fn from_matrix(cfg: SampleConfig, x: CMat, def: &Deformation, left_right_data: bool) -> Result<Self> {
        let y = linalg::add(x.as_ref(), def.lambda().as_ref());
        let chiral = spectral_of(&y)?;
        let lr = if left_right_data { Some(left_right(&y)?) } else { None };
        Ok(SpectralSample { cfg, x, y, chiral, lr })
    }

    pub fn h(&self) -> CMat {
        linalg::chiral_block(self.y.as_ref())
    }

    pub fn resolvent(&self, w: c64) -> CMat {
        self.chiral.resolvent(w)
    }

    pub fn degenerate(&self) -> bool {
        self.chiral.degenerate || self.lr.as_ref().is_some_and(|l| l.degenerate)
    }
}

/// `(H − w)⁻¹` of an arbitrary Hermitian matrix through its eigendecomposition.
pub fn resolvent(h: &CMat, w: c64) -> Result<CMat> {
    let eig = h
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| EthError::Invalid(format!("eigendecomposition failed: {e:?}")))?;
    let n = h.nrows();
    let s = eig.S().column_vector();
    let u = eig.U();
    let scaled = Mat::from_fn(n, n, |a, k| u[(a, k)] / (c64::new(s[k].re, 0.0) - w));
    Ok(&scaled * u.adjoint())
}

/// Eigenvalue trajectories of `X(t) + Λ`.
#[derive(Clone, Debug)]
pub struct Trajectories {
    pub times: Vec<f64>,
    /// `mus[step][i]` follows eigenvalue `i` by continuity.
    pub mus: Vec<Vec<c64>>,
    pub max_cost: f64,
}

impl Trajectories {
    /// Mean over eigenvalues of `|μ_i(t) − μ_i(0)|²` restricted to `keep`.
    pub fn msd(&self, keep: impl Fn(c64) -> bool) -> Vec<f64> {
        let start = &self.mus[0];
        let idx: Vec<usize> = (0..start.len()).filter(|&i| keep(start[i])).collect();
        self.mus
            .iter()
            .map(|row| {
                if idx.is_empty() {
                    return 0.0;
                }
                idx.iter().map(|&i| (row[i] - start[i]).norm_sqr()).sum::<f64>() / idx.len() as f64
            })
            .collect()
    }
}

fn eigenvalues(y: &CMat) -> Result<Vec<c64>> {
    y.eigenvalues().map_err(|e| EthError::Invalid(format!("eigenvalues failed: {e:?}")))
}

/// Euler–Maruyama for `dX = dB/√N − X dt/2`, matching eigenvalues greedily between steps.
pub fn ou_flow(x0: &CMat, lambda: &CMat, dt: f64, t_end: f64, seed: u64) -> Result<Trajectories> {
    if !(dt > 0.0 && dt <= 1e-2) {
        return Err(EthError::config("dt", format!("time step must be in (0, 1e-2], got {dt}")));
    }
    if !(0.0..=1.0).contains(&t_end) {
        return Err(EthError::config("T", format!("horizon must be in [0, 1], got {t_end}")));
    }
    let n = x0.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = (t_end / dt).round() as usize;
    let mut x = x0.clone();
    let mut cur = eigenvalues(&linalg::add(x.as_ref(), lambda.as_ref()))?;
    let mut out = Trajectories { times: vec![0.0], mus: vec![cur.clone()], max_cost: 0.0 };
    let noise = (dt / n as f64).sqrt();
    let limit = 10.0 * dt.sqrt();
    for step in 1..=steps {
        for j in 0..n {
            for i in 0..n {
                let db = draw_entry(EntryDist::ComplexGaussian, &mut rng) * noise;
                x[(i, j)] = x[(i, j)] * (1.0 - dt / 2.0) + db;
            }
        }
        let next = eigenvalues(&linalg::add(x.as_ref(), lambda.as_ref()))?;
        let (matched, cost) = greedy_match(&cur, &next);
        if cost > limit {
            return Err(EthError::TrackingLoss { step, cost });
        }
        out.max_cost = out.max_cost.max(cost);
        cur = matched;
        out.times.push(step as f64 * dt);
        out.mus.push(cur.clone());
    }
    Ok(out)
}

/// Assigns to every previous eigenvalue the closest unused new one, closest pairs first.
/// Returns the reordered new eigenvalues and the largest displacement.
fn greedy_match(prev: &[c64], next: &[c64]) -> (Vec<c64>, f64) {
    let n = prev.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, p) in prev.iter().enumerate() {
        for (j, q) in next.iter().enumerate() {
            pairs.push(((p - q).norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = vec![c64::new(f64::NAN, 0.0); n];
    let mut used_prev = vec![false; n];
    let mut used_next = vec![false; n];
    let mut cost = 0.0f64;
    let mut left = n;
    for (d, i, j) in pairs {
        if used_prev[i] || used_next[j] {
            continue;
        }
        used_prev[i] = true;
        used_next[j] = true;
        out[i] = next[j];
        cost = cost.max(d);
        left -= 1;
        if left == 0 {
            break;
        }
    }
    (out, cost)
}

/// Text dump: a `# N dist seed stream` header, then one `re im` pair per line in row-major order.
pub fn write_dump(path: &Path, cfg: &SampleConfig, x: &CMat) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# N={} dist={} seed={} stream={}", cfg.n, cfg.dist, cfg.seed, cfg.stream)?;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            writeln!(f, "{:e} {:e}", x[(i, j)].re, x[(i, j)].im)?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<(SampleConfig, CMat)> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let header = lines.next().ok_or_else(|| EthError::Invalid("empty dump".into()))??;
    let field = |key: &str| -> Result<String> {
        header
            .split_whitespace()
            .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')).map(str::to_owned))
            .ok_or_else(|| EthError::Invalid(format!("dump header lacks {key}")))
    };
    let bad = |what: &str| EthError::Invalid(format!("malformed dump {what}"));
    let n: usize = field("N")?.parse().map_err(|_| bad("N"))?;
    let dist: EntryDist = field("dist")?.parse()?;
    let seed: u64 = field("seed")?.parse().map_err(|_| bad("seed"))?;
    let stream: u64 = field("stream")?.parse().map_err(|_| bad("stream"))?;
    let mut vals = Vec::with_capacity(n * n);
    for line in lines {
        let line = line?;
        let mut it = line.split_whitespace();
        let (Some(a), Some(b)) = (it.next(), it.next()) else { continue };
        let re: f64 = a.parse().map_err(|_| bad("entry"))?;
        let im: f64 = b.parse().map_err(|_| bad("entry"))?;
        vals.push(c64::new(re, im));
    }
    if vals.len() != n * n {
        return Err(EthError::Invalid(format!("dump has {} entries, expected {}", vals.len(), n * n)));
    }
    let x = Mat::from_fn(n, n, |i, j| vals[i * n + j]);
    Ok((SampleConfig { n, dist, seed, stream }, x))
}
