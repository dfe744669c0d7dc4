//! Small dense helpers on top of `faer` for the 2N×2N block algebra.
//!
//! Normalized traces are written `⟨T⟩ = tr(T)/dim`. `E₊` is the identity and
//! `E₋ = diag(I_N, −I_N)`.

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, MatRef};

pub use faer::c64;

pub type CMat = Mat<c64>;

#[inline]
pub fn c(re: f64, im: f64) -> c64 {
    c64::new(re, im)
}

pub const I: c64 = c64 { re: 0.0, im: 1.0 };

pub fn eye(n: usize) -> CMat {
    Mat::identity(n, n)
}

/// `E₋` of size `n2 = 2N`.
pub fn e_minus(n2: usize) -> CMat {
    let half = n2 / 2;
    Mat::from_fn(n2, n2, |i, j| {
        if i != j {
            c64::new(0.0, 0.0)
        } else if i < half {
            c64::new(1.0, 0.0)
        } else {
            c64::new(-1.0, 0.0)
        }
    })
}

/// `E_σ` for `σ = ±1`.
pub fn e_sigma(n2: usize, sigma: i32) -> CMat {
    if sigma > 0 { eye(n2) } else { e_minus(n2) }
}

pub fn tr_avg(a: MatRef<'_, c64>) -> c64 {
    let n = a.nrows();
    let mut s = CSum::default();
    for i in 0..n {
        s.add(a[(i, i)]);
    }
    s.value() / n as f64
}

/// `⟨AB⟩` without forming the product.
pub fn tr_avg_prod(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> c64 {
    let n = a.nrows();
    let mut s = CSum::default();
    for i in 0..n {
        for k in 0..n {
            s.add(a[(i, k)] * b[(k, i)]);
        }
    }
    s.value() / n as f64
}

/// `⟨A E₋⟩`.
pub fn tr_avg_eminus(a: MatRef<'_, c64>) -> c64 {
    let n = a.nrows();
    let half = n / 2;
    let mut s = CSum::default();
    for i in 0..n {
        if i < half { s.add(a[(i, i)]) } else { s.add(-a[(i, i)]) }
    }
    s.value() / n as f64
}

/// `⟨A E_σ⟩`.
pub fn tr_avg_sigma(a: MatRef<'_, c64>, sigma: i32) -> c64 {
    if sigma > 0 { tr_avg(a) } else { tr_avg_eminus(a) }
}

/// `S[T] = ⟨T⟩E₊ − ⟨TE₋⟩E₋`, i.e. `diag(⟨T₂₂⟩_N, ⟨T₁₁⟩_N)`.
pub fn s_op(t: MatRef<'_, c64>) -> CMat {
    let p = tr_avg(t);
    let q = tr_avg_eminus(t);
    let n2 = t.nrows();
    let half = n2 / 2;
    Mat::from_fn(n2, n2, |i, j| {
        if i != j {
            c64::new(0.0, 0.0)
        } else if i < half {
            p - q
        } else {
            p + q
        }
    })
}

pub fn mul(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    a * b
}

pub fn mul3(a: MatRef<'_, c64>, b: MatRef<'_, c64>, c: MatRef<'_, c64>) -> CMat {
    let ab = a * b;
    &ab * c
}

pub fn adjoint(a: MatRef<'_, c64>) -> CMat {
    a.adjoint().to_owned()
}

pub fn scale(a: MatRef<'_, c64>, s: c64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

/// `a + s·b`.
pub fn axpy(a: MatRef<'_, c64>, s: c64, b: MatRef<'_, c64>) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] + s * b[(i, j)])
}

pub fn sub(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] - b[(i, j)])
}

pub fn add(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] + b[(i, j)])
}

/// `(A − A*)/(2i)`.
pub fn im_part(a: MatRef<'_, c64>) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        (a[(i, j)] - a[(j, i)].conj()) * c64::new(0.0, -0.5)
    })
}

/// `E₋A`: flips the sign of the lower block rows.
pub fn eminus_left(a: MatRef<'_, c64>) -> CMat {
    let half = a.nrows() / 2;
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| if i < half { a[(i, j)] } else { -a[(i, j)] })
}

/// `AE₋`: flips the sign of the right block columns.
pub fn eminus_right(a: MatRef<'_, c64>) -> CMat {
    let half = a.ncols() / 2;
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| if j < half { a[(i, j)] } else { -a[(i, j)] })
}

pub fn frob(a: MatRef<'_, c64>) -> f64 {
    a.norm_l2()
}

/// Largest singular value.
pub fn op_norm(a: MatRef<'_, c64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    match a.singular_values() {
        Ok(s) => s.first().copied().unwrap_or(0.0),
        Err(_) => f64::NAN,
    }
}

pub fn inverse(a: MatRef<'_, c64>) -> CMat {
    a.partial_piv_lu().inverse()
}

/// `[[a11, a12], [a21, a22]]`.
pub fn block(
    a11: MatRef<'_, c64>,
    a12: MatRef<'_, c64>,
    a21: MatRef<'_, c64>,
    a22: MatRef<'_, c64>,
) -> CMat {
    let n = a11.nrows();
    Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => a11[(i, j)],
        (true, false) => a12[(i, j - n)],
        (false, true) => a21[(i - n, j)],
        (false, false) => a22[(i - n, j - n)],
    })
}

/// Random Hermitian-ish test matrices and other helpers use this for
/// `[[0, Y], [Y*, 0]]`.
pub fn chiral_block(y: MatRef<'_, c64>) -> CMat {
    let n = y.nrows();
    Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, false) => y[(i, j - n)],
        (false, true) => y[(j, i - n)].conj(),
        _ => c64::new(0.0, 0.0),
    })
}

/// Neumaier-compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KSum {
    sum: f64,
    comp: f64,
}

impl KSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CSum {
    re: KSum,
    im: KSum,
}

impl CSum {
    pub fn add(&mut self, z: c64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    pub fn value(&self) -> c64 {
        c64::new(self.re.value(), self.im.value())
    }
}

pub fn ksum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = KSum::default();
    for x in xs {
        s.add(x);
    }
    s.value()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_slope(&lx, &ly)
}

pub fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mx = ksum(xs.iter().copied()) / n;
    let my = ksum(ys.iter().copied()) / n;
    let sxy = ksum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)));
    let sxx = ksum(xs.iter().map(|x| (x - mx) * (x - mx)));
    sxy / sxx
}
