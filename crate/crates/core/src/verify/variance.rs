//! Fluctuations of `⟨GA⟩` split by direction: along `Im M`, along `E₋Im M`, and regular.

use super::{fit_loglog, map_trials, mix_seed, test_observable, Check, Fit, ScanConfig, ScanReport, MIN_TRIALS};
use crate::ensemble::{resolvent_coefficients, DiagonalTrace, SpectralSample};
use crate::error::Result;
use crate::linalg::{self, CMat, c64};
use crate::mde::{Deformation, MdeSolution, SpectralPoint};
use crate::stability::Regularizer;

/// An observable `[[U a U*, U b V*], [V c U*, V d V*]]` that is diagonal in the singular basis of `Λ`.
struct LambdaDiagonal {
    a: Vec<c64>,
    b: Vec<c64>,
    c: Vec<c64>,
    d: Vec<c64>,
}

impl LambdaDiagonal {
    /// `Im M(w)` (`sign = 1`) or `E₋Im M(w)` (`sign = −1`) from the coefficients of `M`.
    fn im_m(def: &Deformation, w: c64, m: c64, sign: f64) -> Self {
        let (f, g) = resolvent_coefficients(def.singular_values(), w + m);
        let im = |x: &[c64]| x.iter().map(|z| c64::new(z.im, 0.0)).collect::<Vec<_>>();
        let (fi, gi) = (im(&f), im(&g));
        let flip = |x: &[c64]| x.iter().map(|z| z * sign).collect::<Vec<_>>();
        LambdaDiagonal { c: flip(&gi), d: flip(&fi), a: fi, b: gi }
    }

    /// `⟨S T⟩` for another observable of the same form.
    fn pair_trace(&self, o: &LambdaDiagonal) -> c64 {
        let n = self.a.len();
        let mut s = linalg::CSum::default();
        for k in 0..n {
            s.add(self.a[k] * o.a[k] + self.b[k] * o.c[k] + self.c[k] * o.b[k] + self.d[k] * o.d[k]);
        }
        s.value() / (2 * n) as f64
    }

    /// `T E₋`.
    fn times_eminus(&self) -> LambdaDiagonal {
        let neg = |x: &[c64]| x.iter().map(|z| -z).collect::<Vec<_>>();
        LambdaDiagonal { a: self.a.clone(), b: neg(&self.b), c: self.c.clone(), d: neg(&self.d) }
    }

    /// `⟨M T⟩` at `z = w + m`.
    fn det_trace(&self, def: &Deformation, z: c64) -> c64 {
        let (f, g) = resolvent_coefficients(def.singular_values(), z);
        let n = f.len();
        let mut s = linalg::CSum::default();
        for k in 0..n {
            s.add(f[k] * (self.a[k] + self.d[k]) + g[k] * (self.b[k] + self.c[k]));
        }
        s.value() / (2 * n) as f64
    }

    /// `⟨G(w) T⟩` from the overlaps `P = U*u`, `Q = V*v` of the two singular bases.
    fn sample_trace(&self, p: &CMat, q: &CMat, sigma: &[f64], w: c64) -> c64 {
        let n = sigma.len();
        let (f, g) = resolvent_coefficients(sigma, w);
        let mut s = linalg::CSum::default();
        for j in 0..n {
            let mut diag = c64::new(0.0, 0.0);
            let mut off = c64::new(0.0, 0.0);
            for k in 0..n {
                let (pk, qk) = (p[(k, j)], q[(k, j)]);
                diag += self.a[k] * pk.norm_sqr() + self.d[k] * qk.norm_sqr();
                off += self.c[k] * qk.conj() * pk + self.b[k] * pk.conj() * qk;
            }
            s.add(f[j] * diag + g[j] * off);
        }
        s.value() / (2 * n) as f64
    }
}

/// Per-point deterministic data.
struct Point {
    e: f64,
    eta: f64,
    par: LambdaDiagonal,
    minus: LambdaDiagonal,
    /// `⟨M A∥⟩`, `⟨M A₋⟩`, `⟨M Å⟩` and the subtracted `cut₊c₊`.
    m_par: c64,
    m_minus: c64,
    m_reg: c64,
    sub_plus: c64,
    /// Predicted prefactors `|⟨Im M A∥⟩|²` and `|⟨Im M A₋E₋⟩|²`.
    coef_par: f64,
    coef_minus: f64,
}

/// Unbiased per-trial contributions `|x_t − x̄|²·T/(T−1)`, whose mean is the sample variance.
fn centered_squares(xs: &[c64]) -> Vec<f64> {
    let t = xs.len() as f64;
    let mean = xs.iter().sum::<c64>() / t;
    xs.iter().map(|x| (x - mean).norm_sqr() * t / (t - 1.0)).collect()
}

/// Least-squares slope of `log y` against `log η` for `y = 1/(η(|e|+η))` on the grid.
fn minus_target(etas: &[f64], e: f64) -> f64 {
    let y: Vec<f64> = etas.iter().map(|&h| 1.0 / (h * (e.abs() + h))).collect();
    fit_loglog(etas, &y)
}

/// Variances of `⟨GA⟩` for `A∥ = Im M`, `A₋ = E₋Im M` and a regularized `Å = Å^{w,w}`.
pub fn run_variance_decomposition(cfg: &ScanConfig) -> Result<ScanReport> {
    cfg.validate()?;
    cfg.require_trials(MIN_TRIALS)?;
    let mut rep = ScanReport::new("variance", cfg.trials);
    let band = 0.3;
    for &n in &cfg.n_list {
        let def = cfg.deformation_for(n)?;
        let a = test_observable(2 * n, mix_seed(cfg.master_seed, 11000 + n as u64));
        let etas = cfg.etas(n);
        let mut pts = Vec::new();
        for &e in &cfg.energies {
            for &eta in &etas {
                let w = SpectralPoint::from_parts(e, eta);
                let sol = MdeSolution::new(&def, w)?;
                let par = LambdaDiagonal::im_m(&def, w.w, sol.m, 1.0);
                let minus = LambdaDiagonal::im_m(&def, w.w, sol.m, -1.0);
                let z = w.w + sol.m;
                let (m_par, m_minus) = (par.det_trace(&def, z), minus.det_trace(&def, z));
                let reg = Regularizer::new(&def, w, w, cfg.delta)?.apply(&a);
                let m_reg = linalg::tr_avg_prod(sol.mat.as_ref(), reg.a_reg.as_ref());
                let sub_plus = reg.coeff_plus * reg.cut_plus;
                let coef_par = par.pair_trace(&par).norm_sqr();
                let coef_minus = par.pair_trace(&minus.times_eminus()).norm_sqr();
                pts.push(Point { e, eta, par, minus, m_par, m_minus, m_reg, sub_plus, coef_par, coef_minus });
            }
        }
        let (rows, excluded) = map_trials(cfg.workers, cfg.trials, |t| {
            let s = SpectralSample::draw(&cfg.sample(n, t), &def)?;
            if s.degenerate() {
                return Ok(None);
            }
            let p = def.u().adjoint() * &s.chiral.u;
            let q = def.v().adjoint() * &s.chiral.v;
            let ga = DiagonalTrace::for_sample(&s.chiral, &a);
            let ones = vec![c64::new(1.0, 0.0); n];
            let zeros = vec![c64::new(0.0, 0.0); n];
            let id = LambdaDiagonal { a: ones.clone(), b: zeros.clone(), c: zeros, d: ones };
            let mut out = Vec::with_capacity(3 * pts.len());
            for pt in &pts {
                let w = c64::new(pt.e, pt.eta);
                let g = id.sample_trace(&p, &q, &s.chiral.sigma, w);
                out.push(pt.par.sample_trace(&p, &q, &s.chiral.sigma, w) - pt.m_par);
                out.push(pt.minus.sample_trace(&p, &q, &s.chiral.sigma, w) - pt.m_minus);
                // ⟨GE₋⟩ = 0, so only the E₊ subtraction survives
                out.push(ga.eval(w) - pt.sub_plus * g - pt.m_reg);
            }
            Ok(Some(out))
        })?;
        rep.excluded_samples += excluded;
        rep.total_samples += cfg.trials;
        let nf = n as f64;
        let ids: Vec<usize> = rows.iter().map(|(t, _)| *t).collect();
        for (k, pt) in pts.iter().enumerate() {
            let mut var = [0.0f64; 3];
            for (slot, name) in ["var_par", "var_minus", "var_reg"].into_iter().enumerate() {
                let xs: Vec<c64> = rows.iter().map(|(_, v)| v[3 * k + slot]).collect();
                let g = rep.record(name, n, pt.eta, pt.e, &ids, &centered_squares(&xs), None);
                var[slot] = g.stats.mean;
            }
            rep.check(Check::at_most(
                format!("var(Å)·N²η N={n} eta={:.4} e={}", pt.eta, pt.e),
                var[2] * nf * nf * pt.eta,
                nf.powf(0.2),
            ));
            if pt.e == 0.0 {
                rep.check(Check::at_most(
                    format!("var(Å)/var(A∥) N={n} eta={:.4}", pt.eta),
                    var[2] / var[0],
                    3.0 * pt.eta * nf.powf(0.1),
                ));
            }
        }
        for &e in &cfg.energies {
            // variances divided by their predicted prefactors
            let series = |rep: &ScanReport, name: &str, coef: fn(&Point) -> f64| -> (Vec<f64>, Vec<f64>) {
                rep.series(name)
                    .filter(|g| g.n == n && g.e == e)
                    .map(|g| {
                        let pt = pts.iter().find(|p| p.e == g.e && p.eta == g.eta).unwrap();
                        (g.eta, g.stats.mean / coef(pt))
                    })
                    .unzip()
            };
            let (x, y) = series(&rep, "var_par", |p| p.coef_par);
            rep.fit(Fit::new(format!("var(A∥) eta-slope N={n} e={e}"), fit_loglog(&x, &y), -2.0, -2.0 - band, -2.0 + band));
            let (x, y) = series(&rep, "var_minus", |p| p.coef_minus);
            let target = minus_target(&x, e);
            rep.fit(Fit::new(
                format!("var(A₋) eta-slope N={n} e={e}"),
                fit_loglog(&x, &y),
                target,
                target - band,
                target + band,
            ));
        }
    }
    Ok(rep.finish())
}
