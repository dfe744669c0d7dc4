//! Local-law scans: one resolvent, one resolvent with a regular observable, two resolvents,
//! and the Monte Carlo oracle for the two-chain approximation.

use faer::Mat;

use super::{column, fit_loglog, map_trials, mix_seed, test_observable, Check, Fit, ScanConfig, ScanReport, MIN_TRIALS};
use crate::chains::{self, ChainSpec};
use crate::ensemble::{DiagonalTrace, SpectralSample};
use crate::error::Result;
use crate::linalg::{self, CMat, CSum, c64};
use crate::mde::{MdeSolution, SpectralPoint};
use crate::stability::Regularizer;

fn grid(cfg: &ScanConfig, n: usize) -> Vec<(f64, f64)> {
    let etas = cfg.etas(n);
    cfg.energies.iter().flat_map(|&e| etas.iter().map(move |&eta| (e, eta))).collect()
}

/// `(1/N) Σ_k f_k = ⟨G⟩` and `Σ_k f_k |U_{1k}|² = G_{11}` from the resolvent coefficients.
fn trace_and_corner(s: &SpectralSample, w: c64) -> (c64, c64) {
    let (f, _) = s.chiral.coefficients(w);
    let n = f.len();
    let mut tr = CSum::default();
    let mut corner = CSum::default();
    for k in 0..n {
        tr.add(f[k]);
        corner.add(f[k] * s.chiral.u[(0, k)].norm_sqr());
    }
    (tr.value() / n as f64, corner.value())
}

fn slope_fits(rep: &mut ScanReport, cfg: &ScanConfig, series: &str, target: f64, band: f64, x_of: impl Fn(usize, f64) -> f64) {
    for &e in &cfg.energies {
        let pts: Vec<(f64, f64)> = rep.series(series).filter(|g| g.e == e).map(|g| (x_of(g.n, g.eta), g.stats.mean)).collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        rep.fit(Fit::new(format!("{series} slope e={e}"), fit_loglog(&x, &y), target, target - band, target + band));
    }
}

/// Averaged `|⟨(G−M)E₊⟩|` and isotropic `|(G−M)₁₁|` errors over the grid.
pub fn run_single_law(cfg: &ScanConfig) -> Result<ScanReport> {
    cfg.validate()?;
    cfg.require_trials(MIN_TRIALS)?;
    let mut rep = ScanReport::new("single-law", cfg.trials);
    for &n in &cfg.n_list {
        let def = cfg.deformation_for(n)?;
        let pts = grid(cfg, n);
        let det: Vec<(c64, c64)> = pts
            .iter()
            .map(|&(e, eta)| MdeSolution::new(&def, SpectralPoint::from_parts(e, eta)).map(|s| (s.m, s.mat[(0, 0)])))
            .collect::<Result<_>>()?;
        let (rows, excluded) = map_trials(cfg.workers, cfg.trials, |t| {
            let s = SpectralSample::draw(&cfg.sample(n, t), &def)?;
            if s.degenerate() {
                return Ok(None);
            }
            let mut out = Vec::with_capacity(2 * pts.len());
            for (k, &(e, eta)) in pts.iter().enumerate() {
                let (av, iso) = trace_and_corner(&s, c64::new(e, eta));
                out.push((av - det[k].0).norm());
                out.push((iso - det[k].1).norm());
            }
            Ok(Some(out))
        })?;
        rep.excluded_samples += excluded;
        rep.total_samples += cfg.trials;
        let slack = (n as f64).powf(0.15);
        for (k, &(e, eta)) in pts.iter().enumerate() {
            let nf = n as f64;
            let (ids, av) = column(&rows, 2 * k);
            rep.record("err_av", n, eta, e, &ids, &av, Some(slack / (nf * eta)));
            let (ids, iso) = column(&rows, 2 * k + 1);
            rep.record("err_iso", n, eta, e, &ids, &iso, Some(slack / (nf * eta).sqrt()));
        }
    }
    slope_fits(&mut rep, cfg, "err_av", -1.0, 0.25, |n, eta| n as f64 * eta);
    slope_fits(&mut rep, cfg, "err_iso", -0.5, 0.25, |n, eta| n as f64 * eta);
    Ok(rep.finish())
}

/// `|⟨(G−M)Å⟩|` with `Å = Å^{w,w}` of a fixed Hermitian test matrix, paired with `|⟨(G−M)E₊⟩|`.
pub fn run_regular_single_law(cfg: &ScanConfig) -> Result<ScanReport> {
    cfg.validate()?;
    cfg.require_trials(MIN_TRIALS)?;
    let mut rep = ScanReport::new("regular-law", cfg.trials);
    for &n in &cfg.n_list {
        let def = cfg.deformation_for(n)?;
        let a = test_observable(2 * n, mix_seed(cfg.master_seed, 1000 + n as u64));
        let pts = grid(cfg, n);
        // subtracted coefficients and ⟨MÅ⟩, ⟨M⟩ per grid point
        let mut det = Vec::with_capacity(pts.len());
        for &(e, eta) in &pts {
            let w = SpectralPoint::from_parts(e, eta);
            let reg = Regularizer::new(&def, w, w, cfg.delta)?.apply(&a);
            let sol = MdeSolution::new(&def, w)?;
            let dp = reg.coeff_plus * reg.cut_plus;
            det.push((dp, linalg::tr_avg_prod(sol.mat.as_ref(), reg.a_reg.as_ref()), sol.m));
        }
        let (rows, excluded) = map_trials(cfg.workers, cfg.trials, |t| {
            let s = SpectralSample::draw(&cfg.sample(n, t), &def)?;
            if s.degenerate() {
                return Ok(None);
            }
            let ga = DiagonalTrace::for_sample(&s.chiral, &a);
            let mut out = Vec::with_capacity(2 * pts.len());
            for (k, &(e, eta)) in pts.iter().enumerate() {
                let w = c64::new(e, eta);
                let (g, _) = trace_and_corner(&s, w);
                let (dp, mreg, m) = det[k];
                // the E₋ part drops out since ⟨GE₋⟩ = 0 identically
                let greg = ga.eval(w) - dp * g;
                out.push((greg - mreg).norm());
                out.push((g - m).norm());
            }
            Ok(Some(out))
        })?;
        rep.excluded_samples += excluded;
        rep.total_samples += cfg.trials;
        let nf = n as f64;
        let slack = nf.powf(0.15);
        for (k, &(e, eta)) in pts.iter().enumerate() {
            let (ids, reg) = column(&rows, 2 * k);
            let greg = rep.record("err_reg", n, eta, e, &ids, &reg, Some(slack / (nf * eta.sqrt())));
            let (ids, plus) = column(&rows, 2 * k + 1);
            let gplus = rep.record("err_plus", n, eta, e, &ids, &plus, None);
            if e == 0.0 {
                let ratio = greg.stats.mean / gplus.stats.mean;
                rep.check(Check::at_most(
                    format!("err(Å)/err(E₊) N={n} eta={eta:.4}"),
                    ratio,
                    3.0 * eta.sqrt() * nf.powf(0.1),
                ));
            }
        }
        for &e in &cfg.energies {
            let (x, y): (Vec<f64>, Vec<f64>) =
                rep.series("err_reg").filter(|g| g.n == n && g.e == e).map(|g| (g.eta, g.stats.mean)).unzip();
            rep.fit(Fit::new(format!("err_reg eta-slope N={n} e={e}"), fit_loglog(&x, &y), -0.5, -0.7, -0.3));
        }
    }
    Ok(rep.finish())
}

/// Matrix in the eigenbasis, `X[(col(i), col(j))] = ⟨w_i, A w_j⟩`.
fn eigenbasis(s: &SpectralSample, a: &CMat) -> CMat {
    let o = s.chiral.block_overlaps(a);
    let n2 = 2 * s.chiral.n;
    Mat::from_fn(n2, n2, |r, c| o.get(s.chiral.index(r), s.chiral.index(c)))
}

/// `⟨G(w₁) Å₁ G(w₂) Å₂⟩` with `Å = A − d₊E₊ − d₋E₋` expressed in the eigenbasis.
#[allow(clippy::too_many_arguments)]
fn two_chain_trace(
    s: &SpectralSample,
    lam: &[f64],
    x1: &CMat,
    d1: (c64, c64),
    x2: &CMat,
    d2: (c64, c64),
    w1: c64,
    w2: c64,
) -> c64 {
    let n2 = lam.len();
    let r1: Vec<c64> = lam.iter().map(|&l| (c64::new(l, 0.0) - w1).inv()).collect();
    let r2: Vec<c64> = lam.iter().map(|&l| (c64::new(l, 0.0) - w2).inv()).collect();
    let partner: Vec<usize> = (0..n2).map(|c| s.chiral.col(-s.chiral.index(c))).collect();
    let entry = |x: &CMat, d: (c64, c64), i: usize, j: usize| {
        let mut v = x[(i, j)];
        if i == j {
            v -= d.0;
        }
        if partner[i] == j {
            v -= d.1;
        }
        v
    };
    let mut acc = CSum::default();
    for i in 0..n2 {
        for j in 0..n2 {
            acc.add(r1[i] * entry(x1, d1, i, j) * r2[j] * entry(x2, d2, j, i));
        }
    }
    acc.value() / n2 as f64
}

/// `⟨G₁Å₁G₂Å₂⟩` at `w₁ = e + iη`, `w₂ = w̄₁` with `Å₁ = Å₁^{w₁,w₂}`, `Å₂ = Å₂^{w₂,w₁}`.
pub fn run_two_resolvent(cfg: &ScanConfig) -> Result<ScanReport> {
    cfg.validate()?;
    cfg.require_trials(MIN_TRIALS)?;
    let mut rep = ScanReport::new("two-resolvent", cfg.trials);
    let mut ward_max = 0.0f64;
    for &n in &cfg.n_list {
        let def = cfg.deformation_for(n)?;
        let a1 = test_observable(2 * n, mix_seed(cfg.master_seed, 2000 + n as u64));
        let a2 = test_observable(2 * n, mix_seed(cfg.master_seed, 3000 + n as u64));
        let pts = grid(cfg, n);
        let mut det = Vec::with_capacity(pts.len());
        for &(e, eta) in &pts {
            let w1 = SpectralPoint::from_parts(e, eta);
            let w2 = w1.conj();
            let r1 = Regularizer::new(&def, w1, w2, cfg.delta)?.apply(&a1);
            let r2 = Regularizer::new(&def, w2, w1, cfg.delta)?.apply(&a2);
            let spec = ChainSpec::with_flags(vec![w1, w2], vec![r1.a_reg.clone()], vec![true])?;
            let m = chains::chain_m(&def, &spec)?;
            let value = linalg::tr_avg_prod(m.as_ref(), r2.a_reg.as_ref());
            let d1 = (r1.coeff_plus * r1.cut_plus, r1.coeff_minus * r1.cut_minus);
            let d2 = (r2.coeff_plus * r2.cut_plus, r2.coeff_minus * r2.cut_minus);
            det.push((d1, d2, value));
        }
        let (rows, excluded) = map_trials(cfg.workers, cfg.trials, |t| {
            let s = SpectralSample::draw(&cfg.sample(n, t), &def)?;
            if s.degenerate() {
                return Ok(None);
            }
            let lam = s.chiral.lambdas();
            let x1 = eigenbasis(&s, &a1);
            let x2 = eigenbasis(&s, &a2);
            let mut out = Vec::with_capacity(3 * pts.len());
            for (k, &(e, eta)) in pts.iter().enumerate() {
                let w1 = c64::new(e, eta);
                let (d1, d2, value) = det[k];
                let stat = two_chain_trace(&s, &lam, &x1, d1, &x2, d2, w1, w1.conj());
                out.push(stat.norm());
                out.push((stat - value).norm());
                // ⟨G(w)E₊G(w̄)E₊⟩ against ⟨Im G⟩/η
                let mut ward = CSum::default();
                let mut im = CSum::default();
                for &l in &lam {
                    let r = (c64::new(l, 0.0) - w1).inv();
                    ward.add(r * r.conj());
                    im.add(c64::new(r.im, 0.0));
                }
                let lhs = ward.value().re;
                let rhs = im.value().re / eta;
                out.push((lhs - rhs).abs() / rhs.abs());
            }
            Ok(Some(out))
        })?;
        rep.excluded_samples += excluded;
        rep.total_samples += cfg.trials;
        let nf = n as f64;
        let slack = nf.powf(0.2);
        for (k, &(e, eta)) in pts.iter().enumerate() {
            let (ids, v) = column(&rows, 3 * k);
            rep.record("abs", n, eta, e, &ids, &v, Some(slack));
            let (ids, v) = column(&rows, 3 * k + 1);
            rep.record("dev", n, eta, e, &ids, &v, Some(slack / (nf * eta).sqrt()));
            let (ids, v) = column(&rows, 3 * k + 2);
            let g = rep.record("ward", n, eta, e, &ids, &v, None);
            ward_max = ward_max.max(g.stats.max);
        }
    }
    rep.check(Check::at_most("singular pair Ward identity (relative)", ward_max, 1e-10));
    Ok(rep.finish())
}

/// Complex Gaussian `dim×dim` matrix with operator norm 1.
pub(crate) fn random_observable(dim: usize, seed: u64) -> CMat {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g: CMat = Mat::from_fn(dim, dim, |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        c64::new(re, im)
    });
    let norm = linalg::op_norm(g.as_ref());
    linalg::scale(g.as_ref(), c64::new(1.0 / norm, 0.0))
}

/// Monte Carlo means of `⟨G₁B₁G₂B₂⟩` against `⟨M(w₁,B₁,w₂)B₂⟩` for `cfg.pairs` random pairs,
/// at `w₁ = e₀ + iη`, `w₂ = e₁ − iη` with `η = eta_grid[0]`.
pub fn run_chain_oracle(cfg: &ScanConfig) -> Result<ScanReport> {
    cfg.validate()?;
    cfg.require_trials(MIN_TRIALS)?;
    let mut rep = ScanReport::new("chain-oracle", cfg.trials);
    let (spec_count, rec_err) = super::recursion_equivalence(cfg.master_seed, super::identities::RECURSION_SPECS)?;
    rep.check(Check::at_most(format!("recursion variants over {spec_count} specs (max relative error)"), rec_err, 1e-8));
    let n = cfg.n_list[0];
    let eta = cfg.etas(n)[0];
    let e0 = cfg.energies[0];
    let e1 = cfg.energies.get(1).copied().unwrap_or(-e0);
    let w1 = SpectralPoint::from_parts(e0, eta);
    let w2 = SpectralPoint::from_parts(e1, -eta);
    let def = cfg.deformation_for(n)?;
    let pairs: Vec<(CMat, CMat)> = (0..cfg.pairs)
        .map(|p| {
            let s = mix_seed(cfg.master_seed, 4000 + p as u64);
            (random_observable(2 * n, s), random_observable(2 * n, s ^ 0x5555))
        })
        .collect();
    let mut det = Vec::with_capacity(pairs.len());
    for (b1, b2) in &pairs {
        det.push(chains::two_chain_trace(&def, w1, b1, w2, b2)?);
    }
    let (rows, excluded) = map_trials(cfg.workers, cfg.trials, |t| {
        let s = SpectralSample::draw(&cfg.sample(n, t), &def)?;
        let g1 = s.resolvent(w1.w);
        let g2 = s.resolvent(w2.w);
        let mut out = Vec::with_capacity(2 * pairs.len());
        for (b1, b2) in &pairs {
            let x = &g1 * b1;
            let y = &g2 * b2;
            let v = linalg::tr_avg_prod(x.as_ref(), y.as_ref());
            out.push(v.re);
            out.push(v.im);
        }
        Ok(Some(out))
    })?;
    rep.excluded_samples += excluded;
    rep.total_samples += cfg.trials;
    for (p, d) in det.iter().enumerate() {
        let (ids, re) = column(&rows, 2 * p);
        let sre = rep.record(&format!("re_{p}"), n, eta, e0, &ids, &re, None);
        let (ids, im) = column(&rows, 2 * p + 1);
        let sim = rep.record(&format!("im_{p}"), n, eta, e0, &ids, &im, None);
        let se = (sre.stats.std_err().powi(2) + sim.stats.std_err().powi(2)).sqrt();
        let dev = (c64::new(sre.stats.mean, sim.stats.mean) - d).norm();
        rep.check(Check::at_most(format!("pair {p}: |MC mean − ⟨M(w₁,B₁,w₂)B₂⟩| in standard errors"), dev / se, 3.0));
    }
    Ok(rep.finish())
}
