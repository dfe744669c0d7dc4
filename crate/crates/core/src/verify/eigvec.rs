//! Eigenvector experiments: ETH for the Hermitization, singular-vector thermalization,
//! diagonal overlaps of the non-Hermitian eigenvectors, and rigidity.

use faer::Mat;

use super::{fit_loglog, map_trials, mix_seed, test_observable, Check, Fit, ScanConfig, ScanReport, PASS_FRACTION};
use crate::ensemble::{self, DiagonalTrace, SpectralSample};
use crate::error::{EthError, Result};
use crate::linalg::{self, CMat, c64};
use crate::mde::{Deformation, DensityProfile, QuantileTable};

const I2: c64 = c64 { re: 0.0, im: 2.0 };

/// Quantiles and the indices whose quantile lies in the κ-bulk at depth at least κ/4.
struct BulkIndices {
    profile: DensityProfile,
    quantiles: QuantileTable,
    idx: Vec<isize>,
}

fn bulk_indices(def: &Deformation, n: usize, kappa: f64) -> Result<BulkIndices> {
    let profile = DensityProfile::compute(def);
    let quantiles = profile.quantiles(n);
    let bulk = profile.bulk(kappa)?;
    let idx: Vec<isize> = quantiles.indices().filter(|&i| bulk.contains_with_margin(quantiles.get(i), kappa / 4.0)).collect();
    if idx.is_empty() {
        return Err(EthError::EmptyBulk { kappa });
    }
    Ok(BulkIndices { profile, quantiles, idx })
}

/// `⟨Im M T⟩` at `m` from the traces of `T` and `T*`.
struct ImTrace {
    t: DiagonalTrace,
    t_adj: DiagonalTrace,
}

impl ImTrace {
    fn new(def: &Deformation, t: &CMat) -> Self {
        ImTrace {
            t: DiagonalTrace::for_deformation(def, t),
            t_adj: DiagonalTrace::for_deformation(def, &t.adjoint().to_owned()),
        }
    }

    fn eval(&self, e: f64, m: c64) -> c64 {
        let z = c64::new(e, 0.0) + m;
        (self.t.eval(z) - self.t_adj.eval(z).conj()) / I2
    }
}

/// `(⟨Im M(γ)A⟩, ⟨Im M(γ)E₋A⟩)/⟨Im M(γ)⟩` for each `γ`.
pub fn eth_coefficients(def: &Deformation, profile: &DensityProfile, a: &CMat, gammas: &[f64]) -> Vec<(c64, c64)> {
    let n2 = a.nrows();
    let ema = linalg::eminus_left(a.as_ref());
    debug_assert_eq!(ema.nrows(), n2);
    let ta = ImTrace::new(def, a);
    let tm = ImTrace::new(def, &ema);
    gammas
        .iter()
        .map(|&g| {
            let m = profile.m_at(g);
            (ta.eval(g, m) / m.im, tm.eval(g, m) / m.im)
        })
        .collect()
}

/// `max_{i,j} |⟨w_i,Aw_j⟩ − δ_{ji}⟨Im M A⟩/⟨Im M⟩ − δ_{j,−i}⟨Im M E₋A⟩/⟨Im M⟩|` over bulk indices.
pub fn run_eth(cfg: &ScanConfig) -> Result<ScanReport> {
    cfg.validate()?;
    let mut rep = ScanReport::new("eth", cfg.trials);
    for &n in &cfg.n_list {
        let def = cfg.deformation_for(n)?;
        let a = test_observable(2 * n, mix_seed(cfg.master_seed, 5000 + n as u64));
        let bi = bulk_indices(&def, n, cfg.kappa)?;
        let gammas: Vec<f64> = bi.idx.iter().map(|&j| bi.quantiles.get(j)).collect();
        let coeff = eth_coefficients(&def, &bi.profile, &a, &gammas);
        // position of each index in `idx`, for the δ-terms
        let pos = |j: isize| bi.idx.iter().position(|&x| x == j);
        let anti: Vec<Option<usize>> = bi.idx.iter().map(|&i| pos(-i)).collect();
        let (rows, excluded) = map_trials(cfg.workers, cfg.trials, |t| {
            let s = SpectralSample::draw(&cfg.sample(n, t), &def)?;
            if s.degenerate() {
                return Ok(None);
            }
            let o = s.chiral.block_overlaps(&a);
            let mut d = 0.0f64;
            for (p, &i) in bi.idx.iter().enumerate() {
                for (q, &j) in bi.idx.iter().enumerate() {
                    let mut v = o.get(i, j);
                    if p == q {
                        v -= coeff[q].0;
                    }
                    if anti[p] == Some(q) {
                        v -= coeff[q].1;
                    }
                    d = d.max(v.norm());
                }
            }
            Ok(Some(vec![d]))
        })?;
        rep.excluded_samples += excluded;
        rep.total_samples += cfg.trials;
        let (ids, v) = super::column(&rows, 0);
        let nf = n as f64;
        rep.record("D", n, 0.0, 0.0, &ids, &v, Some(nf.powf(0.15) / nf.sqrt()));
    }
    if cfg.n_list.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = rep.series("D").map(|g| (g.n as f64, g.stats.mean)).unzip();
        rep.fit(Fit::new("mean D vs N slope", fit_loglog(&x, &y), -0.5, -0.65, -0.35));
    }
    Ok(rep.finish())
}

fn embed(b: &CMat, block: (usize, usize)) -> CMat {
    let n = b.nrows();
    Mat::from_fn(2 * n, 2 * n, |i, j| {
        if i / n == block.0 && j / n == block.1 { b[(i % n, j % n)] } else { c64::new(0.0, 0.0) }
    })
}

/// Traces against `Im M` of the three block embeddings of `B`, built once per `B`.
struct SingvecTraces([ImTrace; 3]);

impl SingvecTraces {
    fn new(def: &Deformation, b: &CMat) -> Self {
        SingvecTraces([(0, 0), (1, 1), (1, 0)].map(|blk| ImTrace::new(def, &embed(b, blk))))
    }

    // ⟨w_i, T w_i⟩ = ½⟨·,B·⟩ for the three embeddings, and ⟨Im M⟩ = Im m
    fn fractions(&self, profile: &DensityProfile, e: f64) -> [c64; 3] {
        let m = profile.m_at(e);
        [0, 1, 2].map(|k| self.0[k].eval(e, m) * 2.0 / m.im)
    }
}

/// Deterministic fractions `[uu, vv, uv]` at energy `e` read off the blocks of `Im M(e)`,
/// for `⟨u_i,Bu_i⟩`, `⟨v_i,Bv_i⟩` and `⟨v_i,Bu_i⟩`.
pub fn singvec_fractions(def: &Deformation, profile: &DensityProfile, b: &CMat, e: f64) -> [c64; 3] {
    SingvecTraces::new(def, b).fractions(profile, e)
}

/// The same fractions from the closed forms in `Λ`:
/// `⟨Im[a(ΛΛ*−a²)⁻¹]B⟩`, `⟨Im[a(Λ*Λ−a²)⁻¹]B⟩`, `⟨Λ Im[(Λ*Λ−a²)⁻¹]B⟩`, each over `π ρ`.
pub fn singvec_fractions_direct(def: &Deformation, profile: &DensityProfile, b: &CMat, e: f64) -> [c64; 3] {
    let n = def.dim();
    let m = profile.m_at(e);
    let a = c64::new(e, 0.0) + m;
    let lam = def.lambda();
    let shifted_inv = |g: CMat| {
        let s = Mat::from_fn(n, n, |i, j| if i == j { g[(i, j)] - a * a } else { g[(i, j)] });
        linalg::inverse(s.as_ref())
    };
    let r_left = shifted_inv(lam * lam.adjoint());
    let r_right = shifted_inv(lam.adjoint() * lam);
    let uu = linalg::im_part(linalg::scale(r_left.as_ref(), a).as_ref());
    let vv = linalg::im_part(linalg::scale(r_right.as_ref(), a).as_ref());
    let uv = lam * linalg::im_part(r_right.as_ref());
    let frac = |k: &CMat| linalg::tr_avg_prod(k.as_ref(), b.as_ref()) / m.im;
    [frac(&uu), frac(&vv), frac(&uv)]
}

fn scalar_shift(def: &Deformation) -> Option<c64> {
    let l = def.lambda();
    let z = l[(0, 0)];
    (def.is_diagonal() && (0..def.dim()).all(|i| l[(i, i)] == z)).then_some(z)
}

/// Deviations of `⟨u_i,Bu_j⟩`, `⟨v_i,Bv_j⟩`, `⟨v_i,Bu_j⟩` over positive bulk indices.
pub fn run_singvec(cfg: &ScanConfig) -> Result<ScanReport> {
    cfg.validate()?;
    let mut rep = ScanReport::new("singvec", cfg.trials);
    let mut closed_form = 0.0f64;
    let mut reduction: Option<f64> = None;
    for &n in &cfg.n_list {
        let def = cfg.deformation_for(n)?;
        let b = test_observable(n, mix_seed(cfg.master_seed, 6000 + n as u64));
        let bi = bulk_indices(&def, n, cfg.kappa)?;
        let idx: Vec<usize> = bi.idx.iter().filter(|&&i| i > 0).map(|&i| i as usize - 1).collect();
        let traces = SingvecTraces::new(&def, &b);
        let fr: Vec<[c64; 3]> = idx.iter().map(|&k| traces.fractions(&bi.profile, bi.quantiles.get(k as isize + 1))).collect();

        let mid = bi.quantiles.get(idx[idx.len() / 2] as isize + 1);
        let direct = singvec_fractions_direct(&def, &bi.profile, &b, mid);
        let fast = traces.fractions(&bi.profile, mid);
        for k in 0..3 {
            closed_form = closed_form.max((direct[k] - fast[k]).norm());
        }
        if scalar_shift(&def).is_some() {
            let tr = linalg::tr_avg(b.as_ref());
            let r = fr.iter().flat_map(|f| [(f[0] - tr).norm(), (f[1] - tr).norm()]).fold(0.0, f64::max);
            reduction = Some(reduction.unwrap_or(0.0).max(r));
        }

        let (rows, excluded) = map_trials(cfg.workers, cfg.trials, |t| {
            let s = SpectralSample::draw(&cfg.sample(n, t), &def)?;
            if s.degenerate() {
                return Ok(None);
            }
            let (u, v) = (&s.chiral.u, &s.chiral.v);
            let uu = u.adjoint() * &b * u;
            let vv = v.adjoint() * &b * v;
            let vu = v.adjoint() * &b * u;
            let mut dev = [0.0f64; 3];
            for (p, &k) in idx.iter().enumerate() {
                for (q, &l) in idx.iter().enumerate() {
                    for (slot, x) in [&uu, &vv, &vu].into_iter().enumerate() {
                        let mut val = x[(k, l)];
                        if p == q {
                            val -= fr[q][slot];
                        }
                        dev[slot] = dev[slot].max(val.norm());
                    }
                }
            }
            Ok(Some(dev.to_vec()))
        })?;
        rep.excluded_samples += excluded;
        rep.total_samples += cfg.trials;
        let nf = n as f64;
        for (slot, name) in ["uu", "vv", "uv"].into_iter().enumerate() {
            let (ids, v) = super::column(&rows, slot);
            rep.record(name, n, 0.0, 0.0, &ids, &v, Some(nf.powf(0.15) / nf.sqrt()));
        }
    }
    rep.check(Check::at_most("closed-form fractions vs Im M blocks", closed_form, 1e-8));
    if let Some(r) = reduction {
        rep.check(Check::at_most("scalar deformation: uu/vv fractions equal ⟨B⟩", r, 1e-8));
    }
    Ok(rep.finish())
}

/// `(1/N) Σ 1/(ν_k(Λ−μ)² + κ^{2/3}) ≥ 1`.
pub fn in_overlap_bulk(def: &Deformation, mu: c64, kappa: f64) -> bool {
    let s = def.shifted_singular_values(mu);
    let k23 = kappa.powf(2.0 / 3.0);
    let sum = linalg::ksum(s.iter().map(|&x| 1.0 / (x * x + k23)));
    sum / s.len() as f64 >= 1.0
}

struct OverlapTrial {
    min: f64,
    median: f64,
    fd: Option<f64>,
}

/// `min_{bulk i} O_ii/N` per sample, the growth of the median, and the condition-number check.
pub fn run_overlap(cfg: &ScanConfig) -> Result<ScanReport> {
    cfg.validate()?;
    let mut rep = ScanReport::new("overlap", cfg.trials);
    let mut fd_worst = 0.0f64;
    let mut medians = Vec::new();
    for &n in &cfg.n_list {
        let def = cfg.deformation_for(n)?;
        let (trials, excluded) = map_trials(cfg.workers, cfg.trials, |t| {
            let s = SpectralSample::draw_with_eigenvectors(&cfg.sample(n, t), &def)?;
            let lr = s.lr.as_ref().unwrap();
            if lr.degenerate {
                return Ok(None);
            }
            let bulk: Vec<usize> = (0..n).filter(|&i| in_overlap_bulk(&def, lr.mus[i], cfg.kappa)).collect();
            if bulk.is_empty() {
                return Ok(None);
            }
            let mut o: Vec<f64> = bulk.iter().map(|&i| lr.overlap[(i, i)].re / n as f64).collect();
            o.sort_by(f64::total_cmp);
            let fd = if t == 0 {
                let mut by_modulus = bulk.clone();
                by_modulus.sort_by(|&a, &b| lr.mus[a].norm().total_cmp(&lr.mus[b].norm()));
                let mut worst = 0.0f64;
                for &i in by_modulus.iter().take(3) {
                    let k = ensemble::condition_number(lr, i)?;
                    let f = ensemble::condition_number_fd(&s.y, lr, i, 1e-6)?;
                    worst = worst.max((f / k - 1.0).abs());
                }
                Some(worst)
            } else {
                None
            };
            Ok(Some(OverlapTrial { min: o[0], median: o[o.len() / 2] * n as f64, fd }))
        })?;
        rep.excluded_samples += excluded;
        rep.total_samples += cfg.trials;
        let ids: Vec<usize> = trials.iter().map(|(t, _)| *t).collect();
        let mins: Vec<f64> = trials.iter().map(|(_, o)| o.min).collect();
        let meds: Vec<f64> = trials.iter().map(|(_, o)| o.median).collect();
        let floor = 0.05 * (n as f64).powf(-0.1);
        rep.record("min_overlap", n, 0.0, 0.0, &ids, &mins, None);
        let g = rep.record("median_overlap", n, 0.0, 0.0, &ids, &meds, None);
        medians.push((n as f64, g.stats.mean));
        let frac = mins.iter().filter(|&&m| m >= floor).count() as f64 / mins.len().max(1) as f64;
        rep.check(Check::at_least(format!("N={n}: fraction of samples with min bulk O_ii/N ≥ {floor:.4}"), frac, PASS_FRACTION));
        for (_, o) in &trials {
            if let Some(f) = o.fd {
                fd_worst = fd_worst.max(f);
            }
        }
    }
    if medians.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = medians.into_iter().unzip();
        rep.fit(Fit::new("median O_ii vs N slope", fit_loglog(&x, &y), 1.0, 0.8, 1.2));
    }
    rep.check(Check::at_most("condition number vs finite difference (relative)", fd_worst, 0.05));
    Ok(rep.finish())
}

/// `max_{bulk i} |λ_i − γ_i|` per sample against `10 log N / N`.
pub fn run_rigidity(cfg: &ScanConfig) -> Result<ScanReport> {
    cfg.validate()?;
    let mut rep = ScanReport::new("rigidity", cfg.trials);
    let mut asym = 0.0f64;
    let mut estimator = 0.0f64;
    for &n in &cfg.n_list {
        let def = cfg.deformation_for(n)?;
        let bi = bulk_indices(&def, n, cfg.kappa)?;
        for &i in bi.idx.iter().filter(|&&i| i > 0) {
            let g = bi.quantiles.get(i);
            let t = (i as usize + n) as f64 / (2 * n) as f64;
            let other = bi.profile.quantile_from_table(t);
            let allowed = 2.0 / (n as f64 * bi.profile.rho_at(g));
            estimator = estimator.max((other - g).abs() / allowed);
        }
        let (rows, excluded) = map_trials(cfg.workers, cfg.trials, |t| {
            let s = SpectralSample::draw(&cfg.sample(n, t), &def)?;
            let mut worst = 0.0f64;
            let mut sym = 0.0f64;
            for &i in &bi.idx {
                let d = (s.chiral.lambda(i) - bi.quantiles.get(i)).abs();
                worst = worst.max(d);
                let mirror = (s.chiral.lambda(-i) - bi.quantiles.get(-i)).abs();
                sym = sym.max((d - mirror).abs());
            }
            Ok(Some(vec![worst, sym]))
        })?;
        rep.excluded_samples += excluded;
        rep.total_samples += cfg.trials;
        let (ids, v) = super::column(&rows, 0);
        let nf = n as f64;
        rep.record("max_dev", n, 0.0, 0.0, &ids, &v, Some(10.0 * nf.ln() / nf));
        let (_, s) = super::column(&rows, 1);
        asym = asym.max(s.into_iter().fold(0.0, f64::max));
    }
    rep.check(Check::at_most("index symmetry |λ_i−γ_i| = |λ_−i−γ_−i|", asym, 1e-12));
    rep.check(Check::at_most("quantile estimators differ by at most 2/(Nρ) (ratio)", estimator, 1.0));
    Ok(rep.finish())
}
