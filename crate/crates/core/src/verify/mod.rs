//! Monte Carlo experiments against the deterministic predictions, and exact-identity suites.
//!
//! Stochastic domination `X ≺ Y` is checked as `X ≤ N^ξ·Y` in at least
//! [`PASS_FRACTION`] of the trials, with `ξ` fixed per experiment.

mod eigvec;
mod identities;
mod laws;
mod variance;

pub use eigvec::{
    eth_coefficients, in_overlap_bulk, run_eth, run_overlap, run_rigidity, run_singvec, singvec_fractions, singvec_fractions_direct,
};
pub use identities::{
    abs_resolvent_quadrature, contour_product, gauss_kronrod, recursion_equivalence, run_identity_suite,
    IdentityOptions, Rectangle,
};
pub use laws::{run_chain_oracle, run_regular_single_law, run_single_law, run_two_resolvent};
pub use variance::run_variance_decomposition;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{EntryDist, SampleConfig};
use crate::error::{EthError, Result};
use crate::linalg::{self, CMat, c64};
use crate::mde::Deformation;

/// Fraction of trials in which a domination bound must hold.
pub const PASS_FRACTION: f64 = 0.95;
pub const MIN_TRIALS: usize = 20;

/// Shared configuration of all scans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Deformation spec, see [`Deformation::from_spec`].
    pub deformation: String,
    pub n_list: Vec<usize>,
    /// Explicit η values; when absent a geometric grid from 1 down to `N^{−eta_min_exponent}`.
    pub eta_grid: Option<Vec<f64>>,
    pub eta_points: usize,
    pub eta_min_exponent: f64,
    pub energies: Vec<f64>,
    pub kappa: f64,
    pub delta: f64,
    pub dist: EntryDist,
    pub trials: usize,
    pub master_seed: u64,
    pub workers: usize,
    /// Number of random observable pairs (chain oracle) or chain specs (recursion check).
    pub pairs: usize,
    /// OU step and horizon.
    pub dt: f64,
    pub horizon: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            deformation: "zero".into(),
            n_list: vec![64, 128, 256, 512],
            eta_grid: None,
            eta_points: 8,
            eta_min_exponent: 0.8,
            energies: vec![0.0],
            kappa: 0.01,
            delta: 2.5,
            dist: EntryDist::ComplexGaussian,
            trials: 50,
            master_seed: 0,
            workers: 1,
            pairs: 10,
            dt: 1e-3,
            horizon: 0.05,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n < 2) {
            return Err(EthError::config("n_list", "needs at least one dimension, all ≥ 2"));
        }
        if let Some(g) = &self.eta_grid {
            if g.is_empty() || g.iter().any(|&e| !(e > 0.0 && e <= 10.0)) {
                return Err(EthError::config("eta_grid", "values must lie in (0, 10]"));
            }
        }
        if self.eta_points < 2 {
            return Err(EthError::config("eta_points", "need at least 2 points"));
        }
        if !(self.eta_min_exponent > 0.0 && self.eta_min_exponent < 1.0) {
            return Err(EthError::config("eta_min_exponent", "must lie in (0, 1)"));
        }
        if self.energies.is_empty() || self.energies.iter().any(|e| !e.is_finite()) {
            return Err(EthError::config("energies", "need at least one finite energy"));
        }
        for (field, v) in [("kappa", self.kappa), ("delta", self.delta), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EthError::config(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.horizon >= 0.0) {
            return Err(EthError::config("horizon", "must be nonnegative"));
        }
        if self.trials == 0 {
            return Err(EthError::config("trials", "must be positive"));
        }
        if self.workers == 0 {
            return Err(EthError::config("workers", "must be positive"));
        }
        Ok(())
    }

    pub fn etas(&self, n: usize) -> Vec<f64> {
        if let Some(g) = &self.eta_grid {
            return g.clone();
        }
        let lo = (n as f64).powf(-self.eta_min_exponent).ln();
        let k = self.eta_points;
        (0..k).map(|i| (lo * i as f64 / (k - 1) as f64).exp()).collect()
    }

    pub fn deformation_for(&self, n: usize) -> Result<Deformation> {
        Deformation::from_spec(&self.deformation, n)
    }

    fn require_trials(&self, need: usize) -> Result<()> {
        if self.trials < need {
            return Err(EthError::InsufficientTrials { got: self.trials, need });
        }
        Ok(())
    }

    /// Sample configuration of trial `trial` at dimension `n`.
    pub fn sample(&self, n: usize, trial: usize) -> SampleConfig {
        SampleConfig { n, dist: self.dist, seed: mix_seed(self.master_seed, n as u64), stream: trial as u64 }
    }
}

/// Seed derived from the master seed and a label.
pub fn mix_seed(master: u64, label: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Random Hermitian `dim×dim` matrix with operator norm 1, fixed by `seed`.
pub fn test_observable(dim: usize, seed: u64) -> CMat {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g: CMat = Mat::from_fn(dim, dim, |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        c64::new(re, im)
    });
    let h = Mat::from_fn(dim, dim, |i, j| (g[(i, j)] + g[(j, i)].conj()) * 0.5);
    let norm = linalg::op_norm(h.as_ref());
    linalg::scale(h.as_ref(), c64::new(1.0 / norm, 0.0))
}

/// Summary of one statistic over trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub max: f64,
    pub std: f64,
    pub count: usize,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Stats { mean: f64::NAN, max: f64::NAN, std: f64::NAN, count };
        }
        let mean = linalg::ksum(xs.iter().copied()) / count as f64;
        let var = if count > 1 {
            linalg::ksum(xs.iter().map(|x| (x - mean).powi(2))) / (count - 1) as f64
        } else {
            0.0
        };
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Stats { mean, max, std: var.sqrt(), count }
    }

    pub fn std_err(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridStat {
    pub series: String,
    pub n: usize,
    pub eta: f64,
    pub e: f64,
    pub stats: Stats,
    /// Domination bound and the fraction of trials within it, if the series has one.
    pub bound: Option<f64>,
    pub within: Option<f64>,
    /// Means of the even and odd trials agree within three combined standard errors.
    pub halves_agree: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

impl Fit {
    pub fn new(name: impl Into<String>, value: f64, target: f64, lo: f64, hi: f64) -> Self {
        Fit { name: name.into(), value, target, lo, hi, pass: value.is_finite() && lo <= value && value <= hi }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value ≤ limit`.
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check { name: name.into(), value, limit, pass: value <= limit }
    }

    /// Passes when `value ≥ limit`.
    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check { name: name.into(), value, limit, pass: value >= limit }
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub series: String,
    pub n: usize,
    pub eta: f64,
    pub e: f64,
    pub trial: usize,
    pub statistic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub experiment: String,
    pub grid: Vec<GridStat>,
    pub fitted_exponent: Option<f64>,
    pub fits: Vec<Fit>,
    pub checks: Vec<Check>,
    pub trials: usize,
    pub excluded_samples: usize,
    pub total_samples: usize,
    pub half_sample_disagreements: usize,
    pub pass: bool,
    #[serde(skip)]
    pub rows: Vec<Row>,
}

impl ScanReport {
    pub fn new(experiment: &str, trials: usize) -> Self {
        ScanReport {
            experiment: experiment.into(),
            grid: Vec::new(),
            fitted_exponent: None,
            fits: Vec::new(),
            checks: Vec::new(),
            trials,
            excluded_samples: 0,
            total_samples: 0,
            half_sample_disagreements: 0,
            pass: false,
            rows: Vec::new(),
        }
    }

    /// Records one series at one grid point; `values[t]` belongs to trial `trials[t]`.
    pub fn record(&mut self, series: &str, n: usize, eta: f64, e: f64, trials: &[usize], values: &[f64], bound: Option<f64>) -> GridStat {
        for (&t, &v) in trials.iter().zip(values) {
            self.rows.push(Row { series: series.into(), n, eta, e, trial: t, statistic: v });
        }
        let within = bound.map(|b| values.iter().filter(|&&v| v <= b).count() as f64 / values.len().max(1) as f64);
        let stats = Stats::of(values);
        let halves_agree = (values.len() >= 4).then(|| {
            let even: Vec<f64> = values.iter().step_by(2).copied().collect();
            let odd: Vec<f64> = values.iter().skip(1).step_by(2).copied().collect();
            let (a, b) = (Stats::of(&even), Stats::of(&odd));
            let se = (a.std_err().powi(2) + b.std_err().powi(2)).sqrt();
            (a.mean - b.mean).abs() <= 3.0 * se + 1e-300
        });
        if halves_agree == Some(false) {
            self.half_sample_disagreements += 1;
        }
        let g = GridStat { series: series.into(), n, eta, e, stats, bound, within, halves_agree };
        self.grid.push(g.clone());
        g
    }

    pub fn series(&self, name: &str) -> impl Iterator<Item = &GridStat> {
        let name = name.to_owned();
        self.grid.iter().filter(move |g| g.series == name)
    }

    pub fn fit(&mut self, fit: Fit) {
        if self.fitted_exponent.is_none() {
            self.fitted_exponent = Some(fit.value);
        }
        self.fits.push(fit);
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    /// Sets `pass` from the fits, checks and domination fractions.
    pub fn finish(mut self) -> Self {
        let bounds_ok = self.grid.iter().all(|g| g.within.is_none_or(|f| f >= PASS_FRACTION));
        self.pass = bounds_ok
            && self.fits.iter().all(|f| f.pass)
            && self.checks.iter().all(|c| c.pass)
            && self.fitted_exponent.is_none_or(f64::is_finite);
        self
    }

    /// Names of failing fits, checks and domination bounds.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for g in &self.grid {
            if let (Some(f), Some(b)) = (g.within, g.bound) {
                if f < PASS_FRACTION {
                    out.push(format!("{} N={} eta={:.4} e={}: {:.0}% within {:.3e}", g.series, g.n, g.eta, g.e, 100.0 * f, b));
                }
            }
        }
        out.extend(self.fits.iter().filter(|f| !f.pass).map(|f| format!("{} = {:.4} not in [{}, {}]", f.name, f.value, f.lo, f.hi)));
        out.extend(self.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {:.4e} vs {:.4e}", c.name, c.value, c.limit)));
        out
    }

    /// Series name to CSV text with columns `N,eta,e,trial,statistic`.
    pub fn csv(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = BTreeMap::new();
        for r in &self.rows {
            let s = out.entry(r.series.clone()).or_insert_with(|| "N,eta,e,trial,statistic\n".to_string());
            let _ = writeln!(s, "{},{:e},{:e},{},{:e}", r.n, r.eta, r.e, r.trial, r.statistic);
        }
        out
    }

    /// JSON with a `timestamp` field in seconds since the epoch.
    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        v["timestamp"] = serde_json::json!(now);
        Ok(serde_json::to_string_pretty(&v)?)
    }

    /// Writes `report.json` and one CSV per series into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        for (series, text) in self.csv() {
            let name = if series == self.experiment { format!("{series}.csv") } else { format!("{}_{series}.csv", self.experiment) };
            std::fs::write(dir.join(name), text)?;
        }
        let path = dir.join("report.json");
        std::fs::write(&path, self.to_json()?)?;
        Ok(path)
    }
}

/// Runs `f` for every trial on a pool of `workers` threads, keeping trial order.
/// `Ok(None)` marks an excluded sample.
pub fn map_trials<T, F>(workers: usize, trials: usize, f: F) -> Result<(Vec<(usize, T)>, usize)>
where
    T: Send,
    F: Fn(usize) -> Result<Option<T>> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EthError::Invalid(format!("worker pool: {e}")))?;
    let results: Vec<Result<Option<T>>> = pool.install(|| (0..trials).into_par_iter().map(&f).collect());
    let mut kept = Vec::with_capacity(trials);
    let mut excluded = 0;
    for (t, r) in results.into_iter().enumerate() {
        match r? {
            Some(v) => kept.push((t, v)),
            None => excluded += 1,
        }
    }
    Ok((kept, excluded))
}

/// `(trial ids, values)` of series `k` of per-trial vectors.
pub(crate) fn column(rows: &[(usize, Vec<f64>)], k: usize) -> (Vec<usize>, Vec<f64>) {
    (rows.iter().map(|(t, _)| *t).collect(), rows.iter().map(|(_, v)| v[k]).collect())
}

/// Log-log slope of `y` against `x`, ignoring nonpositive values.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (*a, *b)).unzip();
    if xs.len() < 2 {
        return f64::NAN;
    }
    linalg::loglog_slope(&xs, &ys)
}

/// Hashes a config for per-experiment subdirectories.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let text = serde_json::to_string(cfg)?;
    let d = Sha256::digest(text.as_bytes());
    Ok(d.iter().take(6).map(|b| format!("{b:02x}")).collect())
}
