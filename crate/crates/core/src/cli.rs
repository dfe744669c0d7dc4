//! `ethlab run <config>`, `ethlab report <dir>` and `ethlab solve`.
//!
//! Exit codes: 0 when every pass flag is true, 2 when a contract failed, 1 on errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::ensemble;
use crate::error::{EthError, Result};
use crate::linalg::c64;
use crate::mde::{Deformation, DensityProfile, MdeSolution, SpectralPoint};
use crate::verify::{self, Check, IdentityOptions, ScanConfig, ScanReport};

/// Environment variable overriding `workers`.
pub const WORKERS_ENV: &str = "ETHLAB_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Solve,
    Density,
    Quantiles,
    SingleLaw,
    RegularLaw,
    TwoResolvent,
    Eth,
    Singvec,
    Overlap,
    Rigidity,
    Variance,
    Identities,
    OuFlow,
    ChainOracle,
}

impl Experiment {
    pub const ALL: [Experiment; 14] = [
        Experiment::Solve,
        Experiment::Density,
        Experiment::Quantiles,
        Experiment::SingleLaw,
        Experiment::RegularLaw,
        Experiment::TwoResolvent,
        Experiment::Eth,
        Experiment::Singvec,
        Experiment::Overlap,
        Experiment::Rigidity,
        Experiment::Variance,
        Experiment::Identities,
        Experiment::OuFlow,
        Experiment::ChainOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::Density => "density",
            Experiment::Quantiles => "quantiles",
            Experiment::SingleLaw => "single-law",
            Experiment::RegularLaw => "regular-law",
            Experiment::TwoResolvent => "two-resolvent",
            Experiment::Eth => "eth",
            Experiment::Singvec => "singvec",
            Experiment::Overlap => "overlap",
            Experiment::Rigidity => "rigidity",
            Experiment::Variance => "variance",
            Experiment::Identities => "identities",
            Experiment::OuFlow => "ou-flow",
            Experiment::ChainOracle => "chain-oracle",
        }
    }
}

impl FromStr for Experiment {
    type Err = EthError;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
            EthError::config("experiment", format!("unknown experiment `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// A run configuration: the experiment name, the output directory and the scan settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Only read by the `identities` experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentityOptions>,
    #[serde(flatten)]
    pub scan: ScanConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, scan: ScanConfig) -> Self {
        ExperimentConfig { experiment: experiment.name().into(), out_dir: default_out_dir(), identities: None, scan }
    }

    pub fn parse(text: &str) -> Result<Self> {
        // flattened structs ignore deny_unknown_fields, so unknown keys are caught here
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| EthError::config("config", e.to_string()))?;
        let known = serde_json::to_value(ExperimentConfig::new(Experiment::Solve, ScanConfig::default()))?;
        if let (Some(raw), Some(known)) = (raw.as_object(), known.as_object()) {
            if let Some(key) = raw.keys().find(|k| !known.contains_key(*k) && *k != "identities") {
                return Err(EthError::config(key.clone(), format!("unknown field `{key}`")));
            }
        }
        let cfg: ExperimentConfig = serde_json::from_value(raw).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("config")
                .to_string();
            EthError::config(field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn kind(&self) -> Result<Experiment> {
        self.experiment.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.kind()?;
        self.scan.validate()
    }

    /// Applies `ETHLAB_WORKERS` if set.
    pub fn with_env_workers(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            let w: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| EthError::config("workers", format!("{WORKERS_ENV}={v} is not a positive integer")))?;
            self.scan.workers = w;
        }
        Ok(self)
    }

    /// Output subdirectory `<experiment>-<hash>`; the hash ignores `workers` and `out_dir`.
    pub fn run_dir(&self) -> Result<PathBuf> {
        let mut key = self.clone();
        key.scan.workers = 1;
        key.out_dir = PathBuf::new();
        Ok(self.out_dir.join(format!("{}-{}", self.experiment, verify::config_hash(&key)?)))
    }
}

/// Outcome of one run: the report and extra files written next to it.
pub struct RunOutput {
    pub report: ScanReport,
    pub extra: Vec<(String, String)>,
}

pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let s = &cfg.scan;
    let plain = |report: ScanReport| RunOutput { report, extra: Vec::new() };
    Ok(match cfg.kind()? {
        Experiment::Solve => plain(run_solve(s)?),
        Experiment::Density => run_density(s)?,
        Experiment::Quantiles => run_quantiles(s)?,
        Experiment::SingleLaw => plain(verify::run_single_law(s)?),
        Experiment::RegularLaw => plain(verify::run_regular_single_law(s)?),
        Experiment::TwoResolvent => plain(verify::run_two_resolvent(s)?),
        Experiment::Eth => plain(verify::run_eth(s)?),
        Experiment::Singvec => plain(verify::run_singvec(s)?),
        Experiment::Overlap => plain(verify::run_overlap(s)?),
        Experiment::Rigidity => plain(verify::run_rigidity(s)?),
        Experiment::Variance => plain(verify::run_variance_decomposition(s)?),
        Experiment::Identities => {
            let opts = cfg.identities.clone().unwrap_or_else(|| IdentityOptions { seed: s.master_seed, ..Default::default() });
            plain(verify::run_identity_suite(&opts)?)
        }
        Experiment::OuFlow => plain(run_ou_flow(s)?),
        Experiment::ChainOracle => plain(verify::run_chain_oracle(s)?),
    })
}

/// Runs and writes `config.json`, `report.json`, the CSVs and any extra files into [`ExperimentConfig::run_dir`].
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<(PathBuf, ScanReport)> {
    let out = execute(cfg)?;
    let dir = cfg.run_dir()?;
    out.report.write(&dir)?;
    std::fs::write(dir.join("config.json"), cfg.to_json()?)?;
    for (name, text) in &out.extra {
        std::fs::write(dir.join(name), text)?;
    }
    Ok((dir, out.report))
}

/// `m(w)` and its fixed-point residual on the grid `n_list × energies × etas`.
fn run_solve(cfg: &ScanConfig) -> Result<ScanReport> {
    let mut rep = ScanReport::new("solve", 1);
    let mut worst = 0.0f64;
    for &n in &cfg.n_list {
        let def = cfg.deformation_for(n)?;
        for &e in &cfg.energies {
            for eta in cfg.etas(n) {
                let sol = MdeSolution::new(&def, SpectralPoint::from_parts(e, eta))?;
                rep.record("re_m", n, eta, e, &[0], &[sol.m.re], None);
                rep.record("im_m", n, eta, e, &[0], &[sol.m.im], None);
                worst = worst.max(sol.residual);
            }
        }
    }
    rep.check(Check::at_most("fixed-point residual", worst, 1e-12));
    Ok(rep.finish())
}

/// Density on the tabulation grid of the first `N`, with an explicit `e = 0` row.
fn run_density(cfg: &ScanConfig) -> Result<RunOutput> {
    let n = cfg.n_list[0];
    let def = cfg.deformation_for(n)?;
    let p = DensityProfile::compute(&def);
    let mut rows: Vec<(f64, f64)> = p.grid.iter().copied().zip(p.rho.iter().copied()).collect();
    if !p.grid.contains(&0.0) {
        rows.push((0.0, p.rho_at(0.0)));
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let mut csv = String::from("e,rho\n");
    for (x, r) in &rows {
        let _ = writeln!(csv, "{x:e},{r:e}");
    }
    let mut rep = ScanReport::new("density", 1);
    rep.total_samples = 0;
    rep.check(Check::at_most("|mass − 1|", (p.mass() - 1.0).abs(), 1e-6));
    let sym = p.grid.iter().map(|&x| (p.rho_at(x) - p.rho_at(-x)).abs()).fold(0.0, f64::max);
    rep.check(Check::at_most("max |ρ(e) − ρ(−e)|", sym, 1e-9));
    rep.check(Check::at_least("min ρ", p.rho.iter().copied().fold(f64::INFINITY, f64::min), 0.0));
    let bulk = p.bulk(cfg.kappa)?;
    rep.check(Check::at_least("κ-bulk components", bulk.len() as f64, 1.0));
    Ok(RunOutput { report: rep.finish(), extra: vec![("density.csv".into(), csv)] })
}

/// `γ_i` for every `N`, with the symmetry `γ_−i = −γ_i`.
fn run_quantiles(cfg: &ScanConfig) -> Result<RunOutput> {
    let mut rep = ScanReport::new("quantiles", 1);
    let mut csv = String::from("N,i,gamma\n");
    let mut sym = 0.0f64;
    for &n in &cfg.n_list {
        let def = cfg.deformation_for(n)?;
        let q = DensityProfile::compute(&def).quantiles(n);
        for i in q.indices() {
            let _ = writeln!(csv, "{n},{i},{:e}", q.get(i));
            sym = sym.max((q.get(i) + q.get(-i)).abs());
        }
    }
    rep.check(Check::at_most("max |γ_i + γ_−i|", sym, 1e-9));
    Ok(RunOutput { report: rep.finish(), extra: vec![("quantiles.csv".into(), csv)] })
}

/// Mean-square displacement of bulk eigenvalues along the OU flow; reported, not asserted.
/// The `eta` column of the CSV holds the time.
fn run_ou_flow(cfg: &ScanConfig) -> Result<ScanReport> {
    let mut rep = ScanReport::new("ou-flow", cfg.trials);
    let mut slopes = Vec::new();
    for &n in &cfg.n_list {
        let def = cfg.deformation_for(n)?;
        let (rows, excluded) = verify::map_trials(cfg.workers, cfg.trials, |t| {
            let sc = cfg.sample(n, t);
            let x0 = ensemble::sample_iid(&sc);
            let tr = ensemble::ou_flow(&x0, def.lambda(), cfg.dt, cfg.horizon, verify::mix_seed(sc.seed, 1 + t as u64))?;
            let msd = tr.msd(|mu| verify::in_overlap_bulk(&def, mu, cfg.kappa));
            Ok(Some((tr.times, msd)))
        })?;
        rep.excluded_samples += excluded;
        rep.total_samples += cfg.trials;
        let Some((_, (times, _))) = rows.first() else { continue };
        let ids: Vec<usize> = rows.iter().map(|(t, _)| *t).collect();
        let mut means = Vec::with_capacity(times.len());
        for (k, &time) in times.iter().enumerate() {
            let v: Vec<f64> = rows.iter().map(|(_, (_, m))| m[k]).collect();
            let g = rep.record("msd", n, time, 0.0, &ids, &v, None);
            means.push(g.stats.mean);
        }
        let slope = crate::linalg::linear_slope(times, &means);
        rep.record("msd_slope", n, 0.0, 0.0, &[0], &[slope], None);
        slopes.push(slope);
    }
    rep.fitted_exponent = slopes.last().copied();
    Ok(rep.finish())
}

#[derive(Parser, Debug)]
#[command(name = "ethlab", about = "MDE objects and Monte Carlo checks for deformed i.i.d. matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Summarize every report.json under a directory.
    Report { dir: PathBuf },
    /// Solve the MDE at one spectral parameter.
    Solve {
        #[arg(long)]
        deformation: String,
        /// `<re>,<im>`; `Im w = 0` gives the boundary value.
        #[arg(long, allow_hyphen_values = true)]
        w: String,
        #[arg(long, default_value_t = 64)]
        n: usize,
    },
}

fn parse_w(s: &str) -> Result<c64> {
    let bad = || EthError::config("w", format!("expected <re>,<im>, got `{s}`"));
    let (re, im) = s.split_once(',').ok_or_else(bad)?;
    Ok(c64::new(re.trim().parse().map_err(|_| bad())?, im.trim().parse().map_err(|_| bad())?))
}

fn load_reports(dir: &Path) -> Result<Vec<(PathBuf, serde_json::Value)>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for entry in entries.flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "report.json") {
                let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
                found.push((p, v));
            }
        }
    }
    if found.is_empty() {
        return Err(EthError::NoReports(dir.display().to_string()));
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(found)
}

/// Table of experiments with pass flags and fitted slopes against their targets.
/// Returns the text and whether every report passed.
pub fn report_table(dir: &Path) -> Result<(String, bool)> {
    let reports = load_reports(dir)?;
    let mut out = String::new();
    let mut all = true;
    for (path, v) in &reports {
        let pass = v["pass"].as_bool().unwrap_or(false);
        all &= pass;
        let name = v["experiment"].as_str().unwrap_or("?");
        let run = path.parent().and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(out, "{name:<14} {} {run}", if pass { "PASS" } else { "FAIL" });
        for f in v["fits"].as_array().into_iter().flatten() {
            let target = f["target"].as_f64().unwrap_or(f64::NAN);
            let band = (f["hi"].as_f64().unwrap_or(f64::NAN) - f["lo"].as_f64().unwrap_or(f64::NAN)) / 2.0;
            let _ = writeln!(
                out,
                "    slope {:+.3} (target {target:+.2}±{band:.2}) {} {}",
                f["value"].as_f64().unwrap_or(f64::NAN),
                if f["pass"].as_bool().unwrap_or(false) { "ok" } else { "FAIL" },
                f["name"].as_str().unwrap_or("")
            );
        }
        let failed: Vec<&str> = v["checks"]
            .as_array()
            .into_iter()
            .flatten()
            .filter(|c| c["pass"] == serde_json::Value::Bool(false))
            .filter_map(|c| c["name"].as_str())
            .collect();
        for c in failed {
            let _ = writeln!(out, "    failed check: {c}");
        }
    }
    Ok((out, all))
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?.with_env_workers()?;
            let (dir, rep) = run_and_write(&cfg)?;
            println!("{} {} -> {}", rep.experiment, if rep.pass { "PASS" } else { "FAIL" }, dir.display());
            for f in rep.failures() {
                println!("  {f}");
            }
            Ok(if rep.pass { 0 } else { 2 })
        }
        Command::Report { dir } => {
            let (text, all) = report_table(&dir)?;
            print!("{text}");
            Ok(if all { 0 } else { 2 })
        }
        Command::Solve { deformation, w, n } => {
            let def = Deformation::from_spec(&deformation, n)?;
            let w = parse_w(&w)?;
            let sol = MdeSolution::new(&def, SpectralPoint::new(w))?;
            println!("m = {:.12} {:+.12}i", sol.m.re, sol.m.im);
            println!("residual = {:e}", sol.residual);
            if w.im == 0.0 {
                println!("rho = {:.12}", sol.m.im.max(0.0) / std::f64::consts::PI);
            }
            Ok(0)
        }
    }
}

/// Entry point of the binary; returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
