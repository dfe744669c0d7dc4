//! Acceptance criteria 1–12, one PASS/FAIL line each.
//!
//! Lines go straight to the stderr handle so they show up without `--nocapture`.

use std::io::Write;
use std::time::Instant;

use ethlab::verify::{self, IdentityOptions, ScanConfig, ScanReport};

const MDE_RESIDUAL_TOL: f64 = 1e-10;
const RECURSION_TOL: f64 = 1e-8;
const RECURSION_SPECS: usize = 50;
const ORACLE_TRIALS: usize = 2000;
const ORACLE_PAIRS: usize = 10;
const AV_SLOPE: (f64, f64) = (-1.25, -0.75);
const ISO_SLOPE: (f64, f64) = (-0.75, -0.25);
const WARD_TOL: f64 = 1e-10;
const OVERLAP_KAPPA: f64 = 0.216;
const DETERMINISM_TOL: f64 = 1e-14;
const TRIALS: usize = 50;
const N_LIST: [usize; 4] = [64, 128, 256, 512];

fn say(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn scan(deformation: &str) -> ScanConfig {
    ScanConfig { deformation: deformation.into(), n_list: N_LIST.to_vec(), trials: TRIALS, ..Default::default() }
}

fn summary(rep: &ScanReport) -> String {
    let f = rep.failures();
    if f.is_empty() {
        format!("{} fits, {} checks, {} grid points", rep.fits.len(), rep.checks.len(), rep.grid.len())
    } else {
        f.join("; ")
    }
}

fn fit_value(rep: &ScanReport, prefix: &str) -> Option<(f64, bool)> {
    rep.fits.iter().find(|f| f.name.starts_with(prefix)).map(|f| (f.value, f.pass))
}

fn identities() -> Outcome {
    let opts = IdentityOptions::default();
    let rep = verify::run_identity_suite(&opts).unwrap();
    let residual = rep
        .checks
        .iter()
        .filter(|c| c.name.contains("fixed-point residual"))
        .map(|c| c.value)
        .fold(0.0, f64::max);
    let pass = rep.pass && rep.total_samples >= 3 && residual <= MDE_RESIDUAL_TOL;
    Outcome {
        id: 1,
        title: "exact-identity suite on 3 deformations",
        pass,
        detail: format!("MDE residual {residual:.1e}; {}", summary(&rep)),
    }
}

fn recursion() -> Outcome {
    let (count, err) = verify::recursion_equivalence(0, RECURSION_SPECS).unwrap();
    Outcome {
        id: 2,
        title: "recursion equivalence",
        pass: count == RECURSION_SPECS && err <= RECURSION_TOL,
        detail: format!("{count} specs, max relative error {err:.1e}"),
    }
}

fn ginibre_oracle() -> Outcome {
    let cfg = ScanConfig {
        n_list: vec![64],
        eta_grid: Some(vec![2.0]),
        energies: vec![0.3],
        trials: ORACLE_TRIALS,
        pairs: ORACLE_PAIRS,
        ..Default::default()
    };
    let rep = verify::run_chain_oracle(&cfg).unwrap();
    let pairs = rep.checks.iter().filter(|c| c.name.starts_with("pair")).count();
    let worst = rep.checks.iter().filter(|c| c.name.starts_with("pair")).map(|c| c.value).fold(0.0, f64::max);
    Outcome {
        id: 3,
        title: "Ginibre two-resolvent oracle",
        pass: rep.pass && pairs == ORACLE_PAIRS,
        detail: format!("{pairs} pairs, worst {worst:.2} standard errors"),
    }
}

fn single_law(rep: &ScanReport) -> Outcome {
    let av = fit_value(rep, "err_av slope");
    let iso = fit_value(rep, "err_iso slope");
    let inside = |v: Option<(f64, bool)>, (lo, hi): (f64, f64)| v.is_some_and(|(x, _)| (lo..=hi).contains(&x));
    Outcome {
        id: 4,
        title: "single-resolvent local law slopes",
        pass: inside(av, AV_SLOPE) && inside(iso, ISO_SLOPE),
        detail: format!("av slope {:.3}, iso slope {:.3}; report: {}", av.unwrap().0, iso.unwrap().0, summary(rep)),
    }
}

fn sqrt_eta_rule(rep: &ScanReport) -> Outcome {
    let ratios: Vec<_> = rep.checks.iter().filter(|c| c.name.starts_with("err(Å)/err(E₊)")).collect();
    let worst = ratios.iter().map(|c| c.value / c.limit).fold(0.0, f64::max);
    Outcome {
        id: 5,
        title: "√η gain of regular observables",
        pass: !ratios.is_empty() && ratios.iter().all(|c| c.pass),
        detail: format!("{} grid points, worst ratio/limit {worst:.3}; report: {}", ratios.len(), summary(rep)),
    }
}

fn two_resolvent() -> Outcome {
    let rep = verify::run_two_resolvent(&scan("zero")).unwrap();
    let abs_ok = rep.series("abs").all(|g| g.within.is_some_and(|f| f >= 0.95));
    let ward = rep.checks.iter().find(|c| c.name.starts_with("singular pair")).unwrap();
    Outcome {
        id: 6,
        title: "two-resolvent regularity",
        pass: abs_ok && ward.pass && ward.limit <= WARD_TOL,
        detail: format!("Ward defect {:.1e}; report: {}", ward.value, summary(&rep)),
    }
}

fn from_report(id: usize, title: &'static str, rep: &ScanReport) -> Outcome {
    Outcome { id, title, pass: rep.pass, detail: summary(rep) }
}

fn singvec() -> Outcome {
    let general = verify::run_singvec(&scan("randdiag:7")).unwrap();
    let scalar = verify::run_singvec(&scan("shift:0.5,0")).unwrap();
    let reduction = scalar.checks.iter().find(|c| c.name.starts_with("scalar deformation"));
    Outcome {
        id: 8,
        title: "singular-vector thermalization",
        pass: general.pass && scalar.pass && reduction.is_some_and(|c| c.pass),
        detail: format!(
            "reduction to ⟨B⟩ {:.1e}; random diagonal: {}; scalar shift: {}",
            reduction.map_or(f64::NAN, |c| c.value),
            summary(&general),
            summary(&scalar)
        ),
    }
}

fn determinism() -> Outcome {
    let small = |deformation: &str, workers: usize| ScanConfig {
        deformation: deformation.into(),
        n_list: vec![32, 48],
        trials: 20,
        eta_points: 3,
        workers,
        energies: vec![0.0, 0.4],
        master_seed: 17,
        ..Default::default()
    };
    type Run = fn(&ScanConfig) -> ethlab::Result<ScanReport>;
    let runs: [(&str, Run); 5] = [
        ("single-law", verify::run_single_law),
        ("two-resolvent", verify::run_two_resolvent),
        ("eth", verify::run_eth),
        ("variance", verify::run_variance_decomposition),
        ("rigidity", verify::run_rigidity),
    ];
    let mut worst = 0.0f64;
    let mut same_shape = true;
    for (_, run) in runs {
        let a = run(&small("randdiag:3", 1)).unwrap();
        let b = run(&small("randdiag:3", 1)).unwrap();
        let c = run(&small("randdiag:3", 2)).unwrap();
        for other in [&b, &c] {
            same_shape &= a.rows.len() == other.rows.len() && a.grid.len() == other.grid.len();
            for (x, y) in a.rows.iter().zip(&other.rows) {
                same_shape &= x.trial == y.trial && x.series == y.series;
                worst = worst.max((x.statistic - y.statistic).abs());
            }
            for (x, y) in a.fits.iter().zip(&other.fits) {
                worst = worst.max((x.value - y.value).abs());
            }
        }
    }
    Outcome {
        id: 12,
        title: "determinism under re-runs and worker counts",
        pass: same_shape && worst <= DETERMINISM_TOL,
        detail: format!("max difference {worst:.1e} over 5 experiments"),
    }
}

#[test]
fn acceptance_criteria() {
    let start = Instant::now();
    let mut outcomes = Vec::new();
    let mut push = |o: Outcome| {
        say(&format!(
            "criterion {:>2} {} | {} | {} [{:.0}s]",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.title,
            o.detail,
            start.elapsed().as_secs_f64()
        ));
        outcomes.push((o.id, o.pass));
    };

    push(identities());
    push(recursion());
    push(ginibre_oracle());
    push(single_law(&verify::run_single_law(&scan("zero")).unwrap()));
    push(sqrt_eta_rule(&verify::run_regular_single_law(&scan("zero")).unwrap()));
    push(two_resolvent());
    push(from_report(7, "eigenstate thermalization", &verify::run_eth(&scan("shift:0.5,0")).unwrap()));
    push(singvec());
    let overlap = ScanConfig { kappa: OVERLAP_KAPPA, ..scan("zero") };
    push(from_report(9, "overlap lower bound", &verify::run_overlap(&overlap).unwrap()));
    push(from_report(10, "rigidity", &verify::run_rigidity(&scan("zero")).unwrap()));
    let variance = ScanConfig { energies: vec![0.0, 1.0], ..scan("randdiag:7") };
    push(from_report(11, "variance decomposition", &verify::run_variance_decomposition(&variance).unwrap()));
    push(determinism());

    let failed: Vec<usize> = outcomes.iter().filter(|(_, p)| !p).map(|(id, _)| *id).collect();
    say(&format!("acceptance: {}/{} criteria pass", outcomes.len() - failed.len(), outcomes.len()));
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
