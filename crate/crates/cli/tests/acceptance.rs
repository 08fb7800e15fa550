//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use netcal::sim::Layout;
use netcal_cli::commands::{self, Overrides};
use support::Check;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn netcal(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_netcal"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Rows of a CSV as strings, header dropped.
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

/// `simulate` + `calibrate` of the shipped two-sensor demo into `dir`.
fn two_sensor_run(dir: &Path) -> Result<(), String> {
    let cfg = configs().join("two_sensor.toml");
    let (cfg, dir) = (cfg.to_str().unwrap(), dir.to_str().unwrap());
    netcal(&["simulate", "--config", cfg, "--out", dir])?;
    netcal(&["calibrate", "--config", cfg, "--out", dir])
}

/// OPC weight rows: `(t, median, std_err)`.
fn opc_weights(dir: &Path) -> Vec<(f64, f64, f64)> {
    rows(&dir.join(commands::WEIGHT_SUMMARY_CSV))
        .iter()
        .filter(|r| r[0] == "1")
        .map(|r| (num(&r[1]), num(&r[2]), num(&r[3])))
        .collect()
}

fn criterion_1(dir: &Path) -> Check {
    let truth: Vec<(f64, f64)> = rows(&dir.join(commands::TRUTH_CSV))
        .iter()
        .filter(|r| r[0] == "1")
        .map(|r| (num(&r[1]), num(&r[3])))
        .collect();
    let colocated: Vec<(f64, f64, f64)> = opc_weights(dir)
        .into_iter()
        .filter(|&(t, _, _)| (-1.0..=0.0).contains(&t))
        .collect();
    if colocated.is_empty() {
        return Check::new(false, "no co-located weight rows");
    }
    let medians_ok = colocated.iter().all(|&(_, m, _)| (2.6..=3.4).contains(&m));
    let covered = colocated
        .iter()
        .filter(|&&(t, m, se)| {
            let w = truth.iter().find(|(tt, _)| *tt == t).map_or(f64::NAN, |x| x.1);
            (w - m).abs() <= 2.0 * se
        })
        .count();
    let frac = covered as f64 / colocated.len() as f64;
    let (lo, hi) = colocated
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, m, _)| (a.min(m), b.max(m)));
    Check::new(
        medians_ok && frac >= 0.9,
        format!(
            "OPC weight medians over t in [-1, 0] span [{lo:.3}, {hi:.3}] (want within [2.6, 3.4]); truth within 2 SE at {covered}/{} points ({:.0}%, want >= 90%)",
            colocated.len(),
            100.0 * frac
        ),
    )
}

fn criterion_2(dir: &Path) -> Check {
    let w = opc_weights(dir);
    let sd: Vec<f64> = [0.0, 2.0, 4.0, 6.0, 8.0]
        .iter()
        .map(|&t| w.iter().find(|r| r.0 == t).map_or(f64::NAN, |r| r.2))
        .collect();
    let mut inversions = 0;
    let mut small = true;
    for p in sd.windows(2) {
        if p[1] < p[0] {
            inversions += 1;
            small &= p[0] - p[1] <= 0.05 * p[0];
        }
    }
    let ratio = sd[4] / sd[0];
    Check::new(
        ratio >= 2.0 && inversions <= 1 && small,
        format!(
            "posterior SD at t = 0,2,4,6,8: {} ; SD(8)/SD(0) = {ratio:.2} (want >= 2), {inversions} inversion(s) (<= 1 allowed, each <= 5%)",
            sd.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion_3() -> Check {
    let run = || -> Result<Check, String> {
        let cfg = commands::resolve_config(Some(&configs().join("network.toml")), &Overrides::default())
            .map_err(|e| e.to_string())?;
        let scenario = cfg.scenario().map_err(|e| e.to_string())?;
        let Layout::Network(layout) = &scenario.layout else {
            return Err("network config has a different layout".into());
        };
        let data = commands::load_data(&cfg).map_err(|e| e.to_string())?;
        let cal = commands::calibrate(&cfg, &data).map_err(|e| e.to_string())?;
        let mut ok = cal.weights.len() == 6;
        let mut parts = Vec::new();
        for row in &cal.weights {
            let truth = layout.weights[row.sensor - 1];
            let b = &row.band;
            let inside = if row.sensor <= 4 {
                (b.q025..=b.q975).contains(&truth)
            } else {
                (truth - b.median).abs() <= 3.0 * b.std_err
            };
            ok &= inside;
            parts.push(format!(
                "s{} true {truth} median {:.3} 95% [{:.3}, {:.3}] sd {:.3}{}",
                row.sensor,
                b.median,
                b.q025,
                b.q975,
                b.std_err,
                if inside { "" } else { " MISS" }
            ));
        }
        Ok(Check::new(
            ok,
            format!("{} (sensors 1-4 in 95% CI, 5-6 within 3 SD)", parts.join("; ")),
        ))
    };
    run().unwrap_or_else(|e| Check::new(false, e))
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let normal = support::standard_normal_5d(9);
    let well = support::double_well_tv(10, 50_000);
    let secs = start.elapsed().as_secs_f64();
    let mut c = Check::all(vec![normal, well]);
    c.passed &= secs < 120.0;
    c.detail = format!("{}; runtime {secs:.3} s (want < 120 s)", c.detail);
    c
}

fn criterion_7(a: &Path, b: &Path) -> Check {
    let files = [
        commands::OBSERVATIONS_CSV,
        commands::TRUTH_CSV,
        commands::CHAINS_CSV,
        commands::WEIGHT_SUMMARY_CSV,
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            let x = std::fs::read(a.join(f));
            let y = std::fs::read(b.join(f));
            !matches!((x, y), (Ok(x), Ok(y)) if x == y)
        })
        .collect();
    Check::new(
        differing.is_empty(),
        if differing.is_empty() {
            format!("two two-sensor runs gave byte-identical {}", files.join(", "))
        } else {
            format!("outputs differ between identical runs: {}", differing.join(", "))
        },
    )
}

fn main() {
    let tmp = tempfile::TempDir::new().expect("temp dir");
    let (run_a, run_b) = (tmp.path().join("a"), tmp.path().join("b"));
    let demo = two_sensor_run(&run_a).and_then(|_| two_sensor_run(&run_b));

    let mut results: Vec<(&str, Check)> = Vec::new();
    match &demo {
        Ok(()) => {
            results.push(("1 two-sensor co-location weight", criterion_1(&run_a)));
            results.push(("2 uncertainty growth after departure", criterion_2(&run_a)));
        }
        Err(e) => {
            results.push(("1 two-sensor co-location weight", Check::new(false, e.clone())));
            results.push(("2 uncertainty growth after departure", Check::new(false, e.clone())));
        }
    }
    results.push(("3 network weight recovery", criterion_3()));
    results.push(("4 ML coregionalized fit", support::coreg_recovery(17)));
    results.push((
        "5 numerical-core oracles",
        Check::all(vec![
            support::gp_dense_oracle(20, 101),
            support::gradient_fd_oracle(10, 202),
            support::leapfrog_reversibility(303),
        ]),
    ));
    results.push(("6 HMC statistical correctness", criterion_6()));
    results.push((
        "7 determinism",
        match &demo {
            Ok(()) => criterion_7(&run_a, &run_b),
            Err(e) => Check::new(false, e.clone()),
        },
    ));

    let mut failed = 0;
    for (name, c) in &results {
        println!("{} criterion {name}: {}", if c.passed { "PASS" } else { "FAIL" }, c.detail);
        failed += usize::from(!c.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
