//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;
use splitrec_core::dataset::generate_synthetic;
use splitrec_core::experiments::{
    alpha_sweep, attack_curve, id_collision_curve, ratio_curve, repetition_rate,
    scaling_curve, AlphaSweepParams, AttackParams, CostParams, ExperimentResult,
    IdCollisionParams, RatioParams, ScalingParams,
};
use splitrec_core::pipeline::run_pipeline;
use splitrec_core::protocol::server_aggregate;
use splitrec_core::recommender::{RecommenderKind, RecommenderSpec};
use splitrec_core::rng::{derive_seed, rng_from_seed, Stream};
use splitrec_core::simnet::{run_upload_phase, SimConfig};
use splitrec_core::split::SplitConfig;

const SEED: u64 = 1;
const COST_TRIALS: usize = 10;

type Verdict = Result<(bool, String), String>;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let verdict = f();
        let elapsed = start.elapsed();
        let (mut passed, mut detail) = match verdict {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if let Some(limit) = limit {
            if elapsed > limit {
                passed = false;
                detail.push_str(&format!("; over the {} s budget", limit.as_secs()));
            }
        }
        if !passed {
            self.failures += 1;
        }
        let tag = if passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{tag}] {name}: {detail} ({:.1} s)",
            elapsed.as_secs_f64()
        );
    }
}

fn checks_line(r: &ExperimentResult, names: &[&str]) -> (bool, String) {
    let picked: Vec<_> = r
        .checks
        .iter()
        .filter(|c| names.contains(&c.name.as_str()))
        .collect();
    assert_eq!(picked.len(), names.len(), "missing checks in {}", r.name);
    let passed = picked.iter().all(|c| c.passed);
    let detail = picked
        .iter()
        .map(|c| format!("{} {} (need {})", c.name, c.observed, c.expected))
        .collect::<Vec<_>>()
        .join("; ");
    (passed, detail)
}

fn round_trip() -> Verdict {
    let split = SplitConfig::new(2000, 50, 2, 50).map_err(|e| e.to_string())?;
    let data = generate_synthetic(1000, 2000, 50, derive_seed(SEED, Stream::Dataset, 0))
        .map_err(|e| e.to_string())?;
    let cfg = SimConfig::new(1000, split, 0.9, 7, SEED);
    let up = run_upload_phase(&cfg, &data, None).map_err(|e| e.to_string())?;
    let agg = server_aggregate(&up.server);
    let mut owners: HashMap<_, usize> = HashMap::new();
    for c in &up.clients {
        *owners.entry(c.vid.clone()).or_default() += 1;
    }
    let unique: Vec<_> = up
        .clients
        .iter()
        .zip(&data)
        .filter(|(c, _)| owners[&c.vid] == 1)
        .collect();
    let exact = unique
        .iter()
        .filter(|(c, truth)| agg.vectors.get(&c.vid) == Some(*truth))
        .count();
    Ok((
        exact == unique.len(),
        format!("{exact}/{} non-colliding vectors recovered exactly", unique.len()),
    ))
}

fn attack() -> Verdict {
    let r = attack_curve(&AttackParams {
        seed: SEED,
        ..AttackParams::default()
    })
    .map_err(|e| e.to_string())?;
    Ok(checks_line(&r, &["full_share_set_recovers", "partial_share_set_bounded"]))
}

fn ratio() -> Verdict {
    let r = ratio_curve(&RatioParams {
        seed: SEED,
        ..RatioParams::default()
    })
    .map_err(|e| e.to_string())?;
    Ok(checks_line(&r, &["partial_share_set_bounded"]))
}

// Birthday oracle: plain uniform draws over the 62-symbol alphabet.
fn birthday_oracle(n_user: usize, trials: usize) -> (f64, f64) {
    let mut rng = rng_from_seed(derive_seed(SEED, Stream::Experiment, 99));
    let rates: Vec<f64> = (0..trials)
        .map(|_| {
            let mut seen = vec![0u32; 62];
            for _ in 0..n_user {
                seen[rng.gen_range(0..62)] += 1;
            }
            let repeated: u32 = seen.iter().filter(|&&k| k > 1).map(|&k| k - 1).sum();
            repeated as f64 / n_user as f64
        })
        .collect();
    let m = rates.iter().sum::<f64>() / trials as f64;
    let var = rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (trials - 1) as f64;
    (m, var.sqrt())
}

fn id_collision() -> Verdict {
    let p = IdCollisionParams {
        lengths: vec![7],
        n_user: 31_831,
        trials: 5,
        seed: SEED,
    };
    let r = id_collision_curve(&p).map_err(|e| e.to_string())?;
    let at7: Vec<f64> = (0..5)
        .map(|t| repetition_rate(7, 31_831, derive_seed(SEED, Stream::Trial, t)))
        .collect();
    let row7 = r
        .rows
        .iter()
        .find(|row| row.x == 7.0)
        .ok_or("no row at length 7")?;
    let zero = row7.mean == 0.0 && at7.iter().all(|&x| x == 0.0);

    let seeds = 5;
    let observed: Vec<f64> = (0..seeds)
        .map(|t| repetition_rate(1, 1000, derive_seed(SEED, Stream::Trial, 100 + t)))
        .collect();
    let obs = observed.iter().sum::<f64>() / seeds as f64;
    let oracle_trials = 2000;
    let (m, sd) = birthday_oracle(1000, oracle_trials);
    let se = (sd * sd / seeds as f64 + sd * sd / oracle_trials as f64).sqrt();
    let close = (obs - m).abs() <= 3.0 * se;
    Ok((
        zero && close,
        format!(
            "length 7 rates {at7:?} (row mean {}); length 1 observed {obs:.5} vs oracle {m:.5}, \
             {:.2} standard errors",
            row7.mean,
            (obs - m).abs() / se
        ),
    ))
}

fn cost() -> CostParams {
    CostParams {
        trials: COST_TRIALS,
        seed: SEED,
        ..CostParams::default()
    }
}

fn sweep() -> Verdict {
    let r = alpha_sweep(&AlphaSweepParams {
        cost: cost(),
        ..AlphaSweepParams::default()
    })
    .map_err(|e| e.to_string())?;
    let (ok, detail) = checks_line(
        &r,
        &[
            "upload_increases_with_alpha",
            "download_decreases_with_alpha",
            "total_cost_minimum",
        ],
    );
    let skipped = r.summary["incomplete_runs"];
    Ok((ok, format!("{detail}; incomplete runs {skipped}")))
}

fn delivery() -> Verdict {
    let split = SplitConfig::new(2000, 50, 2, 50).map_err(|e| e.to_string())?;
    let spec = RecommenderSpec::new(RecommenderKind::Popularity, 10, 50).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    for s in 0..5u64 {
        let seed = derive_seed(SEED, Stream::Trial, 500 + s);
        let data = generate_synthetic(1000, 2000, 50, derive_seed(seed, Stream::Dataset, 0))
            .map_err(|e| e.to_string())?;
        let cfg = SimConfig::new(1000, split, 0.9, 7, seed);
        let r = run_pipeline(&cfg, &data, &spec, None).map_err(|e| e.to_string())?;
        let d = &r.delivery_fidelity;
        ok &= r.download.undelivered == 0 && d.is_exact();
        lines.push(format!(
            "{}/{} exact, {} undelivered",
            d.exact, d.expected, r.download.undelivered
        ));
    }
    Ok((ok, lines.join("; ")))
}

fn determinism(dir: &Path) -> Verdict {
    let bin = env!("CARGO_BIN_EXE_splitrec");
    let a = dir.join("a");
    let b = dir.join("b");
    let run = |args: Vec<&std::ffi::OsStr>| -> Result<(), String> {
        let o = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        if o.status.success() {
            Ok(())
        } else {
            Err(String::from_utf8_lossy(&o.stderr).into_owned())
        }
    };
    run(vec![
        "--out-dir".as_ref(), a.as_os_str(), "--seed".as_ref(), "7".as_ref(),
        "pipeline".as_ref(), "--synthetic".as_ref(), "200".as_ref(), "--log".as_ref(),
    ])?;
    let manifest = a.join("pipeline.manifest.json");
    run(vec![
        "--config".as_ref(), manifest.as_os_str(), "--out-dir".as_ref(), b.as_os_str(),
        "pipeline".as_ref(),
    ])?;
    let mut compared = 0;
    for entry in std::fs::read_dir(&a).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap();
            let left = std::fs::read(&path).map_err(|e| e.to_string())?;
            let right = std::fs::read(b.join(name)).map_err(|e| e.to_string())?;
            if left != right {
                return Ok((false, format!("{} differs", name.to_string_lossy())));
            }
            compared += 1;
        }
    }
    Ok((compared >= 2, format!("{compared} CSV files byte-identical")))
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };
    let secs = Duration::from_secs;

    report.record(1, "upload round-trip fidelity", Some(secs(60)), round_trip);
    report.record(2, "partial-sum attack curve", Some(secs(30)), attack);
    report.record(3, "padding-ratio insensitivity", Some(secs(60)), ratio);
    report.record(4, "virtual-ID repetition", Some(secs(10)), id_collision);
    report.record(5, "decay-factor cost trade-off", Some(secs(600)), sweep);

    let start = Instant::now();
    let scaling = scaling_curve(&ScalingParams {
        cost: cost(),
        ..ScalingParams::default()
    });
    let scaling_time = start.elapsed();
    let from_scaling = |check: &str| -> Verdict {
        let r = scaling.as_ref().map_err(|e| e.to_string())?;
        Ok(checks_line(r, &[check]))
    };
    println!("(client-count sweep took {:.1} s)", scaling_time.as_secs_f64());
    report.record(6, "cost linear in clients", None, || {
        let (ok, detail) = from_scaling("cost_linear_in_clients")?;
        Ok((ok && scaling_time <= secs(600), detail))
    });
    report.record(7, "per-client sends stable", None, || {
        let (ok, mut detail) = from_scaling("client_sends_stable")?;
        if let Ok(r) = &scaling {
            let per_phase: Vec<String> = r
                .summary
                .iter()
                .filter(|(k, _)| k.starts_with("upload_send_spread") || k.starts_with("download_send_spread"))
                .map(|(k, v)| format!("{k} {v:.3}"))
                .collect();
            detail.push_str(&format!("; per phase [{}]", per_phase.join(", ")));
        }
        Ok((ok, detail))
    });

    report.record(8, "download delivery completeness", None, delivery);
    let dir = tempfile::tempdir().expect("temp dir");
    report.record(9, "pipeline determinism", None, || determinism(dir.path()));

    if report.failures == 0 {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{} criterion/criteria failed", report.failures);
        ExitCode::FAILURE
    }
}
