//! Resolution of each subcommand's settings and its execution.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use splitrec_core::dataset::generate_synthetic;
use splitrec_core::experiments::{
    self, AlphaSweepParams, AttackParams, CostParams, ExperimentResult, IdCollisionParams,
    RatioParams, ScalingParams,
};
use splitrec_core::pipeline::{run_pipeline, PipelineReport};
use splitrec_core::recommender::{RecommenderKind, RecommenderSpec};
use splitrec_core::rng::{derive_rng, derive_seed, Stream};
use splitrec_core::simnet::{MessageLog, PhaseMetrics, SimConfig};
use splitrec_core::split::{reconstruct, split_vector_with_mask, InteractionVector, SplitConfig};

use crate::config::{load_config, CountList, Layers, RealList, RunManifest};
use crate::input::load_interactions;
use crate::output::{write_csv, write_experiment, write_json, write_message_log};
use crate::{Cli, Command, CostArgs, Outcome, DEFAULT_OUT_DIR, OUT_DIR_ENV};

enum Plan {
    SplitDemo {
        items: Vec<u32>,
        cfg: SplitConfig,
        seed: u64,
    },
    Pipeline(PipelinePlan),
    Attack(AttackParams),
    Ratio(RatioParams),
    IdCollision(IdCollisionParams),
    AlphaSweep(AlphaSweepParams),
    Scaling(ScalingParams),
}

struct PipelinePlan {
    data: Vec<InteractionVector>,
    sim: SimConfig,
    spec: RecommenderSpec,
    log: bool,
}

pub(crate) fn dispatch<W: Write>(cli: Cli, out: &mut W) -> Result<Outcome> {
    let file = match &cli.config {
        Some(path) => load_config(path)?,
        None => BTreeMap::new(),
    };
    let mut layers = Layers::new(file);
    let seed = layers.pick("seed", cli.seed, 0u64)?;
    let out_dir = cli
        .out_dir
        .or_else(|| layers.file_value("out_dir").map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let name = cli.command.name();

    let (plan, input) = resolve(cli.command, &mut layers, seed)?;
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_owned(),
        command: name.to_owned(),
        seed,
        input,
        out_dir: out_dir.display().to_string(),
        config: layers.finish()?,
    };
    let manifest_path = out_dir.join(format!("{name}.manifest.json"));
    write_json(&manifest_path, &manifest)?;
    writeln!(out, "manifest: {}", manifest_path.display())?;

    match plan {
        Plan::SplitDemo { items, cfg, seed } => split_demo(&items, &cfg, seed, out),
        Plan::Pipeline(p) => pipeline(p, &out_dir, out),
        Plan::Attack(p) => report(experiments::attack_curve(&p)?, &out_dir, out),
        Plan::Ratio(p) => report(experiments::ratio_curve(&p)?, &out_dir, out),
        Plan::IdCollision(p) => report(experiments::id_collision_curve(&p)?, &out_dir, out),
        Plan::AlphaSweep(p) => report(experiments::alpha_sweep(&p)?, &out_dir, out),
        Plan::Scaling(p) => report(experiments::scaling_curve(&p)?, &out_dir, out),
    }
}

fn resolve(command: Command, l: &mut Layers, seed: u64) -> Result<(Plan, String)> {
    let synthetic = "synthetic".to_owned();
    Ok(match command {
        Command::SplitDemo(a) => {
            let items = l.pick("items", a.items, CountList(vec![3, 7, 12, 20]))?;
            let cfg = SplitConfig::new(
                l.pick("n_item", a.n_item, 40)?,
                l.pick("n_max", a.n_max, 5)?,
                l.pick("c", a.c, 2)?,
                l.pick("shares", a.shares, 4)?,
            )?;
            let items = items.0.into_iter().map(|i| i as u32).collect();
            (Plan::SplitDemo { items, cfg, seed }, "items".into())
        }
        Command::Pipeline(a) => resolve_pipeline(a, l, seed)?,
        Command::Attack(a) => {
            let d = AttackParams::default();
            let p = AttackParams {
                s_values: l.pick("shares", a.shares, CountList(d.s_values))?.0,
                c: l.pick("c", a.c, d.c)?,
                n_item: l.pick("n_item", a.n_item, d.n_item)?,
                n_max: l.pick("n_max", a.n_max, d.n_max)?,
                trials: l.pick("trials", a.trials, d.trials)?,
                seed,
            };
            (Plan::Attack(p), synthetic)
        }
        Command::Ratio(a) => {
            let d = RatioParams::default();
            let p = RatioParams {
                c_values: l.pick("c", a.c, CountList(d.c_values))?.0,
                s_spl: l.pick("shares", a.shares, d.s_spl)?,
                n_item: l.pick("n_item", a.n_item, d.n_item)?,
                n_max: l.pick("n_max", a.n_max, d.n_max)?,
                trials: l.pick("trials", a.trials, d.trials)?,
                seed,
            };
            (Plan::Ratio(p), synthetic)
        }
        Command::IdCollision(a) => {
            let d = IdCollisionParams::default();
            let p = IdCollisionParams {
                lengths: l.pick("lengths", a.lengths, CountList(d.lengths))?.0,
                n_user: l.pick("users", a.users, d.n_user)?,
                trials: l.pick("trials", a.trials, d.trials)?,
                seed,
            };
            (Plan::IdCollision(p), synthetic)
        }
        Command::AlphaSweep(a) => {
            let d = AlphaSweepParams::default();
            let p = AlphaSweepParams {
                alphas: l.pick("alphas", a.alphas, RealList(d.alphas))?.0,
                n_user: l.pick("users", a.users, d.n_user)?,
                cost: resolve_cost(a.cost, l, seed)?,
            };
            (Plan::AlphaSweep(p), synthetic)
        }
        Command::Scaling(a) => {
            let d = ScalingParams::default();
            let p = ScalingParams {
                n_users: l.pick("users", a.users, CountList(d.n_users))?.0,
                alphas: l.pick("alphas", a.alphas, RealList(d.alphas))?.0,
                cost: resolve_cost(a.cost, l, seed)?,
            };
            (Plan::Scaling(p), synthetic)
        }
    })
}

fn resolve_cost(a: CostArgs, l: &mut Layers, seed: u64) -> Result<CostParams> {
    let d = CostParams::default();
    Ok(CostParams {
        n_item: l.pick("n_item", a.n_item, d.n_item)?,
        n_max: l.pick("n_max", a.n_max, d.n_max)?,
        c: l.pick("c", a.c, d.c)?,
        s_spl: l.pick("shares", a.shares, d.s_spl)?,
        id_len: l.pick("id_len", a.id_len, d.id_len)?,
        k: l.pick("k", a.k, d.k)?,
        trials: l.pick("trials", a.trials, d.trials)?,
        seed,
    })
}

fn resolve_pipeline(a: crate::PipelineArgs, l: &mut Layers, seed: u64) -> Result<(Plan, String)> {
    let d = CostParams::default();
    let input: Option<String> = l.optional("input", a.input)?;
    let synthetic: Option<usize> = l.optional("synthetic", a.synthetic)?;
    let n_max = l.pick("n_max", a.n_max, d.n_max)?;
    let (data, n_item, source) = match (input, synthetic) {
        (Some(_), Some(_)) => bail!("set either input or synthetic, not both"),
        (Some(path), None) => {
            let override_n: Option<u32> = l.optional("n_item", a.n_item)?;
            let loaded = load_interactions(Path::new(&path), n_max, override_n)?;
            (loaded.users, loaded.n_item, format!("file:{path}"))
        }
        (None, synthetic) => {
            let n_user = l.pick("synthetic", synthetic, 100)?;
            let n_item = l.pick("n_item", a.n_item, d.n_item)?;
            let data_seed = derive_seed(seed, Stream::Dataset, 0);
            let data = generate_synthetic(n_user, n_item, n_max, data_seed)?;
            (data, n_item, format!("synthetic:{n_user}"))
        }
    };
    let split = SplitConfig::new(
        n_item,
        n_max,
        l.pick("c", a.c, d.c)?,
        l.pick("shares", a.shares, d.s_spl)?,
    )?;
    let n_user = data.len();
    let mut sim = SimConfig::new(
        n_user,
        split,
        l.pick("alpha", a.alpha, 0.9)?,
        l.pick("id_len", a.id_len, d.id_len)?,
        seed,
    );
    sim.max_rounds = l.pick("max_rounds", a.max_rounds, sim.max_rounds)?;
    let spec = RecommenderSpec::new(
        RecommenderKind::Popularity,
        l.pick("k", a.k, d.k)?,
        n_max,
    )?;
    let log = l.pick("log", a.log.then_some(true), false)?;
    let plan = PipelinePlan {
        data,
        sim,
        spec,
        log,
    };
    Ok((Plan::Pipeline(plan), source))
}

fn joined<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn split_demo<W: Write>(items: &[u32], cfg: &SplitConfig, seed: u64, out: &mut W) -> Result<Outcome> {
    let source = InteractionVector::new(items.to_vec())?;
    let mut rng = derive_rng(seed, Stream::Experiment, 0);
    let (matrix, shares) = split_vector_with_mask(&source, cfg, &mut rng)?;
    writeln!(out, "items:   {}", joined(source.items()))?;
    writeln!(out, "indices: {}", joined(matrix.indices()))?;
    writeln!(out, "mask:    {}", joined(matrix.mask()))?;
    for (i, share) in shares.iter().enumerate() {
        writeln!(out, "share {i}: {}", joined(share.split.values()))?;
    }
    let mut sums = vec![0i32; matrix.width()];
    for share in &shares {
        for (s, v) in sums.iter_mut().zip(share.split.values()) {
            *s += v;
        }
    }
    writeln!(out, "sum:     {}", joined(&sums))?;
    let recovered = reconstruct(&shares)?;
    writeln!(out, "reconstructed: {}", joined(recovered.items()))?;
    Ok(if recovered == source {
        Outcome::Passed
    } else {
        writeln!(out, "reconstruction: MISMATCH")?;
        Outcome::Failed
    })
}

#[derive(Serialize)]
struct PhaseRow {
    phase: &'static str,
    total_bytes: u64,
    messages_client_to_client: u64,
    messages_to_server: u64,
    messages_server_to_client: u64,
    rounds_used: usize,
    mean_client_sends: f64,
    max_client_sends: u64,
    undelivered: u64,
    vid_collisions: u64,
    undetected_collisions: u64,
}

impl PhaseRow {
    fn new(phase: &'static str, m: &PhaseMetrics) -> Self {
        Self {
            phase,
            total_bytes: m.total_bytes,
            messages_client_to_client: m.messages_client_to_client,
            messages_to_server: m.messages_to_server,
            messages_server_to_client: m.messages_server_to_client,
            rounds_used: m.rounds_used,
            mean_client_sends: m.mean_client_sends(),
            max_client_sends: m.per_client_sends.iter().copied().max().unwrap_or(0),
            undelivered: m.undelivered,
            vid_collisions: m.vid_collisions,
            undetected_collisions: m.undetected_collisions,
        }
    }
}

#[derive(Serialize)]
struct PipelineSummary<'a> {
    report: &'a PipelineReport,
    total_bytes: u64,
    fidelity_ok: bool,
}

fn pipeline<W: Write>(p: PipelinePlan, out_dir: &Path, out: &mut W) -> Result<Outcome> {
    let mut log = MessageLog::new();
    let report = run_pipeline(&p.sim, &p.data, &p.spec, p.log.then_some(&mut log))
        .context("pipeline run")?;
    let fidelity_ok = report.upload_fidelity.is_exact()
        && report.delivery_fidelity.is_exact()
        && report.download.undelivered == 0;

    write_csv(
        &out_dir.join("pipeline_metrics.csv"),
        &[
            PhaseRow::new("upload", &report.upload),
            PhaseRow::new("download", &report.download),
        ],
    )?;
    if p.log {
        write_message_log(&out_dir.join("pipeline_messages.csv"), &log)?;
    }
    write_json(
        &out_dir.join("pipeline.json"),
        &PipelineSummary {
            report: &report,
            total_bytes: report.total_bytes(),
            fidelity_ok,
        },
    )?;

    for (name, m) in [("upload", &report.upload), ("download", &report.download)] {
        writeln!(
            out,
            "{name}: bytes={} messages={} rounds={} undelivered={}",
            m.total_bytes,
            m.total_messages(),
            m.rounds_used,
            m.undelivered
        )?;
    }
    writeln!(out, "total bytes: {}", report.total_bytes())?;
    let u = &report.upload_fidelity;
    let d = &report.delivery_fidelity;
    writeln!(
        out,
        "upload fidelity: {}/{} exact, {} corrupt vid group(s)",
        u.exact, u.unique_vids, u.corrupt_groups
    )?;
    writeln!(
        out,
        "delivery fidelity: {}/{} exact, {} incomplete, {} wrong",
        d.exact, d.expected, d.incomplete, d.wrong
    )?;
    writeln!(out, "fidelity: {}", if fidelity_ok { "OK" } else { "FAILED" })?;
    Ok(if fidelity_ok {
        Outcome::Passed
    } else {
        Outcome::Failed
    })
}

fn report<W: Write>(result: ExperimentResult, out_dir: &Path, out: &mut W) -> Result<Outcome> {
    for path in write_experiment(out_dir, &result)? {
        writeln!(out, "wrote {}", path.display())?;
    }
    for (key, value) in &result.summary {
        writeln!(out, "{key} = {value}")?;
    }
    for c in &result.checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{tag} {}: {} (expected {})", c.name, c.observed, c.expected)?;
    }
    Ok(if result.all_passed() {
        Outcome::Passed
    } else {
        Outcome::Failed
    })
}
