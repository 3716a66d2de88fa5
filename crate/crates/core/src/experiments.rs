//! Experiment drivers: share-summing attack, fake-item ratio, virtual-id
//! repetition, and communication cost against the decay factor and the
//! client count.
//!
//! Trials run in parallel. Trial `i` of an experiment always draws from the
//! stream derived from `(seed, i)` and results are reduced in trial order, so
//! the output only depends on the parameters.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{generate_synthetic, DatasetError};
use crate::pipeline::{run_pipeline, PipelineError, PipelineReport};
use crate::protocol::VirtualId;
use crate::recommender::{RecommendError, RecommenderKind, RecommenderSpec};
use crate::rng::{derive_rng, derive_seed, Stream};
use crate::simnet::SimConfig;
use crate::split::{
    jaccard_similarity, split_vector_with_mask, InteractionVector, SplitConfig, SplitError,
    SpeculatedVector,
};
use crate::stats;

/// Upper bound on the mean similarity an attacker reaches with `t < S` shares.
pub const PARTIAL_SIMILARITY_BOUND: f64 = 0.40;
/// Minimum Spearman correlation between the decay factor and upload bytes.
pub const UPLOAD_SPEARMAN_MIN: f64 = 0.9;
/// Maximum Spearman correlation between the decay factor and download bytes.
pub const DOWNLOAD_SPEARMAN_MAX: f64 = -0.9;
/// Decay factors accepted as the cost minimum.
pub const ARGMIN_ALPHAS: [f64; 3] = [0.85, 0.90, 0.95];
pub const LINEAR_R2_MIN: f64 = 0.95;
pub const SEND_SPREAD_MAX: f64 = 0.20;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] SplitError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

/// One measured point of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub series: String,
    pub x: f64,
    pub mean: f64,
    pub std: Option<f64>,
    pub n_trials: usize,
}

impl ResultRow {
    fn from_samples(series: impl Into<String>, x: f64, samples: &[f64]) -> Self {
        Self {
            series: series.into(),
            x,
            mean: stats::mean(samples),
            std: stats::std_dev(samples),
            n_trials: samples.len(),
        }
    }
}

/// Pass/fail of one claim checked against an experiment's rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub observed: String,
    pub expected: String,
}

impl Check {
    fn new(name: &str, passed: bool, observed: String, expected: String) -> Self {
        Self {
            name: name.to_owned(),
            passed,
            observed,
            expected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub parameters: BTreeMap<String, String>,
    pub rows: Vec<ResultRow>,
    pub summary: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl ExperimentResult {
    fn new(name: &str, parameters: BTreeMap<String, String>) -> Self {
        Self {
            name: name.to_owned(),
            parameters,
            rows: Vec::new(),
            summary: BTreeMap::new(),
            checks: Vec::new(),
        }
    }

    pub fn series(&self, series: &str) -> impl Iterator<Item = &ResultRow> {
        let series = series.to_owned();
        self.rows.iter().filter(move |r| r.series == series)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

macro_rules! params {
    ($($k:literal => $v:expr),* $(,)?) => {{
        let mut m = BTreeMap::new();
        $( m.insert($k.to_string(), $v.to_string()); )*
        m
    }};
}

// ---------------------------------------------------------------------------
// security

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    pub s_values: Vec<usize>,
    pub c: usize,
    pub n_item: u32,
    pub n_max: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            s_values: vec![50, 100, 200],
            c: 2,
            n_item: 2000,
            n_max: 50,
            trials: 20,
            seed: 0,
        }
    }
}

/// Similarity reached with `t = 0..=S` shares, one entry per trial.
fn similarity_by_shares(cfg: &SplitConfig, trials: usize, seed: u64) -> Vec<Vec<f64>> {
    let s = cfg.s_spl();
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = derive_rng(seed, Stream::Trial, trial as u64);
            let len = rng.gen_range(1..=cfg.n_max());
            let items = rand::seq::index::sample(&mut rng, cfg.n_item() as usize, len)
                .into_iter()
                .map(|i| i as u32 + 1)
                .collect();
            let source = InteractionVector::new(items).expect("distinct sample");
            let (matrix, shares) =
                split_vector_with_mask(&source, cfg, &mut rng).expect("validated config");
            // running prefix sums instead of re-summing for every t
            let mut acc = vec![0i32; matrix.width()];
            let mut out = Vec::with_capacity(s + 1);
            let mut spec = SpeculatedVector(acc.clone());
            out.push(jaccard_similarity(&spec, matrix.mask()).expect("same width"));
            for share in &shares {
                for (a, v) in acc.iter_mut().zip(share.split.values()) {
                    *a += v;
                }
                spec.0.copy_from_slice(&acc);
                out.push(jaccard_similarity(&spec, matrix.mask()).expect("same width"));
            }
            out
        })
        .collect();
    // transpose to t-major
    (0..=s)
        .map(|t| per_trial.iter().map(|trial| trial[t]).collect())
        .collect()
}

fn security_checks(result: &mut ExperimentResult, series: &[(String, usize)]) {
    let mut full_ok = true;
    let mut worst_full = f64::INFINITY;
    let mut worst_partial: f64 = 0.0;
    for (name, s) in series {
        for row in result.series(name) {
            if row.x as usize == *s {
                full_ok &= row.mean == 1.0 && row.std.unwrap_or(0.0) == 0.0;
                worst_full = worst_full.min(row.mean);
            } else {
                worst_partial = worst_partial.max(row.mean);
            }
        }
    }
    result.summary.insert("min_full_similarity".into(), worst_full);
    result.summary.insert("max_partial_similarity".into(), worst_partial);
    result.checks.push(Check::new(
        "full_share_set_recovers",
        full_ok,
        format!("min mean at t=S: {worst_full}"),
        "1.0 exactly, std 0".into(),
    ));
    result.checks.push(Check::new(
        "partial_share_set_bounded",
        worst_partial < PARTIAL_SIMILARITY_BOUND,
        format!("max mean over t<S: {worst_partial:.4}"),
        format!("< {PARTIAL_SIMILARITY_BOUND}"),
    ));
}

/// Mean Jaccard similarity of the share-summing attack for each `S` and every
/// `t` in `[0, S]`.
pub fn attack_curve(p: &AttackParams) -> Result<ExperimentResult, ExperimentError> {
    if p.trials == 0 {
        return Err(ExperimentError::Invalid("trials must be at least 1".into()));
    }
    let mut result = ExperimentResult::new(
        "attack",
        params! {
            "s_values" => join(&p.s_values), "c" => p.c, "n_item" => p.n_item,
            "n_max" => p.n_max, "trials" => p.trials, "seed" => p.seed,
        },
    );
    let mut series = Vec::new();
    for (i, &s) in p.s_values.iter().enumerate() {
        let cfg = SplitConfig::new(p.n_item, p.n_max, p.c, s)?;
        let by_t = similarity_by_shares(&cfg, p.trials, derive_seed(p.seed, Stream::Experiment, i as u64));
        let name = format!("S={s}");
        for (t, samples) in by_t.iter().enumerate() {
            result.rows.push(ResultRow::from_samples(&name, t as f64, samples));
        }
        series.push((name, s));
    }
    security_checks(&mut result, &series);
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioParams {
    pub c_values: Vec<usize>,
    pub s_spl: usize,
    pub n_item: u32,
    pub n_max: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for RatioParams {
    fn default() -> Self {
        Self {
            c_values: vec![2, 4, 6, 8, 10],
            s_spl: 100,
            n_item: 2000,
            n_max: 50,
            trials: 20,
            seed: 0,
        }
    }
}

/// The attack curve at fixed `S` for each fake-item ratio `c`.
pub fn ratio_curve(p: &RatioParams) -> Result<ExperimentResult, ExperimentError> {
    if p.trials == 0 {
        return Err(ExperimentError::Invalid("trials must be at least 1".into()));
    }
    let cfgs = p
        .c_values
        .iter()
        .map(|&c| SplitConfig::new(p.n_item, p.n_max, c, p.s_spl))
        .collect::<Result<Vec<_>, _>>()?;
    let mut result = ExperimentResult::new(
        "ratio",
        params! {
            "c_values" => join(&p.c_values), "s_spl" => p.s_spl, "n_item" => p.n_item,
            "n_max" => p.n_max, "trials" => p.trials, "seed" => p.seed,
        },
    );
    let mut series = Vec::new();
    for (i, cfg) in cfgs.iter().enumerate() {
        let by_t = similarity_by_shares(cfg, p.trials, derive_seed(p.seed, Stream::Experiment, i as u64));
        let name = format!("c={}", cfg.c());
        for (t, samples) in by_t.iter().enumerate() {
            result.rows.push(ResultRow::from_samples(&name, t as f64, samples));
        }
        series.push((name, p.s_spl));
    }
    security_checks(&mut result, &series);
    Ok(result)
}

// ---------------------------------------------------------------------------
// virtual ids

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdCollisionParams {
    pub lengths: Vec<usize>,
    pub n_user: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for IdCollisionParams {
    fn default() -> Self {
        Self {
            lengths: (1..=8).collect(),
            n_user: 31_831,
            trials: 5,
            seed: 0,
        }
    }
}

/// `(n - distinct) / n` for `n` vids of the given length.
pub fn repetition_rate(len: usize, n_user: usize, seed: u64) -> f64 {
    if n_user == 0 {
        return 0.0;
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    let mut seen = HashSet::with_capacity(n_user);
    for _ in 0..n_user {
        seen.insert(VirtualId::random(len, &mut rng).expect("len >= 1"));
    }
    (n_user - seen.len()) as f64 / n_user as f64
}

/// Closed-form expected repetition rate for `n` uniform draws from `62^len`.
pub fn expected_repetition_rate(len: usize, n_user: usize) -> f64 {
    if n_user == 0 {
        return 0.0;
    }
    let space = 62f64.powi(len as i32);
    let n = n_user as f64;
    // 1 - E[distinct]/n with E[distinct] = M (1 - (1 - 1/M)^n)
    let distinct = -space * (n * (-1.0 / space).ln_1p()).exp_m1();
    1.0 - distinct / n
}

pub fn id_collision_curve(p: &IdCollisionParams) -> Result<ExperimentResult, ExperimentError> {
    if p.trials == 0 || p.lengths.contains(&0) {
        return Err(ExperimentError::Invalid(
            "trials and every length must be at least 1".into(),
        ));
    }
    let mut result = ExperimentResult::new(
        "id_collision",
        params! {
            "lengths" => join(&p.lengths), "n_user" => p.n_user,
            "trials" => p.trials, "seed" => p.seed,
        },
    );
    for (li, &len) in p.lengths.iter().enumerate() {
        let samples: Vec<f64> = (0..p.trials)
            .into_par_iter()
            .map(|t| {
                let seed = derive_seed(
                    derive_seed(p.seed, Stream::Experiment, li as u64),
                    Stream::Trial,
                    t as u64,
                );
                repetition_rate(len, p.n_user, seed)
            })
            .collect();
        result
            .rows
            .push(ResultRow::from_samples("repetition_rate", len as f64, &samples));
        result
            .rows
            .push(ResultRow::from_samples("max_repetition_rate", len as f64, &[samples
                .iter()
                .copied()
                .fold(0.0, f64::max)]));
        result.summary.insert(
            format!("expected_rate_len_{len}"),
            expected_repetition_rate(len, p.n_user),
        );
    }
    if p.lengths.contains(&7) {
        let worst = result
            .series("max_repetition_rate")
            .find(|r| r.x == 7.0)
            .map_or(f64::NAN, |r| r.mean);
        result.checks.push(Check::new(
            "length_7_has_no_repeats",
            worst == 0.0,
            format!("max rate over trials: {worst}"),
            "0 in every trial".into(),
        ));
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// communication cost

/// Parameters shared by the cost experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub n_item: u32,
    pub n_max: usize,
    pub c: usize,
    pub s_spl: usize,
    pub id_len: usize,
    /// Recommendations per user.
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            n_item: 2000,
            n_max: 50,
            c: 2,
            s_spl: 50,
            id_len: 7,
            k: 10,
            trials: 20,
            seed: 0,
        }
    }
}

impl CostParams {
    fn parameters(&self) -> BTreeMap<String, String> {
        params! {
            "n_item" => self.n_item, "n_max" => self.n_max, "c" => self.c,
            "s_spl" => self.s_spl, "id_len" => self.id_len, "k" => self.k,
            "trials" => self.trials, "seed" => self.seed,
        }
    }
}

// Same dataset and simulation seed for a given (n_user, trial) across every
// alpha, so alpha comparisons are paired.
fn cost_trials(
    p: &CostParams,
    n_user: usize,
    alpha: f64,
) -> Result<Vec<Option<PipelineReport>>, ExperimentError> {
    let split = SplitConfig::new(p.n_item, p.n_max, p.c, p.s_spl)?;
    let spec = RecommenderSpec::new(RecommenderKind::Popularity, p.k, p.n_max)?;
    (0..p.trials)
        .into_par_iter()
        .map(|trial| {
            let base = derive_seed(p.seed, Stream::Trial, trial as u64);
            let data_seed = derive_seed(base, Stream::Dataset, n_user as u64);
            let data = generate_synthetic(n_user, p.n_item, p.n_max, data_seed)?;
            let cfg = SimConfig::new(n_user, split, alpha, p.id_len, derive_seed(base, Stream::Experiment, n_user as u64));
            match run_pipeline(&cfg, &data, &spec, None) {
                Ok(report) if report.download.undelivered == 0 => Ok(Some(report)),
                Ok(_) | Err(PipelineError::Sim(crate::simnet::SimError::PhaseIncomplete { .. })) => {
                    Ok(None)
                }
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}

fn complete(runs: &[Option<PipelineReport>]) -> Vec<&PipelineReport> {
    runs.iter().flatten().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweepParams {
    pub alphas: Vec<f64>,
    pub n_user: usize,
    pub cost: CostParams,
}

impl Default for AlphaSweepParams {
    fn default() -> Self {
        Self {
            alphas: vec![0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95],
            n_user: 1000,
            cost: CostParams::default(),
        }
    }
}

/// Upload, download and total bytes per decay factor.
pub fn alpha_sweep(p: &AlphaSweepParams) -> Result<ExperimentResult, ExperimentError> {
    if p.alphas.len() < 2 || p.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
        return Err(ExperimentError::Invalid(
            "need at least two alphas, each in (0, 1)".into(),
        ));
    }
    if p.cost.trials == 0 {
        return Err(ExperimentError::Invalid("trials must be at least 1".into()));
    }
    let mut parameters = p.cost.parameters();
    parameters.insert("alphas".into(), join(&p.alphas));
    parameters.insert("n_user".into(), p.n_user.to_string());
    let mut result = ExperimentResult::new("alpha_sweep", parameters);

    let mut up_means = Vec::new();
    let mut down_means = Vec::new();
    let mut total_means = Vec::new();
    let mut incomplete = 0usize;
    for &alpha in &p.alphas {
        let runs = cost_trials(&p.cost, p.n_user, alpha)?;
        let ok = complete(&runs);
        incomplete += runs.len() - ok.len();
        if ok.is_empty() {
            return Err(ExperimentError::Invalid(format!(
                "no complete run at alpha = {alpha}"
            )));
        }
        let up: Vec<f64> = ok.iter().map(|r| r.upload.total_bytes as f64).collect();
        let down: Vec<f64> = ok.iter().map(|r| r.download.total_bytes as f64).collect();
        let total: Vec<f64> = ok.iter().map(|r| r.total_bytes() as f64).collect();
        for (series, samples) in [
            ("upload_bytes", &up),
            ("download_bytes", &down),
            ("total_bytes", &total),
        ] {
            result.rows.push(ResultRow::from_samples(series, alpha, samples));
        }
        up_means.push(stats::mean(&up));
        down_means.push(stats::mean(&down));
        total_means.push(stats::mean(&total));
    }

    let rho_up = stats::spearman(&p.alphas, &up_means);
    let rho_down = stats::spearman(&p.alphas, &down_means);
    let best = total_means
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| p.alphas[i])
        .expect("at least two alphas");
    result.summary.insert("spearman_upload".into(), rho_up);
    result.summary.insert("spearman_download".into(), rho_down);
    result.summary.insert("argmin_alpha".into(), best);
    result.summary.insert("incomplete_runs".into(), incomplete as f64);

    result.checks.push(Check::new(
        "upload_increases_with_alpha",
        rho_up > UPLOAD_SPEARMAN_MIN,
        format!("spearman {rho_up:.4}"),
        format!("> {UPLOAD_SPEARMAN_MIN}"),
    ));
    result.checks.push(Check::new(
        "download_decreases_with_alpha",
        rho_down < DOWNLOAD_SPEARMAN_MAX,
        format!("spearman {rho_down:.4}"),
        format!("< {DOWNLOAD_SPEARMAN_MAX}"),
    ));
    result.checks.push(Check::new(
        "total_cost_minimum",
        ARGMIN_ALPHAS.iter().any(|&a| (a - best).abs() < 1e-9),
        format!("argmin alpha {best}"),
        format!("one of {ARGMIN_ALPHAS:?}"),
    ));
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub n_users: Vec<usize>,
    pub alphas: Vec<f64>,
    pub cost: CostParams,
}

impl Default for ScalingParams {
    fn default() -> Self {
        Self {
            n_users: (1..=10).map(|i| i * 100).collect(),
            alphas: vec![0.5, 0.7, 0.9],
            cost: CostParams::default(),
        }
    }
}

/// Total bytes and per-client sends against the number of clients.
pub fn scaling_curve(p: &ScalingParams) -> Result<ExperimentResult, ExperimentError> {
    if p.n_users.is_empty() || p.n_users.iter().any(|&n| n < 2) {
        return Err(ExperimentError::Invalid(
            "need at least one client count, each >= 2".into(),
        ));
    }
    if p.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) || p.cost.trials == 0 {
        return Err(ExperimentError::Invalid(
            "alphas must lie in (0, 1) and trials must be at least 1".into(),
        ));
    }
    let mut parameters = p.cost.parameters();
    parameters.insert("n_users".into(), join(&p.n_users));
    parameters.insert("alphas".into(), join(&p.alphas));
    let mut result = ExperimentResult::new("scaling", parameters);

    let xs: Vec<f64> = p.n_users.iter().map(|&n| n as f64).collect();
    let mut r2_ok = true;
    let mut spread_ok = true;
    let mut r2_seen = Vec::new();
    let mut spread_seen = Vec::new();
    for &alpha in &p.alphas {
        let mut totals = Vec::new();
        let mut sends = Vec::new();
        let mut up_sends = Vec::new();
        let mut down_sends = Vec::new();
        let mut incomplete = 0usize;
        for &n in &p.n_users {
            let runs = cost_trials(&p.cost, n, alpha)?;
            let ok = complete(&runs);
            incomplete += runs.len() - ok.len();
            if ok.is_empty() {
                return Err(ExperimentError::Invalid(format!(
                    "no complete run at n = {n}, alpha = {alpha}"
                )));
            }
            let total: Vec<f64> = ok.iter().map(|r| r.total_bytes() as f64).collect();
            let s: Vec<f64> = ok.iter().map(|r| r.mean_client_sends()).collect();
            let us: Vec<f64> = ok.iter().map(|r| r.upload.mean_client_sends()).collect();
            let ds: Vec<f64> = ok.iter().map(|r| r.download.mean_client_sends()).collect();
            let x = n as f64;
            result
                .rows
                .push(ResultRow::from_samples(format!("total_bytes@{alpha}"), x, &total));
            result
                .rows
                .push(ResultRow::from_samples(format!("client_sends@{alpha}"), x, &s));
            result
                .rows
                .push(ResultRow::from_samples(format!("upload_client_sends@{alpha}"), x, &us));
            result
                .rows
                .push(ResultRow::from_samples(format!("download_client_sends@{alpha}"), x, &ds));
            totals.push(stats::mean(&total));
            sends.push(stats::mean(&s));
            up_sends.push(stats::mean(&us));
            down_sends.push(stats::mean(&ds));
        }
        let fit = stats::linear_fit(&xs, &totals);
        let spread = stats::relative_spread(&sends);
        result.summary.insert(format!("r2@{alpha}"), fit.r_squared);
        result.summary.insert(format!("slope_bytes_per_client@{alpha}"), fit.slope);
        result.summary.insert(format!("send_spread@{alpha}"), spread);
        result
            .summary
            .insert(format!("upload_send_spread@{alpha}"), stats::relative_spread(&up_sends));
        result
            .summary
            .insert(format!("download_send_spread@{alpha}"), stats::relative_spread(&down_sends));
        result
            .summary
            .insert(format!("incomplete_runs@{alpha}"), incomplete as f64);
        r2_ok &= fit.r_squared >= LINEAR_R2_MIN;
        spread_ok &= spread < SEND_SPREAD_MAX;
        r2_seen.push(format!("{alpha}: {:.4}", fit.r_squared));
        spread_seen.push(format!("{alpha}: {spread:.4}"));
    }
    result.checks.push(Check::new(
        "cost_linear_in_clients",
        r2_ok,
        format!("R² per alpha [{}]", r2_seen.join(", ")),
        format!(">= {LINEAR_R2_MIN} for every alpha"),
    ));
    result.checks.push(Check::new(
        "client_sends_stable",
        spread_ok,
        format!("(max-min)/mean per alpha [{}]", spread_seen.join(", ")),
        format!("< {SEND_SPREAD_MAX} for every alpha"),
    ));
    Ok(result)
}
