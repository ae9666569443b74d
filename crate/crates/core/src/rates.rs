//! Convergence-rate experiments: repeated estimation over a grid of sample
//! sizes, with the aligned error split along the stabilizer projector of θ*
//! into a fast part `B̄e` and a slow part `(I − B̄)e`, and log-log slopes of
//! a chosen error quantile against n.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fisher::fisher_mc;
use crate::group::{FiniteIsometryGroup, GroupSpec};
use crate::linalg::{norm, spd_inverse, Matrix};
use crate::mle::{align, fit, FitConfig};
use crate::model::MixtureModel;
use crate::rng::StreamId;
use crate::stabilizer::{decompose, stabilizer_default, StabilizerReport};
use crate::stats::{ols, quantile, spearman, LineFit};

pub const MIN_GRID_POINTS: usize = 4;
pub const MIN_TRIALS: usize = 50;
pub const CSV_HEADER: &str = "n,trial,e_fast,e_slow,rho,loglik";

// sub-streams of a trial
const STREAM_SAMPLE: u64 = 0;
const STREAM_FIT: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub group: GroupSpec,
    pub theta_star: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub mle: FitConfig,
    pub master_seed: u64,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
}

fn default_quantile() -> f64 {
    0.5
}

/// Geometric grid `start, start·ratio, …` with `points` entries.
pub fn geometric_grid(start: usize, ratio: usize, points: usize) -> Vec<usize> {
    (0..points).map(|k| start * ratio.pow(k as u32)).collect()
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

impl RateConfig {
    /// Checks the configuration and returns the group and the exact
    /// stabilizer of θ*.
    pub fn validate(&self) -> Result<(Arc<FiniteIsometryGroup>, StabilizerReport)> {
        if self.n_grid.len() < MIN_GRID_POINTS {
            return Err(invalid(format!("n_grid needs at least {MIN_GRID_POINTS} points")));
        }
        if self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("n_grid must be positive and strictly increasing"));
        }
        if self.trials < MIN_TRIALS {
            return Err(invalid(format!("trials must be at least {MIN_TRIALS}, got {}", self.trials)));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(invalid("quantile must lie in (0, 1)"));
        }
        if self.mle.n_restarts == 0 {
            return Err(invalid("mle.restarts must be at least 1"));
        }
        let group = self.group.build().map_err(|e| invalid(e.to_string()))?;
        check_dim(group.dim(), self.theta_star.len()).map_err(|e| invalid(e.to_string()))?;
        let report = stabilizer_default(&group, &self.theta_star).map_err(|e| invalid(e.to_string()))?;
        Ok((Arc::new(group), report))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    pub e_fast: f64,
    pub e_slow: f64,
    pub rho: f64,
    pub loglik: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub n: usize,
    pub q_fast: f64,
    pub q_slow: f64,
    pub q_rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// False when the component is empty or some quantile is not positive.
    pub fitted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<LineFit>,
    pub note: String,
}

impl SlopeFit {
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub version: String,
    pub config: RateConfig,
    pub projector_rank: usize,
    pub records: Vec<TrialRecord>,
    pub per_n: Vec<GridSummary>,
    pub slope_fast: SlopeFit,
    pub slope_slow: SlopeFit,
}

/// One trial: sample, fit, align, split the error.
fn run_trial(
    model: &MixtureModel,
    report: &StabilizerReport,
    mle: &FitConfig,
    seed: u64,
    n: usize,
    trial: usize,
) -> Result<TrialRecord> {
    let base = StreamId::new(seed).child(n as u64).child(trial as u64);
    let data = model.sample(n, &mut base.child(STREAM_SAMPLE).rng());
    let res = fit(model.group(), &data, mle, &base.child(STREAM_FIT).rng())?;
    let (_, aligned) = align(model.group(), &res.theta_hat, model.theta())?;
    let err: Vec<f64> = aligned.iter().zip(model.theta()).map(|(a, b)| a - b).collect();
    let (v, w) = decompose(&err, report)?;
    Ok(TrialRecord { n, trial, e_fast: norm(&v), e_slow: norm(&w), rho: norm(&err), loglik: res.loglik })
}

pub(crate) fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(invalid("workers must be at least 1")),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn fit_slope(ns: &[usize], qs: &[f64], empty: bool) -> SlopeFit {
    if empty {
        return SlopeFit { fitted: false, fit: None, note: "component is empty for this θ*".into() };
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN counts as not positive
    if qs.iter().any(|&q| !(q > 0.0)) {
        return SlopeFit { fitted: false, fit: None, note: "a quantile is zero; log undefined".into() };
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = qs.iter().map(|q| q.ln()).collect();
    SlopeFit { fitted: true, fit: Some(ols(&x, &y)), note: String::new() }
}

/// Aggregates per-trial records into per-n quantiles and slopes.
pub fn summarize(config: &RateConfig, report: &StabilizerReport, records: Vec<TrialRecord>) -> RateResult {
    let per_n: Vec<GridSummary> = config
        .n_grid
        .iter()
        .map(|&n| {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.n == n).collect();
            let pick = |f: fn(&TrialRecord) -> f64| {
                quantile(&rows.iter().map(|r| f(r)).collect::<Vec<_>>(), config.quantile)
            };
            GridSummary { n, q_fast: pick(|r| r.e_fast), q_slow: pick(|r| r.e_slow), q_rho: pick(|r| r.rho) }
        })
        .collect();
    let d = report.dim();
    let rank = report.projector_rank;
    let qf: Vec<f64> = per_n.iter().map(|s| s.q_fast).collect();
    let qs: Vec<f64> = per_n.iter().map(|s| s.q_slow).collect();
    RateResult {
        version: crate::version_string(),
        config: config.clone(),
        projector_rank: rank,
        slope_fast: fit_slope(&config.n_grid, &qf, rank == 0),
        slope_slow: fit_slope(&config.n_grid, &qs, rank == d),
        records,
        per_n,
    }
}

/// Runs every (n, trial) pair. `workers = None` uses the current rayon pool.
pub fn run(config: &RateConfig, workers: Option<usize>) -> Result<RateResult> {
    let (group, report) = config.validate()?;
    let model = MixtureModel::new(group, config.theta_star.clone())?;
    let pairs: Vec<(usize, usize)> =
        config.n_grid.iter().flat_map(|&n| (0..config.trials).map(move |t| (n, t))).collect();
    let records = with_workers(workers, || {
        pairs
            .par_iter()
            .map(|&(n, t)| run_trial(&model, &report, &config.mle, config.master_seed, n, t))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(summarize(config, &report, records))
}

impl RateResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.n, r.trial, r.e_fast, r.e_slow, r.rho, r.loglik
            )?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Everything except the per-trial rows.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "version": self.version,
            "config": self.config,
            "projector_rank": self.projector_rank,
            "per_n": self.per_n,
            "slope_fast": self.slope_fast,
            "slope_slow": self.slope_slow,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCurve {
    pub n_grid: Vec<usize>,
    pub q_rho: Vec<f64>,
    pub spearman: f64,
    /// Last point below the first and Spearman correlation at most −0.8.
    pub decreasing: bool,
}

impl ConsistencyCurve {
    pub fn from_result(result: &RateResult) -> Self {
        let n_grid: Vec<usize> = result.per_n.iter().map(|s| s.n).collect();
        let q_rho: Vec<f64> = result.per_n.iter().map(|s| s.q_rho).collect();
        let x: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
        let rs = spearman(&x, &q_rho);
        let decreasing = q_rho.last() < q_rho.first() && rs <= -0.8;
        Self { n_grid, q_rho, spearman: rs, decreasing }
    }
}

pub fn consistency_curve(config: &RateConfig, workers: Option<usize>) -> Result<ConsistencyCurve> {
    Ok(ConsistencyCurve::from_result(&run(config, workers)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub group: GroupSpec,
    pub theta_star: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    #[serde(default)]
    pub mle: FitConfig,
    pub master_seed: u64,
    pub fisher_n_mc: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub n: usize,
    pub trials: usize,
    /// Empirical covariance of `√n·(g_n θ̂ − θ*)`.
    pub covariance: Matrix,
    pub fisher_inverse: Matrix,
    pub frobenius_rel_dev: f64,
    /// Per coordinate, fraction of trials inside the nominal 95% interval.
    pub coverage: Vec<f64>,
}

/// Compares the spread of the aligned, √n-scaled estimation error with the
/// inverse of the Monte Carlo Fisher information.
pub fn normality_probe(config: &ProbeConfig, workers: Option<usize>) -> Result<NormalityReport> {
    if config.trials < 2 || config.n == 0 {
        return Err(invalid("normality probe needs n ≥ 1 and at least 2 trials"));
    }
    let group = Arc::new(config.group.build().map_err(|e| invalid(e.to_string()))?);
    let model = MixtureModel::new(group, config.theta_star.clone())?;
    let report = stabilizer_default(model.group(), model.theta())?;
    if !report.is_trivial() {
        return Err(Error::SingularFisher);
    }
    let d = model.dim();
    let root = StreamId::new(config.master_seed);
    let fisher = with_workers(workers, || fisher_mc(&model, config.fisher_n_mc, &root.child(0).rng()))??;
    if !fisher.is_definite() {
        return Err(Error::SingularFisher);
    }
    let inv = spd_inverse(&fisher.matrix).map_err(|_| Error::SingularFisher)?;
    let scale = (config.n as f64).sqrt();
    let zs = with_workers(workers, || {
        (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let base = root.child(1).child(t as u64);
                let data = model.sample(config.n, &mut base.child(STREAM_SAMPLE).rng());
                let res = fit(model.group(), &data, &config.mle, &base.child(STREAM_FIT).rng())?;
                let (_, aligned) = align(model.group(), &res.theta_hat, model.theta())?;
                Ok(aligned.iter().zip(model.theta()).map(|(a, b)| scale * (a - b)).collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let t = zs.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| zs.iter().map(|z| z[j]).sum::<f64>() / t).collect();
    let mut cov = Matrix::zeros(d, d);
    for z in &zs {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (z[i] - mean[i]) * (z[j] - mean[j]) / (t - 1.0);
            }
        }
    }
    let frobenius_rel_dev = cov.sub(&inv).frobenius() / inv.frobenius();
    let coverage = (0..d)
        .map(|j| {
            let half = 1.959_963_984_540_054 * inv[(j, j)].sqrt();
            zs.iter().filter(|z| z[j].abs() <= half).count() as f64 / t
        })
        .collect();
    Ok(NormalityReport { n: config.n, trials: config.trials, covariance: cov, fisher_inverse: inv, frobenius_rel_dev, coverage })
}
