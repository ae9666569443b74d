//! Maximum-likelihood estimation of θ* (unit noise level) by EM with
//! multistart, optional gradient-ascent polishing, and orbit alignment.
//!
//! For this model the EM map is `θ⁺ = n⁻¹ Σ_i Σ_g r_ig gᵀy_i`, and since
//! `gᵀg = I` the mean score is exactly `θ⁺ − θ`: one pass over the data
//! yields the log-likelihood, the gradient and the EM update together.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::group::FiniteIsometryGroup;
use crate::linalg::{dist_sq, norm};
use crate::model::{log_sum_exp_in_place, rho};
use crate::rng::RngStream;
use crate::stats::Sum;

const LOG_TWO_PI: f64 = 1.837_877_066_409_345_5;
const RESTART_JITTER_SD: f64 = 0.316_227_766_016_837_94; // √0.1
const POLISH_GRAD_TOL: f64 = 1e-8;
const POLISH_MAX_ITER: usize = 500;
const ARMIJO: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    #[serde(rename = "restarts")]
    pub n_restarts: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub polish: bool,
    #[serde(skip)]
    pub record_trace: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { n_restarts: 8, max_iter: 500, rel_tol: 1e-10, polish: true, record_trace: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MLEResult {
    pub theta_hat: Vec<f64>,
    /// Empirical log-likelihood (mean over observations) at `theta_hat`.
    pub loglik: f64,
    /// EM iterations of the winning restart.
    pub n_iter: usize,
    pub polish_iter: usize,
    pub n_restarts_used: usize,
    pub converged: bool,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
}

/// One pass over the data at θ.
struct Pass {
    loglik: f64,
    /// EM update; `em_next − θ` is the gradient of the empirical loglik.
    em_next: Vec<f64>,
}

struct EmWorkspace<'a> {
    group: &'a FiniteIsometryGroup,
    data: &'a Dataset,
    orbit: Vec<f64>,
    weights: Vec<f64>,
    sums: Vec<f64>,
    log_const: f64,
}

impl<'a> EmWorkspace<'a> {
    fn new(group: &'a FiniteIsometryGroup, data: &'a Dataset) -> Self {
        let (k, d) = (group.order(), group.dim());
        Self {
            group,
            data,
            orbit: vec![0.0; k * d],
            weights: vec![0.0; k],
            sums: vec![0.0; k * d],
            log_const: -(k as f64).ln() - 0.5 * d as f64 * LOG_TWO_PI,
        }
    }

    fn pass(&mut self, theta: &[f64]) -> Pass {
        let d = self.group.dim();
        for (g, c) in self.group.elements().iter().zip(self.orbit.chunks_exact_mut(d)) {
            g.apply_into(theta, c);
        }
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        let mut ll = Sum::default();
        for y in self.data.rows() {
            for (l, c) in self.weights.iter_mut().zip(self.orbit.chunks_exact(d)) {
                *l = -0.5 * dist_sq(y, c);
            }
            ll.add(log_sum_exp_in_place(&mut self.weights));
            let total: f64 = self.weights.iter().sum();
            for (&w, s) in self.weights.iter().zip(self.sums.chunks_exact_mut(d)) {
                let r = w / total;
                for (a, &b) in s.iter_mut().zip(y) {
                    *a += r * b;
                }
            }
        }
        let n = self.data.len() as f64;
        let mut next = vec![0.0; d];
        for (g, s) in self.group.elements().iter().zip(self.sums.chunks_exact(d)) {
            g.transpose_apply_add(s, 1.0 / n, &mut next);
        }
        Pass { loglik: ll.value() / n + self.log_const, em_next: next }
    }
}

fn check_inputs(group: &FiniteIsometryGroup, data: &Dataset) -> Result<()> {
    check_dim(group.dim(), data.dim())?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// One EM update from θ. Never decreases the empirical log-likelihood.
pub fn em_step(group: &FiniteIsometryGroup, data: &Dataset, theta: &[f64]) -> Result<Vec<f64>> {
    check_inputs(group, data)?;
    check_dim(group.dim(), theta.len())?;
    Ok(EmWorkspace::new(group, data).pass(theta).em_next)
}

struct RunOutcome {
    theta: Vec<f64>,
    loglik: f64,
    n_iter: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn run_em(ws: &mut EmWorkspace, start: Vec<f64>, config: &FitConfig) -> RunOutcome {
    let mut theta = start;
    let mut trace = Vec::new();
    let mut prev: Option<f64> = None;
    let mut n_iter = 0;
    let mut converged = false;
    let mut pass = ws.pass(&theta);
    loop {
        trace.push(pass.loglik);
        if let Some(p) = prev {
            if (pass.loglik - p).abs() <= config.rel_tol * p.abs() {
                converged = true;
                break;
            }
        }
        if n_iter >= config.max_iter {
            break;
        }
        prev = Some(pass.loglik);
        theta = std::mem::take(&mut pass.em_next);
        n_iter += 1;
        pass = ws.pass(&theta);
    }
    RunOutcome { theta, loglik: pass.loglik, n_iter, converged, trace }
}

/// Quasi-Newton (BFGS) ascent with Armijo backtracking, starting from the
/// identity metric, where a unit step is exactly an EM step. Returns
/// (θ, loglik, gradient norm, iterations).
fn polish(ws: &mut EmWorkspace, theta: Vec<f64>) -> (Vec<f64>, f64, f64, usize) {
    let d = theta.len();
    let identity = |h: &mut Vec<f64>| {
        h.iter_mut().for_each(|x| *x = 0.0);
        (0..d).for_each(|i| h[i * d + i] = 1.0);
    };
    let mut h = vec![0.0; d * d];
    identity(&mut h);
    let mut theta = theta;
    let mut pass = ws.pass(&theta);
    let mut grad: Vec<f64> = pass.em_next.iter().zip(&theta).map(|(a, b)| a - b).collect();
    let mut iters = 0;
    while iters < POLISH_MAX_ITER && norm(&grad) >= POLISH_GRAD_TOL {
        let mut dir: Vec<f64> = (0..d).map(|i| (0..d).map(|j| h[i * d + j] * grad[j]).sum()).collect();
        let mut slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also catches NaN
        if !(slope > 0.0) {
            identity(&mut h);
            dir = grad.clone();
            slope = grad.iter().map(|x| x * x).sum();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, p)| a + t * p).collect();
            let p = ws.pass(&cand);
            if p.loglik >= pass.loglik + ARMIJO * t * slope {
                accepted = Some((cand, p));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, p)) = accepted else { break };
        let new_grad: Vec<f64> = p.em_next.iter().zip(&cand).map(|(a, b)| a - b).collect();
        // curvature pair for the minimization of −Ψ̂
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad.iter().zip(&new_grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm(&s) * norm(&y) {
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..d).map(|i| (0..d).map(|j| h[i * d + j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        theta = cand;
        pass = p;
        grad = new_grad;
        iters += 1;
    }
    (theta, pass.loglik, norm(&grad), iters)
}

/// Multistart EM. Restart `r` draws its starting point from
/// `rng.derive(r)`: restart 0 starts at a random observation, later ones at
/// a random observation plus N(0, 0.1·I) jitter. The run with the highest
/// final log-likelihood wins and is optionally polished.
pub fn fit(
    group: &FiniteIsometryGroup,
    data: &Dataset,
    config: &FitConfig,
    rng: &RngStream,
) -> Result<MLEResult> {
    check_inputs(group, data)?;
    if config.n_restarts == 0 {
        return Err(Error::InvalidArgument("n_restarts must be at least 1".into()));
    }
    let mut ws = EmWorkspace::new(group, data);
    let mut best: Option<RunOutcome> = None;
    for r in 0..config.n_restarts {
        let mut stream = rng.derive(r as u64);
        let mut start = data.row(stream.index(data.len())).to_vec();
        if r > 0 {
            for x in start.iter_mut() {
                *x += RESTART_JITTER_SD * stream.normal();
            }
        }
        let out = run_em(&mut ws, start, config);
        if best.as_ref().is_none_or(|b| out.loglik > b.loglik) {
            best = Some(out);
        }
    }
    let best = best.expect("at least one restart");
    let (theta_hat, loglik, grad_norm, polish_iter) = if config.polish {
        polish(&mut ws, best.theta)
    } else {
        let p = ws.pass(&best.theta);
        let g = norm(&p.em_next.iter().zip(&best.theta).map(|(a, b)| a - b).collect::<Vec<_>>());
        (best.theta, p.loglik, g, 0)
    };
    Ok(MLEResult {
        theta_hat,
        loglik,
        n_iter: best.n_iter,
        polish_iter,
        n_restarts_used: config.n_restarts,
        converged: best.converged || grad_norm < POLISH_GRAD_TOL,
        grad_norm,
        trace: config.record_trace.then_some(best.trace),
    })
}

/// Orbit alignment: `g_n` minimizes `‖g·θ̂ − θ*‖`, returned with `g_n·θ̂`.
pub fn align(
    group: &FiniteIsometryGroup,
    theta_hat: &[f64],
    theta_star: &[f64],
) -> Result<(usize, Vec<f64>)> {
    let (_, g) = rho(group, theta_hat, theta_star)?;
    Ok((g, group.apply(g, theta_hat)?))
}
