//! Monte Carlo estimates of population quantities at θ*: the Fisher
//! information and its null space, the quartic curvature along null
//! directions, the population log-likelihood gap, and a suite of numerical
//! identity checks on the derivatives of `Ψ(θ) = E_θ* log L(Y, θ)`.
//!
//! Draws are produced in fixed-size chunks, each from its own derived stream,
//! and reduced in chunk order, so results depend on the seed but not on the
//! number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, max_principal_angle, norm, symmetric_eigen, Matrix};
use crate::model::{MixtureModel, PointEval};
use crate::rng::RngStream;
use crate::stabilizer::{stabilizer_default, StabilizerReport};
use crate::stats::{covariance, mean, std_error, variance_with_se, Estimate};

pub const MC_CHUNK: usize = 8192;
pub const FD_STEP: f64 = 0.1;
pub const MAX_NULL_ANGLE: f64 = 0.02;

const MIN_FISHER_DRAWS: usize = 1_000;
const MIN_SUITE_DRAWS: usize = 10_000;
const POINTWISE_TOL: f64 = 1e-10;
// stencils that cancel by symmetry leave only rounding residue
const ROUNDING_FLOOR: f64 = 1e-12;

// stream ids used inside identity_checks
const STREAM_MAIN: u64 = 0;
const STREAM_DIRECTIONS: u64 = 1;
const STREAM_POINTWISE: u64 = 2;
const STREAM_FD3: u64 = 3;
const STREAM_FD4: u64 = 4;

/// Runs `f(stream, offset, len)` once per chunk of `n` draws; chunk `c`
/// uses `rng.derive(c)`. Output is in chunk order.
pub(crate) fn par_chunks<T, F>(n: usize, rng: &RngStream, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut RngStream, usize, usize) -> T + Sync,
{
    let chunks = n.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(n - c * MC_CHUNK);
            f(&mut rng.derive(c as u64), c * MC_CHUNK, len)
        })
        .collect()
}

/// Evaluates `f` on `n` draws from the model, returning one value per draw.
fn sample_map<F>(model: &MixtureModel, n: usize, rng: &RngStream, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut PointEval) -> f64 + Sync,
{
    let d = model.dim();
    par_chunks(n, rng, |stream, _, len| {
        let mut y = vec![0.0; d];
        let mut noise = vec![0.0; d];
        let mut ev = PointEval::new(d, model.group().order());
        (0..len)
            .map(|_| {
                model.sample_into(stream, &mut y, &mut noise);
                f(&y, &mut ev)
            })
            .collect::<Vec<f64>>()
    })
    .concat()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherEstimate {
    pub matrix: Matrix,
    pub n_mc: usize,
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, in the order of `eigenvalues`.
    pub eigenvectors: Matrix,
    pub null_basis: Matrix,
    pub se_max: f64,
    pub threshold: f64,
}

impl FisherEstimate {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn null_dim(&self) -> usize {
        self.null_basis.cols()
    }

    pub fn is_definite(&self) -> bool {
        self.null_dim() == 0
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

/// Score covariance under `ℙ_θ*` from `n_mc` draws, with its eigensystem and
/// numerical null space (eigenvalues at or below
/// `max(1e-6·λ_max, 10·se_max)`).
pub fn fisher_mc(model: &MixtureModel, n_mc: usize, rng: &RngStream) -> Result<FisherEstimate> {
    if n_mc < MIN_FISHER_DRAWS {
        return Err(Error::InvalidArgument(format!("n_mc must be at least {MIN_FISHER_DRAWS}")));
    }
    let d = model.dim();
    let k = model.group().order();
    // per chunk: Σs, Σssᵀ, Σ(s_i s_j)²
    let parts = par_chunks(n_mc, rng, |stream, _, len| {
        let mut y = vec![0.0; d];
        let mut noise = vec![0.0; d];
        let mut s = vec![0.0; d];
        let mut ev = PointEval::new(d, k);
        let mut first = vec![0.0; d];
        let mut second = vec![0.0; d * d];
        let mut fourth = vec![0.0; d * d];
        for _ in 0..len {
            model.sample_into(stream, &mut y, &mut noise);
            model.evaluate_into(&y, &mut ev);
            ev.score_into(&mut s);
            for i in 0..d {
                first[i] += s[i];
                for j in 0..d {
                    let p = s[i] * s[j];
                    second[i * d + j] += p;
                    fourth[i * d + j] += p * p;
                }
            }
        }
        (first, second, fourth)
    });
    let mut first = vec![0.0; d];
    let mut second = vec![0.0; d * d];
    let mut fourth = vec![0.0; d * d];
    for (f, s, q) in &parts {
        first.iter_mut().zip(f).for_each(|(a, b)| *a += b);
        second.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        fourth.iter_mut().zip(q).for_each(|(a, b)| *a += b);
    }
    let n = n_mc as f64;
    let m: Vec<f64> = first.iter().map(|x| x / n).collect();
    let mut matrix = Matrix::zeros(d, d);
    let mut se_max: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let e2 = second[i * d + j] / n;
            matrix[(i, j)] = e2 - m[i] * m[j];
            let var = (fourth[i * d + j] / n - e2 * e2).max(0.0);
            se_max = se_max.max((var / n).sqrt());
        }
    }
    matrix.symmetrize();
    let eig = symmetric_eigen(&matrix)?;
    let lambda_max = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let threshold = (1e-6 * lambda_max).max(10.0 * se_max);
    let null_cols: Vec<Vec<f64>> = (0..d)
        .filter(|&c| eig.values[c] <= threshold)
        .map(|c| eig.vectors.column(c))
        .collect();
    Ok(FisherEstimate {
        matrix,
        n_mc,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        null_basis: Matrix::from_columns(d, &null_cols),
        se_max,
        threshold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pass: bool,
    pub fisher_null_dim: usize,
    pub projector_null_dim: usize,
    /// Largest principal angle in radians; π/2 when the dimensions differ.
    pub max_angle: f64,
}

/// Compares the numerical null space of the Fisher estimate with `null(B̄)`.
pub fn check_theorem1(fisher: &FisherEstimate, report: &StabilizerReport) -> Result<MatchReport> {
    check_dim(report.dim(), fisher.dim())?;
    let exact = report.null_basis();
    let (a, b) = (fisher.null_dim(), exact.cols());
    let max_angle = if a == b {
        max_principal_angle(&fisher.null_basis, &exact)?
    } else {
        std::f64::consts::FRAC_PI_2
    };
    Ok(MatchReport {
        pass: a == b && max_angle <= MAX_NULL_ANGLE,
        fisher_null_dim: a,
        projector_null_dim: b,
        max_angle,
    })
}

fn null_direction_check(model: &MixtureModel, w: &[f64]) -> Result<StabilizerReport> {
    check_dim(model.dim(), w.len())?;
    let report = stabilizer_default(model.group(), model.theta())?;
    let bw = report.projector_apply(w);
    let residual = norm(&bw);
    if residual > 1e-8 * norm(w) {
        return Err(Error::NotANullDirection { residual });
    }
    Ok(report)
}

/// `d⁴Ψ(θ*)(w,w,w,w) = −3·Var[wᵀHw + (wᵀs)²]` for a direction in
/// `null(B̄)`. The standard error is that of the variance estimate.
pub fn quartic_curvature(
    model: &MixtureModel,
    w: &[f64],
    n_mc: usize,
    rng: &RngStream,
) -> Result<Estimate> {
    null_direction_check(model, w)?;
    if norm(w) == 0.0 {
        return Ok(Estimate { value: 0.0, se: 0.0 });
    }
    if n_mc < 2 {
        return Err(Error::InvalidArgument("n_mc must be at least 2".into()));
    }
    let values = sample_map(model, n_mc, rng, |y, ev| {
        model.evaluate_into(y, ev);
        let ws = ev.directional_score(w);
        ev.hessian_quadform(w) + ws * ws
    });
    let v = variance_with_se(&values);
    Ok(Estimate { value: -3.0 * v.value, se: 3.0 * v.se })
}

/// Mean over draws `Y ~ ℙ_θ*` of `Σ_k c_k (log L(Y, θ_k) − log L(Y, θ*))`,
/// all terms sharing the same draws.
pub fn stencil(
    model_star: &MixtureModel,
    points: &[(f64, Vec<f64>)],
    n_mc: usize,
    rng: &RngStream,
) -> Result<Estimate> {
    if n_mc < 2 {
        return Err(Error::InvalidArgument("n_mc must be at least 2".into()));
    }
    let models = points
        .iter()
        .map(|(c, theta)| Ok((*c, model_star.at(theta.clone())?)))
        .collect::<Result<Vec<_>>>()?;
    let d = model_star.dim();
    let k = model_star.group().order();
    let values = sample_map(model_star, n_mc, rng, |y, _| {
        let mut sy = vec![0.0; d];
        let mut logits = vec![0.0; k];
        let base = model_star.log_density_with(y, &mut sy, &mut logits);
        models.iter().map(|(c, m)| c * (m.log_density_with(y, &mut sy, &mut logits) - base)).sum()
    });
    Ok(Estimate { value: mean(&values), se: std_error(&values) })
}

/// `Ψ(θ) − Ψ(θ*)` with common random numbers. Returns `(gap, se)`.
pub fn population_gap(
    model: &MixtureModel,
    theta: &[f64],
    theta_star: &[f64],
    n_mc: usize,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    check_dim(model.dim(), theta.len())?;
    if n_mc < MIN_FISHER_DRAWS {
        return Err(Error::InvalidArgument(format!("n_mc must be at least {MIN_FISHER_DRAWS}")));
    }
    let star = model.at(theta_star.to_vec())?;
    let est = stencil(&star, &[(1.0, theta.to_vec())], n_mc, rng)?;
    Ok((est.value, est.se))
}

fn ray(theta: &[f64], a: f64, v: &[f64], b: f64, w: &[f64]) -> Vec<f64> {
    theta.iter().zip(v).zip(w).map(|((t, x), y)| t + a * x + b * y).collect()
}

/// Central fourth difference of `Ψ(θ* + t·w)` at `t = 0`.
pub fn fourth_difference(model: &MixtureModel, w: &[f64], h: f64, n_mc: usize, rng: &RngStream) -> Result<Estimate> {
    check_dim(model.dim(), w.len())?;
    let th = model.theta();
    let zero = vec![0.0; th.len()];
    let s = 1.0 / h.powi(4);
    let pts = vec![
        (s, ray(th, 2.0 * h, w, 0.0, &zero)),
        (-4.0 * s, ray(th, h, w, 0.0, &zero)),
        (-4.0 * s, ray(th, -h, w, 0.0, &zero)),
        (s, ray(th, -2.0 * h, w, 0.0, &zero)),
    ];
    stencil(model, &pts, n_mc, rng)
}

/// Finite-difference `∂_v ∂_w² Ψ(θ*)`.
pub fn mixed_third_difference(
    model: &MixtureModel,
    v: &[f64],
    w: &[f64],
    h: f64,
    n_mc: usize,
    rng: &RngStream,
) -> Result<Estimate> {
    let th = model.theta();
    let s = 1.0 / (2.0 * h.powi(3));
    let pts = vec![
        (s, ray(th, h, v, h, w)),
        (-2.0 * s, ray(th, h, v, 0.0, w)),
        (s, ray(th, h, v, -h, w)),
        (-s, ray(th, -h, v, h, w)),
        (2.0 * s, ray(th, -h, v, 0.0, w)),
        (-s, ray(th, -h, v, -h, w)),
    ];
    stencil(model, &pts, n_mc, rng)
}

/// Finite-difference `∂_v ∂_w³ Ψ(θ*)`.
pub fn mixed_fourth_difference(
    model: &MixtureModel,
    v: &[f64],
    w: &[f64],
    h: f64,
    n_mc: usize,
    rng: &RngStream,
) -> Result<Estimate> {
    let th = model.theta();
    let s = 1.0 / (4.0 * h.powi(4));
    let mut pts = Vec::with_capacity(8);
    for (a, sa) in [(h, 1.0), (-h, -1.0)] {
        for (b, cb) in [(2.0 * h, 1.0), (h, -2.0), (-h, 2.0), (-2.0 * h, -1.0)] {
            pts.push((sa * cb * s, ray(th, a, v, b, w)));
        }
    }
    stencil(model, &pts, n_mc, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// Set when the relevant subspace is empty and the check holds trivially.
    pub vacuous: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSuite {
    pub pass: bool,
    pub n_mc: usize,
    pub range_dim: usize,
    pub null_dim: usize,
    pub checks: Vec<CheckResult>,
}

impl CheckSuite {
    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn random_unit_in(basis: &Matrix, stream: &mut RngStream) -> Vec<f64> {
    let d = basis.rows();
    if basis.cols() == 0 {
        return vec![0.0; d];
    }
    loop {
        let coef: Vec<f64> = (0..basis.cols()).map(|_| stream.normal()).collect();
        let v = basis.matvec(&coef).expect("shapes agree");
        let nv = norm(&v);
        if nv > 1e-6 {
            return v.iter().map(|x| x / nv).collect();
        }
    }
}

const PAIRS_FOR_POSITIVITY: usize = 50;
const POSITIVITY_DRAWS: usize = 20_000;
const POINTWISE_DIRECTIONS: usize = 10;
const POINTWISE_POINTS: usize = 1_000;

/// Runs the score and derivative identity checks at θ*:
///
/// - `mean_score`: `‖E s‖ ≤ 4·se`
/// - `pointwise_null_score`: `wᵀs(y) = 0` for null `w` and arbitrary `y`
/// - `third_derivative`: FD `d³Ψ(v,w,w)` against `−cov(vᵀs, wᵀHw)`
/// - `fourth_derivative_mixed`: FD `d⁴Ψ(v,w,w,w)` consistent with 0
/// - `lower_bound_positivity`: `Var[2vᵀs + wᵀHw] > 0` over random pairs
pub fn identity_checks(
    model: &MixtureModel,
    report: &StabilizerReport,
    n_mc: usize,
    rng: &RngStream,
) -> Result<CheckSuite> {
    check_dim(report.dim(), model.dim())?;
    if n_mc < MIN_SUITE_DRAWS {
        return Err(Error::InvalidArgument(format!("n_mc must be at least {MIN_SUITE_DRAWS}")));
    }
    let d = model.dim();
    let range = report.range_basis();
    let null = report.null_basis();
    let mut dirs = rng.derive(STREAM_DIRECTIONS);
    let v = random_unit_in(&range, &mut dirs);
    let w = random_unit_in(&null, &mut dirs);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..PAIRS_FOR_POSITIVITY)
        .map(|_| (random_unit_in(&range, &mut dirs), random_unit_in(&null, &mut dirs)))
        .collect();
    let has_pair = range.cols() > 0 && null.cols() > 0;
    let mut checks = Vec::new();

    // one pass: score moments, (vᵀs, wᵀHw) pairs, positivity samples
    struct Chunk {
        scores: Vec<f64>,
        vs: Vec<f64>,
        whw: Vec<f64>,
        pos: Vec<Vec<f64>>,
    }
    let main = rng.derive(STREAM_MAIN);
    let chunks = par_chunks(n_mc, &main, |stream, start, len| {
        let mut y = vec![0.0; d];
        let mut noise = vec![0.0; d];
        let mut s = vec![0.0; d];
        let mut ev = PointEval::new(d, model.group().order());
        let mut out = Chunk {
            scores: Vec::with_capacity(len * d),
            vs: Vec::with_capacity(len),
            whw: Vec::with_capacity(len),
            pos: vec![Vec::new(); PAIRS_FOR_POSITIVITY],
        };
        for i in 0..len {
            model.sample_into(stream, &mut y, &mut noise);
            model.evaluate_into(&y, &mut ev);
            ev.score_into(&mut s);
            out.scores.extend_from_slice(&s);
            out.vs.push(dot(&v, &s));
            out.whw.push(ev.hessian_quadform(&w));
            if start + i < POSITIVITY_DRAWS {
                for (p, (pv, pw)) in out.pos.iter_mut().zip(&pairs) {
                    p.push(2.0 * dot(pv, &s) + ev.hessian_quadform(pw));
                }
            }
        }
        out
    });

    // (a)
    let n = n_mc as f64;
    let mut m = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for c in &chunks {
        for s in c.scores.chunks_exact(d) {
            for j in 0..d {
                m[j] += s[j];
                sq[j] += s[j] * s[j];
            }
        }
    }
    let se2: f64 = (0..d)
        .map(|j| {
            let mj = m[j] / n;
            ((sq[j] / n - mj * mj).max(0.0) * n / (n - 1.0)) / n
        })
        .sum();
    let mean_norm = norm(&m.iter().map(|x| x / n).collect::<Vec<_>>());
    let bound = 4.0 * se2.sqrt();
    checks.push(CheckResult {
        name: "mean_score".into(),
        pass: mean_norm <= bound,
        vacuous: false,
        value: mean_norm,
        bound,
        detail: "norm of the mean score against 4 standard errors".into(),
    });

    // (b)
    let mut worst: f64 = 0.0;
    if null.cols() > 0 {
        let mut stream = rng.derive(STREAM_POINTWISE);
        let scale = 3.0 + norm(model.theta());
        let mut ev = PointEval::new(d, model.group().order());
        let ws: Vec<Vec<f64>> = (0..POINTWISE_DIRECTIONS).map(|_| random_unit_in(&null, &mut stream)).collect();
        for _ in 0..POINTWISE_POINTS {
            let y: Vec<f64> = (0..d).map(|_| scale * stream.normal()).collect();
            model.evaluate_into(&y, &mut ev);
            for wk in &ws {
                worst = worst.max(ev.directional_score(wk).abs());
            }
        }
    }
    checks.push(CheckResult {
        name: "pointwise_null_score".into(),
        pass: worst <= POINTWISE_TOL,
        vacuous: null.cols() == 0,
        value: worst,
        bound: POINTWISE_TOL,
        detail: format!("max |wᵀs(y)| over {POINTWISE_POINTS} points and {POINTWISE_DIRECTIONS} null directions"),
    });

    // (c), (d)
    if has_pair {
        let vs: Vec<f64> = chunks.iter().flat_map(|c| c.vs.iter().copied()).collect();
        let whw: Vec<f64> = chunks.iter().flat_map(|c| c.whw.iter().copied()).collect();
        let cov = covariance(&vs, &whw);
        let (mv, mw) = (mean(&vs), mean(&whw));
        let prods: Vec<f64> = vs.iter().zip(&whw).map(|(a, b)| (a - mv) * (b - mw)).collect();
        let cov_se = std_error(&prods);
        let fd3 = mixed_third_difference(model, &v, &w, FD_STEP, n_mc, &rng.derive(STREAM_FD3))?;
        let diff = (fd3.value + cov).abs();
        let bound = 3.0 * (fd3.se * fd3.se + cov_se * cov_se).sqrt();
        checks.push(CheckResult {
            name: "third_derivative".into(),
            pass: diff <= bound,
            vacuous: false,
            value: diff,
            bound,
            detail: format!("finite difference {:.6} vs -cov {:.6}", fd3.value, -cov),
        });
        let fd4 = mixed_fourth_difference(model, &v, &w, FD_STEP, n_mc, &rng.derive(STREAM_FD4))?;
        checks.push(CheckResult {
            name: "fourth_derivative_mixed".into(),
            pass: fd4.value.abs() <= 3.0 * fd4.se + ROUNDING_FLOOR,
            vacuous: false,
            value: fd4.value.abs(),
            bound: 3.0 * fd4.se + ROUNDING_FLOOR,
            detail: format!("finite difference {:.6} (se {:.6})", fd4.value, fd4.se),
        });
    } else {
        for name in ["third_derivative", "fourth_derivative_mixed"] {
            checks.push(CheckResult {
                name: name.into(),
                pass: true,
                vacuous: true,
                value: 0.0,
                bound: 0.0,
                detail: "range or null space of the projector is empty".into(),
            });
        }
    }

    // (e)
    let mut lowest = f64::INFINITY;
    for p in 0..PAIRS_FOR_POSITIVITY {
        let xs: Vec<f64> = chunks.iter().flat_map(|c| c.pos[p].iter().copied()).collect();
        let est = variance_with_se(&xs);
        lowest = lowest.min(est.value - 3.0 * est.se);
    }
    checks.push(CheckResult {
        name: "lower_bound_positivity".into(),
        pass: lowest > 0.0,
        vacuous: false,
        value: lowest,
        bound: 0.0,
        detail: format!("min over {PAIRS_FOR_POSITIVITY} unit pairs of Var - 3 se"),
    });

    Ok(CheckSuite {
        pass: checks.iter().all(|c| c.pass),
        n_mc,
        range_dim: range.cols(),
        null_dim: null.cols(),
        checks,
    })
}
