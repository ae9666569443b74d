//! The group-invariant Gaussian mixture `ℙ_θ = |G|⁻¹ Σ_g N(gθ, σ²I)`.
//!
//! Every pointwise quantity (density, score, Hessian) is computed from one
//! evaluation of the max-shifted mixture weights, so the three stay
//! numerically consistent. A non-unit σ is handled by rescaling `y/σ`, `θ/σ`.

use std::sync::Arc;

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::group::FiniteIsometryGroup;
use crate::linalg::{dist_sq, dot, Matrix};
use crate::rng::RngStream;
use crate::stabilizer::StabilizerReport;
use crate::stats::Sum;

const LOG_TWO_PI: f64 = 1.837_877_066_409_345_5;

/// Fixed-point scale of the order-independent exponential sum.
const EXP_SUM_SCALE: f64 = 1_267_650_600_228_229_401_496_703_205_376.0; // 2^100

/// `ln Σ_k exp(logit_k)`, with the weights `exp(logit_k − max)` written back
/// into `logits`.
///
/// The shifted terms are accumulated exactly on a 2⁻¹⁰⁰ grid, which makes the
/// result independent of the order of the terms: the likelihood at `gθ` then
/// equals the likelihood at `θ` to the last bit for signed-permutation groups.
#[inline]
pub(crate) fn log_sum_exp_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc: i128 = 0;
    for l in logits.iter_mut() {
        let e = (*l - max).exp();
        *l = e;
        acc += (e * EXP_SUM_SCALE) as i128;
    }
    max + ((acc as f64) / EXP_SUM_SCALE).ln()
}

#[derive(Clone, Debug)]
pub struct MixtureModel {
    group: Arc<FiniteIsometryGroup>,
    theta: Vec<f64>,
    sigma: f64,
    /// Orbit of θ/σ, |G|×d row-major.
    scaled_orbit: Vec<f64>,
}

impl MixtureModel {
    pub fn new(group: Arc<FiniteIsometryGroup>, theta: Vec<f64>) -> Result<Self> {
        Self::with_sigma(group, theta, 1.0)
    }

    pub fn with_sigma(group: Arc<FiniteIsometryGroup>, theta: Vec<f64>, sigma: f64) -> Result<Self> {
        check_dim(group.dim(), theta.len())?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("theta has non-finite entries".into()));
        }
        let scaled: Vec<f64> = theta.iter().map(|x| x / sigma).collect();
        let scaled_orbit = group.orbit(&scaled);
        Ok(Self { group, theta, sigma, scaled_orbit })
    }

    /// Same group and σ, different center.
    pub fn at(&self, theta: Vec<f64>) -> Result<Self> {
        Self::with_sigma(self.group.clone(), theta, self.sigma)
    }

    pub fn group(&self) -> &FiniteIsometryGroup {
        &self.group
    }

    pub fn group_arc(&self) -> &Arc<FiniteIsometryGroup> {
        &self.group
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    fn log_const(&self) -> f64 {
        let d = self.dim() as f64;
        -(self.group.order() as f64).ln() - 0.5 * d * LOG_TWO_PI - d * self.sigma.ln()
    }

    fn scaled_logits(&self, y: &[f64], scaled_y: &mut [f64], logits: &mut [f64]) {
        let d = self.dim();
        for (s, &v) in scaled_y.iter_mut().zip(y) {
            *s = v / self.sigma;
        }
        for (l, c) in logits.iter_mut().zip(self.scaled_orbit.chunks_exact(d)) {
            *l = -0.5 * dist_sq(scaled_y, c);
        }
    }

    /// `log L(y, θ)`.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), y.len())?;
        let mut sy = vec![0.0; self.dim()];
        let mut logits = vec![0.0; self.group.order()];
        Ok(self.log_density_with(y, &mut sy, &mut logits))
    }

    #[inline]
    pub(crate) fn log_density_with(&self, y: &[f64], sy: &mut [f64], logits: &mut [f64]) -> f64 {
        self.scaled_logits(y, sy, logits);
        log_sum_exp_in_place(logits) + self.log_const()
    }

    /// `Ψ̂_n(θ) = n⁻¹ Σ_i log L(Y_i, θ)`.
    pub fn empirical_loglik(&self, data: &Dataset) -> Result<f64> {
        check_dim(self.dim(), data.dim())?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sy = vec![0.0; self.dim()];
        let mut logits = vec![0.0; self.group.order()];
        let mut acc = Sum::default();
        for y in data.rows() {
            acc.add(self.log_density_with(y, &mut sy, &mut logits));
        }
        Ok(acc.value() / data.len() as f64)
    }

    /// Evaluates weights and per-component residual directions at `y`.
    pub fn evaluate(&self, y: &[f64]) -> Result<PointEval> {
        check_dim(self.dim(), y.len())?;
        let mut ev = PointEval::new(self.dim(), self.group.order());
        self.evaluate_into(y, &mut ev);
        Ok(ev)
    }

    /// Reuses the buffers of `ev`; `y` must have length d.
    pub fn evaluate_into(&self, y: &[f64], ev: &mut PointEval) {
        let d = self.dim();
        self.scaled_logits(y, &mut ev.scaled_y, &mut ev.weights);
        let lse = log_sum_exp_in_place(&mut ev.weights);
        ev.log_density = lse + self.log_const();
        let total: f64 = ev.weights.iter().sum();
        for w in ev.weights.iter_mut() {
            *w /= total;
        }
        // a_g = gᵀ(ỹ − g θ̃)
        for ((g, c), a) in self
            .group
            .elements()
            .iter()
            .zip(self.scaled_orbit.chunks_exact(d))
            .zip(ev.residuals.chunks_exact_mut(d))
        {
            for ((t, &yy), &cc) in ev.tmp.iter_mut().zip(&ev.scaled_y).zip(c) {
                *t = yy - cc;
            }
            g.transpose_apply_into(&ev.tmp, a);
        }
        ev.sigma = self.sigma;
    }

    /// `∂ log L / ∂θ (y, θ) = Σ_g softw_g · gᵀ(y − gθ)` (unit σ).
    pub fn score(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(y)?.score())
    }

    /// `wᵀ [∂² log L / ∂θ∂θᵀ](y, θ) w`.
    pub fn hessian_quadform(&self, y: &[f64], w: &[f64]) -> Result<f64> {
        check_dim(self.dim(), w.len())?;
        Ok(self.evaluate(y)?.hessian_quadform(w))
    }

    /// `n` draws `g·θ + σε`, g uniform on G, ε standard normal.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Dataset {
        let d = self.dim();
        let mut points = vec![0.0; n * d];
        let mut noise = vec![0.0; d];
        for row in points.chunks_exact_mut(d) {
            self.sample_into(rng, row, &mut noise);
        }
        Dataset::from_parts(d, points, Some(rng.id().clone())).expect("shape is consistent")
    }

    #[inline]
    pub(crate) fn sample_into(&self, rng: &mut RngStream, out: &mut [f64], noise: &mut [f64]) {
        let g = rng.index(self.group.order());
        self.group.element(g).apply_into(&self.theta, out);
        rng.fill_normal(noise);
        for (o, e) in out.iter_mut().zip(noise.iter()) {
            *o += self.sigma * e;
        }
    }
}

/// Mixture weights and residual directions at one observation.
#[derive(Clone, Debug)]
pub struct PointEval {
    pub log_density: f64,
    /// Normalized softmax weights, one per group element.
    pub weights: Vec<f64>,
    /// `a_g = gᵀ(y − gθ)` in σ-scaled coordinates, |G|×d row-major.
    residuals: Vec<f64>,
    scaled_y: Vec<f64>,
    tmp: Vec<f64>,
    sigma: f64,
    d: usize,
}

impl PointEval {
    pub fn new(d: usize, order: usize) -> Self {
        Self {
            log_density: 0.0,
            weights: vec![0.0; order],
            residuals: vec![0.0; order * d],
            scaled_y: vec![0.0; d],
            tmp: vec![0.0; d],
            sigma: 1.0,
            d,
        }
    }

    pub fn score(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.d];
        self.score_into(&mut s);
        s
    }

    pub fn score_into(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (&w, a) in self.weights.iter().zip(self.residuals.chunks_exact(self.d)) {
            for (o, &ai) in out.iter_mut().zip(a) {
                *o += w * ai;
            }
        }
        for o in out.iter_mut() {
            *o /= self.sigma;
        }
    }

    /// `uᵀ·score`.
    pub fn directional_score(&self, u: &[f64]) -> f64 {
        let s: f64 = self
            .weights
            .iter()
            .zip(self.residuals.chunks_exact(self.d))
            .map(|(&w, a)| w * dot(a, u))
            .sum();
        s / self.sigma
    }

    /// `Σ_g w_g (uᵀa_g)² − (Σ_g w_g uᵀa_g)² − ‖u‖²`, scaled by σ⁻².
    pub fn hessian_quadform(&self, u: &[f64]) -> f64 {
        let mean = self.directional_score(u) * self.sigma;
        let spread: f64 = self
            .weights
            .iter()
            .zip(self.residuals.chunks_exact(self.d))
            .map(|(&w, a)| {
                let t = dot(a, u) - mean;
                w * t * t
            })
            .sum();
        (spread - dot(u, u)) / (self.sigma * self.sigma)
    }

    /// Full Hessian of `log L` in θ.
    pub fn hessian(&self) -> Matrix {
        let d = self.d;
        let s = self.score();
        let s_unit: Vec<f64> = s.iter().map(|x| x * self.sigma).collect();
        let mut h = Matrix::zeros(d, d);
        for (&w, a) in self.weights.iter().zip(self.residuals.chunks_exact(d)) {
            for i in 0..d {
                let wa = w * (a[i] - s_unit[i]);
                for j in 0..d {
                    h[(i, j)] += wa * (a[j] - s_unit[j]);
                }
            }
        }
        for i in 0..d {
            h[(i, i)] -= 1.0;
        }
        h.scale(1.0 / (self.sigma * self.sigma))
    }
}

/// Quotient distance `min_g ‖g·a − b‖` and its minimizer (smallest index on
/// ties).
pub fn rho(group: &FiniteIsometryGroup, a: &[f64], b: &[f64]) -> Result<(f64, usize)> {
    check_dim(group.dim(), a.len())?;
    check_dim(group.dim(), b.len())?;
    let mut image = vec![0.0; a.len()];
    let mut best = (f64::INFINITY, 0);
    for (i, g) in group.elements().iter().enumerate() {
        g.apply_into(a, &mut image);
        let dsq = dist_sq(&image, b);
        if dsq < best.0 {
            best = (dsq, i);
        }
    }
    Ok((best.0.sqrt(), best.1))
}

/// `√(‖v‖² + ‖w‖⁴)` where `g₀θ − θ* = v + w` is split by the stabilizer
/// projector of θ* and `g₀` minimizes `‖gθ − θ*‖`.
pub fn rho_star(
    theta: &[f64],
    report: &StabilizerReport,
    theta_star: &[f64],
    group: &FiniteIsometryGroup,
) -> Result<f64> {
    check_dim(report.dim(), theta_star.len())?;
    let (_, g0) = rho(group, theta, theta_star)?;
    let aligned = group.apply(g0, theta)?;
    let err: Vec<f64> = aligned.iter().zip(theta_star).map(|(a, b)| a - b).collect();
    let (v, w) = crate::stabilizer::decompose(&err, report)?;
    let w2 = dot(&w, &w);
    Ok((dot(&v, &v) + w2 * w2).sqrt())
}
