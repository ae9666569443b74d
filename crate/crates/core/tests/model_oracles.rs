//! Pointwise model quantities against independent oracles: direct
//! summation of Gaussian densities and finite differences.

mod common;

use mra_lab::group::FiniteIsometryGroup;
use mra_lab::linalg::Matrix;
use mra_lab::{MixtureModel, RngStream, StreamId};

/// `log(|G|⁻¹ Σ_g φ_σ(y − gθ))` summed directly with dense matrices.
fn naive_log_density(g: &FiniteIsometryGroup, theta: &[f64], sigma: f64, y: &[f64]) -> f64 {
    let d = theta.len() as f64;
    let norm_const = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-d / 2.0);
    let total: f64 = (0..g.order())
        .map(|i| {
            let m: Matrix = g.element_matrix(i);
            let c = m.matvec(theta).unwrap();
            let r2: f64 = y.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            norm_const * (-r2 / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    (total / g.order() as f64).ln()
}

fn random_vec(rng: &mut RngStream, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.normal()).collect()
}

#[test]
fn density_matches_direct_sum() {
    let mut rng = StreamId::new(101).rng();
    for g in common::test_groups() {
        let d = g.dim();
        for _ in 0..100 {
            let theta = random_vec(&mut rng, d, 1.5);
            let sigma = 0.5 + rng.uniform();
            let m = MixtureModel::with_sigma(g.clone(), theta.clone(), sigma).unwrap();
            let y = random_vec(&mut rng, d, 2.0);
            let got = m.log_density(&y).unwrap();
            let want = naive_log_density(&g, &theta, sigma, &y);
            assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }
}

#[test]
fn score_matches_central_difference() {
    let h = 1e-6;
    let mut rng = StreamId::new(102).rng();
    for g in common::test_groups() {
        let d = g.dim();
        for _ in 0..100 {
            let theta = random_vec(&mut rng, d, 1.5);
            let sigma = 0.7 + 0.6 * rng.uniform();
            let m = MixtureModel::with_sigma(g.clone(), theta.clone(), sigma).unwrap();
            let y = random_vec(&mut rng, d, 2.0);
            let score = m.score(&y).unwrap();
            for j in 0..d {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd = (naive_log_density(&g, &tp, sigma, &y) - naive_log_density(&g, &tm, sigma, &y)) / (2.0 * h);
                assert!((fd - score[j]).abs() < 1e-5, "coordinate {j}: {fd} vs {}", score[j]);
            }
        }
    }
}

#[test]
fn hessian_quadform_matches_second_difference() {
    let h = 1e-4;
    let mut rng = StreamId::new(103).rng();
    for g in common::test_groups() {
        let d = g.dim();
        for _ in 0..100 {
            let theta = random_vec(&mut rng, d, 1.5);
            let m = MixtureModel::new(g.clone(), theta.clone()).unwrap();
            let y = random_vec(&mut rng, d, 2.0);
            let w = random_vec(&mut rng, d, 1.0);
            let at = |t: f64| {
                let th: Vec<f64> = theta.iter().zip(&w).map(|(a, b)| a + t * b).collect();
                m.at(th).unwrap().log_density(&y).unwrap()
            };
            let fd = (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
            let q = m.hessian_quadform(&y, &w).unwrap();
            assert!((fd - q).abs() <= 1e-4 * (1.0 + q.abs()), "{fd} vs {q}");
            // full matrix agrees with the quadratic form
            let hm = m.evaluate(&y).unwrap().hessian();
            let hw = hm.matvec(&w).unwrap();
            let q2: f64 = w.iter().zip(&hw).map(|(a, b)| a * b).sum();
            assert!((q - q2).abs() < 1e-10 * (1.0 + q.abs()));
        }
    }
}

#[test]
fn trivial_group_reduces_to_gaussian_location() {
    let g = common::group(mra_lab::GroupKind::Trivial, 3);
    let m = MixtureModel::new(g, vec![0.5, -1.0, 2.0]).unwrap();
    let y = [1.0, 1.0, 1.0];
    let w = [0.3, -0.4, 1.2];
    let s = m.score(&y).unwrap();
    assert_eq!(s, vec![0.5, 2.0, -1.0]);
    let q = m.hessian_quadform(&y, &w).unwrap();
    assert!((q + (0.09 + 0.16 + 1.44)).abs() < 1e-14);
}

#[test]
fn symmetric_point_hessian_is_y_squared_minus_one() {
    // G = {±1}, θ = 0: log L = log cosh(θy) − (y² + θ²)/2 + c, so the
    // second derivative at 0 is y² − 1
    let m = common::model(mra_lab::GroupKind::SignFlip, vec![0.0]);
    for y in [-2.5, -0.3, 0.0, 0.7, 3.1] {
        let q = m.hessian_quadform(&[y], &[1.0]).unwrap();
        assert!((q - (y * y - 1.0)).abs() < 1e-13);
        assert_eq!(m.score(&[y]).unwrap(), vec![0.0]);
    }
}
