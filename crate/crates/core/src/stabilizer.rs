//! Stabilizer subgroup, mean projector and coset structure of a parameter.
//!
//! For θ ∈ ℝ^d the stabilizer `H(θ) = {g : gθ = θ}` is a subgroup of `G`,
//! and its mean `B̄ = |H|⁻¹ Σ_{h∈H} h` is the orthogonal projection onto the
//! subspace fixed by every element of `H`. That projector splits ℝ^d into the
//! directions the likelihood sees at second order (range) and those it only
//! sees at fourth order (null space).

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::group::FiniteIsometryGroup;
use crate::linalg::{norm, symmetric_eigen, Matrix};

pub const DEFAULT_TOL_REL: f64 = 1e-8;
pub const DEFAULT_TOL_ABS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilizerReport {
    pub theta: Vec<f64>,
    /// Sorted indices of the stabilizer elements.
    pub h_indices: Vec<usize>,
    pub projector: Matrix,
    pub projector_rank: usize,
    /// Left cosets `gH`, each sorted, ordered by smallest member.
    pub cosets: Vec<Vec<usize>>,
    /// `|G| / |H|`, the number of distinct orbit points.
    pub degree: usize,
    /// Membership threshold actually applied to `‖gθ − θ‖`.
    pub tol_used: f64,
}

impl StabilizerReport {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn is_trivial(&self) -> bool {
        self.h_indices.len() == 1
    }

    pub fn projector_apply(&self, u: &[f64]) -> Vec<f64> {
        self.projector.matvec(u).expect("dimension checked by caller")
    }

    /// Orthonormal basis of `null(B̄)`, one vector per column.
    pub fn null_basis(&self) -> Matrix {
        self.eigen_basis(|lam| lam < 0.5)
    }

    /// Orthonormal basis of `range(B̄)`.
    pub fn range_basis(&self) -> Matrix {
        self.eigen_basis(|lam| lam >= 0.5)
    }

    fn eigen_basis(&self, keep: impl Fn(f64) -> bool) -> Matrix {
        let d = self.dim();
        let eig = symmetric_eigen(&self.projector).expect("projector eigensolve");
        let cols: Vec<Vec<f64>> = (0..d)
            .filter(|&k| keep(eig.values[k]))
            .map(|k| eig.vectors.column(k))
            .collect();
        Matrix::from_columns(d, &cols)
    }

    /// `S̄ = |S|⁻¹ Σ_{g∈S} g` for one coset block.
    pub fn coset_mean(&self, group: &FiniteIsometryGroup, block: &[usize]) -> Matrix {
        mean_matrix(group, block)
    }
}

fn mean_matrix(group: &FiniteIsometryGroup, idx: &[usize]) -> Matrix {
    let d = group.dim();
    let mut acc = Matrix::zeros(d, d);
    for &i in idx {
        acc.add_assign(&group.element_matrix(i));
    }
    acc.scale(1.0 / idx.len() as f64)
}

pub fn stabilizer(
    group: &FiniteIsometryGroup,
    theta: &[f64],
    tol_rel: f64,
    tol_abs: f64,
) -> Result<StabilizerReport> {
    check_dim(group.dim(), theta.len())?;
    if !(tol_rel >= 0.0 && tol_abs >= 0.0) {
        return Err(Error::InvalidArgument("tolerances must be nonnegative".into()));
    }
    let threshold = tol_rel * norm(theta) + tol_abs;
    let d = group.dim();
    let mut image = vec![0.0; d];
    let mut h_indices = Vec::new();
    for (i, g) in group.elements().iter().enumerate() {
        g.apply_into(theta, &mut image);
        let gap = crate::linalg::dist_sq(&image, theta).sqrt();
        if gap >= threshold / 10.0 && gap <= 10.0 * threshold {
            return Err(Error::AmbiguousStabilizer { gap, threshold });
        }
        if gap <= threshold {
            h_indices.push(i);
        }
    }
    let is_subgroup = h_indices.contains(&group.identity_index())
        && h_indices.iter().all(|&a| {
            h_indices.binary_search(&group.invert(a)).is_ok()
                && h_indices.iter().all(|&b| h_indices.binary_search(&group.compose(a, b)).is_ok())
        });
    if !is_subgroup {
        return Err(Error::NotASubgroup);
    }

    let projector = mean_matrix(group, &h_indices);
    let projector_rank =
        symmetric_eigen(&projector)?.values.iter().filter(|&&lam| lam > 0.5).count();

    let mut assigned = vec![false; group.order()];
    let mut cosets = Vec::new();
    for g in 0..group.order() {
        if assigned[g] {
            continue;
        }
        let mut block: Vec<usize> = h_indices.iter().map(|&h| group.compose(g, h)).collect();
        block.sort_unstable();
        for &b in &block {
            assigned[b] = true;
        }
        cosets.push(block);
    }

    Ok(StabilizerReport {
        theta: theta.to_vec(),
        degree: group.order() / h_indices.len(),
        h_indices,
        projector,
        projector_rank,
        cosets,
        tol_used: threshold,
    })
}

/// Stabilizer with the default thresholds.
pub fn stabilizer_default(group: &FiniteIsometryGroup, theta: &[f64]) -> Result<StabilizerReport> {
    stabilizer(group, theta, DEFAULT_TOL_REL, DEFAULT_TOL_ABS)
}

/// Splits `u = v + w` with `v = B̄u` in the fixed subspace and `w` in its
/// orthogonal complement.
pub fn decompose(u: &[f64], report: &StabilizerReport) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(report.dim(), u.len())?;
    let v = report.projector_apply(u);
    let w = u.iter().zip(&v).map(|(a, b)| a - b).collect();
    Ok((v, w))
}

/// Whether a small move of θ along `u` splits colliding orbit points, i.e.
/// `u ∉ range(B̄)`.
pub fn increases_degree(u: &[f64], report: &StabilizerReport) -> Result<bool> {
    check_dim(report.dim(), u.len())?;
    let nu = norm(u);
    if nu == 0.0 {
        return Err(Error::ZeroDirection);
    }
    let (_, w) = decompose(u, report)?;
    Ok(norm(&w) > 1e-9 * nu)
}

/// Elements that move `theta_hat` by less than half the assumed separation
/// `inf_{g∉H} ‖gθ* − θ*‖`. Equals `H(θ*)` when `ρ(theta_hat, θ*)` is below a
/// quarter of the separation.
pub fn recover_stabilizer(
    theta_hat: &[f64],
    group: &FiniteIsometryGroup,
    separation: f64,
) -> Result<Vec<usize>> {
    check_dim(group.dim(), theta_hat.len())?;
    let mut image = vec![0.0; group.dim()];
    Ok(group
        .elements()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            g.apply_into(theta_hat, &mut image);
            (crate::linalg::dist_sq(&image, theta_hat).sqrt() < separation / 2.0).then_some(i)
        })
        .collect())
}
