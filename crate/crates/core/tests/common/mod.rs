#![allow(dead_code)]

use std::sync::Arc;

use mra_lab::group::{make_group, FiniteIsometryGroup, GroupKind};
use mra_lab::linalg::Matrix;
use mra_lab::MixtureModel;

pub fn group(kind: GroupKind, d: usize) -> Arc<FiniteIsometryGroup> {
    Arc::new(make_group(kind, d, None).unwrap())
}

pub fn model(kind: GroupKind, theta: Vec<f64>) -> MixtureModel {
    MixtureModel::new(group(kind, theta.len()), theta).unwrap()
}

/// The rotation group of the square acting on ℝ², given as dense matrices.
pub fn square_rotations() -> Arc<FiniteIsometryGroup> {
    let rot = |k: i32| {
        let a = std::f64::consts::FRAC_PI_2 * k as f64;
        let (s, c) = (a.sin().round(), a.cos().round());
        Matrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap()
    };
    Arc::new(make_group(GroupKind::Custom, 2, Some((0..4).map(rot).collect())).unwrap())
}

/// Groups exercised by the randomized oracle tests.
pub fn test_groups() -> Vec<Arc<FiniteIsometryGroup>> {
    vec![
        group(GroupKind::Trivial, 2),
        group(GroupKind::SignFlip, 3),
        group(GroupKind::DiagSigns, 3),
        group(GroupKind::Cyclic, 4),
        group(GroupKind::Permutations, 3),
        square_rotations(),
    ]
}
