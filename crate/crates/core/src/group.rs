//! Finite subgroups of the orthogonal group acting on ℝ^d.
//!
//! Built-in families are stored as signed permutations (every element of the
//! sign-flip, diagonal-sign, cyclic-shift and coordinate-permutation groups
//! has exactly one ±1 entry per row), which keeps the group law exact and
//! the action O(d). Their composition follows a closed-form rule on element
//! indices. Custom groups are stored densely with an eagerly built Cayley
//! table.
//!
//! Canonical element order (convention `canonical-v1`):
//! - `trivial`: `[I]`
//! - `sign_flip`: `[I, −I]`
//! - `diag_signs`: index `k` negates coordinate `j` iff bit `d−1−j` of `k`
//!   is set, i.e. sign patterns in lexicographic order with `+` before `−`
//! - `cyclic`: `[I, R, R², …, R^{d−1}]` with `(Ru)_i = u_{i+1 mod d}`
//! - `permutations`: `g_σ u = (u_σ(1), …, u_σ(d))`, σ in lexicographic
//!   one-line order
//! - `custom`: the order given by the caller

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Matrix};

pub const ORDERING_CONVENTION: &str = "canonical-v1";
pub const DEFAULT_MAX_ORDER: usize = 1_000_000;
pub const DEFAULT_VERIFY_TOL: f64 = 1e-10;

const MAX_PERMUTATION_DIM: usize = 8;
const MAX_DIAG_SIGNS_DIM: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Trivial,
    SignFlip,
    DiagSigns,
    Cyclic,
    Permutations,
    Custom,
}

/// One group element, an orthogonal d×d matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum IsometryMatrix {
    /// `(g u)_i = sign_i · u_{source_i}`.
    SignedPermutation { source: Vec<usize>, sign: Vec<f64> },
    Dense(Matrix),
}

impl IsometryMatrix {
    pub fn dim(&self) -> usize {
        match self {
            IsometryMatrix::SignedPermutation { source, .. } => source.len(),
            IsometryMatrix::Dense(m) => m.rows(),
        }
    }

    /// `out = g·u`.
    #[inline]
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        match self {
            IsometryMatrix::SignedPermutation { source, sign } => {
                for ((o, &s), &k) in out.iter_mut().zip(sign).zip(source) {
                    *o = s * u[k];
                }
            }
            IsometryMatrix::Dense(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot(m.row(i), u);
                }
            }
        }
    }

    /// `out = gᵀ·u`.
    #[inline]
    pub fn transpose_apply_into(&self, u: &[f64], out: &mut [f64]) {
        match self {
            IsometryMatrix::SignedPermutation { source, sign } => {
                for ((&ui, &s), &k) in u.iter().zip(sign).zip(source) {
                    out[k] = s * ui;
                }
            }
            IsometryMatrix::Dense(m) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (i, &ui) in u.iter().enumerate() {
                    for (o, &mij) in out.iter_mut().zip(m.row(i)) {
                        *o += mij * ui;
                    }
                }
            }
        }
    }

    /// `out += scale · gᵀ·u`.
    #[inline]
    pub fn transpose_apply_add(&self, u: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            IsometryMatrix::SignedPermutation { source, sign } => {
                for ((&ui, &s), &k) in u.iter().zip(sign).zip(source) {
                    out[k] += scale * s * ui;
                }
            }
            IsometryMatrix::Dense(m) => {
                for (i, &ui) in u.iter().enumerate() {
                    for (o, &mij) in out.iter_mut().zip(m.row(i)) {
                        *o += scale * mij * ui;
                    }
                }
            }
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        match self {
            IsometryMatrix::SignedPermutation { source, sign } => {
                let d = source.len();
                let mut m = Matrix::zeros(d, d);
                for i in 0..d {
                    m[(i, source[i])] = sign[i];
                }
                m
            }
            IsometryMatrix::Dense(m) => m.clone(),
        }
    }
}

#[derive(Clone, Debug)]
enum Law {
    /// Closed-form index arithmetic of a built-in family.
    Rule,
    /// Row-major |G|×|G| Cayley table.
    Table(Vec<u32>),
}

#[derive(Clone, Debug)]
pub struct FiniteIsometryGroup {
    dim: usize,
    kind: GroupKind,
    elements: Vec<IsometryMatrix>,
    identity_index: usize,
    law: Law,
    inverse: Vec<u32>,
    /// One-line permutations, only for `Permutations`.
    perms: Vec<Vec<usize>>,
}

impl FiniteIsometryGroup {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn elements(&self) -> &[IsometryMatrix] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &IsometryMatrix {
        &self.elements[i]
    }

    pub fn identity_index(&self) -> usize {
        self.identity_index
    }

    /// Index of `elements[i] · elements[j]`.
    pub fn compose(&self, i: usize, j: usize) -> usize {
        match &self.law {
            Law::Table(t) => t[i * self.order() + j] as usize,
            Law::Rule => match self.kind {
                GroupKind::Trivial => 0,
                GroupKind::SignFlip | GroupKind::DiagSigns => i ^ j,
                GroupKind::Cyclic => (i + j) % self.dim,
                GroupKind::Permutations => {
                    let (s, t) = (&self.perms[i], &self.perms[j]);
                    let prod: Vec<usize> = s.iter().map(|&k| t[k]).collect();
                    permutation_rank(&prod)
                }
                GroupKind::Custom => unreachable!("custom groups carry a table"),
            },
        }
    }

    pub fn invert(&self, i: usize) -> usize {
        self.inverse[i] as usize
    }

    pub fn apply(&self, i: usize, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, u.len())?;
        let mut out = vec![0.0; self.dim];
        self.elements[i].apply_into(u, &mut out);
        Ok(out)
    }

    pub fn element_matrix(&self, i: usize) -> Matrix {
        self.elements[i].to_matrix()
    }

    /// Orbit `{g·θ}` in element order, flattened row-major (|G|×d).
    pub fn orbit(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; self.order() * d];
        for (g, chunk) in self.elements.iter().zip(out.chunks_exact_mut(d)) {
            g.apply_into(theta, chunk);
        }
        out
    }

    /// Serializable description that rebuilds this group.
    pub fn to_spec(&self) -> GroupSpec {
        match self.kind {
            GroupKind::Custom => GroupSpec {
                kind: GroupKind::Custom,
                d: Some(self.dim),
                elements: Some(
                    self.elements.iter().map(|g| g.to_matrix().as_slice().to_vec()).collect(),
                ),
            },
            kind => GroupSpec { kind, d: Some(self.dim), elements: None },
        }
    }
}

/// Group description as it appears in configuration files:
/// `{"kind": "diag_signs", "d": 3}` or
/// `{"kind": "custom", "elements": [[row-major entries], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub kind: GroupKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elements: Option<Vec<Vec<f64>>>,
}

impl GroupSpec {
    pub fn builtin(kind: GroupKind, d: usize) -> Self {
        Self { kind, d: Some(d), elements: None }
    }

    pub fn build(&self) -> Result<FiniteIsometryGroup> {
        match self.kind {
            GroupKind::Custom => {
                let flat = self
                    .elements
                    .as_ref()
                    .ok_or_else(|| Error::ConfigInvalid("custom group needs `elements`".into()))?;
                let first = flat
                    .first()
                    .ok_or_else(|| Error::ConfigInvalid("custom group has no elements".into()))?;
                let d = (first.len() as f64).sqrt().round() as usize;
                if d * d != first.len() {
                    return Err(Error::ConfigInvalid(format!(
                        "element of length {} is not a square matrix",
                        first.len()
                    )));
                }
                if let Some(dd) = self.d {
                    if dd != d {
                        return Err(Error::ConfigInvalid(format!(
                            "`d` = {dd} disagrees with element size {d}"
                        )));
                    }
                }
                let mats = flat
                    .iter()
                    .map(|e| Matrix::from_row_major(d, d, e.clone()))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
                make_group(GroupKind::Custom, d, Some(mats))
            }
            kind => {
                if self.elements.is_some() {
                    return Err(Error::ConfigInvalid("`elements` is only valid for custom groups".into()));
                }
                let d = self.d.ok_or_else(|| Error::ConfigInvalid("group needs `d`".into()))?;
                make_group(kind, d, None)
            }
        }
    }
}

pub fn make_group(
    kind: GroupKind,
    d: usize,
    custom_elems: Option<Vec<Matrix>>,
) -> Result<FiniteIsometryGroup> {
    make_group_with_cap(kind, d, custom_elems, DEFAULT_MAX_ORDER)
}

pub fn make_group_with_cap(
    kind: GroupKind,
    d: usize,
    custom_elems: Option<Vec<Matrix>>,
    max_order: usize,
) -> Result<FiniteIsometryGroup> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    if kind != GroupKind::Custom && custom_elems.is_some() {
        return Err(Error::InvalidArgument("custom elements given for a built-in group".into()));
    }
    let order = match kind {
        GroupKind::Trivial => 1,
        GroupKind::SignFlip => 2,
        GroupKind::Cyclic => d,
        GroupKind::DiagSigns => {
            if d > MAX_DIAG_SIGNS_DIM {
                return Err(Error::InvalidArgument(format!(
                    "diag_signs supports d ≤ {MAX_DIAG_SIGNS_DIM}"
                )));
            }
            1usize << d
        }
        GroupKind::Permutations => {
            if d > MAX_PERMUTATION_DIM {
                return Err(Error::InvalidArgument(format!(
                    "permutations supports d ≤ {MAX_PERMUTATION_DIM}"
                )));
            }
            (1..=d).product()
        }
        GroupKind::Custom => custom_elems.as_ref().map_or(0, Vec::len),
    };
    if order > max_order {
        return Err(Error::SizeLimit { order, cap: max_order });
    }

    let signed = |source: Vec<usize>, sign: Vec<f64>| IsometryMatrix::SignedPermutation { source, sign };
    let ident: Vec<usize> = (0..d).collect();
    let mut perms = Vec::new();
    let (elements, inverse): (Vec<IsometryMatrix>, Vec<u32>) = match kind {
        GroupKind::Trivial => (vec![signed(ident, vec![1.0; d])], vec![0]),
        GroupKind::SignFlip => (
            vec![signed(ident.clone(), vec![1.0; d]), signed(ident, vec![-1.0; d])],
            vec![0, 1],
        ),
        GroupKind::DiagSigns => {
            let elems = (0..order)
                .map(|k| {
                    let sign = (0..d)
                        .map(|j| if (k >> (d - 1 - j)) & 1 == 1 { -1.0 } else { 1.0 })
                        .collect();
                    signed(ident.clone(), sign)
                })
                .collect();
            (elems, (0..order as u32).collect())
        }
        GroupKind::Cyclic => {
            let elems = (0..d)
                .map(|k| signed((0..d).map(|i| (i + k) % d).collect(), vec![1.0; d]))
                .collect();
            (elems, (0..d).map(|k| ((d - k) % d) as u32).collect())
        }
        GroupKind::Permutations => {
            perms = lexicographic_permutations(d);
            let elems = perms.iter().map(|p| signed(p.clone(), vec![1.0; d])).collect();
            let inv = perms
                .iter()
                .map(|p| {
                    let mut q = vec![0; d];
                    for (i, &pi) in p.iter().enumerate() {
                        q[pi] = i;
                    }
                    permutation_rank(&q) as u32
                })
                .collect();
            (elems, inv)
        }
        GroupKind::Custom => {
            let elems = custom_elems
                .ok_or_else(|| Error::InvalidArgument("custom group needs elements".into()))?;
            return build_custom(elems, max_order);
        }
    };
    Ok(FiniteIsometryGroup { dim: d, kind, elements, identity_index: 0, law: Law::Rule, inverse, perms })
}

fn build_custom(elems: Vec<Matrix>, max_order: usize) -> Result<FiniteIsometryGroup> {
    let report = verify_group(&elems, DEFAULT_VERIFY_TOL);
    if !report.pass {
        let msg: Vec<String> = report.violations.iter().take(5).map(|v| v.to_string()).collect();
        return Err(Error::NotAGroup(msg.join("; ")));
    }
    let order = elems.len();
    if order > max_order {
        return Err(Error::SizeLimit { order, cap: max_order });
    }
    let d = elems[0].rows();
    let lookup = ElementLookup::new(&elems, DEFAULT_VERIFY_TOL);
    let mut table = vec![0u32; order * order];
    for i in 0..order {
        for j in 0..order {
            let prod = elems[i].matmul(&elems[j])?;
            table[i * order + j] = lookup.find(&prod).expect("closure verified") as u32;
        }
    }
    let identity_index = lookup.find(&Matrix::identity(d)).expect("identity verified");
    let inverse = (0..order)
        .map(|i| (0..order).find(|&j| table[i * order + j] as usize == identity_index).unwrap() as u32)
        .collect();
    Ok(FiniteIsometryGroup {
        dim: d,
        kind: GroupKind::Custom,
        elements: elems.into_iter().map(IsometryMatrix::Dense).collect(),
        identity_index,
        law: Law::Table(table),
        inverse,
        perms: Vec::new(),
    })
}

/// Finds elements of a list by entrywise proximity. Entries are bucketed on
/// a grid coarser than the tolerance; neighbours are checked exactly.
struct ElementLookup<'a> {
    elems: &'a [Matrix],
    tol: f64,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl<'a> ElementLookup<'a> {
    fn new(elems: &'a [Matrix], tol: f64) -> Self {
        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, m) in elems.iter().enumerate() {
            buckets.entry(Self::key(m)).or_default().push(i);
        }
        Self { elems, tol, buckets }
    }

    fn key(m: &Matrix) -> Vec<i64> {
        // first two entries on a 1e-3 grid; robust enough to prune, never to decide
        m.as_slice().iter().take(2).map(|x| (x * 1e3).floor() as i64).collect()
    }

    fn find(&self, m: &Matrix) -> Option<usize> {
        let base = Self::key(m);
        let mut candidates = Vec::new();
        let offsets: Vec<Vec<i64>> = if base.len() == 2 {
            let mut v = Vec::with_capacity(9);
            for a in -1..=1 {
                for b in -1..=1 {
                    v.push(vec![base[0] + a, base[1] + b]);
                }
            }
            v
        } else {
            (-1..=1).map(|a| vec![base[0] + a]).collect()
        };
        for k in offsets {
            if let Some(ix) = self.buckets.get(&k) {
                candidates.extend_from_slice(ix);
            }
        }
        candidates.sort_unstable();
        candidates.into_iter().find(|&i| {
            self.elems[i].rows() == m.rows() && self.elems[i].max_abs_diff(m) <= self.tol
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    Empty,
    NotSquare { index: usize },
    DimensionMismatch { index: usize, expected: usize, got: usize },
    NotOrthogonal { index: usize, error: f64 },
    Duplicate { first: usize, second: usize },
    MissingIdentity,
    NotClosed { left: usize, right: usize },
    MissingInverse { index: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty element list"),
            Violation::NotSquare { index } => write!(f, "element {index} is not square"),
            Violation::DimensionMismatch { index, expected, got } => {
                write!(f, "element {index} has dimension {got}, expected {expected}")
            }
            Violation::NotOrthogonal { index, error } => {
                write!(f, "element {index} is not orthogonal (‖MᵀM − I‖ = {error:e})")
            }
            Violation::Duplicate { first, second } => {
                write!(f, "elements {first} and {second} coincide")
            }
            Violation::MissingIdentity => write!(f, "identity is missing"),
            Violation::NotClosed { left, right } => {
                write!(f, "product of elements {left} and {right} is not in the set")
            }
            Violation::MissingInverse { index } => write!(f, "element {index} has no inverse in the set"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub pass: bool,
    pub violations: Vec<Violation>,
}

/// Checks orthogonality, distinctness, identity, closure and inverses.
/// Never fails; every problem found is listed in the report.
pub fn verify_group(elems: &[Matrix], tol: f64) -> VerificationReport {
    let mut violations = Vec::new();
    let finish = |violations: Vec<Violation>| VerificationReport { pass: violations.is_empty(), violations };
    if elems.is_empty() {
        return finish(vec![Violation::Empty]);
    }
    let d = elems[0].rows();
    for (index, m) in elems.iter().enumerate() {
        if !m.is_square() {
            violations.push(Violation::NotSquare { index });
        } else if m.rows() != d {
            violations.push(Violation::DimensionMismatch { index, expected: d, got: m.rows() });
        }
    }
    if !violations.is_empty() {
        return finish(violations);
    }
    let ident = Matrix::identity(d);
    for (index, m) in elems.iter().enumerate() {
        let error = m.transpose().matmul(m).expect("square").max_abs_diff(&ident);
        if error > tol {
            violations.push(Violation::NotOrthogonal { index, error });
        }
    }
    for i in 0..elems.len() {
        for j in (i + 1)..elems.len() {
            if elems[i].max_abs_diff(&elems[j]) <= tol.max(1e-9) {
                violations.push(Violation::Duplicate { first: i, second: j });
            }
        }
    }
    let lookup = ElementLookup::new(elems, tol);
    let id = lookup.find(&ident);
    if id.is_none() {
        violations.push(Violation::MissingIdentity);
    }
    for i in 0..elems.len() {
        for j in 0..elems.len() {
            let prod = elems[i].matmul(&elems[j]).expect("square");
            if lookup.find(&prod).is_none() {
                violations.push(Violation::NotClosed { left: i, right: j });
            }
        }
        // the inverse of an orthogonal matrix is its transpose
        if lookup.find(&elems[i].transpose()).is_none() {
            violations.push(Violation::MissingInverse { index: i });
        }
    }
    finish(violations)
}

fn lexicographic_permutations(d: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..d).collect();
    let mut out = vec![p.clone()];
    // next permutation in lexicographic order
    while let Some(i) = (0..d.saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) {
        let j = (i + 1..d).rev().find(|&j| p[j] > p[i]).unwrap();
        p.swap(i, j);
        p[i + 1..].reverse();
        out.push(p.clone());
    }
    out
}

/// Lexicographic rank of a permutation (Lehmer code).
fn permutation_rank(p: &[usize]) -> usize {
    let d = p.len();
    let mut rank = 0;
    for i in 0..d {
        let smaller = p[i + 1..].iter().filter(|&&x| x < p[i]).count();
        rank = rank * (d - i) + smaller;
    }
    rank
}
