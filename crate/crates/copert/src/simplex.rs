//! Exact simplex primitives: compositions, the closure operator, the Gini
//! coefficient, amalgamation and small geometry helpers.
//!
//! A composition is a point on the (d-1)-simplex, i.e. a vector of d
//! nonnegative proportions summing to one. Everything in this crate operates
//! on [`Composition`] values, which are immutable after construction.

use thiserror::Error;

/// Sums within this distance of 1 are renormalized silently.
pub const SUM_TOL_TIGHT: f64 = 1e-9;
/// Sums farther than this from 1 are rejected; in between they are
/// renormalized and flagged.
pub const SUM_TOL_MAX: f64 = 1e-6;
/// Coordinates with absolute value below this are treated as exact zeros by
/// the indicator-based (knock-out style) effects.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("all entries are zero; closure is undefined")]
    AllZero,
    #[error("negative entry {value} at coordinate {index} (1-indexed)")]
    NegativeEntry { index: usize, value: f64 },
    #[error("compositions need at least 2 coordinates, got {0}")]
    TooShort(usize),
    #[error("coordinate sum {sum} is too far from 1 (tolerance {SUM_TOL_MAX})")]
    SumOutOfTolerance { sum: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite entry at coordinate {index} (1-indexed)")]
    NonFinite { index: usize },
    #[error("index set is empty")]
    EmptyIndexSet,
    #[error("coordinate index {index} out of bounds for dimension {dim} (1-indexed)")]
    IndexOutOfBounds { index: usize, dim: usize },
    #[error("index sets A and B overlap")]
    OverlappingSets,
    #[error("subcomposition on B has zero mass while A carries mass; amalgamation undefined")]
    EmptySubcompositionB,
}

/// A point on the (d-1)-simplex.
///
/// Invariants: every coordinate is >= 0, the coordinates sum to 1 (the
/// constructor renormalizes within tolerance, see [`Composition::new`]) and
/// d >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    values: Vec<f64>,
}

impl Composition {
    /// Builds a composition from raw proportions.
    ///
    /// Sums within `SUM_TOL_TIGHT` of 1 are renormalized silently, sums
    /// within `SUM_TOL_MAX` are renormalized as well (use
    /// [`Composition::new_with_status`] to observe the flag) and anything
    /// farther off is rejected. Real-world shares (e.g. whole-percentage
    /// splits) rarely sum to 1 exactly, which is why the loose band exists.
    pub fn new(values: Vec<f64>) -> Result<Self, SimplexError> {
        Self::new_with_status(values).map(|(c, _)| c)
    }

    /// Like [`Composition::new`] but also reports whether the input needed a
    /// beyond-tight-tolerance renormalization.
    pub fn new_with_status(values: Vec<f64>) -> Result<(Self, bool), SimplexError> {
        if values.len() < 2 {
            return Err(SimplexError::TooShort(values.len()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SimplexError::NonFinite { index: i + 1 });
            }
            if v < 0.0 {
                return Err(SimplexError::NegativeEntry { index: i + 1, value: v });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL_MAX {
            return Err(SimplexError::SumOutOfTolerance { sum });
        }
        let flagged = (sum - 1.0).abs() > SUM_TOL_TIGHT;
        let mut values = values;
        if sum != 1.0 {
            for v in values.iter_mut() {
                *v /= sum;
            }
        }
        Ok((Self { values }, flagged))
    }

    /// The simplex closure operator: normalizes a nonnegative vector onto the
    /// simplex. Idempotent on compositions.
    pub fn closure(values: &[f64]) -> Result<Self, SimplexError> {
        if values.len() < 2 {
            return Err(SimplexError::TooShort(values.len()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SimplexError::NonFinite { index: i + 1 });
            }
            if v < 0.0 {
                return Err(SimplexError::NegativeEntry { index: i + 1, value: v });
            }
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(SimplexError::AllZero);
        }
        Ok(Self { values: values.iter().map(|v| v / sum).collect() })
    }

    /// The center (1/d, ..., 1/d) of the d-vertex simplex.
    pub fn center(dim: usize) -> Self {
        assert!(dim >= 2, "simplex center needs dim >= 2");
        Self { values: vec![1.0 / dim as f64; dim] }
    }

    /// The j-th vertex e_j (0-indexed).
    pub fn vertex(dim: usize, j: usize) -> Self {
        assert!(dim >= 2 && j < dim, "vertex index out of bounds");
        let mut values = vec![0.0; dim];
        values[j] = 1.0;
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Whether the j-th coordinate (0-indexed) is an exact zero under the
    /// crate-wide zero-detection rule.
    pub fn coordinate_is_zero(&self, j: usize) -> bool {
        self.values[j].abs() < ZERO_TOL
    }
}

impl std::ops::Index<usize> for Composition {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.values[j]
    }
}

/// A sorted set of distinct coordinate indices (stored 0-indexed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<usize>,
}

impl IndexSet {
    /// Builds the set from 0-indexed coordinates; duplicates are rejected.
    pub fn new(mut indices: Vec<usize>) -> Result<Self, SimplexError> {
        if indices.is_empty() {
            return Err(SimplexError::EmptyIndexSet);
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimplexError::OverlappingSets);
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn is_disjoint(&self, other: &IndexSet) -> bool {
        self.indices.iter().all(|&j| !other.contains(j))
    }

    pub fn check_bounds(&self, dim: usize) -> Result<(), SimplexError> {
        match self.indices.iter().find(|&&j| j >= dim) {
            Some(&j) => Err(SimplexError::IndexOutOfBounds { index: j + 1, dim }),
            None => Ok(()),
        }
    }

    /// Total mass ||z^A||_1 of the subcomposition selected by this set.
    pub fn mass(&self, z: &Composition) -> f64 {
        self.indices.iter().map(|&j| z[j]).sum()
    }
}

/// Gini coefficient G(z) = (1/2d) sum_j sum_k |z^j - z^k|, in [0, (d-1)/d].
pub fn gini(z: &Composition) -> f64 {
    let d = z.dim();
    let mut acc = 0.0;
    for j in 0..d {
        for k in (j + 1)..d {
            acc += (z[j] - z[k]).abs();
        }
    }
    // off-diagonal terms appear twice in the double sum
    acc / d as f64
}

/// The (A -> B)-amalgamation: moves all mass from A into B, scaled so the
/// subcomposition within B is unchanged, and leaves everything else fixed.
pub fn amalgamate(z: &Composition, a: &IndexSet, b: &IndexSet) -> Result<Composition, SimplexError> {
    a.check_bounds(z.dim())?;
    b.check_bounds(z.dim())?;
    if !a.is_disjoint(b) {
        return Err(SimplexError::OverlappingSets);
    }
    let mass_a = a.mass(z);
    let mass_b = b.mass(z);
    if mass_a.abs() < ZERO_TOL {
        // nothing to transfer
        return Ok(z.clone());
    }
    if mass_b <= 0.0 {
        return Err(SimplexError::EmptySubcompositionB);
    }
    let scale = (mass_a + mass_b) / mass_b;
    let mut values = z.as_slice().to_vec();
    for &j in a.indices() {
        values[j] = 0.0;
    }
    for &j in b.indices() {
        values[j] *= scale;
    }
    Composition::new(values)
}

/// l1 distance between two compositions; always in [0, 2].
pub fn l1_distance(z1: &Composition, z2: &Composition) -> Result<f64, SimplexError> {
    if z1.dim() != z2.dim() {
        return Err(SimplexError::DimensionMismatch { left: z1.dim(), right: z2.dim() });
    }
    Ok(z1.as_slice().iter().zip(z2.as_slice()).map(|(a, b)| (a - b).abs()).sum())
}
