//! The perturbation catalogue: binary and directional perturbations on the
//! simplex, their endpoints, directions, speeds and the derivative-isolating
//! reparametrizations z -> (L, W) used by the estimators.
//!
//! Directional catalogue entries move along the straight line from z to an
//! endpoint (a vertex, the center, or an amalgamation), except for the
//! log-ratio diversity entry which follows the centered-log-ratio path. For
//! every entry the reparametrization satisfies the derivative-isolation
//! identity: the initial rate of change of any smooth response along the
//! perturbation equals the partial derivative in L of the reparametrized
//! response. That identity is what reduces directional effect estimation to
//! an average-partial-effect problem.

mod clr;
mod generic;
mod parse;

pub use clr::{aitchison_apply, aitchison_omega, clr, clr_diversity_reparam, clr_inverse};
pub use generic::{adaptive_simpson, reparam_from_speed, reparam_from_statistic, unit_ray, UnitRay};
pub use parse::parse_effect;

use crate::simplex::{amalgamate, gini, l1_distance, Composition, IndexSet, SimplexError, ZERO_TOL};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Points closer than this (in l1) to their endpoint count as being at it.
pub const ENDPOINT_TOL: f64 = 1e-12;
/// Omega vectors with l1 norm below this mark zero-speed points.
pub const ZERO_SPEED_TOL: f64 = 1e-12;
/// Simplex-membership slack for perturbed points and reconstructed inverses.
pub const DOMAIN_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error("point is at the endpoint of the perturbation; direction undefined")]
    AtEndpoint,
    #[error("logarithm of zero: {0}")]
    LogOfZero(String),
    #[error("gamma {gamma} leaves the feasible domain (coordinate {coord} = {value})")]
    OutOfDomain { gamma: f64, coord: usize, value: f64 },
    #[error("binary perturbations only accept gamma in {{0, 1}}, got {0}")]
    BinaryGamma(f64),
    #[error("(l, w) is not in the image of the reparametrization: {0}")]
    OutOfImage(String),
    #[error("coordinate {0} (1-indexed) is zero; log-ratio transform undefined")]
    ZeroCoordinate(usize),
    #[error("speed is not strictly positive along the integration path (delta = {0})")]
    NonPositiveSpeed(f64),
    #[error("summary statistic is not strictly decreasing along the ray (slope {0})")]
    NotDecreasing(f64),
    #[error("operation requires a directional perturbation")]
    NotDirectional,
    #[error("invalid effect spec `{0}`: {1}")]
    InvalidSpec(String, String),
}

/// User-supplied speed choice for custom perturbations.
#[derive(Clone)]
pub enum CustomSpeed {
    /// An interpretable speed function; L is obtained by integrating its
    /// reciprocal along the ray to the endpoint.
    Given(Arc<dyn Fn(&Composition) -> f64 + Send + Sync>),
    /// A summary statistic that strictly decreases with distance to the
    /// endpoint; it becomes L directly and implies the speed.
    Statistic(Arc<dyn Fn(&Composition) -> f64 + Send + Sync>),
}

/// A custom directional perturbation given by an endpoint map and a speed
/// choice.
#[derive(Clone)]
pub struct CustomSpec {
    pub name: String,
    pub endpoint: Arc<dyn Fn(&Composition) -> Result<Composition, PerturbError> + Send + Sync>,
    pub speed: CustomSpeed,
}

impl fmt::Debug for CustomSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSpec").field("name", &self.name).finish()
    }
}

/// The effect catalogue. Indices and index sets are stored 0-indexed; the
/// text form parsed by [`parse_effect`] is 1-indexed.
#[derive(Debug, Clone)]
pub enum EffectSpec {
    /// Feature influence towards vertex e_j at unit speed.
    CfiUnit { j: usize },
    /// Feature influence towards vertex e_j at multiplicative speed
    /// 2 z^j (1 - z^j).
    CfiMult { j: usize },
    /// Knock-out effect: binary perturbation zeroing coordinate j and
    /// rescaling the rest.
    Cke { j: usize },
    /// Diversity influence towards the center at unit speed.
    CdiUnit,
    /// Diversity influence towards the center at Gini speed; L is one minus
    /// the Gini coefficient.
    CdiGini,
    /// Amalgamation influence A -> B at unit speed.
    CaiUnit { a: IndexSet, b: IndexSet },
    /// Amalgamation influence A -> B at multiplicative speed.
    CaiMult { a: IndexSet, b: IndexSet },
    /// Amalgamation effect: binary perturbation applying the (A -> B)
    /// amalgamation.
    Cae { a: IndexSet, b: IndexSet },
    /// Diversity along the centered-log-ratio path towards the center.
    ClrDiversity,
    /// User-defined endpoint and speed (directional).
    Custom(CustomSpec),
}

impl EffectSpec {
    pub fn is_binary(&self) -> bool {
        matches!(self, EffectSpec::Cke { .. } | EffectSpec::Cae { .. })
    }

    /// Whether the endpoint map is constant in z, in which case it is dropped
    /// from the regression features.
    pub fn endpoint_is_constant(&self) -> bool {
        matches!(
            self,
            EffectSpec::CfiUnit { .. }
                | EffectSpec::CfiMult { .. }
                | EffectSpec::CdiUnit
                | EffectSpec::CdiGini
                | EffectSpec::ClrDiversity
        )
    }

    /// Canonical text form (1-indexed), mirroring the CLI syntax.
    pub fn label(&self) -> String {
        fn set(s: &IndexSet) -> String {
            s.indices().iter().map(|j| (j + 1).to_string()).collect::<Vec<_>>().join(",")
        }
        match self {
            EffectSpec::CfiUnit { j } => format!("cfi_unit:{}", j + 1),
            EffectSpec::CfiMult { j } => format!("cfi_mult:{}", j + 1),
            EffectSpec::Cke { j } => format!("cke:{}", j + 1),
            EffectSpec::CdiUnit => "cdi_unit".to_string(),
            EffectSpec::CdiGini => "cdi_gini".to_string(),
            EffectSpec::CaiUnit { a, b } => format!("cai_unit:A={};B={}", set(a), set(b)),
            EffectSpec::CaiMult { a, b } => format!("cai_mult:A={};B={}", set(a), set(b)),
            EffectSpec::Cae { a, b } => format!("cae:A={};B={}", set(a), set(b)),
            EffectSpec::ClrDiversity => "clr_diversity".to_string(),
            EffectSpec::Custom(c) => format!("custom:{}", c.name),
        }
    }

    /// Validates index bounds against a composition dimension.
    pub fn check_dim(&self, dim: usize) -> Result<(), PerturbError> {
        let check_j = |j: usize| {
            if j < dim {
                Ok(())
            } else {
                Err(PerturbError::Simplex(SimplexError::IndexOutOfBounds { index: j + 1, dim }))
            }
        };
        match self {
            EffectSpec::CfiUnit { j } | EffectSpec::CfiMult { j } | EffectSpec::Cke { j } => {
                check_j(*j)
            }
            EffectSpec::CaiUnit { a, b } | EffectSpec::CaiMult { a, b } | EffectSpec::Cae { a, b } => {
                a.check_bounds(dim)?;
                b.check_bounds(dim)?;
                if !a.is_disjoint(b) {
                    return Err(PerturbError::Simplex(SimplexError::OverlappingSets));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Reparametrized form of a point under a directional perturbation:
/// z = w_endpoint - delta(l) * w_direction with delta recovered from l.
#[derive(Debug, Clone)]
pub struct DirectionalReparam {
    pub l: f64,
    pub w_endpoint: Composition,
    /// Unit l1-norm direction for the straight-line catalogue entries; the
    /// unit l2-norm CLR-space direction for the log-ratio diversity entry.
    pub w_direction: Vec<f64>,
}

impl DirectionalReparam {
    /// Flattens W into regression features, optionally dropping a constant
    /// endpoint.
    pub fn features(&self, drop_endpoint: bool) -> Vec<f64> {
        if drop_endpoint {
            self.w_direction.clone()
        } else {
            let mut f = self.w_endpoint.as_slice().to_vec();
            f.extend_from_slice(&self.w_direction);
            f
        }
    }
}

/// Reparametrized form of a point under a binary perturbation: l indicates
/// whether z already equals its perturbed image, and w is that image.
#[derive(Debug, Clone)]
pub struct BinaryReparam {
    pub l: bool,
    pub w: Composition,
}

#[derive(Debug, Clone)]
pub enum Reparam {
    Directional(DirectionalReparam),
    Binary(BinaryReparam),
}

fn complement(set_a: &IndexSet, dim: usize) -> IndexSet {
    let rest: Vec<usize> = (0..dim).filter(|j| !set_a.contains(*j)).collect();
    IndexSet::new(rest).expect("complement of a proper subset is nonempty")
}

/// Image of a binary perturbation, psi(z, 1).
fn binary_image(spec: &EffectSpec, z: &Composition) -> Result<Composition, PerturbError> {
    match spec {
        EffectSpec::Cke { j } => {
            let a = IndexSet::new(vec![*j]).expect("singleton");
            let b = complement(&a, z.dim());
            Ok(amalgamate(z, &a, &b)?)
        }
        EffectSpec::Cae { a, b } => Ok(amalgamate(z, a, b)?),
        _ => Err(PerturbError::NotDirectional),
    }
}

/// Endpoint E(z) of the perturbation: the vertex for feature influences, the
/// center for diversity influences, the amalgamation image for amalgamating
/// and binary entries.
pub fn endpoint(spec: &EffectSpec, z: &Composition) -> Result<Composition, PerturbError> {
    spec.check_dim(z.dim())?;
    match spec {
        EffectSpec::CfiUnit { j } | EffectSpec::CfiMult { j } => {
            Ok(Composition::vertex(z.dim(), *j))
        }
        EffectSpec::Cke { .. } | EffectSpec::Cae { .. } => binary_image(spec, z),
        EffectSpec::CdiUnit | EffectSpec::CdiGini | EffectSpec::ClrDiversity => {
            Ok(Composition::center(z.dim()))
        }
        EffectSpec::CaiUnit { a, b } | EffectSpec::CaiMult { a, b } => Ok(amalgamate(z, a, b)?),
        EffectSpec::Custom(c) => (c.endpoint)(z),
    }
}

/// Unit l1-norm direction of the perturbation at z. For the straight-line
/// entries this is (E(z) - z) / ||E(z) - z||_1; the log-ratio diversity entry
/// returns the normalized initial derivative of its curved path.
pub fn direction(spec: &EffectSpec, z: &Composition) -> Result<Vec<f64>, PerturbError> {
    if let EffectSpec::ClrDiversity = spec {
        let om = omega(spec, z)?;
        let norm: f64 = om.iter().map(|x| x.abs()).sum();
        if norm < ZERO_SPEED_TOL {
            return Err(PerturbError::AtEndpoint);
        }
        return Ok(om.iter().map(|x| x / norm).collect());
    }
    let e = endpoint(spec, z)?;
    let dist = l1_distance(&e, z)?;
    if dist < ENDPOINT_TOL {
        return Err(PerturbError::AtEndpoint);
    }
    Ok(e.as_slice().iter().zip(z.as_slice()).map(|(a, b)| (a - b) / dist).collect())
}

/// Speed s(z) of a directional perturbation.
pub fn speed(spec: &EffectSpec, z: &Composition) -> Result<f64, PerturbError> {
    spec.check_dim(z.dim())?;
    match spec {
        EffectSpec::CfiUnit { .. } | EffectSpec::CdiUnit | EffectSpec::CaiUnit { .. } => Ok(1.0),
        EffectSpec::CfiMult { j } => Ok(2.0 * z[*j] * (1.0 - z[*j])),
        EffectSpec::CaiMult { a, b } => {
            // normalized so that the log-odds L of the B-to-A mass ratio
            // moves at unit rate; coincides with 2 z^j (1 - z^j) when
            // A u B = [d] and B = {j}
            let ma = a.mass(z);
            let mb = b.mass(z);
            let tot = ma + mb;
            if tot <= 0.0 {
                return Ok(0.0);
            }
            Ok(2.0 * ma * mb / tot)
        }
        EffectSpec::CdiGini => {
            let v = direction(spec, z)?;
            Ok(gini_speed_from_direction(&v))
        }
        EffectSpec::ClrDiversity => {
            let om = omega(spec, z)?;
            let s: f64 = om.iter().map(|x| x.abs()).sum();
            if s < ZERO_SPEED_TOL {
                return Err(PerturbError::AtEndpoint);
            }
            Ok(s)
        }
        EffectSpec::Custom(c) => match &c.speed {
            CustomSpeed::Given(s) => Ok(s(z)),
            CustomSpeed::Statistic(t) => {
                let endpoint_fn = c.endpoint.clone();
                let stat = t.clone();
                let (_, s) =
                    reparam_from_statistic(|z| (endpoint_fn)(z), |z| (stat)(z), z)?;
                Ok(s)
            }
        },
        EffectSpec::Cke { .. } | EffectSpec::Cae { .. } => Err(PerturbError::NotDirectional),
    }
}

/// Gini speed 2d / (sum_j sum_k |v^j - v^k|) from a direction vector.
pub(crate) fn gini_speed_from_direction(v: &[f64]) -> f64 {
    let d = v.len();
    let mut acc = 0.0;
    for j in 0..d {
        for k in (j + 1)..d {
            acc += (v[j] - v[k]).abs();
        }
    }
    (2.0 * d as f64) / (2.0 * acc)
}

/// Initial derivative omega(z) = s(z) v(z) of a directional perturbation.
/// Returns the zero vector at zero-speed points (those do not contribute to
/// the effect and are handled by the estimation layer).
pub fn omega(spec: &EffectSpec, z: &Composition) -> Result<Vec<f64>, PerturbError> {
    spec.check_dim(z.dim())?;
    if spec.is_binary() {
        return Err(PerturbError::NotDirectional);
    }
    if let EffectSpec::ClrDiversity = spec {
        // omega of the unit-L-speed CLR path: the raw log-ratio derivative
        // scaled down by the CLR norm; vanishes at the center and on the
        // boundary.
        if z.as_slice().iter().any(|&x| x < ZERO_TOL) {
            return Ok(vec![0.0; z.dim()]);
        }
        let x = clr(z)?;
        let norm2 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm2 < ZERO_SPEED_TOL {
            return Ok(vec![0.0; z.dim()]);
        }
        let raw = aitchison_omega(z);
        return Ok(raw.iter().map(|v| v / norm2).collect());
    }
    let e = endpoint(spec, z)?;
    let dist = l1_distance(&e, z)?;
    if dist < ENDPOINT_TOL {
        return Ok(vec![0.0; z.dim()]);
    }
    let s = speed(spec, z)?;
    Ok(e.as_slice().iter().zip(z.as_slice()).map(|(a, b)| s * (a - b) / dist).collect())
}

/// Whether z is a zero-speed point of the perturbation (||omega||_1 below
/// tolerance). Such points are filtered by the estimators and re-weighted in.
pub fn is_zero_speed(spec: &EffectSpec, z: &Composition) -> Result<bool, PerturbError> {
    let om = omega(spec, z)?;
    Ok(om.iter().map(|x| x.abs()).sum::<f64>() < ZERO_SPEED_TOL)
}

/// Applies the perturbation: psi(z, gamma). Binary entries accept only gamma
/// in {0, 1}; straight-line entries move along z + gamma s(z) v(z); the
/// log-ratio diversity entry follows its CLR path.
pub fn apply(spec: &EffectSpec, z: &Composition, gamma: f64) -> Result<Composition, PerturbError> {
    spec.check_dim(z.dim())?;
    if gamma == 0.0 {
        return Ok(z.clone());
    }
    if spec.is_binary() {
        if gamma == 1.0 {
            return binary_image(spec, z);
        }
        return Err(PerturbError::BinaryGamma(gamma));
    }
    if gamma < 0.0 {
        return Err(PerturbError::OutOfDomain { gamma, coord: 0, value: f64::NAN });
    }
    if let EffectSpec::ClrDiversity = spec {
        let x = clr(z)?;
        let norm2 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gamma > norm2 + DOMAIN_TOL {
            return Err(PerturbError::OutOfDomain { gamma, coord: 0, value: f64::NAN });
        }
        let scale = 1.0 - gamma / norm2;
        let shrunk: Vec<f64> = x.iter().map(|v| v * scale).collect();
        return Ok(clr_inverse(&shrunk));
    }
    let om = omega(spec, z)?;
    let mut values: Vec<f64> = z.as_slice().iter().zip(&om).map(|(a, w)| a + gamma * w).collect();
    for (idx, v) in values.iter_mut().enumerate() {
        if *v < -DOMAIN_TOL || *v > 1.0 + DOMAIN_TOL {
            return Err(PerturbError::OutOfDomain { gamma, coord: idx + 1, value: *v });
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Composition::new(values)?)
}

/// The L-component of the reparametrization alone. Unlike
/// [`reparametrize`], this stays defined at zero-speed points whenever the
/// closed form is finite (e.g. the Gini statistic at the center), which the
/// marginal baselines rely on.
pub fn phi_l(spec: &EffectSpec, z: &Composition) -> Result<f64, PerturbError> {
    spec.check_dim(z.dim())?;
    match spec {
        EffectSpec::CfiUnit { j } => Ok(-2.0 * (1.0 - z[*j])),
        EffectSpec::CfiMult { j } => {
            let zj = z[*j];
            if zj < ZERO_TOL || 1.0 - zj < ZERO_TOL {
                return Err(PerturbError::LogOfZero(format!("z^{} = {}", j + 1, zj)));
            }
            Ok((zj / (1.0 - zj)).ln())
        }
        EffectSpec::Cke { j } => Ok(if z.coordinate_is_zero(*j) { 1.0 } else { 0.0 }),
        EffectSpec::CdiUnit => Ok(-l1_distance(&Composition::center(z.dim()), z)?),
        EffectSpec::CdiGini => Ok(1.0 - gini(z)),
        EffectSpec::CaiUnit { a, .. } => Ok(-2.0 * a.mass(z)),
        EffectSpec::CaiMult { a, b } => {
            let ma = a.mass(z);
            let mb = b.mass(z);
            if ma < ZERO_TOL || mb < ZERO_TOL {
                return Err(PerturbError::LogOfZero(format!(
                    "||z^A||_1 = {ma}, ||z^B||_1 = {mb}"
                )));
            }
            Ok((mb / ma).ln())
        }
        EffectSpec::Cae { a, .. } => {
            Ok(if a.indices().iter().all(|&j| z.coordinate_is_zero(j)) { 1.0 } else { 0.0 })
        }
        EffectSpec::ClrDiversity => {
            let x = clr(z)?;
            Ok(-x.iter().map(|v| v * v).sum::<f64>().sqrt())
        }
        EffectSpec::Custom(c) => match &c.speed {
            CustomSpeed::Given(s) => {
                let speed_fn = s.clone();
                let endpoint_fn = c.endpoint.clone();
                let r = reparam_from_speed(|z| (endpoint_fn)(z), |z| (speed_fn)(z), z)?;
                Ok(r.l)
            }
            CustomSpeed::Statistic(t) => Ok(t(z)),
        },
    }
}

/// Full derivative-isolating (or binary) reparametrization z -> (L, W).
pub fn reparametrize(spec: &EffectSpec, z: &Composition) -> Result<Reparam, PerturbError> {
    spec.check_dim(z.dim())?;
    if spec.is_binary() {
        let w = binary_image(spec, z)?;
        let l = l1_distance(&w, z)? < ENDPOINT_TOL;
        return Ok(Reparam::Binary(BinaryReparam { l, w }));
    }
    if let EffectSpec::ClrDiversity = spec {
        return Ok(Reparam::Directional(clr_diversity_reparam(z)?));
    }
    let l = phi_l(spec, z)?;
    let w_endpoint = endpoint(spec, z)?;
    let dist = l1_distance(&w_endpoint, z)?;
    if dist < ENDPOINT_TOL {
        return Err(PerturbError::AtEndpoint);
    }
    let w_direction: Vec<f64> =
        w_endpoint.as_slice().iter().zip(z.as_slice()).map(|(a, b)| (a - b) / dist).collect();
    Ok(Reparam::Directional(DirectionalReparam { l, w_endpoint, w_direction }))
}

/// Inverts a directional reparametrization: recovers z from (l, w).
///
/// Binary reparametrizations are not injective; only the l = 1 branch (where
/// z equals w) can be inverted.
pub fn inverse_reparametrize(
    spec: &EffectSpec,
    l: f64,
    w_endpoint: &Composition,
    w_direction: &[f64],
) -> Result<Composition, PerturbError> {
    let delta = match spec {
        EffectSpec::CfiUnit { .. } | EffectSpec::CdiUnit | EffectSpec::CaiUnit { .. } => -l,
        EffectSpec::CfiMult { .. } => {
            let zj = expit(l);
            2.0 * (1.0 - zj)
        }
        EffectSpec::CdiGini => {
            let d = w_direction.len() as f64;
            let mut acc = 0.0;
            for j in 0..w_direction.len() {
                for k in (j + 1)..w_direction.len() {
                    acc += (w_direction[j] - w_direction[k]).abs();
                }
            }
            (1.0 - l) * 2.0 * d / (2.0 * acc)
        }
        EffectSpec::CaiMult { b, .. } => {
            // total A u B mass is invariant along the ray and recoverable
            // from the endpoint
            let total = b.mass(w_endpoint);
            2.0 * total * expit(-l)
        }
        EffectSpec::ClrDiversity => {
            let x: Vec<f64> = w_direction.iter().map(|w| -l * w).collect();
            let z = clr_inverse(&x);
            return Ok(z);
        }
        EffectSpec::Cke { .. } | EffectSpec::Cae { .. } => {
            if l == 1.0 {
                return Ok(w_endpoint.clone());
            }
            return Err(PerturbError::OutOfImage(
                "binary reparametrization is not invertible at l = 0".to_string(),
            ));
        }
        EffectSpec::Custom(c) => {
            let ray = UnitRay { endpoint: w_endpoint.clone(), direction: w_direction.to_vec() };
            match &c.speed {
                CustomSpeed::Given(s) => {
                    let speed_fn = s.clone();
                    generic::invert_speed_l(&ray, l, |z| (speed_fn)(z))?
                }
                CustomSpeed::Statistic(t) => {
                    let stat = t.clone();
                    generic::invert_statistic_l(&ray, l, |z| (stat)(z))?
                }
            }
        }
    };
    let values: Vec<f64> = w_endpoint
        .as_slice()
        .iter()
        .zip(w_direction)
        .map(|(e, v)| e - delta * v)
        .collect();
    for (idx, &v) in values.iter().enumerate() {
        if v < -DOMAIN_TOL || v > 1.0 + DOMAIN_TOL {
            return Err(PerturbError::OutOfImage(format!(
                "coordinate {} = {v} outside the simplex",
                idx + 1
            )));
        }
    }
    Ok(Composition::new(values.iter().map(|v| v.clamp(0.0, 1.0)).collect())?)
}

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
