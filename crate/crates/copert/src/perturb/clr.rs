//! Centered log-ratio transform and the diversity perturbation it induces.
//!
//! The CLR transform maps the open simplex onto the sum-zero hyperplane;
//! shrinking CLR coordinates towards zero moves the composition towards the
//! center along a curved path whose initial derivative has the closed form
//! implemented in [`aitchison_omega`].

use super::{DirectionalReparam, PerturbError, ZERO_SPEED_TOL};
use crate::simplex::{Composition, ZERO_TOL};

/// Centered log-ratio transform; defined on the open simplex only.
pub fn clr(z: &Composition) -> Result<Vec<f64>, PerturbError> {
    let mut logs = Vec::with_capacity(z.dim());
    for (idx, &v) in z.as_slice().iter().enumerate() {
        if v < ZERO_TOL {
            return Err(PerturbError::ZeroCoordinate(idx + 1));
        }
        logs.push(v.ln());
    }
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(logs.into_iter().map(|x| x - mean).collect())
}

/// Inverse CLR: the closure of the componentwise exponential. Defined for
/// any finite input, not only the sum-zero hyperplane.
pub fn clr_inverse(x: &[f64]) -> Composition {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    Composition::closure(&exps).expect("exponentials are positive")
}

/// Initial derivative of the log-ratio diversity path (the perturbation that
/// shrinks CLR(z) by the factor 1 - gamma):
/// omega^j = sum_{k != j} z^j z^k log(z^k / z^j), with the 0 log 0 = 0
/// convention on the boundary.
pub fn aitchison_omega(z: &Composition) -> Vec<f64> {
    let d = z.dim();
    let mut out = vec![0.0; d];
    for j in 0..d {
        let zj = z[j];
        if zj < ZERO_TOL {
            continue;
        }
        let mut acc = 0.0;
        for k in 0..d {
            if k == j {
                continue;
            }
            let zk = z[k];
            if zk < ZERO_TOL {
                continue;
            }
            acc += zj * zk * (zk / zj).ln();
        }
        out[j] = acc;
    }
    out
}

/// The log-ratio diversity path itself: psi(z, gamma) = CLR^{-1}((1 - gamma) CLR(z)).
pub fn aitchison_apply(z: &Composition, gamma: f64) -> Result<Composition, PerturbError> {
    let x = clr(z)?;
    let shrunk: Vec<f64> = x.iter().map(|v| v * (1.0 - gamma)).collect();
    Ok(clr_inverse(&shrunk))
}

/// Derivative-isolating reparametrization for the log-ratio diversity
/// perturbation: L = -||CLR(z)||_2, W the unit CLR-space direction.
pub fn clr_diversity_reparam(z: &Composition) -> Result<DirectionalReparam, PerturbError> {
    let x = clr(z)?;
    let norm2 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm2 < ZERO_SPEED_TOL {
        return Err(PerturbError::AtEndpoint);
    }
    Ok(DirectionalReparam {
        l: -norm2,
        w_endpoint: Composition::center(z.dim()),
        w_direction: x.iter().map(|v| v / norm2).collect(),
    })
}
