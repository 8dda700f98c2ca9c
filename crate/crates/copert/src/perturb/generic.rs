//! Generic constructions of derivative-isolating reparametrizations from a
//! user-chosen speed function or summary statistic.
//!
//! Both constructions work on the unit-speed ray through z: points are
//! written as endpoint - delta * direction with delta the l1 distance to the
//! endpoint. A given speed s yields L by integrating -1/s in delta; a given
//! statistic t becomes L directly and implies the speed -1/t'(delta).

use super::{DirectionalReparam, PerturbError, DOMAIN_TOL, ENDPOINT_TOL};
use crate::simplex::{l1_distance, Composition};

/// Quadrature absolute tolerance for the speed integral.
const QUAD_TOL: f64 = 1e-9;
/// Maximum bisection depth of the adaptive quadrature (2^16 subintervals).
const QUAD_MAX_DEPTH: u32 = 16;
const MIN_SPEED: f64 = 1e-12;

/// The unit-speed ray from a point towards its endpoint: points are
/// endpoint - delta * direction for delta in (0, max_delta].
#[derive(Debug, Clone)]
pub struct UnitRay {
    pub endpoint: Composition,
    pub direction: Vec<f64>,
}

impl UnitRay {
    /// The composition at distance `delta` from the endpoint.
    pub fn point_at(&self, delta: f64) -> Result<Composition, PerturbError> {
        let values: Vec<f64> = self
            .endpoint
            .as_slice()
            .iter()
            .zip(&self.direction)
            .map(|(e, v)| e - delta * v)
            .collect();
        for (idx, &v) in values.iter().enumerate() {
            if v < -DOMAIN_TOL || v > 1.0 + DOMAIN_TOL {
                return Err(PerturbError::OutOfDomain { gamma: delta, coord: idx + 1, value: v });
            }
        }
        Ok(Composition::new(values.iter().map(|v| v.clamp(0.0, 1.0)).collect())?)
    }

    /// Largest delta for which the ray stays on the simplex.
    pub fn max_delta(&self) -> f64 {
        let mut sup = f64::INFINITY;
        for (e, v) in self.endpoint.as_slice().iter().zip(&self.direction) {
            if *v > 0.0 {
                sup = sup.min(e / v);
            } else if *v < 0.0 {
                sup = sup.min((e - 1.0) / v);
            }
        }
        sup
    }
}

/// Builds the unit ray through z for a given endpoint map and returns it
/// together with delta_0 = ||E(z) - z||_1.
pub fn unit_ray<E>(endpoint_fn: E, z: &Composition) -> Result<(UnitRay, f64), PerturbError>
where
    E: Fn(&Composition) -> Result<Composition, PerturbError>,
{
    let endpoint = endpoint_fn(z)?;
    let delta0 = l1_distance(&endpoint, z)?;
    if delta0 < ENDPOINT_TOL {
        return Err(PerturbError::AtEndpoint);
    }
    let direction: Vec<f64> =
        endpoint.as_slice().iter().zip(z.as_slice()).map(|(e, a)| (e - a) / delta0).collect();
    Ok((UnitRay { endpoint, direction }, delta0))
}

/// Adaptive Simpson quadrature with absolute tolerance; the integrand may
/// fail (e.g. on a non-positive speed) and errors propagate out.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, PerturbError>
where
    F: Fn(f64) -> Result<f64, PerturbError>,
{
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    simpson_step(&f, a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, QUAD_MAX_DEPTH)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, PerturbError>
where
    F: Fn(f64) -> Result<f64, PerturbError>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?;
    Ok(l + r)
}

/// The transformed statistic t_w(delta) = -integral_{anchor}^{delta} 1/s du
/// for a speed function s along a ray. The anchor is delta = 1, moved inside
/// the feasible range when the ray is shorter than 1; any anchor shift leaves
/// the estimated effect unchanged.
fn speed_l_at<S>(ray: &UnitRay, speed_fn: &S, delta: f64) -> Result<f64, PerturbError>
where
    S: Fn(&Composition) -> f64,
{
    let anchor = anchor_delta(ray);
    let integrand = |u: f64| -> Result<f64, PerturbError> {
        let s = speed_fn(&ray.point_at(u)?);
        if s <= MIN_SPEED {
            return Err(PerturbError::NonPositiveSpeed(u));
        }
        Ok(1.0 / s)
    };
    // the quadrature may not sample the endpoints of a short interval
    integrand(delta)?;
    integrand(anchor)?;
    Ok(-adaptive_simpson(integrand, anchor, delta, QUAD_TOL)?)
}

fn anchor_delta(ray: &UnitRay) -> f64 {
    1.0f64.min(ray.max_delta() * (1.0 - 1e-9))
}

/// Derivative-isolating reparametrization from a given speed function:
/// L solves the speed ODE along the ray, W is (endpoint, direction).
pub fn reparam_from_speed<E, S>(
    endpoint_fn: E,
    speed_fn: S,
    z: &Composition,
) -> Result<DirectionalReparam, PerturbError>
where
    E: Fn(&Composition) -> Result<Composition, PerturbError>,
    S: Fn(&Composition) -> f64,
{
    let (ray, delta0) = unit_ray(endpoint_fn, z)?;
    let l = speed_l_at(&ray, &speed_fn, delta0)?;
    Ok(DirectionalReparam { l, w_endpoint: ray.endpoint, w_direction: ray.direction })
}

/// Derivative-isolating reparametrization from a summary statistic that
/// strictly decreases with the distance to the endpoint. Returns the
/// reparametrization (L is the statistic itself) together with the implied
/// speed -1/t'(delta_0), estimated by a central finite difference.
pub fn reparam_from_statistic<E, T>(
    endpoint_fn: E,
    statistic_fn: T,
    z: &Composition,
) -> Result<(DirectionalReparam, f64), PerturbError>
where
    E: Fn(&Composition) -> Result<Composition, PerturbError>,
    T: Fn(&Composition) -> f64,
{
    let (ray, delta0) = unit_ray(endpoint_fn, z)?;
    let h = 1e-6 * delta0.max(1.0);
    let max_delta = ray.max_delta();
    let hi = (delta0 + h).min(max_delta);
    let lo = (delta0 - h).max(ENDPOINT_TOL);
    if hi <= lo {
        return Err(PerturbError::NotDecreasing(f64::NAN));
    }
    let t_hi = statistic_fn(&ray.point_at(hi)?);
    let t_lo = statistic_fn(&ray.point_at(lo)?);
    let slope = (t_hi - t_lo) / (hi - lo);
    if slope >= 0.0 {
        return Err(PerturbError::NotDecreasing(slope));
    }
    let l = statistic_fn(z);
    Ok((
        DirectionalReparam { l, w_endpoint: ray.endpoint, w_direction: ray.direction },
        -1.0 / slope,
    ))
}

/// Recovers delta from l for a speed-based reparametrization by bisection on
/// the (strictly decreasing) transformed statistic.
pub(super) fn invert_speed_l<S>(ray: &UnitRay, l: f64, speed_fn: S) -> Result<f64, PerturbError>
where
    S: Fn(&Composition) -> f64,
{
    invert_monotone(ray, l, |delta| speed_l_at(ray, &speed_fn, delta))
}

/// Recovers delta from l for a statistic-based reparametrization.
pub(super) fn invert_statistic_l<T>(ray: &UnitRay, l: f64, statistic_fn: T) -> Result<f64, PerturbError>
where
    T: Fn(&Composition) -> f64,
{
    invert_monotone(ray, l, |delta| Ok(statistic_fn(&ray.point_at(delta)?)))
}

fn invert_monotone<F>(ray: &UnitRay, l: f64, t: F) -> Result<f64, PerturbError>
where
    F: Fn(f64) -> Result<f64, PerturbError>,
{
    let mut lo = 1e-12;
    let mut hi = ray.max_delta() * (1.0 - 1e-12);
    let t_lo = t(lo)?;
    let t_hi = t(hi)?;
    // t is decreasing in delta: t(lo) >= l >= t(hi) must hold
    if l > t_lo + 1e-9 || l < t_hi - 1e-9 {
        return Err(PerturbError::OutOfImage(format!(
            "l = {l} outside the statistic range [{t_hi}, {t_lo}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let tm = t(mid)?;
        if tm > l {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
