//! Brownian bridge, excursion, and nonintersecting-bridge numerics.
//!
//! Three small-gap laws live here. The maximum of a standard Brownian bridge
//! from 0 to z over horizon t has the closed form `1 - exp(-2y(y-z)/t)`,
//! checked against direct path simulation. The small-value probability of a
//! Brownian excursion scales like eps^3, computed by quadrature of its
//! density. The gap probabilities of three nonintersecting bridges (the
//! Brownian 3-watermelon) scale like eps^3 for one small gap and eps^8 for
//! two, computed by quadrature of the Karlin-McGregor density
//! `c_t (x-y)^2 (x-z)^2 (y-z)^2 exp(-(x^2+y^2+z^2)/(2t(1-t)))` on x > y > z.
//!
//! The excursion density is implemented with the normalizable denominator
//! `sqrt(2 pi t^3 (1-t)^3)`; that choice is what makes the density integrate
//! to one and restores the t <-> 1-t symmetry.

use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::numeric::integrate;
use crate::rng::RngStream;

// ---------------------------------------------------------------------------
// Bridge maximum
// ---------------------------------------------------------------------------

/// `P(sup B <= y)` for a standard Brownian bridge from 0 to `z` in time `t`,
/// valid on `y >= max(0, z)`.
pub fn bridge_max_cdf(y: f64, z: f64, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::DomainError(format!(
            "bridge horizon must be positive, got {t}"
        )));
    }
    if !(y.is_finite() && z.is_finite()) || y < z.max(0.0) {
        return Err(Error::DomainError(format!(
            "bridge maximum law needs y >= max(0, z), got y = {y}, z = {z}"
        )));
    }
    Ok((1.0 - (-2.0 * y * (y - z) / t).exp()).clamp(0.0, 1.0))
}

/// Discretization of one simulated bridge.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSpec {
    pub start: f64,
    pub end: f64,
    pub horizon: f64,
    pub variance_param: f64,
    pub steps: usize,
}

impl BridgeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidParameter(format!(
                "bridge needs at least 2 steps, got {}",
                self.steps
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bridge horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.variance_param > 0.0 && self.variance_param.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "variance parameter must be positive, got {}",
                self.variance_param
            )));
        }
        if !(self.start.is_finite() && self.end.is_finite()) {
            return Err(Error::InvalidParameter(
                "bridge endpoints must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Empirical distribution of simulated maxima.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut values: Vec<f64>) -> EmpiricalCdf {
        values.sort_by(|a, b| a.total_cmp(b));
        EmpiricalCdf { sorted: values }
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        let hits = self.sorted.partition_point(|v| *v <= x);
        hits as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

/// Fill `path` with one bridge: free Gaussian motion minus the linear
/// correction that pins the endpoints, so `path[0] == start` and
/// `path[steps] == end` hold exactly by construction.
pub(crate) fn sample_bridge_path(spec: &BridgeSpec, rng: &mut RngStream, path: &mut Vec<f64>) {
    let steps = spec.steps;
    let dt = spec.horizon / steps as f64;
    let sigma = (spec.variance_param * dt).sqrt();
    let normal = rand_distr::Normal::new(0.0, sigma).expect("validated sigma");
    path.clear();
    path.push(0.0);
    let mut w = 0.0;
    for _ in 0..steps {
        w += normal.sample(rng);
        path.push(w);
    }
    let w_end = path[steps];
    let drift = spec.end - spec.start;
    for (i, v) in path.iter_mut().enumerate() {
        let frac = i as f64 / steps as f64;
        *v = spec.start + *v - frac * (w_end - drift);
    }
    // Pin the endpoints bit-exactly; frac = 1 leaves only rounding noise.
    path[steps] = spec.end;
    path[0] = spec.start;
}

/// Simulate `samples` bridges and return the empirical law of the path
/// maximum over the grid.
pub fn simulate_bridge_max(
    spec: &BridgeSpec,
    rng: &mut RngStream,
    samples: usize,
) -> Result<EmpiricalCdf> {
    spec.validate()?;
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let mut maxima = Vec::with_capacity(samples);
    let mut path = Vec::with_capacity(spec.steps + 1);
    for _ in 0..samples {
        sample_bridge_path(spec, rng, &mut path);
        let m = path.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        maxima.push(m);
    }
    Ok(EmpiricalCdf::new(maxima))
}

// ---------------------------------------------------------------------------
// Excursion small values
// ---------------------------------------------------------------------------

fn check_interior_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::DomainError(format!(
            "excursion time must lie in (0, 1), got {t}"
        )));
    }
    Ok(())
}

/// Density of the standard Brownian excursion at time `t`.
pub fn excursion_density(t: f64, x: f64) -> f64 {
    let s = t * (1.0 - t);
    let norm = 2.0 / (2.0 * std::f64::consts::PI * s * s * s).sqrt();
    norm * x * x * (-x * x / (2.0 * s)).exp()
}

/// `P(B_ex(t) < eps)` by adaptive quadrature of the excursion density.
pub fn excursion_small_value_prob(t: f64, epsilon: f64) -> Result<f64> {
    check_interior_time(t)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::DomainError(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    integrate(|x| excursion_density(t, x), 0.0, epsilon, 1e-10, 1e-300, 4000)
}

// ---------------------------------------------------------------------------
// Watermelon gap probabilities
// ---------------------------------------------------------------------------

/// Which gap event to measure on the 3-watermelon `(X > Y > Z)` at time t.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapMode {
    /// `0 < X - Y < eps`.
    OneGap,
    /// `0 < X - Y < eps` and `0 < Y - Z < eps`.
    TwoGap,
}

/// Interior width delta for the admissible time window `[delta, 1 - delta]`.
pub const GAP_TIME_DELTA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapQuery {
    pub t: f64,
    pub epsilon: f64,
    pub mode: GapMode,
}

impl GapQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.t >= GAP_TIME_DELTA && self.t <= 1.0 - GAP_TIME_DELTA) {
            return Err(Error::DomainError(format!(
                "gap query time must lie in [{GAP_TIME_DELTA}, {}], got {}",
                1.0 - GAP_TIME_DELTA,
                self.t
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::DomainError(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// The watermelon density restricted to the ordered chamber, in gap
/// coordinates `u = x - y > 0`, `v = y - z > 0` with the center integrated
/// out analytically:
///
/// ```text
/// integral over y of exp(-((y+u)^2 + y^2 + (y-v)^2) / (2s)) dy
///   = sqrt(2 pi s / 3) * exp(-(u^2 + u v + v^2) / (3 s))
/// ```
///
/// so the reduced (unnormalized) gap density is
/// `u^2 v^2 (u+v)^2 sqrt(2 pi s/3) exp(-(u^2 + uv + v^2)/(3s))`.
fn reduced_gap_density(u: f64, v: f64, s: f64) -> f64 {
    let poly = u * u * v * v * (u + v) * (u + v);
    let gauss = (-(u * u + u * v + v * v) / (3.0 * s)).exp();
    poly * (2.0 * std::f64::consts::PI * s / 3.0).sqrt() * gauss
}

/// Effectively-infinite upper limit for the gap coordinates: beyond
/// `14 sqrt(3 s)` the Gaussian factor is below e^-196 of its peak.
fn gap_cutoff(s: f64) -> f64 {
    14.0 * (3.0 * s).sqrt()
}

fn gap_mass(s: f64, u_hi: f64, v_hi: f64, rel_tol: f64) -> Result<f64> {
    let inner_tol = rel_tol / 10.0;
    integrate(
        |u| {
            integrate(
                |v| reduced_gap_density(u, v, s),
                0.0,
                v_hi,
                inner_tol,
                1e-300,
                2000,
            )
            .expect("inner gap quadrature converges for the smooth density")
        },
        0.0,
        u_hi,
        rel_tol,
        1e-300,
        2000,
    )
}

/// Normalization constant of the reduced gap density (the `c_t` of the
/// watermelon density, up to the analytic center integral).
pub fn watermelon_normalization(t: f64) -> Result<f64> {
    check_interior_time(t)?;
    let s = t * (1.0 - t);
    let hi = gap_cutoff(s);
    gap_mass(s, hi, hi, 1e-10)
}

/// Probability of the requested gap event, by deterministic quadrature at
/// 1e-8 relative tolerance. Monte Carlo is useless here: the two-gap event
/// has probability ~ eps^8 and is unreachable by sampling.
pub fn watermelon_gap_prob(query: &GapQuery) -> Result<f64> {
    query.validate()?;
    let s = query.t * (1.0 - query.t);
    let hi = gap_cutoff(s);
    let total = gap_mass(s, hi, hi, 1e-10)?;
    let mass = match query.mode {
        GapMode::OneGap => gap_mass(s, query.epsilon.min(hi), hi, 1e-8)?,
        GapMode::TwoGap => gap_mass(s, query.epsilon.min(hi), query.epsilon.min(hi), 1e-8)?,
    };
    Ok((mass / total).clamp(0.0, 1.0))
}
