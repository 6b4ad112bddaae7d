//! Closed-form reference spectra and log-log least squares.
//!
//! Four models: Kingman `2/k`, supercritical birth-death
//! `n / ((lambda - mu) k (k - 1))` for k >= 2, and the two gamma-ratio
//! curves `Γ(k - 2/5)/k!` (bulk) and `Γ(k + 1/2)/k!` (boundary), whose large-k
//! decay is `k^(-7/5)` and `k^(-1/2)`. The multiplicative constants in front
//! of the gamma-ratio curves are unknown, so comparisons always run on curves
//! normalized to sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum TheoryModel {
    Kingman,
    BirthDeath { lambda: f64, mu: f64 },
    LandscapeBulk,
    LandscapeBoundary,
}

/// Expected branch-length curve over k = 1..=kmax.
///
/// `values[k - 1]` is `None` where the model leaves the entry undefined
/// (birth-death at k = 1, whose expectation grows with the observation
/// horizon instead of converging).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCurve {
    pub model: TheoryModel,
    pub values: Vec<Option<f64>>,
    pub normalized: bool,
}

impl TheoryCurve {
    /// Normalize the defined entries to sum to 1.
    pub fn into_normalized(mut self) -> TheoryCurve {
        let total: f64 = self.values.iter().flatten().sum();
        if total > 0.0 {
            for v in self.values.iter_mut().flatten() {
                *v /= total;
            }
        }
        self.normalized = true;
        self
    }

    pub fn value(&self, k: usize) -> Option<f64> {
        self.values.get(k - 1).copied().flatten()
    }
}

/// Expected branch lengths for the chosen model.
pub fn expected_lengths(model: TheoryModel, n: usize, kmax: usize) -> Result<TheoryCurve> {
    if kmax == 0 {
        return Err(Error::InvalidParameter("kmax must be at least 1".into()));
    }
    if matches!(
        model,
        TheoryModel::Kingman | TheoryModel::BirthDeath { .. }
    ) && (n < 2 || kmax > n - 1)
    {
        return Err(Error::InvalidParameter(format!(
            "sample-size models need 1 <= kmax <= n - 1, got kmax = {kmax}, n = {n}"
        )));
    }
    let values: Vec<Option<f64>> = match model {
        TheoryModel::Kingman => (1..=kmax).map(|k| Some(2.0 / k as f64)).collect(),
        TheoryModel::BirthDeath { lambda, mu } => {
            if !(lambda > mu && lambda.is_finite() && mu.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "birth-death needs lambda > mu, got lambda = {lambda}, mu = {mu}"
                )));
            }
            (1..=kmax)
                .map(|k| {
                    (k >= 2).then(|| n as f64 / ((lambda - mu) * k as f64 * (k as f64 - 1.0)))
                })
                .collect()
        }
        TheoryModel::LandscapeBulk => (1..=kmax).map(|k| Some(gamma_ratio(k, -0.4))).collect(),
        TheoryModel::LandscapeBoundary => (1..=kmax).map(|k| Some(gamma_ratio(k, 0.5))).collect(),
    };
    Ok(TheoryCurve {
        model,
        values,
        normalized: false,
    })
}

/// `Γ(k + shift) / k!` evaluated in log space so that k in the millions does
/// not overflow.
pub fn gamma_ratio(k: usize, shift: f64) -> f64 {
    let k = k as f64;
    (ln_gamma(k + shift) - ln_gamma(k + 1.0)).exp()
}

/// Ordinary least squares of `ln y` on `ln x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// The x-range actually used by the fit, after dropping zero entries.
    pub k_range: (f64, f64),
}

/// Least-squares slope on a log-log scale.
///
/// Entries with `y <= 0` are dropped (with a logged count) before fitting;
/// at least two must survive. When every surviving `y` is identical the fit
/// is the flat line with `r_squared` defined as 1.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidParameter(format!(
            "mismatched lengths: {} xs vs {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientPoints(xs.len()));
    }
    let mut lx = Vec::with_capacity(xs.len());
    let mut ly = Vec::with_capacity(ys.len());
    let mut kept_x = Vec::with_capacity(xs.len());
    let mut dropped = 0usize;
    for (&x, &y) in xs.iter().zip(ys) {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "log-log fit requires positive x, got {x}"
            )));
        }
        if y > 0.0 && y.is_finite() {
            lx.push(x.ln());
            ly.push(y.ln());
            kept_x.push(x);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("loglog_slope dropped {dropped} nonpositive y entries before fitting");
    }
    if lx.len() < 2 {
        return Err(Error::InsufficientPoints(lx.len()));
    }
    let n = lx.len() as f64;
    let xbar = lx.iter().sum::<f64>() / n;
    let ybar = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let sxx: f64 = lx.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sst: f64 = ly.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter(
            "log-log fit needs at least two distinct x values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let r_squared = if sst == 0.0 {
        1.0
    } else {
        let ssr: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| {
                let e = y - (intercept + slope * x);
                e * e
            })
            .sum();
        1.0 - ssr / sst
    };
    let (mut kmin, mut kmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in kept_x {
        kmin = kmin.min(x);
        kmax = kmax.max(x);
    }
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        k_range: (kmin, kmax),
    })
}
