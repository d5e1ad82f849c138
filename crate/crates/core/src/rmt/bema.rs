//! Bulk eigenvalue matching: least-squares fit of a Marchenko-Pastur scale to
//! the trimmed bulk of a spectrum, then a Tracy-Widom margin on the edge.

use serde::{Deserialize, Serialize};

use super::mp::{MpParams, Tail};
use super::spectrum::Spectrum;
use super::tracy_widom::tracy_widom_quantile;
use crate::error::{Error, Result};

/// Minimum spectrum length accepted by the estimator.
pub const MIN_LEN: usize = 10;

/// Fitted bulk scale relative to the largest value below which the fit is
/// reported as degenerate.
const DEGENERATE_RATIO: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BemaResult {
    pub sigma_hat_sq: f64,
    pub lambda_plus: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Aspect ratio `c <= 1` of the fitted law.
    pub aspect: f64,
    /// Number of spectrum values entering the fit.
    pub fitted: usize,
}

impl BemaResult {
    /// The fitted law `MP(sigma_hat^2, c)`.
    pub fn law(&self) -> Result<MpParams> {
        MpParams::new(self.sigma_hat_sq, self.aspect)
    }

    /// Singular-value threshold `sqrt(lambda_+)`.
    pub fn threshold(&self) -> f64 {
        self.lambda_plus.sqrt()
    }
}

/// 1-based index window `[ceil(alpha M), floor((1 - alpha) M)]`, clipped to `k >= 1`.
pub fn trim_window(m: usize, alpha: f64) -> (usize, usize) {
    let mf = m as f64;
    let lo = ((alpha * mf) - 1e-9).ceil().max(1.0) as usize;
    let hi = (((1.0 - alpha) * mf) + 1e-9).floor() as usize;
    (lo, hi)
}

/// Tracy-Widom edge correction factor: `(1 + sqrt c)^2 + t N^{-2/3} (1 + sqrt c)(1 + 1/sqrt c)^{1/3}`.
///
/// At `c = 1` this is `4 + 2^{4/3} t N^{-2/3}`.
pub fn edge_factor(c: f64, n_large: usize, t: f64) -> f64 {
    let r = c.sqrt();
    (1.0 + r).powi(2) + t * (n_large as f64).powf(-2.0 / 3.0) * (1.0 + r) * (1.0 + 1.0 / r).cbrt()
}

pub fn bema_lambda_plus(spectrum: &Spectrum, alpha: f64, beta: f64) -> Result<BemaResult> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1/2), got {alpha}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Parameter(format!("beta must lie in (0, 1), got {beta}")));
    }
    let m = spectrum.len();
    if m < MIN_LEN {
        return Err(Error::Parameter(format!(
            "spectrum has {m} values; at least {MIN_LEN} are needed"
        )));
    }
    let (lo, hi) = trim_window(m, alpha);
    if lo > hi {
        return Err(Error::Parameter(format!(
            "trimmed index range [{lo}, {hi}] is empty for M = {m}, alpha = {alpha}"
        )));
    }
    let c = spectrum.aspect();
    let unit = MpParams::new(1.0, c)?;
    let values = spectrum.values();
    let mut num = 0.0;
    let mut den = 0.0;
    for k in lo..=hi {
        let q = unit.quantile(k as f64 / m as f64, Tail::Lower)?;
        num += q * values[k - 1];
        den += q * q;
    }
    if den <= 0.0 {
        return Err(Error::Degenerate("all matched MP quantiles are zero".into()));
    }
    let sigma_hat_sq = num / den;
    let top = spectrum.max();
    if !(sigma_hat_sq > 0.0) || sigma_hat_sq * (1.0 + c.sqrt()).powi(2) <= DEGENERATE_RATIO * top {
        return Err(Error::Degenerate(format!(
            "fitted bulk scale {sigma_hat_sq:e} is negligible against the largest value {top:e}"
        )));
    }
    let t = tracy_widom_quantile(1.0 - beta)?;
    Ok(BemaResult {
        sigma_hat_sq,
        lambda_plus: sigma_hat_sq * edge_factor(c, spectrum.n_large(), t),
        alpha,
        beta,
        aspect: c,
        fitted: hi - lo + 1,
    })
}
