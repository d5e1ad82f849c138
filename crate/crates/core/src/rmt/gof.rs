//! Goodness of fit of a spectrum's bulk to its BEMA-fitted Marchenko-Pastur law.

use serde::{Deserialize, Serialize};

use super::bema::{bema_lambda_plus, trim_window, BemaResult};
use super::mp::MpParams;
use super::spectrum::Spectrum;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub statistic: f64,
    pub pass: bool,
    pub gamma: f64,
    /// `None` when the bulk is degenerate and no law could be fitted.
    pub bema: Option<BemaResult>,
}

/// Sup-distance between the empirical CDF and the fitted MP CDF over the
/// trimmed window of spectrum points; `pass` iff it does not exceed `gamma`.
///
/// A spectrum whose bulk collapses onto zero (for example a low-rank matrix)
/// cannot be matched by any MP law; its statistic is reported as 1.
pub fn mp_fit_test(spectrum: &Spectrum, alpha: f64, beta: f64, gamma: f64) -> Result<GofResult> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let bema = match bema_lambda_plus(spectrum, alpha, beta) {
        Ok(b) => b,
        Err(Error::Degenerate(_)) if spectrum.max() > 0.0 => {
            return Ok(GofResult {
                statistic: 1.0,
                pass: gamma >= 1.0,
                gamma,
                bema: None,
            })
        }
        Err(e) => return Err(e),
    };
    let law = bema.law()?;
    let statistic = window_statistic(spectrum, &law, alpha)?;
    Ok(GofResult {
        statistic,
        pass: statistic <= gamma,
        gamma,
        bema: Some(bema),
    })
}

fn window_statistic(spectrum: &Spectrum, law: &MpParams, alpha: f64) -> Result<f64> {
    let m = spectrum.len();
    let (lo, hi) = trim_window(m, alpha);
    let vals = spectrum.values();
    let mut s: f64 = 0.0;
    for i in lo..=hi {
        let x = vals[i - 1];
        s = s.max((spectrum.ecdf(x) - law.cdf(x)?).abs());
    }
    Ok(s.clamp(0.0, 1.0))
}

/// Two-sided Kolmogorov-Smirnov distance between the spectrum and `law`
/// over all points.
pub fn ks_distance(spectrum: &Spectrum, law: &MpParams) -> Result<f64> {
    let m = spectrum.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in spectrum.values().iter().enumerate() {
        let f = law.cdf(x)?;
        d = d.max(((i + 1) as f64 / m - f).abs()).max((f - i as f64 / m).abs());
    }
    Ok(d)
}
