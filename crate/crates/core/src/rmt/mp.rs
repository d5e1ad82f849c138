//! The Marchenko-Pastur law.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::quadrature;
use crate::error::{Error, Result};

/// Smallest and largest accepted aspect ratio.
pub const ASPECT_RANGE: (f64, f64) = (1e-8, 1e8);

const CDF_TOL: f64 = 1e-10;
const QUANTILE_TOL: f64 = 1e-8;

/// Parameters `(sigma^2, c)` of a Marchenko-Pastur law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpParams {
    pub sigma_sq: f64,
    pub c: f64,
}

/// Which tail a probability refers to when inverting the CDF.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tail {
    /// `cdf(x) = p`
    Lower,
    /// `cdf(x) = 1 - p`
    Upper,
}

impl MpParams {
    pub fn new(sigma_sq: f64, c: f64) -> Result<Self> {
        if !(sigma_sq.is_finite() && sigma_sq > 0.0) {
            return Err(Error::Domain(format!(
                "sigma^2 must be finite and positive, got {sigma_sq}"
            )));
        }
        if !(c.is_finite() && c >= ASPECT_RANGE.0 && c <= ASPECT_RANGE.1) {
            return Err(Error::Domain(format!(
                "aspect ratio must lie in [{:e}, {:e}], got {c:e}",
                ASPECT_RANGE.0, ASPECT_RANGE.1
            )));
        }
        Ok(MpParams { sigma_sq, c })
    }

    /// `(lambda_-, lambda_+)`.
    pub fn support(&self) -> (f64, f64) {
        let r = self.c.sqrt();
        (self.sigma_sq * (1.0 - r).powi(2), self.sigma_sq * (1.0 + r).powi(2))
    }

    /// Mass of the atom at zero, `max(0, 1 - 1/c)`.
    pub fn point_mass(&self) -> f64 {
        if self.c > 1.0 {
            1.0 - 1.0 / self.c
        } else {
            0.0
        }
    }

    fn validate(&self) -> Result<()> {
        MpParams::new(self.sigma_sq, self.c).map(|_| ())
    }

    /// Continuous density at `x`.
    pub fn pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(x > lo && x < hi) || x <= 0.0 {
            return 0.0;
        }
        ((hi - x) * (x - lo)).sqrt() / (2.0 * PI * self.sigma_sq * self.c * x)
    }

    /// Density of the continuous part after `x = lo + (hi - lo) sin^2 u`,
    /// multiplied by `dx/du`. Bounded on `[0, pi/2]`, including `c = 1`.
    pub(crate) fn pdf_u(&self, u: f64) -> f64 {
        let (lo, hi) = self.support();
        let w = hi - lo;
        let (s, c) = u.sin_cos();
        let x = lo + w * s * s;
        if x <= 0.0 {
            // only reachable at c = 1, u = 0, where the limit is finite
            return if lo == 0.0 { w / (PI * self.sigma_sq) } else { 0.0 };
        }
        w * w * s * s * c * c / (PI * self.sigma_sq * self.c * x)
    }

    fn u_of(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        t.sqrt().asin()
    }

    pub(crate) fn x_of(&self, u: f64) -> f64 {
        let (lo, hi) = self.support();
        lo + (hi - lo) * u.sin().powi(2)
    }

    /// Continuous mass on `[lambda_-, x(u)]`.
    fn continuous_cdf_u(&self, u: f64) -> Result<f64> {
        if u <= 0.0 {
            return Ok(0.0);
        }
        let u = u.min(FRAC_PI_2);
        quadrature::integrate(|t| self.pdf_u(t), 0.0, u, CDF_TOL)
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        if x.is_nan() {
            return Err(Error::Domain("cdf evaluated at NaN".into()));
        }
        if x < 0.0 {
            return Ok(0.0);
        }
        let (lo, hi) = self.support();
        let atom = self.point_mass();
        if x >= hi {
            return Ok(1.0);
        }
        if x <= lo {
            return Ok(atom);
        }
        let v = atom + self.continuous_cdf_u(self.u_of(x))?;
        Ok(v.clamp(0.0, 1.0))
    }

    /// Inverse CDF. With [`Tail::Upper`] the returned `x` satisfies `cdf(x) = 1 - p`.
    ///
    /// Probabilities that fall inside the atom at zero map to `0`.
    pub fn quantile(&self, p: f64, tail: Tail) -> Result<f64> {
        self.validate()?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("probability must lie in [0, 1], got {p}")));
        }
        let target = match tail {
            Tail::Lower => p,
            Tail::Upper => 1.0 - p,
        };
        let (lo, hi) = self.support();
        let atom = self.point_mass();
        if target <= atom {
            return Ok(if atom > 0.0 { 0.0 } else { lo });
        }
        if target >= 1.0 {
            return Ok(hi);
        }
        // Newton in u with a bisection safeguard; dF/du = pdf_u(u).
        let g = |u: f64| -> Result<f64> { Ok(atom + self.continuous_cdf_u(u)? - target) };
        let (mut a, mut b) = (0.0, FRAC_PI_2);
        let mut u = FRAC_PI_2 * target;
        let mut fu = g(u)?;
        for _ in 0..200 {
            if fu.abs() <= QUANTILE_TOL * 1e-3 {
                break;
            }
            if fu > 0.0 {
                b = u;
            } else {
                a = u;
            }
            let d = self.pdf_u(u);
            let newton = u - fu / d;
            u = if d > 0.0 && newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            fu = g(u)?;
            if b - a < 1e-15 {
                break;
            }
        }
        if fu.abs() > QUANTILE_TOL {
            return Err(Error::Numerical {
                what: format!("MP quantile at p = {p}"),
                achieved: fu.abs(),
                wanted: QUANTILE_TOL,
            });
        }
        Ok(self.x_of(u))
    }
}

/// `(lambda_-, lambda_+)` of the law.
pub fn mp_support(params: &MpParams) -> Result<(f64, f64)> {
    params.validate()?;
    Ok(params.support())
}

pub fn mp_pdf(x: f64, params: &MpParams) -> Result<f64> {
    params.validate()?;
    Ok(params.pdf(x))
}

pub fn mp_cdf(x: f64, params: &MpParams) -> Result<f64> {
    params.cdf(x)
}

pub fn mp_quantile(p: f64, params: &MpParams, tail: Tail) -> Result<f64> {
    params.quantile(p, tail)
}
