use serde::{Deserialize, Serialize};

use super::config::VerifyConfig;
use crate::error::{Error, Result};
use crate::rmt::{bema_lambda_plus, esd, mp_fit_test, tracy_widom_quantile, MpParams, Spectrum, Tail};
use crate::spiked::{self, NoiseModel, Planting, SpikeSpec};

/// Outcome of one property: passes iff `error <= tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub tolerance_override: Option<f64>,
    pub properties: Vec<PropertyResult>,
    pub passed: usize,
    pub failed: usize,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.failed == 0
    }
}

struct Suite {
    over: Option<f64>,
    out: Vec<PropertyResult>,
}

impl Suite {
    fn check(&mut self, name: &str, tolerance: f64, run: impl FnOnce() -> Result<(f64, String)>) {
        let tolerance = self.over.unwrap_or(tolerance);
        let (error, detail) = match run() {
            Ok(v) => v,
            Err(e) => (f64::INFINITY, format!("error: {e}")),
        };
        self.out.push(PropertyResult {
            name: name.into(),
            error,
            tolerance,
            pass: error <= tolerance,
            detail,
        });
    }
}

/// Integral of the continuous MP density by the midpoint rule after
/// `x = lo + (hi - lo) sin^2(t)`, which removes the edge singularities.
fn pdf_mass(law: &MpParams, nodes: usize) -> f64 {
    let (lo, hi) = law.support();
    let h = std::f64::consts::FRAC_PI_2 / nodes as f64;
    (0..nodes)
        .map(|i| {
            let t = (i as f64 + 0.5) * h;
            let x = lo + (hi - lo) * t.sin().powi(2);
            law.pdf(x) * (hi - lo) * 2.0 * t.sin() * t.cos() * h
        })
        .sum()
}

/// A fixture computed once and read by several properties.
fn shared<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn gaussian_spectrum(n: usize, m: usize, seed: u64) -> Result<Spectrum> {
    let w = spiked::sample_gaussian::<f64>(n, m, 1.0 / n as f64, seed)?;
    esd(w.view())
}

/// Fixed-seed checks of the Marchenko-Pastur, BEMA, goodness-of-fit and
/// spiked-model machinery.
pub fn verify_rmt(config: &VerifyConfig) -> VerifyReport {
    let seed = config.seed;
    let mut s = Suite {
        over: config.tolerance,
        out: Vec::new(),
    };

    s.check("mp_support_unit_square", 1e-15, || {
        let (lo, hi) = MpParams::new(1.0, 1.0)?.support();
        Ok((lo.abs() + (hi - 4.0).abs(), format!("support ({lo}, {hi})")))
    });
    s.check("mp_pdf_normalization", 1e-6, || {
        let mut worst: f64 = 0.0;
        for c in [0.1, 0.25, 0.5, 1.0] {
            let law = MpParams::new(1.3, c)?;
            worst = worst.max((pdf_mass(&law, 20_000) - 1.0).abs());
        }
        Ok((worst, "c in {0.1, 0.25, 0.5, 1}".into()))
    });
    s.check("mp_cdf_quantile_identity", 1e-6, || {
        let mut worst: f64 = 0.0;
        for c in [0.25, 0.7, 1.0] {
            let law = MpParams::new(0.8, c)?;
            for p in [0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
                let x = law.quantile(p, Tail::Lower)?;
                worst = worst.max((law.cdf(x)? - p).abs());
            }
        }
        Ok((worst, "max |cdf(quantile(p)) - p|".into()))
    });
    s.check("tracy_widom_q95", 1e-3, || {
        let t = tracy_widom_quantile(0.95)?;
        Ok(((t - 0.9793).abs(), format!("t_0.95 = {t}")))
    });
    let wishart_bema = shared(gaussian_spectrum(500, 500, seed).and_then(|sp| bema_lambda_plus(&sp, 0.1, 0.1)));
    s.check("bema_wishart_lambda_plus", 0.2, || {
        let b = wishart_bema.clone().map_err(Error::Domain)?;
        Ok(((b.lambda_plus - 4.0).abs(), format!("lambda_+ = {}", b.lambda_plus)))
    });
    s.check("bema_wishart_sigma_sq", 0.05, || {
        let b = wishart_bema.clone().map_err(Error::Domain)?;
        Ok(((b.sigma_hat_sq - 1.0).abs(), format!("sigma^2 = {}", b.sigma_hat_sq)))
    });
    s.check("bema_scale_equivariance", 1e-12, || {
        let sp = gaussian_spectrum(300, 200, seed)?;
        let k = 2.5;
        let a = bema_lambda_plus(&sp, 0.1, 0.1)?;
        let b = bema_lambda_plus(&sp.scaled(k)?, 0.1, 0.1)?;
        let rel = ((b.lambda_plus - k * a.lambda_plus) / (k * a.lambda_plus))
            .abs()
            .max(((b.sigma_hat_sq - k * a.sigma_hat_sq) / (k * a.sigma_hat_sq)).abs());
        Ok((rel, format!("scale {k}")))
    });
    s.check("gof_monotone_in_gamma", 0.0, || {
        let sample = spiked::build_deformed::<f64>(
            &SpikeSpec::new(vec![6.0, 4.0], 300, 200, None)?,
            seed,
            Planting::RandomRotations,
        )?;
        let sp = esd(sample.w.view())?;
        let mut flips = 0.0;
        let mut prev = false;
        for i in 1..=100 {
            let pass = mp_fit_test(&sp, 0.1, 0.1, i as f64 / 100.0)?.pass;
            if prev && !pass {
                flips += 1.0;
            }
            prev = pass;
        }
        Ok((flips, "pass(gamma) never turns false as gamma grows".into()))
    });
    s.check("gof_noise_statistic", 0.1, || {
        let sp = gaussian_spectrum(400, 300, seed)?;
        let g = mp_fit_test(&sp, 0.1, 0.1, 0.7)?;
        Ok((g.statistic, "pure noise fits the MP law".into()))
    });
    s.check("noise_top_singular", 0.05, || {
        let sp = gaussian_spectrum(600, 600, seed)?;
        let top = sp.max().sqrt();
        Ok(((top - 2.0).abs(), format!("largest singular value {top}")))
    });

    let spikes = SpikeSpec::new(vec![8.0, 5.0, 3.0], 600, 600, None);
    let measured = shared(spikes.and_then(|sp| {
        let sample = spiked::build_deformed::<f64>(&sp, seed, Planting::RandomRotations)?;
        spiked::measure_spikes(&sample, NoiseModel::GaussianRect)
    }));
    s.check("spike_singular_prediction", 0.03, || {
        let m = measured.clone().map_err(Error::Domain)?;
        let rel = m
            .measured_singular
            .iter()
            .zip(&m.predicted_singular)
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        Ok((
            rel,
            format!(
                "measured {:?} predicted {:?}",
                m.measured_singular, m.predicted_singular
            ),
        ))
    });
    s.check("spike_overlap_prediction", 0.05, || {
        let m = measured.clone().map_err(Error::Domain)?;
        let err = m
            .measured_left_overlap
            .iter()
            .zip(&m.predicted_overlap)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok((
            err,
            format!(
                "measured {:?} predicted {:?}",
                m.measured_left_overlap, m.predicted_overlap
            ),
        ))
    });
    s.check("f_w_gaussian_at_5", 0.03, || {
        let f = spiked::f_w(&[5.0], NoiseModel::GaussianRect, 1.0)?;
        Ok(((f - 1.0).abs(), format!("f_W = {f}")))
    });
    s.check("theta_bar_square", 5e-3, || {
        let t = spiked::theta_bar(&MpParams::new(1.0, 1.0)?)?;
        Ok(((t - 1.0).abs(), format!("theta_bar = {t}")))
    });
    s.check("d_inverse_square", 1e-6, || {
        let law = MpParams::new(1.0, 1.0)?;
        let mut worst: f64 = 0.0;
        for sigma in [1.5, 2.0, 5.0] {
            let z = spiked::predict_spike_singular_law(sigma, &law)?;
            worst = worst.max((z - (sigma + 1.0 / sigma)).abs());
        }
        Ok((worst, "D^-1 against sigma + 1/sigma".into()))
    });
    s.check("approximation_lemma", 0.1, || {
        let sp = SpikeSpec::new(vec![50.0, 40.0, 30.0], 600, 600, None)?;
        let sample = spiked::build_deformed::<f64>(&sp, seed, Planting::RandomRotations)?;
        let t = spiked::mp_truncate(&sample.w, 0.1, 0.1)?;
        let err = spiked::approximation_error(&sample, &t.dense)?;
        Ok(((err - 1.0).abs(), format!("||S - W'|| = {err}, kept {}", t.kept)))
    });
    s.check("pruning_lemma_bound", 0.0, || {
        let sp = SpikeSpec::new(vec![10.0, 6.0], 200, 150, None)?;
        let sample = spiked::build_deformed::<f64>(&sp, seed, Planting::RandomRotations)?;
        let opts = spiked::BoundOptions {
            probes: 200,
            probe_seed: seed,
            ..Default::default()
        };
        let r = spiked::verify_pruning_bounds(&sample, None, &opts)?;
        Ok((
            r.lemma_violations as f64,
            format!("{} probes, delta_max {}", r.probes.len(), r.delta_max),
        ))
    });

    let failed = s.out.iter().filter(|p| !p.pass).count();
    VerifyReport {
        seed,
        tolerance_override: config.tolerance,
        passed: s.out.len() - failed,
        failed,
        properties: s.out,
    }
}
