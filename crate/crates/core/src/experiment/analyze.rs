use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{container, evaluate, DenseNet};
use crate::pruning::{parameter_count, sparsify_pass};
use crate::rmt::{esd, mp_fit_test, Spectrum};
use crate::scalar::Scalar;
use crate::spectral::should_split;

/// Spectral audit of one slot. Split slots are analysed through their product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAnalysis {
    pub layer: usize,
    pub out_dim: usize,
    pub in_dim: usize,
    pub split: bool,
    pub params: usize,
    pub lambda_plus: Option<f64>,
    pub sigma_hat_sq: Option<f64>,
    /// `None` when the layer is too small or degenerate to fit.
    pub gof_statistic: Option<f64>,
    pub gof_pass: bool,
    /// Singular values above `sqrt(lambda_+)`.
    pub spike_count: Option<usize>,
    /// Rank to keep when truncating at the edge.
    pub recommended_k: Option<usize>,
    /// `k (N + M)` at the recommended rank.
    pub split_params: Option<usize>,
    pub split_saves: bool,
    /// Why no fit was attempted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

/// Squared singular values of every slot's effective weight.
pub fn layer_spectra<T: Scalar>(net: &DenseNet<T>) -> Result<Vec<Spectrum>> {
    net.slots.iter().map(|s| esd(s.dense_weight().view())).collect()
}

pub fn analyze_weights<T: Scalar>(net: &DenseNet<T>, alpha: f64, beta: f64, gamma: f64) -> Result<Vec<LayerAnalysis>> {
    if !(alpha > 0.0 && alpha < 0.5) || !(beta > 0.0 && beta < 1.0) || !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!(
            "need alpha in (0, 1/2), beta in (0, 1), gamma in (0, 1]; got {alpha}, {beta}, {gamma}"
        )));
    }
    let spectra = layer_spectra(net)?;
    net.slots
        .iter()
        .zip(&spectra)
        .enumerate()
        .map(|(l, (slot, spec))| {
            let (n, m) = (slot.out_dim(), slot.in_dim());
            let gof = match mp_fit_test(spec, alpha, beta, gamma) {
                Ok(g) => g,
                Err(e @ (Error::Parameter(_) | Error::Degenerate(_))) => {
                    return Ok(LayerAnalysis {
                        layer: l,
                        out_dim: n,
                        in_dim: m,
                        split: slot.is_split(),
                        params: slot.param_count(),
                        lambda_plus: None,
                        sigma_hat_sq: None,
                        gof_statistic: None,
                        gof_pass: false,
                        spike_count: None,
                        recommended_k: None,
                        split_params: None,
                        split_saves: false,
                        skipped: Some(e.to_string()),
                    })
                }
                Err(e) => return Err(e),
            };
            let spikes = gof.bema.map(|b| spec.count_above(b.lambda_plus));
            let split_params = spikes.map(|k| k * (n + m));
            Ok(LayerAnalysis {
                layer: l,
                out_dim: n,
                in_dim: m,
                split: slot.is_split(),
                params: slot.param_count(),
                lambda_plus: gof.bema.map(|b| b.lambda_plus),
                sigma_hat_sq: gof.bema.map(|b| b.sigma_hat_sq),
                gof_statistic: Some(gof.statistic),
                gof_pass: gof.pass,
                spike_count: spikes,
                recommended_k: spikes,
                split_params,
                split_saves: spikes.is_some_and(|k| should_split(n, m, k)),
                skipped: None,
            })
        })
        .collect()
}

/// Load a container in double precision and analyse it.
pub fn analyze_container(
    path: &Path,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<(Vec<LayerAnalysis>, Vec<Spectrum>)> {
    let net = container::load::<f64>(path)?;
    Ok((analyze_weights(&net, alpha, beta, gamma)?, layer_spectra(&net)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub xi: f64,
    pub total: usize,
    pub nonzero: usize,
    /// `nonzero / baseline`.
    pub kept_fraction: f64,
    pub accuracy: Option<f64>,
    pub loss: f64,
}

/// Sparsify a copy of `net` at each `xi` and evaluate it on the same `eval` set.
pub fn sparsify_sweep<T: Scalar>(
    net: &DenseNet<T>,
    xi_grid: &[f64],
    eval: &Dataset<T>,
    baseline_params: Option<usize>,
) -> Result<Vec<SweepPoint>> {
    let baseline = baseline_params.unwrap_or_else(|| parameter_count(net).total);
    if baseline == 0 {
        return Err(Error::Parameter("baseline parameter count must be positive".into()));
    }
    xi_grid
        .iter()
        .map(|&xi| {
            let mut copy = net.clone();
            let rep = sparsify_pass(&mut copy, xi)?;
            let m = evaluate(&copy, eval)?;
            Ok(SweepPoint {
                xi,
                total: rep.total,
                nonzero: rep.nonzero,
                kept_fraction: rep.nonzero as f64 / baseline as f64,
                accuracy: m.accuracy,
                loss: m.loss,
            })
        })
        .collect()
}

/// Smallest threshold that leaves at most `max_nonzero` nonzero parameters
/// (biases included) after sparsification; `None` if the biases alone exceed it.
pub fn xi_for_budget<T: Scalar>(net: &DenseNet<T>, max_nonzero: usize) -> Option<f64> {
    let biases: usize = net
        .slots
        .iter()
        .map(|s| s.bias().iter().filter(|b| **b != T::zero()).count())
        .sum();
    let budget = max_nonzero.checked_sub(biases)?;
    let mut mags: Vec<f64> = net
        .slots
        .iter()
        .flat_map(|s| {
            s.matrices()
                .into_iter()
                .flat_map(|m| m.iter().map(|w| w.abs().to_f64_lossy()))
        })
        .filter(|&w| w > 0.0)
        .collect();
    if mags.len() <= budget {
        return Some(0.0);
    }
    mags.sort_by(|a, b| b.total_cmp(a));
    // weights with |w| >= xi survive; walk back over ties at the cut
    let cut = mags[budget];
    let j = mags[..budget].iter().rposition(|&w| w > cut).map_or(0, |i| i + 1);
    Some(if j == 0 { f64::INFINITY } else { mags[j - 1] })
}

/// Budgets as fractions of `baseline`, converted to thresholds for `net`.
pub fn xi_grid_for_fractions<T: Scalar>(net: &DenseNet<T>, fractions: &[f64], baseline: usize) -> Vec<f64> {
    fractions
        .iter()
        .filter_map(|&f| xi_for_budget(net, (f * baseline as f64).floor() as usize))
        .collect()
}
