//! Classification confidence, accuracy, good sets and the bound factors `g_phi`, `h_phi`.

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::net::DenseNet;
use super::train::EVAL_CHUNK;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub delta_x: f64,
    pub true_class: usize,
    pub logits: Vec<f64>,
}

/// `X_true - max_{j != true} X_j`.
pub fn classification_confidence<T: Scalar>(logits: ArrayView1<'_, T>, true_class: usize) -> Result<T> {
    let k = logits.len();
    if k < 2 {
        return Err(Error::Domain(format!("confidence needs at least 2 classes, got {k}")));
    }
    if true_class >= k {
        return Err(Error::Domain(format!("class {true_class} outside 0..{k}")));
    }
    let rival = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != true_class)
        .fold(T::neg_infinity(), |m, (_, &x)| m.max(x));
    Ok(logits[true_class] - rival)
}

pub fn confidence_record<T: Scalar>(logits: ArrayView1<'_, T>, true_class: usize) -> Result<ConfidenceRecord> {
    Ok(ConfidenceRecord {
        delta_x: classification_confidence(logits, true_class)?.to_f64_lossy(),
        true_class,
        logits: logits.iter().map(|x| x.to_f64_lossy()).collect(),
    })
}

/// `delta X` for every sample of a classification dataset.
pub fn confidences<T: Scalar>(net: &DenseNet<T>, data: &Dataset<T>) -> Result<Vec<f64>> {
    let labels = data
        .targets
        .labels()
        .ok_or_else(|| Error::Domain("classification confidence needs class labels".into()))?;
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let logits = net.forward_batch(data.inputs.select(Axis(0), chunk).view())?;
        for (row, &i) in logits.outer_iter().zip(chunk) {
            out.push(classification_confidence(row, labels[i])?.to_f64_lossy());
        }
    }
    Ok(out)
}

/// Fraction of samples with strictly positive confidence.
pub fn accuracy<T: Scalar>(net: &DenseNet<T>, data: &Dataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Domain("accuracy of an empty dataset".into()));
    }
    let d = confidences(net, data)?;
    Ok(d.iter().filter(|&&x| x > 0.0).count() as f64 / d.len() as f64)
}

/// Indices of samples with `delta X > eta`.
pub fn good_set<T: Scalar>(net: &DenseNet<T>, data: &Dataset<T>, eta: f64) -> Result<Vec<usize>> {
    if !(eta >= 0.0) {
        return Err(Error::Parameter(format!("margin must be >= 0, got {eta}")));
    }
    Ok(confidences(net, data)?
        .into_iter()
        .enumerate()
        .filter(|&(_, d)| d > eta)
        .map(|(i, _)| i)
        .collect())
}

fn check_layer<T: Scalar>(net: &DenseNet<T>, b: usize) -> Result<()> {
    if b == 0 || b > net.depth() {
        return Err(Error::Domain(format!("layer index {b} outside 1..={}", net.depth())));
    }
    Ok(())
}

/// Activations entering layer `b` (1-based) for a row of inputs.
pub fn prefix_activations<T: Scalar>(net: &DenseNet<T>, x: ArrayView2<'_, T>, b: usize) -> Result<ndarray::Array2<T>> {
    check_layer(net, b)?;
    net.forward_prefix(x, b - 1)
}

/// `(prod_{l>b} sigma_max(W_l), prod_{l>b} ||W_l||_1)` with the operator 1-norm
/// (maximum absolute column sum).
pub fn downstream_factors<T: Scalar>(net: &DenseNet<T>, b: usize) -> Result<(f64, f64)> {
    check_layer(net, b)?;
    let mut spec = 1.0;
    let mut col = 1.0;
    for slot in &net.slots[b..] {
        let w = slot.dense_weight();
        spec *= linalg::spectral_norm(w.view())?.to_f64_lossy();
        col *= linalg::max_abs_column_sum(w.view()).to_f64_lossy();
    }
    Ok((spec, col))
}

/// `||lambda o W_{b-1} o ... o lambda o W_1 s||_2 * prod_{l>b} sigma_max(W_l)`.
pub fn g_phi<T: Scalar>(net: &DenseNet<T>, s: ArrayView1<'_, T>, b: usize) -> Result<f64> {
    let a = prefix_activations(net, s.insert_axis(Axis(0)), b)?;
    let (spec, _) = downstream_factors(net, b)?;
    Ok(linalg::norm2(a.row(0)).to_f64_lossy() * spec)
}

/// `||lambda o W_{b-1} o ... o lambda o W_1 s||_1 * prod_{l>b} ||W_l||_1`.
pub fn h_phi<T: Scalar>(net: &DenseNet<T>, s: ArrayView1<'_, T>, b: usize) -> Result<f64> {
    let a = prefix_activations(net, s.insert_axis(Axis(0)), b)?;
    let (_, col) = downstream_factors(net, b)?;
    Ok(linalg::norm1(a.row(0)).to_f64_lossy() * col)
}
