use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::confidence::classification_confidence;
use super::layer::{Activation, LayerSlot};
use super::net::{softmax_rows, DenseNet, Init};
use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probabilities are floored here before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Multiplicative per-epoch learning-rate factor.
    pub lr_decay: f64,
    /// Entrywise L1 coefficient.
    pub mu1: f64,
    /// Squared-Frobenius coefficient.
    pub mu2: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.02,
            momentum: 0.9,
            batch_size: 128,
            lr_decay: 1.0,
            mu1: 0.0,
            mu2: 0.0005,
            epochs: 40,
            seed: 0,
            init: Init::NormalInvN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.mu1 >= 0.0 && self.mu2 >= 0.0) {
            return bad("mu1 and mu2 must be >= 0".into());
        }
        Ok(())
    }
}

/// `lr * decay^epoch`.
pub fn lr_step(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr * config.lr_decay.powi(epoch as i32)
}

/// Loss split into its data term and the two penalties.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub l1: f64,
    pub l2: f64,
    /// Samples whose true-class probability hit [`PROB_FLOOR`].
    pub clamped: usize,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.data + self.l1 + self.l2
    }
}

/// Gradient (or velocity) for one slot, matrices in [`LayerSlot::matrices`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotGrad<T> {
    pub weights: Vec<Array2<T>>,
    pub bias: Array1<T>,
}

impl<T: Scalar> SlotGrad<T> {
    pub fn zeros_like(slot: &LayerSlot<T>) -> Self {
        SlotGrad {
            weights: slot.matrices().iter().map(|m| Array2::zeros(m.raw_dim())).collect(),
            bias: Array1::zeros(slot.out_dim()),
        }
    }

    fn matches(&self, slot: &LayerSlot<T>) -> bool {
        let mats = slot.matrices();
        mats.len() == self.weights.len()
            && mats.iter().zip(&self.weights).all(|(a, b)| a.dim() == b.dim())
            && self.bias.len() == slot.out_dim()
    }
}

fn penalties<T: Scalar>(net: &DenseNet<T>, mu1: f64, mu2: f64) -> (f64, f64) {
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for slot in &net.slots {
        for m in slot.matrices() {
            if mu1 > 0.0 {
                l1 += m.iter().map(|w| w.to_f64_lossy().abs()).sum::<f64>();
            }
            if mu2 > 0.0 {
                l2 += m.iter().map(|w| w.to_f64_lossy().powi(2)).sum::<f64>();
            }
        }
    }
    (mu1 * l1, mu2 * l2)
}

/// Data-loss value and its gradient with respect to the network output.
/// Cross-entropy over softmax for class targets, mean squared error otherwise.
fn output_loss<T: Scalar>(out: &Array2<T>, targets: &Targets<T>) -> Result<(f64, usize, Array2<T>)> {
    let b = out.nrows();
    if targets.len() != b {
        return Err(Error::Shape(format!("{b} outputs but {} targets", targets.len())));
    }
    match targets {
        Targets::Classes { labels, .. } => {
            let mut p = softmax_rows(out.view());
            let mut loss = 0.0;
            let mut clamped = 0;
            for (i, &y) in labels.iter().enumerate() {
                if y >= p.ncols() {
                    return Err(Error::Domain(format!(
                        "label {y} but the network has {} outputs",
                        p.ncols()
                    )));
                }
                let py = p[[i, y]].to_f64_lossy();
                if py < PROB_FLOOR {
                    clamped += 1;
                }
                loss -= py.max(PROB_FLOOR).ln();
                p[[i, y]] -= T::one();
            }
            let inv_b = T::of(1.0 / b as f64);
            p.mapv_inplace(|v| v * inv_b);
            Ok((loss / b as f64, clamped, p))
        }
        Targets::Values(y) => {
            if y.dim() != out.dim() {
                return Err(Error::Shape(format!(
                    "outputs {:?} but targets {:?}",
                    out.dim(),
                    y.dim()
                )));
            }
            let diff = out - y;
            let n = diff.len() as f64;
            let loss = diff.iter().map(|d| d.to_f64_lossy().powi(2)).sum::<f64>() / n;
            let scale = T::of(2.0 / n);
            Ok((loss, 0, diff.mapv(|d| d * scale)))
        }
    }
}

fn count_correct<T: Scalar>(out: &Array2<T>, targets: &Targets<T>) -> usize {
    match targets {
        Targets::Classes { labels, .. } => out
            .outer_iter()
            .zip(labels)
            .filter(|(row, &y)| classification_confidence(row.view(), y).is_ok_and(|d| d > T::zero()))
            .count(),
        Targets::Values(_) => 0,
    }
}

/// Penalised loss on a batch.
pub fn loss<T: Scalar>(
    net: &DenseNet<T>,
    x: ArrayView2<'_, T>,
    targets: &Targets<T>,
    mu1: f64,
    mu2: f64,
) -> Result<LossBreakdown> {
    let out = net.forward_batch(x)?;
    let (data, clamped, _) = output_loss(&out, targets)?;
    let (l1, l2) = penalties(net, mu1, mu2);
    Ok(LossBreakdown { data, l1, l2, clamped })
}

/// Loss, per-slot gradients by reverse accumulation, and the number of
/// samples with positive classification confidence.
pub fn gradients<T: Scalar>(
    net: &DenseNet<T>,
    x: ArrayView2<'_, T>,
    targets: &Targets<T>,
    mu1: f64,
    mu2: f64,
) -> Result<(LossBreakdown, Vec<SlotGrad<T>>, usize)> {
    let tr = net.trace(x)?;
    let depth = net.depth();
    let out = &tr.inputs[depth];
    let (data, clamped, mut d) = output_loss(out, targets)?;
    let correct = count_correct(out, targets);
    let (l1, l2) = penalties(net, mu1, mu2);

    let (m1, m2) = (T::of(mu1), T::of(2.0 * mu2));
    let reg = |g: &mut Array2<T>, w: &Array2<T>| {
        if mu1 > 0.0 || mu2 > 0.0 {
            Zip::from(g).and(w).for_each(|g, &w| {
                let sign = if w > T::zero() {
                    T::one()
                } else if w < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                *g += m1 * sign + m2 * w;
            });
        }
    };

    let mut grads: Vec<SlotGrad<T>> = Vec::with_capacity(depth);
    for l in (0..depth).rev() {
        let act = net.activation_at(l);
        if act != Activation::None {
            Zip::from(&mut d)
                .and(&tr.pre[l])
                .for_each(|d, &z| *d *= act.derivative(z));
        }
        let a = &tr.inputs[l];
        let bias = d.sum_axis(Axis(0));
        let slot = &net.slots[l];
        let weights = match slot {
            LayerSlot::Full { w, .. } => {
                let mut gw = d.t().dot(a);
                reg(&mut gw, w);
                if l > 0 {
                    d = d.dot(w);
                }
                vec![gw]
            }
            LayerSlot::Split { w1, w2, .. } => {
                let h = tr.inner[l].as_ref().expect("split slot records its inner product");
                let mut g1 = d.t().dot(h);
                let dh = d.dot(w1);
                let mut g2 = dh.t().dot(a);
                reg(&mut g1, w1);
                reg(&mut g2, w2);
                if l > 0 {
                    d = dh.dot(w2);
                }
                vec![g1, g2]
            }
        };
        grads.push(SlotGrad { weights, bias });
    }
    grads.reverse();
    Ok((LossBreakdown { data, l1, l2, clamped }, grads, correct))
}

/// Momentum buffers, one per slot.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub velocities: Vec<SlotGrad<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(net: &DenseNet<T>) -> Self {
        OptimizerState {
            velocities: net.slots.iter().map(SlotGrad::zeros_like).collect(),
        }
    }

    /// Zero the velocity of slot `l`, reshaping it to the slot's current layout.
    pub fn reset_slot(&mut self, l: usize, net: &DenseNet<T>) {
        self.velocities[l] = SlotGrad::zeros_like(&net.slots[l]);
    }

    fn sync(&mut self, net: &DenseNet<T>) {
        if self.velocities.len() != net.depth() {
            *self = OptimizerState::new(net);
            return;
        }
        for l in 0..net.depth() {
            if !self.velocities[l].matches(&net.slots[l]) {
                self.reset_slot(l, net);
            }
        }
    }

    /// `v <- m v - lr g`, `theta <- theta + v`.
    pub fn step(&mut self, net: &mut DenseNet<T>, grads: &[SlotGrad<T>], lr: f64, momentum: f64) {
        self.sync(net);
        let (lr, m) = (T::of(lr), T::of(momentum));
        for ((slot, vel), g) in net.slots.iter_mut().zip(&mut self.velocities).zip(grads) {
            for ((w, v), gw) in slot.matrices_mut().into_iter().zip(&mut vel.weights).zip(&g.weights) {
                Zip::from(&mut *w).and(&mut *v).and(gw).for_each(|w, v, &g| {
                    *v = m * *v - lr * g;
                    *w += *v;
                });
            }
            Zip::from(slot.bias_mut())
                .and(&mut vel.bias)
                .and(&g.bias)
                .for_each(|b, v, &g| {
                    *v = m * *v - lr * g;
                    *b += *v;
                });
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Sample-weighted mean data loss over the epoch's batches.
    pub train_loss: f64,
    /// Running accuracy over the epoch's batches; `None` for regression targets.
    pub train_acc: Option<f64>,
    pub clamped: usize,
    pub lr: f64,
}

/// Sample order for `epoch`: a ChaCha8 stream keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// One pass of mini-batch SGD with momentum over a shuffled copy of `data`.
pub fn train_epoch<T: Scalar>(
    net: &mut DenseNet<T>,
    data: &Dataset<T>,
    config: &TrainConfig,
    state: &mut OptimizerState<T>,
    epoch: usize,
) -> Result<EpochMetrics> {
    config.validate()?;
    let lr = lr_step(config, epoch);
    let order = epoch_order(data.len(), config.seed, epoch);
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let mut clamped = 0;
    for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
        let x = data.inputs.select(Axis(0), chunk);
        let t = data.targets.select(chunk);
        let (lb, grads, c) = gradients(net, x.view(), &t, config.mu1, config.mu2)?;
        if !lb.total().is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {} at epoch {epoch}, batch {bi} (lr {lr:e}, data term {}, l1 {}, l2 {})",
                lb.total(),
                lb.data,
                lb.l1,
                lb.l2
            )));
        }
        loss_sum += lb.data * chunk.len() as f64;
        correct += c;
        clamped += lb.clamped;
        state.step(net, &grads, lr, config.momentum);
    }
    let n = data.len() as f64;
    let train_acc = match data.targets {
        Targets::Classes { .. } => Some(correct as f64 / n),
        Targets::Values(_) => None,
    };
    Ok(EpochMetrics {
        train_loss: loss_sum / n,
        train_acc,
        clamped,
        lr,
    })
}

/// Data loss and accuracy on a whole dataset, evaluated in chunks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

pub const EVAL_CHUNK: usize = 2048;

pub fn evaluate<T: Scalar>(net: &DenseNet<T>, data: &Dataset<T>) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = data.inputs.select(Axis(0), chunk);
        let t = data.targets.select(chunk);
        let out = net.forward_batch(x.view())?;
        let (l, _, _) = output_loss(&out, &t)?;
        loss += l * chunk.len() as f64;
        correct += count_correct(&out, &t);
    }
    let n = data.len() as f64;
    Ok(EvalMetrics {
        loss: loss / n,
        accuracy: matches!(data.targets, Targets::Classes { .. }).then(|| correct as f64 / n),
    })
}
