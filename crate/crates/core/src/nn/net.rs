use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layer::{Activation, LayerSlot};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weight initialisation schemes; all draw zero-mean normals and zero biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Variance `1 / fan_in`.
    NormalInvN,
    /// Variance `2 / fan_in`.
    He,
    /// Variance `2 / (fan_in + fan_out)`.
    Xavier,
}

impl Init {
    pub fn variance(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            Init::NormalInvN => 1.0 / fan_in as f64,
            Init::He => 2.0 / fan_in as f64,
            Init::Xavier => 2.0 / (fan_in + fan_out) as f64,
        }
    }
}

/// A feed-forward stack of affine slots, each followed by an activation.
///
/// Every slot uses `activation`; the last one uses it only when
/// `final_activation` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet<T> {
    pub slots: Vec<LayerSlot<T>>,
    pub activation: Activation,
    pub final_activation: bool,
}

/// Intermediate values of a batched forward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    /// `inputs[l]` feeds slot `l`; `inputs[L]` is the network output.
    pub inputs: Vec<Array2<T>>,
    /// Pre-activation values of each slot.
    pub pre: Vec<Array2<T>>,
    /// `A W2^T` for split slots.
    pub inner: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> DenseNet<T> {
    pub fn new(slots: Vec<LayerSlot<T>>, activation: Activation, final_activation: bool) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for (l, pair) in slots.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {l} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    l + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(DenseNet {
            slots,
            activation,
            final_activation,
        })
    }

    pub fn depth(&self) -> usize {
        self.slots.len()
    }

    pub fn input_dim(&self) -> usize {
        self.slots[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.slots[self.slots.len() - 1].out_dim()
    }

    /// Widths `[in, h1, ..., out]`.
    pub fn topology(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.slots.iter().map(|s| s.out_dim()))
            .collect()
    }

    /// Activation applied after slot `l`.
    pub fn activation_at(&self, l: usize) -> Activation {
        if l + 1 == self.slots.len() && !self.final_activation {
            Activation::None
        } else {
            self.activation
        }
    }

    pub fn param_count(&self) -> usize {
        self.slots.iter().map(|s| s.param_count()).sum()
    }

    pub fn forward(&self, s: ArrayView1<'_, T>) -> Result<Array1<T>> {
        let out = self.forward_batch(s.insert_axis(Axis(0)))?;
        Ok(out.row(0).to_owned())
    }

    /// Row-per-sample forward pass.
    pub fn forward_batch(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.forward_prefix(x, self.slots.len())
    }

    /// Output after the first `upto` slots (`upto = 0` returns the input).
    pub fn forward_prefix(&self, x: ArrayView2<'_, T>, upto: usize) -> Result<Array2<T>> {
        if upto > self.slots.len() {
            return Err(Error::Domain(format!(
                "prefix {upto} exceeds depth {}",
                self.slots.len()
            )));
        }
        let mut a = x.to_owned();
        for (l, slot) in self.slots[..upto].iter().enumerate() {
            let act = self.activation_at(l);
            a = slot.affine(a.view())?;
            if act != Activation::None {
                a.mapv_inplace(|v| act.apply(v));
            }
        }
        Ok(a)
    }

    pub fn trace(&self, x: ArrayView2<'_, T>) -> Result<Trace<T>> {
        let mut inputs = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.slots.len());
        let mut inner = Vec::with_capacity(self.slots.len());
        for (l, slot) in self.slots.iter().enumerate() {
            let a = &inputs[l];
            if a.ncols() != slot.in_dim() {
                return Err(Error::Shape(format!(
                    "layer {l} expects {} inputs, got {}",
                    slot.in_dim(),
                    a.ncols()
                )));
            }
            let (z, h) = match slot {
                LayerSlot::Full { w, .. } => (a.dot(&w.t()), None),
                LayerSlot::Split { w1, w2, .. } => {
                    let h = a.dot(&w2.t());
                    (h.dot(&w1.t()), Some(h))
                }
            };
            let mut z = z;
            z += &slot.bias().view().insert_axis(Axis(0));
            let act = self.activation_at(l);
            let out = if act == Activation::None {
                z.clone()
            } else {
                z.mapv(|v| act.apply(v))
            };
            pre.push(z);
            inner.push(h);
            inputs.push(out);
        }
        Ok(Trace { inputs, pre, inner })
    }
}

/// Network with topology `[in, h1, ..., out]`, weights drawn per `init` from a
/// ChaCha8 stream seeded with `seed`, and zero biases.
pub fn init_net<T: Scalar>(
    topology: &[usize],
    init: Init,
    activation: Activation,
    final_activation: bool,
    seed: u64,
) -> Result<DenseNet<T>> {
    if topology.len() < 2 {
        return Err(Error::Parameter(format!(
            "topology needs at least two widths, got {topology:?}"
        )));
    }
    if topology.contains(&0) {
        return Err(Error::Parameter(format!("topology has a zero width: {topology:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots = Vec::with_capacity(topology.len() - 1);
    for pair in topology.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let sd = init.variance(fan_in, fan_out).sqrt();
        let normal = Normal::new(0.0, sd).map_err(|e| Error::Parameter(e.to_string()))?;
        let w = Array2::from_shape_simple_fn((fan_out, fan_in), || T::of(normal.sample(&mut rng)));
        slots.push(LayerSlot::Full {
            w,
            bias: Array1::zeros(fan_out),
        });
    }
    DenseNet::new(slots, activation, final_activation)
}

/// `exp(x_i) / sum_j exp(x_j)`, computed after subtracting the maximum.
pub fn softmax<T: Scalar>(logits: ArrayView1<'_, T>) -> Array1<T> {
    let m = logits.fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut e = logits.mapv(|x| (x - m).exp());
    let s = e.sum();
    e.mapv_inplace(|x| x / s);
    e
}

/// Row-wise softmax.
pub fn softmax_rows<T: Scalar>(logits: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = logits.to_owned();
    Zip::from(out.rows_mut()).for_each(|mut row| {
        let p = softmax(row.view());
        row.assign(&p);
    });
    out
}
