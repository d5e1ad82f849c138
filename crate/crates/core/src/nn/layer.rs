use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Abs,
    Relu,
    None,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Abs => x.abs(),
            Activation::Relu => x.max(T::zero()),
            Activation::None => x,
        }
    }

    /// Derivative at a pre-activation value; 0 at the kink of `abs` and `relu`.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Abs => {
                if z > T::zero() {
                    T::one()
                } else if z < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::None => T::one(),
        }
    }
}

/// One affine map `s -> W s + b`, stored either densely or as a factored product.
///
/// Weights are `out x in` (`N x M`); a split slot stores `W1: N x k` and `W2: k x M`.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSlot<T> {
    Full {
        w: Array2<T>,
        bias: Array1<T>,
    },
    Split {
        w1: Array2<T>,
        w2: Array2<T>,
        bias: Array1<T>,
    },
}

impl<T: Scalar> LayerSlot<T> {
    pub fn full(w: Array2<T>, bias: Array1<T>) -> Result<Self> {
        if w.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "weight has {} rows but bias has length {}",
                w.nrows(),
                bias.len()
            )));
        }
        Ok(LayerSlot::Full { w, bias })
    }

    pub fn split(w1: Array2<T>, w2: Array2<T>, bias: Array1<T>) -> Result<Self> {
        if w1.ncols() != w2.nrows() {
            return Err(Error::Shape(format!(
                "split factors {}x{} and {}x{} do not compose",
                w1.nrows(),
                w1.ncols(),
                w2.nrows(),
                w2.ncols()
            )));
        }
        if w1.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "factor has {} rows but bias has length {}",
                w1.nrows(),
                bias.len()
            )));
        }
        Ok(LayerSlot::Split { w1, w2, bias })
    }

    pub fn is_split(&self) -> bool {
        matches!(self, LayerSlot::Split { .. })
    }

    pub fn out_dim(&self) -> usize {
        self.bias().len()
    }

    pub fn in_dim(&self) -> usize {
        match self {
            LayerSlot::Full { w, .. } => w.ncols(),
            LayerSlot::Split { w2, .. } => w2.ncols(),
        }
    }

    /// Inner dimension `k` of a split slot.
    pub fn rank(&self) -> Option<usize> {
        match self {
            LayerSlot::Full { .. } => None,
            LayerSlot::Split { w1, .. } => Some(w1.ncols()),
        }
    }

    pub fn bias(&self) -> &Array1<T> {
        match self {
            LayerSlot::Full { bias, .. } | LayerSlot::Split { bias, .. } => bias,
        }
    }

    pub fn bias_mut(&mut self) -> &mut Array1<T> {
        match self {
            LayerSlot::Full { bias, .. } | LayerSlot::Split { bias, .. } => bias,
        }
    }

    /// Stored weight matrices: `[W]` or `[W1, W2]`.
    pub fn matrices(&self) -> Vec<&Array2<T>> {
        match self {
            LayerSlot::Full { w, .. } => vec![w],
            LayerSlot::Split { w1, w2, .. } => vec![w1, w2],
        }
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Array2<T>> {
        match self {
            LayerSlot::Full { w, .. } => vec![w],
            LayerSlot::Split { w1, w2, .. } => vec![w1, w2],
        }
    }

    /// The effective `N x M` weight (the product for split slots).
    pub fn dense_weight(&self) -> Array2<T> {
        match self {
            LayerSlot::Full { w, .. } => w.clone(),
            LayerSlot::Split { w1, w2, .. } => w1.dot(w2),
        }
    }

    /// `N M + N` for full slots, `k (N + M) + N` for split ones.
    pub fn param_count(&self) -> usize {
        self.matrices().iter().map(|m| m.len()).sum::<usize>() + self.out_dim()
    }

    pub fn weight_count(&self) -> usize {
        self.matrices().iter().map(|m| m.len()).sum()
    }

    pub fn nonzero_count(&self) -> usize {
        let nz = |it: &mut dyn Iterator<Item = &T>| it.filter(|x| **x != T::zero()).count();
        self.matrices().iter().map(|m| nz(&mut m.iter())).sum::<usize>() + nz(&mut self.bias().iter())
    }

    /// Row-per-sample affine map `A W^T + b`.
    pub fn affine(&self, a: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if a.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "layer expects {} inputs, got {}",
                self.in_dim(),
                a.ncols()
            )));
        }
        let mut z = match self {
            LayerSlot::Full { w, .. } => a.dot(&w.t()),
            LayerSlot::Split { w1, w2, .. } => a.dot(&w2.t()).dot(&w1.t()),
        };
        z += &self.bias().view().insert_axis(Axis(0));
        Ok(z)
    }
}
