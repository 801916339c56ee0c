//! Channel and spatial attention in the CBAM style.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::error::Result;
use crate::nn::{Conv2d, ParamStore};
use crate::Scalar;

/// Bottleneck width of the channel-attention MLP.
pub fn bottleneck_width(channels: usize) -> usize {
    (channels / 16).max(4)
}

/// Per-channel weights in (0,1): average- and max-pooled descriptors pass
/// through a shared two-layer bottleneck, are summed and squashed.
#[derive(Clone, Copy, Debug)]
pub struct ChannelAttention {
    pub squeeze: Conv2d,
    pub excite: Conv2d,
}

impl ChannelAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        let hidden = bottleneck_width(channels);
        ChannelAttention {
            squeeze: Conv2d::new(store, rng, &format!("{name}.squeeze"), channels, hidden, 1, 1, true),
            excite: Conv2d::new(store, rng, &format!("{name}.excite"), hidden, channels, 1, 1, true),
        }
    }

    fn mlp<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.squeeze.forward(g, store, x)?;
        let h = g.relu(h);
        self.excite.forward(g, store, h)
    }

    /// B×C×1×1 weights. `forced` replaces them with a constant.
    pub fn weights<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        forced: Option<T>,
    ) -> Result<Var> {
        let [b, c, _, _] = g.shape(x);
        if let Some(v) = forced {
            return Ok(g.input(Tensor::from_elem((b, c, 1, 1), v)));
        }
        let avg = g.global_avg_pool(x);
        let max = g.global_max_pool(x);
        let a = self.mlp(g, store, avg)?;
        let m = self.mlp(g, store, max)?;
        let s = g.add(a, m)?;
        Ok(g.sigmoid(s))
    }

    /// `CA(x) ⊛ x`, the channel-broadcast product.
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, forced: Option<T>) -> Result<Var> {
        let w = self.weights(g, store, x, forced)?;
        g.mul(w, x)
    }
}

/// Single-channel spatial mask in (0,1) from channel-wise mean and max,
/// through a 7×7 convolution.
#[derive(Clone, Copy, Debug)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub const KERNEL: usize = 7;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str) -> Self {
        SpatialAttention { conv: Conv2d::new(store, rng, &format!("{name}.conv"), 2, 1, Self::KERNEL, 1, false) }
    }

    /// B×1×H×W mask. `forced` replaces it with a constant.
    pub fn mask<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, forced: Option<T>) -> Result<Var> {
        let [b, _, h, w] = g.shape(x);
        if let Some(v) = forced {
            return Ok(g.input(Tensor::from_elem((b, 1, h, w), v)));
        }
        let mean = g.channel_mean(x);
        let max = g.channel_max(x);
        let cat = g.concat(&[mean, max])?;
        let logits = self.conv.forward(g, store, cat)?;
        Ok(g.sigmoid(logits))
    }
}
