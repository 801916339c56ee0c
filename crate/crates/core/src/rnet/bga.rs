//! Blender with guidance and aggregation: the two-stage decoder fusion.
//!
//! Guidance (per encoder level i):
//!   F_com = CA([f_srm, f_rgb]) ⊛ [f_srm, f_rgb]
//!   F_En  = Conv1×1(SA(f_rgb) ⊙ F_com + F_com)
//!
//! Aggregation (levels 5 down to 1):
//!   f_s   = P ⊙ f_g + (1 − P) ⊙ F_En,   P = σ(Conv1×1([f_g, F_En]))
//!   f_DeR = Up(f_De⁽ⁱ⁺¹⁾) ⊙ σ(f_s)
//!   f_De  = Up(f_De⁽ⁱ⁺¹⁾) + f_DeR + SA(F_En) ⊙ F_En

use rand_chacha::ChaCha8Rng;

use super::attention::{ChannelAttention, SpatialAttention};
use crate::autograd::{Graph, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::nn::{Conv2d, ParamStore};
use crate::Scalar;

/// Constant overrides for attention masks and the fusion gate. Every field
/// defaults to `None` (learned masks).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MaskOverrides<T> {
    pub channel: Option<T>,
    pub guidance_spatial: Option<T>,
    pub gate: Option<T>,
    pub aggregation_spatial: Option<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct GuidanceBlock {
    pub ca: ChannelAttention,
    pub sa: SpatialAttention,
    pub proj: Conv2d,
}

impl GuidanceBlock {
    /// `channels` is the per-stream width at this level; output width is `out`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        out: usize,
    ) -> Self {
        GuidanceBlock {
            ca: ChannelAttention::new(store, rng, &format!("{name}.ca"), 2 * channels),
            sa: SpatialAttention::new(store, rng, &format!("{name}.sa")),
            proj: Conv2d::new(store, rng, &format!("{name}.proj"), 2 * channels, out, 1, 1, true),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AggregationBlock {
    /// 1×1 projection of the concatenated top-level features to this level's width.
    pub semantic: Conv2d,
    pub gate: Conv2d,
    pub sa: SpatialAttention,
}

impl AggregationBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        top_channels: usize,
        width: usize,
    ) -> Self {
        AggregationBlock {
            semantic: Conv2d::new(store, rng, &format!("{name}.semantic"), 2 * top_channels, width, 1, 1, true),
            gate: Conv2d::new(store, rng, &format!("{name}.gate"), 2 * width, 1, 1, 1, true),
            sa: SpatialAttention::new(store, rng, &format!("{name}.sa")),
        }
    }
}

fn same_shape<T: Scalar>(g: &Graph<T>, what: &str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(shape_err(what, &sa, &sb));
    }
    Ok(())
}

/// Guidance stage at one level: returns `F_En`.
pub fn guidance_stage<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    block: &GuidanceBlock,
    f_srm: Var,
    f_rgb: Var,
    ov: &MaskOverrides<T>,
) -> Result<Var> {
    same_shape(g, "guidance stage streams", f_srm, f_rgb)?;
    let cat = g.concat(&[f_srm, f_rgb])?;
    let f_com = block.ca.apply(g, store, cat, ov.channel)?;
    let sa = block.sa.mask(g, store, f_rgb, ov.guidance_spatial)?;
    let masked = g.mul(sa, f_com)?;
    let sum = g.add(masked, f_com)?;
    block.proj.forward(g, store, sum)
}

/// `f_g = Conv1×1([f_srm⁵, f_rgb⁵])` resized to `(h, w)`.
pub fn semantic_features<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    block: &AggregationBlock,
    top_cat: Var,
    (h, w): (usize, usize),
) -> Result<Var> {
    let f = block.semantic.forward(g, store, top_cat)?;
    Ok(g.resize(f, h, w))
}

/// Importance-weighted fusion `P ⊙ f_g + (1 − P) ⊙ F_En`.
pub fn semantic_fusion<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    block: &AggregationBlock,
    f_g: Var,
    f_en: Var,
    ov: &MaskOverrides<T>,
) -> Result<Var> {
    same_shape(g, "semantic fusion", f_g, f_en)?;
    let p = match ov.gate {
        Some(v) => {
            let [b, _, h, w] = g.shape(f_en);
            g.input(Tensor::from_elem((b, 1, h, w), v))
        }
        None => {
            let cat = g.concat(&[f_g, f_en])?;
            let logits = block.gate.forward(g, store, cat)?;
            g.sigmoid(logits)
        }
    };
    let q = g.affine(p, -T::one(), T::one());
    let a = g.mul(p, f_g)?;
    let b = g.mul(q, f_en)?;
    g.add(a, b)
}

/// Semantic masking of the upsampled decoder features: `up ⊙ σ(f_s)`.
pub fn decoder_refinement<T: Scalar>(g: &mut Graph<T>, up: Var, f_s: Var) -> Result<Var> {
    same_shape(g, "decoder refinement", up, f_s)?;
    let mask = g.sigmoid(f_s);
    g.mul(up, mask)
}

/// Aggregation: `Up(f_De_next) + Up(f_De_next) ⊙ σ(f_s) + SA(F_En) ⊙ F_En`.
pub fn aggregation_stage<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    block: &AggregationBlock,
    f_de_next: Var,
    f_s: Var,
    f_en: Var,
    ov: &MaskOverrides<T>,
) -> Result<Var> {
    same_shape(g, "aggregation f_s/F_En", f_s, f_en)?;
    let [_, _, h, w] = g.shape(f_en);
    let up = g.resize(f_de_next, h, w);
    same_shape(g, "aggregation upsampled decoder", up, f_en)?;
    let f_der = decoder_refinement(g, up, f_s)?;
    let sa = block.sa.mask(g, store, f_en, ov.aggregation_spatial)?;
    let enc = g.mul(sa, f_en)?;
    let s = g.add(up, f_der)?;
    g.add(s, enc)
}
