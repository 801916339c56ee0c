//! Refinement network: two-stream encoder (RGB + coarse mainstream, RGB
//! guidance) decoded through the guidance/aggregation blender, with a final
//! head and three side-output heads.

pub mod attention;
pub mod bga;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::batch::{make_batch, unbatch_maps};
use crate::data::Sample;
use crate::error::{shape_err, Error, Result};
use crate::losses::{rnet_loss_graph, LossWeights};
use crate::nn::{self, Adam, Checkpoint, Conv2d, ParamStore, StepParams};
use crate::snet::SaliencyNetwork;
use crate::Scalar;

pub use bga::{
    aggregation_stage, decoder_refinement, guidance_stage, semantic_features, semantic_fusion, AggregationBlock,
    GuidanceBlock, MaskOverrides,
};

pub type FeatureTensor<T> = Tensor<T>;

/// Inference batch size.
pub const PREDICT_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RNetConfig {
    pub encoder_channels: [usize; 5],
    pub input_size: usize,
    #[serde(default = "default_mainstream")]
    pub mainstream_in_channels: usize,
    #[serde(default = "default_guidance")]
    pub guidance_in_channels: usize,
    /// Seed for weight initialization.
    #[serde(default)]
    pub init_seed: u64,
}

fn default_mainstream() -> usize {
    4
}

fn default_guidance() -> usize {
    3
}

impl Default for RNetConfig {
    fn default() -> Self {
        RNetConfig {
            encoder_channels: [16, 32, 64, 128, 128],
            input_size: 288,
            mainstream_in_channels: 4,
            guidance_in_channels: 3,
            init_seed: 0,
        }
    }
}

impl RNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("encoder channels must be positive".into()));
        }
        if self.mainstream_in_channels != 4 || self.guidance_in_channels != 3 {
            return Err(Error::Config(
                "mainstream input must be 4 channels (RGB + coarse) and guidance input 3 (RGB)".into(),
            ));
        }
        if self.input_size == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        Ok(())
    }

    /// Spatial size of each encoder level for this input size.
    pub fn level_sizes(&self) -> [usize; 5] {
        let mut s = self.input_size;
        [0; 5].map(|_| {
            s = crate::autograd::kernels::conv_out_len(s, 3, 2, 1);
            s
        })
    }
}

/// Final map and three side outputs, each B×1×H×W in `[0,1]` at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyPrediction<T> {
    pub final_map: Tensor<T>,
    /// Side outputs from decoder levels 2, 3, 4 (shallow to deep).
    pub aux: [Tensor<T>; 3],
}

/// Five stride-2 stages, each `conv3×3/2 → ReLU → conv3×3 → ReLU`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub stages: Vec<(Conv2d, Conv2d)>,
}

impl Encoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        channels: &[usize; 5],
    ) -> Self {
        let mut cin = in_channels;
        let stages = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let down = Conv2d::new(store, rng, &format!("{name}.stage{}.down", i + 1), cin, c, 3, 2, true);
                let conv = Conv2d::new(store, rng, &format!("{name}.stage{}.conv", i + 1), c, c, 3, 1, true);
                cin = c;
                (down, conv)
            })
            .collect();
        Encoder { stages }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Vec<Var>> {
        let mut h = x;
        let mut levels = Vec::with_capacity(self.stages.len());
        for (down, conv) in &self.stages {
            let d = down.forward(g, store, h)?;
            let d = g.relu(d);
            let c = conv.forward(g, store, d)?;
            h = g.relu(c);
            levels.push(h);
        }
        Ok(levels)
    }
}

/// Graph handles of one forward pass, before any value extraction.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub final_map: Var,
    pub aux: [Var; 3],
}

#[derive(Clone, Debug)]
pub struct RNet<T: Scalar> {
    pub config: RNetConfig,
    pub params: ParamStore<T>,
    pub overrides: MaskOverrides<T>,
    pub loss_weights: LossWeights,
    adam: Adam<T>,
    mainstream: Encoder,
    guidance: Encoder,
    guidance_blocks: Vec<GuidanceBlock>,
    aggregation_blocks: Vec<AggregationBlock>,
    /// Post-fusion 3×3 conv per level, mapping to the next shallower width.
    post: Vec<Conv2d>,
    final_head: Conv2d,
    aux_heads: [Conv2d; 3],
}

impl<T: Scalar> RNet<T> {
    pub fn new(config: RNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let ch = config.encoder_channels;
        let mainstream = Encoder::new(&mut store, &mut rng, "main", config.mainstream_in_channels, &ch);
        let guidance = Encoder::new(&mut store, &mut rng, "guide", config.guidance_in_channels, &ch);
        let guidance_blocks = (0..5)
            .map(|i| GuidanceBlock::new(&mut store, &mut rng, &format!("bga{}.guide", i + 1), ch[i], ch[i]))
            .collect();
        let aggregation_blocks = (0..5)
            .map(|i| AggregationBlock::new(&mut store, &mut rng, &format!("bga{}.agg", i + 1), ch[4], ch[i]))
            .collect();
        let post = (0..5)
            .map(|i| {
                let out = if i == 0 { ch[0] } else { ch[i - 1] };
                Conv2d::new(&mut store, &mut rng, &format!("dec{}.post", i + 1), ch[i], out, 3, 1, true)
            })
            .collect();
        let final_head = Conv2d::new(&mut store, &mut rng, "head.final", ch[0], 1, 1, 1, true);
        // level i (1-based) post-conv output width is ch[i-2]
        let aux_heads =
            [0, 1, 2].map(|k| Conv2d::new(&mut store, &mut rng, &format!("head.aux{}", k + 1), ch[k], 1, 1, 1, true));
        let adam = Adam::new(&store);
        Ok(RNet {
            config,
            params: store,
            overrides: MaskOverrides::default(),
            loss_weights: LossWeights::default(),
            adam,
            mainstream,
            guidance,
            guidance_blocks,
            aggregation_blocks,
            post,
            final_head,
            aux_heads,
        })
    }

    /// Encoder features of both streams, five levels each.
    pub fn encode(&self, g: &mut Graph<T>, image: Var, coarse: Var) -> Result<(Vec<Var>, Vec<Var>)> {
        let (si, sc) = (g.shape(image), g.shape(coarse));
        if si[0] != sc[0] || si[2..] != sc[2..] || si[1] != 3 || sc[1] != 1 {
            return Err(shape_err("rnet image/coarse", &si, &sc));
        }
        let x = g.concat(&[image, coarse])?;
        let main = self.mainstream.forward(g, &self.params, x)?;
        let guide = self.guidance.forward(g, &self.params, image)?;
        Ok((main, guide))
    }

    pub fn forward_graph(&self, g: &mut Graph<T>, image: Var, coarse: Var) -> Result<ForwardVars> {
        let [_, _, h, w] = g.shape(image);
        let (main, guide) = self.encode(g, image, coarse)?;
        let ov = self.overrides;
        let store = &self.params;
        let mut f_en = Vec::with_capacity(5);
        for i in 0..5 {
            f_en.push(guidance_stage(g, store, &self.guidance_blocks[i], main[i], guide[i], &ov)?);
        }
        let top = g.concat(&[main[4], guide[4]])?;
        let top_size = (g.shape(f_en[4])[2], g.shape(f_en[4])[3]);
        let mut de_next = semantic_features(g, store, &self.aggregation_blocks[4], top, top_size)?;
        let mut outputs = vec![de_next; 5];
        for i in (0..5).rev() {
            let block = &self.aggregation_blocks[i];
            let [_, _, lh, lw] = g.shape(f_en[i]);
            let f_g = if i == 4 { de_next } else { semantic_features(g, store, block, top, (lh, lw))? };
            let f_s = semantic_fusion(g, store, block, f_g, f_en[i], &ov)?;
            let fused = aggregation_stage(g, store, block, de_next, f_s, f_en[i], &ov)?;
            let post = self.post[i].forward(g, store, fused)?;
            de_next = g.relu(post);
            outputs[i] = de_next;
        }
        let mut head = |conv: &Conv2d, x: Var| -> Result<Var> {
            let logits = conv.forward(g, store, x)?;
            let up = g.resize(logits, h, w);
            Ok(g.sigmoid(up))
        };
        let final_map = head(&self.final_head, outputs[0])?;
        let aux = [
            head(&self.aux_heads[0], outputs[1])?,
            head(&self.aux_heads[1], outputs[2])?,
            head(&self.aux_heads[2], outputs[3])?,
        ];
        Ok(ForwardVars { final_map, aux })
    }

    /// `image` is B×3×S×S, `coarse` B×1×S×S.
    pub fn forward(&self, image: &Tensor<T>, coarse: &Tensor<T>) -> Result<SaliencyPrediction<T>> {
        let mut g = Graph::new();
        let i = g.input(image.clone());
        let c = g.input(coarse.clone());
        let v = self.forward_graph(&mut g, i, c)?;
        Ok(SaliencyPrediction { final_map: g.value(v.final_map).clone(), aux: v.aux.map(|a| g.value(a).clone()) })
    }

    /// Replaces the mainstream stem with a 3-channel kernel widened to four
    /// input channels by repeating the RGB filters and keeping the first four.
    pub fn import_rgb_stem(&mut self, rgb_kernel: &Tensor<T>) -> Result<()> {
        let id = self.mainstream.stages[0].0.weight;
        let target = self.params.get(id).shape().to_vec();
        let s = rgb_kernel.shape();
        if s[1] != 3 || s[0] != target[0] || s[2] != target[2] || s[3] != target[3] {
            return Err(shape_err("rgb stem", s, &target));
        }
        *self.params.get_mut(id) = expand_rgb_stem(rgb_kernel);
        Ok(())
    }

    pub fn checkpoint(&self, with_optimizer: bool) -> Checkpoint<T> {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        nn::pack(&self.params, with_optimizer.then_some(&self.adam), cfg)
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let config: RNetConfig =
            serde_json::from_str(&ck.config).map_err(|e| Error::Checkpoint(format!("config echo: {e}")))?;
        let mut net = RNet::new(config)?;
        nn::unpack(ck, &mut net.params, Some(&mut net.adam))?;
        Ok(net)
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.adam.steps()
    }
}

/// Widens a Cout×3×k×k kernel to Cout×4×k×k by channel duplication
/// (R,G,B,R,G,B) and truncation to the first four.
pub fn expand_rgb_stem<T: Scalar>(rgb: &Tensor<T>) -> Tensor<T> {
    let s = rgb.shape();
    Tensor::from_shape_fn((s[0], 4, s[2], s[3]), |(o, c, y, x)| rgb[[o, c % 3, y, x]])
}

impl<T: Scalar> SaliencyNetwork<T> for RNet<T> {
    fn name(&self) -> &'static str {
        "rnet"
    }

    fn uses_coarse(&self) -> bool {
        true
    }

    fn train_step(&mut self, batch: &[&Sample<T>], step: &StepParams) -> Result<T> {
        let b = make_batch(batch, self.config.input_size, true, true)?;
        let mut g = Graph::new();
        let img = g.input(b.images);
        let coarse = g.input(b.coarse.unwrap());
        let out = self.forward_graph(&mut g, img, coarse)?;
        let loss = rnet_loss_graph(&mut g, out.final_map, &out.aux, b.labels.as_ref().unwrap(), &self.loss_weights)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Abort(format!("rnet loss is {value}")));
        }
        let grads = g.backward(loss);
        self.adam.step(&mut self.params, &grads, step)?;
        Ok(value)
    }

    fn predict(&self, batch: &[&Sample<T>]) -> Result<Vec<Array2<T>>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(PREDICT_BATCH) {
            let b = make_batch(chunk, self.config.input_size, true, false)?;
            let p = self.forward(&b.images, b.coarse.as_ref().unwrap())?;
            out.extend(unbatch_maps(&p.final_map, &b.sizes));
        }
        Ok(out)
    }

    fn save(&self) -> Vec<u8> {
        self.checkpoint(true).to_bytes()
    }

    fn load(&mut self, bytes: &[u8]) -> Result<()> {
        let ck = Checkpoint::from_bytes(bytes)?;
        nn::unpack(&ck, &mut self.params, Some(&mut self.adam))
    }

    fn box_clone(&self) -> Box<dyn SaliencyNetwork<T>> {
        Box::new(self.clone())
    }
}

/// Runs the refinement network over samples carrying coarse labels and
/// returns copies whose label is the final prediction, kind `Pseudo`.
pub fn predict_pseudo_labels<T: Scalar>(samples: &[Sample<T>], net: &RNet<T>) -> Result<Vec<Sample<T>>> {
    if let Some(s) = samples.iter().find(|s| s.coarse.is_none()) {
        return Err(Error::Data(format!("{}: refinement needs a coarse label", s.id)));
    }
    crate::snet::relabel(samples, net)
}
