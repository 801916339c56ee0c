//! Saliency network interface and the reference encoder-decoder.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::batch::{make_batch, unbatch_maps};
use crate::data::{LabelKind, Sample};
use crate::error::{Error, Result};
use crate::losses::BCE_EPS;
use crate::nn::{self, Adam, Checkpoint, Conv2d, ParamStore, StepParams};
use crate::rnet::{Encoder, PREDICT_BATCH};
use crate::Scalar;

/// Anything the pipeline can train, query and persist.
///
/// `predict` must be deterministic given the parameters and return one map
/// in `[0,1]` per sample at that sample's native resolution.
pub trait SaliencyNetwork<T: Scalar> {
    fn name(&self) -> &'static str;
    /// Whether the network consumes the coarse map as an extra input.
    fn uses_coarse(&self) -> bool;
    /// One optimizer step on `batch` (each sample must carry a label); returns the loss.
    fn train_step(&mut self, batch: &[&Sample<T>], step: &StepParams) -> Result<T>;
    fn predict(&self, batch: &[&Sample<T>]) -> Result<Vec<Array2<T>>>;
    /// Parameters and optimizer state.
    fn save(&self) -> Vec<u8>;
    fn load(&mut self, bytes: &[u8]) -> Result<()>;
    fn box_clone(&self) -> Box<dyn SaliencyNetwork<T>>;
}

impl<T: Scalar> Clone for Box<dyn SaliencyNetwork<T>> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SNetConfig {
    pub encoder_channels: [usize; 5],
    pub input_size: usize,
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for SNetConfig {
    fn default() -> Self {
        SNetConfig { encoder_channels: [16, 32, 64, 128, 128], input_size: 320, init_seed: 0 }
    }
}

impl SNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.iter().any(|&c| c == 0) || self.input_size == 0 {
            return Err(Error::Config("s-net channels and input size must be positive".into()));
        }
        Ok(())
    }
}

/// Five-stage RGB encoder with a U-shaped decoder: at each level the
/// upsampled deeper features are concatenated with the skip features and
/// passed through `conv3×3 → ReLU`. A 1×1 head gives the logits.
#[derive(Clone, Debug)]
pub struct ReferenceSNet<T: Scalar> {
    pub config: SNetConfig,
    pub params: ParamStore<T>,
    adam: Adam<T>,
    encoder: Encoder,
    decoder: Vec<Conv2d>,
    head: Conv2d,
}

impl<T: Scalar> ReferenceSNet<T> {
    pub fn new(config: SNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let ch = config.encoder_channels;
        let encoder = Encoder::new(&mut store, &mut rng, "enc", 3, &ch);
        let decoder = (0..4)
            .map(|i| Conv2d::new(&mut store, &mut rng, &format!("dec{}", i + 1), ch[i + 1] + ch[i], ch[i], 3, 1, true))
            .collect();
        let head = Conv2d::new(&mut store, &mut rng, "head", ch[0], 1, 1, 1, true);
        let adam = Adam::new(&store);
        Ok(ReferenceSNet { config, params: store, adam, encoder, decoder, head })
    }

    /// Returns the B×1×H×W saliency map in `(0,1)`.
    pub fn forward_graph(&self, g: &mut Graph<T>, image: Var) -> Result<Var> {
        let [_, _, h, w] = g.shape(image);
        let feats = self.encoder.forward(g, &self.params, image)?;
        let mut d = feats[4];
        for i in (0..4).rev() {
            let [_, _, lh, lw] = g.shape(feats[i]);
            let up = g.resize(d, lh, lw);
            let cat = g.concat(&[up, feats[i]])?;
            let c = self.decoder[i].forward(g, &self.params, cat)?;
            d = g.relu(c);
        }
        let logits = self.head.forward(g, &self.params, d)?;
        let up = g.resize(logits, h, w);
        Ok(g.sigmoid(up))
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let y = self.forward_graph(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    pub fn checkpoint(&self, with_optimizer: bool) -> Checkpoint<T> {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        nn::pack(&self.params, with_optimizer.then_some(&self.adam), cfg)
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let config: SNetConfig =
            serde_json::from_str(&ck.config).map_err(|e| Error::Checkpoint(format!("config echo: {e}")))?;
        let mut net = ReferenceSNet::new(config)?;
        nn::unpack(ck, &mut net.params, Some(&mut net.adam))?;
        Ok(net)
    }
}

/// Builds the reference S-Net.
pub fn reference_snet<T: Scalar>(config: SNetConfig) -> Result<ReferenceSNet<T>> {
    ReferenceSNet::new(config)
}

impl<T: Scalar> SaliencyNetwork<T> for ReferenceSNet<T> {
    fn name(&self) -> &'static str {
        "snet"
    }

    fn uses_coarse(&self) -> bool {
        false
    }

    fn train_step(&mut self, batch: &[&Sample<T>], step: &StepParams) -> Result<T> {
        let b = make_batch(batch, self.config.input_size, false, true)?;
        let mut g = Graph::new();
        let x = g.input(b.images);
        let p = self.forward_graph(&mut g, x)?;
        let loss = g.bce(p, b.labels.as_ref().unwrap(), T::lit(BCE_EPS))?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Abort(format!("snet loss is {value}")));
        }
        let grads = g.backward(loss);
        self.adam.step(&mut self.params, &grads, step)?;
        Ok(value)
    }

    fn predict(&self, batch: &[&Sample<T>]) -> Result<Vec<Array2<T>>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(PREDICT_BATCH) {
            let b = make_batch(chunk, self.config.input_size, false, false)?;
            let p = self.forward(&b.images)?;
            out.extend(unbatch_maps(&p, &b.sizes));
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

/// Predicts every sample and returns copies labelled with the prediction,
/// kind `Pseudo`. Images and coarse maps are carried over untouched.
pub fn relabel<T: Scalar, N: SaliencyNetwork<T> + ?Sized>(samples: &[Sample<T>], net: &N) -> Result<Vec<Sample<T>>> {
    let refs: Vec<&Sample<T>> = samples.iter().collect();
    let maps = net.predict(&refs)?;
    Ok(samples
        .iter()
        .zip(maps)
        .map(|(s, m)| {
            let mut out = s.clone();
            out.label = Some(m);
            out.label_kind = LabelKind::Pseudo;
            out
        })
        .collect())
}

/// Saliency-network pseudo labels; only the RGB image is consumed.
pub fn predict_pseudo_labels_s<T: Scalar, N: SaliencyNetwork<T> + ?Sized>(
    samples: &[Sample<T>],
    net: &N,
) -> Result<Vec<Sample<T>>> {
    relabel(samples, net)
}

/// Predicts the same constant everywhere and never learns. Its loss is the
/// BCE of the constant against the batch labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantNet<T> {
    pub value: T,
    pub coarse_input: bool,
}

impl<T: Scalar> ConstantNet<T> {
    pub fn new(value: T) -> Self {
        ConstantNet { value, coarse_input: false }
    }
}

impl<T: Scalar> SaliencyNetwork<T> for ConstantNet<T> {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn uses_coarse(&self) -> bool {
        self.coarse_input
    }

    fn train_step(&mut self, batch: &[&Sample<T>], _step: &StepParams) -> Result<T> {
        let mut total = T::zero();
        for s in batch {
            let label = s.label.as_ref().ok_or_else(|| Error::Data(format!("{}: supervision label required", s.id)))?;
            total += crate::losses::bce(&Array2::from_elem(label.raw_dim(), self.value), label)?;
        }
        Ok(total / T::from_usize_lossy(batch.len().max(1)))
    }

    fn predict(&self, batch: &[&Sample<T>]) -> Result<Vec<Array2<T>>> {
        Ok(batch.iter().map(|s| Array2::from_elem(s.size(), self.value)).collect())
    }

    fn save(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.value.write_le(&mut out);
        out
    }

    fn load(&mut self, bytes: &[u8]) -> Result<()> {
        if bytes.len() != usize::from(T::BYTES) {
            return Err(Error::Checkpoint("constant net expects one scalar".into()));
        }
        self.value = T::read_le(bytes);
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn SaliencyNetwork<T>> {
        Box::new(self.clone())
    }
}
