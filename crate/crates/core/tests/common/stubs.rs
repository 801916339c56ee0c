//! Cheap stand-in networks and corpora for pipeline tests.

use std::sync::{Arc, Mutex};

use hybrid_sod::data::synth::{generate_item, SynthConfig};
use hybrid_sod::data::{partition, LabelKind, Sample};
use hybrid_sod::nn::StepParams;
use hybrid_sod::orchestrator::Corpus;
use hybrid_sod::snet::SaliencyNetwork;
use hybrid_sod::{Error, Result, Scalar};
use ndarray::{Array2, Array3};

/// What a [`DriftNet`] saw in one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct SeenBatch {
    pub lr: f64,
    pub kinds: Vec<LabelKind>,
    pub ids: Vec<String>,
}

/// Predicts a constant map that moves by `delta` after every training step.
/// Against all-zero validation labels its MAE equals the constant.
#[derive(Clone, Debug)]
pub struct DriftNet {
    pub value: f64,
    pub delta: f64,
    pub steps: u64,
    /// Loss becomes NaN from this step on.
    pub nan_at: Option<u64>,
    pub seen: Arc<Mutex<Vec<SeenBatch>>>,
}

impl DriftNet {
    pub fn new(value: f64, delta: f64) -> Self {
        DriftNet { value, delta, steps: 0, nan_at: None, seen: Arc::default() }
    }
}

impl<T: Scalar> SaliencyNetwork<T> for DriftNet {
    fn name(&self) -> &'static str {
        "drift"
    }

    fn uses_coarse(&self) -> bool {
        false
    }

    fn train_step(&mut self, batch: &[&Sample<T>], step: &StepParams) -> Result<T> {
        if batch.iter().any(|s| s.label.is_none()) {
            return Err(Error::Data("unlabeled sample in batch".into()));
        }
        self.seen.lock().unwrap().push(SeenBatch {
            lr: step.lr,
            kinds: batch.iter().map(|s| s.label_kind).collect(),
            ids: batch.iter().map(|s| s.id.clone()).collect(),
        });
        self.steps += 1;
        self.value = (self.value + self.delta).clamp(0.0, 1.0);
        if self.nan_at.is_some_and(|n| self.steps >= n) {
            return Ok(T::nan());
        }
        Ok(T::lit(self.value))
    }

    fn predict(&self, batch: &[&Sample<T>]) -> Result<Vec<Array2<T>>> {
        Ok(batch.iter().map(|s| Array2::from_elem(s.size(), T::lit(self.value))).collect())
    }

    fn save(&self) -> Vec<u8> {
        let mut out = self.value.to_le_bytes().to_vec();
        out.extend(self.steps.to_le_bytes());
        out
    }

    fn load(&mut self, bytes: &[u8]) -> Result<()> {
        if bytes.len() != 16 {
            return Err(Error::Checkpoint("drift state must be 16 bytes".into()));
        }
        self.value = f64::from_le_bytes(bytes[..8].try_into().unwrap());
        self.steps = u64::from_le_bytes(bytes[8..].try_into().unwrap());
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn SaliencyNetwork<T>> {
        Box::new(self.clone())
    }
}

/// Flat-image corpus: `per_group` samples in each of `groups` groups, group
/// 1 real-labeled, every sample with a coarse map; validation labels are all zero.
pub fn flat_corpus<T: Scalar>(groups: usize, per_group: usize, val: usize, side: usize) -> Corpus<T> {
    let mut train = Vec::new();
    for i in 0..groups * per_group {
        let img = Array3::from_elem((side, side, 3), T::lit((i % 7) as f64 / 7.0));
        let mut label = Array2::zeros((side, side));
        label[[side / 2, side / 2]] = T::one();
        let mut s = Sample::new(format!("s{i:03}"), img).with_coarse(Array2::from_elem((side, side), T::lit(0.5)));
        if i < per_group {
            s = s.with_label(label, LabelKind::Real);
        } else {
            s.label_kind = LabelKind::Coarse;
        }
        train.push(s);
    }
    let val = (0..val)
        .map(|j| {
            Sample::new(format!("v{j:03}"), Array3::zeros((side, side, 3)))
                .with_label(Array2::zeros((side, side)), LabelKind::Real)
                .with_coarse(Array2::from_elem((side, side), T::lit(0.5)))
        })
        .collect();
    let part = partition(&train, groups, per_group, 0).unwrap();
    Corpus::new(train, val, part).unwrap()
}

/// Synthetic shape corpus: `count` training items (first `num_real` real),
/// `val` validation items, coarse maps from the generator.
pub fn synth_corpus<T: Scalar>(
    count: usize,
    size: usize,
    groups: usize,
    num_real: usize,
    val: usize,
    seed: u64,
) -> Corpus<T> {
    let cfg = SynthConfig { count, size, seed, ..Default::default() };
    let make = |index: usize, id: String, real: bool| {
        let it = generate_item::<T>(&cfg, index);
        let s = Sample::new(id, it.image).with_coarse(it.coarse);
        if real {
            s.with_label(it.mask, LabelKind::Real)
        } else {
            let mut s = s;
            s.label_kind = LabelKind::Coarse;
            s
        }
    };
    let train: Vec<Sample<T>> = (0..count).map(|i| make(i, format!("syn{i:05}"), i < num_real)).collect();
    let val: Vec<Sample<T>> = (0..val).map(|j| make(count + j, format!("val{j:05}"), true)).collect();
    let part = partition(&train, groups, num_real, seed).unwrap();
    Corpus::new(train, val, part).unwrap()
}
