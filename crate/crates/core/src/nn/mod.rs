//! Parameters, layers, optimizer and checkpoint serialization.

mod adam;
pub mod checkpoint;
mod params;

pub use adam::{Adam, StepParams};
pub use checkpoint::Checkpoint;
pub use params::{Conv2d, ParamId, ParamStore};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";
const ADAM_STEPS: &str = "adam.steps";

/// Packs parameters (and optionally optimizer state) into a checkpoint.
pub fn pack<T: Scalar>(store: &ParamStore<T>, adam: Option<&Adam<T>>, config: String) -> Checkpoint<T> {
    let mut arrays: Vec<(String, Tensor<T>)> = store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    if let Some(adam) = adam {
        for (id, (m, v)) in store.ids().zip(adam.first.iter().zip(&adam.second)) {
            arrays.push((format!("{ADAM_M}{}", store.name(id)), m.clone()));
            arrays.push((format!("{ADAM_V}{}", store.name(id)), v.clone()));
        }
        // Split into two exactly representable halves so f32 keeps every step count.
        let steps = adam.steps;
        let halves = Tensor::from_shape_vec(
            (1, 1, 1, 2),
            vec![T::from_u64(steps >> 16).unwrap(), T::from_u64(steps & 0xffff).unwrap()],
        )
        .unwrap();
        arrays.push((ADAM_STEPS.into(), halves));
    }
    Checkpoint { config, arrays }
}

/// Restores parameters in place; optimizer state is restored when present in
/// the checkpoint and `adam` is given, and reset otherwise.
pub fn unpack<T: Scalar>(ck: &Checkpoint<T>, store: &mut ParamStore<T>, adam: Option<&mut Adam<T>>) -> Result<()> {
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let t = ck.get(&name).ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
        if t.shape() != store.get(id).shape() {
            return Err(Error::Checkpoint(format!("{name}: shape {:?} != {:?}", t.shape(), store.get(id).shape())));
        }
        *store.get_mut(id) = t.clone();
    }
    if let Some(adam) = adam {
        *adam = Adam::new(store);
        if let Some(steps) = ck.get(ADAM_STEPS) {
            let hi = steps[[0, 0, 0, 0]].to_u64().unwrap_or(0);
            let lo = steps[[0, 0, 0, 1]].to_u64().unwrap_or(0);
            adam.steps = (hi << 16) | lo;
            for id in store.ids() {
                let name = store.name(id);
                if let (Some(m), Some(v)) = (ck.get(&format!("{ADAM_M}{name}")), ck.get(&format!("{ADAM_V}{name}"))) {
                    adam.first[id.0] = m.clone();
                    adam.second[id.0] = v.clone();
                }
            }
        }
    }
    Ok(())
}
