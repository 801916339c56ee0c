use crate::autograd::{Gradients, Tensor};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::Scalar;

/// Per-step hyperparameters handed to an optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for StepParams {
    fn default() -> Self {
        StepParams { lr: 1e-4, weight_decay: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub(crate) first: Vec<Tensor<T>>,
    pub(crate) second: Vec<Tensor<T>>,
    pub(crate) steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.get(id).raw_dim())).collect();
        Adam { first: zeros(), second: zeros(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, hp: &StepParams) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let lr = T::lit(hp.lr);
        let wd = T::lit(hp.weight_decay);
        let eps = T::lit(hp.eps);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.param(id) else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Abort(format!("non-finite gradient for {}", store.name(id))));
            }
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g + wd * *p;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
        }
        Ok(())
    }
}
