use crate::nn::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

/// AdamW with decoupled weight decay and per-group learning rates.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr_main: f64,
    pub lr_encoder: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Option<Vec<f64>>>,
    second: Vec<Option<Vec<f64>>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr_main: lr,
            lr_encoder: lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn with_encoder_lr(mut self, lr: f64) -> Self {
        self.lr_encoder = lr;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Frozen => 0.0,
            ParamGroup::Encoder => self.lr_encoder,
            ParamGroup::Main => self.lr_main,
        }
    }

    /// Applies one update. Parameters without a gradient entry are untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (id, grad) in grads {
            let group = store.get(*id).group;
            let lr = self.lr(group);
            if group == ParamGroup::Frozen {
                continue;
            }
            let i = id.index();
            let n = grad.len();
            let m = self.first[i].get_or_insert_with(|| vec![0.0; n]);
            let v = self.second[i].get_or_insert_with(|| vec![0.0; n]);
            let w = store.value_mut(*id).data_mut();
            for k in 0..n {
                let g = grad.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
                w[k] -= lr * (update + self.weight_decay * w[k]);
            }
        }
    }
}
