use crate::dit::DiTModel;
use crate::nn::ParamGroup;

/// AdamW with decoupled weight decay over the trainable tensors of a model.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable tensor in `model` from the matching tensor in `grad`.
    pub fn step(&mut self, model: &mut DiTModel, grad: &DiTModel) {
        let base = model.base_trainable;
        let grads: Vec<&[f64]> = grad
            .params()
            .into_iter()
            .filter(|p| p.group != ParamGroup::Base || base)
            .map(|p| p.data)
            .collect();
        let params: Vec<_> = model
            .params_mut()
            .into_iter()
            .filter(|p| p.group != ParamGroup::Base || base)
            .collect();
        debug_assert_eq!(grads.len(), params.len());
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                p.data[i] -= self.lr * (update + self.weight_decay * p.data[i]);
            }
        }
    }
}
