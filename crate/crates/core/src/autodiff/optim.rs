use super::{Grads, ParamStore, Tensor};
use crate::error::Result;

/// Adam with bias correction. Moment buffers mirror the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Gradient-descent step on `store` using `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, g), m), v) in store.get_mut(id).data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    /// Moments as a parameter store (`m/<name>`, `v/<name>`, `step`) so they
    /// can share the checkpoint format.
    pub fn to_store(&self, params: &ParamStore) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        for (i, (name, t)) in params.iter().enumerate() {
            s.add(format!("m/{name}"), Tensor::new(t.shape().to_vec(), self.m[i].clone())?)?;
            s.add(format!("v/{name}"), Tensor::new(t.shape().to_vec(), self.v[i].clone())?)?;
        }
        s.add("step", Tensor::scalar(self.step as f64))?;
        Ok(s)
    }

    pub fn load_store(&mut self, params: &ParamStore, saved: &ParamStore) -> Result<()> {
        let mut tmpl = self.to_store(params)?;
        tmpl.load_from(saved)?;
        for (i, (name, _)) in params.iter().enumerate() {
            self.m[i] = tmpl.get(tmpl.id(&format!("m/{name}")).unwrap()).data().to_vec();
            self.v[i] = tmpl.get(tmpl.id(&format!("v/{name}")).unwrap()).data().to_vec();
        }
        self.step = tmpl.get(tmpl.id("step").unwrap()).item() as u64;
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
