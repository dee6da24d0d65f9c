//! First-order adaptive optimizer with cosine learning-rate decay.

use crate::substrate::{Binding, Grads, ParamStore, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moments; update order follows parameter
/// registration order, so steps are bit-deterministic.
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
    t: u32,
}

impl Adam {
    pub fn new(store: &ParamStore<f32>, cfg: AdamConfig) -> Self {
        let m = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        let v = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Adam { cfg, m, v, t: 0 }
    }

    /// Apply one update using the gradients bound through `binding`.
    /// Parameters without a gradient (frozen leaves) are untouched.
    pub fn step(
        &mut self,
        store: &mut ParamStore<f32>,
        binding: &Binding,
        grads: &Grads<f32>,
        lr: f64,
    ) {
        self.step_with(store, binding, grads, |_| lr)
    }

    /// Like [`Adam::step`] with a per-parameter learning rate (keyed by
    /// name), for phases that fine-tune one branch more gently.
    pub fn step_with(
        &mut self,
        store: &mut ParamStore<f32>,
        binding: &Binding,
        grads: &Grads<f32>,
        lr_of: impl Fn(&str) -> f64,
    ) {
        self.t += 1;
        let b1 = self.cfg.beta1 as f32;
        let b2 = self.cfg.beta2 as f32;
        let eps = self.cfg.eps as f32;
        let bias1 = 1.0 - (self.cfg.beta1 as f32).powi(self.t as i32);
        let bias2 = 1.0 - (self.cfg.beta2 as f32).powi(self.t as i32);

        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let Some(grad) = grads.get(binding.var(id)) else {
                continue;
            };
            let lr = lr_of(store.name(id)) as f32;
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            for ((pv, gv), (mv, vv)) in p
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Cosine decay from `lr0` to 0 over `total` steps.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = (step as f64 / total as f64).clamp(0.0, 1.0);
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::{Graph, Init};

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(p) = sum((p - c)^2) with c = 3
        let mut store = ParamStore::<f32>::new(0);
        let p = store.add("p", vec![4], Init::Zeros).unwrap();
        let mut adam = Adam::new(&store, AdamConfig { lr: 0.1, ..AdamConfig::default() });
        for _ in 0..300 {
            let mut g = Graph::<f32>::new();
            let bind = store.bind_all(&mut g);
            let shifted = g.add_const(bind.var(p), -3.0);
            let sq = g.square(shifted).unwrap();
            let loss = g.sum(sq);
            let grads = g.backward(loss).unwrap();
            adam.step(&mut store, &bind, &grads, 0.1);
        }
        for &v in store.get(p).data() {
            assert!((v - 3.0).abs() < 1e-2, "{v}");
        }
    }

    #[test]
    fn frozen_parameters_stay_put() {
        let mut store = ParamStore::<f32>::new(1);
        let a = store.add("train.a", vec![2], Init::Constant(1.0)).unwrap();
        let b = store.add("frozen.b", vec![2], Init::Constant(1.0)).unwrap();
        let mut adam = Adam::new(&store, AdamConfig::default());
        let mut g = Graph::<f32>::new();
        let bind = store.bind(&mut g, |n| n.starts_with("train."));
        let sum_a = g.sum(bind.var(a));
        let sum_b = g.sum(bind.var(b));
        let loss = g.add(sum_a, sum_b).unwrap();
        let grads = g.backward(loss).unwrap();
        adam.step(&mut store, &bind, &grads, 1e-2);
        assert_ne!(store.get(a).data(), &[1.0, 1.0]);
        assert_eq!(store.get(b).data(), &[1.0, 1.0]);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1.0, 0, 100), 1.0);
        assert!((cosine_lr(1.0, 50, 100) - 0.5).abs() < 1e-12);
        assert!(cosine_lr(1.0, 100, 100) < 1e-12);
    }
}
