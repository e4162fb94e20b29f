use alloc::vec::Vec;

use super::{GradStore, ParamStore, Tensor};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.tensor.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Clipping, if any, is applied to `grads`
/// by the caller beforehand.
pub fn adam_step(store: &mut ParamStore, grads: &GradStore, state: &mut AdamState, cfg: &Adam) {
    state.step += 1;
    let c1 = 1.0 - math::powi(cfg.beta1, state.step);
    let c2 = 1.0 - math::powi(cfg.beta2, state.step);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = grads.get(id).data();
        let m = state.m[id.index()].data_mut();
        let v = state.v[id.index()].data_mut();
        let p = store.get_mut(id).data_mut();
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= cfg.lr * mh / (math::sqrt(vh) + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Init;
    use alloc::vec;
    use rand::SeedableRng;

    fn store() -> (ParamStore, crate::diffcore::ParamId) {
        let mut s = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let id = s.add("p", &[3], Init::Zeros, &mut rng).unwrap();
        s.set(id, Tensor::vector(vec![1.0, -2.0, 0.5])).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = store();
        let before = s.get(id).clone();
        let mut st = AdamState::new(&s);
        let zero = GradStore::zeros_like(&s);
        adam_step(&mut s, &zero, &mut st, &Adam::new(0.1));
        assert_eq!(s.get(id), &before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let (mut s, id) = store();
        let mut grads = GradStore::zeros_like(&s);
        grads.get_mut(id).data_mut().copy_from_slice(&[3.0, -0.01, 250.0]);
        let mut st = AdamState::new(&s);
        let lr = 1e-3;
        adam_step(&mut s, &grads, &mut st, &Adam::new(lr));
        let expect = [1.0 - lr, -2.0 + lr, 0.5 - lr];
        for (p, e) in s.get(id).data().iter().zip(expect) {
            assert!((p - e).abs() < 1e-9, "{p} vs {e}");
        }
    }

    #[test]
    fn clipping_halves_norm_twenty() {
        let (s, id) = store();
        let mut grads = GradStore::zeros_like(&s);
        grads.get_mut(id).data_mut().copy_from_slice(&[12.0, 16.0, 0.0]);
        let before = grads.clip_global_norm(10.0);
        assert_eq!(before, 20.0);
        assert_eq!(grads.get(id).data(), &[6.0, 8.0, 0.0]);
        let mut small = GradStore::zeros_like(&s);
        small.get_mut(id).data_mut()[0] = 3.0;
        small.clip_global_norm(10.0);
        assert_eq!(small.get(id).data()[0], 3.0);
    }
}
