//! Adam over a [`ParamStore`].

use crate::nn::params::ParamStore;
use crate::scalar::{s, Scalar};

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self::with_betas(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let m = store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect();
        let v = store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect();
        Adam { beta1, beta2, eps, step: 0, m, v }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable tensor from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (s::<T>(self.beta1), s::<T>(self.beta2));
        let (one_b1, one_b2) = (s::<T>(1.0 - self.beta1), s::<T>(1.0 - self.beta2));
        let step_size = s::<T>(lr / bc1);
        let bc2_sqrt = s::<T>(bc2.sqrt());
        let eps = s::<T>(self.eps);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.is_trainable() {
                continue;
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let grad = p.grad.data().to_vec();
            for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
                *w -= step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamKind;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::<f64>::new();
        let a = store.register("a", Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap(), ParamKind::Trainable);
        let f = store.register("f", Tensor::from_vec(&[1], vec![3.0]).unwrap(), ParamKind::Frozen);
        store.get_mut(a).grad = Tensor::from_vec(&[2], vec![0.5, -2.0]).unwrap();
        store.get_mut(f).grad = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut opt = Adam::new(&store);
        opt.step(&mut store, 0.01);
        let v = store.get(a).value.data();
        assert!((v[0] - 0.99).abs() < 1e-6);
        assert!((v[1] + 0.99).abs() < 1e-6);
        assert_eq!(store.get(f).value.data(), &[3.0]);
    }

    #[test]
    fn zero_gradient_leaves_value_unchanged() {
        let mut store = ParamStore::<f32>::new();
        let a = store.register("a", Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap(), ParamKind::Trainable);
        let mut opt = Adam::new(&store);
        for _ in 0..5 {
            opt.step(&mut store, 0.01);
        }
        assert_eq!(store.get(a).value.data(), &[0.1, 0.2, 0.3]);
    }
}
