use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments of one parameter array and its step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters and moments are rounded to
/// f32 so that checkpoints restore them exactly.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, hp: AdamParams) {
    assert_eq!(param.shape(), grad.shape(), "parameter and gradient shapes differ");
    assert_eq!(param.shape(), state.m.shape(), "parameter and moment shapes differ");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        let mi = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        let vi = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let step = hp.lr * (mi / c1) / ((vi / c2).sqrt() + hp.eps);
        m[i] = mi as f32 as f64;
        v[i] = vi as f32 as f64;
        *p = (*p - step) as f32 as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HP: AdamParams = AdamParams {
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]);
        let before = p.clone();
        let mut s = AdamState::new(&[3]);
        adam_step(&mut p, &Tensor::zeros(&[3]), &mut s, HP);
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::new(vec![1], vec![1.0]);
        let mut s = AdamState::new(&[1]);
        adam_step(&mut p, &Tensor::new(vec![1], vec![1.0]), &mut s, HP);
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-7, "{}", p.data()[0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let hp = AdamParams { lr: 0.1, ..HP };
        let mut w = Tensor::new(vec![1], vec![1.0]);
        let mut s = AdamState::new(&[1]);
        for _ in 0..100 {
            let g = Tensor::new(vec![1], vec![2.0 * w.data()[0]]);
            adam_step(&mut w, &g, &mut s, hp);
        }
        assert!(w.data()[0].abs() < 0.1, "{}", w.data()[0]);
    }

    #[test]
    fn state_stays_f32_representable() {
        let mut p = Tensor::new(vec![2], vec![0.1, 0.2]);
        let mut s = AdamState::new(&[2]);
        adam_step(&mut p, &Tensor::new(vec![2], vec![0.3, -0.7]), &mut s, HP);
        for x in p.data().iter().chain(s.m.data()).chain(s.v.data()) {
            assert_eq!(*x, *x as f32 as f64);
        }
    }
}
