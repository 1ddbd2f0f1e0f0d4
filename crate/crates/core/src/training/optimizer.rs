use crate::error::{Result, XlmError};
use crate::numerics::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Linear warm-up to `peak`, constant afterwards.
pub fn lr_at(step: u64, warmup: u64, peak: f64) -> f64 {
    peak * (step as f64 / warmup.max(1) as f64).min(1.0)
}

/// Adam moments for every parameter tensor, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &[Tensor<f32>]) -> Self {
        OptimizerState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.m
            .iter()
            .chain(&self.v)
            .all(|x| x.iter().all(|v| v.is_finite()))
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm(grads: &[Vec<f32>]) -> f64 {
    let mut acc = 0.0f64;
    for g in grads {
        for &x in g {
            acc += x as f64 * x as f64;
        }
    }
    acc.sqrt()
}

/// Rescale so the global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f32>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// One bias-corrected Adam update. A non-finite gradient aborts the step
/// before anything is modified.
pub fn adam_step(
    params: &mut [Tensor<f32>],
    grads: &[Vec<f32>],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(XlmError::Shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != g.len() {
            return Err(XlmError::Shape(format!("gradient {i} has the wrong size")));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(XlmError::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    if !(lr >= 0.0) {
        return Err(XlmError::InvalidArgument(format!("learning rate {lr}")));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1 as f32, state.beta2 as f32);
    let c1 = 1.0 / (1.0 - state.beta1.powi(t));
    let c2 = 1.0 / (1.0 - state.beta2.powi(t));
    let (c1, c2, eps, lr) = (c1 as f32, c2 as f32, state.eps as f32, lr as f32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi * c1;
            let vhat = *vi * c2;
            *x -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(x: f32) -> Vec<Tensor<f32>> {
        vec![Tensor::new(vec![1], vec![x]).unwrap()]
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(lr_at(0, 100, 3e-4), 0.0);
        assert_eq!(lr_at(100, 100, 3e-4), 3e-4);
        assert!((lr_at(50, 100, 3e-4) - 1.5e-4).abs() < 1e-18);
        assert_eq!(lr_at(1000, 100, 3e-4), 3e-4);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = scalar(1.0);
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &[vec![2.0]], &mut s, 0.01).unwrap();
        // m_hat = 2, v_hat = 4, update = 0.01 * 2 / (2 + 1e-8)
        assert!((p[0].data()[0] - 0.99).abs() < 1e-6);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = scalar(0.5);
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &[vec![0.0]], &mut s, 0.1).unwrap();
        assert_eq!(p[0].data()[0], 0.5);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = scalar(0.5);
        let mut s = OptimizerState::new(&p);
        let err = adam_step(&mut p, &[vec![f32::NAN]], &mut s, 0.1).unwrap_err();
        assert_eq!(err.kind(), "non-finite");
        assert_eq!(p[0].data()[0], 0.5);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn clipping_preserves_direction() {
        let mut g = vec![vec![3.0f32], vec![4.0]];
        let n = clip_global_norm(&mut g, 1.0);
        assert!((n - 5.0).abs() < 1e-12);
        assert!((g[0][0] - 0.6).abs() < 1e-6 && (g[1][0] - 0.8).abs() < 1e-6);
        let mut small = vec![vec![0.3f32]];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0][0], 0.3);
    }

    proptest! {
        #[test]
        fn equal_gradients_equal_updates(g in -10.0f32..10.0, lr in 0.0f64..0.1) {
            let mut p = vec![Tensor::new(vec![2], vec![1.0, 1.0]).unwrap()];
            let mut s = OptimizerState::new(&p);
            adam_step(&mut p, &[vec![g, g]], &mut s, lr).unwrap();
            prop_assert_eq!(p[0].data()[0], p[0].data()[1]);
        }
    }
}
