//! Plain SGD and bias-corrected Adam.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_lr<T: Scalar>(lr: T) -> Result<()> {
    if !(lr > T::zero()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    Ok(())
}

fn check_pairs<T: Scalar>(params: &[&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(shape_err!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(shape_err!(
                "gradient shape {:?} does not match parameter {:?}",
                g.shape(),
                p.shape()
            ));
        }
    }
    Ok(())
}

/// `p ← p − lr·g` for every pair.
pub fn sgd_step<T: Scalar>(params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: T) -> Result<()> {
    check_lr(lr)?;
    check_pairs(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// First and second moment estimates for one parameter set.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[&[usize]]) -> Self {
        AdamState {
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let lr = T::from_f64_lossy(cfg.lr);
    check_lr(lr)?;
    check_pairs(params, grads)?;
    if state.m.len() != params.len() {
        return Err(shape_err!(
            "adam state tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        ));
    }
    state.step += 1;
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let eps = T::from_f64_lossy(cfg.eps);
    let t = state.step as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step() {
        let mut p = Tensor::scalar(1.0f64);
        sgd_step(&mut [&mut p], &[Tensor::scalar(0.5)], 0.1).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::new(vec![3], vec![1.0f64, -2.0, 3.0]).unwrap();
        let orig = p.clone();
        let g = Tensor::zeros(&[3]);
        sgd_step(&mut [&mut p], &[g.clone()], 0.1).unwrap();
        assert_eq!(p, orig);
        let mut st = AdamState::new(&[&[3]]);
        adam_step(&mut [&mut p], &[g], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, orig);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn quadratic_bowl_decays_geometrically() {
        let mut p = Tensor::scalar(1.0f64);
        for _ in 0..50 {
            let g = Tensor::scalar(2.0 * p.data()[0]);
            sgd_step(&mut [&mut p], &[g], 0.1).unwrap();
        }
        let expected = 0.8f64.powi(50);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!(p.data()[0].abs() < 1e-4);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias correction makes the first update exactly lr·sign(g) up to eps
        let mut p = Tensor::scalar(0.0f64);
        let mut st = AdamState::new(&[&[1]]);
        adam_step(&mut [&mut p], &[Tensor::scalar(3.0)], &mut st, &AdamConfig::default()).unwrap();
        assert!((p.data()[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn non_positive_lr_is_config_error() {
        let mut p = Tensor::scalar(1.0f64);
        assert!(matches!(
            sgd_step(&mut [&mut p], &[Tensor::scalar(1.0)], 0.0),
            Err(Error::Config(_))
        ));
        let mut st = AdamState::new(&[&[1]]);
        let cfg = AdamConfig {
            lr: -1.0,
            ..AdamConfig::default()
        };
        assert!(matches!(
            adam_step(&mut [&mut p], &[Tensor::scalar(1.0)], &mut st, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        assert!(sgd_step::<f64>(&mut [&mut p], &[Tensor::zeros(&[3])], 0.1).is_err());
    }
}
