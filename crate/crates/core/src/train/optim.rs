//! Adam with bias correction, the only optimizer the workbench needs.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Scalar;
use crate::train::TrainConfig;

/// First/second-moment buffers for one model, in canonical trainable-entry
/// order. Running batch-norm statistics are not optimized.
pub struct AdamState<T> {
    pub t: u64,
    names: Vec<String>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

/// One bias-corrected Adam update on a single parameter array.
/// `t` is the 1-based step count *after* incrementing.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let b1 = T::from_f64(beta1);
    let b2 = T::from_f64(beta2);
    let one = T::one();
    let bc1 = T::from_f64(1.0 - beta1.powi(t as i32));
    let bc2 = T::from_f64(1.0 - beta2.powi(t as i32));
    let lr = T::from_f64(lr);
    let eps = T::from_f64(eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        param[i] = param[i] - lr * mhat / (vhat.sqrt() + eps);
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &Model<T>) -> Self {
        let infos = model.param_infos(true);
        let sizes: Vec<usize> = infos
            .iter()
            .map(|i| i.shape.iter().product::<usize>())
            .collect();
        AdamState {
            t: 0,
            names: infos.into_iter().map(|i| i.name).collect(),
            m: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            v: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
        }
    }

    /// Apply one step at learning rate `lr` (the caller owns any schedule).
    /// `grads` is a structural mirror of `model` holding gradients; a
    /// non-finite gradient aborts, naming the parameter.
    pub fn step(
        &mut self,
        model: &mut Model<T>,
        grads: &Model<T>,
        lr: f64,
        config: &TrainConfig,
    ) -> Result<()> {
        let grad_slices = grads.param_slices(true);
        for (name, slice) in self.names.iter().zip(&grad_slices) {
            if let Some(bad) = slice.iter().find(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient {bad} in parameter {name}"
                )));
            }
        }
        self.t += 1;
        let params = model.param_slices_mut(true);
        debug_assert_eq!(params.len(), self.m.len());
        for (i, param) in params.into_iter().enumerate() {
            adam_update(
                param,
                grad_slices[i],
                &mut self.m[i],
                &mut self.v[i],
                self.t,
                lr,
                config.adam_beta1,
                config.adam_beta2,
                config.adam_eps,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::model::{build_model, ModelConfig};

    fn tiny_model(seed: u64) -> Model<f32> {
        let mut config = ModelConfig::unet();
        config.encoder_widths = [2, 4, 8, 16];
        build_model(&config, &GridSpec::new(16, 16).unwrap(), seed).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Bias correction makes the very first update ≈ lr·sign(g).
        let mut p = [1.0f64];
        let mut m = [0.0];
        let mut v = [0.0];
        adam_update(&mut p, &[3.0], &mut m, &mut v, 1, 8e-4, 0.9, 0.999, 1e-8);
        assert!((p[0] - (1.0 - 8e-4)).abs() < 1e-9, "got {}", p[0]);
        let mut p = [0.5f64];
        let mut m = [0.0];
        let mut v = [0.0];
        adam_update(&mut p, &[-0.01], &mut m, &mut v, 1, 8e-4, 0.9, 0.999, 1e-8);
        assert!((p[0] - (0.5 + 8e-4)).abs() < 1e-9, "got {}", p[0]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = [0.7f64, -0.3];
        let mut m = [0.0; 2];
        let mut v = [0.0; 2];
        for t in 1..=3 {
            adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, t, 8e-4, 0.9, 0.999, 1e-8);
        }
        assert_eq!(p, [0.7, -0.3]);
    }

    #[test]
    fn matches_hand_trace_on_scalar_quadratic() {
        // f(θ) = θ², gradient 2θ, lr 0.1: three steps computed by hand.
        let expected = [0.9000000005, 0.8004122286917928, 0.7015862729460303];
        let mut p = [1.0f64];
        let mut m = [0.0];
        let mut v = [0.0];
        for t in 1..=3u64 {
            let g = 2.0 * p[0];
            adam_update(&mut p, &[g], &mut m, &mut v, t, 0.1, 0.9, 0.999, 1e-8);
            assert!(
                (p[0] - expected[t as usize - 1]).abs() < 1e-12,
                "step {t}: {} vs {}",
                p[0],
                expected[t as usize - 1]
            );
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut model = tiny_model(1);
        let mut grads = model.zeros_like();
        grads.up[1].weight.data[3] = f32::NAN;
        let mut state = AdamState::new(&model);
        let config = TrainConfig::new(0);
        let err = state
            .step(&mut model, &grads, config.learning_rate, &config)
            .unwrap_err();
        assert!(err.to_string().contains("up2.weight"), "{err}");
        assert_eq!(state.t, 0, "failed step must not advance time");
    }

    #[test]
    fn step_updates_every_trainable_array() {
        let mut model = tiny_model(2);
        let before: Vec<Vec<f32>> = model
            .param_slices(true)
            .into_iter()
            .map(|s| s.to_vec())
            .collect();
        let mut grads = model.zeros_like();
        for slice in grads.param_slices_mut(true) {
            for v in slice {
                *v = 0.01;
            }
        }
        let mut state = AdamState::new(&model);
        let config = TrainConfig::new(0);
        state
            .step(&mut model, &grads, config.learning_rate, &config)
            .unwrap();
        for (b, a) in before.iter().zip(model.param_slices(true)) {
            for (x, y) in b.iter().zip(a) {
                assert!((x - y).abs() > 0.0, "array untouched by the step");
            }
        }
        assert_eq!(state.t, 1);
    }
}
