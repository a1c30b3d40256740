//! Adam with bias correction.

use super::{DiffTensor, Result, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub hyper: AdamHyper,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Self {
        AdamState {
            step: 0,
            hyper,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One Adam step. Returns fresh leaf tensors holding the updated values
/// (names carried over); `state` moments are sized on first use and must
/// pair with the same parameter order on every call.
pub fn adam_update(
    params: &[DiffTensor],
    grads: &[Vec<f64>],
    state: &mut AdamState,
) -> Result<Vec<DiffTensor>> {
    if params.len() != grads.len() {
        return Err(TensorError::InvalidArgument(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.v = state.m.clone();
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if g.len() != p.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_update",
                lhs: p.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteGradient {
                name: p.name().map_or_else(|| format!("param[{k}]"), String::from),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);

    let mut updated = Vec::with_capacity(params.len());
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let mut values = p.values().to_vec();
        for i in 0..values.len() {
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
        let t = match p.name() {
            Some(name) => DiffTensor::param(name, p.shape().to_vec(), values)?,
            None => DiffTensor::leaf(p.shape().to_vec(), values)?,
        };
        updated.push(t);
    }
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let p = DiffTensor::from_rows(&[vec![1.5, -2.5]]);
        let mut state = AdamState::new(AdamHyper::default());
        let out = adam_update(&[p.clone()], &[vec![0.0, 0.0]], &mut state).unwrap();
        assert_eq!(out[0].values(), p.values());
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let p = DiffTensor::scalar(1.0);
        let mut state = AdamState::new(AdamHyper {
            lr: 0.1,
            ..AdamHyper::default()
        });
        let out = adam_update(&[p], &[vec![1.0]], &mut state).unwrap();
        assert!((out[0].item() - 0.9).abs() < 1e-6, "got {}", out[0].item());
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let a = DiffTensor::scalar(0.7);
        let b = DiffTensor::scalar(0.7);
        let mut state = AdamState::new(AdamHyper::default());
        let out = adam_update(&[a, b], &[vec![0.3], vec![0.3]], &mut state).unwrap();
        assert_eq!(out[0].item().to_bits(), out[1].item().to_bits());
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let p = DiffTensor::param("enc.w", vec![1], vec![1.0]).unwrap();
        let mut state = AdamState::new(AdamHyper::default());
        match adam_update(&[p], &[vec![f64::NAN]], &mut state).unwrap_err() {
            TensorError::NonFiniteGradient { name } => assert_eq!(name, "enc.w"),
            other => panic!("unexpected error {other}"),
        }
    }
}
