//! Central-difference validation of the backward pass.

use super::{backprop, DiffTensor, Result, TensorError};

/// Compares autodiff gradients of `f` against central differences
/// `(f(p+h) - f(p-h)) / 2h`, entry by entry, and returns the worst relative
/// error with denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` must rebuild its computation from the given leaves on every call and
/// return a scalar.
pub fn finite_difference_check<F>(f: F, params: &[DiffTensor], h: f64) -> Result<f64>
where
    F: Fn(&[DiffTensor]) -> Result<DiffTensor>,
{
    if h <= 0.0 {
        return Err(TensorError::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let eval = |tensors: &[DiffTensor]| -> Result<f64> {
        let out = f(tensors)?;
        if out.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: out.shape().to_vec(),
            });
        }
        let v = out.item();
        if !v.is_finite() {
            return Err(TensorError::NonFinite {
                context: "finite_difference_check".into(),
            });
        }
        Ok(v)
    };

    // Analytic pass on fresh leaf copies so prior gradients cannot leak in.
    let base: Vec<DiffTensor> = params
        .iter()
        .map(|p| DiffTensor::leaf(p.shape().to_vec(), p.values().to_vec()))
        .collect::<Result<_>>()?;
    let loss = f(&base)?;
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: loss.shape().to_vec(),
        });
    }
    if !loss.item().is_finite() {
        return Err(TensorError::NonFinite {
            context: "finite_difference_check".into(),
        });
    }
    backprop(&loss)?;
    let analytic: Vec<Vec<f64>> = base.iter().map(|p| p.grad_or_zeros()).collect();

    let mut worst = 0.0f64;
    for (k, p) in params.iter().enumerate() {
        for i in 0..p.numel() {
            let perturbed = |delta: f64| -> Result<f64> {
                let mut copies: Vec<DiffTensor> = Vec::with_capacity(params.len());
                for (j, q) in params.iter().enumerate() {
                    let mut values = q.values().to_vec();
                    if j == k {
                        values[i] += delta;
                    }
                    copies.push(DiffTensor::leaf(q.shape().to_vec(), values)?);
                }
                eval(&copies)
            };
            let numeric = (perturbed(h)? - perturbed(-h)?) / (2.0 * h);
            let a = analytic[k][i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
