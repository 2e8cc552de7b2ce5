use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{softmax, Activation, GradReport, Loss, ReversibleNet, Sample};

/// Closed-form negative gradient of layer `l` for a chained linear network
/// under ℓ2 loss and a single sample:
/// `G_l = (J_lᵀ y − J_lᵀ J_l W_l f_{l−1}) f_{l−1}ᵀ` with `J_l` the product of
/// the layers above `l`.
pub fn closed_form_grad_l2(net: &ReversibleNet, x: &[f64], y: &[f64], l: usize) -> Result<Matrix> {
    if net.activation != Activation::Identity {
        return Err(Error::Unsupported(
            "closed-form gradient needs identity activation".into(),
        ));
    }
    if net.loss != Loss::L2 {
        return Err(Error::Unsupported("closed-form gradient needs l2 loss".into()));
    }
    if l >= net.depth() {
        return Err(Error::InvalidInput(format!(
            "layer {l} out of range for depth {}",
            net.depth()
        )));
    }
    let (_, cache) = net.forward(x)?;
    if y.len() != net.output_dim() {
        return Err(Error::ShapeMismatch {
            op: "closed_form_grad_l2",
            expected: (net.output_dim(), 1),
            got: (y.len(), 1),
        });
    }
    let f_prev = &cache.f[l];
    let w = &net.layers[l];
    let mut j = Matrix::identity(w.rows());
    for upper in &net.layers[l + 1..] {
        j = upper.matmul(&j)?;
    }
    let jty = j.t_matvec(y)?;
    let jtj = j.t_matmul(&j)?;
    let jtjwf = jtj.matvec(&w.matvec(f_prev)?)?;
    let left: Vec<f64> = jty.iter().zip(&jtjwf).map(|(a, b)| a - b).collect();
    Ok(Matrix::outer(&left, f_prev))
}

/// Central-difference negative gradients of the mean batch loss.
pub fn finite_diff_grad(net: &ReversibleNet, batch: &[Sample], h: f64) -> Result<GradReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput("finite-difference step must be positive".into()));
    }
    let loss = net.loss(batch)?;
    let mut probe = net.clone();
    let mut grads = Vec::with_capacity(net.depth());
    for l in 0..net.depth() {
        let (rows, cols) = net.layers[l].shape();
        let mut g = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let orig = probe.layers[l].get(i, j);
                probe.layers[l][(i, j)] = orig + h;
                let plus = probe.loss(batch)?;
                probe.layers[l][(i, j)] = orig - h;
                let minus = probe.loss(batch)?;
                probe.layers[l][(i, j)] = orig;
                g[(i, j)] = -(plus - minus) / (2.0 * h);
            }
        }
        grads.push(g);
    }
    Ok(GradReport { grads, loss })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxGradReport {
    /// `y − softmax(f)`.
    pub exact: Vec<f64>,
    /// `P⊥y − γ f̂ / K` with `f̂ = P⊥ f` and `γ = (1 + f̂ᵀf̂ / 2K)⁻¹`.
    pub approx: Vec<f64>,
    pub gamma: f64,
    /// `‖exact − approx‖_∞`.
    pub max_abs_diff: f64,
}

/// Small-logit approximation of the logsoftmax gradient. `P⊥` removes the
/// mean.
pub fn softmax_grad_approx(f: &[f64], y: &[f64]) -> Result<SoftmaxGradReport> {
    let k = f.len();
    if k == 0 || y.len() != k {
        return Err(Error::InvalidInput(format!(
            "logits ({k}) and label ({}) must have equal positive length",
            y.len()
        )));
    }
    let kf = k as f64;
    let f_mean = f.iter().sum::<f64>() / kf;
    let y_mean = y.iter().sum::<f64>() / kf;
    let f_hat: Vec<f64> = f.iter().map(|v| v - f_mean).collect();
    let sq: f64 = f_hat.iter().map(|v| v * v).sum();
    let gamma = 1.0 / (1.0 + sq / (2.0 * kf));
    let p = softmax(f);
    let exact: Vec<f64> = y.iter().zip(&p).map(|(a, b)| a - b).collect();
    let approx: Vec<f64> = y
        .iter()
        .zip(&f_hat)
        .map(|(yk, fk)| (yk - y_mean) - gamma * fk / kf)
        .collect();
    let max_abs_diff = exact
        .iter()
        .zip(&approx)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(SoftmaxGradReport {
        exact,
        approx,
        gamma,
        max_abs_diff,
    })
}
