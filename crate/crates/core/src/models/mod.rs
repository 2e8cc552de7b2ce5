//! Bias-free chained linear networks with an optional leaky-ReLU between
//! layers. Backprop is written out by hand and checked against oracles.

mod oracles;

pub use oracles::{closed_form_grad_l2, finite_diff_grad, softmax_grad_approx, SoftmaxGradReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::random::gaussian_matrix;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(LEAKY_SLOPE)
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::LeakyRelu(a) => {
                if z >= 0.0 {
                    z
                } else {
                    a * z
                }
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu(a) => {
                if z >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `½ ‖y − f‖²`.
    L2,
    /// `logsumexp(f) − yᵀf` with one-hot `y`.
    LogSoftmax,
}

impl Loss {
    pub fn value(self, f: &[f64], y: &[f64]) -> f64 {
        match self {
            Loss::L2 => 0.5 * f.iter().zip(y).map(|(a, b)| (b - a).powi(2)).sum::<f64>(),
            Loss::LogSoftmax => log_sum_exp(f) - dot(y, f),
        }
    }

    /// `−∂φ/∂f`.
    pub fn neg_grad(self, f: &[f64], y: &[f64]) -> Vec<f64> {
        match self {
            Loss::L2 => y.iter().zip(f).map(|(b, a)| b - a).collect(),
            Loss::LogSoftmax => {
                let p = softmax(f);
                let ysum: f64 = y.iter().sum();
                y.iter().zip(&p).map(|(yk, pk)| yk - ysum * pk).collect()
            }
        }
    }
}

pub fn log_sum_exp(f: &[f64]) -> f64 {
    let mx = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + f.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

pub fn softmax(f: &[f64]) -> Vec<f64> {
    let mx = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = f.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { x, y }
    }
}

/// Per-layer negative gradients (`G_l = −∇_{W_l} φ`) and the mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub grads: Vec<Matrix>,
    pub loss: f64,
}

/// Activations from one forward pass: `f[0] = x`, `z[l]` is the
/// pre-activation of layer `l`, `f[l + 1]` its output.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub f: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.f.last().expect("cache holds at least the input")
    }
}

/// Layers are 0-indexed: `layers[0]` acts on the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversibleNet {
    pub layers: Vec<Matrix>,
    pub activation: Activation,
    pub loss: Loss,
}

impl ReversibleNet {
    pub fn new(layers: Vec<Matrix>, activation: Activation, loss: Loss) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::ShapeMismatch {
                    op: "layer composition",
                    expected: (pair[1].rows(), pair[0].rows()),
                    got: pair[1].shape(),
                });
            }
        }
        Ok(Self {
            layers,
            activation,
            loss,
        })
    }

    /// Gaussian layers scaled by `scale / √fan_in`. `dims` lists the widths
    /// from input to output.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        dims: &[usize],
        activation: Activation,
        loss: Loss,
        scale: f64,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer widths {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| gaussian_matrix(rng, w[1], w[0]).scale(scale / (w[0] as f64).sqrt()))
            .collect();
        Self::new(layers, activation, loss)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                expected: (self.input_dim(), 1),
                got: (x.len(), 1),
            });
        }
        let last = self.depth() - 1;
        let mut f = Vec::with_capacity(self.depth() + 1);
        let mut z = Vec::with_capacity(self.depth());
        f.push(x.to_vec());
        for (l, w) in self.layers.iter().enumerate() {
            let zl = w.matvec(f.last().expect("non-empty"))?;
            let fl = if l == last {
                zl.clone()
            } else {
                zl.iter().map(|&v| self.activation.apply(v)).collect()
            };
            z.push(zl);
            f.push(fl);
        }
        let out = f.last().expect("non-empty").clone();
        Ok((out, ForwardCache { f, z }))
    }

    fn check_target(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                op: "target",
                expected: (self.output_dim(), 1),
                got: (y.len(), 1),
            });
        }
        Ok(())
    }

    /// Network outputs for many inputs, computed in column blocks with
    /// matrix products. Agrees with [`ReversibleNet::forward`] up to rounding.
    pub fn outputs<'a, I>(&self, inputs: I) -> Result<Vec<Vec<f64>>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        const BLOCK: usize = 256;
        let inputs: Vec<&[f64]> = inputs.into_iter().collect();
        let d_in = self.input_dim();
        let last = self.depth() - 1;
        let mut out = Vec::with_capacity(inputs.len());
        for block in inputs.chunks(BLOCK) {
            if let Some(bad) = block.iter().find(|x| x.len() != d_in) {
                return Err(Error::ShapeMismatch {
                    op: "outputs",
                    expected: (d_in, 1),
                    got: (bad.len(), 1),
                });
            }
            let mut h = Matrix::from_fn(d_in, block.len(), |i, j| block[j][i]);
            for (l, w) in self.layers.iter().enumerate() {
                h = w.matmul(&h)?;
                if l != last {
                    h = h.map(|v| self.activation.apply(v));
                }
            }
            out.extend((0..block.len()).map(|j| h.column(j)));
        }
        Ok(out)
    }

    /// Mean loss over a batch.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for s in batch {
            self.check_target(&s.y)?;
        }
        let outs = self.outputs(batch.iter().map(|s| s.x.as_slice()))?;
        let acc: f64 = outs.iter().zip(batch).map(|(f, s)| self.loss.value(f, &s.y)).sum();
        Ok(acc / batch.len() as f64)
    }

    /// Composite map of an identity-activation network, `W_L ⋯ W_1`.
    pub fn end_to_end_matrix(&self) -> Result<Matrix> {
        if self.activation != Activation::Identity {
            return Err(Error::Unsupported(
                "end-to-end matrix needs identity activation".into(),
            ));
        }
        let mut acc = self.layers[0].clone();
        for w in &self.layers[1..] {
            acc = w.matmul(&acc)?;
        }
        Ok(acc)
    }

    fn prepare(&self, batch: &[Sample]) -> Result<(Vec<ForwardCache>, Vec<Vec<f64>>, f64)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut caches = Vec::with_capacity(batch.len());
        let mut deltas = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for s in batch {
            self.check_target(&s.y)?;
            let (out, cache) = self.forward(&s.x)?;
            loss += self.loss.value(&out, &s.y);
            deltas.push(self.loss.neg_grad(&out, &s.y));
            caches.push(cache);
        }
        Ok((caches, deltas, loss / batch.len() as f64))
    }

    /// Batch-mean gradient of layer `l` from the per-sample deltas at its
    /// output, and the deltas propagated to the layer below.
    fn layer_step(
        w: &Matrix,
        activation: Activation,
        l: usize,
        caches: &[ForwardCache],
        deltas: &[Vec<f64>],
    ) -> Result<(Matrix, Vec<Vec<f64>>)> {
        let (rows, cols) = w.shape();
        let mut g = Matrix::zeros(rows, cols);
        for (cache, d) in caches.iter().zip(deltas) {
            let input = &cache.f[l];
            for (i, di) in d.iter().enumerate() {
                if *di == 0.0 {
                    continue;
                }
                let row = &mut g.as_mut_slice()[i * cols..(i + 1) * cols];
                for (gj, fj) in row.iter_mut().zip(input) {
                    *gj += di * fj;
                }
            }
        }
        let g = g.scale(1.0 / caches.len() as f64);
        let below = if l == 0 {
            Vec::new()
        } else {
            caches
                .iter()
                .zip(deltas)
                .map(|(cache, d)| {
                    let back = w.t_matvec(d)?;
                    Ok(back
                        .iter()
                        .zip(&cache.z[l - 1])
                        .map(|(b, z)| b * activation.derivative(*z))
                        .collect())
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok((g, below))
    }

    /// Reverse-mode gradients, averaged over the batch.
    pub fn backward(&self, batch: &[Sample]) -> Result<GradReport> {
        let (caches, mut deltas, loss) = self.prepare(batch)?;
        let mut grads = vec![Matrix::zeros(1, 1); self.depth()];
        for l in (0..self.depth()).rev() {
            let (g, below) = Self::layer_step(&self.layers[l], self.activation, l, &caches, &deltas)?;
            grads[l] = g;
            deltas = below;
        }
        Ok(GradReport { grads, loss })
    }

    /// Backward sweep that hands each layer's gradient to `update` as soon
    /// as it is formed, top layer first. Deltas for the layer below are
    /// computed from the weights as they were before `update` runs, so the
    /// result matches calling [`ReversibleNet::backward`] and then updating
    /// every layer. Returns the loss and the largest gradient buffer held.
    pub fn backward_per_layer<F>(&mut self, batch: &[Sample], mut update: F) -> Result<(f64, usize)>
    where
        F: FnMut(usize, &mut Matrix, &Matrix) -> Result<()>,
    {
        let (caches, mut deltas, loss) = self.prepare(batch)?;
        let mut peak = 0;
        for l in (0..self.depth()).rev() {
            let (g, below) = Self::layer_step(&self.layers[l], self.activation, l, &caches, &deltas)?;
            peak = peak.max(g.len());
            update(l, &mut self.layers[l], &g)?;
            deltas = below;
        }
        Ok((loss, peak))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Matrix::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{gaussian_vec, seeded};

    #[test]
    fn forward_small_cases() {
        let net = ReversibleNet::new(vec![Matrix::identity(3)], Activation::Identity, Loss::L2).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap().0, vec![1.0, 2.0, 3.0]);

        let two = Matrix::from_rows(&[&[2.0]]).unwrap();
        let net = ReversibleNet::new(vec![two.clone(), two], Activation::Identity, Loss::L2).unwrap();
        assert_eq!(net.forward(&[1.5]).unwrap().0, vec![6.0]);
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn forward_matches_chain_product() {
        let mut rng = seeded(10);
        let net = ReversibleNet::random(&mut rng, &[4, 5, 3, 2], Activation::Identity, Loss::L2, 1.0).unwrap();
        let x = gaussian_vec(&mut rng, 4);
        let chain = net.end_to_end_matrix().unwrap().matvec(&x).unwrap();
        let out = net.forward(&x).unwrap().0;
        for (a, b) in out.iter().zip(&chain) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_layer_l2_gradient() {
        let net = ReversibleNet::new(vec![Matrix::zeros(1, 1)], Activation::Identity, Loss::L2).unwrap();
        let rep = net.backward(&[Sample::new(vec![1.0], vec![2.0])]).unwrap();
        assert_eq!(rep.grads[0].as_slice(), &[2.0]);
        assert_eq!(rep.loss, 2.0);
    }

    #[test]
    fn uniform_softmax_gradient() {
        let g = Loss::LogSoftmax.neg_grad(&[0.0; 3], &[1.0, 0.0, 0.0]);
        let expected = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0];
        for (a, b) in g.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn composition_errors() {
        let bad = vec![Matrix::zeros(3, 2), Matrix::zeros(2, 4)];
        assert!(ReversibleNet::new(bad, Activation::Identity, Loss::L2).is_err());
        assert!(ReversibleNet::new(vec![], Activation::Identity, Loss::L2).is_err());
    }

    #[test]
    fn batch_is_mean_of_samples() {
        let mut rng = seeded(11);
        let net = ReversibleNet::random(&mut rng, &[3, 4, 2], Activation::leaky(), Loss::L2, 1.0).unwrap();
        let batch: Vec<Sample> = (0..5)
            .map(|_| Sample::new(gaussian_vec(&mut rng, 3), gaussian_vec(&mut rng, 2)))
            .collect();
        let full = net.backward(&batch).unwrap();
        for l in 0..2 {
            let mut acc = Matrix::zeros(full.grads[l].rows(), full.grads[l].cols());
            for s in &batch {
                acc.axpy(1.0, &net.backward(std::slice::from_ref(s)).unwrap().grads[l]).unwrap();
            }
            let mean = acc.scale(0.2);
            assert!(mean.max_abs_diff(&full.grads[l]) <= 1e-12);
        }
    }

    #[test]
    fn per_layer_sweep_matches_backward() {
        let mut rng = seeded(12);
        let mut net = ReversibleNet::random(&mut rng, &[3, 4, 4, 2], Activation::leaky(), Loss::L2, 1.0).unwrap();
        let batch: Vec<Sample> = (0..4)
            .map(|_| Sample::new(gaussian_vec(&mut rng, 3), gaussian_vec(&mut rng, 2)))
            .collect();
        let rep = net.backward(&batch).unwrap();
        let mut expected = net.clone();
        for (w, g) in expected.layers.iter_mut().zip(&rep.grads) {
            w.axpy(0.1, g).unwrap();
        }
        let (loss, peak) = net
            .backward_per_layer(&batch, |_, w, g| w.axpy(0.1, g))
            .unwrap();
        assert_eq!(loss, rep.loss);
        assert_eq!(peak, 16);
        assert_eq!(net, expected);
    }
}
