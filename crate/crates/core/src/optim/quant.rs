//! Blockwise absmax int8 storage for optimizer moments.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::adam::{sandwich, AdamHyper};

pub const DEFAULT_BLOCK_SIZE: usize = 256;
/// Bytes charged per block scale in memory accounting.
pub const SCALE_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized8Block {
    /// Absolute maximum of the block.
    pub scale: f64,
    pub codes: Vec<i8>,
}

impl Quantized8Block {
    pub fn encode(x: &[f64]) -> Self {
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let codes = if scale == 0.0 {
            vec![0; x.len()]
        } else {
            x.iter()
                .map(|v| (v * 127.0 / scale).round().clamp(-127.0, 127.0) as i8)
                .collect()
        };
        Self { scale, codes }
    }

    pub fn decode_into(&self, out: &mut Vec<f64>) {
        out.extend(self.codes.iter().map(|&c| self.scale * (c as f64 / 127.0)));
    }
}

/// A matrix held as a flat sequence of int8 blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    block_size: usize,
    blocks: Vec<Quantized8Block>,
}

impl QuantizedMatrix {
    pub fn quantize(x: &Matrix, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidInput("block_size must be at least 1".into()));
        }
        let blocks = x.as_slice().chunks(block_size).map(Quantized8Block::encode).collect();
        Ok(Self {
            rows: x.rows(),
            cols: x.cols(),
            block_size,
            blocks,
        })
    }

    pub fn dequantize(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for b in &self.blocks {
            b.decode_into(&mut data);
        }
        Matrix::from_fn(self.rows, self.cols, |i, j| data[i * self.cols + j])
    }

    pub fn blocks(&self) -> &[Quantized8Block] {
        &self.blocks
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn entries(&self) -> usize {
        self.rows * self.cols
    }

    /// One byte per code plus one scale per block.
    pub fn bytes(&self) -> usize {
        self.entries() + SCALE_BYTES * self.blocks.len()
    }
}

/// Quantize then dequantize `x`.
pub fn q8_roundtrip(x: &Matrix, block_size: usize) -> Result<(Vec<Quantized8Block>, Matrix)> {
    let q = QuantizedMatrix::quantize(x, block_size)?;
    let dq = q.dequantize();
    Ok((q.blocks, dq))
}

/// Adam whose moments live in int8 blocks between steps.
///
/// The first moment is stored directly. The second moment is stored as
/// `√V`, which keeps it on the same scale as the gradient and stops small
/// entries from collapsing to zero next to a large block maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam8State {
    m: QuantizedMatrix,
    v_root: QuantizedMatrix,
    t: u64,
    hyper: AdamHyper,
}

impl Adam8State {
    pub fn new(rows: usize, cols: usize, hyper: AdamHyper, block_size: usize) -> Result<Self> {
        hyper.validate()?;
        let z = Matrix::zeros(rows, cols);
        Ok(Self {
            m: QuantizedMatrix::quantize(&z, block_size)?,
            v_root: QuantizedMatrix::quantize(&z, block_size)?,
            t: 0,
            hyper,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn entries(&self) -> usize {
        self.m.entries() + self.v_root.entries()
    }

    pub fn bytes(&self) -> usize {
        self.m.bytes() + self.v_root.bytes()
    }

    pub fn moments(&self) -> (Matrix, Matrix) {
        let v = self.v_root.dequantize().map(|x| x * x);
        (self.m.dequantize(), v)
    }

    pub fn reset(&mut self) {
        let z = Matrix::zeros(self.m.rows, self.m.cols);
        let bs = self.m.block_size;
        self.m = QuantizedMatrix::quantize(&z, bs).expect("block size already validated");
        self.v_root = self.m.clone();
        self.t = 0;
    }

    pub fn direction(&mut self, g: &Matrix) -> Result<Matrix> {
        let shape = (self.m.rows, self.m.cols);
        if g.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "adam8",
                expected: shape,
                got: g.shape(),
            });
        }
        let h = self.hyper;
        let (mut m, mut v) = self.moments();
        self.t += 1;
        let (c1, c2) = h.corrections(self.t);
        let mut out = Matrix::zeros(g.rows(), g.cols());
        {
            let gs = g.as_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for (k, o) in out.as_mut_slice().iter_mut().enumerate() {
                ms[k] = h.beta1 * ms[k] + (1.0 - h.beta1) * gs[k];
                vs[k] = h.beta2 * vs[k] + (1.0 - h.beta2) * gs[k] * gs[k];
                *o = (ms[k] / c1) / ((vs[k] / c2).sqrt() + h.eps);
            }
        }
        let bs = self.m.block_size;
        self.m = QuantizedMatrix::quantize(&m, bs)?;
        self.v_root = QuantizedMatrix::quantize(&v.map(f64::sqrt), bs)?;
        Ok(out)
    }

    pub fn step(&mut self, g: &Matrix, eta: f64) -> Result<Matrix> {
        Ok(self.direction(g)?.scale(eta))
    }

    pub fn rotate(&mut self, left: Option<&Matrix>, right: Option<&Matrix>) -> Result<()> {
        let bs = self.m.block_size;
        let m = sandwich(left, &self.m.dequantize(), right)?;
        let root = sandwich(left, &self.v_root.dequantize(), right)?.map(f64::abs);
        self.m = QuantizedMatrix::quantize(&m, bs)?;
        self.v_root = QuantizedMatrix::quantize(&root, bs)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::adam::AdamState;
    use crate::random::{gaussian_matrix, seeded, uniform_matrix};

    #[test]
    fn zero_block() {
        let (blocks, dq) = q8_roundtrip(&Matrix::zeros(2, 5), 4).unwrap();
        assert_eq!(blocks.len(), 3);
        assert!(blocks.iter().all(|b| b.scale == 0.0 && b.codes.iter().all(|&c| c == 0)));
        assert_eq!(dq, Matrix::zeros(2, 5));
    }

    #[test]
    fn absmax_entry_is_exact() {
        let x = Matrix::from_rows(&[&[0.3, -1.7, 0.01, 1.2]]).unwrap();
        let (blocks, dq) = q8_roundtrip(&x, 256).unwrap();
        assert_eq!(blocks[0].codes[1], -127);
        assert_eq!(dq.get(0, 1), -1.7);
    }

    #[test]
    fn brute_force_error_bound() {
        let mut rng = seeded(8);
        let x = uniform_matrix(&mut rng, 16, 16, 3.0);
        let (blocks, dq) = q8_roundtrip(&x, 256).unwrap();
        let bound = blocks[0].scale / 127.0;
        for (a, b) in x.as_slice().iter().zip(dq.as_slice()) {
            assert!((a - b).abs() <= bound);
        }
        assert!(q8_roundtrip(&x, 0).is_err());
    }

    #[test]
    fn eight_bit_adam_tracks_float_adam() {
        let mut rng = seeded(12);
        let hyper = AdamHyper::default();
        let mut full = AdamState::new(4, 8, hyper).unwrap();
        let mut q = Adam8State::new(4, 8, hyper, 16).unwrap();
        for _ in 0..20 {
            let g = gaussian_matrix(&mut rng, 4, 8);
            let a = full.step(&g, 1.0).unwrap();
            let b = q.step(&g, 1.0).unwrap();
            assert!(a.max_abs_diff(&b) < 0.2, "{}", a.max_abs_diff(&b));
        }
        assert_eq!(q.bytes(), 2 * (32 + 2 * SCALE_BYTES));
    }
}
