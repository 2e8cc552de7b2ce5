use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::models::{Activation, Loss, ReversibleNet, Sample};
use crate::random::{gaussian_matrix, gaussian_vec, seeded, Prng};

use super::config::{RunConfig, Task};

/// Independent streams derived from one run seed. Changing the optimizer
/// does not perturb the draws of the other streams.
pub struct Streams {
    pub data: Prng,
    pub init: Prng,
    pub batches: Prng,
    pub adaptor: Prng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let derive = |k: u64| seeded(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k));
        Self {
            data: derive(1),
            init: derive(2),
            batches: derive(3),
            adaptor: derive(4),
        }
    }
}

/// A fixed dataset plus the student network to train on it.
#[derive(Debug, Clone)]
pub struct Problem {
    pub data: Vec<Sample>,
    pub student: ReversibleNet,
}

fn one_hot(k: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    y[k] = 1.0;
    y
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

pub fn build_problem(cfg: &RunConfig, streams: &mut Streams) -> Result<Problem> {
    let d_in = cfg.dims[0];
    let d_out = *cfg.dims.last().expect("validated");
    let rng = &mut streams.data;
    let data = match cfg.task {
        Task::LinearRegression => {
            let teacher = gaussian_matrix(rng, d_out, d_in).scale(1.0 / (d_in as f64).sqrt());
            (0..cfg.dataset_size)
                .map(|_| {
                    let x = gaussian_vec(rng, d_in);
                    let mut y = teacher.matvec(&x)?;
                    if cfg.label_noise > 0.0 {
                        for (v, e) in y.iter_mut().zip(gaussian_vec(rng, d_out)) {
                            *v += cfg.label_noise * e;
                        }
                    }
                    Ok(Sample::new(x, y))
                })
                .collect::<Result<Vec<_>>>()?
        }
        Task::MlpClassification => {
            let widths = cfg.teacher_dims.as_ref().unwrap_or(&cfg.dims);
            let teacher = ReversibleNet::random(rng, widths, Activation::leaky(), Loss::LogSoftmax, 2.0)?;
            let xs: Vec<Vec<f64>> = (0..cfg.dataset_size).map(|_| gaussian_vec(rng, d_in)).collect();
            let outs = teacher.outputs(xs.iter().map(Vec::as_slice))?;
            xs.into_iter()
                .zip(outs)
                .map(|(x, out)| {
                    let mut k = argmax(&out);
                    if cfg.label_noise > 0.0 && rng.random::<f64>() < cfg.label_noise {
                        k = rng.random_range(0..d_out);
                    }
                    Sample::new(x, one_hot(k, d_out))
                })
                .collect()
        }
    };
    let (activation, loss) = match cfg.task {
        Task::LinearRegression => (Activation::Identity, Loss::L2),
        Task::MlpClassification => (Activation::leaky(), Loss::LogSoftmax),
    };
    let student = ReversibleNet::random(&mut streams.init, &cfg.dims, activation, loss, 1.0)?;
    Ok(Problem { data, student })
}

/// Cycles through shuffled epochs of the dataset.
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl Batcher {
    pub fn new(len: usize, batch: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
            batch: batch.min(len),
        }
    }

    /// Next batch; batches run across epoch boundaries.
    pub fn next<T: Clone, R: Rng + ?Sized>(&mut self, rng: &mut R, data: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(data[self.order[self.pos]].clone());
            self.pos += 1;
        }
        out
    }
}

/// Accuracy of argmax predictions against one-hot targets.
pub fn accuracy(net: &ReversibleNet, data: &[Sample]) -> Result<f64> {
    let outs = net.outputs(data.iter().map(|s| s.x.as_slice()))?;
    let hits = outs.iter().zip(data).filter(|(f, s)| argmax(f) == argmax(&s.y)).count();
    Ok(hits as f64 / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunConfig;

    fn cfg(task: &str) -> RunConfig {
        RunConfig::from_json(&format!(
            r#"{{"seed": 3, "task": "{task}", "dims": [6, 8, 4], "optimizer": "adam",
                "eta": 0.01, "steps": 5, "dataset_size": 40, "label_noise": 0.1}}"#
        ))
        .unwrap()
    }

    #[test]
    fn problems_are_seeded() {
        for task in ["linear-regression", "mlp-classification"] {
            let c = cfg(task);
            let a = build_problem(&c, &mut Streams::new(3)).unwrap();
            let b = build_problem(&c, &mut Streams::new(3)).unwrap();
            assert_eq!(a.data, b.data);
            assert_eq!(a.student, b.student);
            assert_eq!(a.data.len(), 40);
            let other = build_problem(&c, &mut Streams::new(4)).unwrap();
            assert_ne!(a.data, other.data);
        }
    }

    #[test]
    fn classification_labels_are_one_hot() {
        let p = build_problem(&cfg("mlp-classification"), &mut Streams::new(3)).unwrap();
        for s in &p.data {
            assert_eq!(s.y.iter().sum::<f64>(), 1.0);
            assert_eq!(s.y.iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }

    #[test]
    fn batcher_covers_each_epoch() {
        let data: Vec<Sample> = (0..10).map(|i| Sample::new(vec![i as f64], vec![0.0])).collect();
        let mut b = Batcher::new(10, 4);
        let mut rng = seeded(0);
        let mut seen: Vec<f64> = Vec::new();
        for _ in 0..5 {
            seen.extend(b.next(&mut rng, &data).iter().map(|s| s.x[0]));
        }
        let mut first: Vec<f64> = seen[..10].to_vec();
        first.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(first, (0..10).map(|i| i as f64).collect::<Vec<_>>());
    }
}
