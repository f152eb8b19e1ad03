//! Reference implementations used as test oracles. Written plainly, without
//! the sparse-input shortcuts of the library, so that agreement means
//! something.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use h2fed::seeds::{stream_seed, tag};

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub d: usize,
    pub h: usize,
    pub c: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.d * self.h + self.h + self.h * self.c + self.c
    }

    fn w1(&self, i: usize, j: usize) -> usize {
        i * self.h + j
    }

    fn b1(&self, j: usize) -> usize {
        self.d * self.h + j
    }

    fn w2(&self, j: usize, k: usize) -> usize {
        self.d * self.h + self.h + j * self.c + k
    }

    fn b2(&self, k: usize) -> usize {
        self.d * self.h + self.h + self.h * self.c + k
    }
}

/// Hidden pre-activations and logits for one input.
pub fn forward(s: Shape, p: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pre: Vec<f64> = (0..s.h).map(|j| p[s.b1(j)] + (0..s.d).map(|i| x[i] * p[s.w1(i, j)]).sum::<f64>()).collect();
    let logits = (0..s.c).map(|k| p[s.b2(k)] + (0..s.h).map(|j| pre[j].max(0.0) * p[s.w2(j, k)]).sum::<f64>()).collect();
    (pre, logits)
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

/// Mean cross-entropy plus both proximal penalties.
pub fn loss(s: Shape, p: &[f64], xs: &[Vec<f64>], ys: &[u8], a1: &[f64], a2: &[f64], mu1: f64, mu2: f64) -> f64 {
    let ce: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let (_, z) = forward(s, p, x);
            -softmax(&z)[y as usize].ln()
        })
        .sum::<f64>()
        / xs.len() as f64;
    let d1: f64 = p.iter().zip(a1).map(|(w, a)| (w - a) * (w - a)).sum();
    let d2: f64 = p.iter().zip(a2).map(|(w, a)| (w - a) * (w - a)).sum();
    ce + 0.5 * mu1 * d1 + 0.5 * mu2 * d2
}

/// Gradient of the mean cross-entropy alone, by straightforward backprop.
pub fn ce_grad(s: Shape, p: &[f64], xs: &[Vec<f64>], ys: &[u8]) -> Vec<f64> {
    let mut g = vec![0.0; s.len()];
    let n = xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys) {
        let (pre, z) = forward(s, p, x);
        let mut dz = softmax(&z);
        dz[y as usize] -= 1.0;
        for k in 0..s.c {
            g[s.b2(k)] += dz[k] / n;
            for j in 0..s.h {
                g[s.w2(j, k)] += pre[j].max(0.0) * dz[k] / n;
            }
        }
        for j in 0..s.h {
            if pre[j] <= 0.0 {
                continue;
            }
            let dh: f64 = (0..s.c).map(|k| p[s.w2(j, k)] * dz[k]).sum();
            g[s.b1(j)] += dh / n;
            for i in 0..s.d {
                g[s.w1(i, j)] += x[i] * dh / n;
            }
        }
    }
    g
}

/// Flat FedAvg over all agents: every agent starts from the global model,
/// runs `epochs` shuffled mini-batch SGD epochs, and the server averages by
/// shard size. Shuffles come from the same per-agent streams the simulator
/// uses so the two can be compared exactly.
#[allow(clippy::too_many_arguments)]
pub fn flat_fedavg_round(
    s: Shape,
    global: &[f64],
    shards: &[(usize, Vec<usize>)],
    features: &[Vec<f64>],
    labels: &[u8],
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
    round: u64,
) -> Vec<f64> {
    let total: usize = shards.iter().map(|(_, idx)| idx.len()).sum();
    let mut next = vec![0.0; global.len()];
    for (agent, idx) in shards {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[tag::TRAIN, round, 0, *agent as u64]));
        let mut w = global.to_vec();
        for _ in 0..epochs {
            let mut order = idx.clone();
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| features[i].clone()).collect();
                let ys: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
                let g = ce_grad(s, &w, &xs, &ys);
                for (wi, gi) in w.iter_mut().zip(&g) {
                    *wi -= lr * gi;
                }
            }
        }
        let weight = idx.len() as f64 / total as f64;
        for (n, wi) in next.iter_mut().zip(&w) {
            *n += weight * wi;
        }
    }
    next
}

/// Location of the MNIST IDX files, if present.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("H2FED_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}
