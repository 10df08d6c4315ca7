//! Synthetic datasets. Every generator is a pure function of `(n, seed)`.

use std::f64::consts::PI;

use neurode::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::config::{DataSpec, Task};

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    /// `[n]` regression targets.
    Values(Vec<f64>),
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[n×2]`.
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx`, targets included.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let inputs = self.inputs.select_rows(idx).expect("indices within range");
        let targets = match &self.targets {
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
            Targets::None => Targets::None,
        };
        Dataset { inputs, targets }
    }
}

/// `n` examples for `task`. Train and test splits use different seeds.
pub fn generate(task: Task, n: usize, seed: u64, spec: &DataSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = spec.noise(task);
    match task {
        Task::ClassifyMoons => moons(n, noise, &mut rng),
        Task::ClassifyCircles => circles(n, noise, 0.5, &mut rng),
        Task::DensityGaussians => eight_gaussians(n, noise, &mut rng),
        Task::OscillatorRegression => oscillator(n, spec.horizon(), &mut rng),
    }
}

fn jitter<R: Rng>(v: f64, noise: f64, rng: &mut R) -> f64 {
    if noise == 0.0 {
        return v;
    }
    v + noise * Distribution::<f64>::sample(&StandardNormal, rng)
}

/// Two interleaved half circles, centred near the origin.
pub fn moons<R: Rng>(n: usize, noise: f64, rng: &mut R) -> Dataset {
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let t = rng.random_range(0.0..PI);
        let (x, y) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        data.push(jitter(x - 0.5, noise, rng));
        data.push(jitter(y - 0.25, noise, rng));
        labels.push(label);
    }
    Dataset {
        inputs: Tensor::matrix(n, 2, data).expect("n×2"),
        targets: Targets::Labels(labels),
    }
}

/// Concentric circles; label 1 is the inner circle of radius `factor`.
pub fn circles<R: Rng>(n: usize, noise: f64, factor: f64, rng: &mut R) -> Dataset {
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let r = if label == 0 { 1.0 } else { factor };
        let t = rng.random_range(0.0..2.0 * PI);
        data.push(jitter(r * t.cos(), noise, rng));
        data.push(jitter(r * t.sin(), noise, rng));
        labels.push(label);
    }
    Dataset {
        inputs: Tensor::matrix(n, 2, data).expect("n×2"),
        targets: Targets::Labels(labels),
    }
}

/// Mixture of eight Gaussians with standard deviation `std`, centred on a ring of radius 2.
pub fn eight_gaussians<R: Rng>(n: usize, std: f64, rng: &mut R) -> Dataset {
    let normal = Normal::new(0.0, std.max(f64::MIN_POSITIVE)).expect("positive std");
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let k = rng.random_range(0..8);
        let angle = f64::from(k) * PI / 4.0;
        data.push(2.0 * angle.cos() + normal.sample(rng));
        data.push(2.0 * angle.sin() + normal.sample(rng));
    }
    Dataset {
        inputs: Tensor::matrix(n, 2, data).expect("n×2"),
        targets: Targets::None,
    }
}

/// Harmonic oscillator `q̈ = −q`: `(q0, v0)` uniform on `[−1, 1]²`, target `q(T)`.
pub fn oscillator<R: Rng>(n: usize, horizon: f64, rng: &mut R) -> Dataset {
    let mut data = Vec::with_capacity(2 * n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let q0 = rng.random_range(-1.0..1.0);
        let v0 = rng.random_range(-1.0..1.0);
        data.push(q0);
        data.push(v0);
        targets.push(oscillator_position(q0, v0, horizon));
    }
    Dataset {
        inputs: Tensor::matrix(n, 2, data).expect("n×2"),
        targets: Targets::Values(targets),
    }
}

pub fn oscillator_position(q0: f64, v0: f64, t: f64) -> f64 {
    t.cos() * q0 + t.sin() * v0
}
