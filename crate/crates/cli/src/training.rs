//! Toy federated learning tasks: synthetic per-client datasets, local
//! training, and the plaintext FedAvg oracle the encrypted path is
//! checked against. Everything is deterministic given (task, client).

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};

use ppa_afl_core::encoding::ModelVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Every client holds noisy copies of a hidden vector; local training
    /// is the one-shot sample mean.
    MeanEstimation,
    /// Rows (x, θ*·x + noise); local training is gradient descent from
    /// the served global model.
    LinearRegression,
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_estimation" => Ok(Self::MeanEstimation),
            "linear_regression" => Ok(Self::LinearRegression),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MeanEstimation => "mean_estimation",
            Self::LinearRegression => "linear_regression",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub model_len: usize,
    pub num_clients: usize,
    pub samples_per_client: usize,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum LocalDataset {
    Mean { samples: Vec<Vec<f64>> },
    Regression { rows: Vec<(Vec<f64>, f64)> },
}

#[derive(Debug, Clone, Copy)]
pub struct Hyperparams {
    pub epochs: u64,
    pub learning_rate: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { epochs: 5, learning_rate: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainingError {
    EmptyInput,
    LengthMismatch,
}

impl fmt::Display for TrainingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyInput => write!(f, "no models to average"),
            Self::LengthMismatch => write!(f, "model lengths differ"),
        }
    }
}

impl std::error::Error for TrainingError {}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Independent RNG stream derived from (seed, label, index); keeps one
/// client's draws stable no matter how many others exist.
pub fn derive_rng(seed: u64, label: u64, index: u64) -> ChaCha20Rng {
    let mut state = [0u8; 32];
    let mut word = splitmix64(seed ^ splitmix64(label) ^ splitmix64(index.wrapping_mul(0xa5a5)));
    for chunk in state.chunks_mut(8) {
        word = splitmix64(word);
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha20Rng::from_seed(state)
}

/// Stable 64-bit digest of a client identifier (FNV-1a), used to map
/// free-form ids onto dataset streams.
pub fn client_index_of_id(client_id: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in client_id.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl SyntheticTask {
    /// The hidden parameter vector θ*, uniform in [-1, 1]^m.
    pub fn hidden_parameters(&self) -> Vec<f64> {
        let mut rng = derive_rng(self.seed, 0x7468657461, 0); // "theta"
        let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        (0..self.model_len).map(|_| dist.sample(&mut rng)).collect()
    }

    /// The dataset held by one client. Deterministic per (task, client).
    pub fn client_data(&self, client_index: u64) -> LocalDataset {
        let theta = self.hidden_parameters();
        let mut rng = derive_rng(self.seed, 0x64617461, client_index); // "data"
        let noise = Normal::new(0.0, self.noise_std.max(0.0)).expect("valid std");
        match self.kind {
            TaskKind::MeanEstimation => {
                let samples = (0..self.samples_per_client)
                    .map(|_| theta.iter().map(|t| t + noise.sample(&mut rng)).collect())
                    .collect();
                LocalDataset::Mean { samples }
            }
            TaskKind::LinearRegression => {
                let xdist = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
                let rows = (0..self.samples_per_client)
                    .map(|_| {
                        let x: Vec<f64> =
                            (0..self.model_len).map(|_| xdist.sample(&mut rng)).collect();
                        let y: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>()
                            + noise.sample(&mut rng);
                        (x, y)
                    })
                    .collect();
                LocalDataset::Regression { rows }
            }
        }
    }
}

/// Local training. Mean estimation returns the sample mean (one-shot,
/// global model unused); regression runs `epochs` passes of full-batch
/// gradient descent on the squared error from the served global model.
pub fn local_train(
    global_model: &ModelVector,
    dataset: &LocalDataset,
    hp: &Hyperparams,
) -> ModelVector {
    match dataset {
        LocalDataset::Mean { samples } => {
            if samples.is_empty() {
                return global_model.clone();
            }
            let m = samples[0].len();
            let mut mean = vec![0.0; m];
            for sample in samples {
                for (acc, v) in mean.iter_mut().zip(sample) {
                    *acc += v;
                }
            }
            for acc in &mut mean {
                *acc /= samples.len() as f64;
            }
            ModelVector::new(mean)
        }
        LocalDataset::Regression { rows } => {
            let mut theta = global_model.values().to_vec();
            if rows.is_empty() {
                return ModelVector::new(theta);
            }
            let n = rows.len() as f64;
            for _ in 0..hp.epochs {
                let mut gradient = vec![0.0; theta.len()];
                for (x, y) in rows {
                    let prediction: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
                    let residual = prediction - y;
                    for (g, xi) in gradient.iter_mut().zip(x) {
                        *g += 2.0 * residual * xi / n;
                    }
                }
                for (t, g) in theta.iter_mut().zip(&gradient) {
                    *t -= hp.learning_rate * g;
                }
            }
            ModelVector::new(theta)
        }
    }
}

/// Coordinate-wise arithmetic mean over the reals: the aggregation the
/// encrypted path must reproduce.
pub fn fedavg_oracle(models: &[ModelVector]) -> Result<ModelVector, TrainingError> {
    let first = models.first().ok_or(TrainingError::EmptyInput)?;
    let m = first.len();
    if models.iter().any(|v| v.len() != m) {
        return Err(TrainingError::LengthMismatch);
    }
    let mut mean = vec![0.0; m];
    for model in models {
        for (acc, v) in mean.iter_mut().zip(model.values()) {
            *acc += v;
        }
    }
    for acc in &mut mean {
        *acc /= models.len() as f64;
    }
    Ok(ModelVector::new(mean))
}
