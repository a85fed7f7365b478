use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tape::Mat;
use crate::PiomError;

/// One named tensor with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Mat,
    pub grad: Mat,
}

/// All weights of the network, in a fixed creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PiomParams {
    pub params: Vec<Param>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// N(0, 1/fan_in) with fan_in = rows.
    FanIn,
    Normal(f64),
}

/// Serialized form: name, shape and row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub(crate) struct ParamBuilder {
    rng: ChaCha8Rng,
    pub params: PiomParams,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), params: PiomParams::default() }
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> usize {
        let n = rows * cols;
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn => {
                let d = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("valid std");
                (0..n).map(|_| d.sample(&mut self.rng)).collect()
            }
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| d.sample(&mut self.rng)).collect()
            }
        };
        self.params.params.push(Param { name: name.into(), value: Mat::from_vec(rows, cols, data), grad: Mat::zeros(rows, cols) });
        self.params.params.len() - 1
    }
}

impl PiomParams {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.data.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Flat view `(param, element)` of scalar index `k`.
    pub fn locate(&self, mut k: usize) -> Option<(usize, usize)> {
        for (i, p) in self.params.iter().enumerate() {
            if k < p.value.data.len() {
                return Some((i, k));
            }
            k -= p.value.data.len();
        }
        None
    }

    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.params
            .iter()
            .map(|p| TensorRecord { name: p.name.clone(), rows: p.value.rows, cols: p.value.cols, data: p.value.data.clone() })
            .collect()
    }

    /// Loads values from `records`, which must match this layout by name and shape.
    pub fn load_records(&mut self, records: &[TensorRecord]) -> Result<(), PiomError> {
        if records.len() != self.params.len() {
            return Err(PiomError::Checkpoint(format!("expected {} tensors, found {}", self.params.len(), records.len())));
        }
        for (p, r) in self.params.iter_mut().zip(records) {
            if p.name != r.name || p.value.rows != r.rows || p.value.cols != r.cols || r.data.len() != r.rows * r.cols {
                return Err(PiomError::Checkpoint(format!("tensor '{}' does not match '{}' {}×{}", r.name, p.name, p.value.rows, p.value.cols)));
            }
            p.value.data.clone_from(&r.data);
        }
        Ok(())
    }
}
