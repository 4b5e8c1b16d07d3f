//! Counter-based random streams.
//!
//! Every draw in the crate comes from a ChaCha8 generator keyed by
//! `(root seed, scenario id)` and positioned on a stream derived from the
//! trial index and a fixed purpose tag. Two trials never share a stream, and
//! the data of a trial does not depend on how many numbers the network
//! initialisation or the target noise consumed.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

/// What a sub-stream is used for within one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Data = 0,
    Target = 1,
    Weights = 2,
    Mu = 3,
    InputNoise = 4,
    Aux = 5,
}

const PURPOSES: u64 = 8;

/// Generator for `(root, scenario, trial, purpose)`.
pub fn stream(root: u64, scenario: u64, trial: u64, purpose: Purpose) -> SimRng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&root.to_le_bytes());
    seed[8..16].copy_from_slice(&scenario.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(trial.wrapping_mul(PURPOSES).wrapping_add(purpose as u64));
    rng
}

/// The full set of sub-streams for one trial.
#[derive(Clone, Debug)]
pub struct TrialStreams {
    pub root: u64,
    pub scenario: u64,
    pub trial: u64,
}

impl TrialStreams {
    pub fn new(root: u64, scenario: u64, trial: u64) -> Self {
        Self { root, scenario, trial }
    }

    pub fn get(&self, purpose: Purpose) -> SimRng {
        stream(self.root, self.scenario, self.trial, purpose)
    }
}

pub fn normal_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.sample(StandardNormal))
}

pub fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Uniform draw from the unit sphere `S^{d-1}`.
pub fn unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let v = normal_vector(d, rng);
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// Independent uniform signs.
pub fn rademacher<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || if rng.gen::<bool>() { 1.0 } else { -1.0 })
}
