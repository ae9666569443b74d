//! Deterministic random streams.
//!
//! Every random quantity in an experiment is drawn from a stream identified
//! by a path of integers below a 64-bit master seed, e.g. `(seed, n, trial,
//! restart)`. The path is folded into a ChaCha8 stream id, so any single
//! trial can be replayed without generating the ones before it, and results
//! do not depend on how work is scheduled across threads.
//!
//! Gaussian variates use the Box–Muller transform on the ChaCha uniform
//! output; both are fully specified algorithms, so replays are bit-stable
//! for a given libm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifies one random stream: a master seed plus a derivation path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamId {
    pub master_seed: u64,
    pub path: Vec<u64>,
}

impl StreamId {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed, path: Vec::new() }
    }

    pub fn child(&self, id: u64) -> Self {
        let mut path = self.path.clone();
        path.push(id);
        Self { master_seed: self.master_seed, path }
    }

    fn stream_word(&self) -> u64 {
        self.path.iter().fold(0x6d72_615f_6c61_6221, |h, &x| splitmix64(h ^ splitmix64(x)))
    }

    pub fn rng(&self) -> RngStream {
        let mut inner = ChaCha8Rng::seed_from_u64(self.master_seed);
        inner.set_stream(self.stream_word());
        RngStream { id: self.clone(), inner, spare: None }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct RngStream {
    id: StreamId,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn id(&self) -> &StreamId {
        &self.id
    }

    /// Stream for a sub-task; independent of how much of `self` was consumed.
    pub fn derive(&self, id: u64) -> RngStream {
        self.id.child(id).rng()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Standard normal variate (Box–Muller, second value cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.normal();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_is_identical() {
        let a: Vec<f64> = {
            let mut r = StreamId::new(7).child(3).rng();
            (0..10).map(|_| r.normal()).collect()
        };
        let b: Vec<f64> = {
            let mut r = StreamId::new(7).child(3).rng();
            (0..10).map(|_| r.normal()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn children_differ() {
        let mut a = StreamId::new(7).child(3).rng();
        let mut b = StreamId::new(7).child(4).rng();
        let mut c = StreamId::new(8).child(3).rng();
        let x = a.uniform();
        assert_ne!(x, b.uniform());
        assert_ne!(x, c.uniform());
    }

    #[test]
    fn derive_ignores_parent_consumption() {
        let mut parent = StreamId::new(1).rng();
        let before = parent.derive(5).uniform();
        parent.uniform();
        assert_eq!(before, parent.derive(5).uniform());
    }

    #[test]
    fn normal_moments() {
        let mut r = StreamId::new(42).rng();
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let kurt = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 5.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt());
        assert!((kurt - 3.0).abs() < 5.0 * (96.0 / n as f64).sqrt());
    }
}
