//! Keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose key is the tuple
//! `(base_seed, replication, component)`, so any replication's draws can be
//! reproduced without touching the others, regardless of scheduling.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::inference::normal_quantile;

/// Random components of one replication, in their fixed child order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Component {
    Alpha = 0,
    ChiSquare = 1,
    Epsilon = 2,
    Eta = 3,
}

pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(base_seed: u64, replication: u64, component: Component) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&base_seed.to_le_bytes());
        key[8..16].copy_from_slice(&replication.to_le_bytes());
        key[16..24].copy_from_slice(&(component as u64).to_le_bytes());
        Self {
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Uniform on the open interval (0, 1), on a 2^-53 grid.
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion.
    pub fn normal(&mut self) -> f64 {
        normal_quantile(self.uniform()).expect("uniform draw lies in (0, 1)")
    }
}
