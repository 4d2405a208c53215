//! Ring-buffer experience replay and bootstrap masks.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use crate::envs::{ActionVec, Observation};
use crate::numerics::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Observation,
    pub a: ActionVec,
    pub r: f64,
    pub s_next: Observation,
    /// Terminal transition; truncations are stored as non-terminal.
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    write_index: usize,
}

/// Rows of a sampled batch, in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub indices: Vec<usize>,
    pub s: Matrix,
    pub a: Matrix,
    pub r: Vec<f64>,
    pub s_next: Matrix,
    pub done: Vec<bool>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Builds a batch directly from transitions (indices are positional).
    pub fn from_transitions(rows: &[Transition]) -> Result<Self> {
        let s = Matrix::from_rows(&rows.iter().map(|t| t.s.as_slice()).collect::<Vec<_>>())?;
        let a = Matrix::from_rows(&rows.iter().map(|t| t.a.as_slice()).collect::<Vec<_>>())?;
        let s_next = Matrix::from_rows(&rows.iter().map(|t| t.s_next.as_slice()).collect::<Vec<_>>())?;
        Ok(Self {
            indices: (0..rows.len()).collect(),
            s,
            a,
            r: rows.iter().map(|t| t.r).collect(),
            s_next,
            done: rows.iter().map(|t| t.done).collect(),
        })
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, storage: Vec::with_capacity(capacity.min(1 << 20)), write_index: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn write_index(&self) -> usize {
        self.write_index
    }

    pub fn get(&self, idx: usize) -> Option<&Transition> {
        self.storage.get(idx)
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.write_index] = t;
        }
        self.write_index = (self.write_index + 1) % self.capacity;
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let size = self.storage.len();
        Ok((0..n).map(|_| rng.random_range(0..size)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Minibatch> {
        let indices = self.sample_indices(n, rng)?;
        let first = &self.storage[0];
        let (ds, da) = (first.s.len(), first.a.len());
        let mut s = Vec::with_capacity(n * ds);
        let mut a = Vec::with_capacity(n * da);
        let mut s_next = Vec::with_capacity(n * ds);
        let mut r = Vec::with_capacity(n);
        let mut done = Vec::with_capacity(n);
        for &i in &indices {
            let t = &self.storage[i];
            s.extend_from_slice(&t.s);
            a.extend_from_slice(&t.a);
            s_next.extend_from_slice(&t.s_next);
            r.push(t.r);
            done.push(t.done);
        }
        Ok(Minibatch {
            indices,
            s: Matrix::from_vec(n, ds, s)?,
            a: Matrix::from_vec(n, da, a)?,
            r,
            s_next: Matrix::from_vec(n, ds, s_next)?,
            done,
        })
    }
}

/// `n x K` matrix of bootstrap inclusion bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BootstrapMask {
    pub n: usize,
    pub k: usize,
    pub bits: Vec<bool>,
}

impl BootstrapMask {
    pub fn ones(n: usize, k: usize) -> Self {
        Self { n, k, bits: vec![true; n * k] }
    }

    pub fn get(&self, i: usize, k: usize) -> bool {
        self.bits[i * self.k + k]
    }

    pub fn set(&mut self, i: usize, k: usize, v: bool) {
        self.bits[i * self.k + k] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.k..(i + 1) * self.k]
    }

    pub fn fraction_set(&self) -> f64 {
        self.bits.iter().filter(|b| **b).count() as f64 / self.bits.len() as f64
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }
}

/// i.i.d. `Bernoulli(1 - kappa)` bits.
pub fn draw_mask<R: Rng + ?Sized>(n: usize, k: usize, kappa: f64, rng: &mut R) -> Result<BootstrapMask> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::invalid(format!("bootstrap rate {kappa} outside (0, 1)")));
    }
    let keep = 1.0 - kappa;
    Ok(BootstrapMask { n, k, bits: (0..n * k).map(|_| rng.random_bool(keep)).collect() })
}
