//! Discrete gradient operator, Gaussian measurement ensembles, and the
//! seeded randomness helpers shared by the experiment modules.
//!
//! All randomness is deterministic in the declared seeds: matrices and
//! vectors are generated with the ChaCha8 stream cipher and the ziggurat
//! normal sampler from `rand_distr`, filled in row-major order, so
//! identical (shape, seed) inputs give identical entries on every run.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinopError {
    #[error("ambient dimension must be at least 2, got {0}")]
    AmbientTooSmall(usize),
    #[error("need at least one measurement row, got {0}")]
    NoMeasurements(usize),
    #[error("dimension mismatch: expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Forward-difference gradient `D: R^n -> R^{n-1}` with von Neumann
/// boundary handling, `(Dx)_i = x_{i+1} - x_i`.
///
/// Applications are stencil-based and O(n); the dense matrix exists only
/// as a debug materialization for tests ([`GradientOperator::to_dense`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradientOperator {
    n: usize,
}

impl GradientOperator {
    pub fn new(n: usize) -> Result<Self, LinopError> {
        if n < 2 {
            return Err(LinopError::AmbientTooSmall(n));
        }
        Ok(Self { n })
    }

    /// Ambient dimension n.
    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    /// Dimension of the gradient domain, n - 1.
    pub fn range_dim(&self) -> usize {
        self.n - 1
    }

    /// Forward difference `Dx`; zero exactly when `x` is constant.
    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>, LinopError> {
        if x.len() != self.n {
            return Err(LinopError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let mut out = Array1::zeros(self.n - 1);
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Adjoint `D^T z`, the negative divergence with zero-flux ends.
    pub fn apply_adjoint(&self, z: ArrayView1<f64>) -> Result<Array1<f64>, LinopError> {
        if z.len() != self.n - 1 {
            return Err(LinopError::DimensionMismatch {
                expected: self.n - 1,
                got: z.len(),
            });
        }
        let mut out = Array1::zeros(self.n);
        self.apply_adjoint_into(z, &mut out);
        Ok(out)
    }

    /// In-place stencil application for hot loops. Panics on length
    /// mismatch; callers own the dimension contract.
    pub fn apply_into(&self, x: ArrayView1<f64>, out: &mut Array1<f64>) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n - 1);
        for i in 0..self.n - 1 {
            out[i] = x[i + 1] - x[i];
        }
    }

    /// In-place adjoint stencil. Panics on length mismatch.
    pub fn apply_adjoint_into(&self, z: ArrayView1<f64>, out: &mut Array1<f64>) {
        assert_eq!(z.len(), self.n - 1);
        assert_eq!(out.len(), self.n);
        out[0] = -z[0];
        for i in 1..self.n - 1 {
            out[i] = z[i - 1] - z[i];
        }
        out[self.n - 1] = z[self.n - 2];
    }

    /// Estimate of `||D||^2 = lambda_max(D D^T)` by power iteration with a
    /// fixed seeded start vector. The spectrum of `D D^T` lies in (0, 4),
    /// so the estimate is clamped there and a small safety factor is
    /// applied for use as a gradient Lipschitz constant.
    pub fn norm_sq_estimate(&self, iterations: usize) -> f64 {
        let k = self.n - 1;
        let mut w = sample_gaussian_vector(k, 0x9d5c_0feb_a11e_5eed);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 4.0;
        }
        w.mapv_inplace(|v| v / norm);
        let mut x = Array1::zeros(self.n);
        let mut w_next = Array1::zeros(k);
        let mut rayleigh = 0.0;
        for _ in 0..iterations {
            self.apply_adjoint_into(w.view(), &mut x);
            self.apply_into(x.view(), &mut w_next);
            rayleigh = w.dot(&w_next);
            let norm = w_next.dot(&w_next).sqrt();
            if norm == 0.0 {
                return 4.0;
            }
            w.assign(&w_next);
            w.mapv_inplace(|v| v / norm);
        }
        (rayleigh * 1.02).min(4.0)
    }

    /// Dense materialization, test support only.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n - 1, self.n));
        for i in 0..self.n - 1 {
            d[[i, i]] = -1.0;
            d[[i, i + 1]] = 1.0;
        }
        d
    }
}

/// A seeded m-by-n matrix of i.i.d. standard normal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnsemble {
    m: usize,
    n: usize,
    seed: u64,
    entries: Array2<f64>,
}

impl MeasurementEnsemble {
    /// Draw the ensemble. Entries are generated with ChaCha8 seeded by
    /// `seed` and the ziggurat normal sampler, in row-major order, so the
    /// result is fully determined by `(m, n, seed)`.
    pub fn sample(m: usize, n: usize, seed: u64) -> Result<Self, LinopError> {
        if m < 1 {
            return Err(LinopError::NoMeasurements(m));
        }
        if n < 2 {
            return Err(LinopError::AmbientTooSmall(n));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Array2::zeros((m, n));
        for r in 0..m {
            for c in 0..n {
                entries[[r, c]] = rng.sample(StandardNormal);
            }
        }
        Ok(Self { m, n, seed, entries })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.entries
    }

    /// `A x`.
    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>, LinopError> {
        if x.len() != self.n {
            return Err(LinopError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(self.entries.dot(&x))
    }

    /// `A^T w`.
    pub fn apply_transpose(&self, w: ArrayView1<f64>) -> Result<Array1<f64>, LinopError> {
        if w.len() != self.m {
            return Err(LinopError::DimensionMismatch {
                expected: self.m,
                got: w.len(),
            });
        }
        Ok(self.entries.t().dot(&w))
    }
}

/// SplitMix64 finalizer; the mixing step of the seed-derivation hash.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit seed derivation: folds `parts` into `master` through the
/// SplitMix64 finalizer, with the position index mixed in so permuted
/// part lists land on different seeds. Used for per-cell, per-trial, and
/// per-sample seeds; the scheme is part of the on-disk reproducibility
/// contract and must not change.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for (i, &p) in parts.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(p ^ ((i as u64).wrapping_add(1) << 56)));
    }
    h
}

/// Length-`len` vector of i.i.d. standard normals, deterministic in `seed`
/// (ChaCha8 + ziggurat, same generators as [`MeasurementEnsemble`]).
pub fn sample_gaussian_vector(len: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array1::zeros(len);
    for i in 0..len {
        out[i] = rng.sample(StandardNormal);
    }
    out
}
