//! Plain data containers for states, parameters, and observations.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major matrix of state vectors: one row per particle (or, for a stored
/// trajectory, one row per time step), `dim` entries per row.
///
/// A dedicated type instead of a general matrix because the access pattern is
/// always whole rows and the layout must stay contiguous for cache-friendly
/// filter sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMat {
    dim: usize,
    data: Vec<f64>,
}

impl StateMat {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        assert!(dim > 0, "state dimension must be positive");
        StateMat {
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| Error::InvalidInput("state matrix needs at least one row".into()))?;
        if dim == 0 {
            return Err(Error::InvalidInput("state rows must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::InvalidInput("ragged state rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(StateMat { dim, data })
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "row has wrong dimension");
        self.data.extend_from_slice(row);
    }

    /// Heap footprint estimate used by the memory instrumentation.
    pub fn approx_bytes(&self) -> usize {
        std::mem::size_of::<Self>() + self.data.len() * std::mem::size_of::<f64>()
    }
}

/// A parameter vector. Thin wrapper so parameter and state vectors cannot be
/// mixed up at call sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta(Vec<f64>);

impl Theta {
    pub fn new(values: Vec<f64>) -> Self {
        Theta(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl std::ops::Index<usize> for Theta {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Scalar observation series y_0..y_T. Construction validates finiteness so
/// the hot loops never re-check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset(Vec<f64>);

impl Dataset {
    pub fn new(obs: Vec<f64>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::InvalidInput("dataset must contain at least one observation".into()));
        }
        if let Some(i) = obs.iter().position(|y| !y.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite observation at index {i}"
            )));
        }
        Ok(Dataset(obs))
    }

    pub fn obs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least one observation
    }

    /// Index of the last observation (the series covers times 0..=t_max).
    pub fn t_max(&self) -> usize {
        self.0.len() - 1
    }
}
