//! Dense time-indexed tables stored row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Problem dimensions shared by every table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        Self {
            num_states,
            num_actions,
            horizon,
        }
    }

    pub fn check_positive(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 || self.horizon == 0 {
            return Err(Error::invalid(
                "dimensions",
                format!(
                    "states={}, actions={}, horizon={} must all be positive",
                    self.num_states, self.num_actions, self.horizon
                ),
            ));
        }
        Ok(())
    }

    pub fn action_cells(&self) -> usize {
        self.horizon * self.num_states * self.num_actions
    }
}

/// A real value per (t, s, a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTable {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl ActionTable {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.action_cells()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.action_cells() {
            return Err(Error::Shape(format!(
                "expected {} entries for (t,s,a) table, got {}",
                dims.action_cells(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    #[inline]
    fn offset(&self, t: usize, s: usize) -> usize {
        (t * self.dims.num_states + s) * self.dims.num_actions
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize, a: usize) -> f64 {
        self.data[self.offset(t, s) + a]
    }

    #[inline]
    pub fn set(&mut self, t: usize, s: usize, a: usize, value: f64) {
        let i = self.offset(t, s) + a;
        self.data[i] = value;
    }

    #[inline]
    pub fn row(&self, t: usize, s: usize) -> &[f64] {
        let i = self.offset(t, s);
        &self.data[i..i + self.dims.num_actions]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize, s: usize) -> &mut [f64] {
        let i = self.offset(t, s);
        let n = self.dims.num_actions;
        &mut self.data[i..i + n]
    }

    pub fn max_abs_diff(&self, other: &ActionTable) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }
}

/// A real value per (t, s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTable {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl StateTable {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.horizon * dims.num_states],
        }
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.data[t * self.dims.num_states + s]
    }

    #[inline]
    pub fn set(&mut self, t: usize, s: usize, value: f64) {
        self.data[t * self.dims.num_states + s] = value;
    }

    #[inline]
    pub fn step(&self, t: usize) -> &[f64] {
        let n = self.dims.num_states;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn max_abs_diff(&self, other: &StateTable) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
