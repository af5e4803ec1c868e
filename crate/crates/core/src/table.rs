use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A dense real table indexed by `(state, action)`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

/// Policy parameters `θ(s, a)`.
pub type Logits = Table;

impl Table {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Table {
            n_states,
            n_actions,
            data: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_states * n_actions {
            return Err(invalid(format!(
                "table of shape {n_states}x{n_actions} needs {} entries, got {}",
                n_states * n_actions,
                data.len()
            )));
        }
        Ok(Table {
            n_states,
            n_actions,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(invalid("ragged rows"));
        }
        Self::from_vec(rows.len(), n_actions, rows.concat())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.data[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.data[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.data[s * self.n_actions + a] = v;
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &Table) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &Table) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_actions.max(1))
    }
}
