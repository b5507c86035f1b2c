//! Storage for discretized processes: one flat vector per time level,
//! holding a `dim`-vector for every scenario at that level.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Process {
    dim: usize,
    levels: Vec<Vec<f64>>,
}

impl Process {
    /// Zero process with `sizes[j]` scenarios at level `j`.
    pub fn zeros(dim: usize, sizes: &[usize]) -> Self {
        Self {
            dim,
            levels: sizes.iter().map(|s| vec![0.0; s * dim]).collect(),
        }
    }

    pub fn from_levels(dim: usize, levels: Vec<Vec<f64>>) -> Self {
        debug_assert!(dim == 0 || levels.iter().all(|l| l.len() % dim == 0));
        Self { dim, levels }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn scenarios(&self, j: usize) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.levels[j].len() / self.dim
        }
    }

    pub fn level(&self, j: usize) -> &[f64] {
        &self.levels[j]
    }

    pub fn level_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.levels[j]
    }

    pub fn set_level(&mut self, j: usize, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.levels[j].len());
        self.levels[j] = values;
    }

    pub fn at(&self, j: usize, s: usize) -> &[f64] {
        &self.levels[j][s * self.dim..(s + 1) * self.dim]
    }

    pub fn at_mut(&mut self, j: usize, s: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.levels[j][s * d..(s + 1) * d]
    }

    pub fn all_finite(&self) -> bool {
        self.levels.iter().flatten().all(|v| v.is_finite())
    }

    /// Same level count and level lengths.
    pub fn same_shape(&self, other: &Process) -> bool {
        self.dim == other.dim
            && self.levels.len() == other.levels.len()
            && self.levels.iter().zip(&other.levels).all(|(a, b)| a.len() == b.len())
    }

    pub fn check_shape(&self, other: &Process, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Mismatch(format!("{what}: processes have different shapes")))
        }
    }

    /// `self ← θ·new + (1 - θ)·self`.
    pub fn blend(&mut self, new: &Process, theta: f64) {
        for (a, b) in self.levels.iter_mut().zip(&new.levels) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = theta * y + (1.0 - theta) * *x;
            }
        }
    }

    /// Per level, `E|self - other|²` under the scenario weights of that level.
    pub fn mean_square_diff(&self, other: &Process, weights: impl Fn(usize) -> Vec<f64>) -> Vec<f64> {
        (0..self.levels.len())
            .map(|j| {
                let w = weights(j);
                let a = &self.levels[j];
                let b = &other.levels[j];
                w.iter()
                    .enumerate()
                    .map(|(s, ws)| {
                        let d = self.dim;
                        ws * (0..d).map(|c| (a[s * d + c] - b[s * d + c]).powi(2)).sum::<f64>()
                    })
                    .sum()
            })
            .collect()
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.levels.iter_mut().flatten() {
            *v *= c;
        }
    }

    pub fn max_abs_diff(&self, other: &Process) -> f64 {
        self.levels
            .iter()
            .flatten()
            .zip(other.levels.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Builds one level of `scenarios` entries of width `dim`, filling each
/// scenario's slot in parallel.
pub fn fill_level<F>(scenarios: usize, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let mut out = vec![0.0; scenarios * dim];
    if dim > 0 {
        use rayon::prelude::*;
        out.par_chunks_mut(dim).enumerate().for_each(|(s, slot)| f(s, slot));
    }
    out
}

/// First scenario whose slot holds a non-finite value.
pub fn first_non_finite(level: &[f64], dim: usize) -> Option<usize> {
    level.iter().position(|v| !v.is_finite()).map(|i| i / dim.max(1))
}
