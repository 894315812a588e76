//! Independent oracles used by the integration and acceptance tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest dimension the closed-form oracle accepts.
pub const MAX_ORACLE_DIM: usize = 8;

/// `f(x) = x' A x + b' x + c` with `A` symmetric.
#[derive(Clone, Debug)]
pub struct ClosedFormProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl ClosedFormProblem {
    pub fn quadratic(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self, String> {
        let n = b.len();
        if n == 0 || n > MAX_ORACLE_DIM {
            return Err(format!("oracle dimension {n} outside 1..={MAX_ORACLE_DIM}"));
        }
        if a.shape() != (n, n) {
            return Err("A and b disagree in dimension".into());
        }
        if (&a - a.transpose()).amax() > 0.0 {
            return Err("A must be symmetric".into());
        }
        Ok(ClosedFormProblem { a, b, c })
    }

    pub fn linear(b: DVector<f64>, c: f64) -> Result<Self, String> {
        let n = b.len();
        Self::quadratic(DMatrix::zeros(n, n), b, c)
    }

    pub fn constant(dim: usize, c: f64) -> Result<Self, String> {
        Self::linear(DVector::zeros(dim), c)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        (x.transpose() * &self.a * &x)[(0, 0)] + self.b.dot(&x) + self.c
    }

    /// Gaussian-smoothed cost and its gradient for `x ~ N(mu, sigma_r^2 cov)`:
    /// `f'(mu) = mu'A mu + b'mu + c + sigma_r^2 tr(A cov)`, `grad = 2 A mu + b`.
    pub fn smoothed(&self, mu: &[f64], sigma_r: f64, cov: &DMatrix<f64>) -> Result<(f64, Vec<f64>), String> {
        if mu.len() != self.dim() || cov.shape() != (self.dim(), self.dim()) {
            return Err("dimension mismatch".into());
        }
        let trace = (&self.a * cov).trace();
        let m = DVector::from_column_slice(mu);
        let grad = 2.0 * &self.a * &m + &self.b;
        Ok((self.value(mu) + sigma_r * sigma_r * trace, grad.iter().copied().collect()))
    }
}

/// In-grid pixels of every brush placement whose centre lies strictly inside the grid.
/// Geometry is computed from pixel-centre distances, independently of the library's brush.
pub fn oracle_placements(rows: usize, cols: usize, diameter: usize) -> Vec<Vec<usize>> {
    let radius2 = (diameter as f64 / 2.0).powi(2);
    let mut centres = Vec::new();
    if diameter % 2 == 1 {
        for r in 0..rows {
            for c in 0..cols {
                centres.push((r as f64 + 0.5, c as f64 + 0.5));
            }
        }
    } else {
        for r in 1..rows {
            for c in 1..cols {
                centres.push((r as f64, c as f64));
            }
        }
    }
    centres
        .into_iter()
        .map(|(y, x)| {
            let mut disk = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let (dy, dx) = (r as f64 + 0.5 - y, c as f64 + 0.5 - x);
                    if dy * dy + dx * dx <= radius2 + 1e-9 {
                        disk.push(r * cols + c);
                    }
                }
            }
            disk
        })
        .filter(|d| !d.is_empty())
        .collect()
}

/// Opening of one phase: union of the placements lying entirely in that phase.
fn opening(pixels: &[u8], phase: u8, placements: &[Vec<usize>]) -> Vec<bool> {
    let mut out = vec![false; pixels.len()];
    for disk in placements {
        if disk.iter().all(|&p| pixels[p] == phase) {
            for &p in disk {
                out[p] = true;
            }
        }
    }
    out
}

/// Feasibility by morphological opening of both phases.
pub fn oracle_feasible(pixels: &[u8], rows: usize, cols: usize, diameter: usize) -> bool {
    oracle_feasible_with(pixels, &oracle_placements(rows, cols, diameter))
}

/// [`oracle_feasible`] with precomputed placements.
pub fn oracle_feasible_with(pixels: &[u8], placements: &[Vec<usize>]) -> bool {
    let solid = opening(pixels, 1, placements);
    let void = opening(pixels, 0, placements);
    pixels.iter().enumerate().all(|(i, &p)| if p == 1 { solid[i] } else { void[i] })
}

/// Every feasible binary design of a small grid, as row-major pixel vectors.
pub fn brute_feasible_enumerate(rows: usize, cols: usize, diameter: usize) -> Result<BTreeSet<Vec<u8>>, String> {
    let n = rows * cols;
    if n == 0 || rows > 4 || cols > 4 {
        return Err(format!("grid {rows}x{cols} is too large for enumeration (limit 4x4)"));
    }
    let placements = oracle_placements(rows, cols, diameter);
    let mut set = BTreeSet::new();
    for bits in 0u32..(1 << n) {
        let pixels: Vec<u8> = (0..n).map(|i| ((bits >> i) & 1) as u8).collect();
        if oracle_feasible_with(&pixels, &placements) {
            set.insert(pixels);
        }
    }
    Ok(set)
}

pub fn uniform_field(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Sample mean and its standard error.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
