//! Latent-to-reward field chain: bound map, Gaussian filter, tanh projection.
//!
//! The forward pass runs `params -> latent -> expand -> filter -> project`; the backward
//! pass applies the analytic adjoints in reverse order.

use crate::error::{Error, Result};
use crate::grid::{expand_symmetric, reduce_symmetric, DesignGrid};

/// Maps unbounded dummy variables to latent densities in (-1, 1).
///
/// Returns the latent values and the diagonal Jacobian `2 s (1 - s)` with `s` the logistic
/// sigmoid of each entry.
pub fn bound_map(zeta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    zeta.iter()
        .map(|&z| {
            let s = logistic(z);
            (2.0 * s - 1.0, 2.0 * s * (1.0 - s))
        })
        .unzip()
}

/// Inverse of [`bound_map`] for latent values strictly inside (-1, 1).
pub fn unbound_map(latent: &[f64]) -> Vec<f64> {
    latent
        .iter()
        .map(|&x| {
            let s = 0.5 * (x + 1.0);
            (s / (1.0 - s)).ln()
        })
        .collect()
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Separable Gaussian filter with per-pixel renormalisation at the grid boundary.
///
/// The kernel is truncated at four standard deviations. Outside the grid the field is
/// treated as absent rather than zero, so each output is a convex combination of in-grid
/// inputs.
#[derive(Clone, Debug)]
pub struct GaussianFilter {
    rows: usize,
    cols: usize,
    sigma: f64,
    taps: Vec<f64>,
    row_norm: Vec<f64>,
    col_norm: Vec<f64>,
}

impl GaussianFilter {
    pub fn new(rows: usize, cols: usize, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::param(format!("filter sigma must be positive, got {sigma}")));
        }
        let radius = (4.0 * sigma).ceil() as usize;
        let taps: Vec<f64> = (0..=radius)
            .map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|i| {
                    let lo = i.saturating_sub(radius);
                    let hi = (i + radius).min(len - 1);
                    (lo..=hi).map(|j| taps[i.abs_diff(j)]).sum()
                })
                .collect()
        };
        Ok(GaussianFilter {
            rows,
            cols,
            sigma,
            row_norm: norm(rows),
            col_norm: norm(cols),
            taps,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Weight of the centre tap of the 2-D kernel at an interior pixel.
    pub fn centre_weight(&self) -> f64 {
        let total: f64 = self.taps[0] + 2.0 * self.taps[1..].iter().sum::<f64>();
        1.0 / (total * total)
    }

    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        Error::check_len(self.rows * self.cols, field.len())?;
        let along_cols = self.pass(field, Axis::Cols, Some(&self.col_norm), None);
        Ok(self.pass(&along_cols, Axis::Rows, Some(&self.row_norm), None))
    }

    /// Transpose of [`GaussianFilter::apply`].
    pub fn apply_transpose(&self, field: &[f64]) -> Result<Vec<f64>> {
        Error::check_len(self.rows * self.cols, field.len())?;
        let along_rows = self.pass(field, Axis::Rows, None, Some(&self.row_norm));
        Ok(self.pass(&along_rows, Axis::Cols, None, Some(&self.col_norm)))
    }

    // One 1-D convolution along `axis`. `post` divides outputs by the boundary weight
    // (forward); `pre` divides inputs by it (transpose).
    fn pass(&self, input: &[f64], axis: Axis, post: Option<&[f64]>, pre: Option<&[f64]>) -> Vec<f64> {
        let (rows, cols) = (self.rows, self.cols);
        let radius = self.taps.len() - 1;
        let mut out = vec![0.0; input.len()];
        let len = match axis {
            Axis::Rows => rows,
            Axis::Cols => cols,
        };
        let at = |line: usize, k: usize| match axis {
            Axis::Rows => k * cols + line,
            Axis::Cols => line * cols + k,
        };
        let lines = match axis {
            Axis::Rows => cols,
            Axis::Cols => rows,
        };
        let mut buf = vec![0.0; len];
        for line in 0..lines {
            for (k, b) in buf.iter_mut().enumerate() {
                let v = input[at(line, k)];
                *b = match pre {
                    Some(w) => v / w[k],
                    None => v,
                };
            }
            for i in 0..len {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(len - 1);
                let mut acc = 0.0;
                for (j, b) in buf.iter().enumerate().take(hi + 1).skip(lo) {
                    acc += self.taps[i.abs_diff(j)] * b;
                }
                out[at(line, i)] = match post {
                    Some(w) => acc / w[i],
                    None => acc,
                };
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Axis {
    Rows,
    Cols,
}

/// Elementwise `tanh(beta x) / tanh(beta)` and its derivative.
pub fn tanh_project(field: &[f64], beta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::param(format!("projection strength must be positive, got {beta}")));
    }
    let norm = beta.tanh();
    Ok(field
        .iter()
        .map(|&x| {
            let t = (beta * x).tanh();
            (t / norm, beta * (1.0 - t * t) / norm)
        })
        .unzip())
}

/// How optimizer parameters become latent densities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentMap {
    /// Parameters are unbounded dummy variables passed through [`bound_map`].
    Dummy,
    /// Parameters are the latent densities themselves (box-constrained by the optimizer).
    Direct,
}

#[derive(Clone, Debug)]
pub struct FieldChain {
    grid: DesignGrid,
    filter: GaussianFilter,
    beta: f64,
    latent_map: LatentMap,
}

/// Intermediate values from [`FieldChain::forward`], needed by the backward pass.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub latent: Vec<f64>,
    pub reward: Vec<f64>,
    bound_jacobian: Option<Vec<f64>>,
    projection_slope: Vec<f64>,
}

impl FieldChain {
    pub fn new(grid: DesignGrid, filter_sigma: f64, beta: f64, latent_map: LatentMap) -> Result<Self> {
        let filter = GaussianFilter::new(grid.rows(), grid.cols(), filter_sigma)?;
        tanh_project(&[], beta)?;
        Ok(FieldChain { grid, filter, beta, latent_map })
    }

    pub fn grid(&self) -> &DesignGrid {
        &self.grid
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        tanh_project(&[], beta)?;
        self.beta = beta;
        Ok(())
    }

    pub fn forward(&self, params: &[f64]) -> Result<ChainState> {
        Error::check_len(self.grid.num_params(), params.len())?;
        let (latent, bound_jacobian) = match self.latent_map {
            LatentMap::Dummy => {
                let (l, j) = bound_map(params);
                (l, Some(j))
            }
            LatentMap::Direct => (params.to_vec(), None),
        };
        let full = expand_symmetric(&latent, &self.grid)?;
        let mut filtered = self.filter.apply(&full)?;
        // Filter sums run in different orders on mirrored pixels; pin them to equality.
        self.grid.symmetrize(&mut filtered);
        let (reward, projection_slope) = tanh_project(&filtered, self.beta)?;
        Ok(ChainState { latent, reward, bound_jacobian, projection_slope })
    }

    /// Pulls a gradient with respect to the full-grid reward back to the parameters.
    pub fn backward(&self, state: &ChainState, grad_reward: &[f64]) -> Result<Vec<f64>> {
        Error::check_len(self.grid.len(), grad_reward.len())?;
        let through_projection: Vec<f64> = grad_reward
            .iter()
            .zip(&state.projection_slope)
            .map(|(g, s)| g * s)
            .collect();
        let through_filter = self.filter.apply_transpose(&through_projection)?;
        let mut grad = reduce_symmetric(&through_filter, &self.grid)?;
        if let Some(jac) = &state.bound_jacobian {
            for (g, j) in grad.iter_mut().zip(jac) {
                *g *= j;
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Symmetry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_map_values() {
        let (l, j) = bound_map(&[0.0, 3f64.ln(), 800.0, -800.0]);
        assert_eq!(l[0], 0.0);
        assert_eq!(j[0], 0.5);
        assert!((l[1] - 0.5).abs() < 1e-15);
        assert_eq!(l[2], 1.0);
        assert_eq!(l[3], -1.0);
        let back = unbound_map(&[0.5, -0.25]);
        let (again, _) = bound_map(&back);
        assert!((again[0] - 0.5).abs() < 1e-14 && (again[1] + 0.25).abs() < 1e-14);
    }

    #[test]
    fn filter_preserves_constants_and_rejects_bad_sigma() {
        let f = GaussianFilter::new(6, 9, 1.7).unwrap();
        let out = f.apply(&[0.3; 54]).unwrap();
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-14));
        assert!(GaussianFilter::new(6, 9, 0.0).is_err());
        assert!(GaussianFilter::new(6, 9, -1.0).is_err());
    }

    #[test]
    fn impulse_response_matches_direct_kernel() {
        let n = 21;
        let f = GaussianFilter::new(n, n, 1.0).unwrap();
        let mut field = vec![0.0; n * n];
        field[10 * n + 10] = 1.0;
        let out = f.apply(&field).unwrap();
        // Direct 2-D evaluation of the truncated, normalised kernel.
        let g = |k: i32| (-(k * k) as f64 / 2.0).exp();
        let z: f64 = (-4..=4).map(g).sum();
        assert!((out[10 * n + 10] - 1.0 / (z * z)).abs() < 1e-15);
        assert!((f.centre_weight() - 1.0 / (z * z)).abs() < 1e-15);
        assert!((out[10 * n + 12] - g(2) / (z * z)).abs() < 1e-15);
        assert_eq!(out[10 * n + 15], 0.0);
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = GaussianFilter::new(7, 11, 1.3).unwrap();
        let x: Vec<f64> = (0..77).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..77).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = f.apply(&x).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(f.apply_transpose(&y).unwrap()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn projection_values() {
        let (p, _) = tanh_project(&[0.0, 1.0, -1.0, 0.25], 8.0).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 1.0).abs() < 1e-15);
        assert!((p[2] + 1.0).abs() < 1e-15);
        assert!((p[3] - 2f64.tanh() / 8f64.tanh()).abs() < 1e-15);
        assert!((p[3] - 0.96403).abs() < 1e-5);
        assert!(tanh_project(&[0.0], 0.0).is_err());
    }

    fn fd_check(latent_map: LatentMap, symmetry: Symmetry) {
        let grid = DesignGrid::new(8, 8, symmetry, 2).unwrap();
        let chain = FieldChain::new(grid.clone(), 1.2, 3.0, latent_map).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params: Vec<f64> = (0..grid.num_params()).map(|_| rng.random_range(-0.4..0.4)).collect();
        let upstream: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |p: &[f64]| -> f64 {
            let s = chain.forward(p).unwrap();
            s.reward.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let state = chain.forward(&params).unwrap();
        let grad = chain.backward(&state, &upstream).unwrap();
        let h = 1e-6;
        for k in 0..grid.num_params() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1e-3);
            assert!(rel < 1e-5, "param {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }

    #[test]
    fn chain_gradient_matches_finite_differences() {
        fd_check(LatentMap::Dummy, Symmetry::None);
        fd_check(LatentMap::Dummy, Symmetry::D1Cols);
        fd_check(LatentMap::Direct, Symmetry::D1Rows);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let grid = DesignGrid::new(5, 6, Symmetry::D1Cols, 2).unwrap();
        let chain = FieldChain::new(grid.clone(), 1.0, 8.0, LatentMap::Dummy).unwrap();
        let state = chain.forward(&vec![0.1; grid.num_params()]).unwrap();
        let g = chain.backward(&state, &vec![0.0; grid.len()]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chain_output_is_symmetric() {
        let grid = DesignGrid::new(6, 9, Symmetry::D1Cols, 2).unwrap();
        let chain = FieldChain::new(grid.clone(), 0.9, 8.0, LatentMap::Dummy).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params: Vec<f64> = (0..grid.num_params()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s = chain.forward(&params).unwrap();
        assert!(grid.is_symmetric(&s.reward, 0.0));
        assert!(s.reward.iter().all(|v| v.abs() <= 1.0));
    }
}
