//! Gaussian sampling distribution over reward fields.
//!
//! Perturbations are `sigma_r * L z` with `L` the Cholesky factor of the (regularised) RBF
//! covariance and `z` standard normal. Scores `sigma_r^-2 Sigma^-1 delta` are always
//! applied through triangular solves with `L`; the inverse is never formed.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DesignGrid;
use crate::rng::substream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    #[default]
    Rbf,
    Isotropic,
}

/// RBF length scale for a minimum feature size, in pixels.
pub fn rbf_length_scale(min_feature: usize) -> f64 {
    min_feature as f64 * std::f64::consts::SQRT_2 / 4.0
}

/// Regularisation shift that gives the shifted spectrum condition number `kappa`.
pub fn regularization(lambda_max: f64, lambda_min: f64, kappa: f64) -> f64 {
    (lambda_max - kappa * lambda_min) / (kappa - 1.0)
}

/// Regularised RBF covariance with its lower Cholesky factor.
#[derive(Clone, Debug)]
pub struct RbfCovariance {
    pub rows: usize,
    pub cols: usize,
    pub sigma_rbf: f64,
    pub kappa: f64,
    pub epsilon: f64,
    chol: DMatrix<f64>,
}

fn kernel_1d(len: usize, sigma_rbf: f64) -> DMatrix<f64> {
    DMatrix::from_fn(len, len, |i, j| {
        let d = i as f64 - j as f64;
        (-d * d / (sigma_rbf * sigma_rbf)).exp()
    })
}

/// Unregularised `exp(-|x_i - x_j|^2 / sigma_rbf^2)` on the full grid, row-major pixels.
pub fn rbf_kernel_matrix(rows: usize, cols: usize, sigma_rbf: f64) -> DMatrix<f64> {
    let kr = kernel_1d(rows, sigma_rbf);
    let kc = kernel_1d(cols, sigma_rbf);
    kr.kronecker(&kc)
}

/// Builds the regularised RBF covariance for a grid.
///
/// The kernel separates into a Kronecker product of the row and column kernels, so its
/// extreme eigenvalues are products of the factors' eigenvalues.
pub fn build_rbf_covariance(grid: &DesignGrid, kappa: f64) -> Result<RbfCovariance> {
    build_rbf_covariance_with(grid.rows(), grid.cols(), rbf_length_scale(grid.min_feature()), kappa)
}

pub fn build_rbf_covariance_with(rows: usize, cols: usize, sigma_rbf: f64, kappa: f64) -> Result<RbfCovariance> {
    if !(kappa.is_finite() && kappa > 1.0) {
        return Err(Error::param(format!("target condition number must exceed 1, got {kappa}")));
    }
    if rows == 0 || cols == 0 || !(sigma_rbf > 0.0) {
        return Err(Error::param("RBF covariance needs a non-empty grid and positive length scale"));
    }
    let er = kernel_1d(rows, sigma_rbf).symmetric_eigenvalues();
    let ec = kernel_1d(cols, sigma_rbf).symmetric_eigenvalues();
    let (rmin, rmax) = (er.min(), er.max());
    let (cmin, cmax) = (ec.min(), ec.max());
    let products = [rmin * cmin, rmin * cmax, rmax * cmin, rmax * cmax];
    let lambda_max = products.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = products.iter().copied().fold(f64::INFINITY, f64::min);
    // A 1x1 grid has a flat spectrum; no shift can change its condition number.
    let epsilon = if lambda_max - lambda_min <= f64::EPSILON * lambda_max {
        0.0
    } else {
        regularization(lambda_max, lambda_min, kappa)
    };
    let mut sigma = rbf_kernel_matrix(rows, cols, sigma_rbf);
    for i in 0..sigma.nrows() {
        sigma[(i, i)] += epsilon;
    }
    let chol = Cholesky::new(sigma)
        .ok_or_else(|| Error::Numerical("Cholesky factorisation of the RBF covariance failed".into()))?;
    Ok(RbfCovariance { rows, cols, sigma_rbf, kappa, epsilon, chol: chol.unpack() })
}

impl RbfCovariance {
    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Reassembles `L L^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    /// Writes the cache file: little-endian `rows, cols` (u64), `sigma_rbf, kappa, epsilon`
    /// (f64), then the lower triangle of `L` row by row (f64).
    pub fn write_cache<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.rows as u64).to_le_bytes())?;
        out.write_all(&(self.cols as u64).to_le_bytes())?;
        for v in [self.sigma_rbf, self.kappa, self.epsilon] {
            out.write_all(&v.to_le_bytes())?;
        }
        let n = self.dim();
        let mut buf = Vec::with_capacity(n * (n + 1) / 2 * 8);
        for i in 0..n {
            for j in 0..=i {
                buf.extend_from_slice(&self.chol[(i, j)].to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_cache<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::decode_cache(&bytes)
    }

    pub fn decode_cache(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 40;
        if bytes.len() < HEADER {
            return Err(Error::parse("covariance cache shorter than its header"));
        }
        let word = |k: usize| -> [u8; 8] { bytes[8 * k..8 * k + 8].try_into().unwrap() };
        let rows = u64::from_le_bytes(word(0));
        let cols = u64::from_le_bytes(word(1));
        let sigma_rbf = f64::from_le_bytes(word(2));
        let kappa = f64::from_le_bytes(word(3));
        let epsilon = f64::from_le_bytes(word(4));
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n > 0 && n <= 1 << 16)
            .ok_or_else(|| Error::parse("covariance cache has implausible dimensions"))? as usize;
        let expected = HEADER + n * (n + 1) / 2 * 8;
        if bytes.len() != expected {
            return Err(Error::parse(format!(
                "covariance cache holds {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        if !(sigma_rbf.is_finite() && kappa.is_finite() && epsilon.is_finite()) {
            return Err(Error::parse("covariance cache header holds non-finite values"));
        }
        let mut chol = DMatrix::zeros(n, n);
        let mut k = 5;
        for i in 0..n {
            for j in 0..=i {
                chol[(i, j)] = f64::from_le_bytes(word(k));
                k += 1;
            }
        }
        if (0..n).any(|i| !(chol[(i, i)] > 0.0)) {
            return Err(Error::parse("covariance cache factor has a non-positive diagonal"));
        }
        Ok(RbfCovariance { rows: rows as usize, cols: cols as usize, sigma_rbf, kappa, epsilon, chol })
    }

    /// Cache file name keyed by grid shape, length scale and target condition number.
    pub fn cache_file_name(rows: usize, cols: usize, sigma_rbf: f64, kappa: f64) -> String {
        format!("rbf_{rows}x{cols}_{:016x}_{:016x}.cov", sigma_rbf.to_bits(), kappa.to_bits())
    }

    /// Loads the covariance from `dir` if cached, otherwise builds and stores it.
    pub fn load_or_build(grid: &DesignGrid, kappa: f64, dir: &Path) -> Result<Self> {
        let sigma_rbf = rbf_length_scale(grid.min_feature());
        let path: PathBuf = dir.join(Self::cache_file_name(grid.rows(), grid.cols(), sigma_rbf, kappa));
        if path.exists() {
            let cov = Self::read_cache(std::fs::File::open(&path)?)?;
            if cov.rows == grid.rows() && cov.cols == grid.cols() {
                return Ok(cov);
            }
            log::warn!("ignoring mismatched covariance cache {}", path.display());
        }
        let cov = build_rbf_covariance(grid, kappa)?;
        std::fs::create_dir_all(dir)?;
        let tmp = path.with_extension("tmp");
        cov.write_cache(std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
        std::fs::rename(&tmp, &path)?;
        Ok(cov)
    }
}

#[derive(Clone, Debug)]
enum Shape {
    Isotropic,
    Rbf(std::sync::Arc<RbfCovariance>),
}

/// Sampling distribution `N(mean, sigma_r^2 Sigma)` (the mean is supplied per draw).
#[derive(Clone, Debug)]
pub struct SamplingDistribution {
    dim: usize,
    sigma_r: f64,
    shape: Shape,
}

/// A batch of perturbations with the standard-normal draws that produced them.
#[derive(Clone, Debug)]
pub struct PerturbationEnsemble {
    /// Standard-normal draws, one column per member.
    pub normals: DMatrix<f64>,
    /// Perturbations `sigma_r L z`, one column per member.
    pub deltas: DMatrix<f64>,
}

impl PerturbationEnsemble {
    pub fn len(&self) -> usize {
        self.deltas.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn delta(&self, member: usize) -> Vec<f64> {
        self.deltas.column(member).iter().copied().collect()
    }

    /// Keeps only the listed members, in the given order.
    pub fn select(&self, members: &[usize]) -> Self {
        PerturbationEnsemble {
            normals: self.normals.select_columns(members),
            deltas: self.deltas.select_columns(members),
        }
    }
}

impl SamplingDistribution {
    pub fn isotropic(dim: usize, sigma_r: f64) -> Result<Self> {
        check_sigma(sigma_r)?;
        Ok(SamplingDistribution { dim, sigma_r, shape: Shape::Isotropic })
    }

    pub fn rbf(cov: std::sync::Arc<RbfCovariance>, sigma_r: f64) -> Result<Self> {
        check_sigma(sigma_r)?;
        Ok(SamplingDistribution { dim: cov.dim(), sigma_r, shape: Shape::Rbf(cov) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma_r(&self) -> f64 {
        self.sigma_r
    }

    pub fn rbf_covariance(&self) -> Option<&RbfCovariance> {
        match &self.shape {
            Shape::Rbf(c) => Some(c),
            Shape::Isotropic => None,
        }
    }

    /// Draws `count` members. Member `m` of draw `iteration` depends only on
    /// `(seed, iteration, m)`.
    pub fn draw_ensemble(&self, count: usize, seed: u64, iteration: u64) -> PerturbationEnsemble {
        let mut normals = DMatrix::zeros(self.dim, count);
        for m in 0..count {
            let mut rng = substream(seed, "perturbation", iteration, m as u64);
            for v in normals.column_mut(m).iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        // Column by column so a member's draw does not depend on the ensemble size.
        let mut deltas = match &self.shape {
            Shape::Isotropic => normals.clone(),
            Shape::Rbf(cov) => {
                let l = cov.cholesky_factor();
                let mut d = DMatrix::zeros(self.dim, count);
                for m in 0..count {
                    d.set_column(m, &(l * normals.column(m)));
                }
                d
            }
        };
        deltas *= self.sigma_r;
        PerturbationEnsemble { normals, deltas }
    }

    /// `sigma_r^-2 Sigma^-1 delta` via two triangular solves.
    pub fn score_vector(&self, delta: &[f64]) -> Result<Vec<f64>> {
        Error::check_len(self.dim, delta.len())?;
        self.require_positive_scale()?;
        let mut v = DVector::from_column_slice(delta);
        if let Shape::Rbf(cov) = &self.shape {
            let l = cov.cholesky_factor();
            l.solve_lower_triangular_mut(&mut v);
            l.tr_solve_lower_triangular_mut(&mut v);
        }
        v /= self.sigma_r * self.sigma_r;
        Ok(v.iter().copied().collect())
    }

    /// Score of every member of an ensemble, one column each.
    ///
    /// With `delta = sigma_r L z` the score reduces to `L^-T z / sigma_r`.
    pub fn member_scores(&self, ensemble: &PerturbationEnsemble) -> Result<DMatrix<f64>> {
        self.require_positive_scale()?;
        let mut q = ensemble.normals.clone();
        if let Shape::Rbf(cov) = &self.shape {
            cov.cholesky_factor().tr_solve_lower_triangular_mut(&mut q);
        }
        q /= self.sigma_r;
        Ok(q)
    }

    /// `sum_m weights[m] * q_m` with a single triangular solve.
    pub fn weighted_score(&self, ensemble: &PerturbationEnsemble, weights: &[f64]) -> Result<Vec<f64>> {
        Error::check_len(ensemble.len(), weights.len())?;
        self.require_positive_scale()?;
        let mut v = &ensemble.normals * DVector::from_column_slice(weights);
        if let Shape::Rbf(cov) = &self.shape {
            cov.cholesky_factor().tr_solve_lower_triangular_mut(&mut v);
        }
        v /= self.sigma_r;
        Ok(v.iter().copied().collect())
    }

    fn require_positive_scale(&self) -> Result<()> {
        if self.sigma_r > 0.0 {
            Ok(())
        } else {
            Err(Error::param("score vectors are undefined for sigma_r = 0"))
        }
    }
}

fn check_sigma(sigma_r: f64) -> Result<()> {
    if sigma_r.is_finite() && sigma_r >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("sigma_r must be non-negative, got {sigma_r}")))
    }
}
