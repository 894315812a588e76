//! Multi-well analytic test function and its noisy low-fidelity twin.
//!
//! `f(rho) = -sum_i depth * exp(-(width / N) |w_i - rho|^2)` where the wells `w_i` are
//! smooth grayscale designs in `[0, 1]` and the norm runs over the `N` independent pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fdg::BinaryDesign;
use crate::field::{FieldChain, LatentMap};
use crate::gegd::default_filter_sigma;
use crate::grid::{restrict, DesignGrid};
use crate::problem::{CostError, CostFunction, Fidelity};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestFunctionSpec {
    pub num_wells: usize,
    pub depth: f64,
    /// Exponent coefficient is `width / N`.
    pub width: f64,
    pub well_seed: u64,
    pub well_beta_proj: f64,
    /// Defaults to `sqrt(2) L_min / 4`.
    pub well_filter_sigma: Option<f64>,
    /// Scale of the design-dependent noise in the low-fidelity cost.
    pub noise_scale: f64,
    pub noise_seed: u64,
}

impl Default for TestFunctionSpec {
    fn default() -> Self {
        TestFunctionSpec {
            num_wells: 10,
            depth: 3.0,
            width: 15.0,
            well_seed: 0,
            well_beta_proj: 8.0,
            well_filter_sigma: None,
            noise_scale: 0.001,
            noise_seed: 0,
        }
    }
}

/// Generates the wells on the full grid with entries in `(0, 1)`.
pub fn make_wells(grid: &DesignGrid, spec: &TestFunctionSpec) -> Result<Vec<Vec<f64>>> {
    let sigma = spec.well_filter_sigma.unwrap_or_else(|| default_filter_sigma(grid.min_feature()));
    let chain = FieldChain::new(grid.clone(), sigma, spec.well_beta_proj, LatentMap::Direct)?;
    (0..spec.num_wells)
        .map(|k| {
            let mut rng = substream(spec.well_seed, "well", k as u64, 0);
            let half: Vec<f64> = (0..grid.num_params()).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let reward = chain.forward(&half)?.reward;
            Ok(reward.iter().map(|r| 0.5 * (r + 1.0)).collect())
        })
        .collect()
}

/// Deterministic standard-normal draw keyed by the design content.
pub fn design_noise(design: &BinaryDesign, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((design.rows() as u64).to_le_bytes());
    h.update((design.cols() as u64).to_le_bytes());
    h.update(design.pixels());
    let key: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(key).sample(StandardNormal)
}

#[derive(Clone, Debug)]
pub struct TestFunction {
    grid: DesignGrid,
    spec: TestFunctionSpec,
    /// Wells restricted to the independent pixels.
    wells: Vec<Vec<f64>>,
    coeff: f64,
}

impl TestFunction {
    pub fn new(grid: DesignGrid, spec: TestFunctionSpec) -> Result<Self> {
        if spec.num_wells == 0 || !(spec.depth > 0.0) || !(spec.width > 0.0) || !(spec.noise_scale >= 0.0) {
            return Err(Error::Config("test function needs wells, positive depth and width".into()));
        }
        let wells = make_wells(&grid, &spec)?;
        Self::with_wells(grid, spec, wells)
    }

    /// Builds the function from explicit full-grid wells.
    pub fn with_wells(grid: DesignGrid, spec: TestFunctionSpec, wells: Vec<Vec<f64>>) -> Result<Self> {
        let coeff = spec.width / grid.num_params() as f64;
        let wells = wells.iter().map(|w| restrict(w, &grid)).collect::<Result<_>>()?;
        Ok(TestFunction { grid, spec, wells, coeff })
    }

    pub fn spec(&self) -> &TestFunctionSpec {
        &self.spec
    }

    /// Wells on the independent pixels.
    pub fn wells(&self) -> &[Vec<f64>] {
        &self.wells
    }

    fn terms(&self, density: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Error::check_len(self.grid.len(), density.len())?;
        let rho = restrict(density, &self.grid)?;
        let terms = self
            .wells
            .iter()
            .map(|w| {
                let d2: f64 = w.iter().zip(&rho).map(|(a, b)| (a - b) * (a - b)).sum();
                -self.spec.depth * (-self.coeff * d2).exp()
            })
            .collect();
        Ok((terms, rho))
    }

    /// Cost of a density on the full grid (binary or grayscale).
    pub fn cost(&self, density: &[f64]) -> Result<f64> {
        Ok(self.terms(density)?.0.iter().sum())
    }

    pub fn f_test(&self, design: &BinaryDesign) -> Result<f64> {
        self.check_design(design)?;
        self.cost(&design.to_density())
    }

    pub fn f_test_cv(&self, design: &BinaryDesign) -> Result<f64> {
        Ok(self.f_test(design)? + self.spec.noise_scale * design_noise(design, self.spec.noise_seed))
    }

    /// Cost and gradient with respect to the full-grid density. Only the independent
    /// pixels carry gradient.
    pub fn cost_gradient(&self, density: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (terms, rho) = self.terms(density)?;
        let mut grad = vec![0.0; self.grid.len()];
        for (w, t) in self.wells.iter().zip(&terms) {
            // d/d rho_j of -D exp(-c |w - rho|^2) = 2 c t (w_j - rho_j)
            for (j, (a, b)) in w.iter().zip(&rho).enumerate() {
                grad[self.grid.pixel_of_param(j)] += 2.0 * self.coeff * t * (a - b);
            }
        }
        Ok((terms.iter().sum(), grad))
    }

    fn check_design(&self, design: &BinaryDesign) -> Result<()> {
        if design.rows() != self.grid.rows() || design.cols() != self.grid.cols() {
            return Err(Error::contract(format!(
                "design is {}x{} but the test function grid is {}x{}",
                design.rows(),
                design.cols(),
                self.grid.rows(),
                self.grid.cols()
            )));
        }
        Ok(())
    }
}

impl CostFunction for TestFunction {
    fn grid(&self) -> &DesignGrid {
        &self.grid
    }

    fn evaluate(&self, design: &BinaryDesign, fidelity: Fidelity) -> Result<f64, CostError> {
        let r = match fidelity {
            Fidelity::Hi => self.f_test(design),
            Fidelity::Lo => self.f_test_cv(design),
        };
        r.map_err(|e| CostError::Backend(e.to_string()))
    }

    fn cost_and_gradient(&self, density: &[f64]) -> Option<Result<(f64, Vec<f64>), CostError>> {
        Some(self.cost_gradient(density).map_err(|e| CostError::Backend(e.to_string())))
    }

    fn supports_gradient(&self) -> bool {
        true
    }
}
