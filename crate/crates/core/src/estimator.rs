//! Ensemble cost and gradient estimators, approximate control variates, and the adaptive
//! high/low-fidelity sampling budget.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fdg::BinaryDesign;
use crate::sampling::{PerturbationEnsemble, SamplingDistribution};

/// Largest exponent passed to `exp` before clamping.
const MAX_EXPONENT: f64 = 700.0;

/// `-exp(-beta_exp (f - f_ref))`. Monotone decreasing in `f`; equals -1 at `f_ref`.
pub fn exponentiate(f: f64, beta_exp: f64, f_ref: f64) -> f64 {
    let e = -beta_exp * (f - f_ref);
    if e > MAX_EXPONENT {
        log::warn!("cost exponentiation overflow (exponent {e:.1}); clamping");
        return -MAX_EXPONENT.exp();
    }
    -e.exp()
}

/// Mean of the sampled costs.
pub fn ensemble_cost(costs: &[f64]) -> Result<f64> {
    if costs.is_empty() {
        return Err(Error::contract("ensemble cost needs at least one sample"));
    }
    Ok(costs.iter().sum::<f64>() / costs.len() as f64)
}

/// Score-function estimate `<q f>` of the smoothed-cost gradient.
pub fn ensemble_gradient(
    costs: &[f64],
    ensemble: &PerturbationEnsemble,
    dist: &SamplingDistribution,
) -> Result<Vec<f64>> {
    Error::check_len(ensemble.len(), costs.len())?;
    if costs.is_empty() {
        return Err(Error::contract("ensemble gradient needs at least one sample"));
    }
    let m = costs.len() as f64;
    let weights: Vec<f64> = costs.iter().map(|c| c / m).collect();
    dist.weighted_score(ensemble, &weights)
}

/// Output of a control-variate gradient estimate.
#[derive(Clone, Debug)]
pub struct AcvEstimate {
    pub grad: Vec<f64>,
    pub beta_cv: f64,
    /// Component-averaged correlation between `q f` and `q h` over the paired samples.
    pub corr: f64,
    /// Component-averaged sample variance of `q f` (single-sample variance).
    pub var_qf: f64,
    pub var_qh: f64,
}

/// Combines paired samples of `q f` and `q h` (one column per member) with an estimate
/// `qh_expect` of `E[q h]`:
///
/// `g = mean(q f) - beta (mean(q h) - qh_expect)` with
/// `beta = mean_j Cov(qf_j, qh_j) / mean_j Var(qh_j)`.
pub fn acv_combine(qf: &DMatrix<f64>, qh: &DMatrix<f64>, qh_expect: &[f64]) -> Result<AcvEstimate> {
    let (dim, m) = qf.shape();
    if qh.shape() != (dim, m) {
        return Err(Error::contract("paired q f and q h samples differ in shape"));
    }
    Error::check_len(dim, qh_expect.len())?;
    if m == 0 {
        return Err(Error::contract("control variates need at least one paired sample"));
    }
    let mean_f: Vec<f64> = qf.row_iter().map(|r| r.mean()).collect();
    let mean_h: Vec<f64> = qh.row_iter().map(|r| r.mean()).collect();
    let (mut cov_sum, mut var_f_sum, mut var_h_sum, mut corr_sum) = (0.0, 0.0, 0.0, 0.0);
    let mut corr_terms = 0usize;
    if m > 1 {
        let denom = (m - 1) as f64;
        for j in 0..dim {
            let (mut c, mut vf, mut vh) = (0.0, 0.0, 0.0);
            for k in 0..m {
                let a = qf[(j, k)] - mean_f[j];
                let b = qh[(j, k)] - mean_h[j];
                c += a * b;
                vf += a * a;
                vh += b * b;
            }
            cov_sum += c / denom;
            var_f_sum += vf / denom;
            var_h_sum += vh / denom;
            if vf > 0.0 && vh > 0.0 {
                corr_sum += c / (vf * vh).sqrt();
                corr_terms += 1;
            }
        }
    }
    let var_qf = var_f_sum / dim.max(1) as f64;
    let var_qh = var_h_sum / dim.max(1) as f64;
    let beta_cv = if var_h_sum > f64::MIN_POSITIVE * dim as f64 {
        cov_sum / var_h_sum
    } else {
        log::warn!("control variate has vanishing variance; falling back to the plain estimator");
        0.0
    };
    let corr = if corr_terms > 0 { corr_sum / corr_terms as f64 } else { 0.0 };
    let grad = (0..dim)
        .map(|j| mean_f[j] - beta_cv * (mean_h[j] - qh_expect[j]))
        .collect();
    Ok(AcvEstimate { grad, beta_cv, corr, var_qf, var_qh })
}

/// Approximate-control-variate gradient.
///
/// `hi` holds the high-fidelity costs of the first `hi.len()` members; `lo` holds the
/// low-fidelity costs of every member of `ensemble` (the first `hi.len()` are paired).
/// `E[q h]` is estimated from all low-fidelity members.
pub fn acv_gradient(
    hi: &[f64],
    lo: &[f64],
    ensemble: &PerturbationEnsemble,
    dist: &SamplingDistribution,
) -> Result<AcvEstimate> {
    Error::check_len(ensemble.len(), lo.len())?;
    let m = hi.len();
    if m == 0 || m > lo.len() {
        return Err(Error::contract("need 1 <= high-fidelity count <= low-fidelity count"));
    }
    let paired: Vec<usize> = (0..m).collect();
    let q = dist.member_scores(&ensemble.select(&paired))?;
    let mut qf = q.clone();
    let mut qh = q;
    for k in 0..m {
        qf.column_mut(k).scale_mut(hi[k]);
        qh.column_mut(k).scale_mut(lo[k]);
    }
    let total = lo.len() as f64;
    let weights: Vec<f64> = lo.iter().map(|h| h / total).collect();
    let qh_expect = dist.weighted_score(ensemble, &weights)?;
    acv_combine(&qf, &qh, &qh_expect)
}

/// Variance of the ACV estimator relative to the plain single-fidelity estimator with the
/// same number of high-fidelity samples.
pub fn acv_variance_ratio(r_cv: f64, corr: f64) -> f64 {
    1.0 - (r_cv - 1.0) / r_cv * corr * corr
}

/// Continuous optimum of the low-to-high sampling ratio for correlation `c`.
pub fn optimal_ratio(c: f64, t_hf: f64, t_lf: f64) -> f64 {
    c * (t_hf / (t_lf * (1.0 - c * c))).sqrt()
}

/// Correlations at or above this are clamped before use.
pub const MAX_CORRELATION: f64 = 0.999;

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetPolicy {
    t_hf: f64,
    t_lf: f64,
    t_iter: f64,
    m_min: usize,
}

/// Sample counts for one iteration: `m` high-fidelity members and `r_cv * m` low-fidelity
/// members (the first `m` paired). `r_cv = 1` evaluates only the paired low-fidelity
/// samples, which gives the plain estimator while still measuring the correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget {
    pub m: usize,
    pub r_cv: usize,
}

impl BudgetPolicy {
    pub fn new(t_hf: f64, t_lf: f64, t_iter: f64, m_min: usize) -> Result<Self> {
        if !(t_hf > 0.0 && t_lf > 0.0 && t_iter > 0.0) || !(t_hf.is_finite() && t_lf.is_finite() && t_iter.is_finite()) {
            return Err(Error::Config("evaluation times and iteration budget must be positive".into()));
        }
        let m_min = m_min.max(1);
        if (m_min as f64) * (t_hf + t_lf) > t_iter {
            return Err(Error::Config(format!(
                "iteration budget {t_iter} cannot fit {m_min} paired evaluations"
            )));
        }
        Ok(BudgetPolicy { t_hf, t_lf, t_iter, m_min })
    }

    pub fn t_hf(&self) -> f64 {
        self.t_hf
    }

    pub fn t_lf(&self) -> f64 {
        self.t_lf
    }

    pub fn t_iter(&self) -> f64 {
        self.t_iter
    }

    /// Replaces the per-evaluation times (e.g. with measured averages), keeping the policy
    /// valid: the times are rescaled if the iteration budget could not fit `m_min` pairs.
    pub fn with_times(&self, t_hf: f64, t_lf: f64) -> Self {
        let mut next = self.clone();
        if t_hf > 0.0 && t_lf > 0.0 && t_hf.is_finite() && t_lf.is_finite() {
            let scale = ((self.m_min as f64) * (t_hf + t_lf) / self.t_iter).max(1.0);
            next.t_hf = t_hf / scale;
            next.t_lf = t_lf / scale;
        }
        next
    }

    /// Optimal `(M, r_cv)` for correlation `c` measured on the previous iteration.
    pub fn update(&self, c: f64) -> Budget {
        let c = if c.is_nan() || c < 0.0 {
            0.0
        } else if c >= 1.0 {
            log::warn!("correlation {c} clamped to {MAX_CORRELATION}");
            MAX_CORRELATION
        } else {
            c.min(MAX_CORRELATION)
        };
        let (t_hf, t_lf, t_iter) = (self.t_hf, self.t_lf, self.t_iter);
        let denom = t_hf + c * t_lf * (t_hf / (t_lf * (1.0 - c * c))).sqrt();
        let mut m = ((t_iter / denom).floor() as usize).max(self.m_min);
        let mut r = ((t_iter - m as f64 * t_hf) / (m as f64 * t_lf)).floor().max(0.0) as usize;
        if r < 1 {
            r = 1;
            m = ((t_iter / (t_hf + t_lf)).floor() as usize).max(self.m_min);
        }
        while r > 1 && m as f64 * (t_hf + r as f64 * t_lf) > t_iter {
            r -= 1;
        }
        while m > self.m_min && m as f64 * (t_hf + r as f64 * t_lf) > t_iter {
            m -= 1;
        }
        Budget { m, r_cv: r }
    }
}

/// Best sampled design so far.
#[derive(Clone, Debug, PartialEq)]
pub struct Incumbent {
    pub cost: f64,
    pub design: BinaryDesign,
}

/// Updates the incumbent with un-exponentiated sampled costs. Ties keep the incumbent, and
/// among new samples the earliest member wins.
pub fn track_best<'a, I>(incumbent: Option<Incumbent>, samples: I) -> Option<Incumbent>
where
    I: IntoIterator<Item = (f64, &'a BinaryDesign)>,
{
    let mut best = incumbent;
    for (cost, design) in samples {
        if cost.is_nan() {
            continue;
        }
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(Incumbent { cost, design: design.clone() });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SamplingDistribution;

    #[test]
    fn exponentiation_values() {
        assert_eq!(exponentiate(-3.0, 20.0, -3.0), -1.0);
        assert!((exponentiate(0.1, 20.0, 0.0) + (-2f64).exp()).abs() < 1e-15);
        assert!((exponentiate(0.1, 20.0, 0.0) + 0.13534).abs() < 1e-5);
        assert!(exponentiate(-1.0, 20.0, 0.0) < exponentiate(-0.5, 20.0, 0.0));
        assert!(exponentiate(-100.0, 20.0, 0.0).is_finite());
    }

    #[test]
    fn ensemble_cost_means() {
        assert_eq!(ensemble_cost(&[-1.0, -3.0]).unwrap(), -2.0);
        assert_eq!(ensemble_cost(&[0.7; 5]).unwrap(), 0.7);
        assert!(ensemble_cost(&[]).is_err());
    }

    #[test]
    fn zero_beta_reduces_to_plain_gradient() {
        let dist = SamplingDistribution::isotropic(3, 0.5).unwrap();
        let e = dist.draw_ensemble(6, 2, 0);
        let costs = [1.0, -2.0, 0.5, 3.0, 0.0, 1.5];
        let plain = ensemble_gradient(&costs, &e, &dist).unwrap();
        let q = dist.member_scores(&e).unwrap();
        let mut qf = q.clone();
        for k in 0..6 {
            qf.column_mut(k).scale_mut(costs[k]);
        }
        // A constant control variate has zero variance, so beta falls back to 0.
        let mut qh = q.clone();
        qh.fill(0.0);
        let est = acv_combine(&qf, &qh, &[9.0, 9.0, 9.0]).unwrap();
        assert_eq!(est.beta_cv, 0.0);
        for (a, b) in est.grad.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_control_variate_has_unit_beta() {
        let dist = SamplingDistribution::isotropic(4, 0.3).unwrap();
        let e = dist.draw_ensemble(8, 5, 1);
        let costs: Vec<f64> = (0..8).map(|k| (k as f64 * 0.7).cos()).collect();
        let lo = costs.clone();
        let est = acv_gradient(&costs, &lo, &e, &dist).unwrap();
        assert!((est.beta_cv - 1.0).abs() < 1e-12);
        assert!((est.corr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn budget_examples() {
        let policy = BudgetPolicy::new(1.0, 1.0 / 33.0, 10.0, 5).unwrap();
        assert_eq!(policy.update(0.9), Budget { m: 7, r_cv: 14 });
        // No correlation: plain estimator with paired low-fidelity samples only.
        let b = policy.update(0.0);
        assert_eq!(b.r_cv, 1);
        assert!(b.m as f64 * (1.0 + 1.0 / 33.0) <= 10.0);
        assert!((optimal_ratio(0.99, 33.0, 1.0) - 40.3).abs() < 0.05);
        assert_eq!(policy.update(1.5), policy.update(MAX_CORRELATION));
        assert!(BudgetPolicy::new(1.0, 0.5, 4.0, 5).is_err());
    }

    #[test]
    fn variance_ratio_formula() {
        assert!((acv_variance_ratio(10.0, 0.9) - 0.271).abs() < 1e-12);
        assert_eq!(acv_variance_ratio(1.0, 0.9), 1.0);
    }

    #[test]
    fn incumbent_tracking() {
        let a = BinaryDesign::filled(2, 2, 0);
        let b = BinaryDesign::filled(2, 2, 1);
        let best = track_best(None, [(-1.0, &a), (-2.0, &b)]).unwrap();
        assert_eq!(best.cost, -2.0);
        assert_eq!(best.design, b);
        let kept = track_best(Some(Incumbent { cost: -5.0, design: a.clone() }), [(-4.0, &b)]).unwrap();
        assert_eq!(kept.design, a);
        let tie = track_best(Some(Incumbent { cost: -5.0, design: a.clone() }), [(-5.0, &b)]).unwrap();
        assert_eq!(tie.design, a);
        let first = track_best(None, [(-1.0, &a), (-1.0, &b)]).unwrap();
        assert_eq!(first.design, a);
    }
}
