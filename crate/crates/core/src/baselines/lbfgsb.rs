//! Limited-memory BFGS with box constraints.
//!
//! Each iteration finds the generalized Cauchy point along the projected gradient path of
//! the compact limited-memory model, minimizes the model over the free variables (direct
//! primal method, truncated to the box), and runs a strong-Wolfe line search toward that
//! point with steps at most 1.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsbOptions {
    pub memory: usize,
    pub max_iterations: usize,
    pub max_evaluations: usize,
    /// Stop when the projected gradient's max-norm drops below this.
    pub pgtol: f64,
    /// Stop when the relative function reduction drops below this.
    pub ftol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        LbfgsbOptions {
            memory: 10,
            max_iterations: 15000,
            max_evaluations: 15000,
            pgtol: 1e-5,
            ftol: 1e7 * f64::EPSILON,
            c1: 1e-3,
            c2: 0.9,
            max_line_search: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    ProjectedGradient,
    FunctionChange,
    MaxIterations,
    MaxEvaluations,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct LbfgsbResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// State reported after every accepted iteration.
#[derive(Clone, Copy, Debug)]
pub struct IterationInfo<'a> {
    pub iteration: usize,
    pub evaluations: usize,
    pub x: &'a [f64],
    pub f: f64,
}

struct Memory {
    s: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    theta: f64,
    cap: usize,
    // W = [Y, theta S] (n x 2k) and M = K^-1 for the compact form B = theta I - W M W^T.
    w: DMatrix<f64>,
    m: DMatrix<f64>,
}

impl Memory {
    fn new(n: usize, cap: usize) -> Self {
        Memory { s: Vec::new(), y: Vec::new(), theta: 1.0, cap, w: DMatrix::zeros(n, 0), m: DMatrix::zeros(0, 0) }
    }

    fn reset(&mut self) {
        let n = self.w.nrows();
        *self = Memory::new(n, self.cap);
    }

    fn push(&mut self, s: DVector<f64>, y: DVector<f64>) -> bool {
        let sy = s.dot(&y);
        let yy = y.dot(&y);
        if !(sy > f64::EPSILON * yy) {
            return false;
        }
        if self.s.len() == self.cap {
            self.s.remove(0);
            self.y.remove(0);
        }
        self.theta = yy / sy;
        self.s.push(s);
        self.y.push(y);
        self.rebuild()
    }

    fn rebuild(&mut self) -> bool {
        let k = self.s.len();
        let n = self.w.nrows();
        let mut w = DMatrix::zeros(n, 2 * k);
        for j in 0..k {
            w.set_column(j, &self.y[j]);
            w.set_column(k + j, &(&self.s[j] * self.theta));
        }
        let mut kmat = DMatrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            kmat[(i, i)] = -self.s[i].dot(&self.y[i]);
            for j in 0..k {
                if i > j {
                    let l = self.s[i].dot(&self.y[j]);
                    kmat[(k + i, j)] = l;
                    kmat[(j, k + i)] = l;
                }
                kmat[(k + i, k + j)] = self.theta * self.s[i].dot(&self.s[j]);
            }
        }
        match kmat.try_inverse() {
            Some(m) => {
                self.w = w;
                self.m = m;
                true
            }
            None => {
                self.reset();
                false
            }
        }
    }

    fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&l, &u))| ((xi - gi).clamp(l, u) - xi).abs())
        .fold(0.0, f64::max)
}

/// Generalized Cauchy point. Returns `(x_cp, c)` with `c = W^T (x_cp - x)`.
fn cauchy_point(
    x: &[f64],
    g: &[f64],
    lower: &[f64],
    upper: &[f64],
    mem: &Memory,
) -> (Vec<f64>, DVector<f64>) {
    let n = x.len();
    let cols = mem.w.ncols();
    let theta = mem.theta;
    let mut t = vec![f64::INFINITY; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        if g[i] < 0.0 {
            t[i] = (x[i] - upper[i]) / g[i];
        } else if g[i] > 0.0 {
            t[i] = (x[i] - lower[i]) / g[i];
        }
        if t[i] > 0.0 && g[i] != 0.0 {
            d[i] = -g[i];
        } else {
            t[i] = 0.0;
        }
    }
    let mut xcp = x.to_vec();
    let mut c = DVector::zeros(cols);
    let dvec = DVector::from_column_slice(&d);
    let mut p = mem.w.tr_mul(&dvec);
    let mut fp = -dvec.dot(&dvec);
    if fp >= 0.0 {
        return (xcp, c);
    }
    let mut fpp = -theta * fp - p.dot(&(&mem.m * &p));
    let fpp0 = -theta * fp;
    let mut order: Vec<usize> = (0..n).filter(|&i| t[i] > 0.0 && t[i].is_finite()).collect();
    order.sort_by(|&a, &b| t[a].total_cmp(&t[b]).then(a.cmp(&b)));
    let mut dt_min = -fp / fpp.max(f64::EPSILON * fpp0);
    let mut t_old = 0.0;
    let mut next = 0;
    while next < order.len() {
        let b = order[next];
        let dt = t[b] - t_old;
        if dt_min < dt {
            break;
        }
        next += 1;
        let xb = if d[b] > 0.0 { upper[b] } else { lower[b] };
        let zb = xb - x[b];
        xcp[b] = xb;
        c += &p * dt;
        let gb = g[b];
        let wb = mem.w.row(b).transpose();
        let mwb = &mem.m * &wb;
        fp += dt * fpp + gb * gb + theta * gb * zb - gb * mwb.dot(&c);
        fpp -= theta * gb * gb + 2.0 * gb * mwb.dot(&p) + gb * gb * wb.dot(&mwb);
        fpp = fpp.max(f64::EPSILON * fpp0);
        p += &wb * gb;
        d[b] = 0.0;
        dt_min = -fp / fpp;
        t_old = t[b];
    }
    let dt_min = dt_min.max(0.0);
    let t_final = t_old + dt_min;
    for i in 0..n {
        if d[i] != 0.0 {
            xcp[i] = (x[i] + t_final * d[i]).clamp(lower[i], upper[i]);
        }
    }
    c += &p * dt_min;
    (xcp, c)
}

/// Minimizes the model over variables free at the Cauchy point and truncates the result
/// to the box.
fn subspace_minimum(
    x: &[f64],
    g: &[f64],
    lower: &[f64],
    upper: &[f64],
    xcp: &[f64],
    c: &DVector<f64>,
    mem: &Memory,
) -> Vec<f64> {
    let free: Vec<usize> = (0..x.len()).filter(|&i| xcp[i] > lower[i] && xcp[i] < upper[i]).collect();
    if free.is_empty() {
        return xcp.to_vec();
    }
    let theta = mem.theta;
    let cols = mem.w.ncols();
    let mc = &mem.m * c;
    let wz = mem.w.select_rows(&free);
    let r: DVector<f64> = DVector::from_iterator(
        free.len(),
        free.iter().map(|&i| g[i] + theta * (xcp[i] - x[i]) - mem.w.row(i).dot(&mc.transpose())),
    );
    let mut du = &r * (-1.0 / theta);
    if cols > 0 {
        let v = &mem.m * wz.tr_mul(&r);
        let nmat = DMatrix::identity(cols, cols) - (&mem.m * wz.tr_mul(&wz)) / theta;
        if let Some(v) = nmat.lu().solve(&v) {
            du -= (&wz * v) / (theta * theta);
        }
    }
    let mut alpha: f64 = 1.0;
    for (k, &i) in free.iter().enumerate() {
        if du[k] > 0.0 {
            alpha = alpha.min((upper[i] - xcp[i]) / du[k]);
        } else if du[k] < 0.0 {
            alpha = alpha.min((lower[i] - xcp[i]) / du[k]);
        }
    }
    let alpha = alpha.max(0.0);
    let mut xbar = xcp.to_vec();
    for (k, &i) in free.iter().enumerate() {
        xbar[i] = (xcp[i] + alpha * du[k]).clamp(lower[i], upper[i]);
    }
    xbar
}

struct Evaluated {
    step: f64,
    f: f64,
    g: Vec<f64>,
    x: Vec<f64>,
}

struct LineSearch<'a, F> {
    fun: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    lower: &'a [f64],
    upper: &'a [f64],
    f0: f64,
    dg0: f64,
    evaluations: usize,
    budget: usize,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> LineSearch<'_, F> {
    fn eval(&mut self, step: f64) -> Result<(Evaluated, f64)> {
        let x: Vec<f64> = (0..self.x.len())
            .map(|i| (self.x[i] + step * self.d[i]).clamp(self.lower[i], self.upper[i]))
            .collect();
        self.evaluations += 1;
        let (f, g) = (self.fun)(&x)?;
        let dg = g.iter().zip(self.d).map(|(a, b)| a * b).sum();
        Ok((Evaluated { step, f, g, x }, dg))
    }

    fn armijo(&self, e: &Evaluated, c1: f64) -> bool {
        e.f <= self.f0 + c1 * e.step * self.dg0
    }

    /// Strong-Wolfe search on `(0, step_max]`. Returns the accepted point, or the best
    /// point with sufficient decrease when the search runs out of evaluations.
    fn search(&mut self, step0: f64, step_max: f64, c1: f64, c2: f64) -> Result<Option<Evaluated>> {
        let mut best: Option<Evaluated> = None;
        let (mut lo_step, mut lo_f, mut lo_dg) = (0.0, self.f0, self.dg0);
        let mut step = step0.min(step_max);
        let mut first = true;
        let bracket = loop {
            if self.evaluations >= self.budget {
                return Ok(best);
            }
            let (e, dg) = self.eval(step)?;
            if !e.f.is_finite() {
                step = 0.5 * (lo_step + step);
                continue;
            }
            if !self.armijo(&e, c1) || (!first && e.f >= lo_f) {
                break (lo_step, lo_f, lo_dg, e.step, e.f, dg);
            }
            if dg.abs() <= -c2 * self.dg0 {
                return Ok(Some(e));
            }
            if dg >= 0.0 {
                break (e.step, e.f, dg, lo_step, lo_f, lo_dg);
            }
            if step >= step_max {
                return Ok(Some(e));
            }
            first = false;
            lo_step = e.step;
            lo_f = e.f;
            lo_dg = dg;
            step = (2.0 * step).min(step_max);
            best = Some(e);
        };
        let (mut a_lo, mut f_lo, mut dg_lo, mut a_hi, mut f_hi, mut dg_hi) = bracket;
        for _ in 0..self.budget {
            if self.evaluations >= self.budget || (a_hi - a_lo).abs() <= 1e-14 * a_hi.abs().max(1e-300) {
                break;
            }
            let a = interpolate(a_lo, f_lo, dg_lo, a_hi, f_hi, dg_hi);
            let (e, dg) = self.eval(a)?;
            if !self.armijo(&e, c1) || e.f >= f_lo {
                a_hi = a;
                f_hi = e.f;
                dg_hi = dg;
            } else {
                if dg.abs() <= -c2 * self.dg0 {
                    return Ok(Some(e));
                }
                if dg * (a_hi - a_lo) >= 0.0 {
                    a_hi = a_lo;
                    f_hi = f_lo;
                    dg_hi = dg_lo;
                }
                a_lo = a;
                f_lo = e.f;
                dg_lo = dg;
                best = Some(e);
            }
        }
        Ok(best)
    }
}

// Cubic interpolation safeguarded to the middle 80% of the bracket.
fn interpolate(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let width = hi - lo;
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    let mut t = f64::NAN;
    if disc >= 0.0 {
        let d2 = (b - a).signum() * disc.sqrt();
        t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    }
    if !t.is_finite() || t < lo + 0.1 * width || t > hi - 0.1 * width {
        t = 0.5 * (lo + hi);
    }
    t
}

pub fn minimize<F>(fun: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &LbfgsbOptions) -> Result<LbfgsbResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_with(fun, x0, lower, upper, opts, &mut |_| {})
}

/// As [`minimize`], calling `observer` after every accepted iteration.
pub fn minimize_with<F>(
    mut fun: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LbfgsbOptions,
    observer: &mut dyn FnMut(&IterationInfo<'_>),
) -> Result<LbfgsbResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    Error::check_len(n, lower.len())?;
    Error::check_len(n, upper.len())?;
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::param("lower bounds must not exceed upper bounds"));
    }
    if opts.memory == 0 || opts.max_evaluations == 0 {
        return Err(Error::param("memory and evaluation budget must be positive"));
    }
    let mut x: Vec<f64> = (0..n).map(|i| x0[i].clamp(lower[i], upper[i])).collect();
    let (mut f, mut g) = fun(&x)?;
    Error::check_len(n, g.len())?;
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut mem = Memory::new(n, opts.memory);
    let finish = |x, f, grad, iterations, evaluations, termination| {
        Ok(LbfgsbResult { x, f, grad, iterations, evaluations, termination })
    };
    loop {
        if projected_gradient_norm(&x, &g, lower, upper) <= opts.pgtol {
            return finish(x, f, g, iterations, evaluations, Termination::ProjectedGradient);
        }
        if iterations >= opts.max_iterations {
            return finish(x, f, g, iterations, evaluations, Termination::MaxIterations);
        }
        if evaluations >= opts.max_evaluations {
            return finish(x, f, g, iterations, evaluations, Termination::MaxEvaluations);
        }
        let mut attempt = 0;
        let accepted = loop {
            let (xcp, c) = cauchy_point(&x, &g, lower, upper, &mem);
            let xbar = if mem.is_empty() { xcp } else { subspace_minimum(&x, &g, lower, upper, &xcp, &c, &mem) };
            let d: Vec<f64> = xbar.iter().zip(&x).map(|(a, b)| a - b).collect();
            let dg0: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            let dnorm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(dg0 < 0.0) || dnorm == 0.0 {
                if mem.is_empty() {
                    break None;
                }
                mem.reset();
                continue;
            }
            let step0 = if iterations == 0 && mem.is_empty() { (1.0 / dnorm).min(1.0) } else { 1.0 };
            let mut ls = LineSearch {
                fun: &mut fun,
                x: &x,
                d: &d,
                lower,
                upper,
                f0: f,
                dg0,
                evaluations,
                budget: opts.max_evaluations.min(evaluations + opts.max_line_search),
            };
            let found = ls.search(step0, 1.0, opts.c1, opts.c2)?;
            evaluations = ls.evaluations;
            match found {
                Some(e) => break Some(e),
                None if attempt == 0 && !mem.is_empty() && evaluations < opts.max_evaluations => {
                    mem.reset();
                    attempt += 1;
                }
                None => break None,
            }
        };
        let Some(e) = accepted else {
            let term =
                if evaluations >= opts.max_evaluations { Termination::MaxEvaluations } else { Termination::LineSearchFailed };
            return finish(x, f, g, iterations, evaluations, term);
        };
        iterations += 1;
        let s = DVector::from_iterator(n, e.x.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, e.g.iter().zip(&g).map(|(a, b)| a - b));
        let f_prev = f;
        x = e.x;
        f = e.f;
        g = e.g;
        mem.push(s, y);
        observer(&IterationInfo { iteration: iterations, evaluations, x: &x, f });
        if (f_prev - f) / f_prev.abs().max(f.abs()).max(1.0) <= opts.ftol {
            return finish(x, f, g, iterations, evaluations, Termination::FunctionChange);
        }
    }
}
