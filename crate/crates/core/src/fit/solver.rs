//! Proximal gradient solver for the PSD-constrained, L1-penalized weighted
//! least squares fit of a Mahalanobis matrix.
//!
//! Objective: `sum_i w_i (t_i - u_i^T A u_i)^2 + l1 * sum_jk |A_jk|` over
//! symmetric PSD `A`. Each iteration takes a gradient step on the smooth
//! part and applies the proximal map of `l1 |.|_1 + indicator(PSD)`. The
//! proximal map is computed by Dykstra's splitting: soft-threshold, then
//! eigenvalue clipping, repeated with correction terms until it settles.
//! Acceleration is the monotone variant of FISTA, so the objective over
//! accepted iterates never increases.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::project_psd_raw;
use crate::metric::quadratic_form;

use super::{FitConfig, MatrixStructure};

/// A weighted least squares problem in quadratic-form features.
#[derive(Clone, Debug)]
pub struct PsdProblem {
    pub diffs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct SolverOutcome {
    pub matrix: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value of every accepted iterate, starting with the initial
    /// point.
    pub history: Vec<f64>,
}

impl PsdProblem {
    pub fn new(diffs: Vec<Vec<f64>>, targets: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = diffs.len();
        if n == 0 {
            return Err(Error::Empty("no samples to fit".into()));
        }
        if targets.len() != n || weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: targets.len().min(weights.len()),
            });
        }
        let dim = diffs[0].len();
        if let Some(bad) = diffs.iter().find(|u| u.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Config(format!("weights must be finite and >= 0, got {w}")));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Oracle("non-finite black-box distance".into()));
        }
        Ok(PsdProblem {
            diffs,
            targets,
            weights,
            dim,
        })
    }

    /// True when no sample carries any signal about `A`.
    pub fn is_degenerate(&self) -> bool {
        self.diffs
            .iter()
            .zip(&self.weights)
            .all(|(u, w)| *w == 0.0 || u.iter().all(|v| *v == 0.0))
    }

    pub fn predictions(&self, a: &DMatrix<f64>) -> Vec<f64> {
        self.diffs
            .iter()
            .map(|u| quadratic_form(u, a).expect("dimensions checked"))
            .collect()
    }

    /// Weighted squared loss.
    pub fn loss(&self, a: &DMatrix<f64>) -> f64 {
        self.diffs
            .iter()
            .zip(&self.targets)
            .zip(&self.weights)
            .map(|((u, t), w)| {
                let r = t - quadratic_form(u, a).expect("dimensions checked");
                w * r * r
            })
            .sum()
    }

    pub fn objective(&self, a: &DMatrix<f64>, l1: f64) -> f64 {
        self.loss(a) + l1 * a.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn gradient(&self, a: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        let d = self.dim;
        let mut g = DMatrix::<f64>::zeros(d, d);
        let mut loss = 0.0;
        for ((u, t), w) in self.diffs.iter().zip(&self.targets).zip(&self.weights) {
            if *w == 0.0 {
                continue;
            }
            let r = t - quadratic_form(u, a).expect("dimensions checked");
            loss += w * r * r;
            let c = -2.0 * w * r;
            for j in 0..d {
                if u[j] == 0.0 {
                    continue;
                }
                let cj = c * u[j];
                for k in 0..d {
                    g[(j, k)] += cj * u[k];
                }
            }
        }
        (g, loss)
    }

    /// Power iteration on the Hessian operator `A -> 2 sum w <uu^T, A> uu^T`.
    fn lipschitz_estimate(&self) -> f64 {
        let d = self.dim;
        let mut v = DMatrix::<f64>::from_element(d, d, 1.0 / d.max(1) as f64);
        let mut lambda = 0.0;
        for _ in 0..50 {
            let mut hv = DMatrix::<f64>::zeros(d, d);
            for (u, w) in self.diffs.iter().zip(&self.weights) {
                let s = 2.0 * w * quadratic_form(u, &v).expect("dimensions checked");
                if s == 0.0 {
                    continue;
                }
                for j in 0..d {
                    for k in 0..d {
                        hv[(j, k)] += s * u[j] * u[k];
                    }
                }
            }
            let norm = hv.norm();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm / v.norm();
            v = hv / norm;
        }
        lambda
    }
}

fn soft_threshold(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    if t == 0.0 {
        return m.clone();
    }
    m.map(|v| v.signum() * (v.abs() - t).max(0.0))
}

fn project(m: &DMatrix<f64>, structure: MatrixStructure) -> Result<DMatrix<f64>> {
    match structure {
        MatrixStructure::Full => project_psd_raw(m),
        MatrixStructure::Diagonal => {
            let d = m.nrows();
            Ok(DMatrix::from_fn(d, d, |j, k| if j == k { m[(j, j)].max(0.0) } else { 0.0 }))
        }
    }
}

/// Proximal map of `t |.|_1 + indicator(feasible set)` at `v`.
pub(crate) fn prox(v: &DMatrix<f64>, t: f64, structure: MatrixStructure) -> Result<DMatrix<f64>> {
    let first = project(&soft_threshold(v, t), structure)?;
    if t == 0.0 {
        return Ok(first);
    }
    let scale = v.norm().max(1.0);
    let mut x = v.clone();
    let mut p = DMatrix::<f64>::zeros(v.nrows(), v.ncols());
    let mut q = p.clone();
    let mut out = first;
    for _ in 0..5000 {
        let y = soft_threshold(&(&x + &p), t);
        p = &x + &p - &y;
        let next = project(&(&y + &q), structure)?;
        q = &y + &q - &next;
        let change = (&next - &x).norm();
        let gap = (&next - &y).norm();
        x = next;
        out = x.clone();
        if change <= 1e-15 * scale && gap <= 1e-12 * scale {
            break;
        }
    }
    Ok(out)
}

pub fn solve(problem: &PsdProblem, cfg: &FitConfig, init: Option<&DMatrix<f64>>) -> Result<SolverOutcome> {
    cfg.validate()?;
    let d = problem.dim;
    let l1 = cfg.l1_weight;
    let mut x = match init {
        Some(m) => {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: m.nrows(),
                });
            }
            project(m, cfg.structure)?
        }
        None => DMatrix::zeros(d, d),
    };
    let mut fx = problem.objective(&x, l1);
    let mut history = vec![fx];
    if problem.is_degenerate() {
        return Ok(SolverOutcome {
            matrix: DMatrix::zeros(d, d),
            objective: problem.objective(&DMatrix::zeros(d, d), l1),
            iterations: 0,
            converged: true,
            history,
        });
    }

    let lip = problem.lipschitz_estimate();
    let mut step = if lip > 0.0 { 1.0 / (1.01 * lip) } else { 1.0 };
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let (g, fy_smooth) = problem.gradient(&y);
        let mut z;
        loop {
            z = prox(&(&y - &g * step), step * l1, cfg.structure)?;
            let diff = &z - &y;
            let bound = fy_smooth + g.dot(&diff) + diff.norm_squared() / (2.0 * step);
            let fz_smooth = problem.loss(&z);
            if fz_smooth <= bound + 1e-12 * bound.abs().max(1e-300) || step < 1e-300 {
                break;
            }
            step *= cfg.backtrack_shrink;
        }
        let fz = problem.objective(&z, l1);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let (x_next, fx_next, restart) = if fz <= fx { (z.clone(), fz, false) } else { (x.clone(), fx, true) };
        let gm = (&z - &y).norm();
        y = if restart {
            x_next.clone()
        } else {
            &x_next + (&z - &x_next) * (t / t_next) + (&x_next - &x) * ((t - 1.0) / t_next)
        };
        let decrease = fx - fx_next;
        let rel = decrease / fx.abs().max(1e-300);
        x = x_next;
        fx = fx_next;
        history.push(fx);
        t = if restart { 1.0 } else { t_next };
        let xnorm = x.norm().max(1.0);
        if !restart && rel <= cfg.tol && gm <= cfg.tol.sqrt() * 1e-2 * xnorm {
            converged = true;
            break;
        }
        if fx == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(SolverOutcome {
        matrix: x,
        objective: fx,
        iterations,
        converged,
        history,
    })
}
