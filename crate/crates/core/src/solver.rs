//! Box-constrained quasi-Newton descent: BFGS curvature with backtracking
//! Armijo line search, bounds handled by projection at every iterate.
//!
//! The retargeting objectives are smooth almost everywhere and at most
//! 21-dimensional, and every control step warm-starts from the previous
//! solution, so this local method converges in a handful of iterations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("objective returned a non-finite cost at the start point")]
    NonFiniteCost,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop when the projected gradient norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop when the accepted step norm falls below this.
    pub step_tolerance: f64,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_line_search: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 50,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_line_search: 40,
        }
    }
}

/// Result of a minimization. `costs` holds the accepted cost sequence
/// (starting at the projected warm start) and is nonincreasing by
/// construction of the line search.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub cost: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub costs: Vec<f64>,
}

fn clamp(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        x.iter()
            .zip(lower.iter().zip(upper.iter()))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi)),
    )
}

/// Gradient with components pointing out of the feasible box zeroed; its norm
/// is the first-order stationarity measure under bound constraints.
fn projected_gradient(
    x: &DVector<f64>,
    g: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> DVector<f64> {
    const EDGE: f64 = 1e-12;
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| {
            let at_lower = (x[i] - lower[i]).abs() <= EDGE && g[i] > 0.0;
            let at_upper = (upper[i] - x[i]).abs() <= EDGE && g[i] < 0.0;
            if at_lower || at_upper {
                0.0
            } else {
                g[i]
            }
        }),
    )
}

/// Minimizes `eval` (cost and gradient) over the box `[lower, upper]` from
/// `x0`, deterministic given identical inputs.
pub fn minimize_box<F>(
    mut eval: F,
    x0: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<Minimum, SolverError>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = clamp(x0, lower, upper);
    let (mut f, mut g) = eval(&x);
    if !f.is_finite() {
        return Err(SolverError::NonFiniteCost);
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut costs = vec![f];
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        let pg = projected_gradient(&x, &g, lower, upper);
        if pg.norm() < cfg.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut dir = -(&h * &g);
        if dir.dot(&g) >= -1e-12 * dir.norm() * g.norm() {
            // Curvature estimate lost descent; restart from steepest descent.
            h = DMatrix::identity(n, n);
            dir = -g.clone();
        }

        let mut line_search = |dir: &DVector<f64>, f: f64, g: &DVector<f64>, x: &DVector<f64>| {
            let mut t = 1.0;
            for _ in 0..cfg.max_line_search {
                let x_new = clamp(&(x + dir * t), lower, upper);
                let step = &x_new - x;
                let step_norm = step.norm();
                if step_norm == 0.0 {
                    // Projection swallowed the whole step.
                    t *= cfg.backtrack_factor;
                    continue;
                }
                let gs = g.dot(&step);
                if gs < 0.0 {
                    let (f_new, g_new) = eval(&x_new);
                    if f_new.is_finite() && f_new <= f + cfg.armijo_c1 * gs {
                        return Some((x_new, step, step_norm, f_new, g_new));
                    }
                }
                t *= cfg.backtrack_factor;
            }
            None
        };

        let mut accepted = line_search(&dir, f, &g, &x);
        if accepted.is_none() && dir != -&g {
            // Projection can break a quasi-Newton direction near the bounds;
            // retry along the raw negative gradient.
            h = DMatrix::identity(n, n);
            accepted = line_search(&(-&g), f, &g, &x);
        }

        let Some((x_new, step, step_norm, f_new, g_new)) = accepted else {
            // No decrease along any search direction at line-search
            // resolution: accept the iterate as a local solution.
            converged = true;
            break;
        };

        let y = &g_new - &g;
        let sy = step.dot(&y);
        if sy > 1e-12 * step_norm * y.norm() {
            // Inverse BFGS update: H <- (I - r s y')H(I - r y s') + r s s'.
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            let s_hy_t = &step * hy.transpose();
            h -= (&s_hy_t + s_hy_t.transpose()) * rho;
            h += (&step * step.transpose()) * (rho * (1.0 + rho * yhy));
        }

        x = x_new;
        f = f_new;
        g = g_new;
        costs.push(f);

        if step_norm < cfg.step_tolerance {
            converged = true;
            break;
        }
    }

    if !converged {
        // Iteration cap: report the best iterate found, flagged unconverged.
        let pg = projected_gradient(&x, &g, lower, upper);
        if pg.norm() < cfg.gradient_tolerance {
            converged = true;
        }
    }

    let pg_norm = projected_gradient(&x, &g, lower, upper).norm();
    Ok(Minimum {
        x,
        cost: f,
        gradient_norm: pg_norm,
        iterations,
        converged,
        costs,
    })
}
