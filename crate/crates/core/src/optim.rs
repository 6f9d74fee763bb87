//! Box-bounded quasi-Newton maximization and small linear-algebra helpers shared by
//! the COM-Poisson fitter and the baselines.

use nalgebra::{DMatrix, DVector};

/// Objective to be maximized. `None` means "outside the domain" and is
/// treated as `−∞` by the line search.
pub trait Objective {
    fn value(&self, theta: &DVector<f64>) -> Option<f64>;
    fn value_grad(&self, theta: &DVector<f64>) -> Option<(f64, DVector<f64>)>;

    /// Inverse of the negated Hessian, or a positive definite stand-in such
    /// as the inverse expected information, at `theta`. When supplied it
    /// replaces the BFGS approximation at every iteration (scoring steps).
    fn curvature(&self, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
}

impl Bound {
    pub const FREE: Bound = Bound {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxSettings {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Step,
    MaxIter,
    LineSearch,
    /// No ascent step exists at working precision: even a step along the
    /// exact curvature predicts a gain below the rounding level of the
    /// objective.
    Precision,
}

#[derive(Debug, Clone)]
pub struct MaxOutcome {
    pub theta: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective value after each accepted step, starting point first.
    pub trace: Vec<f64>,
    pub at_lower: Vec<bool>,
    pub at_upper: Vec<bool>,
}

impl MaxOutcome {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::Gradient | Termination::Step | Termination::Precision
        )
    }
}

fn project(theta: &mut DVector<f64>, bounds: &[Bound]) {
    for (t, b) in theta.iter_mut().zip(bounds) {
        *t = t.clamp(b.lower, b.upper);
    }
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximizes `obj` from `theta0` inside the box `bounds`.
///
/// `inv_hess0` is an initial approximation of the inverse of the negated
/// Hessian (positive definite); the identity is used when absent. Returns
/// `None` if the objective is undefined at the projected starting point.
pub fn maximize<O: Objective + ?Sized>(
    obj: &O,
    theta0: DVector<f64>,
    bounds: &[Bound],
    settings: &MaxSettings,
    inv_hess0: Option<DMatrix<f64>>,
) -> Option<MaxOutcome> {
    let k = theta0.len();
    assert_eq!(bounds.len(), k);
    let mut theta = theta0;
    project(&mut theta, bounds);
    let (mut f, mut g) = obj.value_grad(&theta)?;
    if !f.is_finite() {
        return None;
    }
    let fallback = |k: usize| DMatrix::<f64>::identity(k, k);
    let init = inv_hess0
        .filter(|h| h.nrows() == k && h.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| fallback(k));
    let mut h = init.clone();
    // `exact`: `h` came from `obj.curvature` at the current point.
    // `fresh`: `h` carries no quasi-Newton updates yet.
    let mut exact = false;
    let mut fresh = true;
    let mut trace = vec![f];
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;

    let active = |theta: &DVector<f64>, g: &DVector<f64>| -> Vec<bool> {
        (0..k)
            .map(|j| {
                (theta[j] <= bounds[j].lower && g[j] < 0.0)
                    || (theta[j] >= bounds[j].upper && g[j] > 0.0)
            })
            .collect()
    };

    while iterations < settings.max_iter {
        if let Some(c) = obj
            .curvature(&theta)
            .filter(|c| c.nrows() == k && c.iter().all(|v| v.is_finite()))
        {
            h = c;
            exact = true;
            fresh = true;
        }
        let act = active(&theta, &g);
        let mut pg = g.clone();
        for j in 0..k {
            if act[j] {
                pg[j] = 0.0;
            }
        }
        if max_abs(&pg) <= settings.grad_tol {
            termination = Termination::Gradient;
            break;
        }
        let mut h_free = h.clone();
        for (j, _) in act.iter().enumerate().filter(|(_, &a)| a) {
            h_free.row_mut(j).fill(0.0);
            h_free.column_mut(j).fill(0.0);
        }
        let mut d = &h_free * &pg;
        if d.dot(&pg) <= 0.0 || !d.iter().all(|v| v.is_finite()) {
            h = init.clone();
            exact = false;
            fresh = true;
            d = pg.clone();
        }
        if fresh && h == fallback(k) {
            // Unscaled gradient steps can be wildly off; cap the first move.
            let m = max_abs(&d);
            if m > 1.0 {
                d /= m;
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = &theta + &d * t;
            project(&mut cand, bounds);
            let s = &cand - &theta;
            if max_abs(&s) == 0.0 {
                break;
            }
            if let Some(fc) = obj.value(&cand) {
                if fc.is_finite() && fc >= f + 1e-4 * g.dot(&s) && fc >= f {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            if !fresh {
                h = init.clone();
                fresh = true;
                continue;
            }
            let gain = 0.5 * d.dot(&pg);
            termination = if exact && gain <= 1e-12 * (1.0 + f.abs()) {
                Termination::Precision
            } else {
                Termination::LineSearch
            };
            break;
        };
        // The line-search value is kept so the recorded values never
        // decrease through rounding differences between the two methods.
        let Some((_, gc)) = obj.value_grad(&cand) else {
            termination = Termination::LineSearch;
            break;
        };
        iterations += 1;
        let s = &cand - &theta;
        if !exact {
            // BFGS update with the curvature of the negated objective.
            let yv = &g - &gc;
            let sy = s.dot(&yv);
            if sy > 1e-12 * s.norm() * yv.norm() {
                let rho = 1.0 / sy;
                let hy = &h * &yv;
                let yhy = yv.dot(&hy);
                h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                    - (&hy * s.transpose() + &s * hy.transpose()) * rho;
                fresh = false;
            }
        }
        theta = cand;
        f = fc;
        g = gc;
        trace.push(f);
        if max_abs(&s) <= settings.step_tol {
            termination = Termination::Step;
            break;
        }
    }

    let at_lower = (0..k).map(|j| theta[j] <= bounds[j].lower).collect();
    let at_upper = (0..k).map(|j| theta[j] >= bounds[j].upper).collect();
    Some(MaxOutcome {
        theta,
        value: f,
        grad: g,
        iterations,
        termination,
        trace,
        at_lower,
        at_upper,
    })
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, falling back
/// to LU. `None` if the matrix is numerically singular.
pub fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        let inv = ch.inverse();
        if inv.iter().all(|v| v.is_finite()) {
            return Some(symmetrize(inv));
        }
    }
    let inv = m.clone().try_inverse()?;
    if inv.iter().all(|v| v.is_finite()) {
        Some(symmetrize(inv))
    } else {
        None
    }
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Hessian by central differences of an analytic gradient.
pub fn numerical_hessian<O: Objective + ?Sized>(
    obj: &O,
    theta: &DVector<f64>,
) -> Option<DMatrix<f64>> {
    let k = theta.len();
    let mut hess = DMatrix::zeros(k, k);
    for j in 0..k {
        let step = 1e-5 * (1.0 + theta[j].abs());
        let mut up = theta.clone();
        up[j] += step;
        let mut dn = theta.clone();
        dn[j] -= step;
        let (_, gu) = obj.value_grad(&up)?;
        let (_, gd) = obj.value_grad(&dn)?;
        let col = (gu - gd) / (2.0 * step);
        hess.set_column(j, &col);
    }
    Some(symmetrize(hess))
}
