//! BFGS ascent with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const C1: f64 = 1e-4;
const C2: f64 = 0.1;
const MAX_LINE_STEPS: usize = 50;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimControls {
    /// Stop when the gradient's largest absolute entry falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step changes the log-likelihood by less than
    /// this fraction.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for OptimControls {
    fn default() -> Self {
        OptimControls {
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Gradient,
    RelativeChange,
    MaxIterations,
    LineSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    pub reason: StopReason,
}

impl ConvergenceReport {
    pub fn converged(&self) -> bool {
        matches!(self.reason, StopReason::Gradient | StopReason::RelativeChange)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub params: Vec<f64>,
    pub loglik: f64,
    pub report: ConvergenceReport,
}

/// Objective wrapper that negates the log-likelihood so the search
/// minimizes, and counts evaluations.
struct Objective<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Objective<F> {
    fn eval(&mut self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        self.evaluations += 1;
        let (ll, g) = (self.f)(x.as_slice());
        if !ll.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((-ll, -DVector::from_vec(g)))
    }
}

struct Point {
    alpha: f64,
    phi: f64,
    dphi: f64,
    grad: DVector<f64>,
}

/// Maximizes `f`, which returns the log-likelihood and its gradient.
pub fn maximize<F>(f: F, init: &[f64], controls: &OptimControls) -> Result<Maximum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut obj = Objective { f, evaluations: 0 };
    let n = init.len();
    let mut x = DVector::from_column_slice(init);
    let (mut phi, mut g) = obj.eval(&x).ok_or_else(|| Error::Optimization {
        message: "log-likelihood or gradient not finite at the initial point".into(),
        iterations: 0,
        grad_norm: f64::NAN,
    })?;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iter = 0;
    let reason = loop {
        let gnorm = g.amax();
        if gnorm < controls.grad_tol {
            break StopReason::Gradient;
        }
        if iter >= controls.max_iter {
            break StopReason::MaxIterations;
        }
        let mut d = -(&h * &g);
        let mut dphi0 = d.dot(&g);
        if dphi0.is_nan() || dphi0 >= 0.0 {
            h.fill_with_identity();
            fresh = true;
            d = -g.clone();
            dphi0 = d.dot(&g);
        }
        let alpha0 = if fresh { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let step = line_search(&mut obj, &x, &d, phi, dphi0, alpha0).map_err(|()| Error::Optimization {
            message: "log-likelihood stayed non-finite after repeated step halving".into(),
            iterations: iter,
            grad_norm: gnorm,
        })?;
        let Some(p) = step else {
            if fresh {
                break StopReason::LineSearch;
            }
            h.fill_with_identity();
            fresh = true;
            iter += 1;
            continue;
        };
        iter += 1;
        let s = &d * p.alpha;
        let y = &p.grad - &g;
        let change = (phi - p.phi).abs();
        let scale = phi.abs().max(1.0);
        x += &s;
        phi = p.phi;
        g = p.grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h *= sy / y.dot(&y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(s·Hyᵀ + Hy·sᵀ) + (ρ²·yᵀHy + ρ)·s·sᵀ
            h.ger(-rho, &s, &hy, 1.0);
            h.ger(-rho, &hy, &s, 1.0);
            h.ger(rho * rho * yhy + rho, &s, &s, 1.0);
        }
        if change <= controls.rel_tol * scale {
            break if g.amax() < controls.grad_tol {
                StopReason::Gradient
            } else {
                StopReason::RelativeChange
            };
        }
    };
    Ok(Maximum {
        params: x.as_slice().to_vec(),
        loglik: -phi,
        report: ConvergenceReport {
            iterations: iter,
            evaluations: obj.evaluations,
            grad_norm: g.amax(),
            reason,
        },
    })
}

/// Finds a step satisfying the strong Wolfe conditions. `Ok(None)` means no
/// acceptable decrease was found; `Err` means the objective was non-finite
/// at every halving.
fn line_search<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    obj: &mut Objective<F>,
    x: &DVector<f64>,
    d: &DVector<f64>,
    phi0: f64,
    dphi0: f64,
    alpha0: f64,
) -> std::result::Result<Option<Point>, ()> {
    let mut eval = |alpha: f64| {
        let mut a = alpha;
        for _ in 0..MAX_HALVINGS {
            if let Some((phi, grad)) = obj.eval(&(x + d * a)) {
                let dphi = grad.dot(d);
                return Ok(Point { alpha: a, phi, dphi, grad });
            }
            a *= 0.5;
        }
        Err(())
    };
    let mut prev = Point {
        alpha: 0.0,
        phi: phi0,
        dphi: dphi0,
        grad: DVector::zeros(0),
    };
    let mut alpha = alpha0;
    for i in 0..MAX_LINE_STEPS {
        let cur = eval(alpha)?;
        if cur.phi > phi0 + C1 * cur.alpha * dphi0 || (i > 0 && cur.phi >= prev.phi) {
            return zoom(&mut eval, prev, cur, phi0, dphi0);
        }
        if cur.dphi.abs() <= -C2 * dphi0 {
            return Ok(Some(cur));
        }
        if cur.dphi >= 0.0 {
            return zoom(&mut eval, cur, prev, phi0, dphi0);
        }
        let lo = 1.1 * cur.alpha;
        let hi = 10.0 * cur.alpha;
        alpha = cubic_min(&prev, &cur)
            .filter(|a| a.is_finite())
            .map_or(2.0 * cur.alpha, |a| a.clamp(lo, hi));
        prev = cur;
    }
    Ok(None)
}

fn zoom<E>(eval: &mut E, mut lo: Point, mut hi: Point, phi0: f64, dphi0: f64) -> std::result::Result<Option<Point>, ()>
where
    E: FnMut(f64) -> std::result::Result<Point, ()>,
{
    for _ in 0..MAX_LINE_STEPS {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= f64::EPSILON * b.max(1e-300) {
            break;
        }
        let guard = 0.1 * width;
        let trial = cubic_min(&lo, &hi)
            .filter(|t| t.is_finite() && *t >= a + guard && *t <= b - guard)
            .unwrap_or(0.5 * (a + b));
        let cur = match eval(trial) {
            Ok(p) if p.alpha == trial => p,
            _ => {
                // Non-finite inside the bracket: shrink toward the low end.
                hi = Point { alpha: trial, phi: f64::INFINITY, dphi: f64::NAN, grad: DVector::zeros(0) };
                continue;
            }
        };
        if cur.phi > phi0 + C1 * cur.alpha * dphi0 || cur.phi >= lo.phi {
            hi = cur;
        } else {
            if cur.dphi.abs() <= -C2 * dphi0 {
                return Ok(Some(cur));
            }
            if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Settle for sufficient decrease when curvature could not be met.
    Ok((lo.alpha > 0.0 && lo.phi < phi0).then_some(lo))
}

/// Minimizer of the cubic matching values and slopes at two points.
fn cubic_min(a: &Point, b: &Point) -> Option<f64> {
    if !(a.phi.is_finite() && b.phi.is_finite() && a.dphi.is_finite() && b.dphi.is_finite()) {
        return None;
    }
    let d1 = a.dphi + b.dphi - 3.0 * (a.phi - b.phi) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dphi * b.dphi;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let denom = b.dphi - a.dphi + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    Some(b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / denom)
}

/// Standard errors from the observed information, obtained by central
/// differences of the analytic gradient. `None` when the information is not
/// positive definite.
pub fn standard_errors<F>(mut f: F, at: &[f64]) -> Option<Vec<f64>>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = at.len();
    let mut info = DMatrix::<f64>::zeros(n, n);
    let mut x = at.to_vec();
    for j in 0..n {
        let h = 1e-5 * at[j].abs().max(1.0);
        x[j] = at[j] + h;
        let (_, gp) = f(&x);
        x[j] = at[j] - h;
        let (_, gm) = f(&x);
        x[j] = at[j];
        for i in 0..n {
            info[(i, j)] = -(gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let sym = (&info + info.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let inv = sym.cholesky()?.inverse();
    Some((0..n).map(|i| inv[(i, i)].sqrt()).collect())
}
