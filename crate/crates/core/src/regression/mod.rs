//! Regression likelihoods for the global abundance law and the per-node
//! splits, the quasi-Newton optimizer, and information criteria.
//!
//! The joint log-likelihood of a tree regression is the sum of one global
//! term and one term per internal node, each with its own parameters, so
//! every part is fitted on its own.

mod global;
mod node;
mod optim;

use serde::{Deserialize, Serialize};

pub use global::{fit_global, global_loglik, GlobalData, GlobalFamily, GlobalFit, GlobalLayout, GlobalRegSpec};
pub use node::{
    fit_node, node_loglik, select_node_model, Candidate, CandidateOutcome, NodeData, NodeFit, NodeLayout,
    NodeRegSpec, NodeSelection, SplitFamily, ZiSide, DEFAULT_CANDIDATES,
};
pub use optim::{maximize, standard_errors, ConvergenceReport, Maximum, OptimControls, StopReason};

/// Link function between a parameter and its linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logit,
    Log,
}

impl Link {
    pub fn apply(self, mu: f64) -> f64 {
        match self {
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Log => mu.ln(),
        }
    }

    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Logit => logistic(eta),
            Link::Log => eta.exp(),
        }
    }
}

/// Which model parameter a linear predictor drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    SplitProportion,
    SplitDispersion,
    ZeroInflation,
    GlobalMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub parameter: Parameter,
    pub link: Link,
}

pub const LINKS: [LinkSpec; 4] = [
    LinkSpec { parameter: Parameter::SplitProportion, link: Link::Logit },
    LinkSpec { parameter: Parameter::SplitDispersion, link: Link::Log },
    LinkSpec { parameter: Parameter::ZeroInflation, link: Link::Logit },
    LinkSpec { parameter: Parameter::GlobalMean, link: Link::Log },
];

/// Design columns used by a zero-inflation predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZiDesign {
    /// Constant π (first design column only).
    #[default]
    Intercept,
    /// π regressed on every covariate.
    Full,
}

impl ZiDesign {
    pub fn n_cols(self, n_x: usize) -> usize {
        match self {
            ZiDesign::Intercept => 1,
            ZiDesign::Full => n_x,
        }
    }
}

/// Logistic cdf `F`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic density `f = F(1 - F)`.
pub fn logistic_density(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `ln F(x)` without overflow.
pub fn log_logistic(x: f64) -> f64 {
    -softplus(-x)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logit(p: f64) -> f64 {
    Link::Logit.apply(p)
}

pub fn aic(loglik: f64, k: usize) -> f64 {
    -2.0 * loglik + 2.0 * k as f64
}

/// BIC with `n_obs` informative observations. `n_obs = 0` carries no
/// penalty.
pub fn bic(loglik: f64, k: usize, n_obs: usize) -> f64 {
    let penalty = if n_obs == 0 { 0.0 } else { (n_obs as f64).ln() };
    -2.0 * loglik + k as f64 * penalty
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(g: &mut [f64], scale: f64, x: &[f64]) {
    g.iter_mut().zip(x).for_each(|(gi, xi)| *gi += scale * xi);
}
