use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use super::{aic, axpy, bic, dot, log_logistic, logistic, logit, standard_errors, ConvergenceReport, OptimControls, ZiDesign};
use crate::data::Matrix;
use crate::dist::NodeSplitParams;
use crate::error::{Error, Result};
use crate::polya::{clamp_theta, digamma_diff, ln_rising, log_add_exp, PolyaKind, SplitTheta};
use crate::tree::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitFamily {
    Binomial,
    BetaBinomial,
}

impl SplitFamily {
    pub fn kind(self) -> PolyaKind {
        match self {
            SplitFamily::Binomial => PolyaKind::Multinomial,
            SplitFamily::BetaBinomial => PolyaKind::DirichletMultinomial,
        }
    }
}

/// Which child group, if any, carries a regressed structural-zero weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZiSide {
    None,
    Side1,
    Side2,
}

impl ZiSide {
    pub fn swapped(self) -> ZiSide {
        match self {
            ZiSide::None => ZiSide::None,
            ZiSide::Side1 => ZiSide::Side2,
            ZiSide::Side2 => ZiSide::Side1,
        }
    }

    fn is_boundary(self, n1: u64, n: u64) -> bool {
        match self {
            ZiSide::None => false,
            ZiSide::Side1 => n1 == 0,
            ZiSide::Side2 => n1 == n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub family: SplitFamily,
    pub zi_side: ZiSide,
}

pub const DEFAULT_CANDIDATES: [Candidate; 6] = {
    use SplitFamily::*;
    use ZiSide::*;
    [
        Candidate { family: Binomial, zi_side: None },
        Candidate { family: Binomial, zi_side: Side1 },
        Candidate { family: Binomial, zi_side: Side2 },
        Candidate { family: BetaBinomial, zi_side: None },
        Candidate { family: BetaBinomial, zi_side: Side1 },
        Candidate { family: BetaBinomial, zi_side: Side2 },
    ]
};

/// Shape of a node's parameter vector: `beta`, then `delta` (beta-binomial
/// only), then `b` (zero-inflated only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeLayout {
    pub family: SplitFamily,
    pub zi_side: ZiSide,
    pub n_x: usize,
    pub n_zi: usize,
}

impl NodeLayout {
    pub fn new(candidate: Candidate, n_x: usize, zi_design: ZiDesign) -> Self {
        let n_zi = match candidate.zi_side {
            ZiSide::None => 0,
            _ => zi_design.n_cols(n_x),
        };
        NodeLayout {
            family: candidate.family,
            zi_side: candidate.zi_side,
            n_x,
            n_zi,
        }
    }

    fn n_delta(&self) -> usize {
        match self.family {
            SplitFamily::Binomial => 0,
            SplitFamily::BetaBinomial => self.n_x,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_x + self.n_delta() + self.n_zi
    }

    /// Parameter labels given the design column names.
    pub fn param_names(&self, columns: &[String]) -> Vec<String> {
        let block = |name: &'static str, n: usize| columns[..n].iter().map(move |c| format!("{name}[{c}]"));
        block("beta", self.n_x)
            .chain(block("delta", self.n_delta()))
            .chain(block("b", self.n_zi))
            .collect()
    }
}

/// Coefficients of one node's split regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRegSpec {
    pub family: SplitFamily,
    pub zi_side: ZiSide,
    /// Drives `p_{B1}` through the logit link.
    pub beta: Vec<f64>,
    /// Drives `σ = 1/(θ1+θ2)` through the log link.
    pub delta: Option<Vec<f64>>,
    /// Drives the structural-zero weight of `zi_side` through the logit link.
    pub b: Option<Vec<f64>>,
}

impl NodeRegSpec {
    pub fn new(
        family: SplitFamily,
        zi_side: ZiSide,
        beta: Vec<f64>,
        delta: Option<Vec<f64>>,
        b: Option<Vec<f64>>,
    ) -> Result<Self> {
        let spec = NodeRegSpec {
            family,
            zi_side,
            beta,
            delta,
            b,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(m.to_string()));
        match (self.family, &self.delta) {
            (SplitFamily::Binomial, Some(_)) => return bad("binomial split carries no dispersion coefficients"),
            (SplitFamily::BetaBinomial, None) => return bad("beta-binomial split needs dispersion coefficients"),
            (SplitFamily::BetaBinomial, Some(d)) if d.len() != self.beta.len() => {
                return bad("dispersion and proportion coefficients differ in length")
            }
            _ => {}
        }
        match (self.zi_side, &self.b) {
            (ZiSide::None, Some(_)) => bad("zero-inflation coefficients without a zero-inflated side"),
            (ZiSide::Side1 | ZiSide::Side2, None) => bad("zero-inflated side without coefficients"),
            (_, Some(b)) if b.is_empty() || b.len() > self.beta.len() => {
                bad("zero-inflation coefficients must use 1..=p+1 design columns")
            }
            _ => Ok(()),
        }
    }

    /// Intercept-only plain binomial at `p_{B1} = logistic(intercept)`.
    pub fn binomial_intercept(intercept: f64, n_x: usize) -> Self {
        let mut beta = vec![0.0; n_x];
        beta[0] = intercept;
        NodeRegSpec {
            family: SplitFamily::Binomial,
            zi_side: ZiSide::None,
            beta,
            delta: None,
            b: None,
        }
    }

    pub fn candidate(&self) -> Candidate {
        Candidate {
            family: self.family,
            zi_side: self.zi_side,
        }
    }

    pub fn layout(&self) -> NodeLayout {
        NodeLayout {
            family: self.family,
            zi_side: self.zi_side,
            n_x: self.beta.len(),
            n_zi: self.b.as_ref().map_or(0, Vec::len),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().n_params()
    }

    pub fn to_params(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend(self.delta.iter().flatten());
        v.extend(self.b.iter().flatten());
        v
    }

    pub fn from_params(layout: &NodeLayout, params: &[f64]) -> Self {
        let (beta, rest) = params.split_at(layout.n_x);
        let (delta, b) = rest.split_at(layout.n_delta());
        NodeRegSpec {
            family: layout.family,
            zi_side: layout.zi_side,
            beta: beta.to_vec(),
            delta: (layout.family == SplitFamily::BetaBinomial).then(|| delta.to_vec()),
            b: (layout.zi_side != ZiSide::None).then(|| b.to_vec()),
        }
    }

    /// The equivalent model with the two children exchanged.
    pub fn swapped(&self) -> Self {
        NodeRegSpec {
            family: self.family,
            zi_side: self.zi_side.swapped(),
            beta: self.beta.iter().map(|v| -v).collect(),
            delta: self.delta.clone(),
            b: self.b.clone(),
        }
    }

    /// `p_{B1}(x)`.
    pub fn proportion(&self, x: &[f64]) -> f64 {
        logistic(dot(&self.beta, x))
    }

    /// `σ(x)`; zero for the binomial family.
    pub fn sigma(&self, x: &[f64]) -> f64 {
        self.delta.as_ref().map_or(0.0, |d| dot(d, x).exp())
    }

    /// Structural-zero weights `(π1, π2)` at `x`.
    pub fn zero_weights(&self, x: &[f64]) -> (f64, f64) {
        let pi = self.b.as_ref().map_or(0.0, |b| logistic(dot(b, &x[..b.len()])));
        match self.zi_side {
            ZiSide::None => (0.0, 0.0),
            ZiSide::Side1 => (pi, 0.0),
            ZiSide::Side2 => (0.0, pi),
        }
    }

    /// Mean proportion `p̃` of the given side at `x`.
    pub fn mean_proportion(&self, x: &[f64], side: Side) -> f64 {
        let (pi1, pi2) = self.zero_weights(x);
        let p = self.proportion(x);
        let q = logistic(-dot(&self.beta, x));
        match side {
            Side::First => pi2 + (1.0 - pi1 - pi2) * p,
            Side::Second => pi1 + (1.0 - pi1 - pi2) * q,
        }
    }

    /// Static split parameters at covariate row `x`.
    pub fn split_params(&self, x: &[f64]) -> Result<NodeSplitParams> {
        let eta = dot(&self.beta, x);
        let theta = match &self.delta {
            // θ only matters through p when c = 0.
            None => SplitTheta::new(clamp_theta(logistic(eta)), clamp_theta(logistic(-eta)))?,
            Some(d) => {
                let ed = dot(d, x);
                SplitTheta::new(
                    clamp_theta((log_logistic(eta) - ed).exp()),
                    clamp_theta((log_logistic(-eta) - ed).exp()),
                )?
            }
        };
        let (pi1, pi2) = self.zero_weights(x);
        NodeSplitParams::new(theta, self.family.kind(), pi1, pi2)
    }
}

/// Split observations `(n1, n)` at the sites where `n > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    n1: Vec<u64>,
    n: Vec<u64>,
    ln_choose: Vec<f64>,
    x: Matrix<f64>,
    sites: Vec<usize>,
}

impl NodeData {
    pub fn new(n1: &[u64], n: &[u64], design: &Matrix<f64>) -> Result<Self> {
        if n1.len() != n.len() || n.len() != design.nrows() {
            return Err(Error::Data(format!(
                "node data lengths differ: {} first-child totals, {} parent totals, {} design rows",
                n1.len(),
                n.len(),
                design.nrows()
            )));
        }
        if let Some(i) = (0..n.len()).find(|&i| n1[i] > n[i]) {
            return Err(Error::Data(format!(
                "site {i}: first-child total {} exceeds parent total {}",
                n1[i], n[i]
            )));
        }
        let sites: Vec<usize> = (0..n.len()).filter(|&i| n[i] > 0).collect();
        Ok(NodeData {
            n1: sites.iter().map(|&i| n1[i]).collect(),
            n: sites.iter().map(|&i| n[i]).collect(),
            ln_choose: sites.iter().map(|&i| ln_binomial(n[i], n1[i])).collect(),
            x: design.select_rows(&sites),
            sites,
        })
    }

    /// Number of informative sites (`n > 0`).
    pub fn n_obs(&self) -> usize {
        self.sites.len()
    }

    pub fn n_x(&self) -> usize {
        self.x.ncols()
    }

    /// Original indices of the informative sites.
    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    /// The same data seen from the other child.
    pub fn swapped(&self) -> Self {
        NodeData {
            n1: self.n1.iter().zip(&self.n).map(|(a, n)| n - a).collect(),
            ..self.clone()
        }
    }
}

/// Log-likelihood and gradient of a node spec.
pub fn node_loglik(spec: &NodeRegSpec, data: &NodeData) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    let layout = spec.layout();
    if layout.n_x != data.n_x() {
        return Err(Error::Data(format!(
            "node spec has {} coefficients per block, design has {} columns",
            layout.n_x,
            data.n_x()
        )));
    }
    Ok(loglik_at(&layout, &spec.to_params(), data))
}

pub(crate) fn loglik_at(layout: &NodeLayout, params: &[f64], data: &NodeData) -> (f64, Vec<f64>) {
    let n_x = layout.n_x;
    let beta = &params[..n_x];
    let delta = &params[n_x..n_x + layout.n_delta()];
    let b = &params[n_x + layout.n_delta()..];
    let mut ll = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (i, x) in data.x.rows().enumerate() {
        let (n1, n) = (data.n1[i], data.n[i]);
        let n2 = n - n1;
        let eta = dot(beta, x);
        let (lp, lq) = (log_logistic(eta), log_logistic(-eta));
        let (p, q) = (lp.exp(), lq.exp());
        let (mut lpmf, g_eta, g_delta) = match layout.family {
            SplitFamily::Binomial => (n1 as f64 * lp + n2 as f64 * lq, n1 as f64 - n as f64 * p, 0.0),
            SplitFamily::BetaBinomial => {
                let ed = dot(delta, x);
                let t1 = clamp_theta((lp - ed).exp());
                let t2 = clamp_theta((lq - ed).exp());
                let t = t1 + t2;
                let dt = digamma_diff(t, n);
                let a1 = (digamma_diff(t1, n1) - dt) * t1;
                let a2 = (digamma_diff(t2, n2) - dt) * t2;
                (
                    ln_rising(t1, n1) + ln_rising(t2, n2) - ln_rising(t, n),
                    a1 * q - a2 * p,
                    -(a1 + a2),
                )
            }
        };
        lpmf += data.ln_choose[i];
        let mut w = 1.0;
        if layout.zi_side != ZiSide::None {
            let xz = &x[..layout.n_zi];
            let ez = dot(b, xz);
            let (lpi, l1pi) = (log_logistic(ez), log_logistic(-ez));
            let pi = lpi.exp();
            let g_z = if layout.zi_side.is_boundary(n1, n) {
                let core = l1pi + lpmf;
                let total = log_add_exp(lpi, core);
                w = (core - total).exp();
                lpmf = total;
                1.0 - w - pi
            } else {
                lpmf += l1pi;
                -pi
            };
            axpy(&mut grad[n_x + layout.n_delta()..], g_z, xz);
        }
        ll += lpmf;
        axpy(&mut grad[..n_x], w * g_eta, x);
        if layout.family == SplitFamily::BetaBinomial {
            axpy(&mut grad[n_x..2 * n_x], w * g_delta, x);
        }
    }
    (ll, grad)
}

fn initial_params(layout: &NodeLayout, data: &NodeData) -> Vec<f64> {
    let tot1: u64 = data.n1.iter().sum();
    let tot: u64 = data.n.iter().sum();
    let p = (tot1 as f64 + 0.5) / (tot as f64 + 1.0);
    let q = 1.0 - p;
    let mut params = vec![0.0; layout.n_params()];
    params[0] = logit(p);
    if layout.family == SplitFamily::BetaBinomial {
        let (mut num, mut den) = (0.0, 0.0);
        for (&n1, &n) in data.n1.iter().zip(&data.n) {
            let n = n as f64;
            num += (n1 as f64 - n * p).powi(2) - n * p * q;
            den += n * (n - 1.0) * p * q;
        }
        let rho = if den > 0.0 { (num / den).clamp(0.01, 0.9) } else { 0.01 };
        params[layout.n_x] = (rho / (1.0 - rho)).ln();
    }
    if layout.zi_side != ZiSide::None {
        let m = data.n_obs().max(1) as f64;
        let observed = (0..data.n_obs())
            .filter(|&i| layout.zi_side.is_boundary(data.n1[i], data.n[i]))
            .count() as f64
            / m;
        let side_p = if layout.zi_side == ZiSide::Side1 { q } else { p };
        let expected = data.n.iter().map(|&n| side_p.powi(n.min(i32::MAX as u64) as i32)).sum::<f64>() / m;
        let pi = (observed - expected).clamp(0.01, 0.9);
        params[layout.n_x + layout.n_delta()] = logit(pi);
    }
    params
}

/// A fitted node model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFit {
    pub spec: NodeRegSpec,
    pub loglik: f64,
    /// Number of free parameters.
    pub k: usize,
    pub n_obs: usize,
    pub aic: f64,
    pub bic: f64,
    /// Standard errors in the order of [`NodeRegSpec::to_params`].
    pub se: Option<Vec<f64>>,
    pub report: Option<ConvergenceReport>,
}

/// Maximum likelihood fit of one candidate.
pub fn fit_node(
    candidate: Candidate,
    data: &NodeData,
    zi_design: ZiDesign,
    controls: &OptimControls,
    with_se: bool,
) -> Result<NodeFit> {
    let layout = NodeLayout::new(candidate, data.n_x(), zi_design);
    let init = initial_params(&layout, data);
    let m = super::maximize(|v| loglik_at(&layout, v, data), &init, controls)?;
    let se = with_se.then(|| standard_errors(|v| loglik_at(&layout, v, data), &m.params)).flatten();
    let k = layout.n_params();
    Ok(NodeFit {
        spec: NodeRegSpec::from_params(&layout, &m.params),
        loglik: m.loglik,
        k,
        n_obs: data.n_obs(),
        aic: aic(m.loglik, k),
        bic: bic(m.loglik, k, data.n_obs()),
        se,
        report: Some(m.report),
    })
}

/// One row of a node's model-selection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub candidate: Candidate,
    pub k: usize,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSelection {
    pub fit: NodeFit,
    pub candidates: Vec<CandidateOutcome>,
    /// Set when no candidate could be fitted and the fallback was used.
    pub flagged: bool,
    pub note: Option<String>,
}

/// Fits every candidate and keeps the AIC-minimal one; ties go to fewer
/// parameters, then to no zero inflation. Falls back to an intercept-only
/// binomial when nothing fits.
pub fn select_node_model(
    data: &NodeData,
    candidates: &[Candidate],
    zi_design: ZiDesign,
    controls: &OptimControls,
    with_se: bool,
) -> NodeSelection {
    let mut outcomes = Vec::with_capacity(candidates.len());
    let mut best: Option<NodeFit> = None;
    for &candidate in candidates {
        let k = NodeLayout::new(candidate, data.n_x(), zi_design).n_params();
        let result = if data.n_obs() == 0 {
            Err(Error::Data("no site has a positive total at this node".into()))
        } else {
            fit_node(candidate, data, zi_design, controls, false).and_then(|f| match &f.report {
                Some(r) if !r.converged() => Err(Error::Optimization {
                    message: format!("stopped without converging ({:?})", r.reason),
                    iterations: r.iterations,
                    grad_norm: r.grad_norm,
                }),
                _ => Ok(f),
            })
        };
        match result {
            Ok(fit) => {
                outcomes.push(CandidateOutcome {
                    candidate,
                    k,
                    loglik: Some(fit.loglik),
                    aic: Some(fit.aic),
                    error: None,
                });
                if best.as_ref().is_none_or(|b| preferred(&fit, b)) {
                    best = Some(fit);
                }
            }
            Err(e) => outcomes.push(CandidateOutcome {
                candidate,
                k,
                loglik: None,
                aic: None,
                error: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some(mut fit) => {
            if with_se {
                let layout = fit.spec.layout();
                fit.se = standard_errors(|v| loglik_at(&layout, v, data), &fit.spec.to_params());
            }
            NodeSelection {
                fit,
                candidates: outcomes,
                flagged: false,
                note: None,
            }
        }
        None => {
            let note = outcomes
                .iter()
                .find_map(|o| o.error.clone())
                .unwrap_or_else(|| "no candidate families".into());
            NodeSelection {
                fit: fallback_fit(data),
                candidates: outcomes,
                flagged: true,
                note: Some(note),
            }
        }
    }
}

const AIC_TIE: f64 = 1e-8;

fn preferred(a: &NodeFit, b: &NodeFit) -> bool {
    if (a.aic - b.aic).abs() > AIC_TIE * a.aic.abs().max(1.0) {
        return a.aic < b.aic;
    }
    if a.k != b.k {
        return a.k < b.k;
    }
    a.spec.zi_side == ZiSide::None && b.spec.zi_side != ZiSide::None
}

fn fallback_fit(data: &NodeData) -> NodeFit {
    let tot1: u64 = data.n1.iter().sum();
    let tot: u64 = data.n.iter().sum();
    let spec = NodeRegSpec::binomial_intercept(logit((tot1 as f64 + 0.5) / (tot as f64 + 1.0)), data.n_x());
    let (loglik, _) = loglik_at(&spec.layout(), &spec.to_params(), data);
    NodeFit {
        spec,
        loglik,
        k: 1,
        n_obs: data.n_obs(),
        aic: aic(loglik, 1),
        bic: bic(loglik, 1, data.n_obs()),
        se: None,
        report: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::log_zi_split_pmf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Matrix<f64> {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| std::iter::once(1.0).chain((0..p).map(|_| rng.random_range(-1.0..1.0))).collect())
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    fn simulate(spec: &NodeRegSpec, x: &Matrix<f64>, max_n: u64, rng: &mut ChaCha8Rng) -> NodeData {
        let mut n1 = Vec::new();
        let mut n = Vec::new();
        for row in x.rows() {
            let total = rng.random_range(0..=max_n);
            let (a, _) = spec.split_params(row).unwrap().sample(total, rng).unwrap();
            n1.push(a);
            n.push(total);
        }
        NodeData::new(&n1, &n, x).unwrap()
    }

    fn random_spec(rng: &mut ChaCha8Rng, c: Candidate, n_x: usize) -> NodeRegSpec {
        let mut v = || (0..n_x).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let beta = v();
        let delta = (c.family == SplitFamily::BetaBinomial).then(&mut v);
        let b = (c.zi_side != ZiSide::None).then(&mut v);
        NodeRegSpec::new(c.family, c.zi_side, beta, delta, b).unwrap()
    }

    #[test]
    fn single_symmetric_site() {
        let x = Matrix::new(1, 1, vec![1.0]).unwrap();
        let data = NodeData::new(&[1], &[2], &x).unwrap();
        let spec = NodeRegSpec::binomial_intercept(0.0, 1);
        let (ll, g) = node_loglik(&spec, &data).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(g, [0.0]);
    }

    #[test]
    fn likelihood_matches_split_pmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = design(&mut rng, 30, 2);
        for c in DEFAULT_CANDIDATES {
            let spec = random_spec(&mut rng, c, 3);
            let data = simulate(&spec, &x, 12, &mut rng);
            let (ll, _) = node_loglik(&spec, &data).unwrap();
            let direct: f64 = data
                .x
                .rows()
                .enumerate()
                .map(|(i, row)| {
                    let params = spec.split_params(row).unwrap();
                    log_zi_split_pmf(data.n1[i], data.n[i] - data.n1[i], &params).unwrap()
                })
                .sum();
            assert!((ll - direct).abs() < 1e-9 * direct.abs(), "{c:?}: {ll} vs {direct}");
        }
    }

    #[test]
    fn vanishing_zero_weight_reduces() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = design(&mut rng, 25, 1);
        let plain = NodeRegSpec::new(SplitFamily::BetaBinomial, ZiSide::None, vec![0.3, -0.5], Some(vec![-1.0, 0.2]), None).unwrap();
        let data = simulate(&plain, &x, 8, &mut rng);
        let zi = NodeRegSpec { zi_side: ZiSide::Side1, b: Some(vec![-800.0]), ..plain.clone() };
        let (a, _) = node_loglik(&plain, &data).unwrap();
        let (b, _) = node_loglik(&zi, &data).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_counts() {
        let x = Matrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let err = NodeData::new(&[1, 5], &[2, 4], &x).unwrap_err();
        assert!(err.to_string().contains("site 1"));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = design(&mut rng, 20, 2);
        for c in DEFAULT_CANDIDATES {
            for _ in 0..5 {
                let spec = random_spec(&mut rng, c, 3);
                let data = simulate(&spec, &x, 15, &mut rng);
                let layout = spec.layout();
                let at = spec.to_params();
                let (_, g) = loglik_at(&layout, &at, &data);
                for j in 0..at.len() {
                    let h = 1e-5;
                    let mut up = at.clone();
                    up[j] += h;
                    let mut dn = at.clone();
                    dn[j] -= h;
                    let fd = (loglik_at(&layout, &up, &data).0 - loglik_at(&layout, &dn, &data).0) / (2.0 * h);
                    let err = (fd - g[j]).abs() / g[j].abs().max(1.0);
                    assert!(err < 1e-6, "{c:?} param {j}: analytic {} vs fd {fd}", g[j]);
                }
            }
        }
    }

    #[test]
    fn binomial_intercept_matches_closed_form() {
        let x = Matrix::filled(4, 1, 1.0);
        let data = NodeData::new(&[300, 0, 500, 200], &[400, 200, 900, 600], &x).unwrap();
        let candidate = DEFAULT_CANDIDATES[0];
        let fit = fit_node(candidate, &data, ZiDesign::Intercept, &OptimControls::default(), true).unwrap();
        let closed = logit(1000.0 / 2100.0);
        assert!((fit.spec.beta[0] - closed).abs() < 1e-8, "{} vs {closed}", fit.spec.beta[0]);
        let se = fit.se.unwrap()[0];
        let p: f64 = 1000.0 / 2100.0;
        assert!((se - 1.0 / (2100.0 * p * (1.0 - p)).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn reference_group_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = design(&mut rng, 400, 1);
        let truth = NodeRegSpec::new(SplitFamily::BetaBinomial, ZiSide::Side1, vec![0.4, 0.8], Some(vec![-1.5, 0.0]), Some(vec![-1.0])).unwrap();
        let data = simulate(&truth, &x, 20, &mut rng);
        let controls = OptimControls::default();
        let c = truth.candidate();
        let a = fit_node(c, &data, ZiDesign::Intercept, &controls, false).unwrap();
        let b = fit_node(Candidate { zi_side: ZiSide::Side2, ..c }, &data.swapped(), ZiDesign::Intercept, &controls, false).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-8, "{} vs {}", a.loglik, b.loglik);
        for (u, v) in a.spec.beta.iter().zip(&b.spec.beta) {
            assert!((u + v).abs() < 1e-5, "{u} vs {v}");
        }
    }

    #[test]
    fn recovers_beta_binomial_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = design(&mut rng, 5000, 2);
        let truth = NodeRegSpec::new(
            SplitFamily::BetaBinomial,
            ZiSide::None,
            vec![0.3, -0.7, 0.5],
            Some(vec![-1.5, 0.4, 0.0]),
            None,
        )
        .unwrap();
        let data = simulate(&truth, &x, 40, &mut rng);
        let fit = fit_node(truth.candidate(), &data, ZiDesign::Intercept, &OptimControls::default(), true).unwrap();
        let se = fit.se.unwrap();
        for ((est, tru), s) in fit.spec.to_params().iter().zip(truth.to_params()).zip(&se) {
            assert!((est - tru).abs() < 3.0 * s, "{est} vs {tru} (se {s})");
        }
    }

    #[test]
    fn selection_prefers_true_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = design(&mut rng, 1000, 1);
        let controls = OptimControls::default();
        let overdispersed = NodeRegSpec::new(SplitFamily::BetaBinomial, ZiSide::None, vec![0.2, 0.5], Some(vec![-0.5, 0.0]), None).unwrap();
        let data = simulate(&overdispersed, &x, 30, &mut rng);
        let sel = select_node_model(&data, &DEFAULT_CANDIDATES, ZiDesign::Intercept, &controls, false);
        assert_eq!(sel.fit.spec.family, SplitFamily::BetaBinomial);
        assert_eq!(sel.candidates.len(), 6);

        let zi = NodeRegSpec::new(SplitFamily::Binomial, ZiSide::Side1, vec![0.5, 0.3], None, Some(vec![logit(0.4)])).unwrap();
        let data = simulate(&zi, &x, 30, &mut rng);
        let sel = select_node_model(&data, &DEFAULT_CANDIDATES, ZiDesign::Intercept, &controls, false);
        assert_eq!(sel.fit.spec.zi_side, ZiSide::Side1);
        assert!(!sel.flagged);
    }

    #[test]
    fn empty_node_falls_back() {
        let x = Matrix::filled(3, 2, 1.0);
        let data = NodeData::new(&[0, 0, 0], &[0, 0, 0], &x).unwrap();
        let sel = select_node_model(&data, &DEFAULT_CANDIDATES, ZiDesign::Intercept, &OptimControls::default(), true);
        assert!(sel.flagged);
        assert_eq!(sel.fit.spec, NodeRegSpec::binomial_intercept(0.0, 2));
        assert_eq!(sel.fit.loglik, 0.0);
        assert!(sel.candidates.iter().all(|c| c.error.is_some()));
    }

    #[test]
    fn ties_prefer_parsimony() {
        let fit = |family, zi_side, k, aic| NodeFit {
            spec: NodeRegSpec { family, zi_side, beta: vec![0.0], delta: None, b: None },
            loglik: 0.0,
            k,
            n_obs: 1,
            aic,
            bic: 0.0,
            se: None,
            report: None,
        };
        let small = fit(SplitFamily::Binomial, ZiSide::None, 1, 10.0);
        let big = fit(SplitFamily::BetaBinomial, ZiSide::None, 2, 10.0);
        assert!(preferred(&small, &big) && !preferred(&big, &small));
        let zi = fit(SplitFamily::Binomial, ZiSide::Side1, 1, 10.0);
        assert!(preferred(&small, &zi) && !preferred(&zi, &small));
        assert!(preferred(&big, &fit(SplitFamily::Binomial, ZiSide::None, 1, 12.0)));
    }
}
