use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use super::{aic, axpy, bic, dot, log_logistic, logistic, logit, standard_errors, ConvergenceReport, OptimControls, ZiDesign};
use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::polya::{digamma_diff, ln_rising, log_add_exp, CountLaw, GlobalAbundanceLaw};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalFamily {
    Poisson,
    NegBin,
}

/// Shape of the global parameter vector: `beta`, then the log dispersion
/// (negative binomial only), then the zero-inflation coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalLayout {
    pub family: GlobalFamily,
    pub n_x: usize,
    pub n_zi: usize,
}

impl GlobalLayout {
    pub fn new(family: GlobalFamily, n_x: usize, zi: Option<ZiDesign>) -> Self {
        GlobalLayout {
            family,
            n_x,
            n_zi: zi.map_or(0, |z| z.n_cols(n_x)),
        }
    }

    fn n_disp(&self) -> usize {
        usize::from(self.family == GlobalFamily::NegBin)
    }

    pub fn n_params(&self) -> usize {
        self.n_x + self.n_disp() + self.n_zi
    }

    pub fn param_names(&self, columns: &[String]) -> Vec<String> {
        let beta = columns[..self.n_x].iter().map(|c| format!("beta_total[{c}]"));
        let disp = (self.n_disp() == 1).then(|| "log_dispersion".to_string());
        let zi = columns[..self.n_zi].iter().map(|c| format!("b_total[{c}]"));
        beta.chain(disp).chain(zi).collect()
    }
}

/// Regression of the total abundance `|y|`.
///
/// The mean is `exp(x·beta) · offset`. For the negative binomial,
/// `log_dispersion = ln α` with size `r = 1/α`, so `Var = μ + α μ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRegSpec {
    pub family: GlobalFamily,
    pub beta: Vec<f64>,
    pub log_dispersion: Option<f64>,
    /// Logit-scale coefficients of a structural-zero weight on the total.
    pub zi: Option<Vec<f64>>,
}

impl GlobalRegSpec {
    pub fn new(family: GlobalFamily, beta: Vec<f64>, log_dispersion: Option<f64>, zi: Option<Vec<f64>>) -> Result<Self> {
        let spec = GlobalRegSpec {
            family,
            beta,
            log_dispersion,
            zi,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let ok = match (self.family, self.log_dispersion) {
            (GlobalFamily::Poisson, None) => true,
            (GlobalFamily::NegBin, Some(v)) => v.is_finite(),
            _ => false,
        };
        if !ok {
            return Err(Error::Domain(
                "a finite log dispersion is required for the negative binomial and only there".into(),
            ));
        }
        if let Some(b) = &self.zi {
            if b.is_empty() || b.len() > self.beta.len() {
                return Err(Error::Domain("zero-inflation coefficients must use 1..=p+1 design columns".into()));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> GlobalLayout {
        GlobalLayout {
            family: self.family,
            n_x: self.beta.len(),
            n_zi: self.zi.as_ref().map_or(0, Vec::len),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().n_params()
    }

    pub fn to_params(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend(self.log_dispersion);
        v.extend(self.zi.iter().flatten());
        v
    }

    pub fn from_params(layout: &GlobalLayout, params: &[f64]) -> Self {
        let (beta, rest) = params.split_at(layout.n_x);
        let (disp, zi) = rest.split_at(layout.n_disp());
        GlobalRegSpec {
            family: layout.family,
            beta: beta.to_vec(),
            log_dispersion: disp.first().copied(),
            zi: (layout.n_zi > 0).then(|| zi.to_vec()),
        }
    }

    /// Mean of the count law before zero inflation.
    pub fn count_mean(&self, x: &[f64], offset: f64) -> f64 {
        dot(&self.beta, x).exp() * offset
    }

    pub fn zero_weight(&self, x: &[f64]) -> f64 {
        self.zi.as_ref().map_or(0.0, |b| logistic(dot(b, &x[..b.len()])))
    }

    /// Expected total `μ(Ω | x, offset)`.
    pub fn mean(&self, x: &[f64], offset: f64) -> f64 {
        (1.0 - self.zero_weight(x)) * self.count_mean(x, offset)
    }

    /// The global abundance law at one site.
    pub fn law_at(&self, x: &[f64], offset: f64) -> Result<GlobalAbundanceLaw> {
        let mu = self.count_mean(x, offset);
        let law = match self.log_dispersion {
            None => CountLaw::Poisson { lambda: mu },
            Some(la) => CountLaw::NegativeBinomial { size: (-la).exp(), mean: mu },
        };
        GlobalAbundanceLaw::new(law, self.zero_weight(x))
    }
}

/// Site totals with their design rows and offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalData {
    y: Vec<u64>,
    log_offset: Vec<f64>,
    ln_fact: Vec<f64>,
    x: Matrix<f64>,
}

impl GlobalData {
    pub fn new(y: Vec<u64>, offsets: &[f64], design: &Matrix<f64>) -> Result<Self> {
        if y.len() != offsets.len() || y.len() != design.nrows() {
            return Err(Error::Data(format!(
                "global data lengths differ: {} totals, {} offsets, {} design rows",
                y.len(),
                offsets.len(),
                design.nrows()
            )));
        }
        if let Some(i) = offsets.iter().position(|&o| !(o > 0.0 && o.is_finite())) {
            return Err(Error::Data(format!("site {i}: offset must be positive, got {}", offsets[i])));
        }
        Ok(GlobalData {
            ln_fact: y.iter().map(|&v| ln_factorial(v)).collect(),
            log_offset: offsets.iter().map(|o| o.ln()).collect(),
            x: design.clone(),
            y,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_x(&self) -> usize {
        self.x.ncols()
    }
}

/// Log-likelihood and gradient of a global spec.
pub fn global_loglik(spec: &GlobalRegSpec, data: &GlobalData) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    if spec.beta.len() != data.n_x() {
        return Err(Error::Data(format!(
            "global spec has {} mean coefficients, design has {} columns",
            spec.beta.len(),
            data.n_x()
        )));
    }
    Ok(loglik_at(&spec.layout(), &spec.to_params(), data))
}

pub(crate) fn loglik_at(layout: &GlobalLayout, params: &[f64], data: &GlobalData) -> (f64, Vec<f64>) {
    let n_x = layout.n_x;
    let beta = &params[..n_x];
    let la = params.get(n_x).copied().filter(|_| layout.n_disp() == 1);
    let b = &params[n_x + layout.n_disp()..];
    let mut ll = 0.0;
    let mut grad = vec![0.0; params.len()];
    let mut g_disp = 0.0;
    for (i, x) in data.x.rows().enumerate() {
        let y = data.y[i];
        let yf = y as f64;
        let eta = dot(beta, x) + data.log_offset[i];
        let mu = eta.exp();
        let (mut lpmf, g_eta, g_la) = match la {
            None => (yf * eta - mu - data.ln_fact[i], yf - mu, 0.0),
            Some(la) => {
                let r = (-la).exp();
                let rm = r + mu;
                let log_rm = r.ln() + (mu / r).ln_1p();
                let lp = ln_rising(r, y) - data.ln_fact[i] - r * (mu / r).ln_1p() + yf * (eta - log_rm);
                let d_r = digamma_diff(r, y) - (mu / r).ln_1p() + (mu - yf) / rm;
                (lp, r * (yf - mu) / rm, -r * d_r)
            }
        };
        let mut w = 1.0;
        if layout.n_zi > 0 {
            let xz = &x[..layout.n_zi];
            let ez = dot(b, xz);
            let (lpi, l1pi) = (log_logistic(ez), log_logistic(-ez));
            let pi = lpi.exp();
            let g_z = if y == 0 {
                let core = l1pi + lpmf;
                let total = log_add_exp(lpi, core);
                w = (core - total).exp();
                lpmf = total;
                1.0 - w - pi
            } else {
                lpmf += l1pi;
                -pi
            };
            axpy(&mut grad[n_x + layout.n_disp()..], g_z, xz);
        }
        ll += lpmf;
        axpy(&mut grad[..n_x], w * g_eta, x);
        g_disp += w * g_la;
    }
    if layout.n_disp() == 1 {
        grad[n_x] = g_disp;
    }
    (ll, grad)
}

fn initial_params(layout: &GlobalLayout, data: &GlobalData) -> Vec<f64> {
    let total: f64 = data.y.iter().map(|&v| v as f64).sum();
    let effort: f64 = data.log_offset.iter().map(|l| l.exp()).sum();
    let b0 = (total.max(0.5) / effort).ln();
    let mut params = vec![0.0; layout.n_params()];
    params[0] = b0;
    let mu: Vec<f64> = data.log_offset.iter().map(|l| (b0 + l).exp()).collect();
    let mut alpha = 0.0;
    if layout.n_disp() == 1 {
        let (num, den) = data.y.iter().zip(&mu).fold((0.0, 0.0), |(a, b), (&y, &m)| {
            (a + (y as f64 - m).powi(2) - m, b + m * m)
        });
        alpha = if den > 0.0 { (num / den).clamp(0.01, 100.0) } else { 1.0 };
        params[layout.n_x] = alpha.ln();
    }
    if layout.n_zi > 0 {
        let n = data.n_obs().max(1) as f64;
        let observed = data.y.iter().filter(|&&v| v == 0).count() as f64 / n;
        let expected = mu
            .iter()
            .map(|&m| if alpha > 0.0 { (-(m * alpha).ln_1p() / alpha).exp() } else { (-m).exp() })
            .sum::<f64>()
            / n;
        params[layout.n_x + layout.n_disp()] = logit((observed - expected).clamp(0.01, 0.9));
    }
    params
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalFit {
    pub spec: GlobalRegSpec,
    pub loglik: f64,
    pub k: usize,
    pub n_obs: usize,
    pub aic: f64,
    pub bic: f64,
    /// Standard errors in the order of [`GlobalRegSpec::to_params`].
    pub se: Option<Vec<f64>>,
    pub report: ConvergenceReport,
}

pub fn fit_global(
    family: GlobalFamily,
    zi: Option<ZiDesign>,
    data: &GlobalData,
    controls: &OptimControls,
    with_se: bool,
) -> Result<GlobalFit> {
    let layout = GlobalLayout::new(family, data.n_x(), zi);
    let init = initial_params(&layout, data);
    let m = super::maximize(|v| loglik_at(&layout, v, data), &init, controls)?;
    let se = with_se.then(|| standard_errors(|v| loglik_at(&layout, v, data), &m.params)).flatten();
    let k = layout.n_params();
    Ok(GlobalFit {
        spec: GlobalRegSpec::from_params(&layout, &m.params),
        loglik: m.loglik,
        k,
        n_obs: data.n_obs(),
        aic: aic(m.loglik, k),
        bic: bic(m.loglik, k, data.n_obs()),
        se,
        report: m.report,
    })
}
