//! Generalized factorials, bivariate Pólya split laws and the univariate
//! global abundance laws.
//!
//! Everything is evaluated in log space. The three Pólya kinds share one code
//! path through [`log_gen_factorial`]; `c = 0` reduces to a power, `c = 1` to a
//! rising factorial and `c = -1` to a falling factorial.

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, Hypergeometric, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::{ln_binomial, ln_factorial};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};

/// Lower and upper bounds applied to split parameters coming out of an
/// optimizer before any pmf evaluation.
pub const THETA_MIN: f64 = 1e-8;
pub const THETA_MAX: f64 = 1e8;

/// Below this many factors the generalized factorial is summed directly.
const DIRECT_SUM_LIMIT: u64 = 64;

/// The constant `c` of a Pólya law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub enum PolyaKind {
    /// `c = -1`, the hypergeometric split.
    Hypergeometric,
    /// `c = 0`, the multinomial (binomial) split.
    Multinomial,
    /// `c = 1`, the Dirichlet-multinomial (beta-binomial) split.
    DirichletMultinomial,
}

impl PolyaKind {
    pub fn c(self) -> i32 {
        match self {
            PolyaKind::Hypergeometric => -1,
            PolyaKind::Multinomial => 0,
            PolyaKind::DirichletMultinomial => 1,
        }
    }

    pub fn from_c(c: i32) -> Result<Self> {
        match c {
            -1 => Ok(PolyaKind::Hypergeometric),
            0 => Ok(PolyaKind::Multinomial),
            1 => Ok(PolyaKind::DirichletMultinomial),
            other => domain(format!("Pólya constant c must be -1, 0 or 1, got {other}")),
        }
    }
}

impl TryFrom<i32> for PolyaKind {
    type Error = crate::Error;

    fn try_from(c: i32) -> Result<Self> {
        PolyaKind::from_c(c)
    }
}

impl From<PolyaKind> for i32 {
    fn from(kind: PolyaKind) -> i32 {
        kind.c()
    }
}

/// The pair `(θ1, θ2)` of a binary split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitTheta {
    pub theta1: f64,
    pub theta2: f64,
}

impl SplitTheta {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        check_theta(theta1)?;
        check_theta(theta2)?;
        Ok(SplitTheta { theta1, theta2 })
    }

    /// Builds the pair from the mean proportion `p = θ1/(θ1+θ2)` and the
    /// scale `σ = 1/(θ1+θ2)`.
    pub fn from_proportion(p: f64, sigma: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return domain(format!("proportion must lie in (0, 1), got {p}"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return domain(format!("sigma must be positive and finite, got {sigma}"));
        }
        SplitTheta::new(p / sigma, (1.0 - p) / sigma)
    }

    pub fn total(&self) -> f64 {
        self.theta1 + self.theta2
    }

    /// Mean proportion of the first group, `θ1/(θ1+θ2)`.
    pub fn proportion(&self) -> f64 {
        self.theta1 / self.total()
    }

    pub fn sigma(&self) -> f64 {
        1.0 / self.total()
    }

    /// Swaps the roles of the two groups.
    pub fn swapped(&self) -> SplitTheta {
        SplitTheta {
            theta1: self.theta2,
            theta2: self.theta1,
        }
    }

    /// Both values clamped to `[THETA_MIN, THETA_MAX]`.
    pub fn clamped(&self) -> SplitTheta {
        SplitTheta {
            theta1: clamp_theta(self.theta1),
            theta2: clamp_theta(self.theta2),
        }
    }

    pub fn validate_for(&self, kind: PolyaKind) -> Result<()> {
        check_theta(self.theta1)?;
        check_theta(self.theta2)?;
        if kind == PolyaKind::Hypergeometric {
            check_integer(self.theta1)?;
            check_integer(self.theta2)?;
        }
        Ok(())
    }
}

pub fn clamp_theta(theta: f64) -> f64 {
    theta.clamp(THETA_MIN, THETA_MAX)
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        domain(format!("theta must be positive and finite, got {theta}"))
    }
}

fn check_integer(theta: f64) -> Result<()> {
    if theta.fract() == 0.0 {
        Ok(())
    } else {
        domain(format!("hypergeometric split needs integer theta, got {theta}"))
    }
}

/// Log of the generalized factorial `θ(θ+c)...(θ+(n-1)c)`.
///
/// Returns `0` for `n = 0` and `-∞` when a falling factorial reaches zero.
pub fn log_gen_factorial(theta: f64, n: u64, kind: PolyaKind) -> Result<f64> {
    check_theta(theta)?;
    if kind == PolyaKind::Hypergeometric {
        check_integer(theta)?;
    }
    Ok(ln_gen_factorial_unchecked(theta, n, kind))
}

pub(crate) fn ln_gen_factorial_unchecked(theta: f64, n: u64, kind: PolyaKind) -> f64 {
    if n == 0 {
        return 0.0;
    }
    match kind {
        PolyaKind::Multinomial => n as f64 * theta.ln(),
        PolyaKind::DirichletMultinomial => ln_rising(theta, n),
        PolyaKind::Hypergeometric => {
            if n as f64 > theta {
                f64::NEG_INFINITY
            } else if n <= DIRECT_SUM_LIMIT {
                (0..n).map(|t| (theta - t as f64).ln()).sum()
            } else {
                ln_gamma(theta + 1.0) - ln_gamma(theta - n as f64 + 1.0)
            }
        }
    }
}

/// `ln Γ(a+n) - ln Γ(a)`.
pub(crate) fn ln_rising(a: f64, n: u64) -> f64 {
    if n <= DIRECT_SUM_LIMIT {
        (0..n).map(|t| (a + t as f64).ln()).sum()
    } else {
        ln_gamma(a + n as f64) - ln_gamma(a)
    }
}

/// `ψ(a+n) - ψ(a)`, the derivative of [`ln_rising`] in `a`.
pub(crate) fn digamma_diff(a: f64, n: u64) -> f64 {
    if n <= DIRECT_SUM_LIMIT {
        (0..n).map(|t| 1.0 / (a + t as f64)).sum()
    } else {
        statrs::function::gamma::digamma(a + n as f64) - statrs::function::gamma::digamma(a)
    }
}

/// Log pmf of the bivariate Pólya split `(n1, n2)` given `n = n1 + n2`.
pub fn log_split_pmf(n1: u64, n2: u64, theta: &SplitTheta, kind: PolyaKind) -> Result<f64> {
    theta.validate_for(kind)?;
    Ok(ln_split_pmf_unchecked(n1, n2, theta, kind))
}

pub(crate) fn ln_split_pmf_unchecked(n1: u64, n2: u64, theta: &SplitTheta, kind: PolyaKind) -> f64 {
    let n = n1 + n2;
    if n == 0 {
        return 0.0;
    }
    if kind == PolyaKind::Hypergeometric && n as f64 > theta.total() {
        return f64::NEG_INFINITY;
    }
    let num = ln_gen_factorial_unchecked(theta.theta1, n1, kind)
        + ln_gen_factorial_unchecked(theta.theta2, n2, kind);
    if num == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    ln_binomial(n, n1) + num - ln_gen_factorial_unchecked(theta.total(), n, kind)
}

/// Draws `(n1, n - n1)` from the Pólya split law.
pub fn sample_split<R: Rng + ?Sized>(
    n: u64,
    theta: &SplitTheta,
    kind: PolyaKind,
    rng: &mut R,
) -> Result<(u64, u64)> {
    theta.validate_for(kind)?;
    if n == 0 {
        return Ok((0, 0));
    }
    let n1 = match kind {
        PolyaKind::Multinomial => binomial_draw(n, theta.proportion(), rng),
        PolyaKind::DirichletMultinomial => {
            let beta = Beta::new(theta.theta1, theta.theta2)
                .map_err(|e| crate::Error::Domain(format!("beta sampler: {e}")))?;
            let q: f64 = beta.sample(rng);
            // Extremely small shapes can round the draw to an endpoint or NaN.
            let q = if q.is_nan() { theta.proportion() } else { q.clamp(0.0, 1.0) };
            binomial_draw(n, q, rng)
        }
        PolyaKind::Hypergeometric => {
            let total = theta.total() as u64;
            if n > total {
                return domain(format!(
                    "hypergeometric split of {n} exceeds urn size {total}"
                ));
            }
            Hypergeometric::new(total, theta.theta1 as u64, n)
                .map_err(|e| crate::Error::Domain(format!("hypergeometric sampler: {e}")))?
                .sample(rng)
        }
    };
    Ok((n1, n - n1))
}

pub(crate) fn binomial_draw<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial parameters").sample(rng)
    }
}

/// The untransformed law of the total abundance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CountLaw {
    Poisson { lambda: f64 },
    /// Negative binomial with size `r` and mean `μ`; success probability
    /// `p = r/(r+μ)` so that `P(n) ∝ p^r (1-p)^n`.
    NegativeBinomial { size: f64, mean: f64 },
}

impl CountLaw {
    /// Negative binomial from the `(r, p)` view.
    pub fn negative_binomial_from_prob(size: f64, prob: f64) -> Result<Self> {
        if !(prob > 0.0 && prob < 1.0) {
            return domain(format!("negative binomial p must lie in (0, 1), got {prob}"));
        }
        let law = CountLaw::NegativeBinomial {
            size,
            mean: size * (1.0 - prob) / prob,
        };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CountLaw::Poisson { lambda } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return domain(format!("Poisson rate must be finite and >= 0, got {lambda}"));
                }
            }
            CountLaw::NegativeBinomial { size, mean } => {
                if !(size > 0.0 && size.is_finite()) {
                    return domain(format!("negative binomial size must be positive, got {size}"));
                }
                if !(mean >= 0.0 && mean.is_finite()) {
                    return domain(format!("negative binomial mean must be >= 0, got {mean}"));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            CountLaw::Poisson { lambda } => lambda,
            CountLaw::NegativeBinomial { mean, .. } => mean,
        }
    }

    /// Success probability of the `(r, p)` view; `None` for Poisson.
    pub fn success_prob(&self) -> Option<f64> {
        match *self {
            CountLaw::Poisson { .. } => None,
            CountLaw::NegativeBinomial { size, mean } => Some(size / (size + mean)),
        }
    }

    pub fn ln_pmf(&self, n: u64) -> f64 {
        let nf = n as f64;
        match *self {
            CountLaw::Poisson { lambda } => {
                if lambda == 0.0 {
                    return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
                }
                nf * lambda.ln() - lambda - ln_factorial(n)
            }
            CountLaw::NegativeBinomial { size, mean } => {
                if mean == 0.0 {
                    return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
                }
                let ln_denom = (size + mean).ln();
                let tail = if n == 0 { 0.0 } else { nf * (mean.ln() - ln_denom) };
                ln_rising(size, n) - ln_factorial(n) + size * (size.ln() - ln_denom) + tail
            }
        }
    }

    /// `E[N(N-1)...(N-k+1)]`.
    pub fn factorial_moment(&self, k: u32) -> f64 {
        match *self {
            CountLaw::Poisson { lambda } => lambda.powi(k as i32),
            CountLaw::NegativeBinomial { size, mean } => (0..k)
                .map(|t| (size + f64::from(t)) * mean / size)
                .product(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let rate = match *self {
            CountLaw::Poisson { lambda } => lambda,
            CountLaw::NegativeBinomial { size, mean } => {
                if mean == 0.0 {
                    return 0;
                }
                Gamma::new(size, mean / size)
                    .expect("validated gamma parameters")
                    .sample(rng)
            }
        };
        poisson_draw(rate, rng)
    }
}

fn poisson_draw<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(rate).expect("positive Poisson rate").sample(rng);
    draw as u64
}

/// The law of `|Y|`, optionally mixed with a point mass at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalAbundanceLaw {
    pub law: CountLaw,
    /// Weight of the Dirac mass at zero.
    #[serde(default)]
    pub zero_inflation: f64,
}

impl GlobalAbundanceLaw {
    pub fn new(law: CountLaw, zero_inflation: f64) -> Result<Self> {
        law.validate()?;
        if !(0.0..=1.0).contains(&zero_inflation) {
            return domain(format!("zero inflation must lie in [0, 1], got {zero_inflation}"));
        }
        Ok(GlobalAbundanceLaw { law, zero_inflation })
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        GlobalAbundanceLaw::new(CountLaw::Poisson { lambda }, 0.0)
    }

    pub fn negative_binomial(size: f64, mean: f64) -> Result<Self> {
        GlobalAbundanceLaw::new(CountLaw::NegativeBinomial { size, mean }, 0.0)
    }

    pub fn mean(&self) -> f64 {
        (1.0 - self.zero_inflation) * self.law.mean()
    }

    pub fn factorial_moment(&self, k: u32) -> f64 {
        if k == 0 {
            return 1.0;
        }
        (1.0 - self.zero_inflation) * self.law.factorial_moment(k)
    }

    pub fn ln_pmf(&self, n: u64) -> f64 {
        let pi = self.zero_inflation;
        if pi == 0.0 {
            return self.law.ln_pmf(n);
        }
        if pi == 1.0 {
            return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        let base = (1.0 - pi).ln() + self.law.ln_pmf(n);
        if n == 0 {
            log_add_exp(pi.ln(), base)
        } else {
            base
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.zero_inflation > 0.0 && rng.random::<f64>() < self.zero_inflation {
            return 0;
        }
        self.law.sample(rng)
    }
}

/// Log pmf of the (optionally zero-inflated) global abundance law.
pub fn log_global_pmf(n: u64, law: &GlobalAbundanceLaw) -> Result<f64> {
    law.law.validate()?;
    if !(0.0..=1.0).contains(&law.zero_inflation) {
        return domain(format!(
            "zero inflation must lie in [0, 1], got {}",
            law.zero_inflation
        ));
    }
    Ok(law.ln_pmf(n))
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
