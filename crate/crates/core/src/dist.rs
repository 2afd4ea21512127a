//! Claim-count and claim-severity families.
//!
//! Count families are parameterised by their mean λ plus extras α (π for the
//! zero-inflated Poisson, the trial count m for the binomial). Severity
//! families are exponential-dispersion members parameterised by mean μ and
//! dispersion φ, with `Var[Y] = φ V(μ)` and `V(μ) = μ^k`. The average of `n`
//! i.i.d. severities belongs to the same family with dispersion `φ / n`, so
//! every severity routine takes the *effective* dispersion explicitly.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, InverseGaussian, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_choose, ln_factorial, ln_gamma, log_add_exp};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which count distribution drives the frequency part, without its trainable extras.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CountKind {
    Poisson,
    Zip,
    Binomial { trials: u32 },
}

impl CountKind {
    /// Builds the family; `pi` is required for (and only used by) ZIP.
    pub fn family(self, pi: Option<f64>) -> Result<CountFamily> {
        let family = match self {
            CountKind::Poisson => CountFamily::Poisson,
            CountKind::Zip => CountFamily::Zip {
                pi: pi.ok_or_else(|| Error::domain("ZIP family requires π"))?,
            },
            CountKind::Binomial { trials } => CountFamily::Binomial { trials },
        };
        family.validate()?;
        Ok(family)
    }
}

/// A fully specified count family (extras filled in).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountFamily {
    Poisson,
    /// Zero-inflated Poisson with structural-zero probability `pi ∈ [0, 1)`.
    Zip { pi: f64 },
    /// Binomial with `trials` trials and success probability λ / trials.
    Binomial { trials: u32 },
}

impl CountFamily {
    pub fn kind(&self) -> CountKind {
        match *self {
            CountFamily::Poisson => CountKind::Poisson,
            CountFamily::Zip { .. } => CountKind::Zip,
            CountFamily::Binomial { trials } => CountKind::Binomial { trials },
        }
    }

    /// The extra-parameter vector α.
    pub fn alpha(&self) -> Vec<f64> {
        match *self {
            CountFamily::Poisson => Vec::new(),
            CountFamily::Zip { pi } => vec![pi],
            CountFamily::Binomial { trials } => vec![trials as f64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CountFamily::Poisson => Ok(()),
            CountFamily::Zip { pi } if (0.0..1.0).contains(&pi) => Ok(()),
            CountFamily::Zip { pi } => Err(Error::domain(format!("ZIP π must lie in [0, 1), got {pi}"))),
            CountFamily::Binomial { trials } if trials >= 1 => Ok(()),
            CountFamily::Binomial { .. } => Err(Error::domain("binomial needs at least one trial")),
        }
    }

    fn check_lambda(&self, lambda: f64) -> Result<()> {
        self.validate()?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("λ must be positive and finite, got {lambda}")));
        }
        if let CountFamily::Binomial { trials } = *self {
            if lambda >= trials as f64 {
                return Err(Error::domain(format!(
                    "binomial mean λ={lambda} must be below m={trials}"
                )));
            }
        }
        Ok(())
    }

    /// `ln P(N = n)` for mean `lambda`.
    pub fn log_pmf(&self, lambda: f64, n: u64) -> Result<f64> {
        self.check_lambda(lambda)?;
        let poisson = |n: u64| -lambda + n as f64 * lambda.ln() - ln_factorial(n);
        Ok(match *self {
            CountFamily::Poisson => poisson(n),
            CountFamily::Zip { pi } => {
                if n == 0 {
                    log_add_exp(pi.ln(), (1.0 - pi).ln() - lambda)
                } else {
                    (1.0 - pi).ln() + poisson(n)
                }
            }
            CountFamily::Binomial { trials } => {
                let m = trials as u64;
                if n > m {
                    return Err(Error::domain(format!("n={n} outside binomial support 0..={m}")));
                }
                let p = lambda / trials as f64;
                ln_choose(m, n) + n as f64 * p.ln() + (m - n) as f64 * (-p).ln_1p()
            }
        })
    }

    pub fn pmf(&self, lambda: f64, n: u64) -> Result<f64> {
        self.log_pmf(lambda, n).map(f64::exp)
    }

    pub fn mean(&self, lambda: f64) -> Result<f64> {
        self.mgf(lambda, 0.0, 1)
    }

    pub fn variance(&self, lambda: f64) -> Result<f64> {
        let m1 = self.mgf(lambda, 0.0, 1)?;
        Ok(self.mgf(lambda, 0.0, 2)? - m1 * m1)
    }

    /// The MGF `M_N(t)` (order 0) or its derivatives `E[N e^{tN}]` (order 1)
    /// and `E[N² e^{tN}]` (order 2), in closed form.
    ///
    /// All three families have MGFs finite on the whole real line.
    pub fn mgf(&self, lambda: f64, t: f64, order: u32) -> Result<f64> {
        self.check_lambda(lambda)?;
        if !t.is_finite() {
            return Err(Error::domain(format!("MGF argument must be finite, got {t}")));
        }
        let et = t.exp();
        match *self {
            CountFamily::Poisson | CountFamily::Zip { .. } => {
                let scale = match *self {
                    CountFamily::Zip { pi } => 1.0 - pi,
                    _ => 1.0,
                };
                let base = lambda * t.exp_m1();
                match order {
                    0 => Ok(match *self {
                        CountFamily::Zip { pi } => pi + scale * base.exp(),
                        _ => base.exp(),
                    }),
                    1 => Ok(scale * lambda * (base + t).exp()),
                    2 => Ok(scale * lambda * (lambda * et + 1.0) * (base + t).exp()),
                    _ => Err(unsupported_order(order)),
                }
            }
            CountFamily::Binomial { trials } => {
                let m = trials as f64;
                let p = lambda / m;
                let q = 1.0 - p + p * et;
                match order {
                    0 => Ok(q.powf(m)),
                    1 => Ok(lambda * et * q.powf(m - 1.0)),
                    2 => Ok(lambda * et * q.powf(m - 2.0) * (q + (m - 1.0) * p * et)),
                    _ => Err(unsupported_order(order)),
                }
            }
        }
    }

    /// Draws one count. ZIP is sampled as a Bernoulli(π) mixture with Poisson(λ).
    pub fn sample<R: Rng + ?Sized>(&self, lambda: f64, rng: &mut R) -> Result<u64> {
        self.check_lambda(lambda)?;
        let poisson = |rng: &mut R| -> Result<u64> {
            let d = Poisson::new(lambda).map_err(|e| Error::domain(e.to_string()))?;
            Ok(d.sample(rng) as u64)
        };
        match *self {
            CountFamily::Poisson => poisson(rng),
            CountFamily::Zip { pi } => {
                if rng.random::<f64>() < pi {
                    Ok(0)
                } else {
                    poisson(rng)
                }
            }
            CountFamily::Binomial { trials } => {
                let d = Binomial::new(trials as u64, lambda / trials as f64)
                    .map_err(|e| Error::domain(e.to_string()))?;
                Ok(d.sample(rng))
            }
        }
    }
}

fn unsupported_order(order: u32) -> Error {
    Error::domain(format!("MGF derivative order {order} unsupported (0, 1 or 2)"))
}

/// Severity family without its dispersion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeverityKind {
    Gamma,
    InverseGaussian,
    Normal,
}

/// Log-density of one observation together with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensityGrad {
    pub value: f64,
    /// ∂/∂(ln μ)
    pub d_log_mean: f64,
    /// ∂/∂(dispersion)
    pub d_dispersion: f64,
}

impl SeverityKind {
    /// Exponent k of the power variance function `V(μ) = μ^k`.
    pub fn variance_power(self) -> i32 {
        match self {
            SeverityKind::Normal => 0,
            SeverityKind::Gamma => 2,
            SeverityKind::InverseGaussian => 3,
        }
    }

    fn positive_support(self) -> bool {
        !matches!(self, SeverityKind::Normal)
    }

    fn check(self, mu: f64, dispersion: f64) -> Result<()> {
        if !(dispersion > 0.0 && dispersion.is_finite()) {
            return Err(Error::domain(format!("dispersion must be positive, got {dispersion}")));
        }
        if !mu.is_finite() || (self.positive_support() && mu <= 0.0) {
            return Err(Error::domain(format!("invalid mean μ={mu} for {self:?}")));
        }
        Ok(())
    }

    pub fn variance_function(self, mu: f64) -> Result<f64> {
        if self.positive_support() && !(mu > 0.0) {
            return Err(Error::domain(format!("V(μ) needs μ > 0 for {self:?}, got {mu}")));
        }
        Ok(mu.powi(self.variance_power()))
    }

    /// Log-density with mean `mu` and dispersion `dispersion`; `-inf` outside the support.
    ///
    /// Gamma uses shape `1/dispersion`, so `Var[Y] = dispersion · μ²`.
    pub fn log_density(self, mu: f64, dispersion: f64, y: f64) -> Result<f64> {
        Ok(self.log_density_grad(mu, dispersion, y)?.value)
    }

    /// Log-density and its derivatives with respect to `ln μ` and the dispersion.
    pub fn log_density_grad(self, mu: f64, dispersion: f64, y: f64) -> Result<LogDensityGrad> {
        self.check(mu, dispersion)?;
        let d = dispersion;
        if self.positive_support() && !(y > 0.0) || !y.is_finite() {
            return Ok(LogDensityGrad {
                value: f64::NEG_INFINITY,
                d_log_mean: 0.0,
                d_dispersion: 0.0,
            });
        }
        Ok(match self {
            SeverityKind::Gamma => {
                let shape = 1.0 / d;
                let ratio = y / mu;
                let value = shape * (shape * ratio).ln() - y.ln() - shape * ratio - ln_gamma(shape);
                let d_shape = shape.ln() + 1.0 + ratio.ln() - ratio - crate::special::digamma(shape);
                LogDensityGrad {
                    value,
                    d_log_mean: shape * (ratio - 1.0),
                    d_dispersion: -d_shape * shape * shape,
                }
            }
            SeverityKind::InverseGaussian => {
                let r = y - mu;
                let q = r * r / (mu * mu * y);
                LogDensityGrad {
                    value: -0.5 * (LN_2PI + d.ln() + 3.0 * y.ln()) - q / (2.0 * d),
                    d_log_mean: r / (d * mu * mu),
                    d_dispersion: -0.5 / d + q / (2.0 * d * d),
                }
            }
            SeverityKind::Normal => {
                let r = y - mu;
                LogDensityGrad {
                    value: -0.5 * (LN_2PI + d.ln()) - r * r / (2.0 * d),
                    d_log_mean: r * mu / d,
                    d_dispersion: -0.5 / d + r * r / (2.0 * d * d),
                }
            }
        })
    }

    /// Draws one value with mean `mu` and dispersion `dispersion`.
    pub fn sample<R: Rng + ?Sized>(self, mu: f64, dispersion: f64, rng: &mut R) -> Result<f64> {
        self.check(mu, dispersion)?;
        let bad = |e: &dyn std::fmt::Display| Error::domain(e.to_string());
        Ok(match self {
            SeverityKind::Gamma => Gamma::new(1.0 / dispersion, mu * dispersion)
                .map_err(|e| bad(&e))?
                .sample(rng),
            SeverityKind::InverseGaussian => InverseGaussian::new(mu, 1.0 / dispersion)
                .map_err(|e| bad(&e))?
                .sample(rng),
            SeverityKind::Normal => Normal::new(mu, dispersion.sqrt())
                .map_err(|e| bad(&e))?
                .sample(rng),
        })
    }
}

/// A severity family with its (individual-claim) dispersion φ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityFamily {
    pub kind: SeverityKind,
    pub dispersion: f64,
}

impl SeverityFamily {
    pub fn new(kind: SeverityKind, dispersion: f64) -> Result<Self> {
        if !(dispersion > 0.0 && dispersion.is_finite()) {
            return Err(Error::domain(format!("dispersion must be positive, got {dispersion}")));
        }
        Ok(Self { kind, dispersion })
    }

    pub fn variance_power(&self) -> i32 {
        self.kind.variance_power()
    }

    pub fn variance_function(&self, mu: f64) -> Result<f64> {
        self.kind.variance_function(mu)
    }

    /// Log-density of the average of `n` claims with mean `mu` (dispersion φ/n).
    pub fn log_density_average(&self, mu: f64, n: u64, ybar: f64) -> Result<f64> {
        if n == 0 {
            return Err(Error::domain("average severity needs n > 0"));
        }
        self.kind.log_density(mu, self.dispersion / n as f64, ybar)
    }

    /// Draws the average of `n` claims with mean `mu`.
    pub fn sample_average<R: Rng + ?Sized>(&self, mu: f64, n: u64, rng: &mut R) -> Result<f64> {
        if n == 0 {
            return Err(Error::domain("average severity needs n > 0"));
        }
        self.kind.sample(mu, self.dispersion / n as f64, rng)
    }
}
