//! Closed-form mean and variance of the aggregate loss `S = N · Ȳ`.
//!
//! With `ln E[Ȳ | N] = s + γN` and a power variance function `V(μ) = μ^k`:
//!
//! ```text
//! E[S]   = e^{s} M'(γ)
//! Var[S] = φ e^{ks} M'(kγ) + e^{2s} (M''(2γ) − M'(γ)²)
//! ```
//!
//! where `M'` and `M''` are the first two derivatives of the count MGF. The
//! first variance term uses `E[N V(μ)] = e^{ks} E[N e^{kγN}]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, Normal, Poisson};

use crate::dist::{CountFamily, SeverityFamily, SeverityKind};
use crate::error::{Error, Result};

/// Mean and variance of the aggregate loss for one risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateMoments {
    pub mean: f64,
    pub variance: f64,
}

pub fn aggregate_mean(count: &CountFamily, lambda: f64, s_value: f64, gamma: f64) -> Result<f64> {
    Ok(s_value.exp() * count.mgf(lambda, gamma, 1)?)
}

pub fn aggregate_variance(
    count: &CountFamily,
    lambda: f64,
    severity: &SeverityFamily,
    s_value: f64,
    gamma: f64,
) -> Result<f64> {
    let k = severity.variance_power() as f64;
    let within = severity.dispersion * (k * s_value).exp() * count.mgf(lambda, k * gamma, 1)?;
    let m1 = count.mgf(lambda, gamma, 1)?;
    let between = (2.0 * s_value).exp() * (count.mgf(lambda, 2.0 * gamma, 2)? - m1 * m1);
    let var = within + between;
    if !var.is_finite() {
        return Err(Error::NonFinite {
            what: "aggregate variance".into(),
            record: None,
        });
    }
    if var < -1e-9 {
        return Err(Error::Consistency(format!("aggregate variance {var} is negative")));
    }
    Ok(var.max(0.0))
}

pub fn aggregate_moments(
    count: &CountFamily,
    lambda: f64,
    severity: &SeverityFamily,
    s_value: f64,
    gamma: f64,
) -> Result<AggregateMoments> {
    Ok(AggregateMoments {
        mean: aggregate_mean(count, lambda, s_value, gamma)?,
        variance: aggregate_variance(count, lambda, severity, s_value, gamma)?,
    })
}

/// `E[N V(e^{s+γN})]` by direct summation over `n = 0..=500`, for variance
/// functions without the power structure.
///
/// Fails if the last ten terms still carry more than 1e-12 of the total.
pub fn expected_count_variance_numeric(
    count: &CountFamily,
    lambda: f64,
    variance_fn: impl Fn(f64) -> f64,
    s_value: f64,
    gamma: f64,
) -> Result<f64> {
    const UPPER: u64 = 500;
    let mut total = 0.0;
    let mut tail = 0.0;
    for n in 1..=UPPER {
        let term = match count.log_pmf(lambda, n) {
            Ok(lp) => n as f64 * variance_fn((s_value + gamma * n as f64).exp()) * lp.exp(),
            Err(_) => 0.0,
        };
        total += term;
        if n > UPPER - 10 {
            tail += term.abs();
        }
    }
    if !total.is_finite() || tail > 1e-12 * total.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::domain(format!(
            "truncated E[N V(μ)] sum did not converge (tail {tail:e}, total {total:e})"
        )));
    }
    Ok(total)
}

/// Monte Carlo estimate of the aggregate-loss moments with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub mean: f64,
    pub variance: f64,
    pub mean_se: f64,
    pub variance_se: f64,
    pub draws: u64,
}

impl OracleEstimate {
    /// Distance of `value` from the estimated mean in standard errors.
    pub fn mean_z(&self, value: f64) -> f64 {
        (value - self.mean).abs() / self.mean_se
    }

    pub fn variance_z(&self, value: f64) -> f64 {
        (value - self.variance).abs() / self.variance_se
    }
}

/// Streaming central moments up to fourth order.
#[derive(Debug, Default, Clone)]
struct RunningMoments {
    n: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl RunningMoments {
    fn push(&mut self, x: f64) {
        let n1 = self.n;
        self.n += 1.0;
        let n = self.n;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }
}

enum AverageSampler {
    Gamma(Gamma<f64>),
    InverseGaussian(InverseGaussian<f64>),
    Normal(Normal<f64>),
}

impl AverageSampler {
    fn new(kind: SeverityKind, mu: f64, dispersion: f64) -> Result<Self> {
        let bad = |e: String| Error::domain(e);
        Ok(match kind {
            SeverityKind::Gamma => AverageSampler::Gamma(
                Gamma::new(1.0 / dispersion, mu * dispersion).map_err(|e| bad(e.to_string()))?,
            ),
            SeverityKind::InverseGaussian => AverageSampler::InverseGaussian(
                InverseGaussian::new(mu, 1.0 / dispersion).map_err(|e| bad(e.to_string()))?,
            ),
            SeverityKind::Normal => AverageSampler::Normal(
                Normal::new(mu, dispersion.sqrt()).map_err(|e| bad(e.to_string()))?,
            ),
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            AverageSampler::Gamma(d) => d.sample(rng),
            AverageSampler::InverseGaussian(d) => d.sample(rng),
            AverageSampler::Normal(d) => d.sample(rng),
        }
    }
}

/// Simulates `N ~ count(λ)`, then `Ȳ | N` with mean `e^{s+γN}` and dispersion
/// `φ/N`, and returns the moments of `S = N Ȳ` (zero when `N = 0`).
///
/// Deterministic for a given seed.
pub fn mc_aggregate_oracle(
    count: &CountFamily,
    lambda: f64,
    severity: &SeverityFamily,
    s_value: f64,
    gamma: f64,
    n_sim: u64,
    seed: u64,
) -> Result<OracleEstimate> {
    if n_sim < 10_000 {
        return Err(Error::domain(format!("oracle needs at least 10^4 draws, got {n_sim}")));
    }
    // Validates λ and family parameters.
    count.mgf(lambda, 0.0, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poisson = Poisson::new(lambda).map_err(|e| Error::domain(e.to_string()))?;
    let mut samplers: Vec<Option<AverageSampler>> = Vec::new();
    let mut acc = RunningMoments::default();
    for _ in 0..n_sim {
        let n = match *count {
            CountFamily::Poisson => poisson.sample(&mut rng) as u64,
            CountFamily::Zip { pi } => {
                if rand::Rng::random::<f64>(&mut rng) < pi {
                    0
                } else {
                    poisson.sample(&mut rng) as u64
                }
            }
            CountFamily::Binomial { .. } => count.sample(lambda, &mut rng)?,
        };
        if n == 0 {
            acc.push(0.0);
            continue;
        }
        let idx = n as usize;
        if samplers.len() <= idx {
            samplers.resize_with(idx + 1, || None);
        }
        if samplers[idx].is_none() {
            let mu = (s_value + gamma * n as f64).exp();
            samplers[idx] = Some(AverageSampler::new(
                severity.kind,
                mu,
                severity.dispersion / n as f64,
            )?);
        }
        let ybar = samplers[idx].as_ref().map(|s| s.sample(&mut rng)).unwrap_or_default();
        acc.push(n as f64 * ybar);
    }
    let n = acc.n;
    let variance = acc.m2 / (n - 1.0);
    let pop_var = acc.m2 / n;
    let m4 = acc.m4 / n;
    Ok(OracleEstimate {
        mean: acc.mean,
        variance,
        mean_se: (variance / n).sqrt(),
        variance_se: ((m4 - pop_var * pop_var).max(0.0) / n).sqrt(),
        draws: n_sim,
    })
}
