//! Error metrics, grid errors against known truths, ordered Lorenz curves and
//! Gini indices.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{true_functions, Dataset};
use crate::error::{Error, Result};
use crate::train::NeurFsModel;

fn check_pair(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} actual values",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::domain("metrics need at least one value"));
    }
    Ok(())
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    Ok((pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub rmse: f64,
}

impl ErrorMetrics {
    pub fn of(pred: &[f64], actual: &[f64]) -> Result<Self> {
        Ok(Self {
            mae: mae(pred, actual)?,
            rmse: rmse(pred, actual)?,
        })
    }
}

/// The points `{0, 0.1, …, 1}²`, first coordinate varying slowest.
pub fn default_grid() -> Array2<f64> {
    let mut g = Array2::zeros((121, 2));
    for i in 0..=10 {
        for j in 0..=10 {
            g[[i * 11 + j, 0]] = i as f64 / 10.0;
            g[[i * 11 + j, 1]] = j as f64 / 10.0;
        }
    }
    g
}

/// Metrics of `estimate` against `truth` over the rows of `grid`.
pub fn grid_error<E, T>(estimate: E, truth: T, grid: &Array2<f64>) -> Result<ErrorMetrics>
where
    E: Fn(&[f64]) -> Result<f64>,
    T: Fn(&[f64]) -> f64,
{
    if grid.nrows() == 0 {
        return Err(Error::domain("empty grid"));
    }
    let mut est = Vec::with_capacity(grid.nrows());
    let mut tru = Vec::with_capacity(grid.nrows());
    for row in grid.rows() {
        let x = row.to_vec();
        est.push(estimate(&x)?);
        tru.push(truth(&x));
    }
    ErrorMetrics::of(&est, &tru)
}

/// Accuracy of a model fitted to the synthetic generator, on the 11×11 grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationMetrics {
    /// `e^{F̂}` against `e^{F}`
    pub frequency: ErrorMetrics,
    /// `e^{Ŝ}` against `e^{S}`
    pub severity: ErrorMetrics,
    /// `Ê[S | x]` against `E[S | x]`
    pub aggregate: ErrorMetrics,
    pub pi: Option<f64>,
    pub gamma: Option<f64>,
    pub phi: f64,
}

pub fn simulation_metrics(model: &NeurFsModel) -> Result<SimulationMetrics> {
    if model.input_dim() != 2 {
        return Err(Error::Shape("grid metrics need a two-covariate model".into()));
    }
    let grid = default_grid();
    let truth = |x: &[f64]| true_functions([x[0], x[1]]);
    let frequency = grid_error(|x| Ok(model.frequency.net.forward(x)?.exp()), |x| truth(x).f.exp(), &grid)?;
    let severity = grid_error(|x| Ok(model.severity.net.forward(x)?.exp()), |x| truth(x).s.exp(), &grid)?;
    let aggregate = grid_error(
        |x| Ok(model.predict(x, 1.0, None)?.aggregate_mean),
        |x| truth(x).aggregate_mean,
        &grid,
    )?;
    Ok(SimulationMetrics {
        frequency,
        severity,
        aggregate,
        pi: model.frequency.pi(),
        gamma: model.severity.net.aux.gamma,
        phi: model.severity.phi(),
    })
}

/// Frequency and severity errors of a model on observed data: `λ̂` against
/// `n`, and `μ̂` (at the observed count) against `ȳ` over records with claims.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataMetrics {
    pub frequency: ErrorMetrics,
    pub severity: Option<ErrorMetrics>,
    /// `Ê[S]` against `n ȳ`
    pub aggregate: ErrorMetrics,
}

pub fn data_metrics(model: &NeurFsModel, data: &Dataset) -> Result<DataMetrics> {
    let preds = model.predict_dataset(data)?;
    let lambda: Vec<f64> = preds.iter().map(|p| p.lambda).collect();
    let counts: Vec<f64> = data.records.iter().map(|r| r.n as f64).collect();
    let (mut mu, mut ybar) = (Vec::new(), Vec::new());
    for (p, r) in preds.iter().zip(&data.records) {
        if r.n > 0 {
            mu.push(p.mu.unwrap_or(f64::NAN));
            ybar.push(r.ybar);
        }
    }
    let agg: Vec<f64> = preds.iter().map(|p| p.aggregate_mean).collect();
    let losses: Vec<f64> = data.records.iter().map(|r| r.aggregate_loss()).collect();
    Ok(DataMetrics {
        frequency: ErrorMetrics::of(&lambda, &counts)?,
        severity: if mu.is_empty() {
            None
        } else {
            Some(ErrorMetrics::of(&mu, &ybar)?)
        },
        aggregate: ErrorMetrics::of(&agg, &losses)?,
    })
}

/// Which premium accumulates along the horizontal axis of an ordered Lorenz curve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiumAxis {
    /// Base premiums `B_i`.
    #[default]
    Base,
    /// Competing premiums `P_i`.
    Competing,
}

/// Points `(premium share, loss share)` from `(0, 0)` to `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzCurve {
    pub points: Vec<(f64, f64)>,
}

/// Ordered Lorenz curve of `losses` with policies sorted by `R = P / B`.
/// Policies with equal `R` form a single step.
pub fn ordered_lorenz(base: &[f64], competing: &[f64], losses: &[f64], axis: PremiumAxis) -> Result<LorenzCurve> {
    if base.len() != competing.len() || base.len() != losses.len() {
        return Err(Error::Shape("base, competing and loss vectors differ in length".into()));
    }
    if base.is_empty() {
        return Err(Error::domain("no policies"));
    }
    if let Some(i) = base.iter().position(|&b| !(b > 0.0 && b.is_finite())) {
        return Err(Error::domain(format!("base premium {} at policy {i} is not positive", base[i])));
    }
    if competing.iter().chain(losses).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::domain("premiums and losses must be finite and non-negative"));
    }
    let premium = match axis {
        PremiumAxis::Base => base,
        PremiumAxis::Competing => competing,
    };
    let total_premium: f64 = premium.iter().sum();
    let total_loss: f64 = losses.iter().sum();
    if !(total_premium > 0.0 && total_loss > 0.0) {
        return Err(Error::domain("premium and loss totals must be positive"));
    }
    let ratio: Vec<f64> = competing.iter().zip(base).map(|(p, b)| p / b).collect();
    let mut order: Vec<usize> = (0..base.len()).collect();
    order.sort_by(|&a, &b| ratio[a].total_cmp(&ratio[b]));
    let mut points = vec![(0.0, 0.0)];
    let (mut cum_p, mut cum_l) = (0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let r = ratio[order[k]];
        while k < order.len() && ratio[order[k]] == r {
            cum_p += premium[order[k]];
            cum_l += losses[order[k]];
            k += 1;
        }
        points.push((cum_p / total_premium, cum_l / total_loss));
    }
    if let Some(last) = points.last_mut() {
        *last = (1.0, 1.0);
    }
    Ok(LorenzCurve { points })
}

/// Twice the area between the line of equality and the curve (trapezoids);
/// positive when the curve bows below the line.
pub fn gini_index(curve: &LorenzCurve) -> f64 {
    let area: f64 = curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    1.0 - 2.0 * area
}

pub fn write_lorenz_csv(curve: &LorenzCurve, path: &Path) -> Result<()> {
    let mut text = String::from("premium_share,loss_share\n");
    for (p, l) in &curve.points {
        text.push_str(&format!("{p},{l}\n"));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
