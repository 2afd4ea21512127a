//! Likelihood objectives, trainers and the fitted frequency-severity model.
//!
//! The frequency part models `ln λ = ln t + F(x)` for a count family; the
//! severity part models `ln E[Ȳ | N = n] = S(x) + γ n` for an exponential
//! dispersion family with dispersion `φ / n` for the average of `n` claims.
//! Each part is fitted separately by mini-batch minimisation of the mean
//! negative log-likelihood.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{train_test_split, Dataset, DatasetRecord, FeatureGroup, PreprocMeta};
use crate::dist::{CountFamily, CountKind, SeverityFamily, SeverityKind};
use crate::error::{Error, Result};
use crate::moments::aggregate_moments;
use crate::neural::{
    transform_positive, transform_positive_derivative, transform_unit, AuxInit, AuxScalars,
    ForwardMode, MlpParams,
};
use crate::optim::{OptimizerConfig, OptimizerState, PlateauState, Schedule};
use crate::special::{log_add_exp, softplus};

/// One row of a training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss accumulated over the epoch's mini-batches.
    pub loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
    pub pi: Option<f64>,
    pub gamma: Option<f64>,
    pub phi: Option<f64>,
}

// ---------------------------------------------------------------------------
// Objectives

/// Mean loss over a batch with its derivative with respect to each network
/// output and to the auxiliary scalars.
#[derive(Debug, Clone)]
pub struct OutputLoss {
    pub loss: f64,
    pub d_output: Array1<f64>,
    pub d_aux: AuxScalars,
}

fn non_finite(what: &str, record: usize) -> Error {
    Error::NonFinite {
        what: what.into(),
        record: Some(record),
    }
}

fn check_batch(outputs: ArrayView1<'_, f64>, batch: &[usize]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    if outputs.len() != batch.len() {
        return Err(Error::Shape("one network output per batch record expected".into()));
    }
    Ok(())
}

/// Frequency NLL given the network outputs `F(x_i)` of the batch records.
pub fn frequency_output_loss(
    count: CountKind,
    raw_pi: Option<f64>,
    outputs: ArrayView1<'_, f64>,
    records: &[DatasetRecord],
    batch: &[usize],
) -> Result<OutputLoss> {
    check_batch(outputs, batch)?;
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_output = Array1::zeros(batch.len());
    let mut d_raw_pi = 0.0;
    let zip_raw = match count {
        CountKind::Zip => Some(raw_pi.ok_or_else(|| Error::domain("ZIP frequency needs raw_pi"))?),
        _ => None,
    };
    for (k, (&i, &f)) in batch.iter().zip(outputs.iter()).enumerate() {
        let r = &records[i];
        let lambda = r.t * f.exp();
        let n = r.n as f64;
        let (ll, dl_df) = match count {
            CountKind::Poisson => (CountFamily::Poisson.log_pmf(lambda, r.n).map_err(|_| non_finite("frequency loss", i))?, n - lambda),
            CountKind::Binomial { trials } => {
                let m = trials as f64;
                if !(lambda < m) {
                    return Err(non_finite("frequency loss", i));
                }
                let ll = CountFamily::Binomial { trials }
                    .log_pmf(lambda, r.n)
                    .map_err(|_| non_finite("frequency loss", i))?;
                (ll, n - (m - n) * lambda / (m - lambda))
            }
            CountKind::Zip => {
                let raw = zip_raw.unwrap_or(0.0);
                let ln_pi = -softplus(-raw);
                let ln_keep = -softplus(raw);
                let pi = transform_unit(raw);
                if r.n == 0 {
                    let ll = log_add_exp(ln_pi, ln_keep - lambda);
                    // weight of the Poisson branch in P(N = 0)
                    let w = (ln_keep - lambda - ll).exp();
                    d_raw_pi += pi * (1.0 - pi) * (-lambda).exp_m1().abs() / ll.exp();
                    (ll, -w * lambda)
                } else {
                    let ll = ln_keep + CountFamily::Poisson.log_pmf(lambda, r.n).map_err(|_| non_finite("frequency loss", i))?;
                    d_raw_pi -= pi;
                    (ll, n - lambda)
                }
            }
        };
        if !ll.is_finite() || !dl_df.is_finite() {
            return Err(non_finite("frequency loss", i));
        }
        loss -= ll;
        d_output[k] = -dl_df / b;
    }
    Ok(OutputLoss {
        loss: loss / b,
        d_output,
        d_aux: AuxScalars {
            raw_pi: zip_raw.map(|_| -d_raw_pi / b),
            raw_phi: None,
            gamma: None,
        },
    })
}

/// Severity NLL given the network outputs `S(x_i)` of the batch records.
/// `gamma = None` holds γ at zero.
pub fn severity_output_loss(
    kind: SeverityKind,
    raw_phi: f64,
    gamma: Option<f64>,
    outputs: ArrayView1<'_, f64>,
    records: &[DatasetRecord],
    batch: &[usize],
) -> Result<OutputLoss> {
    check_batch(outputs, batch)?;
    let b = batch.len() as f64;
    let phi = transform_positive(raw_phi);
    if !(phi > 0.0) {
        return Err(Error::domain("dispersion collapsed to zero"));
    }
    let g = gamma.unwrap_or(0.0);
    let mut loss = 0.0;
    let mut d_output = Array1::zeros(batch.len());
    let (mut d_gamma, mut d_phi) = (0.0, 0.0);
    for (k, (&i, &s)) in batch.iter().zip(outputs.iter()).enumerate() {
        let r = &records[i];
        if r.n == 0 {
            return Err(Error::domain(format!("record {i} has no claims")));
        }
        let n = r.n as f64;
        let mu = (s + g * n).exp();
        let grad = kind
            .log_density_grad(mu, phi / n, r.ybar)
            .map_err(|_| non_finite("severity loss", i))?;
        if !grad.value.is_finite() || !grad.d_log_mean.is_finite() || !grad.d_dispersion.is_finite() {
            return Err(non_finite("severity loss", i));
        }
        loss -= grad.value;
        d_output[k] = -grad.d_log_mean / b;
        d_gamma -= grad.d_log_mean * n;
        d_phi -= grad.d_dispersion / n;
    }
    Ok(OutputLoss {
        loss: loss / b,
        d_output,
        d_aux: AuxScalars {
            raw_pi: None,
            raw_phi: Some(d_phi * transform_positive_derivative(raw_phi) / b),
            gamma: gamma.map(|_| d_gamma / b),
        },
    })
}

fn gather(records: &[DatasetRecord], batch: &[usize], dim: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((batch.len(), dim));
    for (mut row, &i) in x.rows_mut().into_iter().zip(batch) {
        let r = records
            .get(i)
            .ok_or_else(|| Error::Shape(format!("record index {i} out of range")))?;
        if r.x.len() != dim {
            return Err(Error::Shape(format!(
                "record {i} has {} covariates, network expects {dim}",
                r.x.len()
            )));
        }
        row.assign(&ArrayView1::from(&r.x[..]));
    }
    Ok(x)
}

fn with_aux(mut grads: MlpParams, aux: AuxScalars) -> MlpParams {
    grads.aux = aux;
    grads
}

/// Evaluation-mode frequency NLL of `net` over `batch` and its gradient with
/// respect to every trainable entry of `net` (including raw π).
pub fn frequency_nll_and_grads(
    net: &MlpParams,
    count: CountKind,
    records: &[DatasetRecord],
    batch: &[usize],
) -> Result<(f64, MlpParams)> {
    let x = gather(records, batch, net.input_dim())?;
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let (out, cache) = net.forward_batch(x.view(), ForwardMode::EVAL, &mut unused)?;
    let ol = frequency_output_loss(count, net.aux.raw_pi, out.view(), records, batch)?;
    let grads = net.backward(&cache, ol.d_output.view())?;
    Ok((ol.loss, with_aux(grads, ol.d_aux)))
}

pub fn frequency_nll(net: &MlpParams, count: CountKind, records: &[DatasetRecord], batch: &[usize]) -> Result<f64> {
    let x = gather(records, batch, net.input_dim())?;
    let out = net.predict_batch(x.view())?;
    Ok(frequency_output_loss(count, net.aux.raw_pi, out.view(), records, batch)?.loss)
}

fn raw_phi_of(net: &MlpParams) -> Result<f64> {
    net.aux
        .raw_phi
        .ok_or_else(|| Error::domain("severity network has no dispersion parameter"))
}

/// Evaluation-mode severity NLL of `net` over `batch` (all with `n > 0`) and
/// its gradient, including raw φ and, when present, γ.
pub fn severity_nll_and_grads(
    net: &MlpParams,
    kind: SeverityKind,
    records: &[DatasetRecord],
    batch: &[usize],
) -> Result<(f64, MlpParams)> {
    let x = gather(records, batch, net.input_dim())?;
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let (out, cache) = net.forward_batch(x.view(), ForwardMode::EVAL, &mut unused)?;
    let ol = severity_output_loss(kind, raw_phi_of(net)?, net.aux.gamma, out.view(), records, batch)?;
    let grads = net.backward(&cache, ol.d_output.view())?;
    Ok((ol.loss, with_aux(grads, ol.d_aux)))
}

pub fn severity_nll(net: &MlpParams, kind: SeverityKind, records: &[DatasetRecord], batch: &[usize]) -> Result<f64> {
    let x = gather(records, batch, net.input_dim())?;
    let out = net.predict_batch(x.view())?;
    Ok(severity_output_loss(kind, raw_phi_of(net)?, net.aux.gamma, out.view(), records, batch)?.loss)
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Hidden layer widths; empty gives a linear predictor.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub dropout_rate: f64,
    pub batch_norm: bool,
    /// Share of the training records held out to monitor the loss; 0 for none.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![25, 25],
            epochs: 50,
            batch_size: 512,
            optimizer: OptimizerConfig::default(),
            schedule: Schedule::StepDecay {
                initial_lr: 0.01,
                factor: 0.9,
                period: 5,
            },
            dropout_rate: 0.0,
            batch_norm: false,
            validation_fraction: 0.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    /// Every problem with the configuration, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epochs == 0 {
            out.push("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            out.push("batch_size must be at least 1".to_string());
        }
        if self.hidden.contains(&0) {
            out.push("hidden layer widths must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            out.push(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            out.push(format!(
                "validation_fraction {} not in [0, 1)",
                self.validation_fraction
            ));
        }
        if let Err(e) = self.optimizer.validate() {
            out.push(e.to_string());
        }
        if let Err(e) = self.schedule.validate() {
            out.push(e.to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::domain(problems.join("; ")))
        }
    }

    fn layer_dims(&self, inputs: usize) -> Vec<usize> {
        let mut dims = vec![inputs];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone)]
pub struct Fit<M> {
    pub model: M,
    pub history: Vec<EpochRecord>,
}

fn snapshot(net: &MlpParams) -> (Option<f64>, Option<f64>, Option<f64>) {
    (
        net.aux.raw_pi.map(transform_unit),
        net.aux.gamma,
        net.aux.raw_phi.map(transform_positive),
    )
}

fn split_indices(indices: Vec<usize>, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if fraction == 0.0 {
        return Ok((indices, Vec::new()));
    }
    let (train, val) = train_test_split(&indices, fraction, seed)?;
    if train.is_empty() {
        return Err(Error::Data("validation split leaves no training records".into()));
    }
    Ok((train, val))
}

/// Mini-batch loop shared by both parts. `objective` maps a batch's network
/// outputs to the loss and output/aux gradients.
fn train_loop<L>(
    net: &mut MlpParams,
    records: &[DatasetRecord],
    mut train_idx: Vec<usize>,
    val_idx: &[usize],
    config: &TrainConfig,
    objective: L,
) -> Result<Vec<EpochRecord>>
where
    L: Fn(&MlpParams, ArrayView1<'_, f64>, &[usize]) -> Result<OutputLoss>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut optimizer = OptimizerState::new(config.optimizer, net.flat_len())?;
    let mut plateau = PlateauState::default();
    let mut history: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mode = ForwardMode::train(config.dropout_rate);
    let dim = net.input_dim();
    for epoch in 0..config.epochs {
        let lr = config.schedule.lr(epoch, &plateau);
        train_idx.shuffle(&mut rng);
        let diverged = |reason: String, history: &[EpochRecord]| Error::Diverged {
            epoch,
            reason,
            history: history.to_vec(),
        };
        let mut total = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let x = gather(records, batch, dim)?;
            let (out, cache) = net.forward_batch(x.view(), mode, &mut rng)?;
            let ol = match objective(net, out.view(), batch) {
                Ok(ol) => ol,
                Err(e @ Error::NonFinite { .. }) => return Err(diverged(e.to_string(), &history)),
                Err(e) => return Err(e),
            };
            let grads = with_aux(net.backward(&cache, ol.d_output.view())?, ol.d_aux);
            let mut flat = net.to_flat();
            optimizer
                .step(&mut flat, &grads.to_flat(), lr)
                .map_err(|e| diverged(e.to_string(), &history))?;
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(diverged("parameters became non-finite".into(), &history));
            }
            net.load_flat(&flat)?;
            net.absorb_batch_stats(&cache);
            total += ol.loss * batch.len() as f64;
        }
        let loss = total / train_idx.len() as f64;
        let val_loss = if val_idx.is_empty() {
            None
        } else {
            let x = gather(records, val_idx, dim)?;
            let out = net.predict_batch(x.view())?;
            match objective(net, out.view(), val_idx) {
                Ok(ol) => Some(ol.loss),
                Err(e @ Error::NonFinite { .. }) => return Err(diverged(e.to_string(), &history)),
                Err(e) => return Err(e),
            }
        };
        let (pi, gamma, phi) = snapshot(net);
        history.push(EpochRecord {
            epoch,
            loss,
            val_loss,
            lr,
            pi,
            gamma,
            phi,
        });
        log::debug!("epoch {epoch}: loss {loss:.6} lr {lr:.3e}");
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "training loss is not finite".into(),
                history,
            });
        }
        if plateau.observe(&config.schedule, val_loss.unwrap_or(loss)) {
            log::info!("stopping after epoch {epoch}: no improvement");
            break;
        }
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyModel {
    pub count: CountKind,
    /// Outputs `F(x)`; carries raw π for ZIP.
    pub net: MlpParams,
}

impl FrequencyModel {
    pub fn family(&self) -> Result<CountFamily> {
        self.count.family(self.pi())
    }

    pub fn pi(&self) -> Option<f64> {
        self.net.aux.raw_pi.map(transform_unit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityModel {
    pub kind: SeverityKind,
    /// Outputs `S(x)`; carries raw φ and, for the dependent model, γ.
    pub net: MlpParams,
}

impl SeverityModel {
    pub fn gamma(&self) -> f64 {
        self.net.aux.gamma.unwrap_or(0.0)
    }

    pub fn is_dependent(&self) -> bool {
        self.net.aux.gamma.is_some()
    }

    pub fn phi(&self) -> f64 {
        self.net.aux.raw_phi.map_or(f64::NAN, transform_positive)
    }

    pub fn family(&self) -> Result<SeverityFamily> {
        SeverityFamily::new(self.kind, self.phi())
    }
}

/// Starts the linear output at the log of the pooled mean.
fn set_output_bias(net: &mut MlpParams, value: f64) {
    if let Some(out) = net.layers.last_mut() {
        out.bias[0] = value;
    }
}

/// Fits the frequency part on every record of `data`.
pub fn fit_frequency(data: &Dataset, count: CountKind, config: &TrainConfig) -> Result<Fit<FrequencyModel>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("no records to fit the frequency model".into()));
    }
    let aux = AuxInit {
        pi: count == CountKind::Zip,
        ..AuxInit::default()
    };
    let mut net = MlpParams::init(&config.layer_dims(data.dim()), config.batch_norm, aux, config.seed)?;
    let claims: f64 = data.records.iter().map(|r| r.n as f64).sum();
    let exposure: f64 = data.records.iter().map(|r| r.t).sum();
    if claims > 0.0 {
        let pi = net.aux.raw_pi.map_or(0.0, transform_unit);
        set_output_bias(&mut net, (claims / exposure / (1.0 - pi)).ln());
    }
    let (train_idx, val_idx) = split_indices((0..data.len()).collect(), config.validation_fraction, config.seed)?;
    let records = &data.records;
    let history = train_loop(&mut net, records, train_idx, &val_idx, config, |net, out, batch| {
        frequency_output_loss(count, net.aux.raw_pi, out, records, batch)
    })?;
    Ok(Fit {
        model: FrequencyModel { count, net },
        history,
    })
}

/// Moment starting value for the dispersion: the pooled Pearson statistic
/// `mean(n (ȳ − m)² / V(m))` around the overall mean `m`, clamped to a sane range.
pub fn initial_dispersion(kind: SeverityKind, claims: &[DatasetRecord]) -> f64 {
    let total: f64 = claims.iter().map(|r| r.n as f64).sum();
    if claims.is_empty() || total == 0.0 {
        return 1.0;
    }
    let m = claims.iter().map(|r| r.n as f64 * r.ybar).sum::<f64>() / total;
    let v = kind.variance_function(m).unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let stat = claims
        .iter()
        .map(|r| r.n as f64 * (r.ybar - m).powi(2) / v)
        .sum::<f64>()
        / claims.len() as f64;
    if stat.is_finite() {
        stat.clamp(1e-3, 1e3)
    } else {
        1.0
    }
}

/// Fits the severity part on the records with at least one claim. With
/// `dependent = false` γ is held at zero.
pub fn fit_severity(
    data: &Dataset,
    kind: SeverityKind,
    dependent: bool,
    config: &TrainConfig,
) -> Result<Fit<SeverityModel>> {
    config.validate()?;
    let claims = data.with_claims();
    if claims.is_empty() {
        return Err(Error::Data("no records with claims to fit the severity model".into()));
    }
    let aux = AuxInit {
        phi: true,
        gamma: dependent,
        ..AuxInit::default()
    };
    let mut net = MlpParams::init(&config.layer_dims(claims.dim()), config.batch_norm, aux, config.seed)?;
    net.aux.raw_phi = Some(initial_dispersion(kind, &claims.records).sqrt());
    let total: f64 = claims.records.iter().map(|r| r.n as f64).sum();
    let mean = claims.records.iter().map(|r| r.n as f64 * r.ybar).sum::<f64>() / total;
    if mean > 0.0 {
        set_output_bias(&mut net, mean.ln());
    }
    let (train_idx, val_idx) = split_indices((0..claims.len()).collect(), config.validation_fraction, config.seed)?;
    let records = &claims.records;
    let history = train_loop(&mut net, records, train_idx, &val_idx, config, |net, out, batch| {
        severity_output_loss(kind, raw_phi_of(net)?, net.aux.gamma, out, records, batch)
    })?;
    Ok(Fit {
        model: SeverityModel { kind, net },
        history,
    })
}

// ---------------------------------------------------------------------------
// Fitted model

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeurFsModel {
    pub name: String,
    pub feature_names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preproc: Option<PreprocMeta>,
    pub frequency: FrequencyModel,
    pub severity: SeverityModel,
}

/// Per-record model output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub f: f64,
    pub s: f64,
    /// `t e^{F(x)}`
    pub lambda: f64,
    /// `e^{S(x) + γ n}` when a count is supplied.
    pub mu: Option<f64>,
    pub aggregate_mean: f64,
    pub aggregate_variance: f64,
}

/// Both parts fitted and their training histories.
#[derive(Debug, Clone)]
pub struct ModelFit {
    pub model: NeurFsModel,
    pub frequency_history: Vec<EpochRecord>,
    pub severity_history: Vec<EpochRecord>,
}

impl NeurFsModel {
    pub fn assemble(name: &str, data: &Dataset, frequency: FrequencyModel, severity: SeverityModel) -> Result<Self> {
        let m = Self {
            name: name.to_string(),
            feature_names: data.feature_names.clone(),
            groups: data.groups.clone(),
            preproc: None,
            frequency,
            severity,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.frequency.net.validate()?;
        self.severity.net.validate()?;
        let dim = self.feature_names.len();
        if self.frequency.net.input_dim() != dim || self.severity.net.input_dim() != dim {
            return Err(Error::Shape("network inputs do not match the feature list".into()));
        }
        self.frequency.family()?;
        self.severity.family()?;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Errors unless `data` has exactly this model's feature columns.
    pub fn check_compatible(&self, data: &Dataset) -> Result<()> {
        if data.feature_names != self.feature_names {
            return Err(Error::Schema(format!(
                "data columns [{}] do not match model columns [{}]",
                data.feature_names.join(", "),
                self.feature_names.join(", ")
            )));
        }
        Ok(())
    }

    /// λ̂, μ̂ (if `n` given) and aggregate mean/variance at covariates `x`.
    pub fn predict(&self, x: &[f64], t: f64, n: Option<u64>) -> Result<Prediction> {
        let f = self.frequency.net.forward(x)?;
        let s = self.severity.net.forward(x)?;
        self.assemble_prediction(f, s, t, n)
    }

    fn assemble_prediction(&self, f: f64, s: f64, t: f64, n: Option<u64>) -> Result<Prediction> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("exposure must be positive, got {t}")));
        }
        let lambda = t * f.exp();
        let gamma = self.severity.gamma();
        let moments = aggregate_moments(&self.frequency.family()?, lambda, &self.severity.family()?, s, gamma)?;
        Ok(Prediction {
            f,
            s,
            lambda,
            mu: n.map(|n| (s + gamma * n as f64).exp()),
            aggregate_mean: moments.mean,
            aggregate_variance: moments.variance,
        })
    }

    /// Predictions for every record, using the observed count for μ̂.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<Prediction>> {
        self.check_compatible(data)?;
        let x = data.x_matrix();
        let f = self.frequency.net.predict_batch(x.view())?;
        let s = self.severity.net.predict_batch(x.view())?;
        data.records
            .iter()
            .zip(f.iter().zip(s.iter()))
            .map(|(r, (&f, &s))| self.assemble_prediction(f, s, r.t, Some(r.n)))
            .collect()
    }

    /// `e^{F(x)}` for each row of `x`.
    pub fn frequency_rate(&self, x: ndarray::ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.frequency.net.predict_batch(x)?.mapv(f64::exp))
    }

    /// `e^{S(x)}` for each row of `x`.
    pub fn severity_scale(&self, x: ndarray::ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.severity.net.predict_batch(x)?.mapv(f64::exp))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Which model family a fit produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    /// Networks as configured, γ trained.
    Neurfs,
    /// Linear predictors, γ held at zero.
    Glm,
    /// Linear predictors, γ trained.
    Dglm,
}

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Neurfs => "neurfs",
            ModelVariant::Glm => "glm",
            ModelVariant::Dglm => "dglm",
        }
    }
}

/// Fits frequency then severity for the requested variant. The baselines
/// reuse the given configs with the hidden layers removed.
pub fn fit_model(
    data: &Dataset,
    variant: ModelVariant,
    count: CountKind,
    severity: SeverityKind,
    frequency_config: &TrainConfig,
    severity_config: &TrainConfig,
) -> Result<ModelFit> {
    let linear = |c: &TrainConfig| TrainConfig {
        hidden: Vec::new(),
        dropout_rate: 0.0,
        batch_norm: false,
        ..c.clone()
    };
    let (fc, sc) = match variant {
        ModelVariant::Neurfs => (frequency_config.clone(), severity_config.clone()),
        ModelVariant::Glm | ModelVariant::Dglm => (linear(frequency_config), linear(severity_config)),
    };
    let freq = fit_frequency(data, count, &fc)?;
    let sev = fit_severity(data, severity, variant != ModelVariant::Glm, &sc)?;
    Ok(ModelFit {
        model: NeurFsModel::assemble(variant.name(), data, freq.model, sev.model)?,
        frequency_history: freq.history,
        severity_history: sev.history,
    })
}

pub fn baseline_glm(
    data: &Dataset,
    count: CountKind,
    severity: SeverityKind,
    frequency_config: &TrainConfig,
    severity_config: &TrainConfig,
) -> Result<ModelFit> {
    fit_model(data, ModelVariant::Glm, count, severity, frequency_config, severity_config)
}

pub fn baseline_dglm(
    data: &Dataset,
    count: CountKind,
    severity: SeverityKind,
    frequency_config: &TrainConfig,
    severity_config: &TrainConfig,
) -> Result<ModelFit> {
    fit_model(data, ModelVariant::Dglm, count, severity, frequency_config, severity_config)
}
