//! Command implementations. Every output is a pure function of the inputs
//! and the seed, so repeated runs produce byte-identical files.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use neurfs_core::data::{
    apply_preproc, fit_preproc, generate_synthetic, load_csv, read_dataset_csv, train_test_split, write_dataset_csv,
    Dataset, RawTable, Schema,
};
use neurfs_core::eval::{
    data_metrics, gini_index, ordered_lorenz, simulation_metrics, write_lorenz_csv, DataMetrics, PremiumAxis,
    SimulationMetrics,
};
use neurfs_core::explain::{
    global_importance, model_value_fn, ranked_importance, sample_background, shapley_exact, shapley_sampled,
    Attribution, ExplainTarget,
};
use neurfs_core::train::{fit_model, EpochRecord, NeurFsModel};
use serde::Serialize;

use crate::cli::{EvaluateArgs, ExplainArgs, PredictArgs, SimulateArgs, TargetArg, TrainArgs};
use crate::config::RunConfig;
use crate::Failure;

/// Largest `|phi0 + Σφ − f(x)|` accepted from exact attributions.
pub const LOCAL_ACCURACY_TOL: f64 = 1e-8;

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::output(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::output(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| Failure::output(path, e))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<(), Failure> {
    w.flush().map_err(|e| Failure::output(path, e))
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Data(format!("{what} not found: {}", path.display())))
    }
}

pub fn simulate(args: &SimulateArgs, seed: u64) -> Result<(), Failure> {
    if args.rows == 0 {
        return Err(Failure::Config("--rows must be at least 1".into()));
    }
    let data = generate_synthetic(args.rows, seed)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_dataset_csv(&data, &args.out).map_err(|e| Failure::output(&args.out, e))?;
    println!("wrote {} records to {}", data.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let base = path
        .canonicalize()
        .ok()
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let config = RunConfig::parse(&text, &base).map_err(|errors| Failure::Config(errors.join("\n  ")))?;
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

/// Train/test datasets plus the positions of the held-out rows in the source file.
struct Prepared {
    train: Dataset,
    test: Option<Dataset>,
    test_rows: Vec<usize>,
    preproc: Option<neurfs_core::data::PreprocMeta>,
}

fn split_positions(len: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), Failure> {
    let all: Vec<usize> = (0..len).collect();
    if fraction == 0.0 {
        return Ok((all, Vec::new()));
    }
    let (mut train, mut test) = train_test_split(&all, fraction, seed)?;
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn prepare(config: &RunConfig) -> Result<Prepared, Failure> {
    let data = &config.data;
    require_file(&data.path, "dataset")?;
    match &data.schema {
        Some(schema_path) => {
            require_file(schema_path, "schema")?;
            let schema = Schema::load(schema_path)?;
            let table = load_csv(&data.path, &schema)?;
            let (train_idx, test_idx) = split_positions(table.rows.len(), data.test_fraction, config.seed)?;
            let pick = |idx: &[usize]| RawTable {
                rows: idx.iter().map(|&i| table.rows[i].clone()).collect(),
                ..table.clone()
            };
            let train_table = pick(&train_idx);
            let meta = fit_preproc(&train_table)?;
            let train = apply_preproc(&train_table, &meta)?;
            let test = if test_idx.is_empty() {
                None
            } else {
                Some(apply_preproc(&pick(&test_idx), &meta)?)
            };
            let test_rows = test_idx.iter().map(|&i| table.rows[i].line - 2).collect();
            Ok(Prepared {
                train,
                test,
                test_rows,
                preproc: Some(meta),
            })
        }
        None => {
            let all = read_dataset_csv(&data.path)?;
            let (train_idx, test_idx) = split_positions(all.len(), data.test_fraction, config.seed)?;
            Ok(Prepared {
                train: all.subset(&train_idx),
                test: (!test_idx.is_empty()).then(|| all.subset(&test_idx)),
                test_rows: test_idx,
                preproc: None,
            })
        }
    }
}

/// Copies the header and the given data rows (zero-based) of a CSV file.
fn copy_rows(source: &Path, rows: &[usize], dest: &Path) -> Result<(), Failure> {
    let keep: BTreeSet<usize> = rows.iter().copied().collect();
    let mut rdr = csv::Reader::from_path(source).map_err(|e| Failure::Data(e.to_string()))?;
    let mut w = csv_writer(dest)?;
    w.write_record(rdr.headers().map_err(|e| Failure::Data(e.to_string()))?)
        .map_err(|e| Failure::output(dest, e))?;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Failure::Data(e.to_string()))?;
        if keep.contains(&i) {
            w.write_record(&rec).map_err(|e| Failure::output(dest, e))?;
        }
    }
    finish(w, dest)
}

fn write_history(history: &[EpochRecord], path: &Path) -> Result<(), Failure> {
    let mut w = csv_writer(path)?;
    for h in history {
        w.serialize(h).map_err(|e| Failure::output(path, e))?;
    }
    if history.is_empty() {
        w.write_record(["epoch", "loss", "val_loss", "lr", "pi", "gamma", "phi"])
            .map_err(|e| Failure::output(path, e))?;
    }
    finish(w, path)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

pub fn train(args: &TrainArgs, seed: Option<u64>) -> Result<(), Failure> {
    let config = load_config(&args.config, seed)?;
    let prepared = prepare(&config)?;
    let fit = fit_model(
        &prepared.train,
        config.variant,
        config.count,
        config.severity_family,
        &config.frequency,
        &config.severity,
    )?;
    let mut model = fit.model;
    model.preproc = prepared.preproc;

    create_dir(&args.out)?;
    let model_path = args.out.join("model.json");
    model.save(&model_path).map_err(|e| Failure::output(&model_path, e))?;
    write_history(&fit.frequency_history, &args.out.join("frequency_history.csv"))?;
    write_history(&fit.severity_history, &args.out.join("severity_history.csv"))?;
    write_text(&args.out.join("config.toml"), &config.to_toml())?;
    if prepared.test.is_some() {
        copy_rows(&config.data.path, &prepared.test_rows, &args.out.join("test.csv"))?;
    }

    let last = |h: &[EpochRecord]| h.last().map(|r| r.loss);
    println!(
        "trained {} on {} records{}",
        model.name,
        prepared.train.len(),
        prepared
            .test
            .as_ref()
            .map(|t| format!(" ({} held out in test.csv)", t.len()))
            .unwrap_or_default()
    );
    println!("  pi    = {}", opt(model.frequency.pi()));
    println!("  gamma = {:.6}", model.severity.gamma());
    println!("  phi   = {:.6}", model.severity.phi());
    println!("  frequency loss = {}", opt(last(&fit.frequency_history)));
    println!("  severity loss  = {}", opt(last(&fit.severity_history)));
    Ok(())
}

// ---------------------------------------------------------------------------
// predict / evaluate / explain

fn load_model(path: &Path) -> Result<NeurFsModel, Failure> {
    require_file(path, "model")?;
    Ok(NeurFsModel::load(path)?)
}

/// Reads data in the model's encoding.
fn load_data(model: &NeurFsModel, data: &Path, schema: Option<&PathBuf>) -> Result<Dataset, Failure> {
    require_file(data, "dataset")?;
    let dataset = match schema {
        Some(schema_path) => {
            require_file(schema_path, "schema")?;
            let meta = model.preproc.as_ref().ok_or_else(|| {
                Failure::Data(format!(
                    "model {} was trained on encoded data; pass the encoded dataset without --schema",
                    model.name
                ))
            })?;
            let table = load_csv(data, &Schema::load(schema_path)?)?;
            apply_preproc(&table, meta)?
        }
        None => read_dataset_csv(data)?,
    };
    model.check_compatible(&dataset)?;
    Ok(dataset)
}

pub fn predict(args: &PredictArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let data = load_data(&model, &args.data.data, args.data.schema.as_ref())?;
    let preds = model.predict_dataset(&data)?;
    let mut w = csv_writer(&args.out)?;
    let out = &args.out;
    w.write_record(["record", "lambda", "mu", "aggregate_mean", "aggregate_variance"])
        .map_err(|e| Failure::output(out, e))?;
    for (i, p) in preds.iter().enumerate() {
        w.write_record([
            i.to_string(),
            p.lambda.to_string(),
            p.mu.map(|m| m.to_string()).unwrap_or_default(),
            p.aggregate_mean.to_string(),
            p.aggregate_variance.to_string(),
        ])
        .map_err(|e| Failure::output(out, e))?;
    }
    finish(w, out)?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct ModelReport {
    label: String,
    metrics: DataMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<SimulationMetrics>,
}

#[derive(Serialize)]
struct GiniReport {
    /// Rows index the base model, columns the competing model.
    labels: Vec<String>,
    /// `null` when the data has no losses.
    matrix: Vec<Vec<Option<f64>>>,
}

#[derive(Serialize)]
struct EvaluationReport {
    records: usize,
    models: Vec<ModelReport>,
    gini: GiniReport,
}

/// Model names, with `_2`, `_3`, … appended to repeats.
fn unique_labels(models: &[NeurFsModel]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(models.len());
    for m in models {
        let mut label = m.name.clone();
        let mut k = 2;
        while out.contains(&label) {
            label = format!("{}_{k}", m.name);
            k += 1;
        }
        out.push(label);
    }
    out
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    let models = args.models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?;
    let labels = unique_labels(&models);
    let mut datasets = Vec::with_capacity(models.len());
    for m in &models {
        datasets.push(load_data(m, &args.data.data, args.data.schema.as_ref())?);
    }
    let losses: Vec<f64> = datasets[0].records.iter().map(|r| r.aggregate_loss()).collect();
    let mut premiums = Vec::with_capacity(models.len());
    let mut reports = Vec::with_capacity(models.len());
    for ((m, d), label) in models.iter().zip(&datasets).zip(&labels) {
        premiums.push(m.predict_dataset(d)?.iter().map(|p| p.aggregate_mean).collect::<Vec<_>>());
        reports.push(ModelReport {
            label: label.clone(),
            metrics: data_metrics(m, d)?,
            grid: if args.grid { Some(simulation_metrics(m)?) } else { None },
        });
    }

    create_dir(&args.out)?;
    let k = models.len();
    let mut matrix = vec![vec![None; k]; k];
    let gini_path = args.out.join("gini.csv");
    let mut w = csv_writer(&gini_path)?;
    w.write_record(["base", "competing", "gini"])
        .map_err(|e| Failure::output(&gini_path, e))?;
    if losses.iter().sum::<f64>() > 0.0 {
        for b in 0..k {
            for c in 0..k {
                let curve = ordered_lorenz(&premiums[b], &premiums[c], &losses, PremiumAxis::Base)?;
                let g = gini_index(&curve);
                matrix[b][c] = Some(g);
                if b != c {
                    let path = args.out.join(format!("lorenz_{}_vs_{}.csv", labels[b], labels[c]));
                    write_lorenz_csv(&curve, &path).map_err(|e| Failure::output(&path, e))?;
                }
                w.write_record([labels[b].as_str(), labels[c].as_str(), &g.to_string()])
                    .map_err(|e| Failure::output(&gini_path, e))?;
            }
        }
    } else {
        log::warn!("the data has no losses; Gini indices are undefined");
    }
    finish(w, &gini_path)?;

    let report = EvaluationReport {
        records: losses.len(),
        models: reports,
        gini: GiniReport {
            labels: labels.clone(),
            matrix: matrix.clone(),
        },
    };
    let report_path = args.out.join("report.json");
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| Failure::output(&report_path, e))?;
    text.push('\n');
    write_text(&report_path, &text)?;

    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{} records", losses.len());
    let _ = writeln!(
        out,
        "{:<12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "model", "freq MAE", "freq RMSE", "sev MAE", "sev RMSE", "agg MAE", "agg RMSE"
    );
    for r in &report.models {
        let m = &r.metrics;
        let sev = m.severity.map_or(["-".into(), "-".into()], |s| {
            [format!("{:.6}", s.mae), format!("{:.6}", s.rmse)]
        });
        let _ = writeln!(
            out,
            "{:<12} {:>12.6} {:>12.6} {:>12} {:>12} {:>12.6} {:>12.6}",
            r.label, m.frequency.mae, m.frequency.rmse, sev[0], sev[1], m.aggregate.mae, m.aggregate.rmse
        );
        if let Some(g) = &r.grid {
            let _ = writeln!(
                out,
                "{:<12} grid MAE: frequency {:.6}, severity {:.6}, aggregate {:.6}",
                "", g.frequency.mae, g.severity.mae, g.aggregate.mae
            );
        }
    }
    let _ = writeln!(out, "Gini (rows: base, columns: competing)");
    let _ = write!(out, "{:<12}", "");
    for l in &labels {
        let _ = write!(out, " {l:>12}");
    }
    let _ = writeln!(out);
    for (l, row) in labels.iter().zip(&matrix) {
        let _ = write!(out, "{l:<12}");
        for g in row {
            match g {
                Some(g) => write!(out, " {g:>12.6}"),
                None => write!(out, " {:>12}", "-"),
            }
            .ok();
        }
        let _ = writeln!(out);
    }
    Ok(())
}

fn targets(arg: TargetArg) -> &'static [ExplainTarget] {
    match arg {
        TargetArg::Frequency => &[ExplainTarget::Frequency],
        TargetArg::Severity => &[ExplainTarget::Severity],
        TargetArg::Both => &[ExplainTarget::Frequency, ExplainTarget::Severity],
    }
}

pub fn explain(args: &ExplainArgs, seed: u64) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let data = load_data(&model, &args.data.data, args.data.schema.as_ref())?;
    let records: Vec<usize> = if args.global {
        (0..data.len()).collect()
    } else {
        args.records.clone()
    };
    if records.is_empty() {
        return Err(Failure::Data("no records to explain".into()));
    }
    if let Some(&bad) = records.iter().find(|&&r| r >= data.len()) {
        return Err(Failure::Data(format!(
            "record {bad} does not exist; the data has {} records",
            data.len()
        )));
    }
    if args.background == 0 {
        return Err(Failure::Config("--background must be at least 1".into()));
    }
    let background = sample_background(&data, args.background, seed)?;
    let x = data.x_matrix();
    create_dir(&args.out)?;

    for &target in targets(args.target) {
        let value_fn = model_value_fn(&model, target);
        let mut attributions = Vec::with_capacity(records.len());
        for &r in &records {
            let row = x.row(r).to_vec();
            let a = match args.permutations {
                None => {
                    let a = shapley_exact(&value_fn, &row, background.view(), &model.groups)?;
                    check_local_accuracy(&a, r, target)?;
                    a
                }
                Some(n) => shapley_sampled(
                    &value_fn,
                    &row,
                    background.view(),
                    &model.groups,
                    n,
                    seed.wrapping_add(r as u64),
                )?,
            };
            attributions.push(a);
        }
        write_attributions(&args.out, target, &model, &records, &attributions)?;
        let importance = global_importance(&attributions)?;
        let path = args.out.join(format!("{}_importance.csv", target.name()));
        let mut w = csv_writer(&path)?;
        w.write_record(["feature", "importance"])
            .map_err(|e| Failure::output(&path, e))?;
        for (name, v) in ranked_importance(&model.groups, &importance) {
            w.write_record([name, v.to_string()]).map_err(|e| Failure::output(&path, e))?;
        }
        finish(w, &path)?;
    }
    println!(
        "explained {} records against a background of {}; output in {}",
        records.len(),
        background.nrows(),
        args.out.display()
    );
    Ok(())
}

fn check_local_accuracy(a: &Attribution, record: usize, target: ExplainTarget) -> Result<(), Failure> {
    let gap = a.additivity_gap();
    if gap.abs() <= LOCAL_ACCURACY_TOL {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "{} attributions of record {record} miss the prediction by {gap:e}",
            target.name()
        )))
    }
}

fn write_attributions(
    dir: &Path,
    target: ExplainTarget,
    model: &NeurFsModel,
    records: &[usize],
    attributions: &[Attribution],
) -> Result<(), Failure> {
    let path = dir.join(format!("{}_attributions.csv", target.name()));
    let mut w = csv_writer(&path)?;
    w.write_record(["record", "feature", "phi", "std_error"])
        .map_err(|e| Failure::output(&path, e))?;
    for (&r, a) in records.iter().zip(attributions) {
        for (g, (group, phi)) in model.groups.iter().zip(&a.phi).enumerate() {
            let se = a.std_errors.as_ref().map(|s| s[g].to_string()).unwrap_or_default();
            w.write_record([r.to_string(), group.name.clone(), phi.to_string(), se])
                .map_err(|e| Failure::output(&path, e))?;
        }
    }
    finish(w, &path)?;

    let path = dir.join(format!("{}_base.csv", target.name()));
    let mut w = csv_writer(&path)?;
    w.write_record(["record", "phi0", "model_output"])
        .map_err(|e| Failure::output(&path, e))?;
    for (&r, a) in records.iter().zip(attributions) {
        w.write_record([r.to_string(), a.phi0.to_string(), a.model_output.to_string()])
            .map_err(|e| Failure::output(&path, e))?;
    }
    finish(w, &path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use neurfs_core::dist::{CountKind, SeverityKind};
    use neurfs_core::neural::{AuxInit, MlpParams};
    use neurfs_core::train::{FrequencyModel, SeverityModel};

    fn tiny_model(name: &str) -> NeurFsModel {
        let aux = |pi, phi| AuxInit { pi, phi, gamma: phi };
        let data = generate_synthetic(3, 1).unwrap();
        let frequency = FrequencyModel {
            count: CountKind::Zip,
            net: MlpParams::init(&[2, 1], false, aux(true, false), 1).unwrap(),
        };
        let severity = SeverityModel {
            kind: SeverityKind::Gamma,
            net: MlpParams::init(&[2, 1], false, aux(false, true), 2).unwrap(),
        };
        NeurFsModel::assemble(name, &data, frequency, severity).unwrap()
    }

    #[test]
    fn split_positions_partition_the_rows() {
        let (train, test) = split_positions(100, 0.3, 4).unwrap();
        assert_eq!(test.len(), 30);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_positions(5, 0.0, 1).unwrap().1, Vec::<usize>::new());
    }

    #[test]
    fn labels_are_unique() {
        let m = tiny_model("glm");
        let labels = unique_labels(&[m.clone(), m.clone(), m]);
        assert_eq!(labels, ["glm", "glm_2", "glm_3"]);
    }
}
