use neurfs_core::data::{generate_synthetic, read_dataset_csv, write_dataset_csv};
use neurfs_core::dist::{CountKind, SeverityKind};
use neurfs_core::eval::{gini_index, ordered_lorenz, simulation_metrics, PremiumAxis};
use neurfs_core::explain::{model_value_fn, sample_background, shapley_exact, ExplainTarget};
use neurfs_core::train::{fit_model, ModelVariant, NeurFsModel, TrainConfig};

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        hidden: vec![8, 8],
        epochs: 5,
        batch_size: 256,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn simulate_fit_save_reload_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(4_000, 11).unwrap();
    let csv = dir.path().join("data.csv");
    write_dataset_csv(&data, &csv).unwrap();
    let data = read_dataset_csv(&csv).unwrap();
    assert_eq!(data.len(), 4_000);

    let cfg = quick_config(3);
    let fit = fit_model(&data, ModelVariant::Neurfs, CountKind::Zip, SeverityKind::Gamma, &cfg, &cfg).unwrap();
    assert_eq!(fit.frequency_history.len(), 5);
    let model = fit.model;
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let reloaded = NeurFsModel::load(&path).unwrap();

    let a = model.predict_dataset(&data).unwrap();
    let b = reloaded.predict_dataset(&data).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.lambda, q.lambda);
        assert_eq!(p.aggregate_variance, q.aggregate_variance);
        assert!(p.aggregate_mean > 0.0 && p.aggregate_variance > 0.0);
    }
    let m = simulation_metrics(&reloaded).unwrap();
    assert!(m.frequency.mae.is_finite() && m.severity.mae.is_finite());
}

#[test]
fn same_seed_same_model() {
    let data = generate_synthetic(2_000, 5).unwrap();
    let cfg = quick_config(9);
    let fit = || {
        fit_model(&data, ModelVariant::Dglm, CountKind::Poisson, SeverityKind::InverseGaussian, &cfg, &cfg)
            .unwrap()
            .model
    };
    let (a, b) = (fit(), fit());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn explained_model_is_additive_and_self_gini_is_zero() {
    let data = generate_synthetic(2_000, 21).unwrap();
    let cfg = quick_config(1);
    let model = fit_model(&data, ModelVariant::Neurfs, CountKind::Zip, SeverityKind::Gamma, &cfg, &cfg)
        .unwrap()
        .model;
    let background = sample_background(&data, 50, 2).unwrap();
    let x = data.x_matrix();
    for target in [ExplainTarget::Frequency, ExplainTarget::Severity] {
        let f = model_value_fn(&model, target);
        for i in 0..5 {
            let a = shapley_exact(&f, &x.row(i).to_vec(), background.view(), &model.groups).unwrap();
            assert!(a.additivity_gap().abs() < 1e-10, "{}", a.additivity_gap());
        }
    }

    let premium: Vec<f64> = model.predict_dataset(&data).unwrap().iter().map(|p| p.aggregate_mean).collect();
    let losses: Vec<f64> = data.records.iter().map(|r| r.aggregate_loss()).collect();
    let g = gini_index(&ordered_lorenz(&premium, &premium, &losses, PremiumAxis::Base).unwrap());
    assert!(g.abs() < 1e-12);
}
