//! Run configuration for `neurfs train`.
//!
//! The file is TOML with a `[model]`, `[data]`, `[frequency]` and `[severity]`
//! section. Parsing collects every problem before reporting, so one run shows
//! all offending keys.

use std::path::{Path, PathBuf};

use neurfs_core::dist::{CountKind, SeverityKind};
use neurfs_core::optim::{OptimizerConfig, OptimizerKind, Schedule};
use neurfs_core::train::{ModelVariant, TrainConfig};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub path: PathBuf,
    /// Column description for raw claims files; absent for encoded datasets.
    pub schema: Option<PathBuf>,
    /// Share of records held out and written to `test.csv`.
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: ModelVariant,
    pub count: CountKind,
    pub severity_family: SeverityKind,
    pub data: DataConfig,
    pub frequency: TrainConfig,
    pub severity: TrainConfig,
}

const TOP_KEYS: &[&str] = &["seed", "model", "data", "frequency", "severity"];
const MODEL_KEYS: &[&str] = &["variant", "count", "trials", "severity"];
const DATA_KEYS: &[&str] = &["path", "schema", "test_fraction"];
const PART_KEYS: &[&str] = &[
    "hidden",
    "epochs",
    "optimizer",
    "learning_rate",
    "batch_size",
    "dropout_rate",
    "batch_normalization",
    "activation",
    "decay_schedule",
    "step_decay_factor",
    "step_decay_period",
    "early_stopping_patience",
    "early_stopping_decay",
    "early_stopping_terminate",
    "validation_fraction",
    "beta1",
    "beta2",
    "epsilon",
];

/// Collects problems while reading typed values out of a table.
struct Reader<'a> {
    section: &'a str,
    table: &'a Table,
    errors: &'a mut Vec<String>,
}

impl Reader<'_> {
    fn key(&self, key: &str) -> String {
        if self.section.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.section)
        }
    }

    fn check_keys(&mut self, known: &[&str]) {
        for k in self.table.keys() {
            if !known.contains(&k.as_str()) {
                let key = self.key(k);
                self.errors.push(format!("{key}: unknown key"));
            }
        }
    }

    fn bad(&mut self, key: &str, expected: &str) {
        let key = self.key(key);
        self.errors.push(format!("{key}: expected {expected}"));
    }

    fn float(&mut self, key: &str, default: f64) -> f64 {
        match self.table.get(key) {
            None => default,
            Some(Value::Float(v)) => *v,
            Some(Value::Integer(v)) => *v as f64,
            Some(_) => {
                self.bad(key, "a number");
                default
            }
        }
    }

    fn uint(&mut self, key: &str, default: u64) -> u64 {
        match self.table.get(key) {
            None => default,
            Some(Value::Integer(v)) if *v >= 0 => *v as u64,
            Some(_) => {
                self.bad(key, "a non-negative integer");
                default
            }
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.table.get(key) {
            None => default,
            Some(Value::Boolean(v)) => *v,
            Some(_) => {
                self.bad(key, "true or false");
                default
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.table.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.bad(key, "a string");
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)], default: T) -> T {
        let Some(s) = self.string(key) else {
            return default;
        };
        match options.iter().find(|(name, _)| *name == s) {
            Some((_, v)) => *v,
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.bad(key, &format!("one of {}", names.join(", ")));
                default
            }
        }
    }

    fn sub(&mut self, key: &str) -> Option<&Table> {
        match self.table.get(key) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                let key = self.key(key);
                self.errors.push(format!("{key}: expected a section"));
                None
            }
        }
    }
}

fn sub_table(table: &Table, key: &str, errors: &mut Vec<String>) -> Table {
    Reader {
        section: "",
        table,
        errors,
    }
    .sub(key)
    .cloned()
    .unwrap_or_default()
}

fn optimizer_kind_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adam => "adam",
        OptimizerKind::Amsgrad => "amsgrad",
    }
}

fn parse_part(section: &str, table: &Table, seed: u64, errors: &mut Vec<String>) -> TrainConfig {
    let defaults = TrainConfig::default();
    let mut r = Reader { section, table, errors };
    r.check_keys(PART_KEYS);
    let hidden = match table.get("hidden") {
        None => defaults.hidden.clone(),
        Some(Value::Array(items)) => {
            let widths: Option<Vec<usize>> = items
                .iter()
                .map(|v| v.as_integer().filter(|w| *w > 0).map(|w| w as usize))
                .collect();
            widths.unwrap_or_else(|| {
                r.bad("hidden", "a list of positive integers");
                defaults.hidden.clone()
            })
        }
        Some(_) => {
            r.bad("hidden", "a list of positive integers");
            defaults.hidden.clone()
        }
    };
    let kinds = [
        ("sgd", OptimizerKind::Sgd),
        ("adam", OptimizerKind::Adam),
        ("amsgrad", OptimizerKind::Amsgrad),
    ];
    let kind = r.choice("optimizer", &kinds, defaults.optimizer.kind);
    let base = OptimizerConfig::of(kind);
    let optimizer = OptimizerConfig {
        kind,
        beta1: r.float("beta1", base.beta1),
        beta2: r.float("beta2", base.beta2),
        epsilon: r.float("epsilon", base.epsilon),
    };
    let lr = r.float("learning_rate", defaults.schedule.initial_lr());
    let (step_factor, step_period) = match defaults.schedule {
        Schedule::StepDecay { factor, period, .. } => (factor, period),
        _ => (0.9, 5),
    };
    let factor = r.float("step_decay_factor", step_factor);
    let period = r.uint("step_decay_period", step_period as u64) as usize;
    let patience = r.uint("early_stopping_patience", 5) as usize;
    let decay = r.float("early_stopping_decay", 0.5);
    let terminate = r.boolean("early_stopping_terminate", false);
    let schedule = match r.choice("decay_schedule", &[("step", 0u8), ("plateau", 1), ("constant", 2)], 0) {
        1 => Schedule::Plateau {
            initial_lr: lr,
            patience,
            factor: decay,
            terminate,
        },
        2 => Schedule::Constant { lr },
        _ => Schedule::StepDecay {
            initial_lr: lr,
            factor,
            period,
        },
    };
    if let Some(act) = r.string("activation") {
        if act != "elu" {
            r.bad("activation", "elu");
        }
    }
    let config = TrainConfig {
        hidden,
        epochs: r.uint("epochs", defaults.epochs as u64) as usize,
        batch_size: r.uint("batch_size", defaults.batch_size as u64) as usize,
        optimizer,
        schedule,
        dropout_rate: r.float("dropout_rate", defaults.dropout_rate),
        batch_norm: r.boolean("batch_normalization", defaults.batch_norm),
        validation_fraction: r.float("validation_fraction", defaults.validation_fraction),
        seed,
    };
    errors.extend(config.problems().into_iter().map(|p| format!("{section}: {p}")));
    config
}

impl RunConfig {
    /// Parses config text; relative data paths resolve against `base_dir`.
    /// On failure returns every problem found.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, Vec<String>> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| vec![e.to_string()])?;
        let mut errors = Vec::new();
        let mut r = Reader {
            section: "",
            table: &root,
            errors: &mut errors,
        };
        r.check_keys(TOP_KEYS);
        let seed = r.uint("seed", 1);

        let model = sub_table(&root, "model", &mut errors);
        let mut r = Reader {
            section: "model",
            table: &model,
            errors: &mut errors,
        };
        r.check_keys(MODEL_KEYS);
        let variant = r.choice(
            "variant",
            &[
                ("neurfs", ModelVariant::Neurfs),
                ("glm", ModelVariant::Glm),
                ("dglm", ModelVariant::Dglm),
            ],
            ModelVariant::Neurfs,
        );
        let trials = r.uint("trials", 1);
        let count = match r.choice("count", &[("poisson", 0u8), ("zip", 1), ("binomial", 2)], 1) {
            0 => CountKind::Poisson,
            2 => match u32::try_from(trials) {
                Ok(t) if t > 0 => CountKind::Binomial { trials: t },
                _ => {
                    r.bad("trials", "a positive integer for the binomial count");
                    CountKind::Zip
                }
            },
            _ => CountKind::Zip,
        };
        let severity_family = r.choice(
            "severity",
            &[
                ("gamma", SeverityKind::Gamma),
                ("inverse_gaussian", SeverityKind::InverseGaussian),
                ("normal", SeverityKind::Normal),
            ],
            SeverityKind::Gamma,
        );

        let data = sub_table(&root, "data", &mut errors);
        let mut r = Reader {
            section: "data",
            table: &data,
            errors: &mut errors,
        };
        r.check_keys(DATA_KEYS);
        let path = r.string("path");
        if path.is_none() && !data.contains_key("path") {
            r.errors.push("data.path: required".to_string());
        }
        let schema = r.string("schema").map(|s| base_dir.join(s));
        let test_fraction = r.float("test_fraction", 0.0);
        if !(0.0..1.0).contains(&test_fraction) {
            r.errors.push(format!("data.test_fraction: {test_fraction} not in [0, 1)"));
        }

        let frequency = sub_table(&root, "frequency", &mut errors);
        let frequency = parse_part("frequency", &frequency, seed, &mut errors);
        let severity = sub_table(&root, "severity", &mut errors);
        let severity = parse_part("severity", &severity, seed, &mut errors);

        if !errors.is_empty() {
            return Err(errors);
        }
        Ok(RunConfig {
            seed,
            variant,
            count,
            severity_family,
            data: DataConfig {
                path: base_dir.join(path.unwrap_or_default()),
                schema,
                test_fraction,
            },
            frequency,
            severity,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.frequency.seed = seed;
        self.severity.seed = seed;
        self
    }

    /// The effective configuration with every default spelled out.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("seed".into(), Value::Integer(self.seed as i64));
        let mut model = Table::new();
        model.insert("variant".into(), self.variant.name().into());
        let (count, trials) = match self.count {
            CountKind::Poisson => ("poisson", None),
            CountKind::Zip => ("zip", None),
            CountKind::Binomial { trials } => ("binomial", Some(trials)),
        };
        model.insert("count".into(), count.into());
        if let Some(t) = trials {
            model.insert("trials".into(), Value::Integer(t.into()));
        }
        let severity = match self.severity_family {
            SeverityKind::Gamma => "gamma",
            SeverityKind::InverseGaussian => "inverse_gaussian",
            SeverityKind::Normal => "normal",
        };
        model.insert("severity".into(), severity.into());
        root.insert("model".into(), Value::Table(model));
        let mut data = Table::new();
        data.insert("path".into(), self.data.path.display().to_string().into());
        if let Some(s) = &self.data.schema {
            data.insert("schema".into(), s.display().to_string().into());
        }
        data.insert("test_fraction".into(), self.data.test_fraction.into());
        root.insert("data".into(), Value::Table(data));
        root.insert("frequency".into(), Value::Table(part_table(&self.frequency)));
        root.insert("severity".into(), Value::Table(part_table(&self.severity)));
        toml::to_string(&root).expect("a TOML table always serializes")
    }
}

fn part_table(c: &TrainConfig) -> Table {
    let mut t = Table::new();
    t.insert(
        "hidden".into(),
        Value::Array(c.hidden.iter().map(|&w| Value::Integer(w as i64)).collect()),
    );
    t.insert("epochs".into(), Value::Integer(c.epochs as i64));
    t.insert("optimizer".into(), optimizer_kind_name(c.optimizer.kind).into());
    t.insert("beta1".into(), c.optimizer.beta1.into());
    t.insert("beta2".into(), c.optimizer.beta2.into());
    t.insert("epsilon".into(), c.optimizer.epsilon.into());
    t.insert("learning_rate".into(), c.schedule.initial_lr().into());
    t.insert("batch_size".into(), Value::Integer(c.batch_size as i64));
    t.insert("dropout_rate".into(), c.dropout_rate.into());
    t.insert("batch_normalization".into(), c.batch_norm.into());
    t.insert("activation".into(), "elu".into());
    match c.schedule {
        Schedule::Constant { .. } => {
            t.insert("decay_schedule".into(), "constant".into());
        }
        Schedule::StepDecay { factor, period, .. } => {
            t.insert("decay_schedule".into(), "step".into());
            t.insert("step_decay_factor".into(), factor.into());
            t.insert("step_decay_period".into(), Value::Integer(period as i64));
        }
        Schedule::Plateau {
            patience,
            factor,
            terminate,
            ..
        } => {
            t.insert("decay_schedule".into(), "plateau".into());
            t.insert("early_stopping_patience".into(), Value::Integer(patience as i64));
            t.insert("early_stopping_decay".into(), factor.into());
            t.insert("early_stopping_terminate".into(), terminate.into());
        }
    }
    t.insert("validation_fraction".into(), c.validation_fraction.into());
    t
}
