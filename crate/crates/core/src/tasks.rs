//! Tasks, example-dependent cost matrices and data ingestion.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-instance costs indexed by (predicted, actual) outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub c_tn: f64,
    pub c_fn: f64,
    pub c_fp: f64,
    pub c_tp: f64,
}

impl CostMatrix {
    pub fn new(c_tn: f64, c_fn: f64, c_fp: f64, c_tp: f64) -> Result<Self> {
        let m = CostMatrix {
            c_tn,
            c_fn,
            c_fp,
            c_tp,
        };
        if [c_tn, c_fn, c_fp, c_tp].iter().all(|c| c.is_finite()) {
            Ok(m)
        } else {
            Err(Error::InvalidCost(format!("non-finite entry in {m:?}")))
        }
    }

    /// Payoff of acting on the task when it succeeds (`v+`) and when it fails (`v-`).
    pub fn payoffs(&self) -> (f64, f64) {
        (self.c_fn - self.c_tp, self.c_tn - self.c_fp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSchema {
    Churn,
    CreditScoring,
    Marketing,
    Fraud,
}

impl CostSchema {
    pub fn default_fixed_cost(self) -> f64 {
        match self {
            CostSchema::Marketing => 1.0,
            CostSchema::Fraud => 10.0,
            _ => 0.0,
        }
    }
}

/// Instance values a schema needs. Unused fields are ignored.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostParams {
    /// Monthly amount (churn), interest or amount (marketing), transaction amount (fraud).
    pub amount: Option<f64>,
    pub c_fn: Option<f64>,
    pub c_fp: Option<f64>,
    /// Falls back to [`CostSchema::default_fixed_cost`].
    pub fixed_cost: Option<f64>,
}

impl CostParams {
    pub fn amount(amount: f64) -> Self {
        CostParams {
            amount: Some(amount),
            ..Default::default()
        }
    }
}

fn nonnegative(name: &str, v: Option<f64>) -> Result<f64> {
    let v = v.ok_or_else(|| Error::InvalidCost(format!("missing {name}")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::InvalidCost(format!(
            "{name} must be a nonnegative number, got {v}"
        )));
    }
    Ok(v)
}

pub fn build_cost_matrix(schema: CostSchema, params: &CostParams) -> Result<CostMatrix> {
    let fixed = || {
        nonnegative(
            "fixed cost",
            params.fixed_cost.or(Some(schema.default_fixed_cost())),
        )
    };
    match schema {
        CostSchema::Churn => {
            let a = nonnegative("amount", params.amount)?;
            CostMatrix::new(0.0, 12.0 * a, 2.0 * a, 0.0)
        }
        CostSchema::CreditScoring => {
            let c_fn = nonnegative("c_fn", params.c_fn)?;
            let c_fp = nonnegative("c_fp", params.c_fp)?;
            CostMatrix::new(0.0, c_fn, c_fp, 0.0)
        }
        CostSchema::Marketing | CostSchema::Fraud => {
            let a = nonnegative("amount", params.amount)?;
            let c_f = fixed()?;
            CostMatrix::new(0.0, a, c_f, c_f)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub features: Vec<f64>,
    pub label: u8,
    pub cost: CostMatrix,
}

impl Task {
    pub fn payoffs(&self) -> (f64, f64) {
        self.cost.payoffs()
    }

    /// Realised payoff: `v+` for a successful task, `v-` otherwise.
    pub fn reward(&self) -> f64 {
        let (v_plus, v_minus) = self.payoffs();
        if self.label == 1 {
            v_plus
        } else {
            v_minus
        }
    }
}

/// A nonempty collection of tasks sharing one feature layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    tasks: Vec<Task>,
    feature_names: Vec<String>,
}

impl TaskSet {
    pub fn new(tasks: Vec<Task>, feature_names: Vec<String>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::EmptyData);
        }
        let d = feature_names.len();
        for (i, t) in tasks.iter().enumerate() {
            if t.features.len() != d {
                return Err(Error::CsvRow {
                    row: i + 1,
                    reason: format!("expected {d} features, found {}", t.features.len()),
                });
            }
            if t.label > 1 {
                return Err(Error::CsvRow {
                    row: i + 1,
                    reason: format!("label {} is not binary", t.label),
                });
            }
        }
        Ok(TaskSet {
            tasks,
            feature_names,
        })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.tasks.iter().map(|t| t.label).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.tasks.iter().map(Task::reward).collect()
    }

    pub fn costs(&self) -> Vec<CostMatrix> {
        self.tasks.iter().map(|t| t.cost).collect()
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.tasks.iter().map(|t| t.features.as_slice()).collect()
    }

    /// Tasks at the given positions, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<TaskSet> {
        let tasks = indices.iter().map(|&i| self.tasks[i].clone()).collect();
        TaskSet::new(tasks, self.feature_names.clone())
    }

    /// Write the canonical CSV: feature columns, `label`, then the four cost columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.extend(["label", "c_tn", "c_fn", "c_fp", "c_tp"]);
        w.write_record(&header)?;
        for t in &self.tasks {
            let mut row: Vec<String> = t.features.iter().map(|v| v.to_string()).collect();
            row.push(t.label.to_string());
            for c in [t.cost.c_tn, t.cost.c_fn, t.cost.c_fp, t.cost.c_tp] {
                row.push(c.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// How costs are read from a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSource {
    Churn,
    CreditScoring,
    Marketing,
    Fraud,
    /// All four entries given as columns (the canonical re-serialised layout).
    Explicit,
}

impl CostSource {
    fn schema(&self) -> Option<CostSchema> {
        match self {
            CostSource::Churn => Some(CostSchema::Churn),
            CostSource::CreditScoring => Some(CostSchema::CreditScoring),
            CostSource::Marketing => Some(CostSchema::Marketing),
            CostSource::Fraud => Some(CostSchema::Fraud),
            CostSource::Explicit => None,
        }
    }
}

fn default_label() -> String {
    "label".into()
}

/// Column mapping for [`load_csv`], as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvDescriptor {
    #[serde(default = "default_label")]
    pub label: String,
    pub schema: CostSource,
    #[serde(default)]
    pub amount: Option<String>,
    #[serde(default)]
    pub c_fn: Option<String>,
    #[serde(default)]
    pub c_fp: Option<String>,
    #[serde(default)]
    pub fixed_cost: Option<f64>,
    /// Feature include-list; `None` takes every column not used for label or costs.
    #[serde(default)]
    pub features: Option<Vec<String>>,
}

impl CsvDescriptor {
    /// Descriptor matching [`TaskSet::write_csv`] output.
    pub fn explicit() -> Self {
        CsvDescriptor {
            label: default_label(),
            schema: CostSource::Explicit,
            amount: None,
            c_fn: Some("c_fn".into()),
            c_fp: Some("c_fp".into()),
            fixed_cost: None,
            features: None,
        }
    }

    fn cost_columns(&self) -> Vec<String> {
        match self.schema {
            CostSource::Explicit => vec![
                "c_tn".into(),
                self.c_fn.clone().unwrap_or_else(|| "c_fn".into()),
                self.c_fp.clone().unwrap_or_else(|| "c_fp".into()),
                "c_tp".into(),
            ],
            CostSource::CreditScoring => [&self.c_fn, &self.c_fp]
                .into_iter()
                .flatten()
                .cloned()
                .collect(),
            _ => self.amount.iter().cloned().collect(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, descriptor: &CsvDescriptor) -> Result<TaskSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, descriptor)
}

pub fn read_csv<R: Read>(reader: R, descriptor: &CsvDescriptor) -> Result<TaskSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let label_col = column(&descriptor.label)?;
    let cost_names = descriptor.cost_columns();
    let mut cost_cols = Vec::with_capacity(cost_names.len());
    for name in &cost_names {
        cost_cols.push(column(name)?);
    }
    match descriptor.schema {
        CostSource::CreditScoring if cost_cols.len() != 2 => {
            return Err(Error::MissingColumn("c_fn/c_fp".into()))
        }
        CostSource::Churn | CostSource::Marketing | CostSource::Fraud if cost_cols.is_empty() => {
            return Err(Error::MissingColumn("amount".into()))
        }
        _ => {}
    }

    // The amount is observable at allocation time, so it stays a default feature.
    let amount_col = descriptor
        .amount
        .as_deref()
        .and_then(|a| headers.iter().position(|h| h == a));
    let feature_names: Vec<String> = match &descriptor.features {
        Some(list) => list.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_col && (!cost_cols.contains(&i) || Some(i) == amount_col))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let mut feature_cols = Vec::with_capacity(feature_names.len());
    for name in &feature_names {
        feature_cols.push(column(name)?);
    }

    let mut tasks = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let num = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            if raw.is_empty() {
                return Err(Error::CsvRow {
                    row,
                    reason: format!("missing value in column `{}`", &headers[col]),
                });
            }
            let v: f64 = raw.parse().map_err(|_| Error::CsvRow {
                row,
                reason: format!("cannot parse `{raw}` in column `{}`", &headers[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::CsvRow {
                    row,
                    reason: format!("non-finite value in column `{}`", &headers[col]),
                });
            }
            Ok(v)
        };

        let label_value = num(label_col)?;
        let label = if label_value == 0.0 {
            0
        } else if label_value == 1.0 {
            1
        } else {
            return Err(Error::CsvRow {
                row,
                reason: format!("label {label_value} is not binary"),
            });
        };

        let features = feature_cols
            .iter()
            .map(|&c| num(c))
            .collect::<Result<Vec<_>>>()?;
        let costs = cost_cols
            .iter()
            .map(|&c| num(c))
            .collect::<Result<Vec<_>>>()?;
        let cost = match descriptor.schema.schema() {
            None => CostMatrix::new(costs[0], costs[1], costs[2], costs[3]),
            Some(schema) => {
                let params = match schema {
                    CostSchema::CreditScoring => CostParams {
                        c_fn: Some(costs[0]),
                        c_fp: Some(costs[1]),
                        ..Default::default()
                    },
                    _ => CostParams {
                        amount: Some(costs[0]),
                        fixed_cost: descriptor.fixed_cost,
                        ..Default::default()
                    },
                };
                build_cost_matrix(schema, &params)
            }
        }
        .map_err(|e| Error::CsvRow {
            row,
            reason: e.to_string(),
        })?;

        tasks.push(Task {
            features,
            label,
            cost,
        });
    }
    if tasks.is_empty() {
        return Err(Error::EmptyData);
    }
    TaskSet::new(tasks, feature_names)
}

/// Parameters of the synthetic task generator.
///
/// Labels are drawn first; informative features are unit Gaussians whose mean is
/// shifted by `signal / sqrt(n_informative)` for positives, so the Bayes posterior
/// is logistic in the features. The first feature is the log amount, itself
/// Gaussian with a mean shift of `amount_label_shift` for positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Total feature count, including the leading `log_amount` column.
    pub n_features: usize,
    pub n_informative: usize,
    pub prior: f64,
    /// Mahalanobis distance between class means of the informative block.
    pub signal: f64,
    pub amount_mu_log: f64,
    pub amount_sigma_log: f64,
    /// Shift of `ln A` for positives; 0 makes amounts independent of the label.
    #[serde(default)]
    pub amount_label_shift: f64,
    pub schema: CostSchema,
    #[serde(default)]
    pub fixed_cost: Option<f64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 1000,
            n_features: 6,
            n_informative: 4,
            prior: 0.1,
            signal: 1.5,
            amount_mu_log: 50f64.ln(),
            amount_sigma_log: 1.0,
            amount_label_shift: 0.0,
            schema: CostSchema::Fraud,
            fixed_cost: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGenerator(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return bad(format!("prior must lie in (0, 1), got {}", self.prior));
        }
        if self.n_features == 0 || self.n_informative + 1 > self.n_features {
            return bad("need n_features >= n_informative + 1".into());
        }
        if !(self.signal.is_finite() && self.signal >= 0.0) {
            return bad("signal must be a nonnegative number".into());
        }
        if !(self.amount_sigma_log.is_finite() && self.amount_sigma_log > 0.0) {
            return bad("amount_sigma_log must be positive".into());
        }
        if !self.amount_mu_log.is_finite() || !self.amount_label_shift.is_finite() {
            return bad("amount parameters must be finite".into());
        }
        if self.schema == CostSchema::CreditScoring {
            return bad("credit scoring costs must be supplied as data columns".into());
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<TaskSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = if spec.n_informative > 0 {
        spec.signal / (spec.n_informative as f64).sqrt()
    } else {
        0.0
    };

    let mut feature_names = vec!["log_amount".to_string()];
    feature_names.extend((1..spec.n_features).map(|j| format!("x{j}")));

    let mut tasks = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let label = u8::from(rng.gen::<f64>() < spec.prior);
        let y = f64::from(label);
        let z: f64 = rng.sample(StandardNormal);
        let log_amount =
            spec.amount_mu_log + spec.amount_sigma_log * z + spec.amount_label_shift * y;
        let mut features = Vec::with_capacity(spec.n_features);
        features.push(log_amount);
        for j in 1..spec.n_features {
            let e: f64 = rng.sample(StandardNormal);
            let mean = if j <= spec.n_informative {
                shift * y
            } else {
                0.0
            };
            features.push(mean + e);
        }
        let params = CostParams {
            amount: Some(log_amount.exp()),
            fixed_cost: spec.fixed_cost,
            ..Default::default()
        };
        let cost = build_cost_matrix(spec.schema, &params)?;
        tasks.push(Task {
            features,
            label,
            cost,
        });
    }
    TaskSet::new(tasks, feature_names)
}
