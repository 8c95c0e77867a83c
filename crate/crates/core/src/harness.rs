//! Experiment orchestration: data sets in, one [`RunRecord`] per (data set,
//! objective kind) out, plus an aggregate summary with Friedman/Bonferroni–Dunn
//! significance marks.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{rank_by_predicted_reward, RankMode};
use crate::capacity::{CapacityKind, CapacityModel};
use crate::error::{Error, Result};
use crate::gbm::{fit, BoostedModel, FeatureMatrix, TrainConfig};
use crate::metrics::{
    evaluate, friedman_bonferroni_dunn, FriedmanResult, MetricReport, SCALAR_METRICS,
};
use crate::objectives::{
    make_objective, LambdaObjective, LambdaParams, ObjectiveKind, TrainingTargets,
};
use crate::tasks::{generate_synthetic, load_csv, CsvDescriptor, SyntheticSpec, TaskSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        descriptor: CsvDescriptor,
    },
    Synthetic {
        spec: SyntheticSpec,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub id: String,
    #[serde(flatten)]
    pub source: DatasetSource,
}

impl DatasetConfig {
    pub fn load(&self) -> Result<TaskSet> {
        match &self.source {
            DatasetSource::Csv { path, descriptor } => load_csv(path, descriptor),
            DatasetSource::Synthetic { spec, seed } => generate_synthetic(spec, *seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.25,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Training defaults per objective kind. The ranking objectives produce
/// gradients scaled by `1 / IDCG`, so they need a far smaller leaf penalty.
pub fn default_train_config(kind: ObjectiveKind) -> TrainConfig {
    if kind.is_ranking() {
        TrainConfig {
            n_rounds: 100,
            learning_rate: 0.1,
            l2_leaf_penalty: 0.0,
            min_child_hessian: 0.0,
            ..TrainConfig::default()
        }
    } else {
        TrainConfig::default()
    }
}

fn default_kinds() -> Vec<ObjectiveKind> {
    ObjectiveKind::ALL.to_vec()
}

fn default_alpha() -> f64 {
    0.05
}

fn default_curve_max_k() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetConfig>,
    pub capacity: CapacityKind,
    /// Overrides of [`default_train_config`], keyed by kind name.
    #[serde(default)]
    pub train: BTreeMap<ObjectiveKind, TrainConfig>,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<ObjectiveKind>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub lambda: LambdaParams,
    /// Split each ranking objective's training set into queries of this size.
    #[serde(default)]
    pub query_size: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Longest prefix written to `curves.csv`.
    #[serde(default = "default_curve_max_k")]
    pub curve_max_k: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one data set is required".into(),
            ));
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one objective kind is required".into(),
            ));
        }
        let mut ids: Vec<&str> = self.datasets.iter().map(|d| d.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::InvalidConfig("data set ids must be unique".into()));
        }
        self.split.validate()?;
        self.capacity.validate()?;
        for kind in &self.kinds {
            self.train_config(*kind).validate()?;
        }
        if self.query_size == Some(0) {
            return Err(Error::InvalidConfig("query_size must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 1)".into()));
        }
        if !(self.lambda.sigma > 0.0) {
            return Err(Error::InvalidConfig("lambda sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn train_config(&self, kind: ObjectiveKind) -> TrainConfig {
        self.train
            .get(&kind)
            .cloned()
            .unwrap_or_else(|| default_train_config(kind))
    }

    /// Reseed the split and every training config.
    pub fn reseed(&mut self, seed: u64) {
        self.split.seed = seed;
        for kind in self.kinds.clone() {
            let mut cfg = self.train_config(kind);
            cfg.seed = seed;
            self.train.insert(kind, cfg);
        }
    }
}

/// Row indices of a seeded train/test partition, each sorted ascending.
pub fn split_indices(labels: &[u8], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let n = labels.len();
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Split(format!(
            "test fraction {} of {n} rows leaves an empty side",
            spec.test_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut test = Vec::with_capacity(n_test);
    if spec.stratified {
        let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::Split("stratification needs both classes".into()));
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let n_pos = ((spec.test_fraction * pos.len() as f64).round() as usize).min(n_test);
        let n_neg = n_test - n_pos;
        if n_neg > neg.len() {
            return Err(Error::Split(
                "too few negatives for the requested test size".into(),
            ));
        }
        test.extend_from_slice(&pos[..n_pos]);
        test.extend_from_slice(&neg[..n_neg]);
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        test.extend_from_slice(&all[..n_test]);
    }
    test.sort_unstable();
    let mut in_test = vec![false; n];
    for &i in &test {
        in_test[i] = true;
    }
    let train = (0..n).filter(|&i| !in_test[i]).collect();
    Ok((train, test))
}

pub fn split(data: &TaskSet, spec: &SplitSpec) -> Result<(TaskSet, TaskSet)> {
    let (train, test) = split_indices(&data.labels(), spec)?;
    Ok((data.subset(&train)?, data.subset(&test)?))
}

pub fn rank_mode(kind: ObjectiveKind) -> RankMode {
    match kind {
        ObjectiveKind::CrossEntropy => RankMode::Probability,
        ObjectiveKind::AverageExpectedCost => RankMode::ExpectedReward,
        ObjectiveKind::LambdaAccuracy | ObjectiveKind::LambdaCost => RankMode::RawScore,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub kind: ObjectiveKind,
    pub seed: u64,
    pub report: Option<MetricReport>,
    pub duration_secs: f64,
    pub model_path: Option<PathBuf>,
    /// SHA-256 of the worker weights shared by training and evaluation.
    pub weights_checksum: Option<String>,
    pub warning: Option<String>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.report.is_some()
    }
}

/// Train one objective kind on `train`.
pub fn train_model(
    kind: ObjectiveKind,
    train: &TaskSet,
    weights: &crate::capacity::WorkerWeights,
    config: &TrainConfig,
    lambda: LambdaParams,
    query_size: Option<usize>,
) -> Result<BoostedModel> {
    let x = FeatureMatrix::from_tasks(train);
    let targets = TrainingTargets::from(train);
    match query_size {
        Some(q) if kind.is_ranking() => {
            let relevance = if kind == ObjectiveKind::LambdaCost {
                targets
                    .rewards()
                    .ok_or(Error::MissingRewards("lambda_cost"))?
            } else {
                targets.labels.iter().map(|&y| f64::from(y)).collect()
            };
            let n = relevance.len();
            let queries = (0..n)
                .step_by(q)
                .map(|s| (s..(s + q).min(n)).collect())
                .collect();
            let objective =
                LambdaObjective::with_queries(kind.tag(), relevance, weights, lambda, queries);
            fit(&x, &objective, config)
        }
        _ => {
            let objective = make_objective(kind, &targets, Some(weights), lambda)?;
            fit(&x, objective.as_ref(), config)
        }
    }
}

struct Outputs {
    dir: PathBuf,
    runs: BufWriter<File>,
    curves: csv::Writer<BufWriter<File>>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join("models")).map_err(|e| Error::io(dir, e))?;
        let runs = create(&dir.join("runs.jsonl"))?;
        let mut curves = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(create(&dir.join("curves.csv"))?);
        curves.write_record(["dataset", "model", "k", "precision", "profit"])?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            runs,
            curves,
        })
    }

    fn record(&mut self, rec: &RunRecord, curve_max_k: usize) -> Result<()> {
        let path = self.dir.join("runs.jsonl");
        serde_json::to_writer(&mut self.runs, rec)?;
        self.runs
            .write_all(b"\n")
            .map_err(|e| Error::io(&path, e))?;
        self.runs.flush().map_err(|e| Error::io(&path, e))?;
        if let Some(rep) = &rec.report {
            let name = rec.kind.name();
            for (k, (p, c)) in rep
                .precision_at_k
                .iter()
                .zip(&rep.profit_at_k)
                .take(curve_max_k)
                .enumerate()
            {
                self.curves.write_record([
                    &rec.dataset,
                    name,
                    &(k + 1).to_string(),
                    &p.to_string(),
                    &c.to_string(),
                ])?;
            }
            self.curves
                .flush()
                .map_err(|e| Error::io(self.dir.join("curves.csv"), e))?;
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    config: &ExperimentConfig,
    kind: ObjectiveKind,
    dataset: &str,
    train: &TaskSet,
    test: &TaskSet,
    capacity: &CapacityModel,
    weights: &crate::capacity::WorkerWeights,
    model_dir: Option<&Path>,
) -> Result<(MetricReport, Option<PathBuf>, Option<String>)> {
    let tc = config.train_config(kind);
    let model = train_model(kind, train, weights, &tc, config.lambda, config.query_size)?;
    let model_path = match model_dir {
        Some(dir) => {
            let p = dir.join(format!("{dataset}__{}.json", kind.name()));
            model.save(&p)?;
            Some(p)
        }
        None => None,
    };
    let ranking = rank_by_predicted_reward(&model, test, rank_mode(kind))?;
    let report = evaluate(
        &ranking.keys,
        &ranking.order,
        &test.labels(),
        &test.rewards(),
        capacity,
        weights,
    )?;
    Ok((report, model_path, ranking.warning))
}

/// Train and evaluate every configured kind on every data set. When an output
/// directory is configured, `runs.jsonl`, `curves.csv` and the models are
/// written as records complete.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let mut outputs = match &config.output_dir {
        Some(dir) => Some(Outputs::open(dir)?),
        None => None,
    };
    let mut records = Vec::new();
    for ds in &config.datasets {
        let prepared = ds.load().and_then(|data| {
            let (train, test) = split(&data, &config.split)?;
            // One construction serves both training (prefix n_train) and evaluation (prefix n_test).
            let capacity =
                CapacityModel::new(config.capacity.clone(), train.len().max(test.len()))?;
            let weights = capacity.survival_weights()?;
            Ok((train, test, capacity, weights))
        });
        for &kind in &config.kinds {
            let start = Instant::now();
            let mut rec = RunRecord {
                dataset: ds.id.clone(),
                kind,
                seed: config.split.seed,
                report: None,
                duration_secs: 0.0,
                model_path: None,
                weights_checksum: None,
                warning: None,
                error: None,
            };
            match &prepared {
                Err(e) => rec.error = Some(e.to_string()),
                Ok((train, test, capacity, weights)) => {
                    rec.weights_checksum = Some(weights.checksum());
                    let model_dir = outputs.as_ref().map(|o| o.dir.join("models"));
                    match run_one(
                        config,
                        kind,
                        &ds.id,
                        train,
                        test,
                        capacity,
                        weights,
                        model_dir.as_deref(),
                    ) {
                        Ok((report, path, warning)) => {
                            rec.report = Some(report);
                            rec.model_path = path;
                            rec.warning = warning;
                        }
                        Err(e) => rec.error = Some(e.to_string()),
                    }
                }
            }
            rec.duration_secs = start.elapsed().as_secs_f64();
            if let Some(out) = outputs.as_mut() {
                out.record(&rec, config.curve_max_k)?;
            }
            records.push(rec);
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub kind: ObjectiveKind,
    /// Data sets on which the metric is defined.
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub mean_rank: Option<f64>,
    /// Highest mean among the kinds.
    pub best: bool,
    /// Not significantly worse than the top-ranked kind; `None` when no test ran.
    pub not_significantly_worse: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kinds: Vec<ObjectiveKind>,
    pub rows: Vec<SummaryRow>,
    pub tests: BTreeMap<String, FriedmanResult>,
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

/// Per-metric mean and sample standard deviation per kind, with a Friedman
/// test over the data sets on which every kind has the metric defined.
pub fn aggregate(records: &[RunRecord], alpha: f64) -> Result<Summary> {
    let mut kinds: Vec<ObjectiveKind> = records.iter().map(|r| r.kind).collect();
    kinds.sort_unstable();
    kinds.dedup();
    let mut datasets: Vec<&str> = Vec::new();
    for r in records {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let lookup = |ds: &str, kind: ObjectiveKind, metric: &str| -> Option<f64> {
        records
            .iter()
            .find(|r| r.dataset == ds && r.kind == kind)
            .and_then(|r| r.report.as_ref())
            .and_then(|rep| rep.get(metric))
    };

    let mut rows = Vec::new();
    let mut tests = BTreeMap::new();
    for metric in SCALAR_METRICS {
        let complete: Vec<&str> = datasets
            .iter()
            .copied()
            .filter(|ds| kinds.iter().all(|&k| lookup(ds, k, metric).is_some()))
            .collect();
        let test = if kinds.len() >= 2 && complete.len() >= 2 {
            let table: Vec<Vec<f64>> = kinds
                .iter()
                .map(|&k| {
                    complete
                        .iter()
                        .map(|ds| lookup(ds, k, metric).unwrap())
                        .collect()
                })
                .collect();
            Some(friedman_bonferroni_dunn(&table, true, alpha)?)
        } else {
            None
        };
        let stats: Vec<(usize, Option<f64>, Option<f64>)> = kinds
            .iter()
            .map(|&k| {
                let vals: Vec<f64> = datasets
                    .iter()
                    .filter_map(|ds| lookup(ds, k, metric))
                    .collect();
                let (m, s) = mean_sd(&vals);
                (vals.len(), m, s)
            })
            .collect();
        let top = stats
            .iter()
            .filter_map(|s| s.1)
            .fold(f64::NEG_INFINITY, f64::max);
        for (j, &kind) in kinds.iter().enumerate() {
            let (n, mean, sd) = stats[j];
            rows.push(SummaryRow {
                metric: metric.to_string(),
                kind,
                n,
                mean,
                sd,
                mean_rank: test.as_ref().map(|t| t.mean_ranks[j]),
                best: mean == Some(top),
                not_significantly_worse: test.as_ref().map(|t| !t.significantly_worse[j]),
            });
        }
        if let Some(t) = test {
            tests.insert(metric.to_string(), t);
        }
    }
    Ok(Summary { kinds, rows, tests })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Summary {
    /// `summary.csv`: one row per (metric, kind). Contains no timings, so it is
    /// byte-identical across reruns with the same config.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        out.write_record([
            "metric",
            "model",
            "n",
            "mean",
            "sd",
            "mean_rank",
            "best",
            "not_significantly_worse",
            "friedman_statistic",
            "friedman_p_value",
            "critical_difference",
        ])?;
        for row in &self.rows {
            let test = self.tests.get(&row.metric);
            out.write_record([
                row.metric.clone(),
                row.kind.name().to_string(),
                row.n.to_string(),
                opt(row.mean),
                opt(row.sd),
                opt(row.mean_rank),
                row.best.to_string(),
                row.not_significantly_worse
                    .map(|b| b.to_string())
                    .unwrap_or_default(),
                opt(test.map(|t| t.statistic)),
                opt(test.map(|t| t.p_value)),
                opt(test.map(|t| t.critical_difference)),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<summary writer>", e))?;
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_csv(create(&dir.join("summary.csv"))?)?;
        let json = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("summary.json"), json).map_err(|e| Error::io(dir, e))?;
        Ok(())
    }

    pub fn row(&self, metric: &str, kind: ObjectiveKind) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.kind == kind)
    }
}

/// Load or reuse results: run the experiment and write `summary.csv`/`summary.json`
/// next to the run outputs.
pub fn run_and_summarize(config: &ExperimentConfig) -> Result<(Vec<RunRecord>, Summary)> {
    let records = run_experiment(config)?;
    let summary = aggregate(&records, config.alpha)?;
    if let Some(dir) = &config.output_dir {
        summary.save(dir)?;
    }
    Ok((records, summary))
}

/// Settings for ranking a task file with a saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    #[serde(default = "CsvDescriptor::explicit")]
    pub descriptor: CsvDescriptor,
    pub capacity: CapacityKind,
    /// Defaults to the mode matching the model's objective.
    #[serde(default)]
    pub mode: Option<RankMode>,
}

impl RankConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RankConfig = serde_json::from_str(&text)?;
        cfg.capacity.validate()?;
        Ok(cfg)
    }
}

/// Read a `runs.jsonl` file back.
pub fn read_runs(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
