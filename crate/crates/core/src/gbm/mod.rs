//! Second-order gradient boosting of regression trees with pluggable objectives.

mod binning;
mod tree;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::TaskSet;

pub use binning::FeatureBins;
pub use tree::{Tree, TreeNode};

/// Per-instance hessians are floored here before split finding.
pub const HESSIAN_FLOOR: f64 = 1e-6;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: n_rows * n_cols,
            });
        }
        Ok(FeatureMatrix {
            values,
            n_rows,
            n_cols,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    actual: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        FeatureMatrix::new(values, rows.len(), n_cols)
    }

    pub fn from_tasks(tasks: &TaskSet) -> Self {
        let rows = tasks.rows();
        FeatureMatrix::from_rows(&rows).expect("task sets have uniform dimension")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.n_cols..(row + 1) * self.n_cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveTag {
    #[serde(rename = "ce")]
    CrossEntropy,
    #[serde(rename = "aec")]
    AverageExpectedCost,
    #[serde(rename = "lambda_ndcg_accuracy")]
    LambdaAccuracy,
    #[serde(rename = "lambda_ndcg_cost")]
    LambdaCost,
}

impl ObjectiveTag {
    pub fn is_classifier(self) -> bool {
        matches!(
            self,
            ObjectiveTag::CrossEntropy | ObjectiveTag::AverageExpectedCost
        )
    }
}

/// A differentiable training objective over the current ensemble scores.
pub trait Objective {
    fn tag(&self) -> ObjectiveTag;

    fn n_instances(&self) -> usize;

    /// Starting score shared by every instance.
    fn base_score(&self) -> f64;

    /// Scalar training loss (lower is better).
    fn loss(&self, scores: &[f64]) -> f64;

    /// Fill per-instance gradient and hessian of the loss.
    fn grad_hess(&self, scores: &[f64], grad: &mut [f64], hess: &mut [f64]);

    /// Whether `loss` is the quantity the gradients descend, so a
    /// backtracking guard on it is meaningful.
    fn supports_line_search(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Histogram,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_hessian: f64,
    pub l2_leaf_penalty: f64,
    pub histogram_bins: usize,
    pub subsample: f64,
    pub seed: u64,
    pub split_mode: SplitMode,
    /// Halve a tree's leaves while it increases the loss (smooth objectives only).
    pub line_search: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_rounds: 200,
            max_depth: 4,
            learning_rate: 0.1,
            min_child_hessian: 1e-3,
            l2_leaf_penalty: 1.0,
            histogram_bins: 64,
            subsample: 1.0,
            seed: 0,
            split_mode: SplitMode::Histogram,
            line_search: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_rounds < 1 {
            return bad("n_rounds must be at least 1");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.histogram_bins < 2 || self.histogram_bins > u16::MAX as usize {
            return bad("histogram_bins must lie in [2, 65535]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.l2_leaf_penalty >= 0.0) || !(self.min_child_hessian >= 0.0) {
            return bad("penalties must be nonnegative");
        }
        Ok(())
    }
}

/// Split gain of the second-order leaf objective `-G^2 / (2 (H + l2))`.
pub fn second_order_gain(g_left: f64, h_left: f64, g_right: f64, h_right: f64, l2: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + l2);
    0.5 * (score(g_left, h_left) + score(g_right, h_right)
        - score(g_left + g_right, h_left + h_right))
}

/// Additive tree ensemble: `score(x) = base_score + sum_t tree_t(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub objective_tag: ObjectiveTag,
    pub n_features: usize,
    pub config: TrainConfig,
    /// Training loss before the first round and after every round.
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    model: BoostedModel,
}

impl BoostedModel {
    /// An ensemble with no trees.
    pub fn constant(base_score: f64, objective_tag: ObjectiveTag, n_features: usize) -> Self {
        BoostedModel {
            trees: Vec::new(),
            learning_rate: 1.0,
            base_score,
            objective_tag,
            n_features,
            config: TrainConfig::default(),
            loss_history: Vec::new(),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        if data.n_cols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: data.n_cols(),
            });
        }
        Ok((0..data.n_rows())
            .map(|i| self.predict_row(data.row(i)))
            .collect())
    }

    /// Logistic link over [`predict`](Self::predict).
    pub fn predict_proba(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self.predict(data)?.into_iter().map(sigmoid).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument {
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelVersion(doc.version));
        }
        if let Some(f) = doc.model.trees.iter().filter_map(Tree::max_feature).max() {
            if f >= doc.model.n_features {
                return Err(Error::DimensionMismatch {
                    expected: doc.model.n_features,
                    actual: f + 1,
                });
            }
        }
        Ok(doc.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(
            BufWriter::new(file),
            &ModelDocument {
                version: MODEL_FORMAT_VERSION,
                model: self.clone(),
            },
        )?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let doc: ModelDocument = serde_json::from_reader(BufReader::new(file))?;
        Self::from_json(&serde_json::to_string(&doc)?)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Newton boosting: every round fits one tree to the objective's current
/// gradient and hessian, with leaf values `-G / (H + l2)` times the learning rate.
pub fn fit(
    data: &FeatureMatrix,
    objective: &dyn Objective,
    config: &TrainConfig,
) -> Result<BoostedModel> {
    config.validate()?;
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if objective.n_instances() != n {
        return Err(Error::LengthMismatch {
            left: objective.n_instances(),
            right: n,
        });
    }

    let bins = FeatureBins::fit(data, config.histogram_bins);
    let codes = match config.split_mode {
        SplitMode::Histogram => bins.encode(data),
        SplitMode::Exact => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let base_score = objective.base_score();
    let mut model = BoostedModel {
        trees: Vec::with_capacity(config.n_rounds),
        learning_rate: config.learning_rate,
        base_score,
        objective_tag: objective.tag(),
        n_features: data.n_cols(),
        config: config.clone(),
        loss_history: Vec::with_capacity(config.n_rounds + 1),
    };

    let mut scores = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let guard = config.line_search && objective.supports_line_search();
    let mut loss = objective.loss(&scores);
    model.loss_history.push(loss);

    for round in 0..config.n_rounds {
        objective.grad_hess(&scores, &mut grad, &mut hess);
        if grad.iter().chain(hess.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { round });
        }
        for h in hess.iter_mut() {
            *h = h.max(HESSIAN_FLOOR);
        }

        let rows: Vec<usize> = if config.subsample < 1.0 {
            (0..n)
                .filter(|_| rng.gen::<f64>() < config.subsample)
                .collect()
        } else {
            (0..n).collect()
        };
        let grower = tree::TreeGrower {
            data,
            bins: match config.split_mode {
                SplitMode::Histogram => Some((&bins, codes.as_slice())),
                SplitMode::Exact => None,
            },
            grad: &grad,
            hess: &hess,
            config,
        };
        let mut tree = grower.grow(rows);
        let mut deltas: Vec<f64> = (0..n).map(|i| tree.predict_row(data.row(i))).collect();

        let mut candidate: Vec<f64> = scores.iter().zip(&deltas).map(|(s, d)| s + d).collect();
        let mut new_loss = objective.loss(&candidate);
        if guard {
            let mut halvings = 0;
            while new_loss > loss && halvings < 30 {
                tree.scale(0.5);
                for d in deltas.iter_mut() {
                    *d *= 0.5;
                }
                for ((c, s), d) in candidate.iter_mut().zip(&scores).zip(&deltas) {
                    *c = s + d;
                }
                new_loss = objective.loss(&candidate);
                halvings += 1;
            }
            if new_loss > loss {
                tree.scale(0.0);
                candidate.copy_from_slice(&scores);
                new_loss = loss;
            }
        }
        scores = candidate;
        loss = new_loss;
        model.loss_history.push(loss);
        model.trees.push(tree);
    }
    Ok(model)
}
