//! Worker–task assignment.
//!
//! With nonincreasing worker weights, sorting tasks by predicted reward is an
//! optimal assignment, so no LP solver is involved. [`brute_force_optimal`]
//! enumerates permutations and exists to check that claim.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::capacity::WorkerWeights;
use crate::error::{Error, Result};
use crate::gbm::{sigmoid, BoostedModel, FeatureMatrix};
use crate::tasks::TaskSet;

/// Largest instance [`brute_force_optimal`] accepts.
pub const BRUTE_FORCE_MAX: usize = 10;

/// Indices sorted by value, largest first; equal values keep index order.
pub fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// Predicted success probability (two-stage, accuracy).
    Probability,
    /// `p v+ + (1 - p) v-` (two-stage, profit).
    ExpectedReward,
    /// Ranking-model score (integrated).
    RawScore,
}

/// Tasks ordered for assignment: `order[k]` is the task placed at rank `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub mode: RankMode,
    pub order: Vec<usize>,
    /// Sort key per task (indexed by task, not rank).
    pub keys: Vec<f64>,
    /// Predicted reward per task, when the model yields probabilities.
    pub predicted_rewards: Option<Vec<f64>>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub order: Vec<usize>,
    pub expected_profit: f64,
}

/// Rank tasks from raw model scores. `payoffs` are `(v+, v-)` per task and are
/// required for [`RankMode::ExpectedReward`].
pub fn rank_tasks(
    raw_scores: &[f64],
    payoffs: Option<&[(f64, f64)]>,
    mode: RankMode,
) -> Result<Ranking> {
    if let Some(p) = payoffs {
        if p.len() != raw_scores.len() {
            return Err(Error::LengthMismatch {
                left: raw_scores.len(),
                right: p.len(),
            });
        }
    }
    let probs: Vec<f64> = raw_scores.iter().map(|&s| sigmoid(s)).collect();
    let predicted_rewards = payoffs.map(|pay| {
        probs
            .iter()
            .zip(pay)
            .map(|(p, (vp, vm))| p * vp + (1.0 - p) * vm)
            .collect::<Vec<f64>>()
    });
    let keys = match mode {
        RankMode::Probability => probs,
        RankMode::RawScore => raw_scores.to_vec(),
        RankMode::ExpectedReward => predicted_rewards
            .clone()
            .ok_or(Error::MissingRewards("expected_reward ranking"))?,
    };
    Ok(Ranking {
        mode,
        order: descending_order(&keys),
        keys,
        predicted_rewards,
        warning: None,
    })
}

/// Score `tasks` with `model` and rank them. A mode that does not fit the
/// model's objective is reported in [`Ranking::warning`] but still honoured.
pub fn rank_by_predicted_reward(
    model: &BoostedModel,
    tasks: &TaskSet,
    mode: RankMode,
) -> Result<Ranking> {
    let x = FeatureMatrix::from_tasks(tasks);
    let raw = model.predict(&x)?;
    let payoffs: Vec<(f64, f64)> = tasks.tasks().iter().map(|t| t.payoffs()).collect();
    let mut ranking = rank_tasks(&raw, Some(&payoffs), mode)?;
    let classifier = model.objective_tag.is_classifier();
    ranking.warning = match (mode, classifier) {
        (RankMode::RawScore, true) => Some(format!(
            "raw-score ranking of a {:?} classifier; probabilities would order identically",
            model.objective_tag
        )),
        (RankMode::Probability | RankMode::ExpectedReward, false) => Some(format!(
            "{mode:?} ranking of a {:?} ranker treats its scores as log-odds",
            model.objective_tag
        )),
        _ => None,
    };
    Ok(ranking)
}

impl Ranking {
    pub fn plan(&self, rewards: &[f64], weights: &WorkerWeights) -> Result<AssignmentPlan> {
        let w = weights.prefix(self.order.len());
        Ok(AssignmentPlan {
            order: self.order.clone(),
            expected_profit: expected_profit(&self.order, rewards, w.as_slice())?,
        })
    }

    /// CSV with columns `rank,task_id,score,predicted_reward,weight` (ranks 1-based).
    pub fn write_csv<W: Write>(&self, weights: &WorkerWeights, writer: W) -> Result<()> {
        let w = weights.prefix(self.order.len());
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        out.write_record(["rank", "task_id", "score", "predicted_reward", "weight"])?;
        for (k, &task) in self.order.iter().enumerate() {
            let reward = self
                .predicted_rewards
                .as_ref()
                .map(|r| r[task].to_string())
                .unwrap_or_default();
            out.write_record([
                (k + 1).to_string(),
                task.to_string(),
                self.keys[task].to_string(),
                reward,
                w.as_slice()[k].to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<plan writer>", e))?;
        Ok(())
    }
}

/// `sum_k w[k] * rewards[order[k]]`.
pub fn expected_profit(order: &[usize], rewards: &[f64], w: &[f64]) -> Result<f64> {
    if order.len() != rewards.len() || order.len() != w.len() {
        return Err(Error::LengthMismatch {
            left: order.len(),
            right: if order.len() != rewards.len() {
                rewards.len()
            } else {
                w.len()
            },
        });
    }
    let mut total = 0.0;
    for (k, &i) in order.iter().enumerate() {
        total += w[k] * rewards[i];
    }
    Ok(total)
}

/// Maximise `sum_k w[k] * rewards[order[k]]` over every permutation.
/// The first maximiser in enumeration order wins ties.
pub fn brute_force_optimal(rewards: &[f64], w: &[f64]) -> Result<(Vec<usize>, f64)> {
    let n = rewards.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge {
            n,
            max: BRUTE_FORCE_MAX,
        });
    }
    if w.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: w.len(),
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best_order = perm.clone();
    let mut best = expected_profit(&perm, rewards, w)?;

    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let value = expected_profit(&perm, rewards, w)?;
            if value > best {
                best = value;
                best_order.copy_from_slice(&perm);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((best_order, best))
}
