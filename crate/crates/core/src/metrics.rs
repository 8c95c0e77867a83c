//! Ranking evaluation under stochastic capacity.
//!
//! Capacity-aware metrics (expected precision and profit) weight each rank by
//! its chance of being processed; AP, Spearman's rho and AUCPC weight every
//! rank equally.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::assignment::{descending_order, expected_profit};
use crate::capacity::{CapacityModel, WorkerWeights};
use crate::error::{Error, Result};
use crate::objectives::ndcg;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(Error::LengthMismatch { left: a, right: b })
    } else {
        Ok(())
    }
}

/// Fraction of positives among the first `k` ranks, for `k = 1..=k_max`.
fn precision_curve(order: &[usize], labels: &[u8], k_max: usize) -> Vec<f64> {
    let mut hits = 0u64;
    order
        .iter()
        .take(k_max)
        .enumerate()
        .map(|(k, &i)| {
            hits += u64::from(labels[i]);
            hits as f64 / (k + 1) as f64
        })
        .collect()
}

/// Mean of precision@W over the capacity distribution, conditioned on `W >= 1`.
/// Capacity beyond the list length processes the whole list.
pub fn expected_precision(order: &[usize], labels: &[u8], capacity: &CapacityModel) -> Result<f64> {
    check_len(order.len(), labels.len())?;
    let n = order.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let at_least_one = capacity.survival(1);
    if !(at_least_one > 0.0) {
        return Err(Error::Undefined("expected precision with zero capacity"));
    }
    let prec = precision_curve(order, labels, n);
    let mut total = 0.0;
    for c in 1..=n {
        total += capacity.pmf(c as u64) * prec[c - 1];
    }
    total += capacity.survival(n as u64 + 1) * prec[n - 1];
    Ok(total / at_least_one)
}

/// `sum_k w_k y_(k) / sum_k w_k`, the weight-averaged hit rate.
pub fn weighted_precision(order: &[usize], labels: &[u8], w: &[f64]) -> Result<f64> {
    check_len(order.len(), labels.len())?;
    check_len(order.len(), w.len())?;
    let denom: f64 = w.iter().sum();
    if !(denom > 0.0) {
        return Err(Error::Undefined(
            "weighted precision with zero total weight",
        ));
    }
    let num: f64 = order
        .iter()
        .zip(w)
        .map(|(&i, wk)| wk * f64::from(labels[i]))
        .sum();
    Ok(num / denom)
}

/// Mean precision@k over the ranks `k` that hold a positive.
pub fn average_precision(order: &[usize], labels: &[u8]) -> Result<f64> {
    check_len(order.len(), labels.len())?;
    let mut hits = 0u64;
    let mut sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::Undefined("average precision without positives"));
    }
    Ok(sum / hits as f64)
}

/// 1-based ranks, ascending, ties share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average-tie ranks.
pub fn spearman_rho(scores: &[f64], rewards: &[f64]) -> Result<f64> {
    check_len(scores.len(), rewards.len())?;
    if scores.len() < 2 {
        return Err(Error::Undefined("spearman rho needs at least two items"));
    }
    pearson(&average_ranks(scores), &average_ranks(rewards))
        .ok_or(Error::Undefined("spearman rho with constant ranking"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aucpc {
    /// Clamped to `[0, 1]`.
    pub normalized: f64,
    /// `(A_model - A_random) / (A_optimal - A_random)` before clamping.
    pub raw: f64,
}

fn cumulative_profit_area(order: &[usize], rewards: &[f64]) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for &i in order {
        let next = prev + rewards[i];
        area += 0.5 * (prev + next);
        prev = next;
    }
    area
}

/// Area under the cumulative profit curve, normalised between the expected
/// random ranking (0) and the reward-sorted ranking (1).
pub fn aucpc(order: &[usize], rewards: &[f64]) -> Result<Aucpc> {
    check_len(order.len(), rewards.len())?;
    if rewards.windows(2).all(|p| p[0] == p[1]) {
        return Err(Error::Undefined("aucpc with constant rewards"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let random = 0.5 * mean * n * n;
    let optimal = cumulative_profit_area(&descending_order(rewards), rewards);
    let model = cumulative_profit_area(order, rewards);
    let raw = (model - random) / (optimal - random);
    Ok(Aucpc {
        normalized: raw.clamp(0.0, 1.0),
        raw,
    })
}

/// Precision@k and cumulative profit@k for `k = 1..=k_max`.
pub fn at_k_curves(
    order: &[usize],
    labels: &[u8],
    rewards: &[f64],
    k_max: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(order.len(), labels.len())?;
    check_len(order.len(), rewards.len())?;
    if k_max > order.len() {
        return Err(Error::LengthMismatch {
            left: k_max,
            right: order.len(),
        });
    }
    let precision = precision_curve(order, labels, k_max);
    let mut acc = 0.0;
    let profit = order
        .iter()
        .take(k_max)
        .map(|&i| {
            acc += rewards[i];
            acc
        })
        .collect();
    Ok((precision, profit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Mean rank per model; 1 is best.
    pub mean_ranks: Vec<f64>,
    pub critical_difference: f64,
    pub best: usize,
    /// Model differs significantly from the best (Friedman rejects and the
    /// rank gap exceeds the Bonferroni–Dunn critical difference).
    pub significantly_worse: Vec<bool>,
    pub alpha: f64,
}

/// Friedman test over a `models x datasets` table with a Bonferroni–Dunn
/// comparison of every model against the best-ranked one.
pub fn friedman_bonferroni_dunn(
    table: &[Vec<f64>],
    higher_is_better: bool,
    alpha: f64,
) -> Result<FriedmanResult> {
    let m = table.len();
    let n = table.first().map_or(0, Vec::len);
    if m < 2 || n < 2 {
        return Err(Error::Undefined(
            "friedman test needs at least 2 models and 2 data sets",
        ));
    }
    if let Some(row) = table.iter().find(|r| r.len() != n) {
        return Err(Error::LengthMismatch {
            left: row.len(),
            right: n,
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }

    let mut mean_ranks = vec![0.0; m];
    for d in 0..n {
        // Rank 1 goes to the best value.
        let column: Vec<f64> = table
            .iter()
            .map(|row| if higher_is_better { -row[d] } else { row[d] })
            .collect();
        for (j, r) in average_ranks(&column).into_iter().enumerate() {
            mean_ranks[j] += r;
        }
    }
    for r in mean_ranks.iter_mut() {
        *r /= n as f64;
    }

    let (mf, nf) = (m as f64, n as f64);
    let sum_sq: f64 = mean_ranks.iter().map(|r| r * r).sum();
    let statistic =
        (12.0 * nf / (mf * (mf + 1.0)) * (sum_sq - mf * (mf + 1.0).powi(2) / 4.0)).max(0.0);
    let chi2 = ChiSquared::new(mf - 1.0).expect("m >= 2");
    let p_value = (1.0 - chi2.cdf(statistic)).clamp(0.0, 1.0);

    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let q_alpha = z.inverse_cdf(1.0 - alpha / (2.0 * (mf - 1.0)));
    let critical_difference = q_alpha * (mf * (mf + 1.0) / (6.0 * nf)).sqrt();

    let best = (0..m)
        .min_by(|&a, &b| mean_ranks[a].total_cmp(&mean_ranks[b]))
        .expect("m >= 2");
    let significantly_worse = mean_ranks
        .iter()
        .map(|r| p_value < alpha && r - mean_ranks[best] > critical_difference)
        .collect();
    Ok(FriedmanResult {
        statistic,
        p_value,
        mean_ranks,
        critical_difference,
        best,
        significantly_worse,
        alpha,
    })
}

/// Every metric for one model on one data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub expected_precision: Option<f64>,
    pub weighted_precision: Option<f64>,
    pub expected_profit: f64,
    /// Expected profit relative to the reward-sorted ranking.
    pub normalized_expected_profit: Option<f64>,
    pub average_precision: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub aucpc: Option<f64>,
    pub aucpc_raw: Option<f64>,
    /// Capacity-discounted NDCG with rewards as relevance.
    pub ndcg: Option<f64>,
    pub precision_at_k: Vec<f64>,
    pub profit_at_k: Vec<f64>,
}

pub const SCALAR_METRICS: [&str; 9] = [
    "expected_precision",
    "weighted_precision",
    "expected_profit",
    "normalized_expected_profit",
    "average_precision",
    "spearman_rho",
    "aucpc",
    "aucpc_raw",
    "ndcg",
];

impl MetricReport {
    /// Scalar metrics by name, `None` where undefined.
    pub fn scalars(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("expected_precision", self.expected_precision),
            ("weighted_precision", self.weighted_precision),
            ("expected_profit", Some(self.expected_profit)),
            (
                "normalized_expected_profit",
                self.normalized_expected_profit,
            ),
            ("average_precision", self.average_precision),
            ("spearman_rho", self.spearman_rho),
            ("aucpc", self.aucpc),
            ("aucpc_raw", self.aucpc_raw),
            ("ndcg", self.ndcg),
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars()
            .into_iter()
            .find(|(k, _)| *k == name)
            .and_then(|(_, v)| v)
    }

    /// Long-format rows `dataset,model,metric,value`; undefined metrics are skipped.
    pub fn write_long_csv<W: Write>(
        &self,
        dataset: &str,
        model: &str,
        writer: &mut csv::Writer<W>,
    ) -> Result<()> {
        for (name, value) in self.scalars() {
            if let Some(v) = value {
                writer.write_record([dataset, model, name, &v.to_string()])?;
            }
        }
        Ok(())
    }
}

/// Evaluate a ranking against true labels and rewards. `scores` are the
/// ranking keys per task; `weights` must be the capacity's survival weights.
pub fn evaluate(
    scores: &[f64],
    order: &[usize],
    labels: &[u8],
    rewards: &[f64],
    capacity: &CapacityModel,
    weights: &WorkerWeights,
) -> Result<MetricReport> {
    let n = order.len();
    check_len(n, scores.len())?;
    check_len(n, labels.len())?;
    check_len(n, rewards.len())?;
    let w = weights.prefix(n);
    let w = w.as_slice();

    let ep = expected_profit(order, rewards, w)?;
    let best = expected_profit(&descending_order(rewards), rewards, w)?;
    let (precision_at_k, profit_at_k) = at_k_curves(order, labels, rewards, n)?;
    let auc = aucpc(order, rewards).ok();
    Ok(MetricReport {
        n,
        expected_precision: expected_precision(order, labels, capacity).ok(),
        weighted_precision: weighted_precision(order, labels, w).ok(),
        expected_profit: ep,
        normalized_expected_profit: (best > 0.0).then(|| ep / best),
        average_precision: average_precision(order, labels).ok(),
        spearman_rho: spearman_rho(scores, rewards).ok(),
        aucpc: auc.map(|a| a.normalized),
        aucpc_raw: auc.map(|a| a.raw),
        ndcg: ndcg(order, rewards, w).ok(),
        precision_at_k,
        profit_at_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::CapacityKind;

    fn det(c: u64, n: usize) -> CapacityModel {
        CapacityModel::new(CapacityKind::Deterministic { c }, n).unwrap()
    }

    #[test]
    fn expected_precision_examples() {
        assert_eq!(
            expected_precision(&[0, 1, 2], &[1, 0, 1], &det(2, 3)).unwrap(),
            0.5
        );
        let lognormal = CapacityModel::new(
            CapacityKind::Lognormal {
                mu_log: 1.0,
                sigma: 2.0,
            },
            4,
        )
        .unwrap();
        let v = expected_precision(&[3, 1, 0, 2], &[1; 4], &lognormal).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let emp = CapacityModel::new(
            CapacityKind::Empirical {
                counts: vec![0, 1, 0, 1],
            },
            3,
        )
        .unwrap();
        let v = expected_precision(&[0, 1, 2], &[1, 0, 1], &emp).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-15);
        assert!(expected_precision(&[0], &[1], &det(0, 1)).is_err());
    }

    #[test]
    fn capacity_beyond_list_uses_full_list() {
        // Capacity 5 on three items processes all three.
        let v = expected_precision(&[0, 1, 2], &[1, 0, 0], &det(5, 3)).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(
            average_precision(&[0, 1, 2, 3, 4], &[1, 1, 1, 0, 0]).unwrap(),
            1.0
        );
        let v = average_precision(&[0, 1, 2], &[1, 0, 1]).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-15);
        assert!(average_precision(&[0, 1], &[0, 0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let r = [3.0, -1.0, 7.0, 0.0];
        assert!((spearman_rho(&r, &r).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        assert!((spearman_rho(&neg, &r).unwrap() + 1.0).abs() < 1e-15);
        // Ranks (1, 2.5, 2.5, 4, 5) against (2, 1, 3.5, 3.5, 5): 7.25 / 9.5.
        let v = spearman_rho(&[1.0, 2.0, 2.0, 3.0, 5.0], &[2.0, 1.0, 4.0, 4.0, 6.0]).unwrap();
        assert!((v - 29.0 / 38.0).abs() < 1e-15);
        assert!(spearman_rho(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(spearman_rho(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn aucpc_examples() {
        let rewards = [3.0, -1.0, 2.0, -4.0];
        let opt = descending_order(&rewards);
        assert!((aucpc(&opt, &rewards).unwrap().normalized - 1.0).abs() < 1e-15);
        let symmetric = [2.0, 1.0, -1.0, -2.0];
        let reversed = [3, 2, 1, 0];
        let a = aucpc(&reversed, &symmetric).unwrap();
        assert_eq!(a.normalized, 0.0);
        assert!(a.raw <= 0.0);
        assert!(aucpc(&[0, 1], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn at_k_examples() {
        let labels = [0, 1, 1, 0];
        let rewards = [-1.0, 4.0, 2.0, -3.0];
        let order = [1, 2, 0, 3];
        let (p, c) = at_k_curves(&order, &labels, &rewards, 4).unwrap();
        assert_eq!(p[0], 1.0);
        assert_eq!(p[3], 0.5);
        assert_eq!(c[3], 2.0);
        assert_eq!(c, vec![4.0, 6.0, 5.0, 2.0]);
        assert!(at_k_curves(&order, &labels, &rewards, 5).is_err());
    }

    #[test]
    fn friedman_identical_models() {
        let table = vec![vec![0.5, 0.7, 0.1]; 4];
        let r = friedman_bonferroni_dunn(&table, true, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.significantly_worse.iter().all(|&s| !s));
        assert!(friedman_bonferroni_dunn(&table[..1], true, 0.05).is_err());
    }

    #[test]
    fn friedman_dominant_model() {
        let table: Vec<Vec<f64>> = (0..4)
            .map(|m| (0..10).map(|d| 10.0 - m as f64 + 0.01 * d as f64).collect())
            .collect();
        let r = friedman_bonferroni_dunn(&table, true, 0.05).unwrap();
        assert_eq!(r.best, 0);
        assert_eq!(r.mean_ranks[0], 1.0);
        assert_eq!(r.mean_ranks, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn friedman_textbook_example() {
        // Fourteen data sets, four models, with rank sums 44 / 28 / 40.5 / 27.5
        // (mean ranks 3.143 / 2.000 / 2.893 / 1.964, the classic C4.5 comparison).
        let ranks: [[f64; 4]; 14] = [
            [1.0, 4.0, 2.0, 3.0],
            [4.0, 2.0, 3.0, 1.0],
            [4.0, 1.0, 3.0, 2.0],
            [4.0, 1.0, 3.0, 2.0],
            [3.0, 1.0, 4.0, 2.0],
            [4.0, 1.0, 2.0, 3.0],
            [4.0, 1.0, 3.0, 2.0],
            [1.0, 4.0, 3.0, 2.0],
            [3.0, 1.0, 4.0, 2.0],
            [2.0, 4.0, 3.0, 1.0],
            [4.0, 3.0, 2.0, 1.0],
            [2.0, 1.0, 4.0, 3.0],
            [4.0, 3.0, 2.0, 1.0],
            [4.0, 1.0, 2.5, 2.5],
        ];
        // Higher metric is better, so value = 5 - rank.
        let table: Vec<Vec<f64>> = (0..4)
            .map(|m| ranks.iter().map(|r| 5.0 - r[m]).collect())
            .collect();
        let r = friedman_bonferroni_dunn(&table, true, 0.05).unwrap();
        // Reference values from scipy.stats (chi2.sf, norm.ppf).
        assert!((r.statistic - 9.278_571_428_571_437).abs() < 1e-6);
        assert!((r.p_value - 0.025_807_496_707_063_185).abs() < 1e-6);
        assert!((r.critical_difference - 1.168_142_530_640_099_7).abs() < 1e-6);
        assert_eq!(r.best, 3);
        // 3.143 - 1.964 = 1.179 > CD; 2.893 - 1.964 = 0.929 < CD.
        assert_eq!(r.significantly_worse, vec![true, false, false, false]);
    }

    #[test]
    fn evaluate_report_is_consistent() {
        let labels = [1, 0, 1, 0, 0];
        let rewards = [12.0, -2.0, 6.0, -4.0, -1.0];
        let scores = [0.9, 0.1, 0.7, 0.3, 0.2];
        let order = descending_order(&scores);
        let cap = det(2, 5);
        let w = cap.survival_weights().unwrap();
        let rep = evaluate(&scores, &order, &labels, &rewards, &cap, &w).unwrap();
        assert_eq!(rep.expected_profit, rep.profit_at_k[1]);
        assert_eq!(rep.expected_precision, Some(rep.precision_at_k[1]));
        assert_eq!(rep.normalized_expected_profit, Some(1.0));
        assert_eq!(rep.precision_at_k.len(), 5);
        assert_eq!(rep.get("expected_profit"), Some(18.0));
        let mut w = csv::Writer::from_writer(Vec::new());
        rep.write_long_csv("d", "m", &mut w).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert!(text.contains("d,m,expected_profit,18\n"));
    }
}
