//! Training objectives: cross-entropy, average expected cost, and pairwise
//! lambda gradients for capacity-discounted NDCG.
//!
//! Gradients follow the boosting engine's convention: they point in the
//! direction of increasing loss, so the leaf update `-G / (H + l2)` improves it.

use serde::{Deserialize, Serialize};

use crate::assignment::descending_order;
use crate::capacity::WorkerWeights;
use crate::error::{Error, Result};
use crate::gbm::{sigmoid, Objective, ObjectiveTag};
use crate::tasks::{CostMatrix, TaskSet};

const PROB_CLAMP: f64 = 1e-12;

/// Per-instance losses and derivatives plus their mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

/// Negative log-likelihood of one instance.
pub fn ce_instance_loss(score: f64, label: u8) -> f64 {
    let p = sigmoid(score).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn ce_loss(scores: &[f64], labels: &[u8]) -> Result<LossGrad> {
    check_len(scores.len(), labels.len())?;
    let n = scores.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    let mut hess = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        let p = sigmoid(s);
        loss += ce_instance_loss(s, y);
        grad.push(p - f64::from(y));
        hess.push(p * (1.0 - p));
    }
    Ok(LossGrad {
        loss: loss / n,
        grad,
        hess,
    })
}

/// Slope of the expected cost in the predicted probability.
fn cost_slope(label: u8, c: &CostMatrix) -> f64 {
    if label == 1 {
        c.c_tp - c.c_fn
    } else {
        c.c_fp - c.c_tn
    }
}

/// Expected misclassification cost of one instance at probability `sigmoid(score)`.
pub fn aec_instance_loss(score: f64, label: u8, c: &CostMatrix) -> f64 {
    let p = sigmoid(score);
    if label == 1 {
        p * c.c_tp + (1.0 - p) * c.c_fn
    } else {
        p * c.c_fp + (1.0 - p) * c.c_tn
    }
}

/// Average expected cost; the hessian is the exact second derivative floored at 0.
pub fn aec_loss(scores: &[f64], labels: &[u8], costs: &[CostMatrix]) -> Result<LossGrad> {
    check_len(scores.len(), labels.len())?;
    check_len(scores.len(), costs.len())?;
    let n = scores.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    let mut hess = Vec::with_capacity(scores.len());
    for ((&s, &y), c) in scores.iter().zip(labels).zip(costs) {
        let p = sigmoid(s);
        let b = cost_slope(y, c);
        loss += aec_instance_loss(s, y, c);
        let dp = p * (1.0 - p);
        grad.push(dp * b);
        hess.push((dp * (1.0 - 2.0 * p) * b).max(0.0));
    }
    Ok(LossGrad {
        loss: loss / n,
        grad,
        hess,
    })
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(Error::LengthMismatch { left: a, right: b })
    } else {
        Ok(())
    }
}

/// Discounted cumulative gain of a ranking: `sum_k w[k] * rel[order[k]]`.
pub fn dcg(order: &[usize], rel: &[f64], w: &[f64]) -> Result<f64> {
    check_len(order.len(), rel.len())?;
    check_len(order.len(), w.len())?;
    Ok(order.iter().zip(w).map(|(&i, wk)| wk * rel[i]).sum())
}

/// DCG of the ranking induced by sorting `scores` descending (ties by index).
pub fn dcg_by_scores(scores: &[f64], rel: &[f64], w: &[f64]) -> Result<f64> {
    check_len(scores.len(), rel.len())?;
    dcg(&descending_order(scores), rel, w)
}

/// DCG of the relevance-sorted ranking.
pub fn ideal_dcg(rel: &[f64], w: &[f64]) -> Result<f64> {
    dcg(&descending_order(rel), rel, w)
}

/// `DCG / IDCG`; a nonpositive ideal DCG is reported as a degenerate query.
pub fn ndcg(order: &[usize], rel: &[f64], w: &[f64]) -> Result<f64> {
    let ideal = ideal_dcg(rel, w)?;
    if !(ideal > 0.0) {
        return Err(Error::DegenerateQuery);
    }
    Ok(dcg(order, rel, w)? / ideal)
}

/// Which pairs enter the lambda sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "k")]
pub enum PairCutoff {
    /// At least one member in the top `K`, where `K` counts ranks with weight >= 1e-4.
    #[default]
    Auto,
    /// Every pair.
    Exact,
    Top(usize),
}

impl PairCutoff {
    pub const AUTO_WEIGHT_EPS: f64 = 1e-4;

    pub fn resolve(self, w: &[f64]) -> usize {
        let n = w.len();
        match self {
            PairCutoff::Exact => n,
            PairCutoff::Top(k) => k.min(n),
            PairCutoff::Auto => w
                .iter()
                .take_while(|&&x| x >= Self::AUTO_WEIGHT_EPS)
                .count()
                .min(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LambdaParams {
    /// Steepness of the pairwise logistic.
    pub sigma: f64,
    pub cutoff: PairCutoff,
}

impl Default for LambdaParams {
    fn default() -> Self {
        LambdaParams {
            sigma: 1.0,
            cutoff: PairCutoff::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGradients {
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    /// Set when the ideal DCG is nonpositive or all relevances are equal.
    pub degenerate: bool,
}

/// `|ΔNDCG|` from swapping the items at rank positions `a` and `b`.
pub fn swap_delta(w_a: f64, w_b: f64, rel_a: f64, rel_b: f64, ideal: f64) -> f64 {
    (w_a - w_b).abs() * (rel_a - rel_b).abs() / ideal
}

/// Above this many distinct relevance values every later position is scanned.
const MAX_GROUPED_CLASSES: usize = 8;

/// Ascending positions per distinct relevance value, if there are at most `max`.
fn relevance_classes(r: &[f64], max: usize) -> Option<Vec<(f64, Vec<usize>)>> {
    let mut classes: Vec<(f64, Vec<usize>)> = Vec::new();
    for (pos, &v) in r.iter().enumerate() {
        if let Some(j) = classes.iter().position(|(c, _)| *c == v) {
            classes[j].1.push(pos);
        } else if classes.len() < max {
            classes.push((v, vec![pos]));
        } else {
            return None;
        }
    }
    Some(classes)
}

/// Pairwise lambdas of capacity-discounted NDCG under the current score ordering.
pub fn lambda_grad_hess(
    scores: &[f64],
    rel: &[f64],
    w: &[f64],
    params: &LambdaParams,
) -> Result<LambdaGradients> {
    let n = scores.len();
    check_len(n, rel.len())?;
    check_len(n, w.len())?;
    let mut out = LambdaGradients {
        grad: vec![0.0; n],
        hess: vec![0.0; n],
        degenerate: false,
    };
    let ideal = ideal_dcg(rel, w)?;
    let all_equal = rel.windows(2).all(|p| p[0] == p[1]);
    if n < 2 || all_equal || !(ideal > 0.0) {
        out.degenerate = true;
        return Ok(out);
    }

    let order = descending_order(scores);
    let s: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let r: Vec<f64> = order.iter().map(|&i| rel[i]).collect();
    let mut lam = vec![0.0; n];
    let mut hes = vec![0.0; n];
    let sigma = params.sigma;
    let k = params.cutoff.resolve(w);
    // rho = e_lo / (e_lo + e_hi) with e = exp(sigma (s - s_max)): one exp per item.
    let e: Vec<f64> = s.iter().map(|&v| (sigma * (v - s[0])).exp()).collect();

    let classes = relevance_classes(&r, MAX_GROUPED_CLASSES);

    // Sums are accumulated without the 1 / IDCG factor, applied once at the end.
    macro_rules! pair {
        ($a:expr, $b:expr, $ra:expr, $wa:expr, $ea:expr, $lam_a:ident, $hes_a:ident) => {{
            let b = $b;
            let dr = $ra - r[b];
            let dw = ($wa - w[b]).abs();
            if dr != 0.0 && dw != 0.0 {
                let delta = dw * dr.abs();
                let denom = $ea + e[b];
                // rho = P(the higher-relevance item is ranked wrongly).
                let rho = if denom > 0.0 {
                    let rho_b = e[b] / denom;
                    if dr > 0.0 {
                        rho_b
                    } else {
                        1.0 - rho_b
                    }
                } else {
                    let gap = (s[$a] - s[b]).copysign(dr);
                    1.0 / (1.0 + (sigma * gap).exp())
                };
                // The higher-relevance item is pushed up (negative gradient).
                let l = (rho * delta).copysign(dr);
                $lam_a -= l;
                lam[b] += l;
                let h = rho * (1.0 - rho) * delta;
                $hes_a += h;
                hes[b] += h;
            }
        }};
    }

    // Positions a < b; pairs with a >= K have both members outside the top K.
    for a in 0..k {
        let (ra, wa, ea) = (r[a], w[a], e[a]);
        let (mut lam_a, mut hes_a) = (0.0, 0.0);
        match &classes {
            Some(classes) => {
                for (value, positions) in classes {
                    if *value != ra {
                        let from = positions.partition_point(|&p| p <= a);
                        for &b in &positions[from..] {
                            pair!(a, b, ra, wa, ea, lam_a, hes_a);
                        }
                    }
                }
            }
            None => {
                for b in a + 1..n {
                    pair!(a, b, ra, wa, ea, lam_a, hes_a);
                }
            }
        }
        lam[a] += lam_a;
        hes[a] += hes_a;
    }
    let inv_ideal = 1.0 / ideal;
    for v in lam.iter_mut() {
        *v *= inv_ideal;
    }
    for v in hes.iter_mut() {
        *v *= sigma * inv_ideal;
    }
    for (pos, &i) in order.iter().enumerate() {
        out.grad[i] = lam[pos];
        out.hess[i] = hes[pos];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "ce")]
    CrossEntropy,
    #[serde(rename = "aec")]
    AverageExpectedCost,
    #[serde(rename = "lambda_accuracy")]
    LambdaAccuracy,
    #[serde(rename = "lambda_cost")]
    LambdaCost,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [
        ObjectiveKind::CrossEntropy,
        ObjectiveKind::AverageExpectedCost,
        ObjectiveKind::LambdaAccuracy,
        ObjectiveKind::LambdaCost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::CrossEntropy => "ce",
            ObjectiveKind::AverageExpectedCost => "aec",
            ObjectiveKind::LambdaAccuracy => "lambda_accuracy",
            ObjectiveKind::LambdaCost => "lambda_cost",
        }
    }

    pub fn tag(self) -> ObjectiveTag {
        match self {
            ObjectiveKind::CrossEntropy => ObjectiveTag::CrossEntropy,
            ObjectiveKind::AverageExpectedCost => ObjectiveTag::AverageExpectedCost,
            ObjectiveKind::LambdaAccuracy => ObjectiveTag::LambdaAccuracy,
            ObjectiveKind::LambdaCost => ObjectiveTag::LambdaCost,
        }
    }

    pub fn is_ranking(self) -> bool {
        matches!(
            self,
            ObjectiveKind::LambdaAccuracy | ObjectiveKind::LambdaCost
        )
    }
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown objective kind `{s}`")))
    }
}

/// Labels and (optionally) costs the objectives train against.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTargets {
    pub labels: Vec<u8>,
    pub costs: Option<Vec<CostMatrix>>,
}

impl From<&TaskSet> for TrainingTargets {
    fn from(tasks: &TaskSet) -> Self {
        TrainingTargets {
            labels: tasks.labels(),
            costs: Some(tasks.costs()),
        }
    }
}

impl TrainingTargets {
    pub fn rewards(&self) -> Option<Vec<f64>> {
        self.costs.as_ref().map(|costs| {
            costs
                .iter()
                .zip(&self.labels)
                .map(|(c, &y)| {
                    let (vp, vm) = c.payoffs();
                    if y == 1 {
                        vp
                    } else {
                        vm
                    }
                })
                .collect()
        })
    }
}

fn prior_logit(labels: &[u8]) -> f64 {
    let n = labels.len().max(1) as f64;
    let p = (labels.iter().map(|&y| f64::from(y)).sum::<f64>() / n).clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

pub struct CrossEntropy {
    labels: Vec<u8>,
}

impl CrossEntropy {
    pub fn new(labels: Vec<u8>) -> Self {
        CrossEntropy { labels }
    }
}

impl Objective for CrossEntropy {
    fn tag(&self) -> ObjectiveTag {
        ObjectiveTag::CrossEntropy
    }
    fn n_instances(&self) -> usize {
        self.labels.len()
    }
    fn base_score(&self) -> f64 {
        prior_logit(&self.labels)
    }
    fn loss(&self, scores: &[f64]) -> f64 {
        let n = self.labels.len().max(1) as f64;
        scores
            .iter()
            .zip(&self.labels)
            .map(|(&s, &y)| ce_instance_loss(s, y))
            .sum::<f64>()
            / n
    }
    fn grad_hess(&self, scores: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        for (i, (&s, &y)) in scores.iter().zip(&self.labels).enumerate() {
            let p = sigmoid(s);
            grad[i] = p - f64::from(y);
            hess[i] = p * (1.0 - p);
        }
    }
    fn supports_line_search(&self) -> bool {
        true
    }
}

pub struct AverageExpectedCost {
    labels: Vec<u8>,
    costs: Vec<CostMatrix>,
}

impl AverageExpectedCost {
    pub fn new(labels: Vec<u8>, costs: Vec<CostMatrix>) -> Result<Self> {
        check_len(labels.len(), costs.len())?;
        Ok(AverageExpectedCost { labels, costs })
    }
}

impl Objective for AverageExpectedCost {
    fn tag(&self) -> ObjectiveTag {
        ObjectiveTag::AverageExpectedCost
    }
    fn n_instances(&self) -> usize {
        self.labels.len()
    }
    fn base_score(&self) -> f64 {
        prior_logit(&self.labels)
    }
    fn loss(&self, scores: &[f64]) -> f64 {
        let n = self.labels.len().max(1) as f64;
        scores
            .iter()
            .zip(&self.labels)
            .zip(&self.costs)
            .map(|((&s, &y), c)| aec_instance_loss(s, y, c))
            .sum::<f64>()
            / n
    }
    fn grad_hess(&self, scores: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        for (i, ((&s, &y), c)) in scores.iter().zip(&self.labels).zip(&self.costs).enumerate() {
            let p = sigmoid(s);
            let dp = p * (1.0 - p);
            let b = cost_slope(y, c);
            grad[i] = dp * b;
            hess[i] = (dp * (1.0 - 2.0 * p) * b).max(0.0);
        }
    }
    fn supports_line_search(&self) -> bool {
        true
    }
}

/// Lambda objective over one or more queries. Each query is ranked against the
/// leading weights `w[..query_len]`.
pub struct LambdaObjective {
    tag: ObjectiveTag,
    relevance: Vec<f64>,
    weights: Vec<f64>,
    queries: Vec<Vec<usize>>,
    params: LambdaParams,
}

impl LambdaObjective {
    /// The whole data set as a single query.
    pub fn new(
        tag: ObjectiveTag,
        relevance: Vec<f64>,
        weights: &WorkerWeights,
        params: LambdaParams,
    ) -> Self {
        let n = relevance.len();
        Self::with_queries(tag, relevance, weights, params, vec![(0..n).collect()])
    }

    pub fn with_queries(
        tag: ObjectiveTag,
        relevance: Vec<f64>,
        weights: &WorkerWeights,
        params: LambdaParams,
        queries: Vec<Vec<usize>>,
    ) -> Self {
        LambdaObjective {
            tag,
            relevance,
            weights: weights.as_slice().to_vec(),
            queries,
            params,
        }
    }

    pub fn relevance(&self) -> &[f64] {
        &self.relevance
    }

    fn query_weights(&self, len: usize) -> Vec<f64> {
        let mut w: Vec<f64> = self.weights.iter().copied().take(len).collect();
        w.resize(len, 0.0);
        w
    }

    fn gather(&self, q: &[usize], values: &[f64]) -> Vec<f64> {
        q.iter().map(|&i| values[i]).collect()
    }
}

impl Objective for LambdaObjective {
    fn tag(&self) -> ObjectiveTag {
        self.tag
    }
    fn n_instances(&self) -> usize {
        self.relevance.len()
    }
    fn base_score(&self) -> f64 {
        0.0
    }
    /// `1 - NDCG`, averaged over nondegenerate queries.
    fn loss(&self, scores: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for q in &self.queries {
            let s = self.gather(q, scores);
            let r = self.gather(q, &self.relevance);
            let w = self.query_weights(q.len());
            if let Ok(v) = ndcg(&descending_order(&s), &r, &w) {
                total += 1.0 - v;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
    fn grad_hess(&self, scores: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        grad.fill(0.0);
        hess.fill(0.0);
        for q in &self.queries {
            let s = self.gather(q, scores);
            let r = self.gather(q, &self.relevance);
            let w = self.query_weights(q.len());
            let lg = lambda_grad_hess(&s, &r, &w, &self.params).expect("query lengths agree");
            for (k, &i) in q.iter().enumerate() {
                grad[i] = lg.grad[k];
                hess[i] = lg.hess[k];
            }
        }
    }
}

/// Bind the relevance and discounts each objective kind trains against.
pub fn make_objective(
    kind: ObjectiveKind,
    targets: &TrainingTargets,
    weights: Option<&WorkerWeights>,
    params: LambdaParams,
) -> Result<Box<dyn Objective>> {
    match kind {
        ObjectiveKind::CrossEntropy => Ok(Box::new(CrossEntropy::new(targets.labels.clone()))),
        ObjectiveKind::AverageExpectedCost => {
            let costs = targets.costs.clone().ok_or(Error::MissingRewards("aec"))?;
            Ok(Box::new(AverageExpectedCost::new(
                targets.labels.clone(),
                costs,
            )?))
        }
        ObjectiveKind::LambdaAccuracy | ObjectiveKind::LambdaCost => {
            let w = weights
                .ok_or_else(|| Error::InvalidConfig(format!("{kind} needs worker weights")))?;
            let relevance = if kind == ObjectiveKind::LambdaCost {
                targets
                    .rewards()
                    .ok_or(Error::MissingRewards("lambda_cost"))?
            } else {
                targets.labels.iter().map(|&y| f64::from(y)).collect()
            };
            let n = relevance.len();
            Ok(Box::new(LambdaObjective::new(
                kind.tag(),
                relevance,
                &w.prefix(n),
                params,
            )))
        }
    }
}
