//! Stochastic worker capacity and the per-rank availability weights it induces.
//!
//! A capacity `W` is a nonnegative integer random variable. Rank `i` (1-based) is
//! processed only when at least `i` workers show up, so its weight is the survival
//! function `w_i = P(W >= i)`.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Distribution family of the capacity, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CapacityKind {
    Deterministic {
        c: u64,
    },
    /// `W = floor(X)` with `ln X ~ N(mu_log, sigma^2)`.
    Lognormal {
        mu_log: f64,
        sigma: f64,
    },
    /// Raw histogram: `counts[c]` observations of capacity `c`.
    Empirical {
        counts: Vec<u64>,
    },
}

impl CapacityKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            CapacityKind::Deterministic { .. } => Ok(()),
            CapacityKind::Lognormal { mu_log, sigma } => {
                if !mu_log.is_finite() {
                    return Err(Error::InvalidCapacity("mu_log must be finite".into()));
                }
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::InvalidCapacity(format!(
                        "sigma must be positive, got {sigma}"
                    )));
                }
                Ok(())
            }
            CapacityKind::Empirical { counts } => {
                if counts.is_empty() {
                    return Err(Error::InvalidCapacity("empirical counts are empty".into()));
                }
                if counts.iter().all(|&c| c == 0) {
                    return Err(Error::InvalidCapacity(
                        "empirical counts are all zero".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityModel {
    pub kind: CapacityKind,
    pub horizon: usize,
}

impl CapacityModel {
    pub fn new(kind: CapacityKind, horizon: usize) -> Result<Self> {
        let model = CapacityModel { kind, horizon };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidCapacity("horizon must be at least 1".into()));
        }
        self.kind.validate()
    }

    /// `P(W >= i)` for any integer `i`; `i = 0` gives 1.
    pub fn survival(&self, i: u64) -> f64 {
        if i == 0 {
            return 1.0;
        }
        match &self.kind {
            CapacityKind::Deterministic { c } => {
                if i <= *c {
                    1.0
                } else {
                    0.0
                }
            }
            CapacityKind::Lognormal { mu_log, sigma } => {
                // P(floor(X) >= i) = P(X >= i) for integer i.
                let z = ((i as f64).ln() - mu_log) / sigma;
                0.5 * erfc(z / std::f64::consts::SQRT_2)
            }
            CapacityKind::Empirical { counts } => {
                let total: u64 = counts.iter().sum();
                let start = (i as usize).min(counts.len());
                let tail: u64 = counts[start..].iter().sum();
                tail as f64 / total as f64
            }
        }
    }

    /// `P(W = c)`.
    pub fn pmf(&self, c: u64) -> f64 {
        match &self.kind {
            CapacityKind::Empirical { counts } => {
                let total: u64 = counts.iter().sum();
                counts.get(c as usize).copied().unwrap_or(0) as f64 / total as f64
            }
            _ => (self.survival(c) - self.survival(c + 1)).max(0.0),
        }
    }

    pub fn survival_weights(&self) -> Result<WorkerWeights> {
        self.validate()?;
        let mut weights: Vec<f64> = (1..=self.horizon as u64)
            .map(|i| self.survival(i))
            .collect();
        // Guard against last-ulp wiggles from the special function.
        for i in 1..weights.len() {
            if weights[i] > weights[i - 1] {
                weights[i] = weights[i - 1];
            }
        }
        Ok(WorkerWeights(weights))
    }

    /// `E[min(W, horizon)]`, i.e. the sum of the survival weights.
    pub fn expected_capacity(&self) -> Result<f64> {
        Ok(self.survival_weights()?.as_slice().iter().sum())
    }

    /// Draw one capacity realisation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.kind {
            CapacityKind::Deterministic { c } => *c,
            CapacityKind::Lognormal { mu_log, sigma } => {
                let dist = LogNormal::new(*mu_log, *sigma).expect("validated lognormal");
                let x: f64 = dist.sample(rng);
                x.floor() as u64
            }
            CapacityKind::Empirical { counts } => {
                let total: u64 = counts.iter().sum();
                let mut u = rng.gen_range(0..total);
                for (c, &n) in counts.iter().enumerate() {
                    if u < n {
                        return c as u64;
                    }
                    u -= n;
                }
                unreachable!("u < total")
            }
        }
    }
}

/// Nonincreasing per-rank availability weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerWeights(Vec<f64>);

impl WorkerWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidCapacity(format!("weight {w} outside [0, 1]")));
        }
        if weights.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::InvalidCapacity(
                "weights must be nonincreasing".into(),
            ));
        }
        Ok(WorkerWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// The first `n` weights; ranks past the stored horizon get weight 0.
    pub fn prefix(&self, n: usize) -> WorkerWeights {
        let mut w: Vec<f64> = self.0.iter().copied().take(n).collect();
        w.resize(n, 0.0);
        WorkerWeights(w)
    }

    /// Number of leading ranks whose weight is at least `eps`.
    pub fn effective_depth(&self, eps: f64) -> usize {
        self.0.iter().take_while(|&&w| w >= eps).count()
    }

    /// Hex SHA-256 over the little-endian bit patterns.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.0 {
            hasher.update(w.to_bits().to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empirical_2_4() -> CapacityModel {
        CapacityModel::new(
            CapacityKind::Empirical {
                counts: vec![0, 0, 1, 0, 1],
            },
            4,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_weights() {
        let m = CapacityModel::new(CapacityKind::Deterministic { c: 3 }, 5).unwrap();
        assert_eq!(
            m.survival_weights().unwrap().as_slice(),
            &[1.0, 1.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(m.expected_capacity().unwrap(), 3.0);
    }

    #[test]
    fn empirical_weights() {
        let m = empirical_2_4();
        assert_eq!(
            m.survival_weights().unwrap().as_slice(),
            &[1.0, 1.0, 0.5, 0.5]
        );
        assert_eq!(m.expected_capacity().unwrap(), 3.0);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(CapacityModel::new(CapacityKind::Deterministic { c: 3 }, 0).is_err());
        assert!(CapacityModel::new(CapacityKind::Empirical { counts: vec![0, 0] }, 3).is_err());
        assert!(CapacityModel::new(CapacityKind::Empirical { counts: vec![] }, 3).is_err());
        assert!(CapacityModel::new(
            CapacityKind::Lognormal {
                mu_log: 1.0,
                sigma: 0.0
            },
            3
        )
        .is_err());
        let raw = CapacityModel {
            kind: CapacityKind::Deterministic { c: 1 },
            horizon: 0,
        };
        assert!(raw.survival_weights().is_err());
    }

    #[test]
    fn lognormal_small_ranks() {
        // Frozen from a 50-digit evaluation of 0.5 * erfc((ln i - ln 100) / sqrt 2).
        let m = CapacityModel::new(
            CapacityKind::Lognormal {
                mu_log: 100f64.ln(),
                sigma: 1.0,
            },
            3,
        )
        .unwrap();
        let w = m.survival_weights().unwrap();
        let expected = [
            0.999_997_939_356_604_1,
            0.999_954_236_904_750_2,
            0.999_773_028_665_217_4,
        ];
        for (a, b) in w.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn lognormal_weights_match_monte_carlo() {
        let m = CapacityModel::new(
            CapacityKind::Lognormal {
                mu_log: 100f64.ln(),
                sigma: 1.0,
            },
            300,
        )
        .unwrap();
        let w = m.survival_weights().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 200_000;
        let mut hits = [0usize; 3];
        let ranks = [1u64, 100, 300];
        for _ in 0..draws {
            let c = m.sample(&mut rng);
            for (k, r) in ranks.iter().enumerate() {
                if c >= *r {
                    hits[k] += 1;
                }
            }
        }
        for (k, r) in ranks.iter().enumerate() {
            let mc = hits[k] as f64 / draws as f64;
            assert!((mc - w.as_slice()[*r as usize - 1]).abs() < 5e-3);
        }
    }

    #[test]
    fn pmf_sums_to_survival_difference() {
        let m = empirical_2_4();
        assert_eq!(m.pmf(2), 0.5);
        assert_eq!(m.pmf(3), 0.0);
        assert_eq!(m.pmf(4), 0.5);
        assert_eq!(m.pmf(9), 0.0);
    }

    #[test]
    fn weights_helpers() {
        let w = WorkerWeights::new(vec![1.0, 0.5, 1e-5]).unwrap();
        assert_eq!(w.effective_depth(1e-4), 2);
        assert_eq!(w.prefix(5).as_slice(), &[1.0, 0.5, 1e-5, 0.0, 0.0]);
        assert_eq!(w.checksum().len(), 64);
        assert!(WorkerWeights::new(vec![0.5, 0.6]).is_err());
        assert!(WorkerWeights::new(vec![1.5]).is_err());
    }

    fn arb_kind() -> impl Strategy<Value = CapacityKind> {
        prop_oneof![
            (0u64..50).prop_map(|c| CapacityKind::Deterministic { c }),
            (-2.0f64..8.0, 0.05f64..3.0)
                .prop_map(|(mu_log, sigma)| CapacityKind::Lognormal { mu_log, sigma }),
            proptest::collection::vec(0u64..20, 1..40)
                .prop_filter("nonzero", |c| c.iter().any(|&x| x > 0))
                .prop_map(|counts| CapacityKind::Empirical { counts }),
        ]
    }

    proptest! {
        #[test]
        fn weights_monotone_and_bounded(kind in arb_kind(), horizon in 1usize..200) {
            let m = CapacityModel::new(kind, horizon).unwrap();
            let w = m.survival_weights().unwrap();
            prop_assert_eq!(w.len(), horizon);
            prop_assert!(w.as_slice().iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!(w.as_slice().windows(2).all(|p| p[1] <= p[0]));
            let sum: f64 = w.as_slice().iter().sum();
            prop_assert!((m.expected_capacity().unwrap() - sum).abs() <= 1e-12);
        }

        #[test]
        fn empirical_matches_brute_force(counts in proptest::collection::vec(0u64..10, 1..30)
            .prop_filter("nonzero", |c| c.iter().any(|&x| x > 0)), horizon in 1usize..40) {
            let total: u64 = counts.iter().sum();
            let m = CapacityModel::new(CapacityKind::Empirical { counts: counts.clone() }, horizon).unwrap();
            let w = m.survival_weights().unwrap();
            for i in 1..=horizon {
                // Sum the pmf over values >= i.
                let mut tail = 0u64;
                for (c, n) in counts.iter().enumerate() {
                    if c >= i {
                        tail += n;
                    }
                }
                prop_assert_eq!(w.as_slice()[i - 1], tail as f64 / total as f64);
            }
        }
    }
}
