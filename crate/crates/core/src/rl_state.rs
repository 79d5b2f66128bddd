//! State and reward construction for the learning agents.
//!
//! The privacy-aware state is built only from the workload's source cluster,
//! its category and the agent's own assignment history; its reward only from
//! the system-wide waiting-job count. Nothing in the privacy-aware path can
//! see per-node compute resources or per-node load.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Normalized assignment history with dims actions x clusters x categories,
/// stored row-major (action, then cluster, then category).
#[derive(Clone, Debug, PartialEq)]
pub struct DistTensor {
    actions: usize,
    clusters: usize,
    categories: usize,
    values: Vec<f64>,
}

impl DistTensor {
    pub fn zeros(actions: usize, clusters: usize, categories: usize) -> Self {
        Self {
            actions,
            clusters,
            categories,
            values: vec![0.0; actions * clusters * categories],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.actions, self.clusters, self.categories)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index(&self, action: usize, cluster: usize, category: usize) -> Result<usize> {
        if action >= self.actions || cluster >= self.clusters || category >= self.categories {
            return Err(Error::invalid(format!(
                "cell ({action}, {cluster}, {category}) outside {:?}",
                self.dims()
            )));
        }
        Ok((action * self.clusters + cluster) * self.categories + category)
    }

    pub fn get(&self, action: usize, cluster: usize, category: usize) -> Result<f64> {
        Ok(self.values[self.index(action, cluster, category)?])
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Vanishing normalization. With no previous assignment the result is all
    /// zeros; otherwise the assigned cell gains one and the whole tensor is
    /// divided by its new sum, so an assignment made k updates ago weighs
    /// 2^-k relative to a fresh one.
    pub fn update(&self, previous: Option<(usize, usize, usize)>) -> Result<DistTensor> {
        let Some((action, cluster, category)) = previous else {
            return Ok(DistTensor::zeros(self.actions, self.clusters, self.categories));
        };
        let idx = self.index(action, cluster, category)?;
        let mut next = self.clone();
        next.values[idx] += 1.0;
        let total: f64 = next.values.iter().sum();
        next.values.iter_mut().for_each(|v| *v /= total);
        Ok(next)
    }
}

/// Free-function form of [`DistTensor::update`] with explicit indices.
pub fn dist_update(d: &DistTensor, action: usize, cluster: usize, category: usize) -> Result<DistTensor> {
    d.update(Some((action, cluster, category)))
}

/// Input vector for the privacy-aware agent: cluster one-hot, category
/// one-hot, flattened distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ParlState {
    pub cluster_onehot: Vec<f32>,
    pub category_onehot: Vec<f32>,
    pub dist_flat: Vec<f32>,
}

impl ParlState {
    pub fn new(cluster: usize, category: usize, dist: &DistTensor) -> Result<Self> {
        let (_, clusters, categories) = dist.dims();
        Ok(Self {
            cluster_onehot: onehot(cluster, clusters)?,
            category_onehot: onehot(category, categories)?,
            dist_flat: dist.values().iter().map(|&v| encode_share(v)).collect(),
        })
    }

    pub fn dim(actions: usize, clusters: usize, categories: usize) -> usize {
        clusters + categories + actions * clusters * categories
    }

    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.cluster_onehot.len() + self.category_onehot.len() + self.dist_flat.len());
        v.extend_from_slice(&self.cluster_onehot);
        v.extend_from_slice(&self.category_onehot);
        v.extend_from_slice(&self.dist_flat);
        v
    }
}

/// Input vector for the privacy-lacking agents: source cluster one-hot plus
/// the waiting count of every Fog node.
#[derive(Clone, Debug, PartialEq)]
pub struct PlrlState {
    pub cluster_onehot: Vec<f32>,
    pub queue_lengths: Vec<f32>,
}

impl PlrlState {
    pub fn new(cluster: usize, clusters: usize, queue_lengths: &[usize]) -> Result<Self> {
        Ok(Self {
            cluster_onehot: onehot(cluster, clusters)?,
            queue_lengths: queue_lengths.iter().map(|&q| q as f32).collect(),
        })
    }

    pub fn dim(actions: usize, clusters: usize) -> usize {
        clusters + actions
    }

    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = self.cluster_onehot.clone();
        v.extend_from_slice(&self.queue_lengths);
        v
    }
}

/// Entries below this are encoded as zero. The newest assignment always
/// holds at least half of the mass, so these are beyond f32 resolution of the
/// state; dropping them keeps the input sparse and off the subnormal range.
pub const DIST_FLOOR: f64 = 1.0 / (1u64 << 24) as f64;

fn encode_share(x: f64) -> f32 {
    if x < DIST_FLOOR {
        0.0
    } else {
        x as f32
    }
}

fn onehot(index: usize, len: usize) -> Result<Vec<f32>> {
    if index >= len {
        return Err(Error::invalid(format!("one-hot index {index} >= {len}")));
    }
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    Ok(v)
}

/// Change in the system-wide waiting count since the previous decision;
/// positive when the queues shrank.
pub fn parl_reward(prev_total_waiting: usize, curr_total_waiting: usize) -> f64 {
    prev_total_waiting as f64 - curr_total_waiting as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFlavor {
    /// Execution delay of the last assigned workload.
    Ed,
    /// Waiting count at the last chosen node.
    Ql,
    /// Both, min-max normalized, plus an overflow penalty.
    EdQl,
}

impl RewardFlavor {
    pub fn name(self) -> &'static str {
        match self {
            RewardFlavor::Ed => "plrl-ed",
            RewardFlavor::Ql => "plrl-ql",
            RewardFlavor::EdQl => "plrl-edql",
        }
    }
}

/// Reward from already-normalized terms. `ED` and `QL` ignore the
/// normalized inputs and the overflow flag.
pub fn plrl_reward(
    flavor: RewardFlavor,
    exec_delay_ms: f64,
    queue_len: usize,
    normalized: (f64, f64),
    overflow: bool,
    overflow_penalty: f64,
) -> f64 {
    match flavor {
        RewardFlavor::Ed => -exec_delay_ms,
        RewardFlavor::Ql => -(queue_len as f64),
        RewardFlavor::EdQl => {
            let penalty = if overflow { overflow_penalty } else { 0.0 };
            -(normalized.0 + normalized.1) - penalty
        }
    }
}

/// Running min-max scaler; a constant stream maps to zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinMax {
    min: f64,
    max: f64,
    seen: bool,
}

impl MinMax {
    pub fn observe(&mut self, x: f64) -> f64 {
        if !self.seen {
            self.min = x;
            self.max = x;
            self.seen = true;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        if self.max > self.min {
            (x - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

/// Stateful privacy-lacking reward with per-episode normalization.
#[derive(Clone, Debug)]
pub struct PlrlRewarder {
    pub flavor: RewardFlavor,
    pub overflow_penalty: f64,
    delay: MinMax,
    queue: MinMax,
}

impl PlrlRewarder {
    pub fn new(flavor: RewardFlavor, overflow_penalty: f64) -> Self {
        Self {
            flavor,
            overflow_penalty,
            delay: MinMax::default(),
            queue: MinMax::default(),
        }
    }

    pub fn reward(&mut self, exec_delay_ms: f64, queue_len: usize, overflow: bool) -> f64 {
        let normalized = (self.delay.observe(exec_delay_ms), self.queue.observe(queue_len as f64));
        plrl_reward(self.flavor, exec_delay_ms, queue_len, normalized, overflow, self.overflow_penalty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_update_fills_one_cell() {
        let d = DistTensor::zeros(3, 1, 1);
        assert_eq!(d.update(None).unwrap().sum(), 0.0);
        let d = dist_update(&d, 0, 0, 0).unwrap();
        assert_eq!(d.values(), &[1.0, 0.0, 0.0]);
        let d = dist_update(&d, 1, 0, 0).unwrap();
        assert_eq!(d.values(), &[0.5, 0.5, 0.0]);
        let d = dist_update(&d, 2, 0, 0).unwrap();
        assert_eq!(d.values(), &[0.25, 0.25, 0.5]);
    }

    #[test]
    fn out_of_range_update_errors() {
        let d = DistTensor::zeros(2, 2, 3);
        assert!(dist_update(&d, 2, 0, 0).is_err());
        assert!(dist_update(&d, 0, 0, 3).is_err());
    }

    #[test]
    fn parl_state_layout() {
        let d = dist_update(&DistTensor::zeros(2, 3, 3), 1, 2, 0).unwrap();
        let s = ParlState::new(1, 2, &d).unwrap();
        let v = s.to_vec();
        assert_eq!(v.len(), ParlState::dim(2, 3, 3));
        assert_eq!(&v[..3], &[0.0, 1.0, 0.0]);
        assert_eq!(&v[3..6], &[0.0, 0.0, 1.0]);
        // action 1, cluster 2, category 0
        assert_eq!(v[6 + (3 + 2) * 3], 1.0);
        assert!(ParlState::new(3, 0, &d).is_err());
    }

    #[test]
    fn parl_reward_examples() {
        assert_eq!(parl_reward(5, 3), 2.0);
        assert_eq!(parl_reward(4, 4), 0.0);
        assert_eq!(parl_reward(0, 2), -2.0);
    }

    #[test]
    fn plrl_reward_examples() {
        assert_eq!(plrl_reward(RewardFlavor::Ed, 12.5, 4, (0.0, 0.0), true, 1.0), -12.5);
        assert_eq!(plrl_reward(RewardFlavor::Ql, 12.5, 7, (0.0, 0.0), true, 1.0), -7.0);
        let r = plrl_reward(RewardFlavor::EdQl, 12.5, 7, (0.2, 0.3), true, 1.0);
        assert!((r + 1.5).abs() < 1e-12);
    }

    #[test]
    fn minmax_normalization() {
        let mut m = MinMax::default();
        assert_eq!(m.observe(5.0), 0.0);
        assert_eq!(m.observe(15.0), 1.0);
        assert_eq!(m.observe(10.0), 0.5);
        let mut r = PlrlRewarder::new(RewardFlavor::EdQl, 1.0);
        assert_eq!(r.reward(10.0, 2, false), 0.0);
        assert_eq!(r.reward(20.0, 4, true), -3.0);
    }

    proptest! {
        #[test]
        fn update_stays_normalized(seq in proptest::collection::vec((0usize..4, 0usize..2, 0usize..3), 1..60)) {
            let mut d = DistTensor::zeros(4, 2, 3);
            for &(a, c, w) in &seq {
                d = dist_update(&d, a, c, w).unwrap();
                prop_assert!(d.values().iter().all(|&v| v >= 0.0));
                prop_assert!((d.sum() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn repeated_cell_stays_at_one(n in 1usize..50, a in 0usize..4) {
            let mut d = DistTensor::zeros(4, 1, 1);
            for _ in 0..n {
                d = dist_update(&d, a, 0, 0).unwrap();
            }
            for (i, &v) in d.values().iter().enumerate() {
                prop_assert_eq!(v, if i == a { 1.0 } else { 0.0 });
            }
        }
    }
}
