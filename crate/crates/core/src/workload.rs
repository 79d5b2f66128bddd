//! Distributed applications, workload instances and stochastic generation.
//!
//! Every application has two loops: an immediate Fog feedback
//! (IoT -> Fog -> IoT) for each workload, and a probabilistic Cloud
//! aggregation (IoT -> Fog -> Cloud, optionally -> IoT).

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, NodeId, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Light,
    Moderate,
    Heavy,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Light, Category::Moderate, Category::Heavy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Light => "light",
            Category::Moderate => "moderate",
            Category::Heavy => "heavy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppSpec {
    pub id: usize,
    pub category: Category,
    /// Instructions per workload at the Fog node.
    pub fog_instr: f64,
    /// Instructions per aggregation at the Cloud.
    pub cloud_instr: f64,
    pub req_bytes: f64,
    pub fog_resp_bytes: f64,
    pub cloud_agg_bytes: f64,
    pub cloud_resp_bytes: f64,
    /// Probability a Fog result is forwarded to the Cloud.
    pub p_cloud: f64,
    /// Probability the Cloud replies to the source, given forwarding.
    pub p_cloud_feedback: f64,
}

impl AppSpec {
    /// One application per category. Instruction counts and message sizes
    /// are placeholder magnitudes; the loop probabilities are 10% and 50%.
    pub fn defaults() -> Vec<AppSpec> {
        let app = |id, category, fog_instr, cloud_instr, req, fog_resp, agg, cloud_resp| AppSpec {
            id,
            category,
            fog_instr,
            cloud_instr,
            req_bytes: req,
            fog_resp_bytes: fog_resp,
            cloud_agg_bytes: agg,
            cloud_resp_bytes: cloud_resp,
            p_cloud: 0.10,
            p_cloud_feedback: 0.50,
        };
        vec![
            app(0, Category::Light, 1_000.0, 2_000.0, 500.0, 500.0, 1_000.0, 500.0),
            app(1, Category::Moderate, 5_000.0, 10_000.0, 2_000.0, 1_000.0, 2_000.0, 1_000.0),
            app(2, Category::Heavy, 20_000.0, 40_000.0, 5_000.0, 2_000.0, 4_000.0, 2_000.0),
        ]
    }

    /// Mean over all applications and all four message kinds.
    pub fn mean_message_bytes(apps: &[AppSpec]) -> f64 {
        if apps.is_empty() {
            return 0.0;
        }
        let total: f64 = apps
            .iter()
            .map(|a| a.req_bytes + a.fog_resp_bytes + a.cloud_agg_bytes + a.cloud_resp_bytes)
            .sum();
        total / (4 * apps.len()) as f64
    }

    /// Every invariant violation in an application set.
    pub fn violations(apps: &[AppSpec]) -> Vec<String> {
        let mut out = Vec::new();
        if apps.is_empty() {
            out.push("at least one application is required".to_string());
        }
        for (i, app) in apps.iter().enumerate() {
            if app.id != i {
                out.push(format!("application at position {i} has id {}", app.id));
            }
            for (name, p) in [("p_cloud", app.p_cloud), ("p_cloud_feedback", app.p_cloud_feedback)] {
                if !(0.0..=1.0).contains(&p) {
                    out.push(format!("app {i}: {name} must lie in [0, 1], got {p}"));
                }
            }
            if !(app.fog_instr > 0.0) || !(app.cloud_instr > 0.0) {
                out.push(format!("app {i}: instruction counts must be positive"));
            }
            let sizes = [app.req_bytes, app.fog_resp_bytes, app.cloud_agg_bytes, app.cloud_resp_bytes];
            if sizes.iter().any(|s| !(*s >= 0.0)) {
                out.push(format!("app {i}: message sizes must be >= 0"));
            }
        }
        // Strict ordering of Fog demand across categories.
        for a in apps {
            for b in apps {
                if a.category < b.category && a.fog_instr >= b.fog_instr {
                    out.push(format!(
                        "category ordering violated: {} fog_instr {} >= {} fog_instr {}",
                        a.category.name(),
                        a.fog_instr,
                        b.category.name(),
                        b.fog_instr
                    ));
                }
            }
        }
        out
    }
}

/// Generation settings shared by all clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Exponential scale of inter-arrival times (ms) per application stream.
    pub beta: f64,
    /// Probability vector over applications. Empty means uniform, which gives
    /// every cluster one generator of scale `beta` per application.
    #[serde(default)]
    pub mix: Vec<f64>,
}

impl GenConfig {
    pub fn new(beta: f64) -> Self {
        Self { beta, mix: Vec::new() }
    }

    pub fn violations(&self, n_apps: usize) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            out.push("beta must be positive".to_string());
        }
        if !self.mix.is_empty() {
            if self.mix.len() != n_apps {
                out.push(format!("mix has {} entries for {n_apps} applications", self.mix.len()));
            }
            if self.mix.iter().any(|p| !(*p >= 0.0)) {
                out.push("mix entries must be >= 0".to_string());
            }
            let sum: f64 = self.mix.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                out.push(format!("mix must sum to 1, got {sum}"));
            }
        }
        out
    }

    /// Exponential scale for one application's stream, or `None` when the
    /// mix gives it zero weight. The total rate per cluster is always
    /// `n_apps / beta`.
    pub fn app_scale(&self, app: usize, n_apps: usize) -> Option<f64> {
        if self.mix.is_empty() {
            return Some(self.beta);
        }
        let p = self.mix[app];
        (p > 0.0).then(|| self.beta / (n_apps as f64 * p))
    }
}

/// What happens after a workload's Fog service completes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FogResult {
    Done,
    ToCloud,
    ToCloudThenFeedback,
}

impl FogResult {
    pub fn reaches_cloud(self) -> bool {
        self != FogResult::Done
    }
}

/// Per-phase timestamps (ms) of one service stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timestamps {
    pub emit: Option<f64>,
    pub arrive: Option<f64>,
    pub service_start: Option<f64>,
    pub service_end: Option<f64>,
    pub feedback_arrive: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub uid: u64,
    pub app: usize,
    pub category: Category,
    pub source_cluster: NodeId,
    pub created_at: f64,
    pub assigned_node: Option<NodeId>,
    pub fate: FogResult,
    /// Fog stage; `emit` is the creation instant.
    pub fog: Timestamps,
    /// Cloud stage; `emit` is when the Fog result left for the Cloud.
    pub cloud: Timestamps,
}

impl Workload {
    pub fn new(uid: u64, app: &AppSpec, source_cluster: NodeId, now: f64, fate: FogResult) -> Self {
        Workload {
            uid,
            app: app.id,
            category: app.category,
            source_cluster,
            created_at: now,
            assigned_node: None,
            fate,
            fog: Timestamps {
                emit: Some(now),
                ..Timestamps::default()
            },
            cloud: Timestamps::default(),
        }
    }
}

/// Inverse-CDF of Exponential(scale = `beta`) at `u`.
pub fn interarrival_from_uniform(u: f64, beta: f64) -> f64 {
    -beta * u.ln()
}

/// One exponential inter-arrival sample, strictly positive.
pub fn next_interarrival(rng: &mut impl Rng, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid("beta must be positive"));
    }
    let u: f64 = rng.sample(Open01);
    Ok(interarrival_from_uniform(u, beta))
}

pub fn route_fog_result(rng: &mut impl Rng, app: &AppSpec) -> FogResult {
    if !(rng.random::<f64>() < app.p_cloud) {
        return FogResult::Done;
    }
    if rng.random::<f64>() < app.p_cloud_feedback {
        FogResult::ToCloudThenFeedback
    } else {
        FogResult::ToCloud
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverse_cdf_at_median() {
        let x = interarrival_from_uniform(0.5, 100.0);
        assert!((x - 69.314_718_055_994_53).abs() < 1e-9);
    }

    #[test]
    fn interarrival_mean_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = next_interarrival(&mut rng, 200.0).unwrap();
            assert!(x > 0.0);
            sum += x;
        }
        let mean = sum / n as f64;
        assert!((mean - 200.0).abs() < 4.0, "mean {mean}");
    }

    #[test]
    fn interarrival_rejects_bad_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(next_interarrival(&mut rng, 0.0).is_err());
        assert!(next_interarrival(&mut rng, -3.0).is_err());
        assert!(next_interarrival(&mut rng, f64::NAN).is_err());
    }

    #[test]
    fn degenerate_cloud_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut app = AppSpec::defaults()[0].clone();
        app.p_cloud = 0.0;
        assert!((0..1000).all(|_| route_fog_result(&mut rng, &app) == FogResult::Done));
        app.p_cloud = 1.0;
        app.p_cloud_feedback = 1.0;
        assert!((0..1000).all(|_| route_fog_result(&mut rng, &app) == FogResult::ToCloudThenFeedback));
    }

    #[test]
    fn default_cloud_fractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let app = &AppSpec::defaults()[1];
        let n = 100_000;
        let (mut cloud, mut feedback) = (0, 0);
        for _ in 0..n {
            match route_fog_result(&mut rng, app) {
                FogResult::Done => {}
                FogResult::ToCloud => cloud += 1,
                FogResult::ToCloudThenFeedback => {
                    cloud += 1;
                    feedback += 1
                }
            }
        }
        let cloud = cloud as f64 / n as f64;
        let feedback = feedback as f64 / n as f64;
        assert!((cloud - 0.10).abs() <= 0.01, "{cloud}");
        assert!((feedback - 0.05).abs() <= 0.01, "{feedback}");
    }

    #[test]
    fn default_apps_are_valid() {
        let apps = AppSpec::defaults();
        assert!(AppSpec::violations(&apps).is_empty());
        assert_eq!(apps[0].p_cloud, 0.10);
        assert_eq!(apps[0].p_cloud_feedback, 0.50);
    }

    #[test]
    fn category_ordering_violation_is_reported() {
        let mut apps = AppSpec::defaults();
        apps[0].fog_instr = 30_000.0;
        let problems = AppSpec::violations(&apps);
        assert!(problems.iter().any(|p| p.contains("ordering")), "{problems:?}");
    }

    #[test]
    fn mix_scales_preserve_total_rate() {
        let gen = GenConfig {
            beta: 100.0,
            mix: vec![0.5, 0.25, 0.25],
        };
        assert!(gen.violations(3).is_empty());
        let rate: f64 = (0..3).map(|a| 1.0 / gen.app_scale(a, 3).unwrap()).sum();
        assert!((rate - 3.0 / 100.0).abs() < 1e-12);
        assert_eq!(GenConfig::new(100.0).app_scale(2, 3), Some(100.0));
        let bad = GenConfig { beta: -1.0, mix: vec![0.5, 0.6, 0.0] };
        assert_eq!(bad.violations(3).len(), 2);
    }
}
