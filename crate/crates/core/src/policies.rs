//! The placement interface and the classical baselines.
//!
//! A policy is asked for a Fog node once per generated workload. Only
//! policies that declare [`Access::Privileged`] receive the per-node load and
//! resource view; every other policy gets `privileged: None`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::rl_state::RewardFlavor;
use crate::topology::Topology;
use crate::workload::{AppSpec, Category};
use crate::{Error, NodeId, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkloadInfo {
    pub uid: u64,
    pub app: usize,
    pub category: Category,
    pub source_cluster: NodeId,
}

/// Per-node load and resource information, indexed by node id. Entries for
/// IoT clusters are zero.
#[derive(Clone, Copy, Debug)]
pub struct PrivilegedView<'a> {
    /// Jobs waiting (not in service).
    pub waiting: &'a [usize],
    /// Instructions still to run: queued demand plus the remainder of the job
    /// in service.
    pub backlog_instr: &'a [f64],
    pub ipt: &'a [f64],
}

#[derive(Clone, Copy, Debug)]
pub struct DecisionContext<'a> {
    pub workload: WorkloadInfo,
    /// Fog node ids in ascending order, stable for the episode.
    pub fog_nodes: &'a [NodeId],
    /// IoT cluster ids in ascending order.
    pub clusters: &'a [NodeId],
    pub now: f64,
    pub privileged: Option<PrivilegedView<'a>>,
}

impl DecisionContext<'_> {
    pub fn cluster_index(&self) -> Result<usize> {
        self.clusters
            .binary_search(&self.workload.source_cluster)
            .map_err(|_| Error::invalid(format!("{} is not a cluster", self.workload.source_cluster)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    Private,
    Privileged,
}

/// Which delayed reward the engine computes for a policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardSpec {
    None,
    /// Decrease of the system-wide waiting count since the previous decision.
    QueueDelta,
    Plrl {
        flavor: RewardFlavor,
        overflow_penalty: f64,
        /// Waiting count above which the chosen node counts as overflowing.
        capacity: usize,
    },
}

pub trait PlacementPolicy {
    fn name(&self) -> String;

    fn access(&self) -> Access {
        Access::Private
    }

    fn reward_spec(&self) -> RewardSpec {
        RewardSpec::None
    }

    /// Picks a Fog node for `ctx.workload`. `reward` is the delayed reward of
    /// this policy's previous decision in the episode (zero on the first).
    fn decide(&mut self, ctx: &DecisionContext<'_>, reward: f64) -> Result<NodeId>;

    fn end_episode(&mut self) {}
}

impl<P: PlacementPolicy + ?Sized> PlacementPolicy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn access(&self) -> Access {
        (**self).access()
    }
    fn reward_spec(&self) -> RewardSpec {
        (**self).reward_spec()
    }
    fn decide(&mut self, ctx: &DecisionContext<'_>, reward: f64) -> Result<NodeId> {
        (**self).decide(ctx, reward)
    }
    fn end_episode(&mut self) {
        (**self).end_episode()
    }
}

/// Policy names accepted on the command line and in configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    Random,
    RoundRobin,
    Nearest,
    /// Static estimate: latency plus own service time.
    Fastest,
    /// Static estimate plus the queued backlog at each node.
    FastestBacklog,
    Electre,
    Ddql,
    Plrl(RewardFlavor),
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 10] = [
        PolicyKind::Random,
        PolicyKind::RoundRobin,
        PolicyKind::Nearest,
        PolicyKind::Fastest,
        PolicyKind::FastestBacklog,
        PolicyKind::Electre,
        PolicyKind::Ddql,
        PolicyKind::Plrl(RewardFlavor::Ed),
        PolicyKind::Plrl(RewardFlavor::Ql),
        PolicyKind::Plrl(RewardFlavor::EdQl),
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::RoundRobin => "rr",
            PolicyKind::Nearest => "nearest",
            PolicyKind::Fastest => "fastest",
            PolicyKind::FastestBacklog => "fastest-backlog",
            PolicyKind::Electre => "electre",
            PolicyKind::Ddql => "ddql",
            PolicyKind::Plrl(f) => f.name(),
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, PolicyKind::Ddql | PolicyKind::Plrl(_))
    }

    /// Builds a non-learning policy.
    pub fn baseline(self, topology: &Topology, apps: &[AppSpec], seed: u64) -> Result<Box<dyn PlacementPolicy + Send>> {
        Ok(match self {
            PolicyKind::Random => Box::new(RandomPolicy::new(seed)),
            PolicyKind::RoundRobin => Box::new(RoundRobinPolicy::default()),
            PolicyKind::Nearest => Box::new(NearestPolicy::new(topology, apps)?),
            PolicyKind::Fastest => Box::new(FastestPolicy::new(topology, apps, false)),
            PolicyKind::FastestBacklog => Box::new(FastestPolicy::new(topology, apps, true)),
            PolicyKind::Electre => Box::new(ElectrePolicy),
            PolicyKind::Ddql | PolicyKind::Plrl(_) => {
                return Err(Error::invalid(format!("{} needs a trained agent", self.name())))
            }
        })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown policy {s:?}")))
    }
}

pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl PlacementPolicy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _reward: f64) -> Result<NodeId> {
        Ok(ctx.fog_nodes[self.rng.random_range(0..ctx.fog_nodes.len())])
    }
}

/// Cycles through the Fog nodes with one counter shared by all clusters.
#[derive(Default)]
pub struct RoundRobinPolicy {
    next: usize,
}

impl PlacementPolicy for RoundRobinPolicy {
    fn name(&self) -> String {
        "rr".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _reward: f64) -> Result<NodeId> {
        let node = ctx.fog_nodes[self.next % ctx.fog_nodes.len()];
        self.next = (self.next + 1) % ctx.fog_nodes.len();
        Ok(node)
    }
}

/// Sends each (cluster, application) pair to the Fog node with the lowest
/// network latency for its request size; ties go to the lowest id.
pub struct NearestPolicy {
    choice: BTreeMap<(NodeId, usize), NodeId>,
}

impl NearestPolicy {
    pub fn new(topology: &Topology, apps: &[AppSpec]) -> Result<Self> {
        let mut choice = BTreeMap::new();
        for &cluster in topology.clusters() {
            for app in apps {
                let mut best: Option<(f64, NodeId)> = None;
                for &fog in topology.fog_nodes() {
                    let (_, latency) = topology.fastest_path(cluster, fog, app.req_bytes)?;
                    if best.is_none_or(|(l, _)| latency < l) {
                        best = Some((latency, fog));
                    }
                }
                choice.insert((cluster, app.id), best.expect("topology has Fog nodes").1);
            }
        }
        Ok(Self { choice })
    }

    pub fn choice(&self, cluster: NodeId, app: usize) -> Option<NodeId> {
        self.choice.get(&(cluster, app)).copied()
    }
}

impl PlacementPolicy for NearestPolicy {
    fn name(&self) -> String {
        "nearest".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _reward: f64) -> Result<NodeId> {
        let w = &ctx.workload;
        self.choice(w.source_cluster, w.app)
            .ok_or_else(|| Error::invalid(format!("no route entry for cluster {} app {}", w.source_cluster, w.app)))
    }
}

/// Minimises the estimated total execution delay: request latency plus own
/// service time, plus the node's backlog when `with_backlog` is set. Reads
/// compute speed and load from the privileged view.
pub struct FastestPolicy {
    /// Request latency per (cluster, app, fog node).
    latency: BTreeMap<(NodeId, usize, NodeId), f64>,
    fog_instr: Vec<f64>,
    with_backlog: bool,
}

impl FastestPolicy {
    pub fn new(topology: &Topology, apps: &[AppSpec], with_backlog: bool) -> Self {
        let mut latency = BTreeMap::new();
        for &cluster in topology.clusters() {
            for app in apps {
                for &fog in topology.fog_nodes() {
                    latency.insert((cluster, app.id, fog), topology.route_latency(cluster, fog, app.req_bytes));
                }
            }
        }
        Self::from_latencies(latency, apps, with_backlog)
    }

    pub fn from_latencies(latency: BTreeMap<(NodeId, usize, NodeId), f64>, apps: &[AppSpec], with_backlog: bool) -> Self {
        Self {
            latency,
            fog_instr: apps.iter().map(|a| a.fog_instr).collect(),
            with_backlog,
        }
    }

    pub fn estimate(&self, ctx: &DecisionContext<'_>, node: NodeId) -> Result<f64> {
        let view = ctx
            .privileged
            .ok_or_else(|| Error::invalid("fastest policy needs the privileged view"))?;
        let w = &ctx.workload;
        let latency = self
            .latency
            .get(&(w.source_cluster, w.app, node))
            .ok_or_else(|| Error::invalid(format!("no latency for cluster {} -> node {node}", w.source_cluster)))?;
        let ipt = view.ipt[node];
        let backlog = if self.with_backlog { view.backlog_instr[node] / ipt } else { 0.0 };
        Ok(latency + backlog + self.fog_instr[w.app] / ipt)
    }
}

impl PlacementPolicy for FastestPolicy {
    fn name(&self) -> String {
        if self.with_backlog { "fastest-backlog" } else { "fastest" }.into()
    }

    fn access(&self) -> Access {
        Access::Privileged
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _reward: f64) -> Result<NodeId> {
        let mut best: Option<(f64, NodeId)> = None;
        for &node in ctx.fog_nodes {
            let est = self.estimate(ctx, node)?;
            if best.is_none_or(|(b, _)| est < b) {
                best = Some((est, node));
            }
        }
        Ok(best.expect("at least one Fog node").1)
    }
}

/// Placeholder for the multi-criteria baseline; always errors.
pub struct ElectrePolicy;

impl PlacementPolicy for ElectrePolicy {
    fn name(&self) -> String {
        "electre".into()
    }

    fn decide(&mut self, _ctx: &DecisionContext<'_>, _reward: f64) -> Result<NodeId> {
        Err(Error::NotImplemented("ELECTRE placement"))
    }
}
