//! Deterministic discrete-event engine.
//!
//! One simulated millisecond is one simulation step. Every Generate event is
//! a decision step: the engine computes the policy's delayed reward, asks it
//! for a Fog node and ships the workload there. Each Cloud and Fog node is a
//! single FIFO server. Events run in `(time, seq)` order, with `seq`
//! assigned at insertion.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::{DelayRecord, LoopKind};
use crate::policies::{Access, DecisionContext, PlacementPolicy, PrivilegedView, RewardSpec, WorkloadInfo};
use crate::rl_state::{parl_reward, PlrlRewarder};
use crate::topology::{Role, Topology};
use crate::workload::{next_interarrival, route_fog_result, AppSpec, FogResult, GenConfig, Workload};
use crate::{Error, NodeId, Result};

const ARRIVAL_STREAM: u64 = 0;
const ROUTING_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Fog,
    Cloud,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    Generate { cluster: NodeId, app: usize },
    Arrive { uid: u64, node: NodeId, stage: Stage },
    ServiceEnd { node: NodeId },
    FeedbackArrive { uid: u64, stage: Stage },
    EpisodeEnd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the std max-heap pops the earliest (time, seq) first.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Job {
    uid: u64,
    stage: Stage,
    instr: f64,
}

/// Single-server FIFO queue of one compute node.
#[derive(Clone, Debug)]
pub struct NodeQueue {
    pub node: NodeId,
    pub ipt: f64,
    waiting: VecDeque<Job>,
    in_service: Option<(Job, f64)>,
    waiting_instr: f64,
}

impl NodeQueue {
    fn new(node: NodeId, ipt: f64) -> Self {
        Self {
            node,
            ipt,
            waiting: VecDeque::new(),
            in_service: None,
            waiting_instr: 0.0,
        }
    }

    pub fn waiting_len(&self) -> usize {
        self.waiting.len()
    }

    pub fn busy(&self) -> bool {
        self.in_service.is_some()
    }

    /// Uid of the job in service and its scheduled end.
    pub fn in_service(&self) -> Option<(u64, f64)> {
        self.in_service.map(|(job, end)| (job.uid, end))
    }

    /// Instructions left: queued demand plus the unfinished part of the job
    /// in service at `now`.
    pub fn backlog_instr(&self, now: f64) -> f64 {
        let current = self.in_service.map_or(0.0, |(_, end)| ((end - now) * self.ipt).max(0.0));
        self.waiting_instr + current
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimClock {
    pub now: f64,
    pub horizon: f64,
}

/// Counts of workloads by lifecycle stage at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageCensus {
    /// Entered the stage (generated, or forwarded to the Cloud).
    pub entered: u64,
    pub in_transit: u64,
    pub waiting: u64,
    pub in_service: u64,
    /// Served, feedback still on its way back.
    pub returning: u64,
    pub completed: u64,
}

impl StageCensus {
    pub fn residual(&self) -> u64 {
        self.in_transit + self.waiting + self.in_service + self.returning
    }

    pub fn balanced(&self) -> bool {
        self.entered == self.completed + self.residual()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Census {
    pub fog: StageCensus,
    pub cloud: StageCensus,
}

/// One decision step as seen by the engine.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionLog {
    pub time: f64,
    pub uid: u64,
    pub cluster: NodeId,
    pub app: usize,
    pub node: NodeId,
    /// System-wide waiting count at the decision instant, before placement.
    pub total_waiting: usize,
    /// Delayed reward delivered with this decision.
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub records: Vec<DelayRecord>,
    pub census: Census,
    /// Final waiting count per node id (zero for clusters).
    pub final_waiting: Vec<usize>,
    pub trajectory: Vec<DecisionLog>,
    pub generated: u64,
}

impl EpisodeResult {
    /// Sum of all delayed rewards the policy received.
    pub fn total_reward(&self) -> f64 {
        self.trajectory.iter().map(|d| d.reward).sum()
    }
}

/// Everything an episode needs besides the policy.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeSpec<'a> {
    pub topology: &'a Topology,
    pub apps: &'a [AppSpec],
    pub gen: &'a GenConfig,
    pub horizon: f64,
    pub seed: u64,
}

/// Reward bookkeeping for the previous decision of the episode.
#[derive(Clone, Copy, Debug)]
struct PendingReward {
    total_waiting: usize,
    node: NodeId,
    exec_delay: f64,
}

pub struct Engine<'a> {
    topology: &'a Topology,
    apps: &'a [AppSpec],
    gen: GenConfig,
    clock: SimClock,
    events: BinaryHeap<Event>,
    seq: u64,
    /// Indexed by node id; `None` for IoT clusters.
    queues: Vec<Option<NodeQueue>>,
    workloads: Vec<Workload>,
    arrival_rng: ChaCha8Rng,
    routing_rng: ChaCha8Rng,
    census: Census,
    total_waiting: usize,
    records: Vec<DelayRecord>,
    trajectory: Vec<DecisionLog>,
    pending: Option<PendingReward>,
    plrl: Option<PlrlRewarder>,
    ipt: Vec<f64>,
    finished: bool,
}

impl<'a> Engine<'a> {
    pub fn new(spec: EpisodeSpec<'a>) -> Result<Self> {
        if spec.horizon.is_nan() || spec.horizon < 0.0 {
            return Err(Error::invalid("horizon must be >= 0"));
        }
        let mut problems = spec.gen.violations(spec.apps.len());
        problems.extend(AppSpec::violations(spec.apps));
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let topology = spec.topology;
        let queues = topology
            .nodes()
            .iter()
            .map(|n| (n.role != Role::IotCluster).then(|| NodeQueue::new(n.id, n.ipt)))
            .collect();
        let mut arrival_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        arrival_rng.set_stream(ARRIVAL_STREAM);
        let mut routing_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        routing_rng.set_stream(ROUTING_STREAM);
        let mut engine = Engine {
            topology,
            apps: spec.apps,
            gen: spec.gen.clone(),
            clock: SimClock {
                now: 0.0,
                horizon: spec.horizon,
            },
            events: BinaryHeap::new(),
            seq: 0,
            queues,
            workloads: Vec::new(),
            arrival_rng,
            routing_rng,
            census: Census::default(),
            total_waiting: 0,
            records: Vec::new(),
            trajectory: Vec::new(),
            pending: None,
            plrl: None,
            ipt: topology.nodes().iter().map(|n| n.ipt).collect(),
            finished: false,
        };
        engine.schedule(spec.horizon, EventKind::EpisodeEnd);
        for &cluster in topology.clusters() {
            for app in 0..spec.apps.len() {
                engine.schedule_generation(cluster, app)?;
            }
        }
        Ok(engine)
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn census(&self) -> Census {
        self.census
    }

    pub fn workloads(&self) -> &[Workload] {
        &self.workloads
    }

    pub fn records(&self) -> &[DelayRecord] {
        &self.records
    }

    pub fn trajectory(&self) -> &[DecisionLog] {
        &self.trajectory
    }

    pub fn queue(&self, node: NodeId) -> Option<&NodeQueue> {
        self.queues.get(node).and_then(Option::as_ref)
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Jobs waiting in every Cloud and Fog queue; jobs in service excluded.
    pub fn total_waiting(&self) -> usize {
        self.total_waiting
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.events.push(Event { time, seq: self.seq, kind });
        self.seq += 1;
    }

    fn schedule_generation(&mut self, cluster: NodeId, app: usize) -> Result<()> {
        let Some(scale) = self.gen.app_scale(app, self.apps.len()) else {
            return Ok(());
        };
        let at = self.clock.now + next_interarrival(&mut self.arrival_rng, scale)?;
        if at < self.clock.horizon {
            self.schedule(at, EventKind::Generate { cluster, app });
        }
        Ok(())
    }

    /// Processes the next event. Returns `false` once the episode is over.
    pub fn step(&mut self, policy: &mut dyn PlacementPolicy) -> Result<bool> {
        if self.finished {
            return Ok(false);
        }
        let Some(event) = self.events.pop() else {
            self.finished = true;
            return Ok(false);
        };
        debug_assert!(event.time >= self.clock.now);
        self.clock.now = event.time;
        match event.kind {
            EventKind::EpisodeEnd => {
                self.finished = true;
                return Ok(false);
            }
            EventKind::Generate { cluster, app } => self.on_generate(cluster, app, policy)?,
            EventKind::Arrive { uid, node, stage } => self.on_arrive(uid, node, stage),
            EventKind::ServiceEnd { node } => self.on_service_end(node)?,
            EventKind::FeedbackArrive { uid, stage } => self.on_feedback(uid, stage)?,
        }
        Ok(true)
    }

    /// Runs to the horizon and hands back the episode's results.
    pub fn run(mut self, policy: &mut dyn PlacementPolicy) -> Result<EpisodeResult> {
        while self.step(policy)? {}
        policy.end_episode();
        Ok(self.into_result())
    }

    pub fn into_result(self) -> EpisodeResult {
        let final_waiting = self
            .queues
            .iter()
            .map(|q| q.as_ref().map_or(0, NodeQueue::waiting_len))
            .collect();
        EpisodeResult {
            generated: self.census.fog.entered,
            records: self.records,
            census: self.census,
            final_waiting,
            trajectory: self.trajectory,
        }
    }

    fn delayed_reward(&mut self, spec: RewardSpec, total_waiting: usize) -> f64 {
        let Some(prev) = self.pending else {
            return 0.0;
        };
        match spec {
            RewardSpec::None => 0.0,
            RewardSpec::QueueDelta => parl_reward(prev.total_waiting, total_waiting),
            RewardSpec::Plrl {
                flavor,
                overflow_penalty,
                capacity,
            } => {
                let queue_len = self.queues[prev.node].as_ref().map_or(0, NodeQueue::waiting_len);
                let rewarder = self
                    .plrl
                    .get_or_insert_with(|| PlrlRewarder::new(flavor, overflow_penalty));
                rewarder.reward(prev.exec_delay, queue_len, queue_len > capacity)
            }
        }
    }

    fn on_generate(&mut self, cluster: NodeId, app_id: usize, policy: &mut dyn PlacementPolicy) -> Result<()> {
        let now = self.clock.now;
        let uid = self.workloads.len() as u64;
        let app = &self.apps[app_id];
        let fate = route_fog_result(&mut self.routing_rng, app);
        let mut workload = Workload::new(uid, app, cluster, now, fate);

        let total_waiting = self.total_waiting;
        let reward = self.delayed_reward(policy.reward_spec(), total_waiting);

        let topology = self.topology;
        let node = {
            let (waiting, backlog);
            let privileged = if policy.access() == Access::Privileged {
                waiting = self.waiting_by_node();
                backlog = self.backlog_by_node();
                Some(PrivilegedView {
                    waiting: &waiting,
                    backlog_instr: &backlog,
                    ipt: &self.ipt,
                })
            } else {
                None
            };
            let ctx = DecisionContext {
                workload: WorkloadInfo {
                    uid,
                    app: app_id,
                    category: app.category,
                    source_cluster: cluster,
                },
                fog_nodes: topology.fog_nodes(),
                clusters: topology.clusters(),
                now,
                privileged,
            };
            policy.decide(&ctx, reward)?
        };
        if node >= topology.len() || topology.node(node).role != Role::Fog {
            return Err(Error::InvalidPlacement { node });
        }

        // Execution delay from resources only: transfer plus own service
        // time, no queueing.
        let latency = topology.route_latency(cluster, node, app.req_bytes);
        let exec_delay = latency + app.fog_instr / self.ipt[node];
        self.pending = Some(PendingReward {
            total_waiting,
            node,
            exec_delay,
        });
        self.trajectory.push(DecisionLog {
            time: now,
            uid,
            cluster,
            app: app_id,
            node,
            total_waiting,
            reward,
        });

        workload.assigned_node = Some(node);
        self.workloads.push(workload);
        self.census.fog.entered += 1;
        self.census.fog.in_transit += 1;
        self.schedule(now + latency, EventKind::Arrive { uid, node, stage: Stage::Fog });
        self.schedule_generation(cluster, app_id)
    }

    fn waiting_by_node(&self) -> Vec<usize> {
        self.queues
            .iter()
            .map(|q| q.as_ref().map_or(0, NodeQueue::waiting_len))
            .collect()
    }

    fn backlog_by_node(&self) -> Vec<f64> {
        let now = self.clock.now;
        self.queues
            .iter()
            .map(|q| q.as_ref().map_or(0.0, |q| q.backlog_instr(now)))
            .collect()
    }

    fn stage_census(&mut self, stage: Stage) -> &mut StageCensus {
        match stage {
            Stage::Fog => &mut self.census.fog,
            Stage::Cloud => &mut self.census.cloud,
        }
    }

    fn on_arrive(&mut self, uid: u64, node: NodeId, stage: Stage) {
        let now = self.clock.now;
        let w = &mut self.workloads[uid as usize];
        let app = &self.apps[w.app];
        let (ts, instr) = match stage {
            Stage::Fog => (&mut w.fog, app.fog_instr),
            Stage::Cloud => (&mut w.cloud, app.cloud_instr),
        };
        ts.arrive = Some(now);
        let census = self.stage_census(stage);
        census.in_transit -= 1;
        census.waiting += 1;
        let queue = self.queues[node].as_mut().expect("compute node");
        queue.waiting.push_back(Job { uid, stage, instr });
        queue.waiting_instr += instr;
        self.total_waiting += 1;
        if !queue.busy() {
            self.start_next(node);
        }
    }

    /// Moves the head of `node`'s queue into service, if any.
    fn start_next(&mut self, node: NodeId) {
        let now = self.clock.now;
        let queue = self.queues[node].as_mut().expect("compute node");
        debug_assert!(queue.in_service.is_none());
        let Some(job) = queue.waiting.pop_front() else {
            return;
        };
        queue.waiting_instr -= job.instr;
        if queue.waiting.is_empty() {
            queue.waiting_instr = 0.0;
        }
        let end = now + job.instr / queue.ipt;
        queue.in_service = Some((job, end));
        self.total_waiting -= 1;
        let w = &mut self.workloads[job.uid as usize];
        match job.stage {
            Stage::Fog => w.fog.service_start = Some(now),
            Stage::Cloud => w.cloud.service_start = Some(now),
        }
        let census = self.stage_census(job.stage);
        census.waiting -= 1;
        census.in_service += 1;
        self.schedule(end, EventKind::ServiceEnd { node });
    }

    fn on_service_end(&mut self, node: NodeId) -> Result<()> {
        let now = self.clock.now;
        let (job, _) = self.queues[node]
            .as_mut()
            .and_then(|q| q.in_service.take())
            .expect("ServiceEnd scheduled only for a busy node");
        self.start_next(node);

        let topology = self.topology;
        let w = &mut self.workloads[job.uid as usize];
        let app = &self.apps[w.app];
        let cluster = w.source_cluster;
        match job.stage {
            Stage::Fog => {
                w.fog.service_end = Some(now);
                let back = topology.route_latency(node, cluster, app.fog_resp_bytes);
                let to_cloud = w.fate.reaches_cloud().then(|| {
                    w.cloud.emit = Some(now);
                    topology.route_latency(node, topology.cloud(), app.cloud_agg_bytes)
                });
                self.census.fog.in_service -= 1;
                self.census.fog.returning += 1;
                self.schedule(now + back, EventKind::FeedbackArrive { uid: job.uid, stage: Stage::Fog });
                if let Some(latency) = to_cloud {
                    self.census.cloud.entered += 1;
                    self.census.cloud.in_transit += 1;
                    self.schedule(
                        now + latency,
                        EventKind::Arrive {
                            uid: job.uid,
                            node: topology.cloud(),
                            stage: Stage::Cloud,
                        },
                    );
                }
            }
            Stage::Cloud => {
                w.cloud.service_end = Some(now);
                self.census.cloud.in_service -= 1;
                if w.fate == FogResult::ToCloudThenFeedback {
                    let back = topology.route_latency(node, cluster, app.cloud_resp_bytes);
                    self.census.cloud.returning += 1;
                    self.schedule(now + back, EventKind::FeedbackArrive { uid: job.uid, stage: Stage::Cloud });
                } else {
                    self.census.cloud.completed += 1;
                    let record = record_cloud_delays(&self.workloads[job.uid as usize])?;
                    self.records.push(record);
                }
            }
        }
        Ok(())
    }

    fn on_feedback(&mut self, uid: u64, stage: Stage) -> Result<()> {
        let now = self.clock.now;
        let w = &mut self.workloads[uid as usize];
        let record = match stage {
            Stage::Fog => {
                w.fog.feedback_arrive = Some(now);
                record_delays(w)?
            }
            Stage::Cloud => {
                w.cloud.feedback_arrive = Some(now);
                record_cloud_delays(w)?
            }
        };
        let census = self.stage_census(stage);
        census.returning -= 1;
        census.completed += 1;
        self.records.push(record);
        Ok(())
    }
}

/// Runs one episode from scratch.
pub fn run_episode(spec: EpisodeSpec<'_>, policy: &mut dyn PlacementPolicy) -> Result<EpisodeResult> {
    Engine::new(spec)?.run(policy)
}

fn need(value: Option<f64>, uid: u64, phase: &'static str) -> Result<f64> {
    value.ok_or(Error::MissingTimestamp { uid, phase })
}

/// Fog-loop delays of a workload. The total response includes the return
/// leg when the feedback has arrived.
pub fn record_delays(w: &Workload) -> Result<DelayRecord> {
    let ts = &w.fog;
    let emit = need(ts.emit, w.uid, "emit")?;
    let arrive = need(ts.arrive, w.uid, "arrive")?;
    let start = need(ts.service_start, w.uid, "service_start")?;
    let end = need(ts.service_end, w.uid, "service_end")?;
    let done = ts.feedback_arrive.unwrap_or(end);
    let node = w.assigned_node.ok_or(Error::MissingTimestamp { uid: w.uid, phase: "assignment" })?;
    let waiting = start - arrive;
    let service = end - start;
    Ok(DelayRecord {
        uid: w.uid,
        app: w.app,
        category: w.category,
        cluster: w.source_cluster,
        node,
        loop_kind: LoopKind::FogLoop,
        latency_ms: arrive - emit,
        waiting_ms: waiting,
        service_ms: service,
        response_ms: waiting + service,
        total_response_ms: done - emit,
    })
}

/// Cloud-loop delays: both stages' waiting and service summed, network legs
/// summed into latency, total from creation to the last event of the loop.
pub fn record_cloud_delays(w: &Workload) -> Result<DelayRecord> {
    let fog = record_delays(&Workload {
        fog: crate::workload::Timestamps {
            feedback_arrive: None,
            ..w.fog
        },
        ..w.clone()
    })?;
    let ts = &w.cloud;
    let emit = need(ts.emit, w.uid, "cloud emit")?;
    let arrive = need(ts.arrive, w.uid, "cloud arrive")?;
    let start = need(ts.service_start, w.uid, "cloud service_start")?;
    let end = need(ts.service_end, w.uid, "cloud service_end")?;
    let done = match w.fate {
        FogResult::ToCloudThenFeedback => need(ts.feedback_arrive, w.uid, "cloud feedback")?,
        _ => end,
    };
    let waiting = fog.waiting_ms + (start - arrive);
    let service = fog.service_ms + (end - start);
    Ok(DelayRecord {
        loop_kind: LoopKind::CloudLoop,
        latency_ms: fog.latency_ms + (arrive - emit) + (done - end),
        waiting_ms: waiting,
        service_ms: service,
        response_ms: waiting + service,
        total_response_ms: done - w.created_at,
        ..fog
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{RandomPolicy, RoundRobinPolicy};
    use crate::topology::{generate_topology, Link, Node};
    use crate::workload::Timestamps;

    /// cluster 0 -- fog 1 -- cloud 2, given Fog speed and link delay.
    fn chain(fog_ipt: f64, pr: f64) -> Topology {
        let nodes = vec![
            Node { id: 0, role: Role::IotCluster, ipt: 0.0, ram: 0.0 },
            Node { id: 1, role: Role::Fog, ipt: fog_ipt, ram: 0.0 },
            Node { id: 2, role: Role::Cloud, ipt: 1000.0, ram: 0.0 },
        ];
        let links = vec![
            Link { u: 0, v: 1, bw: f64::INFINITY, pr },
            Link { u: 1, v: 2, bw: f64::INFINITY, pr },
        ];
        Topology::new(nodes, links, 0.0).unwrap()
    }

    fn light_only() -> Vec<AppSpec> {
        let mut app = AppSpec::defaults()[0].clone();
        app.p_cloud = 0.0;
        vec![app]
    }

    /// Pushes a Generate event by hand, bypassing the arrival process.
    fn engine_with_arrivals<'a>(topo: &'a Topology, apps: &'a [AppSpec], gen: &'a GenConfig, times: &[f64]) -> Engine<'a> {
        let mut engine = Engine::new(EpisodeSpec { topology: topo, apps, gen, horizon: 1000.0, seed: 0 }).unwrap();
        engine.events.retain(|e| !matches!(e.kind, EventKind::Generate { .. }));
        for &t in times {
            engine.schedule(t, EventKind::Generate { cluster: 0, app: 0 });
        }
        engine
    }

    /// Generation disabled after the hand-made arrivals.
    fn no_regen() -> GenConfig {
        GenConfig { beta: 1e12, mix: Vec::new() }
    }

    #[test]
    fn zero_horizon_is_empty() {
        let topo = generate_topology(10, 3, 1).unwrap();
        let apps = AppSpec::defaults();
        let gen = GenConfig::new(100.0);
        let spec = EpisodeSpec { topology: &topo, apps: &apps, gen: &gen, horizon: 0.0, seed: 1 };
        let result = run_episode(spec, &mut RoundRobinPolicy::default()).unwrap();
        assert_eq!(result.generated, 0);
        assert!(result.records.is_empty());
        let spec = EpisodeSpec { horizon: -1.0, ..spec };
        assert!(matches!(run_episode(spec, &mut RoundRobinPolicy::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn single_job_on_idle_node() {
        let topo = chain(100.0, 0.0);
        let apps = light_only();
        let gen = no_regen();
        let engine = engine_with_arrivals(&topo, &apps, &gen, &[5.0]);
        let result = engine.run(&mut RoundRobinPolicy::default()).unwrap();
        assert_eq!(result.records.len(), 1);
        let r = &result.records[0];
        assert_eq!(r.service_ms, 10.0);
        assert_eq!(r.waiting_ms, 0.0);
        assert_eq!(r.latency_ms, 0.0);
    }

    #[test]
    fn second_job_waits_nine_ms() {
        let topo = chain(100.0, 0.0);
        let apps = light_only();
        let gen = no_regen();
        let engine = engine_with_arrivals(&topo, &apps, &gen, &[5.0, 6.0]);
        let result = engine.run(&mut RoundRobinPolicy::default()).unwrap();
        let waits: Vec<f64> = result.records.iter().map(|r| r.waiting_ms).collect();
        assert_eq!(waits, vec![0.0, 9.0]);
        let totals: Vec<f64> = result.records.iter().map(|r| r.total_response_ms).collect();
        assert_eq!(totals, vec![10.0, 19.0]);
        assert_eq!(crate::metrics::mean_loop_delay(&result.records, LoopKind::FogLoop), Some(14.5));
    }

    #[test]
    fn waiting_census_excludes_job_in_service() {
        let topo = chain(100.0, 0.0);
        let apps = light_only();
        let gen = no_regen();
        let mut engine = engine_with_arrivals(&topo, &apps, &gen, &[]);
        assert_eq!(engine.total_waiting(), 0);
        let mut uid = 0;
        let mut push = |engine: &mut Engine, node: NodeId, stage| {
            let w = Workload::new(uid, &apps[0], 0, 0.0, FogResult::Done);
            engine.workloads.push(w);
            match stage {
                Stage::Fog => engine.census.fog.in_transit += 1,
                Stage::Cloud => engine.census.cloud.in_transit += 1,
            }
            engine.on_arrive(uid, node, stage);
            uid += 1;
        };
        for _ in 0..4 {
            push(&mut engine, 1, Stage::Fog);
        }
        // Cloud idle: first arrival enters service, then two wait.
        for _ in 0..3 {
            push(&mut engine, 2, Stage::Cloud);
        }
        assert_eq!(engine.queue(1).unwrap().waiting_len(), 3);
        assert!(engine.queue(1).unwrap().busy());
        assert_eq!(engine.queue(2).unwrap().waiting_len(), 2);
        assert_eq!(engine.total_waiting(), 5);
    }

    #[test]
    fn fifo_and_conservation_every_step() {
        let topo = generate_topology(12, 3, 4).unwrap();
        let apps = AppSpec::defaults();
        let gen = GenConfig::new(60.0);
        let spec = EpisodeSpec { topology: &topo, apps: &apps, gen: &gen, horizon: 3000.0, seed: 4 };
        let mut engine = Engine::new(spec).unwrap();
        let mut policy = RandomPolicy::new(4);
        let mut last = 0.0;
        while engine.step(&mut policy).unwrap() {
            assert!(engine.clock().now >= last);
            last = engine.clock().now;
            let c = engine.census();
            assert!(c.fog.balanced() && c.cloud.balanced(), "{c:?}");
            let queued: usize = (0..topo.len()).filter_map(|n| engine.queue(n)).map(NodeQueue::waiting_len).sum();
            assert_eq!(queued, engine.total_waiting());
            assert_eq!(queued as u64, c.fog.waiting + c.cloud.waiting);
        }
        // FIFO per node: service starts follow arrival order.
        for node in topo.fog_nodes() {
            let mut jobs: Vec<&Workload> = engine
                .workloads()
                .iter()
                .filter(|w| w.assigned_node == Some(*node) && w.fog.service_start.is_some())
                .collect();
            jobs.sort_by(|a, b| a.fog.arrive.unwrap().total_cmp(&b.fog.arrive.unwrap()));
            for pair in jobs.windows(2) {
                assert!(pair[0].fog.service_start.unwrap() <= pair[1].fog.service_start.unwrap());
            }
        }
    }

    #[test]
    fn rewards_telescope() {
        struct Delta(RoundRobinPolicy);
        impl PlacementPolicy for Delta {
            fn name(&self) -> String {
                "delta".into()
            }
            fn reward_spec(&self) -> RewardSpec {
                RewardSpec::QueueDelta
            }
            fn decide(&mut self, ctx: &DecisionContext<'_>, reward: f64) -> Result<NodeId> {
                self.0.decide(ctx, reward)
            }
        }
        let topo = generate_topology(15, 4, 8).unwrap();
        let apps = AppSpec::defaults();
        let gen = GenConfig::new(80.0);
        let spec = EpisodeSpec { topology: &topo, apps: &apps, gen: &gen, horizon: 5000.0, seed: 8 };
        let result = run_episode(spec, &mut Delta(RoundRobinPolicy::default())).unwrap();
        let first = result.trajectory.first().unwrap().total_waiting as i64;
        let last = result.trajectory.last().unwrap().total_waiting as i64;
        let sum: i64 = result.trajectory.iter().map(|d| d.reward as i64).sum();
        assert_eq!(sum, first - last);
    }

    #[test]
    fn invalid_placement_is_rejected() {
        struct Bad;
        impl PlacementPolicy for Bad {
            fn name(&self) -> String {
                "bad".into()
            }
            fn decide(&mut self, ctx: &DecisionContext<'_>, _: f64) -> Result<NodeId> {
                Ok(ctx.workload.source_cluster)
            }
        }
        let topo = generate_topology(10, 3, 2).unwrap();
        let apps = AppSpec::defaults();
        let gen = GenConfig::new(100.0);
        let spec = EpisodeSpec { topology: &topo, apps: &apps, gen: &gen, horizon: 2000.0, seed: 2 };
        assert!(matches!(run_episode(spec, &mut Bad), Err(Error::InvalidPlacement { .. })));
    }

    #[test]
    fn privileged_view_only_for_privileged_policies() {
        struct Probe(Access, bool);
        impl PlacementPolicy for Probe {
            fn name(&self) -> String {
                "probe".into()
            }
            fn access(&self) -> Access {
                self.0
            }
            fn decide(&mut self, ctx: &DecisionContext<'_>, _: f64) -> Result<NodeId> {
                self.1 |= ctx.privileged.is_some();
                Ok(ctx.fog_nodes[0])
            }
        }
        let topo = generate_topology(10, 3, 2).unwrap();
        let apps = AppSpec::defaults();
        let gen = GenConfig::new(100.0);
        let spec = EpisodeSpec { topology: &topo, apps: &apps, gen: &gen, horizon: 1000.0, seed: 2 };
        let mut private = Probe(Access::Private, false);
        run_episode(spec, &mut private).unwrap();
        assert!(!private.1);
        let mut privileged = Probe(Access::Privileged, false);
        run_episode(spec, &mut privileged).unwrap();
        assert!(privileged.1);
    }

    #[test]
    fn record_arithmetic() {
        let app = &AppSpec::defaults()[0];
        let mut w = Workload::new(0, app, 3, 0.0, FogResult::Done);
        assert!(matches!(record_delays(&w), Err(Error::MissingTimestamp { .. })));
        w.assigned_node = Some(1);
        w.fog = Timestamps {
            emit: Some(0.0),
            arrive: Some(6.0),
            service_start: Some(6.0),
            service_end: Some(16.0),
            feedback_arrive: None,
        };
        let r = record_delays(&w).unwrap();
        assert_eq!(
            (r.latency_ms, r.waiting_ms, r.service_ms, r.response_ms, r.total_response_ms),
            (6.0, 0.0, 10.0, 10.0, 16.0)
        );
        w.fog.feedback_arrive = Some(20.0);
        assert_eq!(record_delays(&w).unwrap().total_response_ms, 20.0);
    }

    #[test]
    fn cloud_loop_record_sums_legs() {
        let app = &AppSpec::defaults()[0];
        let mut w = Workload::new(0, app, 3, 0.0, FogResult::ToCloudThenFeedback);
        w.assigned_node = Some(1);
        w.fog = Timestamps {
            emit: Some(0.0),
            arrive: Some(2.0),
            service_start: Some(3.0),
            service_end: Some(8.0),
            feedback_arrive: Some(10.0),
        };
        w.cloud = Timestamps {
            emit: Some(8.0),
            arrive: Some(12.0),
            service_start: Some(15.0),
            service_end: Some(17.0),
            feedback_arrive: None,
        };
        assert!(record_cloud_delays(&w).is_err());
        w.cloud.feedback_arrive = Some(21.0);
        let r = record_cloud_delays(&w).unwrap();
        assert_eq!(r.loop_kind, LoopKind::CloudLoop);
        assert_eq!(r.latency_ms, 2.0 + 4.0 + 4.0);
        assert_eq!(r.waiting_ms, 1.0 + 3.0);
        assert_eq!(r.service_ms, 5.0 + 2.0);
        assert_eq!(r.total_response_ms, 21.0);
        assert_eq!(r.total_response_ms, r.latency_ms + r.response_ms);
    }

    #[test]
    fn identical_seeds_are_identical() {
        let topo = generate_topology(14, 4, 5).unwrap();
        let apps = AppSpec::defaults();
        let gen = GenConfig::new(100.0);
        let spec = EpisodeSpec { topology: &topo, apps: &apps, gen: &gen, horizon: 4000.0, seed: 5 };
        let a = run_episode(spec, &mut RandomPolicy::new(1)).unwrap();
        let b = run_episode(spec, &mut RandomPolicy::new(1)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn arrivals_do_not_depend_on_policy() {
        let topo = generate_topology(14, 4, 5).unwrap();
        let apps = AppSpec::defaults();
        let gen = GenConfig::new(100.0);
        let spec = EpisodeSpec { topology: &topo, apps: &apps, gen: &gen, horizon: 4000.0, seed: 5 };
        let a = run_episode(spec, &mut RandomPolicy::new(1)).unwrap();
        let b = run_episode(spec, &mut RoundRobinPolicy::default()).unwrap();
        let key = |r: &EpisodeResult| r.trajectory.iter().map(|d| (d.time, d.cluster, d.app)).collect::<Vec<_>>();
        assert_eq!(key(&a), key(&b));
    }
}
