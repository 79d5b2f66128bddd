//! Double Deep Q-Learning agent.
//!
//! The agent is driven one decision at a time through
//! [`DdqlAgent::observe`]: it receives the current state and the delayed
//! reward of its previous action, stores the completed transition, trains the
//! online network `q` on its schedule and answers with an action chosen from
//! the target network `q_target`. [`DdqlPolicy`] plugs the agent into the
//! simulator with either the privacy-aware or the privacy-lacking encoding.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::des::{EpisodeResult, EpisodeSpec, Engine};
use crate::nn::{huber, Adam, Checkpoint, Gradients, Mlp, Trace};
use crate::par::{self, Execution};
use crate::policies::{Access, DecisionContext, PlacementPolicy, PolicyKind, RewardSpec};
use crate::rl_state::{DistTensor, ParlState, PlrlState, RewardFlavor};
use crate::topology::Topology;
use crate::workload::{AppSpec, Category, GenConfig};
use crate::{Error, NodeId, Result};

/// Mini-batch gradients are accumulated in this many fixed chunks and summed
/// in chunk order, whatever the execution mode.
const GRAD_CHUNKS: usize = 5;

const INIT_STREAM: u64 = 2;
const EXPLORE_STREAM: u64 = 3;
const EPISODE_STREAM: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Arc<[f32]>,
    pub action: usize,
    pub reward: f32,
    pub next_state: Arc<[f32]>,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `n` distinct positions drawn uniformly.
    pub fn sample_indices(&self, rng: &mut impl Rng, n: usize) -> Result<Vec<usize>> {
        if self.items.len() < n {
            return Err(Error::Underfilled {
                size: self.items.len(),
                needed: n,
            });
        }
        Ok(index::sample(rng, self.items.len(), n).into_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub total_train_steps: u64,
    pub decay_fraction: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Decision steps between training steps.
    pub train_period: u64,
    /// Decision steps between target-network syncs.
    pub target_period: u64,
    pub batch_size: usize,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub prefill: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub episode_horizon: f64,
    pub overflow_penalty: f64,
    /// Waiting count above which a node counts as overflowing.
    pub overflow_capacity: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainSchedule {
    pub fn full() -> Self {
        Self {
            total_train_steps: 150_000,
            decay_fraction: 0.75,
            eps_start: 1.0,
            eps_end: 0.01,
            train_period: 4,
            target_period: 2000,
            batch_size: 50,
            gamma: 0.99,
            replay_capacity: 1_000_000,
            prefill: 100_000,
            learning_rate: 2.5e-4,
            hidden: vec![256, 128, 64],
            episode_horizon: 10_000.0,
            overflow_penalty: 1.0,
            overflow_capacity: 10,
        }
    }

    /// The full schedule scaled down 1:10.
    pub fn desk() -> Self {
        Self {
            total_train_steps: 15_000,
            replay_capacity: 50_000,
            prefill: 5_000,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::invalid(format!("unknown schedule preset {name:?}"))),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.decay_fraction > 0.0 && self.decay_fraction <= 1.0) {
            v.push("decay_fraction must be in (0, 1]".to_string());
        }
        for (name, p) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&p) {
                v.push(format!("{name} must be in [0, 1]"));
            }
        }
        if self.eps_end > self.eps_start {
            v.push("eps_end must not exceed eps_start".to_string());
        }
        if self.train_period == 0 || self.target_period == 0 {
            v.push("train_period and target_period must be positive".to_string());
        }
        if self.batch_size == 0 {
            v.push("batch_size must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            v.push("gamma must be in [0, 1]".to_string());
        }
        if self.replay_capacity < self.batch_size {
            v.push("replay_capacity must hold at least one batch".to_string());
        }
        if self.prefill > self.replay_capacity || self.prefill < self.batch_size {
            v.push("prefill must lie between batch_size and replay_capacity".to_string());
        }
        if !(self.learning_rate > 0.0) {
            v.push("learning_rate must be positive".to_string());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            v.push("hidden layers must be non-empty and positive".to_string());
        }
        if !(self.episode_horizon > 0.0) {
            v.push("episode_horizon must be positive".to_string());
        }
        v
    }

    /// Linear decay from `eps_start` at step 0 to `eps_end` at
    /// `floor(decay_fraction * total_train_steps)`, constant afterwards.
    pub fn epsilon(&self, train_step: u64) -> f64 {
        let boundary = (self.decay_fraction * self.total_train_steps as f64).floor() as u64;
        if train_step >= boundary {
            return self.eps_end;
        }
        let frac = train_step as f64 / boundary as f64;
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }

    pub fn layer_sizes(&self, input: usize, actions: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(actions);
        sizes
    }
}

/// Online network `q` (trained) and target network `q_target` (acts).
#[derive(Clone, Debug, PartialEq)]
pub struct AgentNets {
    pub q: Mlp<f32>,
    pub q_target: Mlp<f32>,
}

impl AgentNets {
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let q = Mlp::new(sizes, rng)?;
        Ok(Self { q_target: q.clone(), q })
    }

    pub fn sync(&mut self) {
        self.q_target.copy_from(&self.q);
    }
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy over `q_target`.
pub fn act(nets: &AgentNets, state: &[f32], eps: f64, rng: &mut impl Rng) -> Result<usize> {
    let actions = nets.q_target.output_dim();
    if eps > 0.0 && rng.random::<f64>() < eps {
        return Ok(rng.random_range(0..actions));
    }
    Ok(argmax(&nets.q_target.forward(state)?))
}

/// Per-chunk scratch space for [`train_batch`].
#[derive(Clone, Debug)]
pub struct BatchScratch {
    chunks: Vec<(Gradients<f32>, Vec<Trace<f32>>)>,
    total: Gradients<f32>,
}

impl BatchScratch {
    pub fn new(net: &Mlp<f32>) -> Self {
        Self {
            chunks: (0..GRAD_CHUNKS)
                .map(|_| (Gradients::zeros_like(net), Vec::new()))
                .collect(),
            total: Gradients::zeros_like(net),
        }
    }
}

/// One Double-Q training step on `q`; returns the mean Huber loss. The
/// target is `r + gamma * q_target(s', argmax_a q(s', a))`.
#[allow(clippy::too_many_arguments)]
pub fn train_batch(
    nets: &mut AgentNets,
    adam: &mut Adam<f32>,
    buffer: &ReplayBuffer,
    batch_size: usize,
    gamma: f64,
    rng: &mut impl Rng,
    scratch: &mut BatchScratch,
    exec: Execution,
) -> Result<f32> {
    let picks = buffer.sample_indices(rng, batch_size)?;
    let per_chunk = batch_size.div_ceil(GRAD_CHUNKS);
    let gamma = gamma as f32;
    let scale = 1.0 / batch_size as f32;
    let work: Vec<_> = std::mem::take(&mut scratch.chunks)
        .into_iter()
        .enumerate()
        .map(|(i, slot)| {
            let lo = (i * per_chunk).min(batch_size);
            let hi = ((i + 1) * per_chunk).min(batch_size);
            (slot, &picks[lo..hi])
        })
        .collect();
    let q = &nets.q;
    let q_target = &nets.q_target;
    let done = par::map(exec, work, |((mut grads, mut traces), idx)| {
        grads.clear();
        traces.resize_with(idx.len().max(traces.len()), Trace::default);
        let mut actions = Vec::with_capacity(idx.len());
        let mut dloss = Vec::with_capacity(idx.len());
        let mut loss = 0.0f32;
        let result = (|| -> Result<()> {
            for (&i, trace) in idx.iter().zip(traces.iter_mut()) {
                let t = &buffer.items[i];
                let next_online = q.forward(&t.next_state)?;
                let next_target = q_target.forward(&t.next_state)?;
                let y = t.reward + gamma * next_target[argmax(&next_online)];
                q.forward_trace(&t.state, trace)?;
                let (l, g) = huber(trace.output()[t.action], y);
                loss += l;
                actions.push(t.action);
                dloss.push(g * scale);
            }
            q.backward_batch(&traces[..idx.len()], &actions, &dloss, &mut grads)
        })();
        ((grads, traces), loss, result)
    });
    scratch.total.clear();
    let mut loss = 0.0f32;
    let mut chunks = Vec::with_capacity(done.len());
    let mut failure = None;
    for (slot, l, result) in done {
        if let Err(e) = result {
            failure.get_or_insert(e);
        }
        scratch.total.add(&slot.0);
        loss += l;
        chunks.push(slot);
    }
    scratch.chunks = chunks;
    if let Some(e) = failure {
        return Err(e);
    }
    adam.step(&mut nets.q, &scratch.total)?;
    Ok(loss * scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Random actions, transitions stored, no learning.
    Prefill,
    Train,
    /// Greedy, nothing stored.
    Eval,
}

/// What happened during one call to [`DdqlAgent::observe`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub action: usize,
    pub loss: Option<f32>,
    pub synced: bool,
}

#[derive(Clone, Debug)]
pub struct DdqlAgent {
    nets: AgentNets,
    adam: Adam<f32>,
    buffer: ReplayBuffer,
    scratch: BatchScratch,
    sched: TrainSchedule,
    rng: ChaCha8Rng,
    mode: Mode,
    exec: Execution,
    prev: Option<(Arc<[f32]>, usize)>,
    decision_steps: u64,
    train_steps: u64,
    syncs: u64,
    episode_return: f64,
    seed: u64,
}

impl DdqlAgent {
    pub fn new(input: usize, actions: usize, sched: TrainSchedule, seed: u64) -> Result<Self> {
        let problems = sched.violations();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        init.set_stream(INIT_STREAM);
        let nets = AgentNets::new(&sched.layer_sizes(input, actions), &mut init)?;
        Ok(Self::from_nets(nets, sched, seed))
    }

    fn from_nets(nets: AgentNets, sched: TrainSchedule, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(EXPLORE_STREAM);
        Self {
            adam: Adam::with_lr(&nets.q, sched.learning_rate as f32),
            scratch: BatchScratch::new(&nets.q),
            buffer: ReplayBuffer::new(sched.replay_capacity),
            nets,
            sched,
            rng,
            mode: Mode::Train,
            exec: Execution::default(),
            prev: None,
            decision_steps: 0,
            train_steps: 0,
            syncs: 0,
            episode_return: 0.0,
            seed,
        }
    }

    pub fn nets(&self) -> &AgentNets {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut AgentNets {
        &mut self.nets
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.sched
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    /// Decision steps taken in [`Mode::Train`].
    pub fn decision_steps(&self) -> u64 {
        self.decision_steps
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn syncs(&self) -> u64 {
        self.syncs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epsilon(&self) -> f64 {
        match self.mode {
            Mode::Prefill => 1.0,
            Mode::Train => self.sched.epsilon(self.train_steps),
            Mode::Eval => 0.0,
        }
    }

    /// Whether the training budget is spent.
    pub fn is_done(&self) -> bool {
        self.train_steps >= self.sched.total_train_steps
    }

    /// One decision step. `reward` belongs to the previous action of the
    /// episode and is ignored on the first decision.
    pub fn observe(&mut self, state: &[f32], reward: f64) -> Result<StepInfo> {
        let state: Arc<[f32]> = Arc::from(state);
        let mut info = StepInfo {
            action: 0,
            loss: None,
            synced: false,
        };
        if let Some((prev_state, prev_action)) = self.prev.take() {
            self.episode_return += reward;
            if self.mode != Mode::Eval {
                self.buffer.push(Transition {
                    state: prev_state,
                    action: prev_action,
                    reward: reward as f32,
                    next_state: state.clone(),
                });
            }
        }
        if self.mode == Mode::Train {
            self.decision_steps += 1;
            if self.decision_steps.is_multiple_of(self.sched.train_period)
                && !self.is_done()
                && self.buffer.len() >= self.sched.batch_size
            {
                let loss = train_batch(
                    &mut self.nets,
                    &mut self.adam,
                    &self.buffer,
                    self.sched.batch_size,
                    self.sched.gamma,
                    &mut self.rng,
                    &mut self.scratch,
                    self.exec,
                )?;
                self.train_steps += 1;
                info.loss = Some(loss);
            }
            if self.decision_steps.is_multiple_of(self.sched.target_period) {
                self.nets.sync();
                self.syncs += 1;
                info.synced = true;
            }
        }
        let eps = self.epsilon();
        info.action = act(&self.nets, &state, eps, &mut self.rng)?;
        self.prev = Some((state, info.action));
        Ok(info)
    }

    /// Forgets the pending action and returns the episode's summed reward.
    pub fn end_episode(&mut self) -> f64 {
        self.prev = None;
        std::mem::take(&mut self.episode_return)
    }

    /// Greedy copy without replay memory or optimizer history.
    pub fn frozen(&self) -> Self {
        let mut agent = Self::from_nets(self.nets.clone(), self.sched.clone(), self.seed);
        agent.mode = Mode::Eval;
        agent.exec = self.exec;
        agent.decision_steps = self.decision_steps;
        agent.train_steps = self.train_steps;
        agent.syncs = self.syncs;
        agent
    }
}

/// Which state and reward the agent learns from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentKind {
    /// Cluster, category and own assignment history; queue-delta reward.
    Parl,
    /// Cluster and per-node queue lengths; delay/queue reward.
    Plrl(RewardFlavor),
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        self.policy_kind().name()
    }

    pub fn policy_kind(self) -> PolicyKind {
        match self {
            AgentKind::Parl => PolicyKind::Ddql,
            AgentKind::Plrl(f) => PolicyKind::Plrl(f),
        }
    }

    pub fn from_policy(kind: PolicyKind) -> Option<Self> {
        match kind {
            PolicyKind::Ddql => Some(AgentKind::Parl),
            PolicyKind::Plrl(f) => Some(AgentKind::Plrl(f)),
            _ => None,
        }
    }

    pub fn input_dim(self, actions: usize, clusters: usize) -> usize {
        match self {
            AgentKind::Parl => ParlState::dim(actions, clusters, Category::ALL.len()),
            AgentKind::Plrl(_) => PlrlState::dim(actions, clusters),
        }
    }
}

/// A DDQL agent acting as a placement policy. Action `i` is the `i`-th Fog
/// node in ascending id order.
#[derive(Clone, Debug)]
pub struct DdqlPolicy {
    agent: DdqlAgent,
    kind: AgentKind,
    actions: usize,
    clusters: usize,
    dist: DistTensor,
    last: Option<(usize, usize, usize)>,
}

impl DdqlPolicy {
    pub fn new(kind: AgentKind, actions: usize, clusters: usize, sched: TrainSchedule, seed: u64) -> Result<Self> {
        let agent = DdqlAgent::new(kind.input_dim(actions, clusters), actions, sched, seed)?;
        Ok(Self::with_agent(kind, actions, clusters, agent))
    }

    pub fn for_topology(kind: AgentKind, topology: &Topology, sched: TrainSchedule, seed: u64) -> Result<Self> {
        Self::new(kind, topology.fog_nodes().len(), topology.clusters().len(), sched, seed)
    }

    fn with_agent(kind: AgentKind, actions: usize, clusters: usize, agent: DdqlAgent) -> Self {
        Self {
            agent,
            kind,
            actions,
            clusters,
            dist: DistTensor::zeros(actions, clusters, Category::ALL.len()),
            last: None,
        }
    }

    pub fn agent(&self) -> &DdqlAgent {
        &self.agent
    }

    pub fn agent_mut(&mut self) -> &mut DdqlAgent {
        &mut self.agent
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.actions, self.clusters, Category::ALL.len())
    }

    /// Greedy copy for evaluation.
    pub fn frozen(&self) -> Self {
        Self::with_agent(self.kind, self.actions, self.clusters, self.agent.frozen())
    }

    fn encode(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<f32>> {
        let cluster = ctx.cluster_index()?;
        match self.kind {
            AgentKind::Parl => {
                self.dist = self.dist.update(self.last)?;
                Ok(ParlState::new(cluster, ctx.workload.category.index(), &self.dist)?.to_vec())
            }
            AgentKind::Plrl(_) => {
                let view = ctx
                    .privileged
                    .ok_or_else(|| Error::invalid("privacy-lacking agent needs the load view"))?;
                let queues: Vec<usize> = ctx.fog_nodes.iter().map(|&n| view.waiting[n]).collect();
                Ok(PlrlState::new(cluster, self.clusters, &queues)?.to_vec())
            }
        }
    }

    pub fn checkpoint(&self, extra: &BTreeMap<String, String>) -> Checkpoint {
        let nets = self.agent.nets();
        let mut meta = extra.clone();
        let mut put = |k: &str, v: String| {
            meta.insert(k.to_string(), v);
        };
        put("kind", self.kind.name().to_string());
        put("actions", self.actions.to_string());
        put("clusters", self.clusters.to_string());
        put("categories", Category::ALL.len().to_string());
        put("train_steps", self.agent.train_steps().to_string());
        put("decision_steps", self.agent.decision_steps().to_string());
        put("seed", self.agent.seed().to_string());
        put("overflow_capacity", self.agent.sched.overflow_capacity.to_string());
        put("overflow_penalty", self.agent.sched.overflow_penalty.to_string());
        Checkpoint {
            layers: nets.q.sizes().to_vec(),
            meta,
            nets: vec![nets.q.clone(), nets.q_target.clone()],
        }
    }

    /// Evaluation-mode policy from a checkpoint written by
    /// [`DdqlPolicy::checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let field = |k: &str| {
            ckpt.meta
                .get(k)
                .ok_or_else(|| Error::Format(format!("checkpoint: missing {k}")))
        };
        let num = |k: &str| -> Result<u64> {
            field(k)?
                .parse()
                .map_err(|_| Error::Format(format!("checkpoint: bad {k}")))
        };
        let kind_name = field("kind")?;
        let kind = kind_name
            .parse::<PolicyKind>()
            .ok()
            .and_then(AgentKind::from_policy)
            .ok_or_else(|| Error::Format(format!("checkpoint: unknown kind {kind_name}")))?;
        let actions = num("actions")? as usize;
        let clusters = num("clusters")? as usize;
        if num("categories")? as usize != Category::ALL.len() {
            return Err(Error::Format("checkpoint: category count mismatch".into()));
        }
        let [q, q_target] = <[Mlp<f32>; 2]>::try_from(ckpt.nets.clone())
            .map_err(|_| Error::Format("checkpoint: expected two networks".into()))?;
        if q.input_dim() != kind.input_dim(actions, clusters) || q.output_dim() != actions {
            return Err(Error::Shape {
                expected: kind.input_dim(actions, clusters),
                got: q.input_dim(),
            });
        }
        let mut sched = TrainSchedule {
            hidden: ckpt.layers[1..ckpt.layers.len() - 1].to_vec(),
            ..TrainSchedule::default()
        };
        if let Ok(c) = num("overflow_capacity") {
            sched.overflow_capacity = c as usize;
        }
        if let Some(p) = ckpt.meta.get("overflow_penalty").and_then(|p| p.parse().ok()) {
            sched.overflow_penalty = p;
        }
        let mut agent = DdqlAgent::from_nets(AgentNets { q, q_target }, sched, num("seed")?);
        agent.train_steps = num("train_steps")?;
        agent.decision_steps = num("decision_steps")?;
        agent.mode = Mode::Eval;
        Ok(Self::with_agent(kind, actions, clusters, agent))
    }
}

impl PlacementPolicy for DdqlPolicy {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn access(&self) -> Access {
        match self.kind {
            AgentKind::Parl => Access::Private,
            AgentKind::Plrl(_) => Access::Privileged,
        }
    }

    fn reward_spec(&self) -> RewardSpec {
        match self.kind {
            AgentKind::Parl => RewardSpec::QueueDelta,
            AgentKind::Plrl(flavor) => RewardSpec::Plrl {
                flavor,
                overflow_penalty: self.agent.sched.overflow_penalty,
                capacity: self.agent.sched.overflow_capacity,
            },
        }
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, reward: f64) -> Result<NodeId> {
        if ctx.fog_nodes.len() != self.actions {
            return Err(Error::Shape {
                expected: self.actions,
                got: ctx.fog_nodes.len(),
            });
        }
        let state = self.encode(ctx)?;
        let action = self.agent.observe(&state, reward)?.action;
        self.last = Some((action, ctx.cluster_index()?, ctx.workload.category.index()));
        Ok(ctx.fog_nodes[action])
    }

    fn end_episode(&mut self) {
        self.agent.end_episode();
        self.dist = DistTensor::zeros(self.actions, self.clusters, Category::ALL.len());
        self.last = None;
    }
}

/// Environment the agent trains in.
#[derive(Clone, Copy, Debug)]
pub struct TrainEnv<'a> {
    pub topology: &'a Topology,
    pub apps: &'a [AppSpec],
    pub gen: &'a GenConfig,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve {
    /// Summed delayed reward of every completed training episode.
    pub returns: Vec<f64>,
    pub decisions: Vec<u64>,
    /// Mean of the last (up to) ten returns after each episode.
    pub moving_average: Vec<f64>,
}

pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

pub struct Trained {
    pub policy: DdqlPolicy,
    pub curve: TrainingCurve,
}

/// Prefills the replay buffer with random-action episodes, then trains until
/// the schedule's training-step budget is spent. An episode cut short by the
/// budget is not added to the curve.
pub fn run_training(env: TrainEnv<'_>, kind: AgentKind, sched: &TrainSchedule, seed: u64, exec: Execution) -> Result<Trained> {
    let mut policy = DdqlPolicy::for_topology(kind, env.topology, sched.clone(), seed)?;
    policy.agent.set_execution(exec);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    seeds.set_stream(EPISODE_STREAM);
    let mut curve = TrainingCurve::default();
    if policy.agent.is_done() {
        return Ok(Trained { policy, curve });
    }
    let spec = |seed| EpisodeSpec {
        topology: env.topology,
        apps: env.apps,
        gen: env.gen,
        horizon: sched.episode_horizon,
        seed,
    };

    policy.agent.set_mode(Mode::Prefill);
    while policy.agent.buffer().len() < sched.prefill {
        let mut engine = Engine::new(spec(seeds.next_u64()))?;
        while engine.step(&mut policy)? {
            if policy.agent.buffer().len() >= sched.prefill {
                break;
            }
        }
        policy.end_episode();
    }

    policy.agent.set_mode(Mode::Train);
    while !policy.agent.is_done() {
        let mut engine = Engine::new(spec(seeds.next_u64()))?;
        let mut complete = true;
        while engine.step(&mut policy)? {
            if policy.agent.is_done() {
                complete = false;
                break;
            }
        }
        let decisions = engine.trajectory().len() as u64;
        let ret = policy.agent.end_episode();
        policy.end_episode();
        if complete {
            curve.returns.push(ret);
            curve.decisions.push(decisions);
        }
    }
    curve.moving_average = moving_average(&curve.returns, 10);
    policy.agent.set_mode(Mode::Eval);
    Ok(Trained { policy, curve })
}

/// Runs a greedy copy of `policy` for one episode.
pub fn evaluate(policy: &DdqlPolicy, spec: EpisodeSpec<'_>) -> Result<EpisodeResult> {
    let mut frozen = policy.frozen();
    crate::des::run_episode(spec, &mut frozen)
}
