//! Flat fog network: nodes, bidirectional links, role assignment by
//! betweenness centrality, and fastest-path routing.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::workload::AppSpec;
use crate::{Error, NodeId, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Cloud,
    Fog,
    IotCluster,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub role: Role,
    /// Instructions per millisecond.
    pub ipt: f64,
    /// Megabytes. Carried as metadata, nothing consumes it.
    pub ram: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub u: NodeId,
    pub v: NodeId,
    /// Bytes per millisecond.
    pub bw: f64,
    /// Propagation delay in milliseconds.
    pub pr: f64,
}

impl Link {
    /// Transfer time of a message of `bytes` over this link.
    pub fn latency(&self, bytes: f64) -> f64 {
        bytes / self.bw + self.pr
    }

    fn other(&self, end: NodeId) -> NodeId {
        if self.u == end {
            self.v
        } else {
            self.u
        }
    }
}

/// A precomputed route: node sequence plus the link index of every hop.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub links: Vec<usize>,
}

/// Resource magnitudes used by the generator. The defaults are placeholders,
/// not measured values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyParams {
    /// Edges added per new node in preferential attachment.
    pub attach: usize,
    /// Fog compute tiers, fastest first. Fog nodes are split into equal rank
    /// bands by ascending centrality and take tiers in this order.
    pub fog_ipt_tiers: Vec<f64>,
    pub cloud_ipt: f64,
    pub cloud_ram: f64,
    pub fog_ram: f64,
    pub cluster_ram: f64,
    pub bw_min: f64,
    pub bw_max: f64,
    pub pr_min: f64,
    pub pr_max: f64,
    /// Message size (bytes) used to precompute routes.
    pub reference_bytes: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            attach: 2,
            fog_ipt_tiers: vec![400.0, 200.0, 100.0],
            cloud_ipt: 1000.0,
            cloud_ram: 65536.0,
            fog_ram: 4096.0,
            cluster_ram: 0.0,
            bw_min: 1000.0,
            bw_max: 5000.0,
            pr_min: 1.0,
            pr_max: 5.0,
            reference_bytes: AppSpec::mean_message_bytes(&AppSpec::defaults()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<Link>,
    /// Per node: (neighbor, link index), sorted by neighbor id.
    adjacency: Vec<Vec<(NodeId, usize)>>,
    routes: BTreeMap<(NodeId, NodeId), Route>,
    reference_bytes: f64,
    cloud: NodeId,
    fog: Vec<NodeId>,
    clusters: Vec<NodeId>,
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    reference_bytes: f64,
    nodes: Vec<Node>,
    links: Vec<Link>,
}

impl Topology {
    /// Validates the node and link tables and precomputes fastest routes
    /// between every ordered pair of nodes for `reference_bytes`.
    pub fn new(nodes: Vec<Node>, links: Vec<Link>, reference_bytes: f64) -> Result<Self> {
        if !(reference_bytes >= 0.0 && reference_bytes.is_finite()) {
            return Err(Error::invalid("reference message size must be finite and >= 0"));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Format(format!("node at position {i} has id {}", node.id)));
            }
            if node.role != Role::IotCluster && !(node.ipt > 0.0 && node.ipt.is_finite()) {
                return Err(Error::invalid(format!("node {i} needs ipt > 0")));
            }
        }
        let count = |role| nodes.iter().filter(|n| n.role == role).count();
        if count(Role::Cloud) != 1 {
            return Err(Error::invalid("topology needs exactly one Cloud node"));
        }
        if count(Role::Fog) == 0 || count(Role::IotCluster) == 0 {
            return Err(Error::invalid("topology needs at least one Fog node and one IoT cluster"));
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (idx, link) in links.iter().enumerate() {
            if link.u >= nodes.len() || link.v >= nodes.len() {
                return Err(Error::invalid(format!("link {idx} references a missing node")));
            }
            if link.u == link.v {
                return Err(Error::invalid(format!("link {idx} is a self loop")));
            }
            if !(link.bw > 0.0) || !(link.pr >= 0.0) {
                return Err(Error::invalid(format!("link {idx} needs bw > 0 and pr >= 0")));
            }
            adjacency[link.u].push((link.v, idx));
            adjacency[link.v].push((link.u, idx));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        if !is_connected(&adjacency) {
            return Err(Error::Graph("topology is not connected".into()));
        }

        let cloud = nodes.iter().find(|n| n.role == Role::Cloud).map(|n| n.id).unwrap();
        let ids = |role| nodes.iter().filter(|n| n.role == role).map(|n| n.id).collect();
        let mut topo = Topology {
            fog: ids(Role::Fog),
            clusters: ids(Role::IotCluster),
            nodes,
            links,
            adjacency,
            routes: BTreeMap::new(),
            reference_bytes,
            cloud,
        };
        let n = topo.nodes.len();
        let mut routes = BTreeMap::new();
        for dst in 0..n {
            let dist = topo.distances_to(dst, reference_bytes);
            for src in (0..n).filter(|&s| s != dst) {
                routes.insert((src, dst), topo.walk(src, dst, reference_bytes, &dist)?);
            }
        }
        topo.routes = routes;
        Ok(topo)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn cloud(&self) -> NodeId {
        self.cloud
    }

    /// Fog node ids in ascending order.
    pub fn fog_nodes(&self) -> &[NodeId] {
        &self.fog
    }

    /// IoT cluster ids in ascending order.
    pub fn clusters(&self) -> &[NodeId] {
        &self.clusters
    }

    pub fn reference_bytes(&self) -> f64 {
        self.reference_bytes
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[id].iter().map(|&(v, _)| v)
    }

    pub fn route(&self, src: NodeId, dst: NodeId) -> Option<&Route> {
        self.routes.get(&(src, dst))
    }

    /// Transfer time of `bytes` along the precomputed route; zero when the
    /// endpoints coincide.
    pub fn route_latency(&self, src: NodeId, dst: NodeId, bytes: f64) -> f64 {
        match self.routes.get(&(src, dst)) {
            Some(route) => route.links.iter().map(|&l| self.links[l].latency(bytes)).sum(),
            None => 0.0,
        }
    }

    /// Path minimising the summed per-link `bytes / bw + pr`. Among equally
    /// fast paths the lexicographically smallest node sequence wins.
    pub fn fastest_path(&self, src: NodeId, dst: NodeId, bytes: f64) -> Result<(Vec<NodeId>, f64)> {
        if src >= self.len() || dst >= self.len() {
            return Err(Error::invalid(format!("unknown node in ({src}, {dst})")));
        }
        if src == dst {
            return Err(Error::invalid("fastest_path requires src != dst"));
        }
        let dist = self.distances_to(dst, bytes);
        let route = self.walk(src, dst, bytes, &dist)?;
        let latency = route.links.iter().map(|&l| self.links[l].latency(bytes)).sum();
        Ok((route.nodes, latency))
    }

    /// Dijkstra from `dst` over the undirected graph.
    fn distances_to(&self, dst: NodeId, bytes: f64) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Entry(f64, NodeId);
        impl Eq for Entry {}
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
            }
        }

        let mut dist = vec![f64::INFINITY; self.len()];
        dist[dst] = 0.0;
        let mut heap = BinaryHeap::from([Entry(0.0, dst)]);
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, l) in &self.adjacency[u] {
                let nd = d + self.links[l].latency(bytes);
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Entry(nd, v));
                }
            }
        }
        dist
    }

    /// Greedy walk along tight edges, always taking the smallest neighbor id.
    fn walk(&self, src: NodeId, dst: NodeId, bytes: f64, dist: &[f64]) -> Result<Route> {
        if !dist[src].is_finite() {
            return Err(Error::Unreachable { src, dst });
        }
        let mut visited = vec![false; self.len()];
        let mut nodes = vec![src];
        let mut links = Vec::new();
        let mut u = src;
        visited[u] = true;
        while u != dst {
            let next = self.adjacency[u].iter().find(|&&(v, l)| {
                !visited[v] && self.tight(u, v, l, bytes, dist) && self.tight_reach(v, dst, bytes, dist, &visited)
            });
            let &(v, l) = next.ok_or(Error::Unreachable { src, dst })?;
            debug_assert_eq!(self.links[l].other(u), v);
            visited[v] = true;
            nodes.push(v);
            links.push(l);
            u = v;
        }
        Ok(Route { nodes, links })
    }

    fn tight(&self, u: NodeId, v: NodeId, l: usize, bytes: f64, dist: &[f64]) -> bool {
        let tol = 1e-9 * dist[u].max(1.0);
        (self.links[l].latency(bytes) + dist[v] - dist[u]).abs() <= tol
    }

    /// Whether `dst` is reachable from `from` over tight edges without
    /// revisiting `visited` nodes.
    fn tight_reach(&self, from: NodeId, dst: NodeId, bytes: f64, dist: &[f64], visited: &[bool]) -> bool {
        let mut seen = visited.to_vec();
        seen[from] = true;
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            if u == dst {
                return true;
            }
            for &(v, l) in &self.adjacency[u] {
                if !seen[v] && self.tight(u, v, l, bytes, dist) {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        false
    }

    pub fn to_toml(&self) -> String {
        let file = TopologyFile {
            reference_bytes: self.reference_bytes,
            nodes: self.nodes.clone(),
            links: self.links.clone(),
        };
        toml::to_string(&file).expect("topology tables always serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: TopologyFile = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Topology::new(file.nodes, file.links, file.reference_bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Topology::from_toml(&text)
    }
}

fn is_connected<T>(adjacency: &[Vec<(NodeId, T)>]) -> bool {
    if adjacency.is_empty() {
        return false;
    }
    let mut seen = vec![false; adjacency.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for (v, _) in &adjacency[u] {
            if !seen[*v] {
                seen[*v] = true;
                reached += 1;
                queue.push_back(*v);
            }
        }
    }
    reached == adjacency.len()
}

/// Unnormalized shortest-path betweenness of an undirected, unweighted graph
/// (Brandes accumulation). Each unordered pair of endpoints counts once and
/// endpoints never score for their own pair.
pub fn betweenness(adjacency: &[Vec<NodeId>]) -> Result<Vec<f64>> {
    let n = adjacency.len();
    let paired: Vec<Vec<(NodeId, ())>> = adjacency
        .iter()
        .map(|l| l.iter().map(|&v| (v, ())).collect())
        .collect();
    if !is_connected(&paired) {
        return Err(Error::Graph("betweenness requires a connected graph".into()));
    }
    let mut centrality = vec![0.0; n];
    let mut stack = Vec::with_capacity(n);
    let mut preds: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0f64; n];
    let mut depth = vec![-1i64; n];
    let mut delta = vec![0.0f64; n];
    for s in 0..n {
        stack.clear();
        preds.iter_mut().for_each(Vec::clear);
        sigma.fill(0.0);
        depth.fill(-1);
        delta.fill(0.0);
        sigma[s] = 1.0;
        depth[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &adjacency[v] {
                if depth[w] < 0 {
                    depth[w] = depth[v] + 1;
                    queue.push_back(w);
                }
                if depth[w] == depth[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                centrality[w] += delta[w];
            }
        }
    }
    // Each unordered pair was accumulated from both ends.
    centrality.iter_mut().for_each(|c| *c /= 2.0);
    Ok(centrality)
}

/// Preferential-attachment edge list: a star on the first `m + 1` nodes, then
/// each new node links to `m` distinct existing nodes chosen with probability
/// proportional to degree.
pub fn barabasi_albert(n: usize, m: usize, rng: &mut impl Rng) -> Result<Vec<(NodeId, NodeId)>> {
    if m == 0 || n <= m {
        return Err(Error::invalid(format!("preferential attachment needs n > m >= 1 (n={n}, m={m})")));
    }
    let mut edges: Vec<(NodeId, NodeId)> = (1..=m).map(|v| (0, v)).collect();
    let mut repeated: Vec<NodeId> = edges.iter().flat_map(|&(u, v)| [u, v]).collect();
    for new in (m + 1)..n {
        let mut targets: Vec<NodeId> = Vec::with_capacity(m);
        while targets.len() < m {
            let pick = repeated[rng.random_range(0..repeated.len())];
            if !targets.contains(&pick) {
                targets.push(pick);
            }
        }
        targets.sort_unstable();
        for t in targets {
            edges.push((t, new));
            repeated.extend([t, new]);
        }
    }
    Ok(edges)
}

/// Generates a topology with default resource magnitudes.
pub fn generate_topology(n_nodes: usize, n_clusters: usize, seed: u64) -> Result<Topology> {
    generate_with(n_nodes, n_clusters, seed, &TopologyParams::default())
}

pub fn generate_with(
    n_nodes: usize,
    n_clusters: usize,
    seed: u64,
    params: &TopologyParams,
) -> Result<Topology> {
    check_sizes(n_nodes, n_clusters)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const ATTEMPTS: usize = 8;
    for _ in 0..ATTEMPTS {
        let edges = barabasi_albert(n_nodes, params.attach.min(n_nodes - 1), &mut rng)?;
        match from_edges(n_nodes, &edges, n_clusters, params, &mut rng) {
            Err(Error::Graph(_)) => continue,
            other => return other,
        }
    }
    Err(Error::Graph(format!("no connected graph after {ATTEMPTS} attempts")))
}

fn check_sizes(n_nodes: usize, n_clusters: usize) -> Result<()> {
    if n_clusters == 0 {
        return Err(Error::invalid("at least one IoT cluster is required"));
    }
    if n_nodes < n_clusters + 2 {
        return Err(Error::invalid(format!(
            "{n_nodes} nodes cannot hold a Cloud, a Fog node and {n_clusters} clusters"
        )));
    }
    Ok(())
}

/// Assigns roles and resources to a given edge list: the most central node is
/// the Cloud, the `n_clusters` least central are IoT clusters, the rest are
/// Fog nodes whose compute tier falls as centrality rises. Centrality ties
/// break toward the lower id. Link resources are drawn from `rng` in edge
/// order.
pub fn from_edges(
    n_nodes: usize,
    edges: &[(NodeId, NodeId)],
    n_clusters: usize,
    params: &TopologyParams,
    rng: &mut impl Rng,
) -> Result<Topology> {
    check_sizes(n_nodes, n_clusters)?;
    if params.fog_ipt_tiers.is_empty() {
        return Err(Error::invalid("at least one Fog compute tier is required"));
    }
    let mut adjacency = vec![Vec::new(); n_nodes];
    for &(u, v) in edges {
        if u >= n_nodes || v >= n_nodes || u == v {
            return Err(Error::invalid(format!("bad edge ({u}, {v})")));
        }
        adjacency[u].push(v);
        adjacency[v].push(u);
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    let centrality = betweenness(&adjacency)?;

    let mut order: Vec<NodeId> = (0..n_nodes).collect();
    order.sort_by(|&a, &b| centrality[a].total_cmp(&centrality[b]).then(a.cmp(&b)));
    let cloud = *order
        .iter()
        .max_by(|&&a, &&b| centrality[a].total_cmp(&centrality[b]).then(b.cmp(&a)))
        .unwrap();
    let clusters: Vec<NodeId> = order.iter().copied().filter(|&v| v != cloud).take(n_clusters).collect();
    let fog: Vec<NodeId> = order
        .iter()
        .copied()
        .filter(|v| *v != cloud && !clusters.contains(v))
        .collect();

    let mut nodes: Vec<Node> = (0..n_nodes)
        .map(|id| Node {
            id,
            role: Role::IotCluster,
            ipt: 0.0,
            ram: params.cluster_ram,
        })
        .collect();
    nodes[cloud].role = Role::Cloud;
    nodes[cloud].ipt = params.cloud_ipt;
    nodes[cloud].ram = params.cloud_ram;
    // `fog` is already in ascending centrality order.
    let tiers = params.fog_ipt_tiers.len();
    for (rank, &id) in fog.iter().enumerate() {
        nodes[id].role = Role::Fog;
        nodes[id].ipt = params.fog_ipt_tiers[rank * tiers / fog.len()];
        nodes[id].ram = params.fog_ram;
    }

    let mut seen = std::collections::BTreeSet::new();
    let mut links = Vec::with_capacity(edges.len());
    for &(u, v) in edges {
        let key = (u.min(v), u.max(v));
        if !seen.insert(key) {
            continue;
        }
        let bw = sample_range(rng, params.bw_min, params.bw_max).round().max(1.0);
        let pr = (sample_range(rng, params.pr_min, params.pr_max) * 100.0).round() / 100.0;
        links.push(Link { u: key.0, v: key.1, bw, pr });
    }
    Topology::new(nodes, links, params.reference_bytes)
}

fn sample_range(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}
