//! Simulated message layer: spanning-tree topologies, synchronous delivery
//! along tree edges, and an append-only ledger of every message's size.
//!
//! Rounds are atomic by construction: every round-level operation holds
//! `&mut Network` for its whole duration, so the topology can only be
//! replaced between rounds.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::scalar::Real;
use crate::world::SensorId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Derivation {
    StaticConfig,
    ProximityMst,
}

/// How [`build_topology`] obtains the tree.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologyMode<T> {
    /// A fixed tree given as undirected edges, rooted at `root`.
    Static { root: SensorId, edges: Vec<(SensorId, SensorId)> },
    /// Minimum spanning tree over pairwise distances, rooted at the lowest
    /// id. With a connectivity radius, longer links are unavailable.
    ProximityMst { comm_radius: Option<T> },
}

/// Rooted spanning tree over the sensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    root: SensorId,
    parent: BTreeMap<SensorId, Option<SensorId>>,
    children: BTreeMap<SensorId, Vec<SensorId>>,
    derivation: Derivation,
}

impl TreeTopology {
    /// Orients undirected `edges` away from `root`. Fails unless the edges
    /// form a tree spanning exactly `nodes`.
    pub fn from_edges(
        nodes: &BTreeSet<SensorId>,
        root: SensorId,
        edges: &[(SensorId, SensorId)],
        derivation: Derivation,
    ) -> Result<Self> {
        if !nodes.contains(&root) {
            return Err(Error::Topology(format!("root {root} is not a sensor")));
        }
        let mut adj: BTreeMap<SensorId, BTreeSet<SensorId>> = nodes.iter().map(|&n| (n, BTreeSet::new())).collect();
        for &(a, b) in edges {
            if a == b || !nodes.contains(&a) || !nodes.contains(&b) {
                return Err(Error::Topology(format!("invalid edge ({a}, {b})")));
            }
            adj.get_mut(&a).expect("node").insert(b);
            adj.get_mut(&b).expect("node").insert(a);
        }
        if edges.len() + 1 != nodes.len() {
            return Err(Error::Topology(format!(
                "{} edges cannot form a spanning tree over {} sensors",
                edges.len(),
                nodes.len()
            )));
        }
        let mut parent = BTreeMap::new();
        parent.insert(root, None);
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[&u] {
                if !parent.contains_key(&v) {
                    parent.insert(v, Some(u));
                    queue.push_back(v);
                }
            }
        }
        if parent.len() != nodes.len() {
            let missing: Vec<_> = nodes.iter().filter(|n| !parent.contains_key(n)).collect();
            return Err(Error::Topology(format!("sensors {missing:?} are not connected to root {root}")));
        }
        let mut children: BTreeMap<SensorId, Vec<SensorId>> = nodes.iter().map(|&n| (n, Vec::new())).collect();
        for (&c, p) in &parent {
            if let Some(p) = p {
                children.get_mut(p).expect("node").push(c);
            }
        }
        for c in children.values_mut() {
            c.sort_unstable();
        }
        Ok(Self {
            root,
            parent,
            children,
            derivation,
        })
    }

    pub fn single(id: SensorId) -> Self {
        Self::from_edges(&BTreeSet::from([id]), id, &[], Derivation::StaticConfig).expect("trivial tree")
    }

    /// Re-roots the same undirected tree.
    pub fn rerooted(&self, root: SensorId) -> Result<Self> {
        let nodes: BTreeSet<_> = self.nodes().collect();
        Self::from_edges(&nodes, root, &self.edges(), self.derivation)
    }

    pub fn root(&self) -> SensorId {
        self.root
    }

    pub fn derivation(&self) -> Derivation {
        self.derivation
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = SensorId> + '_ {
        self.parent.keys().copied()
    }

    pub fn contains(&self, id: SensorId) -> bool {
        self.parent.contains_key(&id)
    }

    pub fn parent(&self, id: SensorId) -> Option<SensorId> {
        self.parent.get(&id).copied().flatten()
    }

    /// Children in ascending id order.
    pub fn children(&self, id: SensorId) -> &[SensorId] {
        self.children.get(&id).map_or(&[], Vec::as_slice)
    }

    /// Undirected edges as `(min, max)`, sorted.
    pub fn edges(&self) -> Vec<(SensorId, SensorId)> {
        let mut e: Vec<_> = self
            .parent
            .iter()
            .filter_map(|(&c, &p)| p.map(|p| (c.min(p), c.max(p))))
            .collect();
        e.sort_unstable();
        e
    }

    pub fn adjacent(&self, a: SensorId, b: SensorId) -> bool {
        self.parent(a) == Some(b) || self.parent(b) == Some(a)
    }

    fn depth(&self, mut id: SensorId) -> usize {
        let mut d = 0;
        while let Some(p) = self.parent(id) {
            id = p;
            d += 1;
        }
        d
    }

    /// Node sequence of the unique tree path from `from` to `to`.
    pub fn path(&self, from: SensorId, to: SensorId) -> Result<Vec<SensorId>> {
        for id in [from, to] {
            if !self.contains(id) {
                return Err(Error::Topology(format!("sensor {id} not in topology")));
            }
        }
        let (mut a, mut b) = (from, to);
        let (mut da, mut db) = (self.depth(a), self.depth(b));
        let mut up = vec![a];
        let mut down = vec![b];
        while da > db {
            a = self.parent(a).expect("non-root");
            up.push(a);
            da -= 1;
        }
        while db > da {
            b = self.parent(b).expect("non-root");
            down.push(b);
            db -= 1;
        }
        while a != b {
            a = self.parent(a).expect("non-root");
            b = self.parent(b).expect("non-root");
            up.push(a);
            down.push(b);
        }
        down.pop();
        up.extend(down.into_iter().rev());
        Ok(up)
    }

    /// Nodes in depth-first preorder from the root, children ascending.
    pub fn preorder(&self) -> Vec<SensorId> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![self.root];
        while let Some(u) = stack.pop() {
            out.push(u);
            stack.extend(self.children(u).iter().rev());
        }
        out
    }
}

/// Builds the communication tree for the current sensor positions.
pub fn build_topology<T: Real>(positions: &BTreeMap<SensorId, Vec2<T>>, mode: &TopologyMode<T>) -> Result<TreeTopology> {
    let nodes: BTreeSet<_> = positions.keys().copied().collect();
    if nodes.is_empty() {
        return Err(Error::Topology("at least one sensor required".into()));
    }
    match mode {
        TopologyMode::Static { root, edges } => TreeTopology::from_edges(&nodes, *root, edges, Derivation::StaticConfig),
        TopologyMode::ProximityMst { comm_radius } => {
            let edges = minimum_spanning_tree(positions, *comm_radius)?;
            let root = *nodes.iter().next().expect("non-empty");
            TreeTopology::from_edges(&nodes, root, &edges, Derivation::ProximityMst)
        }
    }
}

/// Prim's algorithm from the lowest id; ties broken by `(min id, max id)`.
fn minimum_spanning_tree<T: Real>(
    positions: &BTreeMap<SensorId, Vec2<T>>,
    radius: Option<T>,
) -> Result<Vec<(SensorId, SensorId)>> {
    let ids: Vec<_> = positions.keys().copied().collect();
    let mut in_tree = vec![false; ids.len()];
    in_tree[0] = true;
    let mut edges = Vec::with_capacity(ids.len().saturating_sub(1));
    for _ in 1..ids.len() {
        let mut best: Option<(T, (SensorId, SensorId), usize)> = None;
        for (i, &a) in ids.iter().enumerate().filter(|(i, _)| in_tree[*i]) {
            for (j, &b) in ids.iter().enumerate().filter(|(j, _)| !in_tree[*j]) {
                let d = positions[&a].distance(positions[&b]);
                if radius.is_some_and(|r| d > r) {
                    continue;
                }
                let key = (a.min(b), a.max(b));
                let better = match &best {
                    None => true,
                    Some((bd, bkey, _)) => d < *bd || (d == *bd && key < *bkey),
                };
                if better {
                    best = Some((d, key, j));
                }
                let _ = i;
            }
        }
        let Some((_, key, j)) = best else {
            return Err(Error::Topology("sensors do not form a single connected group".into()));
        };
        in_tree[j] = true;
        edges.push(key);
    }
    Ok(edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    LocalPdf,
    FusedPdf,
    DetectionCounts,
    PlanBroadcast,
}

impl MessageKind {
    pub const ALL: [MessageKind; 4] = [
        MessageKind::LocalPdf,
        MessageKind::FusedPdf,
        MessageKind::DetectionCounts,
        MessageKind::PlanBroadcast,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MessageKind::LocalPdf => "local-pdf",
            MessageKind::FusedPdf => "fused-pdf",
            MessageKind::DetectionCounts => "detection-counts",
            MessageKind::PlanBroadcast => "plan-broadcast",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRecord {
    pub round: u32,
    pub from: SensorId,
    pub to: SensorId,
    pub kind: MessageKind,
    pub payload_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LedgerTotals {
    pub messages: usize,
    pub bytes: usize,
}

/// Reliable, in-order, single-hop delivery over a [`TreeTopology`].
#[derive(Debug, Clone)]
pub struct Network {
    topology: TreeTopology,
    ledger: Vec<MessageRecord>,
}

impl Network {
    pub fn new(topology: TreeTopology) -> Self {
        Self {
            topology,
            ledger: Vec::new(),
        }
    }

    pub fn topology(&self) -> &TreeTopology {
        &self.topology
    }

    /// Swaps in a rebuilt topology (dynamic grouping) between rounds.
    pub fn set_topology(&mut self, topology: TreeTopology) {
        self.topology = topology;
    }

    /// Delivers `payload` across one tree edge and records it.
    pub fn send(&mut self, round: u32, from: SensorId, to: SensorId, kind: MessageKind, payload: &[u8]) -> Result<MessageRecord> {
        if !self.topology.adjacent(from, to) {
            return Err(Error::Routing { from, to });
        }
        let record = MessageRecord {
            round,
            from,
            to,
            kind,
            payload_bytes: payload.len(),
        };
        self.ledger.push(record);
        Ok(record)
    }

    /// Relays `payload` hop by hop along the tree path; one record per hop.
    pub fn route(&mut self, round: u32, from: SensorId, to: SensorId, kind: MessageKind, payload: &[u8]) -> Result<Vec<MessageRecord>> {
        let path = self.topology.path(from, to)?;
        path.windows(2).map(|w| self.send(round, w[0], w[1], kind, payload)).collect()
    }

    pub fn ledger(&self) -> &[MessageRecord] {
        &self.ledger
    }

    pub fn ledger_query(&self, round: Option<u32>, kind: Option<MessageKind>) -> LedgerTotals {
        self.ledger
            .iter()
            .filter(|r| round.is_none_or(|x| r.round == x) && kind.is_none_or(|k| r.kind == k))
            .fold(LedgerTotals::default(), |acc, r| LedgerTotals {
                messages: acc.messages + 1,
                bytes: acc.bytes + r.payload_bytes,
            })
    }

    /// Writes the ledger as CSV: `round,from,to,kind,bytes`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write_ledger_csv(&self.ledger, &mut w)
    }
}

pub fn write_ledger_csv<W: Write>(records: &[MessageRecord], w: &mut W) -> io::Result<()> {
    writeln!(w, "round,from,to,kind,bytes")?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.round, r.from, r.to, r.kind, r.payload_bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn positions(pts: &[(f64, f64)]) -> BTreeMap<SensorId, Vec2<f64>> {
        pts.iter().enumerate().map(|(i, &(x, y))| (i as u32, Vec2::new(x, y))).collect()
    }

    fn weight(pos: &BTreeMap<SensorId, Vec2<f64>>, edges: &[(u32, u32)]) -> f64 {
        edges.iter().map(|(a, b)| pos[a].distance(pos[b])).sum()
    }

    /// Every spanning tree by enumerating all (n-1)-edge subsets.
    fn brute_force_min_weight(pos: &BTreeMap<SensorId, Vec2<f64>>) -> f64 {
        let ids: Vec<_> = pos.keys().copied().collect();
        let all: Vec<_> = ids.iter().flat_map(|&a| ids.iter().filter(move |&&b| b > a).map(move |&b| (a, b))).collect();
        let nodes: BTreeSet<_> = ids.iter().copied().collect();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << all.len()) {
            if mask.count_ones() as usize != ids.len() - 1 {
                continue;
            }
            let edges: Vec<_> = (0..all.len()).filter(|i| mask & (1 << i) != 0).map(|i| all[i]).collect();
            if TreeTopology::from_edges(&nodes, ids[0], &edges, Derivation::StaticConfig).is_ok() {
                best = best.min(weight(pos, &edges));
            }
        }
        best
    }

    #[test]
    fn single_sensor_tree() {
        let t = build_topology(&positions(&[(1.0, 1.0)]), &TopologyMode::ProximityMst { comm_radius: None }).unwrap();
        assert_eq!(t.root(), 0);
        assert_eq!(t.len(), 1);
        assert!(t.edges().is_empty());
    }

    #[test]
    fn collinear_sensors_form_chain() {
        let pos = positions(&[(0.0, 0.0), (1.0, 0.0), (10.0, 0.0)]);
        let t = build_topology(&pos, &TopologyMode::ProximityMst { comm_radius: None }).unwrap();
        assert_eq!(t.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(weight(&pos, &t.edges()), brute_force_min_weight(&pos));
    }

    #[test]
    fn square_layout_mst_is_minimal() {
        let pos = positions(&[(0.0, 0.0), (0.0, 2.0), (2.0, 0.0), (2.0, 2.0)]);
        let t = build_topology(&pos, &TopologyMode::ProximityMst { comm_radius: None }).unwrap();
        assert_eq!(t.edges().len(), 3);
        assert!((weight(&pos, &t.edges()) - brute_force_min_weight(&pos)).abs() < 1e-12);
    }

    #[test]
    fn random_layouts_match_brute_force() {
        use rand::Rng;
        let mut rng = crate::rng::stream(99, &[]);
        for _ in 0..30 {
            let n = rng.random_range(2..6);
            let pts: Vec<_> = (0..n).map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
            let pos = positions(&pts);
            let t = build_topology(&pos, &TopologyMode::ProximityMst { comm_radius: None }).unwrap();
            assert!((weight(&pos, &t.edges()) - brute_force_min_weight(&pos)).abs() < 1e-9);
        }
    }

    #[test]
    fn radius_can_disconnect() {
        let pos = positions(&[(0.0, 0.0), (1.0, 0.0), (10.0, 0.0)]);
        let err = build_topology(&pos, &TopologyMode::ProximityMst { comm_radius: Some(5.0) });
        assert!(matches!(err, Err(Error::Topology(_))));
    }

    #[test]
    fn static_config_must_span() {
        let pos = positions(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let ok = build_topology(&pos, &TopologyMode::Static { root: 2, edges: vec![(0, 1), (1, 2)] }).unwrap();
        assert_eq!(ok.root(), 2);
        assert_eq!(ok.parent(0), Some(1));
        let missing = build_topology(&pos, &TopologyMode::Static { root: 0, edges: vec![(0, 1)] });
        assert!(missing.is_err());
        let cyclic = build_topology(&pos, &TopologyMode::Static { root: 0, edges: vec![(0, 1), (1, 0)] });
        assert!(cyclic.is_err());
    }

    #[test]
    fn paths_and_routing() {
        let nodes: BTreeSet<_> = (0..5).collect();
        // 0 - 1 - 2, 1 - 3 - 4
        let t = TreeTopology::from_edges(&nodes, 0, &[(0, 1), (1, 2), (1, 3), (3, 4)], Derivation::StaticConfig).unwrap();
        assert_eq!(t.path(2, 4).unwrap(), vec![2, 1, 3, 4]);
        assert_eq!(t.path(4, 0).unwrap(), vec![4, 3, 1, 0]);
        assert_eq!(t.path(3, 3).unwrap(), vec![3]);
        assert_eq!(t.preorder(), vec![0, 1, 2, 3, 4]);
        let mut net = Network::new(t);
        assert_eq!(net.send(0, 2, 4, MessageKind::DetectionCounts, &[0; 10]), Err(Error::Routing { from: 2, to: 4 }));
        let hops = net.route(0, 2, 4, MessageKind::DetectionCounts, &[0; 10]).unwrap();
        assert_eq!(hops.len(), 3);
        assert!(hops.iter().all(|h| h.payload_bytes == 10));
        assert!(net.route(0, 0, 0, MessageKind::DetectionCounts, &[]).unwrap().is_empty());
    }

    #[test]
    fn ledger_totals_are_sums_of_records() {
        let nodes: BTreeSet<_> = (0..3).collect();
        let t = TreeTopology::from_edges(&nodes, 0, &[(0, 1), (0, 2)], Derivation::StaticConfig).unwrap();
        let mut net = Network::new(t);
        net.send(0, 1, 0, MessageKind::LocalPdf, &[0; 7]).unwrap();
        net.send(0, 2, 0, MessageKind::LocalPdf, &[0; 9]).unwrap();
        net.send(1, 0, 2, MessageKind::FusedPdf, &[0; 4]).unwrap();
        assert_eq!(net.ledger_query(Some(0), Some(MessageKind::LocalPdf)), LedgerTotals { messages: 2, bytes: 16 });
        assert_eq!(net.ledger_query(Some(1), None), LedgerTotals { messages: 1, bytes: 4 });
        let total: usize = net.ledger().iter().map(|r| r.payload_bytes).sum();
        assert_eq!(net.ledger_query(None, None).bytes, total);
        let mut csv = Vec::new();
        net.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next(), Some("round,from,to,kind,bytes"));
        assert_eq!(text.lines().nth(1), Some("0,1,0,local-pdf,7"));
    }

    #[test]
    fn rerooting_preserves_edges() {
        let nodes: BTreeSet<_> = (0..4).collect();
        let t = TreeTopology::from_edges(&nodes, 0, &[(0, 1), (1, 2), (2, 3)], Derivation::StaticConfig).unwrap();
        let r = t.rerooted(3).unwrap();
        assert_eq!(r.root(), 3);
        assert_eq!(r.edges(), t.edges());
        assert_eq!(r.children(3), &[2]);
    }
}
