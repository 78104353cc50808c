//! Instantaneous Topological Map: an incremental self-organizing map that
//! partitions the latent space into regions.
//!
//! Nodes carry a generic payload so the map can own per-region state (local
//! models and error statistics in training, `()` in tests). Node weights are
//! fixed at creation; only the node and edge sets change.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::io::Write;

use crate::error::{Error, Result};

pub type NodeId = u64;

#[derive(Clone, Debug)]
pub struct ItmNode<P> {
    pub id: NodeId,
    pub weight: Vec<f64>,
    pub neighbors: BTreeSet<NodeId>,
    pub payload: P,
}

#[derive(Clone, Debug)]
pub struct ItmMap<P> {
    nodes: BTreeMap<NodeId, ItmNode<P>>,
    e_max: f64,
    next_id: NodeId,
}

/// Outcome of one [`ItmMap::adapt`] call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adaptation {
    /// Node that owns the stimulus after adaptation.
    pub owner: NodeId,
    pub created: bool,
    pub removed: Vec<NodeId>,
}

/// Per-node numbers included in a snapshot export.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeSummary {
    pub mean_error: f64,
    pub learning_progress: f64,
    pub updates: u64,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// True iff `x` lies strictly inside the hypersphere with diameter `ab`.
pub fn thales_inside(a: &[f64], b: &[f64], x: &[f64]) -> bool {
    let dot: f64 = x.iter().zip(a).zip(b).map(|((x, a), b)| (x - a) * (x - b)).sum();
    dot < 0.0
}

impl<P> ItmMap<P> {
    /// Two connected nodes at the first two stimuli.
    pub fn initialize(first: &[f64], second: &[f64], e_max: f64, mut payload: impl FnMut() -> P) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::dims("second seed stimulus", first.len(), second.len()));
        }
        if !first.iter().chain(second).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { layer: 0 });
        }
        let mut map = Self::empty(e_max);
        let a = map.insert(first.to_vec(), payload());
        let b = map.insert(second.to_vec(), payload());
        map.connect(a, b);
        Ok(map)
    }

    /// A map without nodes; only useful for building fixtures node by node.
    pub fn empty(e_max: f64) -> Self {
        Self {
            nodes: BTreeMap::new(),
            e_max,
            next_id: 0,
        }
    }

    pub fn insert(&mut self, weight: Vec<f64>, payload: P) -> NodeId {
        let id = self.next_id;
        self.next_id += 1;
        self.nodes.insert(
            id,
            ItmNode {
                id,
                weight,
                neighbors: BTreeSet::new(),
                payload,
            },
        );
        id
    }

    pub fn connect(&mut self, a: NodeId, b: NodeId) {
        if a == b || !self.nodes.contains_key(&a) || !self.nodes.contains_key(&b) {
            return;
        }
        self.nodes.get_mut(&a).unwrap().neighbors.insert(b);
        self.nodes.get_mut(&b).unwrap().neighbors.insert(a);
    }

    fn disconnect(&mut self, a: NodeId, b: NodeId) {
        if let Some(n) = self.nodes.get_mut(&a) {
            n.neighbors.remove(&b);
        }
        if let Some(n) = self.nodes.get_mut(&b) {
            n.neighbors.remove(&a);
        }
    }

    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.values().map(|n| n.neighbors.len()).sum::<usize>() / 2
    }

    pub fn node(&self, id: NodeId) -> Option<&ItmNode<P>> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut ItmNode<P>> {
        self.nodes.get_mut(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ItmNode<P>> + '_ {
        self.nodes.values()
    }

    pub fn payloads_mut(&mut self) -> impl Iterator<Item = (NodeId, &mut P)> + '_ {
        self.nodes.iter_mut().map(|(&id, n)| (id, &mut n.payload))
    }

    /// Nearest and second-nearest node by squared distance; ties go to the
    /// smaller id.
    pub fn find_matching(&self, x: &[f64]) -> Result<(NodeId, Option<NodeId>)> {
        let mut best: Option<(f64, NodeId)> = None;
        let mut second: Option<(f64, NodeId)> = None;
        for node in self.nodes.values() {
            if node.weight.len() != x.len() {
                return Err(Error::dims("map query", node.weight.len(), x.len()));
            }
            let d = squared_distance(x, &node.weight);
            match best {
                Some((bd, _)) if d >= bd => {
                    if second.is_none_or(|(sd, _)| d < sd) {
                        second = Some((d, node.id));
                    }
                }
                _ => {
                    second = best;
                    best = Some((d, node.id));
                }
            }
        }
        let (_, n) = best.ok_or(Error::EmptyMap)?;
        Ok((n, second.map(|(_, id)| id)))
    }

    pub fn nearest(&self, x: &[f64]) -> Result<NodeId> {
        self.find_matching(x).map(|(n, _)| n)
    }

    /// Matching, edge adaptation and node adaptation for one stimulus.
    pub fn adapt(&mut self, x: &[f64], mut payload: impl FnMut() -> P) -> Result<Adaptation> {
        let (n, second) = self.find_matching(x)?;
        let mut removed = Vec::new();

        let Some(n2) = second else {
            // Single-node map: only node creation can apply.
            let created = squared_distance(x, &self.nodes[&n].weight) > self.e_max;
            let owner = if created {
                let v = self.insert(x.to_vec(), payload());
                self.connect(v, n);
                v
            } else {
                n
            };
            return Ok(Adaptation {
                owner,
                created,
                removed,
            });
        };

        self.connect(n, n2);
        let neighbors: Vec<NodeId> = self.nodes[&n].neighbors.iter().copied().collect();
        for m in neighbors {
            let inside = thales_inside(&self.nodes[&n2].weight, &self.nodes[&n].weight, &self.nodes[&m].weight);
            if inside {
                self.disconnect(n, m);
                if self.nodes[&m].neighbors.is_empty() {
                    self.nodes.remove(&m);
                    removed.push(m);
                }
            }
        }

        let w_n = &self.nodes[&n].weight;
        let mut created = false;
        let mut owner = n;
        if let Some(w_n2) = self.nodes.get(&n2).map(|node| &node.weight) {
            let outside: f64 = w_n.iter().zip(w_n2).zip(x).map(|((a, b), x)| (a - x) * (b - x)).sum();
            if outside > 0.0 && squared_distance(x, w_n) > self.e_max {
                let v = self.insert(x.to_vec(), payload());
                self.connect(v, n);
                owner = v;
                created = true;
            }
        }
        Ok(Adaptation {
            owner,
            created,
            removed,
        })
    }

    /// Structural audit: symmetric adjacency, no self-edges, every edge
    /// endpoint present, finite weights of one dimension.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let dim = self.nodes.values().next().map(|n| n.weight.len());
        for (&id, node) in &self.nodes {
            if node.id != id {
                return Err(format!("node keyed {id} reports id {}", node.id));
            }
            if Some(node.weight.len()) != dim {
                return Err(format!("node {id} has weight dimension {}", node.weight.len()));
            }
            if !node.weight.iter().all(|v| v.is_finite()) {
                return Err(format!("node {id} has a non-finite weight"));
            }
            for &m in &node.neighbors {
                if m == id {
                    return Err(format!("node {id} has a self-edge"));
                }
                match self.nodes.get(&m) {
                    None => return Err(format!("edge {id}-{m} points to a missing node")),
                    Some(other) if !other.neighbors.contains(&id) => {
                        return Err(format!("edge {id}-{m} is not symmetric"))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Digest of node ids, weights and edges; payloads are ignored.
    pub fn structure_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in self.nodes.values() {
            node.id.hash(&mut h);
            for w in &node.weight {
                w.to_bits().hash(&mut h);
            }
            node.neighbors.hash(&mut h);
        }
        h.finish()
    }

    /// Text export:
    ///
    /// ```text
    /// # itm-snapshot 1
    /// nodes <count> edges <count> e_max <value>
    /// node <id> mean_error <v> learning_progress <v> updates <n> weight <w0> <w1> ...
    /// edge <a> <b>
    /// ```
    ///
    /// Each edge is listed once with `a < b`. Nodes without statistics print
    /// zeros.
    pub fn write_snapshot<W: Write>(&self, mut out: W, summary: impl Fn(&P) -> Option<NodeSummary>) -> Result<()> {
        writeln!(out, "# itm-snapshot 1")?;
        writeln!(
            out,
            "nodes {} edges {} e_max {}",
            self.len(),
            self.edge_count(),
            self.e_max
        )?;
        for node in self.nodes.values() {
            let s = summary(&node.payload).unwrap_or(NodeSummary {
                mean_error: 0.0,
                learning_progress: 0.0,
                updates: 0,
            });
            write!(
                out,
                "node {} mean_error {:e} learning_progress {:e} updates {} weight",
                node.id, s.mean_error, s.learning_progress, s.updates
            )?;
            for w in &node.weight {
                write!(out, " {w:e}")?;
            }
            writeln!(out)?;
        }
        for node in self.nodes.values() {
            for &m in node.neighbors.range(node.id + 1..) {
                writeln!(out, "edge {} {}", node.id, m)?;
            }
        }
        Ok(())
    }
}
