//! Graphs in compressed sparse row form, disjoint-union batching, and the
//! synthetic dataset machinery.
//!
//! A [`Graph`] stores, for every node `v`, the sorted list of neighbors that
//! send messages to `v`. Undirected edges occupy two slots (one per
//! direction); self loops are dropped at construction. Features and targets
//! ride along so a graph is a complete training example.

pub mod generate;
pub mod io;

use serde::{Deserialize, Serialize};
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge endpoint {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("{what} has {got} entries, expected {want}")]
    FeatureLength {
        what: &'static str,
        got: usize,
        want: usize,
    },
    #[error("graphs in a batch must agree on schema: {detail}")]
    SchemaMismatch { detail: String },
    #[error("cannot batch zero graphs")]
    EmptyBatch,
    #[error("invalid generator configuration: {detail}")]
    Config { detail: String },
    #[error("dataset io failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

/// Node or edge features: either categorical codes (embedding lookups) or
/// dense rows of `dim` floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Features {
    Codes(Vec<usize>),
    Dense { dim: usize, values: Vec<f64> },
}

impl Features {
    /// Number of items (nodes or edge slots) the features describe.
    pub fn len(&self) -> usize {
        match self {
            Features::Codes(c) => c.len(),
            Features::Dense { dim, values } => {
                if *dim == 0 {
                    0
                } else {
                    values.len() / dim
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Schema token used to verify that batched graphs agree.
    fn schema(&self) -> String {
        match self {
            Features::Codes(_) => "codes".to_string(),
            Features::Dense { dim, .. } => format!("dense[{dim}]"),
        }
    }
}

/// Ground truth attached to a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// One class per node.
    NodeLabels(Vec<usize>),
    /// One regression value for the whole graph.
    GraphScalar(f64),
    /// One class for the whole graph.
    GraphLabel(usize),
    /// One class per CSR slot (undirected edges carry the label twice).
    EdgeLabels(Vec<usize>),
}

impl Target {
    fn schema(&self) -> &'static str {
        match self {
            Target::NodeLabels(_) => "node-labels",
            Target::GraphScalar(_) => "graph-scalar",
            Target::GraphLabel(_) => "graph-label",
            Target::EdgeLabels(_) => "edge-labels",
        }
    }
}

/// What a model is asked to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "node-class")]
    NodeClass,
    #[serde(rename = "graph-class")]
    GraphClass,
    #[serde(rename = "graph-regress")]
    GraphRegress,
    #[serde(rename = "edge-class")]
    EdgeClass,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskKind::NodeClass => "node-class",
            TaskKind::GraphClass => "graph-class",
            TaskKind::GraphRegress => "graph-regress",
            TaskKind::EdgeClass => "edge-class",
        };
        f.write_str(s)
    }
}

/// One graph in CSR form with its features and target.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    /// `offsets[v]..offsets[v+1]` indexes the neighbor slots of `v`.
    offsets: Vec<usize>,
    /// Message sources, sorted within each row.
    neighbors: Vec<usize>,
    /// Self loops found (and removed) in the input edge list.
    dropped_self_loops: usize,
    pub node_feat: Features,
    /// Edge features aligned with the neighbor slots.
    pub edge_feat: Option<Features>,
    pub target: Target,
}

impl Graph {
    /// Builds the CSR structure from an edge list.
    ///
    /// With `undirected = true` each input pair `(u, v)` occupies a slot in
    /// both rows. Self loops are dropped (counted in
    /// [`Graph::dropped_self_loops`]); duplicate pairs collapse to a single
    /// slot keeping the first edge feature. `edge_feat` is indexed by input
    /// edge and expanded to slots here.
    pub fn from_edges(
        n_nodes: usize,
        edges: &[(usize, usize)],
        undirected: bool,
        node_feat: Features,
        edge_feat: Option<Features>,
        target: Target,
    ) -> Result<Graph, GraphError> {
        if node_feat.len() != n_nodes {
            return Err(GraphError::FeatureLength {
                what: "node features",
                got: node_feat.len(),
                want: n_nodes,
            });
        }
        if let Some(ef) = &edge_feat {
            if ef.len() != edges.len() {
                return Err(GraphError::FeatureLength {
                    what: "edge features",
                    got: ef.len(),
                    want: edges.len(),
                });
            }
        }
        let mut dropped = 0usize;
        // (dst, src, input edge index)
        let mut slots: Vec<(usize, usize, usize)> = Vec::with_capacity(edges.len() * 2);
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= n_nodes {
                return Err(GraphError::NodeOutOfRange { node: u, n: n_nodes });
            }
            if v >= n_nodes {
                return Err(GraphError::NodeOutOfRange { node: v, n: n_nodes });
            }
            if u == v {
                dropped += 1;
                continue;
            }
            slots.push((v, u, i));
            if undirected {
                slots.push((u, v, i));
            }
        }
        slots.sort_unstable();
        slots.dedup_by_key(|&mut (d, s, _)| (d, s));
        let mut offsets = vec![0usize; n_nodes + 1];
        for &(d, _, _) in &slots {
            offsets[d + 1] += 1;
        }
        for v in 0..n_nodes {
            offsets[v + 1] += offsets[v];
        }
        let neighbors: Vec<usize> = slots.iter().map(|&(_, s, _)| s).collect();
        let edge_feat = match edge_feat {
            None => None,
            Some(Features::Codes(c)) => {
                Some(Features::Codes(slots.iter().map(|&(_, _, i)| c[i]).collect()))
            }
            Some(Features::Dense { dim, values }) => {
                let mut out = Vec::with_capacity(slots.len() * dim);
                for &(_, _, i) in &slots {
                    out.extend_from_slice(&values[i * dim..(i + 1) * dim]);
                }
                Some(Features::Dense { dim, values: out })
            }
        };
        if let Target::NodeLabels(l) = &target {
            if l.len() != n_nodes {
                return Err(GraphError::FeatureLength {
                    what: "node labels",
                    got: l.len(),
                    want: n_nodes,
                });
            }
        }
        Ok(Graph {
            n_nodes,
            offsets,
            neighbors,
            dropped_self_loops: dropped,
            node_feat,
            edge_feat,
            target,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Number of neighbor slots (an undirected edge counts twice).
    pub fn n_slots(&self) -> usize {
        self.neighbors.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn dropped_self_loops(&self) -> usize {
        self.dropped_self_loops
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Neighbors sending messages to `v`.
    pub fn row(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    /// True if `u` is a neighbor of `v`.
    pub fn has_edge(&self, v: usize, u: usize) -> bool {
        self.row(v).binary_search(&u).is_ok()
    }

    /// Canonical undirected edge list: pairs `(v, u)` with `v < u`, sorted.
    /// Assumes the slot structure is symmetric, which every generator and
    /// the loader guarantee.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.neighbors.len() / 2);
        for v in 0..self.n_nodes {
            for &u in self.row(v) {
                if v < u {
                    out.push((v, u));
                }
            }
        }
        out
    }

    /// Relabels nodes by `perm` (new id of node `v` is `perm[v]`), permuting
    /// features and per-node/per-slot payloads consistently.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph, GraphError> {
        if perm.len() != self.n_nodes {
            return Err(GraphError::FeatureLength {
                what: "permutation",
                got: perm.len(),
                want: self.n_nodes,
            });
        }
        let edges: Vec<(usize, usize)> = self
            .undirected_edges()
            .iter()
            .map(|&(v, u)| (perm[v], perm[u]))
            .collect();
        let mut inv = vec![0usize; self.n_nodes];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let node_feat = match &self.node_feat {
            Features::Codes(c) => Features::Codes((0..self.n_nodes).map(|v| c[inv[v]]).collect()),
            Features::Dense { dim, values } => {
                let mut out = Vec::with_capacity(values.len());
                for v in 0..self.n_nodes {
                    out.extend_from_slice(&values[inv[v] * dim..(inv[v] + 1) * dim]);
                }
                Features::Dense {
                    dim: *dim,
                    values: out,
                }
            }
        };
        // Edge features keyed by the canonical list above.
        let edge_feat = match &self.edge_feat {
            None => None,
            Some(f) => {
                let old_edges = self.undirected_edges();
                Some(match f {
                    Features::Codes(c) => Features::Codes(
                        old_edges
                            .iter()
                            .map(|&(v, u)| {
                                let slot = self.slot_of(v, u);
                                c[slot]
                            })
                            .collect(),
                    ),
                    Features::Dense { dim, values } => {
                        let mut out = Vec::new();
                        for &(v, u) in &old_edges {
                            let slot = self.slot_of(v, u);
                            out.extend_from_slice(&values[slot * dim..(slot + 1) * dim]);
                        }
                        Features::Dense {
                            dim: *dim,
                            values: out,
                        }
                    }
                })
            }
        };
        let target = match &self.target {
            Target::NodeLabels(l) => {
                Target::NodeLabels((0..self.n_nodes).map(|v| l[inv[v]]).collect())
            }
            Target::GraphScalar(s) => Target::GraphScalar(*s),
            Target::GraphLabel(l) => Target::GraphLabel(*l),
            Target::EdgeLabels(l) => {
                // Keyed per input edge below, expanded again by from_edges.
                let old_edges = self.undirected_edges();
                Target::EdgeLabels(
                    old_edges
                        .iter()
                        .map(|&(v, u)| l[self.slot_of(v, u)])
                        .collect(),
                )
            }
        };
        // Edge-label targets need per-slot expansion after the rebuild.
        match target {
            Target::EdgeLabels(per_edge) => {
                let g = Graph::from_edges(
                    self.n_nodes,
                    &edges,
                    true,
                    node_feat,
                    edge_feat,
                    Target::EdgeLabels(vec![]),
                )?;
                let labels = expand_edge_labels(&g, &edges, &per_edge);
                Ok(Graph {
                    target: Target::EdgeLabels(labels),
                    ..g
                })
            }
            t => Graph::from_edges(self.n_nodes, &edges, true, node_feat, edge_feat, t),
        }
    }

    /// Slot index of neighbor `u` within row `v`.
    pub fn slot_of(&self, v: usize, u: usize) -> usize {
        let row = self.row(v);
        self.offsets[v] + row.binary_search(&u).expect("edge exists")
    }
}

/// Expands per-undirected-edge labels to per-slot labels of `g`.
pub(crate) fn expand_edge_labels(
    g: &Graph,
    edges: &[(usize, usize)],
    per_edge: &[usize],
) -> Vec<usize> {
    let mut labels = vec![0usize; g.n_slots()];
    for (&(u, v), &y) in edges.iter().zip(per_edge) {
        labels[g.slot_of(u, v)] = y;
        labels[g.slot_of(v, u)] = y;
    }
    labels
}

/// Targets of a whole batch, concatenated in graph order.
#[derive(Clone, Debug, PartialEq)]
pub enum BatchTargets {
    NodeLabels(Vec<usize>),
    GraphScalars(Vec<f64>),
    GraphLabels(Vec<usize>),
    EdgeLabels(Vec<usize>),
}

/// Disjoint union of graphs: node ids of graph `k` are shifted by the total
/// node count of graphs `0..k`, so adjacency and features simply concatenate.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub n_nodes: usize,
    pub n_graphs: usize,
    pub offsets: Vec<usize>,
    pub neighbors: Vec<usize>,
    /// Graph id of every node; nondecreasing by construction.
    pub node_segment: Vec<usize>,
    pub node_feat: Features,
    pub edge_feat: Option<Features>,
    pub targets: BatchTargets,
}

impl GraphBatch {
    pub fn from_graphs(graphs: &[Graph]) -> Result<GraphBatch, GraphError> {
        if graphs.is_empty() {
            return Err(GraphError::EmptyBatch);
        }
        let first = &graphs[0];
        for g in graphs {
            if g.node_feat.schema() != first.node_feat.schema() {
                return Err(GraphError::SchemaMismatch {
                    detail: format!(
                        "node features {} vs {}",
                        g.node_feat.schema(),
                        first.node_feat.schema()
                    ),
                });
            }
            let (a, b) = (
                g.edge_feat.as_ref().map(|f| f.schema()),
                first.edge_feat.as_ref().map(|f| f.schema()),
            );
            if a != b {
                return Err(GraphError::SchemaMismatch {
                    detail: format!("edge features {a:?} vs {b:?}"),
                });
            }
            if g.target.schema() != first.target.schema() {
                return Err(GraphError::SchemaMismatch {
                    detail: format!("targets {} vs {}", g.target.schema(), first.target.schema()),
                });
            }
        }
        let n_nodes: usize = graphs.iter().map(|g| g.n_nodes).sum();
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        offsets.push(0usize);
        let mut neighbors = Vec::new();
        let mut node_segment = Vec::with_capacity(n_nodes);
        let mut base = 0usize;
        for (k, g) in graphs.iter().enumerate() {
            for v in 0..g.n_nodes {
                for &u in g.row(v) {
                    neighbors.push(base + u);
                }
                offsets.push(neighbors.len());
                node_segment.push(k);
            }
            base += g.n_nodes;
        }
        let node_feat = concat_features(graphs.iter().map(|g| &g.node_feat))?;
        let edge_feat = match &first.edge_feat {
            None => None,
            Some(_) => Some(concat_features(
                graphs.iter().map(|g| g.edge_feat.as_ref().unwrap()),
            )?),
        };
        let targets = match &first.target {
            Target::NodeLabels(_) => BatchTargets::NodeLabels(
                graphs
                    .iter()
                    .flat_map(|g| match &g.target {
                        Target::NodeLabels(l) => l.clone(),
                        _ => unreachable!(),
                    })
                    .collect(),
            ),
            Target::GraphScalar(_) => BatchTargets::GraphScalars(
                graphs
                    .iter()
                    .map(|g| match &g.target {
                        Target::GraphScalar(s) => *s,
                        _ => unreachable!(),
                    })
                    .collect(),
            ),
            Target::GraphLabel(_) => BatchTargets::GraphLabels(
                graphs
                    .iter()
                    .map(|g| match &g.target {
                        Target::GraphLabel(l) => *l,
                        _ => unreachable!(),
                    })
                    .collect(),
            ),
            Target::EdgeLabels(_) => BatchTargets::EdgeLabels(
                graphs
                    .iter()
                    .flat_map(|g| match &g.target {
                        Target::EdgeLabels(l) => l.clone(),
                        _ => unreachable!(),
                    })
                    .collect(),
            ),
        };
        Ok(GraphBatch {
            n_nodes,
            n_graphs: graphs.len(),
            offsets,
            neighbors,
            node_segment,
            node_feat,
            edge_feat,
            targets,
        })
    }

    pub fn n_slots(&self) -> usize {
        self.neighbors.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }
}

fn concat_features<'a>(
    parts: impl Iterator<Item = &'a Features>,
) -> Result<Features, GraphError> {
    let mut out: Option<Features> = None;
    for p in parts {
        match (&mut out, p) {
            (None, _) => out = Some(p.clone()),
            (Some(Features::Codes(acc)), Features::Codes(c)) => acc.extend_from_slice(c),
            (
                Some(Features::Dense { values: acc, .. }),
                Features::Dense { values, .. },
            ) => acc.extend_from_slice(values),
            _ => {
                return Err(GraphError::SchemaMismatch {
                    detail: "mixed feature kinds".to_string(),
                })
            }
        }
    }
    Ok(out.expect("at least one part"))
}

/// Topology of a batch in the shape the tape operations want: per-slot
/// source/destination arrays behind `Rc` so gather/scatter ops share them.
#[derive(Clone, Debug)]
pub struct BatchView {
    pub n_nodes: usize,
    pub n_graphs: usize,
    /// Message source of each slot.
    pub src: Rc<[usize]>,
    /// Message destination (CSR row) of each slot.
    pub dst: Rc<[usize]>,
    pub node_segment: Rc<[usize]>,
    pub deg: Vec<usize>,
}

impl BatchView {
    pub fn new(batch: &GraphBatch) -> Self {
        let mut dst = Vec::with_capacity(batch.n_slots());
        for v in 0..batch.n_nodes {
            for _ in batch.offsets[v]..batch.offsets[v + 1] {
                dst.push(v);
            }
        }
        let deg = (0..batch.n_nodes).map(|v| batch.degree(v)).collect();
        BatchView {
            n_nodes: batch.n_nodes,
            n_graphs: batch.n_graphs,
            src: Rc::from(batch.neighbors.clone()),
            dst: Rc::from(dst),
            node_segment: Rc::from(batch.node_segment.clone()),
            deg,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.src.len()
    }
}

/// A train/val/test partition of generated or loaded graphs.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<Graph>,
    pub val: Vec<Graph>,
    pub test: Vec<Graph>,
    pub task: TaskKind,
    pub meta: DatasetMeta,
}

/// Provenance carried in the dataset file header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub generator: String,
    pub seed: u64,
}

pub const SCHEMA_VERSION: u32 = 1;
