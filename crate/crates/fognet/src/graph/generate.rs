//! Synthetic dataset generators.
//!
//! Every generator is a pure function of its config (seed included): the
//! same config always produces byte-identical splits. Train/val/test draw
//! from sub-seeds derived once from the master seed, so the splits stay
//! disjoint streams no matter how many graphs each contains.

use super::{
    expand_edge_labels, DatasetMeta, DatasetSplit, Features, Graph, GraphError, Target, TaskKind,
    SCHEMA_VERSION,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Node counts per split shared by every generator config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            n_train: 100,
            n_val: 20,
            n_test: 20,
        }
    }
}

impl SplitSizes {
    fn validate(&self) -> Result<(), GraphError> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(GraphError::Config {
                detail: "every split needs at least one graph".to_string(),
            });
        }
        Ok(())
    }
}

fn split_rngs(seed: u64) -> [ChaCha8Rng; 3] {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    [(); 3].map(|_| ChaCha8Rng::seed_from_u64(master.gen()))
}

fn check_prob(name: &str, p: f64) -> Result<(), GraphError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GraphError::Config {
            detail: format!("{name} = {p} is not a probability"),
        });
    }
    Ok(())
}

fn build_split(
    sizes: SplitSizes,
    seed: u64,
    generator: &str,
    task: TaskKind,
    mut gen_one: impl FnMut(&mut ChaCha8Rng, bool) -> Result<Graph, GraphError>,
) -> Result<DatasetSplit, GraphError> {
    let [mut tr, mut va, mut te] = split_rngs(seed);
    let mut make = |rng: &mut ChaCha8Rng, n: usize| -> Result<Vec<Graph>, GraphError> {
        (0..n).map(|_| gen_one(rng, false)).collect()
    };
    Ok(DatasetSplit {
        train: make(&mut tr, sizes.n_train)?,
        val: make(&mut va, sizes.n_val)?,
        test: make(&mut te, sizes.n_test)?,
        task,
        meta: DatasetMeta {
            schema_version: SCHEMA_VERSION,
            generator: generator.to_string(),
            seed,
        },
    })
}

// ── stochastic block models ─────────────────────────────────────────────

/// Block-model graphs with one planted extra block; the task is to label
/// the planted nodes. Node features are uniform codes from `{0, 1, 2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbmPatternConfig {
    #[serde(default)]
    pub sizes: SplitSizes,
    /// Background node count; `block_sizes` must sum to this.
    pub nodes_per_graph: usize,
    pub block_sizes: Vec<usize>,
    /// Edge probability inside a block (and inside the planted pattern).
    pub p_intra: f64,
    /// Edge probability between different blocks (and pattern↔background).
    pub p_inter: f64,
    /// Nodes in the planted block, appended after the background.
    pub pattern_size: usize,
    /// Add random edges until every node reaches this degree (0 = off).
    /// Attention layers need ≥ 1 since they cannot aggregate nothing.
    pub min_degree: usize,
    pub seed: u64,
}

impl Default for SbmPatternConfig {
    fn default() -> Self {
        SbmPatternConfig {
            sizes: SplitSizes::default(),
            nodes_per_graph: 30,
            block_sizes: vec![6; 5],
            p_intra: 0.5,
            p_inter: 0.2,
            pattern_size: 10,
            min_degree: 0,
            seed: 0,
        }
    }
}

/// Number of node-feature codes the pattern generator emits.
pub const PATTERN_VOCAB: usize = 3;

pub fn sbm_pattern(cfg: &SbmPatternConfig) -> Result<DatasetSplit, GraphError> {
    cfg.sizes.validate()?;
    check_prob("p_intra", cfg.p_intra)?;
    check_prob("p_inter", cfg.p_inter)?;
    let bg: usize = cfg.block_sizes.iter().sum();
    if bg != cfg.nodes_per_graph || cfg.block_sizes.iter().any(|&b| b == 0) {
        return Err(GraphError::Config {
            detail: format!(
                "block_sizes sum to {bg}, expected nodes_per_graph = {}",
                cfg.nodes_per_graph
            ),
        });
    }
    let cfg = cfg.clone();
    build_split(
        cfg.sizes,
        cfg.seed,
        "sbm_pattern",
        TaskKind::NodeClass,
        move |rng, _| {
            let n = cfg.nodes_per_graph + cfg.pattern_size;
            // block id per node; the pattern is one more block.
            let mut block = Vec::with_capacity(n);
            for (b, &size) in cfg.block_sizes.iter().enumerate() {
                block.extend(std::iter::repeat(b).take(size));
            }
            let pattern_block = cfg.block_sizes.len();
            block.extend(std::iter::repeat(pattern_block).take(cfg.pattern_size));
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    let p = if block[u] == block[v] {
                        cfg.p_intra
                    } else {
                        cfg.p_inter
                    };
                    if rng.gen_bool(p) {
                        edges.push((u, v));
                    }
                }
            }
            repair_min_degree(n, &mut edges, cfg.min_degree, rng);
            let codes = (0..n).map(|_| rng.gen_range(0..PATTERN_VOCAB)).collect();
            let labels = (0..n).map(|v| usize::from(block[v] == pattern_block)).collect();
            Graph::from_edges(
                n,
                &edges,
                true,
                Features::Codes(codes),
                None,
                Target::NodeLabels(labels),
            )
        },
    )
}

/// Block-model graphs where each block is a class; exactly one node per
/// block reveals its class through its feature code (`block + 1`), all
/// other nodes carry code 0. The task is to classify every node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbmClusterConfig {
    #[serde(default)]
    pub sizes: SplitSizes,
    pub n_communities: usize,
    pub nodes_per_graph: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub min_degree: usize,
    pub seed: u64,
}

impl Default for SbmClusterConfig {
    fn default() -> Self {
        SbmClusterConfig {
            sizes: SplitSizes::default(),
            n_communities: 6,
            nodes_per_graph: 36,
            p_intra: 0.55,
            p_inter: 0.25,
            min_degree: 0,
            seed: 0,
        }
    }
}

pub fn sbm_cluster(cfg: &SbmClusterConfig) -> Result<DatasetSplit, GraphError> {
    cfg.sizes.validate()?;
    check_prob("p_intra", cfg.p_intra)?;
    check_prob("p_inter", cfg.p_inter)?;
    if cfg.n_communities < 2 {
        return Err(GraphError::Config {
            detail: "need at least two communities".to_string(),
        });
    }
    if cfg.nodes_per_graph < cfg.n_communities {
        return Err(GraphError::Config {
            detail: format!(
                "{} communities cannot fit in {} nodes",
                cfg.n_communities, cfg.nodes_per_graph
            ),
        });
    }
    let cfg = cfg.clone();
    build_split(
        cfg.sizes,
        cfg.seed,
        "sbm_cluster",
        TaskKind::NodeClass,
        move |rng, _| {
            let (n, k) = (cfg.nodes_per_graph, cfg.n_communities);
            // Even sizes, remainder spread over the first blocks.
            let mut community = Vec::with_capacity(n);
            for c in 0..k {
                let size = n / k + usize::from(c < n % k);
                community.extend(std::iter::repeat(c).take(size));
            }
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    let p = if community[u] == community[v] {
                        cfg.p_intra
                    } else {
                        cfg.p_inter
                    };
                    if rng.gen_bool(p) {
                        edges.push((u, v));
                    }
                }
            }
            repair_min_degree(n, &mut edges, cfg.min_degree, rng);
            // Reveal one representative per community.
            let mut codes = vec![0usize; n];
            for c in 0..k {
                let members: Vec<usize> = (0..n).filter(|&v| community[v] == c).collect();
                let pick = members[rng.gen_range(0..members.len())];
                codes[pick] = c + 1;
            }
            Graph::from_edges(
                n,
                &edges,
                true,
                Features::Codes(codes),
                None,
                Target::NodeLabels(community.clone()),
            )
        },
    )
}

fn repair_min_degree(
    n: usize,
    edges: &mut Vec<(usize, usize)>,
    min_degree: usize,
    rng: &mut ChaCha8Rng,
) {
    if min_degree == 0 || n < 2 {
        return;
    }
    let mut deg = vec![0usize; n];
    let mut have: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
    for &(u, v) in edges.iter() {
        if u != v && have.insert((u.min(v), u.max(v))) {
            deg[u] += 1;
            deg[v] += 1;
        }
    }
    for v in 0..n {
        while deg[v] < min_degree && deg[v] < n - 1 {
            let u = rng.gen_range(0..n);
            if u == v || have.contains(&(u.min(v), u.max(v))) {
                continue;
            }
            have.insert((u.min(v), u.max(v)));
            edges.push((v.min(u), v.max(u)));
            deg[v] += 1;
            deg[u] += 1;
        }
    }
}

// ── second-order probe task ─────────────────────────────────────────────

/// Star graphs labeled by the sign of the inner product between a node's
/// own features and the sum of its neighbors' features.
///
/// First-order aggregation provably cannot separate these: every graph
/// plants two mirrored stars whose centers see the *same* neighbor sum but
/// carry opposite features, hence opposite labels. Any function of the
/// aggregated neighborhood alone gets at least one of them wrong.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecondOrderConfig {
    #[serde(default)]
    pub sizes: SplitSizes,
    /// Stars are added until the graph reaches this many nodes.
    pub nodes_per_graph: usize,
    pub seed: u64,
}

impl Default for SecondOrderConfig {
    fn default() -> Self {
        SecondOrderConfig {
            sizes: SplitSizes::default(),
            nodes_per_graph: 24,
            seed: 0,
        }
    }
}

/// Feature dimension of the probe task. Four dimensions put the product
/// decision surface out of easy reach of small pointwise heads, while a
/// correlation aggregator still represents it exactly.
pub const SECOND_ORDER_DIM: usize = 4;

/// The labeling rule: positive iff `⟨x, Σ neighbors⟩ > 0`.
pub fn second_order_label(x: &[f64], neighbor_sum: &[f64]) -> usize {
    let dot: f64 = x.iter().zip(neighbor_sum).map(|(a, b)| a * b).sum();
    usize::from(dot > 0.0)
}

pub fn second_order(cfg: &SecondOrderConfig) -> Result<DatasetSplit, GraphError> {
    cfg.sizes.validate()?;
    if cfg.nodes_per_graph < 8 {
        return Err(GraphError::Config {
            detail: "need at least 8 nodes for the two mirrored stars".to_string(),
        });
    }
    let cfg = cfg.clone();
    build_split(
        cfg.sizes,
        cfg.seed,
        "second_order",
        TaskKind::NodeClass,
        move |rng, _| {
            let d = SECOND_ORDER_DIM;
            let mut feats: Vec<Vec<f64>> = Vec::new();
            let mut edges: Vec<(usize, usize)> = Vec::new();
            let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            // The mirrored pair: shared leaves, centers h and −h. Both
            // centers aggregate the same neighbor sum s; keep ⟨h, s⟩ away
            // from zero so their labels provably differ.
            let k = rng.gen_range(2..=4usize);
            // Redraw leaves and center together: a leaf sum near the origin
            // admits no valid center, so resampling only `h` could spin
            // forever.
            let (leaves, h) = loop {
                let leaves: Vec<Vec<f64>> = (0..k).map(|_| sample(rng)).collect();
                let mut s = vec![0.0f64; d];
                for l in &leaves {
                    for (si, li) in s.iter_mut().zip(l) {
                        *si += li;
                    }
                }
                let h = sample(rng);
                let dot: f64 = h.iter().zip(&s).map(|(a, b)| a * b).sum();
                if dot.abs() > 0.1 {
                    break (leaves, h);
                }
            };
            let mirror: Vec<f64> = h.iter().map(|x| -x).collect();
            for center_feat in [h, mirror] {
                let c = feats.len();
                feats.push(center_feat);
                for l in &leaves {
                    feats.push(l.clone());
                    edges.push((c, feats.len() - 1));
                }
            }
            // Fill with ordinary random stars.
            while feats.len() < cfg.nodes_per_graph {
                let k = rng.gen_range(2..=4usize);
                let c = feats.len();
                feats.push(sample(rng));
                for _ in 0..k {
                    feats.push(sample(rng));
                    edges.push((c, feats.len() - 1));
                }
            }
            let n = feats.len();
            let mut nsum = vec![vec![0.0f64; d]; n];
            for &(u, v) in &edges {
                for i in 0..d {
                    nsum[u][i] += feats[v][i];
                    nsum[v][i] += feats[u][i];
                }
            }
            let labels = (0..n)
                .map(|v| second_order_label(&feats[v], &nsum[v]))
                .collect();
            Graph::from_edges(
                n,
                &edges,
                true,
                Features::Dense {
                    dim: SECOND_ORDER_DIM,
                    values: feats.into_iter().flatten().collect(),
                },
                None,
                Target::NodeLabels(labels),
            )
        },
    )
}

// ── molecule-shaped regression ──────────────────────────────────────────

/// Connected sparse graphs with categorical node ("atom") and edge ("bond")
/// codes and a deterministic scalar target, shaped like small-molecule
/// property regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoleculeLikeConfig {
    #[serde(default)]
    pub sizes: SplitSizes,
    pub nodes_min: usize,
    pub nodes_max: usize,
    /// Per-node chance of one extra non-tree edge.
    pub extra_edge_prob: f64,
    pub seed: u64,
}

impl Default for MoleculeLikeConfig {
    fn default() -> Self {
        MoleculeLikeConfig {
            sizes: SplitSizes::default(),
            nodes_min: 12,
            nodes_max: 30,
            extra_edge_prob: 0.3,
            seed: 0,
        }
    }
}

/// Node-code vocabulary of the molecule-shaped generator.
pub const MOLECULE_NODE_VOCAB: usize = 28;
/// Edge-code vocabulary of the molecule-shaped generator.
pub const MOLECULE_EDGE_VOCAB: usize = 4;

pub fn molecule_like(cfg: &MoleculeLikeConfig) -> Result<DatasetSplit, GraphError> {
    cfg.sizes.validate()?;
    check_prob("extra_edge_prob", cfg.extra_edge_prob)?;
    if cfg.nodes_min < 2 || cfg.nodes_max < cfg.nodes_min {
        return Err(GraphError::Config {
            detail: format!(
                "bad node range [{}, {}]",
                cfg.nodes_min, cfg.nodes_max
            ),
        });
    }
    let cfg = cfg.clone();
    build_split(
        cfg.sizes,
        cfg.seed,
        "molecule_like",
        TaskKind::GraphRegress,
        move |rng, _| {
            let n = rng.gen_range(cfg.nodes_min..=cfg.nodes_max);
            // Random recursive tree: connected, minimum degree 1.
            let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
            for v in 0..n {
                if rng.gen_bool(cfg.extra_edge_prob) {
                    let u = rng.gen_range(0..n);
                    if u != v {
                        edges.push((u.min(v), u.max(v)));
                    }
                }
            }
            edges.sort_unstable();
            edges.dedup();
            let codes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..MOLECULE_NODE_VOCAB)).collect();
            let bonds: Vec<usize> = edges
                .iter()
                .map(|_| rng.gen_range(0..MOLECULE_EDGE_VOCAB))
                .collect();
            // Deterministic target mixing features and topology so both the
            // embedding and the message passing have something to learn.
            let mean_code =
                codes.iter().sum::<usize>() as f64 / (n as f64 * (MOLECULE_NODE_VOCAB - 1) as f64);
            let mean_deg = 2.0 * edges.len() as f64 / n as f64;
            let y = mean_code + mean_deg / 4.0;
            Graph::from_edges(
                n,
                &edges,
                true,
                Features::Codes(codes),
                Some(Features::Codes(bonds)),
                Target::GraphScalar(y),
            )
        },
    )
}

// ── tour-shaped edge classification ─────────────────────────────────────

/// Planar k-nearest-neighbor graphs over random points; edges on a greedy
/// closed tour are the positive class. Nodes carry their coordinates, edges
/// their Euclidean length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TourLikeConfig {
    #[serde(default)]
    pub sizes: SplitSizes,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for TourLikeConfig {
    fn default() -> Self {
        TourLikeConfig {
            sizes: SplitSizes::default(),
            nodes_min: 15,
            nodes_max: 30,
            k_neighbors: 5,
            seed: 0,
        }
    }
}

/// Dense node-feature dimension (planar coordinates).
pub const TOUR_NODE_DIM: usize = 2;

pub fn tour_like(cfg: &TourLikeConfig) -> Result<DatasetSplit, GraphError> {
    cfg.sizes.validate()?;
    if cfg.nodes_min < 4 || cfg.nodes_max < cfg.nodes_min {
        return Err(GraphError::Config {
            detail: format!("bad node range [{}, {}]", cfg.nodes_min, cfg.nodes_max),
        });
    }
    if cfg.k_neighbors == 0 {
        return Err(GraphError::Config {
            detail: "k_neighbors must be positive".to_string(),
        });
    }
    let cfg = cfg.clone();
    build_split(
        cfg.sizes,
        cfg.seed,
        "tour_like",
        TaskKind::EdgeClass,
        move |rng, _| {
            let n = rng.gen_range(cfg.nodes_min..=cfg.nodes_max);
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
                .collect();
            let d2 = |a: usize, b: usize| {
                let dx = pts[a][0] - pts[b][0];
                let dy = pts[a][1] - pts[b][1];
                dx * dx + dy * dy
            };
            let k = cfg.k_neighbors.min(n - 1);
            let mut pairs: std::collections::BTreeSet<(usize, usize)> =
                std::collections::BTreeSet::new();
            for v in 0..n {
                let mut others: Vec<usize> = (0..n).filter(|&u| u != v).collect();
                others.sort_by(|&a, &b| d2(v, a).partial_cmp(&d2(v, b)).unwrap());
                for &u in &others[..k] {
                    pairs.insert((v.min(u), v.max(u)));
                }
            }
            // Greedy nearest-neighbor closed tour from node 0.
            let mut visited = vec![false; n];
            let mut tour = vec![0usize];
            visited[0] = true;
            for _ in 1..n {
                let cur = *tour.last().unwrap();
                let next = (0..n)
                    .filter(|&u| !visited[u])
                    .min_by(|&a, &b| d2(cur, a).partial_cmp(&d2(cur, b)).unwrap())
                    .unwrap();
                visited[next] = true;
                tour.push(next);
            }
            let mut on_tour: std::collections::BTreeSet<(usize, usize)> =
                std::collections::BTreeSet::new();
            for i in 0..n {
                let (a, b) = (tour[i], tour[(i + 1) % n]);
                let e = (a.min(b), a.max(b));
                on_tour.insert(e);
                pairs.insert(e); // tour edges always exist in the graph
            }
            let edges: Vec<(usize, usize)> = pairs.into_iter().collect();
            let dists: Vec<f64> = edges.iter().map(|&(a, b)| d2(a, b).sqrt()).collect();
            let per_edge: Vec<usize> = edges
                .iter()
                .map(|e| usize::from(on_tour.contains(e)))
                .collect();
            let g = Graph::from_edges(
                n,
                &edges,
                true,
                Features::Dense {
                    dim: TOUR_NODE_DIM,
                    values: pts.into_iter().flatten().collect(),
                },
                Some(Features::Dense {
                    dim: 1,
                    values: dists,
                }),
                Target::EdgeLabels(vec![]),
            )?;
            let labels = expand_edge_labels(&g, &edges, &per_edge);
            Ok(Graph {
                target: Target::EdgeLabels(labels),
                ..g
            })
        },
    )
}

// ── dispatch by name ────────────────────────────────────────────────────

/// Generator configs as they appear in run files, tagged by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    SbmPattern(SbmPatternConfig),
    SbmCluster(SbmClusterConfig),
    SecondOrder(SecondOrderConfig),
    MoleculeLike(MoleculeLikeConfig),
    TourLike(TourLikeConfig),
}

impl GeneratorConfig {
    pub fn generate(&self) -> Result<DatasetSplit, GraphError> {
        match self {
            GeneratorConfig::SbmPattern(c) => sbm_pattern(c),
            GeneratorConfig::SbmCluster(c) => sbm_cluster(c),
            GeneratorConfig::SecondOrder(c) => second_order(c),
            GeneratorConfig::MoleculeLike(c) => molecule_like(c),
            GeneratorConfig::TourLike(c) => tour_like(c),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorConfig::SbmPattern(_) => "sbm_pattern",
            GeneratorConfig::SbmCluster(_) => "sbm_cluster",
            GeneratorConfig::SecondOrder(_) => "second_order",
            GeneratorConfig::MoleculeLike(_) => "molecule_like",
            GeneratorConfig::TourLike(_) => "tour_like",
        }
    }

    /// Override the seed in place (CLI `--seed`).
    pub fn set_seed(&mut self, seed: u64) {
        match self {
            GeneratorConfig::SbmPattern(c) => c.seed = seed,
            GeneratorConfig::SbmCluster(c) => c.seed = seed,
            GeneratorConfig::SecondOrder(c) => c.seed = seed,
            GeneratorConfig::MoleculeLike(c) => c.seed = seed,
            GeneratorConfig::TourLike(c) => c.seed = seed,
        }
    }
}
