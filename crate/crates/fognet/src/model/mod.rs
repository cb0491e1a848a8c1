//! Whole-network assembly: input embeddings, stacked layers with residual
//! connections, task heads, parameter audit, and checkpoints.
//!
//! A [`Model`] is built from a [`ModelConfig`] — either hand-written or one
//! of the named [`presets`] — and runs a full forward pass over a
//! [`GraphBatch`], producing per-node logits, per-graph predictions, or
//! per-edge logits depending on the task.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BatchView, Features, GraphBatch, TaskKind};
use crate::layers::{
    BaseLayer, BnParams, Bound, Embedding, FogModule, GatLayer, GatedGcnLayer, GcnLayer, GinLayer,
    Layer, LayerCtx, Linear, ParamStore, SageLayer,
};
use crate::tensor::{BnMode, Real, Tape, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod presets;
pub mod verify;

// ── configuration ────────────────────────────────────────────────────────

/// The five base message-passing families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Gcn,
    Gat,
    GatedGcn,
    Gin,
    Sage,
}

impl Family {
    fn name(self) -> &'static str {
        match self {
            Family::Gcn => "gcn",
            Family::Gat => "gat",
            Family::GatedGcn => "gatedgcn",
            Family::Gin => "gin",
            Family::Sage => "sage",
        }
    }

    fn parse(s: &str) -> Option<Family> {
        Some(match s {
            "gcn" => Family::Gcn,
            "gat" => Family::Gat,
            "gatedgcn" => Family::GatedGcn,
            "gin" => Family::Gin,
            "sage" => Family::Sage,
            _ => return None,
        })
    }
}

/// Layer architecture: the correlation aggregator alone, a base family
/// alone, or the hybrid of both. Serialized as `fog`, `gcn`, `gcn+fog`, …
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Arch {
    Fog,
    Base(Family),
    Hybrid(Family),
}

impl Arch {
    pub fn name(self) -> String {
        match self {
            Arch::Fog => "fog".to_string(),
            Arch::Base(f) => f.name().to_string(),
            Arch::Hybrid(f) => format!("{}+fog", f.name()),
        }
    }

    pub fn parse(s: &str) -> Option<Arch> {
        if s == "fog" {
            return Some(Arch::Fog);
        }
        match s.strip_suffix("+fog") {
            Some(base) => Family::parse(base).map(Arch::Hybrid),
            None => Family::parse(s).map(Arch::Base),
        }
    }

    /// The base family involved, if any.
    pub fn base(self) -> Option<Family> {
        match self {
            Arch::Fog => None,
            Arch::Base(f) | Arch::Hybrid(f) => Some(f),
        }
    }

    pub fn has_fog(self) -> bool {
        !matches!(self, Arch::Base(_))
    }

    /// Edge-gated models thread per-edge state and need an edge input.
    pub fn needs_edges(self) -> bool {
        self.base() == Some(Family::GatedGcn)
    }

    /// Isomorphism-style models predict from every layer's features.
    pub fn per_layer_head(self) -> bool {
        self.base() == Some(Family::Gin)
    }
}

impl TryFrom<String> for Arch {
    type Error = String;
    fn try_from(s: String) -> Result<Arch, String> {
        Arch::parse(&s).ok_or_else(|| format!("unknown family `{s}`"))
    }
}

impl From<Arch> for String {
    fn from(a: Arch) -> String {
        a.name()
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

/// What kind of raw features the model ingests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputSpec {
    /// Categorical codes through an embedding table.
    Categorical { vocab: usize },
    /// Dense float rows through a linear map.
    Dense { dim: usize },
}

/// Node-to-graph pooling for graph-level tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Mean,
    Sum,
}

fn default_true() -> bool {
    true
}

/// Complete description of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub task: TaskKind,
    pub family: Arch,
    /// Number of stacked layers.
    pub layers: usize,
    /// Node channel width; every layer maps `hidden → hidden`.
    pub hidden: usize,
    /// Center-transform width of the correlation path.
    #[serde(default)]
    pub c_h1: Option<usize>,
    /// Neighbor-transform width of the correlation path.
    #[serde(default)]
    pub c_h2: Option<usize>,
    /// Correlation-path output width in hybrids (the base family gets
    /// `hidden − c_p`).
    #[serde(default)]
    pub c_p: Option<usize>,
    /// Attention head counts, one per layer.
    #[serde(default)]
    pub heads: Option<Vec<usize>>,
    /// Readout-MLP widths (absent for per-layer-head families).
    #[serde(default)]
    pub fc1: Option<usize>,
    #[serde(default)]
    pub fc2: Option<usize>,
    pub node_input: InputSpec,
    /// Edge input description, required when `use_edge_features` is set.
    #[serde(default)]
    pub edge_input: Option<InputSpec>,
    /// When false, edge-gated models feed a constant-1 dummy feature
    /// through a 1-channel linear map instead of dataset edge features.
    #[serde(default)]
    pub use_edge_features: bool,
    #[serde(default = "default_readout")]
    pub readout: Readout,
    /// Logit count (classes), or 1 for regression.
    pub n_outputs: usize,
    /// Identity skip around every layer whose input and output widths match.
    #[serde(default = "default_true")]
    pub residual: bool,
    /// Seed for parameter initialization.
    #[serde(default)]
    pub seed: u64,
}

fn default_readout() -> Readout {
    Readout::Mean
}

// ── errors ───────────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {detail}")]
    Config { detail: String },
    #[error("layer {layer}: {detail}")]
    LayerDim { layer: usize, detail: String },
    #[error("input mismatch: {detail}")]
    Input { detail: String },
    #[error("checkpoint: {detail}")]
    Checkpoint { detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Json(#[from] serde_json::Error),
}

fn config_err<T>(detail: impl Into<String>) -> Result<T, ModelError> {
    Err(ModelError::Config {
        detail: detail.into(),
    })
}

// ── model ────────────────────────────────────────────────────────────────

enum NodeEmbed {
    Table(Embedding),
    Proj(Linear),
}

enum EdgeEmbed {
    Table(Embedding),
    Proj(Linear),
    /// Constant-1 dummy feature through a 1→C linear map.
    Dummy(Linear),
}

enum Head {
    /// Three stacked linears with relu between: `in → fc1 → fc2 → out`.
    Mlp { l1: Linear, l2: Linear, l3: Linear },
    /// One linear per layer depth (including the embedding), predictions
    /// summed.
    PerLayer(Vec<Linear>),
}

/// A built network. Owns its parameters; `forward` binds them onto a tape.
pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    embed_h: NodeEmbed,
    embed_e: Option<EdgeEmbed>,
    layers: Vec<Layer>,
    head: Head,
}

/// Result of one forward pass.
pub struct Forward {
    /// Per-node logits, per-graph predictions, or per-slot edge logits.
    pub prediction: Var,
    /// Tape bindings of the trainable parameters, for gradient lookup.
    pub bound: Bound,
}

impl<F: Real> Model<F> {
    /// Validates the config and registers every parameter. Initialization
    /// draws follow registration order, so (config, seed) fully determine
    /// the starting weights.
    pub fn build(config: ModelConfig) -> Result<Model<F>, ModelError> {
        validate(&config)?;
        let cfg = &config;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let c = cfg.hidden;

        let embed_h = match cfg.node_input {
            InputSpec::Categorical { vocab } => {
                NodeEmbed::Table(Embedding::register(&mut store, &mut rng, "embed_h", vocab, c))
            }
            InputSpec::Dense { dim } => {
                NodeEmbed::Proj(Linear::register(&mut store, &mut rng, "embed_h", c, dim, true))
            }
        };
        let embed_e = if cfg.family.needs_edges() {
            Some(if !cfg.use_edge_features {
                EdgeEmbed::Dummy(Linear::register(&mut store, &mut rng, "embed_e", c, 1, true))
            } else {
                match cfg.edge_input.expect("validated") {
                    InputSpec::Categorical { vocab } => EdgeEmbed::Table(Embedding::register(
                        &mut store, &mut rng, "embed_e", vocab, c,
                    )),
                    InputSpec::Dense { dim } => EdgeEmbed::Proj(Linear::register(
                        &mut store, &mut rng, "embed_e", c, dim, true,
                    )),
                }
            })
        } else {
            None
        };

        let mut layers = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let p = format!("layers.{i}");
            let n_heads = cfg.heads.as_ref().map_or(1, |h| h[i]);
            let layer = match cfg.family {
                Arch::Fog => Layer::PlainFog {
                    fog: FogModule::register(
                        &mut store,
                        &mut rng,
                        &format!("{p}.fog"),
                        c,
                        cfg.c_h1.expect("validated"),
                        cfg.c_h2.expect("validated"),
                        c,
                    ),
                    bn: BnParams::register(&mut store, &format!("{p}.bn"), c),
                },
                Arch::Base(fam) => Layer::Standalone {
                    base: register_base(&mut store, &mut rng, &p, fam, c, c, n_heads, c),
                    bn: BnParams::register(&mut store, &format!("{p}.bn"), c),
                },
                Arch::Hybrid(fam) => {
                    let c_p = cfg.c_p.expect("validated");
                    let c_q = c - c_p;
                    let fog = FogModule::register(
                        &mut store,
                        &mut rng,
                        &format!("{p}.fog"),
                        c,
                        cfg.c_h1.expect("validated"),
                        cfg.c_h2.expect("validated"),
                        c_p,
                    );
                    let (base, proj) = if fam == Family::GatedGcn {
                        // the gated family runs at full width (its edge state
                        // is hidden-wide) and projects the node path down
                        let base = register_base(&mut store, &mut rng, &p, fam, c, c, n_heads, c);
                        let proj = Linear::register(
                            &mut store,
                            &mut rng,
                            &format!("{p}.proj"),
                            c_q,
                            c,
                            true,
                        );
                        (base, Some(proj))
                    } else {
                        (
                            register_base(&mut store, &mut rng, &p, fam, c, c_q, n_heads, c),
                            None,
                        )
                    };
                    Layer::Hybrid {
                        fog,
                        base,
                        proj,
                        bn: BnParams::register(&mut store, &format!("{p}.bn"), c),
                    }
                }
            };
            layers.push(layer);
        }

        let head_in = head_width(cfg.task, c);
        let head = if cfg.family.per_layer_head() {
            Head::PerLayer(
                (0..=cfg.layers)
                    .map(|l| {
                        Linear::register(
                            &mut store,
                            &mut rng,
                            &format!("head.layer{l}"),
                            cfg.n_outputs,
                            head_in,
                            true,
                        )
                    })
                    .collect(),
            )
        } else {
            let fc1 = cfg.fc1.expect("validated");
            let fc2 = cfg.fc2.expect("validated");
            Head::Mlp {
                l1: Linear::register(&mut store, &mut rng, "head.fc1", fc1, head_in, true),
                l2: Linear::register(&mut store, &mut rng, "head.fc2", fc2, fc1, true),
                l3: Linear::register(&mut store, &mut rng, "head.out", cfg.n_outputs, fc2, true),
            }
        };

        Ok(Model {
            config,
            store,
            embed_h,
            embed_e,
            layers,
            head,
        })
    }

    /// Total trainable scalar count.
    pub fn count_params(&self) -> usize {
        self.store.n_trainable_scalars()
    }

    /// Trainable counts grouped by component (`embed_h`, `layers.0`, …,
    /// `head`), in registration order. Sums to [`Model::count_params`].
    pub fn params_breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for e in self.store.entries() {
            if !e.trainable {
                continue;
            }
            let mut parts = e.name.split('.');
            let group = match parts.next() {
                Some("layers") => format!("layers.{}", parts.next().unwrap_or("?")),
                Some(first) => first.to_string(),
                None => String::new(),
            };
            match out.last_mut() {
                Some((g, n)) if *g == group => *n += e.value.numel(),
                _ => out.push((group, e.value.numel())),
            }
        }
        out
    }

    /// Runs embeddings, all layers (with identity skips), and the head.
    pub fn forward(
        &mut self,
        tape: &mut Tape<F>,
        batch: &GraphBatch,
        mode: BnMode,
    ) -> Result<Forward, ModelError> {
        let view = BatchView::new(batch);
        let bound = self.store.bind(tape);

        let h0 = match (&self.embed_h, &batch.node_feat) {
            (NodeEmbed::Table(emb), Features::Codes(codes)) => {
                if let Some(&bad) = codes.iter().find(|&&c| c >= emb.vocab) {
                    return Err(ModelError::Input {
                        detail: format!("node code {bad} exceeds vocab {}", emb.vocab),
                    });
                }
                emb.apply(tape, &bound, codes)?
            }
            (NodeEmbed::Proj(lin), Features::Dense { dim, values }) => {
                if *dim != lin.in_dim {
                    return Err(ModelError::Input {
                        detail: format!("node dim {dim} ≠ expected {}", lin.in_dim),
                    });
                }
                let x = tape.constant(dense_tensor(batch.n_nodes, *dim, values)?);
                lin.apply(tape, &bound, x)?
            }
            (NodeEmbed::Table(_), _) => {
                return Err(ModelError::Input {
                    detail: "model expects categorical node codes".to_string(),
                })
            }
            (NodeEmbed::Proj(_), _) => {
                return Err(ModelError::Input {
                    detail: "model expects dense node features".to_string(),
                })
            }
        };

        let mut e = match &self.embed_e {
            None => None,
            Some(EdgeEmbed::Dummy(lin)) => {
                let ones = tape.constant(Tensor::filled(&[view.n_slots(), 1], F::one()));
                Some(lin.apply(tape, &bound, ones)?)
            }
            Some(EdgeEmbed::Table(emb)) => match &batch.edge_feat {
                Some(Features::Codes(codes)) => {
                    if let Some(&bad) = codes.iter().find(|&&c| c >= emb.vocab) {
                        return Err(ModelError::Input {
                            detail: format!("edge code {bad} exceeds vocab {}", emb.vocab),
                        });
                    }
                    Some(emb.apply(tape, &bound, codes)?)
                }
                _ => {
                    return Err(ModelError::Input {
                        detail: "model expects categorical edge codes".to_string(),
                    })
                }
            },
            Some(EdgeEmbed::Proj(lin)) => match &batch.edge_feat {
                Some(Features::Dense { dim, values }) => {
                    if *dim != lin.in_dim {
                        return Err(ModelError::Input {
                            detail: format!("edge dim {dim} ≠ expected {}", lin.in_dim),
                        });
                    }
                    let x = tape.constant(dense_tensor(view.n_slots(), *dim, values)?);
                    Some(lin.apply(tape, &bound, x)?)
                }
                _ => {
                    return Err(ModelError::Input {
                        detail: "model expects dense edge features".to_string(),
                    })
                }
            },
        };

        let mut h = h0;
        let mut states = vec![h0];
        for layer in &self.layers {
            let width_in = tape.value(h).cols();
            let (out, e_next) = {
                let mut ctx = LayerCtx {
                    tape: &mut *tape,
                    store: &mut self.store,
                    bound: &bound,
                    view: &view,
                    mode,
                };
                layer.forward(&mut ctx, h, e)?
            };
            e = e_next;
            h = if self.config.residual && layer.c_out() == width_in {
                tape.add(out, h)?
            } else {
                out
            };
            states.push(h);
        }

        let task = self.config.task;
        let pool = self.config.readout;
        let prediction = match &self.head {
            Head::Mlp { l1, l2, l3 } => {
                let x = head_input(tape, &view, task, pool, h)?;
                apply_mlp(tape, &bound, l1, l2, l3, x)?
            }
            Head::PerLayer(linears) => {
                let mut total: Option<Var> = None;
                for (lin, &hl) in linears.iter().zip(states.iter()) {
                    let x = head_input(tape, &view, task, pool, hl)?;
                    let y = lin.apply(tape, &bound, x)?;
                    total = Some(match total {
                        None => y,
                        Some(t) => tape.add(t, y)?,
                    });
                }
                total.expect("at least the embedding state")
            }
        };

        Ok(Forward { prediction, bound })
    }

    // ── checkpoints ──────────────────────────────────────────────────

    /// Serializes config and every tensor (values as `f64`) to JSON.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            entries: self
                .store
                .entries()
                .iter()
                .map(|e| CheckpointEntry {
                    name: e.name.clone(),
                    shape: e.value.shape().to_vec(),
                    trainable: e.trainable,
                    data: e.value.to_f64().data().to_vec(),
                })
                .collect(),
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    /// Rebuilds a model from a checkpoint. Entry names and shapes must
    /// match the rebuilt architecture exactly.
    pub fn load_checkpoint(path: &Path) -> Result<Model<F>, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint {
                detail: format!(
                    "format version {} (supported: {CHECKPOINT_VERSION})",
                    file.format_version
                ),
            });
        }
        let mut model = Model::<F>::build(file.config)?;
        if file.entries.len() != model.store.entries().len() {
            return Err(ModelError::Checkpoint {
                detail: format!(
                    "{} tensors in file, architecture has {}",
                    file.entries.len(),
                    model.store.entries().len()
                ),
            });
        }
        for entry in &file.entries {
            let id = model.store.find(&entry.name).ok_or_else(|| {
                ModelError::Checkpoint {
                    detail: format!("unknown tensor `{}`", entry.name),
                }
            })?;
            if model.store.value(id).shape() != entry.shape.as_slice() {
                return Err(ModelError::Checkpoint {
                    detail: format!(
                        "`{}` has shape {:?}, expected {:?}",
                        entry.name,
                        entry.shape,
                        model.store.value(id).shape()
                    ),
                });
            }
            let t64 = Tensor::<f64>::from_vec(entry.shape.clone(), entry.data.clone()).map_err(
                |_| ModelError::Checkpoint {
                    detail: format!("`{}` data does not fill {:?}", entry.name, entry.shape),
                },
            )?;
            model.store.set_value(id, Tensor::from_f64(&t64));
        }
        Ok(model)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    entries: Vec<CheckpointEntry>,
}

// ── helpers ──────────────────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
fn register_base<F: Real>(
    store: &mut ParamStore<F>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    fam: Family,
    c_in: usize,
    c_out: usize,
    n_heads: usize,
    c_edge: usize,
) -> BaseLayer {
    match fam {
        Family::Gcn => BaseLayer::Gcn(GcnLayer::register(
            store,
            rng,
            &format!("{prefix}.gcn"),
            c_in,
            c_out,
        )),
        Family::Gat => BaseLayer::Gat(GatLayer::register(
            store,
            rng,
            &format!("{prefix}.gat"),
            c_in,
            c_out,
            n_heads,
        )),
        Family::GatedGcn => BaseLayer::GatedGcn(GatedGcnLayer::register(
            store,
            rng,
            &format!("{prefix}.gatedgcn"),
            c_in,
            c_edge,
            c_out,
        )),
        Family::Gin => BaseLayer::Gin(GinLayer::register(
            store,
            rng,
            &format!("{prefix}.gin"),
            c_in,
            c_out,
        )),
        Family::Sage => BaseLayer::Sage(SageLayer::register(
            store,
            rng,
            &format!("{prefix}.sage"),
            c_in,
            c_out,
        )),
    }
}

/// Head input width for a task given node width `c`.
fn head_width(task: TaskKind, c: usize) -> usize {
    match task {
        TaskKind::EdgeClass => 2 * c,
        _ => c,
    }
}

/// Maps final node states to the head's input rows: nodes stay as they
/// are, graph tasks pool over each graph, edge tasks concatenate the
/// (destination, source) states of every slot.
fn head_input<F: Real>(
    tape: &mut Tape<F>,
    view: &BatchView,
    task: TaskKind,
    pool: Readout,
    h: Var,
) -> Result<Var, ModelError> {
    match task {
        TaskKind::NodeClass => Ok(h),
        TaskKind::GraphClass | TaskKind::GraphRegress => {
            readout(tape, view, pool, h).map_err(Into::into)
        }
        TaskKind::EdgeClass => {
            let hd = tape.gather_rows(h, view.dst.clone())?;
            let hs = tape.gather_rows(h, view.src.clone())?;
            Ok(tape.concat(hd, hs)?)
        }
    }
}

/// Pools node rows into one row per graph.
pub fn readout<F: Real>(
    tape: &mut Tape<F>,
    view: &BatchView,
    kind: Readout,
    h: Var,
) -> Result<Var, TensorError> {
    let summed = tape.segment_sum(h, view.node_segment.clone(), view.n_graphs)?;
    let mut counts = vec![0usize; view.n_graphs];
    for &g in view.node_segment.iter() {
        counts[g] += 1;
    }
    if let Some(g) = counts.iter().position(|&n| n == 0) {
        return Err(TensorError::EmptySegment { segment: g });
    }
    match kind {
        Readout::Sum => Ok(summed),
        Readout::Mean => {
            let inv: Vec<F> = counts
                .iter()
                .map(|&n| crate::tensor::real(1.0 / n as f64))
                .collect();
            tape.scale_rows_const(summed, &inv)
        }
    }
}

fn apply_mlp<F: Real>(
    tape: &mut Tape<F>,
    bound: &Bound,
    l1: &Linear,
    l2: &Linear,
    l3: &Linear,
    x: Var,
) -> Result<Var, ModelError> {
    let a = l1.apply(tape, bound, x)?;
    let a = tape.relu(a);
    let b = l2.apply(tape, bound, a)?;
    let b = tape.relu(b);
    Ok(l3.apply(tape, bound, b)?)
}

fn dense_tensor<F: Real>(rows: usize, dim: usize, values: &[f64]) -> Result<Tensor<F>, ModelError> {
    let t64 = Tensor::<f64>::matrix(rows, dim, values.to_vec())?;
    Ok(Tensor::from_f64(&t64))
}

// ── validation ───────────────────────────────────────────────────────────

fn validate(cfg: &ModelConfig) -> Result<(), ModelError> {
    if cfg.layers == 0 {
        return config_err("layers must be ≥ 1");
    }
    if cfg.hidden == 0 {
        return config_err("hidden width must be ≥ 1");
    }
    if cfg.n_outputs == 0 {
        return config_err("n_outputs must be ≥ 1");
    }
    if cfg.task == TaskKind::GraphRegress && cfg.n_outputs != 1 {
        return config_err("regression needs n_outputs = 1");
    }
    if cfg.family.has_fog() {
        match (cfg.c_h1, cfg.c_h2) {
            (Some(a), Some(b)) if a > 0 && b > 0 => {}
            _ => return config_err("correlation path needs c_h1 and c_h2"),
        }
    } else if cfg.c_h1.is_some() || cfg.c_h2.is_some() {
        return config_err("c_h1/c_h2 only apply to families with a correlation path");
    }
    match cfg.family {
        Arch::Hybrid(_) => match cfg.c_p {
            Some(p) if p > 0 && p < cfg.hidden => {}
            Some(p) => {
                return Err(ModelError::LayerDim {
                    layer: 0,
                    detail: format!(
                        "c_p = {p} leaves no base width (hidden = {})",
                        cfg.hidden
                    ),
                })
            }
            None => return config_err("hybrids need c_p"),
        },
        _ => {
            if cfg.c_p.is_some() {
                return config_err("c_p only applies to hybrids");
            }
        }
    }
    let c_q = match cfg.family {
        Arch::Hybrid(_) => cfg.hidden - cfg.c_p.unwrap(),
        _ => cfg.hidden,
    };
    if cfg.family.base() == Some(Family::Gat) {
        let heads = cfg
            .heads
            .as_ref()
            .ok_or_else(|| ModelError::Config {
                detail: "attention families need per-layer head counts".to_string(),
            })?;
        if heads.len() != cfg.layers {
            return config_err(format!(
                "{} head counts for {} layers",
                heads.len(),
                cfg.layers
            ));
        }
        for (i, &k) in heads.iter().enumerate() {
            if k == 0 || c_q % k != 0 {
                return Err(ModelError::LayerDim {
                    layer: i,
                    detail: format!("width {c_q} not divisible by {k} heads"),
                });
            }
        }
    } else if cfg.heads.is_some() {
        return config_err("head counts only apply to attention families");
    }
    if cfg.family.needs_edges() {
        if cfg.use_edge_features && cfg.edge_input.is_none() {
            return config_err("use_edge_features needs edge_input");
        }
    } else {
        if cfg.edge_input.is_some() || cfg.use_edge_features {
            return config_err("edge input only applies to edge-gated families");
        }
    }
    if cfg.family.per_layer_head() {
        if cfg.fc1.is_some() || cfg.fc2.is_some() {
            return config_err("per-layer-head families take no fc widths");
        }
    } else {
        match (cfg.fc1, cfg.fc2) {
            (Some(a), Some(b)) if a > 0 && b > 0 => {}
            _ => return config_err("readout head needs fc1 and fc2"),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
