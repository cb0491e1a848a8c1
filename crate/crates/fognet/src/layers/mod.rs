//! Message-passing layers.
//!
//! Every layer maps per-node features `h` (N×C_in) to per-node features
//! (N×C_out) over a [`BatchView`] topology. Three shapes exist:
//!
//! * [`Layer::PlainFog`] — the feature-correlation aggregator alone,
//! * [`Layer::Standalone`] — one of the five base families alone,
//! * [`Layer::Hybrid`] — base family and correlation path side by side,
//!   joined by concatenation under a shared batchnorm.
//!
//! The correlation path ([`FogModule`]) forms, for every edge `u→v`, the
//! Kronecker product of a center transform of `h_v` and a neighbor
//! transform of `h_u`, sums those outer products over each neighborhood,
//! and projects the flattened result back down. This captures products of
//! feature pairs — second-order information that sum/mean aggregators
//! cannot see.


use crate::graph::BatchView;
use crate::tensor::{real, Activation, BnMode, Real, Tape, TensorError, Var};
use rand_chacha::ChaCha8Rng;

mod params;

pub use params::{
    register_scalar, BnParams, Bound, Embedding, Entry, Linear, ParamId, ParamStore, ATTN_LEAK,
    BN_EPS, BN_MOMENTUM, GATE_EPS,
};

// ── forward context ──────────────────────────────────────────────────────

/// Everything a layer forward needs, bundled so signatures stay small.
pub struct LayerCtx<'a, F: Real> {
    pub tape: &'a mut Tape<F>,
    pub store: &'a mut ParamStore<F>,
    pub bound: &'a Bound,
    pub view: &'a BatchView,
    pub mode: BnMode,
}

impl<'a, F: Real> LayerCtx<'a, F> {
    fn linear(&mut self, lin: &Linear, x: Var) -> Result<Var, TensorError> {
        lin.apply(self.tape, self.bound, x)
    }

    fn bn(&mut self, bn: &BnParams, x: Var) -> Result<Var, TensorError> {
        bn.apply(self.tape, self.store, self.bound, x, self.mode)
    }

    /// Rows of `x` indexed by each slot's source node.
    fn gather_src(&mut self, x: Var) -> Result<Var, TensorError> {
        self.tape.gather_rows(x, self.view.src.clone())
    }

    /// Rows of `x` indexed by each slot's destination node.
    fn gather_dst(&mut self, x: Var) -> Result<Var, TensorError> {
        self.tape.gather_rows(x, self.view.dst.clone())
    }

    /// Per-slot rows summed into their destination node.
    fn sum_into_dst(&mut self, x: Var) -> Result<Var, TensorError> {
        self.tape
            .segment_sum(x, self.view.dst.clone(), self.view.n_nodes)
    }
}

// ── feature-correlation module ───────────────────────────────────────────

/// The second-order aggregation path.
///
/// ```text
/// x1 = bn1(relu(h·W1ᵀ + b1))            center transform   (N × C_h1)
/// x2 = bn2(relu(x1·W2ᵀ + b2))           neighbor transform (N × C_h2)
/// s_v = Σ_{u→v} kron(x1_v, x2_u)        per-node correlation (N × C_h1·C_h2)
/// p   = s·W_vuᵀ + b_vu                  projection          (N × C_p)
/// ```
///
/// The neighbor transform is computed *from* `x1`, so the first projection
/// and its batchnorm are shared between both operands of `kron`.
#[derive(Clone, Debug)]
pub struct FogModule {
    pub w1: Linear,
    pub bn1: BnParams,
    pub w2: Linear,
    pub bn2: BnParams,
    pub w_vu: Linear,
    pub c_h1: usize,
    pub c_h2: usize,
    pub c_p: usize,
}

impl FogModule {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        c_in: usize,
        c_h1: usize,
        c_h2: usize,
        c_p: usize,
    ) -> FogModule {
        let w1 = Linear::register(store, rng, &format!("{prefix}.w1"), c_h1, c_in, true);
        let bn1 = BnParams::register(store, &format!("{prefix}.bn1"), c_h1);
        let w2 = Linear::register(store, rng, &format!("{prefix}.w2"), c_h2, c_h1, true);
        let bn2 = BnParams::register(store, &format!("{prefix}.bn2"), c_h2);
        let w_vu = Linear::register(store, rng, &format!("{prefix}.w_vu"), c_p, c_h1 * c_h2, true);
        FogModule {
            w1,
            bn1,
            w2,
            bn2,
            w_vu,
            c_h1,
            c_h2,
            c_p,
        }
    }

    pub fn forward<F: Real>(&self, ctx: &mut LayerCtx<F>, h: Var) -> Result<Var, TensorError> {
        let a1 = ctx.linear(&self.w1, h)?;
        let r1 = ctx.tape.relu(a1);
        let x1 = ctx.bn(&self.bn1, r1)?;
        let a2 = ctx.linear(&self.w2, x1)?;
        let r2 = ctx.tape.relu(a2);
        let x2 = ctx.bn(&self.bn2, r2)?;
        let center = ctx.gather_dst(x1)?;
        let neighbor = ctx.gather_src(x2)?;
        let corr = ctx.tape.kron_rows(center, neighbor)?;
        let agg = ctx.sum_into_dst(corr)?;
        ctx.linear(&self.w_vu, agg)
    }
}

// ── base families ────────────────────────────────────────────────────────

/// Spectral-style convolution: messages scaled by `1/√(deg_u · deg_v)`.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub u: Linear,
}

impl GcnLayer {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        c_in: usize,
        c_out: usize,
    ) -> GcnLayer {
        GcnLayer {
            u: Linear::register(store, rng, &format!("{prefix}.u"), c_out, c_in, true),
        }
    }

    fn pre_activation<F: Real>(&self, ctx: &mut LayerCtx<F>, h: Var) -> Result<Var, TensorError> {
        let t = ctx.linear(&self.u, h)?;
        let msg = ctx.gather_src(t)?;
        let deg = &ctx.view.deg;
        let coeff: Vec<F> = ctx
            .view
            .src
            .iter()
            .zip(ctx.view.dst.iter())
            .map(|(&u, &v)| real(1.0 / ((deg[u] * deg[v]) as f64).sqrt()))
            .collect();
        let scaled = ctx.tape.scale_rows_const(msg, &coeff)?;
        ctx.sum_into_dst(scaled)
    }
}

/// One attention head: a bias-free projection and a score vector over the
/// concatenated (center, neighbor) projections.
#[derive(Clone, Debug)]
pub struct GatHead {
    pub u: Linear,
    pub attn: ParamId,
}

/// Multi-head attention aggregation; head outputs are concatenated.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub c_head: usize,
}

impl GatLayer {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        n_heads: usize,
    ) -> GatLayer {
        assert!(
            n_heads > 0 && c_out % n_heads == 0,
            "attention width {c_out} must split evenly over {n_heads} heads"
        );
        let c_head = c_out / n_heads;
        let heads = (0..n_heads)
            .map(|k| {
                let u = Linear::register(
                    store,
                    rng,
                    &format!("{prefix}.head{k}.u"),
                    c_head,
                    c_in,
                    false,
                );
                let bound = 1.0 / (c_in.max(1) as f64).sqrt();
                let attn = store.add_param(
                    format!("{prefix}.head{k}.attn"),
                    crate::tensor::Tensor::uniform(rng, &[2 * c_head], -bound, bound),
                );
                GatHead { u, attn }
            })
            .collect();
        GatLayer { heads, c_head }
    }

    fn pre_activation<F: Real>(&self, ctx: &mut LayerCtx<F>, h: Var) -> Result<Var, TensorError> {
        let mut joined: Option<Var> = None;
        for head in &self.heads {
            let s = ctx.linear(&head.u, h)?;
            let s_dst = ctx.gather_dst(s)?;
            let s_src = ctx.gather_src(s)?;
            let pair = ctx.tape.concat(s_dst, s_src)?;
            let score = ctx.tape.matvec(pair, ctx.bound.var(head.attn))?;
            let score = ctx.tape.leaky_relu(score, ATTN_LEAK);
            let alpha = ctx
                .tape
                .segment_softmax(score, ctx.view.dst.clone(), ctx.view.n_nodes)?;
            let weighted = ctx.tape.scale_rows(s_src, alpha)?;
            let agg = ctx.sum_into_dst(weighted)?;
            joined = Some(match joined {
                None => agg,
                Some(prev) => ctx.tape.concat(prev, agg)?,
            });
        }
        Ok(joined.expect("at least one attention head"))
    }
}

/// Edge-gated convolution. Carries per-slot edge state from layer to layer:
///
/// ```text
/// ê  = relu(bn_e(A·h_dst + B·h_src + C·e_prev))     next edge state
/// g  = σ(ê) / (Σ_{u→v} σ(ê) + 1e-6)                 normalized gate
/// q_v = U·h_v + Σ_{u→v} g ⊙ V·h_u
/// ```
#[derive(Clone, Debug)]
pub struct GatedGcnLayer {
    pub a: Linear,
    pub b: Linear,
    pub c: Linear,
    pub u: Linear,
    pub v: Linear,
    pub bn_e: BnParams,
}

impl GatedGcnLayer {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        c_in: usize,
        c_edge_in: usize,
        c_out: usize,
    ) -> GatedGcnLayer {
        GatedGcnLayer {
            a: Linear::register(store, rng, &format!("{prefix}.a"), c_out, c_in, true),
            b: Linear::register(store, rng, &format!("{prefix}.b"), c_out, c_in, true),
            c: Linear::register(store, rng, &format!("{prefix}.c"), c_out, c_edge_in, true),
            u: Linear::register(store, rng, &format!("{prefix}.u"), c_out, c_in, true),
            v: Linear::register(store, rng, &format!("{prefix}.v"), c_out, c_in, true),
            bn_e: BnParams::register(store, &format!("{prefix}.bn_e"), c_out),
        }
    }

    /// Returns `(q, ê)`: the node pre-activation and the edge state handed
    /// to the next layer.
    fn pre_activation<F: Real>(
        &self,
        ctx: &mut LayerCtx<F>,
        h: Var,
        e_prev: Var,
    ) -> Result<(Var, Var), TensorError> {
        let ah = ctx.linear(&self.a, h)?;
        let bh = ctx.linear(&self.b, h)?;
        let ce = ctx.linear(&self.c, e_prev)?;
        let a_dst = ctx.gather_dst(ah)?;
        let b_src = ctx.gather_src(bh)?;
        let nodes = ctx.tape.add(a_dst, b_src)?;
        let pre_e = ctx.tape.add(nodes, ce)?;
        let bn_e = ctx.bn(&self.bn_e, pre_e)?;
        let e_hat = ctx.tape.relu(bn_e);
        let sg = ctx.tape.sigmoid(e_hat);
        let denom_nodes = ctx.sum_into_dst(sg)?;
        let denom = ctx.gather_dst(denom_nodes)?;
        let denom = ctx.tape.add_const(denom, GATE_EPS);
        let gate = ctx.tape.div_elem(sg, denom)?;
        let vh = ctx.linear(&self.v, h)?;
        let v_src = ctx.gather_src(vh)?;
        let msg = ctx.tape.mul_elem(gate, v_src)?;
        let agg = ctx.sum_into_dst(msg)?;
        let uh = ctx.linear(&self.u, h)?;
        let q = ctx.tape.add(uh, agg)?;
        Ok((q, e_hat))
    }
}

/// Isomorphism-style layer: `(1+ε)·h_v + Σ h_u` through a two-stage MLP,
/// with the first stage normalized inside the layer.
#[derive(Clone, Debug)]
pub struct GinLayer {
    pub v: Linear,
    pub bn_mid: BnParams,
    pub u: Linear,
    pub eps: ParamId,
}

impl GinLayer {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        c_in: usize,
        c_out: usize,
    ) -> GinLayer {
        GinLayer {
            v: Linear::register(store, rng, &format!("{prefix}.v"), c_out, c_in, true),
            bn_mid: BnParams::register(store, &format!("{prefix}.bn_mid"), c_out),
            u: Linear::register(store, rng, &format!("{prefix}.u"), c_out, c_out, true),
            eps: register_scalar(store, &format!("{prefix}.eps"), 0.0),
        }
    }

    fn pre_activation<F: Real>(&self, ctx: &mut LayerCtx<F>, h: Var) -> Result<Var, TensorError> {
        let msg = ctx.gather_src(h)?;
        let nsum = ctx.sum_into_dst(msg)?;
        let one = ctx
            .tape
            .constant(crate::tensor::Tensor::vector(vec![F::one()]));
        let factor = ctx.tape.add(ctx.bound.var(self.eps), one)?;
        let scaled = ctx.tape.mul_scalar(h, factor)?;
        let h_hat = ctx.tape.add(scaled, nsum)?;
        let t = ctx.linear(&self.v, h_hat)?;
        let t = ctx.tape.relu(t);
        let t = ctx.bn(&self.bn_mid, t)?;
        ctx.linear(&self.u, t)
    }
}

/// Sample-and-aggregate convolution with a mean neighborhood aggregator:
/// `q_v = U·[h_v ‖ mean_{u→v} h_u]`.
#[derive(Clone, Debug)]
pub struct SageLayer {
    pub u: Linear,
}

impl SageLayer {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        c_in: usize,
        c_out: usize,
    ) -> SageLayer {
        SageLayer {
            u: Linear::register(store, rng, &format!("{prefix}.u"), c_out, 2 * c_in, true),
        }
    }

    fn pre_activation<F: Real>(&self, ctx: &mut LayerCtx<F>, h: Var) -> Result<Var, TensorError> {
        let msg = ctx.gather_src(h)?;
        let nsum = ctx.sum_into_dst(msg)?;
        let inv_deg: Vec<F> = ctx
            .view
            .deg
            .iter()
            .map(|&d| if d == 0 { F::zero() } else { real(1.0 / d as f64) })
            .collect();
        let mean = ctx.tape.scale_rows_const(nsum, &inv_deg)?;
        let joined = ctx.tape.concat(h, mean)?;
        ctx.linear(&self.u, joined)
    }
}

// ── family dispatch ──────────────────────────────────────────────────────

/// Which base family a layer belongs to. Decides the activation used after
/// normalization (`elu` for attention, `relu` otherwise) and how edge state
/// threads through.
#[derive(Clone, Debug)]
pub enum BaseLayer {
    Gcn(GcnLayer),
    Gat(GatLayer),
    GatedGcn(GatedGcnLayer),
    Gin(GinLayer),
    Sage(SageLayer),
}

impl BaseLayer {
    /// Aggregation result before normalization and activation. The second
    /// element is the edge state for the next layer, produced only by the
    /// edge-gated family.
    pub fn pre_activation<F: Real>(
        &self,
        ctx: &mut LayerCtx<F>,
        h: Var,
        e: Option<Var>,
    ) -> Result<(Var, Option<Var>), TensorError> {
        match self {
            BaseLayer::Gcn(l) => Ok((l.pre_activation(ctx, h)?, e)),
            BaseLayer::Gat(l) => Ok((l.pre_activation(ctx, h)?, e)),
            BaseLayer::GatedGcn(l) => {
                let e_prev = e.ok_or(TensorError::MissingEdgeState)?;
                let (q, e_next) = l.pre_activation(ctx, h, e_prev)?;
                Ok((q, Some(e_next)))
            }
            BaseLayer::Gin(l) => Ok((l.pre_activation(ctx, h)?, e)),
            BaseLayer::Sage(l) => Ok((l.pre_activation(ctx, h)?, e)),
        }
    }

    /// Post-normalization activation of the family.
    pub fn phi(&self) -> Activation {
        match self {
            BaseLayer::Gat(_) => Activation::Elu,
            _ => Activation::Relu,
        }
    }
}

// ── full layers ──────────────────────────────────────────────────────────

/// One layer of a network, in any of the three shapes.
#[derive(Clone, Debug)]
pub enum Layer {
    /// `h' = relu(bn(p))` with `p` from the correlation path alone.
    PlainFog { fog: FogModule, bn: BnParams },
    /// A base family on its own. Attention normalizes after the activation
    /// (`bn(elu(q))`); every other family activates after normalizing
    /// (`relu(bn(q))`).
    Standalone { base: BaseLayer, bn: BnParams },
    /// Correlation path and base family side by side:
    /// `h' = φ(bn([p ‖ q]))`. The edge-gated family first projects its
    /// wide node pre-activation down with `proj`.
    Hybrid {
        fog: FogModule,
        base: BaseLayer,
        proj: Option<Linear>,
        bn: BnParams,
    },
}

impl Layer {
    /// Runs the layer; returns the new node state and the edge state to
    /// thread into the next layer.
    pub fn forward<F: Real>(
        &self,
        ctx: &mut LayerCtx<F>,
        h: Var,
        e: Option<Var>,
    ) -> Result<(Var, Option<Var>), TensorError> {
        match self {
            Layer::PlainFog { fog, bn } => {
                let p = fog.forward(ctx, h)?;
                let n = ctx.bn(bn, p)?;
                Ok((ctx.tape.relu(n), e))
            }
            Layer::Standalone { base, bn } => {
                let (q, e_next) = base.pre_activation(ctx, h, e)?;
                let out = match base {
                    BaseLayer::Gat(_) => {
                        let act = ctx.tape.elu(q);
                        ctx.bn(bn, act)?
                    }
                    _ => {
                        let n = ctx.bn(bn, q)?;
                        ctx.tape.activation(n, base.phi())
                    }
                };
                Ok((out, e_next))
            }
            Layer::Hybrid {
                fog,
                base,
                proj,
                bn,
            } => {
                let p = fog.forward(ctx, h)?;
                let (q, e_next) = base.pre_activation(ctx, h, e)?;
                let q = match proj {
                    Some(w) => ctx.linear(w, q)?,
                    None => q,
                };
                let cat = ctx.tape.concat(p, q)?;
                let n = ctx.bn(bn, cat)?;
                Ok((ctx.tape.activation(n, base.phi()), e_next))
            }
        }
    }

    /// Output width (node channels).
    pub fn c_out(&self) -> usize {
        match self {
            Layer::PlainFog { bn, .. } | Layer::Standalone { bn, .. } | Layer::Hybrid { bn, .. } => {
                bn.channels
            }
        }
    }
}

#[cfg(test)]
mod tests;
