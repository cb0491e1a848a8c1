//! Parameter bookkeeping shared by every layer.
//!
//! A [`ParamStore`] owns all tensors of a model — trainable parameters and
//! non-trainable buffers (batchnorm running statistics) — in registration
//! order, keyed by hierarchical names like `layers.2.fog.w1`. Before a
//! forward pass the trainable entries are bound onto a tape as leaves;
//! the optimizer walks the same order, so updates are deterministic.

use crate::tensor::{real, BnMode, BnStats, Real, Tape, Tensor, TensorError, Var};
use rand_chacha::ChaCha8Rng;

/// Batchnorm variance floor used everywhere in the engine.
pub const BN_EPS: f64 = 1e-5;
/// Batchnorm running-statistics momentum used everywhere in the engine.
pub const BN_MOMENTUM: f64 = 0.1;
/// Denominator guard of the edge-gated aggregation.
pub const GATE_EPS: f64 = 1e-6;
/// Negative-side slope of attention score activations.
pub const ATTN_LEAK: f64 = 0.2;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Entry<F: Real> {
    pub name: String,
    pub value: Tensor<F>,
    pub trainable: bool,
}

/// Owner of a model's tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Real> {
    entries: Vec<Entry<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.entries.push(Entry {
            name: name.into(),
            value,
            trainable: true,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.entries.push(Entry {
            name: name.into(),
            value,
            trainable: false,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[Entry<F>] {
        &self.entries
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<F>) {
        debug_assert_eq!(self.entries[id.0].value.shape(), value.shape());
        self.entries[id.0].value = value;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    /// Total count of trainable scalars.
    pub fn n_trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Puts every trainable entry on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape<F>) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| e.trainable.then(|| tape.leaf(e.value.clone())))
                .collect(),
        }
    }

    /// Snapshot of every entry's value, for best-epoch bookkeeping.
    pub fn snapshot(&self) -> Vec<Tensor<F>> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<F>]) {
        assert_eq!(snapshot.len(), self.entries.len());
        for (e, t) in self.entries.iter_mut().zip(snapshot) {
            e.value = t.clone();
        }
    }
}

/// Tape bindings of one forward pass, indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    /// Tape variable of a trainable entry. Buffers are not bound; asking for
    /// one is a bug in layer wiring.
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("entry is a buffer, not a trainable parameter")
    }

    /// Gradient lookup companion: the tape var of entry `i`, if trainable.
    pub fn var_of_entry(&self, index: usize) -> Option<Var> {
        self.vars[index]
    }
}

/// Uniform `±1/√fan_in` initialization for a weight-like tensor.
fn init_uniform<F: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(rng, shape, -bound, bound)
}

/// A dense map `x ↦ x·Wᵀ (+ b)` with `W` stored `out×in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub out_dim: usize,
    pub in_dim: usize,
}

impl Linear {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        out_dim: usize,
        in_dim: usize,
        bias: bool,
    ) -> Linear {
        let w = store.add_param(
            format!("{name}.weight"),
            init_uniform(rng, &[out_dim, in_dim], in_dim),
        );
        let b = bias.then(|| {
            store.add_param(format!("{name}.bias"), init_uniform(rng, &[out_dim], in_dim))
        });
        Linear {
            w,
            b,
            out_dim,
            in_dim,
        }
    }

    pub fn apply<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        x: Var,
    ) -> Result<Var, TensorError> {
        let h = tape.matmul_nt(x, bound.var(self.w))?;
        match self.b {
            Some(b) => tape.add_bias(h, bound.var(b)),
            None => Ok(h),
        }
    }
}

/// Embedding table: categorical codes to learned rows.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        vocab: usize,
        dim: usize,
    ) -> Embedding {
        let table = store.add_param(
            format!("{name}.table"),
            init_uniform(rng, &[vocab, dim], dim),
        );
        Embedding { table, vocab, dim }
    }

    pub fn apply<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        codes: &[usize],
    ) -> Result<Var, TensorError> {
        tape.gather_rows(bound.var(self.table), std::rc::Rc::from(codes.to_vec()))
    }
}

/// Batchnorm parameters (γ, β) plus handles to the running-statistics
/// buffers living in the same store.
#[derive(Clone, Debug)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
    pub channels: usize,
}

impl BnParams {
    pub fn register<F: Real>(store: &mut ParamStore<F>, name: &str, channels: usize) -> BnParams {
        let gamma = store.add_param(format!("{name}.gamma"), Tensor::filled(&[channels], F::one()));
        let beta = store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels]));
        let mean = store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]));
        let var = store.add_buffer(
            format!("{name}.running_var"),
            Tensor::filled(&[channels], F::one()),
        );
        BnParams {
            gamma,
            beta,
            mean,
            var,
            channels,
        }
    }

    /// Normalizes `x`, updating the stored running statistics in train mode.
    pub fn apply<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &mut ParamStore<F>,
        bound: &Bound,
        x: Var,
        mode: BnMode,
    ) -> Result<Var, TensorError> {
        let mut stats = BnStats {
            running_mean: store.value(self.mean).clone(),
            running_var: store.value(self.var).clone(),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        };
        let y = tape.batchnorm(x, bound.var(self.gamma), bound.var(self.beta), &mut stats, mode)?;
        if mode == BnMode::Train {
            store.set_value(self.mean, stats.running_mean);
            store.set_value(self.var, stats.running_var);
        }
        Ok(y)
    }
}

/// One-element trainable scalar (the ε of isomorphism layers).
pub fn register_scalar<F: Real>(
    store: &mut ParamStore<F>,
    name: &str,
    value: f64,
) -> ParamId {
    store.add_param(name, Tensor::vector(vec![real(value)]))
}
