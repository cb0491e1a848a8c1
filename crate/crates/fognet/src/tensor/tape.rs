//! Reverse-mode autodiff over a flat operation tape.
//!
//! Every operation pushes one node holding its output value and enough
//! bookkeeping to compute exact input adjoints later. [`Tape::backward`]
//! walks the nodes in reverse creation order, so gradient accumulation is
//! deterministic: the same graph always produces bitwise-identical
//! gradients.

use super::batchnorm::{BnMode, BnStats};
use super::{real, Real, Tensor, TensorError};
use std::rc::Rc;

/// Handle to a value on a [`Tape`]. Cheap to copy; only meaningful for the
/// tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    /// Raw node index, mostly useful for debugging.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity selector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Negative-side slope (0.2 throughout the attention layers).
    LeakyRelu(f64),
    Elu,
    Sigmoid,
}

enum Op<F: Real> {
    /// Input value; gradients accumulate here and stop.
    Leaf,
    /// `C = A · B`.
    Matmul { a: Var, b: Var },
    /// `C = A · Bᵀ` — the usual "row features times weight matrix stored
    /// out×in" product.
    MatmulNT { a: Var, b: Var },
    /// `y = M · v` for a rank-1 `v`.
    MatVec { m: Var, v: Var },
    /// Elementwise sum of same-shape tensors.
    Add { a: Var, b: Var },
    /// Elementwise difference.
    Sub { a: Var, b: Var },
    /// Elementwise (Hadamard) product.
    MulElem { a: Var, b: Var },
    /// Elementwise quotient.
    DivElem { a: Var, b: Var },
    /// Adds a rank-1 bias to every row of a matrix.
    AddBias { m: Var, bias: Var },
    /// Adds a compile-time constant; gradient passes through unchanged.
    AddConst { x: Var },
    /// Multiplies by a compile-time constant.
    ScaleConst { x: Var, c: F },
    /// Scales row `r` by the fixed weight `w[r]` (inverse degrees and
    /// symmetric-normalization coefficients).
    ScaleRowsConst { x: Var, w: Rc<[F]> },
    /// Scales row `r` by the tape variable `r`-th entry (attention weights).
    ScaleRowsVar { x: Var, r: Var },
    /// Multiplies the whole tensor by a one-element tape variable.
    MulScalarVar { x: Var, s: Var },
    /// Pointwise nonlinearity.
    Activation { x: Var, kind: Activation },
    /// Column-wise concatenation; `split` is the width of `a`.
    ConcatCols { a: Var, b: Var, split: usize },
    /// `out[k] = x[idx[k]]` row gather; the adjoint scatter-adds.
    GatherRows { x: Var, idx: Rc<[usize]> },
    /// Sums rows that share a segment id into `n_segments` output rows.
    SegmentSum { x: Var, seg: Rc<[usize]> },
    /// Softmax of rank-1 logits within each segment.
    SegmentSoftmax { logits: Var, seg: Rc<[usize]> },
    /// Kronecker product of two vectors, or row-wise over two matrices.
    Kron { a: Var, b: Var },
    /// Batch normalization; saves the normalized input and the per-channel
    /// inverse standard deviation for the backward pass.
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        xhat: Tensor<F>,
        inv_std: Vec<F>,
    },
    /// Scalar sum of all elements.
    Sum { x: Var },
    /// Scalar mean of all elements.
    Mean { x: Var },
    /// Fused softmax + negative log likelihood with optional class weights;
    /// saves the softmax and the weight normalizer.
    CrossEntropy {
        logits: Var,
        labels: Rc<[usize]>,
        weights: Option<Vec<F>>,
        probs: Tensor<F>,
        wsum: F,
    },
    /// Mean absolute error against a constant target.
    MaeLoss { pred: Var, target: Tensor<F> },
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients<F: Real> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of the loss with respect to `v`, if `v` influenced the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Records operations for reverse-mode differentiation.
///
/// The precision parameter decides the arithmetic of everything recorded:
/// `Tape<f32>` for training-speed passes, `Tape<f64>` for gradient checks.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value held by a variable.
    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Puts an input tensor on the tape. Gradients accumulate on leaves.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Alias of [`Tape::leaf`] that documents intent: constants receive
    /// gradients too, callers simply never read them.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t)
    }

    // ── shape plumbing ──────────────────────────────────────────────────

    fn want_rank(&self, op: &'static str, v: Var, rank: usize) -> Result<(), TensorError> {
        let s = self.value(v).shape();
        if s.len() != rank {
            return Err(TensorError::RankError {
                op,
                expected: rank,
                shape: s.to_vec(),
            });
        }
        Ok(())
    }

    fn want_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    // ── products ────────────────────────────────────────────────────────

    /// `A · B` for rank-2 operands with matching inner dimension.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_rank("matmul", a, 2)?;
        self.want_rank("matmul", b, 2)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = matmul_nn(ta, tb);
        Ok(self.push(out, Op::Matmul { a, b }))
    }

    /// `A · Bᵀ`: multiplies row features by a weight matrix stored out×in.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_rank("matmul_nt", a, 2)?;
        self.want_rank("matmul_nt", b, 2)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = matmul_nt(ta, tb);
        Ok(self.push(out, Op::MatmulNT { a, b }))
    }

    /// `M · v` producing a rank-1 result.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var, TensorError> {
        self.want_rank("matvec", m, 2)?;
        self.want_rank("matvec", v, 1)?;
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.cols() != tv.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                lhs: tm.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let (r, c) = (tm.rows(), tm.cols());
        let mut out = vec![F::zero(); r];
        for i in 0..r {
            let mut acc = F::zero();
            for j in 0..c {
                acc = acc + tm.data()[i * c + j] * tv.data()[j];
            }
            out[i] = acc;
        }
        Ok(self.push(Tensor::vector(out), Op::MatVec { m, v }))
    }

    // ── elementwise arithmetic ──────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_same_shape("add", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_same_shape("sub", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub { a, b }))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_same_shape("mul_elem", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::MulElem { a, b }))
    }

    pub fn div_elem(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_same_shape("div_elem", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x / y);
        Ok(self.push(out, Op::DivElem { a, b }))
    }

    /// Broadcasts a rank-1 bias across the rows of a matrix.
    pub fn add_bias(&mut self, m: Var, bias: Var) -> Result<Var, TensorError> {
        self.want_rank("add_bias", m, 2)?;
        self.want_rank("add_bias", bias, 1)?;
        let (tm, tb) = (self.value(m), self.value(bias));
        if tm.cols() != tb.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: tm.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let cols = tm.cols();
        let mut out = tm.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + tb.data()[i % cols];
        }
        Ok(self.push(out, Op::AddBias { m, bias }))
    }

    /// Adds a constant to every element.
    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let c = real::<F>(c);
        let out = map(self.value(x), |v| v + c);
        self.push(out, Op::AddConst { x })
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = real::<F>(c);
        let out = map(self.value(x), |v| v * c);
        self.push(out, Op::ScaleConst { x, c })
    }

    /// Scales each row of a matrix by a fixed (non-differentiated) weight.
    pub fn scale_rows_const(&mut self, x: Var, w: &[F]) -> Result<Var, TensorError> {
        self.want_rank("scale_rows_const", x, 2)?;
        let tx = self.value(x);
        if tx.rows() != w.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows_const",
                lhs: tx.shape().to_vec(),
                rhs: vec![w.len()],
            });
        }
        let cols = tx.cols();
        let mut out = tx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * w[i / cols];
        }
        let w: Rc<[F]> = Rc::from(w.to_vec());
        Ok(self.push(out, Op::ScaleRowsConst { x, w }))
    }

    /// Scales each row of `x` by the matching entry of the rank-1 variable
    /// `r`; both sides are differentiated.
    pub fn scale_rows(&mut self, x: Var, r: Var) -> Result<Var, TensorError> {
        self.want_rank("scale_rows", x, 2)?;
        self.want_rank("scale_rows", r, 1)?;
        let (tx, tr) = (self.value(x), self.value(r));
        if tx.rows() != tr.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: tx.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let cols = tx.cols();
        let mut out = tx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * tr.data()[i / cols];
        }
        Ok(self.push(out, Op::ScaleRowsVar { x, r }))
    }

    /// Multiplies a tensor by a one-element variable (the `1 + ε` factor of
    /// isomorphism-style layers).
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        if self.value(s).numel() != 1 {
            return Err(TensorError::RankError {
                op: "mul_scalar",
                expected: 0,
                shape: self.value(s).shape().to_vec(),
            });
        }
        let sv = self.value(s).data()[0];
        let out = map(self.value(x), |v| v * sv);
        Ok(self.push(out, Op::MulScalarVar { x, s }))
    }

    // ── nonlinearities ──────────────────────────────────────────────────

    /// Applies a pointwise nonlinearity. Subgradient conventions: `relu` and
    /// `leaky_relu` use the negative-side derivative at exactly zero.
    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = match kind {
            Activation::Relu => map(self.value(x), |v| v.max(F::zero())),
            Activation::LeakyRelu(slope) => {
                let s = real::<F>(slope);
                map(self.value(x), |v| if v > F::zero() { v } else { v * s })
            }
            Activation::Elu => map(self.value(x), |v| {
                if v > F::zero() {
                    v
                } else {
                    v.exp() - F::one()
                }
            }),
            Activation::Sigmoid => map(self.value(x), sigmoid),
        };
        self.push(out, Op::Activation { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Elu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    // ── structure ───────────────────────────────────────────────────────

    /// Concatenates two tensors along the last axis: rank-1 vectors end to
    /// end, or rank-2 matrices column-wise (row counts must match). Zero
    /// widths are fine.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = match (ta.rank(), tb.rank()) {
            (1, 1) => {
                let mut data = ta.data().to_vec();
                data.extend_from_slice(tb.data());
                Tensor::vector(data)
            }
            (2, 2) => {
                if ta.rows() != tb.rows() {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: ta.shape().to_vec(),
                        rhs: tb.shape().to_vec(),
                    });
                }
                let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
                let mut data = Vec::with_capacity(r * (ca + cb));
                for i in 0..r {
                    data.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
                    data.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
                }
                Tensor::matrix(r, ca + cb, data)?
            }
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: ta.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                })
            }
        };
        let split = if ta.rank() == 1 { ta.numel() } else { ta.cols() };
        Ok(self.push(out, Op::ConcatCols { a, b, split }))
    }

    /// Row gather: `out[k] = x[idx[k]]`. The adjoint scatter-adds back, so a
    /// row referenced several times accumulates all its contributions.
    pub fn gather_rows(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var, TensorError> {
        self.want_rank("gather_rows", x, 2)?;
        let tx = self.value(x);
        let (n, c) = (tx.rows(), tx.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: n,
                });
            }
            data.extend_from_slice(&tx.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.push(out, Op::GatherRows { x, idx }))
    }

    /// Sums rows (or rank-1 entries) sharing a segment id into
    /// `n_segments` output rows. Segments with no members produce zeros.
    pub fn segment_sum(
        &mut self,
        x: Var,
        seg: Rc<[usize]>,
        n_segments: usize,
    ) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let rows = match tx.rank() {
            1 => tx.numel(),
            2 => tx.rows(),
            _ => {
                return Err(TensorError::RankError {
                    op: "segment_sum",
                    expected: 2,
                    shape: tx.shape().to_vec(),
                })
            }
        };
        if rows != seg.len() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                lhs: tx.shape().to_vec(),
                rhs: vec![seg.len()],
            });
        }
        for &s in seg.iter() {
            if s >= n_segments {
                return Err(TensorError::SegmentOutOfRange {
                    id: s,
                    n: n_segments,
                });
            }
        }
        let out = if tx.rank() == 1 {
            let mut data = vec![F::zero(); n_segments];
            for (i, &s) in seg.iter().enumerate() {
                data[s] = data[s] + tx.data()[i];
            }
            Tensor::vector(data)
        } else {
            let c = tx.cols();
            let mut data = vec![F::zero(); n_segments * c];
            for (i, &s) in seg.iter().enumerate() {
                let src = &tx.data()[i * c..(i + 1) * c];
                let dst = &mut data[s * c..(s + 1) * c];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = *d + *v;
                }
            }
            Tensor::matrix(n_segments, c, data)?
        };
        Ok(self.push(out, Op::SegmentSum { x, seg }))
    }

    /// Softmax of rank-1 logits within each segment (shift-by-max stable).
    /// Every segment in `0..n_segments` must be populated: an empty segment
    /// means a node with no neighbors is asking for attention weights, which
    /// has no answer.
    pub fn segment_softmax(
        &mut self,
        logits: Var,
        seg: Rc<[usize]>,
        n_segments: usize,
    ) -> Result<Var, TensorError> {
        self.want_rank("segment_softmax", logits, 1)?;
        let tl = self.value(logits);
        if tl.numel() != seg.len() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                lhs: tl.shape().to_vec(),
                rhs: vec![seg.len()],
            });
        }
        for &s in seg.iter() {
            if s >= n_segments {
                return Err(TensorError::SegmentOutOfRange {
                    id: s,
                    n: n_segments,
                });
            }
        }
        let mut seen = vec![false; n_segments];
        let mut maxes = vec![F::neg_infinity(); n_segments];
        for (i, &s) in seg.iter().enumerate() {
            seen[s] = true;
            maxes[s] = maxes[s].max(tl.data()[i]);
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(TensorError::EmptySegment { segment: empty });
        }
        let mut out = vec![F::zero(); seg.len()];
        let mut sums = vec![F::zero(); n_segments];
        for (i, &s) in seg.iter().enumerate() {
            let e = (tl.data()[i] - maxes[s]).exp();
            out[i] = e;
            sums[s] = sums[s] + e;
        }
        for (i, &s) in seg.iter().enumerate() {
            out[i] = out[i] / sums[s];
        }
        Ok(self.push(Tensor::vector(out), Op::SegmentSoftmax { logits, seg }))
    }

    /// Kronecker product of two vectors:
    /// `out[i·|b| + j] = a[i] · b[j]`.
    pub fn kron(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_rank("kron", a, 1)?;
        self.want_rank("kron", b, 1)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (p, q) = (ta.numel(), tb.numel());
        let mut data = Vec::with_capacity(p * q);
        for i in 0..p {
            let ai = ta.data()[i];
            for j in 0..q {
                data.push(ai * tb.data()[j]);
            }
        }
        Ok(self.push(Tensor::vector(data), Op::Kron { a, b }))
    }

    /// Row-wise Kronecker product: row `r` of the output is
    /// `kron(a[r], b[r])`, so two matrices `E×Ca` and `E×Cb` become
    /// `E×(Ca·Cb)`.
    pub fn kron_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_rank("kron_rows", a, 2)?;
        self.want_rank("kron_rows", b, 2)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "kron_rows",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (r, p, q) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(r * p * q);
        for e in 0..r {
            for i in 0..p {
                let ai = ta.data()[e * p + i];
                for j in 0..q {
                    data.push(ai * tb.data()[e * q + j]);
                }
            }
        }
        let out = Tensor::matrix(r, p * q, data)?;
        Ok(self.push(out, Op::Kron { a, b }))
    }

    // ── batch normalization ─────────────────────────────────────────────

    /// Per-channel batch normalization of an `N×C` matrix.
    ///
    /// * `Train` normalizes with batch statistics (population variance),
    ///   updates `stats` in place, and needs `N ≥ 2`.
    /// * `Eval` normalizes with the running statistics.
    /// * `Identity` passes the input through untouched (for numeric
    ///   comparisons that must exclude normalization).
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats<F>,
        mode: BnMode,
    ) -> Result<Var, TensorError> {
        self.want_rank("batchnorm", x, 2)?;
        self.want_rank("batchnorm", gamma, 1)?;
        self.want_rank("batchnorm", beta, 1)?;
        let tx = self.value(x);
        let (n, c) = (tx.rows(), tx.cols());
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                lhs: vec![n, c],
                rhs: self.value(gamma).shape().to_vec(),
            });
        }
        if stats.running_mean.numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                lhs: vec![n, c],
                rhs: stats.running_mean.shape().to_vec(),
            });
        }
        if mode == BnMode::Identity {
            let out = tx.clone();
            return Ok(self.push(
                out,
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mode,
                    xhat: Tensor::zeros(&[0, 0]),
                    inv_std: Vec::new(),
                },
            ));
        }
        let eps = real::<F>(stats.eps);
        let (mean, inv_std) = match mode {
            BnMode::Train => {
                if n < 2 {
                    return Err(TensorError::DegenerateBatch);
                }
                let nf = real::<F>(n as f64);
                let mut mean = vec![F::zero(); c];
                for i in 0..n {
                    for j in 0..c {
                        mean[j] = mean[j] + tx.data()[i * c + j];
                    }
                }
                for m in mean.iter_mut() {
                    *m = *m / nf;
                }
                let mut var = vec![F::zero(); c];
                for i in 0..n {
                    for j in 0..c {
                        let d = tx.data()[i * c + j] - mean[j];
                        var[j] = var[j] + d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v = *v / nf;
                }
                // Running statistics keep the population variance too; they
                // only ever feed eval-mode normalization.
                let mom = real::<F>(stats.momentum);
                let keep = F::one() - mom;
                for j in 0..c {
                    let rm = stats.running_mean.data()[j];
                    let rv = stats.running_var.data()[j];
                    stats.running_mean.data_mut()[j] = keep * rm + mom * mean[j];
                    stats.running_var.data_mut()[j] = keep * rv + mom * var[j];
                }
                let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
                (mean, inv_std)
            }
            BnMode::Eval => {
                let mean = stats.running_mean.data().to_vec();
                let inv_std = stats
                    .running_var
                    .data()
                    .iter()
                    .map(|&v| F::one() / (v + eps).sqrt())
                    .collect();
                (mean, inv_std)
            }
            BnMode::Identity => unreachable!(),
        };
        let mut xhat = Tensor::zeros(&[n, c]);
        let mut out = Tensor::zeros(&[n, c]);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let txd = self.value(x).data();
        for i in 0..n {
            for j in 0..c {
                let h = (txd[i * c + j] - mean[j]) * inv_std[j];
                xhat.data_mut()[i * c + j] = h;
                out.data_mut()[i * c + j] = g[j] * h + b[j];
            }
        }
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                xhat,
                inv_std,
            },
        ))
    }

    // ── reductions and losses ───────────────────────────────────────────

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Mean of all elements as a rank-0 scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: F = t.data().iter().copied().sum();
        let m = s / real::<F>(t.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean { x })
    }

    /// Fused softmax cross-entropy over rows of `N×K` logits.
    ///
    /// With class weights `w`, the loss is `Σ w[yᵢ]·ℓᵢ / Σ w[yᵢ]`; without,
    /// the plain mean of the per-row negative log likelihoods.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        class_weights: Option<&[F]>,
    ) -> Result<Var, TensorError> {
        self.want_rank("cross_entropy", logits, 2)?;
        let tl = self.value(logits);
        let (n, k) = (tl.rows(), tl.cols());
        if n == 0 {
            return Err(TensorError::EmptySegment { segment: 0 });
        }
        if labels.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(w) = class_weights {
            if w.len() != k {
                return Err(TensorError::ShapeMismatch {
                    op: "cross_entropy",
                    lhs: vec![n, k],
                    rhs: vec![w.len()],
                });
            }
        }
        for &y in labels {
            if y >= k {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: y,
                    len: k,
                });
            }
        }
        let mut probs = Tensor::zeros(&[n, k]);
        let mut loss = F::zero();
        let mut wsum = F::zero();
        for i in 0..n {
            let row = &tl.data()[i * k..(i + 1) * k];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for j in 0..k {
                let e = (row[j] - mx).exp();
                probs.data_mut()[i * k + j] = e;
                z = z + e;
            }
            for j in 0..k {
                probs.data_mut()[i * k + j] = probs.data_mut()[i * k + j] / z;
            }
            let w = class_weights.map_or(F::one(), |w| w[labels[i]]);
            let nll = z.ln() + mx - tl.data()[i * k + labels[i]];
            loss = loss + w * nll;
            wsum = wsum + w;
        }
        loss = loss / wsum;
        let labels: Rc<[usize]> = Rc::from(labels.to_vec());
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels,
                weights: class_weights.map(|w| w.to_vec()),
                probs,
                wsum,
            },
        ))
    }

    /// Mean absolute error against a constant target of the same shape.
    /// The subgradient at zero residual is zero.
    pub fn mae(&mut self, pred: Var, target: &Tensor<F>) -> Result<Var, TensorError> {
        let tp = self.value(pred);
        if tp.shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mae",
                lhs: tp.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        if tp.numel() == 0 {
            return Err(TensorError::EmptySegment { segment: 0 });
        }
        let n = real::<F>(tp.numel() as f64);
        let s: F = tp
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (*p - *t).abs())
            .sum();
        Ok(self.push(
            Tensor::scalar(s / n),
            Op::MaeLoss {
                pred,
                target: target.clone(),
            },
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Runs the reverse pass from a scalar loss and returns per-variable
    /// gradients. The tape is left intact, so multiple backward passes from
    /// different losses are possible.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, TensorError> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::NotOnTape {
                id: loss.0,
                len: self.nodes.len(),
            });
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::LossNotScalar {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_vec(
            self.nodes[loss.0].value.shape().to_vec(),
            vec![F::one()],
        )?);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.pull_back(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds the adjoint contributions of node `id` (whose output gradient is
    /// `g`) onto its parents.
    fn pull_back(&self, id: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, add: &mut dyn FnMut(&mut Tensor<F>)| {
            let slot =
                grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
            add(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let da = matmul_nt(g, val(*b));
                acc(*a, &mut |t| t.add_scaled(&da, F::one()));
                let db = matmul_tn(val(*a), g);
                acc(*b, &mut |t| t.add_scaled(&db, F::one()));
            }
            Op::MatmulNT { a, b } => {
                let da = matmul_nn(g, val(*b));
                acc(*a, &mut |t| t.add_scaled(&da, F::one()));
                let db = matmul_tn(g, val(*a));
                acc(*b, &mut |t| t.add_scaled(&db, F::one()));
            }
            Op::MatVec { m, v } => {
                let (tm, tv) = (val(*m), val(*v));
                let (r, c) = (tm.rows(), tm.cols());
                acc(*m, &mut |t| {
                    for i in 0..r {
                        for j in 0..c {
                            let cur = t.at2(i, j);
                            t.set2(i, j, cur + g.data()[i] * tv.data()[j]);
                        }
                    }
                });
                acc(*v, &mut |t| {
                    for j in 0..c {
                        let mut s = F::zero();
                        for i in 0..r {
                            s = s + g.data()[i] * tm.at2(i, j);
                        }
                        t.data_mut()[j] = t.data_mut()[j] + s;
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &mut |t| t.add_scaled(g, F::one()));
                acc(*b, &mut |t| t.add_scaled(g, F::one()));
            }
            Op::Sub { a, b } => {
                acc(*a, &mut |t| t.add_scaled(g, F::one()));
                acc(*b, &mut |t| t.add_scaled(g, -F::one()));
            }
            Op::MulElem { a, b } => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |t| {
                    for ((d, gv), bv) in t.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *d = *d + *gv * *bv;
                    }
                });
                acc(*b, &mut |t| {
                    for ((d, gv), av) in t.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *d = *d + *gv * *av;
                    }
                });
            }
            Op::DivElem { a, b } => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |t| {
                    for ((d, gv), bv) in t.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *d = *d + *gv / *bv;
                    }
                });
                acc(*b, &mut |t| {
                    for i in 0..t.numel() {
                        let bv = tb.data()[i];
                        t.data_mut()[i] =
                            t.data_mut()[i] - g.data()[i] * ta.data()[i] / (bv * bv);
                    }
                });
            }
            Op::AddBias { m, bias } => {
                acc(*m, &mut |t| t.add_scaled(g, F::one()));
                let cols = val(*bias).numel();
                acc(*bias, &mut |t| {
                    for (i, gv) in g.data().iter().enumerate() {
                        let j = i % cols;
                        t.data_mut()[j] = t.data_mut()[j] + *gv;
                    }
                });
            }
            Op::AddConst { x } => {
                acc(*x, &mut |t| t.add_scaled(g, F::one()));
            }
            Op::ScaleConst { x, c } => {
                acc(*x, &mut |t| t.add_scaled(g, *c));
            }
            Op::ScaleRowsConst { x, w } => {
                let cols = val(*x).cols();
                acc(*x, &mut |t| {
                    for (i, gv) in g.data().iter().enumerate() {
                        t.data_mut()[i] = t.data_mut()[i] + *gv * w[i / cols];
                    }
                });
            }
            Op::ScaleRowsVar { x, r } => {
                let (tx, tr) = (val(*x), val(*r));
                let cols = tx.cols();
                acc(*x, &mut |t| {
                    for (i, gv) in g.data().iter().enumerate() {
                        t.data_mut()[i] = t.data_mut()[i] + *gv * tr.data()[i / cols];
                    }
                });
                acc(*r, &mut |t| {
                    for (i, gv) in g.data().iter().enumerate() {
                        let e = i / cols;
                        t.data_mut()[e] = t.data_mut()[e] + *gv * tx.data()[i];
                    }
                });
            }
            Op::MulScalarVar { x, s } => {
                let (tx, ts) = (val(*x), val(*s));
                let sv = ts.data()[0];
                acc(*x, &mut |t| t.add_scaled(g, sv));
                acc(*s, &mut |t| {
                    let mut sum = F::zero();
                    for (gv, xv) in g.data().iter().zip(tx.data()) {
                        sum = sum + *gv * *xv;
                    }
                    t.data_mut()[0] = t.data_mut()[0] + sum;
                });
            }
            Op::Activation { x, kind } => {
                let tx = val(*x);
                let out = &node.value;
                acc(*x, &mut |t| match kind {
                    Activation::Relu => {
                        for (i, gv) in g.data().iter().enumerate() {
                            if tx.data()[i] > F::zero() {
                                t.data_mut()[i] = t.data_mut()[i] + *gv;
                            }
                        }
                    }
                    Activation::LeakyRelu(slope) => {
                        let s = real::<F>(*slope);
                        for (i, gv) in g.data().iter().enumerate() {
                            let d = if tx.data()[i] > F::zero() { F::one() } else { s };
                            t.data_mut()[i] = t.data_mut()[i] + *gv * d;
                        }
                    }
                    Activation::Elu => {
                        for (i, gv) in g.data().iter().enumerate() {
                            let d = if tx.data()[i] > F::zero() {
                                F::one()
                            } else {
                                out.data()[i] + F::one()
                            };
                            t.data_mut()[i] = t.data_mut()[i] + *gv * d;
                        }
                    }
                    Activation::Sigmoid => {
                        for (i, gv) in g.data().iter().enumerate() {
                            let y = out.data()[i];
                            t.data_mut()[i] = t.data_mut()[i] + *gv * y * (F::one() - y);
                        }
                    }
                });
            }
            Op::ConcatCols { a, b, split } => {
                let (ta, tb) = (val(*a), val(*b));
                if ta.rank() == 1 {
                    acc(*a, &mut |t| {
                        for i in 0..*split {
                            t.data_mut()[i] = t.data_mut()[i] + g.data()[i];
                        }
                    });
                    acc(*b, &mut |t| {
                        for i in 0..tb.numel() {
                            t.data_mut()[i] = t.data_mut()[i] + g.data()[split + i];
                        }
                    });
                } else {
                    let (ca, cb) = (ta.cols(), tb.cols());
                    let cols = ca + cb;
                    acc(*a, &mut |t| {
                        for r in 0..ta.rows() {
                            for j in 0..ca {
                                let cur = t.at2(r, j);
                                t.set2(r, j, cur + g.data()[r * cols + j]);
                            }
                        }
                    });
                    acc(*b, &mut |t| {
                        for r in 0..tb.rows() {
                            for j in 0..cb {
                                let cur = t.at2(r, j);
                                t.set2(r, j, cur + g.data()[r * cols + ca + j]);
                            }
                        }
                    });
                }
            }
            Op::GatherRows { x, idx } => {
                let c = val(*x).cols();
                acc(*x, &mut |t| {
                    for (e, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            let cur = t.at2(i, j);
                            t.set2(i, j, cur + g.data()[e * c + j]);
                        }
                    }
                });
            }
            Op::SegmentSum { x, seg } => {
                let tx = val(*x);
                if tx.rank() == 1 {
                    acc(*x, &mut |t| {
                        for (i, &s) in seg.iter().enumerate() {
                            t.data_mut()[i] = t.data_mut()[i] + g.data()[s];
                        }
                    });
                } else {
                    let c = tx.cols();
                    acc(*x, &mut |t| {
                        for (i, &s) in seg.iter().enumerate() {
                            for j in 0..c {
                                t.data_mut()[i * c + j] =
                                    t.data_mut()[i * c + j] + g.data()[s * c + j];
                            }
                        }
                    });
                }
            }
            Op::SegmentSoftmax { logits, seg } => {
                let y = &node.value;
                // dℓ/dzᵢ = yᵢ·(gᵢ − Σ_j∈seg gⱼ·yⱼ)
                let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![F::zero(); n_seg];
                for (i, &s) in seg.iter().enumerate() {
                    dot[s] = dot[s] + g.data()[i] * y.data()[i];
                }
                acc(*logits, &mut |t| {
                    for (i, &s) in seg.iter().enumerate() {
                        t.data_mut()[i] =
                            t.data_mut()[i] + y.data()[i] * (g.data()[i] - dot[s]);
                    }
                });
            }
            Op::Kron { a, b } => {
                let (ta, tb) = (val(*a), val(*b));
                let rows = if ta.rank() == 1 { 1 } else { ta.rows() };
                let (p, q) = if ta.rank() == 1 {
                    (ta.numel(), tb.numel())
                } else {
                    (ta.cols(), tb.cols())
                };
                acc(*a, &mut |t| {
                    for e in 0..rows {
                        for i in 0..p {
                            let mut s = F::zero();
                            for j in 0..q {
                                s = s + g.data()[e * p * q + i * q + j] * tb.data()[e * q + j];
                            }
                            t.data_mut()[e * p + i] = t.data_mut()[e * p + i] + s;
                        }
                    }
                });
                acc(*b, &mut |t| {
                    for e in 0..rows {
                        for j in 0..q {
                            let mut s = F::zero();
                            for i in 0..p {
                                s = s + g.data()[e * p * q + i * q + j] * ta.data()[e * p + i];
                            }
                            t.data_mut()[e * q + j] = t.data_mut()[e * q + j] + s;
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                xhat,
                inv_std,
            } => {
                if *mode == BnMode::Identity {
                    acc(*x, &mut |t| t.add_scaled(g, F::one()));
                    return;
                }
                let (n, c) = (val(*x).rows(), val(*x).cols());
                let tg = val(*gamma);
                // Channel sums shared by every branch of the adjoint.
                let mut sum_g = vec![F::zero(); c];
                let mut sum_gx = vec![F::zero(); c];
                for i in 0..n {
                    for j in 0..c {
                        let gv = g.data()[i * c + j];
                        sum_g[j] = sum_g[j] + gv;
                        sum_gx[j] = sum_gx[j] + gv * xhat.data()[i * c + j];
                    }
                }
                acc(*gamma, &mut |t| {
                    for j in 0..c {
                        t.data_mut()[j] = t.data_mut()[j] + sum_gx[j];
                    }
                });
                acc(*beta, &mut |t| {
                    for j in 0..c {
                        t.data_mut()[j] = t.data_mut()[j] + sum_g[j];
                    }
                });
                match mode {
                    BnMode::Train => {
                        let nf = real::<F>(n as f64);
                        acc(*x, &mut |t| {
                            for i in 0..n {
                                for j in 0..c {
                                    let gv = g.data()[i * c + j];
                                    let h = xhat.data()[i * c + j];
                                    let d = tg.data()[j] * inv_std[j] / nf
                                        * (nf * gv - sum_g[j] - h * sum_gx[j]);
                                    t.data_mut()[i * c + j] = t.data_mut()[i * c + j] + d;
                                }
                            }
                        });
                    }
                    BnMode::Eval => {
                        acc(*x, &mut |t| {
                            for i in 0..n {
                                for j in 0..c {
                                    let d = g.data()[i * c + j] * tg.data()[j] * inv_std[j];
                                    t.data_mut()[i * c + j] = t.data_mut()[i * c + j] + d;
                                }
                            }
                        });
                    }
                    BnMode::Identity => unreachable!(),
                }
            }
            Op::Sum { x } => {
                let gv = g.data()[0];
                acc(*x, &mut |t| {
                    for d in t.data_mut() {
                        *d = *d + gv;
                    }
                });
            }
            Op::Mean { x } => {
                let n = real::<F>(val(*x).numel() as f64);
                let gv = g.data()[0] / n;
                acc(*x, &mut |t| {
                    for d in t.data_mut() {
                        *d = *d + gv;
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                weights,
                probs,
                wsum,
            } => {
                let gv = g.data()[0];
                let k = probs.cols();
                acc(*logits, &mut |t| {
                    for (i, &y) in labels.iter().enumerate() {
                        let w = weights.as_ref().map_or(F::one(), |w| w[y]);
                        let scale = gv * w / *wsum;
                        for j in 0..k {
                            let indicator = if j == y { F::one() } else { F::zero() };
                            let d = scale * (probs.data()[i * k + j] - indicator);
                            t.data_mut()[i * k + j] = t.data_mut()[i * k + j] + d;
                        }
                    }
                });
            }
            Op::MaeLoss { pred, target } => {
                let n = real::<F>(val(*pred).numel() as f64);
                let gv = g.data()[0] / n;
                let tp = val(*pred);
                acc(*pred, &mut |t| {
                    for i in 0..t.numel() {
                        let r = tp.data()[i] - target.data()[i];
                        let s = if r > F::zero() {
                            F::one()
                        } else if r < F::zero() {
                            -F::one()
                        } else {
                            F::zero()
                        };
                        t.data_mut()[i] = t.data_mut()[i] + gv * s;
                    }
                });
            }
        }
    }
}

// ── raw kernels ─────────────────────────────────────────────────────────

fn sigmoid<F: Real>(v: F) -> F {
    // Split on sign so the exponential never overflows.
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

fn map<F: Real>(t: &Tensor<F>, f: impl Fn(F) -> F) -> Tensor<F> {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v = f(*v);
    }
    out
}

fn zip<F: Real>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let mut out = a.clone();
    for (v, w) in out.data_mut().iter_mut().zip(b.data()) {
        *v = f(*v, *w);
    }
    out
}

/// `A·B` with an i-k-j loop order (rows of `B` stream through cache).
fn matmul_nn<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for kk in 0..k {
            let aik = a.data()[i * k + kk];
            let brow = &b.data()[kk * n..(kk + 1) * n];
            let orow = &mut out.data_mut()[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + aik * brow[j];
            }
        }
    }
    out
}

/// `A·Bᵀ` where both store the shared dimension contiguously.
fn matmul_nt<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data()[j * k..(j + 1) * k];
            let mut s = F::zero();
            for kk in 0..k {
                s = s + arow[kk] * brow[kk];
            }
            out.data_mut()[i * n + j] = s;
        }
    }
    out
}

/// `Aᵀ·B` for `A: m×k`, `B: m×n`, accumulating rank-1 updates row by row.
fn matmul_tn<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    let mut out = Tensor::zeros(&[k, n]);
    for r in 0..m {
        for i in 0..k {
            let ari = a.data()[r * k + i];
            let brow = &b.data()[r * n..(r + 1) * n];
            let orow = &mut out.data_mut()[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + ari * brow[j];
            }
        }
    }
    out
}
