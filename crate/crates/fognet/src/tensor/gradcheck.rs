//! Finite-difference verification of tape adjoints.
//!
//! [`grad_check`] rebuilds the forward pass through a user closure, takes
//! analytic gradients with [`Tape::backward`], then perturbs every input
//! element by ±`step` and compares against the central difference. All
//! checking runs in `f64`; anything worse than [`DEFAULT_TOL`] relative
//! error points at a wrong adjoint, not at float noise.

use super::{Tape, Tensor, TensorError, Var};
use std::fmt;

/// Central-difference step. With `f64` arithmetic this balances truncation
/// against cancellation for losses of order one.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Acceptance threshold on [`rel_err`].
pub const DEFAULT_TOL: f64 = 1e-4;

/// Relative error with an absolute floor:
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst element found for one named input.
#[derive(Clone, Debug)]
pub struct InputReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat element index where the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of a full gradient check.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    /// Largest relative error over every element of every input.
    pub fn max_rel_err(&self) -> f64 {
        self.inputs
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.inputs {
            writeln!(
                f,
                "  {:<28} max rel err {:>12.3e}  (analytic {: >13.6e}, numeric {: >13.6e})",
                r.name, r.max_rel_err, r.analytic, r.numeric
            )?;
        }
        Ok(())
    }
}

/// Checks the gradient of a scalar-valued computation with respect to every
/// element of every input.
///
/// `forward` receives a fresh tape and the inputs bound as leaves, in order,
/// and must return the loss variable. It is called once for the analytic
/// pass and twice per input element for the numeric one, so it must be a
/// pure function of the bound values — recreate any mutable state (running
/// batch statistics, for instance) inside the closure on every call.
pub fn grad_check(
    inputs: &[(String, Tensor<f64>)],
    step: f64,
    forward: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
) -> Result<GradCheckReport, TensorError> {
    let eval = |vals: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = forward(&mut tape, &vars)?;
        let lv = tape.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::LossNotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        Ok(lv.item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let loss = forward(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let base: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut report = GradCheckReport::default();
    for (i, (name, t)) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]);
        let mut worst = InputReport {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in 0..t.numel() {
            let mut plus = base.clone();
            plus[i].data_mut()[j] += step;
            let mut minus = base.clone();
            minus[i].data_mut()[j] -= step;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
            // A missing gradient means the loss genuinely does not depend on
            // this input, i.e. the analytic gradient is exactly zero.
            let ana = analytic.map_or(0.0, |g| g.data()[j]);
            let re = rel_err(ana, numeric);
            if re >= worst.max_rel_err {
                worst = InputReport {
                    name: name.clone(),
                    max_rel_err: re,
                    worst_index: j,
                    analytic: ana,
                    numeric,
                };
            }
        }
        report.inputs.push(worst);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Activation, BnMode, BnStats};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::rc::Rc;

    /// Uniform away from zero so kinked activations and |·| stay FD-safe.
    fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let mag = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        Tensor::from_vec(shape.to_vec(), data).unwrap()
    }

    fn check(
        inputs: Vec<(String, Tensor<f64>)>,
        forward: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
    ) {
        let report = grad_check(&inputs, DEFAULT_STEP, forward).unwrap();
        assert!(
            report.passes(DEFAULT_TOL),
            "gradient check failed:\n{report}"
        );
    }

    fn named(parts: Vec<Tensor<f64>>) -> Vec<(String, Tensor<f64>)> {
        parts
            .into_iter()
            .enumerate()
            .map(|(i, t)| (format!("input{i}"), t))
            .collect()
    }

    #[test]
    fn products_sweep() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, k, n) = (
                rng.gen_range(1..5),
                rng.gen_range(1..5),
                rng.gen_range(1..5),
            );
            let a = off_zero(&mut rng, &[m, k]);
            let b = off_zero(&mut rng, &[k, n]);
            check(named(vec![a, b]), &|t, v| {
                let c = t.matmul(v[0], v[1])?;
                Ok(t.sum(c))
            });
            let a = off_zero(&mut rng, &[m, k]);
            let b = off_zero(&mut rng, &[n, k]);
            check(named(vec![a, b]), &|t, v| {
                let c = t.matmul_nt(v[0], v[1])?;
                Ok(t.mean(c))
            });
            let mmat = off_zero(&mut rng, &[m, k]);
            let vvec = off_zero(&mut rng, &[k]);
            check(named(vec![mmat, vvec]), &|t, v| {
                let y = t.matvec(v[0], v[1])?;
                Ok(t.sum(y))
            });
        }
    }

    #[test]
    fn elementwise_sweep() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let shape = [rng.gen_range(1..5usize), rng.gen_range(1..5usize)];
            let a = off_zero(&mut rng, &shape);
            let b = off_zero(&mut rng, &shape);
            check(named(vec![a.clone(), b.clone()]), &|t, v| {
                let s = t.add(v[0], v[1])?;
                let d = t.sub(s, v[1])?;
                let m = t.mul_elem(d, v[1])?;
                Ok(t.sum(m))
            });
            // Quotients with denominators bounded away from zero.
            check(named(vec![a.clone(), b]), &|t, v| {
                let q = t.div_elem(v[0], v[1])?;
                Ok(t.mean(q))
            });
            let bias = off_zero(&mut rng, &[shape[1]]);
            check(named(vec![a.clone(), bias]), &|t, v| {
                let y = t.add_bias(v[0], v[1])?;
                Ok(t.sum(y))
            });
            check(named(vec![a.clone()]), &|t, v| {
                let y = t.add_const(v[0], 0.7);
                let z = t.scale(y, -1.3);
                Ok(t.sum(z))
            });
            let r = off_zero(&mut rng, &[shape[0]]);
            check(named(vec![a.clone(), r]), &|t, v| {
                let y = t.scale_rows(v[0], v[1])?;
                Ok(t.sum(y))
            });
            let w: Vec<f64> = (0..shape[0]).map(|i| 0.5 + i as f64).collect();
            let wc = w.clone();
            check(named(vec![a.clone()]), &move |t, v| {
                let y = t.scale_rows_const(v[0], &wc)?;
                Ok(t.sum(y))
            });
            let s = off_zero(&mut rng, &[1]);
            check(named(vec![a, s]), &|t, v| {
                let y = t.mul_scalar(v[0], v[1])?;
                Ok(t.sum(y))
            });
        }
    }

    #[test]
    fn activation_sweep() {
        let kinds = [
            Activation::Relu,
            Activation::LeakyRelu(0.2),
            Activation::Elu,
            Activation::Sigmoid,
        ];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let shape = [rng.gen_range(1..6usize), rng.gen_range(1..4usize)];
            let x = off_zero(&mut rng, &shape);
            for kind in kinds {
                check(named(vec![x.clone()]), &move |t, v| {
                    let y = t.activation(v[0], kind);
                    Ok(t.sum(y))
                });
            }
        }
    }

    #[test]
    fn structure_sweep() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let rows = rng.gen_range(1..5usize);
            let (ca, cb) = (rng.gen_range(1..4usize), rng.gen_range(1..4usize));
            let a = off_zero(&mut rng, &[rows, ca]);
            let b = off_zero(&mut rng, &[rows, cb]);
            check(named(vec![a.clone(), b.clone()]), &|t, v| {
                let c = t.concat(v[0], v[1])?;
                Ok(t.sum(c))
            });
            check(named(vec![a.clone(), b.clone()]), &|t, v| {
                let k = t.kron_rows(v[0], v[1])?;
                Ok(t.mean(k))
            });
            let (la, lb) = (rng.gen_range(1..5usize), rng.gen_range(1..5usize));
            let va = off_zero(&mut rng, &[la]);
            let vb = off_zero(&mut rng, &[lb]);
            check(named(vec![va.clone(), vb.clone()]), &|t, v| {
                let k = t.kron(v[0], v[1])?;
                Ok(t.sum(k))
            });
            check(named(vec![va, vb]), &|t, v| {
                let c = t.concat(v[0], v[1])?;
                Ok(t.sum(c))
            });
            // Gather with duplicate indices exercises the scatter-add.
            let n = rng.gen_range(2..5usize);
            let cg = rng.gen_range(1..4usize);
            let x = off_zero(&mut rng, &[n, cg]);
            let idx: Rc<[usize]> =
                Rc::from((0..6).map(|_| rng.gen_range(0..n)).collect::<Vec<_>>());
            check(named(vec![x]), &move |t, v| {
                let gthr = t.gather_rows(v[0], idx.clone())?;
                Ok(t.sum(gthr))
            });
        }
    }

    #[test]
    fn segment_sweep() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let n_seg = rng.gen_range(1..4usize);
            let e = rng.gen_range(n_seg..n_seg + 6);
            // Cover every segment so softmax is defined.
            let mut seg: Vec<usize> = (0..n_seg).collect();
            for _ in n_seg..e {
                seg.push(rng.gen_range(0..n_seg));
            }
            let seg: Rc<[usize]> = Rc::from(seg);
            let cs = rng.gen_range(1..4usize);
            let x = off_zero(&mut rng, &[e, cs]);
            let seg2 = seg.clone();
            check(named(vec![x]), &move |t, v| {
                let s = t.segment_sum(v[0], seg2.clone(), n_seg)?;
                Ok(t.sum(s))
            });
            let logits = off_zero(&mut rng, &[e]);
            let proj = off_zero(&mut rng, &[e]);
            let seg3 = seg.clone();
            check(named(vec![logits, proj]), &move |t, v| {
                // Project through a second input so the softmax gradient is
                // not annihilated by the rows-sum-to-one structure.
                let y = t.segment_softmax(v[0], seg3.clone(), n_seg)?;
                let p = t.mul_elem(y, v[1])?;
                Ok(t.sum(p))
            });
        }
    }

    #[test]
    fn batchnorm_sweep() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let n = rng.gen_range(2..6usize);
            let c = rng.gen_range(1..4usize);
            let x = off_zero(&mut rng, &[n, c]);
            let gamma = off_zero(&mut rng, &[c]);
            let beta = off_zero(&mut rng, &[c]);
            // Project with a fixed random tensor: a plain sum has an exactly
            // zero x-gradient in train mode (the batch sum is N·β), which
            // degenerates the relative-error comparison.
            let proj = off_zero(&mut rng, &[n, c]);
            for mode in [BnMode::Train, BnMode::Eval] {
                let proj = proj.clone();
                check(
                    named(vec![x.clone(), gamma.clone(), beta.clone()]),
                    &move |t, v| {
                        let mut stats = BnStats::new(c, 1e-5, 0.1);
                        // Non-trivial eval statistics.
                        for (i, m) in stats.running_mean.data_mut().iter_mut().enumerate() {
                            *m = 0.1 * i as f64;
                        }
                        for (i, s) in stats.running_var.data_mut().iter_mut().enumerate() {
                            *s = 0.5 + 0.2 * i as f64;
                        }
                        let y = t.batchnorm(v[0], v[1], v[2], &mut stats, mode)?;
                        let r = t.constant(proj.clone());
                        let p = t.mul_elem(y, r)?;
                        Ok(t.sum(p))
                    },
                );
            }
        }
    }

    #[test]
    fn loss_sweep() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
            let n = rng.gen_range(1..6usize);
            let k = rng.gen_range(2..5usize);
            let logits = off_zero(&mut rng, &[n, k]);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let labels2 = labels.clone();
            check(named(vec![logits.clone()]), &move |t, v| {
                t.cross_entropy(v[0], &labels2, None)
            });
            let weights: Vec<f64> = (0..k).map(|i| 1.0 + i as f64).collect();
            check(named(vec![logits]), &move |t, v| {
                t.cross_entropy(v[0], &labels, Some(&weights))
            });
            let pred = off_zero(&mut rng, &[n, 1]);
            // Targets far from predictions keep |·| differentiable.
            let target = Tensor::filled(&[n, 1], 3.0);
            check(named(vec![pred]), &move |t, v| t.mae(v[0], &target));
        }
    }

    #[test]
    fn composite_pipeline_sweep() {
        // Chains resembling a full message-passing layer, checked end to end.
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            let n = rng.gen_range(2..5usize);
            let c = rng.gen_range(1..4usize);
            let h = off_zero(&mut rng, &[n, c]);
            let w = off_zero(&mut rng, &[c + 1, c]);
            let idx: Rc<[usize]> =
                Rc::from((0..4).map(|_| rng.gen_range(0..n)).collect::<Vec<_>>());
            let seg: Rc<[usize]> = Rc::from(vec![0, 0, 1, 1]);
            check(named(vec![h, w]), &move |t, v| {
                let z = t.matmul_nt(v[0], v[1])?;
                let a = t.relu(z);
                let gthr = t.gather_rows(a, idx.clone())?;
                let k = t.kron_rows(gthr, gthr)?;
                let s = t.segment_sum(k, seg.clone(), 2)?;
                Ok(t.mean(s))
            });
        }
    }
}
