use super::*;
use crate::graph::{BatchView, Features, Graph, GraphBatch, Target};
use crate::tensor::{BnMode, Tape, Tensor};
use rand::SeedableRng;

fn view_of(n: usize, edges: &[(usize, usize)]) -> BatchView {
    let g = Graph::from_edges(
        n,
        edges,
        true,
        Features::Codes(vec![0; n]),
        None,
        Target::NodeLabels(vec![0; n]),
    )
    .unwrap();
    let batch = GraphBatch::from_graphs(std::slice::from_ref(&g)).unwrap();
    BatchView::new(&batch)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn set_matrix(store: &mut ParamStore<f64>, id: ParamId, rows: usize, cols: usize, data: Vec<f64>) {
    store.set_value(id, Tensor::matrix(rows, cols, data).unwrap());
}

fn set_vector(store: &mut ParamStore<f64>, id: ParamId, data: Vec<f64>) {
    store.set_value(id, Tensor::vector(data));
}

fn zero_linear(store: &mut ParamStore<f64>, lin: &Linear) {
    store.set_value(lin.w, Tensor::zeros(&[lin.out_dim, lin.in_dim]));
    if let Some(b) = lin.b {
        store.set_value(b, Tensor::zeros(&[lin.out_dim]));
    }
}

fn identity_linear(store: &mut ParamStore<f64>, lin: &Linear) {
    assert_eq!(lin.out_dim, lin.in_dim);
    let mut w = Tensor::zeros(&[lin.out_dim, lin.in_dim]);
    for i in 0..lin.out_dim {
        w.set2(i, i, 1.0);
    }
    store.set_value(lin.w, w);
    if let Some(b) = lin.b {
        store.set_value(b, Tensor::zeros(&[lin.out_dim]));
    }
}

#[test]
fn gcn_symmetric_normalization_on_a_path() {
    // Path 0–1–2: q_v = Σ_u h_u / √(deg_u · deg_v) with U = identity.
    let view = view_of(3, &[(0, 1), (1, 2)]);
    let mut store = ParamStore::<f64>::new();
    let layer = GcnLayer::register(&mut store, &mut rng(0), "gcn", 1, 1);
    identity_linear(&mut store, &layer.u);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = tape.leaf(Tensor::matrix(3, 1, vec![1.0; 3]).unwrap());
    let mut ctx = LayerCtx {
        tape: &mut tape,
        store: &mut store,
        bound: &bound,
        view: &view,
        mode: BnMode::Identity,
    };
    let q = layer.pre_activation(&mut ctx, h).unwrap();
    let got = tape.value(q).clone();
    let s = 1.0 / 2.0_f64.sqrt();
    assert!((got.at2(0, 0) - s).abs() < 1e-15);
    assert!((got.at2(1, 0) - 2.0_f64.sqrt()).abs() < 1e-15);
    assert!((got.at2(2, 0) - s).abs() < 1e-15);
}

#[test]
fn gat_zero_scores_average_the_neighborhood() {
    // With the score vector at zero every neighbor gets weight 1/deg, so
    // the aggregation is a plain neighborhood mean of the projections.
    let view = view_of(4, &[(0, 1), (0, 2), (0, 3)]);
    let mut store = ParamStore::<f64>::new();
    let layer = GatLayer::register(&mut store, &mut rng(0), "gat", 2, 2, 1);
    identity_linear(&mut store, &layer.heads[0].u);
    set_vector(&mut store, layer.heads[0].attn, vec![0.0; 4]);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = tape.leaf(Tensor::matrix(4, 2, vec![9.0, 9.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let mut ctx = LayerCtx {
        tape: &mut tape,
        store: &mut store,
        bound: &bound,
        view: &view,
        mode: BnMode::Identity,
    };
    let q = layer.pre_activation(&mut ctx, h).unwrap();
    let got = tape.value(q).clone();
    // center node: mean of [1,2],[3,4],[5,6]
    assert!((got.at2(0, 0) - 3.0).abs() < 1e-15);
    assert!((got.at2(0, 1) - 4.0).abs() < 1e-15);
    // leaves see only the center
    for v in 1..4 {
        assert!((got.at2(v, 0) - 9.0).abs() < 1e-15);
        assert!((got.at2(v, 1) - 9.0).abs() < 1e-15);
    }
}

#[test]
fn gat_rejects_isolated_nodes() {
    let view = view_of(3, &[(0, 1)]);
    let mut store = ParamStore::<f64>::new();
    let layer = GatLayer::register(&mut store, &mut rng(0), "gat", 1, 1, 1);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = tape.leaf(Tensor::matrix(3, 1, vec![1.0; 3]).unwrap());
    let mut ctx = LayerCtx {
        tape: &mut tape,
        store: &mut store,
        bound: &bound,
        view: &view,
        mode: BnMode::Identity,
    };
    let err = layer.pre_activation(&mut ctx, h).unwrap_err();
    assert!(matches!(err, TensorError::EmptySegment { segment: 2 }));
}

#[test]
fn gatedgcn_gate_normalizes_sigmoids_with_guard() {
    // A, B, C zeroed ⇒ ê = 0, σ(ê) = ½ on every slot. A degree-2 node then
    // gates each neighbor by ½ / (1 + 1e-6).
    let view = view_of(3, &[(0, 1), (1, 2)]);
    let mut store = ParamStore::<f64>::new();
    let layer = GatedGcnLayer::register(&mut store, &mut rng(0), "gg", 1, 1, 1);
    zero_linear(&mut store, &layer.a);
    zero_linear(&mut store, &layer.b);
    zero_linear(&mut store, &layer.c);
    identity_linear(&mut store, &layer.u);
    set_matrix(&mut store, layer.v.w, 1, 1, vec![2.0]);
    set_vector(&mut store, layer.v.b.unwrap(), vec![0.0]);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = tape.leaf(Tensor::matrix(3, 1, vec![1.0, 10.0, 100.0]).unwrap());
    let e_prev = tape.leaf(Tensor::zeros(&[4, 1]));
    let mut ctx = LayerCtx {
        tape: &mut tape,
        store: &mut store,
        bound: &bound,
        view: &view,
        mode: BnMode::Identity,
    };
    let (q, e_next) = layer.pre_activation(&mut ctx, h, e_prev).unwrap();
    let got = tape.value(q).clone();
    let g1 = 0.5 / (0.5 + 1e-6); // degree-1 gate
    let g2 = 0.5 / (1.0 + 1e-6); // degree-2 gate
    assert!((got.at2(0, 0) - (1.0 + g1 * 20.0)).abs() < 1e-12);
    assert!((got.at2(1, 0) - (10.0 + g2 * 2.0 + g2 * 200.0)).abs() < 1e-12);
    assert!((got.at2(2, 0) - (100.0 + g1 * 20.0)).abs() < 1e-12);
    // ê is all zeros here and flows onward as the next edge state.
    assert!(tape.value(e_next).data().iter().all(|&x| x == 0.0));
}

#[test]
fn gin_scales_center_by_one_plus_eps() {
    let view = view_of(3, &[(0, 1), (1, 2)]);
    let mut store = ParamStore::<f64>::new();
    let layer = GinLayer::register(&mut store, &mut rng(0), "gin", 1, 1);
    identity_linear(&mut store, &layer.v);
    set_matrix(&mut store, layer.u.w, 1, 1, vec![3.0]);
    set_vector(&mut store, layer.u.b.unwrap(), vec![0.0]);
    let run = |store: &mut ParamStore<f64>| {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let h = tape.leaf(Tensor::matrix(3, 1, vec![1.0, 2.0, 4.0]).unwrap());
        let mut ctx = LayerCtx {
            tape: &mut tape,
            store,
            bound: &bound,
            view: &view,
            mode: BnMode::Identity,
        };
        let q = layer.pre_activation(&mut ctx, h).unwrap();
        tape.value(q).clone()
    };
    // ε = 0: ĥ = h + Σ_u h_u, then 3·relu(ĥ).
    let got = run(&mut store);
    assert_eq!(got.data(), &[9.0, 21.0, 18.0]);
    // ε = 1 doubles the center contribution.
    store.set_value(layer.eps, Tensor::vector(vec![1.0]));
    let got = run(&mut store);
    assert_eq!(got.data(), &[12.0, 27.0, 30.0]);
}

#[test]
fn sage_concatenates_center_with_neighborhood_mean() {
    let view = view_of(3, &[(0, 1), (0, 2)]);
    let mut store = ParamStore::<f64>::new();
    let layer = SageLayer::register(&mut store, &mut rng(0), "sage", 1, 1);
    // q = 1·h + 10·mean(neighbors)
    set_matrix(&mut store, layer.u.w, 1, 2, vec![1.0, 10.0]);
    set_vector(&mut store, layer.u.b.unwrap(), vec![0.0]);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = tape.leaf(Tensor::matrix(3, 1, vec![2.0, 3.0, 5.0]).unwrap());
    let mut ctx = LayerCtx {
        tape: &mut tape,
        store: &mut store,
        bound: &bound,
        view: &view,
        mode: BnMode::Identity,
    };
    let q = layer.pre_activation(&mut ctx, h).unwrap();
    assert_eq!(tape.value(q).data(), &[42.0, 23.0, 25.0]);
}

#[test]
fn fog_correlates_center_with_neighbor_transform() {
    // Two nodes, one undirected edge; identity transforms make the
    // correlation exactly kron(h_v, h_u), projected by [1,2,3,4].
    let view = view_of(2, &[(0, 1)]);
    let mut store = ParamStore::<f64>::new();
    let fog = FogModule::register(&mut store, &mut rng(0), "fog", 2, 2, 2, 1);
    identity_linear(&mut store, &fog.w1);
    identity_linear(&mut store, &fog.w2);
    set_matrix(&mut store, fog.w_vu.w, 1, 4, vec![1.0, 2.0, 3.0, 4.0]);
    set_vector(&mut store, fog.w_vu.b.unwrap(), vec![0.0]);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let mut ctx = LayerCtx {
        tape: &mut tape,
        store: &mut store,
        bound: &bound,
        view: &view,
        mode: BnMode::Identity,
    };
    let p = fog.forward(&mut ctx, h).unwrap();
    // node 0: kron([1,2],[3,4])·[1,2,3,4] = 3+8+18+32 = 61
    // node 1: kron([3,4],[1,2])·[1,2,3,4] = 3+12+12+32 = 59
    assert_eq!(tape.value(p).data(), &[61.0, 59.0]);
}

#[test]
fn plain_fog_layer_applies_bn_and_relu() {
    let view = view_of(2, &[(0, 1)]);
    let mut store = ParamStore::<f64>::new();
    let fog = FogModule::register(&mut store, &mut rng(0), "layers.0.fog", 2, 2, 2, 1);
    let bn = BnParams::register(&mut store, "layers.0.bn", 1);
    identity_linear(&mut store, &fog.w1);
    identity_linear(&mut store, &fog.w2);
    set_matrix(&mut store, fog.w_vu.w, 1, 4, vec![1.0, 2.0, 3.0, 4.0]);
    set_vector(&mut store, fog.w_vu.b.unwrap(), vec![0.0]);
    let layer = Layer::PlainFog { fog, bn };
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let mut ctx = LayerCtx {
        tape: &mut tape,
        store: &mut store,
        bound: &bound,
        view: &view,
        mode: BnMode::Identity,
    };
    let (out, e) = layer.forward(&mut ctx, h, None).unwrap();
    assert!(e.is_none());
    assert_eq!(tape.value(out).data(), &[61.0, 59.0]);
}

#[test]
fn train_mode_updates_running_statistics_in_the_store() {
    let view = view_of(2, &[(0, 1)]);
    let mut store = ParamStore::<f64>::new();
    let fog = FogModule::register(&mut store, &mut rng(3), "fog", 2, 2, 2, 2);
    // Even a batch that relu zeroed entirely moves the running variance
    // (towards 0.9·1 + 0.1·0), so this assertion is seed-independent.
    let before = store.value(fog.bn1.var).clone();
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let mut ctx = LayerCtx {
        tape: &mut tape,
        store: &mut store,
        bound: &bound,
        view: &view,
        mode: BnMode::Train,
    };
    fog.forward(&mut ctx, h).unwrap();
    assert_ne!(store.value(fog.bn1.var), &before);
}

/// A hybrid whose correlation path projects to zero must reproduce the
/// standalone family in its trailing output columns (identity batchnorm
/// makes both normalizations transparent).
#[test]
fn hybrid_with_zeroed_correlation_matches_standalone() {
    let view = view_of(4, &[(0, 1), (0, 2), (1, 2), (2, 3)]);
    let c_in = 3;
    let (c_p, c_q) = (2, 3);
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(11);
    let h_val = Tensor::uniform(&mut ChaCha8Rng::seed_from_u64(5), &[4, c_in], -1.0, 1.0);

    // gcn and gat hybrids share the base parameters with a standalone copy.
    let fog = FogModule::register(&mut store, &mut r, "f1", c_in, 2, 2, c_p);
    let gcn = GcnLayer::register(&mut store, &mut r, "gcn", c_in, c_q);
    zero_linear(&mut store, &fog.w_vu);
    let hybrid = Layer::Hybrid {
        fog,
        base: BaseLayer::Gcn(gcn.clone()),
        proj: None,
        bn: BnParams::register(&mut store, "bn_h", c_p + c_q),
    };
    let standalone = Layer::Standalone {
        base: BaseLayer::Gcn(gcn),
        bn: BnParams::register(&mut store, "bn_s", c_q),
    };

    let fog2 = FogModule::register(&mut store, &mut r, "f2", c_in, 2, 2, c_p);
    let gat = GatLayer::register(&mut store, &mut r, "gat", c_in, c_q, 1);
    zero_linear(&mut store, &fog2.w_vu);
    let hybrid_gat = Layer::Hybrid {
        fog: fog2,
        base: BaseLayer::Gat(gat.clone()),
        proj: None,
        bn: BnParams::register(&mut store, "bn_hg", c_p + c_q),
    };
    let standalone_gat = Layer::Standalone {
        base: BaseLayer::Gat(gat),
        bn: BnParams::register(&mut store, "bn_sg", c_q),
    };

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = tape.leaf(h_val);
    let mut ctx = LayerCtx {
        tape: &mut tape,
        store: &mut store,
        bound: &bound,
        view: &view,
        mode: BnMode::Identity,
    };
    for (hy, st) in [(&hybrid, &standalone), (&hybrid_gat, &standalone_gat)] {
        let (out_h, _) = hy.forward(&mut ctx, h, None).unwrap();
        let (out_s, _) = st.forward(&mut ctx, h, None).unwrap();
        let th = ctx.tape.value(out_h).clone();
        let ts = ctx.tape.value(out_s).clone();
        for v in 0..4 {
            for j in 0..c_q {
                assert_eq!(th.at2(v, c_p + j), ts.at2(v, j));
            }
            for j in 0..c_p {
                // φ(0) = 0 for both relu and elu
                assert_eq!(th.at2(v, j), 0.0);
            }
        }
    }
}

/// Edge-gated hybrids project the node path with an extra map before the
/// concatenation; with that map set to the identity the equivalence above
/// holds as well, and both shapes emit the same next-layer edge state.
#[test]
fn gated_hybrid_with_identity_projection_matches_standalone() {
    let view = view_of(3, &[(0, 1), (1, 2)]);
    let (c_in, c_out) = (2, 2);
    let (c_p, c_q) = (1, 1);
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(21);
    let fog = FogModule::register(&mut store, &mut r, "f", c_in, 2, 2, c_p);
    zero_linear(&mut store, &fog.w_vu);
    let gg = GatedGcnLayer::register(&mut store, &mut r, "gg", c_in, c_in, c_out);
    let proj = Linear::register(&mut store, &mut r, "proj", c_q, c_out, true);
    // identity-like 1×2 projection keeping the first channel
    set_matrix(&mut store, proj.w, 1, 2, vec![1.0, 0.0]);
    set_vector(&mut store, proj.b.unwrap(), vec![0.0]);

    let hybrid = Layer::Hybrid {
        fog,
        base: BaseLayer::GatedGcn(gg.clone()),
        proj: Some(proj),
        bn: BnParams::register(&mut store, "bn_h", c_p + c_q),
    };
    let standalone = Layer::Standalone {
        base: BaseLayer::GatedGcn(gg),
        bn: BnParams::register(&mut store, "bn_s", c_out),
    };
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = tape.leaf(Tensor::uniform(
        &mut ChaCha8Rng::seed_from_u64(9),
        &[3, c_in],
        -1.0,
        1.0,
    ));
    let e0 = tape.leaf(Tensor::uniform(
        &mut ChaCha8Rng::seed_from_u64(10),
        &[4, c_in],
        -1.0,
        1.0,
    ));
    let mut ctx = LayerCtx {
        tape: &mut tape,
        store: &mut store,
        bound: &bound,
        view: &view,
        mode: BnMode::Identity,
    };
    let (out_h, e_h) = hybrid.forward(&mut ctx, h, Some(e0)).unwrap();
    let (out_s, e_s) = standalone.forward(&mut ctx, h, Some(e0)).unwrap();
    let th = ctx.tape.value(out_h).clone();
    let ts = ctx.tape.value(out_s).clone();
    for v in 0..3 {
        // hybrid column c_p.. holds relu(first channel of q)
        assert_eq!(th.at2(v, c_p), ts.at2(v, 0));
    }
    assert_eq!(
        ctx.tape.value(e_h.unwrap()).data(),
        ctx.tape.value(e_s.unwrap()).data()
    );
}

#[test]
fn gated_family_requires_edge_state() {
    let view = view_of(2, &[(0, 1)]);
    let mut store = ParamStore::<f64>::new();
    let gg = GatedGcnLayer::register(&mut store, &mut rng(0), "gg", 1, 1, 1);
    let layer = Layer::Standalone {
        base: BaseLayer::GatedGcn(gg),
        bn: BnParams::register(&mut store, "bn", 1),
    };
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = tape.leaf(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
    let mut ctx = LayerCtx {
        tape: &mut tape,
        store: &mut store,
        bound: &bound,
        view: &view,
        mode: BnMode::Identity,
    };
    let err = layer.forward(&mut ctx, h, None).unwrap_err();
    assert!(matches!(err, TensorError::MissingEdgeState));
}

#[test]
fn registration_is_deterministic_across_stores() {
    let build = || {
        let mut store = ParamStore::<f32>::new();
        let mut r = rng(123);
        let fog = FogModule::register(&mut store, &mut r, "fog", 4, 3, 2, 5);
        let gat = GatLayer::register(&mut store, &mut r, "gat", 4, 6, 2);
        (store, fog, gat)
    };
    let (s1, f1, g1) = build();
    let (s2, f2, g2) = build();
    assert_eq!(s1.value(f1.w_vu.w), s2.value(f2.w_vu.w));
    assert_eq!(s1.value(g1.heads[1].attn), s2.value(g2.heads[1].attn));
    assert_eq!(s1.entries().len(), s2.entries().len());
    for (a, b) in s1.entries().iter().zip(s2.entries()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
}
