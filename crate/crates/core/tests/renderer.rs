use autograd::check::{check_inputs, check_params};
use autograd::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::Rng;
use realtalk::baselines::cross_attend;
use realtalk::bench::random_batch;
use realtalk::nn::MultiHeadAttention;
use realtalk::renderer::{adain_inject, blend, blend_tensors, RenderBatch, Renderer, RendererConfig};
use realtalk::seeded_rng;

fn small() -> RendererConfig {
    RendererConfig { height: 16, width: 16, base_channels: 4, attn_heads: 2, adain_hidden: 8, ..Default::default() }
}

fn stats(t: &Tensor, b: usize, c: usize) -> (f64, f64) {
    let s = t.shape();
    let hw = s[2] * s[3];
    let off = (b * s[1] + c) * hw;
    let xs = &t.data()[off..off + hw];
    let m = xs.iter().sum::<f64>() / hw as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / hw as f64;
    (m, v.sqrt())
}

#[test]
fn shared_encoder_pyramid_shapes_and_equal_inputs() {
    let cfg = small();
    let r = Renderer::new(cfg.clone()).unwrap();
    let mut rng = seeded_rng(1, 1);
    let img = Tensor::uniform([1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let mut g = Graph::new();
    g.attach(&r.params, false);
    let (a, b) = (g.constant(img.clone()), g.constant(img));
    let (src, rf) = r.shared_encode(&mut g, a, b).unwrap();
    assert_eq!(src.len(), cfg.stages);
    for (i, (s, t)) in src.iter().zip(&rf).enumerate() {
        let f = 1 << (i + 1);
        assert_eq!(g.shape(*s), [1, cfg.level_channels(i + 1), 16 / f, 16 / f]);
        assert_eq!(g.value(*s), g.value(*t));
    }
}

#[test]
fn batched_encoding_equals_separate_encoding() {
    let r = Renderer::new(small()).unwrap();
    let mut rng = seeded_rng(2, 2);
    let a = Tensor::uniform([1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let b = Tensor::uniform([1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let mut g = Graph::new();
    g.attach(&r.params, false);
    let (av, bv) = (g.constant(a), g.constant(b));
    let (src, rf) = r.shared_encode(&mut g, av, bv).unwrap();
    let ea = r.encode(&mut g, av);
    let eb = r.encode(&mut g, bv);
    for i in 0..src.len() {
        assert!(g.value(src[i]).max_abs_diff(g.value(ea[i])) <= 1e-6);
        assert!(g.value(rf[i]).max_abs_diff(g.value(eb[i])) <= 1e-6);
    }
}

#[test]
fn encoder_rejects_wrong_sizes() {
    let r = Renderer::new(small()).unwrap();
    let mut g = Graph::new();
    g.attach(&r.params, false);
    let a = g.constant(Tensor::zeros([1, 3, 16, 16]));
    let b = g.constant(Tensor::zeros([1, 3, 8, 8]));
    assert!(r.shared_encode(&mut g, a, b).is_err());
}

#[test]
fn adain_standardizes_then_applies_target_statistics() {
    let mut rng = seeded_rng(3, 3);
    let f = Tensor::uniform([2, 3, 8, 8], -2.0, 3.0, &mut rng);
    let mut g = Graph::new();
    let fv = g.constant(f);
    let one = g.constant(Tensor::ones([2, 3]));
    let zero = g.constant(Tensor::zeros([2, 3]));
    let out = adain_inject(&mut g, fv, one, zero);
    for b in 0..2 {
        for c in 0..3 {
            let (m, s) = stats(g.value(out), b, c);
            assert!(m.abs() <= 1e-4 && (s - 1.0).abs() <= 1e-4, "{m} {s}");
        }
    }
    let sigma = Tensor::uniform([2, 3], 0.5, 2.0, &mut rng);
    let mu = Tensor::uniform([2, 3], -1.0, 1.0, &mut rng);
    let (sv, mv) = (g.constant(sigma.clone()), g.constant(mu.clone()));
    let out = adain_inject(&mut g, fv, sv, mv);
    for b in 0..2 {
        for c in 0..3 {
            let (m, s) = stats(g.value(out), b, c);
            assert!((m - mu.at(&[b, c])).abs() <= 1e-3);
            assert!((s - sigma.at(&[b, c])).abs() <= 1e-3);
        }
    }
    let flat = g.constant(Tensor::full([1, 2, 4, 4], 0.7));
    let s = g.constant(Tensor::new([1, 2], vec![3.0, -2.0]));
    let bias = g.constant(Tensor::new([1, 2], vec![0.25, -0.5]));
    let out = adain_inject(&mut g, flat, s, bias);
    let v = g.value(out);
    assert!(v.data()[..16].iter().all(|&x| (x - 0.25).abs() <= 1e-9));
    assert!(v.data()[16..].iter().all(|&x| (x + 0.5).abs() <= 1e-9));
}

#[test]
fn cross_attention_rows_and_constant_values() {
    let mut rng = seeded_rng(4, 4);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "x", 8, 2, &mut rng);
    let fq = Tensor::uniform([1, 8, 3, 3], -1.0, 1.0, &mut rng);
    let fq2 = Tensor::uniform([1, 8, 3, 3], -1.0, 1.0, &mut rng);
    let col: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let kv = Tensor::new([1, 8, 3, 3], col.iter().flat_map(|&v| vec![v; 9]).collect());
    let mut g = Graph::with_params(&store);
    let (qv, q2v, kvv) = (g.constant(fq.clone()), g.constant(fq2.clone()), g.constant(kv));
    let (o1, w) = cross_attend(&mut g, &mha, qv, kvv);
    let (o2, _) = cross_attend(&mut g, &mha, q2v, kvv);
    assert_eq!(g.shape(w), [1, 2, 9, 9]);
    for row in g.value(w).data().chunks(9) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
    // Residual removed, the update is the same constant vector everywhere.
    let d1: Vec<f64> = g.value(o1).data().iter().zip(fq.data()).map(|(a, b)| a - b).collect();
    let d2: Vec<f64> = g.value(o2).data().iter().zip(fq2.data()).map(|(a, b)| a - b).collect();
    for c in 0..8 {
        for p in 0..9 {
            assert!((d1[c * 9 + p] - d1[c * 9]).abs() < 1e-12);
            assert!((d1[c * 9 + p] - d2[c * 9 + p]).abs() < 1e-12);
        }
    }
}

#[test]
fn two_by_two_cross_attention_matches_token_oracle() {
    let mut rng = seeded_rng(5, 5);
    let mut store = ParamStore::new();
    let (c, heads) = (4, 2);
    let mha = MultiHeadAttention::new(&mut store, "x", c, heads, &mut rng);
    let fq = Tensor::uniform([1, c, 2, 2], -1.0, 1.0, &mut rng);
    let fk = Tensor::uniform([1, c, 2, 2], -1.0, 1.0, &mut rng);
    let tok = |t: &Tensor, p: usize| -> Vec<f64> { (0..c).map(|ch| t.data()[ch * 4 + p]).collect() };
    let lin = |l: &realtalk::nn::Linear, x: &[f64]| -> Vec<f64> {
        let (w, b) = (store.get(l.w).data(), store.get(l.b).data());
        (0..l.d_out).map(|o| b[o] + (0..l.d_in).map(|i| x[i] * w[i * l.d_out + o]).sum::<f64>()).collect()
    };
    let dh = c / heads;
    let mut want = vec![0.0; c * 4];
    for p in 0..4 {
        let q = lin(&mha.q, &tok(&fq, p));
        let mut ctx = vec![0.0; c];
        for h in 0..heads {
            let s: Vec<f64> = (0..4)
                .map(|j| {
                    let k = lin(&mha.k, &tok(&fk, j));
                    (0..dh).map(|e| q[h * dh + e] * k[h * dh + e]).sum::<f64>() / (dh as f64).sqrt()
                })
                .collect();
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            for j in 0..4 {
                let v = lin(&mha.v, &tok(&fk, j));
                for e in 0..dh {
                    ctx[h * dh + e] += s[j].exp() / z * v[h * dh + e];
                }
            }
        }
        let o = lin(&mha.o, &ctx);
        for ch in 0..c {
            want[ch * 4 + p] = fq.data()[ch * 4 + p] + o[ch];
        }
    }
    let mut g = Graph::with_params(&store);
    let (a, b) = (g.constant(fq), g.constant(fk));
    let (out, _) = cross_attend(&mut g, &mha, a, b);
    for (x, y) in g.value(out).data().iter().zip(&want) {
        assert!((x - y).abs() <= 1e-6);
    }
}

#[test]
fn fia_stages_upsample_and_gate_reference_dependence() {
    let cfg = small();
    let r = Renderer::new(cfg.clone()).unwrap();
    let mut rng = seeded_rng(6, 6);
    let a = Tensor::uniform([1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let b = Tensor::uniform([1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let coeffs = Tensor::randn([1, cfg.coeff_dim()], 1.0, &mut rng);
    let mut g = Graph::new();
    g.attach(&r.params, false);
    let (av, bv, cv) = (g.constant(a), g.constant(b), g.constant(coeffs));
    let (src, rf) = r.shared_encode(&mut g, av, bv).unwrap();
    let style = r.style(&mut g, cv);
    let d = cfg.stages;
    for stage in 0..d {
        let lvl = d - stage;
        let prev = src[lvl - 1];
        let fref = rf[lvl - 1];
        let noise = Tensor::randn(g.shape(fref).to_vec(), 1.0, &mut rng);
        let nv = g.constant(noise);
        let other = g.add(fref, nv);
        let o1 = r.fia_block(&mut g, stage, prev, fref, style);
        let o2 = r.fia_block(&mut g, stage, prev, other, style);
        let (si, so) = (g.shape(prev).to_vec(), g.shape(o1).to_vec());
        assert_eq!((so[2], so[3]), (2 * si[2], 2 * si[3]));
        let diff = g.value(o1).max_abs_diff(g.value(o2));
        if cfg.attention_stages.contains(&stage) {
            assert!(diff > 1e-6, "stage {stage} ignores the reference");
            assert!(r.stage_attention(&mut g, stage, prev, fref).is_some());
        } else {
            assert_eq!(diff, 0.0, "stage {stage} depends on the reference");
            assert!(r.stage_attention(&mut g, stage, prev, fref).is_none());
        }
    }
    let sizes: Vec<_> = cfg.attention_stages.iter().map(|&s| cfg.stage_input_size(s)).collect();
    assert_eq!(sizes, vec![(16 / 16, 16 / 16), (16 / 8, 16 / 8)]);
}

#[test]
fn render_keeps_source_where_mask_is_one() {
    let cfg = small();
    let r = Renderer::new(cfg.clone()).unwrap();
    let batch = random_batch(&cfg, 2, 3);
    let out = r.render_frames(&batch).unwrap();
    assert_eq!(out.shape(), batch.source.shape());
    let hw = 256;
    for (i, v) in out.data().iter().enumerate() {
        let (b, p) = (i / (3 * hw), i % hw);
        if batch.mask.data()[b * hw + p] == 1.0 {
            assert_eq!(*v, batch.source.data()[i]);
        } else {
            assert!((0.0..=1.0).contains(v));
        }
    }
}

#[test]
fn render_gradient_wrt_expression_is_live_and_matches_differences() {
    let cfg = small();
    let r = Renderer::new(cfg.clone()).unwrap();
    let batch = random_batch(&cfg, 1, 7);
    let masked = batch.masked_source();
    let expr: Vec<(usize, usize)> = (cfg.shape_dim..cfg.shape_dim + cfg.expr_dim).map(|e| (0, e)).collect();
    let report = check_inputs(
        |g, v| {
            g.attach(&r.params, false);
            let m = g.constant(masked.clone());
            let rf = g.constant(batch.reference.clone());
            let s = g.constant(batch.source.clone());
            let mk = g.constant(batch.mask.clone());
            let out = r.render(g, m, rf, s, mk, v[0]).unwrap();
            g.mean_all(out.frame)
        },
        &[batch.coeffs.clone()],
        1e-5,
        Some(&expr),
    );
    assert!(report.samples.iter().any(|s| s.analytic.abs() > 1e-9));
    assert!(report.max_rel_error() <= 1e-3, "{:?}", report.worst());
}

#[test]
fn render_parameter_gradients_match_differences() {
    let cfg = small();
    let mut r = Renderer::new(cfg.clone()).unwrap();
    let batch = random_batch(&cfg, 1, 8);
    let mut rng = seeded_rng(8, 8);
    let mut store = std::mem::replace(&mut r.params, ParamStore::new());
    let ids: Vec<_> = store.ids().collect();
    let entries: Vec<_> = (0..24)
        .map(|_| {
            let id = ids[rng.random_range(0..ids.len())];
            (id, rng.random_range(0..store.get(id).len()))
        })
        .collect();
    let report = check_params(
        &mut store,
        |g| {
            let v = batch.to_graph(g);
            let out = r.render(g, v.masked, v.reference, v.source, v.mask, v.coeffs).unwrap();
            g.mean_all(out.frame)
        },
        &entries,
        1e-5,
    );
    assert!(report.max_rel_error() <= 1e-3, "{:?}", report.worst());
}

#[test]
fn blend_examples_and_loop_oracle() {
    let mut rng = seeded_rng(9, 9);
    let s = Tensor::uniform([2, 3, 4, 4], 0.0, 1.0, &mut rng);
    let f = Tensor::uniform([2, 3, 4, 4], 0.0, 1.0, &mut rng);
    assert_eq!(blend_tensors(&Tensor::ones([2, 1, 4, 4]), &s, &f).unwrap(), s);
    assert_eq!(blend_tensors(&Tensor::zeros([2, 1, 4, 4]), &s, &f).unwrap(), f);
    let m = Tensor::new([2, 1, 4, 4], (0..32).map(|_| f64::from(rng.random_range(0..2u8))).collect());
    let o = blend_tensors(&m, &s, &f).unwrap();
    for b in 0..2 {
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let mv = m.at(&[b, 0, y, x]);
                    let want = mv * s.at(&[b, c, y, x]) + (1.0 - mv) * f.at(&[b, c, y, x]);
                    assert_eq!(o.at(&[b, c, y, x]), want);
                }
            }
        }
    }
    assert!(blend_tensors(&m, &s, &Tensor::zeros([2, 3, 4, 5])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn blending_the_true_frame_reconstructs_the_source(seed in 0u64..10_000) {
        let mut rng = seeded_rng(seed, 1);
        let s = Tensor::uniform([1, 3, 6, 6], 0.0, 1.0, &mut rng);
        let m = Tensor::new([1, 1, 6, 6], (0..36).map(|_| f64::from(rng.random_range(0..2u8))).collect());
        let mut g = Graph::new();
        let (mv, sv) = (g.constant(m), g.constant(s.clone()));
        let o = blend(&mut g, mv, sv, sv);
        prop_assert_eq!(g.value(o), &s);
    }

    #[test]
    fn mask_one_pixels_are_source_exactly(seed in 0u64..10_000) {
        let mut rng = seeded_rng(seed, 2);
        let s = Tensor::uniform([1, 3, 5, 5], 0.0, 1.0, &mut rng);
        let f = Tensor::uniform([1, 3, 5, 5], -3.0, 3.0, &mut rng);
        let m = Tensor::new([1, 1, 5, 5], (0..25).map(|_| f64::from(rng.random_range(0..2u8))).collect());
        let o = blend_tensors(&m, &s, &f).unwrap();
        for (i, v) in o.data().iter().enumerate() {
            if m.data()[i % 25] == 1.0 {
                prop_assert_eq!(v.to_bits(), s.data()[i].to_bits());
            }
        }
    }
}

#[test]
fn render_batch_masked_source_zeroes_generated_region() {
    let cfg = small();
    let b: RenderBatch = random_batch(&cfg, 1, 11);
    let m = b.masked_source();
    for (i, v) in m.data().iter().enumerate() {
        let keep = b.mask.data()[i % 256];
        assert_eq!(*v, keep * b.source.data()[i]);
    }
}
