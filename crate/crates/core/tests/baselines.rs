use autograd::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use realtalk::baselines::{deform_align, deform_gather, warp, Aligner, AlignmentKind, DEFORM_TAPS};
use realtalk::seeded_rng;

fn rand_feat(seed: u64, shape: [usize; 4]) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut seeded_rng(seed, 0))
}

fn offsets(b: usize, h: usize, w: usize, dx: f64, dy: f64) -> Tensor {
    let mut d = vec![dx; b * 2 * h * w];
    for bi in 0..b {
        let o = (bi * 2 + 1) * h * w;
        d[o..o + h * w].fill(dy);
    }
    Tensor::new([b, 2, h, w], d)
}

fn run_warp(f: &Tensor, o: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let (fv, ov) = (g.constant(f.clone()), g.constant(o.clone()));
    let out = warp(&mut g, fv, ov);
    g.value(out).clone()
}

/// Replicated-border lookup.
fn at_clamped(f: &Tensor, b: usize, c: usize, y: i64, x: i64) -> f64 {
    let s = f.shape();
    let y = y.clamp(0, s[2] as i64 - 1) as usize;
    let x = x.clamp(0, s[3] as i64 - 1) as usize;
    f.at(&[b, c, y, x])
}

#[test]
fn zero_offsets_are_identity() {
    let f = rand_feat(1, [2, 3, 5, 4]);
    assert!(run_warp(&f, &offsets(2, 5, 4, 0.0, 0.0)).max_abs_diff(&f) <= 1e-12);
}

#[test]
fn integer_shift_with_replicated_border() {
    let f = rand_feat(2, [1, 2, 4, 5]);
    let out = run_warp(&f, &offsets(1, 4, 5, 1.0, 0.0));
    for c in 0..2 {
        for y in 0..4 {
            for x in 0..5 {
                assert!((out.at(&[0, c, y, x]) - at_clamped(&f, 0, c, y as i64, x as i64 + 1)).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn half_pixel_shift_averages_neighbours() {
    let f = rand_feat(3, [1, 1, 3, 4]);
    let out = run_warp(&f, &offsets(1, 3, 4, 0.5, 0.0));
    for y in 0..3 {
        for x in 0..3 {
            let want = 0.5 * (f.at(&[0, 0, y, x]) + f.at(&[0, 0, y, x + 1]));
            assert!((out.at(&[0, 0, y, x]) - want).abs() <= 1e-12);
        }
    }
}

fn gather(f: &Tensor, o: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let (fv, ov, wv, bv) = (g.constant(f.clone()), g.constant(o.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let out = deform_gather(&mut g, fv, ov, wv, bv);
    g.value(out).clone()
}

#[test]
fn zero_offset_deformation_is_a_convolution_inside() {
    let (c, co, h, w) = (3, 2, 5, 6);
    let f = rand_feat(4, [1, c, h, w]);
    let wt = Tensor::uniform([co, c, 3, 3], -1.0, 1.0, &mut seeded_rng(4, 1));
    let bias = Tensor::new([co], vec![0.3, -0.2]);
    let out = gather(&f, &Tensor::zeros([1, 18, h, w]), &wt, &bias);
    let mut g = Graph::new();
    let (fv, wv, bv) = (g.constant(f.clone()), g.constant(wt.clone()), g.constant(bias.clone()));
    let conv = g.conv2d(fv, wv, Some(bv), 1, 1);
    let conv = g.value(conv);
    for o in 0..co {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                assert!((out.at(&[0, o, y, x]) - conv.at(&[0, o, y, x])).abs() <= 1e-10);
            }
        }
    }
    // Everywhere, against a replicate-padded hand convolution.
    for o in 0..co {
        for y in 0..h {
            for x in 0..w {
                let mut s = bias.data()[o];
                for ci in 0..c {
                    for (k, (dx, dy)) in DEFORM_TAPS.iter().enumerate() {
                        let v = at_clamped(&f, 0, ci, y as i64 + *dy as i64, x as i64 + *dx as i64);
                        s += wt.at(&[o, ci, k / 3, k % 3]) * v;
                    }
                }
                assert!((out.at(&[0, o, y, x]) - s).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn deformation_gathers_at_shifted_taps() {
    let (c, h, w) = (1, 4, 4);
    let f = rand_feat(5, [1, c, h, w]);
    // Only the centre tap has weight; move it by (+1, +1).
    let mut wt = Tensor::zeros([1, 1, 3, 3]);
    wt.set(&[0, 0, 1, 1], 1.0);
    let mut o = Tensor::zeros([1, 18, h, w]);
    for y in 0..h {
        for x in 0..w {
            o.set(&[0, 8, y, x], 1.0);
            o.set(&[0, 9, y, x], 1.0);
        }
    }
    let out = gather(&f, &o, &wt, &Tensor::zeros([1]));
    for y in 0..h {
        for x in 0..w {
            assert!((out.at(&[0, 0, y, x]) - at_clamped(&f, 0, 0, y as i64 + 1, x as i64 + 1)).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_weights_leave_a_pure_residual() {
    let mut store = ParamStore::new();
    let a = Aligner::new(AlignmentKind::Deformation, &mut store, "d", 4, 1, &mut seeded_rng(6, 0));
    let Aligner::Deform(d) = &a else { panic!("wrong aligner") };
    store.get_mut(d.weight).data_mut().fill(0.0);
    let q = rand_feat(6, [1, 4, 3, 3]);
    let r = rand_feat(7, [1, 4, 3, 3]);
    let mut g = Graph::with_params(&store);
    let (qv, rv) = (g.constant(q.clone()), g.constant(r));
    let out = deform_align(&mut g, d, qv, rv);
    assert_eq!(g.value(out), &q);
}

#[test]
fn all_aligners_share_the_interface() {
    for kind in AlignmentKind::ALL {
        let mut store = ParamStore::new();
        let a = Aligner::new(kind, &mut store, "a", 8, 2, &mut seeded_rng(8, 0));
        assert_eq!(a.kind(), kind);
        let q = rand_feat(8, [2, 8, 4, 4]);
        let r = rand_feat(9, [2, 8, 4, 4]);
        let mut g = Graph::with_params(&store);
        let (qv, rv) = (g.constant(q), g.constant(r));
        let out = a.forward(&mut g, qv, rv);
        assert_eq!(g.shape(out), [2, 8, 4, 4], "{kind}");
        assert!(g.value(out).data().iter().all(|v| v.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn integer_warps_are_exact_copies(dx in -2i64..3, dy in -2i64..3, seed in 0u64..1000) {
        let f = rand_feat(seed, [1, 2, 4, 4]);
        let out = run_warp(&f, &offsets(1, 4, 4, dx as f64, dy as f64));
        for c in 0..2 {
            for y in 0..4i64 {
                for x in 0..4i64 {
                    let want = at_clamped(&f, 0, c, y + dy, x + dx);
                    prop_assert!((out.at(&[0, c, y as usize, x as usize]) - want).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn warp_stays_within_input_range(dx in -3.0f64..3.0, dy in -3.0f64..3.0, seed in 0u64..1000) {
        let f = rand_feat(seed, [1, 1, 5, 5]);
        let (lo, hi) = f.data().iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let out = run_warp(&f, &offsets(1, 5, 5, dx, dy));
        prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }
}
