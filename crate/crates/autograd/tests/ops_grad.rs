use autograd::check::check_inputs;
use autograd::{Graph, ParamStore, Tensor, Unary, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduces an arbitrary tensor to a scalar with a fixed random projection so
/// every output entry gets a distinct upstream gradient.
fn project(g: &mut Graph, x: Var, seed: u64) -> Var {
    let shape = g.shape(x).to_vec();
    let w = Tensor::randn(shape, 1.0, &mut rng(seed));
    let w = g.constant(w);
    let p = g.mul(x, w);
    g.sum_all(p)
}

fn assert_grads<F>(name: &str, inputs: &[Tensor], build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let report = check_inputs(build, inputs, STEP, None);
    let worst = report.worst().cloned();
    assert!(report.max_rel_error() < TOL, "{name}: max rel error {} at {worst:?}", report.max_rel_error());
}

#[test]
fn broadcast_binary_ops() {
    let a = Tensor::randn([2, 3, 4], 1.0, &mut rng(1));
    let b = Tensor::randn([3, 1], 1.0, &mut rng(2)).map(|v| v.abs() + 0.5);
    assert_grads("add", &[a.clone(), b.clone()], |g, v| {
        let y = g.add(v[0], v[1]);
        project(g, y, 9)
    });
    assert_grads("sub", &[a.clone(), b.clone()], |g, v| {
        let y = g.sub(v[1], v[0]);
        project(g, y, 9)
    });
    assert_grads("mul", &[a.clone(), b.clone()], |g, v| {
        let y = g.mul(v[0], v[1]);
        project(g, y, 9)
    });
    assert_grads("div", &[a, b], |g, v| {
        let y = g.div(v[0], v[1]);
        project(g, y, 9)
    });
}

#[test]
fn unary_ops() {
    let x = Tensor::randn([17], 1.0, &mut rng(3));
    let pos = x.map(|v| v.abs() + 0.3);
    let kinds = [
        Unary::Neg,
        Unary::Exp,
        Unary::Tanh,
        Unary::Sigmoid,
        Unary::Silu,
        Unary::Gelu,
        Unary::Sin,
        Unary::Cos,
        Unary::Square,
        Unary::Softplus,
        Unary::LeakyRelu(0.2),
        Unary::Relu,
        Unary::Abs,
    ];
    for kind in kinds {
        assert_grads(&format!("{kind:?}"), &[x.clone()], |g, v| {
            let y = g.unary(v[0], kind);
            project(g, y, 4)
        });
    }
    for kind in [Unary::Log, Unary::Sqrt] {
        assert_grads(&format!("{kind:?}"), &[pos.clone()], |g, v| {
            let y = g.unary(v[0], kind);
            project(g, y, 4)
        });
    }
}

#[test]
fn scalar_ops_and_reductions() {
    let x = Tensor::randn([3, 4, 2], 1.0, &mut rng(5));
    assert_grads("scalar", &[x.clone()], |g, v| {
        let y = g.mul_scalar(v[0], -1.7);
        let y = g.add_scalar(y, 0.3);
        let y = g.square(y);
        g.mean_all(y)
    });
    for axis in 0..3 {
        assert_grads("sum_axis", &[x.clone()], |g, v| {
            let y = g.sum_axis(v[0], axis);
            project(g, y, 6)
        });
        assert_grads("mean_axis", &[x.clone()], |g, v| {
            let y = g.mean_axis(v[0], axis);
            project(g, y, 6)
        });
    }
}

#[test]
fn matmul_batched_and_shared() {
    let a = Tensor::randn([2, 3, 4, 5], 1.0, &mut rng(7));
    let b = Tensor::randn([2, 3, 5, 2], 1.0, &mut rng(8));
    let w = Tensor::randn([5, 6], 1.0, &mut rng(9));
    assert_grads("matmul batched", &[a.clone(), b], |g, v| {
        let y = g.matmul(v[0], v[1]);
        project(g, y, 10)
    });
    assert_grads("matmul shared", &[a, w], |g, v| {
        let y = g.matmul(v[0], v[1]);
        project(g, y, 10)
    });
}

#[test]
fn matmul_forward_matches_loops() {
    let a = Tensor::randn([2, 3, 4], 1.0, &mut rng(11));
    let b = Tensor::randn([2, 4, 5], 1.0, &mut rng(12));
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(va, vb);
    let c = g.value(c);
    for bi in 0..2 {
        for i in 0..3 {
            for j in 0..5 {
                let want: f64 = (0..4).map(|k| a.at(&[bi, i, k]) * b.at(&[bi, k, j])).sum();
                assert!((c.at(&[bi, i, j]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn shape_ops() {
    let x = Tensor::randn([2, 3, 4], 1.0, &mut rng(13));
    let y = Tensor::randn([2, 2, 4], 1.0, &mut rng(14));
    assert_grads("reshape+permute", &[x.clone()], |g, v| {
        let r = g.reshape(v[0], &[6, 4]);
        let r = g.reshape(r, &[2, 3, 4]);
        let p = g.permute(r, &[2, 0, 1]);
        project(g, p, 15)
    });
    assert_grads("concat", &[x.clone(), y], |g, v| {
        let c = g.concat(&[v[0], v[1], v[0]], 1);
        project(g, c, 16)
    });
    assert_grads("narrow", &[x.clone()], |g, v| {
        let n = g.narrow(v[0], 2, 1, 2);
        project(g, n, 17)
    });
    assert_grads("index_select", &[x], |g, v| {
        let n = g.index_select(v[0], 1, &[2, 0, 2]);
        project(g, n, 18)
    });
}

#[test]
fn softmax_and_norms() {
    let x = Tensor::randn([3, 5], 1.5, &mut rng(19));
    assert_grads("softmax", &[x.clone()], |g, v| {
        let y = g.softmax_last(v[0]);
        project(g, y, 20)
    });
    assert_grads("layer_norm", &[x.clone()], |g, v| {
        let y = g.layer_norm_last(v[0], 1e-5);
        project(g, y, 21)
    });
    assert_grads("std_norm", &[x], |g, v| {
        let y = g.std_norm_last(v[0], 1e-5);
        project(g, y, 22)
    });
}

#[test]
fn std_norm_of_constant_row_is_finite() {
    let mut g = Graph::new();
    let x = g.input(Tensor::full([1, 6], 3.0));
    let y = g.std_norm_last(x, 1e-5);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    let s = project(&mut g, y, 1);
    let grads = g.backward(s);
    assert!(grads.get(x).unwrap().is_finite());
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::randn([4, 7], 3.0, &mut rng(23)));
    let y = g.softmax_last(x);
    for row in g.value(y).data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn conv2d_gradients() {
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (2, 1, 4), (1, 0, 1)] {
        let x = Tensor::randn([2, 3, 6, 5], 1.0, &mut rng(24));
        let w = Tensor::randn([4, 3, k, k], 0.5, &mut rng(25));
        let b = Tensor::randn([4], 0.5, &mut rng(26));
        assert_grads(&format!("conv s{stride} p{pad} k{k}"), &[x, w, b], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad);
            project(g, y, 27)
        });
    }
}

#[test]
fn conv2d_forward_matches_direct_loops() {
    let x = Tensor::randn([1, 2, 5, 5], 1.0, &mut rng(28));
    let w = Tensor::randn([3, 2, 3, 3], 1.0, &mut rng(29));
    let b = Tensor::randn([3], 1.0, &mut rng(30));
    let mut g = Graph::new();
    let (vx, vw, vb) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv2d(vx, vw, Some(vb), 2, 1);
    let y = g.value(y).clone();
    assert_eq!(y.shape(), [1, 3, 3, 3]);
    for o in 0..3 {
        for oy in 0..3 {
            for ox in 0..3 {
                let mut want = b.data()[o];
                for c in 0..2 {
                    for ki in 0..3 {
                        for kj in 0..3 {
                            let iy = (oy * 2 + ki) as isize - 1;
                            let ix = (ox * 2 + kj) as isize - 1;
                            if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                want += w.at(&[o, c, ki, kj]) * x.at(&[0, c, iy as usize, ix as usize]);
                            }
                        }
                    }
                }
                assert!((y.at(&[0, o, oy, ox]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn upsample_and_sampling_gradients() {
    let x = Tensor::randn([2, 2, 3, 4], 1.0, &mut rng(31));
    assert_grads("upsample2x", &[x.clone()], |g, v| {
        let y = g.upsample2x(v[0]);
        project(g, y, 32)
    });
    // Keep sample points away from integer coordinates where the bilinear
    // weights have kinks.
    let coords = Tensor::uniform([2, 5, 2], 0.0, 1.0, &mut rng(33)).map(|v| 0.1 + 2.6 * v + 0.013);
    assert_grads("bilinear_sample", &[x, coords], |g, v| {
        let y = g.bilinear_sample(v[0], v[1]);
        project(g, y, 34)
    });
}

#[test]
fn clamp_passes_gradient_inside_only() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new([3], vec![-2.0, 0.5, 2.0]));
    let y = g.clamp(x, -1.0, 1.0);
    let s = g.sum_all(y);
    let grads = g.backward(s);
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn frozen_store_receives_no_gradient() {
    let mut trainable = ParamStore::new();
    let mut frozen = ParamStore::new();
    let a = trainable.add("a", Tensor::new([2], vec![1.0, 2.0]));
    let b = frozen.add("b", Tensor::new([2], vec![3.0, 4.0]));
    let mut g = Graph::with_params(&trainable);
    g.attach(&frozen, false);
    let (va, vb) = (g.param(a), g.param(b));
    assert!(!g.requires_grad(vb));
    let p = g.mul(va, vb);
    let s = g.sum_all(p);
    let grads = g.backward(s);
    assert_eq!(grads.param(a).unwrap().data(), &[3.0, 4.0]);
    assert!(grads.param(b).is_none());
    assert_eq!(grads.params().len(), 1);
}

#[test]
fn shared_parameter_accumulates() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::new([1], vec![2.0]));
    let mut g = Graph::with_params(&store);
    let v1 = g.param(a);
    let v2 = g.param(a);
    assert_eq!(v1, v2);
    let y = g.mul(v1, v2);
    let grads = g.backward(y);
    assert_eq!(grads.param(a).unwrap().data(), &[4.0]);
}
