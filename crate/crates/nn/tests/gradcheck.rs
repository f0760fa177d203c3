use probunet_nn::{kernels, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Central-difference check of d(loss)/d(input) for a graph built by `f` from one input.
fn check(name: &str, input: Tensor<f64>, f: impl Fn(&mut Graph<f64>, Var) -> Var) {
    let eval = |t: &Tensor<f64>| {
        let mut g = Graph::new();
        let x = g.param(t.clone());
        let y = f(&mut g, x);
        let s = g.sum(y);
        g.scalar(s)
    };
    let mut g = Graph::new();
    let x = g.param(input.clone());
    let y = f(&mut g, x);
    let s = g.sum(y);
    let grads = g.backward(s);
    let analytic = grads.get(x).expect("input gradient").clone();
    let h = 1e-6;
    for i in 0..input.numel() {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let a = analytic.data()[i];
        // Absolute floor covers round-off in the summed loss.
        assert!((a - fd).abs() < 1e-5 * a.abs().max(fd.abs()) + 1e-6, "{name}[{i}]: analytic {a} vs finite difference {fd}");
    }
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[2, 3, 4, 4], &mut rng);
    check("exp", x.clone(), |g, x| g.exp(x));
    check("silu", x.clone(), |g, x| g.silu(x));
    check("square", x.clone(), |g, x| g.square(x));
    check("softplus", x.clone(), |g, x| g.softplus(x, 1e-7));
    check("scale", x.clone(), |g, x| g.scale(x, -2.5));
    check("pow", x.map(|v| v.abs() + 0.5), |g, x| g.powf(x, 0.3));
    check("abs", x.map(|v| if v.abs() < 0.05 { 0.3 } else { v }), |g, x| g.abs(x));
    check("clamp", x.map(|v| v * 3.0), |g, x| g.clamp(x, -1.0, 1.0));
    let c = random(&[2, 3, 4, 4], &mut rng).map(|v| v + 2.0);
    check("mul", x.clone(), |g, x| {
        let k = g.constant(c.clone());
        let y = g.mul(x, x);
        g.mul(y, k)
    });
    check("div", x.clone(), |g, x| {
        let k = g.constant(c.clone());
        let num = g.exp(x);
        let a = g.div(num, k);
        let b = g.div(k, num);
        g.sub(a, b)
    });
}

#[test]
fn image_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 4, 8, 8], &mut rng);
    let w3 = random(&[5, 4, 3, 3], &mut rng);
    let w1 = random(&[3, 4, 1, 1], &mut rng);
    let bias = random(&[5], &mut rng);
    let weight = random(&[2, 5, 8, 8], &mut rng);
    check("conv3x3", x.clone(), |g, x| {
        let w = g.param(w3.clone());
        let b = g.param(bias.clone());
        let y = g.conv2d(x, w, Some(b), 1, 1);
        let k = g.constant(weight.clone());
        g.mul(y, k)
    });
    check("conv_strided", x.clone(), |g, x| {
        let w = g.constant(w3.clone());
        let y = g.conv2d(x, w, None, 2, 1);
        g.square(y)
    });
    check("conv1x1", x.clone(), |g, x| {
        let w = g.constant(w1.clone());
        let y = g.conv2d(x, w, None, 1, 0);
        g.square(y)
    });
    check("conv_weight", w3.clone(), |g, w| {
        let xv = g.constant(x.clone());
        let y = g.conv2d(xv, w, None, 2, 1);
        g.square(y)
    });
    check("group_norm", x.clone(), |g, x| {
        let gamma = g.param(Tensor::from_f64(&[4], &[1.0, 0.5, -2.0, 1.5]));
        let beta = g.param(Tensor::from_f64(&[4], &[0.1, 0.2, 0.3, 0.4]));
        let y = g.group_norm(x, gamma, beta, 2, 1e-5);
        let k = g.constant(random(&[2, 4, 8, 8], &mut ChaCha8Rng::seed_from_u64(9)));
        g.mul(y, k)
    });
    check("pool_upsample", x.clone(), |g, x| {
        let p = g.avg_pool2(x);
        let u = g.upsample_nearest(p, 2);
        let s = g.square(u);
        g.mul(s, x)
    });
    check("filters", x.clone(), |g, x| {
        let a = g.filter1d(x, &[0.2, 0.5, 0.3], true);
        let b = g.filter1d(a, &[0.1, 0.9], false);
        g.square(b)
    });
    check("concat_slice", x.clone(), |g, x| {
        let s = g.slice_channels(x, 1, 2);
        let e = g.exp(x);
        let c = g.concat_channels(&[s, e]);
        g.square(c)
    });
    check("mean_broadcast", x.clone(), |g, x| {
        let m = g.mean_spatial(x);
        let sq = g.square(m);
        let b = g.broadcast_spatial(sq, 3, 2);
        g.exp(b)
    });
    check("channel_affine", x.clone(), |g, x| {
        let y = g.channel_affine(x, &[1.0, -2.0, 0.5, 3.0], &[0.0, 1.0, 2.0, 3.0]);
        g.square(y)
    });
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (b, ci, h, wd) = x.dims4();
    let (co, _, k, _) = w.dims4();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; b * co * ho * wo];
    for n in 0..b {
        for o in 0..co {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for u in 0..k {
                            for v in 0..k {
                                let ii = (i * stride + u) as isize - pad as isize;
                                let jj = (j * stride + v) as isize - pad as isize;
                                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                    acc += x.data()[((n * ci + c) * h + ii as usize) * wd + jj as usize]
                                        * w.data()[((o * ci + c) * k + u) * k + v];
                                }
                            }
                        }
                    }
                    out[((n * co + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    Tensor::new(&[b, co, ho, wo], out)
}

#[test]
fn conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(k, stride, pad, h) in &[(3, 1, 1, 7), (3, 2, 1, 8), (1, 1, 0, 5), (5, 1, 2, 6), (3, 2, 0, 9)] {
        let x = random(&[2, 3, h, h + 1], &mut rng);
        let w = random(&[4, 3, k, k], &mut rng);
        let fast = kernels::conv2d_forward(&x, &w, None, stride, pad);
        let slow = naive_conv(&x, &w, stride, pad);
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12, "k={k} stride={stride}: {a} vs {b}");
        }
    }
}

#[test]
fn unused_parameters_get_no_gradient() {
    let mut g: Graph<f64> = Graph::new();
    let a = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]));
    let b = g.param(Tensor::from_f64(&[2], &[3.0, 4.0]));
    let s = g.sum(a);
    let grads = g.backward(s);
    assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0]);
    assert!(grads.get(b).is_none());
}
