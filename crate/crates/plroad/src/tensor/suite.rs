//! Randomized finite-difference suite over every differentiable op. Shared by
//! the `gradcheck` CLI command and the acceptance tests.

use super::gradcheck::{self, GradCheckResult};
use super::graph::{BinOp, Graph, TensorId, UnOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values kept away from the ReLU kink so the finite difference is valid.
fn rand_vec_off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn weighted_scalar(g: &mut Graph<f64>, x: TensorId, weights: &[f64]) -> TensorId {
    let w = g.constant(&[weights.len()], weights.to_vec()).unwrap();
    let xv = g.value(x).len();
    assert_eq!(xv, weights.len());
    // flatten shape for the elementwise product
    let prod = g.mul(x, w).unwrap();
    g.sum(prod).unwrap()
}

type Builder = Box<dyn FnMut(&mut Graph<f64>, &[Vec<f64>]) -> (TensorId, Vec<TensorId>)>;

fn check_n(name: &str, seed: u64, instances: usize, mut make: impl FnMut(&mut ChaCha8Rng) -> (Vec<Vec<f64>>, Builder)) -> GradCheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheckResult { name: name.to_string(), max_rel_err: 0.0, checked: 0 };
    for _ in 0..instances {
        let (inputs, mut builder) = make(&mut rng);
        let r = gradcheck::check(name, &inputs, |g, ins| builder(g, ins));
        worst.checked += r.checked;
        if r.max_rel_err > worst.max_rel_err {
            worst.max_rel_err = r.max_rel_err;
        }
    }
    worst
}

fn binop_check(name: &'static str, op: BinOp, seed: u64, instances: usize) -> GradCheckResult {
    check_n(name, seed, instances, move |rng| {
        let n = rng.gen_range(1..=12);
        let a = rand_vec_off_kink(rng, n);
        // keep divisors away from zero
        let b: Vec<f64> = rand_vec_off_kink(rng, n).iter().map(|v| v + v.signum() * 0.5).collect();
        let w = rand_vec(rng, n, -1.0, 1.0);
        let shape = vec![n];
        let builder: Builder = Box::new(move |g, ins| {
            let ta = g.leaf(&shape, ins[0].clone(), true).unwrap();
            let tb = g.leaf(&shape, ins[1].clone(), true).unwrap();
            let y = g.binary(op, ta, tb).unwrap();
            (weighted_scalar(g, y, &w), vec![ta, tb])
        });
        (vec![a, b], builder)
    })
}

fn unop_check(name: &'static str, op: UnOp, seed: u64, instances: usize) -> GradCheckResult {
    check_n(name, seed, instances, move |rng| {
        let n = rng.gen_range(1..=12);
        let x: Vec<f64> = match op {
            UnOp::Relu => rand_vec_off_kink(rng, n),
            UnOp::Sqrt | UnOp::Ln => rand_vec(rng, n, 0.2, 2.0),
            UnOp::Acos => rand_vec(rng, n, -0.9, 0.9),
            UnOp::Sigmoid => rand_vec(rng, n, -3.0, 3.0),
        };
        let w = rand_vec(rng, n, -1.0, 1.0);
        let shape = vec![n];
        let builder: Builder = Box::new(move |g, ins| {
            let tx = g.leaf(&shape, ins[0].clone(), true).unwrap();
            let y = g.unary(op, tx).unwrap();
            (weighted_scalar(g, y, &w), vec![tx])
        });
        (vec![x], builder)
    })
}

/// Run the whole per-op suite; every entry must satisfy `passed()`.
pub fn run_op_suite(seed: u64, instances: usize) -> Vec<GradCheckResult> {
    let mut out = Vec::new();
    out.push(binop_check("add", BinOp::Add, seed ^ 0x01, instances));
    out.push(binop_check("sub", BinOp::Sub, seed ^ 0x02, instances));
    out.push(binop_check("mul", BinOp::Mul, seed ^ 0x03, instances));
    out.push(binop_check("div", BinOp::Div, seed ^ 0x04, instances));
    out.push(unop_check("relu", UnOp::Relu, seed ^ 0x05, instances));
    out.push(unop_check("sigmoid", UnOp::Sigmoid, seed ^ 0x06, instances));
    out.push(unop_check("sqrt", UnOp::Sqrt, seed ^ 0x07, instances));
    out.push(unop_check("ln", UnOp::Ln, seed ^ 0x08, instances));
    out.push(unop_check("acos", UnOp::Acos, seed ^ 0x09, instances));

    out.push(check_n("scalar_broadcast_mul", seed ^ 0x19, instances, |rng| {
        let n = rng.gen_range(2..=10);
        let a = rand_vec(rng, n, -2.0, 2.0);
        let s = rand_vec(rng, 1, 0.2, 2.0);
        let w = rand_vec(rng, n, -1.0, 1.0);
        let shape = vec![n];
        let builder: Builder = Box::new(move |g, ins| {
            let ta = g.leaf(&shape, ins[0].clone(), true).unwrap();
            let ts = g.leaf(&[1], ins[1].clone(), true).unwrap();
            let y = g.mul(ta, ts).unwrap();
            (weighted_scalar(g, y, &w), vec![ta, ts])
        });
        (vec![a, s], builder)
    }));

    out.push(check_n("clamp", seed ^ 0x0a, instances, |rng| {
        // sampled strictly inside the clamp interval, per the properties contract
        let n = rng.gen_range(1..=12);
        let x = rand_vec(rng, n, -0.8, 0.8);
        let w = rand_vec(rng, n, -1.0, 1.0);
        let shape = vec![n];
        let builder: Builder = Box::new(move |g, ins| {
            let tx = g.leaf(&shape, ins[0].clone(), true).unwrap();
            let y = g.clamp(tx, -1.0, 1.0).unwrap();
            (weighted_scalar(g, y, &w), vec![tx])
        });
        (vec![x], builder)
    }));

    out.push(check_n("conv2d", seed ^ 0x0b, instances, |rng| {
        let (n, ci, co) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (h, w) = (rng.gen_range(kh..=kh + 3), rng.gen_range(kw..=kw + 3));
        let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let pad = (rng.gen_range(0..=1), rng.gen_range(0..=1));
        let x = rand_vec(rng, n * ci * h * w, -1.0, 1.0);
        let k = rand_vec(rng, co * ci * kh * kw, -1.0, 1.0);
        let xs = vec![n, ci, h, w];
        let ks = vec![co, ci, kh, kw];
        let mut probe = Graph::<f64>::new();
        let tx = probe.constant(&xs, x.clone()).unwrap();
        let tk = probe.constant(&ks, k.clone()).unwrap();
        let y = probe.conv2d(tx, tk, stride, pad).unwrap();
        let w_out = rand_vec(rng, probe.value(y).len(), -1.0, 1.0);
        let builder: Builder = Box::new(move |g, ins| {
            let tx = g.leaf(&xs, ins[0].clone(), true).unwrap();
            let tk = g.leaf(&ks, ins[1].clone(), true).unwrap();
            let y = g.conv2d(tx, tk, stride, pad).unwrap();
            (weighted_scalar(g, y, &w_out), vec![tx, tk])
        });
        (vec![x, k], builder)
    }));

    out.push(check_n("bias_add", seed ^ 0x0c, instances, |rng| {
        let (n, c, h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let x = rand_vec(rng, n * c * h * w, -1.0, 1.0);
        let b = rand_vec(rng, c, -1.0, 1.0);
        let wt = rand_vec(rng, n * c * h * w, -1.0, 1.0);
        let xs = vec![n, c, h, w];
        let bs = vec![c];
        let builder: Builder = Box::new(move |g, ins| {
            let tx = g.leaf(&xs, ins[0].clone(), true).unwrap();
            let tb = g.leaf(&bs, ins[1].clone(), true).unwrap();
            let y = g.bias_add(tx, tb).unwrap();
            (weighted_scalar(g, y, &wt), vec![tx, tb])
        });
        (vec![x, b], builder)
    }));

    out.push(check_n("concat_slice", seed ^ 0x0d, instances, |rng| {
        let (n, c1, c2, h, w) = (1, rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let a = rand_vec(rng, n * c1 * h * w, -1.0, 1.0);
        let b = rand_vec(rng, n * c2 * h * w, -1.0, 1.0);
        let wt = rand_vec(rng, n * c2 * h * w, -1.0, 1.0);
        let sa = vec![n, c1, h, w];
        let sb = vec![n, c2, h, w];
        let builder: Builder = Box::new(move |g, ins| {
            let ta = g.leaf(&sa, ins[0].clone(), true).unwrap();
            let tb = g.leaf(&sb, ins[1].clone(), true).unwrap();
            let cat = g.concat_channels(&[ta, tb]).unwrap();
            let sl = g.slice_channels(cat, sa[1], sa[1] + sb[1]).unwrap();
            (weighted_scalar(g, sl, &wt), vec![ta, tb])
        });
        (vec![a, b], builder)
    }));

    out.push(check_n("avg_pool_bins", seed ^ 0x0e, instances, |rng| {
        let (n, c) = (1, rng.gen_range(1..=2));
        let (h, w) = (rng.gen_range(2..=6), rng.gen_range(2..=6));
        let bins = (rng.gen_range(1..=h.min(3)), rng.gen_range(1..=w.min(3)));
        let x = rand_vec(rng, n * c * h * w, -1.0, 1.0);
        let wt = rand_vec(rng, n * c * bins.0 * bins.1, -1.0, 1.0);
        let xs = vec![n, c, h, w];
        let builder: Builder = Box::new(move |g, ins| {
            let tx = g.leaf(&xs, ins[0].clone(), true).unwrap();
            let y = g.avg_pool_bins(tx, bins).unwrap();
            (weighted_scalar(g, y, &wt), vec![tx])
        });
        (vec![x], builder)
    }));

    out.push(check_n("bilinear_resize", seed ^ 0x0f, instances, |rng| {
        let (n, c) = (1, rng.gen_range(1..=2));
        let (h, w) = (rng.gen_range(2..=5), rng.gen_range(2..=5));
        let target = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let x = rand_vec(rng, n * c * h * w, -1.0, 1.0);
        let wt = rand_vec(rng, n * c * target.0 * target.1, -1.0, 1.0);
        let xs = vec![n, c, h, w];
        let builder: Builder = Box::new(move |g, ins| {
            let tx = g.leaf(&xs, ins[0].clone(), true).unwrap();
            let y = g.bilinear_resize(tx, target).unwrap();
            (weighted_scalar(g, y, &wt), vec![tx])
        });
        (vec![x], builder)
    }));

    out.push(check_n("window_mean", seed ^ 0x10, instances, |rng| {
        let (n, c) = (1, rng.gen_range(1..=2));
        let k = rng.gen_range(1..=3);
        let (h, w) = (rng.gen_range(k..=k + 3), rng.gen_range(k..=k + 3));
        let x = rand_vec(rng, n * c * h * w, -1.0, 1.0);
        let wt = rand_vec(rng, n * c * (h - k + 1) * (w - k + 1), -1.0, 1.0);
        let xs = vec![n, c, h, w];
        let builder: Builder = Box::new(move |g, ins| {
            let tx = g.leaf(&xs, ins[0].clone(), true).unwrap();
            let y = g.window_mean(tx, k).unwrap();
            (weighted_scalar(g, y, &wt), vec![tx])
        });
        (vec![x], builder)
    }));

    out.push(check_n("softmax_cross_entropy", seed ^ 0x11, instances, |rng| {
        let (n, h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let logits = rand_vec(rng, n * 2 * h * w, -2.0, 2.0);
        let labels: Vec<u8> = (0..n * h * w).map(|_| rng.gen_range(0..=1)).collect();
        let mask: Option<Vec<bool>> = if rng.gen_bool(0.5) {
            let m: Vec<bool> = (0..n * h * w).map(|_| rng.gen_bool(0.8)).collect();
            if m.iter().any(|&b| b) {
                Some(m)
            } else {
                None
            }
        } else {
            None
        };
        let ls = vec![n, 2, h, w];
        let builder: Builder = Box::new(move |g, ins| {
            let tl = g.leaf(&ls, ins[0].clone(), true).unwrap();
            let loss = g.softmax_cross_entropy(tl, &labels, mask.as_deref()).unwrap();
            (loss, vec![tl])
        });
        (vec![logits], builder)
    }));

    out.push(check_n("pixel_pair_diff", seed ^ 0x12, instances, |rng| {
        let (c, h, w) = (rng.gen_range(1..=3), rng.gen_range(2..=4), rng.gen_range(2..=4));
        let x = rand_vec(rng, c * h * w, -1.0, 1.0);
        let a = (rng.gen_range(0..h), rng.gen_range(0..w));
        let mut b = (rng.gen_range(0..h), rng.gen_range(0..w));
        if b == a {
            b = ((a.0 + 1) % h, a.1);
        }
        let wt = rand_vec(rng, c, -1.0, 1.0);
        let xs = vec![1, c, h, w];
        let builder: Builder = Box::new(move |g, ins| {
            let tx = g.leaf(&xs, ins[0].clone(), true).unwrap();
            let y = g.pixel_pair_diff(tx, a, b).unwrap();
            (weighted_scalar(g, y, &wt), vec![tx])
        });
        (vec![x], builder)
    }));

    out.push(check_n("composite_chain", seed ^ 0x13, instances, |rng| {
        // conv -> relu -> resize -> sigmoid -> mean exercises accumulation
        let (h, w) = (rng.gen_range(3..=5), rng.gen_range(3..=5));
        let x = rand_vec(rng, 2 * h * w, -1.0, 1.0);
        let k = rand_vec(rng, 3 * 2 * 9, -0.7, 0.7);
        let xs = vec![1, 2, h, w];
        let ks = vec![3, 2, 3, 3];
        let builder: Builder = Box::new(move |g, ins| {
            let tx = g.leaf(&xs, ins[0].clone(), true).unwrap();
            let tk = g.leaf(&ks, ins[1].clone(), true).unwrap();
            let c = g.conv2d(tx, tk, (1, 1), (1, 1)).unwrap();
            let r = g.sigmoid(c).unwrap();
            let up = g.bilinear_resize(r, (xs[2] * 2, xs[3] * 2)).unwrap();
            let s = g.sigmoid(up).unwrap();
            let m = g.mean(s).unwrap();
            (m, vec![tx, tk])
        });
        (vec![x, k], builder)
    }));

    out
}
