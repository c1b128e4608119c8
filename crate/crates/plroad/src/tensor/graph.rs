//! Eager tape: every op computes its value on insertion and records enough
//! to replay gradients in reverse insertion order.

use super::kernels;
use super::real::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Relu,
    Sigmoid,
    Sqrt,
    Ln,
    Acos,
}

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Bin(BinOp, TensorId, TensorId),
    Un(UnOp, TensorId),
    Clamp { x: TensorId, lo: T, hi: T },
    Affine { x: TensorId, scale: T },
    Sum(TensorId),
    Mean(TensorId),
    BiasAdd { x: TensorId, bias: TensorId },
    Conv2d { input: TensorId, kernel: TensorId, stride: (usize, usize), pad: (usize, usize) },
    ConcatCh(Vec<TensorId>),
    SliceCh { x: TensorId, from: usize, to: usize },
    AvgPoolBins { x: TensorId },
    BilinearResize { x: TensorId },
    WindowMean { x: TensorId, k: usize },
    SoftmaxCe { logits: TensorId, labels: Vec<u8>, mask: Option<Vec<bool>>, probs: Vec<T>, count: usize },
    PixelPairDiff { x: TensorId, a: (usize, usize), b: (usize, usize) },
}

struct Node<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient buffer populated by the last `backward` call, if any reached this node.
    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn leaf(&mut self, shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<TensorId> {
        if numel(shape) != data.len() {
            return Err(TensorError::InvalidArgument {
                op: "leaf",
                msg: format!("shape {:?} holds {} elements, data has {}", shape, numel(shape), data.len()),
            });
        }
        self.push("leaf", shape.to_vec(), data, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<TensorId> {
        self.leaf(shape, data, false)
    }

    pub fn scalar(&mut self, v: T, requires_grad: bool) -> Result<TensorId> {
        self.leaf(&[1], vec![v], requires_grad)
    }

    fn push(&mut self, opname: &'static str, shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Op<T>) -> Result<TensorId> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: opname });
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { shape, data, requires_grad, op });
        Ok(id)
    }

    // ---- elementwise ----

    pub fn binary(&mut self, op: BinOp, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a.0], &self.nodes[b.0]);
        let (la, lb) = (sa.data.len(), sb.data.len());
        // scalar operands broadcast; anything else must match exactly
        if la != lb && la != 1 && lb != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "binary",
                lhs: sa.shape.clone(),
                rhs: sb.shape.clone(),
            });
        }
        let n = la.max(lb);
        let shape = if la >= lb { sa.shape.clone() } else { sb.shape.clone() };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let x = sa.data[if la == 1 { 0 } else { i }];
            let y = sb.data[if lb == 1 { 0 } else { i }];
            out.push(match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
            });
        }
        let rg = sa.requires_grad || sb.requires_grad;
        self.push("binary", shape, out, rg, Op::Bin(op, a, b))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(BinOp::Add, a, b)
    }
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(BinOp::Sub, a, b)
    }
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(BinOp::Mul, a, b)
    }
    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(BinOp::Div, a, b)
    }

    pub fn unary(&mut self, op: UnOp, x: TensorId) -> Result<TensorId> {
        let n = &self.nodes[x.0];
        let data: Vec<T> = n
            .data
            .iter()
            .map(|&v| match op {
                UnOp::Relu => {
                    if v > T::zero() {
                        v
                    } else {
                        T::zero()
                    }
                }
                UnOp::Sigmoid => T::one() / (T::one() + (-v).exp()),
                UnOp::Sqrt => v.sqrt(),
                UnOp::Ln => v.ln(),
                UnOp::Acos => v.acos(),
            })
            .collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push("unary", shape, data, rg, Op::Un(op, x))
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(UnOp::Relu, x)
    }
    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(UnOp::Sigmoid, x)
    }
    pub fn sqrt(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(UnOp::Sqrt, x)
    }
    pub fn ln(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(UnOp::Ln, x)
    }
    pub fn acos(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(UnOp::Acos, x)
    }

    /// Clamp to [lo, hi]; gradient flows only strictly inside the interval.
    pub fn clamp(&mut self, x: TensorId, lo: T, hi: T) -> Result<TensorId> {
        let n = &self.nodes[x.0];
        let data: Vec<T> = n.data.iter().map(|&v| v.max(lo).min(hi)).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push("clamp", shape, data, rg, Op::Clamp { x, lo, hi })
    }

    /// scale * x + offset with compile-time constants.
    pub fn affine(&mut self, x: TensorId, scale: T, offset: T) -> Result<TensorId> {
        let n = &self.nodes[x.0];
        let data: Vec<T> = n.data.iter().map(|&v| scale * v + offset).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push("affine", shape, data, rg, Op::Affine { x, scale })
    }

    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let n = &self.nodes[x.0];
        let mut acc = T::zero();
        for &v in &n.data {
            acc += v;
        }
        let rg = n.requires_grad;
        self.push("sum", vec![1], vec![acc], rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let n = &self.nodes[x.0];
        if n.data.is_empty() {
            return Err(TensorError::InvalidArgument { op: "mean", msg: "empty tensor".into() });
        }
        let mut acc = T::zero();
        for &v in &n.data {
            acc += v;
        }
        let m = acc / T::from_f64(n.data.len() as f64);
        let rg = n.requires_grad;
        self.push("mean", vec![1], vec![m], rg, Op::Mean(x))
    }

    /// x is NCHW, bias has one entry per channel.
    pub fn bias_add(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (xn, bn) = (&self.nodes[x.0], &self.nodes[bias.0]);
        if xn.shape.len() != 4 || bn.shape.len() != 1 || bn.shape[0] != xn.shape[1] {
            return Err(TensorError::ShapeMismatch {
                op: "bias_add",
                lhs: xn.shape.clone(),
                rhs: bn.shape.clone(),
            });
        }
        let (n, c, h, w) = (xn.shape[0], xn.shape[1], xn.shape[2], xn.shape[3]);
        let hw = h * w;
        let mut out = xn.data.clone();
        for ni in 0..n {
            for ci in 0..c {
                let b = bn.data[ci];
                let base = (ni * c + ci) * hw;
                for v in &mut out[base..base + hw] {
                    *v += b;
                }
            }
        }
        let shape = xn.shape.clone();
        let rg = xn.requires_grad || bn.requires_grad;
        self.push("bias_add", shape, out, rg, Op::BiasAdd { x, bias })
    }

    // ---- spatial ----

    pub fn conv2d(&mut self, input: TensorId, kernel: TensorId, stride: (usize, usize), pad: (usize, usize)) -> Result<TensorId> {
        let (xn, kn) = (&self.nodes[input.0], &self.nodes[kernel.0]);
        if xn.shape.len() != 4 || kn.shape.len() != 4 || xn.shape[1] != kn.shape[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: xn.shape.clone(),
                rhs: kn.shape.clone(),
            });
        }
        let (n, ci, h, w) = (xn.shape[0], xn.shape[1], xn.shape[2], xn.shape[3]);
        let (co, kh, kw) = (kn.shape[0], kn.shape[2], kn.shape[3]);
        let oh = kernels::conv_out_extent(h, pad.0, kh, stride.0);
        let ow = kernels::conv_out_extent(w, pad.1, kw, stride.1);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(TensorError::InvalidArgument {
                    op: "conv2d",
                    msg: format!("kernel {:?} does not fit input {:?} with stride {:?} pad {:?}", kn.shape, xn.shape, stride, pad),
                })
            }
        };
        let l = oh * ow;
        let k = ci * kh * kw;
        let mut out = vec![T::zero(); n * co * l];
        let mut cols = vec![T::zero(); k * l];
        for ni in 0..n {
            let xslice = &xn.data[ni * ci * h * w..(ni + 1) * ci * h * w];
            kernels::im2col(xslice, ci, h, w, kh, kw, stride, pad, oh, ow, &mut cols);
            T::gemm(
                co, k, l,
                T::one(),
                &kn.data, k as isize, 1,
                &cols, l as isize, 1,
                T::zero(),
                &mut out[ni * co * l..(ni + 1) * co * l], l as isize, 1,
            );
        }
        let rg = xn.requires_grad || kn.requires_grad;
        self.push("conv2d", vec![n, co, oh, ow], out, rg, Op::Conv2d { input, kernel, stride, pad })
    }

    pub fn concat_channels(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument { op: "concat_channels", msg: "no inputs".into() });
        }
        let first = &self.nodes[parts[0].0];
        if first.shape.len() != 4 {
            return Err(TensorError::InvalidArgument { op: "concat_channels", msg: "inputs must be NCHW".into() });
        }
        let (n, h, w) = (first.shape[0], first.shape[2], first.shape[3]);
        let mut ctot = 0;
        for &p in parts {
            let s = &self.nodes[p.0].shape;
            if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    lhs: first.shape.clone(),
                    rhs: s.clone(),
                });
            }
            ctot += s[1];
        }
        let hw = h * w;
        let mut out = vec![T::zero(); n * ctot * hw];
        for ni in 0..n {
            let mut coff = 0;
            for &p in parts {
                let pn = &self.nodes[p.0];
                let c = pn.shape[1];
                let src = &pn.data[ni * c * hw..(ni + 1) * c * hw];
                out[(ni * ctot + coff) * hw..(ni * ctot + coff + c) * hw].copy_from_slice(src);
                coff += c;
            }
        }
        let rg = parts.iter().any(|&p| self.nodes[p.0].requires_grad);
        self.push("concat_channels", vec![n, ctot, h, w], out, rg, Op::ConcatCh(parts.to_vec()))
    }

    pub fn slice_channels(&mut self, x: TensorId, from: usize, to: usize) -> Result<TensorId> {
        let xn = &self.nodes[x.0];
        if xn.shape.len() != 4 || to <= from || to > xn.shape[1] {
            return Err(TensorError::InvalidArgument {
                op: "slice_channels",
                msg: format!("range {}..{} out of {:?}", from, to, xn.shape),
            });
        }
        let (n, c, h, w) = (xn.shape[0], xn.shape[1], xn.shape[2], xn.shape[3]);
        let hw = h * w;
        let cs = to - from;
        let mut out = vec![T::zero(); n * cs * hw];
        for ni in 0..n {
            let src = &xn.data[(ni * c + from) * hw..(ni * c + to) * hw];
            out[ni * cs * hw..(ni + 1) * cs * hw].copy_from_slice(src);
        }
        let rg = xn.requires_grad;
        self.push("slice_channels", vec![n, cs, h, w], out, rg, Op::SliceCh { x, from, to })
    }

    /// Adaptive average pooling onto a (bh, bw) grid of disjoint bins.
    pub fn avg_pool_bins(&mut self, x: TensorId, bins: (usize, usize)) -> Result<TensorId> {
        let xn = &self.nodes[x.0];
        if xn.shape.len() != 4 || bins.0 == 0 || bins.1 == 0 || bins.0 > xn.shape[2] || bins.1 > xn.shape[3] {
            return Err(TensorError::InvalidArgument {
                op: "avg_pool_bins",
                msg: format!("bins {:?} invalid for {:?}", bins, xn.shape),
            });
        }
        let (n, c, h, w) = (xn.shape[0], xn.shape[1], xn.shape[2], xn.shape[3]);
        let mut out = vec![T::zero(); n * c * bins.0 * bins.1];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for by in 0..bins.0 {
                    let (y0, y1) = kernels::bin_bounds(h, bins.0, by);
                    for bx in 0..bins.1 {
                        let (x0, x1) = kernels::bin_bounds(w, bins.1, bx);
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                acc += xn.data[base + y * w + xx];
                            }
                        }
                        let cnt = T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                        out[((ni * c + ci) * bins.0 + by) * bins.1 + bx] = acc / cnt;
                    }
                }
            }
        }
        let rg = xn.requires_grad;
        self.push("avg_pool_bins", vec![n, c, bins.0, bins.1], out, rg, Op::AvgPoolBins { x })
    }

    /// Align-corners-false bilinear resize to (th, tw).
    pub fn bilinear_resize(&mut self, x: TensorId, target: (usize, usize)) -> Result<TensorId> {
        let xn = &self.nodes[x.0];
        if xn.shape.len() != 4 || target.0 == 0 || target.1 == 0 {
            return Err(TensorError::InvalidArgument {
                op: "bilinear_resize",
                msg: format!("target {:?} invalid for {:?}", target, xn.shape),
            });
        }
        let (n, c, h, w) = (xn.shape[0], xn.shape[1], xn.shape[2], xn.shape[3]);
        let (th, tw) = target;
        let mut out = vec![T::zero(); n * c * th * tw];
        for oy in 0..th {
            let (y0, y1, wy) = kernels::bilinear_coeffs(oy, h, th);
            let wy = T::from_f64(wy);
            for ox in 0..tw {
                let (x0, x1, wx) = kernels::bilinear_coeffs(ox, w, tw);
                let wx = T::from_f64(wx);
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * h * w;
                        let a = xn.data[base + y0 * w + x0];
                        let b = xn.data[base + y0 * w + x1];
                        let cc = xn.data[base + y1 * w + x0];
                        let d = xn.data[base + y1 * w + x1];
                        let top = a + wx * (b - a);
                        let bot = cc + wx * (d - cc);
                        out[((ni * c + ci) * th + oy) * tw + ox] = top + wy * (bot - top);
                    }
                }
            }
        }
        let rg = xn.requires_grad;
        self.push("bilinear_resize", vec![n, c, th, tw], out, rg, Op::BilinearResize { x })
    }

    /// Valid-mode k x k box-filter mean per channel (SSIM window statistics).
    pub fn window_mean(&mut self, x: TensorId, k: usize) -> Result<TensorId> {
        let xn = &self.nodes[x.0];
        if xn.shape.len() != 4 || k == 0 || xn.shape[2] < k || xn.shape[3] < k {
            return Err(TensorError::InvalidArgument {
                op: "window_mean",
                msg: format!("window {} does not fit {:?}", k, xn.shape),
            });
        }
        let (n, c, h, w) = (xn.shape[0], xn.shape[1], xn.shape[2], xn.shape[3]);
        let (oh, ow) = (h - k + 1, w - k + 1);
        let inv = T::from_f64(1.0 / (k * k) as f64);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            acc += xn.data[base + (oy + dy) * w + ox + dx];
                        }
                    }
                    out[nc * oh * ow + oy * ow + ox] = acc * inv;
                }
            }
        }
        let rg = xn.requires_grad;
        self.push("window_mean", vec![n, c, oh, ow], out, rg, Op::WindowMean { x, k })
    }

    /// Mean negative log-likelihood over unmasked pixels; logits are (N,2,H,W),
    /// labels are row-major (N,H,W) values in {0,1}, mask entries `true` count.
    pub fn softmax_cross_entropy(&mut self, logits: TensorId, labels: &[u8], mask: Option<&[bool]>) -> Result<TensorId> {
        let ln = &self.nodes[logits.0];
        if ln.shape.len() != 4 || ln.shape[1] != 2 {
            return Err(TensorError::InvalidArgument {
                op: "softmax_cross_entropy",
                msg: format!("logits must be (N,2,H,W), got {:?}", ln.shape),
            });
        }
        let (n, h, w) = (ln.shape[0], ln.shape[2], ln.shape[3]);
        let hw = h * w;
        if labels.len() != n * hw {
            return Err(TensorError::InvalidArgument {
                op: "softmax_cross_entropy",
                msg: format!("labels len {} vs {} pixels", labels.len(), n * hw),
            });
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(TensorError::InvalidArgument {
                op: "softmax_cross_entropy",
                msg: "labels must be 0 or 1".into(),
            });
        }
        if let Some(m) = mask {
            if m.len() != labels.len() {
                return Err(TensorError::InvalidArgument {
                    op: "softmax_cross_entropy",
                    msg: "mask length mismatch".into(),
                });
            }
        }
        let mut probs = vec![T::zero(); n * 2 * hw];
        let mut acc = T::zero();
        let mut count = 0usize;
        for ni in 0..n {
            for p in 0..hw {
                let z0 = ln.data[(ni * 2) * hw + p];
                let z1 = ln.data[(ni * 2 + 1) * hw + p];
                let m = z0.max(z1);
                let e0 = (z0 - m).exp();
                let e1 = (z1 - m).exp();
                let z = e0 + e1;
                let p0 = e0 / z;
                let p1 = e1 / z;
                probs[(ni * 2) * hw + p] = p0;
                probs[(ni * 2 + 1) * hw + p] = p1;
                let active = mask.map_or(true, |mk| mk[ni * hw + p]);
                if active {
                    let lbl = labels[ni * hw + p];
                    // log-sum-exp form keeps the loss finite for huge margins
                    let zl = if lbl == 0 { z0 } else { z1 };
                    acc += m + z.ln() - zl;
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(TensorError::InvalidArgument {
                op: "softmax_cross_entropy",
                msg: "no unmasked pixels".into(),
            });
        }
        let loss = acc / T::from_f64(count as f64);
        let rg = ln.requires_grad;
        self.push(
            "softmax_cross_entropy",
            vec![1],
            vec![loss],
            rg,
            Op::SoftmaxCe { logits, labels: labels.to_vec(), mask: mask.map(|m| m.to_vec()), probs, count },
        )
    }

    /// Difference of the channel vectors at two pixel locations of a (1,C,H,W) map.
    pub fn pixel_pair_diff(&mut self, x: TensorId, a: (usize, usize), b: (usize, usize)) -> Result<TensorId> {
        let xn = &self.nodes[x.0];
        if xn.shape.len() != 4 || xn.shape[0] != 1 {
            return Err(TensorError::InvalidArgument {
                op: "pixel_pair_diff",
                msg: format!("expected (1,C,H,W), got {:?}", xn.shape),
            });
        }
        let (c, h, w) = (xn.shape[1], xn.shape[2], xn.shape[3]);
        if a.0 >= h || a.1 >= w || b.0 >= h || b.1 >= w {
            return Err(TensorError::InvalidArgument {
                op: "pixel_pair_diff",
                msg: format!("pixels {:?}/{:?} out of {}x{}", a, b, h, w),
            });
        }
        let mut out = Vec::with_capacity(c);
        for ci in 0..c {
            let base = ci * h * w;
            out.push(xn.data[base + a.0 * w + a.1] - xn.data[base + b.0 * w + b.1]);
        }
        let rg = xn.requires_grad;
        self.push("pixel_pair_diff", vec![c], out, rg, Op::PixelPairDiff { x, a, b })
    }

    // ---- backward ----

    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let ln = &self.nodes[loss.0];
        if ln.data.len() != 1 {
            return Err(TensorError::NonScalarLoss { shape: ln.shape.clone() });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if self.grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = self.grads[idx].take().unwrap();
            self.propagate(idx, &g)?;
            self.grads[idx] = Some(g);
        }
        for gv in self.grads.iter().flatten() {
            if gv.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
        }
        Ok(())
    }

    fn grad_buf(&mut self, id: TensorId) -> &mut Vec<T> {
        let len = self.nodes[id.0].data.len();
        self.grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&mut self, idx: usize, g: &[T]) -> Result<()> {
        // op records borrow from nodes; take a raw description first
        enum Todo<T> {
            None,
            One(TensorId, Vec<T>),
            Two(TensorId, Vec<T>, TensorId, Vec<T>),
            Many(Vec<(TensorId, Vec<T>)>),
        }
        let todo: Todo<T> = match &self.nodes[idx].op {
            Op::Leaf => Todo::None,
            Op::Bin(op, a, b) => {
                let (a, b) = (*a, *b);
                let da = self.nodes[a.0].data.clone();
                let db = self.nodes[b.0].data.clone();
                let (la, lb) = (da.len(), db.len());
                let n = la.max(lb);
                let mut ga = vec![T::zero(); la];
                let mut gb = vec![T::zero(); lb];
                for i in 0..n {
                    let ia = if la == 1 { 0 } else { i };
                    let ib = if lb == 1 { 0 } else { i };
                    let (x, y) = (da[ia], db[ib]);
                    let gi = g[i];
                    match op {
                        BinOp::Add => {
                            ga[ia] += gi;
                            gb[ib] += gi;
                        }
                        BinOp::Sub => {
                            ga[ia] += gi;
                            gb[ib] -= gi;
                        }
                        BinOp::Mul => {
                            ga[ia] += gi * y;
                            gb[ib] += gi * x;
                        }
                        BinOp::Div => {
                            ga[ia] += gi / y;
                            gb[ib] -= gi * x / (y * y);
                        }
                    }
                }
                Todo::Two(a, ga, b, gb)
            }
            Op::Un(op, x) => {
                let x = *x;
                let xd = &self.nodes[x.0].data;
                let yd = &self.nodes[idx].data;
                let gx: Vec<T> = (0..xd.len())
                    .map(|i| {
                        let gi = g[i];
                        match op {
                            UnOp::Relu => {
                                if xd[i] > T::zero() {
                                    gi
                                } else {
                                    T::zero()
                                }
                            }
                            UnOp::Sigmoid => {
                                let s = yd[i];
                                gi * s * (T::one() - s)
                            }
                            UnOp::Sqrt => gi / (T::from_f64(2.0) * yd[i]),
                            UnOp::Ln => gi / xd[i],
                            UnOp::Acos => -gi / (T::one() - xd[i] * xd[i]).sqrt(),
                        }
                    })
                    .collect();
                Todo::One(x, gx)
            }
            Op::Clamp { x, lo, hi } => {
                let (x, lo, hi) = (*x, *lo, *hi);
                let xd = &self.nodes[x.0].data;
                let gx: Vec<T> = (0..xd.len())
                    .map(|i| if xd[i] > lo && xd[i] < hi { g[i] } else { T::zero() })
                    .collect();
                Todo::One(x, gx)
            }
            Op::Affine { x, scale } => {
                let (x, s) = (*x, *scale);
                Todo::One(x, g.iter().map(|&gi| gi * s).collect())
            }
            Op::Sum(x) => {
                let x = *x;
                let len = self.nodes[x.0].data.len();
                Todo::One(x, vec![g[0]; len])
            }
            Op::Mean(x) => {
                let x = *x;
                let len = self.nodes[x.0].data.len();
                let gi = g[0] / T::from_f64(len as f64);
                Todo::One(x, vec![gi; len])
            }
            Op::BiasAdd { x, bias } => {
                let (x, bias) = (*x, *bias);
                let sh = self.nodes[x.0].shape.clone();
                let (n, c, hw) = (sh[0], sh[1], sh[2] * sh[3]);
                let mut gb = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        for p in 0..hw {
                            gb[ci] += g[base + p];
                        }
                    }
                }
                Todo::Two(x, g.to_vec(), bias, gb)
            }
            Op::Conv2d { input, kernel, stride, pad } => {
                let (input, kernel, stride, pad) = (*input, *kernel, *stride, *pad);
                let xs = self.nodes[input.0].shape.clone();
                let ks = self.nodes[kernel.0].shape.clone();
                let os = self.nodes[idx].shape.clone();
                let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (co, kh, kw) = (ks[0], ks[2], ks[3]);
                let (oh, ow) = (os[2], os[3]);
                let l = oh * ow;
                let k = ci * kh * kw;
                let mut gx = vec![T::zero(); n * ci * h * w];
                let mut gk = vec![T::zero(); co * k];
                let mut cols = vec![T::zero(); k * l];
                let mut dcols = vec![T::zero(); k * l];
                for ni in 0..n {
                    let xslice = &self.nodes[input.0].data[ni * ci * h * w..(ni + 1) * ci * h * w];
                    kernels::im2col(xslice, ci, h, w, kh, kw, stride, pad, oh, ow, &mut cols);
                    let gout = &g[ni * co * l..(ni + 1) * co * l];
                    // dW += gOut (co x l) * cols^T (l x k)
                    T::gemm(
                        co, l, k,
                        T::one(),
                        gout, l as isize, 1,
                        &cols, 1, l as isize,
                        T::one(),
                        &mut gk, k as isize, 1,
                    );
                    // dCols = W^T (k x co) * gOut (co x l)
                    T::gemm(
                        k, co, l,
                        T::one(),
                        &self.nodes[kernel.0].data, 1, k as isize,
                        gout, l as isize, 1,
                        T::zero(),
                        &mut dcols, l as isize, 1,
                    );
                    kernels::col2im_add(&dcols, ci, h, w, kh, kw, stride, pad, oh, ow, &mut gx[ni * ci * h * w..(ni + 1) * ci * h * w]);
                }
                Todo::Two(input, gx, kernel, gk)
            }
            Op::ConcatCh(parts) => {
                let parts = parts.clone();
                let os = self.nodes[idx].shape.clone();
                let (n, ctot, hw) = (os[0], os[1], os[2] * os[3]);
                let mut outs = Vec::with_capacity(parts.len());
                let mut coff = 0;
                for &p in &parts {
                    let c = self.nodes[p.0].shape[1];
                    let mut gp = vec![T::zero(); n * c * hw];
                    for ni in 0..n {
                        let src = &g[(ni * ctot + coff) * hw..(ni * ctot + coff + c) * hw];
                        gp[ni * c * hw..(ni + 1) * c * hw].copy_from_slice(src);
                    }
                    coff += c;
                    outs.push((p, gp));
                }
                Todo::Many(outs)
            }
            Op::SliceCh { x, from, to } => {
                let (x, from, to) = (*x, *from, *to);
                let xs = self.nodes[x.0].shape.clone();
                let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                let cs = to - from;
                let mut gx = vec![T::zero(); n * c * hw];
                for ni in 0..n {
                    gx[(ni * c + from) * hw..(ni * c + to) * hw].copy_from_slice(&g[ni * cs * hw..(ni + 1) * cs * hw]);
                }
                Todo::One(x, gx)
            }
            Op::AvgPoolBins { x } => {
                let x = *x;
                let xs = self.nodes[x.0].shape.clone();
                let os = self.nodes[idx].shape.clone();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (bh, bw) = (os[2], os[3]);
                let mut gx = vec![T::zero(); n * c * h * w];
                for nc in 0..n * c {
                    let base = nc * h * w;
                    for by in 0..bh {
                        let (y0, y1) = kernels::bin_bounds(h, bh, by);
                        for bx in 0..bw {
                            let (x0, x1) = kernels::bin_bounds(w, bw, bx);
                            let cnt = T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                            let gi = g[(nc * bh + by) * bw + bx] / cnt;
                            for y in y0..y1 {
                                for xx in x0..x1 {
                                    gx[base + y * w + xx] += gi;
                                }
                            }
                        }
                    }
                }
                Todo::One(x, gx)
            }
            Op::BilinearResize { x } => {
                let x = *x;
                let xs = self.nodes[x.0].shape.clone();
                let os = self.nodes[idx].shape.clone();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (th, tw) = (os[2], os[3]);
                let mut gx = vec![T::zero(); n * c * h * w];
                for oy in 0..th {
                    let (y0, y1, wy) = kernels::bilinear_coeffs(oy, h, th);
                    let wy = T::from_f64(wy);
                    for ox in 0..tw {
                        let (x0, x1, wx) = kernels::bilinear_coeffs(ox, w, tw);
                        let wx = T::from_f64(wx);
                        for nc in 0..n * c {
                            let base = nc * h * w;
                            let gi = g[(nc * th + oy) * tw + ox];
                            gx[base + y0 * w + x0] += gi * (T::one() - wx) * (T::one() - wy);
                            gx[base + y0 * w + x1] += gi * wx * (T::one() - wy);
                            gx[base + y1 * w + x0] += gi * (T::one() - wx) * wy;
                            gx[base + y1 * w + x1] += gi * wx * wy;
                        }
                    }
                }
                Todo::One(x, gx)
            }
            Op::WindowMean { x, k } => {
                let (x, k) = (*x, *k);
                let xs = self.nodes[x.0].shape.clone();
                let os = self.nodes[idx].shape.clone();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (oh, ow) = (os[2], os[3]);
                let inv = T::from_f64(1.0 / (k * k) as f64);
                let mut gx = vec![T::zero(); n * c * h * w];
                for nc in 0..n * c {
                    let base = nc * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gi = g[nc * oh * ow + oy * ow + ox] * inv;
                            for dy in 0..k {
                                for dx in 0..k {
                                    gx[base + (oy + dy) * w + ox + dx] += gi;
                                }
                            }
                        }
                    }
                }
                Todo::One(x, gx)
            }
            Op::SoftmaxCe { logits, labels, mask, probs, count } => {
                let logits = *logits;
                let ls = self.nodes[logits.0].shape.clone();
                let (n, hw) = (ls[0], ls[2] * ls[3]);
                let inv = g[0] / T::from_f64(*count as f64);
                let mut gl = vec![T::zero(); n * 2 * hw];
                for ni in 0..n {
                    for p in 0..hw {
                        let active = mask.as_ref().map_or(true, |mk| mk[ni * hw + p]);
                        if !active {
                            continue;
                        }
                        let lbl = labels[ni * hw + p] as usize;
                        for cch in 0..2 {
                            let pr = probs[(ni * 2 + cch) * hw + p];
                            let tgt = if cch == lbl { T::one() } else { T::zero() };
                            gl[(ni * 2 + cch) * hw + p] = inv * (pr - tgt);
                        }
                    }
                }
                Todo::One(logits, gl)
            }
            Op::PixelPairDiff { x, a, b } => {
                let (x, a, b) = (*x, *a, *b);
                let xs = self.nodes[x.0].shape.clone();
                let (c, h, w) = (xs[1], xs[2], xs[3]);
                let mut gx = vec![T::zero(); c * h * w];
                for ci in 0..c {
                    let base = ci * h * w;
                    gx[base + a.0 * w + a.1] += g[ci];
                    gx[base + b.0 * w + b.1] -= g[ci];
                }
                Todo::One(x, gx)
            }
        };
        match todo {
            Todo::None => {}
            Todo::One(x, gx) => {
                if self.needs(x) {
                    accumulate(self.grad_buf(x), &gx);
                }
            }
            Todo::Two(a, ga, b, gb) => {
                if self.needs(a) {
                    accumulate(self.grad_buf(a), &ga);
                }
                if self.needs(b) {
                    accumulate(self.grad_buf(b), &gb);
                }
            }
            Todo::Many(list) => {
                for (x, gx) in list {
                    if self.needs(x) {
                        accumulate(self.grad_buf(x), &gx);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(dst: &mut [T], src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}
