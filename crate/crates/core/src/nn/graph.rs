//! Define-by-run reverse-mode differentiation over NCHW tensors.
//!
//! Every op appends a node holding its output and whatever it needs for the
//! backward pass. [`Graph::backward`] walks the nodes in reverse insertion
//! order, which is a valid topological order by construction.

use std::sync::Arc;

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
        cols: Vec<f32>,
    },
    ConvTranspose2 {
        x: Var,
        w: Var,
        b: Var,
        xmat: Vec<f32>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<f32>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        batch_stats: bool,
    },
    LeakyRelu {
        x: Var,
        slope: f32,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    AddScalar {
        x: Var,
    },
    Reciprocal {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Per-channel statistics observed by a batch-norm node in training mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

const NORM_EPS: f32 = 1e-5;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of every node reachable from the backward seeds.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value_arc(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[v.0].value)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is wanted (parameters, or inputs under test).
    pub fn leaf(&mut self, value: Arc<Tensor>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xt = self.value(x);
        let wt = self.value(w);
        let [n, ci, h, wd] = xt.shape();
        let [co, wci, k, k2] = wt.shape();
        assert_eq!(ci, wci, "conv2d channel mismatch");
        assert_eq!(k, k2, "conv2d expects square kernels");
        assert!(
            h + 2 * pad >= k && wd + 2 * pad >= k,
            "conv2d input smaller than kernel"
        );
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let np = n * ho * wo;
        let kk = ci * k * k;
        let cols = im2col(xt, k, stride, pad, ho, wo);
        let mut tmp = vec![0.0f32; co * np];
        gemm(
            co,
            kk,
            np,
            wt.data(),
            (kk, 1),
            &cols,
            (np, 1),
            &mut tmp,
            0.0,
        );
        let bias = self.value(b).data();
        let mut out = Tensor::zeros([n, co, ho, wo]);
        let p = ho * wo;
        let od = out.data_mut();
        for c in 0..co {
            for img in 0..n {
                let src = &tmp[c * np + img * p..c * np + (img + 1) * p];
                let dst = &mut od[(img * co + c) * p..(img * co + c + 1) * p];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias[c];
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                kernel: k,
                stride,
                pad,
                cols,
            },
            rg,
        )
    }

    /// Transposed convolution with a 2×2 kernel and stride 2. Weights are
    /// laid out `[C_in, C_out, 2, 2]`.
    pub fn conv_transpose2(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xt = self.value(x);
        let wt = self.value(w);
        let [n, ci, h, wd] = xt.shape();
        let [wci, co, k, k2] = wt.shape();
        assert_eq!(ci, wci, "conv_transpose2 channel mismatch");
        assert!(k == 2 && k2 == 2, "conv_transpose2 expects 2x2 kernels");
        let p = h * wd;
        let np = n * p;
        let q = co * 4;
        let mut xmat = vec![0.0f32; ci * np];
        for img in 0..n {
            for c in 0..ci {
                let src = &xt.data()[(img * ci + c) * p..(img * ci + c + 1) * p];
                xmat[c * np + img * p..c * np + (img + 1) * p].copy_from_slice(src);
            }
        }
        let mut tmp = vec![0.0f32; q * np];
        gemm(q, ci, np, wt.data(), (1, q), &xmat, (np, 1), &mut tmp, 0.0);
        let bias = self.value(b).data();
        let (ho, wo) = (2 * h, 2 * wd);
        let mut out = Tensor::zeros([n, co, ho, wo]);
        let od = out.data_mut();
        for img in 0..n {
            for c in 0..co {
                for a in 0..2 {
                    for bb in 0..2 {
                        let row = &tmp[(c * 4 + a * 2 + bb) * np + img * p..];
                        for i in 0..h {
                            let base = ((img * co + c) * ho + 2 * i + a) * wo + bb;
                            for j in 0..wd {
                                od[base + 2 * j] = row[i * wd + j] + bias[c];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(out, Op::ConvTranspose2 { x, w, b, xmat }, rg)
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        assert!(
            h % 2 == 0 && w % 2 == 0,
            "max_pool2 needs even spatial dims"
        );
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let mut argmax = vec![0u32; n * c * ho * wo];
        let xd = xt.data();
        let od = out.data_mut();
        for plane in 0..n * c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = usize::MAX;
                    let mut best_v = f32::NEG_INFINITY;
                    for a in 0..2 {
                        for bb in 0..2 {
                            let idx = (plane * h + 2 * i + a) * w + 2 * j + bb;
                            if best == usize::MAX || xd[idx] > best_v {
                                best = idx;
                                best_v = xd[idx];
                            }
                        }
                    }
                    let o = (plane * ho + i) * wo + j;
                    od[o] = best_v;
                    argmax[o] = best as u32;
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::MaxPool2 { x, argmax }, rg)
    }

    /// Per-image, per-channel normalization without affine parameters.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let p = h * w;
        let mut out = Tensor::zeros(xt.shape());
        let mut inv_std = vec![0.0f32; n * c];
        for plane in 0..n * c {
            let src = &xt.data()[plane * p..(plane + 1) * p];
            let (mean, var) = mean_var(src.iter().copied());
            let inv = 1.0 / (var + NORM_EPS as f64).sqrt();
            inv_std[plane] = inv as f32;
            let dst = &mut out.data_mut()[plane * p..(plane + 1) * p];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = ((s as f64 - mean) * inv) as f32;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::InstanceNorm { x, inv_std }, rg)
    }

    /// Batch normalization. With `running = None` the batch statistics are
    /// used (training mode) and returned; otherwise the supplied running
    /// statistics act as a fixed affine map.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<&BatchStats>,
    ) -> (Var, Option<BatchStats>) {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let p = h * w;
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0f32; xt.len()];
        let mut out = Tensor::zeros(xt.shape());
        let mut inv_std = vec![0.0f32; c];
        let mut observed = BatchStats {
            mean: vec![0.0; c],
            var: vec![0.0; c],
        };
        for ch in 0..c {
            let (mean, var) = match running {
                Some(rs) => (rs.mean[ch] as f64, rs.var[ch] as f64),
                None => {
                    let it = (0..n).flat_map(|img| {
                        xt.data()[(img * c + ch) * p..(img * c + ch + 1) * p]
                            .iter()
                            .copied()
                    });
                    mean_var(it)
                }
            };
            observed.mean[ch] = mean as f32;
            observed.var[ch] = var as f32;
            let inv = 1.0 / (var + NORM_EPS as f64).sqrt();
            inv_std[ch] = inv as f32;
            for img in 0..n {
                let off = (img * c + ch) * p;
                for i in off..off + p {
                    let xh = ((xt.data()[i] as f64 - mean) * inv) as f32;
                    xhat[i] = xh;
                    out.data_mut()[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let batch_stats = running.is_none();
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        );
        (v, batch_stats.then_some(observed))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    /// Multiplies by a precomputed mask (entries 0 or 1/(1−p)).
    pub fn dropout(&mut self, x: Var, mask: Vec<f32>) -> Var {
        let xt = self.value(x);
        assert_eq!(mask.len(), xt.len(), "dropout mask length");
        let mut out = xt.clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        let rg = self.rg(x);
        self.push(out, Op::Dropout { x, mask }, rg)
    }

    /// Channel concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let at = self.value(a);
        let bt = self.value(b);
        let [n, ca, h, w] = at.shape();
        let [nb, cb, hb, wb] = bt.shape();
        assert!(n == nb && h == hb && w == wb, "concat shape mismatch");
        let mut data = Vec::with_capacity(at.len() + bt.len());
        for img in 0..n {
            data.extend_from_slice(at.image(img));
            data.extend_from_slice(bt.image(img));
        }
        let out = Tensor::from_vec([n, ca + cb, h, w], data).expect("concat size");
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Concat { a, b }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::AddScalar { x }, rg)
    }

    pub fn reciprocal(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 / v);
        let rg = self.rg(x);
        self.push(out, Op::Reciprocal { x }, rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let p = h * w;
        let data = xt
            .data()
            .chunks(p)
            .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / p as f64) as f32)
            .collect();
        let out = Tensor::from_vec([n, c, 1, 1], data).expect("pool size");
        let rg = self.rg(x);
        self.push(out, Op::GlobalAvgPool { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    /// Reverse pass from the given output gradients.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>) -> Grads {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.value(v).shape(), "seed gradient shape");
            last = last.max(v.0);
            accumulate(&mut grads, v, g);
        }
        for idx in (0..=last).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.backward_node(node, &dy, &mut grads);
            }
            grads[idx] = Some(dy);
        }
        Grads { grads }
    }

    fn backward_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                kernel,
                stride,
                pad,
                cols,
            } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let [n, ci, h, wd] = xt.shape();
                let [_, co, ho, wo] = dy.shape();
                let p = ho * wo;
                let np = n * p;
                let kk = ci * kernel * kernel;
                let mut dtmp = vec![0.0f32; co * np];
                for c in 0..co {
                    for img in 0..n {
                        dtmp[c * np + img * p..c * np + (img + 1) * p].copy_from_slice(
                            &dy.data()[(img * co + c) * p..(img * co + c + 1) * p],
                        );
                    }
                }
                if self.rg(*b) {
                    let db = (0..co)
                        .map(|c| {
                            dtmp[c * np..(c + 1) * np]
                                .iter()
                                .map(|&v| v as f64)
                                .sum::<f64>() as f32
                        })
                        .collect();
                    accumulate(
                        grads,
                        *b,
                        Tensor::from_vec(self.value(*b).shape(), db).unwrap(),
                    );
                }
                if self.rg(*w) {
                    let mut dw = Tensor::zeros(wt.shape());
                    gemm(
                        co,
                        np,
                        kk,
                        &dtmp,
                        (np, 1),
                        cols,
                        (1, np),
                        dw.data_mut(),
                        0.0,
                    );
                    accumulate(grads, *w, dw);
                }
                if self.rg(*x) {
                    let mut dcols = vec![0.0f32; kk * np];
                    gemm(
                        kk,
                        co,
                        np,
                        wt.data(),
                        (1, kk),
                        &dtmp,
                        (np, 1),
                        &mut dcols,
                        0.0,
                    );
                    let dx = col2im(&dcols, [n, ci, h, wd], *kernel, *stride, *pad, ho, wo);
                    accumulate(grads, *x, dx);
                }
            }
            Op::ConvTranspose2 { x, w, b, xmat } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let [n, ci, h, wd] = xt.shape();
                let co = wt.shape()[1];
                let (ho, wo) = (2 * h, 2 * wd);
                let p = h * wd;
                let np = n * p;
                let q = co * 4;
                let mut dtmp = vec![0.0f32; q * np];
                let dd = dy.data();
                for img in 0..n {
                    for c in 0..co {
                        for a in 0..2 {
                            for bb in 0..2 {
                                let row = &mut dtmp[(c * 4 + a * 2 + bb) * np + img * p..];
                                for i in 0..h {
                                    let base = ((img * co + c) * ho + 2 * i + a) * wo + bb;
                                    for j in 0..wd {
                                        row[i * wd + j] = dd[base + 2 * j];
                                    }
                                }
                            }
                        }
                    }
                }
                if self.rg(*b) {
                    let db = (0..co)
                        .map(|c| {
                            dtmp[c * 4 * np..(c + 1) * 4 * np]
                                .iter()
                                .map(|&v| v as f64)
                                .sum::<f64>() as f32
                        })
                        .collect();
                    accumulate(
                        grads,
                        *b,
                        Tensor::from_vec(self.value(*b).shape(), db).unwrap(),
                    );
                }
                if self.rg(*w) {
                    let mut dw = Tensor::zeros(wt.shape());
                    gemm(ci, np, q, xmat, (np, 1), &dtmp, (1, np), dw.data_mut(), 0.0);
                    accumulate(grads, *w, dw);
                }
                if self.rg(*x) {
                    let mut dxmat = vec![0.0f32; ci * np];
                    gemm(
                        ci,
                        q,
                        np,
                        wt.data(),
                        (q, 1),
                        &dtmp,
                        (np, 1),
                        &mut dxmat,
                        0.0,
                    );
                    let mut dx = Tensor::zeros(xt.shape());
                    for img in 0..n {
                        for c in 0..ci {
                            dx.data_mut()[(img * ci + c) * p..(img * ci + c + 1) * p]
                                .copy_from_slice(&dxmat[c * np + img * p..c * np + (img + 1) * p]);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (&src, &g) in argmax.iter().zip(dy.data()) {
                    dx.data_mut()[src as usize] += g;
                }
                accumulate(grads, *x, dx);
            }
            Op::InstanceNorm { x, inv_std } => {
                let y = &node.value;
                let [n, c, h, w] = y.shape();
                let p = h * w;
                let mut dx = Tensor::zeros([n, c, h, w]);
                for plane in 0..n * c {
                    let r = plane * p..(plane + 1) * p;
                    let ys = &y.data()[r.clone()];
                    let gs = &dy.data()[r.clone()];
                    let mean_g = gs.iter().map(|&v| v as f64).sum::<f64>() / p as f64;
                    let mean_gy = gs
                        .iter()
                        .zip(ys)
                        .map(|(&g, &yv)| g as f64 * yv as f64)
                        .sum::<f64>()
                        / p as f64;
                    let inv = inv_std[plane] as f64;
                    for ((d, &g), &yv) in dx.data_mut()[r].iter_mut().zip(gs).zip(ys) {
                        *d = (inv * (g as f64 - mean_g - yv as f64 * mean_gy)) as f32;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let [n, c, h, w] = dy.shape();
                let p = h * w;
                let m = (n * p) as f64;
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                let mut dx = Tensor::zeros(dy.shape());
                for ch in 0..c {
                    let idx = (0..n).flat_map(|img| (img * c + ch) * p..(img * c + ch + 1) * p);
                    let (mut sg, mut sgx) = (0.0f64, 0.0f64);
                    for i in idx.clone() {
                        sg += dy.data()[i] as f64;
                        sgx += dy.data()[i] as f64 * xhat[i] as f64;
                    }
                    dgamma[ch] = sgx as f32;
                    dbeta[ch] = sg as f32;
                    let scale = g[ch] as f64 * inv_std[ch] as f64;
                    for i in idx {
                        let d = if *batch_stats {
                            scale * (dy.data()[i] as f64 - sg / m - xhat[i] as f64 * sgx / m)
                        } else {
                            scale * dy.data()[i] as f64
                        };
                        dx.data_mut()[i] = d as f32;
                    }
                }
                if self.rg(*gamma) {
                    let shape = self.value(*gamma).shape();
                    accumulate(grads, *gamma, Tensor::from_vec(shape, dgamma).unwrap());
                }
                if self.rg(*beta) {
                    let shape = self.value(*beta).shape();
                    accumulate(grads, *beta, Tensor::from_vec(shape, dbeta).unwrap());
                }
                if self.rg(*x) {
                    accumulate(grads, *x, dx);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xt = self.value(*x);
                let mut dx = dy.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xt.data()) {
                    if v <= 0.0 {
                        *d *= slope;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Dropout { x, mask } => {
                let mut dx = dy.clone();
                for (d, m) in dx.data_mut().iter_mut().zip(mask) {
                    *d *= m;
                }
                accumulate(grads, *x, dx);
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).c();
                let cb = self.value(*b).c();
                let [n, _, h, w] = dy.shape();
                let p = h * w;
                let mut da = Vec::with_capacity(n * ca * p);
                let mut db = Vec::with_capacity(n * cb * p);
                for img in 0..n {
                    let chunk = dy.image(img);
                    da.extend_from_slice(&chunk[..ca * p]);
                    db.extend_from_slice(&chunk[ca * p..]);
                }
                if self.rg(*a) {
                    accumulate(grads, *a, Tensor::from_vec([n, ca, h, w], da).unwrap());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, Tensor::from_vec([n, cb, h, w], db).unwrap());
                }
            }
            Op::AddScalar { x } => accumulate(grads, *x, dy.clone()),
            Op::Reciprocal { x } => {
                let mut dx = dy.clone();
                for (d, &yv) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= -yv * yv;
                }
                accumulate(grads, *x, dx);
            }
            Op::GlobalAvgPool { x } => {
                let shape = self.value(*x).shape();
                let p = shape[2] * shape[3];
                let mut dx = Tensor::zeros(shape);
                for (plane, &g) in dy.data().iter().enumerate() {
                    let gv = g / p as f32;
                    dx.data_mut()[plane * p..(plane + 1) * p].fill(gv);
                }
                accumulate(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let mut dx = dy.clone();
                for (d, &yv) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= yv * (1.0 - yv);
                }
                accumulate(grads, *x, dx);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn mean_var(it: impl Iterator<Item = f32> + Clone) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0.0f64);
    for v in it.clone() {
        n += 1;
        sum += v as f64;
    }
    let mean = sum / n as f64;
    let var = it.map(|v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var)
}

/// `C = A·B + beta·C` with explicit row/column strides for A and B.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(
        a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa,
        "gemm: A too short"
    );
    assert!(
        b.len() > (k.max(1) - 1) * rsb + (n - 1) * csb,
        "gemm: B too short"
    );
    assert!(c.len() >= m * n, "gemm: C too short");
    // SAFETY: the bounds above cover every element matrixmultiply touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds a batch into a `[C·k·k, N·Ho·Wo]` patch matrix.
fn im2col(x: &Tensor, k: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Vec<f32> {
    let [n, c, h, w] = x.shape();
    let p = ho * wo;
    let np = n * p;
    let mut cols = vec![0.0f32; c * k * k * np];
    let xd = x.data();
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                for img in 0..n {
                    let plane = &xd[(img * c + ch) * h * w..(img * c + ch + 1) * h * w];
                    let dst = &mut cols[row * np + img * p..row * np + (img + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    cols: &[f32],
    shape: [usize; 4],
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Tensor {
    let [n, c, h, w] = shape;
    let p = ho * wo;
    let np = n * p;
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                for img in 0..n {
                    let src = &cols[row * np + img * p..row * np + (img + 1) * p];
                    let plane = &mut od[(img * c + ch) * h * w..(img * c + ch + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
