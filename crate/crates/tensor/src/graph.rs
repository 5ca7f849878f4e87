//! Eager tape: every op computes its value on insertion and records what the
//! reverse pass needs. Node indices are a topological order by construction.

use crate::kernels::{col2im_add, gemm, im2col, ConvGeom, MatRef};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Epsilon added to the variance in batch normalization.
pub const BN_EPS: f64 = 1e-5;

/// User-defined differentiable operation.
///
/// `backward` returns one entry per input; `None` means "no gradient".
pub trait CustomOp {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Tensor;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>>;
}

/// Normalization statistics selector for [`Graph::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with frozen running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel batch statistics observed by a training-mode batch norm.
/// `var` is the unbiased estimate, as used for running averages.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    Sigmoid {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    MulConst {
        input: Var,
        factor: Tensor,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Select {
        input: Var,
        indices: Vec<usize>,
    },
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a reverse pass: gradients of leaves that require them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant copy of `v`; gradients do not flow back through it.
    pub fn detached(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    /// 2-D convolution. `weight` is `[c_out, c_in, kh, kw]`, `bias` is `[c_out]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom) -> Var {
        let x = self.value(input);
        let wt = self.value(weight);
        let (n, c, h, w) = x.dims4();
        let (co, ci, kh, kw) = wt.dims4();
        assert_eq!(ci, c, "conv2d: input has {c} channels, weight expects {ci}");
        assert_eq!((kh, kw), (geom.kh, geom.kw), "conv2d: kernel/geometry mismatch");
        let (oh, ow) = geom
            .conv_out(h, w)
            .unwrap_or_else(|| panic!("conv2d: kernel {kh}x{kw} does not fit {h}x{w}"));
        let k = c * kh * kw;
        let p = oh * ow;
        let mut out = vec![0.0; n * co * p];
        let mut cols = vec![0.0; k * p];
        for s in 0..n {
            im2col(x.sample(s), c, h, w, geom, oh, ow, &mut cols);
            gemm(
                co,
                k,
                p,
                MatRef::row_major(wt.data(), k),
                MatRef::row_major(&cols, p),
                0.0,
                &mut out[s * co * p..(s + 1) * co * p],
            );
        }
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b).data(), n, co, p);
        }
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        self.push(
            Tensor::new([n, co, oh, ow], out),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        )
    }

    /// Transposed 2-D convolution (the adjoint of [`Graph::conv2d`] with the
    /// same geometry). `weight` is `[c_in, c_out, kh, kw]`.
    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom) -> Var {
        let x = self.value(input);
        let wt = self.value(weight);
        let (n, ci, h, w) = x.dims4();
        let (wi, co, kh, kw) = wt.dims4();
        assert_eq!(wi, ci, "conv_transpose2d: input has {ci} channels, weight expects {wi}");
        assert_eq!((kh, kw), (geom.kh, geom.kw), "conv_transpose2d: kernel/geometry mismatch");
        let (oh, ow) = geom
            .transpose_out(h, w)
            .unwrap_or_else(|| panic!("conv_transpose2d: invalid geometry for {h}x{w}"));
        debug_assert_eq!(geom.conv_out(oh, ow), Some((h, w)));
        let kk = co * kh * kw;
        let p_in = h * w;
        let p_out = oh * ow;
        let mut out = vec![0.0; n * co * p_out];
        let mut cols = vec![0.0; kk * p_in];
        for s in 0..n {
            gemm(
                kk,
                ci,
                p_in,
                MatRef::transposed(wt.data(), kk),
                MatRef::row_major(x.sample(s), p_in),
                0.0,
                &mut cols,
            );
            col2im_add(&cols, co, oh, ow, geom, h, w, &mut out[s * co * p_out..(s + 1) * co * p_out]);
        }
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b).data(), n, co, p_out);
        }
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        self.push(
            Tensor::new([n, co, oh, ow], out),
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        )
    }

    /// Per-channel batch normalization with affine `gamma`/`beta`.
    ///
    /// In training mode also returns the observed batch statistics so the
    /// caller can maintain running averages.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, mode: BatchNormMode<'_>) -> (Var, Option<BatchStats>) {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let m = (n * hw) as f64;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        assert_eq!(g.len(), c);
        assert_eq!(b.len(), c);

        let (mean, var_biased, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut acc = 0.0;
                    for s in 0..n {
                        acc += x.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().sum::<f64>();
                    }
                    mean[ch] = acc / m;
                    let mut sq = 0.0;
                    for s in 0..n {
                        for &v in &x.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                            let d = v - mean[ch];
                            sq += d * d;
                        }
                    }
                    var[ch] = sq / m;
                }
                let unbiased = if m > 1.0 {
                    var.iter().map(|v| v * m / (m - 1.0)).collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                assert_eq!(mean.len(), c);
                assert_eq!(var.len(), c);
                (mean.to_vec(), var.to_vec(), None)
            }
        };

        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let rg = self.any_grad(&[input, gamma, beta]);
        let train = matches!(mode, BatchNormMode::Train);
        let v = self.push(
            Tensor::new([n, c, h, w], out),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        (v, stats)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let out = self.value(input).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.any_grad(&[input]);
        self.push(out, Op::LeakyRelu { input, slope }, rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(sigmoid);
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Sigmoid { input }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Add { a, b }, rg)
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, input: Var, factor: Tensor) -> Var {
        let out = self.value(input).zip_map(&factor, |x, f| x * f);
        let rg = self.any_grad(&[input]);
        self.push(out, Op::MulConst { input, factor }, rg)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).map(|v| v * factor);
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    /// Channel-axis concatenation of NCHW tensors.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Var {
        let parts: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::cat_channels(&parts);
        let rg = self.any_grad(inputs);
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        )
    }

    /// Gathers samples along the batch axis.
    pub fn select(&mut self, input: Var, indices: &[usize]) -> Var {
        let out = self.value(input).select(indices);
        let rg = self.any_grad(&[input]);
        self.push(
            out,
            Op::Select {
                input,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    /// `Σ wᵢ·termᵢ` over equally shaped terms (typically scalars).
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "weighted_sum of zero terms");
        let mut out = Tensor::zeros(self.value(terms[0].0).shape().to_vec());
        for &(v, wt) in terms {
            let t = self.value(v);
            assert_eq!(t.shape(), out.shape(), "weighted_sum shape mismatch");
            for (o, &x) in out.data_mut().iter_mut().zip(t.data()) {
                *o += wt * x;
            }
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.any_grad(&vars);
        self.push(
            out,
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            rg,
        )
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Var {
        let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&vals);
        let rg = self.any_grad(inputs);
        self.push(
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Reverse pass seeded with ones at `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(self.value(root).shape().to_vec()));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backward_node(node, &gy, &mut grads);
        }
        // Interior gradients were consumed above; only leaves remain.
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => self.conv_backward(*input, *weight, *bias, *geom, gy, grads),
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            } => self.conv_transpose_backward(*input, *weight, *bias, *geom, gy, grads),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, h, w) = gy.dims4();
                let hw = h * w;
                let m = (n * hw) as f64;
                let g = self.value(*gamma).data();
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        let plane = base..base + hw;
                        for (dy, xh) in gy.data()[plane.clone()].iter().zip(&xhat[plane]) {
                            sum_dy[ch] += dy;
                            sum_dy_xhat[ch] += dy * xh;
                        }
                    }
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, Tensor::new([c], sum_dy_xhat.clone()));
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, Tensor::new([c], sum_dy.clone()));
                }
                if self.wants(*input) {
                    let mut dx = vec![0.0; gy.numel()];
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * hw;
                            let k = g[ch] * inv_std[ch];
                            for i in base..base + hw {
                                dx[i] = if *train {
                                    k / m * (m * gy.data()[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch])
                                } else {
                                    k * gy.data()[i]
                                };
                            }
                        }
                    }
                    accumulate(grads, *input, Tensor::new([n, c, h, w], dx));
                }
            }
            Op::LeakyRelu { input, slope } => {
                if self.wants(*input) {
                    let x = self.value(*input);
                    let dx = x.zip_map(gy, |v, g| if v > 0.0 { g } else { slope * g });
                    accumulate(grads, *input, dx);
                }
            }
            Op::Sigmoid { input } => {
                if self.wants(*input) {
                    let dx = node.value.zip_map(gy, |y, g| g * y * (1.0 - y));
                    accumulate(grads, *input, dx);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, gy.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, gy.clone());
                }
            }
            Op::MulConst { input, factor } => {
                if self.wants(*input) {
                    accumulate(grads, *input, gy.zip_map(factor, |g, f| g * f));
                }
            }
            Op::Scale { input, factor } => {
                if self.wants(*input) {
                    accumulate(grads, *input, gy.map(|g| g * factor));
                }
            }
            Op::Concat { inputs } => {
                let (n, ctot, h, w) = gy.dims4();
                let hw = h * w;
                let mut offset = 0;
                for &v in inputs {
                    let c = self.value(v).dims4().1;
                    if self.wants(v) {
                        let mut part = Vec::with_capacity(n * c * hw);
                        for s in 0..n {
                            let base = (s * ctot + offset) * hw;
                            part.extend_from_slice(&gy.data()[base..base + c * hw]);
                        }
                        accumulate(grads, v, Tensor::new([n, c, h, w], part));
                    }
                    offset += c;
                }
            }
            Op::Select { input, indices } => {
                if self.wants(*input) {
                    let x = self.value(*input);
                    let mut dx = Tensor::zeros(x.shape().to_vec());
                    let stride = x.numel() / x.shape()[0];
                    for (k, &i) in indices.iter().enumerate() {
                        let src = &gy.data()[k * stride..(k + 1) * stride];
                        for (d, &s) in dx.data_mut()[i * stride..(i + 1) * stride].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    accumulate(grads, *input, dx);
                }
            }
            Op::WeightedSum { terms } => {
                for &(v, wt) in terms {
                    if self.wants(v) {
                        accumulate(grads, v, gy.map(|g| g * wt));
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let input_grads = op.backward(&vals, &node.value, gy);
                assert_eq!(
                    input_grads.len(),
                    inputs.len(),
                    "custom op '{}' returned the wrong number of gradients",
                    op.name()
                );
                for (&v, g) in inputs.iter().zip(input_grads) {
                    if let (true, Some(g)) = (self.wants(v), g) {
                        assert_eq!(g.shape(), self.value(v).shape(), "custom op '{}' gradient shape", op.name());
                        accumulate(grads, v, g);
                    }
                }
            }
        }
    }

    fn conv_backward(&self, input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let x = self.value(input);
        let wt = self.value(weight);
        let (n, c, h, w) = x.dims4();
        let (co, _, kh, kw) = wt.dims4();
        let (_, _, oh, ow) = gy.dims4();
        let k = c * kh * kw;
        let p = oh * ow;
        let need_w = self.wants(weight);
        let need_x = self.wants(input);
        let mut dw = if need_w { vec![0.0; co * k] } else { Vec::new() };
        let mut dx = if need_x { vec![0.0; x.numel()] } else { Vec::new() };
        let mut cols = vec![0.0; k * p];
        for s in 0..n {
            let gy_s = gy.sample(s);
            if need_w {
                im2col(x.sample(s), c, h, w, geom, oh, ow, &mut cols);
                gemm(co, p, k, MatRef::row_major(gy_s, p), MatRef::transposed(&cols, p), 1.0, &mut dw);
            }
            if need_x {
                gemm(k, co, p, MatRef::transposed(wt.data(), k), MatRef::row_major(gy_s, p), 0.0, &mut cols);
                col2im_add(&cols, c, h, w, geom, oh, ow, &mut dx[s * c * h * w..(s + 1) * c * h * w]);
            }
        }
        if need_w {
            accumulate(grads, weight, Tensor::new(wt.shape().to_vec(), dw));
        }
        if need_x {
            accumulate(grads, input, Tensor::new(x.shape().to_vec(), dx));
        }
        if let Some(b) = bias {
            if self.wants(b) {
                accumulate(grads, b, Tensor::new([co], channel_sums(gy)));
            }
        }
    }

    fn conv_transpose_backward(&self, input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let x = self.value(input);
        let wt = self.value(weight);
        let (n, ci, h, w) = x.dims4();
        let (_, co, kh, kw) = wt.dims4();
        let (_, _, oh, ow) = gy.dims4();
        let kk = co * kh * kw;
        let p_in = h * w;
        let need_w = self.wants(weight);
        let need_x = self.wants(input);
        let mut dw = if need_w { vec![0.0; ci * kk] } else { Vec::new() };
        let mut dx = if need_x { vec![0.0; x.numel()] } else { Vec::new() };
        let mut cols = vec![0.0; kk * p_in];
        if need_w || need_x {
            for s in 0..n {
                im2col(gy.sample(s), co, oh, ow, geom, h, w, &mut cols);
                if need_x {
                    gemm(
                        ci,
                        kk,
                        p_in,
                        MatRef::row_major(wt.data(), kk),
                        MatRef::row_major(&cols, p_in),
                        0.0,
                        &mut dx[s * ci * p_in..(s + 1) * ci * p_in],
                    );
                }
                if need_w {
                    gemm(ci, p_in, kk, MatRef::row_major(x.sample(s), p_in), MatRef::transposed(&cols, p_in), 1.0, &mut dw);
                }
            }
        }
        if need_w {
            accumulate(grads, weight, Tensor::new(wt.shape().to_vec(), dw));
        }
        if need_x {
            accumulate(grads, input, Tensor::new(x.shape().to_vec(), dx));
        }
        if let Some(b) = bias {
            if self.wants(b) {
                accumulate(grads, b, Tensor::new([co], channel_sums(gy)));
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], n: usize, c: usize, p: usize) {
    for s in 0..n {
        for (ch, &b) in bias.iter().enumerate().take(c) {
            for v in &mut out[(s * c + ch) * p..(s * c + ch + 1) * p] {
                *v += b;
            }
        }
    }
}

fn channel_sums(t: &Tensor) -> Vec<f64> {
    let (n, c, h, w) = t.dims4();
    let hw = h * w;
    let mut out = vec![0.0; c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += t.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().sum::<f64>();
        }
    }
    out
}
