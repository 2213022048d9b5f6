//! Tape-based computation graph.
//!
//! Operations append nodes to the graph in construction order, which is also
//! a topological order: an op can only reference vars that already exist.
//! The reverse sweep therefore visits every node exactly once, accumulating
//! gradients into each input slot with `+=` so that a var consumed by several
//! ops receives the sum of all contributions.
//!
//! A graph is confined to one worker; `RefCell` makes it `!Sync` on purpose.

use super::kernels;
use super::{strides, Scalar, Tensor};
use crate::error::{Error, Result};
use std::cell::RefCell;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    Transpose2d { x: Var },
    Conv2d { x: Var, kernels: Var, bias: Option<Var>, pad: usize, stride: usize },
    Permute { x: Var, perm: Vec<usize> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    AddRow { x: Var, row: Var },
    MulRow { x: Var, row: Var },
    AddScalarVar { x: Var, s: Var },
    MulScalarVar { x: Var, s: Var },
    AddConst { x: Var },
    MulConst { x: Var, c: f64 },
    Neg { x: Var },
    Exp { x: Var },
    Log { x: Var },
    Tanh { x: Var },
    Elu { x: Var },
    Clip { x: Var, lo: f64, hi: f64 },
    MaxBin { a: Var, b: Var },
    MinBin { a: Var, b: Var },
    Softmax { x: Var, axis: usize },
    MhaAttend { q: Var, k: Var, v: Var, heads: usize, tokens: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize, len: usize },
    Reshape { x: Var },
    SumAll { x: Var },
    MeanAll { x: Var },
    SumAxis { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Vec<T>>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Insert a tensor that does not need gradients.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Insert a trainable tensor; its gradient is available after `backward`.
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Insert a leaf with an explicit `requires_grad` flag.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.item()
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let nodes = self.nodes.borrow();
        let grads = self.grads.borrow();
        grads.get(v.0).and_then(|g| {
            g.as_ref()
                .map(|data| Tensor::new(nodes[v.0].value.shape(), data.clone()).expect("grad shape"))
        })
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    // ----- shape-checked operations ------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("lhs {:?} incompatible with rhs {:?}", sa, sb),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        {
            let nodes = self.nodes.borrow();
            kernels::mm_nn(
                nodes[a.0].value.data(),
                nodes[b.0].value.data(),
                &mut out,
                m,
                k,
                n,
            );
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::Matmul { a, b }, req))
    }

    pub fn transpose2d(&self, x: Var) -> Result<Var> {
        let s = self.shape_of(x);
        if s.len() != 2 {
            return Err(Error::shape("transpose2d", format!("expected rank 2, got {:?}", s)));
        }
        let (m, n) = (s[0], s[1]);
        let mut out = vec![T::zero(); m * n];
        self.with_value(x, |t| {
            let d = t.data();
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = d[i * n + j];
                }
            }
        });
        let req = self.requires(x);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::Transpose2d { x }, req))
    }

    /// Cross-correlation with zero padding. Input may be [C,H,W] or
    /// [N,C,H,W]; the output keeps the input rank. `bias`, when given, has
    /// one entry per output channel.
    pub fn conv2d(
        &self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        pad: usize,
        stride: usize,
    ) -> Result<Var> {
        let sx = self.shape_of(x);
        let sk = self.shape_of(kernel);
        if sk.len() != 4 || sk[2] != sk[3] {
            return Err(Error::shape(
                "conv2d",
                format!("kernels must be [c_out,c_in,k,k], got {:?}", sk),
            ));
        }
        let (rank3, n, c_in, h, w) = match sx.len() {
            3 => (true, 1, sx[0], sx[1], sx[2]),
            4 => (false, sx[0], sx[1], sx[2], sx[3]),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("input must be [c,h,w] or [n,c,h,w], got {:?}", sx),
                ))
            }
        };
        let (c_out, ksize) = (sk[0], sk[2]);
        if sk[1] != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} has {} channels but kernels {:?} expect {}", sx, c_in, sk, sk[1]),
            ));
        }
        if ksize % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel size {} must be odd", ksize)));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive".to_string()));
        }
        let oh = kernels::conv_out_size(h, ksize, pad, stride).ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!("input {:?}, kernel {}, pad {}, stride {} gives non-integral output height", sx, ksize, pad, stride),
            )
        })?;
        let ow = kernels::conv_out_size(w, ksize, pad, stride).ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!("input {:?}, kernel {}, pad {}, stride {} gives non-integral output width", sx, ksize, pad, stride),
            )
        })?;
        if let Some(b) = bias {
            let sb = self.shape_of(b);
            if sb.iter().product::<usize>() != c_out {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} does not match {} output channels", sb, c_out),
                ));
            }
        }

        let mut out = vec![T::zero(); n * c_out * oh * ow];
        {
            let nodes = self.nodes.borrow();
            kernels::conv2d_forward(
                nodes[x.0].value.data(),
                nodes[kernel.0].value.data(),
                &mut out,
                n,
                c_in,
                h,
                w,
                c_out,
                ksize,
                pad,
                stride,
            );
            if let Some(b) = bias {
                let bd = nodes[b.0].value.data();
                for img in 0..n {
                    for co in 0..c_out {
                        let base = (img * c_out + co) * oh * ow;
                        let bv = bd[co];
                        for o in &mut out[base..base + oh * ow] {
                            *o = *o + bv;
                        }
                    }
                }
            }
        }
        let out_shape: Vec<usize> = if rank3 {
            vec![c_out, oh, ow]
        } else {
            vec![n, c_out, oh, ow]
        };
        let req = self.requires(x)
            || self.requires(kernel)
            || bias.map(|b| self.requires(b)).unwrap_or(false);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Conv2d { x, kernels: kernel, bias, pad, stride },
            req,
        ))
    }

    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape_of(x);
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute",
                format!("{:?} is not a permutation of axes of {:?}", perm, s),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let out = self.with_value(x, |t| permute_data(t.data(), &s, perm));
        let req = self.requires(x);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Permute { x, perm: perm.to_vec() },
            req,
        ))
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(Error::shape(name, format!("lhs {:?} vs rhs {:?}", sa, sb)));
        }
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .value
                .data()
                .iter()
                .zip(nodes[b.0].value.data().iter())
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(&sa, out)?, op, req))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div { a, b })
    }

    pub fn max_bin(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("max", a, b, |x, y| if x >= y { x } else { y }, Op::MaxBin { a, b })
    }

    pub fn min_bin(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("min", a, b, |x, y| if x <= y { x } else { y }, Op::MinBin { a, b })
    }

    /// Add a row vector to every row of a matrix.
    pub fn add_row(&self, x: Var, row: Var) -> Result<Var> {
        let (sx, sr) = (self.shape_of(x), self.shape_of(row));
        let cols = *sx.last().unwrap_or(&0);
        if sx.len() != 2 || sr.iter().product::<usize>() != cols {
            return Err(Error::shape(
                "add_row",
                format!("matrix {:?} vs row {:?}", sx, sr),
            ));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let xd = nodes[x.0].value.data();
            let rd = nodes[row.0].value.data();
            xd.iter()
                .enumerate()
                .map(|(i, &v)| v + rd[i % cols])
                .collect()
        };
        let req = self.requires(x) || self.requires(row);
        Ok(self.push(Tensor::new(&sx, out)?, Op::AddRow { x, row }, req))
    }

    /// Multiply every row of a matrix elementwise by a row vector.
    pub fn mul_row(&self, x: Var, row: Var) -> Result<Var> {
        let (sx, sr) = (self.shape_of(x), self.shape_of(row));
        let cols = *sx.last().unwrap_or(&0);
        if sx.len() != 2 || sr.iter().product::<usize>() != cols {
            return Err(Error::shape(
                "mul_row",
                format!("matrix {:?} vs row {:?}", sx, sr),
            ));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let xd = nodes[x.0].value.data();
            let rd = nodes[row.0].value.data();
            xd.iter()
                .enumerate()
                .map(|(i, &v)| v * rd[i % cols])
                .collect()
        };
        let req = self.requires(x) || self.requires(row);
        Ok(self.push(Tensor::new(&sx, out)?, Op::MulRow { x, row }, req))
    }

    /// Add a one-element tensor to every element.
    pub fn add_scalar_var(&self, x: Var, s: Var) -> Result<Var> {
        if self.shape_of(s).iter().product::<usize>() != 1 {
            return Err(Error::shape("add_scalar_var", format!("scalar side has shape {:?}", self.shape_of(s))));
        }
        let sx = self.shape_of(x);
        let out = {
            let nodes = self.nodes.borrow();
            let sv = nodes[s.0].value.data()[0];
            nodes[x.0].value.data().iter().map(|&v| v + sv).collect()
        };
        let req = self.requires(x) || self.requires(s);
        Ok(self.push(Tensor::new(&sx, out)?, Op::AddScalarVar { x, s }, req))
    }

    /// Multiply every element by a one-element tensor.
    pub fn mul_scalar_var(&self, x: Var, s: Var) -> Result<Var> {
        if self.shape_of(s).iter().product::<usize>() != 1 {
            return Err(Error::shape("mul_scalar_var", format!("scalar side has shape {:?}", self.shape_of(s))));
        }
        let sx = self.shape_of(x);
        let out = {
            let nodes = self.nodes.borrow();
            let sv = nodes[s.0].value.data()[0];
            nodes[x.0].value.data().iter().map(|&v| v * sv).collect()
        };
        let req = self.requires(x) || self.requires(s);
        Ok(self.push(Tensor::new(&sx, out)?, Op::MulScalarVar { x, s }, req))
    }

    fn unary(&self, x: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let sx = self.shape_of(x);
        let out: Vec<T> = self.with_value(x, |t| t.data().iter().map(|&v| f(v)).collect());
        let req = self.requires(x);
        self.push(Tensor::new(&sx, out).expect("unary shape"), op, req)
    }

    pub fn add_const(&self, x: Var, c: f64) -> Var {
        let cv = T::from_f64(c);
        self.unary(x, |v| v + cv, Op::AddConst { x })
    }

    pub fn mul_const(&self, x: Var, c: f64) -> Var {
        let cv = T::from_f64(c);
        self.unary(x, |v| v * cv, Op::MulConst { x, c })
    }

    pub fn neg(&self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg { x })
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp { x })
    }

    pub fn log(&self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log { x })
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh { x })
    }

    /// Exponential linear unit with unit alpha.
    pub fn elu(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { v.exp() - T::one() },
            Op::Elu { x },
        )
    }

    pub fn clip(&self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(
            x,
            |v| {
                if v < l {
                    l
                } else if v > h {
                    h
                } else {
                    v
                }
            },
            Op::Clip { x, lo, hi },
        )
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape_of(x);
        if axis >= s.len() {
            return Err(Error::shape("softmax", format!("axis {} out of range for {:?}", axis, s)));
        }
        let (outer, len, inner) = lane_dims(&s, axis);
        let mut out = self.value(x).into_data();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = out[base];
                for j in 1..len {
                    let v = out[base + j * inner];
                    if v > mx {
                        mx = v;
                    }
                }
                let mut sum = T::zero();
                for j in 0..len {
                    let idx = base + j * inner;
                    let e = (out[idx] - mx).exp();
                    out[idx] = e;
                    sum = sum + e;
                }
                for j in 0..len {
                    let idx = base + j * inner;
                    out[idx] = out[idx] / sum;
                }
            }
        }
        let req = self.requires(x);
        Ok(self.push(Tensor::new(&s, out)?, Op::Softmax { x, axis }, req))
    }

    /// Fused per-sample multi-head attention for a batch of single-token
    /// queries: `q` is [B, d], `k`/`v` are [B*M, d] with M key-value tokens
    /// per sample. Per sample and head, scores = q_h·k_hᵀ/sqrt(d/h) are
    /// softmax-normalized and the value rows averaged; the concatenated head
    /// outputs form the [B, d] result. Equivalent to composing slice/matmul/
    /// softmax per head, in one node.
    pub fn mha_attend(&self, q: Var, k: Var, v: Var, heads: usize, tokens: usize) -> Result<Var> {
        let (sq, sk, sv) = (self.shape_of(q), self.shape_of(k), self.shape_of(v));
        if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 {
            return Err(Error::shape("mha_attend", format!("ranks {:?} {:?} {:?}", sq, sk, sv)));
        }
        let (b, d) = (sq[0], sq[1]);
        if heads == 0 || d % heads != 0 || tokens == 0 {
            return Err(Error::shape(
                "mha_attend",
                format!("dim {d} not divisible by {heads} heads, or zero tokens"),
            ));
        }
        if sk != [b * tokens, d] || sv != [b * tokens, d] {
            return Err(Error::shape(
                "mha_attend",
                format!("keys {:?} / values {:?} do not match [{b}*{tokens}, {d}]", sk, sv),
            ));
        }
        let dh = d / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut out = vec![T::zero(); b * d];
        {
            let nodes = self.nodes.borrow();
            let qd = nodes[q.0].value.data();
            let kd = nodes[k.0].value.data();
            let vd = nodes[v.0].value.data();
            let mut attn = vec![T::zero(); tokens];
            for s in 0..b {
                for h in 0..heads {
                    let off = h * dh;
                    let q_row = &qd[s * d + off..s * d + off + dh];
                    let mut mx = T::neg_infinity();
                    for t in 0..tokens {
                        let k_row = &kd[(s * tokens + t) * d + off..(s * tokens + t) * d + off + dh];
                        let mut acc = T::zero();
                        for (a, b2) in q_row.iter().zip(k_row.iter()) {
                            acc = acc + *a * *b2;
                        }
                        let sc = acc * scale;
                        attn[t] = sc;
                        if sc > mx {
                            mx = sc;
                        }
                    }
                    let mut sum = T::zero();
                    for t in 0..tokens {
                        let e = (attn[t] - mx).exp();
                        attn[t] = e;
                        sum = sum + e;
                    }
                    let out_row = &mut out[s * d + off..s * d + off + dh];
                    for t in 0..tokens {
                        let w = attn[t] / sum;
                        let v_row = &vd[(s * tokens + t) * d + off..(s * tokens + t) * d + off + dh];
                        for (o, vv) in out_row.iter_mut().zip(v_row.iter()) {
                            *o = *o + w * *vv;
                        }
                    }
                }
            }
        }
        let req = self.requires(q) || self.requires(k) || self.requires(v);
        Ok(self.push(
            Tensor::new(&[b, d], out)?,
            Op::MhaAttend { q, k, v, heads, tokens },
            req,
        ))
    }

    /// Layer normalization over the last axis with learnable gain and shift.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape_of(x);
        let d = *s.last().ok_or_else(|| Error::shape("layer_norm", "rank 0 input".to_string()))?;
        if self.shape_of(gamma).iter().product::<usize>() != d
            || self.shape_of(beta).iter().product::<usize>() != d
        {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} must have {} elements",
                    self.shape_of(gamma),
                    self.shape_of(beta),
                    d
                ),
            ));
        }
        let rows = s.iter().product::<usize>() / d;
        let epsv = T::from_f64(eps);
        let out = {
            let nodes = self.nodes.borrow();
            let xd = nodes[x.0].value.data();
            let gd = nodes[gamma.0].value.data();
            let bd = nodes[beta.0].value.data();
            let mut out = vec![T::zero(); xd.len()];
            let dn = T::from_f64(d as f64);
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<T>()
                    / dn;
                let inv = T::one() / (var + epsv).sqrt();
                for j in 0..d {
                    out[r * d + j] = (row[j] - mean) * inv * gd[j] + bd[j];
                }
            }
            out
        };
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(Tensor::new(&s, out)?, Op::LayerNorm { x, gamma, beta, eps }, req))
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::shape("concat", "no inputs".to_string()));
        }
        let first = self.shape_of(xs[0]);
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {} out of range for {:?}", axis, first)));
        }
        let mut out_shape = first.clone();
        for &v in &xs[1..] {
            let s = self.shape_of(v);
            if s.len() != first.len()
                || s.iter()
                    .zip(first.iter())
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(
                    "concat",
                    format!("shape {:?} incompatible with {:?} along axis {}", s, first, axis),
                ));
            }
            out_shape[axis] += s[axis];
        }
        let inner: usize = first[axis + 1..].iter().product();
        let outer: usize = first[..axis].iter().product();
        let total: usize = out_shape.iter().product();
        let mut out = vec![T::zero(); total];
        {
            let nodes = self.nodes.borrow();
            let out_axis = out_shape[axis];
            let mut offset = 0usize;
            for &v in xs {
                let val = &nodes[v.0].value;
                let a = val.shape()[axis];
                let src = val.data();
                for o in 0..outer {
                    let src_base = o * a * inner;
                    let dst_base = (o * out_axis + offset) * inner;
                    out[dst_base..dst_base + a * inner]
                        .copy_from_slice(&src[src_base..src_base + a * inner]);
                }
                offset += a;
            }
        }
        let req = xs.iter().any(|&v| self.requires(v));
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Concat { xs: xs.to_vec(), axis },
            req,
        ))
    }

    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape_of(x);
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{}..{}) along axis {} out of bounds for {:?}", start, start + len, axis, s),
            ));
        }
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let inner: usize = s[axis + 1..].iter().product();
        let outer: usize = s[..axis].iter().product();
        let mut out = vec![T::zero(); out_shape.iter().product()];
        self.with_value(x, |t| {
            let src = t.data();
            for o in 0..outer {
                let src_base = (o * s[axis] + start) * inner;
                let dst_base = o * len * inner;
                out[dst_base..dst_base + len * inner]
                    .copy_from_slice(&src[src_base..src_base + len * inner]);
            }
        });
        let req = self.requires(x);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Slice { x, axis, start, len },
            req,
        ))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape_of(x);
        let numel: usize = shape.iter().product();
        if numel != s.iter().product::<usize>() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?} changes element count", s, shape),
            ));
        }
        let data = self.value(x).into_data();
        let req = self.requires(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape { x }, req))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&self, x: Var) -> Var {
        let total: T = self.with_value(x, |t| t.data().iter().copied().sum());
        let req = self.requires(x);
        self.push(Tensor::scalar(total), Op::SumAll { x }, req)
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean_all(&self, x: Var) -> Var {
        let (total, n) = self.with_value(x, |t| (t.data().iter().copied().sum::<T>(), t.numel()));
        let req = self.requires(x);
        self.push(
            Tensor::scalar(total / T::from_f64(n as f64)),
            Op::MeanAll { x },
            req,
        )
    }

    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    fn reduce_axis(&self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let s = self.shape_of(x);
        if axis >= s.len() {
            return Err(Error::shape("reduce", format!("axis {} out of range for {:?}", axis, s)));
        }
        let (outer, len, inner) = lane_dims(&s, axis);
        let mut out = vec![T::zero(); outer * inner];
        self.with_value(x, |t| {
            let d = t.data();
            for o in 0..outer {
                for j in 0..len {
                    let base = (o * len + j) * inner;
                    let dst = o * inner;
                    for i in 0..inner {
                        out[dst + i] = out[dst + i] + d[base + i];
                    }
                }
            }
        });
        if mean {
            let dn = T::from_f64(len as f64);
            for v in &mut out {
                *v = *v / dn;
            }
        }
        let mut out_shape: Vec<usize> = s
            .iter()
            .enumerate()
            .filter_map(|(i, &d)| (i != axis).then_some(d))
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let req = self.requires(x);
        let op = if mean {
            Op::MeanAxis { x, axis }
        } else {
            Op::SumAxis { x, axis }
        };
        Ok(self.push(Tensor::new(&out_shape, out)?, op, req))
    }

    // ----- backward ------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// reachable node with `requires_grad`.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", nodes[loss.0].value.shape()),
            ));
        }
        let mut grads = self.grads.borrow_mut();
        grads.clear();
        grads.resize(nodes.len(), None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            // inputs of node i always have indices < i
            let (head, tail) = grads.split_at_mut(i);
            let Some(g) = tail[0].as_ref() else { continue };
            backprop_node(&nodes, i, g, head);
        }
        Ok(())
    }
}

fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn permute_data<T: Scalar>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides = strides(&out_shape);
    let mut out = vec![T::zero(); data.len()];
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    for &v in data {
        // position of the current multi-index in the output
        let mut dst = 0usize;
        for (o, &p) in perm.iter().enumerate() {
            dst += idx[p] * out_strides[o];
        }
        out[dst] = v;
        // increment row-major multi-index
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    let _ = in_strides;
    out
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, numel: usize, add: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); numel]);
    add(buf);
}

#[allow(clippy::too_many_lines)]
fn backprop_node<T: Scalar>(
    nodes: &[Node<T>],
    i: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let node = &nodes[i];
    let needs = |v: Var| nodes[v.0].requires_grad;
    let val = |v: Var| nodes[v.0].value.data();
    let shape = |v: Var| nodes[v.0].value.shape();
    let numel = |v: Var| nodes[v.0].value.numel();

    match &node.op {
        Op::Leaf => {}
        Op::Matmul { a, b } => {
            let sa = shape(*a);
            let (m, k) = (sa[0], sa[1]);
            let n = shape(*b)[1];
            if needs(*a) {
                accumulate(&mut grads[a.0], m * k, |d| {
                    kernels::mm_nt(g, val(*b), d, m, n, k);
                });
            }
            if needs(*b) {
                accumulate(&mut grads[b.0], k * n, |d| {
                    kernels::mm_tn(val(*a), g, d, m, k, n);
                });
            }
        }
        Op::Transpose2d { x } => {
            if needs(*x) {
                let s = shape(*x);
                let (m, n) = (s[0], s[1]);
                accumulate(&mut grads[x.0], m * n, |d| {
                    for i2 in 0..n {
                        for j in 0..m {
                            d[j * n + i2] = d[j * n + i2] + g[i2 * m + j];
                        }
                    }
                });
            }
        }
        Op::Conv2d { x, kernels: kv, bias, pad, stride } => {
            let sx = shape(*x);
            let (n, c_in, h, w) = match sx.len() {
                3 => (1, sx[0], sx[1], sx[2]),
                _ => (sx[0], sx[1], sx[2], sx[3]),
            };
            let sk = shape(*kv);
            let (c_out, ksize) = (sk[0], sk[2]);
            if needs(*x) {
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    kernels::conv2d_backward_input(
                        g, val(*kv), d, n, c_in, h, w, c_out, ksize, *pad, *stride,
                    );
                });
            }
            if needs(*kv) {
                accumulate(&mut grads[kv.0], numel(*kv), |d| {
                    kernels::conv2d_backward_kernels(
                        g, val(*x), d, n, c_in, h, w, c_out, ksize, *pad, *stride,
                    );
                });
            }
            if let Some(b) = bias {
                if needs(*b) {
                    let oh = kernels::conv_out_size(h, ksize, *pad, *stride).expect("checked");
                    let ow = kernels::conv_out_size(w, ksize, *pad, *stride).expect("checked");
                    accumulate(&mut grads[b.0], c_out, |d| {
                        for img in 0..n {
                            for co in 0..c_out {
                                let base = (img * c_out + co) * oh * ow;
                                let mut acc = T::zero();
                                for &gv in &g[base..base + oh * ow] {
                                    acc = acc + gv;
                                }
                                d[co] = d[co] + acc;
                            }
                        }
                    });
                }
            }
        }
        Op::Permute { x, perm } => {
            if needs(*x) {
                // gradient flows through the inverse permutation
                let mut inv = vec![0usize; perm.len()];
                for (o, &p) in perm.iter().enumerate() {
                    inv[p] = o;
                }
                let out_shape: Vec<usize> = perm.iter().map(|&p| shape(*x)[p]).collect();
                let back = permute_data(g, &out_shape, &inv);
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for (dv, bv) in d.iter_mut().zip(back.iter()) {
                        *dv = *dv + *bv;
                    }
                });
            }
        }
        Op::Add { a, b } => {
            for v in [a, b] {
                if needs(*v) {
                    accumulate(&mut grads[v.0], numel(*v), |d| {
                        for (dv, &gv) in d.iter_mut().zip(g.iter()) {
                            *dv = *dv + gv;
                        }
                    });
                }
            }
        }
        Op::Sub { a, b } => {
            if needs(*a) {
                accumulate(&mut grads[a.0], numel(*a), |d| {
                    for (dv, &gv) in d.iter_mut().zip(g.iter()) {
                        *dv = *dv + gv;
                    }
                });
            }
            if needs(*b) {
                accumulate(&mut grads[b.0], numel(*b), |d| {
                    for (dv, &gv) in d.iter_mut().zip(g.iter()) {
                        *dv = *dv - gv;
                    }
                });
            }
        }
        Op::Mul { a, b } => {
            if needs(*a) {
                let bd = val(*b);
                accumulate(&mut grads[a.0], numel(*a), |d| {
                    for ((dv, &gv), &bv) in d.iter_mut().zip(g.iter()).zip(bd.iter()) {
                        *dv = *dv + gv * bv;
                    }
                });
            }
            if needs(*b) {
                let ad = val(*a);
                accumulate(&mut grads[b.0], numel(*b), |d| {
                    for ((dv, &gv), &av) in d.iter_mut().zip(g.iter()).zip(ad.iter()) {
                        *dv = *dv + gv * av;
                    }
                });
            }
        }
        Op::Div { a, b } => {
            if needs(*a) {
                let bd = val(*b);
                accumulate(&mut grads[a.0], numel(*a), |d| {
                    for ((dv, &gv), &bv) in d.iter_mut().zip(g.iter()).zip(bd.iter()) {
                        *dv = *dv + gv / bv;
                    }
                });
            }
            if needs(*b) {
                let (ad, bd) = (val(*a), val(*b));
                accumulate(&mut grads[b.0], numel(*b), |d| {
                    for i2 in 0..d.len() {
                        d[i2] = d[i2] - g[i2] * ad[i2] / (bd[i2] * bd[i2]);
                    }
                });
            }
        }
        Op::AddRow { x, row } => {
            let cols = *shape(*x).last().unwrap();
            if needs(*x) {
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for (dv, &gv) in d.iter_mut().zip(g.iter()) {
                        *dv = *dv + gv;
                    }
                });
            }
            if needs(*row) {
                accumulate(&mut grads[row.0], cols, |d| {
                    for (i2, &gv) in g.iter().enumerate() {
                        d[i2 % cols] = d[i2 % cols] + gv;
                    }
                });
            }
        }
        Op::MulRow { x, row } => {
            let cols = *shape(*x).last().unwrap();
            if needs(*x) {
                let rd = val(*row);
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for (i2, (dv, &gv)) in d.iter_mut().zip(g.iter()).enumerate() {
                        *dv = *dv + gv * rd[i2 % cols];
                    }
                });
            }
            if needs(*row) {
                let xd = val(*x);
                accumulate(&mut grads[row.0], cols, |d| {
                    for (i2, &gv) in g.iter().enumerate() {
                        d[i2 % cols] = d[i2 % cols] + gv * xd[i2];
                    }
                });
            }
        }
        Op::AddScalarVar { x, s } => {
            if needs(*x) {
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for (dv, &gv) in d.iter_mut().zip(g.iter()) {
                        *dv = *dv + gv;
                    }
                });
            }
            if needs(*s) {
                accumulate(&mut grads[s.0], 1, |d| {
                    d[0] = d[0] + g.iter().copied().sum::<T>();
                });
            }
        }
        Op::MulScalarVar { x, s } => {
            if needs(*x) {
                let sv = val(*s)[0];
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for (dv, &gv) in d.iter_mut().zip(g.iter()) {
                        *dv = *dv + gv * sv;
                    }
                });
            }
            if needs(*s) {
                let xd = val(*x);
                accumulate(&mut grads[s.0], 1, |d| {
                    let mut acc = T::zero();
                    for (&gv, &xv) in g.iter().zip(xd.iter()) {
                        acc = acc + gv * xv;
                    }
                    d[0] = d[0] + acc;
                });
            }
        }
        Op::AddConst { x } => {
            if needs(*x) {
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for (dv, &gv) in d.iter_mut().zip(g.iter()) {
                        *dv = *dv + gv;
                    }
                });
            }
        }
        Op::MulConst { x, c } => {
            if needs(*x) {
                let cv = T::from_f64(*c);
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for (dv, &gv) in d.iter_mut().zip(g.iter()) {
                        *dv = *dv + gv * cv;
                    }
                });
            }
        }
        Op::Neg { x } => {
            if needs(*x) {
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for (dv, &gv) in d.iter_mut().zip(g.iter()) {
                        *dv = *dv - gv;
                    }
                });
            }
        }
        Op::Exp { x } => {
            if needs(*x) {
                let y = node.value.data();
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for ((dv, &gv), &yv) in d.iter_mut().zip(g.iter()).zip(y.iter()) {
                        *dv = *dv + gv * yv;
                    }
                });
            }
        }
        Op::Log { x } => {
            if needs(*x) {
                let xd = val(*x);
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for ((dv, &gv), &xv) in d.iter_mut().zip(g.iter()).zip(xd.iter()) {
                        *dv = *dv + gv / xv;
                    }
                });
            }
        }
        Op::Tanh { x } => {
            if needs(*x) {
                let y = node.value.data();
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for ((dv, &gv), &yv) in d.iter_mut().zip(g.iter()).zip(y.iter()) {
                        *dv = *dv + gv * (T::one() - yv * yv);
                    }
                });
            }
        }
        Op::Elu { x } => {
            if needs(*x) {
                let xd = val(*x);
                let y = node.value.data();
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for i2 in 0..d.len() {
                        let slope = if xd[i2] > T::zero() {
                            T::one()
                        } else {
                            y[i2] + T::one()
                        };
                        d[i2] = d[i2] + g[i2] * slope;
                    }
                });
            }
        }
        Op::Clip { x, lo, hi } => {
            if needs(*x) {
                let (l, h) = (T::from_f64(*lo), T::from_f64(*hi));
                let xd = val(*x);
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for i2 in 0..d.len() {
                        if xd[i2] > l && xd[i2] < h {
                            d[i2] = d[i2] + g[i2];
                        }
                    }
                });
            }
        }
        Op::MaxBin { a, b } => {
            let (ad, bd) = (val(*a), val(*b));
            if needs(*a) {
                accumulate(&mut grads[a.0], numel(*a), |d| {
                    for i2 in 0..d.len() {
                        if ad[i2] >= bd[i2] {
                            d[i2] = d[i2] + g[i2];
                        }
                    }
                });
            }
            if needs(*b) {
                accumulate(&mut grads[b.0], numel(*b), |d| {
                    for i2 in 0..d.len() {
                        if ad[i2] < bd[i2] {
                            d[i2] = d[i2] + g[i2];
                        }
                    }
                });
            }
        }
        Op::MinBin { a, b } => {
            let (ad, bd) = (val(*a), val(*b));
            if needs(*a) {
                accumulate(&mut grads[a.0], numel(*a), |d| {
                    for i2 in 0..d.len() {
                        if ad[i2] <= bd[i2] {
                            d[i2] = d[i2] + g[i2];
                        }
                    }
                });
            }
            if needs(*b) {
                accumulate(&mut grads[b.0], numel(*b), |d| {
                    for i2 in 0..d.len() {
                        if ad[i2] > bd[i2] {
                            d[i2] = d[i2] + g[i2];
                        }
                    }
                });
            }
        }
        Op::Softmax { x, axis } => {
            if needs(*x) {
                let s = node.value.shape().to_vec();
                let (outer, len, inner) = lane_dims(&s, *axis);
                let y = node.value.data();
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for o in 0..outer {
                        for i2 in 0..inner {
                            let base = o * len * inner + i2;
                            let mut dot = T::zero();
                            for j in 0..len {
                                let idx = base + j * inner;
                                dot = dot + g[idx] * y[idx];
                            }
                            for j in 0..len {
                                let idx = base + j * inner;
                                d[idx] = d[idx] + (g[idx] - dot) * y[idx];
                            }
                        }
                    }
                });
            }
        }
        Op::MhaAttend { q, k, v, heads, tokens } => {
            let (heads, tokens) = (*heads, *tokens);
            let d = shape(*q)[1];
            let b = shape(*q)[0];
            let dh = d / heads;
            let scale = T::from_f64(1.0 / (dh as f64).sqrt());
            let qd = val(*q);
            let kd = val(*k);
            let vd = val(*v);
            let needs_q = needs(*q);
            let needs_k = needs(*k);
            let needs_v = needs(*v);
            // recompute attention weights, then propagate through the
            // softmax-weighted sum per sample and head
            let mut dq = if needs_q { vec![T::zero(); b * d] } else { Vec::new() };
            let mut dk = if needs_k { vec![T::zero(); b * tokens * d] } else { Vec::new() };
            let mut dv = if needs_v { vec![T::zero(); b * tokens * d] } else { Vec::new() };
            let mut attn = vec![T::zero(); tokens];
            let mut da = vec![T::zero(); tokens];
            for s in 0..b {
                for h in 0..heads {
                    let off = h * dh;
                    let q_row = &qd[s * d + off..s * d + off + dh];
                    let mut mx = T::neg_infinity();
                    for t in 0..tokens {
                        let k_row = &kd[(s * tokens + t) * d + off..(s * tokens + t) * d + off + dh];
                        let mut acc = T::zero();
                        for (a, b2) in q_row.iter().zip(k_row.iter()) {
                            acc = acc + *a * *b2;
                        }
                        let sc = acc * scale;
                        attn[t] = sc;
                        if sc > mx {
                            mx = sc;
                        }
                    }
                    let mut sum = T::zero();
                    for t in 0..tokens {
                        let e = (attn[t] - mx).exp();
                        attn[t] = e;
                        sum = sum + e;
                    }
                    for t in 0..tokens {
                        attn[t] = attn[t] / sum;
                    }

                    let g_row = &g[s * d + off..s * d + off + dh];
                    // dV and da
                    let mut dot = T::zero();
                    for t in 0..tokens {
                        let v_row = &vd[(s * tokens + t) * d + off..(s * tokens + t) * d + off + dh];
                        let mut acc = T::zero();
                        for (gv, vv) in g_row.iter().zip(v_row.iter()) {
                            acc = acc + *gv * *vv;
                        }
                        da[t] = acc;
                        dot = dot + acc * attn[t];
                    }
                    if needs_v {
                        for t in 0..tokens {
                            let base = (s * tokens + t) * d + off;
                            let w = attn[t];
                            for (i2, gv) in g_row.iter().enumerate() {
                                dv[base + i2] = dv[base + i2] + w * *gv;
                            }
                        }
                    }
                    // softmax backward: ds_t = (da_t - dot) * a_t, then into q/k
                    for t in 0..tokens {
                        let ds = (da[t] - dot) * attn[t] * scale;
                        let k_base = (s * tokens + t) * d + off;
                        if needs_q {
                            for i2 in 0..dh {
                                dq[s * d + off + i2] = dq[s * d + off + i2] + ds * kd[k_base + i2];
                            }
                        }
                        if needs_k {
                            for i2 in 0..dh {
                                dk[k_base + i2] = dk[k_base + i2] + ds * q_row[i2];
                            }
                        }
                    }
                }
            }
            if needs_q {
                accumulate(&mut grads[q.0], b * d, |dst| {
                    for (o, v2) in dst.iter_mut().zip(dq.iter()) {
                        *o = *o + *v2;
                    }
                });
            }
            if needs_k {
                accumulate(&mut grads[k.0], b * tokens * d, |dst| {
                    for (o, v2) in dst.iter_mut().zip(dk.iter()) {
                        *o = *o + *v2;
                    }
                });
            }
            if needs_v {
                accumulate(&mut grads[v.0], b * tokens * d, |dst| {
                    for (o, v2) in dst.iter_mut().zip(dv.iter()) {
                        *o = *o + *v2;
                    }
                });
            }
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let s = shape(*x);
            let d_axis = *s.last().unwrap();
            let rows = s.iter().product::<usize>() / d_axis;
            let xd = val(*x);
            let gd = val(*gamma);
            let dn = T::from_f64(d_axis as f64);
            let epsv = T::from_f64(*eps);
            // recompute per-row normalization
            let mut xhat = vec![T::zero(); xd.len()];
            let mut inv_std = vec![T::zero(); rows];
            for r in 0..rows {
                let row = &xd[r * d_axis..(r + 1) * d_axis];
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                let inv = T::one() / (var + epsv).sqrt();
                inv_std[r] = inv;
                for j in 0..d_axis {
                    xhat[r * d_axis + j] = (row[j] - mean) * inv;
                }
            }
            if needs(*beta) {
                accumulate(&mut grads[beta.0], d_axis, |d| {
                    for r in 0..rows {
                        for j in 0..d_axis {
                            d[j] = d[j] + g[r * d_axis + j];
                        }
                    }
                });
            }
            if needs(*gamma) {
                accumulate(&mut grads[gamma.0], d_axis, |d| {
                    for r in 0..rows {
                        for j in 0..d_axis {
                            d[j] = d[j] + g[r * d_axis + j] * xhat[r * d_axis + j];
                        }
                    }
                });
            }
            if needs(*x) {
                accumulate(&mut grads[x.0], xd.len(), |d| {
                    for r in 0..rows {
                        let base = r * d_axis;
                        let mut mean_gg = T::zero();
                        let mut mean_ggx = T::zero();
                        for j in 0..d_axis {
                            let gg = g[base + j] * gd[j];
                            mean_gg = mean_gg + gg;
                            mean_ggx = mean_ggx + gg * xhat[base + j];
                        }
                        mean_gg = mean_gg / dn;
                        mean_ggx = mean_ggx / dn;
                        for j in 0..d_axis {
                            let gg = g[base + j] * gd[j];
                            d[base + j] = d[base + j]
                                + (gg - mean_gg - xhat[base + j] * mean_ggx) * inv_std[r];
                        }
                    }
                });
            }
        }
        Op::Concat { xs, axis } => {
            let axis = *axis;
            let out_shape = node.value.shape().to_vec();
            let inner: usize = out_shape[axis + 1..].iter().product();
            let outer: usize = out_shape[..axis].iter().product();
            let out_axis = out_shape[axis];
            let mut offset = 0usize;
            for &v in xs {
                let a = shape(v)[axis];
                if needs(v) {
                    accumulate(&mut grads[v.0], numel(v), |d| {
                        for o in 0..outer {
                            let src_base = (o * out_axis + offset) * inner;
                            let dst_base = o * a * inner;
                            for i2 in 0..a * inner {
                                d[dst_base + i2] = d[dst_base + i2] + g[src_base + i2];
                            }
                        }
                    });
                }
                offset += a;
            }
        }
        Op::Slice { x, axis, start, len } => {
            if needs(*x) {
                let s = shape(*x);
                let inner: usize = s[*axis + 1..].iter().product();
                let outer: usize = s[..*axis].iter().product();
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for o in 0..outer {
                        let dst_base = (o * s[*axis] + start) * inner;
                        let src_base = o * len * inner;
                        for i2 in 0..len * inner {
                            d[dst_base + i2] = d[dst_base + i2] + g[src_base + i2];
                        }
                    }
                });
            }
        }
        Op::Reshape { x } => {
            if needs(*x) {
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for (dv, &gv) in d.iter_mut().zip(g.iter()) {
                        *dv = *dv + gv;
                    }
                });
            }
        }
        Op::SumAll { x } => {
            if needs(*x) {
                let gv = g[0];
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for dv in d.iter_mut() {
                        *dv = *dv + gv;
                    }
                });
            }
        }
        Op::MeanAll { x } => {
            if needs(*x) {
                let gv = g[0] / T::from_f64(numel(*x) as f64);
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for dv in d.iter_mut() {
                        *dv = *dv + gv;
                    }
                });
            }
        }
        Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
            if needs(*x) {
                let s = shape(*x);
                let (outer, len, inner) = lane_dims(&s, *axis);
                let scale = match node.op {
                    Op::MeanAxis { .. } => T::one() / T::from_f64(len as f64),
                    _ => T::one(),
                };
                accumulate(&mut grads[x.0], numel(*x), |d| {
                    for o in 0..outer {
                        for j in 0..len {
                            let base = (o * len + j) * inner;
                            let src = o * inner;
                            for i2 in 0..inner {
                                d[base + i2] = d[base + i2] + g[src + i2] * scale;
                            }
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_returns_input() {
        let g = Graph::<f64>::new();
        let id = g.constant(Tensor::eye(3));
        let m = g.constant(
            Tensor::from_f64_slice(&[3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap(),
        );
        let out = g.matmul(id, m).unwrap();
        assert_eq!(g.value(out), g.value(m));
    }

    #[test]
    fn matmul_zeros_times_ones() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::full(&[3, 4], 1.0));
        let out = g.matmul(a, b).unwrap();
        assert_eq!(g.value(out), Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut oracle = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    oracle[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
                }
            }
        }
        let g = Graph::<f64>::new();
        let av = g.constant(Tensor::new(&[3, 3], a).unwrap());
        let bv = g.constant(Tensor::new(&[3, 3], b).unwrap());
        let out = g.value(g.matmul(av, bv).unwrap());
        for (x, y) in out.data().iter().zip(oracle.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_zero_input_gives_zero_output() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 6, 5]));
        let k = g.constant(Tensor::full(&[2, 1, 5, 5], 0.37));
        let out = g.conv2d(x, k, None, 2, 1).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
        assert_eq!(g.shape_of(out), vec![2, 6, 5]);
    }

    #[test]
    fn conv2d_delta_kernel_is_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[1, 6, 5], data.clone()).unwrap());
        let mut kdata = vec![0.0; 25];
        kdata[12] = 1.0; // center of a 5x5 kernel
        let k = g.constant(Tensor::new(&[1, 1, 5, 5], kdata).unwrap());
        let out = g.conv2d(x, k, None, 2, 1).unwrap();
        for (a, b) in g.value(out).data().iter().zip(data.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn conv2d_non_integral_output_errors() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 6, 5]));
        let k = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        // (6 + 0 - 3) % 2 != 0
        let err = g.conv2d(x, k, None, 0, 2).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn softmax_trivials() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64_slice(&[2], &[0.0, 0.0]).unwrap());
        let y = g.value(g.softmax(x, 0).unwrap());
        assert!((y.data()[0] - 0.5).abs() < 1e-15);
        assert!((y.data()[1] - 0.5).abs() < 1e-15);

        let x = g.constant(Tensor::from_f64_slice(&[2], &[2.0f64.ln(), 0.0]).unwrap());
        let y = g.value(g.softmax(x, 0).unwrap());
        assert!((y.data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0 / 3.0).abs() < 1e-12);

        // stability under large magnitudes
        let x = g.constant(Tensor::from_f64_slice(&[2], &[1000.0, 0.0]).unwrap());
        let y = g.value(g.softmax(x, 0).unwrap());
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1].abs() < 1e-12);
    }

    #[test]
    fn reused_node_accumulates_both_contributions() {
        // f = x + x  =>  df/dx = 2
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64_slice(&[1], &[3.0]).unwrap());
        let y = g.add(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let g = Graph::<f32>::new();
            let x = g.constant(Tensor::from_f64_slice(&[2, 2], &[0.1, -0.7, 0.33, 2.5]).unwrap());
            let y = g.tanh(g.mul_const(x, 1.7));
            let z = g.softmax(y, 1).unwrap();
            g.value(g.sum_all(z)).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn permute_round_trip() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64_slice(&[2, 3, 4], &(0..24).map(|v| v as f64).collect::<Vec<_>>()).unwrap());
        let p = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape_of(p), vec![4, 2, 3]);
        let back = g.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(g.value(back), g.value(x));
    }

    #[test]
    fn concat_slice_round_trip() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64_slice(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::from_f64_slice(&[2, 3], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape_of(c), vec![2, 5]);
        let a2 = g.slice(c, 1, 0, 2).unwrap();
        let b2 = g.slice(c, 1, 2, 3).unwrap();
        assert_eq!(g.value(a2), g.value(a));
        assert_eq!(g.value(b2), g.value(b));
    }
}
