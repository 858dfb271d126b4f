use std::borrow::Cow;
use std::collections::HashMap;

use super::tensor::check_shape;
use super::{ParamId, ParamStore, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
        broadcast: bool,
    },
    Unary {
        kind: UnaryKind,
        a: usize,
    },
    Scale {
        a: usize,
        factor: f64,
    },
    SoftmaxMasked {
        a: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Slice {
        a: usize,
        axis: usize,
        start: usize,
    },
    Reshape {
        a: usize,
    },
    Transpose {
        a: usize,
    },
    Gather {
        table: usize,
        ids: Vec<usize>,
        padding: Option<usize>,
    },
    Sum {
        a: usize,
    },
    SumLastAxis {
        a: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Select {
        mask: Vec<bool>,
        a: usize,
        b: usize,
    },
    Bce {
        p: usize,
        targets: Vec<f64>,
        mask: Vec<bool>,
        denom: f64,
    },
}

struct Node<'p> {
    value: Cow<'p, [f64]>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Lower clamp applied to probabilities inside the cross-entropy op.
pub const PROB_EPS: f64 = 1e-7;

/// Append-only record of one forward pass.
///
/// Parameter leaves borrow their data from a [`ParamStore`] for the tape's
/// lifetime; every other node owns its values.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    param_vars: HashMap<ParamId, Var>,
}

fn split_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().expect("shapes are never empty")
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, [f64]>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Records a leaf that owns its data. Gradients are tracked iff the tensor
    /// was marked with [`Tensor::with_grad`].
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.push(Cow::Owned(tensor.into_data()), shape, Op::Leaf, rg)
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<Var, TensorError> {
        let t = Tensor::new(data, shape)?;
        Ok(self.leaf(t))
    }

    /// Records (once per tape) a parameter leaf borrowing from `store`.
    ///
    /// A tape must only ever see a single store.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let t = store.get(id);
        let v = self.push(
            Cow::Borrowed(t.data()),
            t.shape().to_vec(),
            Op::Leaf,
            true,
        );
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.value(v).to_vec(), self.shape(v)).expect("node shapes are valid")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &w) in row.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Cow::Owned(out), vec![m, n], Op::MatMul(a.0, b.0), rg))
    }

    /// Elementwise dispatch used by [`Tape::add`], [`Tape::sigmoid`] and friends.
    pub fn elementwise(&mut self, kind: ElementwiseKind, args: &[Var]) -> Result<Var, TensorError> {
        match (kind, args) {
            (ElementwiseKind::Binary(k), &[a, b]) => self.binary(k, a, b),
            (ElementwiseKind::Unary(k), &[a]) => Ok(self.unary(k, a)),
            _ => Err(TensorError::Shape {
                op: "elementwise arity",
                left: vec![args.len()],
                right: vec![],
            }),
        }
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b));
        let broadcast = if sa == sb {
            false
        } else if sb.len() == 1 && sb[0] == last_dim(&sa) {
            true
        } else {
            return Err(TensorError::Shape {
                op: match kind {
                    BinaryKind::Add => "add",
                    BinaryKind::Sub => "sub",
                    BinaryKind::Mul => "mul",
                },
                left: sa,
                right: sb.to_vec(),
            });
        };
        let av = self.value(a);
        let bv = self.value(b);
        let n = bv.len();
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
        };
        let out: Vec<f64> = if broadcast {
            av.iter().enumerate().map(|(i, &x)| f(x, bv[i % n])).collect()
        } else {
            av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect()
        };
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(
            Cow::Owned(out),
            sa,
            Op::Binary {
                kind,
                a: a.0,
                b: b.0,
                broadcast,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Mul, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let f = match kind {
            UnaryKind::Sigmoid => sigmoid,
            UnaryKind::Tanh => f64::tanh,
            UnaryKind::Relu => |x: f64| x.max(0.0),
        };
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a.0);
        self.push(Cow::Owned(out), shape, Op::Unary { kind, a: a.0 }, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a.0);
        self.push(Cow::Owned(out), shape, Op::Scale { a: a.0, factor }, rg)
    }

    /// Softmax over the last axis; `keep[i] == false` forces probability 0.
    ///
    /// Each row must keep at least one position.
    pub fn softmax_masked(&mut self, logits: Var, keep: &[bool]) -> Result<Var, TensorError> {
        let shape = self.shape(logits).to_vec();
        let x = self.value(logits);
        if keep.len() != x.len() {
            return Err(TensorError::Shape {
                op: "softmax_masked",
                left: shape,
                right: vec![keep.len()],
            });
        }
        let n = last_dim(&shape);
        let mut out = vec![0.0; x.len()];
        for (row, ((xr, kr), or)) in x
            .chunks(n)
            .zip(keep.chunks(n))
            .zip(out.chunks_mut(n))
            .enumerate()
        {
            let max = xr
                .iter()
                .zip(kr)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if !kr.iter().any(|&k| k) {
                return Err(TensorError::FullyMasked { row });
            }
            let mut total = 0.0;
            for ((o, &v), &k) in or.iter_mut().zip(xr).zip(kr) {
                if k {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            or.iter_mut().for_each(|o| *o /= total);
        }
        let rg = self.rg(logits.0);
        Ok(self.push(Cow::Owned(out), shape, Op::SoftmaxMasked { a: logits.0 }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(TensorError::Axis {
                axis,
                rank: first.len(),
            });
        }
        let mut axis_len = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    left: first,
                    right: s.to_vec(),
                });
            }
            axis_len += s[axis];
        }
        let (outer, _, inner) = split_dims(&first, axis);
        let mut out = Vec::with_capacity(outer * axis_len * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = axis_len;
        let rg = parts.iter().any(|p| self.rg(p.0));
        Ok(self.push(
            Cow::Owned(out),
            shape,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            rg,
        ))
    }

    /// Takes `len` consecutive entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            let mut want = shape.clone();
            want[axis] = start + len;
            return Err(TensorError::Shape {
                op: "slice",
                left: shape,
                right: want,
            });
        }
        let (outer, dim, inner) = split_dims(&shape, axis);
        let src = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(a.0);
        Ok(self.push(
            Cow::Owned(out),
            out_shape,
            Op::Slice {
                a: a.0,
                axis,
                start,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let numel = check_shape(shape)?;
        if numel != self.value(a).len() {
            return Err(TensorError::Reshape {
                from: self.shape(a).to_vec(),
                to: shape.to_vec(),
            });
        }
        let value = self.value(a).to_vec();
        let rg = self.rg(a.0);
        Ok(self.push(Cow::Owned(value), shape.to_vec(), Op::Reshape { a: a.0 }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(TensorError::Axis {
                axis: 1,
                rank: s.len(),
            });
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a.0);
        Ok(self.push(Cow::Owned(out), vec![n, m], Op::Transpose { a: a.0 }, rg))
    }

    /// Row lookup into a 2-D `table`; output shape is `prefix ++ [width]`.
    ///
    /// Gradients are scattered back into the looked-up rows, except the
    /// `padding` row, which never receives gradient.
    pub fn gather_rows(
        &mut self,
        table: Var,
        ids: &[usize],
        prefix: &[usize],
        padding: Option<usize>,
    ) -> Result<Var, TensorError> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || prefix.iter().product::<usize>() != ids.len() {
            return Err(TensorError::Shape {
                op: "gather_rows",
                left: ts,
                right: prefix.to_vec(),
            });
        }
        let (rows, width) = (ts[0], ts[1]);
        if let Some(&id) = ids.iter().find(|&&id| id >= rows) {
            return Err(TensorError::Index {
                id,
                rows,
                table: String::from("<anonymous>"),
            });
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            out.extend_from_slice(&src[id * width..(id + 1) * width]);
        }
        let mut shape = prefix.to_vec();
        shape.push(width);
        let rg = self.rg(table.0);
        Ok(self.push(
            Cow::Owned(out),
            shape,
            Op::Gather {
                table: table.0,
                ids: ids.to_vec(),
                padding,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().sum();
        let rg = self.rg(a.0);
        self.push(Cow::Owned(vec![total]), vec![1], Op::Sum { a: a.0 }, rg)
    }

    /// Sums over the last axis, dropping it (rank-1 inputs give shape `[1]`).
    pub fn sum_last_axis(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let n = last_dim(&shape);
        let out: Vec<f64> = self.value(a).chunks(n).map(|r| r.iter().sum()).collect();
        let out_shape = if shape.len() == 1 {
            vec![1]
        } else {
            shape[..shape.len() - 1].to_vec()
        };
        let rg = self.rg(a.0);
        self.push(Cow::Owned(out), out_shape, Op::SumLastAxis { a: a.0 }, rg)
    }

    /// Normalizes over the last axis, then applies per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let n = last_dim(&shape);
        for v in [gain, bias] {
            if self.shape(v) != [n] {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    left: shape,
                    right: self.shape(v).to_vec(),
                });
            }
        }
        let xv = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.len() / n);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let rg = self.rg(x.0) || self.rg(gain.0) || self.rg(bias.0);
        Ok(self.push(
            Cow::Owned(out),
            shape,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// `mask[i] ? a[i] : b[i]`.
    pub fn select(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if shape != self.shape(b) || mask.len() != self.value(a).len() {
            return Err(TensorError::Shape {
                op: "select",
                left: shape,
                right: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = mask
            .iter()
            .zip(self.value(a).iter().zip(self.value(b).iter()))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(
            Cow::Owned(out),
            shape,
            Op::Select {
                mask: mask.to_vec(),
                a: a.0,
                b: b.0,
            },
            rg,
        ))
    }

    /// Sum over masked cells of binary cross-entropy, divided by `denom`.
    ///
    /// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`; clamped cells
    /// pass no gradient.
    pub fn bce_masked(&mut self, probs: Var, targets: &[f64], mask: &[bool], denom: f64) -> Result<Var, TensorError> {
        let p = self.value(probs);
        if targets.len() != p.len() || mask.len() != p.len() {
            return Err(TensorError::Shape {
                op: "bce_masked",
                left: self.shape(probs).to_vec(),
                right: vec![targets.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(TensorError::EmptyMask);
        }
        let mut total = 0.0;
        for ((&pi, &y), &m) in p.iter().zip(targets).zip(mask) {
            if m {
                let pc = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
                total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            }
        }
        let rg = self.rg(probs.0);
        Ok(self.push(
            Cow::Owned(vec![total / denom]),
            vec![1],
            Op::Bce {
                p: probs.0,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                denom,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients of nodes used several times accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if self.shape(loss) != [1] {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            self.propagate(node, g, lo);
        }
        let params = self
            .param_vars
            .iter()
            .map(|(&id, &v)| (id, v))
            .collect::<Vec<_>>();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node<'p>, g: &[f64], lo: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |idx: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[idx].requires_grad {
                return;
            }
            let slot = lo[idx].get_or_insert_with(|| vec![0.0; nodes[idx].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                let n = nodes[*b].shape[1];
                acc(*a, &mut |da| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += x * gv;
                            }
                        }
                    }
                });
            }
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                let n = bv.len();
                let bi = |i: usize| if *broadcast { i % n } else { i };
                match kind {
                    BinaryKind::Add | BinaryKind::Sub => {
                        let sign = if *kind == BinaryKind::Add { 1.0 } else { -1.0 };
                        acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, gv)| *d += gv));
                        acc(*b, &mut |db| {
                            for (i, gv) in g.iter().enumerate() {
                                db[bi(i)] += sign * gv;
                            }
                        });
                    }
                    BinaryKind::Mul => {
                        acc(*a, &mut |da| {
                            for (i, gv) in g.iter().enumerate() {
                                da[i] += gv * bv[bi(i)];
                            }
                        });
                        acc(*b, &mut |db| {
                            for (i, gv) in g.iter().enumerate() {
                                db[bi(i)] += gv * av[i];
                            }
                        });
                    }
                }
            }
            Op::Unary { kind, a } => {
                let y = &node.value;
                let x = &nodes[*a].value;
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        let local = match kind {
                            UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                            UnaryKind::Tanh => 1.0 - y[i] * y[i],
                            UnaryKind::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        da[i] += g[i] * local;
                    }
                });
            }
            Op::Scale { a, factor } => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * factor));
            }
            Op::SoftmaxMasked { a } => {
                let y = &node.value;
                let n = last_dim(&node.shape);
                acc(*a, &mut |da| {
                    for ((dr, yr), gr) in da.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_dims(&node.shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p].shape[*axis];
                    acc(p, &mut |dp| {
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset * inner..][..len * inner];
                            dp[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += s);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let (outer, dim, inner) = split_dims(&nodes[*a].shape, *axis);
                let len = node.shape[*axis];
                acc(*a, &mut |da| {
                    for o in 0..outer {
                        let base = o * dim * inner + start * inner;
                        da[base..base + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                            .for_each(|(d, s)| *d += s);
                    }
                });
            }
            Op::Reshape { a } => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, gv)| *d += gv));
            }
            Op::Transpose { a } => {
                let (m, n) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                acc(*a, &mut |da| {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Gather { table, ids, padding } => {
                let width = nodes[*table].shape[1];
                acc(*table, &mut |dt| {
                    for (k, &id) in ids.iter().enumerate() {
                        if Some(id) == *padding {
                            continue;
                        }
                        dt[id * width..(id + 1) * width]
                            .iter_mut()
                            .zip(&g[k * width..(k + 1) * width])
                            .for_each(|(d, s)| *d += s);
                    }
                });
            }
            Op::Sum { a } => {
                acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::SumLastAxis { a } => {
                let n = last_dim(&nodes[*a].shape);
                acc(*a, &mut |da| {
                    for (r, dr) in da.chunks_mut(n).enumerate() {
                        dr.iter_mut().for_each(|d| *d += g[r]);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = last_dim(&node.shape);
                let gv = &nodes[*gain].value;
                acc(*gain, &mut |dg| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for gr in g.chunks(n) {
                        for j in 0..n {
                            db[j] += gr[j];
                        }
                    }
                });
                acc(*x, &mut |dx| {
                    let nf = n as f64;
                    for (r, ((dr, gr), hr)) in dx
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(xhat.chunks(n))
                        .enumerate()
                    {
                        let dh: Vec<f64> = gr.iter().zip(gv.iter()).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dr[j] += inv_std[r] / nf * (nf * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                });
            }
            Op::Select { mask, a, b } => {
                acc(*a, &mut |da| {
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            da[i] += g[i];
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for (i, &m) in mask.iter().enumerate() {
                        if !m {
                            db[i] += g[i];
                        }
                    }
                });
            }
            Op::Bce {
                p,
                targets,
                mask,
                denom,
            } => {
                let pv = &nodes[*p].value;
                acc(*p, &mut |dp| {
                    for i in 0..dp.len() {
                        let pi = pv[i];
                        if !mask[i] || pi < PROB_EPS || pi > 1.0 - PROB_EPS {
                            continue;
                        }
                        let y = targets[i];
                        dp[i] += g[0] * (-y / pi + (1.0 - y) / (1.0 - pi)) / denom;
                    }
                });
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Binary(BinaryKind),
    Unary(UnaryKind),
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not reach the loss
    /// or does not require gradients.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter recorded on the tape, sorted by id.
    pub fn params(&self) -> Vec<(ParamId, &[f64])> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Adds the parameter gradients into the tensors of `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<(), TensorError> {
        for (id, g) in self.params() {
            store.get_mut(id).accumulate_grad(g)?;
        }
        Ok(())
    }
}
