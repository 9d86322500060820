use std::collections::HashMap;

use rand::Rng;

use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operations reachable through [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Add,
    Mul,
    Scale(f64),
}

/// Which dimension of a matrix a broadcast vector runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Broadcast {
    /// vector of length `rows`; element `i` is added to every entry of row `i`
    PerRow,
    /// vector of length `cols`; added to every row
    PerCol,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Lookup {
        table: ParamId,
        rows: Vec<usize>,
        dim: usize,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Gelu(NodeId),
    Sum(NodeId),
    Concat {
        parts: Vec<NodeId>,
        sizes: Vec<usize>,
        inner: usize,
    },
    Gather {
        src: NodeId,
        index: Vec<usize>,
    },
    Reshape(NodeId),
    Transpose {
        src: NodeId,
        rows: usize,
        cols: usize,
    },
    LogSumExp {
        src: NodeId,
        len: usize,
        inner: usize,
    },
    AddBroadcast {
        mat: NodeId,
        vec: NodeId,
        cols: usize,
        along: Broadcast,
    },
    Softmax {
        src: NodeId,
        cols: usize,
    },
    LogSoftmax {
        src: NodeId,
        cols: usize,
    },
    LayerNorm {
        src: NodeId,
        gain: NodeId,
        bias: NodeId,
        cols: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        src: NodeId,
        mask: Vec<f64>,
    },
    SquaredNorm {
        params: Vec<ParamId>,
        scale: f64,
    },
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Param(_) | Op::Lookup { .. } | Op::SquaredNorm { .. } => Vec::new(),
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Gelu(a)
            | Op::Sum(a)
            | Op::Reshape(a) => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Gather { src, .. }
            | Op::Transpose { src, .. }
            | Op::LogSumExp { src, .. }
            | Op::Softmax { src, .. }
            | Op::LogSoftmax { src, .. }
            | Op::Dropout { src, .. } => vec![*src],
            Op::AddBroadcast { mat, vec, .. } => vec![*mat, *vec],
            Op::LayerNorm {
                src, gain, bias, ..
            } => vec![*src, *gain, *bias],
        }
    }
}

/// A tape of recorded operations. Rebuilt for every forward pass; node
/// parents always have smaller ids than their children.
#[derive(Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    needs_grad: Vec<bool>,
    param_nodes: HashMap<ParamId, NodeId>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log Σ exp(x)`; `-inf` entries count as absent.
pub fn log_sum_exp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().expect("non-empty shape")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.values[id.0][0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.shapes[id.0]
    }

    /// Gradient of the last backward root with respect to `id` (zeros when
    /// the node was not reached).
    pub fn grad(&self, id: NodeId) -> Vec<f64> {
        let g = &self.grads[id.0];
        if g.is_empty() {
            vec![0.0; self.values[id.0].len()]
        } else {
            g.clone()
        }
    }

    /// Copies a node out as a standalone tensor.
    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(self.shapes[id.0].clone(), self.values[id.0].clone())
            .expect("graph nodes have valid shapes")
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let needs = match &op {
            Op::Leaf => false,
            Op::Param(_) | Op::Lookup { .. } | Op::SquaredNorm { .. } => true,
            other => other.parents().iter().any(|p| self.needs_grad[p.0]),
        };
        self.ops.push(op);
        self.shapes.push(shape);
        self.values.push(value);
        self.grads.push(Vec::new());
        self.needs_grad.push(needs);
        NodeId(self.ops.len() - 1)
    }

    /// Records an input tensor. Its gradient is tracked when the tensor has
    /// `requires_grad` set.
    pub fn input(&mut self, tensor: Tensor) -> NodeId {
        let requires = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        let values = tensor.values().to_vec();
        let id = self.push(Op::Leaf, shape, values);
        self.needs_grad[id.0] = requires;
        id
    }

    /// Records a non-differentiable constant.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<NodeId> {
        let t = Tensor::new(shape, values)?;
        Ok(self.input(t))
    }

    pub fn zeros(&mut self, len: usize) -> NodeId {
        self.push(Op::Leaf, vec![len], vec![0.0; len])
    }

    /// Brings a stored parameter onto the tape. Repeated calls for the same
    /// parameter return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let t = store.get(id);
        let node = self.push(Op::Param(id), t.shape().to_vec(), t.values().to_vec());
        self.param_nodes.insert(id, node);
        node
    }

    /// Row `row` of a `V × d` parameter table, without copying the table.
    pub fn lookup(&mut self, store: &ParamStore, table: ParamId, row: usize) -> Result<NodeId> {
        let id = self.lookup_rows(store, table, &[row])?;
        let d = self.shapes[id.0][1];
        self.reshape(id, vec![d])
    }

    /// Rows `ids` of a `V × d` parameter table as an `n × d` matrix.
    pub fn lookup_rows(&mut self, store: &ParamStore, table: ParamId, ids: &[usize]) -> Result<NodeId> {
        let t = store.get(table);
        let (v, d) = as_matrix(t.shape()).ok_or_else(|| Error::shape("lookup", t.shape(), &[]))?;
        if ids.is_empty() {
            return Err(Error::Usage("lookup of zero rows".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &r in ids {
            if r >= v {
                return Err(Error::Index {
                    what: "embedding table",
                    index: r,
                    size: v,
                });
            }
            out.extend_from_slice(&t.values()[r * d..(r + 1) * d]);
        }
        Ok(self.push(
            Op::Lookup {
                table,
                rows: ids.to_vec(),
                dim: d,
            },
            vec![ids.len(), d],
            out,
        ))
    }

    /// Matrix product. Rank-1 operands are treated as a row vector on the
    /// left or a column vector on the right, and that axis is dropped from
    /// the result.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shapes[a.0].clone();
        let sb = self.shapes[b.0].clone();
        let (m, k, a_vec) = match sa.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(Error::shape("matmul", &sa, &sb)),
        };
        let (k2, n, b_vec) = match sb.as_slice() {
            [k] => (*k, 1, true),
            [k, n] => (*k, *n, false),
            _ => return Err(Error::shape("matmul", &sa, &sb)),
        };
        if k != k2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let av = &self.values[a.0];
        let bv = &self.values[b.0];
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for i in 0..m {
                let row = &av[i * k..(i + 1) * k];
                out[i] = row.iter().zip(bv.iter()).map(|(x, y)| x * y).sum();
            }
        } else {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let x = av[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    for (o, y) in orow.iter_mut().zip(brow) {
                        *o += x * y;
                    }
                }
            }
        }
        let shape = match (a_vec, b_vec) {
            (false, false) => vec![m, n],
            (true, false) => vec![n],
            (false, true) => vec![m],
            (true, true) => vec![1],
        };
        Ok(self.push(Op::MatMul { a, b, m, k, n }, shape, out))
    }

    fn binary(&mut self, op: &'static str, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shapes[a.0] != self.shapes[b.0] {
            return Err(Error::shape(op, &self.shapes[a.0], &self.shapes[b.0]));
        }
        Ok(self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        let shape = self.shapes[a.0].clone();
        Ok(self.push(Op::Add(a, b), shape, v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        let shape = self.shapes[a.0].clone();
        Ok(self.push(Op::Sub(a, b), shape, v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        let shape = self.shapes[a.0].clone();
        Ok(self.push(Op::Mul(a, b), shape, v))
    }

    /// Sums any number of equally shaped nodes.
    pub fn add_all(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::Usage("add_all of no nodes".into()))?;
        rest.iter().try_fold(first, |acc, &p| self.add(acc, p))
    }

    fn unary(&mut self, op: Op, a: NodeId, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.values[a.0].iter().map(|&x| f(x)).collect();
        let shape = self.shapes[a.0].clone();
        self.push(op, shape, v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::Scale(a, c), a, |x| c * x)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid(a), a, sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Tanh(a), a, f64::tanh)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Exp(a), a, f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.values[a.0].iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(Op::Log(a), a, f64::ln))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Gelu(a), a, |x| {
            0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
        })
    }

    /// Dispatches one of the elementwise operations by kind.
    pub fn elementwise(&mut self, op: Elementwise, args: &[NodeId]) -> Result<NodeId> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Usage(format!("{op:?} takes {arity} argument(s), got {}", args.len())));
        }
        match op {
            Elementwise::Sigmoid => Ok(self.sigmoid(args[0])),
            Elementwise::Tanh => Ok(self.tanh(args[0])),
            Elementwise::Exp => Ok(self.exp(args[0])),
            Elementwise::Log => self.log(args[0]),
            Elementwise::Scale(c) => Ok(self.scale(args[0], c)),
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
        }
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.values[a.0].iter().sum();
        self.push(Op::Sum(a), vec![1], vec![s])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of no tensors".into()))?;
        let base = self.shapes[first.0].clone();
        if axis >= base.len() {
            return Err(Error::Usage(format!("concat axis {axis} for rank {}", base.len())));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            let s = &self.shapes[p.0];
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            sizes.push(s[axis]);
        }
        if parts.len() == 1 {
            return Ok(*first);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &sz) in parts.iter().zip(&sizes) {
                let block = sz * inner;
                out.extend_from_slice(&self.values[p.0][o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                sizes,
                inner,
            },
            shape,
            out,
        ))
    }

    /// Stacks equally shaped vectors into a `len × d` matrix.
    pub fn stack(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let d = self.shapes[rows.first().ok_or_else(|| Error::Usage("stack of nothing".into()))?.0].clone();
        if d.len() != 1 {
            return Err(Error::shape("stack", &d, &[]));
        }
        let flat = self.concat(rows, 0)?;
        self.reshape(flat, vec![rows.len(), d[0]])
    }

    /// Picks flat elements of `src` by index into a tensor of `shape`.
    pub fn gather(&mut self, src: NodeId, index: Vec<usize>, shape: Vec<usize>) -> Result<NodeId> {
        let n = self.values[src.0].len();
        if shape.iter().product::<usize>() != index.len() || index.is_empty() {
            return Err(Error::shape("gather", &shape, &[index.len()]));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Index {
                what: "gather source",
                index: bad,
                size: n,
            });
        }
        let v = index.iter().map(|&i| self.values[src.0][i]).collect();
        Ok(self.push(Op::Gather { src, index }, shape, v))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, mat: NodeId, i: usize) -> Result<NodeId> {
        let (r, c) = as_matrix(&self.shapes[mat.0]).ok_or_else(|| Error::shape("row", &self.shapes[mat.0], &[]))?;
        if i >= r {
            return Err(Error::Index {
                what: "matrix rows",
                index: i,
                size: r,
            });
        }
        self.gather(mat, (i * c..(i + 1) * c).collect(), vec![c])
    }

    /// Single element as a `[1]` scalar.
    pub fn element(&mut self, src: NodeId, flat_index: usize) -> Result<NodeId> {
        self.gather(src, vec![flat_index], vec![1])
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.values[a.0].len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shapes[a.0], &shape));
        }
        let v = self.values[a.0].clone();
        Ok(self.push(Op::Reshape(a), shape, v))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = as_matrix(&self.shapes[a.0]).ok_or_else(|| Error::shape("transpose", &self.shapes[a.0], &[]))?;
        let src = &self.values[a.0];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Op::Transpose { src: a, rows: r, cols: c }, vec![c, r], out))
    }

    /// Stable `log Σ exp` reduction along `axis`. Reducing a vector yields a
    /// `[1]` scalar.
    pub fn log_sum_exp(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shapes[x.0].clone();
        if axis >= shape.len() {
            return Err(Error::Usage(format!("log_sum_exp axis {axis} for rank {}", shape.len())));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = &self.values[x.0];
        let mut out = vec![0.0; outer * inner];
        let mut buf = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                for (l, b) in buf.iter_mut().enumerate() {
                    *b = src[(o * len + l) * inner + i];
                }
                out[o * inner + i] = log_sum_exp_slice(&buf);
            }
        }
        let mut out_shape: Vec<usize> = shape[..axis].iter().chain(&shape[axis + 1..]).copied().collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.push(Op::LogSumExp { src: x, len, inner }, out_shape, out))
    }

    /// Adds a vector to a matrix, broadcast per row or per column.
    pub fn add_broadcast(&mut self, mat: NodeId, vec: NodeId, along: Broadcast) -> Result<NodeId> {
        let ms = self.shapes[mat.0].clone();
        let vs = self.shapes[vec.0].clone();
        let (r, c) = as_matrix(&ms).ok_or_else(|| Error::shape("add_broadcast", &ms, &vs))?;
        let want = match along {
            Broadcast::PerRow => r,
            Broadcast::PerCol => c,
        };
        if vs.len() != 1 || vs[0] != want {
            return Err(Error::shape("add_broadcast", &ms, &vs));
        }
        let m = &self.values[mat.0];
        let v = &self.values[vec.0];
        let out = (0..r * c)
            .map(|idx| {
                let (i, j) = (idx / c, idx % c);
                m[idx]
                    + match along {
                        Broadcast::PerRow => v[i],
                        Broadcast::PerCol => v[j],
                    }
            })
            .collect();
        Ok(self.push(Op::AddBroadcast { mat, vec, cols: c, along }, ms, out))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let cols = last_dim(&self.shapes[x.0]);
        let out = self.values[x.0]
            .chunks(cols)
            .flat_map(|row| {
                let lse = log_sum_exp_slice(row);
                row.iter().map(move |v| (v - lse).exp())
            })
            .collect();
        let shape = self.shapes[x.0].clone();
        self.push(Op::Softmax { src: x, cols }, shape, out)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let cols = last_dim(&self.shapes[x.0]);
        let out = self.values[x.0]
            .chunks(cols)
            .flat_map(|row| {
                let lse = log_sum_exp_slice(row);
                row.iter().map(move |v| v - lse)
            })
            .collect();
        let shape = self.shapes[x.0].clone();
        self.push(Op::LogSoftmax { src: x, cols }, shape, out)
    }

    /// Layer normalisation over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let shape = self.shapes[x.0].clone();
        let cols = last_dim(&shape);
        for p in [gain, bias] {
            if self.shapes[p.0] != [cols] {
                return Err(Error::shape("layer_norm", &shape, &self.shapes[p.0]));
            }
        }
        let src = &self.values[x.0];
        let g = &self.values[gain.0];
        let b = &self.values[bias.0];
        let rows = src.len() / cols;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..cols {
                let xh = (row[j] - mean) * is;
                xhat[r * cols + j] = xh;
                out[r * cols + j] = g[j] * xh + b[j];
            }
        }
        Ok(self.push(
            Op::LayerNorm {
                src: x,
                gain,
                bias,
                cols,
                xhat,
                inv_std,
            },
            shape,
            out,
        ))
    }

    /// Inverted dropout. Identity (same node) at inference or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, p: f64, training: bool, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.values[x.0].len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self.values[x.0].iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shapes[x.0].clone();
        Ok(self.push(Op::Dropout { src: x, mask }, shape, out))
    }

    /// `scale · Σ θ²` over the given parameters, read directly from the store.
    pub fn squared_norm(&mut self, store: &ParamStore, params: &[ParamId], scale: f64) -> NodeId {
        let s: f64 = params
            .iter()
            .flat_map(|&p| store.get(p).values().iter())
            .map(|v| v * v)
            .sum();
        self.push(
            Op::SquaredNorm {
                params: params.to_vec(),
                scale,
            },
            vec![1],
            vec![scale * s],
        )
    }

    /// Reverse sweep from a scalar root. Gradients of graph nodes can be read
    /// with [`Graph::grad`]; parameter gradients are added (`+=`) into `store`.
    pub fn backward(&mut self, root: NodeId, store: &mut ParamStore) -> Result<()> {
        if self.values[root.0].len() != 1 {
            return Err(Error::Usage(format!(
                "backward root must be scalar, got shape {:?}",
                self.shapes[root.0]
            )));
        }
        for g in &mut self.grads {
            g.clear();
        }
        self.grads[root.0] = vec![1.0];
        for i in (0..=root.0).rev() {
            if !self.needs_grad[i] || self.grads[i].is_empty() {
                continue;
            }
            let dy = std::mem::take(&mut self.grads[i]);
            self.propagate(i, &dy, store);
            self.grads[i] = dy;
        }
        Ok(())
    }

    fn acc(&mut self, node: NodeId) -> Option<&mut [f64]> {
        if !self.needs_grad[node.0] {
            return None;
        }
        let n = self.values[node.0].len();
        let g = &mut self.grads[node.0];
        if g.is_empty() {
            g.resize(n, 0.0);
        }
        Some(g.as_mut_slice())
    }

    fn acc_with(&mut self, node: NodeId, f: impl Fn(usize) -> f64) {
        if let Some(g) = self.acc(node) {
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += f(j);
            }
        }
    }

    fn propagate(&mut self, i: usize, dy: &[f64], store: &mut ParamStore) {
        let op = std::mem::replace(&mut self.ops[i], Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Param(p) => {
                for (g, d) in store.get_mut(*p).grad_mut().iter_mut().zip(dy) {
                    *g += d;
                }
            }
            Op::Lookup { table, rows, dim } => {
                let grad = store.get_mut(*table).grad_mut();
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..*dim {
                        grad[r * dim + j] += dy[k * dim + j];
                    }
                }
            }
            Op::SquaredNorm { params, scale } => {
                for &p in params {
                    let (vals, grad) = store.get_mut(p).values_and_grad_mut();
                    for (g, v) in grad.iter_mut().zip(vals.iter()) {
                        *g += 2.0 * scale * v * dy[0];
                    }
                }
            }
            &Op::MatMul { a, b, m, k, n } => {
                if self.needs_grad[a.0] {
                    // dA = dC · Bᵀ
                    let bv = std::mem::take(&mut self.values[b.0]);
                    if let Some(ga) = self.acc(a) {
                        for r in 0..m {
                            let drow = &dy[r * n..(r + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                ga[r * k + p] += drow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    self.values[b.0] = bv;
                }
                if self.needs_grad[b.0] {
                    // dB = Aᵀ · dC
                    let av = std::mem::take(&mut self.values[a.0]);
                    if let Some(gb) = self.acc(b) {
                        for r in 0..m {
                            let drow = &dy[r * n..(r + 1) * n];
                            for p in 0..k {
                                let x = av[r * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                let grow = &mut gb[p * n..(p + 1) * n];
                                for (g, d) in grow.iter_mut().zip(drow) {
                                    *g += x * d;
                                }
                            }
                        }
                    }
                    self.values[a.0] = av;
                }
            }
            &Op::Add(a, b) => {
                self.acc_with(a, |j| dy[j]);
                self.acc_with(b, |j| dy[j]);
            }
            &Op::Sub(a, b) => {
                self.acc_with(a, |j| dy[j]);
                self.acc_with(b, |j| -dy[j]);
            }
            &Op::Mul(a, b) => {
                let av = self.values[a.0].clone();
                let bv = self.values[b.0].clone();
                self.acc_with(a, |j| dy[j] * bv[j]);
                self.acc_with(b, |j| dy[j] * av[j]);
            }
            &Op::Scale(a, c) => self.acc_with(a, |j| c * dy[j]),
            &Op::Sigmoid(a) => {
                let y = std::mem::take(&mut self.values[i]);
                self.acc_with(a, |j| dy[j] * y[j] * (1.0 - y[j]));
                self.values[i] = y;
            }
            &Op::Tanh(a) => {
                let y = std::mem::take(&mut self.values[i]);
                self.acc_with(a, |j| dy[j] * (1.0 - y[j] * y[j]));
                self.values[i] = y;
            }
            &Op::Exp(a) => {
                let y = std::mem::take(&mut self.values[i]);
                self.acc_with(a, |j| dy[j] * y[j]);
                self.values[i] = y;
            }
            &Op::Log(a) => {
                let x = self.values[a.0].clone();
                self.acc_with(a, |j| dy[j] / x[j]);
            }
            &Op::Gelu(a) => {
                let x = self.values[a.0].clone();
                self.acc_with(a, |j| {
                    let v = x[j];
                    let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                    dy[j] * (0.5 * (1.0 + t) + 0.5 * v * dt)
                });
            }
            &Op::Sum(a) => self.acc_with(a, |_| dy[0]),
            Op::Concat { parts, sizes, inner } => {
                let total: usize = sizes.iter().sum();
                let mut offset = 0;
                for (p, &sz) in parts.iter().zip(sizes) {
                    let block = sz * inner;
                    let start = offset * inner;
                    self.acc_with(*p, |j| {
                        let (o, r) = (j / block, j % block);
                        dy[o * total * inner + start + r]
                    });
                    offset += sz;
                }
            }
            Op::Gather { src, index } => {
                if let Some(g) = self.acc(*src) {
                    for (k, &ix) in index.iter().enumerate() {
                        g[ix] += dy[k];
                    }
                }
            }
            &Op::Reshape(a) => self.acc_with(a, |j| dy[j]),
            &Op::Transpose { src, rows, cols } => {
                // out[j][i] = src[i][j]
                self.acc_with(src, |idx| {
                    let (r, c) = (idx / cols, idx % cols);
                    dy[c * rows + r]
                });
            }
            &Op::LogSumExp { src, len, inner } => {
                let x = self.values[src.0].clone();
                let y = std::mem::take(&mut self.values[i]);
                self.acc_with(src, |idx| {
                    let o = idx / (len * inner);
                    let inn = idx % inner;
                    let out = y[o * inner + inn];
                    if out == f64::NEG_INFINITY || x[idx] == f64::NEG_INFINITY {
                        0.0
                    } else {
                        dy[o * inner + inn] * (x[idx] - out).exp()
                    }
                });
                self.values[i] = y;
            }
            &Op::AddBroadcast { mat, vec, cols, along } => {
                self.acc_with(mat, |j| dy[j]);
                if let Some(g) = self.acc(vec) {
                    for (idx, d) in dy.iter().enumerate() {
                        let k = match along {
                            Broadcast::PerRow => idx / cols,
                            Broadcast::PerCol => idx % cols,
                        };
                        g[k] += d;
                    }
                }
            }
            &Op::Softmax { src, cols } => {
                let y = std::mem::take(&mut self.values[i]);
                let dots: Vec<f64> = y
                    .chunks(cols)
                    .zip(dy.chunks(cols))
                    .map(|(yr, dr)| yr.iter().zip(dr).map(|(a, b)| a * b).sum())
                    .collect();
                self.acc_with(src, |j| y[j] * (dy[j] - dots[j / cols]));
                self.values[i] = y;
            }
            &Op::LogSoftmax { src, cols } => {
                let y = std::mem::take(&mut self.values[i]);
                let sums: Vec<f64> = dy.chunks(cols).map(|r| r.iter().sum()).collect();
                self.acc_with(src, |j| dy[j] - y[j].exp() * sums[j / cols]);
                self.values[i] = y;
            }
            Op::LayerNorm {
                src,
                gain,
                bias,
                cols,
                xhat,
                inv_std,
            } => {
                let cols = *cols;
                let n = cols as f64;
                let g = self.values[gain.0].clone();
                if self.needs_grad[src.0] {
                    let mut dx = vec![0.0; xhat.len()];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let range = r * cols..(r + 1) * cols;
                        let dxh: Vec<f64> = dy[range.clone()].iter().zip(&g).map(|(d, gj)| d * gj).collect();
                        let sum_d: f64 = dxh.iter().sum();
                        let sum_dx: f64 = dxh.iter().zip(&xhat[range.clone()]).map(|(a, b)| a * b).sum();
                        for (j, out) in dx[range.clone()].iter_mut().enumerate() {
                            *out = is / n * (n * dxh[j] - sum_d - xhat[r * cols + j] * sum_dx);
                        }
                    }
                    self.acc_with(*src, |j| dx[j]);
                }
                if let Some(gg) = self.acc(*gain) {
                    for (idx, d) in dy.iter().enumerate() {
                        gg[idx % cols] += d * xhat[idx];
                    }
                }
                if let Some(gb) = self.acc(*bias) {
                    for (idx, d) in dy.iter().enumerate() {
                        gb[idx % cols] += d;
                    }
                }
            }
            Op::Dropout { src, mask } => self.acc_with(*src, |j| dy[j] * mask[j]),
        }
        self.ops[i] = op;
    }
}
