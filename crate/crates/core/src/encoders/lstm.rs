use rand::Rng;

use crate::autodiff::{Broadcast, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Initial value of the hidden-side forget bias.
pub const FORGET_BIAS: f64 = 1.0;

/// One LSTM direction. Gate order throughout is input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_ii: ParamId,
    pub w_hi: ParamId,
    pub w_if: ParamId,
    pub w_hf: ParamId,
    pub w_ig: ParamId,
    pub w_hg: ParamId,
    pub w_io: ParamId,
    pub w_ho: ParamId,
    pub b_ii: ParamId,
    pub b_hi: ParamId,
    pub b_if: ParamId,
    pub b_hf: ParamId,
    pub b_ig: ParamId,
    pub b_hg: ParamId,
    pub b_io: ParamId,
    pub b_ho: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let (i, h) = (input_dim, hidden_dim);
        let mut w = |name: &str, cols: usize| store.add(format!("{prefix}.{name}"), Tensor::xavier(h, cols, rng));
        let (w_ii, w_hi, w_if, w_hf) = (w("w_ii", i), w("w_hi", h), w("w_if", i), w("w_hf", h));
        let (w_ig, w_hg, w_io, w_ho) = (w("w_ig", i), w("w_hg", h), w("w_io", i), w("w_ho", h));
        let mut b = |name: &str, v: f64| store.add(format!("{prefix}.{name}"), Tensor::vector(vec![v; h]).expect("hidden > 0"));
        Self {
            w_ii,
            w_hi,
            w_if,
            w_hf,
            w_ig,
            w_hg,
            w_io,
            w_ho,
            b_ii: b("b_ii", 0.0),
            b_hi: b("b_hi", 0.0),
            b_if: b("b_if", 0.0),
            b_hf: b("b_hf", FORGET_BIAS),
            b_ig: b("b_ig", 0.0),
            b_hg: b("b_hg", 0.0),
            b_io: b("b_io", 0.0),
            b_ho: b("b_ho", 0.0),
            input_dim,
            hidden_dim,
        }
    }

    pub fn params(&self) -> [ParamId; 16] {
        [
            self.w_ii, self.w_hi, self.w_if, self.w_hf, self.w_ig, self.w_hg, self.w_io, self.w_ho, self.b_ii, self.b_hi,
            self.b_if, self.b_hf, self.b_ig, self.b_hg, self.b_io, self.b_ho,
        ]
    }

    /// Fuses the four gates into stacked matrices for sequence runs.
    pub fn prepare(&self, g: &mut Graph, store: &ParamStore) -> Result<PreparedLstm> {
        let mut p = |id| g.param(store, id);
        let wx = [p(self.w_ii), p(self.w_if), p(self.w_ig), p(self.w_io)];
        let wh = [p(self.w_hi), p(self.w_hf), p(self.w_hg), p(self.w_ho)];
        let bx = [p(self.b_ii), p(self.b_if), p(self.b_ig), p(self.b_io)];
        let bh = [p(self.b_hi), p(self.b_hf), p(self.b_hg), p(self.b_ho)];
        let wx = g.concat(&wx, 0)?;
        let wx_t = g.transpose(wx)?;
        let wh = g.concat(&wh, 0)?;
        let bx = g.concat(&bx, 0)?;
        let bh = g.concat(&bh, 0)?;
        let bias = g.add(bx, bh)?;
        let h = self.hidden_dim;
        let zero = g.zeros(h);
        Ok(PreparedLstm {
            wx_t,
            wh,
            bias,
            zero,
            input_dim: self.input_dim,
            hidden: h,
        })
    }
}

/// One step written gate by gate:
/// `i = σ(W_ii x + b_ii + W_hi h + b_hi)`, likewise `f` (with `b_if`), `o`;
/// `g = tanh(…)`, `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_step(
    g: &mut Graph,
    store: &ParamStore,
    cell: &LstmCell,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let hd = [cell.hidden_dim];
    if g.shape(x) != [cell.input_dim] || g.shape(h_prev) != hd || g.shape(c_prev) != hd {
        return Err(Error::shape("lstm_step", g.shape(x), g.shape(h_prev)));
    }
    let mut gate = |wi: ParamId, bi: ParamId, wh: ParamId, bh: ParamId| -> Result<NodeId> {
        let (wi, bi, wh, bh) = (g.param(store, wi), g.param(store, bi), g.param(store, wh), g.param(store, bh));
        let a = g.matmul(wi, x)?;
        let b = g.matmul(wh, h_prev)?;
        g.add_all(&[a, bi, b, bh])
    };
    let i = gate(cell.w_ii, cell.b_ii, cell.w_hi, cell.b_hi)?;
    let f = gate(cell.w_if, cell.b_if, cell.w_hf, cell.b_hf)?;
    let gg = gate(cell.w_ig, cell.b_ig, cell.w_hg, cell.b_hg)?;
    let o = gate(cell.w_io, cell.b_io, cell.w_ho, cell.b_ho)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let gg = g.tanh(gg);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, gg)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Graph-resident fused weights of one direction.
#[derive(Debug, Clone, Copy)]
pub struct PreparedLstm {
    /// `in × 4H`
    wx_t: NodeId,
    /// `4H × H`
    wh: NodeId,
    /// `4H`, input-side plus hidden-side biases
    bias: NodeId,
    zero: NodeId,
    input_dim: usize,
    hidden: usize,
}

impl PreparedLstm {
    /// Input projections `X·W_x^T + b` for every position of an `n × in`
    /// matrix, as an `n × 4H` matrix.
    fn project(&self, g: &mut Graph, xs: NodeId) -> Result<NodeId> {
        if g.shape(xs).len() != 2 || g.shape(xs)[1] != self.input_dim {
            return Err(Error::shape("lstm input", g.shape(xs), &[0, self.input_dim]));
        }
        let p = g.matmul(xs, self.wx_t)?;
        g.add_broadcast(p, self.bias, Broadcast::PerCol)
    }

    fn step(&self, g: &mut Graph, proj: NodeId, h: NodeId, c: NodeId, first: bool) -> Result<(NodeId, NodeId)> {
        let hd = self.hidden;
        let pre = if first { proj } else {
            let r = g.matmul(self.wh, h)?;
            g.add(proj, r)?
        };
        let ifo = g.gather(pre, (0..2 * hd).chain(3 * hd..4 * hd).collect(), vec![3 * hd])?;
        let ifo = g.sigmoid(ifo);
        let cand = g.gather(pre, (2 * hd..3 * hd).collect(), vec![hd])?;
        let cand = g.tanh(cand);
        let i = g.gather(ifo, (0..hd).collect(), vec![hd])?;
        let o = g.gather(ifo, (2 * hd..3 * hd).collect(), vec![hd])?;
        let write = g.mul(i, cand)?;
        let c = if first { write } else {
            let f = g.gather(ifo, (hd..2 * hd).collect(), vec![hd])?;
            let keep = g.mul(f, c)?;
            g.add(keep, write)?
        };
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    /// Hidden state per position, scanning from the end when `reverse`.
    fn run(&self, g: &mut Graph, xs: NodeId, reverse: bool) -> Result<Vec<NodeId>> {
        let n = g.shape(xs)[0];
        let proj = self.project(g, xs)?;
        let (mut h, mut c) = (self.zero, self.zero);
        let mut out = vec![self.zero; n];
        for k in 0..n {
            let t = if reverse { n - 1 - k } else { k };
            let p = g.row(proj, t)?;
            (h, c) = self.step(g, p, h, c, k == 0)?;
            out[t] = h;
        }
        Ok(out)
    }
}

/// Forward and backward LSTMs over the same input.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            fwd: LstmCell::new(store, &format!("{prefix}.fwd"), input_dim, hidden_dim, rng),
            bwd: LstmCell::new(store, &format!("{prefix}.bwd"), input_dim, hidden_dim, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.fwd.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden_dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.fwd.params().into_iter().chain(self.bwd.params()).collect()
    }

    pub fn prepare(&self, g: &mut Graph, store: &ParamStore) -> Result<PreparedBiLstm> {
        Ok(PreparedBiLstm {
            fwd: self.fwd.prepare(g, store)?,
            bwd: self.bwd.prepare(g, store)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PreparedBiLstm {
    fwd: PreparedLstm,
    bwd: PreparedLstm,
}

impl PreparedBiLstm {
    /// `[h_fwd[t] ; h_bwd[t]]` for each row `t` of an `n × in` matrix.
    pub fn encode(&self, g: &mut Graph, xs: NodeId) -> Result<Vec<NodeId>> {
        let f = self.fwd.run(g, xs, false)?;
        let b = self.bwd.run(g, xs, true)?;
        f.into_iter().zip(b).map(|(f, b)| g.concat(&[f, b], 0)).collect()
    }

    /// `[h_fwd[n−1] ; h_bwd[0]]`, the final state of each direction.
    pub fn final_states(&self, g: &mut Graph, xs: NodeId) -> Result<NodeId> {
        let f = self.fwd.run(g, xs, false)?;
        let b = self.bwd.run(g, xs, true)?;
        g.concat(&[*f.last().expect("non-empty"), b[0]], 0)
    }
}

/// Runs a BiLSTM over a list of input vectors.
pub fn bilstm_encode(g: &mut Graph, store: &ParamStore, lstm: &BiLstm, xs: &[NodeId]) -> Result<Vec<NodeId>> {
    if xs.is_empty() {
        return Err(Error::Usage("empty sequence".into()));
    }
    let stacked = g.stack(xs)?;
    lstm.prepare(g, store)?.encode(g, stacked)
}
