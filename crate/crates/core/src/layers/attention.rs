use rand::Rng;

use super::{dropout, flatten_steps, register, xavier, Mode};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

const LN_EPS: f64 = 1e-5;

/// Multi-head causal self-attention plus a pre-norm feed-forward block.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub model_dim: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub w_1: ParamId,
    pub w_2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

/// Attention weights recorded during a forward pass, one `[T, T]` node per
/// (batch row, head), row-major over rows then heads.
#[derive(Debug, Default)]
pub struct AttentionTrace {
    pub weights: Vec<Var>,
}

impl AttentionParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        model_dim: usize,
        n_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        if n_heads == 0 || model_dim % n_heads != 0 {
            return Err(TensorError::Shape {
                op: "model_dim must be divisible by n_heads",
                left: vec![model_dim],
                right: vec![n_heads],
            });
        }
        let ff_dim = 4 * model_dim;
        let mut mat = |suffix: &str, rows: usize, cols: usize| {
            register(store, format!("{name}.{suffix}"), xavier(rng, rows, cols)?)
        };
        let w_q = mat("w_q", model_dim, model_dim)?;
        let w_k = mat("w_k", model_dim, model_dim)?;
        let w_v = mat("w_v", model_dim, model_dim)?;
        let w_o = mat("w_o", model_dim, model_dim)?;
        let w_1 = mat("w_1", model_dim, ff_dim)?;
        let w_2 = mat("w_2", ff_dim, model_dim)?;
        let ln1_gain = register(store, format!("{name}.ln1_gain"), Tensor::full(&[model_dim], 1.0)?)?;
        let ln1_bias = register(store, format!("{name}.ln1_bias"), Tensor::zeros(&[model_dim])?)?;
        let ln2_gain = register(store, format!("{name}.ln2_gain"), Tensor::full(&[model_dim], 1.0)?)?;
        let ln2_bias = register(store, format!("{name}.ln2_bias"), Tensor::zeros(&[model_dim])?)?;
        Ok(Self {
            model_dim,
            n_heads,
            ff_dim,
            w_q,
            w_k,
            w_v,
            w_o,
            w_1,
            w_2,
            ln1_gain,
            ln1_bias,
            ln2_gain,
            ln2_bias,
        })
    }

    pub fn attach(store: &ParamStore, name: &str, n_heads: usize) -> Option<Self> {
        let id = |s: &str| store.id(&format!("{name}.{s}"));
        let w_q = id("w_q")?;
        let model_dim = store.get(w_q).shape()[0];
        Some(Self {
            model_dim,
            n_heads,
            ff_dim: 4 * model_dim,
            w_q,
            w_k: id("w_k")?,
            w_v: id("w_v")?,
            w_o: id("w_o")?,
            w_1: id("w_1")?,
            w_2: id("w_2")?,
            ln1_gain: id("ln1_gain")?,
            ln1_bias: id("ln1_bias")?,
            ln2_gain: id("ln2_gain")?,
            ln2_bias: id("ln2_bias")?,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    /// Causal multi-head self-attention over `x: [B, T, d]`.
    ///
    /// Query `i` may attend to key `j` iff `j <= i` and step `j` is valid
    /// (a query always sees itself, so no row is ever fully masked).
    pub fn causal_self_attention<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        x: Var,
        step_mask: &[bool],
        mode: &mut Mode<'_>,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<Var, TensorError> {
        let (flat, batch, steps, d) = flatten_steps(tape, x)?;
        if d != self.model_dim || step_mask.len() != batch * steps {
            return Err(TensorError::Shape {
                op: "attention input",
                left: vec![batch, steps, d],
                right: vec![self.model_dim, step_mask.len()],
            });
        }
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let wq = tape.param(store, self.w_q);
        let wk = tape.param(store, self.w_k);
        let wv = tape.param(store, self.w_v);
        let wo = tape.param(store, self.w_o);
        let q = tape.matmul(flat, wq)?;
        let k = tape.matmul(flat, wk)?;
        let v = tape.matmul(flat, wv)?;

        let mut rows = Vec::with_capacity(batch);
        for b in 0..batch {
            let valid = &step_mask[b * steps..(b + 1) * steps];
            let keep: Vec<bool> = (0..steps)
                .flat_map(|i| (0..steps).map(move |j| j <= i && (valid[j] || i == j)))
                .collect();
            let qb = tape.slice(q, 0, b * steps, steps)?;
            let kb = tape.slice(k, 0, b * steps, steps)?;
            let vb = tape.slice(v, 0, b * steps, steps)?;
            let mut heads = Vec::with_capacity(self.n_heads);
            for h in 0..self.n_heads {
                let qh = tape.slice(qb, 1, h * dh, dh)?;
                let kh = tape.slice(kb, 1, h * dh, dh)?;
                let vh = tape.slice(vb, 1, h * dh, dh)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale);
                let weights = tape.softmax_masked(scores, &keep)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.weights.push(weights);
                }
                let weights = dropout(tape, weights, mode)?;
                heads.push(tape.matmul(weights, vh)?);
            }
            rows.push(tape.concat(&heads, 1)?);
        }
        let ctx = tape.concat(&rows, 0)?;
        let out = tape.matmul(ctx, wo)?;
        tape.reshape(out, &[batch, steps, d])
    }

    /// Pre-norm block: `y = x + attn(ln1(x))`, `out = y + ffn(ln2(y))` with
    /// `ffn(z) = relu(z W1) W2`.
    pub fn transformer_block<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        x: Var,
        step_mask: &[bool],
        mode: &mut Mode<'_>,
    ) -> Result<Var, TensorError> {
        let g1 = tape.param(store, self.ln1_gain);
        let b1 = tape.param(store, self.ln1_bias);
        let n1 = tape.layer_norm(x, g1, b1, LN_EPS)?;
        let attn = self.causal_self_attention(tape, store, n1, step_mask, mode, None)?;
        let y = tape.add(x, attn)?;

        let g2 = tape.param(store, self.ln2_gain);
        let b2 = tape.param(store, self.ln2_bias);
        let n2 = tape.layer_norm(y, g2, b2, LN_EPS)?;
        let (flat, batch, steps, d) = flatten_steps(tape, n2)?;
        let w1 = tape.param(store, self.w_1);
        let w2 = tape.param(store, self.w_2);
        let hidden = tape.matmul(flat, w1)?;
        let hidden = tape.relu(hidden);
        let ff = tape.matmul(hidden, w2)?;
        let ff = dropout(tape, ff, mode)?;
        let ff = tape.reshape(ff, &[batch, steps, d])?;
        tape.add(y, ff)
    }
}
