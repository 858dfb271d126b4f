use rand::Rng;

use super::{flatten_steps, register, xavier};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

const GATES: [&str; 4] = ["i", "f", "o", "g"];

/// Single-layer LSTM.
///
/// Each gate owns a `[(input + hidden) × hidden]` weight whose first `input`
/// rows act on the step input and the remaining rows on the previous hidden
/// state. Gate order is input, forget, output, candidate.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub weights: [ParamId; 4],
    pub biases: [ParamId; 4],
}

impl LstmParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        let mut weights = Vec::with_capacity(4);
        let mut biases = Vec::with_capacity(4);
        for gate in GATES {
            weights.push(register(
                store,
                format!("{name}.w_{gate}"),
                xavier(rng, input_dim + hidden_dim, hidden_dim)?,
            )?);
            let init = if gate == "f" { 1.0 } else { 0.0 };
            biases.push(register(
                store,
                format!("{name}.b_{gate}"),
                Tensor::full(&[hidden_dim], init)?,
            )?);
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            weights: weights.try_into().expect("four gates"),
            biases: biases.try_into().expect("four gates"),
        })
    }

    pub fn attach(store: &ParamStore, name: &str) -> Option<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for gate in GATES {
            weights.push(store.id(&format!("{name}.w_{gate}"))?);
            biases.push(store.id(&format!("{name}.b_{gate}"))?);
        }
        let hidden_dim = store.get(biases[0]).shape()[0];
        let input_dim = store.get(weights[0]).shape()[0] - hidden_dim;
        Some(Self {
            input_dim,
            hidden_dim,
            weights: weights.try_into().ok()?,
            biases: biases.try_into().ok()?,
        })
    }

    /// Runs the recurrence over `x: [B, T, input]` from zero initial state.
    ///
    /// Where `step_mask` (row-major `[B, T]`) is false, hidden and cell state
    /// carry forward unchanged.
    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        x: Var,
        step_mask: &[bool],
    ) -> Result<Var, TensorError> {
        let (flat, batch, steps, input) = flatten_steps(tape, x)?;
        if input != self.input_dim || step_mask.len() != batch * steps {
            return Err(TensorError::Shape {
                op: "lstm input",
                left: vec![batch, steps, input],
                right: vec![self.input_dim, step_mask.len()],
            });
        }
        let h_dim = self.hidden_dim;

        // input contributions for all steps at once
        let mut projected = Vec::with_capacity(4);
        let mut recurrent = Vec::with_capacity(4);
        let mut biases = Vec::with_capacity(4);
        for k in 0..4 {
            let w = tape.param(store, self.weights[k]);
            let wx = tape.slice(w, 0, 0, input)?;
            let wh = tape.slice(w, 0, input, h_dim)?;
            let xw = tape.matmul(flat, wx)?;
            projected.push(tape.reshape(xw, &[batch, steps, h_dim])?);
            recurrent.push(wh);
            biases.push(tape.param(store, self.biases[k]));
        }

        let mut h = tape.constant(vec![0.0; batch * h_dim], &[batch, h_dim])?;
        let mut c = h;
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let keep: Vec<bool> = (0..batch)
                .flat_map(|b| std::iter::repeat(step_mask[b * steps + t]).take(h_dim))
                .collect();
            let mut gates = [h; 4];
            for k in 0..4 {
                let xt = tape.slice(projected[k], 1, t, 1)?;
                let xt = tape.reshape(xt, &[batch, h_dim])?;
                let hw = tape.matmul(h, recurrent[k])?;
                let pre = tape.add(xt, hw)?;
                let pre = tape.add(pre, biases[k])?;
                gates[k] = if k == 3 { tape.tanh(pre) } else { tape.sigmoid(pre) };
            }
            let [i, f, o, g] = gates;
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            let c_new = tape.add(fc, ig)?;
            let tc = tape.tanh(c_new);
            let h_new = tape.mul(o, tc)?;
            if keep.iter().all(|&k| k) {
                c = c_new;
                h = h_new;
            } else {
                c = tape.select(&keep, c_new, c)?;
                h = tape.select(&keep, h_new, h)?;
            }
            outputs.push(tape.reshape(h, &[batch, 1, h_dim])?);
        }
        tape.concat(&outputs, 1)
    }
}
