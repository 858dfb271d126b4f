//! Parameterized building blocks shared by the literacy tracing model and the
//! DKT baseline. Each layer is a handle of [`ParamId`]s into a
//! [`ParamStore`]; forward passes are pure functions of (store, input).

mod attention;
mod embedding;
mod linear;
mod lstm;

pub use attention::{AttentionParams, AttentionTrace};
pub use embedding::EmbeddingTable;
pub use linear::{Linear, LinearHead, Mlp};
pub use lstm::LstmParams;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Forward-pass mode. Dropout is only applied in [`Mode::Train`].
pub enum Mode<'r> {
    Eval,
    Train { dropout: f64, rng: &'r mut ChaCha8Rng },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
pub fn dropout(tape: &mut Tape<'_>, x: Var, mode: &mut Mode<'_>) -> Result<Var, TensorError> {
    let Mode::Train { dropout: rate, rng } = mode else {
        return Ok(x);
    };
    if *rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - *rate;
    let n = tape.value(x).len();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
        .collect();
    let shape = tape.shape(x).to_vec();
    let m = tape.constant(mask, &shape)?;
    tape.mul(x, m)
}

/// Glorot-uniform matrix.
pub(crate) fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Result<Tensor, TensorError> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(&[rows, cols], |_| rng.gen_range(-limit..limit))
}

pub(crate) fn register(
    store: &mut ParamStore,
    name: String,
    tensor: Tensor,
) -> Result<ParamId, TensorError> {
    store.insert(name, tensor)
}

/// `[B, T, d] -> [B * T, d]`.
pub(crate) fn flatten_steps(tape: &mut Tape<'_>, x: Var) -> Result<(Var, usize, usize, usize), TensorError> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(TensorError::Shape {
            op: "expected [batch, steps, features]",
            left: s,
            right: vec![],
        });
    }
    let flat = tape.reshape(x, &[s[0] * s[1], s[2]])?;
    Ok((flat, s[0], s[1], s[2]))
}
