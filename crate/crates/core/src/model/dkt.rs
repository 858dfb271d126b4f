use rand::Rng;

use super::{ModelDims, ModelError};
use crate::autodiff::{ParamStore, Tape, TensorError, Var};
use crate::data::Batch;
use crate::layers::{EmbeddingTable, LstmParams};

/// Deep Knowledge Tracing: an LSTM over embedded (KC, response) pairs with
/// one sigmoid output unit per KC.
///
/// The output layer is stored as two tables indexed by KC id, so reading the
/// unit of `c_{t+1}` is a row lookup. Row 0 (padding) stays zero.
#[derive(Clone, Debug)]
pub struct DktParams {
    pub n_kcs: usize,
    /// `kc + response * n_kcs`, rows `2 * n_kcs + 1`.
    pub input: EmbeddingTable,
    pub lstm: LstmParams,
    pub out_w: EmbeddingTable,
    pub out_b: EmbeddingTable,
}

impl DktParams {
    pub fn new(store: &mut ParamStore, dims: &ModelDims, rng: &mut impl Rng) -> Result<Self, TensorError> {
        let n = dims.n_kcs;
        let input = EmbeddingTable::new(store, "kc_response", 2 * n + 1, dims.embed_dim, 0.1, rng)?;
        let lstm = LstmParams::new(store, "dkt_lstm", dims.embed_dim, dims.hidden_dim, rng)?;
        let out_w = EmbeddingTable::new(store, "dkt_out", n + 1, dims.hidden_dim, 0.1, rng)?;
        let out_b = EmbeddingTable::new(store, "dkt_bias", n + 1, 1, 0.0, rng)?;
        Ok(Self {
            n_kcs: n,
            input,
            lstm,
            out_w,
            out_b,
        })
    }

    pub(crate) fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        batch: &Batch,
    ) -> Result<Var, ModelError> {
        let (b, t) = (batch.batch_size, batch.steps);
        let ids: Vec<usize> = batch
            .kc_ids
            .iter()
            .zip(&batch.responses)
            .zip(&batch.step_mask)
            .map(|((&kc, &r), &m)| if m { kc + r as usize * self.n_kcs } else { 0 })
            .collect();
        if let Some(&kc) = batch.kc_ids.iter().find(|&&kc| kc > self.n_kcs) {
            return Err(TensorError::Index {
                id: kc,
                rows: self.n_kcs + 1,
                table: "kc".into(),
            }
            .into());
        }
        let x = self.input.lookup(tape, store, &ids, b, t)?;
        let h = self.lstm.forward(tape, store, x, &batch.step_mask)?;
        let w = self.out_w.lookup(tape, store, &batch.kc_next, b, t)?;
        let hw = tape.mul(h, w)?;
        let z = tape.sum_last_axis(hw);
        let bias = self.out_b.lookup(tape, store, &batch.kc_next, b, t)?;
        let bias = tape.reshape(bias, &[b, t])?;
        let z = tape.add(z, bias)?;
        Ok(tape.sigmoid(z))
    }
}
