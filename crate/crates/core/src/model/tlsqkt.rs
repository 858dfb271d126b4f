use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{position_ids, response_ids, ForwardVars, ModelDims, ModelError, VariantKind};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::data::Batch;
use crate::layers::{AttentionParams, EmbeddingTable, LinearHead, LstmParams, Mlp, Mode};

const EMBED_STD: f64 = 0.1;
const POS_STD: f64 = 0.02;

/// What sits between a channel's sequence encoding and its scalar score:
/// an optional MLP (`wo_add`), an optional transformer block (absent for
/// `wo_output`) and the linear head.
#[derive(Clone, Debug)]
pub struct ChannelTop {
    pub mlp: Option<Mlp>,
    pub tf: Option<AttentionParams>,
    pub head: LinearHead,
}

impl ChannelTop {
    fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        variant: VariantKind,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        let mlp = if variant == VariantKind::WoAdd {
            Some(Mlp::new(store, &format!("{name}_mlp"), dim, rng)?)
        } else {
            None
        };
        let tf = if variant.uses_attention() {
            Some(AttentionParams::new(store, &format!("{name}_tf"), dim, heads, rng)?)
        } else {
            None
        };
        let head = LinearHead::new(store, &format!("{name}_head"), dim, rng)?;
        Ok(Self { mlp, tf, head })
    }

    /// `[B, T, d] -> [B, T]` score.
    pub fn score<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        x: Var,
        step_mask: &[bool],
        mode: &mut Mode<'_>,
    ) -> Result<Var, TensorError> {
        let mut h = x;
        if let Some(mlp) = &self.mlp {
            h = mlp.forward(tape, store, h)?;
        }
        if let Some(tf) = &self.tf {
            h = tf.transformer_block(tape, store, h, step_mask, mode)?;
        }
        self.head.forward(tape, store, h)
    }
}

/// Parameters of the three-channel model.
#[derive(Clone, Debug)]
pub struct TlsqktParams {
    pub q_table: EmbeddingTable,
    pub l_table: EmbeddingTable,
    pub r_table: EmbeddingTable,
    /// Learned positions, one table per channel input width.
    pub pos_question: ParamId,
    pub pos_ability: ParamId,
    pub pos_application: ParamId,
    pub question_lstm: LstmParams,
    pub ability_lstm: LstmParams,
    pub question: ChannelTop,
    pub ability: ChannelTop,
    pub application: ChannelTop,
    /// `[(hidden + 2 * embed) × model]`, no bias.
    pub app_proj: ParamId,
    /// `[3]`, initialised to 1/3 each.
    pub combine_w: ParamId,
    pub combine_b: ParamId,
}

impl TlsqktParams {
    pub fn new(
        store: &mut ParamStore,
        dims: &ModelDims,
        variant: VariantKind,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        let d = dims.embed_dim;
        let h = dims.hidden_dim;
        let m = dims.model_dim;
        let heads = dims.heads_for(variant);
        let q_table = EmbeddingTable::new(store, "question", dims.n_questions + 1, d, EMBED_STD, rng)?;
        let l_table = EmbeddingTable::new(store, "literacy", dims.n_literacy + 1, d, EMBED_STD, rng)?;
        let r_table = EmbeddingTable::new(store, "response", 3, d, EMBED_STD, rng)?;
        let normal = Normal::new(0.0, POS_STD).expect("positive std");
        let mut pos = |name: &str, width: usize| {
            let t = Tensor::from_fn(&[dims.max_seq_len, width], |_| normal.sample(rng))?;
            store.insert(format!("pos.{name}"), t)
        };
        let pos_question = pos("question", 3 * d)?;
        let pos_ability = pos("ability", 2 * d)?;
        let pos_application = pos("application", m)?;
        let question_lstm = LstmParams::new(store, "question_lstm", 3 * d, h, rng)?;
        let ability_lstm = LstmParams::new(store, "ability_lstm", 2 * d, h, rng)?;
        let question = ChannelTop::new(store, "question", h, variant, heads, rng)?;
        let ability = ChannelTop::new(store, "ability", h, variant, heads, rng)?;
        let application = ChannelTop::new(store, "application", m, variant, heads, rng)?;
        let app_proj = store.insert("app_proj", crate::layers::xavier(rng, h + 2 * d, m)?)?;
        let combine_w = store.insert("combine.w", Tensor::full(&[3], 1.0 / 3.0)?)?;
        let combine_b = store.insert("combine.b", Tensor::scalar(0.0))?;
        Ok(Self {
            q_table,
            l_table,
            r_table,
            pos_question,
            pos_ability,
            pos_application,
            question_lstm,
            ability_lstm,
            question,
            ability,
            application,
            app_proj,
            combine_w,
            combine_b,
        })
    }

    fn add_positions<'p>(
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        table: ParamId,
        x: Var,
        batch: &Batch,
    ) -> Result<Var, TensorError> {
        let w = tape.param(store, table);
        let p = tape.gather_rows(w, &position_ids(batch), &[batch.batch_size, batch.steps], None)?;
        tape.add(x, p)
    }

    /// `e_t = [q_emb; l_emb; r_emb] + pos`, shape `[B, T, 3 * embed]`.
    pub fn embed_question_channel<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        batch: &Batch,
    ) -> Result<Var, TensorError> {
        let (b, t) = (batch.batch_size, batch.steps);
        let q = self.q_table.lookup(tape, store, &batch.q_ids, b, t)?;
        let l = self.l_table.lookup(tape, store, &batch.l_ids, b, t)?;
        let r = self.r_table.lookup(tape, store, &response_ids(batch), b, t)?;
        let e = tape.concat(&[q, l, r], 2)?;
        Self::add_positions(tape, store, self.pos_question, e, batch)
    }

    /// `m_t = [l_emb; r_emb] + pos`, shape `[B, T, 2 * embed]`.
    pub fn embed_literacy_channel<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        batch: &Batch,
    ) -> Result<Var, TensorError> {
        let (b, t) = (batch.batch_size, batch.steps);
        let l = self.l_table.lookup(tape, store, &batch.l_ids, b, t)?;
        let r = self.r_table.lookup(tape, store, &response_ids(batch), b, t)?;
        let m = tape.concat(&[l, r], 2)?;
        Self::add_positions(tape, store, self.pos_ability, m, batch)
    }

    /// `y_t = [b_t; q_emb(q_{t+1}); l_emb(l_{t+1})] · app_proj + pos`,
    /// shape `[B, T, model]`.
    pub fn embed_application_channel<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        states: Var,
        batch: &Batch,
    ) -> Result<Var, TensorError> {
        let (b, t) = (batch.batch_size, batch.steps);
        let q = self.q_table.lookup(tape, store, &batch.q_next, b, t)?;
        let l = self.l_table.lookup(tape, store, &batch.l_next, b, t)?;
        let joined = tape.concat(&[states, q, l], 2)?;
        let width = tape.shape(joined)[2];
        let flat = tape.reshape(joined, &[b * t, width])?;
        let proj = tape.param(store, self.app_proj);
        let y = tape.matmul(flat, proj)?;
        let out_dim = tape.shape(y)[1];
        let y = tape.reshape(y, &[b, t, out_dim])?;
        Self::add_positions(tape, store, self.pos_application, y, batch)
    }

    pub(crate) fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        batch: &Batch,
        mode: &mut Mode<'_>,
    ) -> Result<ForwardVars, ModelError> {
        let (b, t) = (batch.batch_size, batch.steps);
        let mask = &batch.step_mask;

        let e = self.embed_question_channel(tape, store, batch)?;
        let a = self.question_lstm.forward(tape, store, e, mask)?;
        let alpha = self.question.score(tape, store, a, mask, mode)?;

        let m = self.embed_literacy_channel(tape, store, batch)?;
        let states = self.ability_lstm.forward(tape, store, m, mask)?;
        let beta = self.ability.score(tape, store, states, mask, mode)?;

        let y = self.embed_application_channel(tape, store, states, batch)?;
        let gamma = self.application.score(tape, store, y, mask, mode)?;

        let cols: Vec<Var> = [alpha, beta, gamma]
            .iter()
            .map(|&s| tape.reshape(s, &[b * t, 1]))
            .collect::<Result<_, _>>()?;
        let scores = tape.concat(&cols, 1)?;
        let w = tape.param(store, self.combine_w);
        let w = tape.reshape(w, &[3, 1])?;
        let c = tape.param(store, self.combine_b);
        let z = tape.matmul(scores, w)?;
        let z = tape.add(z, c)?;
        let z = tape.reshape(z, &[b, t])?;
        Ok(ForwardVars {
            probs: tape.sigmoid(z),
            channel_scores: Some((alpha, beta, gamma)),
            literacy_states: Some(states),
        })
    }
}
