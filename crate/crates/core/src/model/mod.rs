//! The literacy tracing model, its ablation variants and the DKT baseline.
//!
//! Three channels score every position `t`:
//!
//! * question: `e_t = [q; l; r] + pos`, `α_t = head(tf(lstm(e)))`
//! * ability: `m_t = [l; r] + pos`, `b_t = lstm(m)`, `β_t = head(tf(b))`
//! * application: `y_t = [b_t; q_{t+1}; l_{t+1}] P + pos`, `γ_t = head(tf(y))`
//!
//! and the prediction for step `t + 1` is `sigmoid(w · [α, β, γ] + c)`.

mod checkpoint;
mod dkt;
mod tlsqkt;
mod trajectory;

pub use checkpoint::{Checkpoint, CheckpointMeta, ParamEntry};
pub use dkt::DktParams;
pub use tlsqkt::{ChannelTop, TlsqktParams};
pub use trajectory::{extract_trajectories, StateRow, Trajectories, TrajectoryRow};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamStore, Tape, Tensor, TensorError, Var};
use crate::data::{Batch, BatchError};
use crate::layers::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Full,
    WoOutput,
    WoHead,
    WoAdd,
    DktBaseline,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Full,
        VariantKind::WoOutput,
        VariantKind::WoHead,
        VariantKind::WoAdd,
        VariantKind::DktBaseline,
    ];

    /// The variants compared by the ablation suite.
    pub const ABLATIONS: [VariantKind; 4] = [
        VariantKind::Full,
        VariantKind::WoOutput,
        VariantKind::WoHead,
        VariantKind::WoAdd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Full => "full",
            VariantKind::WoOutput => "wo_output",
            VariantKind::WoHead => "wo_head",
            VariantKind::WoAdd => "wo_add",
            VariantKind::DktBaseline => "dkt_baseline",
        }
    }

    pub fn uses_attention(self) -> bool {
        !matches!(self, VariantKind::WoOutput | VariantKind::DktBaseline)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VariantKind::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown variant `{s}`")))
    }
}

/// Vocabulary sizes and layer widths. Vocabulary sizes count real ids; the
/// tables get one extra padding row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_questions: usize,
    pub n_kcs: usize,
    pub n_literacy: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
}

impl ModelDims {
    pub fn validate(&self, variant: VariantKind) -> Result<(), ModelError> {
        let named = [
            ("n_questions", self.n_questions),
            ("n_kcs", self.n_kcs),
            ("n_literacy", self.n_literacy),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("model_dim", self.model_dim),
            ("n_heads", self.n_heads),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if variant != VariantKind::DktBaseline {
            if self.model_dim != self.hidden_dim {
                return Err(ModelError::Config(format!(
                    "model_dim ({}) must equal hidden_dim ({}) so LSTM states can enter the transformer blocks",
                    self.model_dim, self.hidden_dim
                )));
            }
            if variant.uses_attention() && self.model_dim % self.heads_for(variant) != 0 {
                return Err(ModelError::Config(format!(
                    "model_dim ({}) must be divisible by n_heads ({})",
                    self.model_dim, self.n_heads
                )));
            }
        }
        Ok(())
    }

    /// Head count actually used by `variant` (single head for `wo_head`).
    pub fn heads_for(&self, variant: VariantKind) -> usize {
        if variant == VariantKind::WoHead {
            1
        } else {
            self.n_heads
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("malformed batch: {0}")]
    Batch(#[from] BatchError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug)]
enum Net {
    Tlsqkt(TlsqktParams),
    Dkt(DktParams),
}

/// Tape nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `[B, T]` probability that the step after position `t` is correct.
    pub probs: Var,
    /// `(α, β, γ)`, each `[B, T]`; absent for DKT.
    pub channel_scores: Option<(Var, Var, Var)>,
    /// `[B, T, hidden]` ability-channel LSTM states `b_t`; absent for DKT.
    pub literacy_states: Option<Var>,
}

/// Detached values of a forward pass.
#[derive(Clone, Debug)]
pub struct TraceOutput {
    pub probs: Tensor,
    pub channel_scores: Option<(Tensor, Tensor, Tensor)>,
    pub literacy_states: Option<Tensor>,
}

/// A model instance: its variant, dimensions and parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub variant: VariantKind,
    pub dims: ModelDims,
    store: ParamStore,
    net: Net,
}

impl Model {
    pub fn new(variant: VariantKind, dims: ModelDims, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        dims.validate(variant)?;
        let mut store = ParamStore::new();
        let net = match variant {
            VariantKind::DktBaseline => Net::Dkt(DktParams::new(&mut store, &dims, rng)?),
            _ => Net::Tlsqkt(TlsqktParams::new(&mut store, &dims, variant, rng)?),
        };
        Ok(Self {
            variant,
            dims,
            store,
            net,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces all parameter values with those of `other` (same layout).
    pub fn load_values(&mut self, other: &ParamStore) -> Result<(), ModelError> {
        for (_, name, t) in other.iter() {
            let own = self
                .store
                .id(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter `{name}`")))?;
            if self.store.get(own).shape() != t.shape() {
                return Err(ModelError::Checkpoint(format!("shape mismatch for `{name}`")));
            }
            self.store.get_mut(own).data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.store.numel()
    }

    pub fn tlsqkt(&self) -> Option<&TlsqktParams> {
        match &self.net {
            Net::Tlsqkt(p) => Some(p),
            Net::Dkt(_) => None,
        }
    }

    pub fn dkt(&self) -> Option<&DktParams> {
        match &self.net {
            Net::Dkt(p) => Some(p),
            Net::Tlsqkt(_) => None,
        }
    }

    /// Records a forward pass on `tape` after checking the batch contract.
    pub fn forward_vars<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        batch: &Batch,
        mode: &mut Mode<'_>,
    ) -> Result<ForwardVars, ModelError> {
        batch.validate(self.dims.max_seq_len)?;
        self.forward_unchecked(tape, batch, mode)
    }

    /// Same as [`Model::forward_vars`] but reading parameter values from
    /// `store`, which must have this model's layout (used for gradient
    /// checks on perturbed copies).
    pub fn forward_vars_with<'p>(
        &self,
        store: &'p ParamStore,
        tape: &mut Tape<'p>,
        batch: &Batch,
        mode: &mut Mode<'_>,
    ) -> Result<ForwardVars, ModelError> {
        batch.validate(self.dims.max_seq_len)?;
        self.forward_raw(store, tape, batch, mode)
    }

    /// Forward pass without the next-step alignment check, for probes that
    /// overwrite `q_next` / `l_next` on purpose.
    pub fn forward_unchecked<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        batch: &Batch,
        mode: &mut Mode<'_>,
    ) -> Result<ForwardVars, ModelError> {
        self.forward_raw(&self.store, tape, batch, mode)
    }

    fn forward_raw<'p>(
        &self,
        store: &'p ParamStore,
        tape: &mut Tape<'p>,
        batch: &Batch,
        mode: &mut Mode<'_>,
    ) -> Result<ForwardVars, ModelError> {
        if batch.is_empty() || batch.steps == 0 {
            return Err(ModelError::Config("empty batch".into()));
        }
        if batch.steps > self.dims.max_seq_len {
            return Err(BatchError::TooLong {
                steps: batch.steps,
                max: self.dims.max_seq_len,
            }
            .into());
        }
        match &self.net {
            Net::Tlsqkt(p) => p.forward(tape, store, batch, mode),
            Net::Dkt(p) => {
                let probs = p.forward(tape, store, batch)?;
                Ok(ForwardVars {
                    probs,
                    channel_scores: None,
                    literacy_states: None,
                })
            }
        }
    }

    pub fn forward(&self, batch: &Batch, mode: &mut Mode<'_>) -> Result<TraceOutput, ModelError> {
        let mut tape = Tape::new();
        let v = self.forward_vars(&mut tape, batch, mode)?;
        Ok(TraceOutput {
            probs: tape.to_tensor(v.probs),
            channel_scores: v
                .channel_scores
                .map(|(a, b, c)| (tape.to_tensor(a), tape.to_tensor(b), tape.to_tensor(c))),
            literacy_states: v.literacy_states.map(|s| tape.to_tensor(s)),
        })
    }

    /// Evaluation-mode probabilities, row-major `[B, T]`.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let v = self.forward_vars(&mut tape, batch, &mut Mode::Eval)?;
        Ok(tape.value(v.probs).to_vec())
    }
}

/// Response-table index: `r + 1` at real steps, 0 (padding) elsewhere.
pub(crate) fn response_ids(batch: &Batch) -> Vec<usize> {
    batch
        .responses
        .iter()
        .zip(&batch.step_mask)
        .map(|(&r, &m)| if m { r as usize + 1 } else { 0 })
        .collect()
}

/// Position-in-window ids `0..T` for every row.
pub(crate) fn position_ids(batch: &Batch) -> Vec<usize> {
    (0..batch.batch_size).flat_map(|_| 0..batch.steps).collect()
}
