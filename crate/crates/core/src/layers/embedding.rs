use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Lookup table whose row 0 is the all-zero padding vector.
///
/// Row 0 is frozen in the store and receives no gradient.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub name: String,
    pub id: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rows: usize,
        dim: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        let normal = Normal::new(0.0, std).expect("positive std");
        let weights = Tensor::from_fn(&[rows, dim], |i| {
            if i < dim {
                0.0
            } else {
                normal.sample(rng)
            }
        })?;
        let id = store.insert(format!("{name}.weight"), weights)?;
        store.freeze_row(id, 0);
        Ok(Self {
            name: name.to_string(),
            id,
            rows,
            dim,
        })
    }

    /// Re-attaches to an existing parameter (used when loading checkpoints).
    pub fn attach(store: &mut ParamStore, name: &str) -> Option<Self> {
        let id = store.id(&format!("{name}.weight"))?;
        let shape = store.get(id).shape().to_vec();
        store.freeze_row(id, 0);
        Some(Self {
            name: name.to_string(),
            id,
            rows: shape[0],
            dim: shape[1],
        })
    }

    /// `ids` laid out as `[B, T]` → `[B, T, dim]`.
    pub fn lookup<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        ids: &[usize],
        batch: usize,
        steps: usize,
    ) -> Result<Var, TensorError> {
        if let Some(&id) = ids.iter().find(|&&id| id >= self.rows) {
            return Err(TensorError::Index {
                id,
                rows: self.rows,
                table: self.name.clone(),
            });
        }
        let w = tape.param(store, self.id);
        tape.gather_rows(w, ids, &[batch, steps], Some(0))
    }
}
