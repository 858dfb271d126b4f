use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelDims, ModelError, VariantKind};
use crate::autodiff::Tensor;
use crate::data::IdMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: VariantKind,
    pub dims: ModelDims,
    pub seed: u64,
    /// Hex SHA-256 of the effective config text.
    pub config_hash: String,
    /// Effective config, key → value.
    pub config: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_map: Option<IdMap>,
}

/// Parameter name → values, plus metadata. Floats are written in shortest
/// round-trip form, so save/load is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: BTreeMap<String, ParamEntry>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        seed: u64,
        config: BTreeMap<String, String>,
        config_hash: String,
        id_map: Option<IdMap>,
    ) -> Self {
        let params = model
            .store()
            .iter()
            .map(|(_, name, t)| {
                (
                    name.to_string(),
                    ParamEntry {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            meta: CheckpointMeta {
                variant: model.variant,
                dims: model.dims.clone(),
                seed,
                config_hash,
                config,
                id_map,
            },
            params,
        }
    }

    /// Rebuilds the model layout from the metadata and fills in every
    /// parameter. Missing, extra or mis-shaped parameters are errors.
    pub fn to_model(&self) -> Result<Model, ModelError> {
        let mut model = Model::new(self.meta.variant, self.meta.dims.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let expected: Vec<String> = model.store().iter().map(|(_, n, _)| n.to_string()).collect();
        for name in self.params.keys() {
            if model.store().id(name).is_none() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter `{name}` does not belong to a {} model",
                    self.meta.variant
                )));
            }
        }
        for name in expected {
            let entry = self
                .params
                .get(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter `{name}`")))?;
            let id = model.store().id(&name).expect("listed above");
            let tensor = model.store_mut().get_mut(id);
            if tensor.shape() != entry.shape.as_slice() || entry.data.len() != tensor.numel() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    entry.shape,
                    tensor.shape()
                )));
            }
            tensor.data_mut().copy_from_slice(&entry.data);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        let e = self.params.get(name)?;
        Tensor::new(e.data.clone(), &e.shape).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            n_questions: 5,
            n_kcs: 3,
            n_literacy: 2,
            embed_dim: 4,
            hidden_dim: 4,
            model_dim: 4,
            n_heads: 2,
            max_seq_len: 6,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in VariantKind::ALL {
            let mut model = Model::new(variant, dims(), &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
            // awkward values: subnormal, huge, negative zero
            let first = model.store().ids().next().unwrap();
            let data = model.store_mut().get_mut(first).data_mut();
            data[data.len() - 1] = 5e-324;
            data[data.len() - 2] = -0.0;
            data[0] = 1.234_567_890_123_456_7e300;
            let ck = Checkpoint::from_model(&model, 11, BTreeMap::new(), "abc".into(), None);
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            let restored = back.to_model().unwrap();
            for ((_, n1, a), (_, n2, b)) in model.store().iter().zip(restored.store().iter()) {
                assert_eq!(n1, n2);
                let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b), "{n1}");
            }
        }
    }

    #[test]
    fn wrong_variant_is_rejected() {
        let model = Model::new(VariantKind::Full, dims(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut ck = Checkpoint::from_model(&model, 1, BTreeMap::new(), String::new(), None);
        ck.meta.variant = VariantKind::WoOutput;
        assert!(matches!(ck.to_model(), Err(ModelError::Checkpoint(_))));
    }
}
