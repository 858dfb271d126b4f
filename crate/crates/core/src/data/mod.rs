//! Interaction logs: canonical CSV I/O, the ASSIST09 adapter, a synthetic
//! literacy generator, student-level splits and windowed batches.

mod assist09;
mod canonical;
mod split;
mod synthetic;
mod window;

pub use assist09::{adapt_assist09, AdaptReport};
pub use canonical::{
    densify, load_canonical, read_canonical, read_id_map, remap, write_canonical, write_id_map, CANONICAL_HEADER,
};
pub use split::{split_students, StudentSplit};
pub use synthetic::{
    generate_synthetic_literacy, sample_response, write_ground_truth, GroundTruthRow, SyntheticConfig,
    SyntheticData,
};
pub use window::{window_and_pad, window_sequences, Batch, BatchError, Window};

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One answered question.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub student_id: String,
    pub order: i64,
    pub question_id: usize,
    pub kc_id: usize,
    pub literacy_id: Option<usize>,
    pub correct: u8,
}

/// All interactions of one student, sorted by `order`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequence {
    pub student_id: String,
    pub interactions: Vec<Interaction>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_students: usize,
    pub n_questions: usize,
    pub n_kcs: usize,
    pub n_interactions: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_literacy: Option<usize>,
}

impl DatasetStats {
    pub fn from_sequences(sequences: &[Sequence]) -> Self {
        use std::collections::BTreeSet;
        let mut questions = BTreeSet::new();
        let mut kcs = BTreeSet::new();
        let mut literacy = BTreeSet::new();
        let mut n_interactions = 0;
        for it in sequences.iter().flat_map(|s| &s.interactions) {
            questions.insert(it.question_id);
            kcs.insert(it.kc_id);
            if let Some(l) = it.literacy_id {
                literacy.insert(l);
            }
            n_interactions += 1;
        }
        Self {
            n_students: sequences.len(),
            n_questions: questions.len(),
            n_kcs: kcs.len(),
            n_interactions,
            n_literacy: (!literacy.is_empty()).then_some(literacy.len()),
        }
    }
}

/// Original id → dense id, per id kind.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMap {
    pub question: BTreeMap<u64, usize>,
    pub kc: BTreeMap<u64, usize>,
    pub literacy: BTreeMap<u64, usize>,
}

impl IdMap {
    pub fn kind(&self, kind: &str) -> Option<&BTreeMap<u64, usize>> {
        match kind {
            "question" => Some(&self.question),
            "kc" => Some(&self.kc),
            "literacy" => Some(&self.literacy),
            _ => None,
        }
    }

    /// Dense → original lookup table for one kind.
    pub fn inverse(map: &BTreeMap<u64, usize>) -> BTreeMap<usize, u64> {
        map.iter().map(|(&o, &d)| (d, o)).collect()
    }
}

/// A loaded dataset with dense ids starting at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
    pub stats: DatasetStats,
    pub id_map: IdMap,
}

impl Dataset {
    pub fn has_literacy(&self) -> bool {
        self.stats.n_literacy.is_some()
    }

    /// Largest dense question id.
    pub fn n_questions(&self) -> usize {
        self.id_map.question.len()
    }

    pub fn n_kcs(&self) -> usize {
        self.id_map.kc.len()
    }

    /// Vocabulary of the literacy channel; KC ids stand in when the dataset
    /// carries no literacy labels.
    pub fn n_literacy(&self) -> usize {
        if self.has_literacy() {
            self.id_map.literacy.len()
        } else {
            self.n_kcs()
        }
    }

    /// Dense question ids observed with each literacy id (KC when absent).
    pub fn questions_by_literacy(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, std::collections::BTreeSet<usize>> = BTreeMap::new();
        for it in self.sequences.iter().flat_map(|s| &s.interactions) {
            out.entry(it.literacy_id.unwrap_or(it.kc_id))
                .or_default()
                .insert(it.question_id);
        }
        out.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {line}: {message}")]
    Row { line: u64, message: String },
    #[error("row {line}: duplicate order {order} for student `{student}`")]
    DuplicateOrder { line: u64, student: String, order: i64 },
    #[error("{bad} of {total} rows could not be parsed (more than 1%)")]
    TooManyUnparseable { bad: usize, total: usize },
    #[error("need at least 10 students to split, got {0}")]
    TooFewStudents(usize),
    #[error("ratio {0} must lie strictly between 0 and 1")]
    Ratio(f64),
    #[error("{table} id {id} is not in the vocabulary")]
    UnknownId { table: String, id: u64 },
    #[error("dataset is empty")]
    Empty,
}

impl DataError {
    /// True for malformed-input failures (as opposed to I/O problems).
    pub fn is_malformed_input(&self) -> bool {
        matches!(
            self,
            DataError::MissingColumn(_)
                | DataError::Row { .. }
                | DataError::DuplicateOrder { .. }
                | DataError::TooManyUnparseable { .. }
                | DataError::Csv(_)
                | DataError::Empty
        )
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}
