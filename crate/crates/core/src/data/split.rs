use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Sequence};

/// Student-level partition. No student appears in more than one part.
#[derive(Clone, Debug)]
pub struct StudentSplit {
    pub train: Vec<Sequence>,
    pub validation: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

fn partition(sequences: &[Sequence], ratio: f64, seed: u64) -> (Vec<Sequence>, Vec<Sequence>) {
    let mut idx: Vec<usize> = (0..sequences.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_first = (ratio * sequences.len() as f64).floor() as usize;
    let mut first: Vec<usize> = idx[..n_first].to_vec();
    let mut second: Vec<usize> = idx[n_first..].to_vec();
    // keep file order inside each part
    first.sort_unstable();
    second.sort_unstable();
    let pick = |v: Vec<usize>| v.into_iter().map(|i| sequences[i].clone()).collect();
    (pick(first), pick(second))
}

/// Splits students into `floor(ratio * n)` train+validation students and the
/// remaining test students, then carves `validation_fraction` of the
/// train+validation students off for early stopping.
pub fn split_students(
    sequences: &[Sequence],
    ratio: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<StudentSplit, DataError> {
    if sequences.len() < 10 {
        return Err(DataError::TooFewStudents(sequences.len()));
    }
    for r in [ratio, validation_fraction] {
        if !(r > 0.0 && r < 1.0) {
            return Err(DataError::Ratio(r));
        }
    }
    let (train_val, test) = partition(sequences, ratio, seed);
    let (train, validation) = partition(&train_val, 1.0 - validation_fraction, seed.wrapping_add(1));
    Ok(StudentSplit {
        train,
        validation,
        test,
    })
}
