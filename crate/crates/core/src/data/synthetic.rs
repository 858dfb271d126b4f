use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{io_err, DataError, Interaction, Sequence};
use crate::autodiff::sigmoid;

/// Shape and difficulty knobs for the synthetic literacy dataset.
///
/// Student `s` has, for each literacy dimension `l`,
/// `theta_l(t) = a_s + u_{s,l} + growth_l * (t / (seq_len - 1) - 1/2)`
/// with `a_s ~ N(0, ability_sd)` and `u_{s,l} ~ N(0, dimension_sd)`.
/// Every question has one KC, one literacy dimension and a difficulty
/// `d ~ N(0, difficulty_sd)`; a response is correct with probability
/// `sigmoid(theta_l(t) - d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_students: usize,
    pub n_questions: usize,
    pub n_kcs: usize,
    pub n_literacy: usize,
    pub seq_len: usize,
    pub seed: u64,
    pub ability_sd: f64,
    pub dimension_sd: f64,
    pub difficulty_sd: f64,
    /// Total logit growth over a sequence, per literacy dimension. Missing
    /// entries mean no growth.
    pub growth: Vec<f64>,
}

impl Default for SyntheticConfig {
    /// Matches the size of the private literacy dataset: 5224 students,
    /// 16 questions and KCs, 6 literacy dimensions, 16 steps each.
    fn default() -> Self {
        Self {
            n_students: 5224,
            n_questions: 16,
            n_kcs: 16,
            n_literacy: 6,
            seq_len: 16,
            seed: 7,
            ability_sd: 1.5,
            dimension_sd: 0.5,
            difficulty_sd: 1.0,
            growth: vec![3.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuestionInfo {
    pub question_id: usize,
    pub kc_id: usize,
    pub literacy_id: usize,
    pub difficulty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroundTruthRow {
    pub student_id: String,
    pub step: usize,
    pub literacy_id: usize,
    pub theta: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub sequences: Vec<Sequence>,
    pub questions: Vec<QuestionInfo>,
    pub ground_truth: Vec<GroundTruthRow>,
}

/// One Bernoulli draw with success probability `sigmoid(theta - difficulty)`.
pub fn sample_response(theta: f64, difficulty: f64, rng: &mut impl Rng) -> u8 {
    u8::from(rng.gen_bool(sigmoid(theta - difficulty)))
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd.max(0.0)).expect("finite sd")
}

pub fn generate_synthetic_literacy(config: &SyntheticConfig) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_q = config.n_questions.max(1);
    let n_k = config.n_kcs.max(1);
    let n_l = config.n_literacy.max(1);
    let questions: Vec<QuestionInfo> = (0..n_q)
        .map(|q| QuestionInfo {
            question_id: q + 1,
            kc_id: q % n_k + 1,
            literacy_id: q % n_l + 1,
            difficulty: normal(config.difficulty_sd).sample(&mut rng),
        })
        .collect();

    let width = config.n_students.to_string().len();
    let span = config.seq_len.saturating_sub(1).max(1) as f64;
    let growth = |l: usize| config.growth.get(l).copied().unwrap_or(0.0);
    let mut sequences = Vec::with_capacity(config.n_students);
    let mut ground_truth = Vec::with_capacity(config.n_students * config.seq_len * n_l);
    for s in 0..config.n_students {
        let student_id = format!("s{:0width$}", s + 1);
        let ability = normal(config.ability_sd).sample(&mut rng);
        let offsets: Vec<f64> = (0..n_l)
            .map(|_| normal(config.dimension_sd).sample(&mut rng))
            .collect();
        let theta = |l: usize, t: usize| ability + offsets[l] + growth(l) * (t as f64 / span - 0.5);
        let mut interactions = Vec::with_capacity(config.seq_len);
        for t in 0..config.seq_len {
            let q = &questions[rng.gen_range(0..n_q)];
            let correct = sample_response(theta(q.literacy_id - 1, t), q.difficulty, &mut rng);
            interactions.push(Interaction {
                student_id: student_id.clone(),
                order: t as i64 + 1,
                question_id: q.question_id,
                kc_id: q.kc_id,
                literacy_id: Some(q.literacy_id),
                correct,
            });
            for l in 0..n_l {
                ground_truth.push(GroundTruthRow {
                    student_id: student_id.clone(),
                    step: t,
                    literacy_id: l + 1,
                    theta: theta(l, t),
                });
            }
        }
        sequences.push(Sequence {
            student_id,
            interactions,
        });
    }
    SyntheticData {
        sequences,
        questions,
        ground_truth,
    }
}

/// Writes `student_id,step,literacy_id,theta`.
pub fn write_ground_truth(rows: &[GroundTruthRow], writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["student_id", "step", "literacy_id", "theta"])?;
    for r in rows {
        w.write_record([
            r.student_id.clone(),
            r.step.to_string(),
            r.literacy_id.to_string(),
            r.theta.to_string(),
        ])?;
    }
    w.flush().map_err(io_err("<ground truth writer>"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_canonical, DatasetStats};

    #[test]
    fn default_config_matches_literacy_dataset_shape() {
        let data = generate_synthetic_literacy(&SyntheticConfig::default());
        let stats = DatasetStats::from_sequences(&data.sequences);
        assert_eq!(
            stats,
            DatasetStats {
                n_students: 5224,
                n_questions: 16,
                n_kcs: 16,
                n_interactions: 83584,
                n_literacy: Some(6),
            }
        );
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let cfg = SyntheticConfig {
            n_students: 40,
            ..SyntheticConfig::default()
        };
        let render = || {
            let d = generate_synthetic_literacy(&cfg);
            let mut a = Vec::new();
            write_canonical(&d.sequences, &mut a).unwrap();
            write_ground_truth(&d.ground_truth, &mut a).unwrap();
            a
        };
        assert_eq!(render(), render());
        let other = generate_synthetic_literacy(&SyntheticConfig { seed: 8, ..cfg.clone() });
        let mut b = Vec::new();
        write_canonical(&other.sequences, &mut b).unwrap();
        assert_ne!(render()[..b.len().min(200)], b[..b.len().min(200)]);
    }

    #[test]
    fn balanced_student_answers_half_correct() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 20_000;
        let hits: usize = (0..draws).map(|_| sample_response(0.0, 0.0, &mut rng) as usize).sum();
        let rate = hits as f64 / draws as f64;
        assert!((rate - 0.5).abs() < 0.02, "{rate}");
    }

    #[test]
    fn empirical_rate_tracks_the_logistic_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        for &(theta, diff) in &[(-1.0, 0.5), (0.0, 0.0), (1.2, -0.4), (2.0, 0.0)] {
            let p = sigmoid(theta - diff);
            let hits: usize = (0..n).map(|_| sample_response(theta, diff, &mut rng) as usize).sum();
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((hits as f64 / n as f64 - p).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn ground_truth_grows_on_the_growing_dimension() {
        let cfg = SyntheticConfig {
            n_students: 3,
            ..SyntheticConfig::default()
        };
        let d = generate_synthetic_literacy(&cfg);
        assert_eq!(d.ground_truth.len(), 3 * 16 * 6);
        let dim1: Vec<f64> = d
            .ground_truth
            .iter()
            .filter(|r| r.student_id == d.sequences[0].student_id && r.literacy_id == 1)
            .map(|r| r.theta)
            .collect();
        assert!(dim1.windows(2).all(|w| w[1] > w[0]));
        assert!((dim1[15] - dim1[0] - 3.0).abs() < 1e-12);
    }
}
