use std::collections::BTreeMap;

use serde::Serialize;

use super::{Model, ModelError};
use crate::autodiff::Tape;
use crate::data::{Batch, Window};
use crate::layers::Mode;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub student_id: String,
    pub step: usize,
    pub literacy_id: usize,
    pub prob: f64,
}

/// Ability-channel state `b_t` at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StateRow {
    pub student_id: String,
    pub step: usize,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Trajectories {
    pub rows: Vec<TrajectoryRow>,
    pub states: Vec<StateRow>,
}

/// Counterfactual literacy probe.
///
/// At every real step `t` of every window, the model is asked how likely a
/// correct answer would be if the next question came from literacy
/// dimension `l`. The history up to `t` stays factual; only `l_next` and
/// `q_next` at `t` change, with `q_next` running over the questions seen with
/// `l` (`probes[l]`) and the probabilities averaged. An empty question list
/// probes with the padding question. `step` in the output counts from the
/// start of the student's sequence.
pub fn extract_trajectories(
    model: &Model,
    windows: &[Window],
    probes: &BTreeMap<usize, Vec<usize>>,
    batch_size: usize,
) -> Result<Trajectories, ModelError> {
    if model.tlsqkt().is_none() {
        return Err(ModelError::Config(
            "trajectories need a literacy tracing variant, not the DKT baseline".into(),
        ));
    }
    if let Some((&dim, _)) = probes.iter().find(|(&d, _)| d == 0 || d > model.dims.n_literacy) {
        return Err(ModelError::Config(format!(
            "literacy id {dim} is outside the model vocabulary 1..={}",
            model.dims.n_literacy
        )));
    }
    let mut out = Trajectories::default();
    let refs: Vec<&Window> = windows.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let batch = Batch::from_windows(chunk);
        let (rows, steps) = (batch.batch_size, batch.steps);

        let mut tape = Tape::new();
        let v = model.forward_unchecked(&mut tape, &batch, &mut Mode::Eval)?;
        let s = v.literacy_states.expect("literacy tracing variant");
        let width = tape.shape(s)[2];
        let states = tape.value(s).to_vec();

        // probs[d][r * steps + t]
        let mut probs = vec![vec![0.0; rows * steps]; probes.len()];
        for t in 0..steps {
            let prefix = batch.prefix(t + 1);
            let last = |r: usize| r * (t + 1) + t;
            for (d, (&dim, questions)) in probes.iter().enumerate() {
                let qs: &[usize] = if questions.is_empty() { &[0] } else { questions };
                for &q in qs {
                    let mut probe = prefix.clone();
                    for r in 0..rows {
                        if probe.step_mask[last(r)] {
                            probe.q_next[last(r)] = q;
                            probe.l_next[last(r)] = dim;
                        }
                    }
                    let mut tape = Tape::new();
                    let v = model.forward_unchecked(&mut tape, &probe, &mut Mode::Eval)?;
                    let p = tape.value(v.probs);
                    for r in 0..rows {
                        probs[d][r * steps + t] += p[last(r)] / qs.len() as f64;
                    }
                }
            }
        }

        for (r, w) in chunk.iter().enumerate() {
            for t in 0..w.len() {
                let i = r * steps + t;
                let step = w.start + t;
                for (d, &dim) in probes.keys().enumerate() {
                    out.rows.push(TrajectoryRow {
                        student_id: w.student_id.clone(),
                        step,
                        literacy_id: dim,
                        prob: probs[d][i],
                    });
                }
                out.states.push(StateRow {
                    student_id: w.student_id.clone(),
                    step,
                    state: states[i * width..(i + 1) * width].to_vec(),
                });
            }
        }
    }
    Ok(out)
}
