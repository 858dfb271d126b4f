use std::ops::Range;

use thiserror::Error;

use super::Sequence;

/// A contiguous slice of one student's sequence, at most `max_seq_len` long.
///
/// Literacy ids fall back to KC ids when the dataset has no literacy labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub student_id: String,
    pub start: usize,
    pub question: Vec<usize>,
    pub kc: Vec<usize>,
    pub literacy: Vec<usize>,
    pub correct: Vec<u8>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.question.len()
    }

    pub fn is_empty(&self) -> bool {
        self.question.is_empty()
    }

    /// Positions that have a next step to predict.
    pub fn n_targets(&self) -> usize {
        self.len().saturating_sub(1)
    }
}

/// Cuts every sequence into consecutive non-overlapping windows.
///
/// Every interaction lands in exactly one window.
pub fn window_sequences(sequences: &[Sequence], max_seq_len: usize) -> Vec<Window> {
    assert!(max_seq_len >= 2, "max_seq_len must be at least 2");
    let mut out = Vec::new();
    for seq in sequences {
        for (w, chunk) in seq.interactions.chunks(max_seq_len).enumerate() {
            out.push(Window {
                student_id: seq.student_id.clone(),
                start: w * max_seq_len,
                question: chunk.iter().map(|i| i.question_id).collect(),
                kc: chunk.iter().map(|i| i.kc_id).collect(),
                literacy: chunk.iter().map(|i| i.literacy_id.unwrap_or(i.kc_id)).collect(),
                correct: chunk.iter().map(|i| i.correct).collect(),
            });
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum BatchError {
    #[error("batch has {steps} steps but max_seq_len is {max}")]
    TooLong { steps: usize, max: usize },
    #[error("row {row}, step {step}: target misaligned with the next interaction")]
    Misaligned { row: usize, step: usize },
    #[error("field `{field}` has length {len}, expected {expected}")]
    Length { field: &'static str, len: usize, expected: usize },
}

/// Right-padded `[B, T]` tensors ready for a forward pass.
///
/// Position `t` carries interaction `t` of its window; `targets[t]` is the
/// correctness of interaction `t + 1` and `q_next`/`kc_next`/`l_next` are its
/// ids. `step_mask` marks real interactions, `valid_mask` marks positions
/// with a target. Padded cells hold id 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub steps: usize,
    pub q_ids: Vec<usize>,
    pub kc_ids: Vec<usize>,
    pub l_ids: Vec<usize>,
    pub responses: Vec<u8>,
    pub q_next: Vec<usize>,
    pub kc_next: Vec<usize>,
    pub l_next: Vec<usize>,
    pub targets: Vec<f64>,
    pub step_mask: Vec<bool>,
    pub valid_mask: Vec<bool>,
    pub window_origin: Vec<(String, usize)>,
}

impl Batch {
    /// Pads to the longest window in `windows`.
    pub fn from_windows(windows: &[&Window]) -> Self {
        let steps = windows.iter().map(|w| w.len()).max().unwrap_or(1).max(1);
        Self::with_steps(windows, steps)
    }

    pub fn with_steps(windows: &[&Window], steps: usize) -> Self {
        let n = windows.len() * steps;
        let mut b = Self {
            batch_size: windows.len(),
            steps,
            q_ids: vec![0; n],
            kc_ids: vec![0; n],
            l_ids: vec![0; n],
            responses: vec![0; n],
            q_next: vec![0; n],
            kc_next: vec![0; n],
            l_next: vec![0; n],
            targets: vec![0.0; n],
            step_mask: vec![false; n],
            valid_mask: vec![false; n],
            window_origin: windows.iter().map(|w| (w.student_id.clone(), w.start)).collect(),
        };
        for (r, w) in windows.iter().enumerate() {
            for t in 0..w.len().min(steps) {
                let i = r * steps + t;
                b.q_ids[i] = w.question[t];
                b.kc_ids[i] = w.kc[t];
                b.l_ids[i] = w.literacy[t];
                b.responses[i] = w.correct[t];
                b.step_mask[i] = true;
                if t + 1 < w.len().min(steps) {
                    b.q_next[i] = w.question[t + 1];
                    b.kc_next[i] = w.kc[t + 1];
                    b.l_next[i] = w.literacy[t + 1];
                    b.targets[i] = f64::from(w.correct[t + 1]);
                    b.valid_mask[i] = true;
                }
            }
        }
        b
    }

    pub fn len(&self) -> usize {
        self.batch_size * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.batch_size == 0
    }

    pub fn n_targets(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }

    /// Sub-batch made of rows `rows`.
    pub fn rows(&self, rows: Range<usize>) -> Self {
        let span = rows.start * self.steps..rows.end * self.steps;
        Self {
            batch_size: rows.len(),
            steps: self.steps,
            q_ids: self.q_ids[span.clone()].to_vec(),
            kc_ids: self.kc_ids[span.clone()].to_vec(),
            l_ids: self.l_ids[span.clone()].to_vec(),
            responses: self.responses[span.clone()].to_vec(),
            q_next: self.q_next[span.clone()].to_vec(),
            kc_next: self.kc_next[span.clone()].to_vec(),
            l_next: self.l_next[span.clone()].to_vec(),
            targets: self.targets[span.clone()].to_vec(),
            step_mask: self.step_mask[span.clone()].to_vec(),
            valid_mask: self.valid_mask[span].to_vec(),
            window_origin: self.window_origin[rows].to_vec(),
        }
    }

    /// The first `steps` positions of every row. Targets whose next
    /// interaction falls outside the prefix are dropped from `valid_mask`.
    pub fn prefix(&self, steps: usize) -> Self {
        let steps = steps.clamp(1, self.steps);
        let width = self.steps;
        fn cut<T: Clone>(v: &[T], width: usize, steps: usize) -> Vec<T> {
            v.chunks(width).flat_map(|r| r[..steps].iter().cloned()).collect()
        }
        let mut valid_mask = cut(&self.valid_mask, width, steps);
        if steps < width {
            for row in valid_mask.chunks_mut(steps) {
                row[steps - 1] = false;
            }
        }
        Self {
            batch_size: self.batch_size,
            steps,
            q_ids: cut(&self.q_ids, width, steps),
            kc_ids: cut(&self.kc_ids, width, steps),
            l_ids: cut(&self.l_ids, width, steps),
            responses: cut(&self.responses, width, steps),
            q_next: cut(&self.q_next, width, steps),
            kc_next: cut(&self.kc_next, width, steps),
            l_next: cut(&self.l_next, width, steps),
            targets: cut(&self.targets, width, steps),
            step_mask: cut(&self.step_mask, width, steps),
            valid_mask,
            window_origin: self.window_origin.clone(),
        }
    }

    /// Checks lengths, the step bound and next-step alignment.
    pub fn validate(&self, max_seq_len: usize) -> Result<(), BatchError> {
        if self.steps > max_seq_len {
            return Err(BatchError::TooLong {
                steps: self.steps,
                max: max_seq_len,
            });
        }
        let n = self.len();
        let lengths = [
            ("q_ids", self.q_ids.len()),
            ("kc_ids", self.kc_ids.len()),
            ("l_ids", self.l_ids.len()),
            ("responses", self.responses.len()),
            ("q_next", self.q_next.len()),
            ("kc_next", self.kc_next.len()),
            ("l_next", self.l_next.len()),
            ("targets", self.targets.len()),
            ("step_mask", self.step_mask.len()),
            ("valid_mask", self.valid_mask.len()),
        ];
        for (field, len) in lengths {
            if len != n {
                return Err(BatchError::Length { field, len, expected: n });
            }
        }
        for row in 0..self.batch_size {
            for step in 0..self.steps {
                let i = row * self.steps + step;
                let padded_ok = self.step_mask[i] || (self.q_ids[i] == 0 && self.l_ids[i] == 0);
                if !padded_ok {
                    return Err(BatchError::Misaligned { row, step });
                }
                if !self.valid_mask[i] {
                    continue;
                }
                let next = i + 1;
                let aligned = step + 1 < self.steps
                    && self.step_mask[i]
                    && self.step_mask[next]
                    && self.q_next[i] == self.q_ids[next]
                    && self.kc_next[i] == self.kc_ids[next]
                    && self.l_next[i] == self.l_ids[next]
                    && self.targets[i] == f64::from(self.responses[next]);
                if !aligned {
                    return Err(BatchError::Misaligned { row, step });
                }
            }
        }
        Ok(())
    }
}

/// Windows every sequence and groups the windows into batches of
/// `batch_size` rows, in order. Windows with nothing to predict (a single
/// interaction) are dropped with a warning.
pub fn window_and_pad(sequences: &[Sequence], max_seq_len: usize, batch_size: usize) -> Vec<Batch> {
    let windows = window_sequences(sequences, max_seq_len);
    let (usable, dropped): (Vec<&Window>, Vec<&Window>) = windows.iter().partition(|w| w.n_targets() > 0);
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} window(s) with a single interaction (nothing to predict)",
            dropped.len()
        );
    }
    usable
        .chunks(batch_size.max(1))
        .map(Batch::from_windows)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;

    fn seq(id: &str, n: usize) -> Sequence {
        Sequence {
            student_id: id.into(),
            interactions: (0..n)
                .map(|i| Interaction {
                    student_id: id.into(),
                    order: i as i64,
                    question_id: i % 7 + 1,
                    kc_id: i % 3 + 1,
                    literacy_id: None,
                    correct: (i % 2) as u8,
                })
                .collect(),
        }
    }

    #[test]
    fn length_45_at_20() {
        let w = window_sequences(&[seq("a", 45)], 20);
        let lens: Vec<usize> = w.iter().map(Window::len).collect();
        assert_eq!(lens, vec![20, 20, 5]);
        assert_eq!(w[2].start, 40);
        assert_eq!(w[0].literacy, w[0].kc);
    }

    #[test]
    fn single_interaction_has_nothing_to_predict() {
        let batches = window_and_pad(&[seq("a", 1)], 20, 8);
        assert!(batches.is_empty());
        let w = window_sequences(&[seq("a", 1)], 20);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].n_targets(), 0);
    }

    #[test]
    fn target_count_matches_counting_oracle() {
        let lens = [1, 2, 19, 20, 21, 40, 45, 77];
        let seqs: Vec<Sequence> = lens.iter().enumerate().map(|(i, &n)| seq(&format!("s{i}"), n)).collect();
        let batches = window_and_pad(&seqs, 20, 3);
        let got: usize = batches.iter().map(Batch::n_targets).sum();
        let expect: usize = lens.iter().map(|&n| n - n.div_ceil(20)).sum();
        assert_eq!(got, expect);
        for b in &batches {
            assert!(b.steps <= 20);
            b.validate(20).unwrap();
        }
    }

    #[test]
    fn windows_preserve_every_interaction_once() {
        let seqs = vec![seq("a", 33), seq("b", 7)];
        let windows = window_sequences(&seqs, 10);
        let mut rebuilt: Vec<(String, usize)> = Vec::new();
        for w in &windows {
            for t in 0..w.len() {
                rebuilt.push((w.student_id.clone(), w.start + t));
            }
        }
        let expect: Vec<(String, usize)> = seqs
            .iter()
            .flat_map(|s| (0..s.len()).map(move |t| (s.student_id.clone(), t)))
            .collect();
        assert_eq!(rebuilt, expect);
    }

    #[test]
    fn padding_and_shift() {
        let w = window_sequences(&[seq("a", 3), seq("b", 5)], 20);
        let b = Batch::from_windows(&[&w[0], &w[1]]);
        assert_eq!(b.steps, 5);
        assert_eq!(&b.step_mask[..5], &[true, true, true, false, false]);
        assert_eq!(&b.valid_mask[..5], &[true, true, false, false, false]);
        assert_eq!(b.q_ids[3], 0);
        assert_eq!(b.q_next[0], b.q_ids[1]);
        assert_eq!(b.targets[5], f64::from(b.responses[6]));
        b.validate(5).unwrap();
        assert!(matches!(b.validate(4), Err(BatchError::TooLong { .. })));

        let mut broken = b.clone();
        broken.q_next[1] = 99;
        assert_eq!(broken.validate(5), Err(BatchError::Misaligned { row: 0, step: 1 }));

        let sub = b.rows(1..2);
        assert_eq!(sub.batch_size, 1);
        assert_eq!(sub.q_ids, b.q_ids[5..].to_vec());
        sub.validate(5).unwrap();
    }

    #[test]
    fn prefix_keeps_leading_steps() {
        let w = window_sequences(&[seq("a", 3), seq("b", 5)], 20);
        let b = Batch::from_windows(&[&w[0], &w[1]]);
        let p = b.prefix(2);
        assert_eq!(p.steps, 2);
        assert_eq!(p.q_ids, vec![b.q_ids[0], b.q_ids[1], b.q_ids[5], b.q_ids[6]]);
        assert_eq!(p.valid_mask, vec![true, false, true, false]);
        p.validate(2).unwrap();
        assert_eq!(b.prefix(5), b);
        assert_eq!(b.prefix(9), b);
    }
}
