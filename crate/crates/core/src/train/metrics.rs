use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("AUC is undefined: labels contain only class {0}")]
    SingleClass(u8),
    #[error("metric needs at least one score")]
    Empty,
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Area under the ROC curve: the chance that a random positive scores above
/// a random negative, ties counting one half.
///
/// Rank-sum form: sort once, give tied groups their average rank, then
/// `(R+ - n+ (n+ + 1) / 2) / (n+ n-)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(MetricError::SingleClass(0));
    }
    if n_neg == 0 {
        return Err(MetricError::SingleClass(1));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives, kept integral until the end
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged: (i + j + 2) / 2
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += pos_in_group * (i + j + 2) as u128;
        i = j + 1;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Fraction of cases where `(score >= threshold) == label`.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| u8::from(s >= threshold) == y)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let s = [0.9, 0.8, 0.7, 0.1];
        let y = [1, 0, 1, 0];
        assert_eq!(auc(&s, &y).unwrap(), 0.75);
        assert_eq!(accuracy(&s, &y, 0.5).unwrap(), 0.75);
    }

    #[test]
    fn edge_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.3, 0.6], &[1, 1]), Err(MetricError::SingleClass(1)));
        assert_eq!(accuracy(&[0.9, 0.2], &[1, 0], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[], &[], 0.5), Err(MetricError::Empty));
    }
}
