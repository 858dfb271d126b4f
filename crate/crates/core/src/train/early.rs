/// Stops training after `patience` consecutive epochs without a strictly
/// better validation AUC. Epochs are numbered from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
}

/// Outcome of observing one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_auc: f64) -> Verdict {
        let improved = !val_auc.is_nan() && self.best.map_or(true, |b| val_auc > b);
        if improved {
            self.best = Some(val_auc);
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Verdict {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_ten_epochs_after_the_best() {
        let mut trace = vec![0.6, 0.7];
        trace.extend(std::iter::repeat(0.7).take(10));
        trace.extend([0.9, 0.95]);
        let mut es = EarlyStopping::new(10);
        let mut stopped = None;
        for (i, &auc) in trace.iter().enumerate() {
            if es.observe(i + 1, auc).stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(12));
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn nan_never_counts_as_improvement() {
        let mut es = EarlyStopping::new(2);
        es.observe(1, 0.6);
        assert!(!es.observe(2, f64::NAN).improved);
        assert!(es.observe(3, f64::NAN).stop);
    }
}
