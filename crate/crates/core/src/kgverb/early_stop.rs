/// Stops after `patience` consecutive epochs without a strictly lower loss
/// than the best seen so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    wait: usize,
    epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            wait: 0,
            epochs: 0,
        }
    }

    /// Records one epoch's validation loss; true means stop now.
    pub fn should_stop(&mut self, loss: f64) -> bool {
        self.epochs += 1;
        if loss < self.best {
            self.best = loss;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        self.patience > 0 && self.wait >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn epochs_seen(&self) -> usize {
        self.epochs
    }

    /// 1-based epoch at which a run over `losses` ends, capped at `max_epochs`.
    pub fn stop_epoch(losses: &[f64], patience: usize, max_epochs: usize) -> usize {
        let mut es = EarlyStopping::new(patience);
        let limit = max_epochs.min(losses.len());
        for (i, &l) in losses.iter().take(limit).enumerate() {
            if es.should_stop(l) {
                return i + 1;
            }
        }
        limit
    }
}

/// Reference scan: for each epoch, look back at the whole prefix.
pub fn brute_force_stop_epoch(losses: &[f64], patience: usize, max_epochs: usize) -> usize {
    let limit = max_epochs.min(losses.len());
    if patience == 0 {
        return limit;
    }
    for end in 1..=limit {
        // index of the last strict improvement within the prefix
        let mut best_idx = 0;
        for i in 1..end {
            if losses[..i].iter().all(|&prev| losses[i] < prev) {
                best_idx = i;
            }
        }
        if end - 1 - best_idx >= patience {
            return end;
        }
    }
    limit
}
