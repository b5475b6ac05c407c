//! Early stopping on a validation objective.
//!
//! Improvement means a strict decrease of at least `min_delta` below the
//! best value seen so far; anything weaker (including a 1e-9 dip) counts as
//! a non-improving epoch. After `patience` consecutive non-improving epochs
//! the decision flips to stop. Callers snapshot weights when `improved` is
//! reported and restore them at the end, so the run never keeps anything
//! past best-epoch + patience.

pub const DEFAULT_MIN_DELTA: f64 = 1e-6;
pub const DEFAULT_PATIENCE: usize = 10;

#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: Option<usize>,
    bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        Self { patience, min_delta, best: f64::INFINITY, best_epoch: None, bad_epochs: 0 }
    }

    /// Record one epoch's validation loss.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = self.best - val_loss >= self.min_delta;
        if improved {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        StopDecision { improved, stop: self.bad_epochs >= self.patience }
    }

    /// Best (epoch, loss) seen — the reported validation result.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictly_decreasing_losses_never_stop() {
        let mut es = EarlyStopping::new(3, DEFAULT_MIN_DELTA);
        for epoch in 0..100 {
            let d = es.observe(epoch, 1.0 - epoch as f64 * 0.01);
            assert!(d.improved);
            assert!(!d.stop);
        }
        assert_eq!(es.best().unwrap().0, 99);
    }

    #[test]
    fn constant_losses_stop_after_patience_bad_epochs() {
        let mut es = EarlyStopping::new(10, DEFAULT_MIN_DELTA);
        assert!(es.observe(0, 0.5).improved); // first observation sets the best
        for epoch in 1..=9 {
            let d = es.observe(epoch, 0.5);
            assert!(!d.improved);
            assert!(!d.stop, "must not stop before the 10th bad epoch");
        }
        let d = es.observe(10, 0.5);
        assert!(d.stop, "10th consecutive non-improving epoch stops");
        assert_eq!(es.best().unwrap(), (0, 0.5));
    }

    #[test]
    fn tiny_decrease_below_threshold_is_not_improvement() {
        let mut es = EarlyStopping::new(2, 1e-6);
        es.observe(0, 1.0);
        let d = es.observe(1, 1.0 - 1e-9);
        assert!(!d.improved);
        // exactly the threshold counts
        let d = es.observe(2, 1.0 - 1e-6);
        assert!(d.improved);
    }

    #[test]
    fn counter_resets_on_improvement() {
        let mut es = EarlyStopping::new(3, 1e-6);
        es.observe(0, 1.0);
        es.observe(1, 1.0); // bad 1
        es.observe(2, 1.0); // bad 2
        let d = es.observe(3, 0.5); // improvement
        assert!(d.improved && !d.stop);
        es.observe(4, 0.5);
        es.observe(5, 0.5);
        let d = es.observe(6, 0.5);
        assert!(d.stop);
        assert_eq!(es.best().unwrap(), (3, 0.5));
    }

    #[test]
    fn best_tracks_the_minimum_of_the_curve() {
        let mut es = EarlyStopping::new(10, 1e-6);
        let losses = [0.9, 0.4, 0.6, 0.3, 0.8, 0.35];
        for (epoch, &l) in losses.iter().enumerate() {
            es.observe(epoch, l);
        }
        assert_eq!(es.best().unwrap(), (3, 0.3));
    }
}
