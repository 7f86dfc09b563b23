use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Maximize,
    Minimize,
}

/// Reduce-on-plateau learning rate control.
///
/// The first observed score always counts as an improvement. Afterwards, each
/// epoch that fails to strictly beat the best score so far is "bad"; once
/// `patience` bad epochs have accumulated in a row, the learning rate is
/// multiplied by `factor` and the counter resets.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    learning_rate: f64,
    factor: f64,
    patience: usize,
    objective: Objective,
    best: Option<f64>,
    bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauStep {
    pub improved: bool,
    pub bad_epochs: usize,
    /// The reduced rate when this step triggered annealing.
    pub annealed_to: Option<f64>,
}

impl PlateauScheduler {
    pub fn new(learning_rate: f64, factor: f64, patience: usize, objective: Objective) -> Self {
        PlateauScheduler {
            learning_rate,
            factor,
            patience,
            objective,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn step(&mut self, score: f64) -> PlateauStep {
        let improved = match self.best {
            None => true,
            Some(b) => match self.objective {
                Objective::Maximize => score > b,
                Objective::Minimize => score < b,
            },
        };
        let mut annealed_to = None;
        if improved {
            self.best = Some(score);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.learning_rate *= self.factor;
                self.bad_epochs = 0;
                annealed_to = Some(self.learning_rate);
            }
        }
        PlateauStep {
            improved,
            bad_epochs: self.bad_epochs,
            annealed_to,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_scores_anneal_after_patience_bad_epochs() {
        let mut s = PlateauScheduler::new(0.1, 0.5, 3, Objective::Maximize);
        let steps: Vec<_> = (0..8).map(|_| s.step(0.4)).collect();
        assert!(steps[0].improved);
        assert_eq!(steps[1].annealed_to, None);
        assert_eq!(steps[2].annealed_to, None);
        assert_eq!(steps[3].annealed_to, Some(0.05));
        assert_eq!(steps[6].annealed_to, Some(0.025));
        assert_eq!(s.learning_rate(), 0.025);
    }

    #[test]
    fn improvement_resets_counter() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 2, Objective::Minimize);
        s.step(3.0);
        s.step(3.5);
        assert!(s.step(2.0).improved);
        assert_eq!(s.step(2.0).annealed_to, None);
        assert_eq!(s.step(2.0).annealed_to, Some(0.5));
    }
}
