//! Incremental-learning metrics over the lower-triangular accuracy matrix.
//! Entries are exact rationals (correct/total), so average accuracy and
//! forgetting are computed without floating-point drift; callers convert to
//! f64 only at the reporting boundary.

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use crate::error::{CoreError, Result};

/// Exact accuracy value, a fraction in [0, 1].
pub type Acc = Ratio<i64>;

/// Builds an accuracy from a correct/total count pair.
pub fn acc_from_counts(correct: u64, total: u64) -> Result<Acc> {
    if total == 0 {
        return Err(CoreError::InvalidArgument("accuracy needs total > 0".into()));
    }
    if correct > total {
        return Err(CoreError::InvalidArgument(format!(
            "correct {correct} exceeds total {total}"
        )));
    }
    Ok(Ratio::new(correct as i64, total as i64))
}

/// Lower-triangular grid of task accuracies. `a[k][j]` (1-based in the
/// public API) is the accuracy on task j's test set after learning task k;
/// internally rows are stored 0-based and row k holds k+1 entries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<Acc>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        AccuracyMatrix { rows: Vec::new() }
    }

    /// Appends the accuracies measured after learning the next task. Row k
    /// (1-based) must contain exactly k entries, tasks 1..=k in order.
    pub fn push_row(&mut self, row: Vec<Acc>) -> Result<()> {
        let expect = self.rows.len() + 1;
        if row.len() != expect {
            return Err(CoreError::DimensionMismatch(format!(
                "row {} must have {} entries, got {}",
                expect,
                expect,
                row.len()
            )));
        }
        for (j, a) in row.iter().enumerate() {
            if *a < Ratio::zero() || *a > Ratio::new(1, 1) {
                return Err(CoreError::InvalidArgument(format!(
                    "accuracy a[{}][{}] = {} outside [0, 1]",
                    expect,
                    j + 1,
                    a
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Number of completed stages (rows).
    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    /// Accuracy on task j after stage k, both 1-based.
    pub fn get(&self, k: usize, j: usize) -> Result<Acc> {
        if k == 0 || j == 0 || j > k || k > self.rows.len() {
            return Err(CoreError::InvalidArgument(format!(
                "entry ({k}, {j}) outside the populated triangle"
            )));
        }
        Ok(self.rows[k - 1][j - 1])
    }

    /// Average accuracy after stage k (1-based): mean of row k.
    pub fn avg_accuracy(&self, k: usize) -> Result<Acc> {
        if k == 0 || k > self.rows.len() {
            return Err(CoreError::InvalidArgument(format!(
                "stage {k} not populated (have {})",
                self.rows.len()
            )));
        }
        let row = &self.rows[k - 1];
        let sum: Acc = row.iter().sum();
        Ok(sum / Ratio::new(k as i64, 1))
    }

    /// Average forgetting after stage k >= 2: the mean over earlier tasks j
    /// of (best accuracy on j across stages j..k-1) minus (accuracy on j at
    /// stage k). Improvement on old tasks yields negative forgetting.
    pub fn forgetting(&self, k: usize) -> Result<Acc> {
        if k < 2 {
            return Err(CoreError::InvalidArgument(
                "forgetting is undefined before stage 2".into(),
            ));
        }
        if k > self.rows.len() {
            return Err(CoreError::InvalidArgument(format!(
                "stage {k} not populated (have {})",
                self.rows.len()
            )));
        }
        let mut sum = Acc::zero();
        for j in 1..k {
            let best = (j..k).map(|l| self.rows[l - 1][j - 1]).max().unwrap();
            sum += best - self.rows[k - 1][j - 1];
        }
        Ok(sum / Ratio::new((k - 1) as i64, 1))
    }
}

/// Converts an exact accuracy to f64 for reporting.
pub fn acc_to_f64(a: Acc) -> f64 {
    a.to_f64().expect("accuracy ratios fit in f64")
}
