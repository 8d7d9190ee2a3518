use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Walk-forward fold: `train_years` consecutive years, then one test year.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    /// 1-based.
    pub index: usize,
    pub train_start: i32,
    pub train_end: i32,
    pub test_year: i32,
}

impl FoldSpec {
    pub fn is_train_year(&self, year: i32) -> bool {
        (self.train_start..=self.train_end).contains(&year)
    }

    pub fn label(&self) -> String {
        format!(
            "fold{} ({}-{} -> {})",
            self.index, self.train_start, self.train_end, self.test_year
        )
    }
}

pub fn build_folds(first_train_year: i32, n_folds: usize, train_years: usize) -> Result<Vec<FoldSpec>> {
    if n_folds == 0 {
        return Err(Error::validation("n_folds", "must be >= 1"));
    }
    if train_years == 0 {
        return Err(Error::validation("train_years", "must be >= 1"));
    }
    Ok((0..n_folds)
        .map(|i| {
            let start = first_train_year + i as i32;
            let end = start + train_years as i32 - 1;
            FoldSpec {
                index: i + 1,
                train_start: start,
                train_end: end,
                test_year: end + 1,
            }
        })
        .collect())
}

/// Every year a fold touches must have at least one sample.
pub fn check_coverage(folds: &[FoldSpec], years_present: &BTreeSet<i32>) -> Result<()> {
    let missing: BTreeSet<i32> = folds
        .iter()
        .flat_map(|f| f.train_start..=f.test_year)
        .filter(|y| !years_present.contains(y))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Coverage(format!(
            "no samples for year(s) {:?} required by the fold plan",
            missing
        )))
    }
}
