use serde::{Deserialize, Serialize};

use super::mts::{NetworkMts, RowSpan, SplitRole};
use crate::error::{Error, Result};

/// Chronological train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            val_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("val_fraction", self.val_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Argument(format!("{name} = {f} must lie in (0, 1)")));
            }
        }
        let sum = self.train_fraction + self.val_fraction + self.test_fraction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Row counts: floor(train), floor(val), remainder to test.
    pub fn sizes(&self, t: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        // The epsilon absorbs products like 0.15 * 100 landing a hair below an integer.
        let train = (self.train_fraction * t as f64 + 1e-9).floor() as usize;
        let val = (self.val_fraction * t as f64 + 1e-9).floor() as usize;
        let test = t.saturating_sub(train + val);
        Ok((train, val, test))
    }

    /// Smallest total length whose every split holds at least `min_rows` rows.
    pub fn minimum_total(&self, min_rows: usize) -> Result<usize> {
        self.validate()?;
        let mut t = 3 * min_rows.max(1);
        loop {
            let (a, b, c) = self.sizes(t)?;
            if a >= min_rows && b >= min_rows && c >= min_rows {
                return Ok(t);
            }
            t += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: NetworkMts,
    pub val: NetworkMts,
    pub test: NetworkMts,
}

impl Splits {
    /// Errors unless every split can hold one window of `input_length + horizon` rows.
    pub fn check_windowing(&self, spec: &SplitSpec, input_length: usize, horizon: usize) -> Result<()> {
        let need = input_length + horizon;
        let sizes = [self.train.n_rows(), self.val.n_rows(), self.test.n_rows()];
        if sizes.iter().any(|&s| s < need) {
            let total: usize = sizes.iter().sum();
            return Err(Error::Config(format!(
                "splits of {sizes:?} rows cannot hold windows of L+H = {need} rows; \
                 need T >= {} (have {total})",
                spec.minimum_total(need)?
            )));
        }
        Ok(())
    }

    pub fn guard(&self) -> LeakageGuard {
        LeakageGuard {
            train: self.train.span(),
        }
    }
}

/// Contiguous chronological split: train earliest, then validation, then test.
pub fn split(data: &NetworkMts, spec: &SplitSpec) -> Result<Splits> {
    let t = data.n_rows();
    let (a, b, c) = spec.sizes(t)?;
    if a == 0 || b == 0 || c == 0 {
        return Err(Error::Config(format!(
            "T = {t} leaves an empty split ({a}, {b}, {c}); need T >= {}",
            spec.minimum_total(1)?
        )));
    }
    Ok(Splits {
        train: data.slice_rows(0..a)?.with_role(SplitRole::Train),
        val: data.slice_rows(a..a + b)?.with_role(SplitRole::Val),
        test: data.slice_rows(a + b..t)?.with_role(SplitRole::Test),
    })
}

/// Rejects fits over rows outside the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeakageGuard {
    train: RowSpan,
}

impl LeakageGuard {
    pub fn new(train: RowSpan) -> Self {
        Self { train }
    }

    pub fn train_span(&self) -> RowSpan {
        self.train
    }

    pub fn check(&self, fitted_on: &RowSpan) -> Result<()> {
        if fitted_on.dataset != self.train.dataset {
            return Err(Error::Leakage(format!(
                "fit fingerprint {:016x} belongs to another dataset than the training split {:016x}",
                fitted_on.dataset, self.train.dataset
            )));
        }
        if !self.train.contains(fitted_on) {
            return Err(Error::Leakage(format!(
                "fit covers rows {}..{} but the training split is rows {}..{}",
                fitted_on.start, fitted_on.end, self.train.start, self.train.end
            )));
        }
        Ok(())
    }
}
