use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Independent random train/validation resplits of `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub seed: u64,
    pub n: usize,
    pub folds: Vec<Fold>,
}

/// Number of validation samples for a split, rounding half up.
fn validation_count(n: usize, train_frac: f64) -> usize {
    // 1 - 0.9 is slightly below 0.1 in binary; the nudge keeps exact halves rounding up.
    ((1.0 - train_frac) * n as f64 + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Draws `k` independent splits, each sampling `round((1-train_frac)·n)`
/// validation indices without replacement.
pub fn make_folds(n: usize, k: usize, train_frac: f64, seed: u64) -> Result<FoldPlan> {
    if k == 0 || n < k {
        return Err(Error::invalid(format!("need n >= k >= 1, got n={n}, k={k}")));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::invalid(format!("train fraction must be in (0,1), got {train_frac}")));
    }
    if (1.0 - train_frac) * n as f64 + 1e-9 < 1.0 {
        return Err(Error::invalid(format!("validation split of {n} samples at train fraction {train_frac} is empty")));
    }
    let n_val = validation_count(n, train_frac);
    if n_val >= n {
        return Err(Error::invalid(format!("training split of {n} samples at train fraction {train_frac} is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let folds = (0..k)
        .map(|_| {
            order.sort_unstable();
            order.shuffle(&mut rng);
            let mut validation = order[..n_val].to_vec();
            let mut train = order[n_val..].to_vec();
            validation.sort_unstable();
            train.sort_unstable();
            Fold { train, validation }
        })
        .collect();
    Ok(FoldPlan { seed, n, folds })
}

impl FoldPlan {
    /// `seed=<int>` followed by one comma-separated line of validation ids per fold.
    pub fn to_text(&self, ids: &[String]) -> Result<String> {
        if ids.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "fold plan covers {} samples but {} ids were given",
                self.n,
                ids.len()
            )));
        }
        let mut out = format!("seed={}\n", self.seed);
        for fold in &self.folds {
            let line: Vec<&str> = fold.validation.iter().map(|&i| ids[i].as_str()).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        Ok(out)
    }

    pub fn from_text(text: &str, ids: &[String]) -> Result<FoldPlan> {
        let bad = |m: String| Error::Format { what: "fold plan", message: m };
        let mut lines = text.lines();
        let seed = lines
            .next()
            .and_then(|l| l.strip_prefix("seed="))
            .ok_or_else(|| bad("first line must be seed=<int>".into()))?
            .trim()
            .parse::<u64>()
            .map_err(|e| bad(e.to_string()))?;
        let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut folds = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut validation = Vec::new();
            for id in line.split(',') {
                let i = *index.get(id.trim()).ok_or_else(|| bad(format!("unknown id {id}")))?;
                validation.push(i);
            }
            validation.sort_unstable();
            validation.dedup();
            let mut is_val = vec![false; ids.len()];
            for &i in &validation {
                is_val[i] = true;
            }
            let train = (0..ids.len()).filter(|&i| !is_val[i]).collect();
            folds.push(Fold { train, validation });
        }
        Ok(FoldPlan { seed, n: ids.len(), folds })
    }
}
