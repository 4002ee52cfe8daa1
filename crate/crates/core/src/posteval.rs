//! Thresholding, hole filling, overlap metrics and fold reports.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::dataio::BinaryMask;
use crate::error::{Error, Result};
use crate::morphology::fill_holes;

/// Per-pixel lesion probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ProbMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<ProbMap> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} values for a {width}x{height} map", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
        }
        Ok(ProbMap { width, height, values })
    }

    /// 0/1 probabilities from a mask.
    pub fn from_mask(m: &BinaryMask) -> ProbMap {
        ProbMap { width: m.width(), height: m.height(), values: m.data().iter().map(|&b| b as u8 as f64).collect() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn threshold(&self, tau: f64) -> BinaryMask {
        BinaryMask::new(self.width, self.height, self.values.iter().map(|&v| v > tau).collect())
            .expect("dimensions preserved")
    }
}

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!("masks {:?} and {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `(|a ∩ b|, |a|, |b|)`.
pub fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize)> {
    check_dims(a, b)?;
    let inter = a.data().iter().zip(b.data()).filter(|(&x, &y)| x && y).count();
    Ok((inter, a.count(), b.count()))
}

fn jaccard_from(inter: usize, na: usize, nb: usize) -> f64 {
    let union = na + nb - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn dice_from(inter: usize, na: usize, nb: usize) -> f64 {
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Intersection over union; two empty masks score 1.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (i, na, nb) = overlap_counts(a, b)?;
    Ok(jaccard_from(i, na, nb))
}

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (i, na, nb) = overlap_counts(a, b)?;
    Ok(dice_from(i, na, nb))
}

/// Dice implied by a Jaccard value.
pub fn dice_from_jaccard(j: f64) -> f64 {
    2.0 * j / (1.0 + j)
}

/// Candidate thresholds 0.01, 0.02, …, 0.99.
pub fn threshold_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// Grid threshold maximizing mean Jaccard of `prob > τ` against the truths.
/// Ties go to the τ nearest 0.5, then to the smaller τ.
pub fn optimize_threshold(probs: &[ProbMap], truths: &[BinaryMask]) -> Result<f64> {
    if probs.is_empty() || probs.len() != truths.len() {
        return Err(Error::invalid(format!(
            "need equal non-empty lists, got {} maps and {} masks",
            probs.len(),
            truths.len()
        )));
    }
    let grid = threshold_grid();
    let mut per_tau: Vec<Vec<f64>> = vec![Vec::with_capacity(probs.len()); grid.len()];
    for (p, t) in probs.iter().zip(truths) {
        if (p.width, p.height) != t.dims() {
            return Err(Error::DimensionMismatch(format!("map {}x{} vs mask {:?}", p.width, p.height, t.dims())));
        }
        // above[k]: pixels with p > grid[k]; hits[k]: those also in the truth.
        let mut above = vec![0usize; grid.len() + 1];
        let mut hits = vec![0usize; grid.len() + 1];
        for (&v, &truth) in p.values.iter().zip(t.data()) {
            let passed = grid.partition_point(|&tau| v > tau);
            above[passed] += 1;
            hits[passed] += truth as usize;
        }
        let n_truth = t.count();
        let (mut pred, mut inter) = (0, 0);
        for k in (0..grid.len()).rev() {
            pred += above[k + 1];
            inter += hits[k + 1];
            per_tau[k].push(jaccard_from(inter, pred, n_truth));
        }
    }
    let means: Vec<f64> = per_tau
        .into_iter()
        .map(|mut js| {
            js.sort_by(f64::total_cmp);
            js.iter().sum::<f64>() / js.len() as f64
        })
        .collect();
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tau = grid
        .iter()
        .zip(&means)
        .filter(|(_, &m)| m == best)
        .map(|(&tau, _)| tau)
        .min_by(|a, b| (a - 0.5).abs().total_cmp(&(b - 0.5).abs()).then(a.total_cmp(b)))
        .expect("grid is non-empty");
    Ok(tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Unet1A,
    Unet1B,
    Cluster2,
}

impl Algorithm {
    /// Report column order.
    pub const ALL: [Algorithm; 3] = [Algorithm::Unet1A, Algorithm::Unet1B, Algorithm::Cluster2];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Unet1A => "1A",
            Algorithm::Unet1B => "1B",
            Algorithm::Cluster2 => "2",
        }
    }

    pub fn from_label(s: &str) -> Option<Algorithm> {
        Algorithm::ALL.into_iter().find(|a| a.label().eq_ignore_ascii_case(s))
    }
}

/// Turns a probability map into a final mask. 1A always cuts at 0.5 and
/// keeps the raw result; 1B cuts at `tau` and fills holes.
pub fn binarize_and_clean(p: &ProbMap, tau: f64, algorithm: Algorithm) -> BinaryMask {
    match algorithm {
        Algorithm::Unet1A => p.threshold(0.5),
        Algorithm::Unet1B => fill_holes(&p.threshold(tau)),
        Algorithm::Cluster2 => p.threshold(tau),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    /// Zero-based fold index.
    pub fold: usize,
    pub algorithm: Algorithm,
    pub jaccard: f64,
    pub dice: f64,
}

/// Mean Jaccard and Dice over the validation ids of one fold.
pub fn evaluate_fold(
    fold: usize,
    algorithm: Algorithm,
    ids: &[String],
    predictions: &HashMap<String, BinaryMask>,
    truths: &HashMap<String, BinaryMask>,
) -> Result<EvalRow> {
    if ids.is_empty() {
        return Err(Error::invalid(format!("fold {fold} has no validation samples")));
    }
    let (mut js, mut ds) = (Vec::with_capacity(ids.len()), Vec::with_capacity(ids.len()));
    for id in ids {
        let pred = predictions.get(id).ok_or_else(|| Error::MissingPrediction(id.clone()))?;
        let truth = truths.get(id).ok_or_else(|| Error::invalid(format!("no truth mask for {id}")))?;
        let (i, na, nb) = overlap_counts(pred, truth)?;
        js.push(jaccard_from(i, na, nb));
        ds.push(dice_from(i, na, nb));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(EvalRow { fold, algorithm, jaccard: mean(&js), dice: mean(&ds) })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean_jaccard: f64,
    pub mean_dice: f64,
    pub sigma_jaccard: f64,
    pub sigma_dice: f64,
}

fn mean_sigma(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Per-fold rows with mean and population standard deviation per algorithm.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<EvalRow>,
    /// Free-form note on how thresholds were chosen.
    pub threshold_mode: Option<String>,
}

pub fn emit_report(rows: Vec<EvalRow>) -> ReportTable {
    let mut rows = rows;
    rows.sort_by_key(|r| (r.algorithm, r.fold));
    ReportTable { rows, threshold_mode: None }
}

impl ReportTable {
    pub fn algorithms(&self) -> Vec<Algorithm> {
        Algorithm::ALL.into_iter().filter(|a| self.rows.iter().any(|r| r.algorithm == *a)).collect()
    }

    pub fn folds(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.rows.iter().map(|r| r.fold).collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    pub fn summary(&self, algorithm: Algorithm) -> Option<Summary> {
        let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.algorithm == algorithm).collect();
        if rows.is_empty() {
            return None;
        }
        let (mj, sj) = mean_sigma(&rows.iter().map(|r| r.jaccard).collect::<Vec<_>>());
        let (md, sd) = mean_sigma(&rows.iter().map(|r| r.dice).collect::<Vec<_>>());
        Some(Summary { mean_jaccard: mj, mean_dice: md, sigma_jaccard: sj, sigma_dice: sd })
    }

    /// `fold,algorithm,jaccard,dice` with folds numbered from 1, then `m` and `sigma` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,algorithm,jaccard,dice\n");
        for alg in self.algorithms() {
            for r in self.rows.iter().filter(|r| r.algorithm == alg) {
                writeln!(out, "{},{},{:.6},{:.6}", r.fold + 1, alg.label(), r.jaccard, r.dice).unwrap();
            }
            let s = self.summary(alg).expect("algorithm has rows");
            writeln!(out, "m,{},{:.6},{:.6}", alg.label(), s.mean_jaccard, s.mean_dice).unwrap();
            writeln!(out, "sigma,{},{:.6},{:.6}", alg.label(), s.sigma_jaccard, s.sigma_dice).unwrap();
        }
        out
    }

    /// Aligned table, one column per algorithm, cells as `J (D)`.
    pub fn to_text(&self) -> String {
        let algs = self.algorithms();
        let cell = |j: f64, d: f64| format!("{j:.2} ({d:.2})");
        let mut lines: Vec<Vec<String>> =
            vec![std::iter::once("Fold".to_string()).chain(algs.iter().map(|a| a.label().to_string())).collect()];
        for fold in self.folds() {
            let mut line = vec![(fold + 1).to_string()];
            for &a in &algs {
                let r = self.rows.iter().find(|r| r.algorithm == a && r.fold == fold);
                line.push(r.map_or("-".into(), |r| cell(r.jaccard, r.dice)));
            }
            lines.push(line);
        }
        let summaries: Vec<Summary> = algs.iter().map(|&a| self.summary(a).expect("present")).collect();
        lines.push(
            std::iter::once("m".to_string())
                .chain(summaries.iter().map(|s| cell(s.mean_jaccard, s.mean_dice)))
                .collect(),
        );
        lines.push(
            std::iter::once("σ".to_string())
                .chain(summaries.iter().map(|s| cell(s.sigma_jaccard, s.sigma_dice)))
                .collect(),
        );
        let ncol = lines[0].len();
        let widths: Vec<usize> =
            (0..ncol).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        if let Some(mode) = &self.threshold_mode {
            writeln!(out, "# threshold: {mode}").unwrap();
        }
        for l in &lines {
            let cells: Vec<String> =
                l.iter().zip(&widths).map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count()))).collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
        }
        out
    }
}
