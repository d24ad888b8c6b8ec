//! Coordinate-dispersion diagnostics: diagonal-normalized pairwise
//! distances pooled per condition, the closed-form unit-square expected
//! distance as a scale-aware baseline, per-resolution Monte-Carlo nulls,
//! number-frequency tables, and point-in-box accuracy.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::core::{PredictionRecord, RouteLabel};
use crate::providers::mix;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("no prediction records")]
    Empty,
    #[error("image {image_id:?} has {runs} predictions under the requested condition; at least 2 are required")]
    InsufficientRuns { image_id: String, runs: usize },
    #[error("predictions mix images: {first:?} vs {second:?}")]
    MixedImages { first: String, second: String },
    #[error("record {index} (image {image_id:?}) has no ground-truth box")]
    MissingGtBBox { index: usize, image_id: String },
    #[error("invalid Monte-Carlo parameters: {0}")]
    InvalidMcParams(String),
}

/// Expected Euclidean distance between two independent uniform points in
/// the unit square: `(2 + sqrt(2) + 5 ln(1 + sqrt(2))) / 15`, about
/// 0.521405433. The dispersion baseline for genuinely random predictions.
pub fn mu_square_closed_form() -> f64 {
    let sqrt2 = 2.0f64.sqrt();
    (2.0 + sqrt2 + 5.0 * (1.0 + sqrt2).ln()) / 15.0
}

/// A seeded Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Mean normalized distance between `n_samples` independent uniform point
/// pairs on `[0, width] x [0, height]`, normalized by the long image side
/// so the unit square reproduces [`mu_square_closed_form`] and a degenerate
/// strip approaches the one-dimensional mean of 1/3.
///
/// Each pair consumes four draws in the order `x1, y1, x2, y2`; the stream
/// is fully determined by `seed`.
pub fn expected_distance_mc(
    width: f64,
    height: f64,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate, AnalysisError> {
    if !(width > 0.0 && height > 0.0) {
        return Err(AnalysisError::InvalidMcParams(format!(
            "image sides must be positive, got {width} x {height}"
        )));
    }
    if n_samples < 2 {
        return Err(AnalysisError::InvalidMcParams(format!(
            "need at least 2 samples, got {n_samples}"
        )));
    }
    let norm = width.max(height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for _ in 0..n_samples {
        let x1 = rng.gen::<f64>() * width;
        let y1 = rng.gen::<f64>() * height;
        let x2 = rng.gen::<f64>() * width;
        let y2 = rng.gen::<f64>() * height;
        let d = (x1 - x2).hypot(y1 - y2) / norm;
        sum += d;
        sum_sq += d * d;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq - n * mean * mean).max(0.0) / (n - 1.0);
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        samples: n_samples,
    })
}

/// All pairwise diagonal-normalized distances of one image's predictions,
/// in index order `(0,1), (0,2), ..., (n-2,n-1)`.
pub fn pairwise_distances(preds: &[PredictionRecord]) -> Result<Vec<f64>, AnalysisError> {
    let first = preds.first().ok_or(AnalysisError::Empty)?;
    for p in preds.iter().skip(1) {
        if p.image.id != first.image.id
            || p.image.width != first.image.width
            || p.image.height != first.image.height
        {
            return Err(AnalysisError::MixedImages {
                first: first.image.id.clone(),
                second: p.image.id.clone(),
            });
        }
    }
    if preds.len() < 2 {
        return Err(AnalysisError::InsufficientRuns {
            image_id: first.image.id.clone(),
            runs: preds.len(),
        });
    }
    let diag = first.image.diagonal();
    let mut out = Vec::with_capacity(preds.len() * (preds.len() - 1) / 2);
    for i in 0..preds.len() {
        for j in (i + 1)..preds.len() {
            let a = preds[i].coord;
            let b = preds[j].coord;
            let dx = f64::from(a.x) - f64::from(b.x);
            let dy = f64::from(a.y) - f64::from(b.y);
            out.push(dx.hypot(dy) / diag);
        }
    }
    Ok(out)
}

/// Which route labels a dispersion report covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Normal,
    Shuffled,
}

impl Condition {
    pub fn matches(self, route: RouteLabel) -> bool {
        match self {
            Condition::Normal => route == RouteLabel::Normal,
            Condition::Shuffled => matches!(route, RouteLabel::Shuffled(_)),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::Normal => "normal",
            Condition::Shuffled => "shuffled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerImageDistance {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub runs: usize,
    pub pairs: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McNull {
    pub width: u32,
    pub height: u32,
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Pooled dispersion statistics for one condition: per-image means plus
/// the mean over all pairwise values, with the analytic baseline attached.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    pub condition: Condition,
    pub per_image: Vec<PerImageDistance>,
    pub pooled_mean: f64,
    pub pooled_pairs: usize,
    pub baseline_mu0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_null: Option<Vec<McNull>>,
}

/// Mean over all values pooled across groups (not the mean of group means).
pub(crate) fn pooled_mean(groups: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for g in groups {
        total += g.iter().sum::<f64>();
        count += g.len();
    }
    total / count as f64
}

/// Groups predictions of the requested condition by image, computes the
/// per-image mean pairwise distance and the pooled mean over all pairs.
/// Images are ordered by id; every image needs at least two runs.
pub fn pooled_report(
    preds: &[PredictionRecord],
    condition: Condition,
) -> Result<DistanceReport, AnalysisError> {
    let mut groups: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for p in preds {
        if condition.matches(p.route) {
            groups.entry(p.image.id.as_str()).or_default().push(p);
        }
    }
    if groups.is_empty() {
        return Err(AnalysisError::Empty);
    }

    let mut per_image = Vec::with_capacity(groups.len());
    let mut pooled: Vec<Vec<f64>> = Vec::with_capacity(groups.len());
    for (id, group) in groups {
        let owned: Vec<PredictionRecord> = group.iter().map(|&p| p.clone()).collect();
        let values = pairwise_distances(&owned)?;
        per_image.push(PerImageDistance {
            image_id: id.to_string(),
            width: owned[0].image.width,
            height: owned[0].image.height,
            runs: owned.len(),
            pairs: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
        });
        pooled.push(values);
    }
    let pooled_pairs = pooled.iter().map(Vec::len).sum();
    Ok(DistanceReport {
        condition,
        pooled_mean: pooled_mean(&pooled),
        pooled_pairs,
        per_image,
        baseline_mu0: mu_square_closed_form(),
        mc_null: None,
    })
}

impl DistanceReport {
    /// Attaches one Monte-Carlo null per distinct resolution present in the
    /// report. Per-resolution streams derive from `seed` and the resolution
    /// itself, so the null is independent of image order.
    pub fn with_mc_null(mut self, n_samples: usize, seed: u64) -> Result<Self, AnalysisError> {
        let mut resolutions: Vec<(u32, u32)> =
            self.per_image.iter().map(|p| (p.width, p.height)).collect();
        resolutions.sort_unstable();
        resolutions.dedup();
        let mut nulls = Vec::with_capacity(resolutions.len());
        for (w, h) in resolutions {
            let stream = mix(seed, (u64::from(w) << 32) | u64::from(h));
            let est = expected_distance_mc(f64::from(w), f64::from(h), n_samples, stream)?;
            nulls.push(McNull {
                width: w,
                height: h,
                estimate: est.estimate,
                std_error: est.std_error,
                samples: est.samples,
            });
        }
        self.mc_null = Some(nulls);
        Ok(self)
    }
}

/// One number with its occurrence count over prediction components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FrequencyEntry {
    pub number: u32,
    pub count: usize,
}

/// Top-k most frequent numbers appearing as x or y components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyReport {
    pub entries: Vec<FrequencyEntry>,
}

/// Counts every x and y component over all records and returns the `k`
/// most frequent numbers, ordered by descending count then ascending
/// number. Fewer than `k` distinct numbers yield a shorter list.
pub fn frequency_table(
    preds: &[PredictionRecord],
    k: usize,
) -> Result<FrequencyReport, AnalysisError> {
    if preds.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for p in preds {
        *counts.entry(p.coord.x).or_default() += 1;
        *counts.entry(p.coord.y).or_default() += 1;
    }
    let mut entries: Vec<FrequencyEntry> = counts
        .into_iter()
        .map(|(number, count)| FrequencyEntry { number, count })
        .collect();
    entries.sort_by(|a, b| b.count.cmp(&a.count).then(a.number.cmp(&b.number)));
    entries.truncate(k);
    Ok(FrequencyReport { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyCell {
    pub category: String,
    pub ui_type: String,
    pub hits: usize,
    pub total: usize,
    pub percent: f64,
}

/// Point-in-box accuracy split by (category, ui_type), with the unweighted
/// mean across cells and the raw overall rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyTable {
    pub cells: Vec<AccuracyCell>,
    pub average_percent: f64,
    pub overall_hits: usize,
    pub overall_total: usize,
    pub overall_percent: f64,
}

/// A prediction counts as a hit when its point lies inside the record's
/// ground-truth box, edges included. Every record must carry a box.
pub fn hit_accuracy(preds: &[PredictionRecord]) -> Result<AccuracyTable, AnalysisError> {
    if preds.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut cells: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    let mut overall_hits = 0usize;
    for (index, p) in preds.iter().enumerate() {
        let bbox = p.image.gt_bbox.ok_or_else(|| AnalysisError::MissingGtBBox {
            index,
            image_id: p.image.id.clone(),
        })?;
        let key = (
            p.image.category.clone().unwrap_or_else(|| "-".to_string()),
            p.image.ui_type.clone().unwrap_or_else(|| "-".to_string()),
        );
        let cell = cells.entry(key).or_insert((0, 0));
        cell.1 += 1;
        if bbox.contains(p.coord) {
            cell.0 += 1;
            overall_hits += 1;
        }
    }
    let cells: Vec<AccuracyCell> = cells
        .into_iter()
        .map(|((category, ui_type), (hits, total))| AccuracyCell {
            category,
            ui_type,
            hits,
            total,
            percent: 100.0 * hits as f64 / total as f64,
        })
        .collect();
    let average_percent = cells.iter().map(|c| c.percent).sum::<f64>() / cells.len() as f64;
    Ok(AccuracyTable {
        average_percent,
        overall_hits,
        overall_total: preds.len(),
        overall_percent: 100.0 * overall_hits as f64 / preds.len() as f64,
        cells,
    })
}
