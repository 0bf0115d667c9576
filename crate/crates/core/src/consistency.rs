//! Cross-source drift consistency.
//!
//! For each source a Gaussian naive Bayes model learns, from the peers'
//! batch drift levels, when that source should drift. Segments whose
//! posterior reaches the threshold `c` form the expected drift segments;
//! confirmed drifts outside them (allowing `delta_t` slack) are inconsistent.

use serde::{Deserialize, Serialize};

use crate::error::ConsistencyError;

/// Lower bound for class-conditional variances.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Batch drift levels and confirmation flags, `[source][segment]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftLevelGrid {
    pub sources: Vec<String>,
    pub levels: Vec<Vec<f64>>,
    pub confirmations: Vec<Vec<bool>>,
}

impl DriftLevelGrid {
    pub fn new(sources: Vec<String>, levels: Vec<Vec<f64>>, confirmations: Vec<Vec<bool>>) -> Self {
        debug_assert_eq!(sources.len(), levels.len());
        debug_assert_eq!(levels.len(), confirmations.len());
        Self { sources, levels, confirmations }
    }

    pub fn source_count(&self) -> usize {
        self.sources.len()
    }

    pub fn segment_count(&self) -> usize {
        self.levels.first().map_or(0, Vec::len)
    }

    /// Segments in which source `i` confirmed at least one drift.
    pub fn drift_segments(&self, i: usize) -> Vec<usize> {
        self.confirmations[i]
            .iter()
            .enumerate()
            .filter_map(|(t, &c)| c.then_some(t))
            .collect()
    }

    /// `y_i^t`: whether source `i` reached the confirmation level anywhere
    /// in `[t - delta_t, t + delta_t]`, either through a confirmed record
    /// or through the batch level itself.
    pub fn labels(&self, i: usize, delta_t: usize, confirm_level: f64) -> Vec<bool> {
        let n = self.segment_count();
        let hit: Vec<bool> = (0..n)
            .map(|t| self.confirmations[i][t] || self.levels[i][t] >= confirm_level)
            .collect();
        (0..n)
            .map(|t| {
                let lo = t.saturating_sub(delta_t);
                let hi = (t + delta_t).min(n.saturating_sub(1));
                hit[lo..=hi].iter().any(|&h| h)
            })
            .collect()
    }
}

/// Peer drift levels (`x_i^t`, source `i` left out) and labels `y_i^t`.
pub fn build_features(
    grid: &DriftLevelGrid,
    i: usize,
    delta_t: usize,
    confirm_level: f64,
) -> Result<(Vec<Vec<f64>>, Vec<bool>), ConsistencyError> {
    let m = grid.source_count();
    if m < 2 {
        return Err(ConsistencyError::SingleSource);
    }
    if i >= m {
        return Err(ConsistencyError::UnknownSource(i));
    }
    let features = (0..grid.segment_count())
        .map(|t| (0..m).filter(|&j| j != i).map(|j| grid.levels[j][t]).collect())
        .collect();
    Ok((features, grid.labels(i, delta_t, confirm_level)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian {
    fn fit<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let variance = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, variance: variance.max(VARIANCE_FLOOR) }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        -0.5 * ((2.0 * std::f64::consts::PI * self.variance).ln() + (x - self.mean).powi(2) / self.variance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    pub prior_yes: f64,
    pub prior_no: f64,
    pub yes: Vec<Gaussian>,
    pub no: Vec<Gaussian>,
}

/// Gaussian naive Bayes with add-one smoothed class priors. A class with
/// no samples borrows the pooled feature distribution, so its likelihood
/// ratio is 1 and the posterior falls back to the prior.
pub fn fit_nb(features: &[Vec<f64>], labels: &[bool]) -> Result<NbModel, ConsistencyError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(ConsistencyError::NoSamples);
    }
    let n = features.len();
    let dims = features[0].len();
    let n_yes = labels.iter().filter(|&&y| y).count();
    let prior_yes = (n_yes as f64 + 1.0) / (n as f64 + 2.0);

    let per_class = |want: Option<bool>| -> Vec<Gaussian> {
        (0..dims)
            .map(|k| {
                let column: Vec<f64> = features
                    .iter()
                    .zip(labels)
                    .filter(|(_, &y)| want.is_none_or(|w| w == y))
                    .map(|(x, _)| x[k])
                    .collect();
                Gaussian::fit(column.iter())
            })
            .collect()
    };
    let pooled = per_class(None);
    let yes = if n_yes > 0 { per_class(Some(true)) } else { pooled.clone() };
    let no = if n_yes < n { per_class(Some(false)) } else { pooled };

    Ok(NbModel { prior_yes, prior_no: 1.0 - prior_yes, yes, no })
}

impl NbModel {
    /// P(yes | x).
    pub fn posterior(&self, x: &[f64]) -> f64 {
        // per-feature differences stay exact when class conditionals coincide
        let evidence: f64 = self
            .yes
            .iter()
            .zip(&self.no)
            .zip(x)
            .map(|((gy, gn), &v)| gy.log_pdf(v) - gn.log_pdf(v))
            .sum();
        // logistic of the log-odds keeps extreme evidence finite
        let odds = (self.prior_yes.ln() - self.prior_no.ln()) + evidence;
        if odds >= 0.0 {
            1.0 / (1.0 + (-odds).exp())
        } else {
            let e = odds.exp();
            e / (1.0 + e)
        }
    }
}

/// Maximal runs of consecutive segments with `curve[t] >= c`, as inclusive
/// `[start, end]` pairs.
pub fn infer_segments(curve: &[f64], c: f64) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &p) in curve.iter().enumerate() {
        match (p >= c, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push([s, t - 1]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push([s, curve.len() - 1]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftVerdict {
    pub segment: usize,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    pub verdicts: Vec<DriftVerdict>,
    /// Verdict of the latest confirmation at or before each segment.
    pub timeline: Vec<Option<bool>>,
}

impl Judgement {
    pub fn any_inconsistent(&self) -> bool {
        self.verdicts.iter().any(|v| !v.consistent)
    }
}

/// A drift at `t` is consistent iff some inferred segment, widened by
/// `delta_t` on both sides, contains `t`.
pub fn judge(drift_segments: &[usize], segments: &[[usize; 2]], delta_t: usize, segment_count: usize) -> Judgement {
    let verdicts: Vec<DriftVerdict> = drift_segments
        .iter()
        .map(|&t| DriftVerdict {
            segment: t,
            consistent: segments
                .iter()
                .any(|&[a, b]| a.saturating_sub(delta_t) <= t && t <= b + delta_t),
        })
        .collect();
    let mut timeline = vec![None; segment_count];
    let mut current = None;
    let mut next = verdicts.iter().peekable();
    for (t, slot) in timeline.iter_mut().enumerate() {
        while let Some(v) = next.next_if(|v| v.segment <= t) {
            current = Some(v.consistent);
        }
        *slot = current;
    }
    Judgement { verdicts, timeline }
}

/// A fitted source: its posterior curve over the grid plus its drifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCurve {
    pub source: String,
    pub model: NbModel,
    pub curve: Vec<f64>,
    pub drift_segments: Vec<usize>,
}

pub fn fit_source(
    grid: &DriftLevelGrid,
    i: usize,
    delta_t: usize,
    confirm_level: f64,
) -> Result<SourceCurve, ConsistencyError> {
    let (features, labels) = build_features(grid, i, delta_t, confirm_level)?;
    let model = fit_nb(&features, &labels)?;
    let curve = features.iter().map(|x| model.posterior(x)).collect();
    Ok(SourceCurve {
        source: grid.sources[i].clone(),
        model,
        curve,
        drift_segments: grid.drift_segments(i),
    })
}

/// Fits every source; sources are independent so this runs in parallel.
pub fn fit_all(grid: &DriftLevelGrid, delta_t: usize, confirm_level: f64) -> Result<Vec<SourceCurve>, ConsistencyError> {
    use rayon::prelude::*;
    (0..grid.source_count())
        .into_par_iter()
        .map(|i| fit_source(grid, i, delta_t, confirm_level))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub source: String,
    pub curve: Vec<f64>,
    pub segments: Vec<[usize; 2]>,
    pub verdicts: Vec<DriftVerdict>,
    pub timeline: Vec<Option<bool>>,
    pub inconsistent: bool,
}

pub fn evaluate(curve: &SourceCurve, c: f64, delta_t: usize) -> ConsistencyResult {
    let segments = infer_segments(&curve.curve, c);
    let judgement = judge(&curve.drift_segments, &segments, delta_t, curve.curve.len());
    ConsistencyResult {
        source: curve.source.clone(),
        curve: curve.curve.clone(),
        inconsistent: judgement.any_inconsistent(),
        segments,
        verdicts: judgement.verdicts,
        timeline: judgement.timeline,
    }
}

/// Thresholds offered to the UI slider: 0.50, 0.55, ..., 0.95.
pub fn c_grid() -> Vec<f64> {
    (0..10).map(|k| f64::from(50 + 5 * k) / 100.0).collect()
}

/// Sources with at least one inconsistent drift at threshold `c`.
pub fn inconsistent_sources(curves: &[SourceCurve], c: f64, delta_t: usize) -> Vec<String> {
    curves
        .iter()
        .map(|sc| evaluate(sc, c, delta_t))
        .filter(|r| r.inconsistent)
        .map(|r| r.source)
        .collect()
}
