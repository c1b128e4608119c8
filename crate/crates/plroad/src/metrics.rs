//! Threshold-sweep road-detection metrics: MaxF, 11-point AP, and the
//! confusion-derived rates, pooled over a dataset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("score/mask shape mismatch: {scores} scores vs {mask} mask pixels")]
    ShapeMismatch { scores: usize, mask: usize },
    #[error("score {value} outside [0,1]")]
    ScoreOutOfRange { value: f64 },
    #[error("empty dataset")]
    EmptyDataset,
}

/// Per-pixel road probabilities for one image.
#[derive(Debug, Clone)]
pub struct ScoreMap {
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ScoreMap {
    pub fn new(scores: Vec<f64>, mask: Vec<bool>) -> Result<Self, MetricsError> {
        if scores.len() != mask.len() {
            return Err(MetricsError::ShapeMismatch { scores: scores.len(), mask: mask.len() });
        }
        if let Some(&v) = scores.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MetricsError::ScoreOutOfRange { value: v });
        }
        Ok(ScoreMap { scores, mask })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// Pixel is predicted road iff score >= threshold.
pub fn confusion(map: &ScoreMap, threshold: f64) -> ConfusionCounts {
    debug_assert!((0.0..=1.0).contains(&threshold));
    let mut c = ConfusionCounts::default();
    for (&s, &road) in map.scores.iter().zip(&map.mask) {
        let pred = s >= threshold;
        match (pred, road) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// All rates as fractions in [0,1]; empty denominators yield 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub accuracy: f64,
    pub iou: f64,
}

pub fn metric_set(c: &ConfusionCounts) -> MetricSet {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f_measure = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    MetricSet {
        precision,
        recall,
        f_measure,
        fpr: ratio(c.fp, c.fp + c.tn),
        fnr: ratio(c.fn_, c.fn_ + c.tp),
        accuracy: ratio(c.tp + c.tn, c.total()),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_),
    }
}

pub fn f_measure_from(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub const SWEEP_STEPS: usize = 256;

pub fn sweep_threshold(k: usize) -> f64 {
    k as f64 / (SWEEP_STEPS - 1) as f64
}

/// Pooled confusion counts at every threshold k/255 for k = 0..=255.
pub fn pooled_sweep(maps: &[ScoreMap]) -> Result<Vec<ConfusionCounts>, MetricsError> {
    if maps.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut out = vec![ConfusionCounts::default(); SWEEP_STEPS];
    for map in maps {
        // quantize once per pixel instead of re-scanning 256 times
        let mut pos_hist = [0u64; SWEEP_STEPS + 1];
        let mut neg_hist = [0u64; SWEEP_STEPS + 1];
        let mut pos_total = 0u64;
        let mut neg_total = 0u64;
        for (&s, &road) in map.scores.iter().zip(&map.mask) {
            // first sweep index whose threshold exceeds s
            let bucket = (s * (SWEEP_STEPS - 1) as f64).floor() as usize + 1;
            let bucket = bucket.min(SWEEP_STEPS);
            if road {
                pos_hist[bucket] += 1;
                pos_total += 1;
            } else {
                neg_hist[bucket] += 1;
                neg_total += 1;
            }
        }
        // prefix counts of pixels with score < threshold(k)
        let mut pos_below = 0u64;
        let mut neg_below = 0u64;
        for k in 0..SWEEP_STEPS {
            pos_below += pos_hist[k];
            neg_below += neg_hist[k];
            out[k].tp += pos_total - pos_below;
            out[k].fn_ += pos_below;
            out[k].fp += neg_total - neg_below;
            out[k].tn += neg_below;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxFResult {
    pub max_f: f64,
    pub threshold: f64,
    pub at_max: MetricSet,
}

/// Maximum F over the pooled 256-step sweep.
pub fn max_f_sweep(maps: &[ScoreMap]) -> Result<MaxFResult, MetricsError> {
    let sweep = pooled_sweep(maps)?;
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, c) in sweep.iter().enumerate() {
        let f = metric_set(c).f_measure;
        if f > best.1 {
            best = (k, f);
        }
    }
    let at_max = metric_set(&sweep[best.0]);
    Ok(MaxFResult { max_f: best.1, threshold: sweep_threshold(best.0), at_max })
}

/// 11-point interpolated average precision from the pooled sweep.
pub fn average_precision(maps: &[ScoreMap]) -> Result<f64, MetricsError> {
    let sweep = pooled_sweep(maps)?;
    let points: Vec<(f64, f64)> = sweep
        .iter()
        .map(|c| {
            let m = metric_set(c);
            (m.recall, m.precision)
        })
        .collect();
    let mut acc = 0.0;
    for level in 0..=10 {
        let r = level as f64 / 10.0;
        let best = points
            .iter()
            .filter(|(rec, _)| *rec + 1e-12 >= r)
            .map(|(_, pre)| *pre)
            .fold(0.0f64, f64::max);
        acc += best;
    }
    Ok(acc / 11.0)
}

/// Full metric bundle; percentages, mirroring the benchmark table layout.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub max_f: f64,
    pub ap: f64,
    pub precision: f64,
    pub recall: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub accuracy: f64,
    pub f_score: f64,
    pub iou: f64,
    pub threshold: f64,
    /// Interpolation/guard conventions, stated so reports are self-describing.
    pub notes: Vec<String>,
}

pub fn evaluate_scores(maps: &[ScoreMap]) -> Result<EvalReport, MetricsError> {
    let mf = max_f_sweep(maps)?;
    let ap = average_precision(maps)?;
    let m = mf.at_max;
    let mut notes = vec![
        "AP: 11-point interpolated over a 256-step threshold sweep".to_string(),
        "rates with an empty denominator are reported as 0".to_string(),
    ];
    if m.precision == 0.0 || m.recall == 0.0 {
        notes.push("degenerate class present at the MaxF threshold".to_string());
    }
    Ok(EvalReport {
        max_f: mf.max_f * 100.0,
        ap: ap * 100.0,
        precision: m.precision * 100.0,
        recall: m.recall * 100.0,
        fpr: m.fpr * 100.0,
        fnr: m.fnr * 100.0,
        accuracy: m.accuracy * 100.0,
        f_score: mf.max_f * 100.0,
        iou: m.iou * 100.0,
        threshold: mf.threshold,
        notes,
    })
}

impl EvalReport {
    /// Plain-text table in benchmark column order.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str("MaxF (%)  AP (%)    PRE (%)   REC (%)   FPR (%)   FNR (%)   ACC (%)   F (%)     IoU (%)\n");
        s.push_str(&format!(
            "{:<10.2}{:<10.2}{:<10.2}{:<10.2}{:<10.2}{:<10.2}{:<10.2}{:<10.2}{:<10.2}\n",
            self.max_f, self.ap, self.precision, self.recall, self.fpr, self.fnr, self.accuracy, self.f_score, self.iou
        ));
        s
    }

    /// CSV of (threshold, precision, recall) sweep points for external plotting.
    pub fn sweep_csv(maps: &[ScoreMap]) -> Result<String, MetricsError> {
        let sweep = pooled_sweep(maps)?;
        let mut s = String::from("threshold,precision,recall\n");
        for (k, c) in sweep.iter().enumerate() {
            let m = metric_set(c);
            s.push_str(&format!("{:.6},{:.6},{:.6}\n", sweep_threshold(k), m.precision, m.recall));
        }
        Ok(s)
    }
}
