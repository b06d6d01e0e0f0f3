//! Localization metrics over temporal segments.
//!
//! Recall at IoU threshold θ is the fraction of ground-truth segments matched
//! by a prediction with IoU ≥ θ; precision is the fraction of predictions
//! matched by a ground truth. Both are averaged over the thresholds and
//! combined into an F1 score.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mask::{fixed_uniform_params, MaskParams};

pub const IOU_THRESHOLDS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Segment {
    start: f64,
    end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(0.0 <= start && start < end && end <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "segment [{start}, {end}] is not inside [0, 1] with start < end"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn center(&self) -> f64 {
        (self.start + self.end) / 2.0
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

impl TryFrom<[f64; 2]> for Segment {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Segment::new(v[0], v[1])
    }
}

impl From<Segment> for [f64; 2] {
    fn from(s: Segment) -> Self {
        [s.start, s.end]
    }
}

/// `[c - w/2, c + w/2]` clipped to `[0, 1]`. A segment that collapses under
/// clipping becomes one frame wide around the center.
pub fn mask_to_segment(params: MaskParams, n_frames: usize) -> Segment {
    let (c, w) = (params.center(), params.width());
    let start = (c - w / 2.0).clamp(0.0, 1.0);
    let end = (c + w / 2.0).clamp(0.0, 1.0);
    if end > start {
        return Segment { start, end };
    }
    let half = 0.5 / n_frames.max(1) as f64;
    Segment {
        start: (c - half).max(0.0),
        end: (c + half).min(1.0),
    }
}

pub fn temporal_iou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    /// Each segment is scored by its best-IoU counterpart; one prediction may
    /// satisfy several ground truths.
    #[default]
    BestIou,
    /// Maximum one-to-one matching among pairs above the threshold.
    OneToOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocReport {
    pub thresholds: Vec<f64>,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall_avg: f64,
    pub precision_avg: f64,
    pub f1: f64,
}

fn harmonic(r: f64, p: f64) -> f64 {
    if r + p == 0.0 {
        0.0
    } else {
        2.0 * r * p / (r + p)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl LocReport {
    fn from_curves(thresholds: &[f64], recall: Vec<f64>, precision: Vec<f64>) -> Self {
        let recall_avg = mean(&recall);
        let precision_avg = mean(&precision);
        Self {
            thresholds: thresholds.to_vec(),
            recall,
            precision,
            recall_avg,
            precision_avg,
            f1: harmonic(recall_avg, precision_avg),
        }
    }

    /// Video-level average: per-threshold recall and precision are averaged
    /// over reports, and F1 is recomputed from the averages.
    pub fn average(reports: &[LocReport]) -> Result<LocReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::EmptyResult("no reports to average".into()))?;
        if reports.iter().any(|r| r.thresholds != first.thresholds) {
            return Err(Error::Shape("reports use different thresholds".into()));
        }
        let n = reports.len() as f64;
        let k = first.thresholds.len();
        let recall = (0..k)
            .map(|t| reports.iter().map(|r| r.recall[t]).sum::<f64>() / n)
            .collect();
        let precision = (0..k)
            .map(|t| reports.iter().map(|r| r.precision[t]).sum::<f64>() / n)
            .collect();
        Ok(Self::from_curves(&first.thresholds, recall, precision))
    }

    /// `key=value` block, values multiplied by `scale`.
    pub fn to_records(&self, label: &str, scale: f64) -> String {
        let mut s = format!("[{label}]\n");
        for (t, r) in self.thresholds.iter().zip(&self.recall) {
            let _ = writeln!(s, "recall@{t}={}", r * scale);
        }
        for (t, p) in self.thresholds.iter().zip(&self.precision) {
            let _ = writeln!(s, "precision@{t}={}", p * scale);
        }
        let _ = writeln!(s, "R@Avg={}", self.recall_avg * scale);
        let _ = writeln!(s, "P@Avg={}", self.precision_avg * scale);
        let _ = writeln!(s, "F1={}", self.f1 * scale);
        s
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["label".to_string()];
        cols.extend(self.thresholds.iter().map(|t| format!("R@{t}")));
        cols.extend(self.thresholds.iter().map(|t| format!("P@{t}")));
        cols.extend(["R@Avg", "P@Avg", "F1"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self, label: &str, scale: f64) -> String {
        let mut cols = vec![label.to_string()];
        cols.extend(self.recall.iter().map(|v| (v * scale).to_string()));
        cols.extend(self.precision.iter().map(|v| (v * scale).to_string()));
        cols.extend(
            [self.recall_avg, self.precision_avg, self.f1].map(|v| (v * scale).to_string()),
        );
        cols.join(",")
    }
}

pub fn localization_scores(
    preds: &[Segment],
    gts: &[Segment],
    thresholds: &[f64],
    matching: Matching,
) -> Result<LocReport> {
    if gts.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let iou: Vec<Vec<f64>> = gts
        .iter()
        .map(|g| preds.iter().map(|p| temporal_iou(p, g)).collect())
        .collect();
    let mut recall = Vec::with_capacity(thresholds.len());
    let mut precision = Vec::with_capacity(thresholds.len());
    for &theta in thresholds {
        if preds.is_empty() {
            recall.push(0.0);
            precision.push(0.0);
            continue;
        }
        let (gt_hits, pred_hits) = match matching {
            Matching::BestIou => {
                let gt_hits = iou
                    .iter()
                    .filter(|row| row.iter().copied().fold(0.0, f64::max) >= theta)
                    .count();
                let pred_hits = (0..preds.len())
                    .filter(|&p| iou.iter().map(|row| row[p]).fold(0.0, f64::max) >= theta)
                    .count();
                (gt_hits, pred_hits)
            }
            Matching::OneToOne => {
                let m = max_matching(&iou, preds.len(), theta);
                (m, m)
            }
        };
        recall.push(gt_hits as f64 / gts.len() as f64);
        precision.push(pred_hits as f64 / preds.len() as f64);
    }
    Ok(LocReport::from_curves(thresholds, recall, precision))
}

/// Size of a maximum bipartite matching over pairs with IoU ≥ `theta`
/// (augmenting paths).
fn max_matching(iou: &[Vec<f64>], n_preds: usize, theta: f64) -> usize {
    fn augment(
        g: usize,
        iou: &[Vec<f64>],
        theta: f64,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for p in 0..owner.len() {
            if iou[g][p] >= theta && !seen[p] {
                seen[p] = true;
                if owner[p].is_none_or(|o| augment(o, iou, theta, seen, owner)) {
                    owner[p] = Some(g);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; n_preds];
    (0..iou.len())
        .filter(|&g| augment(g, iou, theta, &mut vec![false; n_preds], &mut owner))
        .count()
}

/// Mean over ground truths of the best IoU any prediction achieves.
pub fn mean_best_iou(preds: &[Segment], gts: &[Segment]) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let sum: f64 = gts
        .iter()
        .map(|g| preds.iter().map(|p| temporal_iou(p, g)).fold(0.0, f64::max))
        .sum();
    Ok(sum / gts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthStats {
    /// Population standard deviation of widths for each eligible video.
    pub per_video: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl WidthStats {
    pub fn to_records(&self, label: &str) -> String {
        format!(
            "[{label}]\nvideos={}\nwidth_std_mean={}\nwidth_std_min={}\nwidth_std_max={}\n",
            self.per_video.len(),
            self.mean,
            self.min,
            self.max
        )
    }
}

pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Width spread per video (videos with fewer than two events are skipped)
/// and its corpus mean, min and max.
pub fn width_stats(widths_per_video: &[Vec<f64>]) -> Result<WidthStats> {
    let per_video: Vec<f64> = widths_per_video
        .iter()
        .filter(|w| w.len() >= 2)
        .map(|w| population_std(w))
        .collect();
    if per_video.is_empty() {
        return Err(Error::EmptyResult(
            "no video with at least two events".into(),
        ));
    }
    Ok(WidthStats {
        mean: mean(&per_video),
        min: per_video.iter().copied().fold(f64::INFINITY, f64::min),
        max: per_video.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        per_video,
    })
}

/// Scores of one parameter set over a whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetEval {
    /// Video-level average against the full ground truth (annotated and
    /// hidden events).
    pub report: LocReport,
    /// Per-video mean best IoU, averaged over videos.
    pub mean_best_iou: f64,
    /// Mean absolute distance between each mask center and the center of
    /// the annotated event with the same caption index.
    pub center_error: f64,
}

/// Evaluates one mask per caption for every video.
pub fn evaluate_dataset(
    dataset: &Dataset,
    params: &[Vec<MaskParams>],
    matching: Matching,
) -> Result<DatasetEval> {
    if dataset.videos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset.require_ground_truth()?;
    if params.len() != dataset.videos.len() {
        return Err(Error::Shape(format!(
            "{} parameter sets for {} videos",
            params.len(),
            dataset.videos.len()
        )));
    }
    let mut reports = Vec::with_capacity(params.len());
    let mut best = Vec::with_capacity(params.len());
    let mut center_sum = 0.0;
    let mut center_count = 0usize;
    for (video, ps) in dataset.videos.iter().zip(params) {
        if ps.len() != video.n_events() {
            return Err(Error::Shape(format!(
                "video `{}`: {} masks for {} captions",
                video.id,
                ps.len(),
                video.n_events()
            )));
        }
        let preds: Vec<Segment> = ps
            .iter()
            .map(|p| mask_to_segment(*p, dataset.n_frames))
            .collect();
        let gts = video.full_ground_truth()?;
        reports.push(localization_scores(
            &preds,
            &gts,
            &IOU_THRESHOLDS,
            matching,
        )?);
        best.push(mean_best_iou(&preds, &gts)?);
        for (p, g) in ps.iter().zip(video.segments.iter().flatten()) {
            center_sum += (p.center() - g.center()).abs();
            center_count += 1;
        }
    }
    Ok(DatasetEval {
        report: LocReport::average(&reports)?,
        mean_best_iou: mean(&best),
        center_error: center_sum / center_count.max(1) as f64,
    })
}

/// The untrained fixed-uniform masks for every video.
pub fn baseline_params(dataset: &Dataset) -> Result<Vec<Vec<MaskParams>>> {
    dataset
        .videos
        .iter()
        .map(|v| fixed_uniform_params(v.n_events()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: f64, b: f64) -> Segment {
        Segment::new(a, b).unwrap()
    }

    #[test]
    fn mask_to_segment_examples() {
        let s = mask_to_segment(MaskParams::new(0.5, 0.2).unwrap(), 100);
        assert!((s.start() - 0.4).abs() < 1e-15 && (s.end() - 0.6).abs() < 1e-15);
        let s = mask_to_segment(MaskParams::new(0.05, 0.2).unwrap(), 100);
        assert_eq!(s.start(), 0.0);
        assert!((s.end() - 0.15).abs() < 1e-15);
        let s = mask_to_segment(MaskParams::new(0.5, 1.0).unwrap(), 100);
        assert_eq!((s.start(), s.end()), (0.0, 1.0));
    }

    #[test]
    fn collapsed_segment_gets_one_frame() {
        let s = mask_to_segment(MaskParams::new(0.5, 1e-300).unwrap(), 10);
        assert!((s.length() - 0.1).abs() < 1e-12);
        assert!((s.center() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn iou_examples() {
        assert_eq!(temporal_iou(&seg(0.2, 0.4), &seg(0.2, 0.4)), 1.0);
        assert_eq!(temporal_iou(&seg(0.0, 0.2), &seg(0.5, 0.9)), 0.0);
        assert_eq!(temporal_iou(&seg(0.0, 0.5), &seg(0.25, 0.75)), 0.25 / 0.75);
    }

    #[test]
    fn scores_examples() {
        let gts = [seg(0.1, 0.3), seg(0.5, 0.8)];
        let r = localization_scores(&gts, &gts, &IOU_THRESHOLDS, Matching::BestIou).unwrap();
        assert_eq!((r.recall_avg, r.precision_avg, r.f1), (1.0, 1.0, 1.0));

        let r = localization_scores(
            &[seg(0.0, 0.5)],
            &[seg(0.25, 0.75)],
            &IOU_THRESHOLDS,
            Matching::BestIou,
        )
        .unwrap();
        assert_eq!(r.recall, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!((r.recall_avg, r.precision_avg, r.f1), (0.25, 0.25, 0.25));

        let r = localization_scores(&[], &gts, &IOU_THRESHOLDS, Matching::BestIou).unwrap();
        assert_eq!((r.recall_avg, r.precision_avg, r.f1), (0.0, 0.0, 0.0));

        assert!(matches!(
            localization_scores(&gts, &[], &IOU_THRESHOLDS, Matching::BestIou),
            Err(Error::EmptyGroundTruth)
        ));
    }

    #[test]
    fn one_to_one_forbids_sharing() {
        // One wide prediction overlapping two ground truths.
        let preds = [seg(0.0, 1.0)];
        let gts = [seg(0.0, 0.5), seg(0.5, 1.0)];
        let best = localization_scores(&preds, &gts, &[0.5], Matching::BestIou).unwrap();
        let one = localization_scores(&preds, &gts, &[0.5], Matching::OneToOne).unwrap();
        assert_eq!(best.recall, vec![1.0]);
        assert_eq!(one.recall, vec![0.5]);
        assert_eq!(one.precision, vec![1.0]);
    }

    #[test]
    fn one_to_one_finds_augmenting_path() {
        // Greedy would pair gt0 with pred0 and leave gt1 unmatched.
        let preds = [seg(0.1, 0.5), seg(0.0, 0.3)];
        let gts = [seg(0.1, 0.45), seg(0.35, 0.55)];
        let r = localization_scores(&preds, &gts, &[0.3], Matching::OneToOne).unwrap();
        assert_eq!(r.recall, vec![1.0]);
    }

    #[test]
    fn averaging_reports() {
        let a = localization_scores(
            &[seg(0.0, 0.5)],
            &[seg(0.0, 0.5)],
            &IOU_THRESHOLDS,
            Matching::BestIou,
        )
        .unwrap();
        let b =
            localization_scores(&[], &[seg(0.0, 0.5)], &IOU_THRESHOLDS, Matching::BestIou).unwrap();
        let avg = LocReport::average(&[a, b]).unwrap();
        assert_eq!(avg.recall_avg, 0.5);
        assert_eq!(avg.f1, 0.5);
        assert!(LocReport::average(&[]).is_err());
    }

    #[test]
    fn width_stats_examples() {
        let s = width_stats(&[vec![0.3, 0.3, 0.3]]).unwrap();
        assert_eq!(s.mean, 0.0);
        let s = width_stats(&[vec![0.2, 0.4], vec![0.5]]).unwrap();
        assert_eq!(s.per_video.len(), 1);
        assert!((s.mean - 0.1).abs() < 1e-15);
        assert!(matches!(
            width_stats(&[vec![0.2]]),
            Err(Error::EmptyResult(_))
        ));
    }

    #[test]
    fn records_and_csv() {
        let r = localization_scores(
            &[seg(0.0, 0.5)],
            &[seg(0.25, 0.75)],
            &IOU_THRESHOLDS,
            Matching::BestIou,
        )
        .unwrap();
        let rec = r.to_records("trained", 100.0);
        assert!(rec.starts_with("[trained]\n"));
        assert!(rec.contains("F1=25\n"));
        assert_eq!(
            r.csv_header().split(',').count(),
            r.csv_row("x", 1.0).split(',').count()
        );
    }

    #[test]
    fn segment_serde_is_a_pair() {
        let s = seg(0.25, 0.5);
        assert_eq!(serde_json::to_string(&s).unwrap(), "[0.25,0.5]");
        assert!(serde_json::from_str::<Segment>("[0.5,0.25]").is_err());
    }
}
