//! Detection post-processing and evaluation.
//!
//! Covers head decoding, greedy NMS, ranked matching against ground truth,
//! and per-class average precision with the all-point interpolated
//! precision envelope. APs are stored as fractions and rendered as
//! percentages with two decimals.

mod decode;

pub use decode::decode_head;

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Default IoU threshold for counting a detection as a true positive.
pub const DEFAULT_MATCH_IOU: f64 = 0.5;
/// Default per-class NMS threshold for report-level filtering.
pub const DEFAULT_NMS_IOU: f64 = 0.45;
/// Default confidence floor for evaluation runs.
pub const DEFAULT_CONF_THRESH: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("degenerate box {0:?}: corners must satisfy x1 < x2 and y1 < y2")]
    DegenerateBox([f64; 4]),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no classes in scope for mAP")]
    NoClasses,
}

/// One decoded detection; the box is 0-based half-open pixel corners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_id: usize,
    pub score: f64,
    /// (x1, y1, x2, y2)
    pub bbox: [f64; 4],
}

impl Detection {
    pub fn new(
        image_id: impl Into<String>,
        class_id: usize,
        score: f64,
        bbox: [f64; 4],
    ) -> Result<Self, EvalError> {
        check_box(bbox)?;
        if !score.is_finite() {
            return Err(EvalError::Shape(format!("non-finite score {score}")));
        }
        Ok(Self {
            image_id: image_id.into(),
            class_id,
            score,
            bbox,
        })
    }
}

fn check_box(b: [f64; 4]) -> Result<(), EvalError> {
    if !(b[0] < b[2] && b[1] < b[3]) || b.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::DegenerateBox(b));
    }
    Ok(())
}

/// Intersection-over-union of corner boxes.
pub fn iou_xyxy(a: [f64; 4], b: [f64; 4]) -> Result<f64, EvalError> {
    check_box(a)?;
    check_box(b)?;
    Ok(iou_xyxy_unchecked(a, b))
}

#[inline]
pub(crate) fn iou_xyxy_unchecked(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    inter / (area_a + area_b - inter)
}

/// TP/FP/FN tallies for one class scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Eq. of precision: TP / (TP + FP), with the 0/0 -> 1 convention
/// (no predictions made, none wrong).
pub fn precision(counts: &MatchCounts) -> f64 {
    if counts.tp + counts.fp == 0 {
        1.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fp) as f64
    }
}

/// Recall: TP / (TP + FN). `None` when there is no ground truth in scope;
/// such classes are excluded from mAP rather than scored.
pub fn recall(counts: &MatchCounts) -> Option<f64> {
    if counts.tp + counts.fn_ == 0 {
        None
    } else {
        Some(counts.tp as f64 / (counts.tp + counts.fn_) as f64)
    }
}

/// A ranked precision/recall sweep; recall is non-decreasing along `points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<PRPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Deterministic ordering for equal scores: lower x1 first, then lower y1.
fn det_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap()
        .then(a.bbox[0].partial_cmp(&b.bbox[0]).unwrap())
        .then(a.bbox[1].partial_cmp(&b.bbox[1]).unwrap())
        .then(a.image_id.cmp(&b.image_id))
}

/// Greedy non-maximum suppression over a single class: keep the best-scored
/// box, drop everything overlapping it above the threshold, repeat.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by(|a, b| det_order(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let suppressed = kept
            .iter()
            .any(|k| iou_xyxy_unchecked(k.bbox, d.bbox) > iou_thresh);
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}

/// NMS applied independently per (image, class) group.
pub fn nms_per_class(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut groups: BTreeMap<(String, usize), Vec<Detection>> = BTreeMap::new();
    for d in dets {
        groups
            .entry((d.image_id.clone(), d.class_id))
            .or_default()
            .push(d.clone());
    }
    groups
        .into_values()
        .flat_map(|g| nms(&g, iou_thresh))
        .collect()
}

/// Ranks same-class detections by score and greedily matches each against
/// the unmatched ground truth with the highest IoU. Returns the flags in
/// rank order alongside the detections in that order.
pub fn match_and_rank(
    dets: &[Detection],
    gts: &[[f64; 4]],
    iou_thresh: f64,
) -> (Vec<(Detection, bool)>, MatchCounts) {
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by(|a, b| det_order(a, b));
    let mut taken = vec![false; gts.len()];
    let mut flagged = Vec::with_capacity(sorted.len());
    let mut tp = 0;
    for d in sorted {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let iou = iou_xyxy_unchecked(d.bbox, *g);
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        let is_tp = match best {
            Some((gi, iou)) if iou >= iou_thresh => {
                taken[gi] = true;
                tp += 1;
                true
            }
            _ => false,
        };
        flagged.push((d.clone(), is_tp));
    }
    let counts = MatchCounts {
        tp,
        fp: flagged.len() - tp,
        fn_: gts.len() - tp,
    };
    (flagged, counts)
}

/// Builds the ranked PR curve from TP flags (already in rank order) and the
/// total ground-truth count.
pub fn pr_curve(flags: &[bool], gt_total: usize) -> PRCurve {
    let mut points = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    for &f in flags {
        if f {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push(PRPoint {
            recall: if gt_total == 0 {
                0.0
            } else {
                tp as f64 / gt_total as f64
            },
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    PRCurve { points }
}

/// Area under the all-point interpolated precision envelope:
/// p~(r) = max over r' >= r of p(r'), AP = sum of recall-step widths times
/// the envelope value on each step.
pub fn average_precision(curve: &PRCurve) -> f64 {
    if curve.points.is_empty() {
        return 0.0;
    }
    let n = curve.points.len();
    let mut envelope = vec![0.0; n];
    let mut running = 0.0f64;
    for i in (0..n).rev() {
        running = running.max(curve.points[i].precision);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..n {
        let r = curve.points[i].recall;
        if r > prev_recall {
            ap += (r - prev_recall) * envelope[i];
            prev_recall = r;
        }
    }
    ap
}

/// Arithmetic mean of the per-class APs.
pub fn mean_ap(aps: &[f64]) -> Result<f64, EvalError> {
    if aps.is_empty() {
        return Err(EvalError::NoClasses);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// One detection as stored in the detections JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

/// Ground truth in the same schema, score omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

/// Parses a JSONL body into records; blank lines are skipped.
pub fn parse_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("serializable record"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Per-class evaluation result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub ap: f64,
    pub gt_count: usize,
    pub counts: MatchCounts,
    pub curve: PRCurve,
}

/// Full evaluation run: per-class PR curves and APs, plus their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// Classes that had detections but no ground truth; excluded from mAP.
    pub excluded_classes: Vec<String>,
    pub map: f64,
    pub iou_thresh: f64,
}

impl EvalReport {
    /// "95.32"-style rendering of a fraction.
    pub fn percent(v: f64) -> String {
        format!("{:.2}", v * 100.0)
    }

    pub fn text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "class", "AP%", "GT", "TP", "FP", "FN"
        ));
        for c in &self.classes {
            out.push_str(&format!(
                "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
                c.class,
                Self::percent(c.ap),
                c.gt_count,
                c.counts.tp,
                c.counts.fp,
                c.counts.fn_
            ));
        }
        out.push_str(&format!("{:<24} {:>8}\n", "mAP", Self::percent(self.map)));
        for e in &self.excluded_classes {
            out.push_str(&format!("(class {e} has no ground truth; excluded)\n"));
        }
        out
    }

    /// CSV of PR points, one row per (class, rank).
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("class,recall,precision\n");
        for c in &self.classes {
            for p in &c.curve.points {
                out.push_str(&format!("{},{},{}\n", c.class, p.recall, p.precision));
            }
        }
        out
    }
}

/// Evaluates ranked detections against ground truth.
///
/// Classes are taken from the ground truth; detections for classes without
/// any ground truth are reported as excluded. Matching runs per image, the
/// ranked sweep pools all images of a class.
pub fn evaluate(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    iou_thresh: f64,
) -> Result<EvalReport, EvalError> {
    for d in dets {
        check_box(d.bbox)?;
    }
    for g in gts {
        check_box(g.bbox)?;
    }
    let classes: BTreeSet<&str> = gts.iter().map(|g| g.class.as_str()).collect();
    let excluded: Vec<String> = dets
        .iter()
        .map(|d| d.class.as_str())
        .filter(|c| !classes.contains(c))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_owned)
        .collect();
    if classes.is_empty() {
        return Err(EvalError::NoClasses);
    }

    let mut reports = Vec::new();
    for class in &classes {
        // Group ground truth boxes by image.
        let mut gt_by_image: BTreeMap<&str, Vec<[f64; 4]>> = BTreeMap::new();
        for g in gts.iter().filter(|g| g.class == *class) {
            gt_by_image.entry(&g.image_id).or_default().push(g.bbox);
        }
        let gt_total: usize = gt_by_image.values().map(Vec::len).sum();

        // Group detections by image, match per image, then pool ranked.
        let mut det_by_image: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
        for (i, d) in dets.iter().enumerate().filter(|(_, d)| d.class == *class) {
            det_by_image.entry(&d.image_id).or_default().push(Detection {
                image_id: d.image_id.clone(),
                class_id: i, // placeholder id; names are authoritative here
                score: d.score,
                bbox: d.bbox,
            });
        }

        let empty: Vec<[f64; 4]> = Vec::new();
        let mut pooled: Vec<(Detection, bool)> = Vec::new();
        let mut tp_total = 0usize;
        for (img, img_dets) in &det_by_image {
            let img_gts = gt_by_image.get(img).unwrap_or(&empty);
            let (flagged, counts) = match_and_rank(img_dets, img_gts, iou_thresh);
            tp_total += counts.tp;
            pooled.extend(flagged);
        }
        pooled.sort_by(|a, b| {
            det_order(&a.0, &b.0).then_with(|| a.0.image_id.cmp(&b.0.image_id))
        });
        let flags: Vec<bool> = pooled.iter().map(|(_, f)| *f).collect();
        let curve = pr_curve(&flags, gt_total);
        let ap = if gt_total == 0 {
            0.0
        } else {
            average_precision(&curve)
        };
        reports.push(ClassReport {
            class: (*class).to_owned(),
            ap,
            gt_count: gt_total,
            counts: MatchCounts {
                tp: tp_total,
                fp: flags.len() - tp_total,
                fn_: gt_total - tp_total,
            },
            curve,
        });
    }

    let aps: Vec<f64> = reports.iter().map(|c| c.ap).collect();
    let map = mean_ap(&aps)?;
    Ok(EvalReport {
        classes: reports,
        excluded_classes: excluded,
        map,
        iou_thresh,
    })
}
