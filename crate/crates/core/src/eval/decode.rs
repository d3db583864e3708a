//! Raw head map -> detections.

use super::{Detection, EvalError};
use crate::anchors::BoxWH;
use crate::scalar::Real;
use crate::tensor::{sigmoid, Tensor};

/// Decodes one head map of shape (n, 3*(5+classes), gh, gw).
///
/// Per cell (i, j) and anchor a, with fields (tx, ty, tw, th, obj, cls..):
/// center = ((j + sigmoid(tx)) * stride, (i + sigmoid(ty)) * stride),
/// size = anchor * exp(t), score = sigmoid(obj) * sigmoid(best class).
/// Detections below `conf_thresh` are dropped; batch index is appended to
/// the image id when the batch has more than one element.
pub fn decode_head<R: Real>(
    raw: &Tensor<R>,
    anchors: &[BoxWH; 3],
    stride: usize,
    conf_thresh: f64,
    image_id: &str,
) -> Result<Vec<Detection>, EvalError> {
    let [n, c, gh, gw] = raw.shape();
    if c % 3 != 0 || c / 3 < 6 {
        return Err(EvalError::Shape(format!(
            "head map needs 3*(5+classes) channels with at least one class, got {c}"
        )));
    }
    let per_anchor = c / 3;
    let num_classes = per_anchor - 5;
    let mut out = Vec::new();
    for b in 0..n {
        let id = if n == 1 {
            image_id.to_owned()
        } else {
            format!("{image_id}#{b}")
        };
        for (a, anchor) in anchors.iter().enumerate() {
            let base = a * per_anchor;
            for i in 0..gh {
                for j in 0..gw {
                    let field = |k: usize| raw.at(b, base + k, i, j).into_f64();
                    let obj = sigmoid(field(4));
                    let (mut best_cls, mut best_logit) = (0usize, f64::NEG_INFINITY);
                    for cls in 0..num_classes {
                        let logit = field(5 + cls);
                        if logit > best_logit {
                            best_logit = logit;
                            best_cls = cls;
                        }
                    }
                    let score = obj * sigmoid(best_logit);
                    if score < conf_thresh {
                        continue;
                    }
                    let cx = (j as f64 + sigmoid(field(0))) * stride as f64;
                    let cy = (i as f64 + sigmoid(field(1))) * stride as f64;
                    let bw = anchor.w * field(2).exp();
                    let bh = anchor.h * field(3).exp();
                    out.push(Detection {
                        image_id: id.clone(),
                        class_id: best_cls,
                        score,
                        bbox: [cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0],
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn anchors() -> [BoxWH; 3] {
        [
            BoxWH { w: 64.0, h: 64.0 },
            BoxWH { w: 96.0, h: 48.0 },
            BoxWH { w: 128.0, h: 128.0 },
        ]
    }

    #[test]
    fn neutral_logits_center_cell() {
        // tx = ty = tw = th = 0 at cell (0,0): center lands stride/2 in,
        // size equals the anchor.
        let mut raw = Tensor::<f64>::zeros([1, 24, 1, 1]);
        raw.set(0, 4, 0, 0, 8.0); // objectness of anchor 0
        raw.set(0, 5, 0, 0, 8.0); // class 0 logit
        let dets = decode_head(&raw, &anchors(), 32, 0.5, "t").unwrap();
        // Anchors 1 and 2 have zero objectness: score 0.5*0.5 = 0.25 < 0.5.
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert_relative_eq!(d.bbox[0], 16.0 - 32.0);
        assert_relative_eq!(d.bbox[1], 16.0 - 32.0);
        assert_relative_eq!(d.bbox[2], 16.0 + 32.0);
        assert_relative_eq!(d.bbox[3], 16.0 + 32.0);
        assert_eq!(d.class_id, 0);
    }

    #[test]
    fn saturated_negative_objectness_emits_nothing() {
        let mut raw = Tensor::<f64>::zeros([1, 24, 2, 2]);
        for a in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    raw.set(0, a * 8 + 4, i, j, -40.0);
                    raw.set(0, a * 8 + 5, i, j, 40.0);
                }
            }
        }
        let dets = decode_head(&raw, &anchors(), 32, 1e-9, "t").unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn crafted_logits_match_scalar_computation() {
        let mut raw = Tensor::<f64>::zeros([1, 27, 2, 3]);
        // Anchor 1 (channels 9..18) at cell (1, 2) with 4 classes... 27/3 = 9
        // fields per anchor: 5 + 4 classes.
        let (a, i, j) = (1usize, 1usize, 2usize);
        let vals = [0.3, -0.2, 0.1, -0.4, 1.5]; // tx ty tw th obj
        for (k, v) in vals.iter().enumerate() {
            raw.set(0, a * 9 + k, i, j, *v);
        }
        let cls_logits = [0.2, 0.9, -0.3, 0.4];
        for (k, v) in cls_logits.iter().enumerate() {
            raw.set(0, a * 9 + 5 + k, i, j, *v);
        }
        let dets = decode_head(&raw, &anchors(), 16, 0.4, "t").unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
        let cx = (2.0 + sig(0.3)) * 16.0;
        let cy = (1.0 + sig(-0.2)) * 16.0;
        let bw = 96.0 * (0.1f64).exp();
        let bh = 48.0 * (-0.4f64).exp();
        assert!((d.bbox[0] - (cx - bw / 2.0)).abs() < 1e-9);
        assert!((d.bbox[1] - (cy - bh / 2.0)).abs() < 1e-9);
        assert!((d.bbox[2] - (cx + bw / 2.0)).abs() < 1e-9);
        assert!((d.bbox[3] - (cy + bh / 2.0)).abs() < 1e-9);
        assert!((d.score - sig(1.5) * sig(0.9)).abs() < 1e-9);
        assert_eq!(d.class_id, 1);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let raw = Tensor::<f64>::zeros([1, 25, 2, 2]);
        assert!(decode_head(&raw, &anchors(), 32, 0.5, "t").is_err());
        let raw = Tensor::<f64>::zeros([1, 15, 2, 2]); // 5 fields, zero classes
        assert!(decode_head(&raw, &anchors(), 32, 0.5, "t").is_err());
    }
}
