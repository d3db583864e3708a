//! K-means clustering of ground-truth box sizes under the 1-IoU distance.
//!
//! Boxes are compared co-anchored at the origin, so only width and height
//! matter. Nine clusters produce the anchor set consumed by the detector
//! heads, three per stride.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_K: usize = 9;
pub const DEFAULT_MAX_ITER: usize = 300;
/// Convergence threshold on the maximum centroid coordinate movement.
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum AnchorError {
    #[error("box extents must be positive, got {w}x{h}")]
    NonPositiveExtent { w: f64, h: f64 },
    #[error("insufficient data: {have} boxes for k = {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("anchor set needs exactly 9 boxes, got {0}")]
    WrongCount(usize),
    #[error("empty box list")]
    Empty,
    #[error("parse error: {0}")]
    Parse(String),
}

/// A box size in pixels at network input resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxWH {
    pub w: f64,
    pub h: f64,
}

impl BoxWH {
    pub fn new(w: f64, h: f64) -> Result<Self, AnchorError> {
        if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
            return Err(AnchorError::NonPositiveExtent { w, h });
        }
        Ok(Self { w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// IoU of two boxes co-anchored at the origin; always in (0, 1] for
/// positive extents.
pub fn iou_wh(a: BoxWH, b: BoxWH) -> Result<f64, AnchorError> {
    for bx in [a, b] {
        if !(bx.w > 0.0 && bx.h > 0.0) {
            return Err(AnchorError::NonPositiveExtent { w: bx.w, h: bx.h });
        }
    }
    Ok(iou_wh_unchecked(a, b))
}

#[inline]
fn iou_wh_unchecked(a: BoxWH, b: BoxWH) -> f64 {
    let inter = a.w.min(b.w) * a.h.min(b.h);
    inter / (a.area() + b.area() - inter)
}

#[inline]
fn dist(a: BoxWH, b: BoxWH) -> f64 {
    1.0 - iou_wh_unchecked(a, b)
}

/// Nine anchors sorted ascending by area (ties by width); grouped three per
/// head with the smallest triplet on the stride-8 head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    anchors: Vec<BoxWH>,
}

impl AnchorSet {
    pub fn from_boxes(mut boxes: Vec<BoxWH>) -> Result<Self, AnchorError> {
        if boxes.len() != 9 {
            return Err(AnchorError::WrongCount(boxes.len()));
        }
        for b in &boxes {
            if !(b.w > 0.0 && b.h > 0.0) {
                return Err(AnchorError::NonPositiveExtent { w: b.w, h: b.h });
            }
        }
        sort_by_area(&mut boxes);
        Ok(Self { anchors: boxes })
    }

    pub fn anchors(&self) -> &[BoxWH] {
        &self.anchors
    }

    /// Darknet-style single line: "w1,h1, w2,h2, ..., w9,h9".
    pub fn to_line(&self) -> String {
        self.anchors
            .iter()
            .map(|b| format!("{},{}", b.w, b.h))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Parses the `to_line` format; tolerant of extra whitespace.
    pub fn parse_line(line: &str) -> Result<Self, AnchorError> {
        let values: Result<Vec<f64>, _> = line
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|tok| !tok.is_empty())
            .map(|tok| tok.parse::<f64>())
            .collect();
        let values = values.map_err(|e| AnchorError::Parse(e.to_string()))?;
        if values.len() != 18 {
            return Err(AnchorError::Parse(format!(
                "expected 18 numbers (9 w,h pairs), got {}",
                values.len()
            )));
        }
        let boxes = values
            .chunks(2)
            .map(|p| BoxWH::new(p[0], p[1]))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_boxes(boxes)
    }
}

fn sort_by_area(boxes: &mut [BoxWH]) {
    boxes.sort_by(|a, b| {
        (a.area(), a.w)
            .partial_cmp(&(b.area(), b.w))
            .expect("finite extents")
    });
}

/// Triplets for the stride-8, stride-16 and stride-32 heads, in that order.
pub fn assign_to_heads(set: &AnchorSet) -> [[BoxWH; 3]; 3] {
    let a = set.anchors();
    [
        [a[0], a[1], a[2]],
        [a[3], a[4], a[5]],
        [a[6], a[7], a[8]],
    ]
}

/// Clustering diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterStats {
    /// Assignment passes performed.
    pub iterations: usize,
    /// Mean over boxes of the best IoU against the final centroids.
    pub mean_iou: f64,
    /// Member count per centroid, aligned with the sorted output order.
    pub cluster_sizes: Vec<usize>,
    /// Total cost (sum of 1 - IoU to the assigned centroid) after each
    /// assignment pass.
    pub cost_history: Vec<f64>,
}

/// Lloyd iteration under the 1-IoU distance with k-means++-style seeding.
///
/// Assignment ties break toward the lowest cluster index; the centroid
/// update is the per-cluster arithmetic mean of (w, h). An emptied cluster
/// is re-seeded from the box farthest from its centroid.
pub fn kmeans_boxes(
    boxes: &[BoxWH],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<BoxWH>, ClusterStats), AnchorError> {
    if boxes.is_empty() {
        return Err(AnchorError::Empty);
    }
    for b in boxes {
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err(AnchorError::NonPositiveExtent { w: b.w, h: b.h });
        }
    }
    if boxes.len() < k || k == 0 {
        return Err(AnchorError::InsufficientData {
            have: boxes.len(),
            need: k,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(boxes, k, &mut rng);
    let mut assignment = vec![usize::MAX; boxes.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        // Assignment pass.
        let mut changed = false;
        let mut cost = 0.0;
        for (i, b) in boxes.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (ci, c) in centers.iter().enumerate() {
                let d = dist(*b, *c);
                if d < best_d {
                    best_d = d;
                    best = ci;
                }
            }
            cost += best_d;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        history.push(cost);
        if !changed && history.len() > 1 {
            break;
        }

        // Update pass.
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (i, b) in boxes.iter().enumerate() {
            let s = &mut sums[assignment[i]];
            s.0 += b.w;
            s.1 += b.h;
            s.2 += 1;
        }
        let mut movement = 0.0f64;
        for ci in 0..k {
            let (sw, sh, n) = sums[ci];
            let new_c = if n > 0 {
                BoxWH {
                    w: sw / n as f64,
                    h: sh / n as f64,
                }
            } else {
                // Documented fallback: re-seed from the box farthest from
                // this centroid so the cluster count stays at k.
                let far = boxes
                    .iter()
                    .max_by(|a, b| {
                        dist(**a, centers[ci])
                            .partial_cmp(&dist(**b, centers[ci]))
                            .unwrap()
                    })
                    .copied()
                    .unwrap();
                far
            };
            movement = movement
                .max((new_c.w - centers[ci].w).abs())
                .max((new_c.h - centers[ci].h).abs());
            centers[ci] = new_c;
        }
        if movement < tol {
            break;
        }
    }

    // Final bookkeeping against the final centroids.
    let mut counts = vec![0usize; k];
    let mut iou_sum = 0.0;
    for b in boxes {
        let (best, best_iou) = centers
            .iter()
            .enumerate()
            .map(|(ci, c)| (ci, iou_wh_unchecked(*b, *c)))
            .fold((0, -1.0), |acc, (ci, v)| if v > acc.1 { (ci, v) } else { acc });
        counts[best] += 1;
        iou_sum += best_iou;
    }
    let mean_iou = iou_sum / boxes.len() as f64;

    // Sort centroids (and their member counts) by area for reporting.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        (centers[a].area(), centers[a].w)
            .partial_cmp(&(centers[b].area(), centers[b].w))
            .unwrap()
    });
    let sorted_centers: Vec<BoxWH> = order.iter().map(|&i| centers[i]).collect();
    let sorted_counts: Vec<usize> = order.iter().map(|&i| counts[i]).collect();

    Ok((
        sorted_centers,
        ClusterStats {
            iterations,
            mean_iou,
            cluster_sizes: sorted_counts,
            cost_history: history,
        },
    ))
}

/// k = 9 clustering returning a ready [`AnchorSet`].
pub fn kmeans_anchors(
    boxes: &[BoxWH],
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(AnchorSet, ClusterStats), AnchorError> {
    let (centers, stats) = kmeans_boxes(boxes, DEFAULT_K, seed, max_iter, tol)?;
    Ok((AnchorSet::from_boxes(centers)?, stats))
}

/// Weighted seeding: first center uniform, then each next center drawn with
/// probability proportional to the squared 1-IoU distance to the nearest
/// chosen center.
fn seed_plus_plus(boxes: &[BoxWH], k: usize, rng: &mut impl Rng) -> Vec<BoxWH> {
    let mut centers = Vec::with_capacity(k);
    centers.push(boxes[rng.gen_range(0..boxes.len())]);
    let mut min_d: Vec<f64> = boxes.iter().map(|b| dist(*b, centers[0])).collect();
    while centers.len() < k {
        let weights: Vec<f64> = min_d.iter().map(|d| d * d).collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.gen_range(0.0..total);
            let mut idx = boxes.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if t < *w {
                    idx = i;
                    break;
                }
                t -= w;
            }
            idx
        } else {
            // All boxes coincide with a chosen center; take the first one
            // not yet used (duplicates are fine, clusters re-seed later).
            min_d.iter().position(|d| *d > 0.0).unwrap_or(0)
        };
        centers.push(boxes[next]);
        for (i, b) in boxes.iter().enumerate() {
            min_d[i] = min_d[i].min(dist(*b, centers[centers.len() - 1]));
        }
    }
    centers
}

/// Mean over boxes of the best IoU against any anchor.
pub fn avg_iou(boxes: &[BoxWH], anchors: &[BoxWH]) -> Result<f64, AnchorError> {
    if boxes.is_empty() || anchors.is_empty() {
        return Err(AnchorError::Empty);
    }
    let mut sum = 0.0;
    for b in boxes {
        let best = anchors
            .iter()
            .map(|a| iou_wh(*b, *a))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        sum += best;
    }
    Ok(sum / boxes.len() as f64)
}

/// Parses a box-list file body: one "w,h" pair per line; blank lines and
/// `#` comments are skipped.
pub fn parse_box_list(text: &str) -> Result<Vec<BoxWH>, AnchorError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        if parts.len() != 2 {
            return Err(AnchorError::Parse(format!(
                "line {}: expected \"w,h\", got {:?}",
                lineno + 1,
                line
            )));
        }
        let w: f64 = parts[0]
            .parse()
            .map_err(|e| AnchorError::Parse(format!("line {}: {}", lineno + 1, e)))?;
        let h: f64 = parts[1]
            .parse()
            .map_err(|e| AnchorError::Parse(format!("line {}: {}", lineno + 1, e)))?;
        out.push(BoxWH::new(w, h)?);
    }
    Ok(out)
}

/// Synthetic corpus: `per_cluster` boxes around each center with uniform
/// multiplicative noise of the given relative magnitude.
pub fn synthetic_box_corpus(
    centers: &[BoxWH],
    per_cluster: usize,
    noise: f64,
    seed: u64,
) -> Vec<BoxWH> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(centers.len() * per_cluster);
    for c in centers {
        for _ in 0..per_cluster {
            let fw = 1.0 + rng.gen_range(-noise..noise);
            let fh = 1.0 + rng.gen_range(-noise..noise);
            out.push(BoxWH {
                w: c.w * fw,
                h: c.h * fh,
            });
        }
    }
    out
}

/// The nine generator sizes used by the synthetic recovery tests: well
/// separated in scale and aspect.
pub fn reference_centers() -> Vec<BoxWH> {
    [
        (12.0, 16.0),
        (19.0, 36.0),
        (40.0, 28.0),
        (36.0, 75.0),
        (76.0, 55.0),
        (72.0, 146.0),
        (142.0, 110.0),
        (192.0, 243.0),
        (459.0, 401.0),
    ]
    .iter()
    .map(|&(w, h)| BoxWH { w, h })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn iou_identity() {
        let b = BoxWH { w: 3.0, h: 5.0 };
        assert_eq!(iou_wh(b, b).unwrap(), 1.0);
    }

    #[test]
    fn iou_nested_squares() {
        let a = BoxWH { w: 2.0, h: 2.0 };
        let b = BoxWH { w: 4.0, h: 4.0 };
        assert_relative_eq!(iou_wh(a, b).unwrap(), 0.25);
    }

    #[test]
    fn iou_crossed_aspect() {
        let a = BoxWH { w: 1.0, h: 4.0 };
        let b = BoxWH { w: 4.0, h: 1.0 };
        assert_relative_eq!(iou_wh(a, b).unwrap(), 1.0 / 7.0);
    }

    #[test]
    fn iou_rejects_non_positive() {
        let ok = BoxWH { w: 1.0, h: 1.0 };
        let bad = BoxWH { w: 0.0, h: 1.0 };
        assert!(iou_wh(ok, bad).is_err());
        assert!(BoxWH::new(-1.0, 2.0).is_err());
    }

    #[test]
    fn perfect_clustering_of_nine_distinct_sizes() {
        let centers = reference_centers();
        let (set, stats) = kmeans_anchors(&centers, 42, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert_eq!(stats.mean_iou, 1.0);
        let mut want = centers.clone();
        want.sort_by(|a, b| (a.area(), a.w).partial_cmp(&(b.area(), b.w)).unwrap());
        assert_eq!(set.anchors(), want.as_slice());
    }

    #[test]
    fn synthetic_recovery_within_five_percent() {
        let centers = reference_centers();
        let boxes = synthetic_box_corpus(&centers, 100, 0.02, 7);
        let (set, stats) = kmeans_anchors(&boxes, 42, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        let mut want = centers.clone();
        want.sort_by(|a, b| (a.area(), a.w).partial_cmp(&(b.area(), b.w)).unwrap());
        for (got, want) in set.anchors().iter().zip(&want) {
            assert!((got.w - want.w).abs() / want.w < 0.05, "{got:?} vs {want:?}");
            assert!((got.h - want.h).abs() / want.h < 0.05, "{got:?} vs {want:?}");
        }
        for pair in stats.cost_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn degenerate_single_cluster_converges_fast() {
        let boxes = vec![BoxWH { w: 10.0, h: 20.0 }; 50];
        let (centers, stats) = kmeans_boxes(&boxes, 1, 1, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert_eq!(centers[0], BoxWH { w: 10.0, h: 20.0 });
        assert!(stats.iterations <= 2);
    }

    #[test]
    fn k1_returns_arithmetic_mean() {
        let boxes = vec![
            BoxWH { w: 2.0, h: 4.0 },
            BoxWH { w: 6.0, h: 8.0 },
            BoxWH { w: 4.0, h: 6.0 },
        ];
        let (centers, _) = kmeans_boxes(&boxes, 1, 3, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert_relative_eq!(centers[0].w, 4.0);
        assert_relative_eq!(centers[0].h, 6.0);
    }

    #[test]
    fn insufficient_boxes_is_an_error() {
        let boxes = vec![BoxWH { w: 1.0, h: 1.0 }; 5];
        assert!(matches!(
            kmeans_anchors(&boxes, 42, DEFAULT_MAX_ITER, DEFAULT_TOL),
            Err(AnchorError::InsufficientData { have: 5, need: 9 })
        ));
    }

    #[test]
    fn determinism_per_seed() {
        let boxes = synthetic_box_corpus(&reference_centers(), 30, 0.05, 3);
        let a = kmeans_anchors(&boxes, 42, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        let b = kmeans_anchors(&boxes, 42, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.cost_history, b.1.cost_history);
    }

    #[test]
    fn scale_equivariance_for_dyadic_scales() {
        let boxes = synthetic_box_corpus(&reference_centers(), 20, 0.05, 11);
        let (base, _) = kmeans_anchors(&boxes, 42, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        for s in [0.5, 2.0, 8.0] {
            let scaled: Vec<BoxWH> = boxes
                .iter()
                .map(|b| BoxWH {
                    w: b.w * s,
                    h: b.h * s,
                })
                .collect();
            // Scale tol along so the stopping rule sees the same geometry.
            let (got, _) = kmeans_anchors(&scaled, 42, DEFAULT_MAX_ITER, DEFAULT_TOL * s).unwrap();
            for (g, b) in got.anchors().iter().zip(base.anchors()) {
                assert_eq!(g.w, b.w * s);
                assert_eq!(g.h, b.h * s);
            }
        }
    }

    #[test]
    fn avg_iou_examples() {
        let boxes = reference_centers();
        assert_eq!(avg_iou(&boxes, &boxes).unwrap(), 1.0);

        let one_box = [BoxWH { w: 4.0, h: 4.0 }];
        let one_anchor = [BoxWH { w: 2.0, h: 2.0 }];
        assert_relative_eq!(avg_iou(&one_box, &one_anchor).unwrap(), 0.25);

        let more = [BoxWH { w: 2.0, h: 2.0 }, BoxWH { w: 4.0, h: 4.0 }];
        assert!(avg_iou(&one_box, &more).unwrap() >= avg_iou(&one_box, &one_anchor).unwrap());

        assert!(avg_iou(&[], &one_anchor).is_err());
    }

    #[test]
    fn head_assignment_sorts_by_area() {
        let sizes: Vec<BoxWH> = (1..=9)
            .rev()
            .map(|i| BoxWH {
                w: i as f64,
                h: 1.0,
            })
            .collect();
        let set = AnchorSet::from_boxes(sizes).unwrap();
        let heads = assign_to_heads(&set);
        assert_eq!(heads[0].map(|b| b.w), [1.0, 2.0, 3.0]);
        assert_eq!(heads[1].map(|b| b.w), [4.0, 5.0, 6.0]);
        assert_eq!(heads[2].map(|b| b.w), [7.0, 8.0, 9.0]);
    }

    #[test]
    fn duplicate_areas_break_ties_by_width() {
        // Same area 12, widths 2 < 3 < 4.
        let mut boxes = vec![
            BoxWH { w: 4.0, h: 3.0 },
            BoxWH { w: 2.0, h: 6.0 },
            BoxWH { w: 3.0, h: 4.0 },
        ];
        boxes.extend((2..8).map(|i| BoxWH {
            w: 10.0 * i as f64,
            h: 10.0 * i as f64,
        }));
        let set = AnchorSet::from_boxes(boxes).unwrap();
        assert_eq!(set.anchors()[0].w, 2.0);
        assert_eq!(set.anchors()[1].w, 3.0);
        assert_eq!(set.anchors()[2].w, 4.0);
    }

    #[test]
    fn wrong_count_is_rejected() {
        let boxes = vec![BoxWH { w: 1.0, h: 1.0 }; 8];
        assert!(matches!(
            AnchorSet::from_boxes(boxes),
            Err(AnchorError::WrongCount(8))
        ));
    }

    #[test]
    fn line_roundtrip() {
        let set = AnchorSet::from_boxes(reference_centers()).unwrap();
        let line = set.to_line();
        let back = AnchorSet::parse_line(&line).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn box_list_parsing() {
        let boxes = parse_box_list("10,20\n# comment\n30, 40\n\n1.5 2.5\n").unwrap();
        assert_eq!(boxes.len(), 3);
        assert_eq!(boxes[2], BoxWH { w: 1.5, h: 2.5 });
        assert!(parse_box_list("10\n").is_err());
        assert!(parse_box_list("0,5\n").is_err());
    }
}
