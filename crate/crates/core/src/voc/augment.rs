//! Random augmentation pipeline with box-aware geometry.

use super::raster::{color_gain, gaussian_blur, median_blur, rotate_bilinear, rotate_point, RasterImage};
use super::{ImageAnnotation, VocError, VocObject};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fraction of its original area a rotated, clipped box must keep to
/// survive; slivers rotated out of frame are dropped.
pub const MIN_KEPT_AREA: f64 = 0.25;

/// Parameter ranges and per-op probabilities for [`augment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub rotation_degrees: (f64, f64),
    pub gaussian_sigma: (f64, f64),
    /// Per-channel multiplicative gain range.
    pub color_gain: (f64, f64),
    pub median_kernel: u32,
    pub prob_rotate: f64,
    pub prob_gaussian: f64,
    pub prob_color: f64,
    pub prob_median: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            rotation_degrees: (-15.0, 15.0),
            gaussian_sigma: (0.5, 1.5),
            color_gain: (0.8, 1.2),
            median_kernel: 3,
            prob_rotate: 0.5,
            prob_gaussian: 0.5,
            prob_color: 0.5,
            prob_median: 0.5,
            seed: 42,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<(), VocError> {
        let ranges = [
            ("rotation_degrees", self.rotation_degrees),
            ("gaussian_sigma", self.gaussian_sigma),
            ("color_gain", self.color_gain),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(VocError::Config(format!(
                    "{name} range ({lo}, {hi}) is degenerate"
                )));
            }
        }
        if self.rotation_degrees.0 < -180.0 || self.rotation_degrees.1 > 180.0 {
            return Err(VocError::Config("rotation range exceeds +-180".into()));
        }
        if self.median_kernel % 2 == 0 || self.median_kernel == 0 {
            return Err(VocError::Config(format!(
                "median kernel must be odd, got {}",
                self.median_kernel
            )));
        }
        for (name, p) in [
            ("prob_rotate", self.prob_rotate),
            ("prob_gaussian", self.prob_gaussian),
            ("prob_color", self.prob_color),
            ("prob_median", self.prob_median),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(VocError::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn parse_toml(text: &str) -> Result<Self, VocError> {
        let spec: AugmentSpec =
            toml::from_str(text).map_err(|e| VocError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Record of one applied operation, for the reproducibility manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AppliedOp {
    Rotate { degrees: f64 },
    GaussianBlur { sigma: f64 },
    ColorGain { gains: [f64; 3] },
    MedianBlur { kernel: u32 },
}

/// Rotates the image about its center and replaces each box with the
/// axis-aligned hull of its four rotated corners, clipped to the frame.
/// Boxes keeping less than 25% of their area are dropped.
pub fn affine_rotate(
    img: &RasterImage,
    ann: &ImageAnnotation,
    degrees: f64,
) -> Result<(RasterImage, ImageAnnotation), VocError> {
    if !(-180.0..=180.0).contains(&degrees) {
        return Err(VocError::Config(format!(
            "rotation angle {degrees} outside +-180"
        )));
    }
    if degrees == 0.0 {
        return Ok((img.clone(), ann.clone()));
    }
    let out_img = rotate_bilinear(img, degrees);
    let (w, h) = (ann.width, ann.height);
    let mut objects = Vec::new();
    for o in &ann.objects {
        let corners = [
            (o.xmin as f64, o.ymin as f64),
            (o.xmax as f64, o.ymin as f64),
            (o.xmin as f64, o.ymax as f64),
            (o.xmax as f64, o.ymax as f64),
        ];
        let mapped: Vec<(f64, f64)> = corners
            .iter()
            .map(|&(x, y)| rotate_point(w, h, degrees, x, y))
            .collect();
        let min_x = mapped.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = mapped.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = mapped.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = mapped.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);

        let orig_area = (o.xmax - o.xmin) as f64 * (o.ymax - o.ymin) as f64;
        let cx0 = min_x.max(1.0);
        let cy0 = min_y.max(1.0);
        let cx1 = max_x.min(w as f64);
        let cy1 = max_y.min(h as f64);
        let clipped_area = (cx1 - cx0).max(0.0) * (cy1 - cy0).max(0.0);
        if clipped_area < MIN_KEPT_AREA * orig_area {
            continue;
        }
        let (xmin, ymin, xmax, ymax) = (
            cx0.round() as u32,
            cy0.round() as u32,
            cx1.round() as u32,
            cy1.round() as u32,
        );
        if xmin >= xmax || ymin >= ymax {
            continue;
        }
        objects.push(VocObject {
            class_name: o.class_name.clone(),
            xmin,
            ymin,
            xmax,
            ymax,
        });
    }
    let out_ann = ImageAnnotation {
        objects,
        ..ann.clone()
    };
    Ok((out_img, out_ann))
}

/// Applies each augmentation independently with its configured probability,
/// drawing parameters from the spec ranges. Photometric ops never touch the
/// boxes; the returned log reproduces the run exactly.
pub fn augment(
    img: &RasterImage,
    ann: &ImageAnnotation,
    spec: &AugmentSpec,
    rng: &mut impl Rng,
) -> Result<(RasterImage, ImageAnnotation, Vec<AppliedOp>), VocError> {
    spec.validate()?;
    let mut image = img.clone();
    let mut annotation = ann.clone();
    let mut log = Vec::new();

    if rng.gen::<f64>() < spec.prob_rotate {
        let degrees = rng.gen_range(spec.rotation_degrees.0..spec.rotation_degrees.1);
        let (i, a) = affine_rotate(&image, &annotation, degrees)?;
        image = i;
        annotation = a;
        log.push(AppliedOp::Rotate { degrees });
    }
    if rng.gen::<f64>() < spec.prob_gaussian {
        let sigma = rng.gen_range(spec.gaussian_sigma.0..spec.gaussian_sigma.1);
        image = gaussian_blur(&image, sigma);
        log.push(AppliedOp::GaussianBlur { sigma });
    }
    if rng.gen::<f64>() < spec.prob_color {
        let gains = [
            rng.gen_range(spec.color_gain.0..spec.color_gain.1),
            rng.gen_range(spec.color_gain.0..spec.color_gain.1),
            rng.gen_range(spec.color_gain.0..spec.color_gain.1),
        ];
        image = color_gain(&image, gains);
        log.push(AppliedOp::ColorGain { gains });
    }
    if rng.gen::<f64>() < spec.prob_median {
        image = median_blur(&image, spec.median_kernel)?;
        log.push(AppliedOp::MedianBlur {
            kernel: spec.median_kernel,
        });
    }
    Ok((image, annotation, log))
}
