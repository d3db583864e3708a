//! Synthetic dataset generation.
//!
//! The real mask-detection corpus is not redistributable, so tests and CLI
//! walkthroughs run on generated scenes: solid backgrounds with colored
//! rectangles standing in for labeled objects.

use super::raster::RasterImage;
use super::{serialize_voc_xml, ClassList, ImageAnnotation, VocObject};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct SyntheticDatasetSpec {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub max_objects_per_image: usize,
    pub seed: u64,
    pub classes: ClassList,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            images: 8,
            width: 160,
            height: 120,
            max_objects_per_image: 3,
            seed: 42,
            classes: ClassList::default(),
        }
    }
}

/// Writes `Annotations/*.xml` and `JPEGImages/*.png` under `dir` and
/// returns the annotation paths with their parsed records.
pub fn write_synthetic_dataset(
    dir: &Path,
    spec: &SyntheticDatasetSpec,
) -> Result<Vec<(PathBuf, ImageAnnotation)>, super::VocError> {
    let ann_dir = dir.join("Annotations");
    let img_dir = dir.join("JPEGImages");
    std::fs::create_dir_all(&ann_dir)?;
    std::fs::create_dir_all(&img_dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let name = format!("img_{i:03}");
        let bg = [
            rng.gen_range(40..200u8),
            rng.gen_range(40..200u8),
            rng.gen_range(40..200u8),
        ];
        let mut img = RasterImage::filled(spec.width, spec.height, bg);
        let n_objects = rng.gen_range(0..=spec.max_objects_per_image);
        let mut objects = Vec::with_capacity(n_objects);
        for _ in 0..n_objects {
            let w = rng.gen_range(8..spec.width / 2);
            let h = rng.gen_range(8..spec.height / 2);
            let xmin = rng.gen_range(1..=spec.width - w);
            let ymin = rng.gen_range(1..=spec.height - h);
            let (xmax, ymax) = (xmin + w, ymin + h);
            let color = [
                rng.gen_range(0..255u8),
                rng.gen_range(0..255u8),
                rng.gen_range(0..255u8),
            ];
            img.fill_rect(xmin - 1, ymin - 1, xmax - 1, ymax - 1, color);
            let class = &spec.classes.names[rng.gen_range(0..spec.classes.names.len())];
            objects.push(VocObject {
                class_name: class.clone(),
                xmin,
                ymin,
                xmax,
                ymax,
            });
        }
        let ann = ImageAnnotation {
            image_path: format!("{name}.png"),
            width: spec.width,
            height: spec.height,
            depth: 3,
            objects,
        };
        ann.validate(&spec.classes)
            .expect("generated annotations satisfy the invariants");
        img.save_png(&img_dir.join(format!("{name}.png")))?;
        let xml_path = ann_dir.join(format!("{name}.xml"));
        std::fs::write(&xml_path, serialize_voc_xml(&ann))?;
        out.push((xml_path, ann));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voc::{load_voc_dir, parse_voc_xml, resolve_image_path};

    #[test]
    fn generated_tree_parses_back() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticDatasetSpec::default();
        let written = write_synthetic_dataset(dir.path(), &spec).unwrap();
        assert_eq!(written.len(), spec.images);

        let loaded = load_voc_dir(dir.path(), &spec.classes).unwrap();
        assert_eq!(loaded.len(), spec.images);
        for ((p1, a1), (p2, a2)) in written.iter().zip(&loaded) {
            assert_eq!(p1, p2);
            assert_eq!(a1, a2);
            let img = RasterImage::load(&resolve_image_path(p1, a1).unwrap()).unwrap();
            assert_eq!((img.width(), img.height()), (a1.width, a1.height));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let spec = SyntheticDatasetSpec {
            images: 4,
            ..SyntheticDatasetSpec::default()
        };
        let w1 = write_synthetic_dataset(d1.path(), &spec).unwrap();
        let w2 = write_synthetic_dataset(d2.path(), &spec).unwrap();
        for ((p1, a1), (_, a2)) in w1.iter().zip(&w2) {
            assert_eq!(a1, a2);
            let bytes = std::fs::read(p1).unwrap();
            let reparsed = parse_voc_xml(&bytes, &spec.classes).unwrap();
            assert_eq!(&reparsed, a1);
        }
    }
}
