//! Pascal VOC annotation ingestion and dataset bookkeeping.
//!
//! Boxes follow the VOC/LabelImg convention: 1-based inclusive pixel
//! corners. [`voc_box_to_corners`] converts to the 0-based half-open
//! corners used by evaluation.

mod augment;
mod fixtures;
mod raster;

pub use augment::{affine_rotate, augment, AppliedOp, AugmentSpec};
pub use fixtures::{write_synthetic_dataset, SyntheticDatasetSpec};
pub use raster::{color_gain, gaussian_blur, median_blur, rotate_bilinear, RasterImage};

use crate::anchors::BoxWH;
use quick_xml::escape::escape;
use quick_xml::events::Event;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum VocError {
    #[error("xml parse error at byte offset {offset}: {msg}")]
    Parse { offset: u64, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown class name {0:?}")]
    UnknownClass(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("image error: {0}")]
    Image(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Class vocabulary; defaults to the three mask-wearing states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassList {
    pub names: Vec<String>,
}

impl Default for ClassList {
    fn default() -> Self {
        Self {
            names: vec![
                "mask_correct".to_owned(),
                "no_mask".to_owned(),
                "mask_incorrect".to_owned(),
            ],
        }
    }
}

impl ClassList {
    /// One class name per line; blanks and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self, VocError> {
        let names: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect();
        if names.is_empty() {
            return Err(VocError::Config("class list is empty".into()));
        }
        Ok(Self { names })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }
}

/// One labeled box, 1-based inclusive corners.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocObject {
    pub class_name: String,
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
}

/// One image's ground-truth record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    /// The <filename> element: image file name relative to the dataset.
    pub image_path: String,
    pub width: u32,
    pub height: u32,
    pub depth: u32,
    pub objects: Vec<VocObject>,
}

impl ImageAnnotation {
    pub fn validate(&self, classes: &ClassList) -> Result<(), VocError> {
        if self.width == 0 || self.height == 0 {
            return Err(VocError::Invariant("image extents must be positive".into()));
        }
        for o in &self.objects {
            if !classes.contains(&o.class_name) {
                return Err(VocError::UnknownClass(o.class_name.clone()));
            }
            if !(1 <= o.xmin && o.xmin < o.xmax && o.xmax <= self.width) {
                return Err(VocError::Invariant(format!(
                    "box x range {}..{} outside 1..{} or inverted",
                    o.xmin, o.xmax, self.width
                )));
            }
            if !(1 <= o.ymin && o.ymin < o.ymax && o.ymax <= self.height) {
                return Err(VocError::Invariant(format!(
                    "box y range {}..{} outside 1..{} or inverted",
                    o.ymin, o.ymax, self.height
                )));
            }
        }
        Ok(())
    }
}

/// 1-based inclusive VOC box -> 0-based half-open corners.
pub fn voc_box_to_corners(o: &VocObject) -> [f64; 4] {
    [
        (o.xmin - 1) as f64,
        (o.ymin - 1) as f64,
        o.xmax as f64,
        o.ymax as f64,
    ]
}

/// Box sizes rescaled to a square network input resolution, for clustering.
pub fn boxes_for_clustering(annotations: &[ImageAnnotation], input_size: u32) -> Vec<BoxWH> {
    let mut out = Vec::new();
    for ann in annotations {
        let sx = input_size as f64 / ann.width as f64;
        let sy = input_size as f64 / ann.height as f64;
        for o in &ann.objects {
            let w = (o.xmax - o.xmin + 1) as f64 * sx;
            let h = (o.ymax - o.ymin + 1) as f64 * sy;
            out.push(BoxWH { w, h });
        }
    }
    out
}

#[derive(Default)]
struct PartialObject {
    name: Option<String>,
    xmin: Option<u32>,
    ymin: Option<u32>,
    xmax: Option<u32>,
    ymax: Option<u32>,
}

fn parse_pixel(field: &str, text: &str) -> Result<u32, VocError> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|e| VocError::Schema(format!("{field}: not a number ({e})")))?;
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(VocError::Schema(format!(
            "{field}: expected a non-negative integer pixel value, got {text:?}"
        )));
    }
    Ok(v as u32)
}

/// Parses one VOC annotation document.
///
/// Size and filename are required; each object must carry a name and a
/// complete bndbox. Class names outside the vocabulary are rejected, as are
/// inverted or out-of-range boxes.
pub fn parse_voc_xml(bytes: &[u8], classes: &ClassList) -> Result<ImageAnnotation, VocError> {
    let mut reader = quick_xml::Reader::from_reader(bytes);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();

    let mut path: Vec<String> = Vec::new();
    let mut filename = None;
    let mut width = None;
    let mut height = None;
    let mut depth = None;
    let mut objects = Vec::new();
    let mut current: Option<PartialObject> = None;

    loop {
        let event = reader.read_event_into(&mut buf).map_err(|e| VocError::Parse {
            offset: reader.buffer_position(),
            msg: e.to_string(),
        })?;
        match event {
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if name == "object" && path.last().is_some_and(|p| p == "annotation") {
                    current = Some(PartialObject::default());
                }
                path.push(name);
            }
            Event::End(_) => {
                let name = path.pop().unwrap_or_default();
                if name == "object" {
                    let obj = current
                        .take()
                        .ok_or_else(|| VocError::Schema("unexpected </object>".into()))?;
                    let missing = |field: &str| VocError::Schema(format!("object missing {field}"));
                    objects.push(VocObject {
                        class_name: obj.name.ok_or_else(|| missing("name"))?,
                        xmin: obj.xmin.ok_or_else(|| missing("bndbox/xmin"))?,
                        ymin: obj.ymin.ok_or_else(|| missing("bndbox/ymin"))?,
                        xmax: obj.xmax.ok_or_else(|| missing("bndbox/xmax"))?,
                        ymax: obj.ymax.ok_or_else(|| missing("bndbox/ymax"))?,
                    });
                }
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| VocError::Parse {
                    offset: reader.buffer_position(),
                    msg: e.to_string(),
                })?;
                let text = text.trim();
                if text.is_empty() {
                    continue;
                }
                let loc: Vec<&str> = path.iter().map(String::as_str).collect();
                match loc.as_slice() {
                    ["annotation", "filename"] => filename = Some(text.to_owned()),
                    ["annotation", "size", "width"] => {
                        width = Some(parse_pixel("size/width", text)?)
                    }
                    ["annotation", "size", "height"] => {
                        height = Some(parse_pixel("size/height", text)?)
                    }
                    ["annotation", "size", "depth"] => {
                        depth = Some(parse_pixel("size/depth", text)?)
                    }
                    ["annotation", "object", "name"] => {
                        if let Some(cur) = current.as_mut() {
                            cur.name = Some(text.to_owned());
                        }
                    }
                    ["annotation", "object", "bndbox", coord @ ("xmin" | "ymin" | "xmax" | "ymax")] =>
                    {
                        if let Some(cur) = current.as_mut() {
                            let v = parse_pixel(&format!("bndbox/{coord}"), text)?;
                            match *coord {
                                "xmin" => cur.xmin = Some(v),
                                "ymin" => cur.ymin = Some(v),
                                "xmax" => cur.xmax = Some(v),
                                "ymax" => cur.ymax = Some(v),
                                _ => unreachable!(),
                            }
                        }
                    }
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }

    let ann = ImageAnnotation {
        image_path: filename.ok_or_else(|| VocError::Schema("missing filename".into()))?,
        width: width.ok_or_else(|| VocError::Schema("missing size/width".into()))?,
        height: height.ok_or_else(|| VocError::Schema("missing size/height".into()))?,
        depth: depth.ok_or_else(|| VocError::Schema("missing size/depth".into()))?,
        objects,
    };
    ann.validate(classes)?;
    Ok(ann)
}

/// Serializes an annotation back to VOC XML. The output reparses to an
/// equal [`ImageAnnotation`].
pub fn serialize_voc_xml(ann: &ImageAnnotation) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<annotation>");
    let _ = writeln!(s, "  <filename>{}</filename>", escape(&ann.image_path));
    let _ = writeln!(s, "  <size>");
    let _ = writeln!(s, "    <width>{}</width>", ann.width);
    let _ = writeln!(s, "    <height>{}</height>", ann.height);
    let _ = writeln!(s, "    <depth>{}</depth>", ann.depth);
    let _ = writeln!(s, "  </size>");
    for o in &ann.objects {
        let _ = writeln!(s, "  <object>");
        let _ = writeln!(s, "    <name>{}</name>", escape(&o.class_name));
        let _ = writeln!(s, "    <bndbox>");
        let _ = writeln!(s, "      <xmin>{}</xmin>", o.xmin);
        let _ = writeln!(s, "      <ymin>{}</ymin>", o.ymin);
        let _ = writeln!(s, "      <xmax>{}</xmax>", o.xmax);
        let _ = writeln!(s, "      <ymax>{}</ymax>", o.ymax);
        let _ = writeln!(s, "    </bndbox>");
        let _ = writeln!(s, "  </object>");
    }
    s.push_str("</annotation>\n");
    s
}

/// Per-class label counts plus the grand total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

pub fn class_histogram(annotations: &[ImageAnnotation]) -> ClassHistogram {
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for ann in annotations {
        for o in &ann.objects {
            *counts.entry(o.class_name.clone()).or_insert(0) += 1;
            total += 1;
        }
    }
    ClassHistogram { counts, total }
}

/// Seeded shuffle followed by contiguous slicing. The three outputs
/// partition the input; ratios must sum to 1.
pub fn split_dataset<T: Clone>(
    items: &[T],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), VocError> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(VocError::Config(format!(
            "split ratios must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let n = items.len();
    let n1 = (n as f64 * a).floor() as usize;
    let n2 = (n as f64 * b).floor() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n1]),
        pick(&order[n1..n1 + n2]),
        pick(&order[n1 + n2..]),
    ))
}

/// All .xml files under a dataset directory, sorted for determinism.
pub fn scan_voc_dir(dir: &Path) -> Result<Vec<PathBuf>, VocError> {
    let mut xmls = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) {
                xmls.push(path);
            }
        }
    }
    xmls.sort();
    Ok(xmls)
}

/// Resolves the image referenced by an annotation, trying the annotation's
/// directory and a sibling `JPEGImages/` directory.
pub fn resolve_image_path(xml_path: &Path, ann: &ImageAnnotation) -> Result<PathBuf, VocError> {
    let dir = xml_path.parent().unwrap_or(Path::new("."));
    let mut candidates = vec![dir.join(&ann.image_path)];
    if let Some(parent) = dir.parent() {
        candidates.push(parent.join("JPEGImages").join(&ann.image_path));
        candidates.push(parent.join(&ann.image_path));
    }
    candidates.into_iter().find(|p| p.is_file()).ok_or_else(|| {
        VocError::Config(format!(
            "image {:?} referenced by {:?} not found",
            ann.image_path, xml_path
        ))
    })
}

/// Parses every annotation under a dataset directory.
pub fn load_voc_dir(
    dir: &Path,
    classes: &ClassList,
) -> Result<Vec<(PathBuf, ImageAnnotation)>, VocError> {
    let mut out = Vec::new();
    for path in scan_voc_dir(dir)? {
        let bytes = std::fs::read(&path)?;
        let ann = parse_voc_xml(&bytes, classes)?;
        out.push((path, ann));
    }
    Ok(out)
}
