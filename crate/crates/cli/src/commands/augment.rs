//! `cayk augment`

use super::load_classes;
use crate::error::{read_file, CliError};
use crate::manifest::ManifestBuilder;
use crate::AugmentArgs;
use cayk_core::voc::{
    augment, parse_voc_xml, resolve_image_path, scan_voc_dir, serialize_voc_xml, AppliedOp,
    AugmentSpec, RasterImage,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::path::Path;

#[derive(Serialize)]
struct ItemLog {
    annotation: String,
    image: String,
    applied: Vec<AppliedOp>,
}

/// Per-item RNG stream split off the master seed; results do not depend on
/// scheduling order.
fn item_rng(master: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(master ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct ItemOutcome {
    log: ItemLog,
}

fn process_item(
    index: usize,
    xml_path: &Path,
    spec: &AugmentSpec,
    master_seed: u64,
    classes: &cayk_core::voc::ClassList,
    ann_out: &Path,
    img_out: &Path,
) -> Result<ItemOutcome, String> {
    let fail = |e: &dyn std::fmt::Display| format!("{}: {e}", xml_path.display());
    let bytes = std::fs::read(xml_path).map_err(|e| fail(&e))?;
    let ann = parse_voc_xml(&bytes, classes).map_err(|e| fail(&e))?;
    let image_path = resolve_image_path(xml_path, &ann).map_err(|e| fail(&e))?;
    let image = RasterImage::load(&image_path).map_err(|e| fail(&e))?;

    let mut rng = item_rng(master_seed, index);
    let (out_image, out_ann, applied) =
        augment(&image, &ann, spec, &mut rng).map_err(|e| fail(&e))?;

    let stem = xml_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| fail(&"annotation file has no stem"))?;
    let out_xml_path = ann_out.join(format!("{stem}.xml"));

    if applied.is_empty() {
        // Nothing changed: copy both files byte-for-byte.
        let out_img_path = img_out.join(
            Path::new(&ann.image_path)
                .file_name()
                .ok_or_else(|| fail(&"bad image file name"))?,
        );
        std::fs::copy(&image_path, &out_img_path).map_err(|e| fail(&e))?;
        std::fs::write(&out_xml_path, &bytes).map_err(|e| fail(&e))?;
        return Ok(ItemOutcome {
            log: ItemLog {
                annotation: format!("{stem}.xml"),
                image: ann.image_path,
                applied,
            },
        });
    }

    // Transformed output is always PNG.
    let out_image_name = format!(
        "{}.png",
        Path::new(&ann.image_path)
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| fail(&"bad image file name"))?
    );
    let mut final_ann = out_ann;
    final_ann.image_path = out_image_name.clone();
    out_image
        .save_png(&img_out.join(&out_image_name))
        .map_err(|e| fail(&e))?;
    std::fs::write(&out_xml_path, serialize_voc_xml(&final_ann)).map_err(|e| fail(&e))?;
    Ok(ItemOutcome {
        log: ItemLog {
            annotation: format!("{stem}.xml"),
            image: out_image_name,
            applied,
        },
    })
}

pub fn run(args: AugmentArgs) -> Result<(), CliError> {
    let spec = match &args.spec {
        Some(path) => AugmentSpec::parse_toml(&read_file(path)?)
            .map_err(|e| CliError::io_config(format!("{}: {e}", path.display())))?,
        None => AugmentSpec::default(),
    };
    let master_seed = args.seed.unwrap_or(spec.seed);
    let mut manifest = ManifestBuilder::new("augment", master_seed);
    manifest.input(&args.voc);
    if let Some(p) = &args.spec {
        manifest.input(p);
    }

    let classes = load_classes(args.classes.as_deref())?;
    let xmls = scan_voc_dir(&args.voc)
        .map_err(|e| CliError::io_config(format!("{}: {e}", args.voc.display())))?;
    if xmls.is_empty() {
        return Err(CliError::insufficient(format!(
            "no annotation files under {}",
            args.voc.display()
        )));
    }

    let ann_out = args.out.join("Annotations");
    let img_out = args.out.join("JPEGImages");
    std::fs::create_dir_all(&ann_out)?;
    std::fs::create_dir_all(&img_out)?;

    let pool = crate::thread_pool()?;
    let results: Vec<Result<ItemOutcome, String>> = pool.install(|| {
        xmls.par_iter()
            .enumerate()
            .map(|(i, xml)| process_item(i, xml, &spec, master_seed, &classes, &ann_out, &img_out))
            .collect()
    });

    let mut logs = Vec::new();
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok(outcome) => logs.push(outcome.log),
            Err(msg) => {
                failures += 1;
                eprintln!("error: {msg}");
            }
        }
    }

    let log_path = args.out.join("augment_log.jsonl");
    let body = logs
        .iter()
        .map(|l| serde_json::to_string(l).expect("serializable log"))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&log_path, body + "\n")?;

    println!(
        "augmented {} of {} annotations into {}",
        logs.len(),
        xmls.len(),
        args.out.display()
    );

    manifest.config(json!({ "spec": spec, "seed": master_seed }));
    manifest.details(json!({ "items": logs.len(), "failures": failures }));
    manifest.output(&args.out);
    manifest.output(&log_path);
    manifest.write(&args.out.join("manifest.json"))?;

    if failures > 0 {
        return Err(CliError::per_file(format!(
            "{failures} annotation file(s) failed"
        )));
    }
    Ok(())
}
