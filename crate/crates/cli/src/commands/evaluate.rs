//! `cayk evaluate`

use super::load_classes;
use crate::error::{read_file, CliError};
use crate::manifest::{default_manifest_path, ManifestBuilder};
use crate::EvaluateArgs;
use cayk_core::eval::{
    evaluate, parse_jsonl, DetectionRecord, EvalError, EvalReport, GroundTruthRecord,
};
use cayk_core::voc::{load_voc_dir, voc_box_to_corners};
use serde_json::json;
use std::path::Path;

fn map_eval_err(context: &Path, e: EvalError) -> CliError {
    match e {
        EvalError::Parse { .. } | EvalError::DegenerateBox(_) => {
            CliError::per_file(format!("{}: {e}", context.display()))
        }
        EvalError::NoClasses => CliError::insufficient(e.to_string()),
        other => CliError::io_config(format!("{}: {other}", context.display())),
    }
}

/// Ground truth from a VOC directory: image id is the annotation stem,
/// boxes converted to 0-based half-open corners.
fn gt_from_voc(args: &EvaluateArgs) -> Result<Vec<GroundTruthRecord>, CliError> {
    let classes = load_classes(args.classes.as_deref())?;
    let parsed = load_voc_dir(&args.gt, &classes)
        .map_err(|e| CliError::per_file(format!("{}: {e}", args.gt.display())))?;
    let mut out = Vec::new();
    for (path, ann) in parsed {
        let image_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("unknown")
            .to_owned();
        for o in &ann.objects {
            out.push(GroundTruthRecord {
                image_id: image_id.clone(),
                class: o.class_name.clone(),
                bbox: voc_box_to_corners(o),
            });
        }
    }
    Ok(out)
}

pub fn run(args: EvaluateArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::new("evaluate", 0);
    manifest.input(&args.detections);
    manifest.input(&args.gt);

    let dets: Vec<DetectionRecord> = parse_jsonl(&read_file(&args.detections)?)
        .map_err(|e| map_eval_err(&args.detections, e))?;
    let gts: Vec<GroundTruthRecord> = if args.gt.is_dir() {
        gt_from_voc(&args)?
    } else {
        parse_jsonl(&read_file(&args.gt)?).map_err(|e| map_eval_err(&args.gt, e))?
    };
    if gts.is_empty() {
        return Err(CliError::insufficient("ground truth is empty"));
    }

    let report = evaluate(&dets, &gts, args.iou).map_err(|e| map_eval_err(&args.gt, e))?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        print!("{}", report.text_table());
        println!("mAP: {}", EvalReport::percent(report.map));
    }

    let out = args.out.clone().unwrap_or_else(|| {
        let mut os = args.detections.as_os_str().to_owned();
        os.push(".report.json");
        os.into()
    });
    std::fs::write(&out, serde_json::to_string_pretty(&report).unwrap())?;
    manifest.output(&out);

    if let Some(csv_path) = &args.pr_csv {
        std::fs::write(csv_path, report.pr_csv())?;
        manifest.output(csv_path);
    }

    manifest.config(json!({ "iou": args.iou }));
    manifest.details(json!({
        "map": report.map,
        "classes": report.classes.iter().map(|c| json!({
            "class": c.class,
            "ap": c.ap,
            "gt": c.gt_count,
        })).collect::<Vec<_>>(),
    }));
    let manifest_out = args.manifest.clone().unwrap_or_else(|| default_manifest_path(&out));
    manifest.write(&manifest_out)?;
    Ok(())
}
