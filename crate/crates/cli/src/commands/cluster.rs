//! `cayk cluster-anchors`

use super::load_classes;
use crate::error::{read_file, CliError};
use crate::manifest::{default_manifest_path, ManifestBuilder};
use crate::ClusterArgs;
use cayk_core::anchors::{self, AnchorError, BoxWH};
use cayk_core::voc;
use serde_json::json;

pub fn run(args: ClusterArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::new("cluster-anchors", args.seed);

    let boxes: Vec<BoxWH> = match (&args.boxes, &args.voc) {
        (Some(path), None) => {
            manifest.input(path);
            anchors::parse_box_list(&read_file(path)?)
                .map_err(|e| CliError::io_config(format!("{}: {e}", path.display())))?
        }
        (None, Some(dir)) => {
            manifest.input(dir);
            let classes = load_classes(args.classes.as_deref())?;
            let parsed = voc::load_voc_dir(dir, &classes)
                .map_err(|e| CliError::io_config(format!("{}: {e}", dir.display())))?;
            let annotations: Vec<_> = parsed.into_iter().map(|(_, a)| a).collect();
            voc::boxes_for_clustering(&annotations, args.input_size)
        }
        _ => {
            return Err(CliError::io_config(
                "exactly one of --boxes or --voc is required",
            ))
        }
    };

    let (centers, stats) =
        anchors::kmeans_boxes(&boxes, args.k, args.seed, args.max_iter, args.tol).map_err(
            |e| match e {
                AnchorError::InsufficientData { .. } | AnchorError::Empty => {
                    CliError::insufficient(e.to_string())
                }
                other => CliError::io_config(other.to_string()),
            },
        )?;

    let line = centers
        .iter()
        .map(|b| format!("{},{}", b.w, b.h))
        .collect::<Vec<_>>()
        .join(", ");
    std::fs::write(&args.out, format!("{line}\n"))?;
    manifest.output(&args.out);

    let stats_path = args.stats.unwrap_or_else(|| {
        let mut os = args.out.as_os_str().to_owned();
        os.push(".stats.json");
        os.into()
    });
    std::fs::write(
        &stats_path,
        serde_json::to_string_pretty(&stats).expect("serializable stats"),
    )?;
    manifest.output(&stats_path);

    println!("anchors: {line}");
    println!(
        "boxes: {}  iterations: {}  mean IoU: {:.4}",
        boxes.len(),
        stats.iterations,
        stats.mean_iou
    );

    manifest.config(json!({
        "k": args.k,
        "seed": args.seed,
        "max_iter": args.max_iter,
        "tol": args.tol,
        "input_size": args.input_size,
    }));
    manifest.details(json!({
        "mean_iou": stats.mean_iou,
        "iterations": stats.iterations,
        "box_count": boxes.len(),
    }));
    let manifest_path = args
        .manifest
        .unwrap_or_else(|| default_manifest_path(&args.out));
    manifest.write(&manifest_path)?;
    Ok(())
}
