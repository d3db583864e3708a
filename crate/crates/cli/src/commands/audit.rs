//! `cayk audit`

use super::load_net_config;
use crate::error::CliError;
use crate::manifest::ManifestBuilder;
use crate::AuditArgs;
use cayk_core::graph::{plan_model, GraphPlan, NetConfig};
use serde_json::json;

fn apply_mode(cfg: &NetConfig, mode: &str) -> NetConfig {
    let template = if mode == "baseline" {
        NetConfig::baseline()
    } else {
        NetConfig::improved()
    };
    NetConfig {
        ca_enabled: template.ca_enabled,
        spp_conv_count: template.spp_conv_count,
        lateral_conv_count: template.lateral_conv_count,
        ..cfg.clone()
    }
}

fn layer_table(plan: &GraphPlan) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<4} {:<16} {:<22} {:<24} {:<16} {:>12}\n",
        "#", "name", "type", "in", "out", "params"
    ));
    let fmt_shape = |s: (usize, usize, usize)| format!("{}x{}x{}", s.0, s.1, s.2);
    for row in plan.describe() {
        let ins = row
            .in_shapes
            .iter()
            .map(|&s| fmt_shape(s))
            .collect::<Vec<_>>()
            .join(" + ");
        out.push_str(&format!(
            "{:<4} {:<16} {:<22} {:<24} {:<16} {:>12}\n",
            row.index,
            row.name,
            row.kind,
            ins,
            fmt_shape(row.out_shape),
            row.params
        ));
    }
    out.push_str(&format!(
        "{:<4} {:<16} {:<22} {:<24} {:<16} {:>12}\n",
        "", "total", "", "", "", plan.param_count()
    ));
    out
}

fn structure_summary(plan: &GraphPlan) -> serde_json::Value {
    json!({
        "total_params": plan.param_count(),
        "params_millions": plan.param_count() as f64 / 1e6,
        "attention_blocks": plan.count_kind("coordinate-attention"),
        "spp_pre_convs": plan.count_name_prefix("spp_pre_"),
        "spp_post_convs": plan.count_name_prefix("spp_post_"),
        "lat4_convs": plan.count_name_prefix("lat4_"),
        "lat3_convs": plan.count_name_prefix("lat3_"),
        "nodes": plan.nodes.len(),
    })
}

pub fn run(args: AuditArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::new("audit", 0);
    let mut cfg = load_net_config(args.config.as_deref())?;
    if let Some(p) = &args.config {
        manifest.input(p);
    }
    if let Some(mode) = &args.mode {
        cfg = apply_mode(&cfg, mode);
    }
    let plan = plan_model(&cfg).map_err(|e| CliError::io_config(e.to_string()))?;

    let mut payload = json!({
        "config": cfg,
        "summary": structure_summary(&plan),
        "layers": plan.describe(),
    });

    if args.diff {
        let baseline = plan_model(&apply_mode(&cfg, "baseline"))
            .map_err(|e| CliError::io_config(e.to_string()))?;
        let improved = plan_model(&apply_mode(&cfg, "improved"))
            .map_err(|e| CliError::io_config(e.to_string()))?;
        let diff = json!({
            "baseline": structure_summary(&baseline),
            "improved": structure_summary(&improved),
            "added_attention_blocks": improved.count_kind("coordinate-attention") as i64
                - baseline.count_kind("coordinate-attention") as i64,
            "added_spp_convs": (improved.count_name_prefix("spp_pre_")
                + improved.count_name_prefix("spp_post_")) as i64
                - (baseline.count_name_prefix("spp_pre_")
                    + baseline.count_name_prefix("spp_post_")) as i64,
            "added_lat4_convs": improved.count_name_prefix("lat4_") as i64
                - baseline.count_name_prefix("lat4_") as i64,
            "added_lat3_convs": improved.count_name_prefix("lat3_") as i64
                - baseline.count_name_prefix("lat3_") as i64,
            "param_delta": improved.param_count() as i64 - baseline.param_count() as i64,
        });
        payload["diff"] = diff;
    }

    if args.json {
        println!("{}", serde_json::to_string_pretty(&payload).unwrap());
    } else {
        print!("{}", layer_table(&plan));
        println!(
            "total parameters: {} ({:.2}M)",
            plan.param_count(),
            plan.param_count() as f64 / 1e6
        );
        if let Some(diff) = payload.get("diff") {
            println!("diff: {}", serde_json::to_string_pretty(diff).unwrap());
        }
    }

    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&payload).unwrap())?;
        manifest.output(out);
    }
    if let Some(path) = &args.manifest {
        manifest.config(&cfg);
        manifest.details(structure_summary(&plan));
        manifest.write(path)?;
    } else if let Some(out) = &args.out {
        manifest.config(&cfg);
        manifest.details(structure_summary(&plan));
        manifest.write(&crate::manifest::default_manifest_path(out))?;
    }
    Ok(())
}
