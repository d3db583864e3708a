//! `cayk bench`
//!
//! Single-precision micro-benchmarks of the attention block and the full
//! forward pass. Timings come from this CPU reference implementation and
//! are not comparable to GPU-accelerated deployments.

use super::load_net_config;
use crate::error::CliError;
use crate::manifest::{default_manifest_path, ManifestBuilder};
use crate::BenchArgs;
use cayk_core::attention::{ca_forward, CoordAttentionParams};
use cayk_core::graph::{build_model, NetConfig};
use cayk_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use std::time::Instant;

pub const NON_COMPARABLE_NOTE: &str =
    "CPU reference implementation; timings are not comparable to GPU-accelerated deployments";

#[derive(Serialize, Clone)]
struct BenchEntry {
    label: String,
    iters: usize,
    mean_ms: f64,
    median_ms: f64,
    ops_per_sec: f64,
}

fn summarize(label: &str, mut times_ms: Vec<f64>) -> BenchEntry {
    times_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = times_ms.iter().sum::<f64>() / times_ms.len() as f64;
    let median = times_ms[times_ms.len() / 2];
    BenchEntry {
        label: label.to_owned(),
        iters: times_ms.len(),
        mean_ms: mean,
        median_ms: median,
        ops_per_sec: 1e3 / mean,
    }
}

fn time_loop(iters: usize, mut f: impl FnMut()) -> Vec<f64> {
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        f();
        out.push(t.elapsed().as_secs_f64() * 1e3);
    }
    out
}

fn bench_ca(cfg: &NetConfig, iters: usize, seed: u64) -> BenchEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = 64;
    let params = CoordAttentionParams::<f32>::init(channels, cfg.ca_reduction, &mut rng);
    let x = Tensor::<f32>::from_fn([1, channels, 104, 104], |_, _, _, _| {
        rng.gen_range(-1.0f32..1.0)
    });
    let times = time_loop(iters, || {
        let (y, _) = ca_forward(&x, &params).expect("valid shapes");
        std::hint::black_box(y);
    });
    summarize("ca 1x64x104x104 f32", times)
}

fn bench_forward(cfg: &NetConfig, iters: usize, seed: u64) -> Result<Vec<BenchEntry>, CliError> {
    let mut entries = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.input_size;
    let x = Tensor::<f32>::from_fn([1, 3, s, s], |_, _, _, _| rng.gen_range(-1.0f32..1.0));
    for (label, mode_cfg) in [
        ("forward baseline f32", NetConfig {
            ca_enabled: false,
            spp_conv_count: 3,
            lateral_conv_count: 1,
            ..cfg.clone()
        }),
        ("forward improved f32", NetConfig {
            ca_enabled: true,
            spp_conv_count: 5,
            lateral_conv_count: 3,
            ..cfg.clone()
        }),
    ] {
        let model = build_model::<f32>(&mode_cfg, seed)
            .map_err(|e| CliError::io_config(e.to_string()))?;
        let times = time_loop(iters, || {
            let out = model.forward(&x).expect("valid input");
            std::hint::black_box(out);
        });
        entries.push(summarize(label, times));
    }
    Ok(entries)
}

pub fn run(args: BenchArgs) -> Result<(), CliError> {
    let cfg = load_net_config(args.config.as_deref())?;
    let mut manifest = ManifestBuilder::new("bench", args.seed);
    if let Some(p) = &args.config {
        manifest.input(p);
    }
    if args.iters == 0 {
        return Err(CliError::io_config("--iters must be at least 1"));
    }

    let entries = match args.op.as_str() {
        "ca" => vec![bench_ca(&cfg, args.iters, args.seed)],
        "forward" => bench_forward(&cfg, args.iters, args.seed)?,
        other => return Err(CliError::io_config(format!("unknown op {other:?}"))),
    };

    for e in &entries {
        println!(
            "{}: mean {:.3} ms, median {:.3} ms, {:.2} ops/s over {} iters",
            e.label, e.mean_ms, e.median_ms, e.ops_per_sec, e.iters
        );
    }
    println!("note: {NON_COMPARABLE_NOTE}");

    let payload = json!({
        "op": args.op,
        "width_multiplier": cfg.width.to_string(),
        "input_size": cfg.input_size,
        "entries": entries,
        "note": NON_COMPARABLE_NOTE,
    });
    let out = args.out.clone().unwrap_or_else(|| "bench_report.json".into());
    std::fs::write(&out, serde_json::to_string_pretty(&payload).unwrap())?;
    manifest.output(&out);

    manifest.config(json!({
        "op": args.op,
        "iters": args.iters,
        "seed": args.seed,
        "net": cfg,
    }));
    manifest.details(payload);
    let manifest_out = args.manifest.clone().unwrap_or_else(|| default_manifest_path(&out));
    manifest.write(&manifest_out)?;
    Ok(())
}
