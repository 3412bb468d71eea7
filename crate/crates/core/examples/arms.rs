//! Runs the base and rewired models on one synthetic bipartite stream and
//! prints both test MRRs.
//!
//! `cargo run --release --example arms -- [seed] [epochs] [dim] [lr] [surprise] [layer] [scope]`

use std::time::Instant;

use tgr_core::data::{gen_bipartite, BipartiteSpec};
use tgr_core::eval::{run_experiment, ExperimentConfig};
use tgr_core::nn::LayerKind;
use tgr_core::tgn::TgnConfig;
use tgr_core::tgr::{MixerConfig, Scope, TgrState};

fn main() -> tgr_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let seed: u64 = arg(0, "0").parse().unwrap();
    let epochs: usize = arg(1, "3").parse().unwrap();
    let dim: usize = arg(2, "32").parse().unwrap();
    let lr: f64 = arg(3, "1e-3").parse().unwrap();
    let surprise: f64 = arg(4, "0.8").parse().unwrap();
    let layer: LayerKind = arg(5, "gat").parse().unwrap();
    let scope: Scope = arg(6, "batch").parse().unwrap();

    let stream = gen_bipartite(&BipartiteSpec {
        surprise_target: surprise,
        seed,
        ..BipartiteSpec::default()
    })?;
    let tgn = TgnConfig {
        memory_dim: dim,
        embed_dim: dim,
        time_dim: dim / 2,
        lr,
        seed,
        ..TgnConfig::default()
    };
    let cfg = ExperimentConfig {
        max_epochs: epochs,
        patience: epochs,
        seed,
        ..ExperimentConfig::default()
    };
    for mixer in [None, Some(MixerConfig { layer, scope, ..MixerConfig::default() })] {
        let name = if mixer.is_some() { "tgr" } else { "tgn" };
        let t0 = Instant::now();
        let model = TgrState::new(tgn.clone(), mixer, &stream)?;
        let out = run_experiment(model, &stream, &cfg, Vec::new(), &mut |r| {
            eprintln!("{name} {}", r.to_json());
        })?;
        println!(
            "{name} seed={seed} test_mrr={:.4} best_epoch={} secs={:.1}",
            out.report.test_mrr,
            out.report.best_epoch,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
