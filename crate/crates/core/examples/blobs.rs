//! Trains on the 4-blob benchmark and prints one line per epoch.
//!
//! `cargo run --release -p cc-core --example blobs -- [ablation] [seed] [epochs]`

use std::path::Path;

use cc_core::{train_with, AblationMode, Execution, ExperimentConfig};

fn main() -> cc_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let ablation = match args.next().as_deref() {
        None | Some("full") => AblationMode::Full,
        Some("ich_only") => AblationMode::IchOnly,
        Some("cch_only") => AblationMode::CchOnly,
        Some("raw_second_view") => AblationMode::RawSecondView,
        Some("raw_both_views") => AblationMode::RawBothViews,
        Some(other) => panic!("unknown ablation {other}"),
    };
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let mut config = ExperimentConfig {
        ablation,
        seed,
        ..Default::default()
    };
    if let Some(e) = args.next() {
        config.epochs = e.parse().expect("epochs");
    }
    let dataset = config.prepare_dataset(Path::new("."))?;
    let start = std::time::Instant::now();
    train_with(&config, &dataset, Execution::default(), |r| {
        let m = r.metrics.unwrap();
        println!(
            "{:4} l_ins {:.4} l_clu {:.4} nmi {:.3} acc {:.3} ari {:.3} inst {:.3}/{:.3} clu {:.3}/{:.3}",
            r.epoch, r.l_ins, r.l_clu, m.nmi, m.acc, m.ari, r.pos_sim_inst, r.neg_sim_inst, r.pos_sim_clu, r.neg_sim_clu
        );
    })?;
    eprintln!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
