//! Trains the tiny profile on a generated blob dataset and reports the loss
//! trajectory plus validation scores.
//!
//! Run with: `cargo run --release -p dva --example train_synthetic`

use dva::data::{load_manifest, synth_dataset, DataConfig, Split, SynthConfig};
use dva::metrics::format_sig6;
use dva::network::{build, NetworkGrads, NetworkSpec};
use dva::train::{items_for_split, train, TrainConfig, TrainSinks};
use dva::weights::save_weights;

fn main() -> dva::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let synth_cfg = SynthConfig {
        count: 12,
        dims: (32, 32),
        seed: 7,
        ..SynthConfig::default()
    };
    let manifest = synth_dataset(dir.path(), &synth_cfg)?;
    let records = load_manifest(&manifest)?;
    let data_cfg = DataConfig {
        max_side: 32,
        ..DataConfig::default()
    };
    let items = items_for_split(&records, Split::Train, &data_cfg)?;
    let val_items = items_for_split(&records, Split::Val, &data_cfg)?;
    println!(
        "synthetic dataset: {} train images, {} val images, 32x32",
        items.len(),
        val_items.len()
    );

    let mut spec = NetworkSpec::tiny();
    spec.input_dims = (32, 32);
    let cfg = TrainConfig {
        iterations: 80,
        batch_size: 4,
        learning_rate: 1e-3,
        validate_every: 20,
        checkpoint_every: 0,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut state = build(&spec, cfg.seed, None)?;
    let mut velocity = NetworkGrads::zeros_like(&state);
    let logs = train(
        &mut state,
        &mut velocity,
        0,
        &items,
        &val_items,
        &cfg,
        &TrainSinks::default(),
    )?;

    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), format_sig6);
    for log in &logs {
        if let Some((nss, cc)) = log.val {
            println!(
                "iter {:>3}: combined {:>10} val NSS {:>8} val CC {:>8}",
                log.iter,
                format_sig6(log.loss.combined),
                fmt(nss),
                fmt(cc)
            );
        }
    }
    let first = logs.first().expect("trained at least one iteration");
    let last = logs.last().expect("trained at least one iteration");
    println!(
        "combined loss fell {} -> {} over {} iterations",
        format_sig6(first.loss.combined),
        format_sig6(last.loss.combined),
        logs.len()
    );

    let out = dir.path().join("trained.dvaw");
    save_weights(&state, &out)?;
    let bytes = std::fs::metadata(&out).map(|m| m.len()).unwrap_or(0);
    println!("weight file: {bytes} bytes (temporary, removed on exit)");
    Ok(())
}
