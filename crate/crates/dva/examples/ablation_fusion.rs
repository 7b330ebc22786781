//! Ablates the fusion stage on a small synthetic problem: learned fusion
//! weights against plain averaging, and deep supervision on against off,
//! compared by validation CC of the fused map and of each branch alone.
//!
//! Run with: `cargo run --release -p dva --example ablation_fusion`

use dva::data::{load_manifest, synth_dataset, DataConfig, Split, SynthConfig};
use dva::metrics::{cc, ContinuousMap, SaliencyMap};
use dva::network::{build, forward, FusionMode, NetworkGrads, NetworkSpec};
use dva::train::{items_for_split, train, TrainConfig, TrainItem, TrainSinks};

/// Mean validation CC of the fused map and of each branch map.
fn val_cc(
    state: &dva::network::NetworkState,
    val_items: &[TrainItem],
) -> dva::Result<(f64, Vec<f64>)> {
    let branches = state.spec.branches();
    let mut fused_sum = 0.0;
    let mut branch_sums = vec![0.0; branches];
    let mut counted = 0usize;
    for item in val_items {
        let trace = forward(state, &item.image)?;
        let gt = ContinuousMap::from_tensor(&item.gt)?;
        let score = |map: &dva::tensor::Tensor4| -> dva::Result<f64> {
            let clamped = map.map_unary(|v| v.clamp(0.0, 1.0));
            cc(&SaliencyMap::from_tensor(&clamped)?, &gt)
        };
        fused_sum += score(&trace.fused_map)?;
        for (m, map) in trace.branch_maps.iter().enumerate() {
            branch_sums[m] += score(map)?;
        }
        counted += 1;
    }
    let n = counted as f64;
    Ok((fused_sum / n, branch_sums.iter().map(|s| s / n).collect()))
}

fn train_variant(
    label: &str,
    fusion: FusionMode,
    deep_supervision: bool,
    items: &[TrainItem],
    val_items: &[TrainItem],
) -> dva::Result<()> {
    let mut spec = NetworkSpec::tiny();
    spec.input_dims = (32, 32);
    spec.fusion = fusion;
    spec.deep_supervision = deep_supervision;
    let cfg = TrainConfig {
        iterations: 120,
        batch_size: 4,
        learning_rate: 1e-3,
        validate_every: 0,
        checkpoint_every: 0,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut state = build(&spec, cfg.seed, None)?;
    let mut velocity = NetworkGrads::zeros_like(&state);
    train(
        &mut state,
        &mut velocity,
        0,
        items,
        val_items,
        &cfg,
        &TrainSinks::default(),
    )?;
    let (fused, branches) = val_cc(&state, val_items)?;
    print!("{label:<24} fused CC {fused:>7.4}  branches");
    for b in &branches {
        print!(" {b:>7.4}");
    }
    println!();
    Ok(())
}

fn main() -> dva::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let synth_cfg = SynthConfig {
        count: 12,
        dims: (32, 32),
        seed: 5,
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
        "{} train / {} val synthetic images, 120 iterations each\n",
        items.len(),
        val_items.len()
    );

    train_variant(
        "learned fusion, deep",
        FusionMode::LearnedSigmoid,
        true,
        &items,
        &val_items,
    )?;
    train_variant(
        "average fusion, deep",
        FusionMode::Average,
        true,
        &items,
        &val_items,
    )?;
    train_variant(
        "learned fusion, no deep",
        FusionMode::LearnedSigmoid,
        false,
        &items,
        &val_items,
    )?;
    println!("\nwithout deep supervision only the fusion loss trains the branches");
    Ok(())
}
