//! Scratch experiment, removed before delivery.

use dva::data::{load_manifest, synth_dataset, DataConfig, Split, SynthConfig};
use dva::metrics::{cc, ContinuousMap, SaliencyMap};
use dva::network::{build, forward, FusionMode, NetworkGrads, NetworkSpec, NetworkState};
use dva::train::{items_for_split, train, TrainConfig, TrainItem, TrainSinks};

fn mean_cc(items: &[TrainItem], state: &NetworkState) -> dva::Result<(Option<f64>, Vec<Option<f64>>)> {
    let branches = state.spec.branches();
    let mut fused = Vec::new();
    let mut branch: Vec<Vec<f64>> = vec![Vec::new(); branches];
    for item in items {
        let trace = forward(state, &item.image)?;
        let gt = ContinuousMap::from_tensor(&item.gt)?;
        let score = |map: &dva::tensor::Tensor4| -> Option<f64> {
            let clamped = map.map_unary(|v| v.clamp(0.0, 1.0));
            SaliencyMap::from_tensor(&clamped)
                .and_then(|s| cc(&s, &gt))
                .ok()
        };
        if let Some(v) = score(&trace.fused_map) {
            fused.push(v);
        }
        for (m, map) in trace.branch_maps.iter().enumerate() {
            if let Some(v) = score(map) {
                branch[m].push(v);
            }
        }
    }
    let mean = |v: &Vec<f64>| (v.len() == items.len()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok((mean(&fused), branch.iter().map(mean).collect()))
}

fn run_one(
    items: &[TrainItem],
    fusion: FusionMode,
    ds: bool,
    seed: u64,
    iters: usize,
    batch: usize,
    lr: f64,
) -> dva::Result<(Option<f64>, Vec<Option<f64>>)> {
    let mut spec = NetworkSpec::tiny();
    spec.input_dims = (16, 16);
    spec.fusion = fusion;
    spec.deep_supervision = ds;
    let cfg = TrainConfig {
        iterations: iters,
        batch_size: batch,
        learning_rate: lr,
        validate_every: 0,
        checkpoint_every: 0,
        seed,
        ..TrainConfig::default()
    };
    let mut state = build(&spec, seed, None)?;
    let mut velocity = NetworkGrads::zeros_like(&state);
    train(&mut state, &mut velocity, 0, items, &[], &cfg, &TrainSinks::default())?;
    mean_cc(items, &state)
}

fn main() -> dva::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let synth_cfg = SynthConfig {
        count: 8,
        dims: (16, 16),
        val_fraction: 0.0,
        seed: 1,
        ..SynthConfig::default()
    };
    let manifest = synth_dataset(dir.path(), &synth_cfg)?;
    let records = load_manifest(&manifest)?;
    let data_cfg = DataConfig {
        max_side: 16,
        ..DataConfig::default()
    };
    let items = items_for_split(&records, Split::Train, &data_cfg)?;

    let fmt = |v: Option<f64>| v.map_or_else(|| "  undef".into(), |x| format!("{x:7.4}"));
    for (iters, batch, lr) in [(250usize, 8usize, 5e-4), (500, 16, 1e-4)] {
        println!("recipe: {iters} iters, batch {batch}, lr {lr}");
        for seed in [1u64, 2, 3] {
            let t0 = std::time::Instant::now();
            let (learned, learned_br) =
                run_one(&items, FusionMode::LearnedSigmoid, true, seed, iters, batch, lr)?;
            let (average, _) =
                run_one(&items, FusionMode::Average, true, seed, iters, batch, lr)?;
            let (no_ds, _) =
                run_one(&items, FusionMode::LearnedSigmoid, false, seed, iters, batch, lr)?;
            let best_branch = learned_br
                .iter()
                .filter_map(|v| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            println!(
                "  seed {seed}: learned {} average {} best_branch {} no_ds {}  branches {:?}  ({:.0}s)",
                fmt(learned),
                fmt(average),
                fmt((best_branch.is_finite()).then_some(best_branch)),
                fmt(no_ds),
                learned_br.iter().map(|v| fmt(*v)).collect::<Vec<_>>(),
                t0.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
