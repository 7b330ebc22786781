//! Scratch experiment, removed before delivery.

use dva::data::{load_manifest, synth_dataset, DataConfig, Split, SynthConfig};
use dva::metrics::{cc, ContinuousMap, SaliencyMap};
use dva::network::{build, forward, FusionMode, NetworkGrads, NetworkSpec, NetworkState};
use dva::tensor::Tensor4;
use dva::train::{items_for_split, train, TrainConfig, TrainItem, TrainSinks};

fn score(map: &Tensor4, gt: &ContinuousMap) -> Option<f64> {
    let clamped = map.map_unary(|v| v.clamp(0.0, 1.0));
    SaliencyMap::from_tensor(&clamped)
        .and_then(|s| cc(&s, gt))
        .ok()
}

/// (fused, avg-of-branch-maps, per-branch) mean CC over items; None if any
/// image's map is constant.
fn eval_state(
    items: &[TrainItem],
    state: &NetworkState,
) -> dva::Result<(Option<f64>, Option<f64>, Vec<Option<f64>>)> {
    let branches = state.spec.branches();
    let mut fused = Vec::new();
    let mut avg = Vec::new();
    let mut branch: Vec<Vec<f64>> = vec![Vec::new(); branches];
    for item in items {
        let trace = forward(state, &item.image)?;
        let gt = ContinuousMap::from_tensor(&item.gt)?;
        if let Some(v) = score(&trace.fused_map, &gt) {
            fused.push(v);
        }
        let mut mean_map = Tensor4::zeros(trace.branch_maps[0].shape());
        for map in &trace.branch_maps {
            mean_map.axpy(1.0 / branches as f64, map)?;
        }
        if let Some(v) = score(&mean_map, &gt) {
            avg.push(v);
        }
        for (m, map) in trace.branch_maps.iter().enumerate() {
            if let Some(v) = score(map, &gt) {
                branch[m].push(v);
            }
        }
    }
    let mean =
        |v: &Vec<f64>| (v.len() == items.len()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok((mean(&fused), mean(&avg), branch.iter().map(mean).collect()))
}

fn run_one(
    items: &[TrainItem],
    dims: (usize, usize),
    ds: bool,
    seed: u64,
    iters: usize,
) -> dva::Result<(NetworkState, f64, f64)> {
    let mut spec = NetworkSpec::tiny();
    spec.input_dims = dims;
    spec.fusion = FusionMode::LearnedSigmoid;
    spec.deep_supervision = ds;
    let cfg = TrainConfig {
        iterations: iters,
        validate_every: 0,
        checkpoint_every: 0,
        seed,
        ..TrainConfig::default()
    };
    let mut state = build(&spec, seed, None)?;
    let mut velocity = NetworkGrads::zeros_like(&state);
    let logs = train(
        &mut state,
        &mut velocity,
        0,
        items,
        &[],
        &cfg,
        &TrainSinks::default(),
    )?;
    let first = logs.first().unwrap().loss.combined;
    let last = logs.last().unwrap().loss.combined;
    Ok((state, first, last))
}

fn main() -> dva::Result<()> {
    let dims = (32usize, 32usize);
    let iters = 500usize;
    let dir = tempfile::tempdir().expect("tempdir");
    let synth_cfg = SynthConfig {
        count: 8,
        dims,
        val_fraction: 0.0,
        seed: 1,
        ..SynthConfig::default()
    };
    let manifest = synth_dataset(dir.path(), &synth_cfg)?;
    let records = load_manifest(&manifest)?;
    let data_cfg = DataConfig {
        max_side: dims.0.max(dims.1),
        ..DataConfig::default()
    };
    let items = items_for_split(&records, Split::Train, &data_cfg)?;

    let fmt = |v: Option<f64>| v.map_or_else(|| "  undef".into(), |x| format!("{x:7.4}"));
    println!("dims {dims:?}, {iters} iters, train defaults");
    for seed in [1u64, 2, 3] {
        let t0 = std::time::Instant::now();
        let (full, first, last) = run_one(&items, dims, true, seed, iters)?;
        let (fused, avg, branches) = eval_state(&items, &full)?;
        let (no_ds_state, _, _) = run_one(&items, dims, false, seed, iters)?;
        let (no_ds, _, _) = eval_state(&items, &no_ds_state)?;
        println!(
            "  seed {seed}: fused {} avg {} branches {:?} no_ds {}  loss {first:.0}->{last:.0} ({:.0}%)  ({:.0}s)",
            fmt(fused),
            fmt(avg),
            branches.iter().map(|v| fmt(*v)).collect::<Vec<_>>(),
            fmt(no_ds),
            100.0 * last / first,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
