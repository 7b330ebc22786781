//! Scratch experiment, removed before delivery.

use dva::data::{load_manifest, synth_dataset, DataConfig, Split, SynthConfig};
use dva::metrics::{cc, nss, ContinuousMap, FixationMap, SaliencyMap};
use dva::network::{build, forward, FusionMode, NetworkGrads, NetworkSpec, NetworkState};
use dva::tensor::Tensor4;
use dva::train::{items_for_split, train, TrainConfig, TrainItem, TrainSinks};

fn score(map: &Tensor4, gt: &ContinuousMap) -> Option<f64> {
    let clamped = map.map_unary(|v| v.clamp(0.0, 1.0));
    SaliencyMap::from_tensor(&clamped)
        .and_then(|s| cc(&s, gt))
        .ok()
}

fn eval_state(
    items: &[TrainItem],
    state: &NetworkState,
) -> dva::Result<(Option<f64>, Option<f64>, Vec<Option<f64>>, f64)> {
    let branches = state.spec.branches();
    let mut fused = Vec::new();
    let mut avg = Vec::new();
    let mut branch: Vec<Vec<f64>> = vec![Vec::new(); branches];
    let mut nss_sum = 0.0;
    for item in items {
        let trace = forward(state, &item.image)?;
        let gt = ContinuousMap::from_tensor(&item.gt)?;
        if let Some(v) = score(&trace.fused_map, &gt) {
            fused.push(v);
        }
        let s = trace.fused_map.shape();
        let fix = FixationMap::new(s.h, s.w, &item.fixations)?;
        let clamped = trace.fused_map.map_unary(|v| v.clamp(0.0, 1.0));
        nss_sum += nss(&SaliencyMap::from_tensor(&clamped)?, &fix).unwrap_or(0.0);
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
    Ok((
        mean(&fused),
        mean(&avg),
        branch.iter().map(mean).collect(),
        nss_sum / items.len() as f64,
    ))
}

fn main() -> dva::Result<()> {
    let dims = (32usize, 32usize);
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
        max_side: 32,
        ..DataConfig::default()
    };
    let items = items_for_split(&records, Split::Train, &data_cfg)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "  undef".into(), |x| format!("{x:7.4}"));

    for batch in [16usize, 8] {
        println!("batch {batch}, lr 1e-4, marks every 500 iters");
        let mut spec = NetworkSpec::tiny();
        spec.input_dims = dims;
        spec.fusion = FusionMode::LearnedSigmoid;
        spec.deep_supervision = true;
        let mut state = build(&spec, 1, None)?;
        let mut velocity = NetworkGrads::zeros_like(&state);
        let t0 = std::time::Instant::now();
        for leg in 1..=4usize {
            let cfg = TrainConfig {
                iterations: leg * 500,
                batch_size: batch,
                validate_every: 0,
                checkpoint_every: 0,
                seed: 1,
                ..TrainConfig::default()
            };
            let logs = train(
                &mut state,
                &mut velocity,
                (leg - 1) * 500,
                &items,
                &[],
                &cfg,
                &TrainSinks::default(),
            )?;
            let last = logs.last().unwrap().loss.combined;
            let (fused, avg, branches, nss_v) = eval_state(&items, &state)?;
            println!(
                "  iter {:>4}: fused {} avg {} branches {:?} nss {:.3} loss {:.0}  ({:.0}s)",
                leg * 500,
                fmt(fused),
                fmt(avg),
                branches.iter().map(|v| fmt(*v)).collect::<Vec<_>>(),
                nss_v,
                last,
                t0.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
