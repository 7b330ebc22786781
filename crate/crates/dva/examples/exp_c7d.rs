//! Scratch experiment, removed before delivery.

use dva::data::{load_manifest, synth_dataset, DataConfig, Split, SynthConfig};
use dva::metrics::{cc, nss, ContinuousMap, FixationMap, SaliencyMap};
use dva::network::{build, forward, FusionMode, NetworkGrads, NetworkSpec, NetworkState};
use dva::tensor::Tensor4;
use dva::train::{items_for_split, train, TrainConfig, TrainItem, TrainSinks};
use dva::weights::save_weights;
use std::path::Path;

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

fn spec_for(dims: (usize, usize), ds: bool) -> NetworkSpec {
    let mut spec = NetworkSpec::tiny();
    spec.input_dims = dims;
    spec.fusion = FusionMode::LearnedSigmoid;
    spec.deep_supervision = ds;
    spec
}

/// Donor encoder at He scale: rescale the built Gaussian(0, 0.01) draws per
/// layer to sqrt(2 / fan_in).
fn write_donor(spec: &NetworkSpec, seed: u64, path: &Path) -> dva::Result<()> {
    let mut donor = build(spec, seed, None)?;
    for layer in &mut donor.encoder {
        let s = layer.weights.shape();
        let fan_in = s.c * s.h * s.w;
        let factor = (2.0 / fan_in as f64).sqrt() / 0.01;
        for v in layer.weights.data_mut() {
            *v *= factor;
        }
    }
    save_weights(&donor, path)
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

    let donor_path = dir.path().join("donor.dvaw");
    write_donor(&spec_for(dims, true), 1001, &donor_path)?;

    for iters in [2000usize] {
        println!("pretrained-analog encoder, {iters} iters, train defaults");
        for seed in [1u64, 2, 3] {
            let t0 = std::time::Instant::now();
            let mut results = Vec::new();
            for ds in [true, false] {
                let spec = spec_for(dims, ds);
                let cfg = TrainConfig {
                    iterations: iters,
                    validate_every: 0,
                    checkpoint_every: 0,
                    seed,
                    ..TrainConfig::default()
                };
                let mut state = build(&spec, seed, Some(&donor_path))?;
                let mut velocity = NetworkGrads::zeros_like(&state);
                let logs = train(
                    &mut state,
                    &mut velocity,
                    0,
                    &items,
                    &[],
                    &cfg,
                    &TrainSinks::default(),
                )?;
                let first = logs.first().unwrap().loss.combined;
                let last = logs.last().unwrap().loss.combined;
                results.push((eval_state(&items, &state)?, first, last));
            }
            let ((fused, avg, branches, nss_v), first, last) = results.remove(0);
            let ((no_ds, _, _, _), _, _) = results.remove(0);
            println!(
                "  seed {seed}: fused {} avg {} branches {:?} no_ds {} nss {:.3} loss {first:.0}->{last:.0}  ({:.0}s)",
                fmt(fused),
                fmt(avg),
                branches.iter().map(|v| fmt(*v)).collect::<Vec<_>>(),
                fmt(no_ds),
                nss_v,
                t0.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
