//! Scratch experiment, removed before delivery.

use dva::data::{load_manifest, synth_dataset, DataConfig, Split, SynthConfig};
use dva::metrics::{cc, ContinuousMap, SaliencyMap};
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
    let mut spec = NetworkSpec::tiny();
    spec.input_dims = dims;
    spec.fusion = FusionMode::LearnedSigmoid;
    spec.deep_supervision = true;
    write_donor(&spec, 1001, &donor_path)?;

    let mut state = build(&spec, 1, Some(&donor_path))?;
    let mut velocity = NetworkGrads::zeros_like(&state);
    let step = 200usize;
    for leg in 1..=10usize {
        let cfg = TrainConfig {
            iterations: leg * step,
            validate_every: 0,
            checkpoint_every: 0,
            seed: 1,
            ..TrainConfig::default()
        };
        let logs = train(
            &mut state,
            &mut velocity,
            (leg - 1) * step,
            &items,
            &[],
            &cfg,
            &TrainSinks::default(),
        )?;
        let last = logs.last().unwrap();
        let (fused, avg, branches) = eval_state(&items, &state)?;
        let mean_branch: f64 =
            last.loss.branch.iter().sum::<f64>() / last.loss.branch.len() as f64;
        println!(
            "iter {:>4}: fused {} avg {} branches {:?}  w {:?}  loss branch {:.1} fusion {:.1}",
            leg * step,
            fmt(fused),
            fmt(avg),
            branches.iter().map(|v| fmt(*v)).collect::<Vec<_>>(),
            state
                .fusion_weights
                .iter()
                .map(|w| format!("{w:6.3}"))
                .collect::<Vec<_>>(),
            mean_branch,
            last.loss.fusion,
        );
    }
    Ok(())
}
