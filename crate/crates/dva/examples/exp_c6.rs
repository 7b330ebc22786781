//! Scratch experiment, removed before delivery.

use dva::data::{load_manifest, synth_dataset, DataConfig, Split, SynthConfig};
use dva::metrics::{center_gaussian_baseline, nss, FixationMap, SaliencyMap};
use dva::network::{build, forward, NetworkGrads, NetworkSpec};
use dva::train::{items_for_split, train, TrainConfig, TrainItem, TrainSinks};

fn mean_nss(items: &[TrainItem], state: &dva::network::NetworkState) -> dva::Result<(f64, f64, bool)> {
    let mut fused_sum = 0.0;
    let mut center_sum = 0.0;
    let mut any_constant = false;
    for item in items {
        let trace = forward(state, &item.image)?;
        let fused = trace.fused_map.map_unary(|v| v.clamp(0.0, 1.0));
        let s = fused.shape();
        let min = fused.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = fused.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            any_constant = true;
        }
        let fix = FixationMap::new(s.h, s.w, &item.fixations)?;
        fused_sum += nss(&SaliencyMap::from_tensor(&fused)?, &fix)?;
        center_sum += nss(&center_gaussian_baseline(s.h, s.w), &fix)?;
    }
    let n = items.len() as f64;
    Ok((fused_sum / n, center_sum / n, any_constant))
}

fn run_case(dims: (usize, usize), max_side: usize, synth_seed: u64) -> dva::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let synth_cfg = SynthConfig {
        count: 8,
        dims,
        val_fraction: 0.0,
        seed: synth_seed,
        ..SynthConfig::default()
    };
    let manifest = synth_dataset(dir.path(), &synth_cfg)?;
    let records = load_manifest(&manifest)?;
    let data_cfg = DataConfig {
        max_side,
        ..DataConfig::default()
    };
    let items = items_for_split(&records, Split::Train, &data_cfg)?;

    let mut spec = NetworkSpec::tiny();
    spec.input_dims = (max_side, max_side);
    let cfg = TrainConfig::default_with(500);
    let mut state = build(&spec, cfg.seed, None)?;
    let mut velocity = NetworkGrads::zeros_like(&state);
    let t0 = std::time::Instant::now();
    let logs = train(&mut state, &mut velocity, 0, &items, &[], &cfg, &TrainSinks::default())?;
    let secs = t0.elapsed().as_secs_f64();
    let first = logs.first().unwrap().loss.combined;
    let last = logs.last().unwrap().loss.combined;
    let (fused_nss, center_nss, any_constant) = mean_nss(&items, &state)?;
    println!(
        "dims {dims:?} max_side {max_side} synth_seed {synth_seed}: loss {first:.1} -> {last:.1} ({:.1}% of iter1), fused NSS {fused_nss:.4}, center NSS {center_nss:.4}, constant={any_constant}, {secs:.0}s",
        100.0 * last / first
    );
    Ok(())
}

trait WithIters {
    fn default_with(iters: usize) -> TrainConfig;
}
impl WithIters for TrainConfig {
    fn default_with(iters: usize) -> TrainConfig {
        TrainConfig {
            iterations: iters,
            ..TrainConfig::default()
        }
    }
}

fn main() -> dva::Result<()> {
    run_case((16, 16), 16, 1)?;
    run_case((16, 16), 16, 1234567)?;
    run_case((32, 32), 32, 1)?;
    Ok(())
}
