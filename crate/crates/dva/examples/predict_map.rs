//! Runs one synthetic image through a freshly built tiny network at two
//! working resolutions and writes the fused map as a 16-bit PNG. Shows that
//! every branch lands at the input resolution regardless of its tap depth.
//!
//! Run with: `cargo run --release -p dva --example predict_map`

use dva::data::{
    prepare_image, synth_dataset, write_saliency, DataConfig, SaliencyDepth, SynthConfig,
};
use dva::network::{build, forward, NetworkSpec};
use dva::tensor::Tensor4;

fn stats(t: &Tensor4) -> (f64, f64, f64) {
    let d = t.data();
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    (min, max, mean)
}

fn main() -> dva::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let synth_cfg = SynthConfig {
        count: 1,
        dims: (64, 64),
        seed: 3,
        ..SynthConfig::default()
    };
    synth_dataset(dir.path(), &synth_cfg)?;
    let image = dir.path().join("images/img_000.png");

    let state = build(&NetworkSpec::tiny(), 42, None)?;
    for max_side in [64, 32] {
        let data_cfg = DataConfig {
            max_side,
            ..DataConfig::default()
        };
        let (tensor, (orig_h, orig_w)) = prepare_image(&image, &data_cfg)?;
        let s = tensor.shape();
        let trace = forward(&state, &tensor)?;
        let (min, max, mean) = stats(&trace.fused_map);
        println!(
            "input {orig_h}x{orig_w} at working size {}x{}: fused map min {min:.4} max {max:.4} mean {mean:.4}",
            s.h, s.w
        );
        for (i, branch) in trace.branch_maps.iter().enumerate() {
            let bs = branch.shape();
            println!(
                "  branch {} upsampled from 1/{} scale to {}x{}",
                i + 1,
                1 << (i + 2),
                bs.h,
                bs.w
            );
        }
        let out = dir.path().join(format!("fused_{}x{}.png", s.h, s.w));
        write_saliency(&trace.fused_map.map_unary(|v| v.clamp(0.0, 1.0)), &out, SaliencyDepth::Sixteen)?;
        println!("  wrote {} (temporary)", out.display());
    }
    println!("note: the network is untrained, so the maps are nearly flat");
    Ok(())
}
