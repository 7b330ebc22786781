//! Scores three synthetic predictions against the same fixations with all
//! seven metrics: one aligned with the target, one misplaced, and the center
//! Gaussian baseline. Aligned should win every column.
//!
//! Run with: `cargo run --release -p dva --example evaluate_metrics`

use dva::metrics::{
    center_gaussian_baseline, evaluate_pair, ContinuousMap, EvalOptions, FixationMap, Metric,
    MetricReport, SaliencyMap,
};
use dva::rng::Rng;

/// Gaussian blob with peak 1 at `(cy, cx)`.
fn blob(h: usize, w: usize, cy: f64, cx: f64, sigma: f64) -> Vec<f64> {
    let mut vals = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            vals.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    vals
}

fn main() -> dva::Result<()> {
    let (h, w) = (48, 64);
    let target = blob(h, w, 20.0, 24.0, 6.0);
    let gt = ContinuousMap::new(h, w, target.clone())?;
    let fix = FixationMap::new(
        h,
        w,
        &[(20, 24), (18, 27), (22, 22), (19, 25), (23, 26), (17, 23)],
    )?;
    // Fixations of an unrelated image, used as the shuffled-AUC negative pool.
    let others = vec![FixationMap::new(h, w, &[(40, 10), (8, 50), (44, 58), (6, 6)])?];

    let candidates = [
        ("aligned", SaliencyMap::new(h, w, target.clone())?),
        ("shifted", SaliencyMap::new(h, w, blob(h, w, 36.0, 48.0, 6.0))?),
        ("center", center_gaussian_baseline(h, w)),
    ];
    let opts = EvalOptions::default();
    let reports: Vec<MetricReport> = candidates
        .iter()
        .map(|(_, sal)| evaluate_pair(sal, &gt, &fix, &others, &opts, &mut Rng::new(1)))
        .collect();

    println!(
        "{:<10} {:>10} {:>10} {:>10}  direction",
        "metric", "aligned", "shifted", "center"
    );
    for metric in Metric::ALL {
        print!("{:<10}", metric.name());
        for report in &reports {
            match report.get(metric) {
                Some(v) => print!(" {:>10.4}", v),
                None => print!(" {:>10}", "-"),
            }
        }
        let direction = if metric.higher_is_better() {
            "higher is better"
        } else {
            "lower is better"
        };
        println!("  {direction}");
    }
    Ok(())
}
