//! Scores stored predictions against a manifest and writes the results as
//! CSV. Evaluation runs at each image's original resolution; predictions are
//! bilinearly resized up from whatever size they were saved at.

use std::path::{Path, PathBuf};

use crate::data::{load_color, load_fixations, load_gray, read_saliency, resize_tensor,
    synthesize_gt, ManifestRecord};
use crate::rng::Rng;
use crate::{Error, Result};

use super::{auc_borji, auc_judd, cc, emd, format_sig6, nss, shuffled_auc, sim, ContinuousMap,
    FixationMap, Metric, MetricReport, SaliencyMap, DEFAULT_AUC_SPLITS, DEFAULT_EMD_RES};

/// Knobs for the sampled and resampled metrics, and which metrics to run.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Metrics to compute; the rest stay `None` in every report.
    pub metrics: Vec<Metric>,
    /// Negative-set draws per image for AUC-Borji and shuffled AUC.
    pub auc_splits: usize,
    /// Working grid cap for EMD.
    pub emd_res: usize,
    /// Seed for negative-set sampling.
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            metrics: Metric::ALL.to_vec(),
            auc_splits: DEFAULT_AUC_SPLITS,
            emd_res: DEFAULT_EMD_RES,
            seed: 1,
        }
    }
}

/// Scores one prediction on the selected metrics. A metric that cannot be
/// computed (constant map, empty shuffle pool, unbalanced masses) logs a
/// warning and stays `None` instead of failing the whole run; deselected
/// metrics stay `None` silently.
pub fn evaluate_pair(
    sal: &SaliencyMap,
    gt: &ContinuousMap,
    fix: &FixationMap,
    others: &[FixationMap],
    opts: &EvalOptions,
    rng: &mut Rng,
) -> MetricReport {
    fn keep(metric: Metric, r: Result<f64>) -> Option<f64> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                eprintln!("warning: {metric} skipped: {e}");
                None
            }
        }
    }
    let wanted = |m: Metric| opts.metrics.contains(&m);
    let mut report = MetricReport::default();
    if wanted(Metric::AucJudd) {
        report.auc_judd = keep(Metric::AucJudd, auc_judd(sal, fix));
    }
    if wanted(Metric::Sim) {
        report.sim = keep(Metric::Sim, sim(sal, gt));
    }
    if wanted(Metric::Emd) {
        let (h, w) = sal.dims();
        report.emd = keep(
            Metric::Emd,
            ContinuousMap::new(h, w, sal.values().to_vec())
                .and_then(|p| emd(&p, gt, opts.emd_res)),
        );
    }
    if wanted(Metric::AucBorji) {
        report.auc_borji = keep(Metric::AucBorji, auc_borji(sal, fix, opts.auc_splits, rng));
    }
    if wanted(Metric::ShuffledAuc) {
        report.sauc = keep(
            Metric::ShuffledAuc,
            shuffled_auc(sal, fix, others, opts.auc_splits, rng),
        );
    }
    if wanted(Metric::Cc) {
        report.cc = keep(Metric::Cc, cc(sal, gt));
    }
    if wanted(Metric::Nss) {
        report.nss = keep(Metric::Nss, nss(sal, fix));
    }
    report
}

/// Scores for one manifest record.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    pub id: String,
    pub report: MetricReport,
}

struct LoadedRecord {
    dims: (usize, usize),
    fix: FixationMap,
}

fn prediction_path(pred_dir: &Path, record: &ManifestRecord) -> PathBuf {
    pred_dir.join(format!("{}_sal.png", record.id()))
}

fn load_ground_truth(record: &ManifestRecord, fix: &FixationMap) -> Result<ContinuousMap> {
    let (h, w) = fix.dims();
    match &record.ground_truth {
        Some(path) => {
            let resized = resize_tensor(&load_gray(path)?, h, w)?;
            let peak = resized.data().iter().cloned().fold(0.0, f64::max);
            let t = if peak > 0.0 {
                resized.map_unary(|v| (v / peak).clamp(0.0, 1.0))
            } else {
                resized
            };
            ContinuousMap::from_tensor(&t)
        }
        None => ContinuousMap::from_tensor(&synthesize_gt(fix.points(), h, w, None)?),
    }
}

/// Evaluates every record of a manifest against predictions stored as
/// `<image stem>_sal.png` in `pred_dir`. Records whose prediction or inputs
/// cannot be loaded are skipped with a warning; an entirely skipped dataset
/// is an error. The shuffled-AUC pool of each image is everyone else's
/// fixations.
pub fn evaluate_dataset(
    records: &[ManifestRecord],
    pred_dir: &Path,
    opts: &EvalOptions,
) -> Result<Vec<ImageScores>> {
    // First load dims and fixations for all records so each image can borrow
    // the others' fixations for the shuffled pool.
    let mut loaded: Vec<Option<LoadedRecord>> = Vec::with_capacity(records.len());
    for record in records {
        let attempt = (|| -> Result<LoadedRecord> {
            let shape = load_color(&record.image)?.shape();
            let points = load_fixations(&record.fixations, shape.h, shape.w)?;
            let fix = FixationMap::new(shape.h, shape.w, &points)?;
            Ok(LoadedRecord {
                dims: (shape.h, shape.w),
                fix,
            })
        })();
        match attempt {
            Ok(l) => loaded.push(Some(l)),
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", record.id());
                loaded.push(None);
            }
        }
    }

    let mut master = Rng::new(opts.seed);
    let mut scores = Vec::new();
    for (i, record) in records.iter().enumerate() {
        // One split per record keeps later images' sampling stable no matter
        // which earlier ones were skipped.
        let mut rng = master.split();
        let Some(own) = &loaded[i] else { continue };
        let pred = prediction_path(pred_dir, record);
        if !pred.exists() {
            eprintln!(
                "warning: skipping {}: no prediction at {}",
                record.id(),
                pred.display()
            );
            continue;
        }
        let attempt = (|| -> Result<MetricReport> {
            let (h, w) = own.dims;
            let sal_t = resize_tensor(&read_saliency(&pred)?, h, w)?
                .map_unary(|v| v.clamp(0.0, 1.0));
            let sal = SaliencyMap::from_tensor(&sal_t)?;
            let gt = load_ground_truth(record, &own.fix)?;
            let others: Vec<FixationMap> = loaded
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .filter_map(|(_, l)| l.as_ref().map(|l| l.fix.clone()))
                .collect();
            Ok(evaluate_pair(&sal, &gt, &own.fix, &others, opts, &mut rng))
        })();
        match attempt {
            Ok(report) => scores.push(ImageScores {
                id: record.id(),
                report,
            }),
            Err(e) => eprintln!("warning: skipping {}: {e}", record.id()),
        }
    }
    if scores.is_empty() {
        return Err(Error::Data(
            "no dataset record could be evaluated".into(),
        ));
    }
    Ok(scores)
}

/// Writes one CSV row per image with the requested metric columns, plus a
/// MEAN row averaging whatever values are present per column. Missing scores
/// become empty cells.
pub fn write_scores_csv(scores: &[ImageScores], metrics: &[Metric], path: &Path) -> Result<()> {
    let mut out = String::from("image");
    for metric in metrics {
        out.push(',');
        out.push_str(metric.name());
    }
    out.push('\n');
    for s in scores {
        out.push_str(&s.id);
        for &metric in metrics {
            out.push(',');
            if let Some(v) = s.report.get(metric) {
                out.push_str(&format_sig6(v));
            }
        }
        out.push('\n');
    }
    out.push_str("MEAN");
    for &metric in metrics {
        out.push(',');
        let present: Vec<f64> = scores.iter().filter_map(|s| s.report.get(metric)).collect();
        if !present.is_empty() {
            let mean = present.iter().sum::<f64>() / present.len() as f64;
            out.push_str(&format_sig6(mean));
        }
    }
    out.push('\n');
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_manifest, synth_dataset, write_saliency, SaliencyDepth, SynthConfig};
    use crate::tensor::{Shape4, Tensor4};

    fn synthetic_records(dir: &Path, count: usize) -> Vec<ManifestRecord> {
        let cfg = SynthConfig {
            count,
            dims: (16, 16),
            seed: 9,
            ..Default::default()
        };
        let manifest = synth_dataset(dir, &cfg).unwrap();
        load_manifest(&manifest).unwrap()
    }

    fn blobby_prediction(h: usize, w: usize, cy: f64, cx: f64) -> Tensor4 {
        let mut t = Tensor4::zeros(Shape4::new(1, 1, h, w));
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                t.plane_mut(0, 0)[y * w + x] = (-d2 / 18.0).exp();
            }
        }
        t
    }

    #[test]
    fn scores_a_synthetic_dataset_and_skips_missing_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let records = synthetic_records(dir.path(), 3);
        let pred_dir = dir.path().join("preds");
        std::fs::create_dir(&pred_dir).unwrap();
        // Save predictions at 8x8 to exercise the resize-up path, and leave
        // the last record without one.
        for record in &records[..2] {
            let pred = blobby_prediction(8, 8, 3.5, 3.5);
            write_saliency(
                &pred,
                &pred_dir.join(format!("{}_sal.png", record.id())),
                SaliencyDepth::Sixteen,
            )
            .unwrap();
        }
        let opts = EvalOptions::default();
        let scores = evaluate_dataset(&records, &pred_dir, &opts).unwrap();
        assert_eq!(scores.len(), 2);
        for s in &scores {
            for (metric, value) in s.report.iter() {
                let v = value.unwrap_or_else(|| panic!("{metric} missing for {}", s.id));
                assert!(v.is_finite(), "{metric} = {v}");
                if matches!(
                    metric,
                    Metric::AucJudd | Metric::AucBorji | Metric::ShuffledAuc | Metric::Sim
                ) {
                    assert!((0.0..=1.0).contains(&v), "{metric} = {v}");
                }
                if metric == Metric::Emd {
                    assert!(v >= 0.0);
                }
            }
        }
    }

    #[test]
    fn repeated_evaluation_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let records = synthetic_records(dir.path(), 2);
        let pred_dir = dir.path().join("preds");
        std::fs::create_dir(&pred_dir).unwrap();
        for record in &records {
            write_saliency(
                &blobby_prediction(16, 16, 8.0, 6.0),
                &pred_dir.join(format!("{}_sal.png", record.id())),
                SaliencyDepth::Sixteen,
            )
            .unwrap();
        }
        let opts = EvalOptions::default();
        let a = evaluate_dataset(&records, &pred_dir, &opts).unwrap();
        let b = evaluate_dataset(&records, &pred_dir, &opts).unwrap();
        assert_eq!(a, b);
        // A different seed moves the sampled metrics.
        let other = evaluate_dataset(
            &records,
            &pred_dir,
            &EvalOptions {
                seed: 77,
                ..opts
            },
        )
        .unwrap();
        assert_ne!(
            a[0].report.auc_borji, other[0].report.auc_borji,
            "sampled AUC should depend on the seed"
        );
    }

    #[test]
    fn dataset_without_any_usable_prediction_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let records = synthetic_records(dir.path(), 2);
        let pred_dir = dir.path().join("preds");
        std::fs::create_dir(&pred_dir).unwrap();
        let err = evaluate_dataset(&records, &pred_dir, &EvalOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn csv_layout_holds_empty_cells_and_a_mean_row() {
        let scores = vec![
            ImageScores {
                id: "a".into(),
                report: MetricReport {
                    auc_judd: Some(0.75),
                    sim: Some(0.5),
                    emd: None,
                    auc_borji: Some(0.7),
                    sauc: Some(0.6),
                    cc: Some(0.25),
                    nss: Some(1.25),
                },
            },
            ImageScores {
                id: "b".into(),
                report: MetricReport {
                    auc_judd: Some(0.25),
                    sim: Some(0.5),
                    emd: Some(3.0),
                    auc_borji: Some(0.5),
                    sauc: Some(0.4),
                    cc: Some(0.75),
                    nss: Some(0.75),
                },
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        write_scores_csv(&scores, &Metric::ALL, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "image,AUC_Judd,SIM,EMD,AUC_Borji,sAUC,CC,NSS");
        assert_eq!(lines[1], "a,0.750000,0.500000,,0.700000,0.600000,0.250000,1.25000");
        assert_eq!(lines[2], "b,0.250000,0.500000,3.00000,0.500000,0.400000,0.750000,0.750000");
        // EMD mean covers only the single present value.
        assert_eq!(lines[3], "MEAN,0.500000,0.500000,3.00000,0.600000,0.500000,0.500000,1.00000");

        // A metric subset keeps exactly those columns, in the given order.
        let narrow = dir.path().join("narrow.csv");
        write_scores_csv(&scores, &[Metric::Nss, Metric::Cc], &narrow).unwrap();
        let text = std::fs::read_to_string(&narrow).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "image,NSS,CC");
        assert_eq!(lines[1], "a,1.25000,0.250000");
        assert_eq!(lines[3], "MEAN,1.00000,0.500000");
    }

    #[test]
    fn deselected_metrics_are_skipped_without_warnings() {
        let sal = SaliencyMap::new(4, 4, (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
        let gt = ContinuousMap::new(4, 4, (0..16).map(|i| i as f64).collect()).unwrap();
        let fix = FixationMap::new(4, 4, &[(3, 3)]).unwrap();
        let mut rng = Rng::new(3);
        let opts = EvalOptions {
            metrics: vec![Metric::Nss, Metric::Cc],
            ..Default::default()
        };
        let report = evaluate_pair(&sal, &gt, &fix, &[], &opts, &mut rng);
        assert!(report.nss.is_some());
        assert!(report.cc.is_some());
        assert_eq!(report.auc_judd, None);
        assert_eq!(report.sim, None);
        assert_eq!(report.emd, None);
        assert_eq!(report.auc_borji, None);
        assert_eq!(report.sauc, None);
    }

    #[test]
    fn pair_reports_none_for_undefined_metrics_instead_of_failing() {
        let sal = SaliencyMap::new(4, 4, vec![0.5; 16]).unwrap();
        let gt = ContinuousMap::new(4, 4, (0..16).map(|i| i as f64).collect()).unwrap();
        let fix = FixationMap::new(4, 4, &[(1, 1)]).unwrap();
        let mut rng = Rng::new(3);
        // No shuffle pool and a constant prediction: CC and sAUC drop out,
        // NSS degrades to 0, the rest still score.
        let report = evaluate_pair(&sal, &gt, &fix, &[], &EvalOptions::default(), &mut rng);
        assert_eq!(report.cc, None);
        assert_eq!(report.sauc, None);
        assert_eq!(report.nss, Some(0.0));
        assert_eq!(report.auc_judd, Some(0.5));
        assert!(report.sim.is_some());
        assert!(report.emd.is_some());
    }
}
