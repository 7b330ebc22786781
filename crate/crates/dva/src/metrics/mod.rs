//! The seven-metric fixation evaluation suite.
//!
//! Location-based metrics score the saliency values at fixated pixels
//! ([`nss`], [`auc_judd`], [`auc_borji`], [`shuffled_auc`]); distribution
//! metrics compare the prediction to a continuous attention map ([`cc`],
//! [`sim`], [`emd`]). [`evaluate_pair`] runs all seven on one image,
//! [`evaluate_dataset`] runs a manifest against a directory of predictions
//! and writes a CSV with a trailing MEAN row.

pub mod auc;
pub mod dataset;
pub mod emd;
pub mod maps;

pub use auc::{auc_borji, auc_judd, shuffled_auc, DEFAULT_AUC_SPLITS};
pub use dataset::{evaluate_dataset, evaluate_pair, write_scores_csv, EvalOptions, ImageScores};
pub use emd::{emd, DEFAULT_EMD_RES};
pub use maps::{ContinuousMap, FixationMap, SaliencyMap};

use crate::tensor::reduce_stats;
use crate::{Error, Result};

/// True when every value is identical; rounding in the mean can leave a
/// constant slice with a tiny nonzero standard deviation, so constancy is
/// what the degenerate-map rules test.
fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|p| p[0] == p[1])
}

/// Normalized scanpath saliency: mean of the standardized saliency values
/// at fixated pixels (population standard deviation). A constant map has no
/// contrast to score, which is reported as 0 with a warning rather than an
/// error, matching how reference implementations treat it.
pub fn nss(sal: &SaliencyMap, fix: &FixationMap) -> Result<f64> {
    if sal.dims() != fix.dims() {
        return Err(Error::Metric(format!(
            "saliency {:?} and fixations {:?} differ in size",
            sal.dims(),
            fix.dims()
        )));
    }
    if is_constant(sal.values()) {
        eprintln!("warning: NSS of a constant saliency map reported as 0");
        return Ok(0.0);
    }
    let stats = reduce_stats(sal.values());
    let (_, w) = sal.dims();
    let total: f64 = fix
        .points()
        .iter()
        .map(|&(y, x)| (sal.values()[y * w + x] - stats.mean) / stats.stddev)
        .sum();
    Ok(total / fix.len() as f64)
}

/// Pearson correlation between a prediction and a continuous attention map
/// (population moments). Either map being constant is a domain error: the
/// correlation is undefined there.
pub fn cc(sal: &SaliencyMap, gt: &ContinuousMap) -> Result<f64> {
    if sal.dims() != gt.dims() {
        return Err(Error::Metric(format!(
            "saliency {:?} and ground truth {:?} differ in size",
            sal.dims(),
            gt.dims()
        )));
    }
    if is_constant(sal.values()) || is_constant(gt.values()) {
        return Err(Error::Metric(
            "correlation is undefined for a constant map".into(),
        ));
    }
    let a = reduce_stats(sal.values());
    let b = reduce_stats(gt.values());
    let n = sal.values().len() as f64;
    let cov: f64 = sal
        .values()
        .iter()
        .zip(gt.values())
        .map(|(x, y)| (x - a.mean) * (y - b.mean))
        .sum::<f64>()
        / n;
    Ok(cov / (a.stddev * b.stddev))
}

/// Histogram intersection: both maps are normalized to unit mass and the
/// pixelwise minima are summed. 1 means identical distributions, 0 disjoint
/// support.
pub fn sim(sal: &SaliencyMap, gt: &ContinuousMap) -> Result<f64> {
    if sal.dims() != gt.dims() {
        return Err(Error::Metric(format!(
            "saliency {:?} and ground truth {:?} differ in size",
            sal.dims(),
            gt.dims()
        )));
    }
    let sa: f64 = sal.values().iter().sum();
    let sb = gt.total_mass();
    if sa <= 0.0 || sb <= 0.0 {
        return Err(Error::Metric(
            "similarity needs positive mass on both maps".into(),
        ));
    }
    Ok(sal
        .values()
        .iter()
        .zip(gt.values())
        .map(|(x, y)| (x / sa).min(y / sb))
        .sum())
}

/// A centered Gaussian prior with `sigma = min(h, w) / 4`, peak 1; the
/// classic fixation-free baseline predictions are compared against.
pub fn center_gaussian_baseline(h: usize, w: usize) -> SaliencyMap {
    assert!(h > 0 && w > 0);
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let sigma = (h.min(w) as f64 / 4.0).max(f64::MIN_POSITIVE);
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            values.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    SaliencyMap::new(h, w, values).expect("gaussian values lie in [0, 1]")
}

/// The seven metrics in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    AucJudd,
    Sim,
    Emd,
    AucBorji,
    ShuffledAuc,
    Cc,
    Nss,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::AucJudd,
        Metric::Sim,
        Metric::Emd,
        Metric::AucBorji,
        Metric::ShuffledAuc,
        Metric::Cc,
        Metric::Nss,
    ];

    /// Column name used in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            Metric::AucJudd => "AUC_Judd",
            Metric::Sim => "SIM",
            Metric::Emd => "EMD",
            Metric::AucBorji => "AUC_Borji",
            Metric::ShuffledAuc => "sAUC",
            Metric::Cc => "CC",
            Metric::Nss => "NSS",
        }
    }

    /// Whether larger values are better (false only for EMD).
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Emd)
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    /// Case-insensitive column name, e.g. `auc_judd` or `NSS`.
    fn from_str(s: &str) -> Result<Metric> {
        match s.to_ascii_lowercase().as_str() {
            "auc_judd" => Ok(Metric::AucJudd),
            "sim" => Ok(Metric::Sim),
            "emd" => Ok(Metric::Emd),
            "auc_borji" => Ok(Metric::AucBorji),
            "sauc" => Ok(Metric::ShuffledAuc),
            "cc" => Ok(Metric::Cc),
            "nss" => Ok(Metric::Nss),
            _ => Err(Error::Config(format!(
                "unknown metric {s:?}; expected one of auc_judd, sim, emd, auc_borji, sauc, cc, nss"
            ))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Scores for one image; a metric that could not be computed is `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub auc_judd: Option<f64>,
    pub sim: Option<f64>,
    pub emd: Option<f64>,
    pub auc_borji: Option<f64>,
    pub sauc: Option<f64>,
    pub cc: Option<f64>,
    pub nss: Option<f64>,
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::AucJudd => self.auc_judd,
            Metric::Sim => self.sim,
            Metric::Emd => self.emd,
            Metric::AucBorji => self.auc_borji,
            Metric::ShuffledAuc => self.sauc,
            Metric::Cc => self.cc,
            Metric::Nss => self.nss,
        }
    }

    /// `(metric, value)` pairs in reporting order.
    pub fn iter(&self) -> impl Iterator<Item = (Metric, Option<f64>)> + '_ {
        Metric::ALL.into_iter().map(|m| (m, self.get(m)))
    }
}

/// Formats to six significant digits in plain decimal notation, the fixed
/// width used in score CSVs.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let decimals = (5 - x.abs().log10().floor() as i64).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}
