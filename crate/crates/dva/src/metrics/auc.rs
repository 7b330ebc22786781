//! ROC-area metrics. All three variants score how well the saliency values
//! at fixated pixels separate from values at non-fixated pixels; they differ
//! only in where the negatives come from.
//!
//! The AUC itself is computed as a Mann-Whitney statistic with average ranks
//! for ties, which equals the probability that a random positive outranks a
//! random negative (ties counting one half). This is the exhaustive
//! pair-count answer without the quadratic cost.

use std::collections::BTreeSet;

use crate::metrics::maps::{FixationMap, SaliencyMap};
use crate::rng::Rng;
use crate::{Error, Result};

/// Negative-sample rounds for the sampled AUC variants.
pub const DEFAULT_AUC_SPLITS: usize = 100;

/// Mann-Whitney AUC of `pos` against `neg` with tie correction.
pub(crate) fn rank_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let np = pos.len();
    let nn = neg.len();
    debug_assert!(np > 0 && nn > 0);
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&v| (v, true))
        .chain(neg.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite saliency values"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..j shares the average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = all[i..j].iter().filter(|(_, p)| *p).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }
    (rank_sum_pos - (np * (np + 1)) as f64 / 2.0) / (np as f64 * nn as f64)
}

fn split_values(sal: &SaliencyMap, fix: &FixationMap) -> Result<(Vec<f64>, Vec<f64>)> {
    if sal.dims() != fix.dims() {
        return Err(Error::Metric(format!(
            "saliency {:?} and fixations {:?} differ in size",
            sal.dims(),
            fix.dims()
        )));
    }
    let mask = fix.mask();
    let mut pos = Vec::with_capacity(fix.len());
    let mut neg = Vec::with_capacity(sal.values().len() - fix.len());
    for (v, fixated) in sal.values().iter().zip(&mask) {
        if *fixated {
            pos.push(*v);
        } else {
            neg.push(*v);
        }
    }
    Ok((pos, neg))
}

/// AUC with every non-fixated pixel as a negative.
pub fn auc_judd(sal: &SaliencyMap, fix: &FixationMap) -> Result<f64> {
    let (pos, neg) = split_values(sal, fix)?;
    if neg.is_empty() {
        return Err(Error::Metric(
            "every pixel is fixated; no negatives for AUC".into(),
        ));
    }
    Ok(rank_auc(&pos, &neg))
}

/// AUC against random negatives: each of `splits` rounds samples as many
/// non-fixated pixels (with replacement) as there are fixations, and the
/// rounds are averaged.
pub fn auc_borji(
    sal: &SaliencyMap,
    fix: &FixationMap,
    splits: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if splits == 0 {
        return Err(Error::Metric("sampled AUC needs at least one split".into()));
    }
    let (pos, neg_pool) = split_values(sal, fix)?;
    if neg_pool.is_empty() {
        return Err(Error::Metric(
            "every pixel is fixated; no negatives for AUC".into(),
        ));
    }
    let mut total = 0.0;
    let mut neg = vec![0.0; pos.len()];
    for _ in 0..splits {
        for slot in neg.iter_mut() {
            *slot = neg_pool[rng.next_below(neg_pool.len())];
        }
        total += rank_auc(&pos, &neg);
    }
    Ok(total / splits as f64)
}

/// Shuffled AUC: negatives are drawn from where observers looked in *other*
/// images (scaled into this map's frame), which discounts generic center
/// bias. Pixels fixated in this image are excluded from the pool.
pub fn shuffled_auc(
    sal: &SaliencyMap,
    fix: &FixationMap,
    others: &[FixationMap],
    splits: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if splits == 0 {
        return Err(Error::Metric("sampled AUC needs at least one split".into()));
    }
    if sal.dims() != fix.dims() {
        return Err(Error::Metric(format!(
            "saliency {:?} and fixations {:?} differ in size",
            sal.dims(),
            fix.dims()
        )));
    }
    let (h, w) = sal.dims();
    let own: BTreeSet<(usize, usize)> = fix.points().iter().copied().collect();
    let mut pool_set = BTreeSet::new();
    for other in others {
        let (oh, ow) = other.dims();
        for &(y, x) in other.points() {
            let p = (
                crate::data::map_coord(y, oh, h),
                crate::data::map_coord(x, ow, w),
            );
            if !own.contains(&p) {
                pool_set.insert(p);
            }
        }
    }
    if pool_set.is_empty() {
        return Err(Error::Metric(
            "shuffled AUC needs fixations from other images".into(),
        ));
    }
    let pool: Vec<f64> = pool_set
        .into_iter()
        .map(|(y, x)| sal.values()[y * w + x])
        .collect();
    let pos: Vec<f64> = fix
        .points()
        .iter()
        .map(|&(y, x)| sal.values()[y * w + x])
        .collect();
    let mut total = 0.0;
    let mut neg = vec![0.0; pos.len()];
    for _ in 0..splits {
        for slot in neg.iter_mut() {
            *slot = pool[rng.next_below(pool.len())];
        }
        total += rank_auc(&pos, &neg);
    }
    Ok(total / splits as f64)
}
