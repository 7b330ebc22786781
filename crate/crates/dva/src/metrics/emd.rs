//! Earth mover's distance between two densities on the same grid.
//!
//! Both maps are area-resampled onto a coarse working grid (mass
//! conserving), normalized to unit mass, and the exact optimal transport
//! cost is found with a transportation simplex. Ground distance is the
//! Euclidean distance between cell centers, measured in working-grid cells,
//! so a one-cell shift of all mass costs exactly 1.
//!
//! The working grid caps the simplex at `work_res^2` cells per side, which
//! keeps the exact solve affordable at any input resolution.

use crate::metrics::maps::ContinuousMap;
use crate::{Error, Result};

/// Default working-grid side length.
pub const DEFAULT_EMD_RES: usize = 32;

/// Area resample conserving total mass: every source pixel spreads its mass
/// over the destination cells it overlaps, proportionally to the overlap.
/// Separable, rows first.
pub(crate) fn area_resample(src: &[f64], h: usize, w: usize, dh: usize, dw: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let rows = resample_axis(src, h, w, dh, true);
    resample_axis(&rows, dh, w, dw, false)
}

/// Resamples one axis by box overlap. `vertical` collapses rows (output
/// `dn x w`), otherwise columns (output `h x dn`).
fn resample_axis(src: &[f64], h: usize, w: usize, dn: usize, vertical: bool) -> Vec<f64> {
    let n = if vertical { h } else { w };
    let scale = n as f64 / dn as f64;
    let mut out = vec![0.0; if vertical { dn * w } else { h * dn }];
    for s in 0..n {
        // Source slot s spans [lo, hi) in destination units; its mass is
        // split over the destination slots it overlaps.
        let lo = s as f64 / scale;
        let hi = (s + 1) as f64 / scale;
        let d0 = lo.floor() as usize;
        let d1 = (hi.ceil() as usize).max(d0 + 1).min(dn);
        for d in d0..d1 {
            let frac = (hi.min((d + 1) as f64) - lo.max(d as f64)) / (hi - lo);
            if frac <= 0.0 {
                continue;
            }
            if vertical {
                for x in 0..w {
                    out[d * w + x] += frac * src[s * w + x];
                }
            } else {
                for y in 0..h {
                    out[y * dn + d] += frac * src[y * w + s];
                }
            }
        }
    }
    out
}

struct Cell {
    y: usize,
    x: usize,
    mass: f64,
}

fn positive_cells(values: &[f64], w: usize) -> Vec<Cell> {
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| Cell {
            y: i / w,
            x: i % w,
            mass: v,
        })
        .collect()
}

/// Exact transportation simplex for balanced supplies and demands.
/// Deterministic: the entering variable is the most negative reduced cost
/// with first-in-scan-order tie breaks.
fn transport(sources: &[Cell], sinks: &[Cell]) -> Result<f64> {
    let m = sources.len();
    let n = sinks.len();
    let cost = |i: usize, j: usize| -> f64 {
        let dy = sources[i].y as f64 - sinks[j].y as f64;
        let dx = sources[i].x as f64 - sinks[j].x as f64;
        (dy * dy + dx * dx).sqrt()
    };

    // Northwest-corner start: exactly m + n - 1 basic cells forming a
    // spanning tree, some possibly with zero flow.
    let mut supply: Vec<f64> = sources.iter().map(|c| c.mass).collect();
    let mut demand: Vec<f64> = sinks.iter().map(|c| c.mass).collect();
    let mut basis: Vec<(usize, usize, f64)> = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let f = supply[i].min(demand[j]);
        basis.push((i, j, f));
        supply[i] -= f;
        demand[j] -= f;
        if i + 1 == m && j + 1 == n {
            break;
        }
        if supply[i] <= demand[j] && i + 1 < m {
            i += 1;
        } else {
            j += 1;
        }
    }

    // Tree adjacency, maintained across pivots: basis-edge indices per row
    // and per column.
    let rebuild = |basis: &[(usize, usize, f64)]| {
        let mut by_row: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut by_col: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, &(bi, bj, _)) in basis.iter().enumerate() {
            by_row[bi].push(k);
            by_col[bj].push(k);
        }
        (by_row, by_col)
    };

    let max_iters = 500 * (m + n + 1);
    for _ in 0..max_iters {
        let (by_row, by_col) = rebuild(&basis);

        // Potentials u, v with u[0] = 0, walking the basic tree.
        let mut u = vec![f64::NAN; m];
        let mut v = vec![f64::NAN; n];
        u[0] = 0.0;
        let mut queue = vec![(true, 0usize)];
        while let Some((is_row, idx)) = queue.pop() {
            if is_row {
                for &k in &by_row[idx] {
                    let (_, bj, _) = basis[k];
                    if v[bj].is_nan() {
                        v[bj] = cost(idx, bj) - u[idx];
                        queue.push((false, bj));
                    }
                }
            } else {
                for &k in &by_col[idx] {
                    let (bi, _, _) = basis[k];
                    if u[bi].is_nan() {
                        u[bi] = cost(bi, idx) - v[idx];
                        queue.push((true, bi));
                    }
                }
            }
        }
        if u.iter().any(|x| x.is_nan()) || v.iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("transport basis lost connectivity".into()));
        }

        // Entering variable.
        let mut best = (0usize, 0usize);
        let mut best_rc = -1e-10;
        for ii in 0..m {
            for jj in 0..n {
                let rc = cost(ii, jj) - u[ii] - v[jj];
                if rc < best_rc {
                    best_rc = rc;
                    best = (ii, jj);
                }
            }
        }
        if best_rc >= -1e-10 {
            return Ok(basis.iter().map(|&(bi, bj, f)| f * cost(bi, bj)).sum());
        }

        // The entering edge (ei, ej) plus the tree path from column ej to
        // row ei closes the unique cycle. Path edges at even positions
        // (adjacent to ej first) lose flow, odd positions gain.
        let (ei, ej) = best;
        let path = tree_path(&basis, &by_row, &by_col, m, n, ei, ej)
            .ok_or_else(|| Error::Numeric("transport pivot found no cycle".into()))?;
        let theta = path
            .iter()
            .step_by(2)
            .map(|&k| basis[k].2)
            .fold(f64::INFINITY, f64::min);
        let mut leave = usize::MAX;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis[k].2 -= theta;
                if leave == usize::MAX && basis[k].2 <= 0.0 {
                    basis[k].2 = 0.0;
                    leave = k;
                }
            } else {
                basis[k].2 += theta;
            }
        }
        basis[leave] = (ei, ej, theta);
    }
    Err(Error::Numeric(format!(
        "transport failed to converge within {max_iters} pivots"
    )))
}

/// BFS through the basic tree from column `ej` to row `ei`; returns the
/// edge indices along the path, starting at the edge incident to `ej`.
fn tree_path(
    basis: &[(usize, usize, f64)],
    by_row: &[Vec<usize>],
    by_col: &[Vec<usize>],
    m: usize,
    n: usize,
    ei: usize,
    ej: usize,
) -> Option<Vec<usize>> {
    // Nodes: rows 0..m, columns m..m+n. Parents store the edge used.
    let total = m + n;
    let mut parent_edge = vec![usize::MAX; total];
    let mut parent_node = vec![usize::MAX; total];
    let mut visited = vec![false; total];
    let start = m + ej;
    let target = ei;
    visited[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == target {
            let mut path = Vec::new();
            let mut cur = node;
            while cur != start {
                path.push(parent_edge[cur]);
                cur = parent_node[cur];
            }
            path.reverse();
            return Some(path);
        }
        let edges = if node < m {
            &by_row[node]
        } else {
            &by_col[node - m]
        };
        for &k in edges {
            let (bi, bj, _) = basis[k];
            let next = if node < m { m + bj } else { bi };
            if !visited[next] {
                visited[next] = true;
                parent_edge[next] = k;
                parent_node[next] = node;
                queue.push_back(next);
            }
        }
    }
    None
}

/// Earth mover's distance with the given working resolution (see
/// [`DEFAULT_EMD_RES`]). Distances are in working-grid cell units.
pub fn emd(a: &ContinuousMap, b: &ContinuousMap, work_res: usize) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Metric(format!(
            "EMD inputs differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if work_res == 0 {
        return Err(Error::Metric("EMD working resolution must be positive".into()));
    }
    if a.total_mass() <= 0.0 || b.total_mass() <= 0.0 {
        return Err(Error::Metric("EMD needs positive mass on both maps".into()));
    }
    let (h, w) = a.dims();
    let (rh, rw) = (h.min(work_res), w.min(work_res));
    let mut pa = area_resample(a.values(), h, w, rh, rw);
    let mut pb = area_resample(b.values(), h, w, rh, rw);
    let sa: f64 = pa.iter().sum();
    let sb: f64 = pb.iter().sum();
    for v in &mut pa {
        *v /= sa;
    }
    for v in &mut pb {
        *v /= sb;
    }
    let sources = positive_cells(&pa, rw);
    let mut sinks = positive_cells(&pb, rw);
    // Balance exactly: float renormalization can leave a few ulps between
    // total supply and demand, which the simplex cannot absorb.
    let supply: f64 = sources.iter().map(|c| c.mass).sum();
    let last = sinks.len() - 1;
    let demand_head: f64 = sinks[..last].iter().map(|c| c.mass).sum();
    sinks[last].mass = (supply - demand_head).max(0.0);
    transport(&sources, &sinks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, values: Vec<f64>) -> ContinuousMap {
        ContinuousMap::new(h, w, values).unwrap()
    }

    fn impulse(h: usize, w: usize, y: usize, x: usize) -> ContinuousMap {
        let mut v = vec![0.0; h * w];
        v[y * w + x] = 1.0;
        map(h, w, v)
    }

    #[test]
    fn identical_maps_have_zero_distance() {
        let mut rng = crate::rng::Rng::new(3);
        let values: Vec<f64> = (0..48).map(|_| rng.next_f64()).collect();
        let a = map(6, 8, values.clone());
        let b = map(6, 8, values);
        assert!(emd(&a, &b, 32).unwrap() < 1e-12);
    }

    #[test]
    fn point_masses_cost_their_euclidean_separation() {
        let a = impulse(8, 8, 1, 1);
        let b = impulse(8, 8, 4, 5);
        let expected = ((3.0f64 * 3.0) + (4.0 * 4.0)).sqrt();
        assert_relative_eq!(emd(&a, &b, 32).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn uniform_shift_costs_the_shift_distance() {
        // Two-impulse map moved right by 3 cells.
        let mut va = vec![0.0; 64];
        va[2 * 8 + 1] = 0.5;
        va[5 * 8 + 2] = 0.5;
        let mut vb = vec![0.0; 64];
        vb[2 * 8 + 4] = 0.5;
        vb[5 * 8 + 5] = 0.5;
        let d = emd(&map(8, 8, va), &map(8, 8, vb), 32).unwrap();
        assert_relative_eq!(d, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn splitting_mass_is_cheaper_than_worst_case() {
        // A central unit mass split to two opposite corners: optimal sends
        // half each way.
        let a = impulse(5, 5, 2, 2);
        let mut vb = vec![0.0; 25];
        vb[0] = 0.5;
        vb[4 * 5 + 4] = 0.5;
        let d = emd(&a, &map(5, 5, vb), 32).unwrap();
        assert_relative_eq!(d, 8.0f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn one_row_distance_equals_cdf_difference() {
        let mut rng = crate::rng::Rng::new(17);
        for _ in 0..20 {
            let w = 8;
            let va: Vec<f64> = (0..w).map(|_| rng.next_f64()).collect();
            let vb: Vec<f64> = (0..w).map(|_| rng.next_f64()).collect();
            let sa: f64 = va.iter().sum();
            let sb: f64 = vb.iter().sum();
            let mut cdf_gap = 0.0;
            let (mut ca, mut cb) = (0.0, 0.0);
            for i in 0..w {
                ca += va[i] / sa;
                cb += vb[i] / sb;
                cdf_gap += (ca - cb).abs();
            }
            let d = emd(&map(1, w, va), &map(1, w, vb), 32).unwrap();
            assert_relative_eq!(d, cdf_gap, epsilon = 1e-9);
        }
    }

    #[test]
    fn mass_scaling_does_not_change_the_distance() {
        let mut rng = crate::rng::Rng::new(23);
        let va: Vec<f64> = (0..36).map(|_| rng.next_f64()).collect();
        let vb: Vec<f64> = (0..36).map(|_| rng.next_f64()).collect();
        let d1 = emd(&map(6, 6, va.clone()), &map(6, 6, vb.clone()), 32).unwrap();
        let scaled: Vec<f64> = va.iter().map(|v| v * 7.5).collect();
        let d2 = emd(&map(6, 6, scaled), &map(6, 6, vb), 32).unwrap();
        assert_relative_eq!(d1, d2, epsilon = 1e-9);
    }

    #[test]
    fn work_resolution_caps_the_grid() {
        // 64x64 inputs at work_res 8: a 32-pixel horizontal shift of a
        // vertical bar is 4 working cells.
        let mut va = vec![0.0; 64 * 64];
        let mut vb = vec![0.0; 64 * 64];
        for y in 0..64 {
            for x in 0..8 {
                va[y * 64 + x] = 1.0;
                vb[y * 64 + x + 32] = 1.0;
            }
        }
        let d = emd(&map(64, 64, va), &map(64, 64, vb), 8).unwrap();
        assert_relative_eq!(d, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn area_resample_conserves_mass() {
        let mut rng = crate::rng::Rng::new(5);
        let src: Vec<f64> = (0..63).map(|_| rng.next_f64()).collect();
        let sum: f64 = src.iter().sum();
        let out = area_resample(&src, 7, 9, 3, 4);
        assert_eq!(out.len(), 12);
        let out_sum: f64 = out.iter().sum();
        assert_relative_eq!(out_sum, sum, epsilon = 1e-9);
        // Same-size resample is the identity.
        let same = area_resample(&src, 7, 9, 7, 9);
        for (a, b) in same.iter().zip(&src) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn dense_random_grids_solve_exactly() {
        // Every cell positive: the simplex runs on the full bipartite
        // problem. Compare against the symmetric direction for sanity.
        let mut rng = crate::rng::Rng::new(77);
        let va: Vec<f64> = (0..100).map(|_| 0.05 + rng.next_f64()).collect();
        let vb: Vec<f64> = (0..100).map(|_| 0.05 + rng.next_f64()).collect();
        let a = map(10, 10, va);
        let b = map(10, 10, vb);
        let ab = emd(&a, &b, 32).unwrap();
        let ba = emd(&b, &a, 32).unwrap();
        assert!(ab >= 0.0);
        assert_relative_eq!(ab, ba, epsilon = 1e-9);
    }

    #[test]
    fn zero_mass_and_mismatched_dims_are_rejected() {
        let a = impulse(4, 4, 0, 0);
        let zero = map(4, 4, vec![0.0; 16]);
        assert!(emd(&a, &zero, 32).is_err());
        let other = impulse(4, 5, 0, 0);
        assert!(emd(&a, &other, 32).is_err());
        assert!(emd(&a, &a, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn emd_is_symmetric(
            va in prop::collection::vec(0.0..1.0f64, 16),
            vb in prop::collection::vec(0.0..1.0f64, 16),
        ) {
            prop_assume!(va.iter().sum::<f64>() > 0.01);
            prop_assume!(vb.iter().sum::<f64>() > 0.01);
            let a = map(4, 4, va);
            let b = map(4, 4, vb);
            let ab = emd(&a, &b, 32).unwrap();
            let ba = emd(&b, &a, 32).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9, "{ab} vs {ba}");
        }

        #[test]
        fn emd_satisfies_the_triangle_inequality(
            va in prop::collection::vec(0.0..1.0f64, 16),
            vb in prop::collection::vec(0.0..1.0f64, 16),
            vc in prop::collection::vec(0.0..1.0f64, 16),
        ) {
            prop_assume!(va.iter().sum::<f64>() > 0.01);
            prop_assume!(vb.iter().sum::<f64>() > 0.01);
            prop_assume!(vc.iter().sum::<f64>() > 0.01);
            let a = map(4, 4, va);
            let b = map(4, 4, vb);
            let c = map(4, 4, vc);
            let ab = emd(&a, &b, 32).unwrap();
            let bc = emd(&b, &c, 32).unwrap();
            let ac = emd(&a, &c, 32).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9, "{ac} > {ab} + {bc}");
        }
    }
}
