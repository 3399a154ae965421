//! Geometric segmentation metrics: DSC, symmetric surface distances,
//! ASD and HD95.
//!
//! Surface convention: a boundary voxel is a mask voxel with at least
//! one face-neighbor (6-connectivity) outside the mask; the grid border
//! counts as outside. Distances are Euclidean between voxel centers in
//! mm. The symmetric distance multiset concatenates A-to-B and B-to-A
//! nearest distances. HD95 is the nearest-rank ceil(0.95 n)-th order
//! statistic. Alternative conventions shift HD95 by up to one voxel, so
//! this one is fixed here.

use crate::error::CoreError;
use crate::par::map_indexed;
use crate::volume::{require_same_grid, BinaryMask};

/// Dice similarity coefficient as a percentage.
///
/// Both masks empty gives 100; exactly one empty gives 0.
pub fn dsc(a: &BinaryMask, b: &BinaryMask) -> Result<f64, CoreError> {
    require_same_grid(&a.grid, &b.grid, "dsc")?;
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (&va, &vb) in a.values.iter().zip(&b.values) {
        na += va as usize;
        nb += vb as usize;
        inter += (va && vb) as usize;
    }
    if na + nb == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * inter as f64 / (na + nb) as f64)
}

/// Boundary voxels (6-connectivity) as physical mm points.
pub fn boundary_points_mm(mask: &BinaryMask) -> Vec<[f64; 3]> {
    let [nz, ny, nx] = mask.grid.shape;
    let mut pts = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !mask.at(z, y, x) {
                    continue;
                }
                let exposed = (z == 0 || !mask.at(z - 1, y, x))
                    || (z + 1 == nz || !mask.at(z + 1, y, x))
                    || (y == 0 || !mask.at(z, y - 1, x))
                    || (y + 1 == ny || !mask.at(z, y + 1, x))
                    || (x == 0 || !mask.at(z, y, x - 1))
                    || (x + 1 == nx || !mask.at(z, y, x + 1));
                if exposed {
                    pts.push(mask.grid.voxel_center_mm(z, y, x));
                }
            }
        }
    }
    pts
}

#[inline]
fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dz = a[0] - b[0];
    let dy = a[1] - b[1];
    let dx = a[2] - b[2];
    dz * dz + dy * dy + dx * dx
}

/// Uniform-cell spatial hash for nearest-neighbor queries over a fixed
/// point set.
struct CellIndex {
    cell: f64,
    min: [f64; 3],
    dims: [i64; 3],
    buckets: Vec<Vec<[f64; 3]>>,
}

impl CellIndex {
    fn build(points: &[[f64; 3]], cell: f64) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        let dims = [
            (((max[0] - min[0]) / cell).floor() as i64 + 1).max(1),
            (((max[1] - min[1]) / cell).floor() as i64 + 1).max(1),
            (((max[2] - min[2]) / cell).floor() as i64 + 1).max(1),
        ];
        let mut buckets = vec![Vec::new(); (dims[0] * dims[1] * dims[2]) as usize];
        for p in points {
            let c = Self::cell_of_raw(p, min, cell, dims);
            buckets[c].push(*p);
        }
        Self {
            cell,
            min,
            dims,
            buckets,
        }
    }

    fn cell_of_raw(p: &[f64; 3], min: [f64; 3], cell: f64, dims: [i64; 3]) -> usize {
        let mut idx = [0i64; 3];
        for k in 0..3 {
            idx[k] = (((p[k] - min[k]) / cell).floor() as i64).clamp(0, dims[k] - 1);
        }
        ((idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]) as usize
    }

    fn coords_of(&self, p: &[f64; 3]) -> [i64; 3] {
        let mut idx = [0i64; 3];
        for k in 0..3 {
            idx[k] = ((p[k] - self.min[k]) / self.cell).floor() as i64;
        }
        idx
    }

    /// Exact nearest distance from `q` to the point set.
    fn nearest_dist(&self, q: &[f64; 3]) -> f64 {
        let qc = self.coords_of(q);
        let max_ring = self.dims.iter().max().copied().unwrap_or(1)
            + qc.iter().map(|v| v.abs()).max().unwrap_or(0)
            + 2;
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            // Any point in a cell at Chebyshev ring r is at least
            // (r-1)*cell away from q, so once best is below that bound
            // no farther ring can improve it.
            if best.is_finite() && best <= ((ring as f64) - 1.0).max(0.0) * self.cell {
                break;
            }
            self.scan_ring(qc, ring, q, &mut best);
        }
        best
    }

    fn scan_ring(&self, qc: [i64; 3], ring: i64, q: &[f64; 3], best: &mut f64) {
        let lo = [qc[0] - ring, qc[1] - ring, qc[2] - ring];
        let hi = [qc[0] + ring, qc[1] + ring, qc[2] + ring];
        for cz in lo[0]..=hi[0] {
            if cz < 0 || cz >= self.dims[0] {
                continue;
            }
            for cy in lo[1]..=hi[1] {
                if cy < 0 || cy >= self.dims[1] {
                    continue;
                }
                for cx in lo[2]..=hi[2] {
                    if cx < 0 || cx >= self.dims[2] {
                        continue;
                    }
                    // Shell only: skip interior cells already scanned.
                    let on_shell = (cz - qc[0]).abs() == ring
                        || (cy - qc[1]).abs() == ring
                        || (cx - qc[2]).abs() == ring;
                    if !on_shell {
                        continue;
                    }
                    let b = ((cz * self.dims[1] + cy) * self.dims[2] + cx) as usize;
                    for p in &self.buckets[b] {
                        let d2 = dist2(*q, *p);
                        let d = d2.sqrt();
                        if d < *best {
                            *best = d;
                        }
                    }
                }
            }
        }
    }
}

/// Symmetric multiset of boundary-to-boundary nearest distances in mm:
/// A-to-B distances followed by B-to-A distances.
pub fn surface_distances(a: &BinaryMask, b: &BinaryMask) -> Result<Vec<f64>, CoreError> {
    require_same_grid(&a.grid, &b.grid, "surface_distances")?;
    if a.is_empty_mask() {
        return Err(CoreError::UndefinedSurface("first mask".into()));
    }
    if b.is_empty_mask() {
        return Err(CoreError::UndefinedSurface("second mask".into()));
    }
    let pa = boundary_points_mm(a);
    let pb = boundary_points_mm(b);
    let cell = a
        .grid
        .spacing_mm
        .iter()
        .fold(f64::MIN, |m, &s| m.max(s))
        .max(1e-9);
    let ia = CellIndex::build(&pa, cell);
    let ib = CellIndex::build(&pb, cell);

    let mut out = map_indexed(pa.len(), |i| ib.nearest_dist(&pa[i]));
    out.extend(map_indexed(pb.len(), |i| ia.nearest_dist(&pb[i])));
    Ok(out)
}

/// Mean of the symmetric surface distances.
pub fn asd(a: &BinaryMask, b: &BinaryMask) -> Result<f64, CoreError> {
    let d = surface_distances(a, b)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// 95th percentile (nearest-rank) of the symmetric surface distances.
pub fn hd95(a: &BinaryMask, b: &BinaryMask) -> Result<f64, CoreError> {
    let d = surface_distances(a, b)?;
    Ok(percentile_nearest_rank(&d, 0.95))
}

/// Nearest-rank percentile: the ceil(q*n)-th order statistic (1-based).
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from(grid: GridSpec, voxels: &[(usize, usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::empty(grid).unwrap();
        for &(z, y, x) in voxels {
            m.set(z, y, x, true);
        }
        m
    }

    #[test]
    fn dsc_identical_disjoint_and_hand_count() {
        let grid = GridSpec::with_spacing([4, 4, 4], [1.0; 3]);
        let a = mask_from(grid, &[(0, 0, 0), (0, 0, 1), (1, 1, 1)]);
        assert_eq!(dsc(&a, &a).unwrap(), 100.0);
        let b = mask_from(grid, &[(3, 3, 3)]);
        assert_eq!(dsc(&a, &b).unwrap(), 0.0);

        // |A|=|B|=8, overlap 4 -> 50%.
        let a: Vec<_> = (0..8).map(|i| (0usize, i / 4, i % 4)).collect();
        let b: Vec<_> = (4..12).map(|i| (0usize, i / 4, i % 4)).collect();
        let a = mask_from(grid, &a);
        let b = mask_from(grid, &b);
        assert_eq!(dsc(&a, &b).unwrap(), 50.0);
    }

    #[test]
    fn dsc_empty_conventions() {
        let grid = GridSpec::with_spacing([2, 2, 2], [1.0; 3]);
        let e = BinaryMask::empty(grid).unwrap();
        let a = mask_from(grid, &[(0, 0, 0)]);
        assert_eq!(dsc(&e, &e).unwrap(), 100.0);
        assert_eq!(dsc(&a, &e).unwrap(), 0.0);
        assert_eq!(dsc(&e, &a).unwrap(), 0.0);
    }

    #[test]
    fn identical_masks_have_zero_distances() {
        let grid = GridSpec::with_spacing([5, 5, 5], [2.0, 1.0, 1.0]);
        let a = mask_from(grid, &[(2, 2, 2), (2, 2, 3), (2, 3, 2)]);
        let d = surface_distances(&a, &a).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        assert_eq!(asd(&a, &a).unwrap(), 0.0);
        assert_eq!(hd95(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn single_voxel_pair_one_step_apart() {
        let grid = GridSpec::with_spacing([3, 3, 3], [1.0; 3]);
        let a = mask_from(grid, &[(1, 1, 0)]);
        let b = mask_from(grid, &[(1, 1, 1)]);
        let mut d = surface_distances(&a, &b).unwrap();
        d.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(d, vec![1.0, 1.0]);
        assert_eq!(asd(&a, &b).unwrap(), 1.0);
        assert_eq!(hd95(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn empty_mask_is_undefined_surface() {
        let grid = GridSpec::with_spacing([2, 2, 2], [1.0; 3]);
        let e = BinaryMask::empty(grid).unwrap();
        let a = mask_from(grid, &[(0, 0, 0)]);
        assert!(matches!(
            surface_distances(&a, &e),
            Err(CoreError::UndefinedSurface(_))
        ));
    }

    /// Independent all-pairs brute-force oracle.
    fn oracle_distances(a: &BinaryMask, b: &BinaryMask) -> Vec<f64> {
        let pa = boundary_points_mm(a);
        let pb = boundary_points_mm(b);
        let nearest = |p: &[f64; 3], set: &[[f64; 3]]| -> f64 {
            set.iter()
                .map(|q| dist2(*p, *q).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        let mut out: Vec<f64> = pa.iter().map(|p| nearest(p, &pb)).collect();
        out.extend(pb.iter().map(|p| nearest(p, &pa)));
        out
    }

    #[test]
    fn cube_shift_matches_bruteforce_oracle() {
        let grid = GridSpec::with_spacing([8, 8, 8], [1.0; 3]);
        let cube: Vec<_> = (0..27)
            .map(|i| (1 + i / 9, 1 + (i / 3) % 3, 1 + i % 3))
            .collect();
        let shifted: Vec<_> = cube.iter().map(|&(z, y, x)| (z, y, x + 2)).collect();
        let a = mask_from(grid, &cube);
        let b = mask_from(grid, &shifted);
        let mut got = surface_distances(&a, &b).unwrap();
        let mut expect = oracle_distances(&a, &b);
        got.sort_by(|x, y| x.partial_cmp(y).unwrap());
        expect.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(got.len(), expect.len());
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() <= 1e-9, "{g} vs {e}");
        }
        let n = expect.len() as f64;
        let asd_expect = expect.iter().sum::<f64>() / n;
        assert!((asd(&a, &b).unwrap() - asd_expect).abs() <= 1e-9);
        let rank = ((0.95 * n).ceil() as usize).max(1);
        assert!((hd95(&a, &b).unwrap() - expect[rank - 1]).abs() <= 1e-9);
    }

    #[test]
    fn random_masks_match_bruteforce_with_anisotropic_spacing() {
        let grid = GridSpec::with_spacing([12, 12, 12], [2.5, 1.17, 1.17]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let mut a = BinaryMask::empty(grid).unwrap();
            let mut b = BinaryMask::empty(grid).unwrap();
            for v in a.values.iter_mut() {
                *v = rng.gen_bool(0.1);
            }
            for v in b.values.iter_mut() {
                *v = rng.gen_bool(0.1);
            }
            if a.is_empty_mask() || b.is_empty_mask() {
                continue;
            }
            let mut got = surface_distances(&a, &b).unwrap();
            let mut expect = oracle_distances(&a, &b);
            got.sort_by(|x, y| x.partial_cmp(y).unwrap());
            expect.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for (g, e) in got.iter().zip(&expect) {
                assert!((g - e).abs() <= 1e-9, "trial {trial}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn symmetry_of_surface_metrics() {
        let grid = GridSpec::with_spacing([6, 6, 6], [1.0, 2.0, 1.5]);
        let a = mask_from(grid, &[(1, 1, 1), (1, 2, 1), (2, 1, 1)]);
        let b = mask_from(grid, &[(4, 4, 4), (3, 4, 4)]);
        assert_eq!(asd(&a, &b).unwrap(), asd(&b, &a).unwrap());
        assert_eq!(hd95(&a, &b).unwrap(), hd95(&b, &a).unwrap());
        assert_eq!(dsc(&a, &b).unwrap(), dsc(&b, &a).unwrap());
    }

    #[test]
    fn nearest_rank_percentile() {
        let vals = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        // ceil(0.95*10)=10th order statistic.
        assert_eq!(percentile_nearest_rank(&vals, 0.95), 10.0);
        // ceil(0.5*10)=5th.
        assert_eq!(percentile_nearest_rank(&vals, 0.5), 5.0);
    }
}
