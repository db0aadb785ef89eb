use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::voxel::VoxelGrid;
use super::ShapeError;
use crate::scalar::{from_usize, lit, Real};

/// Top-down height map over a vehicle footprint. Bin `(i, j)` covers the
/// `i`-th slice along the vehicle x-axis (rear to front) and the `j`-th along
/// y (right to left); values are heights in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct HeightHistogram<T: Real> {
    pub rows: usize,
    pub cols: usize,
    /// Footprint length, width and the box height bounding the values.
    pub extent: [T; 3],
    /// Row-major, `rows * cols`.
    pub values: Vec<T>,
}

impl<T: Real> HeightHistogram<T> {
    pub fn new(rows: usize, cols: usize, extent: [T; 3], values: Vec<T>) -> Result<Self, ShapeError> {
        if values.len() != rows * cols {
            return Err(ShapeError::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            extent,
            values,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.cols + j]
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b))
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::min_value().unwrap(), |a, b| a.max(b))
    }

    /// Values clamped into `[0, height]`.
    pub fn clamped(mut self) -> Self {
        let h = self.extent[2];
        for v in self.values.iter_mut() {
            *v = v.max(T::zero()).min(h);
        }
        self
    }
}

/// Per-column top of the highest occupied cell; empty columns are 0.
pub fn voxels_to_histogram<T: Real>(grid: &VoxelGrid<T>) -> Result<HeightHistogram<T>, ShapeError> {
    if grid.is_empty() {
        return Err(ShapeError::EmptyGrid);
    }
    let [nx, ny, nz] = grid.dims();
    let dz = grid.cell().z;
    let mut values = vec![T::zero(); nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            if let Some(k) = (0..nz).rev().find(|&k| grid.get(i, j, k)) {
                values[i * ny + j] = dz * from_usize(k + 1);
            }
        }
    }
    let e = grid.extent();
    HeightHistogram::new(nx, ny, [e.x, e.y, e.z], values)
}

/// One column per bin, filled from the ground to the bin value with cells of
/// height `dz`; a cell is occupied when its centre is below the value.
pub fn histogram_to_voxels<T: Real>(hist: &HeightHistogram<T>, dz: T) -> Result<VoxelGrid<T>, ShapeError> {
    if !(dz > T::zero()) {
        return Err(ShapeError::InvalidVoxelSize);
    }
    if hist.rows == 0 || hist.cols == 0 {
        return Err(ShapeError::EmptyGrid);
    }
    let [l, w, h] = hist.extent;
    let nz = crate::scalar::to_f64((h / dz).ceil()).max(1.0) as usize;
    let cell = Vector3::new(l / from_usize(hist.rows), w / from_usize(hist.cols), dz);
    let mut grid = VoxelGrid::with_cells([hist.rows, hist.cols, nz], cell, false);
    let half: T = lit(0.5);
    for i in 0..hist.rows {
        for j in 0..hist.cols {
            let top = hist.get(i, j);
            for k in 0..nz {
                if dz * (from_usize::<T>(k) + half) < top {
                    grid.set(i, j, k, true);
                }
            }
        }
    }
    Ok(grid)
}

/// Bilinear resampling with the corner bins of source and target aligned.
pub fn resample<T: Real>(hist: &HeightHistogram<T>, rows: usize, cols: usize) -> Result<HeightHistogram<T>, ShapeError> {
    if hist.rows < 2 || hist.cols < 2 || rows < 2 || cols < 2 {
        return Err(ShapeError::TooSmall);
    }
    let scale = |n_src: usize, n_dst: usize, k: usize| -> (usize, T) {
        let x = from_usize::<T>(k) * from_usize(n_src - 1) / from_usize(n_dst - 1);
        let i0 = (crate::scalar::to_f64(x.floor()) as usize).min(n_src - 2);
        (i0, x - from_usize(i0))
    };
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (i0, fx) = scale(hist.rows, rows, r);
        for c in 0..cols {
            let (j0, fy) = scale(hist.cols, cols, c);
            let a = hist.get(i0, j0) * (T::one() - fy) + hist.get(i0, j0 + 1) * fy;
            let b = hist.get(i0 + 1, j0) * (T::one() - fy) + hist.get(i0 + 1, j0 + 1) * fy;
            values.push(a * (T::one() - fx) + b * fx);
        }
    }
    HeightHistogram::new(rows, cols, hist.extent, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type Hist = HeightHistogram<f64>;

    #[test]
    fn full_cuboid_is_flat() {
        let g = VoxelGrid::for_extent(&Vector3::new(4.8, 1.8, 1.5), 0.1, true).unwrap();
        let h = voxels_to_histogram(&g).unwrap();
        assert_eq!((h.rows, h.cols), (48, 18));
        assert!(h.values.iter().all(|v: &f64| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn stepped_block() {
        // rear half 3 cells tall, front half 1 cell
        let mut g = VoxelGrid::with_cells([4, 2, 3], Vector3::new(0.5, 0.5, 0.5), false);
        for i in 0..4 {
            for j in 0..2 {
                let top = if i < 2 { 3 } else { 1 };
                for k in 0..top {
                    g.set(i, j, k, true);
                }
            }
        }
        let h = voxels_to_histogram(&g).unwrap();
        assert_eq!(h.values, vec![1.5, 1.5, 1.5, 1.5, 0.5, 0.5, 0.5, 0.5]);
        assert_eq!(h.extent, [2.0, 1.0, 1.5]);
    }

    #[test]
    fn empty_grid_rejected() {
        let g = VoxelGrid::<f64>::with_cells([2, 2, 2], Vector3::repeat(1.0), false);
        assert!(matches!(voxels_to_histogram(&g), Err(ShapeError::EmptyGrid)));
    }

    #[test]
    fn constant_and_ramp_survive_resampling() {
        let c = Hist::new(7, 5, [4.0, 2.0, 2.0], vec![1.25; 35]).unwrap();
        let r = resample(&c, 50, 50).unwrap();
        assert!(r.values.iter().all(|v| (v - 1.25).abs() < 1e-12));

        let ramp = |rows: usize, cols: usize| {
            let v = (0..rows * cols)
                .map(|k| {
                    let (i, j) = ((k / cols) as f64 / (rows - 1) as f64, (k % cols) as f64 / (cols - 1) as f64);
                    0.2 + 0.7 * i + 0.4 * j
                })
                .collect();
            Hist::new(rows, cols, [4.0, 2.0, 2.0], v).unwrap()
        };
        let r = resample(&ramp(9, 4), 50, 50).unwrap();
        let want = ramp(50, 50);
        for (a, b) in r.values.iter().zip(&want.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_rejects_single_row() {
        let h = Hist::new(1, 3, [1.0, 1.0, 1.0], vec![0.0; 3]).unwrap();
        assert!(matches!(resample(&h, 50, 50), Err(ShapeError::TooSmall)));
    }

    proptest! {
        #[test]
        fn roundtrip_within_one_cell(vals in proptest::collection::vec(0.0f64..1.9, 12), dz in 0.05f64..0.3) {
            let h = Hist::new(3, 4, [3.0, 2.0, 2.0], vals).unwrap();
            let g = histogram_to_voxels(&h, dz).unwrap();
            prop_assume!(!g.is_empty());
            let back = voxels_to_histogram(&g).unwrap();
            for (a, b) in h.values.iter().zip(&back.values) {
                prop_assert!((a - b).abs() <= dz + 1e-12);
            }
        }

        #[test]
        fn resample_stays_within_source_range(vals in proptest::collection::vec(0.0f64..3.0, 100 * 80)) {
            let h = Hist::new(100, 80, [5.0, 2.0, 3.0], vals).unwrap();
            let r = resample(&h, 50, 50).unwrap();
            prop_assert!(r.min() >= h.min() - 1e-12);
            prop_assert!(r.max() <= h.max() + 1e-12);
        }

        #[test]
        fn symmetrize_commutes_with_histogram(half in proptest::collection::vec(0usize..4, 6 * 2)) {
            // columns mirrored across the centre line
            let mut g = VoxelGrid::<f64>::with_cells([6, 4, 4], Vector3::repeat(0.25), false);
            for i in 0..6 {
                for j in 0..2 {
                    for k in 0..half[i * 2 + j] {
                        g.set(i, j, k, true);
                        g.set(i, 3 - j, k, true);
                    }
                }
            }
            prop_assume!(!g.is_empty());
            let s = g.symmetrize();
            prop_assert_eq!(&s, &g);
            prop_assert_eq!(voxels_to_histogram(&s).unwrap(), voxels_to_histogram(&g).unwrap());
        }
    }
}
