use nalgebra::{Point2, Point3, Vector3};

use super::ShapeError;
use crate::calib::CameraModel;
use crate::geom::{point_in_polygon, Box3D};
use crate::scalar::{from_usize, lit, Real};

/// Occupancy over a vehicle box in the vehicle frame. Cell `(i, j, k)` spans
/// `origin + (i, j, k) * cell` to `origin + (i + 1, j + 1, k + 1) * cell`;
/// the origin is the rear-right-bottom corner.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T: Real> {
    dims: [usize; 3],
    cell: Vector3<T>,
    origin: Vector3<T>,
    bits: Vec<bool>,
}

impl<T: Real> VoxelGrid<T> {
    /// Uniform grid covering a box of `extent = (length, width, height)`.
    pub fn for_extent(extent: &Vector3<T>, voxel_size: T, fill: bool) -> Result<Self, ShapeError> {
        if !(voxel_size > T::zero()) {
            return Err(ShapeError::InvalidVoxelSize);
        }
        let count = |e: T| -> usize { crate::scalar::to_f64((e / voxel_size).round()).max(1.0) as usize };
        let dims = [count(extent.x), count(extent.y), count(extent.z)];
        let cell = Vector3::new(
            extent.x / from_usize(dims[0]),
            extent.y / from_usize(dims[1]),
            extent.z / from_usize(dims[2]),
        );
        Ok(Self::with_cells(dims, cell, fill))
    }

    /// Grid of `dims` cells of size `cell`, centred on the footprint.
    pub fn with_cells(dims: [usize; 3], cell: Vector3<T>, fill: bool) -> Self {
        let half: T = lit(0.5);
        let origin = Vector3::new(
            -cell.x * from_usize(dims[0]) * half,
            -cell.y * from_usize(dims[1]) * half,
            T::zero(),
        );
        Self {
            dims,
            cell,
            origin,
            bits: vec![fill; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn cell(&self) -> &Vector3<T> {
        &self.cell
    }

    pub fn extent(&self) -> Vector3<T> {
        Vector3::new(
            self.cell.x * from_usize(self.dims[0]),
            self.cell.y * from_usize(self.dims[1]),
            self.cell.z * from_usize(self.dims[2]),
        )
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        i < self.dims[0] && j < self.dims[1] && k < self.dims[2] && self.bits[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.index(i, j, k);
        self.bits[idx] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Centre of cell `(i, j, k)` in the vehicle frame.
    pub fn center(&self, i: usize, j: usize, k: usize) -> Point3<T> {
        let half: T = lit(0.5);
        Point3::from(
            self.origin
                + Vector3::new(
                    self.cell.x * (from_usize::<T>(i) + half),
                    self.cell.y * (from_usize::<T>(j) + half),
                    self.cell.z * (from_usize::<T>(k) + half),
                ),
        )
    }

    /// Intersection over union of occupancy; grids must share dimensions.
    pub fn iou(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims);
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Mirror across the vehicle's x-z plane, keeping a cell only when both
    /// it and its mirror are occupied.
    pub fn symmetrize(&self) -> Self {
        let mut out = self.clone();
        let ny = self.dims[1];
        for k in 0..self.dims[2] {
            for j in 0..ny {
                for i in 0..self.dims[0] {
                    let v = self.get(i, j, k) && self.get(i, ny - 1 - j, k);
                    out.set(i, j, k, v);
                }
            }
        }
        out
    }
}

/// One silhouette observation of a vehicle: its mask, the camera and the
/// vehicle box at that instant.
#[derive(Debug, Clone)]
pub struct View<T: Real> {
    pub mask: Vec<Point2<T>>,
    pub camera: CameraModel<T>,
    pub pose: Box3D<T>,
}

/// Visual hull by silhouette carving. The grid spans the box dimensions of
/// the first view; a cell survives if its centre projects inside the mask in
/// every view where it lies in front of the camera.
pub fn carve<T: Real>(views: &[View<T>], voxel_size: T) -> Result<VoxelGrid<T>, ShapeError> {
    let first = views.first().ok_or(ShapeError::NoViews)?;
    let mut grid = VoxelGrid::for_extent(&first.pose.dims, voxel_size, true)?;
    let [nx, ny, nz] = grid.dims;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let local = grid.center(i, j, k).coords;
                let keep = views.iter().all(|v| {
                    let world = v.pose.center_bottom + v.pose.axes * local;
                    match v.camera.project(&world) {
                        Some(px) => point_in_polygon(&v.mask, &px),
                        None => true,
                    }
                });
                grid.set(i, j, k, keep);
            }
        }
    }
    if grid.is_empty() {
        return Err(ShapeError::EmptyHull);
    }
    Ok(grid)
}
