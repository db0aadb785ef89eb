use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use nalgebra::{Point3, Vector3};

use super::voxel::VoxelGrid;
use super::ShapeError;
use crate::scalar::{lit, to_f64, Real};

/// Indexed triangle mesh, counter-clockwise faces seen from outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh<T: Real> {
    pub vertices: Vec<Point3<T>>,
    pub faces: Vec<[u32; 3]>,
}

impl<T: Real> TriangleMesh<T> {
    /// Enclosed volume by the divergence theorem.
    pub fn volume(&self) -> T {
        let six: T = lit(6.0);
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize].coords);
                a.dot(&b.cross(&c)) / six
            })
            .fold(T::zero(), |s, v| s + v)
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    /// Every directed edge appears once and its reverse once.
    pub fn is_closed(&self) -> bool {
        let mut count: HashMap<(u32, u32), i32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *count.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        count.iter().all(|(&(a, b), &n)| n == 1 && count.get(&(b, a)) == Some(&1))
    }

    /// Wavefront OBJ text: vertices and faces only.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.6} {:.6} {:.6}", to_f64(v.x), to_f64(v.y), to_f64(v.z));
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }
}

// Cube corner `c` sits at (c & 1, c >> 1 & 1, c >> 2 & 1).
fn cube_edges() -> Vec<(usize, usize, usize)> {
    let mut e = Vec::with_capacity(12);
    for axis in 0..3 {
        for a in 0..8 {
            if a & (1 << axis) == 0 {
                e.push((a, a | 1 << axis, axis));
            }
        }
    }
    e
}

/// Surface loops per corner configuration, as cube-edge indices, derived
/// from the face crossings: on each cube face every run of inside corners is
/// cut off by one segment (diagonal faces keep their inside corners apart)
/// and the segments are chained into loops.
fn case_table() -> &'static [Vec<Vec<u8>>; 256] {
    static TABLE: OnceLock<[Vec<Vec<u8>>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let edges = cube_edges();
        let edge_of = |a: usize, b: usize| -> u8 {
            edges
                .iter()
                .position(|&(p, q, _)| (p, q) == (a.min(b), a.max(b)))
                .expect("adjacent corners") as u8
        };
        let mut faces = Vec::with_capacity(6);
        for d in 0..3 {
            let (p, q) = ((d + 1) % 3, (d + 2) % 3);
            for side in 0..2 {
                let mut ring: Vec<usize> = [(0, 0), (1, 0), (1, 1), (0, 1)]
                    .iter()
                    .map(|&(a, b)| side << d | a << p | b << q)
                    .collect();
                if side == 0 {
                    ring.reverse();
                }
                faces.push(ring);
            }
        }
        std::array::from_fn(|case| {
            let inside = |c: usize| case >> c & 1 == 1;
            let mut next: HashMap<u8, u8> = HashMap::new();
            for ring in &faces {
                for r in 0..4 {
                    let prev = ring[(r + 3) % 4];
                    if !inside(ring[r]) || inside(prev) {
                        continue;
                    }
                    let mut t = r;
                    while inside(ring[(t + 1) % 4]) {
                        t = (t + 1) % 4;
                    }
                    next.insert(edge_of(prev, ring[r]), edge_of(ring[t], ring[(t + 1) % 4]));
                }
            }
            let mut loops = Vec::new();
            let mut starts: Vec<u8> = next.keys().copied().collect();
            starts.sort_unstable();
            let mut used = [false; 12];
            for s in starts {
                if used[s as usize] {
                    continue;
                }
                let mut ring = vec![s];
                used[s as usize] = true;
                let mut e = next[&s];
                while e != s {
                    used[e as usize] = true;
                    ring.push(e);
                    e = next[&e];
                }
                loops.push(ring);
            }
            loops
        })
    })
}

/// Marching cubes over cell-centre occupancy samples, padded by one empty
/// layer so the surface closes. Vertices sit on sample-edge midpoints;
/// loops longer than a triangle are fanned around their centroid.
pub fn mesh_from_voxels<T: Real>(grid: &VoxelGrid<T>) -> Result<TriangleMesh<T>, ShapeError> {
    if grid.is_empty() {
        return Err(ShapeError::EmptyGrid);
    }
    let edges = cube_edges();
    let table = case_table();
    let [nx, ny, nz] = grid.dims().map(|d| d as i64);
    let occupied = |i: i64, j: i64, k: i64| -> bool {
        i >= 0 && j >= 0 && k >= 0 && grid.get(i as usize, j as usize, k as usize)
    };
    let cell = *grid.cell();
    let base = grid.center(0, 0, 0).coords;
    let position = |s: [i64; 3]| -> Vector3<T> {
        base + Vector3::new(
            cell.x * lit::<T>(s[0] as f64),
            cell.y * lit::<T>(s[1] as f64),
            cell.z * lit::<T>(s[2] as f64),
        )
    };
    let half: T = lit(0.5);
    let mut vertices = Vec::new();
    let mut index: HashMap<([i64; 3], usize), u32> = HashMap::new();
    let mut faces = Vec::new();
    for k in -1..nz {
        for j in -1..ny {
            for i in -1..nx {
                let corner = |c: usize| [i + (c & 1) as i64, j + (c >> 1 & 1) as i64, k + (c >> 2 & 1) as i64];
                let mut case = 0usize;
                for c in 0..8 {
                    let s = corner(c);
                    if occupied(s[0], s[1], s[2]) {
                        case |= 1 << c;
                    }
                }
                for ring in &table[case] {
                    let ids: Vec<u32> = ring
                        .iter()
                        .map(|&e| {
                            let (a, b, axis) = edges[e as usize];
                            *index.entry((corner(a), axis)).or_insert_with(|| {
                                vertices.push(Point3::from((position(corner(a)) + position(corner(b))) * half));
                                (vertices.len() - 1) as u32
                            })
                        })
                        .collect();
                    if ids.len() == 3 {
                        faces.push([ids[0], ids[1], ids[2]]);
                        continue;
                    }
                    let n: T = lit(ids.len() as f64);
                    let c = ids.iter().fold(Vector3::zeros(), |s, &v| s + vertices[v as usize].coords) / n;
                    vertices.push(Point3::from(c));
                    let ci = (vertices.len() - 1) as u32;
                    for k in 0..ids.len() {
                        faces.push([ci, ids[k], ids[(k + 1) % ids.len()]]);
                    }
                }
            }
        }
    }
    Ok(TriangleMesh { vertices, faces })
}
