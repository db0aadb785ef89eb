//! Procedural model histograms standing in for a CAD library.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::prior::ModelVector;
use crate::vehicle::{TypeDimensionPrior, VehicleType};

/// Side profile knots `(u, z)`: `u` runs rear (0) to front (1), `z` is a
/// fraction of the vehicle height.
fn profile(ty: VehicleType) -> &'static [(f64, f64)] {
    use VehicleType::*;
    match ty {
        Sedan => &[(0.0, 0.45), (0.06, 0.66), (0.25, 0.7), (0.36, 1.0), (0.62, 1.0), (0.74, 0.68), (0.96, 0.6), (1.0, 0.45)],
        Coupe => &[(0.0, 0.45), (0.08, 0.68), (0.3, 0.72), (0.42, 1.0), (0.6, 1.0), (0.72, 0.66), (0.96, 0.58), (1.0, 0.44)],
        Convertible => &[(0.0, 0.5), (0.08, 0.72), (0.3, 0.75), (0.4, 0.82), (0.62, 0.82), (0.7, 0.72), (0.96, 0.64), (1.0, 0.5)],
        Suv => &[(0.0, 0.55), (0.03, 0.95), (0.1, 1.0), (0.64, 1.0), (0.76, 0.72), (0.97, 0.68), (1.0, 0.52)],
        Minivan => &[(0.0, 0.55), (0.03, 0.96), (0.08, 1.0), (0.72, 1.0), (0.84, 0.64), (0.98, 0.58), (1.0, 0.45)],
        Van => &[(0.0, 0.9), (0.02, 1.0), (0.8, 1.0), (0.9, 0.75), (0.99, 0.62), (1.0, 0.5)],
        PickupTruck => &[(0.0, 0.55), (0.02, 0.56), (0.42, 0.56), (0.45, 1.0), (0.7, 1.0), (0.78, 0.7), (0.98, 0.66), (1.0, 0.5)],
        MiniTruck => &[(0.0, 0.95), (0.02, 1.0), (0.68, 1.0), (0.72, 0.9), (0.98, 0.85), (1.0, 0.6)],
        SemiTruck => &[(0.0, 0.45), (0.05, 0.5), (0.35, 0.5), (0.4, 1.0), (0.8, 1.0), (0.86, 0.6), (1.0, 0.55)],
        Bus => &[(0.0, 0.92), (0.01, 1.0), (0.99, 1.0), (1.0, 0.9)],
        Trailer => &[(0.0, 0.9), (0.01, 1.0), (0.85, 1.0), (0.88, 0.3), (1.0, 0.25)],
        Pedestrian => &[(0.0, 0.5), (0.3, 0.95), (0.5, 1.0), (0.7, 0.95), (1.0, 0.5)],
        TwoWheelers => &[(0.0, 0.45), (0.2, 0.6), (0.45, 1.0), (0.6, 0.9), (0.85, 0.7), (1.0, 0.5)],
        AllTerrainVehicle => &[(0.0, 0.55), (0.2, 0.65), (0.4, 0.9), (0.55, 1.0), (0.7, 0.7), (1.0, 0.55)],
    }
}

/// Piecewise-linear interpolation of sorted knots.
fn interp(knots: &[(f64, f64)], u: f64) -> f64 {
    match knots.iter().position(|(x, _)| *x >= u) {
        Some(0) => knots[0].1,
        Some(k) => {
            let (x0, z0) = knots[k - 1];
            let (x1, z1) = knots[k];
            if x1 <= x0 {
                z1
            } else {
                z0 + (z1 - z0) * (u - x0) / (x1 - x0)
            }
        }
        None => knots[knots.len() - 1].1,
    }
}

/// `count` model histograms of `rows x cols` bins; types assigned in turn.
pub fn synthetic_models(seed: u64, count: usize, rows: usize, cols: usize) -> Vec<ModelVector<f64>> {
    let dims = TypeDimensionPrior::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|n| {
            let ty = VehicleType::ALL[n % VehicleType::ALL.len()];
            let height = dims.range::<f64>(ty).default.z * rng.random_range(0.9..1.1);
            let base = profile(ty);
            let mut knots: Vec<(f64, f64)> = base
                .iter()
                .map(|&(u, z)| {
                    let du = if u > 0.0 && u < 1.0 { rng.random_range(-0.03..0.03) } else { 0.0 };
                    ((u + du).clamp(0.0, 1.0), (z * rng.random_range(0.92..1.05)).min(1.0))
                })
                .collect();
            knots.sort_by(|a, b| a.0.total_cmp(&b.0));
            let shoulder = rng.random_range(0.12..0.3);
            let round = rng.random_range(0.05..0.3);
            let crown = rng.random_range(0.0..0.05);
            let bed = ty == VehicleType::PickupTruck;
            let bed_end = knots.iter().rev().find(|(_, z)| *z < 0.7).map(|k| k.0).unwrap_or(0.4);
            let mut values = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                let u = (i as f64 + 0.5) / rows as f64;
                let z = interp(&knots, u);
                for j in 0..cols {
                    let v = (j as f64 + 0.5) / cols as f64;
                    let e = 2.0 * v.min(1.0 - v);
                    let mut f = 1.0 - crown * (1.0 - e);
                    if e < shoulder {
                        f -= round * (1.0 - e / shoulder).powi(2);
                    }
                    let mut h = z * f;
                    if bed && u < bed_end.min(0.42) && e > 0.15 {
                        // open cargo bed between the side walls
                        h = z * 0.7;
                    }
                    values.push(h.max(0.0) * height);
                }
            }
            ModelVector {
                vehicle_type: ty,
                values,
            }
        })
        .collect()
}
