//! Camera and map calibration, and every coordinate transform used
//! downstream: image ↔ ground, world ↔ map, world → WGS84.

mod camera;
mod dlt;
pub mod file;
mod ground;
mod map;

use nalgebra::{Point2, Point3};
use thiserror::Error;

pub use camera::{world_to_camera_rotation, CameraModel, Intrinsics};
pub use dlt::{
    camera_from_ground_correspondences, estimate_homography, estimate_projection,
    GroundCorrespondence, PointCorrespondence, MIN_HOMOGRAPHY_POINTS, MIN_PROJECTION_POINTS,
};
pub use ground::{build_ground_lut, GroundLut, GroundTransform, Heightfield, PlanarGround};
pub use map::{
    ecef_to_geodetic, enu_to_geodetic, geodetic_to_ecef, geodetic_to_enu, GeodeticAnchor,
    MapFrame, MapKind, WGS84_A, WGS84_F,
};

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("camera looks straight down; the horizon is undefined")]
    DegenerateHorizon,
    #[error("pixel is on or above the horizon")]
    AboveHorizon,
    #[error("ground look-up table has no entry at this pixel")]
    InvalidLutEntry,
    #[error("no pixel ray intersects the ground surface")]
    EmptyIntersection,
    #[error("pixel is outside the image")]
    OutsideImage,
    #[error("map frame has no geodetic anchor")]
    MissingAnchor,
    #[error("reprojection RMS {rms:.3} px exceeds tolerance {tolerance:.3} px")]
    ToleranceExceeded { rms: f64, tolerance: f64 },
    #[error("invalid heightfield: {0}")]
    InvalidHeightfield(String),
    #[error("calibration format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Default acceptance threshold for calibration reprojection RMS (px).
pub const DEFAULT_MAX_RMS_PX: f64 = 2.0;

/// Everything downstream stages need from one camera.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub camera: CameraModel<f64>,
    pub map: MapFrame,
    pub ground: GroundTransform<f64>,
    pub reprojection_rms: f64,
}

impl Calibration {
    /// Planar ground transform derived from the camera.
    pub fn planar(camera: CameraModel<f64>, map: MapFrame) -> Result<Self, CalibError> {
        let ground = GroundTransform::from_camera(&camera)?;
        Ok(Self {
            camera,
            map,
            ground,
            reprojection_rms: 0.0,
        })
    }

    pub fn with_heightfield(
        camera: CameraModel<f64>,
        map: MapFrame,
        surface: &Heightfield<f64>,
    ) -> Result<Self, CalibError> {
        let ground = build_ground_lut(&camera, surface)?;
        Ok(Self {
            camera,
            map,
            ground,
            reprojection_rms: 0.0,
        })
    }
}

/// Calibrates from labelled map/image correspondences.
///
/// Map points are first moved into the world frame. When they all lie on
/// the ground plane the camera is recovered from the ground homography;
/// otherwise the full DLT is used.
pub fn calibrate(
    image_size: (u32, u32),
    pairs: &[([f64; 2], [f64; 3])],
    map: &MapFrame,
    max_rms_px: f64,
) -> Result<Calibration, CalibError> {
    map.validate()?;
    let world: Vec<(Point2<f64>, Point3<f64>)> = pairs
        .iter()
        .map(|(img, m)| {
            let w = map.map_to_world(*m);
            (Point2::new(img[0], img[1]), Point3::new(w[0], w[1], w[2]))
        })
        .collect();
    if world.len() < MIN_PROJECTION_POINTS {
        return Err(CalibError::TooFewPoints {
            needed: MIN_PROJECTION_POINTS,
            got: world.len(),
        });
    }
    let planar = world.iter().all(|(_, w)| w.z.abs() < 1e-9);
    let camera = if planar {
        let corr: Vec<_> = world
            .iter()
            .map(|(i, w)| GroundCorrespondence {
                image_point: *i,
                ground_point: w.xy(),
            })
            .collect();
        camera_from_ground_correspondences(&corr, image_size)?
    } else {
        let corr: Vec<_> = world
            .iter()
            .map(|(i, w)| PointCorrespondence {
                image_point: *i,
                world_point: *w,
            })
            .collect();
        estimate_projection(&corr, image_size)?
    };
    let rms = camera.reprojection_rms(world.iter().map(|(i, w)| (w, i)));
    if rms > max_rms_px {
        return Err(CalibError::ToleranceExceeded {
            rms,
            tolerance: max_rms_px,
        });
    }
    let mut calibration = Calibration::planar(camera, map.clone())?;
    calibration.reprojection_rms = rms;
    Ok(calibration)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> CameraModel<f64> {
        CameraModel::look_from(
            &Intrinsics::centered(1000.0, (1280, 720)),
            Point3::new(0.0, 0.0, 10.0),
            0.2,
            0.3,
            0.0,
        )
        .unwrap()
    }

    fn pairs(map: &MapFrame, world: &[[f64; 3]]) -> Vec<([f64; 2], [f64; 3])> {
        let cam = truth();
        world
            .iter()
            .map(|w| {
                let px = cam.project(&Point3::new(w[0], w[1], w[2])).unwrap();
                ([px.x, px.y], map.world_to_map(*w))
            })
            .collect()
    }

    #[test]
    fn planar_map_calibration_fixed_point() {
        let map = MapFrame::new(MapKind::Planar2d, 0.1, [500.0, 400.0, 0.0], 0.3).unwrap();
        let world = [
            [10.0, 2.0, 0.0],
            [20.0, -4.0, 0.0],
            [35.0, 6.0, 0.0],
            [15.0, 10.0, 0.0],
            [45.0, -8.0, 0.0],
            [28.0, 14.0, 0.0],
        ];
        let cal = calibrate((1280, 720), &pairs(&map, &world), &map, 2.0).unwrap();
        assert!(cal.reprojection_rms < 1e-6);
        let cam = truth();
        for w in &world {
            let px = cam.project(&Point3::new(w[0], w[1], w[2])).unwrap();
            let g = cal.ground.image_to_ground(&px).unwrap();
            assert!((g - Point3::new(w[0], w[1], w[2])).norm() < 1e-6);
        }
    }

    #[test]
    fn tolerance_is_enforced() {
        let map = MapFrame::new(MapKind::Heightfield3d, 1.0, [0.0; 3], 0.0).unwrap();
        let world = [
            [10.0, 2.0, 0.0],
            [20.0, -4.0, 1.0],
            [35.0, 6.0, 3.0],
            [15.0, 10.0, 0.5],
            [45.0, -8.0, 2.0],
            [28.0, 14.0, 4.0],
            [30.0, 0.0, 0.0],
        ];
        let mut p = pairs(&map, &world);
        p[3].0[0] += 40.0;
        assert!(matches!(
            calibrate((1280, 720), &p, &map, 2.0),
            Err(CalibError::ToleranceExceeded { .. })
        ));
    }
}
