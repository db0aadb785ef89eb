use std::io::{self, Write};

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{Box3D, FlowVector, Occlusion, Rect};
use crate::vehicle::VehicleType;

/// One detected instance in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: u64,
    /// Instance id, unique within the frame.
    pub id: u32,
    /// Mask outline (px).
    pub polygon: Vec<[f64; 2]>,
    /// `[x0, y0, x1, y1]` (px).
    #[serde(rename = "box")]
    pub box2d: [f64; 4],
    /// `[x_prev, y_prev, x_cur, y_cur]` (px).
    #[serde(default)]
    pub flow: Vec<[f64; 4]>,
    #[serde(rename = "type")]
    pub vehicle_type: VehicleType,
    #[serde(default = "unit_score")]
    pub score: f64,
}

fn unit_score() -> f64 {
    1.0
}

impl DetectionRecord {
    pub fn mask(&self) -> Vec<Point2<f64>> {
        self.polygon.iter().map(|p| Point2::new(p[0], p[1])).collect()
    }

    pub fn rect(&self) -> Rect<f64> {
        let b = self.box2d;
        Rect::new(b[0], b[1], b[2], b[3])
    }

    pub fn flows(&self) -> Vec<FlowVector<f64>> {
        self.flow
            .iter()
            .map(|f| FlowVector::new(Point2::new(f[0], f[1]), Point2::new(f[2], f[3])))
            .collect()
    }
}

/// Per-frame measurement before filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMeasurement {
    pub occlusion: Occlusion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<[f64; 3]>,
    /// Frame pairs aggregated into `speed`.
    #[serde(default)]
    pub pairs: usize,
    #[serde(default)]
    pub degenerate_box: bool,
}

/// Tracker output for one vehicle in one frame. World frame, SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub frame: u64,
    /// `frame × frame_dt` (s).
    pub time: f64,
    pub track_id: u32,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub speed: f64,
    /// Radians CCW from world x, in `[0, 2π)`.
    pub heading: f64,
    /// `(length, width, height)` (m).
    pub dims: [f64; 3],
    /// Bottom face then top face, each front-left, front-right, rear-right,
    /// rear-left.
    pub corners: [[f64; 3]; 8],
    #[serde(rename = "type")]
    pub vehicle_type: VehicleType,
    /// No measurement was used in this frame.
    pub predicted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<RawMeasurement>,
}

impl StateRecord {
    pub fn bbox(&self) -> Box3D<f64> {
        Box3D::upright(Point3::from(self.position), self.heading, Vector3::from(self.dims))
    }
}

pub const CSV_HEADER: &str =
    "frame,time,track_id,type,x,y,z,vx,vy,vz,speed,heading,length,width,height,predicted";

pub fn write_csv(w: &mut impl Write, records: &[StateRecord]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.frame,
            r.time,
            r.track_id,
            r.vehicle_type,
            r.position[0],
            r.position[1],
            r.position[2],
            r.velocity[0],
            r.velocity[1],
            r.velocity[2],
            r.speed,
            r.heading,
            r.dims[0],
            r.dims[1],
            r.dims[2],
            r.predicted
        )?;
    }
    Ok(())
}
