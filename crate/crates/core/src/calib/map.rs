//! Map frame ↔ world frame, and world frame → WGS84.

use serde::{Deserialize, Serialize};

use super::CalibError;

/// WGS84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// Image map: origin at the top-left corner, axes east and south, unit
    /// is one map pixel.
    Planar2d,
    /// Metric east-north-up map.
    Heightfield3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticAnchor {
    /// Map coordinates of the reference point.
    pub map_point: [f64; 3],
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    /// Height above the ellipsoid (m).
    pub height_m: f64,
}

/// Similarity transform between the metric world frame and a map frame.
///
/// The world frame has its `z = 0` plane on the ground; its x-axis is
/// rotated `rotation` radians counter-clockwise from east.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFrame {
    pub kind: MapKind,
    /// Metres per map unit.
    pub scale: f64,
    /// Map coordinates of the world origin.
    pub origin: [f64; 3],
    /// Angle of the world x-axis, CCW from east (rad).
    #[serde(default)]
    pub rotation: f64,
    #[serde(default)]
    pub geodetic_anchor: Option<GeodeticAnchor>,
}

impl MapFrame {
    pub fn new(kind: MapKind, scale: f64, origin: [f64; 3], rotation: f64) -> Result<Self, CalibError> {
        let frame = Self {
            kind,
            scale,
            origin,
            rotation,
            geodetic_anchor: None,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn with_anchor(mut self, anchor: GeodeticAnchor) -> Self {
        self.geodetic_anchor = Some(anchor);
        self
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(CalibError::Format("map scale must be positive".into()));
        }
        if !self.rotation.is_finite() || self.origin.iter().any(|v| !v.is_finite()) {
            return Err(CalibError::Format("map transform must be finite".into()));
        }
        Ok(())
    }

    /// World point → east/north/up offsets from the world origin (m).
    pub fn world_to_enu(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.rotation.sin_cos();
        [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
    }

    pub fn enu_to_world(&self, enu: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.rotation.sin_cos();
        [c * enu[0] + s * enu[1], -s * enu[0] + c * enu[1], enu[2]]
    }

    pub fn world_to_map(&self, p: [f64; 3]) -> [f64; 3] {
        let e = self.world_to_enu(p);
        let k = 1.0 / self.scale;
        match self.kind {
            MapKind::Planar2d => [
                self.origin[0] + e[0] * k,
                self.origin[1] - e[1] * k,
                self.origin[2] + e[2] * k,
            ],
            MapKind::Heightfield3d => [
                self.origin[0] + e[0] * k,
                self.origin[1] + e[1] * k,
                self.origin[2] + e[2] * k,
            ],
        }
    }

    pub fn map_to_world(&self, m: [f64; 3]) -> [f64; 3] {
        let s = self.scale;
        let enu = match self.kind {
            MapKind::Planar2d => [
                (m[0] - self.origin[0]) * s,
                (self.origin[1] - m[1]) * s,
                (m[2] - self.origin[2]) * s,
            ],
            MapKind::Heightfield3d => [
                (m[0] - self.origin[0]) * s,
                (m[1] - self.origin[1]) * s,
                (m[2] - self.origin[2]) * s,
            ],
        };
        self.enu_to_world(enu)
    }

    /// Heading in the world frame → heading in the map frame (rad, measured
    /// from the map's first axis towards its second).
    pub fn heading_to_map(&self, heading: f64) -> f64 {
        let east_heading = heading + self.rotation;
        match self.kind {
            MapKind::Planar2d => -east_heading,
            MapKind::Heightfield3d => east_heading,
        }
    }

    /// World point → (latitude deg, longitude deg, ellipsoidal height m).
    pub fn world_to_wgs84(&self, p: [f64; 3]) -> Result<[f64; 3], CalibError> {
        let anchor = self.geodetic_anchor.ok_or(CalibError::MissingAnchor)?;
        let anchor_world = self.map_to_world(anchor.map_point);
        let e = self.world_to_enu(p);
        let a = self.world_to_enu(anchor_world);
        let local = [e[0] - a[0], e[1] - a[1], e[2] - a[2]];
        Ok(enu_to_geodetic(
            local,
            [anchor.latitude_deg, anchor.longitude_deg, anchor.height_m],
        ))
    }

    pub fn wgs84_to_world(&self, llh: [f64; 3]) -> Result<[f64; 3], CalibError> {
        let anchor = self.geodetic_anchor.ok_or(CalibError::MissingAnchor)?;
        let anchor_world = self.map_to_world(anchor.map_point);
        let a = self.world_to_enu(anchor_world);
        let local = geodetic_to_enu(llh, [anchor.latitude_deg, anchor.longitude_deg, anchor.height_m]);
        Ok(self.enu_to_world([local[0] + a[0], local[1] + a[1], local[2] + a[2]]))
    }
}

fn e2() -> f64 {
    WGS84_F * (2.0 - WGS84_F)
}

/// (lat deg, lon deg, h m) → ECEF (m).
pub fn geodetic_to_ecef(llh: [f64; 3]) -> [f64; 3] {
    let (lat, lon, h) = (llh[0].to_radians(), llh[1].to_radians(), llh[2]);
    let (sl, cl) = lat.sin_cos();
    let n = WGS84_A / (1.0 - e2() * sl * sl).sqrt();
    [
        (n + h) * cl * lon.cos(),
        (n + h) * cl * lon.sin(),
        (n * (1.0 - e2()) + h) * sl,
    ]
}

/// ECEF (m) → (lat deg, lon deg, h m), fixed-point iteration on latitude.
pub fn ecef_to_geodetic(x: [f64; 3]) -> [f64; 3] {
    let p = x[0].hypot(x[1]);
    let lon = x[1].atan2(x[0]);
    let mut lat = x[2].atan2(p * (1.0 - e2()));
    let mut h = 0.0;
    for _ in 0..50 {
        let sl = lat.sin();
        let n = WGS84_A / (1.0 - e2() * sl * sl).sqrt();
        h = if lat.cos().abs() > 1e-12 {
            p / lat.cos() - n
        } else {
            x[2].abs() / sl.abs() - n * (1.0 - e2())
        };
        let next = x[2].atan2(p * (1.0 - e2() * n / (n + h)));
        let done = (next - lat).abs() < 1e-15;
        lat = next;
        if done {
            break;
        }
    }
    [lat.to_degrees(), lon.to_degrees(), h]
}

fn enu_basis(lat_deg: f64, lon_deg: f64) -> [[f64; 3]; 3] {
    let (sl, cl) = lat_deg.to_radians().sin_cos();
    let (so, co) = lon_deg.to_radians().sin_cos();
    [
        [-so, co, 0.0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ]
}

pub fn enu_to_geodetic(enu: [f64; 3], anchor: [f64; 3]) -> [f64; 3] {
    let b = enu_basis(anchor[0], anchor[1]);
    let o = geodetic_to_ecef(anchor);
    let mut x = o;
    for (k, axis) in b.iter().enumerate() {
        for i in 0..3 {
            x[i] += enu[k] * axis[i];
        }
    }
    ecef_to_geodetic(x)
}

pub fn geodetic_to_enu(llh: [f64; 3], anchor: [f64; 3]) -> [f64; 3] {
    let b = enu_basis(anchor[0], anchor[1]);
    let o = geodetic_to_ecef(anchor);
    let x = geodetic_to_ecef(llh);
    let d = [x[0] - o[0], x[1] - o[1], x[2] - o[2]];
    [
        b[0][0] * d[0] + b[0][1] * d[1] + b[0][2] * d[2],
        b[1][0] * d[0] + b[1][1] * d[1] + b[1][2] * d[2],
        b[2][0] * d[0] + b[2][1] * d[1] + b[2][2] * d[2],
    ]
}
