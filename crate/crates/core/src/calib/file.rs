//! On-disk formats: labelled points, map description, calibration output and
//! the plain-text heightfield.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3x4, Point2};
use serde::{Deserialize, Serialize};

use super::{build_ground_lut, CalibError, Calibration, CameraModel, GroundTransform, Heightfield, MapFrame};

pub const CALIBRATION_VERSION: u32 = 1;

/// Labelled correspondences (`carom calibrate --points`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsFile {
    pub image_size: [u32; 2],
    pub correspondences: Vec<LabelledPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelledPoint {
    pub image: [f64; 2],
    /// Map coordinates: two values on a 2D map, three on a 3D map.
    pub map: Vec<f64>,
}

impl PointsFile {
    pub fn pairs(&self) -> Result<Vec<([f64; 2], [f64; 3])>, CalibError> {
        self.correspondences
            .iter()
            .map(|c| {
                let m = match c.map.as_slice() {
                    [x, y] => [*x, *y, 0.0],
                    [x, y, z] => [*x, *y, *z],
                    _ => return Err(CalibError::Format("map point needs 2 or 3 values".into())),
                };
                let (w, h) = (self.image_size[0] as f64, self.image_size[1] as f64);
                if !(0.0..=w).contains(&c.image[0]) || !(0.0..=h).contains(&c.image[1]) {
                    return Err(CalibError::Format(format!(
                        "image point {:?} outside {}x{}",
                        c.image, self.image_size[0], self.image_size[1]
                    )));
                }
                Ok((c.image, m))
            })
            .collect()
    }
}

/// Map description (`carom calibrate --map`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub frame: MapFrame,
    /// Heightfield in world coordinates, for 3D maps.
    #[serde(default)]
    pub heightfield: Option<PathBuf>,
    /// Backdrop image for replay.
    #[serde(default)]
    pub backdrop: Option<PathBuf>,
}

/// Calibration output. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub version: u32,
    pub image_size: [u32; 2],
    /// World (m) → image (px), 12 numbers.
    pub projection: Vec<f64>,
    /// Image (px) → ground plane (m), 9 numbers.
    pub homography: Vec<f64>,
    /// Horizon line `(a, b, c)`; absent for a camera looking straight down.
    pub horizon: Option<[f64; 3]>,
    pub map: MapFrame,
    #[serde(default)]
    pub heightfield: Option<PathBuf>,
    #[serde(default)]
    pub backdrop: Option<PathBuf>,
    #[serde(default)]
    pub reprojection_rms: f64,
}

impl CalibrationFile {
    pub fn from_calibration(cal: &Calibration, heightfield: Option<PathBuf>, backdrop: Option<PathBuf>) -> Self {
        let p = cal.camera.projection();
        let projection = (0..3).flat_map(|r| (0..4).map(move |c| p[(r, c)])).collect();
        let h = cal
            .camera
            .ground_homography()
            .try_inverse()
            .map(|m| m / m.norm())
            .unwrap_or_default();
        let homography = (0..3).flat_map(|r| (0..3).map(move |c| h[(r, c)])).collect();
        let (w, hgt) = cal.camera.image_size();
        Self {
            version: CALIBRATION_VERSION,
            image_size: [w, hgt],
            projection,
            homography,
            horizon: cal.camera.horizon().map(|l| [l.x, l.y, l.z]),
            map: cal.map.clone(),
            heightfield,
            backdrop,
            reprojection_rms: cal.reprojection_rms,
        }
    }

    /// Rebuilds the calibration; relative heightfield paths resolve against
    /// `base_dir`.
    pub fn to_calibration(&self, base_dir: &Path) -> Result<Calibration, CalibError> {
        if self.version != CALIBRATION_VERSION {
            return Err(CalibError::Format(format!(
                "unsupported calibration version {}",
                self.version
            )));
        }
        if self.projection.len() != 12 || self.homography.len() != 9 {
            return Err(CalibError::Format(
                "projection needs 12 numbers and homography 9".into(),
            ));
        }
        self.map.validate()?;
        let p = Matrix3x4::from_row_slice(&self.projection);
        let camera = CameraModel::from_projection(p, (self.image_size[0], self.image_size[1]))?;
        let ground = match &self.heightfield {
            Some(path) => {
                let surface = read_heightfield(&base_dir.join(path))?;
                build_ground_lut(&camera, &surface)?
            }
            None => GroundTransform::from_camera(&camera)?,
        };
        Ok(Calibration {
            camera,
            map: self.map.clone(),
            ground,
            reprojection_rms: self.reprojection_rms,
        })
    }
}

pub fn write_calibration(path: &Path, file: &CalibrationFile) -> Result<(), CalibError> {
    let text = serde_json::to_string_pretty(file).map_err(|e| CalibError::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_calibration_file(path: &Path) -> Result<CalibrationFile, CalibError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CalibError::Format(format!("{}: {e}", path.display())))
}

pub fn load_calibration(path: &Path) -> Result<Calibration, CalibError> {
    let file = read_calibration_file(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    file.to_calibration(base)
}

/// Plain-text heightfield:
///
/// ```text
/// origin <x> <y>
/// cell <size>
/// dims <nx> <ny>
/// <nx * ny elevations, row-major, whitespace separated>
/// ```
/// Lines starting with `#` are comments.
pub fn parse_heightfield(text: &str) -> Result<Heightfield<f64>, CalibError> {
    let bad = |msg: &str| CalibError::InvalidHeightfield(msg.to_string());
    let mut origin = None;
    let mut cell = None;
    let mut dims = None;
    let mut values = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or_default();
        let nums = |parts: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>, CalibError> {
            parts
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                .collect()
        };
        match head {
            "origin" => {
                let v = nums(parts)?;
                if v.len() != 2 {
                    return Err(bad("origin needs x y"));
                }
                origin = Some(Point2::new(v[0], v[1]));
            }
            "cell" => {
                let v = nums(parts)?;
                cell = v.first().copied();
            }
            "dims" => {
                let v: Result<Vec<usize>, _> = parts.map(|t| t.parse::<usize>()).collect();
                let v = v.map_err(|_| bad("bad dims"))?;
                if v.len() != 2 {
                    return Err(bad("dims needs nx ny"));
                }
                dims = Some((v[0], v[1]));
            }
            _ => {
                for t in line.split_whitespace() {
                    values.push(t.parse::<f64>().map_err(|_| bad("bad elevation"))?);
                }
            }
        }
    }
    let (nx, ny) = dims.ok_or_else(|| bad("missing dims"))?;
    Heightfield::new(
        origin.ok_or_else(|| bad("missing origin"))?,
        cell.ok_or_else(|| bad("missing cell"))?,
        nx,
        ny,
        values,
    )
}

pub fn format_heightfield(hf: &Heightfield<f64>) -> String {
    let (nx, ny) = hf.dims();
    let o = hf.origin();
    let mut out = format!("origin {} {}\ncell {}\ndims {} {}\n", o.x, o.y, hf.cell_size(), nx, ny);
    for row in hf.elevations().chunks(nx) {
        let line: Vec<String> = row.iter().map(|z| z.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn read_heightfield(path: &Path) -> Result<Heightfield<f64>, CalibError> {
    parse_heightfield(&fs::read_to_string(path)?)
}
