//! Traffic-camera scene reconstruction: calibration, per-frame vehicle
//! geometry, tracking, shape reconstruction, replay and a synthetic
//! evaluation harness.
//!
//! The numeric modules are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which the pipeline, file formats
//! and service use.

pub mod calib;
pub mod config;
pub mod geom;
pub mod io;
pub mod track;
pub mod scalar;
pub mod scene;
pub mod shape;
pub mod synth;
pub mod vehicle;

pub use scalar::Real;
pub use vehicle::{TypeDimensionPrior, VehicleType};

pub type CameraModel = calib::CameraModel<f64>;
pub type GroundTransform = calib::GroundTransform<f64>;
pub type Heightfield = calib::Heightfield<f64>;
pub type Box3D = geom::Box3D<f64>;
pub type FlowVector = geom::FlowVector<f64>;
