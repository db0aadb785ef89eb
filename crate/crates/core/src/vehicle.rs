//! Vehicle classes and per-class dimension ranges.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VehicleType {
    Pedestrian,
    TwoWheelers,
    Bus,
    MiniTruck,
    SemiTruck,
    PickupTruck,
    Convertible,
    Coupe,
    Sedan,
    AllTerrainVehicle,
    Minivan,
    Van,
    Suv,
    Trailer,
}

impl VehicleType {
    pub const ALL: [VehicleType; 14] = [
        Self::Pedestrian,
        Self::TwoWheelers,
        Self::Bus,
        Self::MiniTruck,
        Self::SemiTruck,
        Self::PickupTruck,
        Self::Convertible,
        Self::Coupe,
        Self::Sedan,
        Self::AllTerrainVehicle,
        Self::Minivan,
        Self::Van,
        Self::Suv,
        Self::Trailer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pedestrian => "pedestrian",
            Self::TwoWheelers => "two-wheelers",
            Self::Bus => "bus",
            Self::MiniTruck => "mini-truck",
            Self::SemiTruck => "semi-truck",
            Self::PickupTruck => "pickup-truck",
            Self::Convertible => "convertible",
            Self::Coupe => "coupe",
            Self::Sedan => "sedan",
            Self::AllTerrainVehicle => "all-terrain-vehicle",
            Self::Minivan => "minivan",
            Self::Van => "van",
            Self::Suv => "suv",
            Self::Trailer => "trailer",
        }
    }
}

impl fmt::Display for VehicleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown vehicle type `{0}`")]
pub struct UnknownType(pub String);

impl FromStr for VehicleType {
    type Err = UnknownType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '_'], "-");
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == key)
            .ok_or_else(|| UnknownType(s.to_string()))
    }
}

/// Plausible `(length, width, height)` in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionRange<T: Real> {
    pub min: Vector3<T>,
    pub default: Vector3<T>,
    pub max: Vector3<T>,
}

impl<T: Real> DimensionRange<T> {
    pub fn clamp(&self, dims: &Vector3<T>) -> Vector3<T> {
        Vector3::from_fn(|i, _| {
            let v = dims[i];
            if v < self.min[i] {
                self.min[i]
            } else if v > self.max[i] {
                self.max[i]
            } else {
                v
            }
        })
    }

    pub fn contains(&self, dims: &Vector3<T>) -> bool {
        (0..3).all(|i| dims[i] >= self.min[i] && dims[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RangeEntry {
    min: [f64; 3],
    default: [f64; 3],
    max: [f64; 3],
}

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("dimension prior: {0}")]
    Invalid(String),
    #[error("dimension prior: {0}")]
    Json(#[from] serde_json::Error),
}

/// Dimension ranges for every vehicle class.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeDimensionPrior {
    ranges: BTreeMap<VehicleType, DimensionRange<f64>>,
}

const BUILTIN_DIMS: &str = include_str!("../data/vehicle_dims.json");

impl TypeDimensionPrior {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_DIMS).expect("bundled dimension table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, PriorError> {
        let raw: BTreeMap<VehicleType, RangeEntry> = serde_json::from_str(text)?;
        let mut ranges = BTreeMap::new();
        for (ty, e) in raw {
            for i in 0..3 {
                if !(e.min[i] > 0.0 && e.min[i] <= e.default[i] && e.default[i] <= e.max[i]) {
                    return Err(PriorError::Invalid(format!("{ty}: need 0 < min <= default <= max")));
                }
            }
            ranges.insert(
                ty,
                DimensionRange {
                    min: Vector3::from(e.min),
                    default: Vector3::from(e.default),
                    max: Vector3::from(e.max),
                },
            );
        }
        if let Some(missing) = VehicleType::ALL.iter().find(|t| !ranges.contains_key(t)) {
            return Err(PriorError::Invalid(format!("missing entry for {missing}")));
        }
        Ok(Self { ranges })
    }

    pub fn range<T: Real>(&self, ty: VehicleType) -> DimensionRange<T> {
        let r = &self.ranges[&ty];
        DimensionRange {
            min: r.min.map(lit),
            default: r.default.map(lit),
            max: r.max.map(lit),
        }
    }
}

impl Default for TypeDimensionPrior {
    fn default() -> Self {
        Self::builtin()
    }
}
