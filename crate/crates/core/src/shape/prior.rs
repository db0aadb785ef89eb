use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::histogram::HeightHistogram;
use super::ShapeError;
use crate::scalar::{from_usize, lit, Real};
use crate::vehicle::VehicleType;

/// A labelled model histogram, flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ModelVector<T: Real> {
    #[serde(rename = "type")]
    pub vehicle_type: VehicleType,
    pub values: Vec<T>,
}

/// PCA shape prior: mean, orthonormal basis and per-type templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ShapePrior<T: Real> {
    pub rows: usize,
    pub cols: usize,
    pub models: Vec<ModelVector<T>>,
    pub mean: Vec<T>,
    /// Column-major `(rows * cols) x components`.
    pub basis: Vec<T>,
    pub components: usize,
    /// Per-type mean model histogram.
    pub templates: BTreeMap<VehicleType, Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Fitted,
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ShapeVector<T: Real> {
    pub coefficients: Vec<T>,
    #[serde(rename = "type")]
    pub vehicle_type: VehicleType,
    pub provenance: Provenance,
}

impl<T: Real> ShapePrior<T> {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn basis_matrix(&self) -> DMatrix<T> {
        DMatrix::from_column_slice(self.len(), self.components, &self.basis)
    }

    /// Leading `k` columns of the basis.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.components);
        Self {
            basis: self.basis[..self.len() * k].to_vec(),
            components: k,
            ..self.clone()
        }
    }

    /// Coefficients of a histogram-space vector: `Sᵀ(h - mean)`.
    pub fn project(&self, h: &[T]) -> Result<DVector<T>, ShapeError> {
        self.check_len(h.len())?;
        let s = self.basis_matrix();
        let d = DVector::from_iterator(h.len(), h.iter().zip(&self.mean).map(|(a, m)| *a - *m));
        Ok(s.transpose() * d)
    }

    /// Histogram-space reconstruction `mean + S v`.
    pub fn reconstruct(&self, v: &[T]) -> Vec<T> {
        let s = self.basis_matrix();
        let r = s * DVector::from_column_slice(v);
        r.iter().zip(&self.mean).map(|(a, m)| *a + *m).collect()
    }

    /// Template coefficients for a type.
    pub fn template_coefficients(&self, ty: VehicleType) -> Result<DVector<T>, ShapeError> {
        let t = self.templates.get(&ty).ok_or(ShapeError::UnknownType(ty))?;
        self.project(t)
    }

    fn check_len(&self, got: usize) -> Result<(), ShapeError> {
        if got != self.len() {
            return Err(ShapeError::DimensionMismatch {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }
}

impl<T: Real> ShapeVector<T> {
    /// Recovered histogram for a footprint of the given extent, clamped to
    /// `[0, height]`.
    pub fn histogram(&self, prior: &ShapePrior<T>, extent: [T; 3]) -> Result<HeightHistogram<T>, ShapeError> {
        if self.coefficients.len() != prior.components {
            return Err(ShapeError::DimensionMismatch {
                expected: prior.components,
                got: self.coefficients.len(),
            });
        }
        let values = prior.reconstruct(&self.coefficients);
        Ok(HeightHistogram::new(prior.rows, prior.cols, extent, values)?.clamped())
    }
}

/// PCA of the model histograms. The eigen-decomposition runs on the
/// `N x N` Gram matrix of centred models and is lifted to histogram space.
pub fn build_prior<T: Real>(
    models: Vec<ModelVector<T>>,
    rows: usize,
    cols: usize,
    components: usize,
) -> Result<ShapePrior<T>, ShapeError> {
    let n = models.len();
    if n < components || n < 2 {
        return Err(ShapeError::TooFewModels { need: components, got: n });
    }
    let dim = rows * cols;
    for m in &models {
        if m.values.len() != dim {
            return Err(ShapeError::DimensionMismatch {
                expected: dim,
                got: m.values.len(),
            });
        }
    }
    let nt: T = from_usize(n);
    let mut mean = vec![T::zero(); dim];
    for m in &models {
        for (a, v) in mean.iter_mut().zip(&m.values) {
            *a += *v / nt;
        }
    }
    let x = DMatrix::from_fn(dim, n, |r, c| models[c].values[r] - mean[r]);
    let gram = x.transpose() * &x;
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let top = eig.eigenvalues[order[0]];
    let floor = top * lit(1e-10);
    let mut basis = Vec::with_capacity(dim * components);
    for &k in order.iter().take(components) {
        let lambda = eig.eigenvalues[k];
        if !(lambda > floor) || !(lambda > T::zero()) {
            return Err(ShapeError::RankDeficient {
                need: components,
                got: order.iter().filter(|&&i| eig.eigenvalues[i] > floor).count(),
            });
        }
        let col = (&x * eig.eigenvectors.column(k)) / lambda.sqrt();
        basis.extend(col.iter().copied());
    }

    let mut templates: BTreeMap<VehicleType, (Vec<T>, usize)> = BTreeMap::new();
    for m in &models {
        let e = templates
            .entry(m.vehicle_type)
            .or_insert_with(|| (vec![T::zero(); dim], 0));
        for (a, v) in e.0.iter_mut().zip(&m.values) {
            *a += *v;
        }
        e.1 += 1;
    }
    let templates = templates
        .into_iter()
        .map(|(ty, (sum, c))| {
            let c: T = from_usize(c);
            (ty, sum.into_iter().map(|v| v / c).collect())
        })
        .collect();

    Ok(ShapePrior {
        rows,
        cols,
        models,
        mean,
        basis,
        components,
        templates,
    })
}

/// Minimiser of `‖(h - mean) - S v‖² + λ ‖v - t‖²`, with `t` the type
/// template in coefficient space.
pub fn fit_shape<T: Real>(
    h: &[T],
    prior: &ShapePrior<T>,
    ty: VehicleType,
    lambda: T,
) -> Result<ShapeVector<T>, ShapeError> {
    if lambda < T::zero() {
        return Err(ShapeError::NegativeLambda);
    }
    prior.check_len(h.len())?;
    let s = prior.basis_matrix();
    let t = prior.template_coefficients(ty)?;
    let d = DVector::from_iterator(h.len(), h.iter().zip(&prior.mean).map(|(a, m)| *a - *m));
    let k = prior.components;
    let a = s.transpose() * &s + DMatrix::identity(k, k) * lambda;
    let b = s.transpose() * d + &t * lambda;
    let v = a.cholesky().ok_or(ShapeError::Singular)?.solve(&b);
    Ok(ShapeVector {
        coefficients: v.iter().copied().collect(),
        vehicle_type: ty,
        provenance: Provenance::Fitted,
    })
}

/// Stand-in shape for a vehicle that could not be reconstructed.
pub fn template_for<T: Real>(ty: VehicleType, prior: &ShapePrior<T>) -> Result<ShapeVector<T>, ShapeError> {
    let t = prior.template_coefficients(ty)?;
    Ok(ShapeVector {
        coefficients: t.iter().copied().collect(),
        vehicle_type: ty,
        provenance: Provenance::Template,
    })
}
