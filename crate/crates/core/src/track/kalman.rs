use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::TrackError;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    /// White-acceleration process noise (m/s²).
    pub accel_sigma: f64,
    pub pos_sigma: f64,
    pub vel_sigma: f64,
    pub init_pos_sigma: f64,
    pub init_vel_sigma: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            accel_sigma: 2.0,
            pos_sigma: 0.5,
            vel_sigma: 0.5,
            init_pos_sigma: 1.0,
            init_vel_sigma: 10.0,
        }
    }
}

/// Constant-velocity filter over `(x, y, z, ẋ, ẏ, ż)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantVelocityKf<T: Real> {
    x: Vector6<T>,
    p: Matrix6<T>,
    planar: bool,
}

impl<T: Real> ConstantVelocityKf<T> {
    pub fn new(position: Vector3<T>, velocity: Option<Vector3<T>>, cfg: &KalmanConfig, planar: bool) -> Self {
        let v = velocity.unwrap_or_else(Vector3::zeros);
        let mut x = Vector6::new(position.x, position.y, position.z, v.x, v.y, v.z);
        let sp: T = lit(cfg.init_pos_sigma);
        let sv: T = if velocity.is_some() {
            lit(cfg.vel_sigma)
        } else {
            lit(cfg.init_vel_sigma)
        };
        let mut p = Matrix6::zeros();
        for i in 0..3 {
            p[(i, i)] = sp * sp;
            p[(i + 3, i + 3)] = sv * sv;
        }
        if planar {
            x[2] = T::zero();
            x[5] = T::zero();
        }
        let mut kf = Self { x, p, planar };
        kf.constrain();
        kf
    }

    pub fn state(&self) -> &Vector6<T> {
        &self.x
    }

    pub fn covariance(&self) -> &Matrix6<T> {
        &self.p
    }

    pub fn position(&self) -> Vector3<T> {
        self.x.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<T> {
        self.x.fixed_rows::<3>(3).into_owned()
    }

    fn constrain(&mut self) {
        if self.planar {
            for i in [2, 5] {
                self.x[i] = T::zero();
                for j in 0..6 {
                    self.p[(i, j)] = T::zero();
                    self.p[(j, i)] = T::zero();
                }
            }
        }
    }

    /// Symmetrizes the covariance and checks positive definiteness on the
    /// unconstrained states.
    fn check(&mut self) -> Result<(), TrackError> {
        self.p = (self.p + self.p.transpose()) * lit::<T>(0.5);
        let idx: Vec<usize> = if self.planar {
            vec![0, 1, 3, 4]
        } else {
            (0..6).collect()
        };
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.p[(idx[i], idx[j])]);
        if sub.iter().any(|v| !v.is_finite()) || sub.cholesky().is_none() {
            return Err(TrackError::NonPsdCovariance);
        }
        Ok(())
    }

    pub fn predict(&mut self, dt: T, accel_sigma: T) -> Result<(), TrackError> {
        let mut f = Matrix6::identity();
        for i in 0..3 {
            f[(i, i + 3)] = dt;
        }
        let q2 = accel_sigma * accel_sigma;
        let dt2 = dt * dt;
        let (a, b, c) = (dt2 * dt2 / lit(4.0), dt2 * dt / lit(2.0), dt2);
        let mut q = Matrix6::zeros();
        for i in 0..3 {
            q[(i, i)] = a * q2;
            q[(i, i + 3)] = b * q2;
            q[(i + 3, i)] = b * q2;
            q[(i + 3, i + 3)] = c * q2;
        }
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + q;
        self.constrain();
        self.check()
    }

    /// Measurement update; either part may be absent. Returns the
    /// innovation.
    pub fn update(
        &mut self,
        position: Option<Vector3<T>>,
        velocity: Option<Vector3<T>>,
        pos_sigma: T,
        vel_sigma: T,
    ) -> Result<DVector<T>, TrackError> {
        let mut rows: Vec<(usize, T, T)> = Vec::new();
        if let Some(p) = position {
            for i in 0..3 {
                rows.push((i, p[i], pos_sigma));
            }
        }
        if let Some(v) = velocity {
            for i in 0..3 {
                rows.push((i + 3, v[i], vel_sigma));
            }
        }
        if self.planar {
            rows.retain(|(i, _, _)| *i != 2 && *i != 5);
        }
        if rows.is_empty() {
            return Ok(DVector::zeros(0));
        }
        let m = rows.len();
        let h = DMatrix::from_fn(m, 6, |r, c| if rows[r].0 == c { T::one() } else { T::zero() });
        let z = DVector::from_fn(m, |r, _| rows[r].1);
        let r = DMatrix::from_fn(m, m, |a, b| if a == b { rows[a].2 * rows[a].2 } else { T::zero() });
        let xd = DVector::from_column_slice(self.x.as_slice());
        let pd = DMatrix::from_column_slice(6, 6, self.p.as_slice());
        let innovation = &z - &h * &xd;
        let s = &h * &pd * h.transpose() + &r;
        let s_inv = s.try_inverse().ok_or(TrackError::NonPsdCovariance)?;
        let k = &pd * h.transpose() * s_inv;
        let xn = xd + &k * &innovation;
        let ikh = DMatrix::<T>::identity(6, 6) - &k * &h;
        let pn = &ikh * pd * ikh.transpose() + &k * r * k.transpose();
        self.x = Vector6::from_column_slice(xn.as_slice());
        self.p = Matrix6::from_column_slice(pn.as_slice());
        self.constrain();
        self.check()?;
        Ok(innovation)
    }
}
