//! 15-state extended Kalman filter.
//!
//! State order: `x, y, z, roll, pitch, yaw, u, v, w, p, q, r, u̇, v̇, ẇ`.
//! Position is in the navigation frame (tag* for docking, a station-centred
//! NED frame for homing); velocities, rates and accelerations are body-frame.
//! Linear motion is constant-acceleration, angular motion constant-rate.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, FrameId, FrameMismatch, Pose};

pub const N: usize = 15;

pub type EkfState15 = SVector<f64, N>;
pub type Covariance15 = SMatrix<f64, N, N>;

pub const POS: usize = 0;
pub const ATT: usize = 3;
pub const VEL: usize = 6;
pub const RATE: usize = 9;
pub const ACC: usize = 12;
const ANGLES: [usize; 3] = [3, 4, 5];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EkfError {
    #[error("filter input or output is not finite")]
    Nonfinite,
    #[error("prediction step {0} outside (0, 0.5] s")]
    BadTimeStep(f64),
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error(transparent)]
    Frame(#[from] FrameMismatch),
}

/// One sensor reading with its own noise covariance and timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasurementPacket {
    /// Body pose in the navigation frame; covariance of `[x y z roll pitch yaw]`.
    MarkerPose {
        t: f64,
        pose: Pose,
        covariance: Matrix6<f64>,
    },
    Dvl {
        t: f64,
        velocity: [f64; 3],
        sigma: f64,
    },
    Imu {
        t: f64,
        rates: [f64; 3],
        accel: [f64; 3],
        gyro_sigma: f64,
        accel_sigma: f64,
        tilt: Option<[f64; 2]>,
        tilt_sigma: f64,
        /// Heading in the navigation frame.
        heading: Option<f64>,
        heading_sigma: f64,
    },
    /// Navigation-frame z.
    Depth { t: f64, z: f64, sigma: f64 },
    UsblPosition {
        t: f64,
        north: f64,
        east: f64,
        sigma: f64,
    },
}

impl MeasurementPacket {
    pub fn t(&self) -> f64 {
        match self {
            MeasurementPacket::MarkerPose { t, .. }
            | MeasurementPacket::Dvl { t, .. }
            | MeasurementPacket::Imu { t, .. }
            | MeasurementPacket::Depth { t, .. }
            | MeasurementPacket::UsblPosition { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    /// Spectral density per block `[position, attitude, velocity, rates, acceleration]`.
    pub process_noise: [f64; 5],
    /// Initial standard deviation per block.
    pub initial_sigma: [f64; 5],
    /// Multiplies every marker-pose covariance. Small values mean the filter
    /// trusts the camera almost completely.
    pub marker_confidence: f64,
    pub compass_enabled: bool,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            process_noise: [1e-4, 1e-4, 2e-3, 2e-3, 2e-2],
            initial_sigma: [0.5, 0.05, 0.1, 0.05, 0.05],
            marker_confidence: 1.0,
            compass_enabled: true,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        let ok = self.process_noise.iter().all(|q| *q > 0.0)
            && self.initial_sigma.iter().all(|s| *s > 0.0)
            && self.marker_confidence > 0.0;
        if ok {
            Ok(())
        } else {
            Err("EKF noise terms must be positive")
        }
    }

    pub fn initial_covariance(&self) -> Covariance15 {
        let mut p = Covariance15::zeros();
        for i in 0..N {
            p[(i, i)] = self.initial_sigma[i / 3].powi(2);
        }
        p
    }

    /// Continuous process noise; the discrete one is this times dt.
    pub fn q(&self) -> Covariance15 {
        let mut q = Covariance15::zeros();
        for i in 0..N {
            q[(i, i)] = self.process_noise[i / 3];
        }
        q
    }
}

fn rx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}
fn ry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}
fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}
fn drx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}
fn dry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}
fn drz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Body-to-navigation rotation, Z-Y-X.
pub fn rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    rz(yaw) * ry(pitch) * rx(roll)
}

/// Body rates to Euler-angle rates.
pub fn euler_rate_matrix(roll: f64, pitch: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (tp, cp) = (pitch.tan(), pitch.cos());
    Matrix3::new(1.0, sr * tp, cr * tp, 0.0, cr, -sr, 0.0, sr / cp, cr / cp)
}

fn block3(x: &EkfState15, at: usize) -> Vector3<f64> {
    Vector3::new(x[at], x[at + 1], x[at + 2])
}

/// Noise-free state transition over `dt`.
pub fn transition(x: &EkfState15, dt: f64) -> EkfState15 {
    let (roll, pitch, yaw) = (x[3], x[4], x[5]);
    let v = block3(x, VEL);
    let w = block3(x, RATE);
    let a = block3(x, ACC);
    let mut out = *x;
    let dp = rotation(roll, pitch, yaw) * (v * dt + a * (0.5 * dt * dt));
    let de = euler_rate_matrix(roll, pitch) * w * dt;
    for i in 0..3 {
        out[POS + i] += dp[i];
        out[ATT + i] += de[i];
        out[VEL + i] += a[i] * dt;
    }
    for i in ANGLES {
        out[i] = wrap_angle(out[i]);
    }
    out
}

/// Analytic Jacobian of [`transition`].
pub fn jacobian(x: &EkfState15, dt: f64) -> Covariance15 {
    let (roll, pitch, yaw) = (x[3], x[4], x[5]);
    let v = block3(x, VEL);
    let w = block3(x, RATE);
    let a = block3(x, ACC);
    let d = v * dt + a * (0.5 * dt * dt);
    let r = rotation(roll, pitch, yaw);
    let mut f = Covariance15::identity();

    let cols = [
        rz(yaw) * ry(pitch) * drx(roll) * d,
        rz(yaw) * dry(pitch) * rx(roll) * d,
        drz(yaw) * ry(pitch) * rx(roll) * d,
    ];
    for (j, c) in cols.iter().enumerate() {
        f.fixed_view_mut::<3, 1>(POS, ATT + j).copy_from(c);
    }
    f.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(r * dt));
    f.fixed_view_mut::<3, 3>(POS, ACC)
        .copy_from(&(r * (0.5 * dt * dt)));

    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let tp = sp / cp;
    let c2 = cp * cp;
    let dt_droll = Matrix3::new(
        0.0,
        cr * tp,
        -sr * tp,
        0.0,
        -sr,
        -cr,
        0.0,
        cr / cp,
        -sr / cp,
    );
    let dt_dpitch = Matrix3::new(
        0.0,
        sr / c2,
        cr / c2,
        0.0,
        0.0,
        0.0,
        0.0,
        sr * sp / c2,
        cr * sp / c2,
    );
    let e_roll = dt_droll * w * dt;
    let e_pitch = dt_dpitch * w * dt;
    for i in 0..3 {
        f[(ATT + i, ATT)] += e_roll[i];
        f[(ATT + i, ATT + 1)] += e_pitch[i];
    }
    f.fixed_view_mut::<3, 3>(ATT, RATE)
        .copy_from(&(euler_rate_matrix(roll, pitch) * dt));
    f.fixed_view_mut::<3, 3>(VEL, ACC)
        .copy_from(&(Matrix3::identity() * dt));
    f
}

fn symmetrize(p: &mut Covariance15) {
    let t = p.transpose();
    *p = (*p + t) * 0.5;
}

fn all_finite<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `x ← f(x)`, `P ← F P Fᵀ + Q dt`.
pub fn predict(
    x: &EkfState15,
    p: &Covariance15,
    dt: f64,
    cfg: &EkfConfig,
) -> Result<(EkfState15, Covariance15), EkfError> {
    if !(dt > 0.0 && dt <= 0.5) {
        return Err(EkfError::BadTimeStep(dt));
    }
    if !all_finite(x) || !all_finite(p) {
        return Err(EkfError::Nonfinite);
    }
    let f = jacobian(x, dt);
    let xn = transition(x, dt);
    let mut pn = f * p * f.transpose() + cfg.q() * dt;
    symmetrize(&mut pn);
    if !all_finite(&xn) || !all_finite(&pn) {
        return Err(EkfError::Nonfinite);
    }
    Ok((xn, pn))
}

/// Innovation summary for logging and gating diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationStats {
    pub innovation: Vec<f64>,
    /// Normalised innovation squared.
    pub nis: f64,
}

/// A measurement that selects state components directly.
struct Rows {
    idx: Vec<usize>,
    z: Vec<f64>,
    r: nalgebra::DMatrix<f64>,
}

impl Rows {
    fn new() -> Self {
        Rows {
            idx: Vec::new(),
            z: Vec::new(),
            r: nalgebra::DMatrix::zeros(0, 0),
        }
    }

    fn push_diag(&mut self, idx: usize, z: f64, var: f64) {
        let m = self.idx.len();
        self.idx.push(idx);
        self.z.push(z);
        let mut r = nalgebra::DMatrix::zeros(m + 1, m + 1);
        r.view_mut((0, 0), (m, m)).copy_from(&self.r);
        r[(m, m)] = var;
        self.r = r;
    }
}

fn rows_for(packet: &MeasurementPacket, cfg: &EkfConfig) -> Rows {
    let mut rows = Rows::new();
    match packet {
        MeasurementPacket::MarkerPose {
            pose, covariance, ..
        } => {
            let (roll, pitch, yaw) = pose.euler();
            let z = [
                pose.position.x,
                pose.position.y,
                pose.position.z,
                roll,
                pitch,
                yaw,
            ];
            rows.idx = (0..6).collect();
            rows.z = z.to_vec();
            rows.r =
                nalgebra::DMatrix::from_fn(6, 6, |i, j| covariance[(i, j)] * cfg.marker_confidence);
        }
        MeasurementPacket::Dvl {
            velocity, sigma, ..
        } => {
            for (i, v) in velocity.iter().enumerate() {
                rows.push_diag(VEL + i, *v, sigma * sigma);
            }
        }
        MeasurementPacket::Imu {
            rates,
            accel,
            gyro_sigma,
            accel_sigma,
            tilt,
            tilt_sigma,
            heading,
            heading_sigma,
            ..
        } => {
            if let Some(t) = tilt {
                rows.push_diag(ATT, t[0], tilt_sigma * tilt_sigma);
                rows.push_diag(ATT + 1, t[1], tilt_sigma * tilt_sigma);
            }
            if cfg.compass_enabled {
                if let Some(h) = heading {
                    rows.push_diag(ATT + 2, *h, heading_sigma * heading_sigma);
                }
            }
            for i in 0..3 {
                rows.push_diag(RATE + i, rates[i], gyro_sigma * gyro_sigma);
            }
            for i in 0..3 {
                rows.push_diag(ACC + i, accel[i], accel_sigma * accel_sigma);
            }
        }
        MeasurementPacket::Depth { z, sigma, .. } => rows.push_diag(POS + 2, *z, sigma * sigma),
        MeasurementPacket::UsblPosition {
            north, east, sigma, ..
        } => {
            rows.push_diag(POS, *north, sigma * sigma);
            rows.push_diag(POS + 1, *east, sigma * sigma);
        }
    }
    rows
}

/// EKF measurement update with wrapped angle innovations and a Joseph-form
/// covariance update. Returns `None` stats when the packet contributes no
/// rows.
pub fn update(
    x: &EkfState15,
    p: &Covariance15,
    packet: &MeasurementPacket,
    cfg: &EkfConfig,
) -> Result<(EkfState15, Covariance15, Option<InnovationStats>), EkfError> {
    let rows = rows_for(packet, cfg);
    let m = rows.idx.len();
    if m == 0 {
        return Ok((*x, *p, None));
    }
    if rows.z.iter().any(|v| !v.is_finite()) || rows.r.iter().any(|v| !v.is_finite()) {
        return Err(EkfError::Nonfinite);
    }
    let h = nalgebra::DMatrix::from_fn(m, N, |i, j| if rows.idx[i] == j { 1.0 } else { 0.0 });
    let mut y = nalgebra::DVector::from_fn(m, |i, _| rows.z[i] - x[rows.idx[i]]);
    for (i, &k) in rows.idx.iter().enumerate() {
        if ANGLES.contains(&k) {
            y[i] = wrap_angle(y[i]);
        }
    }
    let pd = nalgebra::DMatrix::from_fn(N, N, |i, j| p[(i, j)]);
    let pht = &pd * h.transpose();
    let s = &h * &pht + &rows.r;
    let chol = s.clone().cholesky().ok_or(EkfError::SingularInnovation)?;
    let s_inv_y = chol.solve(&y);
    let nis = y.dot(&s_inv_y);
    // K = P Hᵀ S⁻¹, via the Cholesky factor.
    let k = chol.solve(&pht.transpose()).transpose();
    let dx = &k * &y;
    let mut xn = *x;
    for i in 0..N {
        xn[i] += dx[i];
    }
    for i in ANGLES {
        xn[i] = wrap_angle(xn[i]);
    }
    let ikh = nalgebra::DMatrix::<f64>::identity(N, N) - &k * &h;
    let pj = &ikh * &pd * ikh.transpose() + &k * &rows.r * k.transpose();
    let mut pn = Covariance15::from_fn(|i, j| pj[(i, j)]);
    symmetrize(&mut pn);
    if !all_finite(&xn) || !all_finite(&pn) {
        return Err(EkfError::Nonfinite);
    }
    Ok((
        xn,
        pn,
        Some(InnovationStats {
            innovation: y.iter().copied().collect(),
            nis,
        }),
    ))
}

/// Estimation error with angle components wrapped.
pub fn state_error(estimate: &EkfState15, truth: &EkfState15) -> EkfState15 {
    let mut e = estimate - truth;
    for i in ANGLES {
        e[i] = wrap_angle(e[i]);
    }
    e
}

/// Normalised estimation error squared over the states in `idx`.
pub fn nees_subset(
    estimate: &EkfState15,
    cov: &Covariance15,
    truth: &EkfState15,
    idx: &[usize],
) -> f64 {
    let e = state_error(estimate, truth);
    let m = idx.len();
    let sub = nalgebra::DMatrix::from_fn(m, m, |i, j| cov[(idx[i], idx[j])]);
    let ev = nalgebra::DVector::from_fn(m, |i, _| e[idx[i]]);
    match sub.cholesky() {
        Some(c) => ev.dot(&c.solve(&ev)),
        None => f64::INFINITY,
    }
}

/// Full 15-state NEES.
pub fn nees(estimate: &EkfState15, cov: &Covariance15, truth: &EkfState15) -> f64 {
    let idx: Vec<usize> = (0..N).collect();
    nees_subset(estimate, cov, truth, &idx)
}

/// Vertical separation between a vehicle and the station below it; the
/// homing filter uses its negation as a z pseudo-measurement.
pub fn derive_vertical_offset(rov_depth: f64, station_depth: f64) -> f64 {
    debug_assert!(rov_depth >= 0.0 && station_depth >= 0.0);
    station_depth - rov_depth
}

/// Smallest eigenvalue of a covariance.
pub fn min_eigenvalue(p: &Covariance15) -> f64 {
    p.symmetric_eigenvalues().min()
}

/// A filter instance: state, covariance, the navigation frame it runs in and
/// a counter for measurements dropped for arriving out of sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Ekf {
    pub x: EkfState15,
    pub p: Covariance15,
    pub frame: FrameId,
    pub config: EkfConfig,
    pub t: f64,
    pub dropped: usize,
}

impl Ekf {
    pub fn new(
        config: EkfConfig,
        frame: FrameId,
        initial: &Pose,
        t: f64,
    ) -> Result<Self, EkfError> {
        FrameMismatch::check(frame, initial.frame)?;
        let (roll, pitch, yaw) = initial.euler();
        let mut x = EkfState15::zeros();
        x[0] = initial.position.x;
        x[1] = initial.position.y;
        x[2] = initial.position.z;
        x[3] = roll;
        x[4] = pitch;
        x[5] = yaw;
        Ok(Self {
            x,
            p: config.initial_covariance(),
            frame,
            config,
            t,
            dropped: 0,
        })
    }

    /// Propagates the filter to time `t`.
    pub fn predict_to(&mut self, t: f64) -> Result<(), EkfError> {
        let dt = t - self.t;
        if dt <= 0.0 {
            return Ok(());
        }
        let (x, p) = predict(&self.x, &self.p, dt, &self.config)?;
        self.x = x;
        self.p = p;
        self.t = t;
        Ok(())
    }

    /// Applies a packet stamped at or after the filter time, predicting up
    /// to it first. Older packets are dropped and counted.
    pub fn process(
        &mut self,
        packet: &MeasurementPacket,
    ) -> Result<Option<InnovationStats>, EkfError> {
        if let MeasurementPacket::MarkerPose { pose, .. } = packet {
            FrameMismatch::check(self.frame, pose.frame)?;
        }
        let t = packet.t();
        if t < self.t - 1e-9 {
            self.dropped += 1;
            return Ok(None);
        }
        self.predict_to(t)?;
        let (x, p, stats) = update(&self.x, &self.p, packet, &self.config)?;
        self.x = x;
        self.p = p;
        Ok(stats)
    }

    pub fn pose(&self) -> Pose {
        Pose::from_euler(
            Vector3::new(self.x[0], self.x[1], self.x[2]),
            self.x[3],
            self.x[4],
            self.x[5],
            self.frame,
        )
    }

    pub fn position(&self) -> Vector3<f64> {
        block3(&self.x, POS)
    }

    pub fn yaw(&self) -> f64 {
        self.x[5]
    }

    pub fn body_velocity(&self) -> Vector3<f64> {
        block3(&self.x, VEL)
    }

    pub fn position_sigma(&self) -> f64 {
        (self.p[(0, 0)] + self.p[(1, 1)] + self.p[(2, 2)]).sqrt()
    }
}

/// Diagonal marker-pose covariance from per-axis sigmas.
pub fn pose_covariance(position_sigma: f64, attitude_sigma: f64) -> Matrix6<f64> {
    let mut d = Vector6::zeros();
    for i in 0..3 {
        d[i] = position_sigma * position_sigma;
        d[i + 3] = attitude_sigma * attitude_sigma;
    }
    Matrix6::from_diagonal(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    fn sample_state(seed: &[f64; 15]) -> EkfState15 {
        EkfState15::from_column_slice(seed)
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let x = sample_state(&[
            1.0, -2.0, 0.5, 0.2, -0.3, 2.9, 0.4, -0.2, 0.1, 0.05, -0.08, 0.3, 0.2, -0.1, 0.05,
        ]);
        let dt = 0.2;
        let f = jacobian(&x, dt);
        let h = 1e-6;
        for j in 0..N {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fp = transition(&xp, dt);
            let fm = transition(&xm, dt);
            for i in 0..N {
                let mut d = fp[i] - fm[i];
                if ANGLES.contains(&i) {
                    d = wrap_angle(d);
                }
                let num = d / (2.0 * h);
                assert!(
                    (num - f[(i, j)]).abs() < 1e-6,
                    "F[{i},{j}] = {} vs {num}",
                    f[(i, j)]
                );
            }
        }
    }

    #[test]
    fn predict_examples() {
        let cfg = EkfConfig::default();
        let x = EkfState15::zeros();
        let p = cfg.initial_covariance();
        let (xn, pn) = predict(&x, &p, 0.3, &cfg).unwrap();
        assert_eq!(xn, x);
        assert!(pn.trace() > p.trace());

        // 1 s at 1 m/s, taken as two steps of the largest allowed size.
        let mut x = EkfState15::zeros();
        x[VEL] = 1.0;
        let (xh, ph) = predict(&x, &p, 0.5, &cfg).unwrap();
        let (xn, _) = predict(&xh, &ph, 0.5, &cfg).unwrap();
        assert_close!(xn[0], 1.0, 1e-12);
        assert_close!(xn[1], 0.0, 1e-12);

        assert_eq!(predict(&x, &p, 0.0, &cfg), Err(EkfError::BadTimeStep(0.0)));
        assert_eq!(predict(&x, &p, 0.6, &cfg), Err(EkfError::BadTimeStep(0.6)));
        let mut bad = x;
        bad[3] = f64::NAN;
        assert_eq!(predict(&bad, &p, 0.1, &cfg), Err(EkfError::Nonfinite));
    }

    #[test]
    fn yaw_rotates_forward_motion() {
        let cfg = EkfConfig::default();
        let mut x = EkfState15::zeros();
        x[5] = PI / 2.0;
        x[VEL] = 1.0;
        let (xn, _) = predict(&x, &cfg.initial_covariance(), 0.5, &cfg).unwrap();
        assert_close!(xn[0], 0.0, 1e-12);
        assert_close!(xn[1], 0.5, 1e-12);
    }

    #[test]
    fn near_exact_marker_pose_is_adopted() {
        let cfg = EkfConfig::default();
        let x = EkfState15::zeros();
        let p = Covariance15::identity();
        let pose = Pose::from_euler(
            Vector3::new(0.4, -0.3, 0.2),
            0.01,
            -0.02,
            1.0,
            FrameId::TagStar,
        );
        let pkt = MeasurementPacket::MarkerPose {
            t: 0.0,
            pose,
            covariance: Matrix6::identity() * 1e-14,
        };
        let (xn, _, _) = update(&x, &p, &pkt, &cfg).unwrap();
        let (r, pi, y) = pose.euler();
        let want = [0.4, -0.3, 0.2, r, pi, y];
        for i in 0..6 {
            assert_close!(xn[i], want[i], 1e-6);
        }
    }

    #[test]
    fn matching_measurement_changes_nothing() {
        let cfg = EkfConfig::default();
        let mut x = EkfState15::zeros();
        x[VEL] = 0.3;
        let p = cfg.initial_covariance();
        let pkt = MeasurementPacket::Dvl {
            t: 0.0,
            velocity: [0.3, 0.0, 0.0],
            sigma: 0.01,
        };
        let (xn, pn, stats) = update(&x, &p, &pkt, &cfg).unwrap();
        assert_eq!(xn, x);
        assert!(pn.trace() <= p.trace());
        assert_eq!(stats.unwrap().nis, 0.0);
    }

    #[test]
    fn heading_update_across_seam() {
        let mut cfg = EkfConfig::default();
        cfg.compass_enabled = true;
        let deg = PI / 180.0;
        let mut x = EkfState15::zeros();
        x[5] = 179.0 * deg;
        let p = Covariance15::identity();
        let pkt = MeasurementPacket::Imu {
            t: 0.0,
            rates: [0.0; 3],
            accel: [0.0; 3],
            gyro_sigma: 0.01,
            accel_sigma: 0.01,
            tilt: None,
            tilt_sigma: 0.01,
            heading: Some(-179.0 * deg),
            heading_sigma: 1e-6,
        };
        let (xn, _, stats) = update(&x, &p, &pkt, &cfg).unwrap();
        let correction = wrap_angle(xn[5] - x[5]);
        assert_close!(correction, 2.0 * deg, 1e-6);
        assert_close!(stats.unwrap().innovation[0], 2.0 * deg, 1e-12);
        assert_close!(xn[5], -179.0 * deg, 1e-6);
    }

    #[test]
    fn compass_ignored_when_disabled() {
        let cfg = EkfConfig {
            compass_enabled: false,
            ..EkfConfig::default()
        };
        let x = EkfState15::zeros();
        let p = cfg.initial_covariance();
        let imu = |heading| MeasurementPacket::Imu {
            t: 0.0,
            rates: [0.01, 0.0, 0.02],
            accel: [0.1, 0.0, 0.0],
            gyro_sigma: 0.01,
            accel_sigma: 0.02,
            tilt: Some([0.0, 0.0]),
            tilt_sigma: 0.01,
            heading,
            heading_sigma: 0.02,
        };
        let a = update(&x, &p, &imu(Some(0.7)), &cfg).unwrap();
        let b = update(&x, &p, &imu(None), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singular_innovation_reported() {
        let cfg = EkfConfig::default();
        let pkt = MeasurementPacket::Depth {
            t: 0.0,
            z: 1.0,
            sigma: 0.0,
        };
        let r = update(&EkfState15::zeros(), &Covariance15::zeros(), &pkt, &cfg);
        assert_eq!(r, Err(EkfError::SingularInnovation));
    }

    #[test]
    fn nees_examples() {
        let x = EkfState15::zeros();
        let p = Covariance15::identity();
        assert_eq!(nees(&x, &p, &x), 0.0);
        let mut t = x;
        t[7] = 1.0;
        assert_close!(nees(&x, &p, &t), 1.0, 1e-12);
        let mut a = x;
        a[5] = PI - 0.05;
        let mut b = x;
        b[5] = -PI + 0.05;
        assert_close!(nees(&a, &p, &b), 0.01, 1e-9);
    }

    #[test]
    fn vertical_offset() {
        assert_eq!(derive_vertical_offset(5.0, 90.0), 85.0);
        assert_eq!(derive_vertical_offset(90.0, 90.0), 0.0);
        assert_eq!(derive_vertical_offset(12.5, 12.5), 0.0);
    }

    #[test]
    fn out_of_sequence_packets_dropped() {
        let mut f = Ekf::new(
            EkfConfig::default(),
            FrameId::TagStar,
            &Pose::identity(FrameId::TagStar),
            1.0,
        )
        .unwrap();
        f.process(&MeasurementPacket::Depth {
            t: 1.2,
            z: 0.1,
            sigma: 0.05,
        })
        .unwrap();
        let before = f.clone();
        let r = f
            .process(&MeasurementPacket::Depth {
                t: 1.1,
                z: 5.0,
                sigma: 0.05,
            })
            .unwrap();
        assert!(r.is_none());
        assert_eq!(f.dropped, 1);
        assert_eq!((f.x, f.p), (before.x, before.p));
    }

    #[test]
    fn marker_pose_frame_checked() {
        let mut f = Ekf::new(
            EkfConfig::default(),
            FrameId::TagStar,
            &Pose::identity(FrameId::TagStar),
            0.0,
        )
        .unwrap();
        let pkt = MeasurementPacket::MarkerPose {
            t: 0.1,
            pose: Pose::identity(FrameId::Station),
            covariance: Matrix6::identity(),
        };
        assert!(matches!(f.process(&pkt), Err(EkfError::Frame(_))));
    }

    proptest! {
        #[test]
        fn predict_only_trace_never_shrinks(
            yaw in -3.1f64..3.1, roll in -0.3f64..0.3, pitch in -0.3f64..0.3,
            u in -1.0f64..1.0, v in -0.5f64..0.5, a in -0.2f64..0.2, dt in 0.01f64..0.5,
        ) {
            let cfg = EkfConfig::default();
            let mut x = EkfState15::zeros();
            x[3] = roll; x[4] = pitch; x[5] = yaw; x[VEL] = u; x[VEL + 1] = v; x[ACC] = a;
            let mut p = cfg.initial_covariance();
            for _ in 0..100 {
                let tr = p.trace();
                let (xn, pn) = predict(&x, &p, dt, &cfg).unwrap();
                prop_assert!(pn.trace() >= tr - 1e-12);
                x = xn;
                p = pn;
            }
        }
    }
}
