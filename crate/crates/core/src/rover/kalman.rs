use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::ranging::Fix;
use super::RoverError;

/// Constant-velocity state `[x, y, vx, vy]` with covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KalmanState {
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
}

impl KalmanState {
    pub fn at_rest(position: [f64; 2], position_var: f64, velocity_var: f64) -> Self {
        KalmanState {
            x: Vector4::new(position[0], position[1], 0.0, 0.0),
            p: Matrix4::from_diagonal(&Vector4::new(
                position_var,
                position_var,
                velocity_var,
                velocity_var,
            )),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x[0], self.x[1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    /// White-acceleration process noise, m/s^2.
    pub sigma_a: f64,
    /// Position measurement noise, m.
    pub sigma_meas: f64,
    /// Mahalanobis distance above which a measurement is skipped.
    pub gate: Option<f64>,
    /// Consecutive gated measurements after which the caller should restart
    /// the filter from the latest fix.
    pub reset_after: Option<u32>,
    /// Fixes whose RMS range residual exceeds this are discarded before the filter.
    pub fix_residual_gate_m: Option<f64>,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            sigma_a: 2.0,
            sigma_meas: 0.01,
            gate: Some(3.0),
            reset_after: Some(5),
            fix_residual_gate_m: Some(0.04),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub gain: Matrix4x2<f64>,
    pub innovation: Vector2<f64>,
    pub mahalanobis: f64,
    pub accepted: bool,
}

pub fn is_psd(p: &Matrix4<f64>) -> bool {
    let scale = p.amax().max(1.0);
    if (p - p.transpose()).amax() > 1e-9 * scale {
        return false;
    }
    let sym = (p + p.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .all(|&e| e >= -1e-12 * scale)
}

pub fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

pub fn white_acceleration_q(dt: f64, sigma_a: f64) -> Matrix4<f64> {
    let q = sigma_a * sigma_a;
    let (a, b, c) = (dt.powi(4) / 4.0 * q, dt.powi(3) / 2.0 * q, dt * dt * q);
    let mut m = Matrix4::zeros();
    for i in 0..2 {
        m[(i, i)] = a;
        m[(i, i + 2)] = b;
        m[(i + 2, i)] = b;
        m[(i + 2, i + 2)] = c;
    }
    m
}

fn observation() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

/// Predict with `F(dt)` and `q`, then update with a position measurement in
/// Joseph form. A measurement beyond `gate` is skipped.
pub fn kalman_step_with(
    state: &KalmanState,
    dt: f64,
    measurement: Option<[f64; 2]>,
    q: &Matrix4<f64>,
    r: &Matrix2<f64>,
    gate: Option<f64>,
) -> Result<(KalmanState, StepDiagnostics), RoverError> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(RoverError::BadTimeStep);
    }
    if !is_psd(&state.p) {
        return Err(RoverError::NotPsd);
    }
    let f = transition(dt);
    let x = f * state.x;
    let p = f * state.p * f.transpose() + q;
    let predicted = KalmanState {
        x,
        p: (p + p.transpose()) * 0.5,
    };
    let mut diag = StepDiagnostics {
        gain: Matrix4x2::zeros(),
        innovation: Vector2::zeros(),
        mahalanobis: 0.0,
        accepted: false,
    };
    let Some(z) = measurement else {
        return Ok((predicted, diag));
    };
    let h = observation();
    let y = Vector2::new(z[0], z[1]) - h * predicted.x;
    let s = h * predicted.p * h.transpose() + r;
    diag.innovation = y;
    let Some(s_inv) = s.try_inverse() else {
        return Ok((predicted, diag));
    };
    diag.mahalanobis = (y.transpose() * s_inv * y)[(0, 0)].max(0.0).sqrt();
    if gate.is_some_and(|g| diag.mahalanobis > g) {
        return Ok((predicted, diag));
    }
    let k = predicted.p * h.transpose() * s_inv;
    let ikh = Matrix4::identity() - k * h;
    let p = ikh * predicted.p * ikh.transpose() + k * r * k.transpose();
    diag.gain = k;
    diag.accepted = true;
    Ok((
        KalmanState {
            x: predicted.x + k * y,
            p: (p + p.transpose()) * 0.5,
        },
        diag,
    ))
}

pub fn kalman_step(
    state: &KalmanState,
    dt: f64,
    measurement: Option<[f64; 2]>,
    config: &KalmanConfig,
) -> Result<(KalmanState, StepDiagnostics), RoverError> {
    let q = white_acceleration_q(dt, config.sigma_a);
    let r = Matrix2::identity() * config.sigma_meas.powi(2);
    kalman_step_with(state, dt, measurement, &q, &r, config.gate)
}

/// Filter plus the outlier policy applied to trilateration fixes: residual
/// gate, innovation gate, and a restart at the latest fix after a run of
/// gated measurements.
#[derive(Clone, Debug)]
pub struct Tracker {
    pub state: KalmanState,
    pub config: KalmanConfig,
    pub rejected: u64,
    pub resets: u64,
    gated_run: u32,
}

impl Tracker {
    pub fn new(state: KalmanState, config: KalmanConfig) -> Self {
        Tracker {
            state,
            config,
            rejected: 0,
            resets: 0,
            gated_run: 0,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        self.state.position()
    }

    /// Advances by `dt` and folds in `fix` if it passes both gates.
    pub fn step(&mut self, dt: f64, fix: Option<&Fix>) -> Result<StepDiagnostics, RoverError> {
        let fix = fix.filter(|f| {
            let ok = self
                .config
                .fix_residual_gate_m
                .is_none_or(|g| f.rms_residual_m <= g);
            if !ok {
                self.rejected += 1;
            }
            ok
        });
        let (next, d) = kalman_step(&self.state, dt, fix.map(|f| f.position), &self.config)?;
        self.state = next;
        match fix {
            Some(f) if !d.accepted => {
                self.rejected += 1;
                self.gated_run += 1;
                if self.config.reset_after.is_some_and(|n| self.gated_run >= n) {
                    let pv = self.state.p[(0, 0)].max(self.state.p[(1, 1)]);
                    let vv = self.state.p[(2, 2)].max(self.state.p[(3, 3)]);
                    self.state = KalmanState::at_rest(
                        f.position,
                        self.config.sigma_meas.powi(2).min(pv),
                        vv,
                    );
                    self.gated_run = 0;
                    self.resets += 1;
                }
            }
            Some(_) => self.gated_run = 0,
            None => {}
        }
        Ok(d)
    }
}
