use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::RoverError;
use crate::fabric::Room;
use crate::sim::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeaconSet {
    pub anchors: Vec<[f64; 3]>,
    pub sigma_m: f64,
    pub rate_hz: f64,
    /// Probability that a range carries an extra uniform error of up to 1 m.
    pub outlier_prob: f64,
}

impl Default for BeaconSet {
    fn default() -> Self {
        BeaconSet::upper_corners(&Room::default(), 0.01)
    }
}

impl BeaconSet {
    pub fn upper_corners(room: &Room, sigma_m: f64) -> Self {
        let (l, w, h) = (room.length_m, room.width_m, room.height_m);
        BeaconSet {
            anchors: vec![[0.0, 0.0, h], [l, 0.0, h], [l, w, h], [0.0, w, h]],
            sigma_m,
            rate_hz: 10.0,
            outlier_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), RoverError> {
        if self.anchors.len() < 4 {
            return Err(RoverError::TooFewRanges {
                need: 4,
                got: self.anchors.len(),
            });
        }
        if plan_view_degenerate(&self.anchors) {
            return Err(RoverError::DegenerateGeometry);
        }
        Ok(())
    }
}

fn plan_view_degenerate(anchors: &[[f64; 3]]) -> bool {
    let mut best = 0.0f64;
    for i in 0..anchors.len() {
        for j in i + 1..anchors.len() {
            for k in j + 1..anchors.len() {
                let (a, b, c) = (anchors[i], anchors[j], anchors[k]);
                let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                best = best.max(cross.abs());
            }
        }
    }
    best < 1e-6
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn measure_ranges(pose: [f64; 3], beacons: &BeaconSet, rng: &mut RngStream) -> Vec<f64> {
    beacons
        .anchors
        .iter()
        .map(|&a| {
            let mut d = distance(pose, a);
            if beacons.sigma_m > 0.0 {
                d += rng.normal(0.0, beacons.sigma_m);
            }
            if beacons.outlier_prob > 0.0 && rng.chance(beacons.outlier_prob) {
                d += rng.uniform(-1.0, 1.0);
            }
            d
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub position: [f64; 2],
    pub rms_residual_m: f64,
    pub iterations: u32,
}

const MAX_ITER: u32 = 50;
const STEP_TOL_M: f64 = 1e-6;

/// Gauss-Newton least squares for (x, y) with the mobile beacon height `z`
/// known, minimising the sum of squared range residuals.
pub fn trilaterate(ranges: &[f64], anchors: &[[f64; 3]], z: f64) -> Result<Fix, RoverError> {
    let n = ranges.len().min(anchors.len());
    if n < 3 {
        return Err(RoverError::TooFewRanges { need: 3, got: n });
    }
    let anchors = &anchors[..n];
    if plan_view_degenerate(anchors) {
        return Err(RoverError::DegenerateGeometry);
    }
    let mut p = Vector2::new(
        anchors.iter().map(|a| a[0]).sum::<f64>() / n as f64,
        anchors.iter().map(|a| a[1]).sum::<f64>() / n as f64,
    );
    let residuals = |p: &Vector2<f64>| -> Vec<f64> {
        anchors
            .iter()
            .zip(ranges)
            .map(|(&a, &d)| distance([p.x, p.y, z], a) - d)
            .collect()
    };
    for it in 1..=MAX_ITER {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for (&a, &d) in anchors.iter().zip(ranges) {
            let rho = distance([p.x, p.y, z], a).max(1e-12);
            let j = Vector2::new((p.x - a[0]) / rho, (p.y - a[1]) / rho);
            jtj += j * j.transpose();
            jtr += j * (rho - d);
        }
        let step = jtj
            .try_inverse()
            .ok_or(RoverError::NoConvergence { last: [p.x, p.y] })?
            * -jtr;
        p += step;
        if step.norm() < STEP_TOL_M {
            let r = residuals(&p);
            let rms = (r.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            return Ok(Fix {
                position: [p.x, p.y],
                rms_residual_m: rms,
                iterations: it,
            });
        }
    }
    Err(RoverError::NoConvergence { last: [p.x, p.y] })
}
