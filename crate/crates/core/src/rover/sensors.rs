use serde::{Deserialize, Serialize};

use super::plan::Obstacle;
use super::{LIFT_MAX_M, LIFT_MIN_M};
use crate::sim::RngStream;

pub const SENSOR_MIN_M: f64 = 0.02;
pub const SENSOR_MAX_M: f64 = 4.0;
pub const SENSOR_RESOLUTION_M: f64 = 0.003;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeReading {
    Distance(f64),
    BelowMin,
    BeyondMax,
}

/// Nearest multiple of 3 mm, ties to even. Worked in whole micrometres so
/// decimal ties are recognised.
pub fn quantize_3mm(d: f64) -> f64 {
    let um = (d * 1e6).round() as i64;
    let (mut q, r) = (um.div_euclid(3000), um.rem_euclid(3000));
    if 2 * r > 3000 || (2 * r == 3000 && q % 2 == 1) {
        q += 1;
    }
    (q * 3) as f64 / 1000.0
}

/// Distance along `dir` from `p` to the first obstacle hit, if any.
fn ray_hit(p: [f64; 2], dir: [f64; 2], o: &Obstacle) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for k in 0..2 {
        if dir[k] == 0.0 {
            if p[k] < o.min[k] || p[k] > o.max[k] {
                return None;
            }
        } else {
            let a = (o.min[k] - p[k]) / dir[k];
            let b = (o.max[k] - p[k]) / dir[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 <= t1).then_some(t0)
}

/// Readings in the +x, -x, +y, -y directions.
pub fn sense_obstacles(pose: [f64; 2], obstacles: &[Obstacle]) -> [RangeReading; 4] {
    let dirs = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
    dirs.map(|d| {
        let nearest = obstacles
            .iter()
            .filter_map(|o| ray_hit(pose, d, o))
            .fold(f64::INFINITY, f64::min);
        if nearest < SENSOR_MIN_M {
            RangeReading::BelowMin
        } else if nearest > SENSOR_MAX_M {
            RangeReading::BeyondMax
        } else {
            RangeReading::Distance(quantize_3mm(nearest))
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftReading {
    pub value_m: f64,
    /// Reading falls outside the physical lift range.
    pub out_of_range: bool,
}

pub fn lift_height_measure(true_height_m: f64, rng: &mut RngStream) -> LiftReading {
    let value_m = true_height_m + rng.uniform(-0.02, 0.02);
    LiftReading {
        value_m,
        out_of_range: !(LIFT_MIN_M..=LIFT_MAX_M).contains(&value_m),
    }
}
