//! Distributed coherent transmission: timing error to LO phase, conjugate
//! steering toward a point and array gain statistics.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{Fabric, Role};
use crate::sim::{NodeId, RngStream};
use crate::timesync::SyncReport;

pub const CARRIER_MIN_HZ: f64 = 70e6;
pub const CARRIER_MAX_HZ: f64 = 6e9;
pub const MAX_TX_POWER_DBM: f64 = 20.0;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum CoherentError {
    #[error("carrier {0} Hz outside 70 MHz..6 GHz")]
    CarrierOutOfRange(f64),
    #[error("transmit power {0} dBm above 20 dBm")]
    TxPowerTooHigh(f64),
    #[error("no phases to combine")]
    Empty,
    #[error("no sync data for tiles {0:?}")]
    MissingSyncData(Vec<u32>),
    #[error("target {0:?} is outside the room")]
    TargetOutsideRoom([f64; 3]),
    #[error("unknown tile {0}")]
    UnknownTile(u32),
}

pub fn check_carrier(carrier_hz: f64) -> Result<(), CoherentError> {
    if (CARRIER_MIN_HZ..=CARRIER_MAX_HZ).contains(&carrier_hz) {
        Ok(())
    } else {
        Err(CoherentError::CarrierOutOfRange(carrier_hz))
    }
}

/// Wraps to (-pi, pi].
pub fn wrap_phase(phi: f64) -> f64 {
    let mut w = phi.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdrNode {
    pub tile: u32,
    pub carrier_hz: f64,
    pub tx_power_dbm: f64,
}

impl SdrNode {
    pub fn new(tile: u32, carrier_hz: f64, tx_power_dbm: f64) -> Result<Self, CoherentError> {
        check_carrier(carrier_hz)?;
        if tx_power_dbm > MAX_TX_POWER_DBM {
            return Err(CoherentError::TxPowerTooHigh(tx_power_dbm));
        }
        Ok(SdrNode {
            tile,
            carrier_hz,
            tx_power_dbm,
        })
    }
}

pub fn phase_from_timing(
    delta_t_s: f64,
    carrier_hz: f64,
    noise_sigma_rad: f64,
    rng: &mut RngStream,
) -> Result<f64, CoherentError> {
    check_carrier(carrier_hz)?;
    let noise = if noise_sigma_rad > 0.0 {
        rng.normal(0.0, noise_sigma_rad)
    } else {
        0.0
    };
    Ok(wrap_phase(TAU * carrier_hz * delta_t_s + noise))
}

/// Free-space propagation phase from `from` to `target`, wrapped.
pub fn steering_phase(from: [f64; 3], target: [f64; 3], carrier_hz: f64) -> f64 {
    let d = ((from[0] - target[0]).powi(2)
        + (from[1] - target[1]).powi(2)
        + (from[2] - target[2]).powi(2))
    .sqrt();
    let cycles = d * carrier_hz / SPEED_OF_LIGHT;
    wrap_phase(TAU * cycles.fract())
}

/// `|sum exp(j phi)|^2`.
pub fn coherent_gain(phases: &[f64]) -> Result<f64, CoherentError> {
    if phases.is_empty() {
        return Err(CoherentError::Empty);
    }
    let (re, im) = phases
        .iter()
        .fold((0.0, 0.0), |(re, im), &p| (re + p.cos(), im + p.sin()));
    Ok(re * re + im * im)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingSource {
    /// Residuals drawn from each tile's post-convergence sync samples.
    #[default]
    Sync,
    /// Zero timing error.
    Perfect,
    /// Independent uniform phases, as if unsynchronized.
    RandomPhase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamformingSpec {
    pub carrier_hz: f64,
    pub target: [f64; 3],
    pub trials: u32,
    pub phase_noise_sigma_rad: f64,
    pub tx_power_dbm: f64,
    /// Participating tiles; every SDR tile when absent.
    pub tiles: Option<Vec<u32>>,
    pub timing: TimingSource,
}

impl Default for BeamformingSpec {
    fn default() -> Self {
        BeamformingSpec {
            carrier_hz: 2.4e9,
            target: [4.2, 2.4, 1.2],
            trials: 1_000,
            phase_noise_sigma_rad: 0.0,
            tx_power_dbm: 10.0,
            tiles: None,
            timing: TimingSource::Sync,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainResult {
    pub n: usize,
    pub carrier_hz: f64,
    pub trials: u32,
    pub mean: f64,
    pub var: f64,
    pub efficiency: f64,
    #[serde(skip)]
    pub per_trial: Vec<f64>,
}

impl GainResult {
    pub fn ideal(&self) -> f64 {
        (self.n * self.n) as f64
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_trials_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["trial", "gain"])?;
        for (i, g) in self.per_trial.iter().enumerate() {
            w.write_record([i.to_string(), g.to_string()])?;
        }
        w.flush()
    }
}

fn participants(fabric: &Fabric, spec: &BeamformingSpec) -> Result<Vec<u32>, CoherentError> {
    match &spec.tiles {
        Some(v) => {
            for &t in v {
                fabric.tile(t).map_err(|_| CoherentError::UnknownTile(t))?;
            }
            Ok(v.clone())
        }
        None => Ok(fabric
            .tiles
            .iter()
            .filter(|t| t.roles.contains(&Role::Sdr))
            .map(|t| t.id)
            .collect()),
    }
}

/// Monte Carlo array gain toward `spec.target` with per-tile timing errors
/// (picoseconds) drawn from `residuals`. Each trial has its own derived RNG
/// stream, so results do not depend on thread scheduling.
pub fn evaluate_with_residuals(
    fabric: &Fabric,
    residuals: &BTreeMap<u32, Vec<i64>>,
    spec: &BeamformingSpec,
    seed: u64,
) -> Result<GainResult, CoherentError> {
    check_carrier(spec.carrier_hz)?;
    if spec.tx_power_dbm > MAX_TX_POWER_DBM {
        return Err(CoherentError::TxPowerTooHigh(spec.tx_power_dbm));
    }
    if !fabric.room.contains(spec.target) {
        return Err(CoherentError::TargetOutsideRoom(spec.target));
    }
    let tiles = participants(fabric, spec)?;
    if tiles.is_empty() {
        return Err(CoherentError::Empty);
    }
    if spec.timing == TimingSource::Sync {
        let missing: Vec<u32> = tiles
            .iter()
            .copied()
            .filter(|t| residuals.get(t).is_none_or(|v| v.is_empty()))
            .collect();
        if !missing.is_empty() {
            return Err(CoherentError::MissingSyncData(missing));
        }
    }
    let geo: Vec<f64> = tiles
        .iter()
        .map(|&t| {
            steering_phase(
                fabric.tile(t).map(|n| n.center).unwrap_or_default(),
                spec.target,
                spec.carrier_hz,
            )
        })
        .collect();
    let root = RngStream::new(seed, "beamforming");
    let per_trial: Vec<f64> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = root.derive(trial);
            let phases: Vec<f64> = tiles
                .iter()
                .zip(&geo)
                .map(|(t, &g)| {
                    let err = match spec.timing {
                        TimingSource::Perfect => 0.0,
                        TimingSource::RandomPhase => rng.uniform(-PI, PI),
                        TimingSource::Sync => {
                            let r = &residuals[t];
                            let dt = r[rng.below(r.len() as u64) as usize] as f64 * 1e-12;
                            phase_from_timing(
                                dt,
                                spec.carrier_hz,
                                spec.phase_noise_sigma_rad,
                                &mut rng,
                            )
                            .expect("carrier checked")
                        }
                    };
                    // Channel phase plus conjugate weight.
                    (g + err) - g
                })
                .collect();
            coherent_gain(&phases).expect("non-empty")
        })
        .collect();
    let n = tiles.len();
    let mean = per_trial.iter().sum::<f64>() / per_trial.len().max(1) as f64;
    let var = if per_trial.len() > 1 {
        per_trial.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (per_trial.len() - 1) as f64
    } else {
        0.0
    };
    Ok(GainResult {
        n,
        carrier_hz: spec.carrier_hz,
        trials: spec.trials,
        mean,
        var,
        efficiency: mean / (n * n) as f64,
        per_trial,
    })
}

pub fn evaluate_beamforming(
    fabric: &Fabric,
    report: &SyncReport,
    spec: &BeamformingSpec,
    seed: u64,
) -> Result<GainResult, CoherentError> {
    let residuals = fabric
        .tiles
        .iter()
        .map(|t| (t.id, report.node_residuals(NodeId::Tile(t.id))))
        .collect();
    evaluate_with_residuals(fabric, &residuals, spec, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> RngStream {
        RngStream::new(0, "phase-test")
    }

    #[test]
    fn timing_phase_examples() {
        assert_eq!(phase_from_timing(0.0, 1e9, 0.0, &mut rng()).unwrap(), 0.0);
        assert!(phase_from_timing(1e-9, 1e9, 0.0, &mut rng()).unwrap().abs() < 1e-9);
        let q = phase_from_timing(0.25e-9, 1e9, 0.0, &mut rng()).unwrap();
        assert!((q - PI / 2.0).abs() < 1e-9);
        assert_eq!(
            phase_from_timing(0.0, 6.5e9, 0.0, &mut rng()),
            Err(CoherentError::CarrierOutOfRange(6.5e9))
        );
        assert!(phase_from_timing(0.0, 50e6, 0.0, &mut rng()).is_err());
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_phase(0.0), 0.0);
    }

    #[test]
    fn steering_examples() {
        let p = [1.0, 2.0, 0.5];
        assert_eq!(steering_phase(p, p, 2.4e9), 0.0);
        let lambda = SPEED_OF_LIGHT / 1e9;
        assert!(steering_phase([0.0; 3], [lambda, 0.0, 0.0], 1e9).abs() < 1e-6);
        let one_m = steering_phase([0.0; 3], [1.0, 0.0, 0.0], 300e6);
        let expect = TAU * (300e6 / SPEED_OF_LIGHT - 1.0);
        assert!((one_m - expect).abs() < 1e-9);
        assert!((one_m - 0.004_35).abs() < 1e-4);
    }

    #[test]
    fn gain_examples() {
        assert_eq!(coherent_gain(&[0.0; 10]).unwrap(), 100.0);
        assert!(coherent_gain(&[0.0, PI]).unwrap() < 1e-20);
        assert_eq!(coherent_gain(&[]), Err(CoherentError::Empty));
    }

    #[test]
    fn sdr_limits() {
        assert!(SdrNode::new(0, 2.4e9, 20.0).is_ok());
        assert_eq!(
            SdrNode::new(0, 2.4e9, 21.0),
            Err(CoherentError::TxPowerTooHigh(21.0))
        );
        assert!(SdrNode::new(0, 7e9, 0.0).is_err());
    }
}
