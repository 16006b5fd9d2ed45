//! Autonomous sampling rover: beacon trilateration, Kalman tracking, obstacle
//! sensing, serpentine 3D sampling plans and battery-aware missions.

pub mod battery;
pub mod kalman;
pub mod mission;
pub mod plan;
pub mod ranging;
pub mod sensors;

use thiserror::Error;

pub use battery::Battery;
pub use kalman::{
    is_psd, kalman_step, kalman_step_with, transition, white_acceleration_q, KalmanConfig,
    KalmanState, StepDiagnostics, Tracker,
};
pub use mission::{run_mission, MissionConfig, MissionReport, MissionRow, MissionSummary};
pub use plan::{plan_sampling, Area, Obstacle, PlanOptions, SamplePlan, Waypoint};
pub use ranging::{measure_ranges, trilaterate, BeaconSet, Fix};
pub use sensors::{lift_height_measure, quantize_3mm, sense_obstacles, LiftReading, RangeReading};

pub const LIFT_MIN_M: f64 = 0.55;
pub const LIFT_MAX_M: f64 = 1.85;

#[derive(Debug, Error, PartialEq)]
pub enum RoverError {
    #[error("need at least {need} ranges, got {got}")]
    TooFewRanges { need: usize, got: usize },
    #[error("beacon geometry is degenerate in plan view")]
    DegenerateGeometry,
    #[error("trilateration did not converge; last iterate {last:?}")]
    NoConvergence { last: [f64; 2] },
    #[error("covariance is not symmetric positive semi-definite")]
    NotPsd,
    #[error("time step must be positive")]
    BadTimeStep,
    #[error("resolution must be positive")]
    BadResolution,
    #[error("no reachable cells")]
    NoReachableCells,
    #[error("draw of {0} W exceeds the 480 W peak")]
    PeakExceeded(f64),
    #[error("charger is unreachable")]
    ChargerUnreachable,
    #[error("mission aborted: {0}")]
    Aborted(String),
}
