use serde::{Deserialize, Serialize};

use super::RoverError;

/// Lithium pack with linear voltage over state of charge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub capacity_wh: f64,
    pub peak_w: f64,
    pub soc: f64,
}

impl Default for Battery {
    fn default() -> Self {
        Battery {
            capacity_wh: 170.0,
            peak_w: 480.0,
            soc: 1.0,
        }
    }
}

impl Battery {
    pub fn voltage(&self) -> f64 {
        10.0 + 6.2 * self.soc
    }

    pub fn energy_wh(&self) -> f64 {
        self.soc * self.capacity_wh
    }

    /// Draws `power_w` for `dt_s`. Returns the energy actually delivered; a
    /// depleted pack delivers what it has left.
    pub fn draw(&mut self, power_w: f64, dt_s: f64) -> Result<f64, RoverError> {
        if power_w > self.peak_w {
            return Err(RoverError::PeakExceeded(power_w));
        }
        let want = power_w.max(0.0) * dt_s / 3600.0;
        let got = want.min(self.energy_wh());
        self.soc = ((self.energy_wh() - got) / self.capacity_wh).max(0.0);
        Ok(got)
    }

    /// Charges at `power_w` for `dt_s`; returns the energy stored.
    pub fn charge(&mut self, power_w: f64, dt_s: f64) -> f64 {
        let room = self.capacity_wh - self.energy_wh();
        let got = (power_w.max(0.0) * dt_s / 3600.0).min(room);
        self.soc = ((self.energy_wh() + got) / self.capacity_wh).min(1.0);
        got
    }

    pub fn runtime_h(&self, power_w: f64) -> f64 {
        self.energy_wh() / power_w
    }
}
