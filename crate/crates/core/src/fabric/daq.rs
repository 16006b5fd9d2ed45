use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Central data-acquisition backbone capacity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaqCapacity {
    pub adc_channels: u32,
    pub adc_rate_sps: f64,
    pub adc_bits: u32,
    pub dac_channels: u32,
    pub dac_bits: u32,
}

impl Default for DaqCapacity {
    fn default() -> Self {
        DaqCapacity {
            adc_channels: 192,
            adc_rate_sps: 1.25e6,
            adc_bits: 16,
            dac_channels: 48,
            dac_bits: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Adc,
    Dac,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DaqGrant {
    pub id: u64,
    pub kind: ChannelKind,
    pub count: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DaqError {
    #[error("channel request must ask for at least one channel")]
    ZeroChannels,
    #[error("{requested} {kind:?} channels requested, {remaining} remaining")]
    OverCapacity {
        kind: ChannelKind,
        requested: u32,
        remaining: u32,
    },
    #[error("unknown grant {0}")]
    UnknownGrant(u64),
}

/// Running channel assignments against a [`DaqCapacity`].
#[derive(Clone, Debug)]
pub struct DaqLedger {
    capacity: DaqCapacity,
    grants: BTreeMap<u64, DaqGrant>,
    next_id: u64,
}

impl DaqLedger {
    pub fn new(capacity: DaqCapacity) -> Self {
        DaqLedger {
            capacity,
            grants: BTreeMap::new(),
            next_id: 0,
        }
    }

    fn total(&self, kind: ChannelKind) -> u32 {
        match kind {
            ChannelKind::Adc => self.capacity.adc_channels,
            ChannelKind::Dac => self.capacity.dac_channels,
        }
    }

    pub fn used(&self, kind: ChannelKind) -> u32 {
        self.grants
            .values()
            .filter(|g| g.kind == kind)
            .map(|g| g.count)
            .sum()
    }

    pub fn remaining(&self, kind: ChannelKind) -> u32 {
        self.total(kind) - self.used(kind)
    }

    /// Grants `count` channels or rejects without touching the ledger.
    pub fn assign(&mut self, kind: ChannelKind, count: u32) -> Result<DaqGrant, DaqError> {
        if count == 0 {
            return Err(DaqError::ZeroChannels);
        }
        let remaining = self.remaining(kind);
        if count > remaining {
            return Err(DaqError::OverCapacity {
                kind,
                requested: count,
                remaining,
            });
        }
        let grant = DaqGrant {
            id: self.next_id,
            kind,
            count,
        };
        self.next_id += 1;
        self.grants.insert(grant.id, grant);
        Ok(grant)
    }

    pub fn release(&mut self, grant_id: u64) -> Result<DaqGrant, DaqError> {
        self.grants
            .remove(&grant_id)
            .ok_or(DaqError::UnknownGrant(grant_id))
    }
}
