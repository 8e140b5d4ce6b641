use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::Moments;
use crate::quadrature::{QuadratureBatch, MIN_CALIBRATION_SAMPLES};

/// Excess variance over vacuum with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub eta: f64,
    pub std_error: f64,
}

impl EtaEstimate {
    fn from_moments(m: &Moments) -> Self {
        Self {
            eta: m.variance() - 0.5,
            std_error: m.variance_std_error(),
        }
    }
}

/// `var(q) - 1/2`: the efficiency for a vacuum/one-photon mixture and the
/// mean photon number for any diagonal state.
pub fn eta_from_variance(batch: &QuadratureBatch) -> Result<EtaEstimate> {
    if !batch.is_calibrated() {
        return Err(Error::CalibrationRequired);
    }
    if batch.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "need at least {MIN_CALIBRATION_SAMPLES} samples, got {}",
            batch.len()
        )));
    }
    Ok(EtaEstimate::from_moments(&batch.moments()))
}

/// One completed estimator block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaUpdate {
    /// Zero-based block number.
    pub block: u64,
    pub eta: f64,
    pub std_error: f64,
}

/// Block-wise running variance estimator for live display.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingEstimator {
    block_size: usize,
    block: Moments,
    latest: Option<EtaUpdate>,
    updates_emitted: u64,
}

impl StreamingEstimator {
    pub const DEFAULT_BLOCK: usize = 5000;

    pub fn new(block_size: usize) -> Result<Self> {
        if !(1000..=100_000).contains(&block_size) {
            return Err(invalid(format!(
                "block_size must lie in [1000, 100000], got {block_size}"
            )));
        }
        Ok(Self {
            block_size,
            block: Moments::default(),
            latest: None,
            updates_emitted: 0,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn latest(&self) -> Option<EtaUpdate> {
        self.latest
    }

    pub fn latest_eta(&self) -> Option<f64> {
        self.latest.map(|u| u.eta)
    }

    pub fn updates_emitted(&self) -> u64 {
        self.updates_emitted
    }

    /// Samples accumulated toward the next block.
    pub fn pending(&self) -> usize {
        self.block.count as usize
    }

    /// Feeds calibrated samples, calling `emit` once per completed block.
    pub fn update_with(&mut self, samples: &[f64], mut emit: impl FnMut(EtaUpdate)) {
        let mut rest = samples;
        while !rest.is_empty() {
            let room = self.block_size - self.block.count as usize;
            let (head, tail) = rest.split_at(room.min(rest.len()));
            for &q in head {
                self.block.push(q);
            }
            rest = tail;
            if self.block.count as usize == self.block_size {
                let est = EtaEstimate::from_moments(&self.block);
                let update = EtaUpdate {
                    block: self.updates_emitted,
                    eta: est.eta,
                    std_error: est.std_error,
                };
                self.latest = Some(update);
                self.updates_emitted += 1;
                self.block = Moments::default();
                emit(update);
            }
        }
    }

    /// Feeds calibrated samples and returns the blocks they completed.
    pub fn update(&mut self, samples: &[f64]) -> Vec<EtaUpdate> {
        let mut out = Vec::new();
        self.update_with(samples, |u| out.push(u));
        out
    }

    /// Drops all statistics, keeping the block size.
    pub fn reset(&mut self) {
        *self = Self {
            block_size: self.block_size,
            block: Moments::default(),
            latest: None,
            updates_emitted: 0,
        };
    }
}

impl Default for StreamingEstimator {
    fn default() -> Self {
        Self::new(Self::DEFAULT_BLOCK).expect("default block size is valid")
    }
}
