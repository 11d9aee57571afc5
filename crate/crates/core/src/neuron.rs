//! Configurable leaky integrate-and-fire neuron.
//!
//! A neuron integrates weights into an accumulator during a timestep. At the
//! timestep boundary the decayed membrane and the accumulator are summed,
//! compared against the threshold (ties fire) and reset according to the
//! configured mode. The accumulator is cleared after every step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::Potential;

/// Retained fraction of the membrane per timestep, realized with shifts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecaySelector {
    D125,
    D250,
    D500,
    D750,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResetMode {
    /// Membrane keeps the post-integration value.
    Hold,
    Zero,
    /// Threshold is subtracted from the membrane.
    Subtract,
}

impl DecaySelector {
    pub const ALL: [DecaySelector; 4] = [Self::D125, Self::D250, Self::D500, Self::D750];

    pub fn from_code(code: u8) -> Result<Self, NeuronConfigError> {
        match code {
            0 => Ok(Self::D125),
            1 => Ok(Self::D250),
            2 => Ok(Self::D500),
            3 => Ok(Self::D750),
            other => Err(NeuronConfigError::IllegalDecayEncoding(other)),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::D125 => 0,
            Self::D250 => 1,
            Self::D500 => 2,
            Self::D750 => 3,
        }
    }

    pub fn retained(self) -> f64 {
        match self {
            Self::D125 => 0.125,
            Self::D250 => 0.25,
            Self::D500 => 0.5,
            Self::D750 => 0.75,
        }
    }
}

impl ResetMode {
    pub const ALL: [ResetMode; 3] = [Self::Hold, Self::Zero, Self::Subtract];

    pub fn from_code(code: u8) -> Result<Self, NeuronConfigError> {
        match code {
            0 => Ok(Self::Hold),
            1 => Ok(Self::Zero),
            2 => Ok(Self::Subtract),
            other => Err(NeuronConfigError::IllegalResetEncoding(other)),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Hold => 0,
            Self::Zero => 1,
            Self::Subtract => 2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NeuronConfigError {
    #[error("decay field {0} is not a legal decay selector")]
    IllegalDecayEncoding(u8),
    #[error("reset field {0} is not a legal reset mode")]
    IllegalResetEncoding(u8),
    #[error("neuron config needs {CONFIG_BYTES} bytes, got {0}")]
    TruncatedConfig(usize),
    #[error("threshold must be positive, got raw value {0}")]
    NonPositiveThreshold(i32),
}

/// Byte length of a serialized [`NeuronConfig`]: threshold (i32 LE), decay code, reset code.
pub const CONFIG_BYTES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeuronConfig {
    threshold: Potential,
    pub decay: DecaySelector,
    pub reset: ResetMode,
}

impl NeuronConfig {
    pub fn new(threshold: Potential, decay: DecaySelector, reset: ResetMode) -> Result<Self, NeuronConfigError> {
        if threshold.raw() <= 0 {
            return Err(NeuronConfigError::NonPositiveThreshold(threshold.raw()));
        }
        Ok(NeuronConfig { threshold, decay, reset })
    }

    /// Configuration of a slot nothing has been loaded into; it can never fire.
    pub const fn unconfigured() -> Self {
        NeuronConfig { threshold: Potential::MAX, decay: DecaySelector::D500, reset: ResetMode::Zero }
    }

    pub fn threshold(&self) -> Potential {
        self.threshold
    }

    pub fn to_bytes(&self) -> [u8; CONFIG_BYTES] {
        let t = self.threshold.to_le_bytes();
        [t[0], t[1], t[2], t[3], self.decay.code(), self.reset.code()]
    }

    /// Parses the flit layout produced by [`NeuronConfig::to_bytes`].
    pub fn configure(flits: &[u8]) -> Result<Self, NeuronConfigError> {
        if flits.len() < CONFIG_BYTES {
            return Err(NeuronConfigError::TruncatedConfig(flits.len()));
        }
        let threshold = Potential::from_le_bytes([flits[0], flits[1], flits[2], flits[3]]);
        let decay = DecaySelector::from_code(flits[4])?;
        let reset = ResetMode::from_code(flits[5])?;
        NeuronConfig::new(threshold, decay, reset)
    }
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self::unconfigured()
    }
}

/// Shift-based decay: returns the retained membrane.
pub fn decay(membrane: Potential, sel: DecaySelector) -> Potential {
    match sel {
        DecaySelector::D500 => membrane.shr(1),
        DecaySelector::D250 => membrane.shr(2),
        DecaySelector::D125 => membrane.shr(3),
        DecaySelector::D750 => membrane.shr(1).saturating_add(membrane.shr(2)),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct NeuronState {
    pub membrane: Potential,
    pub accumulator: Potential,
    pub fired: bool,
}

impl NeuronState {
    #[inline]
    pub fn accumulate(&mut self, weight: Potential) {
        self.accumulator = self.accumulator.saturating_add(weight);
    }

    /// Timestep boundary update with the shift-based decay unit.
    pub fn step(&mut self, cfg: &NeuronConfig) -> bool {
        let decayed = decay(self.membrane, cfg.decay);
        self.integrate_and_fire(decayed, cfg.threshold, cfg.reset)
    }

    /// Threshold/reset stage shared by both decay units.
    pub fn integrate_and_fire(&mut self, decayed: Potential, threshold: Potential, reset: ResetMode) -> bool {
        let v = decayed.saturating_add(self.accumulator);
        self.fired = v >= threshold;
        self.membrane = if self.fired {
            match reset {
                ResetMode::Hold => v,
                ResetMode::Zero => Potential::ZERO,
                ResetMode::Subtract => v.saturating_sub(threshold),
            }
        } else {
            v
        };
        self.accumulator = Potential::ZERO;
        self.fired
    }
}
