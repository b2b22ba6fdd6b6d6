//! Named model-size presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PresetName {
    XXS,
    XS,
    S,
    M,
    L,
}

impl PresetName {
    pub const ALL: [PresetName; 5] = [Self::XXS, Self::XS, Self::S, Self::M, Self::L];
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown size preset {s:?}")))
    }
}

/// Network widths shared by the world model, actor and critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizePreset {
    pub name: PresetName,
    /// Recurrent state width.
    pub deter: usize,
    /// MLP hidden width.
    pub hidden: usize,
    pub groups: usize,
    pub classes: usize,
    /// Hidden layers per MLP.
    pub depth: usize,
}

impl SizePreset {
    pub fn get(name: PresetName) -> Self {
        let (deter, hidden, groups, classes, depth) = match name {
            PresetName::XXS => (64, 64, 8, 8, 1),
            PresetName::XS => (128, 128, 16, 16, 2),
            PresetName::S => (256, 256, 32, 32, 2),
            PresetName::M => (512, 512, 32, 32, 3),
            PresetName::L => (1024, 1024, 32, 32, 4),
        };
        Self {
            name,
            deter,
            hidden,
            groups,
            classes,
            depth,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.groups * self.classes
    }

    /// Width of the model state `[h, z]`.
    pub fn feature_dim(&self) -> usize {
        self.deter + self.latent_dim()
    }
}
