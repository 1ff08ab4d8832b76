//! Desk-scale pointmass, rope and cloth simulators.
//!
//! The workspace is the unit square on the table plane. Rendering is an
//! orthographic top-down rasterization with `x` along image columns and `y`
//! along image rows.

mod action;
mod env;
mod params;
mod physics;
mod render;
mod state;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use action::PickPlaceAction;
pub use env::Env;
pub use params::{rgb_distance, sample_render_params, JitterConfig, RenderParams};
pub use physics::{kinetic_energy, max_rope_gap, SimConfig, StepTrace};
pub use render::{coverage, normalize_into, render, segment, BinaryMask, ImageObs, IMAGE_SIZES, SEGMENT_THRESHOLD};
pub use state::EnvState;

use crate::error::Error;

pub const ROPE_PARTICLES: usize = 25;
pub const CLOTH_SIDE: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Pointmass,
    Rope,
    Cloth,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Pointmass, EnvKind::Rope, EnvKind::Cloth];

    pub fn particle_count(self) -> usize {
        match self {
            EnvKind::Pointmass => 1,
            EnvKind::Rope => ROPE_PARTICLES,
            EnvKind::Cloth => CLOTH_SIDE * CLOTH_SIDE,
        }
    }

    /// Total action dimension: pick (if any) plus delta.
    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::Pointmass => 2,
            EnvKind::Rope => 4,
            EnvKind::Cloth => 5,
        }
    }

    pub fn delta_dim(self) -> usize {
        match self {
            EnvKind::Cloth => 3,
            _ => 2,
        }
    }

    pub fn has_pick(self) -> bool {
        self != EnvKind::Pointmass
    }

    pub fn code(self) -> u8 {
        match self {
            EnvKind::Pointmass => 0,
            EnvKind::Rope => 1,
            EnvKind::Cloth => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pointmass => "pointmass",
            EnvKind::Rope => "rope",
            EnvKind::Cloth => "cloth",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown env `{s}` (pointmass|rope|cloth)")))
    }
}
