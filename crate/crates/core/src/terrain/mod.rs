//! Procedural terrain tiles with ten difficulty levels and the per-agent
//! curriculum.
//!
//! Every family produces an 8 m x 8 m height field at 0.10 m resolution by
//! default. Cells are either steppable (`support = true`) or void; void cells
//! carry a sentinel depth well below the tile base so map scans report an
//! obvious drop. Difficulty parameters interpolate linearly from the easiest
//! (level 0) to the hardest (level 9) endpoint of a configured ramp; the
//! hardest endpoints respect the kinematic caps of the robots and the 0.10 m
//! map-resolution rule for steppable features.

mod curriculum;
mod families;
mod gridfile;
mod scan;

pub use curriculum::{CurriculumState, Outcome};
pub use gridfile::{read_grid_file, write_grid_file};
pub use scan::{sample_map_scan, BasePose};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Height a void cell reports, relative to the tile base at elevation zero.
pub const VOID_DEPTH: f64 = -1.5;

/// All terrain families across both robots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TerrainFamily {
    Stairs,
    Pits,
    Rough,
    Pallets,
    Gaps,
    GridStones,
    Beams,
    PentagonStones,
    RoughHills,
    Rings,
    GridStonesSmall,
    NarrowBeams,
    SingleColumnStones,
    NarrowPallets,
    ConsecutiveGaps,
    NarrowStairs,
}

/// Which robot a terrain set belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotProfile {
    Quadruped,
    Biped,
}

impl TerrainFamily {
    pub const ALL: [TerrainFamily; 16] = [
        TerrainFamily::Stairs,
        TerrainFamily::Pits,
        TerrainFamily::Rough,
        TerrainFamily::Pallets,
        TerrainFamily::Gaps,
        TerrainFamily::GridStones,
        TerrainFamily::Beams,
        TerrainFamily::PentagonStones,
        TerrainFamily::RoughHills,
        TerrainFamily::Rings,
        TerrainFamily::GridStonesSmall,
        TerrainFamily::NarrowBeams,
        TerrainFamily::SingleColumnStones,
        TerrainFamily::NarrowPallets,
        TerrainFamily::ConsecutiveGaps,
        TerrainFamily::NarrowStairs,
    ];

    /// Stage-1 terrain families for a robot.
    pub fn base_set(profile: RobotProfile) -> &'static [TerrainFamily] {
        match profile {
            RobotProfile::Quadruped => &[
                TerrainFamily::Stairs,
                TerrainFamily::Pits,
                TerrainFamily::Rough,
                TerrainFamily::Pallets,
                TerrainFamily::Gaps,
                TerrainFamily::GridStones,
            ],
            RobotProfile::Biped => &[
                TerrainFamily::Stairs,
                TerrainFamily::Pits,
                TerrainFamily::Rough,
                TerrainFamily::Pallets,
                TerrainFamily::Gaps,
                TerrainFamily::GridStones,
                TerrainFamily::Beams,
            ],
        }
    }

    /// Families added for stage-2 fine-tuning.
    pub fn finetune_set(profile: RobotProfile) -> &'static [TerrainFamily] {
        match profile {
            RobotProfile::Quadruped => &[
                TerrainFamily::PentagonStones,
                TerrainFamily::RoughHills,
                TerrainFamily::Rings,
                TerrainFamily::Beams,
                TerrainFamily::GridStonesSmall,
                TerrainFamily::NarrowBeams,
            ],
            RobotProfile::Biped => &[
                TerrainFamily::PentagonStones,
                TerrainFamily::SingleColumnStones,
                TerrainFamily::NarrowPallets,
                TerrainFamily::ConsecutiveGaps,
                TerrainFamily::NarrowStairs,
            ],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TerrainFamily::Stairs => "stairs",
            TerrainFamily::Pits => "pits",
            TerrainFamily::Rough => "rough",
            TerrainFamily::Pallets => "pallets",
            TerrainFamily::Gaps => "gaps",
            TerrainFamily::GridStones => "grid_stones",
            TerrainFamily::Beams => "beams",
            TerrainFamily::PentagonStones => "pentagon_stones",
            TerrainFamily::RoughHills => "rough_hills",
            TerrainFamily::Rings => "rings",
            TerrainFamily::GridStonesSmall => "grid_stones_small",
            TerrainFamily::NarrowBeams => "narrow_beams",
            TerrainFamily::SingleColumnStones => "single_column_stones",
            TerrainFamily::NarrowPallets => "narrow_pallets",
            TerrainFamily::ConsecutiveGaps => "consecutive_gaps",
            TerrainFamily::NarrowStairs => "narrow_stairs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        TerrainFamily::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::config("terrain.family", format!("unknown terrain family `{s}`")))
    }

    pub fn index(self) -> usize {
        TerrainFamily::ALL.iter().position(|&f| f == self).unwrap()
    }
}

/// What to generate: family, difficulty level 0-9 and a seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TerrainSpec {
    pub family: TerrainFamily,
    pub level: u8,
    pub seed: u64,
}

impl TerrainSpec {
    pub fn new(family: TerrainFamily, level: u8, seed: u64) -> Result<Self> {
        if level > 9 {
            return Err(Error::config("terrain.level", format!("level {level} outside 0..=9")));
        }
        Ok(TerrainSpec { family, level, seed })
    }
}

/// Linear difficulty ramp from the level-0 to the level-9 endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub easy: f64,
    pub hard: f64,
}

impl Ramp {
    pub const fn new(easy: f64, hard: f64) -> Self {
        Ramp { easy, hard }
    }

    /// Parameter value at a level, linearly interpolated.
    pub fn at(&self, level: u8) -> f64 {
        let t = f64::from(level.min(9)) / 9.0;
        self.easy + (self.hard - self.easy) * t
    }
}

macro_rules! ramp_table {
    ($($field:ident : $easy:expr, $hard:expr;)*) => {
        /// Per-family difficulty ramps in meters (slopes in radians).
        /// These endpoints are tunable configuration, not ground truth.
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct TerrainRamps {
            $(pub $field: Ramp,)*
        }

        impl Default for TerrainRamps {
            fn default() -> Self {
                TerrainRamps {
                    $($field: Ramp::new($easy, $hard),)*
                }
            }
        }
    };
}

ramp_table! {
    stairs_rise: 0.05, 0.20;
    pits_depth: 0.10, 0.50;
    rough_amplitude: 0.00, 0.08;
    pallets_gap: 0.10, 0.40;
    pallets_height: 0.00, 0.15;
    gaps_width: 0.10, 0.60;
    grid_stones_width: 0.45, 0.20;
    grid_stones_spacing: 0.05, 0.30;
    grid_stones_height: 0.00, 0.10;
    beams_width: 0.35, 0.20;
    pentagon_radius: 0.35, 0.18;
    rough_hills_slope: 0.05, 0.30;
    rings_rise: 0.05, 0.20;
    grid_stones_small_width: 0.30, 0.12;
    grid_stones_small_spacing: 0.05, 0.25;
    narrow_beams_width: 0.30, 0.15;
    single_column_spacing: 0.20, 0.50;
    single_column_height: 0.00, 0.15;
    narrow_pallets_width: 0.80, 0.35;
    consecutive_gaps_width: 0.10, 0.50;
    narrow_stairs_width: 1.20, 0.45;
}

impl TerrainRamps {
    /// The parameter that governs a family's difficulty, with the direction
    /// it moves in as levels increase.
    pub fn governing(&self, family: TerrainFamily) -> (&'static str, Ramp) {
        match family {
            TerrainFamily::Stairs => ("stairs_rise", self.stairs_rise),
            TerrainFamily::Pits => ("pits_depth", self.pits_depth),
            TerrainFamily::Rough => ("rough_amplitude", self.rough_amplitude),
            TerrainFamily::Pallets => ("pallets_gap", self.pallets_gap),
            TerrainFamily::Gaps => ("gaps_width", self.gaps_width),
            TerrainFamily::GridStones => ("grid_stones_spacing", self.grid_stones_spacing),
            TerrainFamily::Beams => ("beams_width", self.beams_width),
            TerrainFamily::PentagonStones => ("pentagon_radius", self.pentagon_radius),
            TerrainFamily::RoughHills => ("rough_hills_slope", self.rough_hills_slope),
            TerrainFamily::Rings => ("rings_rise", self.rings_rise),
            TerrainFamily::GridStonesSmall => {
                ("grid_stones_small_width", self.grid_stones_small_width)
            }
            TerrainFamily::NarrowBeams => ("narrow_beams_width", self.narrow_beams_width),
            TerrainFamily::SingleColumnStones => {
                ("single_column_spacing", self.single_column_spacing)
            }
            TerrainFamily::NarrowPallets => ("narrow_pallets_width", self.narrow_pallets_width),
            TerrainFamily::ConsecutiveGaps => {
                ("consecutive_gaps_width", self.consecutive_gaps_width)
            }
            TerrainFamily::NarrowStairs => ("narrow_stairs_width", self.narrow_stairs_width),
        }
    }
}

/// Terrain generation configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainGenConfig {
    /// Meters per cell.
    pub resolution: f64,
    /// Tile side length in meters.
    pub tile_size: f64,
    pub ramps: TerrainRamps,
}

impl Default for TerrainGenConfig {
    fn default() -> Self {
        TerrainGenConfig {
            resolution: 0.10,
            tile_size: 8.0,
            ramps: TerrainRamps::default(),
        }
    }
}

impl TerrainGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) {
            return Err(Error::config("terrain.resolution", "must be positive"));
        }
        if self.tile_size < 2.0 {
            return Err(Error::config("terrain.tile_size", "tile must be at least 2 m"));
        }
        Ok(())
    }
}

/// Axis-aligned tile boundary in world meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Border {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Border {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

/// 2.5-D terrain grid: per-cell elevation and steppability.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightField {
    /// Meters per cell.
    pub resolution: f64,
    /// Cells along the world x axis.
    pub length: usize,
    /// Cells along the world y axis.
    pub width: usize,
    /// Row-major [length x width] elevations in meters.
    pub heights: Vec<f64>,
    /// Row-major steppability; void cells are `false`.
    pub support: Vec<bool>,
    /// Tile boundary; walking out of it counts as solving the tile.
    pub border: Border,
}

impl HeightField {
    /// Cell index for a world position, clamped to the field.
    pub fn cell_at(&self, x: f64, y: f64) -> (usize, usize) {
        let fx = (x - self.border.min_x) / self.resolution;
        let fy = (y - self.border.min_y) / self.resolution;
        let i = fx.floor().clamp(0.0, (self.length - 1) as f64) as usize;
        let j = fy.floor().clamp(0.0, (self.width - 1) as f64) as usize;
        (i, j)
    }

    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let (i, j) = self.cell_at(x, y);
        self.heights[i * self.width + j]
    }

    pub fn support_at(&self, x: f64, y: f64) -> bool {
        let (i, j) = self.cell_at(x, y);
        self.support[i * self.width + j]
    }

    /// World coordinates of a cell center.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.border.min_x + (i as f64 + 0.5) * self.resolution,
            self.border.min_y + (j as f64 + 0.5) * self.resolution,
        )
    }
}

/// Generate a terrain tile. Deterministic: the same spec and configuration
/// produce a bitwise-identical field.
pub fn generate(spec: &TerrainSpec, cfg: &TerrainGenConfig) -> Result<HeightField> {
    if spec.level > 9 {
        return Err(Error::config("terrain.level", format!("level {} outside 0..=9", spec.level)));
    }
    cfg.validate()?;
    families::generate(spec, cfg)
}
