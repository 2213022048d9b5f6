//! Per-family tile generators.
//!
//! Generators work on a square cell grid through `TileBuilder`. Width-like
//! features are rasterized with ceiling quantization so the realized feature
//! is never narrower than the requested parameter; spacings quantize with
//! floor so the easiest levels can close gaps entirely. Every tile keeps a
//! flat, fully supported spawn platform around the center.

use super::{Border, HeightField, TerrainFamily, TerrainGenConfig, TerrainSpec, VOID_DEPTH};
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Half-extent of the guaranteed spawn platform, meters.
const SPAWN_HALF: f64 = 0.8;

struct TileBuilder {
    res: f64,
    n: usize,
    half: f64,
    heights: Vec<f64>,
    support: Vec<bool>,
}

impl TileBuilder {
    fn new(cfg: &TerrainGenConfig) -> Self {
        let n = (cfg.tile_size / cfg.resolution).round() as usize;
        TileBuilder {
            res: cfg.resolution,
            n,
            half: cfg.tile_size / 2.0,
            heights: vec![0.0; n * n],
            support: vec![true; n * n],
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// World x of cell-center row `i`.
    fn x_of(&self, i: usize) -> f64 {
        -self.half + (i as f64 + 0.5) * self.res
    }

    fn y_of(&self, j: usize) -> f64 {
        -self.half + (j as f64 + 0.5) * self.res
    }

    fn fill_void(&mut self) {
        self.heights.fill(VOID_DEPTH);
        self.support.fill(false);
    }

    fn set(&mut self, i: usize, j: usize, h: f64) {
        let k = self.idx(i, j);
        self.heights[k] = h;
        self.support[k] = true;
    }

    fn set_void(&mut self, i: usize, j: usize) {
        let k = self.idx(i, j);
        self.heights[k] = VOID_DEPTH;
        self.support[k] = false;
    }

    /// Supported rectangle given in world meters (inclusive cell coverage by
    /// cell centers).
    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, h: f64) {
        for i in 0..self.n {
            let x = self.x_of(i);
            if x < x0 || x > x1 {
                continue;
            }
            for j in 0..self.n {
                let y = self.y_of(j);
                if y >= y0 && y <= y1 {
                    self.set(i, j, h);
                }
            }
        }
    }

    fn void_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        for i in 0..self.n {
            let x = self.x_of(i);
            if x < x0 || x > x1 {
                continue;
            }
            for j in 0..self.n {
                let y = self.y_of(j);
                if y >= y0 && y <= y1 {
                    self.set_void(i, j);
                }
            }
        }
    }

    /// Force the central spawn platform flat and supported.
    fn spawn_platform(&mut self) {
        self.rect(-SPAWN_HALF, -SPAWN_HALF, SPAWN_HALF, SPAWN_HALF, 0.0);
    }

    /// Remove support cells that are 1 cell wide in both axes so every
    /// steppable feature spans more than one map cell.
    fn erode_slivers(&mut self) {
        loop {
            let mut removed = false;
            for i in 0..self.n {
                for j in 0..self.n {
                    let k = self.idx(i, j);
                    if !self.support[k] {
                        continue;
                    }
                    let x_run = (i > 0 && self.support[self.idx(i - 1, j)])
                        || (i + 1 < self.n && self.support[self.idx(i + 1, j)]);
                    let y_run = (j > 0 && self.support[self.idx(i, j - 1)])
                        || (j + 1 < self.n && self.support[self.idx(i, j + 1)]);
                    if !x_run && !y_run {
                        self.support[k] = false;
                        self.heights[k] = VOID_DEPTH;
                        removed = true;
                    }
                }
            }
            if !removed {
                break;
            }
        }
    }

    fn finish(self, spec: &TerrainSpec) -> HeightField {
        let _ = spec;
        HeightField {
            resolution: self.res,
            length: self.n,
            width: self.n,
            heights: self.heights,
            support: self.support,
            border: Border {
                min_x: -self.half,
                min_y: -self.half,
                max_x: self.half,
                max_y: self.half,
            },
        }
    }
}

fn tile_rng(spec: &TerrainSpec) -> ChaCha8Rng {
    let mix = spec
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((spec.family.index() as u64) << 8)
        .wrapping_add(u64::from(spec.level));
    ChaCha8Rng::seed_from_u64(mix)
}

pub(super) fn generate(spec: &TerrainSpec, cfg: &TerrainGenConfig) -> Result<HeightField> {
    let mut rng = tile_rng(spec);
    let mut b = TileBuilder::new(cfg);
    let r = &cfg.ramps;
    let level = spec.level;

    match spec.family {
        TerrainFamily::Stairs => stairs(&mut b, r.stairs_rise.at(level)),
        TerrainFamily::NarrowStairs => {
            let strip = r.narrow_stairs_width.at(level);
            b.fill_void();
            b.rect(-b.half, -strip / 2.0, b.half, strip / 2.0, 0.0);
            stairs_banded(&mut b, r.stairs_rise.at(level), strip / 2.0);
        }
        TerrainFamily::Pits => pits(&mut b, &mut rng, r.pits_depth.at(level)),
        TerrainFamily::Rough => rough(&mut b, &mut rng, r.rough_amplitude.at(level), 0.0),
        TerrainFamily::RoughHills => {
            let slope = r.rough_hills_slope.at(level);
            rough(&mut b, &mut rng, 0.05f64.min(r.rough_amplitude.at(level).max(0.02)), slope);
        }
        TerrainFamily::Pallets => pallets(
            &mut b,
            &mut rng,
            1.2,
            0.8,
            r.pallets_gap.at(level),
            r.pallets_height.at(level),
        ),
        TerrainFamily::NarrowPallets => {
            let w = r.narrow_pallets_width.at(level);
            pallets(&mut b, &mut rng, 1.2, w, r.pallets_gap.at(level), r.pallets_height.at(level));
        }
        TerrainFamily::Gaps => gaps(&mut b, r.gaps_width.at(level), 2.0, 1),
        TerrainFamily::ConsecutiveGaps => {
            let w = r.consecutive_gaps_width.at(level);
            gaps(&mut b, w, 0.8, 3);
        }
        TerrainFamily::GridStones => grid_stones(
            &mut b,
            &mut rng,
            r.grid_stones_width.at(level),
            r.grid_stones_spacing.at(level),
            r.grid_stones_height.at(level),
        ),
        TerrainFamily::GridStonesSmall => grid_stones(
            &mut b,
            &mut rng,
            r.grid_stones_small_width.at(level),
            r.grid_stones_small_spacing.at(level),
            0.03,
        ),
        TerrainFamily::Beams => beams(&mut b, r.beams_width.at(level), 8),
        TerrainFamily::NarrowBeams => beams(&mut b, r.narrow_beams_width.at(level), 4),
        TerrainFamily::PentagonStones => pentagon_stones(
            &mut b,
            &mut rng,
            r.pentagon_radius.at(level),
            r.grid_stones_height.at(level),
        ),
        TerrainFamily::SingleColumnStones => single_column(
            &mut b,
            &mut rng,
            r.single_column_spacing.at(level),
            r.single_column_height.at(level),
        ),
        TerrainFamily::Rings => rings(&mut b, &mut rng, r.rings_rise.at(level)),
    }

    b.spawn_platform();
    b.erode_slivers();
    Ok(b.finish(spec))
}

/// Pyramid stairs: square rings of steps rising outward from the platform.
fn stairs(b: &mut TileBuilder, rise: f64) {
    let tread = 0.30;
    for i in 0..b.n {
        for j in 0..b.n {
            let d = b.x_of(i).abs().max(b.y_of(j).abs());
            if d > SPAWN_HALF {
                let step = ((d - SPAWN_HALF) / tread).floor();
                b.set(i, j, rise * step);
            }
        }
    }
}

/// Stairs along x only, for the narrow-stairs strip.
fn stairs_banded(b: &mut TileBuilder, rise: f64, strip_half: f64) {
    let tread = 0.30;
    for i in 0..b.n {
        let d = b.x_of(i).abs();
        if d <= SPAWN_HALF {
            continue;
        }
        let step = ((d - SPAWN_HALF) / tread).floor();
        for j in 0..b.n {
            if b.y_of(j).abs() <= strip_half {
                b.set(i, j, rise * step);
            }
        }
    }
}

/// Random rectangular stages, raised or sunken by the pit depth.
fn pits(b: &mut TileBuilder, rng: &mut ChaCha8Rng, depth: f64) {
    let cell = 1.6;
    let per_side = (b.half * 2.0 / cell).ceil() as i64;
    for sx in 0..per_side {
        for sy in 0..per_side {
            let h = if rng.gen_bool(0.5) { 0.0 } else { -depth };
            let x0 = -b.half + sx as f64 * cell;
            let y0 = -b.half + sy as f64 * cell;
            b.rect(x0, y0, x0 + cell, y0 + cell, h);
        }
    }
}

/// Uniform height noise, optionally on an inclined plane.
fn rough(b: &mut TileBuilder, rng: &mut ChaCha8Rng, amplitude: f64, slope: f64) {
    let dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let (cx, cy) = (dir.cos(), dir.sin());
    for i in 0..b.n {
        for j in 0..b.n {
            let noise = if amplitude > 0.0 {
                rng.gen_range(-amplitude..amplitude)
            } else {
                0.0
            };
            let plane = slope * (b.x_of(i) * cx + b.y_of(j) * cy);
            b.set(i, j, plane + noise);
        }
    }
}

/// Rectangular pallets with random heights separated by void gaps.
fn pallets(
    b: &mut TileBuilder,
    rng: &mut ChaCha8Rng,
    len: f64,
    wid: f64,
    gap: f64,
    height: f64,
) {
    b.fill_void();
    let step_x = len + gap;
    let step_y = wid + gap;
    let mut x = -b.half;
    while x < b.half {
        let mut y = -b.half;
        while y < b.half {
            let h = if height > 0.0 { rng.gen_range(0.0..height) } else { 0.0 };
            let jx = rng.gen_range(-0.05..0.05);
            let jy = rng.gen_range(-0.05..0.05);
            b.rect(x + jx, y + jy, x + jx + len, y + jy + wid, h);
            y += step_y;
        }
        x += step_x;
    }
}

/// Void strips across the walking direction. `count` gaps per group.
fn gaps(b: &mut TileBuilder, width: f64, platform: f64, count: usize) {
    // gap width quantized up to whole cells so the realized gap is never
    // narrower than requested
    let gap_cells = (width / b.res - 1e-9).ceil().max(1.0);
    let gap_w = gap_cells * b.res;
    let mut x = SPAWN_HALF + 0.4;
    while x < b.half - gap_w {
        for _ in 0..count {
            if x >= b.half - gap_w {
                break;
            }
            b.void_rect(x, -b.half, x + gap_w - 1e-9, b.half);
            let mirrored = -x - gap_w;
            b.void_rect(mirrored, -b.half, mirrored + gap_w - 1e-9, b.half);
            x += gap_w + platform;
        }
        x += 1.2;
    }
}

/// Square stepping stones on a jittered grid over void.
fn grid_stones(
    b: &mut TileBuilder,
    rng: &mut ChaCha8Rng,
    stone_width: f64,
    spacing: f64,
    height: f64,
) {
    b.fill_void();
    let stone_cells = (stone_width / b.res - 1e-9).ceil().max(1.0);
    let stone_w = stone_cells * b.res;
    let gap_cells = (spacing / b.res).floor().max(0.0);
    let gap = gap_cells * b.res;
    let pitch = stone_w + gap;
    let count = (b.half * 2.0 / pitch).ceil() as i64;
    for sx in 0..count {
        for sy in 0..count {
            let x0 = -b.half + sx as f64 * pitch;
            let y0 = -b.half + sy as f64 * pitch;
            let h = if height > 0.0 {
                rng.gen_range(-height..height)
            } else {
                0.0
            };
            b.rect(x0, y0, x0 + stone_w - 1e-9, y0 + stone_w - 1e-9, h);
        }
    }
}

/// Beams radiating outward from the central platform to the border.
fn beams(b: &mut TileBuilder, width: f64, count: usize) {
    b.fill_void();
    let w_cells = (width / b.res - 1e-9).ceil().max(2.0);
    let w = w_cells * b.res;
    for k in 0..count {
        let angle = std::f64::consts::TAU * k as f64 / count as f64;
        let (dx, dy) = (angle.cos(), angle.sin());
        for i in 0..b.n {
            for j in 0..b.n {
                let (x, y) = (b.x_of(i), b.y_of(j));
                let along = x * dx + y * dy;
                let across = (-x * dy + y * dx).abs();
                if along >= 0.0 && across <= w / 2.0 {
                    b.set(i, j, 0.0);
                }
            }
        }
    }
}

/// Stones with pentagon-shaped tops on a jittered grid over void.
fn pentagon_stones(b: &mut TileBuilder, rng: &mut ChaCha8Rng, radius: f64, height: f64) {
    b.fill_void();
    let pitch = radius * 2.0 + 0.15;
    let count = (b.half * 2.0 / pitch).ceil() as i64;
    for sx in 0..count {
        for sy in 0..count {
            let cx = -b.half + (sx as f64 + 0.5) * pitch + rng.gen_range(-0.05..0.05);
            let cy = -b.half + (sy as f64 + 0.5) * pitch + rng.gen_range(-0.05..0.05);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let h = if height > 0.0 {
                rng.gen_range(-height..height)
            } else {
                0.0
            };
            // pentagon as intersection of five half-planes through the
            // vertices' edges
            let verts: Vec<(f64, f64)> = (0..5)
                .map(|k| {
                    let a = phase + std::f64::consts::TAU * k as f64 / 5.0;
                    (cx + radius * a.cos(), cy + radius * a.sin())
                })
                .collect();
            let lo_i = ((cx - radius - b.half.min(radius)) / b.res) as i64;
            let _ = lo_i;
            for i in 0..b.n {
                let x = b.x_of(i);
                if (x - cx).abs() > radius {
                    continue;
                }
                for j in 0..b.n {
                    let y = b.y_of(j);
                    if (y - cy).abs() > radius {
                        continue;
                    }
                    if point_in_polygon(x, y, &verts) {
                        b.set(i, j, h);
                    }
                }
            }
        }
    }
}

fn point_in_polygon(x: f64, y: f64, verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = verts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// One fore-aft line of stones with height differences over void.
fn single_column(b: &mut TileBuilder, rng: &mut ChaCha8Rng, spacing: f64, height: f64) {
    b.fill_void();
    let stone = 0.30;
    let stone_cells = (stone / b.res - 1e-9).ceil();
    let stone_w = stone_cells * b.res;
    let gap_cells = (spacing / b.res).round().max(1.0);
    let pitch = stone_w + gap_cells * b.res;
    let mut x = SPAWN_HALF + 0.2;
    while x < b.half {
        for dir in [1.0, -1.0] {
            let x0 = dir * x - if dir < 0.0 { stone_w } else { 0.0 };
            let h = if height > 0.0 {
                rng.gen_range(-height..height)
            } else {
                0.0
            };
            let jy = rng.gen_range(-0.1..0.1);
            b.rect(x0, jy - stone_w / 2.0, x0 + stone_w - 1e-9, jy + stone_w / 2.0, h);
        }
        x += pitch;
    }
}

/// Concentric ring steps around the platform.
fn rings(b: &mut TileBuilder, rng: &mut ChaCha8Rng, rise: f64) {
    let ring_w = 0.4;
    let levels: Vec<f64> = (0..24)
        .map(|_| if rng.gen_bool(0.5) { rise } else { -rise })
        .collect();
    for i in 0..b.n {
        for j in 0..b.n {
            let d = (b.x_of(i).powi(2) + b.y_of(j).powi(2)).sqrt();
            if d > SPAWN_HALF {
                let ring = ((d - SPAWN_HALF) / ring_w).floor() as usize;
                let mut h = 0.0;
                for &dh in levels.iter().take(ring + 1) {
                    h += dh;
                }
                b.set(i, j, h.max(-0.6).min(0.6));
            }
        }
    }
}
