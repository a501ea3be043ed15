//! Serial tiling plans sized to the modeled scratchpad.
//!
//! A device tile is the region all workers hold together in their
//! scratchpads. It is loaded with a temporal halo of `depth` cells on each
//! side (clipped at the domain edge) and advanced `depth` steps. Only its
//! interior is written back. Tiles are processed one after another in
//! row-major order; inside a tile each worker owns a contiguous x-slice.
//!
//! Every worker buffer is one slice of the load region plus a one-cell rim
//! on all four sides: the x rim receives exchanged halo columns, the y rim
//! holds ghost rows at the domain edge. The footprint model therefore
//! charges `load_height + 2` rows.

use serde::{Deserialize, Serialize};

use crate::error::{DtbError, Result};
use crate::grid::Rect;

/// Worker count and per-worker scratchpad capacity of a modeled device.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub name: String,
    pub workers: usize,
    pub scratchpad_bytes_per_worker: u64,
}

impl DeviceModel {
    pub fn new(name: impl Into<String>, workers: usize, scratchpad_bytes_per_worker: u64) -> Result<Self> {
        if workers == 0 {
            return Err(DtbError::InvalidArgument("device needs at least one worker".into()));
        }
        if scratchpad_bytes_per_worker == 0 {
            return Err(DtbError::InvalidArgument("scratchpad capacity must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            workers,
            scratchpad_bytes_per_worker,
        })
    }

    /// Split a device-wide capacity evenly, rounding down per worker.
    pub fn from_total(name: impl Into<String>, workers: usize, total_bytes: u64) -> Result<Self> {
        if workers == 0 {
            return Err(DtbError::InvalidArgument("device needs at least one worker".into()));
        }
        Self::new(name, workers, total_bytes / workers as u64)
    }

    pub fn total_bytes(&self) -> u64 {
        self.workers as u64 * self.scratchpad_bytes_per_worker
    }
}

/// Per-worker bytes for double-buffered x-slices of a `width x height`
/// buffer region: `2 * (ceil(width / workers) + 2) * height * elem_bytes`.
pub fn scratchpad_footprint(width: usize, height: usize, elem_bytes: usize, workers: usize) -> u64 {
    let slice = width.div_ceil(workers.max(1)) + 2;
    2 * slice as u64 * height as u64 * elem_bytes as u64
}

/// Footprint of a tile whose load region is `load_w x load_h`.
pub fn tile_footprint(load_w: usize, load_h: usize, elem_bytes: usize, workers: usize) -> u64 {
    scratchpad_footprint(load_w, load_h + 2, elem_bytes, workers)
}

/// One serially processed tile.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceTile {
    pub index: usize,
    /// Cells this tile writes back after `halo` steps.
    pub interior: Rect,
    /// Temporal halo per side; equals the plan depth.
    pub halo: usize,
    /// `interior` dilated by `halo`, clipped to the domain.
    pub load_region: Rect,
}

impl DeviceTile {
    /// Cells that hold valid values after `t` steps inside the tile: the load
    /// region eroded by `t` on every side not lying on the domain boundary.
    /// Boundary sides are backed by the frozen ghost ring and never shrink.
    pub fn active_region(&self, t: usize, domain: (usize, usize)) -> Rect {
        let l = &self.load_region;
        let left = if l.x0 > 0 { t } else { 0 };
        let right = if l.x1() < domain.0 { t } else { 0 };
        let top = if l.y0 > 0 { t } else { 0 };
        let bottom = if l.y1() < domain.1 { t } else { 0 };
        let width = l.width.saturating_sub(left + right);
        let height = l.height.saturating_sub(top + bottom);
        Rect::new(l.x0 + left, l.y0 + top, width, height)
    }
}

/// One worker's x-slice of a tile's load region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTile {
    pub owner: usize,
    pub cols: Rect,
    /// Leftmost owned column, posted to the left neighbour every superstep.
    pub stage_left: Option<Rect>,
    /// Rightmost owned column, posted to the right neighbour.
    pub stage_right: Option<Rect>,
}

/// Balanced x-partition of the tile's load region over the device workers.
/// Widths differ by at most one, larger slices first; surplus workers get
/// zero-width slices and idle.
pub fn partition_subtiles(tile: &DeviceTile, device: &DeviceModel) -> Vec<SubTile> {
    let load = tile.load_region;
    let workers = device.workers.max(1);
    let (base, extra) = (load.width / workers, load.width % workers);
    let mut x = load.x0;
    (0..workers)
        .map(|owner| {
            let width = base + usize::from(owner < extra);
            let cols = Rect::new(x, load.y0, width, load.height);
            x += width;
            let strip = |col: usize| Rect::new(col, load.y0, 1, load.height);
            SubTile {
                owner,
                cols,
                stage_left: (width > 0).then(|| strip(cols.x0)),
                stage_right: (width > 0).then(|| strip(cols.x1() - 1)),
            }
        })
        .collect()
}

/// Ordered tiles for a domain, plus the parameters they were sized for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub domain: (usize, usize),
    pub depth: usize,
    pub elem_bytes: usize,
    pub device: DeviceModel,
    /// Nominal interior size; edge tiles may be smaller.
    pub tile_size: (usize, usize),
    pub tiles: Vec<DeviceTile>,
    /// Peak per-worker bytes over all tiles.
    pub footprint_bytes: u64,
}

impl TilingPlan {
    pub fn tile_footprint(&self, tile: &DeviceTile) -> u64 {
        tile_footprint(
            tile.load_region.width,
            tile.load_region.height,
            self.elem_bytes,
            self.device.workers,
        )
    }

    pub fn subtiles(&self, tile: usize) -> Vec<SubTile> {
        partition_subtiles(&self.tiles[tile], &self.device)
    }

    /// Structural checks the engine relies on: halos, load regions,
    /// coverage count and the capacity bound.
    pub fn validate(&self) -> Result<()> {
        let (nx, ny) = self.domain;
        let mut covered = 0usize;
        for tile in &self.tiles {
            if tile.halo != self.depth {
                return Err(DtbError::InvalidArgument(format!(
                    "tile {} has halo {} but plan depth is {}",
                    tile.index, tile.halo, self.depth
                )));
            }
            if tile.load_region != tile.interior.dilate_clipped(tile.halo, nx, ny) {
                return Err(DtbError::InvalidArgument(format!(
                    "tile {} load region does not match its interior",
                    tile.index
                )));
            }
            if self.tile_footprint(tile) > self.device.scratchpad_bytes_per_worker {
                return Err(DtbError::CapacityExceeded {
                    worker: 0,
                    required_bytes: self.tile_footprint(tile),
                    capacity_bytes: self.device.scratchpad_bytes_per_worker,
                });
            }
            covered += tile.interior.area();
        }
        if covered != nx * ny || self.footprint_bytes > self.device.scratchpad_bytes_per_worker {
            return Err(DtbError::InvalidArgument(format!(
                "plan covers {covered} cells of a {nx}x{ny} domain"
            )));
        }
        Ok(())
    }
}

fn check_request(domain: (usize, usize), depth: usize, elem_bytes: usize) -> Result<()> {
    if domain.0 == 0 || domain.1 == 0 {
        return Err(DtbError::InvalidArgument(format!(
            "domain must be at least 1x1, got {}x{}",
            domain.0, domain.1
        )));
    }
    if depth == 0 {
        return Err(DtbError::InvalidArgument("temporal depth must be at least 1".into()));
    }
    if elem_bytes == 0 {
        return Err(DtbError::InvalidArgument("element size must be positive".into()));
    }
    Ok(())
}

fn build(
    domain: (usize, usize),
    device: &DeviceModel,
    depth: usize,
    elem_bytes: usize,
    tile_size: (usize, usize),
) -> TilingPlan {
    let (nx, ny) = domain;
    let (tw, th) = tile_size;
    let mut tiles = Vec::new();
    for y0 in (0..ny).step_by(th) {
        for x0 in (0..nx).step_by(tw) {
            let interior = Rect::new(x0, y0, tw.min(nx - x0), th.min(ny - y0));
            tiles.push(DeviceTile {
                index: tiles.len(),
                interior,
                halo: depth,
                load_region: interior.dilate_clipped(depth, nx, ny),
            });
        }
    }
    let footprint_bytes = tiles
        .iter()
        .map(|t| tile_footprint(t.load_region.width, t.load_region.height, elem_bytes, device.workers))
        .max()
        .unwrap_or(0);
    TilingPlan {
        domain,
        depth,
        elem_bytes,
        device: device.clone(),
        tile_size,
        tiles,
        footprint_bytes,
    }
}

/// Tallest interior height for tiles whose load width is `load_w`, if any.
fn max_interior_height(load_w: usize, ny: usize, device: &DeviceModel, depth: usize, elem_bytes: usize) -> Option<usize> {
    let per_row = scratchpad_footprint(load_w, 1, elem_bytes, device.workers);
    let buffer_rows = (device.scratchpad_bytes_per_worker / per_row) as usize;
    let load_h = buffer_rows.checked_sub(2)?;
    if load_h >= ny {
        Some(ny)
    } else {
        load_h.checked_sub(2 * depth).filter(|h| *h >= 1)
    }
}

/// Plan the fewest tiles whose footprint fits the device.
///
/// Full-width row bands are preferred; the x extent is split only when that
/// yields fewer tiles (or when a full-width band does not fit at all).
pub fn plan_device_tiles(
    domain: (usize, usize),
    device: &DeviceModel,
    depth: usize,
    elem_bytes: usize,
) -> Result<TilingPlan> {
    check_request(domain, depth, elem_bytes)?;
    let (nx, ny) = domain;
    let mut best: Option<(usize, (usize, usize))> = None;
    let mut last_width = 0;
    for columns in 1..=nx {
        let width = nx.div_ceil(columns);
        if width == last_width {
            continue;
        }
        last_width = width;
        let load_w = (width + 2 * depth).min(nx);
        let Some(height) = max_interior_height(load_w, ny, device, depth, elem_bytes) else {
            continue;
        };
        let count = nx.div_ceil(width) * ny.div_ceil(height);
        if best.is_none_or(|(c, _)| count < c) {
            best = Some((count, (width, height)));
        }
    }
    match best {
        Some((_, size)) => Ok(build(domain, device, depth, elem_bytes, size)),
        None => Err(DtbError::Infeasible {
            tile: (1, 1),
            depth,
            required_bytes: tile_footprint(
                (1 + 2 * depth).min(nx),
                (1 + 2 * depth).min(ny),
                elem_bytes,
                device.workers,
            ),
            available_bytes: device.scratchpad_bytes_per_worker,
        }),
    }
}

/// Plan with a caller-chosen interior tile size instead of the largest one.
pub fn plan_with_tile_size(
    domain: (usize, usize),
    device: &DeviceModel,
    depth: usize,
    elem_bytes: usize,
    tile_size: (usize, usize),
) -> Result<TilingPlan> {
    check_request(domain, depth, elem_bytes)?;
    if tile_size.0 == 0 || tile_size.1 == 0 {
        return Err(DtbError::InvalidArgument("tile size must be at least 1x1".into()));
    }
    let plan = build(domain, device, depth, elem_bytes, tile_size);
    if plan.footprint_bytes > device.scratchpad_bytes_per_worker {
        return Err(DtbError::Infeasible {
            tile: tile_size,
            depth,
            required_bytes: plan.footprint_bytes,
            available_bytes: device.scratchpad_bytes_per_worker,
        });
    }
    Ok(plan)
}
