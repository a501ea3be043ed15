//! Global-memory traffic: closed-form models, run records and CSV output.
//!
//! The naive baseline charges one load and one store per cell per step. The
//! blocked model charges each tile's load region once and its interior once
//! per time block, which is where the roughly `1/T` reduction comes from.

use std::io::Write;

use serde::Serialize;

use crate::engine::superstep_states;
use crate::error::{DtbError, Result};
use crate::planner::TilingPlan;
use crate::presets::{format_bytes, SizeFormat, SOTA_FOOTPRINTS};

/// FLOPs per cell update: five multiplies and four adds.
pub const FLOPS_PER_UPDATE: u64 = 9;

/// Cell counts of a run, either modeled or counted by the engine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TrafficReport {
    pub global_load_cells: u64,
    pub global_store_cells: u64,
    pub halo_exchanged_cells: u64,
    pub redundant_compute_cells: u64,
    pub useful_compute_cells: u64,
    pub scratchpad_peak_bytes: u64,
    pub elem_bytes: u64,
}

impl TrafficReport {
    pub fn global_cells(&self) -> u64 {
        self.global_load_cells + self.global_store_cells
    }

    pub fn global_bytes(&self) -> u64 {
        self.global_cells() * self.elem_bytes
    }

    pub fn halo_exchanged_bytes(&self) -> u64 {
        self.halo_exchanged_cells * self.elem_bytes
    }
}

/// One read and one write per cell per step, neighbour reuse assumed free.
pub fn model_naive_traffic(domain: (usize, usize), steps: usize, elem_bytes: usize) -> TrafficReport {
    let cells = (domain.0 * domain.1 * steps) as u64;
    TrafficReport {
        global_load_cells: cells,
        global_store_cells: cells,
        useful_compute_cells: cells,
        elem_bytes: elem_bytes as u64,
        ..TrafficReport::default()
    }
}

/// What the engine will count when running `plan` for `total_steps`,
/// derived from plan geometry alone.
pub fn model_dtb_traffic(plan: &TilingPlan, total_steps: usize) -> Result<TrafficReport> {
    if total_steps == 0 || !total_steps.is_multiple_of(plan.depth) {
        return Err(DtbError::InvalidArgument(format!(
            "total steps {total_steps} is not a positive multiple of depth {}",
            plan.depth
        )));
    }
    let blocks = (total_steps / plan.depth) as u64;
    let mut per_block = TrafficReport::default();
    for tile in &plan.tiles {
        let load = tile.load_region;
        per_block.global_load_cells += load.area() as u64;
        per_block.global_store_cells += tile.interior.area() as u64;
        let active_workers = plan.device.workers.min(load.width) as u64;
        per_block.halo_exchanged_cells +=
            2 * active_workers.saturating_sub(1) * load.height as u64 * plan.depth as u64;
        let computed: u64 = superstep_states(tile, plan.domain)
            .iter()
            .map(|s| s.active_region.area() as u64)
            .sum();
        per_block.redundant_compute_cells += computed - (plan.depth * tile.interior.area()) as u64;
    }
    Ok(TrafficReport {
        global_load_cells: per_block.global_load_cells * blocks,
        global_store_cells: per_block.global_store_cells * blocks,
        halo_exchanged_cells: per_block.halo_exchanged_cells * blocks,
        redundant_compute_cells: per_block.redundant_compute_cells * blocks,
        useful_compute_cells: (plan.domain.0 * plan.domain.1 * total_steps) as u64,
        scratchpad_peak_bytes: plan.footprint_bytes,
        elem_bytes: plan.elem_bytes as u64,
    })
}

/// Scratchpad usage of the reference schemes and of this scheme on `plan`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FootprintRow {
    pub name: String,
    pub scratchpad_bytes: u64,
    pub scratchpad: String,
}

pub fn sota_footprint_table(plan: &TilingPlan) -> Vec<FootprintRow> {
    let mut rows: Vec<FootprintRow> = SOTA_FOOTPRINTS
        .iter()
        .map(|(name, cap)| FootprintRow {
            name: (*name).to_string(),
            scratchpad_bytes: cap.bytes,
            scratchpad: cap.to_string(),
        })
        .collect();
    let used = plan.footprint_bytes * plan.device.workers as u64;
    rows.push(FootprintRow {
        name: format!("DTB ({}, T={})", plan.device.name, plan.depth),
        scratchpad_bytes: used,
        scratchpad: format_bytes(used, SizeFormat::MB2),
    });
    rows
}

/// Throughput over the valid domain, labeled as a host-side model figure.
pub fn host_model_gflops(valid_cells: u64, steps: u64, seconds: f64) -> f64 {
    if seconds <= 0.0 {
        return 0.0;
    }
    (valid_cells * steps * FLOPS_PER_UPDATE) as f64 / seconds / 1e9
}

/// Outcome of one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Mismatch,
    Infeasible,
}

/// One CSV row per run. Column order is part of the output format.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub status: RunStatus,
    pub device: String,
    pub workers: usize,
    pub scratchpad_bytes_per_worker: u64,
    pub nx: usize,
    pub ny: usize,
    pub valid_nx: usize,
    pub valid_ny: usize,
    pub depth: usize,
    pub total_steps: usize,
    pub ilp: usize,
    pub seed: u64,
    pub tiles: usize,
    pub bit_equal: Option<bool>,
    pub max_abs_diff: Option<f64>,
    pub global_load_cells: u64,
    pub global_store_cells: u64,
    pub halo_exchanged_cells: u64,
    pub redundant_compute_cells: u64,
    pub useful_compute_cells: u64,
    pub scratchpad_peak_bytes: u64,
    pub elem_bytes: u64,
    pub wall_time_s: f64,
    pub host_model_gflops: f64,
}

pub const RUN_CSV_HEADER: &str = "status,device,workers,scratchpad_bytes_per_worker,nx,ny,valid_nx,valid_ny,\
depth,total_steps,ilp,seed,tiles,bit_equal,max_abs_diff,global_load_cells,global_store_cells,\
halo_exchanged_cells,redundant_compute_cells,useful_compute_cells,scratchpad_peak_bytes,elem_bytes,\
wall_time_s,host_model_gflops";

/// Write `rows` with a header line.
pub fn write_csv<T: Serialize>(out: impl Write, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| DtbError::Parse(format!("csv: {e}")))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| DtbError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{plan_device_tiles, plan_with_tile_size, DeviceModel};

    #[test]
    fn naive_model_values() {
        let r = model_naive_traffic((8192, 8192), 4, 8);
        assert_eq!(r.global_load_cells, 268_435_456);
        assert_eq!(r.global_store_cells, 268_435_456);
        assert_eq!(r.global_load_cells * 8, 2_147_483_648);
        let one = model_naive_traffic((1, 1), 1, 8);
        assert_eq!((one.global_load_cells, one.global_store_cells), (1, 1));
        assert_eq!(model_naive_traffic((7, 9), 0, 8).global_cells(), 0);
    }

    #[test]
    fn single_tile_depth_one_equals_naive() {
        let device = DeviceModel::new("big", 4, 1 << 20).unwrap();
        let plan = plan_device_tiles((40, 30), &device, 1, 8).unwrap();
        assert_eq!(plan.tiles.len(), 1);
        let dtb = model_dtb_traffic(&plan, 1).unwrap();
        let naive = model_naive_traffic((40, 30), 1, 8);
        assert_eq!(dtb.global_load_cells, naive.global_load_cells);
        assert_eq!(dtb.global_store_cells, naive.global_store_cells);
        assert_eq!(dtb.redundant_compute_cells, 0);
        assert!(model_dtb_traffic(&plan, 0).is_err());
    }

    #[test]
    fn traffic_per_update_falls_with_depth() {
        let device = DeviceModel::new("d", 8, 1 << 20).unwrap();
        let ratios: Vec<f64> = [1, 2, 4, 8]
            .iter()
            .map(|&t| {
                let plan = plan_with_tile_size((512, 512), &device, t, 8, (128, 128)).unwrap();
                let r = model_dtb_traffic(&plan, 8).unwrap();
                r.global_cells() as f64 / r.useful_compute_cells as f64
            })
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    }

    #[test]
    fn redundancy_matches_cell_counting() {
        let device = DeviceModel::new("d", 3, 1 << 20).unwrap();
        let plan = plan_with_tile_size((50, 40), &device, 3, 8, (12, 9)).unwrap();
        let mut brute = 0u64;
        for tile in &plan.tiles {
            for t in 1..=3 {
                let active = tile.active_region(t, plan.domain);
                for y in 0..40 {
                    for x in 0..50 {
                        if active.contains(x, y) && !tile.interior.contains(x, y) {
                            brute += 1;
                        }
                    }
                }
            }
        }
        let r = model_dtb_traffic(&plan, 3).unwrap();
        assert_eq!(r.redundant_compute_cells, brute);
        // 2T * perimeter / area, with slack for the corner terms
        let (w, h) = (12.0, 9.0);
        let bound = 2.0 * 3.0 * (2.0 * (w + h)) / (w * h) + (2.0 * 3.0 / 9.0_f64).powi(2) * 4.0;
        assert!((r.redundant_compute_cells as f64 / r.useful_compute_cells as f64) <= bound);
    }

    #[test]
    fn gflops_normalization() {
        assert_eq!(host_model_gflops(512 * 512, 8, 0.0), 0.0);
        let g = host_model_gflops(1_000_000, 10, 1.0);
        assert!((g - 0.09).abs() < 1e-12);
    }

    #[test]
    fn run_csv_header_is_stable() {
        let record = RunRecord {
            status: RunStatus::Ok,
            device: "a100".into(),
            workers: 108,
            scratchpad_bytes_per_worker: 167_936,
            nx: 8,
            ny: 8,
            valid_nx: 8,
            valid_ny: 8,
            depth: 2,
            total_steps: 4,
            ilp: 4,
            seed: 1,
            tiles: 1,
            bit_equal: Some(true),
            max_abs_diff: Some(0.0),
            global_load_cells: 128,
            global_store_cells: 128,
            halo_exchanged_cells: 0,
            redundant_compute_cells: 0,
            useful_compute_cells: 256,
            scratchpad_peak_bytes: 480,
            elem_bytes: 8,
            wall_time_s: 0.5,
            host_model_gflops: 0.0,
        };
        let text = csv_string(&[record]).unwrap();
        assert_eq!(text.lines().next().unwrap(), RUN_CSV_HEADER);
        assert!(text.lines().nth(1).unwrap().starts_with("ok,a100,108,167936,"));
    }
}
