use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use dtb_core::metrics::{
    csv_string, host_model_gflops, sota_footprint_table, RunRecord, RunStatus, RUN_CSV_HEADER,
};
use dtb_core::planner::plan_with_tile_size;
use dtb_core::presets::PresetTable;
use dtb_core::{
    jacobi_reference, plan_device_tiles, Comparison, DeviceModel, DtbError, Engine, Grid2D,
    KernelConfig, Rect, Result, StencilWeights, TilingPlan, TrafficReport,
};

use crate::{DeviceArgs, DomainArgs, Format, PlanArgs, RunArgs, SweepArgs, TableArgs, WeightArgs};
use crate::{EXIT_FAILURE, EXIT_INFEASIBLE};

const ELEM_BYTES: usize = 8;
const DEFAULT_ALPHA: f64 = 0.2;

fn preset_table(path: Option<&Path>) -> Result<PresetTable> {
    match path {
        Some(p) => PresetTable::load(p),
        None => Ok(PresetTable::builtin()),
    }
}

fn device(args: &DeviceArgs) -> Result<DeviceModel> {
    if let Some(capacity) = args.capacity {
        let workers = args.workers.unwrap_or(1);
        return DeviceModel::new("custom", workers, capacity);
    }
    let base = preset_table(args.presets.as_deref())?.device(&args.device)?;
    match args.workers {
        Some(w) => DeviceModel::new(base.name, w, base.scratchpad_bytes_per_worker),
        None => Ok(base),
    }
}

fn weights(args: &WeightArgs) -> Result<StencilWeights> {
    match &args.weights {
        Some(w) => match w.as_slice() {
            &[w, e, s, c, n] => StencilWeights::new(w, e, s, c, n),
            _ => Err(DtbError::InvalidArgument(format!(
                "--weights takes exactly five values w,e,s,c,n, got {}",
                w.len()
            ))),
        },
        None => StencilWeights::diffusive(args.alpha.unwrap_or(DEFAULT_ALPHA)),
    }
}

fn engine(threads: Option<usize>) -> Result<Engine> {
    match threads {
        Some(0) => Err(DtbError::InvalidArgument("--threads must be at least 1".into())),
        Some(t) => Ok(Engine::new(t)),
        None => Ok(Engine::default()),
    }
}

fn make_plan(
    domain: (usize, usize),
    device: &DeviceModel,
    depth: usize,
    tile: Option<(usize, usize)>,
) -> Result<TilingPlan> {
    match tile {
        Some(size) => plan_with_tile_size(domain, device, depth, ELEM_BYTES, size),
        None => plan_device_tiles(domain, device, depth, ELEM_BYTES),
    }
}

fn required_dims(args: &DomainArgs) -> Result<(usize, usize)> {
    match (args.nx, args.ny) {
        (Some(nx), Some(ny)) => Ok((nx, ny)),
        _ => Err(DtbError::InvalidArgument("--nx and --ny are required".into())),
    }
}

fn check_steps(depth: usize, steps: usize) -> Result<()> {
    if depth == 0 || steps == 0 || !steps.is_multiple_of(depth) {
        return Err(DtbError::InvalidArgument(format!(
            "--steps {steps} must be a positive multiple of --t {depth}"
        )));
    }
    Ok(())
}

/// Centered `valid` region inside an `nx x ny` interior.
fn pruned_region(domain: (usize, usize), valid: Option<(usize, usize)>) -> Result<Rect> {
    let (nx, ny) = domain;
    let Some((w, h)) = valid else {
        return Ok(Rect::new(0, 0, nx, ny));
    };
    if w == 0 || h == 0 || w > nx || h > ny {
        return Err(DtbError::InvalidArgument(format!(
            "--pruned {w}x{h} does not fit the {nx}x{ny} domain"
        )));
    }
    Ok(Rect::new((nx - w) / 2, (ny - h) / 2, w, h))
}

fn compare_region(a: &Grid2D, b: &Grid2D, region: &Rect) -> Result<Comparison> {
    a.extract(region)?.compare(&b.extract(region)?)
}

struct Problem {
    grid: Grid2D,
    weights: StencilWeights,
    device: DeviceModel,
    depth: usize,
    steps: usize,
    valid: Rect,
    cfg: KernelConfig,
}

fn problem(args: &RunArgs) -> Result<Problem> {
    let depth = args.domain.depth;
    let steps = args.steps.unwrap_or(depth);
    check_steps(depth, steps)?;
    let cfg = KernelConfig::new(args.ilp)?;
    let weights = weights(&args.weights)?;
    let device = device(&args.domain.device)?;
    let grid = match &args.input {
        Some(path) => {
            let grid = Grid2D::read_from(BufReader::new(File::open(path)?))?;
            let dims = (grid.nx(), grid.ny());
            if args.domain.nx.is_some_and(|n| n != dims.0) || args.domain.ny.is_some_and(|n| n != dims.1) {
                return Err(DtbError::InvalidArgument(format!(
                    "input grid is {}x{}, which contradicts --nx/--ny",
                    dims.0, dims.1
                )));
            }
            grid
        }
        None => {
            let (nx, ny) = required_dims(&args.domain)?;
            Grid2D::random(nx, ny, args.seed)?
        }
    };
    let valid = pruned_region((grid.nx(), grid.ny()), args.pruned)?;
    Ok(Problem {
        grid,
        weights,
        device,
        depth,
        steps,
        valid,
        cfg,
    })
}

#[allow(clippy::too_many_arguments)]
fn record(
    status: RunStatus,
    device: &DeviceModel,
    domain: (usize, usize),
    valid: Rect,
    depth: usize,
    steps: usize,
    ilp: usize,
    seed: u64,
    tiles: usize,
    cmp: Option<&Comparison>,
    report: &TrafficReport,
    wall: f64,
) -> RunRecord {
    RunRecord {
        status,
        device: device.name.clone(),
        workers: device.workers,
        scratchpad_bytes_per_worker: device.scratchpad_bytes_per_worker,
        nx: domain.0,
        ny: domain.1,
        valid_nx: valid.width,
        valid_ny: valid.height,
        depth,
        total_steps: steps,
        ilp,
        seed,
        tiles,
        bit_equal: cmp.map(|c| c.bit_equal),
        max_abs_diff: cmp.map(|c| c.max_abs_diff),
        global_load_cells: report.global_load_cells,
        global_store_cells: report.global_store_cells,
        halo_exchanged_cells: report.halo_exchanged_cells,
        redundant_compute_cells: report.redundant_compute_cells,
        useful_compute_cells: report.useful_compute_cells,
        scratchpad_peak_bytes: report.scratchpad_peak_bytes,
        elem_bytes: ELEM_BYTES as u64,
        wall_time_s: wall,
        host_model_gflops: host_model_gflops(valid.area() as u64, steps as u64, wall),
    }
}

fn emit<T: Serialize>(format: Format, rows: &[T], csv_header: Option<&str>) -> Result<()> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match format {
        Format::Csv => {
            let text = csv_string(rows)?;
            if text.is_empty() {
                if let Some(header) = csv_header {
                    writeln!(out, "{header}")?;
                }
            }
            out.write_all(text.as_bytes())?;
        }
        Format::Json => {
            let value = serde_json::to_value(rows).map_err(|e| DtbError::Parse(e.to_string()))?;
            writeln!(out, "{value:#}")?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Executed {
    record: RunRecord,
    result: Grid2D,
}

fn execute_plan(p: &Problem, plan: &TilingPlan, engine: &Engine, seed: u64, check: bool) -> Result<Executed> {
    let domain = (p.grid.nx(), p.grid.ny());
    let start = Instant::now();
    let (result, report) = engine.run(&p.grid, &p.weights, p.steps, plan, p.cfg)?;
    let wall = start.elapsed().as_secs_f64();
    let cmp = if check {
        let reference = jacobi_reference(&p.grid, &p.weights, p.steps);
        Some(compare_region(&result, &reference, &p.valid)?)
    } else {
        None
    };
    let status = match &cmp {
        Some(c) if !c.bit_equal => RunStatus::Mismatch,
        _ => RunStatus::Ok,
    };
    let record = record(
        status,
        &p.device,
        domain,
        p.valid,
        p.depth,
        p.steps,
        p.cfg.ilp(),
        seed,
        plan.tiles.len(),
        cmp.as_ref(),
        &report,
        wall,
    );
    Ok(Executed { record, result })
}

fn run_problem(args: &RunArgs, check: bool) -> Result<Executed> {
    let p = problem(args)?;
    let engine = engine(args.threads)?;
    let plan = make_plan((p.grid.nx(), p.grid.ny()), &p.device, p.depth, args.domain.tile)?;
    let done = execute_plan(&p, &plan, &engine, args.seed, check)?;
    if let Some(path) = &args.output {
        let mut out = BufWriter::new(File::create(path)?);
        done.result.write_to(&mut out)?;
        out.flush()?;
    }
    Ok(done)
}

pub fn verify(args: &RunArgs) -> Result<u8> {
    let done = run_problem(args, true)?;
    let r = &done.record;
    let bit_equal = r.bit_equal.unwrap_or(false);
    match args.format {
        Format::Csv => {
            let mut out = io::stdout().lock();
            writeln!(
                out,
                "device={} tiles={} depth={} steps={} valid={}x{}",
                r.device, r.tiles, r.depth, r.total_steps, r.valid_nx, r.valid_ny
            )?;
            writeln!(out, "bit_equal={bit_equal}")?;
            writeln!(out, "max_abs_diff={}", r.max_abs_diff.unwrap_or(f64::NAN))?;
        }
        Format::Json => emit(Format::Json, std::slice::from_ref(r), None)?,
    }
    Ok(if bit_equal { 0 } else { EXIT_FAILURE })
}

pub fn run(args: &RunArgs) -> Result<u8> {
    let done = run_problem(args, args.check)?;
    emit(args.format, std::slice::from_ref(&done.record), Some(RUN_CSV_HEADER))?;
    Ok(if done.record.status == RunStatus::Mismatch {
        EXIT_FAILURE
    } else {
        0
    })
}

fn plan_for(args: &DomainArgs) -> Result<TilingPlan> {
    let domain = required_dims(args)?;
    let device = device(&args.device)?;
    make_plan(domain, &device, args.depth, args.tile)
}

pub fn plan(args: &DomainArgs) -> Result<u8> {
    let plan = plan_for(args)?;
    let subtiles: Vec<_> = (0..plan.tiles.len()).map(|i| plan.subtiles(i)).collect();
    let value = json!({ "plan": plan, "subtiles": subtiles });
    writeln!(io::stdout().lock(), "{value:#}")?;
    Ok(0)
}

pub fn footprints(args: &PlanArgs) -> Result<u8> {
    let plan = plan_for(&args.domain)?;
    emit(args.format, &sota_footprint_table(&plan), None)?;
    Ok(0)
}

pub fn presets(args: &TableArgs) -> Result<u8> {
    let table = preset_table(args.presets.as_deref())?;
    emit(args.format, &table.rows(), None)?;
    Ok(0)
}

pub fn sweep(args: &SweepArgs) -> Result<u8> {
    if args.depths.is_empty() || args.devices.is_empty() || args.sizes.is_empty() {
        return Err(DtbError::InvalidArgument("sweep lists must not be empty".into()));
    }
    if args.blocks == 0 {
        return Err(DtbError::InvalidArgument("--blocks must be at least 1".into()));
    }
    let table = preset_table(args.presets.as_deref())?;
    let weights = weights(&args.weights)?;
    let cfg = KernelConfig::new(args.ilp)?;
    let engine = engine(args.threads)?;
    for &depth in &args.depths {
        check_steps(depth, depth * args.blocks)?;
    }
    let devices = args
        .devices
        .iter()
        .map(|name| table.device(name))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &(nx, ny) in &args.sizes {
        let grid = Grid2D::random(nx, ny, args.seed)?;
        let mut reference: Option<(usize, Grid2D)> = None;
        for device in &devices {
            for &depth in &args.depths {
                let steps = depth * args.blocks;
                let p = Problem {
                    grid: grid.clone(),
                    weights,
                    device: device.clone(),
                    depth,
                    steps,
                    valid: Rect::new(0, 0, nx, ny),
                    cfg,
                };
                let plan = match make_plan((nx, ny), device, depth, None) {
                    Ok(plan) => plan,
                    Err(DtbError::Infeasible { .. }) => {
                        rows.push(record(
                            RunStatus::Infeasible,
                            device,
                            (nx, ny),
                            p.valid,
                            depth,
                            steps,
                            cfg.ilp(),
                            args.seed,
                            0,
                            None,
                            &TrafficReport::default(),
                            0.0,
                        ));
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let mut done = execute_plan(&p, &plan, &engine, args.seed, false)?;
                if args.check {
                    if reference.as_ref().is_none_or(|(s, _)| *s != steps) {
                        reference = Some((steps, jacobi_reference(&grid, &weights, steps)));
                    }
                    let (_, expected) = reference.as_ref().expect("reference just computed");
                    let cmp = done.result.compare(expected)?;
                    done.record.status = if cmp.bit_equal { RunStatus::Ok } else { RunStatus::Mismatch };
                    done.record.bit_equal = Some(cmp.bit_equal);
                    done.record.max_abs_diff = Some(cmp.max_abs_diff);
                }
                rows.push(done.record);
            }
        }
    }
    emit(args.format, &rows, Some(RUN_CSV_HEADER))?;
    if rows.iter().any(|r| r.status == RunStatus::Mismatch) {
        Ok(EXIT_FAILURE)
    } else if rows.iter().any(|r| r.status == RunStatus::Ok) {
        Ok(0)
    } else {
        Ok(EXIT_INFEASIBLE)
    }
}
