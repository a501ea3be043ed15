//! Deep temporal blocking executor.
//!
//! For every time block of `depth` steps, tiles are visited one after
//! another. Each logical worker loads its x-slice of the tile's load region
//! into a private double buffer, then the workers run `depth` supersteps:
//!
//! 1. post the leftmost/rightmost owned columns to a staging strip,
//! 2. barrier,
//! 3. pull the neighbours' strips into the halo columns, update the slice of
//!    the active region, swap buffers,
//! 4. barrier.
//!
//! After the last superstep the tile interior is stored and the next tile
//! starts. Input and output grids swap roles between time blocks.
//!
//! Logical workers are multiplexed over however many physical threads the
//! engine is given. Results are bitwise independent of that number and of
//! the order tiles are visited within a block, since every tile only reads
//! the block's input grid.

use std::sync::{Mutex, RwLock};

use serde::Serialize;

use crate::barrier::{PoisonOnPanic, SuperstepBarrier};
use crate::error::{DtbError, Result};
use crate::grid::{Grid2D, Rect, StencilWeights};
use crate::kernel::{j2d5pt_update, KernelConfig, Window};
use crate::metrics::TrafficReport;
use crate::planner::{DeviceTile, SubTile, TilingPlan};

const ELEM_BYTES: usize = std::mem::size_of::<f64>();

const PEER_PANIC: &str = "another engine worker panicked";

/// Signaling NaN written into cells that must never be read.
pub const STALE_POISON: f64 = f64::from_bits(0x7FF4_0000_0000_0000);

/// Where a tile stands after `t` of its supersteps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SuperstepState {
    pub t: usize,
    pub active_region: Rect,
}

/// Active regions for supersteps `1..=depth` of `tile`.
pub fn superstep_states(tile: &DeviceTile, domain: (usize, usize)) -> Vec<SuperstepState> {
    (1..=tile.halo)
        .map(|t| SuperstepState {
            t,
            active_region: tile.active_region(t, domain),
        })
        .collect()
}

/// One worker's double-buffered scratchpad: its owned columns plus one rim
/// cell on every side, `(width + 2) x (load_height + 2)` cells per buffer.
#[derive(Clone, Debug)]
pub struct WorkerBuffers {
    front: Vec<f64>,
    back: Vec<f64>,
    pitch: usize,
    rows: usize,
    /// Global x of the first owned column and global y of the first load row.
    origin: (usize, usize),
    capacity_bytes: u64,
}

impl WorkerBuffers {
    fn bytes_for(sub: &SubTile) -> u64 {
        if sub.cols.width == 0 {
            0
        } else {
            (2 * (sub.cols.width + 2) * (sub.cols.height + 2) * ELEM_BYTES) as u64
        }
    }

    /// Fill from `src`: owned load cells are counted global loads, ghost
    /// cells are copied as boundary data, everything else is stale.
    pub fn load(src: &Grid2D, sub: &SubTile, poison_stale: bool) -> (Self, u64) {
        let (nx, ny) = (src.nx() as isize, src.ny() as isize);
        let cols = sub.cols;
        let pitch = cols.width + 2;
        let rows = cols.height + 2;
        let stale = if poison_stale { STALE_POISON } else { 0.0 };
        let mut front = vec![stale; pitch * rows];
        let mut loads = 0;
        for by in 0..rows {
            let gy = cols.y0 as isize + by as isize - 1;
            for bx in 0..pitch {
                let gx = cols.x0 as isize + bx as isize - 1;
                let owned = (1..=cols.width).contains(&bx) && (1..=cols.height).contains(&by);
                let in_ext = (-1..=nx).contains(&gx) && (-1..=ny).contains(&gy);
                let ghost = in_ext && (gx == -1 || gx == nx || gy == -1 || gy == ny);
                if owned {
                    front[by * pitch + bx] = src.get_ext(gx, gy);
                    loads += 1;
                } else if ghost {
                    front[by * pitch + bx] = src.get_ext(gx, gy);
                }
            }
        }
        let back = front.clone();
        let buffers = Self {
            front,
            back,
            pitch,
            rows,
            origin: (cols.x0, cols.y0),
            capacity_bytes: Self::bytes_for(sub),
        };
        (buffers, loads)
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn owned_width(&self) -> usize {
        self.pitch - 2
    }

    pub fn load_height(&self) -> usize {
        self.rows - 2
    }

    fn window(&self) -> Window {
        Window {
            base: self.pitch + 1,
            stride: self.pitch,
            width: self.owned_width(),
            height: self.load_height(),
        }
    }

    /// Current value at global interior coordinate `(x, y)`; `x` may be one
    /// column outside the owned slice to read a halo column.
    pub fn get(&self, x: isize, y: usize) -> f64 {
        let bx = (x - self.origin.0 as isize + 1) as usize;
        let by = y - self.origin.1 + 1;
        self.front[by * self.pitch + bx]
    }

    fn column(&self, bx: usize) -> Vec<f64> {
        (1..=self.load_height()).map(|by| self.front[by * self.pitch + bx]).collect()
    }

    fn set_column(&mut self, bx: usize, values: &[f64]) {
        for (k, v) in values.iter().enumerate() {
            self.front[(k + 1) * self.pitch + bx] = *v;
        }
    }

    fn post(&self, strips: &mut Strips) {
        strips.left = self.column(1);
        strips.right = self.column(self.owned_width());
    }

    /// Copy neighbour strips into the halo columns; returns cells received.
    fn pull(&mut self, left: Option<&Strips>, right: Option<&Strips>) -> u64 {
        let mut received = 0;
        if let Some(l) = left {
            self.set_column(0, &l.right);
            received += l.right.len() as u64;
        }
        if let Some(r) = right {
            let bx = self.owned_width() + 1;
            self.set_column(bx, &r.left);
            received += r.left.len() as u64;
        }
        received
    }

    /// One update of `active` (global coordinates) restricted to the owned
    /// columns, then swap. Returns the number of cells computed.
    fn step(&mut self, active: &Rect, weights: &StencilWeights, cfg: KernelConfig) -> u64 {
        let owned = Rect::new(self.origin.0, self.origin.1, self.owned_width(), self.load_height());
        let mine = active.intersect(&owned);
        if !mine.is_empty() {
            let local = Rect::new(mine.x0 - owned.x0, mine.y0 - owned.y0, mine.width, mine.height);
            let win = self.window();
            j2d5pt_update(&self.front, win, &mut self.back, win, weights, local, cfg)
                .expect("active slice stays inside the worker buffer");
        }
        std::mem::swap(&mut self.front, &mut self.back);
        mine.area() as u64
    }
}

/// Boundary columns a worker publishes for its neighbours.
#[derive(Clone, Debug, Default)]
struct Strips {
    left: Vec<f64>,
    right: Vec<f64>,
}

/// Single-threaded halo exchange across adjacent non-empty workers: every
/// worker's halo columns receive the neighbours' boundary columns. Returns
/// the number of cells moved.
pub fn exchange_halo(workers: &mut [WorkerBuffers]) -> u64 {
    let strips: Vec<Strips> = workers
        .iter()
        .map(|w| {
            let mut s = Strips::default();
            w.post(&mut s);
            s
        })
        .collect();
    let count = workers.len();
    workers
        .iter_mut()
        .enumerate()
        .map(|(i, w)| {
            let left = (i > 0).then(|| &strips[i - 1]);
            let right = (i + 1 < count).then(|| &strips[i + 1]);
            w.pull(left, right)
        })
        .sum()
}

/// Per-cell image of a tile region.
#[derive(Clone, Debug, PartialEq)]
pub struct TileImage {
    pub region: Rect,
    pub data: Vec<f64>,
}

impl TileImage {
    fn blank(region: Rect) -> Self {
        Self {
            region,
            data: vec![f64::NAN; region.area()],
        }
    }

    /// Value at global interior coordinate `(x, y)`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[(y - self.region.y0) * self.region.width + (x - self.region.x0)]
    }

    fn fill_from(&mut self, buffers: &WorkerBuffers) {
        let owned = Rect::new(buffers.origin.0, buffers.origin.1, buffers.owned_width(), buffers.load_height());
        let part = owned.intersect(&self.region);
        for y in part.y0..part.y1() {
            for x in part.x0..part.x1() {
                let i = (y - self.region.y0) * self.region.width + (x - self.region.x0);
                self.data[i] = buffers.get(x as isize, y);
            }
        }
    }
}

/// Buffer images of one tile over one time block.
#[derive(Clone, Debug, PartialEq)]
pub struct TileTrace {
    pub block: usize,
    pub tile: usize,
    /// Load region right after loading.
    pub load: TileImage,
    /// Load region after each superstep `1..=depth`.
    pub steps: Vec<TileImage>,
    /// Interior as written back.
    pub store: TileImage,
}

/// Output of a traced run.
#[derive(Clone, Debug)]
pub struct DtbTrace {
    pub result: Grid2D,
    pub report: TrafficReport,
    pub blocks: Vec<TileTrace>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Counters {
    loads: u64,
    stores: u64,
    halo: u64,
    computed: u64,
    peak_bytes: u64,
}

impl Counters {
    fn merge(self, other: Counters) -> Counters {
        Counters {
            loads: self.loads + other.loads,
            stores: self.stores + other.stores,
            halo: self.halo + other.halo,
            computed: self.computed + other.computed,
            peak_bytes: self.peak_bytes.max(other.peak_bytes),
        }
    }
}

struct Shared<'a> {
    plan: &'a TilingPlan,
    subtiles: Vec<Vec<SubTile>>,
    states: Vec<Vec<SuperstepState>>,
    weights: StencilWeights,
    cfg: KernelConfig,
    order: &'a [usize],
    blocks: usize,
    grids: [RwLock<Grid2D>; 2],
    staging: Vec<RwLock<Strips>>,
    barrier: SuperstepBarrier,
    probe: Option<(usize, Mutex<Vec<TileTrace>>)>,
    poison_stale: bool,
}

impl Shared<'_> {
    fn sync(&self) {
        if self.barrier.wait().is_err() {
            panic!("{PEER_PANIC}");
        }
    }

    fn traced(&self, tile: usize) -> Option<&Mutex<Vec<TileTrace>>> {
        self.probe.as_ref().filter(|(p, _)| *p == tile).map(|(_, sink)| sink)
    }

    /// Body of one physical thread; it drives logical workers
    /// `thread, thread + threads, ...` in lockstep with the others.
    fn drive(&self, thread: usize, threads: usize) -> Counters {
        let _guard = PoisonOnPanic(&self.barrier);
        let workers = self.plan.device.workers;
        let mine: Vec<usize> = (thread..workers).step_by(threads).collect();
        let mut counters = Counters::default();
        for block in 0..self.blocks {
            let (src, dst) = (&self.grids[block % 2], &self.grids[(block + 1) % 2]);
            for &tile_idx in self.order {
                let tile = &self.plan.tiles[tile_idx];
                let subs = &self.subtiles[tile_idx];
                let trace = self.traced(tile_idx);

                let mut buffers: Vec<Option<WorkerBuffers>> = {
                    let grid = src.read().expect("grid lock");
                    mine.iter()
                        .map(|&w| {
                            let sub = &subs[w];
                            (sub.cols.width > 0).then(|| {
                                let (buf, loads) = WorkerBuffers::load(&grid, sub, self.poison_stale);
                                debug_assert!(buf.capacity_bytes <= self.plan.device.scratchpad_bytes_per_worker);
                                counters.loads += loads;
                                counters.peak_bytes = counters.peak_bytes.max(buf.capacity_bytes);
                                buf
                            })
                        })
                        .collect()
                };
                if let Some(sink) = trace {
                    let mut sink = sink.lock().expect("trace lock");
                    for buf in buffers.iter().flatten() {
                        sink[block].load.fill_from(buf);
                    }
                }

                for state in &self.states[tile_idx] {
                    for (slot, &w) in buffers.iter().zip(&mine) {
                        if let Some(buf) = slot {
                            buf.post(&mut self.staging[w].write().expect("staging lock"));
                        }
                    }
                    self.sync();
                    for (slot, &w) in buffers.iter_mut().zip(&mine) {
                        let Some(buf) = slot else { continue };
                        let neighbour = |n: usize| {
                            (subs[n].cols.width > 0).then(|| self.staging[n].read().expect("staging lock"))
                        };
                        let left = w.checked_sub(1).and_then(neighbour);
                        let right = (w + 1 < workers).then(|| neighbour(w + 1)).flatten();
                        counters.halo += buf.pull(left.as_deref(), right.as_deref());
                        drop((left, right));
                        counters.computed += buf.step(&state.active_region, &self.weights, self.cfg);
                    }
                    if let Some(sink) = trace {
                        let mut sink = sink.lock().expect("trace lock");
                        for buf in buffers.iter().flatten() {
                            sink[block].steps[state.t - 1].fill_from(buf);
                        }
                    }
                    self.sync();
                }

                {
                    let mut grid = dst.write().expect("grid lock");
                    for buf in buffers.iter().flatten() {
                        let owned = Rect::new(buf.origin.0, buf.origin.1, buf.owned_width(), buf.load_height());
                        let part = tile.interior.intersect(&owned);
                        for y in part.y0..part.y1() {
                            for x in part.x0..part.x1() {
                                grid.set(x, y, buf.get(x as isize, y));
                            }
                        }
                        counters.stores += part.area() as u64;
                    }
                }
                if let Some(sink) = trace {
                    let mut sink = sink.lock().expect("trace lock");
                    for buf in buffers.iter_mut().flatten() {
                        sink[block].store.fill_from(buf);
                    }
                }
                self.sync();
            }
        }
        counters
    }
}

/// Runs tiling plans on a pool of physical threads.
#[derive(Clone, Debug)]
pub struct Engine {
    threads: usize,
    poison_stale: bool,
}

impl Default for Engine {
    fn default() -> Self {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self::new(threads)
    }
}

impl Engine {
    pub fn new(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
            poison_stale: false,
        }
    }

    /// Fill never-read cells with a signaling NaN so any out-of-bounds read
    /// shows up as a NaN in the result.
    pub fn poison_stale(mut self, on: bool) -> Self {
        self.poison_stale = on;
        self
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn run(
        &self,
        grid: &Grid2D,
        weights: &StencilWeights,
        total_steps: usize,
        plan: &TilingPlan,
        cfg: KernelConfig,
    ) -> Result<(Grid2D, TrafficReport)> {
        let order: Vec<usize> = (0..plan.tiles.len()).collect();
        self.execute(grid, weights, total_steps, plan, cfg, &order, None)
            .map(|(g, r, _)| (g, r))
    }

    /// Like [`Engine::run`] but visiting tiles in `order` within every time
    /// block. `order` must be a permutation of the tile indices.
    pub fn run_in_order(
        &self,
        grid: &Grid2D,
        weights: &StencilWeights,
        total_steps: usize,
        plan: &TilingPlan,
        cfg: KernelConfig,
        order: &[usize],
    ) -> Result<(Grid2D, TrafficReport)> {
        let mut seen = vec![false; plan.tiles.len()];
        for &i in order {
            match seen.get_mut(i) {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(DtbError::InvalidArgument(format!(
                        "tile order is not a permutation of 0..{}",
                        plan.tiles.len()
                    )))
                }
            }
        }
        if order.len() != plan.tiles.len() {
            return Err(DtbError::InvalidArgument("tile order is missing tiles".into()));
        }
        self.execute(grid, weights, total_steps, plan, cfg, order, None)
            .map(|(g, r, _)| (g, r))
    }

    /// Run while recording the buffers of tile `probe` in every time block.
    pub fn run_trace(
        &self,
        grid: &Grid2D,
        weights: &StencilWeights,
        total_steps: usize,
        plan: &TilingPlan,
        cfg: KernelConfig,
        probe: usize,
    ) -> Result<DtbTrace> {
        if probe >= plan.tiles.len() {
            return Err(DtbError::Range(format!(
                "probe tile {probe} out of range for a plan with {} tiles",
                plan.tiles.len()
            )));
        }
        let order: Vec<usize> = (0..plan.tiles.len()).collect();
        let (result, report, blocks) =
            self.execute(grid, weights, total_steps, plan, cfg, &order, Some(probe))?;
        Ok(DtbTrace {
            result,
            report,
            blocks,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn execute(
        &self,
        grid: &Grid2D,
        weights: &StencilWeights,
        total_steps: usize,
        plan: &TilingPlan,
        cfg: KernelConfig,
        order: &[usize],
        probe: Option<usize>,
    ) -> Result<(Grid2D, TrafficReport, Vec<TileTrace>)> {
        if plan.domain != (grid.nx(), grid.ny()) {
            return Err(DtbError::InvalidArgument(format!(
                "plan is for a {}x{} domain, grid is {}x{}",
                plan.domain.0,
                plan.domain.1,
                grid.nx(),
                grid.ny()
            )));
        }
        if plan.elem_bytes != ELEM_BYTES {
            return Err(DtbError::InvalidArgument(format!(
                "plan sized for {}-byte elements, engine stores {ELEM_BYTES}-byte doubles",
                plan.elem_bytes
            )));
        }
        if total_steps == 0 || !total_steps.is_multiple_of(plan.depth) {
            return Err(DtbError::InvalidArgument(format!(
                "total steps {total_steps} is not a positive multiple of depth {}",
                plan.depth
            )));
        }
        plan.validate()?;

        let subtiles: Vec<Vec<SubTile>> = (0..plan.tiles.len()).map(|i| plan.subtiles(i)).collect();
        // capacity is checked against the buffers that will actually be
        // allocated before any thread starts
        for subs in &subtiles {
            for sub in subs {
                let bytes = WorkerBuffers::bytes_for(sub);
                if bytes > plan.device.scratchpad_bytes_per_worker {
                    return Err(DtbError::CapacityExceeded {
                        worker: sub.owner,
                        required_bytes: bytes,
                        capacity_bytes: plan.device.scratchpad_bytes_per_worker,
                    });
                }
            }
        }

        let blocks = total_steps / plan.depth;
        let threads = self.threads.min(plan.device.workers).max(1);
        let probe = probe.map(|p| {
            let tile = &plan.tiles[p];
            let traces = (0..blocks)
                .map(|block| TileTrace {
                    block,
                    tile: p,
                    load: TileImage::blank(tile.load_region),
                    steps: vec![TileImage::blank(tile.load_region); plan.depth],
                    store: TileImage::blank(tile.interior),
                })
                .collect();
            (p, Mutex::new(traces))
        });
        let shared = Shared {
            plan,
            states: plan.tiles.iter().map(|t| superstep_states(t, plan.domain)).collect(),
            subtiles,
            weights: *weights,
            cfg,
            order,
            blocks,
            grids: [RwLock::new(grid.clone()), RwLock::new(grid.clone())],
            staging: (0..plan.device.workers).map(|_| RwLock::new(Strips::default())).collect(),
            barrier: SuperstepBarrier::new(threads),
            probe,
            poison_stale: self.poison_stale,
        };

        let counters = if threads == 1 {
            shared.drive(0, 1)
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        let shared = &shared;
                        scope.spawn(move || shared.drive(t, threads))
                    })
                    .collect();
                let mut merged = Counters::default();
                let mut failures = Vec::new();
                for h in handles {
                    match h.join() {
                        Ok(c) => merged = merged.merge(c),
                        Err(payload) => failures.push(payload),
                    }
                }
                if !failures.is_empty() {
                    let secondary = |p: &Box<dyn std::any::Any + Send>| {
                        p.downcast_ref::<String>().is_some_and(|m| m == PEER_PANIC)
                    };
                    let first = failures.iter().position(|p| !secondary(p)).unwrap_or(0);
                    std::panic::resume_unwind(failures.swap_remove(first));
                }
                merged
            })
        };

        let Shared { grids, probe, .. } = shared;
        let [a, b] = grids;
        let result = if blocks.is_multiple_of(2) { a } else { b }.into_inner().expect("grid lock");
        let useful = (grid.nx() * grid.ny() * total_steps) as u64;
        let report = TrafficReport {
            global_load_cells: counters.loads,
            global_store_cells: counters.stores,
            halo_exchanged_cells: counters.halo,
            redundant_compute_cells: counters.computed - useful,
            useful_compute_cells: useful,
            scratchpad_peak_bytes: counters.peak_bytes,
            elem_bytes: ELEM_BYTES as u64,
        };
        let traces = probe
            .map(|(_, sink)| sink.into_inner().expect("trace lock"))
            .unwrap_or_default();
        Ok((result, report, traces))
    }
}

/// Run `plan` for `total_steps` on the default engine.
pub fn run_dtb(
    grid: &Grid2D,
    weights: &StencilWeights,
    total_steps: usize,
    plan: &TilingPlan,
    cfg: KernelConfig,
) -> Result<(Grid2D, TrafficReport)> {
    Engine::default().run(grid, weights, total_steps, plan, cfg)
}

/// [`run_dtb`] recording the buffers of tile `probe` in every time block.
pub fn run_dtb_trace(
    grid: &Grid2D,
    weights: &StencilWeights,
    total_steps: usize,
    plan: &TilingPlan,
    cfg: KernelConfig,
    probe: usize,
) -> Result<DtbTrace> {
    Engine::default().run_trace(grid, weights, total_steps, plan, cfg, probe)
}
