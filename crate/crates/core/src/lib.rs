//! Deep temporal blocking for the 2D Jacobi 5-point stencil.
//!
//! The domain is cut into tiles sized so that all workers' scratchpads are
//! filled by one tile. Each tile is loaded once and advanced several time
//! steps in worker-private buffers, with barrier-separated halo exchange
//! between workers, before it is written back. Results are bitwise identical to the naive
//! step-by-step iteration in [`oracle`].

mod barrier;
pub mod engine;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod metrics;
pub mod oracle;
pub mod planner;
pub mod presets;

pub use engine::{run_dtb, run_dtb_trace, Engine};
pub use error::{DtbError, Result};
pub use grid::{Comparison, Grid2D, Rect, StencilWeights};
pub use kernel::KernelConfig;
pub use metrics::TrafficReport;
pub use oracle::jacobi_reference;
pub use planner::{plan_device_tiles, DeviceModel, TilingPlan};
