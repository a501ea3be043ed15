use thiserror::Error;

/// Errors raised by grid handling, planning and execution.
#[derive(Debug, Error)]
pub enum DtbError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of range: {0}")]
    Range(String),

    /// Input and output views overlap over the written region.
    #[error("aliasing contract violated: {0}")]
    Aliasing(String),

    /// The requested tile (1x1 when planning automatically) with its temporal
    /// halo does not fit the scratchpad.
    #[error(
        "infeasible plan: a {}x{} tile at depth {depth} needs {required_bytes} bytes per worker, \
         device offers {available_bytes}", tile.0, tile.1
    )]
    Infeasible {
        tile: (usize, usize),
        depth: usize,
        required_bytes: u64,
        available_bytes: u64,
    },

    #[error("worker {worker} needs {required_bytes} bytes of scratchpad, capacity is {capacity_bytes}")]
    CapacityExceeded {
        worker: usize,
        required_bytes: u64,
        capacity_bytes: u64,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DtbError> = std::result::Result<T, E>;
