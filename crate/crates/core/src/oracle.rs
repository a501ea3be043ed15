//! Naive whole-domain Jacobi iteration: one synchronous global step at a
//! time, double buffered, single threaded. Every engine result is checked
//! against this.

use crate::error::{DtbError, Result};
use crate::grid::{Grid2D, StencilWeights};
use crate::kernel::{j2d5pt_update, KernelConfig};

/// Scalar kernel only, so a blocking bug cannot hide on both sides of a
/// comparison.
const ORACLE_KERNEL: KernelConfig = KernelConfig::scalar();

fn advance(front: &mut Grid2D, back: &mut Grid2D, weights: &StencilWeights) {
    let win = front.interior_window();
    let interior = front.interior();
    j2d5pt_update(
        front.as_slice(),
        win,
        back.as_mut_slice(),
        win,
        weights,
        interior,
        ORACLE_KERNEL,
    )
    .expect("interior window of a grid always backs its own stencil reach");
    std::mem::swap(front, back);
}

/// State after `steps` synchronous updates of the full interior.
pub fn jacobi_reference(grid: &Grid2D, weights: &StencilWeights, steps: usize) -> Grid2D {
    let mut front = grid.clone();
    let mut back = grid.clone();
    for _ in 0..steps {
        advance(&mut front, &mut back, weights);
    }
    front
}

/// Snapshots at `t = 0, stride, 2*stride, ...` plus the final state at
/// `t = steps` when it is not already on the stride.
pub fn jacobi_reference_trace(
    grid: &Grid2D,
    weights: &StencilWeights,
    steps: usize,
    stride: usize,
) -> Result<Vec<Grid2D>> {
    if stride == 0 {
        return Err(DtbError::InvalidArgument("trace stride must be at least 1".into()));
    }
    let mut front = grid.clone();
    let mut back = grid.clone();
    let mut snapshots = vec![front.clone()];
    for t in 1..=steps {
        advance(&mut front, &mut back, weights);
        if t % stride == 0 || t == steps {
            snapshots.push(front.clone());
        }
    }
    Ok(snapshots)
}
