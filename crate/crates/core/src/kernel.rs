//! The j2d5pt microkernel.
//!
//! Computes `out(x,y) = W*in(x-1,y) + E*in(x+1,y) + S*in(x,y-1) + C*in(x,y) + N*in(x,y+1)`
//! with the products summed left to right in exactly that order. Rows are
//! processed in blocks of `ilp`: for every column the `ilp + 2` values
//! `in(x, y-1 ..= y+ilp)` are staged once and reused for the whole block.
//! Blocking never changes results bitwise.

use serde::{Deserialize, Serialize};

use crate::error::{DtbError, Result};
use crate::grid::{Rect, StencilWeights};

/// Number of consecutive rows computed per inner iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    ilp: usize,
}

impl KernelConfig {
    pub fn new(ilp: usize) -> Result<Self> {
        if ilp == 0 {
            return Err(DtbError::InvalidArgument("ilp must be at least 1".into()));
        }
        Ok(Self { ilp })
    }

    /// One row per iteration, no staging reuse.
    pub const fn scalar() -> Self {
        Self { ilp: 1 }
    }

    pub fn ilp(&self) -> usize {
        self.ilp
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { ilp: 4 }
    }
}

/// Strided 2D view into a flat scalar buffer.
///
/// Cell `(x, y)` lives at `base + y * stride + x`. Coordinates `-1` and
/// `width`/`height` address the one-cell reach around the view and must be
/// backed by the buffer whenever the kernel reads them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub base: usize,
    pub stride: usize,
    pub width: usize,
    pub height: usize,
}

impl Window {
    fn offset(&self, x: isize, y: isize) -> isize {
        self.base as isize + y * self.stride as isize + x
    }
}

trait Cells {
    fn read(&self, i: usize) -> f64;
    fn write(&mut self, i: usize, v: f64);
}

struct Split<'a> {
    src: &'a [f64],
    dst: &'a mut [f64],
}

impl Cells for Split<'_> {
    #[inline(always)]
    fn read(&self, i: usize) -> f64 {
        self.src[i]
    }
    #[inline(always)]
    fn write(&mut self, i: usize, v: f64) {
        self.dst[i] = v;
    }
}

struct Within<'a>(&'a mut [f64]);

impl Cells for Within<'_> {
    #[inline(always)]
    fn read(&self, i: usize) -> f64 {
        self.0[i]
    }
    #[inline(always)]
    fn write(&mut self, i: usize, v: f64) {
        self.0[i] = v;
    }
}

fn check_bounds(
    in_len: usize,
    input: &Window,
    out_len: usize,
    output: &Window,
    cols: &Rect,
) -> Result<()> {
    for (name, win) in [("input", input), ("output", output)] {
        if cols.x1() > win.width || cols.y1() > win.height {
            return Err(DtbError::Range(format!(
                "cols {cols:?} exceed the {}x{} {name} window",
                win.width, win.height
            )));
        }
    }
    let (x0, y0) = (cols.x0 as isize, cols.y0 as isize);
    let (x1, y1) = (cols.x1() as isize, cols.y1() as isize);
    let read_lo = input.offset(x0, y0 - 1).min(input.offset(x0 - 1, y0));
    let read_hi = input.offset(x1 - 1, y1).max(input.offset(x1, y1 - 1));
    if read_lo < 0 || read_hi >= in_len as isize {
        return Err(DtbError::Range(format!(
            "stencil reach of cols {cols:?} leaves the input buffer ({in_len} cells)"
        )));
    }
    let write_lo = output.offset(x0, y0);
    let write_hi = output.offset(x1 - 1, y1 - 1);
    if write_lo < 0 || write_hi >= out_len as isize {
        return Err(DtbError::Range(format!(
            "cols {cols:?} leave the output buffer ({out_len} cells)"
        )));
    }
    Ok(())
}

/// First written cell that the update would also read, if any.
fn find_overlap(input: &Window, output: &Window, cols: &Rect) -> Option<usize> {
    let (x0, y0) = (cols.x0 as isize, cols.y0 as isize);
    let (x1, y1) = (cols.x1() as isize, cols.y1() as isize);
    // Row r of the read footprint spans [lo, hi]: the plus shape widens the
    // interior rows by one cell on each side.
    let read_rows = (y0 - 1..=y1).map(|r| {
        let (lo, hi) = if r == y0 - 1 || r == y1 { (x0, x1 - 1) } else { (x0 - 1, x1) };
        (input.offset(lo, r), input.offset(hi, r))
    });
    let read_rows: Vec<_> = read_rows.collect();
    for y in y0..y1 {
        let (wlo, whi) = (output.offset(x0, y), output.offset(x1 - 1, y));
        for &(rlo, rhi) in &read_rows {
            if wlo <= rhi && rlo <= whi {
                return Some(wlo.max(rlo) as usize);
            }
        }
    }
    None
}

#[inline(always)]
fn sweep<C: Cells>(
    cells: &mut C,
    input: &Window,
    output: &Window,
    wt: &StencilWeights,
    cols: &Rect,
    ilp: usize,
) {
    let [w, e, s, c, n] = wt.as_array();
    let in_stride = input.stride;
    let out_stride = output.stride;
    let mut staged = vec![0.0f64; ilp + 2];
    let mut result = vec![0.0f64; ilp];

    let mut y = cols.y0;
    while y + ilp <= cols.y1() {
        for x in cols.x0..cols.x1() {
            // ilp + 2 rows: one above the block and one below
            let top = input.base + y * in_stride + x - in_stride;
            for (k, t) in staged.iter_mut().enumerate() {
                *t = cells.read(top + k * in_stride);
            }
            for k in 0..ilp {
                let row = input.base + (y + k) * in_stride + x;
                result[k] = cells.read(row - 1) * w
                    + cells.read(row + 1) * e
                    + staged[k] * s
                    + staged[k + 1] * c
                    + staged[k + 2] * n;
            }
            let dst = output.base + y * out_stride + x;
            for (k, r) in result.iter().enumerate() {
                cells.write(dst + k * out_stride, *r);
            }
        }
        y += ilp;
    }
    // scalar epilogue, same expression order
    for y in y..cols.y1() {
        for x in cols.x0..cols.x1() {
            let i = input.base + y * in_stride + x;
            let v = cells.read(i - 1) * w
                + cells.read(i + 1) * e
                + cells.read(i - in_stride) * s
                + cells.read(i) * c
                + cells.read(i + in_stride) * n;
            cells.write(output.base + y * out_stride + x, v);
        }
    }
}

/// Apply one j2d5pt update to `cols` (window-relative) reading `input` and
/// writing `output`, which live in distinct buffers.
pub fn j2d5pt_update(
    input: &[f64],
    in_win: Window,
    output: &mut [f64],
    out_win: Window,
    weights: &StencilWeights,
    cols: Rect,
    cfg: KernelConfig,
) -> Result<()> {
    if cols.is_empty() {
        return Ok(());
    }
    check_bounds(input.len(), &in_win, output.len(), &out_win, &cols)?;
    let mut cells = Split { src: input, dst: output };
    sweep(&mut cells, &in_win, &out_win, weights, &cols, cfg.ilp);
    Ok(())
}

/// Same as [`j2d5pt_update`] with both windows over one buffer. Fails with
/// [`DtbError::Aliasing`] if any written cell is also read.
pub fn j2d5pt_update_within(
    buf: &mut [f64],
    in_win: Window,
    out_win: Window,
    weights: &StencilWeights,
    cols: Rect,
    cfg: KernelConfig,
) -> Result<()> {
    if cols.is_empty() {
        return Ok(());
    }
    check_bounds(buf.len(), &in_win, buf.len(), &out_win, &cols)?;
    if let Some(at) = find_overlap(&in_win, &out_win, &cols) {
        return Err(DtbError::Aliasing(format!(
            "output overlaps the stencil reach of the input at buffer offset {at}"
        )));
    }
    let mut cells = Within(buf);
    sweep(&mut cells, &in_win, &out_win, weights, &cols, cfg.ilp);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use proptest::prelude::*;

    fn step(g: &Grid2D, wt: &StencilWeights, ilp: usize) -> Grid2D {
        let mut out = g.clone();
        let win = g.interior_window();
        j2d5pt_update(
            g.as_slice(),
            win,
            out.as_mut_slice(),
            win,
            wt,
            g.interior(),
            KernelConfig::new(ilp).unwrap(),
        )
        .unwrap();
        out
    }

    /// Straight transcription of the update formula over extended coordinates.
    fn naive_step(g: &Grid2D, wt: &StencilWeights) -> Grid2D {
        let mut out = g.clone();
        for y in 0..g.ny() as isize {
            for x in 0..g.nx() as isize {
                let v = wt.w * g.get_ext(x - 1, y)
                    + wt.e * g.get_ext(x + 1, y)
                    + wt.s * g.get_ext(x, y - 1)
                    + wt.c * g.get_ext(x, y)
                    + wt.n * g.get_ext(x, y + 1);
                out.set(x as usize, y as usize, v);
            }
        }
        out
    }

    fn random_weights(seed: u64) -> StencilWeights {
        let g = Grid2D::random(1, 3, seed).unwrap();
        let v = g.as_slice();
        StencilWeights::new(v[0], v[1], v[2], v[3], v[4]).unwrap()
    }

    #[test]
    fn identity_weights_copy_input() {
        let g = Grid2D::random(13, 7, 2).unwrap();
        for ilp in [1, 3, 8] {
            assert_eq!(step(&g, &StencilWeights::identity(), ilp), g);
        }
    }

    #[test]
    fn center_spike_spreads_to_neighbors() {
        let g = Grid2D::new(3, 3, |x, y| if (x, y) == (1, 1) { 1.0 } else { 0.0 }, 0.0).unwrap();
        let wt = StencilWeights::new(0.2, 0.2, 0.2, 0.2, 0.2).unwrap();
        let out = step(&g, &wt, 2);
        for (x, y) in [(1, 1), (0, 1), (2, 1), (1, 0), (1, 2)] {
            assert_eq!(out.get(x, y), 0.2);
        }
        for (x, y) in [(0, 0), (2, 0), (0, 2), (2, 2)] {
            assert_eq!(out.get(x, y), 0.0);
        }
    }

    #[test]
    fn matches_naive_formula() {
        let g = Grid2D::random(37, 41, 9).unwrap();
        let wt = random_weights(10);
        let expected = naive_step(&g, &wt);
        for ilp in 1..=8 {
            assert!(step(&g, &wt, ilp).compare(&expected).unwrap().bit_equal, "ilp={ilp}");
        }
    }

    #[test]
    fn ghost_ring_untouched() {
        let g = Grid2D::random(6, 5, 4).unwrap();
        let out = step(&g, &random_weights(1), 4);
        assert_eq!(out.ghost_ring(), g.ghost_ring());
    }

    #[test]
    fn partial_cols_only() {
        let g = Grid2D::random(8, 8, 12).unwrap();
        let wt = random_weights(13);
        let mut out = g.clone();
        let cols = Rect::new(2, 3, 4, 2);
        let win = g.interior_window();
        j2d5pt_update(g.as_slice(), win, out.as_mut_slice(), win, &wt, cols, KernelConfig::default()).unwrap();
        let full = naive_step(&g, &wt);
        for y in 0..8 {
            for x in 0..8 {
                let want = if cols.contains(x, y) { full.get(x, y) } else { g.get(x, y) };
                assert_eq!(out.get(x, y).to_bits(), want.to_bits());
            }
        }
    }

    #[test]
    fn range_errors() {
        let g = Grid2D::random(4, 4, 1).unwrap();
        let mut out = g.clone();
        let win = g.interior_window();
        let wt = StencilWeights::identity();
        let cfg = KernelConfig::default();
        let too_big = Rect::new(1, 0, 4, 4);
        assert!(matches!(
            j2d5pt_update(g.as_slice(), win, out.as_mut_slice(), win, &wt, too_big, cfg),
            Err(DtbError::Range(_))
        ));
        // a window whose reach falls off the front of the buffer
        let bare = Window { base: 0, stride: 6, width: 4, height: 4 };
        assert!(matches!(
            j2d5pt_update(g.as_slice(), bare, out.as_mut_slice(), win, &wt, Rect::new(0, 0, 1, 1), cfg),
            Err(DtbError::Range(_))
        ));
        assert!(KernelConfig::new(0).is_err());
    }

    #[test]
    fn aliasing_detected_within_one_buffer() {
        // two 4x4 windows side by side in one 12-wide buffer, ghost columns between
        let mut buf = vec![1.0; 12 * 6];
        let left = Window { base: 13, stride: 12, width: 4, height: 4 };
        let right = Window { base: 19, stride: 12, width: 4, height: 4 };
        let wt = StencilWeights::diffusive(0.25).unwrap();
        let cfg = KernelConfig::default();
        let all = Rect::new(0, 0, 4, 4);
        j2d5pt_update_within(&mut buf, left, right, &wt, all, cfg).unwrap();
        assert!(matches!(
            j2d5pt_update_within(&mut buf, left, left, &wt, all, cfg),
            Err(DtbError::Aliasing(_))
        ));
        // right window moved so its first column is the left window's east reach
        let touching = Window { base: 17, ..right };
        assert!(matches!(
            j2d5pt_update_within(&mut buf, left, touching, &wt, all, cfg),
            Err(DtbError::Aliasing(_))
        ));
    }

    #[test]
    fn within_matches_split() {
        let g = Grid2D::random(5, 5, 3).unwrap();
        let wt = random_weights(4);
        let p = g.pitch();
        // second copy stacked below the first in one buffer
        let mut buf = g.as_slice().to_vec();
        buf.extend_from_slice(g.as_slice());
        let input = g.interior_window();
        let output = Window { base: input.base + 7 * p, ..input };
        j2d5pt_update_within(&mut buf, input, output, &wt, g.interior(), KernelConfig::new(3).unwrap()).unwrap();
        let expected = step(&g, &wt, 1);
        assert_eq!(&buf[7 * p..], expected.as_slice());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn ilp_invariance(nx in 1usize..24, ny in 1usize..24, seed in any::<u64>(), ilp in 1usize..=8) {
            let g = Grid2D::random(nx, ny, seed).unwrap();
            let wt = random_weights(seed ^ 0x5eed);
            prop_assert_eq!(step(&g, &wt, ilp), step(&g, &wt, 1));
        }

        #[test]
        fn power_of_two_scaling_is_exact(seed in any::<u64>(), k in -8i32..8) {
            let g = Grid2D::random(9, 7, seed).unwrap();
            let wt = random_weights(seed.wrapping_add(1));
            let a = 2f64.powi(k);
            let mut scaled = g.clone();
            scaled.as_mut_slice().iter_mut().for_each(|v| *v *= a);
            let mut expected = step(&g, &wt, 4);
            expected.as_mut_slice().iter_mut().for_each(|v| *v *= a);
            prop_assert_eq!(step(&scaled, &wt, 4), expected);
        }

        #[test]
        fn one_cell_change_touches_at_most_five(seed in any::<u64>(), x in 0usize..10, y in 0usize..10) {
            let g = Grid2D::random(10, 10, seed).unwrap();
            let wt = random_weights(seed ^ 1);
            let mut h = g.clone();
            h.set(x, y, g.get(x, y) + 1.0);
            let (a, b) = (step(&g, &wt, 3), step(&h, &wt, 3));
            let mut changed = 0;
            for yy in 0..10 {
                for xx in 0..10 {
                    if a.get(xx, yy).to_bits() != b.get(xx, yy).to_bits() {
                        prop_assert!(xx.abs_diff(x) + yy.abs_diff(y) <= 1);
                        changed += 1;
                    }
                }
            }
            prop_assert!(changed <= 5);
        }
    }
}
