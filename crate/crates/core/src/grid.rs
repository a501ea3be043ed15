//! Global-memory domain: a row-major field of doubles surrounded by a
//! one-cell ghost ring that stencil updates never write.
//!
//! Interior coordinates `(x, y)` run over `[0, nx) x [0, ny)`. The ghost ring
//! sits at `x = -1`, `x = nx`, `y = -1` and `y = ny` in extended coordinates.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{DtbError, Result};
use crate::kernel::Window;

/// Axis-aligned cell rectangle in interior coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub const fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
        }
    }

    /// One past the last column.
    pub const fn x1(&self) -> usize {
        self.x0 + self.width
    }

    /// One past the last row.
    pub const fn y1(&self) -> usize {
        self.y0 + self.height
    }

    pub const fn area(&self) -> usize {
        self.width * self.height
    }

    pub const fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }

    /// True when `other` lies entirely inside `self`. Empty rects are
    /// contained as long as their origin is within the closed extent.
    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.x1() <= self.x1() && other.y0 >= self.y0 && other.y1() <= self.y1()
    }

    /// Overlap of two rects; empty (zero-sized) when they do not meet.
    pub fn intersect(&self, other: &Rect) -> Rect {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        if x1 <= x0 || y1 <= y0 {
            Rect::new(x0.min(x1), y0.min(y1), 0, 0)
        } else {
            Rect::new(x0, y0, x1 - x0, y1 - y0)
        }
    }

    /// Grow by `by` cells on every side, clipped to `[0, nx) x [0, ny)`.
    pub fn dilate_clipped(&self, by: usize, nx: usize, ny: usize) -> Rect {
        let x0 = self.x0.saturating_sub(by);
        let y0 = self.y0.saturating_sub(by);
        let x1 = (self.x1() + by).min(nx);
        let y1 = (self.y1() + by).min(ny);
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// The five coefficients of the weighted 5-point update.
///
/// `w`/`e` weigh the x-1/x+1 neighbours, `s`/`n` the y-1/y+1 neighbours and
/// `c` the centre cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StencilWeights {
    pub w: f64,
    pub e: f64,
    pub s: f64,
    pub c: f64,
    pub n: f64,
}

impl StencilWeights {
    pub fn new(w: f64, e: f64, s: f64, c: f64, n: f64) -> Result<Self> {
        let weights = Self { w, e, s, c, n };
        if weights.as_array().iter().all(|v| v.is_finite()) {
            Ok(weights)
        } else {
            Err(DtbError::InvalidArgument(format!(
                "stencil weights must be finite, got {weights:?}"
            )))
        }
    }

    /// Explicit diffusion step: `alpha` on each neighbour, `1 - 4 alpha` on
    /// the centre.
    pub fn diffusive(alpha: f64) -> Result<Self> {
        Self::new(alpha, alpha, alpha, 1.0 - 4.0 * alpha, alpha)
    }

    pub fn identity() -> Self {
        Self {
            w: 0.0,
            e: 0.0,
            s: 0.0,
            c: 1.0,
            n: 0.0,
        }
    }

    /// `[w, e, s, c, n]`
    pub fn as_array(&self) -> [f64; 5] {
        [self.w, self.e, self.s, self.c, self.n]
    }
}

/// Interior-only comparison outcome of two equally sized grids.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub bit_equal: bool,
    /// Largest `|a - b|` over the interior; infinite if any pair holds a NaN
    /// on one side only.
    pub max_abs_diff: f64,
    pub first_mismatch: Option<(usize, usize)>,
}

/// Scalar field with a frozen one-cell ghost ring, stored as a single flat
/// row-major buffer of `(nx + 2) * (ny + 2)` doubles.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

const HEADER_BYTES: usize = 16;

impl Grid2D {
    /// Fill the interior row by row from `interior`, and every ghost cell
    /// with `ghost`.
    pub fn new(
        nx: usize,
        ny: usize,
        mut interior: impl FnMut(usize, usize) -> f64,
        ghost: f64,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(DtbError::InvalidArgument(format!(
                "grid dimensions must be positive, got {nx}x{ny}"
            )));
        }
        let mut grid = Self::filled(nx, ny, ghost);
        for y in 0..ny {
            for x in 0..nx {
                grid.set(x, y, interior(x, y));
            }
        }
        Ok(grid)
    }

    fn filled(nx: usize, ny: usize, value: f64) -> Self {
        Self {
            nx,
            ny,
            data: vec![value; (nx + 2) * (ny + 2)],
        }
    }

    /// Every cell, ghosts included, drawn uniformly from `[-1, 1)` by a
    /// seeded xoshiro256++ stream in storage order.
    pub fn random(nx: usize, ny: usize, seed: u64) -> Result<Self> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut grid = Self::new(nx, ny, |_, _| 0.0, 0.0)?;
        for v in &mut grid.data {
            *v = rng.random_range(-1.0..1.0);
        }
        Ok(grid)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Row pitch of the backing buffer, in cells.
    pub fn pitch(&self) -> usize {
        self.nx + 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Buffer index of extended coordinate `(x, y)`, each in `-1..=n`.
    pub fn index_ext(&self, x: isize, y: isize) -> usize {
        debug_assert!(x >= -1 && x <= self.nx as isize && y >= -1 && y <= self.ny as isize);
        ((y + 1) as usize) * self.pitch() + (x + 1) as usize
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[self.index_ext(x as isize, y as isize)]
    }

    pub fn get_ext(&self, x: isize, y: isize) -> f64 {
        self.data[self.index_ext(x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        let i = self.index_ext(x as isize, y as isize);
        self.data[i] = value;
    }

    /// Overwrite a single ghost cell. Interior coordinates are rejected.
    pub fn set_ghost(&mut self, x: isize, y: isize, value: f64) -> Result<()> {
        let on_ring = (x == -1 || x == self.nx as isize) && (-1..=self.ny as isize).contains(&y)
            || (y == -1 || y == self.ny as isize) && (-1..=self.nx as isize).contains(&x);
        if !on_ring {
            return Err(DtbError::Range(format!("({x}, {y}) is not a ghost cell")));
        }
        let i = self.index_ext(x, y);
        self.data[i] = value;
        Ok(())
    }

    pub fn interior(&self) -> Rect {
        Rect::new(0, 0, self.nx, self.ny)
    }

    /// View of the interior for the microkernel.
    pub fn interior_window(&self) -> Window {
        Window {
            base: self.pitch() + 1,
            stride: self.pitch(),
            width: self.nx,
            height: self.ny,
        }
    }

    /// Ghost-ring values in a fixed traversal order.
    pub fn ghost_ring(&self) -> Vec<f64> {
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let mut ring = Vec::with_capacity(2 * (self.nx + self.ny) + 4);
        for x in -1..=nx {
            ring.push(self.get_ext(x, -1));
            ring.push(self.get_ext(x, ny));
        }
        for y in 0..ny {
            ring.push(self.get_ext(-1, y));
            ring.push(self.get_ext(nx, y));
        }
        ring
    }

    /// Copy of `region` as a standalone grid. Its ghost ring is the ring of
    /// cells surrounding `region` in `self`, which are source ghosts where the
    /// region touches the boundary. A zero-area region yields an empty grid.
    pub fn extract(&self, region: &Rect) -> Result<Grid2D> {
        if !self.interior().contains_rect(region) {
            return Err(DtbError::Range(format!(
                "region {region:?} exceeds the {}x{} interior",
                self.nx, self.ny
            )));
        }
        let mut out = Self::filled(region.width, region.height, 0.0);
        let src_pitch = self.pitch();
        let dst_pitch = out.pitch();
        // Source rows region.y0-1 ..= region.y1 map to destination rows 0..=height+1.
        for row in 0..region.height + 2 {
            let src = (region.y0 + row) * src_pitch + region.x0;
            let dst = row * dst_pitch;
            out.data[dst..dst + dst_pitch].copy_from_slice(&self.data[src..src + dst_pitch]);
        }
        Ok(out)
    }

    /// Bitwise and numeric comparison over the interior.
    pub fn compare(&self, other: &Grid2D) -> Result<Comparison> {
        if self.nx != other.nx || self.ny != other.ny {
            return Err(DtbError::InvalidArgument(format!(
                "cannot compare {}x{} with {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )));
        }
        let mut report = Comparison {
            bit_equal: true,
            max_abs_diff: 0.0,
            first_mismatch: None,
        };
        for y in 0..self.ny {
            for x in 0..self.nx {
                let (a, b) = (self.get(x, y), other.get(x, y));
                if a.to_bits() == b.to_bits() {
                    continue;
                }
                if report.first_mismatch.is_none() {
                    report.first_mismatch = Some((x, y));
                }
                report.bit_equal = false;
                let diff = (a - b).abs();
                let diff = if diff.is_nan() { f64::INFINITY } else { diff };
                report.max_abs_diff = report.max_abs_diff.max(diff);
            }
        }
        Ok(report)
    }

    /// Serialize as a 16-byte header (`nx`, `ny` as little-endian u64)
    /// followed by every cell, ghosts included, as little-endian f64.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(&(self.nx as u64).to_le_bytes())?;
        out.write_all(&(self.ny as u64).to_le_bytes())?;
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Grid2D> {
        let mut header = [0u8; HEADER_BYTES];
        input.read_exact(&mut header)?;
        let dim = |bytes: &[u8]| -> Result<usize> {
            let v = u64::from_le_bytes(bytes.try_into().expect("8-byte slice"));
            usize::try_from(v).map_err(|_| DtbError::Parse(format!("dimension {v} too large")))
        };
        let (nx, ny) = (dim(&header[..8])?, dim(&header[8..])?);
        if nx == 0 || ny == 0 {
            return Err(DtbError::Parse(format!("grid header has zero dimension {nx}x{ny}")));
        }
        let cells = (nx + 2)
            .checked_mul(ny + 2)
            .ok_or_else(|| DtbError::Parse(format!("grid {nx}x{ny} too large")))?;
        let mut bytes = vec![0u8; cells * 8];
        input
            .read_exact(&mut bytes)
            .map_err(|e| DtbError::Parse(format!("truncated grid payload: {e}")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(DtbError::Parse("trailing bytes after grid payload".into()));
        }
        Ok(Grid2D { nx, ny, data })
    }
}
