//! Pixel grid, mirror symmetry, and brush geometry.
//!
//! Fields are stored row-major. Under a D1 symmetry only the independent half of the
//! grid carries parameters; [`DesignGrid::num_params`] is the orbit count of the mirror
//! map, and [`expand_symmetric`] / [`restrict`] / [`reduce_symmetric`] move between the
//! half and the full grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mirror symmetry imposed on a design.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    #[default]
    None,
    /// Mirror across the row axis: row `r` maps to `rows - 1 - r`.
    D1Rows,
    /// Mirror across the column axis: column `c` maps to `cols - 1 - c`.
    D1Cols,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignGrid {
    rows: usize,
    cols: usize,
    pixel_pitch: f64,
    symmetry: Symmetry,
    min_feature: usize,
}

impl DesignGrid {
    pub fn new(rows: usize, cols: usize, symmetry: Symmetry, min_feature: usize) -> Result<Self> {
        Self::with_pitch(rows, cols, 1.0, symmetry, min_feature)
    }

    pub fn with_pitch(
        rows: usize,
        cols: usize,
        pixel_pitch: f64,
        symmetry: Symmetry,
        min_feature: usize,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::param("grid dimensions must be positive"));
        }
        if min_feature == 0 {
            return Err(Error::param("minimum feature size must be positive"));
        }
        if rows < min_feature || cols < min_feature {
            return Err(Error::param(format!(
                "grid {rows}x{cols} is smaller than the minimum feature size {min_feature}"
            )));
        }
        if !(pixel_pitch.is_finite() && pixel_pitch > 0.0) {
            return Err(Error::param("pixel pitch must be positive"));
        }
        Ok(DesignGrid { rows, cols, pixel_pitch, symmetry, min_feature })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn min_feature(&self) -> usize {
        self.min_feature
    }

    /// Number of pixels on the full grid.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of independent parameters: the number of orbits of the mirror map.
    pub fn num_params(&self) -> usize {
        match self.symmetry {
            Symmetry::None => self.len(),
            Symmetry::D1Cols => self.rows * self.cols.div_ceil(2),
            Symmetry::D1Rows => self.cols * self.rows.div_ceil(2),
        }
    }

    /// Shape of the independent half as (rows, cols).
    pub fn half_shape(&self) -> (usize, usize) {
        match self.symmetry {
            Symmetry::None => (self.rows, self.cols),
            Symmetry::D1Cols => (self.rows, self.cols.div_ceil(2)),
            Symmetry::D1Rows => (self.rows.div_ceil(2), self.cols),
        }
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    /// Image of a pixel under the mirror map (identity without symmetry).
    pub fn mirror(&self, index: usize) -> usize {
        let (r, c) = self.row_col(index);
        match self.symmetry {
            Symmetry::None => index,
            Symmetry::D1Cols => self.index(r, self.cols - 1 - c),
            Symmetry::D1Rows => self.index(self.rows - 1 - r, c),
        }
    }

    /// Parameter index of the orbit that contains `index`.
    pub fn param_of(&self, index: usize) -> usize {
        let (r, c) = self.row_col(index);
        match self.symmetry {
            Symmetry::None => index,
            Symmetry::D1Cols => {
                let half = self.cols.div_ceil(2);
                r * half + c.min(self.cols - 1 - c)
            }
            Symmetry::D1Rows => r.min(self.rows - 1 - r) * self.cols + c,
        }
    }

    /// Full-grid pixel that represents parameter `param` (the one on the independent half).
    pub fn pixel_of_param(&self, param: usize) -> usize {
        match self.symmetry {
            Symmetry::None => param,
            Symmetry::D1Cols => {
                let half = self.cols.div_ceil(2);
                self.index(param / half, param % half)
            }
            Symmetry::D1Rows => param,
        }
    }

    /// Pixel coordinates in pixel units, one per pixel, row-major.
    pub fn coords(&self) -> Vec<[f64; 2]> {
        (0..self.len())
            .map(|i| {
                let (r, c) = self.row_col(i);
                [r as f64, c as f64]
            })
            .collect()
    }

    /// True when `field` is invariant under the mirror map within `tol` (absolute).
    pub fn is_symmetric(&self, field: &[f64], tol: f64) -> bool {
        field.len() == self.len()
            && (0..self.len()).all(|i| (field[i] - field[self.mirror(i)]).abs() <= tol)
    }

    /// Averages a full-grid field with its mirror image. Mirror pairs come out bit-identical.
    pub fn symmetrize(&self, field: &mut [f64]) {
        if self.symmetry == Symmetry::None {
            return;
        }
        for i in 0..self.len() {
            let j = self.mirror(i);
            if j > i {
                let avg = 0.5 * (field[i] + field[j]);
                field[i] = avg;
                field[j] = avg;
            }
        }
    }
}

/// Expands a half-field of `num_params` entries onto the full grid.
pub fn expand_symmetric(half: &[f64], grid: &DesignGrid) -> Result<Vec<f64>> {
    Error::check_len(grid.num_params(), half.len())?;
    Ok((0..grid.len()).map(|i| half[grid.param_of(i)]).collect())
}

/// Restricts a full-grid field to its independent half.
pub fn restrict(full: &[f64], grid: &DesignGrid) -> Result<Vec<f64>> {
    Error::check_len(grid.len(), full.len())?;
    Ok((0..grid.num_params()).map(|p| full[grid.pixel_of_param(p)]).collect())
}

/// Adjoint of [`expand_symmetric`]: sums a full-grid field over each mirror orbit.
pub fn reduce_symmetric(full: &[f64], grid: &DesignGrid) -> Result<Vec<f64>> {
    Error::check_len(grid.len(), full.len())?;
    let mut half = vec![0.0; grid.num_params()];
    for (i, v) in full.iter().enumerate() {
        half[grid.param_of(i)] += v;
    }
    Ok(half)
}

/// Symmetry orbit of a pixel, sorted ascending.
pub fn mirror_positions(pos: usize, grid: &DesignGrid) -> Result<Vec<usize>> {
    if pos >= grid.len() {
        return Err(Error::Range { index: pos, len: grid.len() });
    }
    let m = grid.mirror(pos);
    Ok(match m.cmp(&pos) {
        std::cmp::Ordering::Equal => vec![pos],
        std::cmp::Ordering::Less => vec![m, pos],
        std::cmp::Ordering::Greater => vec![pos, m],
    })
}

/// Discretized circular brush.
///
/// Odd diameters are centred on a pixel, and offsets are taken from that pixel. Even
/// diameters are centred on a pixel corner: offset `(dy, dx)` names the pixel whose
/// top-left corner is displaced by `(dy, dx)` from the centre corner, so its centre
/// lies at `(dy + 0.5, dx + 0.5)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Brush {
    diameter: usize,
    offsets: Vec<(i32, i32)>,
}

impl Brush {
    pub fn new(diameter: usize) -> Result<Self> {
        if diameter == 0 {
            return Err(Error::param("brush diameter must be positive"));
        }
        let d = diameter as i32;
        let r2 = (diameter as f64 / 2.0).powi(2);
        let (lo, hi, shift) = if diameter % 2 == 1 {
            (-(d / 2), d / 2, 0.0)
        } else {
            (-(d / 2), d / 2 - 1, 0.5)
        };
        let mut offsets = Vec::new();
        for dy in lo..=hi {
            for dx in lo..=hi {
                let y = dy as f64 + shift;
                let x = dx as f64 + shift;
                if y * y + x * x <= r2 {
                    offsets.push((dy, dx));
                }
            }
        }
        Ok(Brush { diameter, offsets })
    }

    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    pub fn is_even(&self) -> bool {
        self.diameter % 2 == 0
    }

    /// Offsets as geometric pixel-centre displacements from the brush centre.
    pub fn centre_offsets(&self) -> Vec<(f64, f64)> {
        let shift = if self.is_even() { 0.5 } else { 0.0 };
        self.offsets.iter().map(|&(y, x)| (y as f64 + shift, x as f64 + shift)).collect()
    }
}

/// Every brush placement ("touch" location) on a grid, with the in-grid pixels it covers.
///
/// A placement is identified by its anchor: the centre pixel for odd brushes, the centre
/// corner for even ones. Anchors range over all positions whose brush centre lies strictly
/// inside the grid rectangle (every pixel centre, and every interior pixel corner), so
/// disks may hang over the boundary; pixels outside the grid are ignored.
#[derive(Clone, Debug)]
pub struct Placements {
    anchor_rows: usize,
    anchor_cols: usize,
    disk_start: Vec<usize>,
    disk_pixels: Vec<usize>,
    cover_start: Vec<usize>,
    cover_anchors: Vec<usize>,
    mirror: Vec<usize>,
}

impl Placements {
    pub fn new(grid: &DesignGrid, brush: &Brush) -> Self {
        let (rows, cols) = (grid.rows(), grid.cols());
        // Even brushes: anchor (ar, ac) is the corner shared by pixels (ar, ac) and (ar + 1, ac + 1).
        let shift = i64::from(brush.is_even());
        let (anchor_rows, anchor_cols) = if brush.is_even() {
            (rows.saturating_sub(1), cols.saturating_sub(1))
        } else {
            (rows, cols)
        };
        let n_anchors = anchor_rows * anchor_cols;

        let mut disk_start = Vec::with_capacity(n_anchors + 1);
        let mut disk_pixels = Vec::new();
        disk_start.push(0);
        for ar in 0..anchor_rows as i64 {
            for ac in 0..anchor_cols as i64 {
                for &(dy, dx) in brush.offsets() {
                    let r = ar + shift + dy as i64;
                    let c = ac + shift + dx as i64;
                    if r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols {
                        disk_pixels.push(r as usize * cols + c as usize);
                    }
                }
                disk_start.push(disk_pixels.len());
            }
        }

        let mut counts = vec![0usize; grid.len()];
        for &p in &disk_pixels {
            counts[p] += 1;
        }
        let mut cover_start = vec![0usize; grid.len() + 1];
        for p in 0..grid.len() {
            cover_start[p + 1] = cover_start[p] + counts[p];
        }
        let mut fill = cover_start.clone();
        let mut cover_anchors = vec![0usize; disk_pixels.len()];
        for a in 0..n_anchors {
            for &p in &disk_pixels[disk_start[a]..disk_start[a + 1]] {
                cover_anchors[fill[p]] = a;
                fill[p] += 1;
            }
        }

        let mirror = (0..n_anchors)
            .map(|a| {
                let (ar, ac) = (a / anchor_cols, a % anchor_cols);
                match grid.symmetry() {
                    Symmetry::None => a,
                    Symmetry::D1Cols => ar * anchor_cols + (anchor_cols - 1 - ac),
                    Symmetry::D1Rows => (anchor_rows - 1 - ar) * anchor_cols + ac,
                }
            })
            .collect();

        Placements {
            anchor_rows,
            anchor_cols,
            disk_start,
            disk_pixels,
            cover_start,
            cover_anchors,
            mirror,
        }
    }

    pub fn num_anchors(&self) -> usize {
        self.anchor_rows * self.anchor_cols
    }

    /// In-grid pixels covered by the placement at `anchor`.
    pub fn disk(&self, anchor: usize) -> &[usize] {
        &self.disk_pixels[self.disk_start[anchor]..self.disk_start[anchor + 1]]
    }

    /// Anchors whose disk covers `pixel`.
    pub fn covering(&self, pixel: usize) -> &[usize] {
        &self.cover_anchors[self.cover_start[pixel]..self.cover_start[pixel + 1]]
    }

    /// Image of an anchor under the grid's mirror map.
    pub fn mirror(&self, anchor: usize) -> usize {
        self.mirror[anchor]
    }
}
