//! Uniform grid on the unit cube, interior field storage and face traces.
//!
//! Grid points are `x_j = j Δx` with `Δx = 1/N` and `j ∈ {0, …, N}^d`.
//! Interior indices run over `{1, …, N-1}^d`; a *face* point has exactly one
//! index in `{0, N}`. Only face points carry boundary data.
//!
//! Field layout is component-major: component `k` occupies a contiguous block
//! of `(N-1)^d` values, ordered lexicographically with `j_1` slowest. With
//! `n = N - 1` the flat index is
//!
//! ```text
//! k n^d + Σ_i (j_i - 1) n^{d-1-i}        (i zero-based)
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::model::KineticModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    cells: usize,
}

impl Grid {
    pub fn new(dim: usize, cells: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("grid dimension must be positive".into()));
        }
        if cells < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least two cells per direction, got {cells}"
            )));
        }
        Ok(Self { dim, cells })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `N`, the number of cells per direction.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.cells as f64
    }

    /// `N - 1`, interior points per direction.
    pub fn side(&self) -> usize {
        self.cells - 1
    }

    /// `(N-1)^d`.
    pub fn interior_count(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    /// `(N-1)^{d-1}`, points on one face lattice.
    pub fn face_count(&self) -> usize {
        self.side().pow(self.dim as u32 - 1)
    }

    /// Flat offset of axis `i` within one component block.
    pub fn stride(&self, axis: usize) -> usize {
        self.side().pow((self.dim - 1 - axis) as u32)
    }

    /// Coordinate `j Δx` of grid index `j`.
    pub fn coord(&self, j: usize) -> f64 {
        j as f64 / self.cells as f64
    }

    /// Flat interior offset of multi-index `j` (entries in `1..=N-1`).
    pub fn interior_offset(&self, j: &[usize]) -> usize {
        debug_assert_eq!(j.len(), self.dim);
        j.iter().fold(0, |acc, &ji| {
            debug_assert!(ji >= 1 && ji < self.cells);
            acc * self.side() + (ji - 1)
        })
    }

    /// Inverse of [`Grid::interior_offset`].
    pub fn interior_index(&self, mut offset: usize) -> Vec<usize> {
        let n = self.side();
        let mut j = vec![0; self.dim];
        for ji in j.iter_mut().rev() {
            *ji = offset % n + 1;
            offset /= n;
        }
        j
    }

    /// All interior multi-indices in storage order.
    pub fn interior_indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.interior_count()).map(move |o| self.interior_index(o))
    }

    /// Offset on the face lattice of `face` for the full multi-index `j`; the
    /// entry `j[face.axis]` is ignored.
    pub fn face_offset(&self, face: Face, j: &[usize]) -> usize {
        j.iter()
            .enumerate()
            .filter(|&(i, _)| i != face.axis)
            .fold(0, |acc, (_, &ji)| acc * self.side() + (ji - 1))
    }

    /// Full multi-index of face lattice point `offset`, with the normal index
    /// set to `0` or `N`.
    pub fn face_index(&self, face: Face, mut offset: usize) -> Vec<usize> {
        let n = self.side();
        let mut j = vec![0; self.dim];
        for i in (0..self.dim).rev() {
            if i == face.axis {
                continue;
            }
            j[i] = offset % n + 1;
            offset /= n;
        }
        j[face.axis] = match face.side {
            Side::Low => 0,
            Side::High => self.cells,
        };
        j
    }

    pub fn faces(&self) -> impl Iterator<Item = Face> {
        let d = self.dim;
        (0..d).flat_map(|axis| [Face::low(axis), Face::high(axis)])
    }

    pub fn classify(&self, j: &[usize]) -> IndexClass {
        let mut on_boundary = None;
        let mut count = 0;
        for (axis, &ji) in j.iter().enumerate() {
            if ji == 0 || ji == self.cells {
                count += 1;
                let side = if ji == 0 { Side::Low } else { Side::High };
                on_boundary = Some(Face { axis, side });
            }
        }
        match (count, on_boundary) {
            (0, _) => IndexClass::Interior,
            (1, Some(face)) => IndexClass::Face(face),
            _ => IndexClass::EdgeOrCorner,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    /// `x_i = 0`
    Low,
    /// `x_i = 1`
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    pub fn low(axis: usize) -> Self {
        Self {
            axis,
            side: Side::Low,
        }
    }

    pub fn high(axis: usize) -> Self {
        Self {
            axis,
            side: Side::High,
        }
    }

    /// Position in the canonical face order `x1=0, x1=1, x2=0, …`.
    pub fn ordinal(&self) -> usize {
        2 * self.axis + usize::from(self.side == Side::High)
    }

    /// Whether component `k` enters the domain through this face.
    pub fn is_incoming(&self, model: &KineticModel, k: usize) -> bool {
        let v = model.speed(k, self.axis);
        match self.side {
            Side::Low => v > 0.0,
            Side::High => v < 0.0,
        }
    }

    /// Whether component `k` leaves the domain through this face.
    pub fn is_outgoing(&self, model: &KineticModel, k: usize) -> bool {
        let v = model.speed(k, self.axis);
        match self.side {
            Side::Low => v < 0.0,
            Side::High => v > 0.0,
        }
    }

    /// Interior index adjacent to the face along its normal: `1` or `N-1`.
    pub fn adjacent_index(&self, grid: &Grid) -> usize {
        match self.side {
            Side::Low => 1,
            Side::High => grid.cells() - 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexClass {
    Interior,
    Face(Face),
    EdgeOrCorner,
}

/// Interior values `f_{k,j}` at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    components: usize,
    values: Vec<f64>,
    pub step: u64,
}

impl Field {
    pub fn zeros(grid: Grid, components: usize) -> Self {
        Self {
            grid,
            components,
            values: vec![0.0; components * grid.interior_count()],
            step: 0,
        }
    }

    pub fn from_values(grid: Grid, components: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != components * grid.interior_count() {
            return Err(Error::DimensionMismatch(format!(
                "field needs {} values, got {}",
                components * grid.interior_count(),
                values.len()
            )));
        }
        Ok(Self {
            grid,
            components,
            values,
            step: 0,
        })
    }

    /// Every interior point set to the same `K`-vector.
    pub fn constant(grid: Grid, value: &[f64]) -> Self {
        let n = grid.interior_count();
        let values = value
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, n))
            .collect();
        Self {
            grid,
            components: value.len(),
            values,
            step: 0,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Exchanges the value buffer with `other`, which must have the same length.
    pub(crate) fn swap_values(&mut self, other: &mut Vec<f64>) {
        assert_eq!(other.len(), self.values.len());
        std::mem::swap(&mut self.values, other);
    }

    pub fn component(&self, k: usize) -> &[f64] {
        let n = self.grid.interior_count();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn component_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.interior_count();
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, j: &[usize]) -> f64 {
        self.values[k * self.grid.interior_count() + self.grid.interior_offset(j)]
    }

    pub fn set(&mut self, k: usize, j: &[usize], v: f64) {
        let o = k * self.grid.interior_count() + self.grid.interior_offset(j);
        self.values[o] = v;
    }

    /// The `K`-vector at interior offset `p`.
    pub fn cell(&self, p: usize) -> Vec<f64> {
        let n = self.grid.interior_count();
        (0..self.components).map(|k| self.values[k * n + p]).collect()
    }

    pub fn set_cell(&mut self, p: usize, v: &[f64]) {
        let n = self.grid.interior_count();
        for (k, &x) in v.iter().enumerate() {
            self.values[k * n + p] = x;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn max_abs_component(&self, k: usize) -> f64 {
        self.component(k).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Snapshot CSV: header `k,j1,…,jd,value`, one-based `k`, values at 17
    /// significant digits, rows in storage order.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = String::from("k");
        for i in 1..=self.grid.dim() {
            write!(header, ",j{i}").unwrap();
        }
        writeln!(out, "{header},value")?;
        let n = self.grid.interior_count();
        let mut line = String::new();
        for k in 0..self.components {
            for p in 0..n {
                line.clear();
                write!(line, "{}", k + 1).unwrap();
                for ji in self.grid.interior_index(p) {
                    write!(line, ",{ji}").unwrap();
                }
                write!(line, ",{}", fmt_f64(self.values[k * n + p])).unwrap();
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(grid: Grid, components: usize, input: R) -> Result<Self> {
        let mut field = Field::zeros(grid, components);
        let mut seen = vec![false; field.values.len()];
        let reader = BufReader::new(input);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<snapshot>", e))?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != grid.dim() + 2 {
                return Err(Error::DimensionMismatch(format!(
                    "snapshot line {} has {} columns",
                    lineno + 1,
                    parts.len()
                )));
            }
            let parse_idx = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("snapshot line {}: {e}", lineno + 1)))
            };
            let k = parse_idx(parts[0])?;
            let j = parts[1..=grid.dim()]
                .iter()
                .map(|s| parse_idx(s))
                .collect::<Result<Vec<_>>>()?;
            let value: f64 = parts[grid.dim() + 1]
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("snapshot line {}: {e}", lineno + 1)))?;
            if k == 0 || k > components || j.iter().any(|&ji| ji == 0 || ji >= grid.cells()) {
                return Err(Error::DimensionMismatch(format!(
                    "snapshot line {} indexes outside the interior",
                    lineno + 1
                )));
            }
            let o = (k - 1) * grid.interior_count() + grid.interior_offset(&j);
            field.values[o] = value;
            seen[o] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::DimensionMismatch("snapshot is missing entries".into()));
        }
        Ok(field)
    }
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// `‖f‖ = sqrt(Σ_j f_jᵀ f_j (Δx)^d)`.
pub fn l2_norm(field: &Field) -> f64 {
    let vol = field.grid.dx().powi(field.grid.dim() as i32);
    let mut sum = 0.0;
    for v in &field.values {
        sum += v * v;
    }
    (sum * vol).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// Value at the cell center (the grid point itself).
    #[default]
    Midpoint,
    /// `3^d`-point product Simpson rule over the cell `x_j ± Δx/2`.
    Simpson,
}

/// Numerical initial data: cell averages of `f0` over cells centered at the
/// interior grid points.
pub fn sample_initial<F>(grid: Grid, components: usize, f0: F, quadrature: Quadrature) -> Result<Field>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut field = Field::zeros(grid, components);
    let d = grid.dim();
    let dx = grid.dx();
    let (nodes, weights): (&[f64], &[f64]) = match quadrature {
        Quadrature::Midpoint => (&[0.0], &[1.0]),
        Quadrature::Simpson => (&[-0.5, 0.0, 0.5], &[1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0]),
    };
    let q = nodes.len();
    let mut x = vec![0.0; d];
    let mut acc = vec![0.0; components];
    for p in 0..grid.interior_count() {
        let j = grid.interior_index(p);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for node in 0..q.pow(d as u32) {
            let mut rem = node;
            let mut w = 1.0;
            for i in (0..d).rev() {
                let t = rem % q;
                rem /= q;
                x[i] = grid.coord(j[i]) + nodes[t] * dx;
                w *= weights[t];
            }
            let v = f0(&x);
            if v.len() != components {
                return Err(Error::DimensionMismatch(format!(
                    "initial data returned {} components, expected {components}",
                    v.len()
                )));
            }
            for (k, &vk) in v.iter().enumerate() {
                if !vk.is_finite() {
                    return Err(Error::NonFiniteSample { component: k });
                }
                acc[k] += w * vk;
            }
        }
        field.set_cell(p, &acc);
    }
    Ok(field)
}

/// Boundary values on the face lattices for a fixed set of components per
/// face. Incoming traces ([`FaceTrace`]) and outgoing traces
/// ([`crate::boundary::OutgoingTrace`]) share this layout.
///
/// Stacking order: faces `x1=0, x1=1, …, x_d=1`; components ascending within
/// a face; face lattice lexicographic.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceValues {
    grid: Grid,
    blocks: Vec<FaceBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceBlock {
    pub face: Face,
    pub components: Vec<usize>,
    /// `components.len() x face_count`, component-major.
    pub values: Vec<f64>,
}

impl FaceBlock {
    pub fn component_values(&self, k: usize, face_count: usize) -> Option<&[f64]> {
        let pos = self.components.iter().position(|&c| c == k)?;
        Some(&self.values[pos * face_count..(pos + 1) * face_count])
    }
}

impl FaceValues {
    pub(crate) fn zeros_with(grid: Grid, mut select: impl FnMut(Face) -> Vec<usize>) -> Self {
        let m = grid.face_count();
        let blocks = grid
            .faces()
            .map(|face| {
                let components = select(face);
                let values = vec![0.0; components.len() * m];
                FaceBlock {
                    face,
                    components,
                    values,
                }
            })
            .collect();
        Self { grid, blocks }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn blocks(&self) -> &[FaceBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [FaceBlock] {
        &mut self.blocks
    }

    pub fn block(&self, face: Face) -> &FaceBlock {
        &self.blocks[face.ordinal()]
    }

    /// Values of component `k` on `face`, or `None` if `k` is not carried there.
    pub fn values(&self, face: Face, k: usize) -> Option<&[f64]> {
        self.block(face).component_values(k, self.grid.face_count())
    }

    pub fn values_mut(&mut self, face: Face, k: usize) -> Option<&mut [f64]> {
        let m = self.grid.face_count();
        let block = &mut self.blocks[face.ordinal()];
        let pos = block.components.iter().position(|&c| c == k)?;
        Some(&mut block.values[pos * m..(pos + 1) * m])
    }

    pub fn stacked_len(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }

    pub fn stack(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.values.iter().copied()).collect()
    }

    pub fn fill_from_stacked(&mut self, stacked: &[f64]) -> Result<()> {
        if stacked.len() != self.stacked_len() {
            return Err(Error::DimensionMismatch(format!(
                "stacked trace has {} entries, expected {}",
                stacked.len(),
                self.stacked_len()
            )));
        }
        let mut at = 0;
        for b in &mut self.blocks {
            let len = b.values.len();
            b.values.copy_from_slice(&stacked[at..at + len]);
            at += len;
        }
        Ok(())
    }

    /// `self = a * self + b * other` for traces of identical shape.
    pub fn combine(&mut self, a: f64, other: &FaceValues, b: f64) {
        for (x, y) in self.blocks.iter_mut().zip(&other.blocks) {
            assert_eq!(x.components, y.components, "trace layouts differ");
            for (u, v) in x.values.iter_mut().zip(&y.values) {
                *u = a * *u + b * v;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.values.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.values.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|b| b.values.iter().all(|&v| v == 0.0))
    }
}

/// Incoming boundary values: on face `x_i = 0` the components with
/// `λ_{ki} > 0`, on face `x_i = 1` those with `λ_{ki} < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTrace(pub FaceValues);

impl FaceTrace {
    pub fn zeros(model: &KineticModel, grid: Grid) -> Self {
        let k = model.n_velocities();
        Self(FaceValues::zeros_with(grid, |face| {
            (0..k).filter(|&c| face.is_incoming(model, c)).collect()
        }))
    }

    /// Checks that the trace carries exactly the incoming components of `model`.
    pub fn matches_model(&self, model: &KineticModel) -> bool {
        let k = model.n_velocities();
        self.0.blocks.iter().all(|b| {
            let expected: Vec<usize> = (0..k).filter(|&c| b.face.is_incoming(model, c)).collect();
            b.components == expected
        })
    }
}

impl std::ops::Deref for FaceTrace {
    type Target = FaceValues;

    fn deref(&self) -> &FaceValues {
        &self.0
    }
}

impl std::ops::DerefMut for FaceTrace {
    fn deref_mut(&mut self) -> &mut FaceValues {
        &mut self.0
    }
}
