//! Numerical boundary laws: prescriptions of the incoming boundary values as
//! (possibly non-local) linear functions of the outgoing numerical traces.
//!
//! The outgoing value of component `k` on face `x_i = 1` (`λ_{ki} > 0`) is the
//! interior value at `j_i = N-1`; on face `x_i = 0` (`λ_{ki} < 0`) it is the
//! value at `j_i = 1`. Incoming values live on the face points themselves.

use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::{Face, FaceTrace, FaceValues, Field, Grid};
use crate::model::{CoplanarSteadyState, KineticModel};

/// Outgoing numerical traces, one block per face, same layout as [`FaceTrace`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutgoingTrace(pub FaceValues);

impl OutgoingTrace {
    pub fn zeros(model: &KineticModel, grid: Grid) -> Self {
        let k = model.n_velocities();
        Self(FaceValues::zeros_with(grid, |face| {
            (0..k).filter(|&c| face.is_outgoing(model, c)).collect()
        }))
    }
}

impl std::ops::Deref for OutgoingTrace {
    type Target = FaceValues;

    fn deref(&self) -> &FaceValues {
        &self.0
    }
}

impl std::ops::DerefMut for OutgoingTrace {
    fn deref_mut(&mut self) -> &mut FaceValues {
        &mut self.0
    }
}

/// Copies the interior values adjacent to each face for every outgoing
/// component on that face.
pub fn extract_outgoing(field: &Field, model: &KineticModel) -> OutgoingTrace {
    let mut trace = OutgoingTrace::zeros(model, *field.grid());
    extract_outgoing_into(field, &mut trace);
    trace
}

/// As [`extract_outgoing`], reusing an existing trace of the right shape.
pub fn extract_outgoing_into(field: &Field, trace: &mut OutgoingTrace) {
    let grid = *field.grid();
    let m = grid.face_count();
    let mut j = vec![0; grid.dim()];
    for block in trace.0.blocks_mut() {
        let face = block.face;
        let adjacent = face.adjacent_index(&grid);
        for (pos, &k) in block.components.iter().enumerate() {
            let src = field.component(k);
            for o in 0..m {
                face_to_interior(&grid, face, o, adjacent, &mut j);
                block.values[pos * m + o] = src[grid.interior_offset(&j)];
            }
        }
    }
}

fn face_to_interior(grid: &Grid, face: Face, offset: usize, normal: usize, j: &mut [usize]) {
    j.copy_from_slice(&grid.face_index(face, offset));
    j[face.axis] = normal;
}

/// Maps outgoing traces to incoming boundary values.
///
/// Implementations are immutable; `apply` must return a trace carrying
/// exactly the incoming components of `model` on every face.
pub trait BoundaryLaw: Send + Sync + fmt::Debug {
    fn apply(&self, model: &KineticModel, trace: &OutgoingTrace, step: u64) -> Result<FaceTrace>;

    fn name(&self) -> String;

    /// Writes into an existing incoming trace. The default allocates.
    fn apply_into(
        &self,
        model: &KineticModel,
        trace: &OutgoingTrace,
        step: u64,
        out: &mut FaceTrace,
    ) -> Result<()> {
        *out = self.apply(model, trace, step)?;
        Ok(())
    }
}

/// All incoming values zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrivialLaw;

impl BoundaryLaw for TrivialLaw {
    fn apply(&self, model: &KineticModel, trace: &OutgoingTrace, _step: u64) -> Result<FaceTrace> {
        Ok(FaceTrace::zeros(model, *trace.grid()))
    }

    fn apply_into(
        &self,
        _model: &KineticModel,
        _trace: &OutgoingTrace,
        _step: u64,
        out: &mut FaceTrace,
    ) -> Result<()> {
        for b in out.0.blocks_mut() {
            b.values.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(())
    }

    fn name(&self) -> String {
        "trivial".into()
    }
}

// Coplanar component indices (zero-based): f1 → +x1, f2 → -x1, f3 → +x2, f4 → -x2.
const F2: usize = 1;
const F3: usize = 2;
const F4: usize = 3;

/// Coplanar bottom-edge feedback `f3(j1, 0) = k1 f2(1, j1) + k2 f4(j1, 1)`;
/// left, right and top edges get zero incoming values.
///
/// `k2 = 0` gives the single-gain law fed only by the left edge.
#[derive(Debug, Clone, Copy)]
pub struct CoplanarGainLaw {
    pub k1: f64,
    pub k2: f64,
    two_gain: bool,
}

impl CoplanarGainLaw {
    /// `f3(j1, 0) = k f2(1, j1)`.
    pub fn gain45(k: f64) -> Self {
        Self {
            k1: k,
            k2: 0.0,
            two_gain: false,
        }
    }

    /// `f3(j1, 0) = k1 f2(1, j1) + k2 f4(j1, 1)`.
    pub fn gain46(k1: f64, k2: f64) -> Self {
        Self {
            k1,
            k2,
            two_gain: true,
        }
    }

    fn fill(&self, model: &KineticModel, trace: &OutgoingTrace, out: &mut FaceTrace) -> Result<()> {
        if !model.is_coplanar() {
            return Err(Error::NotCoplanar);
        }
        for b in out.0.blocks_mut() {
            b.values.iter_mut().for_each(|v| *v = 0.0);
        }
        // left edge outgoing f2 sits at (1, j2); its face lattice runs over j2
        let left_f2 = trace.values(Face::low(0), F2).ok_or(Error::NotCoplanar)?;
        // bottom edge outgoing f4 sits at (j1, 1)
        let bottom_f4 = trace.values(Face::low(1), F4).ok_or(Error::NotCoplanar)?;
        let bottom_in = out.values_mut(Face::low(1), F3).ok_or(Error::NotCoplanar)?;
        for (j1, dst) in bottom_in.iter_mut().enumerate() {
            *dst = self.k1 * left_f2[j1];
            if self.two_gain {
                *dst += self.k2 * bottom_f4[j1];
            }
        }
        Ok(())
    }
}

impl BoundaryLaw for CoplanarGainLaw {
    fn apply(&self, model: &KineticModel, trace: &OutgoingTrace, _step: u64) -> Result<FaceTrace> {
        let mut out = FaceTrace::zeros(model, *trace.grid());
        self.fill(model, trace, &mut out)?;
        Ok(out)
    }

    fn apply_into(
        &self,
        model: &KineticModel,
        trace: &OutgoingTrace,
        _step: u64,
        out: &mut FaceTrace,
    ) -> Result<()> {
        self.fill(model, trace, out)
    }

    fn name(&self) -> String {
        if self.two_gain {
            format!("gain46(k1={}, k2={})", self.k1, self.k2)
        } else {
            format!("gain45(k={})", self.k1)
        }
    }
}

/// Sparse linear map from the stacked outgoing trace to the stacked incoming
/// trace. Stacking order: faces `x1=0, x1=1, …, x_d=1`; components ascending;
/// face lattice lexicographic.
#[derive(Debug, Clone)]
pub struct GeneralLinearLaw {
    rows: usize,
    cols: usize,
    /// `(row, col, value)` sorted by row then column.
    entries: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Deserialize)]
struct Triplet {
    row: usize,
    col: usize,
    value: f64,
}

impl GeneralLinearLaw {
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::DimensionMismatch(format!(
                "entry ({r}, {c}) outside a {rows}x{cols} boundary map"
            )));
        }
        if entries.iter().any(|e| !e.2.is_finite()) {
            return Err(Error::InvalidParameter("non-finite boundary map entry".into()));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        Ok(Self { rows, cols, entries })
    }

    /// Shape taken from `model` on `grid`: rows = stacked incoming length,
    /// cols = stacked outgoing length.
    pub fn for_model(
        model: &KineticModel,
        grid: Grid,
        entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let rows = FaceTrace::zeros(model, grid).stacked_len();
        let cols = OutgoingTrace::zeros(model, grid).stacked_len();
        Self::new(rows, cols, entries)
    }

    /// Reads a `row,col,value` triplet CSV (header required, zero-based indices).
    pub fn from_csv(path: &Path, model: &KineticModel, grid: Grid) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut entries = Vec::new();
        for rec in reader.deserialize() {
            let t: Triplet = rec?;
            entries.push((t.row, t.col, t.value));
        }
        Self::for_model(model, grid, entries)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }
}

impl BoundaryLaw for GeneralLinearLaw {
    fn apply(&self, model: &KineticModel, trace: &OutgoingTrace, _step: u64) -> Result<FaceTrace> {
        let mut out = FaceTrace::zeros(model, *trace.grid());
        self.apply_into(model, trace, 0, &mut out)?;
        Ok(out)
    }

    fn apply_into(
        &self,
        _model: &KineticModel,
        trace: &OutgoingTrace,
        _step: u64,
        out: &mut FaceTrace,
    ) -> Result<()> {
        let input = trace.stack();
        if input.len() != self.cols || out.stacked_len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "boundary map is {}x{}, traces are {}x{}",
                self.rows,
                self.cols,
                out.stacked_len(),
                input.len()
            )));
        }
        let mut result = vec![0.0; self.rows];
        for &(r, c, v) in &self.entries {
            result[r] += v * input[c];
        }
        out.fill_from_stacked(&result)
    }

    fn name(&self) -> String {
        format!("linear({} entries)", self.entries.len())
    }
}

/// Δx-uniform sufficient bound on `|k|` for the single-gain coplanar law:
/// `sqrt((α/f2 + 1) / (α/f3 + 1))`.
pub fn admissible_gain_45(alpha: f64, s: &CoplanarSteadyState) -> f64 {
    ((alpha / s.density(2) + 1.0) / (alpha / s.density(3) + 1.0)).sqrt()
}

/// Δx-uniform sufficient bounds `(k1max, k2max)` for the two-gain law.
pub fn admissible_gains_46(alpha: f64, s: &CoplanarSteadyState) -> (f64, f64) {
    let denom = 2.0 * (alpha / s.density(3) + 1.0);
    let k1 = ((alpha / s.density(2) + 1.0) / denom).sqrt();
    let k2 = ((alpha / s.density(4) + 1.0) / denom).sqrt();
    (k1, k2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::coplanar_model;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference_state() -> CoplanarSteadyState {
        CoplanarSteadyState::new(1.0, [0.4, 0.3, 0.2, 0.6]).unwrap()
    }

    fn setup(n: usize) -> (KineticModel, Grid) {
        (coplanar_model(&reference_state(), 1.0).unwrap(), Grid::new(2, n).unwrap())
    }

    fn random_outgoing(model: &KineticModel, grid: Grid, seed: u64) -> OutgoingTrace {
        let mut t = OutgoingTrace::zeros(model, grid);
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let vals: Vec<f64> = (0..t.stacked_len())
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect();
        t.fill_from_stacked(&vals).unwrap();
        t
    }

    /// Builds the single- or two-gain coplanar law as explicit triplets.
    fn gain_triplets(model: &KineticModel, grid: Grid, k1: f64, k2: f64) -> Vec<(usize, usize, f64)> {
        let incoming = FaceTrace::zeros(model, grid);
        let outgoing = OutgoingTrace::zeros(model, grid);
        let offset = |fv: &FaceValues, face: Face, k: usize| {
            let mut at = 0;
            for b in fv.blocks() {
                if b.face == face {
                    let pos = b.components.iter().position(|&c| c == k).unwrap();
                    return at + pos * grid.face_count();
                }
                at += b.values.len();
            }
            unreachable!()
        };
        let row0 = offset(&incoming, Face::low(1), 2);
        let left = offset(&outgoing, Face::low(0), 1);
        let bottom = offset(&outgoing, Face::low(1), 3);
        let mut e = Vec::new();
        for j in 0..grid.face_count() {
            e.push((row0 + j, left + j, k1));
            if k2 != 0.0 {
                e.push((row0 + j, bottom + j, k2));
            }
        }
        e
    }

    #[test]
    fn outgoing_of_constant_field_is_constant() {
        let (m, g) = setup(5);
        let t = extract_outgoing(&Field::constant(g, &[1.0; 4]), &m);
        assert!(t.blocks().iter().all(|b| b.values.iter().all(|&v| v == 1.0)));
        assert!(extract_outgoing(&Field::zeros(g, 4), &m).is_zero());
        // each face carries exactly one outgoing coplanar component
        assert_eq!(t.stacked_len(), 4 * 4);
    }

    #[test]
    fn right_face_trace_indexing() {
        let (m, g) = setup(3);
        let mut f = Field::zeros(g, 4);
        for j in g.interior_indices() {
            f.set(0, &j, (10 * j[0] + j[1]) as f64);
        }
        let t = extract_outgoing(&f, &m);
        assert_eq!(t.values(Face::high(0), 0).unwrap(), &[21.0, 22.0]);
        assert!(t.values(Face::low(0), 0).is_none());
    }

    #[test]
    fn trivial_law_gives_zeros() {
        let (m, g) = setup(6);
        let out = TrivialLaw.apply(&m, &random_outgoing(&m, g, 3), 0).unwrap();
        assert!(out.is_zero());
        assert!(out.matches_model(&m));
        // f1 enters at x1=0, f2 at x1=1, f3 at x2=0, f4 at x2=1
        assert!(out.values(Face::low(0), 0).is_some());
        assert!(out.values(Face::high(0), 1).is_some());
        assert!(out.values(Face::low(1), 2).is_some());
        assert!(out.values(Face::high(1), 3).is_some());
    }

    #[test]
    fn gain_law_examples() {
        let (m, g) = setup(5);
        let ones = extract_outgoing(&Field::constant(g, &[1.0; 4]), &m);
        let out = CoplanarGainLaw::gain45(1.0).apply(&m, &ones, 0).unwrap();
        assert!(out.values(Face::low(1), 2).unwrap().iter().all(|&v| v == 1.0));
        assert!(out.values(Face::low(0), 0).unwrap().iter().all(|&v| v == 0.0));
        assert!(out.values(Face::high(1), 3).unwrap().iter().all(|&v| v == 0.0));

        let out = CoplanarGainLaw::gain46(1.0, 1.0).apply(&m, &ones, 0).unwrap();
        assert!(out.values(Face::low(1), 2).unwrap().iter().all(|&v| v == 2.0));
        let out = CoplanarGainLaw::gain46(1.0, -1.0).apply(&m, &ones, 0).unwrap();
        assert!(out.is_zero());
        let out = CoplanarGainLaw::gain45(0.0).apply(&m, &ones, 0).unwrap();
        assert!(out.is_zero());

        let half = extract_outgoing(&Field::constant(g, &[0.0, 0.5, 0.0, 0.0]), &m);
        let out = CoplanarGainLaw::gain45(2.0).apply(&m, &half, 0).unwrap();
        assert!(out.values(Face::low(1), 2).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bottom_feed_is_non_local() {
        let (m, g) = setup(4);
        let mut f = Field::zeros(g, 4);
        for j2 in 1..4 {
            f.set(1, &[1, j2], j2 as f64);
        }
        let out = CoplanarGainLaw::gain45(1.0).apply(&m, &extract_outgoing(&f, &m), 0).unwrap();
        assert_eq!(out.values(Face::low(1), 2).unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn gain_law_requires_coplanar_model() {
        let m = KineticModel::from_rows(&[vec![1.0], vec![-1.0]], &[vec![0.0; 2], vec![0.0; 2]], 1.0)
            .unwrap();
        let g = Grid::new(1, 4).unwrap();
        let t = OutgoingTrace::zeros(&m, g);
        let err = CoplanarGainLaw::gain45(1.0).apply(&m, &t, 0).unwrap_err();
        assert!(matches!(err, Error::NotCoplanar));
    }

    #[test]
    fn general_law_identity_and_zero() {
        let (m, g) = setup(5);
        let t = random_outgoing(&m, g, 11);
        let zero = GeneralLinearLaw::for_model(&m, g, vec![]).unwrap();
        assert!(zero.apply(&m, &t, 0).unwrap().is_zero());

        // same face, gain one: coplanar faces carry one incoming and one outgoing component
        let n = t.stacked_len();
        let id = GeneralLinearLaw::for_model(&m, g, (0..n).map(|i| (i, i, 1.0)).collect()).unwrap();
        let out = id.apply(&m, &t, 0).unwrap();
        assert_eq!(out.stack(), t.stack());

        let err = GeneralLinearLaw::for_model(&m, g, vec![(n, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn general_law_matches_dedicated_laws() {
        let (m, g) = setup(7);
        for (k1, k2) in [(1.0, 0.0), (0.7, -1.3)] {
            let general = GeneralLinearLaw::for_model(&m, g, gain_triplets(&m, g, k1, k2)).unwrap();
            let dedicated = if k2 == 0.0 {
                CoplanarGainLaw::gain45(k1)
            } else {
                CoplanarGainLaw::gain46(k1, k2)
            };
            for seed in 0..100 {
                let t = random_outgoing(&m, g, seed);
                let a = general.apply(&m, &t, 0).unwrap().stack();
                let b = dedicated.apply(&m, &t, 0).unwrap().stack();
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() <= 1e-13);
                }
            }
        }
    }

    #[test]
    fn general_law_from_csv() {
        let (m, g) = setup(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        std::fs::write(&path, "row,col,value\n4,0,2.5\n").unwrap();
        let law = GeneralLinearLaw::from_csv(&path, &m, g).unwrap();
        assert_eq!(law.shape(), (8, 8));
        assert_eq!(law.entries(), &[(4, 0, 2.5)]);
    }

    #[test]
    fn admissible_gain_examples() {
        let s = reference_state();
        assert_relative_eq!(admissible_gain_45(10.0, &s), 0.820489253055203, max_relative = 1e-12);
        let (k1, k2) = admissible_gains_46(10.0, &s);
        assert_relative_eq!(k1, 0.5801735147260193, max_relative = 1e-12);
        assert_relative_eq!(k2, 0.4161761818978652, max_relative = 1e-12);
        assert_relative_eq!(admissible_gain_45(1e9, &s), (0.2f64 / 0.3).sqrt(), max_relative = 1e-4);

        let u = CoplanarSteadyState::new(1.0, [0.25; 4]).unwrap();
        assert_relative_eq!(admissible_gain_45(3.0, &u), 1.0, max_relative = 1e-15);
        let (a, b) = admissible_gains_46(3.0, &u);
        assert_relative_eq!(a, std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-15);
        assert_relative_eq!(b, std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-15);
    }

    proptest! {
        #[test]
        fn laws_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, s1 in 0u64..1000, s2 in 0u64..1000) {
            let (m, g) = setup(5);
            let t1 = random_outgoing(&m, g, s1);
            let t2 = random_outgoing(&m, g, s2);
            let mut mix = t1.clone();
            mix.combine(a, &t2, b);
            let laws: Vec<Box<dyn BoundaryLaw>> = vec![
                Box::new(TrivialLaw),
                Box::new(CoplanarGainLaw::gain45(1.3)),
                Box::new(CoplanarGainLaw::gain46(0.4, -2.0)),
                Box::new(GeneralLinearLaw::for_model(&m, g, gain_triplets(&m, g, 0.9, 0.2)).unwrap()),
            ];
            for law in &laws {
                let lhs = law.apply(&m, &mix, 0).unwrap();
                let mut rhs = law.apply(&m, &t1, 0).unwrap();
                rhs.combine(a, &law.apply(&m, &t2, 0).unwrap(), b);
                prop_assert!(lhs.matches_model(&m));
                for (x, y) in lhs.stack().iter().zip(rhs.stack()) {
                    prop_assert!((x - y).abs() <= 1e-13);
                }
            }
        }

        #[test]
        fn admissible_gain_relation(alpha in 0.01f64..1e4) {
            let s = reference_state();
            let (k1, _) = admissible_gains_46(alpha, &s);
            prop_assert!((k1 - admissible_gain_45(alpha, &s) / 2f64.sqrt()).abs() <= 1e-14);
        }
    }
}
