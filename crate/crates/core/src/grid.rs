//! Grids, field slices and ghost-cell padding.

use serde::{Deserialize, Serialize};

use crate::error::{NpdeError, Result};

/// How ghost cells outside the grid are filled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundaryCondition {
    /// Ghost cells hold a fixed value.
    Dirichlet { value: f64 },
    /// Wrap around.
    Periodic,
    /// Reflect about the edge cell without repeating it.
    Mirror,
    /// Replicate the edge cell.
    Extend,
}

/// Where a (possibly out-of-range) index reads its value from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Ghost {
    Node(usize),
    Fixed(f64),
}

impl BoundaryCondition {
    pub fn dirichlet(value: f64) -> Self {
        BoundaryCondition::Dirichlet { value }
    }

    /// Resolve index `i` on an axis of length `n`.
    pub(crate) fn resolve(&self, i: isize, n: usize) -> Ghost {
        if (0..n as isize).contains(&i) {
            return Ghost::Node(i as usize);
        }
        match *self {
            BoundaryCondition::Dirichlet { value } => Ghost::Fixed(value),
            BoundaryCondition::Periodic => Ghost::Node(i.rem_euclid(n as isize) as usize),
            BoundaryCondition::Extend => Ghost::Node(i.clamp(0, n as isize - 1) as usize),
            BoundaryCondition::Mirror => {
                if n == 1 {
                    return Ghost::Node(0);
                }
                let period = 2 * (n as isize - 1);
                let m = i.rem_euclid(period);
                let m = if m < n as isize { m } else { period - m };
                Ghost::Node(m as usize)
            }
        }
    }

    /// Index used for coefficient fields (A, B). A Dirichlet boundary fixes
    /// the field, not the medium, so coefficients are extended instead.
    pub(crate) fn resolve_coefficient(&self, i: isize, n: usize) -> usize {
        match self {
            BoundaryCondition::Dirichlet { .. } => i.clamp(0, n as isize - 1) as usize,
            other => match other.resolve(i, n) {
                Ghost::Node(j) => j,
                Ghost::Fixed(_) => unreachable!("only dirichlet yields fixed ghosts"),
            },
        }
    }

    pub(crate) fn resolve_2d(&self, row: isize, col: isize, rows: usize, cols: usize) -> Ghost {
        match (self.resolve(row, rows), self.resolve(col, cols)) {
            (Ghost::Node(r), Ghost::Node(c)) => Ghost::Node(r * cols + c),
            (Ghost::Fixed(v), _) | (_, Ghost::Fixed(v)) => Ghost::Fixed(v),
        }
    }

    pub(crate) fn resolve_coefficient_2d(
        &self,
        row: isize,
        col: isize,
        rows: usize,
        cols: usize,
    ) -> usize {
        self.resolve_coefficient(row, rows) * cols + self.resolve_coefficient(col, cols)
    }
}

/// Array shape of one field slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    D1(usize),
    D2(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::D1(n) => n,
            Shape::D2(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_2d(&self) -> bool {
        matches!(self, Shape::D2(..))
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::D1(n) => write!(f, "[{n}]"),
            Shape::D2(r, c) => write!(f, "[{r}x{c}]"),
        }
    }
}

/// Spatial and temporal discretization. 2D grids are square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    shape: Shape,
    h: f64,
    k: f64,
    bc: BoundaryCondition,
}

fn check_steps(h: f64, k: f64) -> Result<()> {
    if !(h.is_finite() && h > 0.0) {
        return Err(NpdeError::invalid("h", format!("must be finite and > 0, got {h}")));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(NpdeError::invalid("k", format!("must be finite and > 0, got {k}")));
    }
    Ok(())
}

fn check_bc(bc: &BoundaryCondition) -> Result<()> {
    if let BoundaryCondition::Dirichlet { value } = bc {
        if !value.is_finite() {
            return Err(NpdeError::invalid("bc_value", "must be finite"));
        }
    }
    Ok(())
}

/// Build a validated 1D grid.
pub fn make_grid(n_points: usize, h: f64, k: f64, bc: BoundaryCondition) -> Result<GridSpec> {
    GridSpec::new_1d(n_points, h, k, bc)
}

impl GridSpec {
    pub fn new_1d(n_points: usize, h: f64, k: f64, bc: BoundaryCondition) -> Result<Self> {
        if n_points < 3 {
            return Err(NpdeError::GridTooSmall(n_points));
        }
        check_steps(h, k)?;
        check_bc(&bc)?;
        Ok(GridSpec {
            shape: Shape::D1(n_points),
            h,
            k,
            bc,
        })
    }

    pub fn new_2d(n_points: usize, h: f64, k: f64, bc: BoundaryCondition) -> Result<Self> {
        if n_points < 3 {
            return Err(NpdeError::GridTooSmall(n_points));
        }
        check_steps(h, k)?;
        check_bc(&bc)?;
        Ok(GridSpec {
            shape: Shape::D2(n_points, n_points),
            h,
            k,
            bc,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dimensionality(&self) -> usize {
        if self.shape.is_2d() {
            2
        } else {
            1
        }
    }

    /// Points per axis.
    pub fn n_points(&self) -> usize {
        match self.shape {
            Shape::D1(n) | Shape::D2(n, _) => n,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    /// Mesh ratio k/h².
    pub fn r(&self) -> f64 {
        self.k / (self.h * self.h)
    }

    /// Same grid with a different time step.
    pub fn with_k(&self, k: f64) -> Result<Self> {
        check_steps(self.h, k)?;
        Ok(GridSpec { k, ..*self })
    }

    pub fn with_bc(&self, bc: BoundaryCondition) -> Result<Self> {
        check_bc(&bc)?;
        Ok(GridSpec { bc, ..*self })
    }

    /// Node coordinates along one axis, starting at 0.
    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.n_points()).map(|i| i as f64 * self.h).collect()
    }
}

/// One time slice of a scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    shape: Shape,
    values: Vec<f64>,
}

impl FieldState {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(NpdeError::shape(shape, format!("{} values", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NpdeError::NonFinite(format!("field entry {i}")));
        }
        Ok(FieldState { shape, values })
    }

    pub fn from_1d(values: Vec<f64>) -> Result<Self> {
        FieldState::new(Shape::D1(values.len()), values)
    }

    pub fn from_2d(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        FieldState::new(Shape::D2(rows, cols), values)
    }

    pub fn constant(shape: Shape, value: f64) -> Result<Self> {
        FieldState::new(shape, vec![value; shape.len()])
    }

    pub fn zeros(shape: Shape) -> Self {
        FieldState {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    /// Sample `f(x)` (1D) at the grid nodes.
    pub fn sample_1d(grid: &GridSpec, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.coordinates().into_iter().map(f).collect();
        FieldState::new(grid.shape(), values)
    }

    /// Sample `f(x, y)` at the nodes of a 2D grid; x runs along columns.
    pub fn sample_2d(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let coords = grid.coordinates();
        let mut values = Vec::with_capacity(grid.len());
        for &y in &coords {
            for &x in &coords {
                values.push(f(x, y));
            }
        }
        FieldState::new(grid.shape(), values)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        match self.shape {
            Shape::D1(_) => self.values[col],
            Shape::D2(_, c) => self.values[row * c + col],
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / self.len() as f64
    }

    pub fn max_abs_diff(&self, other: &FieldState) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn ensure_shape(&self, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(NpdeError::shape(shape, self.shape));
        }
        Ok(())
    }

    /// Read through the boundary condition; `i` may lie outside the grid.
    pub(crate) fn read_1d(&self, i: isize, bc: &BoundaryCondition) -> f64 {
        match bc.resolve(i, self.len()) {
            Ghost::Node(j) => self.values[j],
            Ghost::Fixed(v) => v,
        }
    }

    pub(crate) fn read_2d(&self, row: isize, col: isize, bc: &BoundaryCondition) -> f64 {
        let (rows, cols) = match self.shape {
            Shape::D2(r, c) => (r, c),
            Shape::D1(n) => (1, n),
        };
        match bc.resolve_2d(row, col, rows, cols) {
            Ghost::Node(j) => self.values[j],
            Ghost::Fixed(v) => v,
        }
    }

    /// Drop `width` ghost cells per side (inverse of [`pad`]).
    pub fn crop(&self, width: usize) -> Result<FieldState> {
        match self.shape {
            Shape::D1(n) => {
                if n < 2 * width {
                    return Err(NpdeError::invalid("width", "larger than the field"));
                }
                FieldState::from_1d(self.values[width..n - width].to_vec())
            }
            Shape::D2(r, c) => {
                if r < 2 * width || c < 2 * width {
                    return Err(NpdeError::invalid("width", "larger than the field"));
                }
                let mut out = Vec::with_capacity((r - 2 * width) * (c - 2 * width));
                for row in width..r - width {
                    out.extend_from_slice(&self.values[row * c + width..row * c + c - width]);
                }
                FieldState::from_2d(r - 2 * width, c - 2 * width, out)
            }
        }
    }
}

/// Extend a field by `width` ghost cells on every side.
pub fn pad(field: &FieldState, bc: BoundaryCondition, width: usize) -> Result<FieldState> {
    if width == 0 {
        return Err(NpdeError::invalid("width", "must be at least 1"));
    }
    let w = width as isize;
    match field.shape() {
        Shape::D1(n) => {
            let values = (-w..n as isize + w).map(|i| field.read_1d(i, &bc)).collect();
            FieldState::from_1d(values)
        }
        Shape::D2(rows, cols) => {
            let mut values = Vec::with_capacity((rows + 2 * width) * (cols + 2 * width));
            for r in -w..rows as isize + w {
                for c in -w..cols as isize + w {
                    values.push(field.read_2d(r, c, &bc));
                }
            }
            FieldState::from_2d(rows + 2 * width, cols + 2 * width, values)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f(v: &[f64]) -> FieldState {
        FieldState::from_1d(v.to_vec()).unwrap()
    }

    #[test]
    fn make_grid_echoes_inputs() {
        let g = make_grid(5, 1.0, 0.1, BoundaryCondition::Periodic).unwrap();
        assert_eq!(g.n_points(), 5);
        assert_eq!(g.h(), 1.0);
        assert_eq!(g.k(), 0.1);
        assert_eq!(g.bc(), BoundaryCondition::Periodic);
    }

    #[test]
    fn make_grid_rejects_small_and_bad_steps() {
        assert_eq!(
            make_grid(2, 1.0, 0.1, BoundaryCondition::Periodic),
            Err(NpdeError::GridTooSmall(2))
        );
        assert!(make_grid(5, 0.0, 0.1, BoundaryCondition::Periodic).is_err());
        assert!(make_grid(5, 1.0, -0.1, BoundaryCondition::Periodic).is_err());
        assert!(make_grid(5, f64::NAN, 0.1, BoundaryCondition::Periodic).is_err());
        assert!(make_grid(5, 1.0, f64::INFINITY, BoundaryCondition::Periodic).is_err());
    }

    #[test]
    fn mesh_ratio() {
        let g = make_grid(100, 0.01, 2.5e-5, BoundaryCondition::dirichlet(0.0)).unwrap();
        assert!((g.r() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pad_kinds() {
        let x = f(&[1.0, 2.0, 3.0]);
        let p = |bc| pad(&x, bc, 1).unwrap().into_values();
        assert_eq!(p(BoundaryCondition::Periodic), vec![3.0, 1.0, 2.0, 3.0, 1.0]);
        assert_eq!(p(BoundaryCondition::dirichlet(0.0)), vec![0.0, 1.0, 2.0, 3.0, 0.0]);
        assert_eq!(p(BoundaryCondition::Mirror), vec![2.0, 1.0, 2.0, 3.0, 2.0]);
        assert_eq!(p(BoundaryCondition::Extend), vec![1.0, 1.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn pad_rejects_zero_width() {
        assert!(pad(&f(&[1.0, 2.0, 3.0]), BoundaryCondition::Periodic, 0).is_err());
    }

    #[test]
    fn wide_mirror_keeps_reflecting() {
        let x = f(&[1.0, 2.0, 3.0]);
        let p = pad(&x, BoundaryCondition::Mirror, 3).unwrap();
        assert_eq!(p.values(), &[2.0, 3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn pad_2d_corners() {
        let x = FieldState::from_2d(3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let p = pad(&x, BoundaryCondition::Periodic, 1).unwrap();
        assert_eq!(p.shape(), Shape::D2(5, 5));
        assert_eq!(p.at(0, 0), 9.0);
        assert_eq!(p.at(4, 4), 1.0);
        let d = pad(&x, BoundaryCondition::dirichlet(-1.0), 1).unwrap();
        assert_eq!(d.at(0, 2), -1.0);
        assert_eq!(d.at(2, 2), 5.0);
    }

    #[test]
    fn field_rejects_non_finite() {
        assert!(FieldState::from_1d(vec![1.0, f64::NAN]).is_err());
        assert!(FieldState::new(Shape::D2(2, 2), vec![0.0; 3]).is_err());
    }

    fn bc_strategy() -> impl Strategy<Value = BoundaryCondition> {
        prop_oneof![
            Just(BoundaryCondition::Periodic),
            Just(BoundaryCondition::Mirror),
            Just(BoundaryCondition::Extend),
            (-5.0..5.0f64).prop_map(BoundaryCondition::dirichlet),
        ]
    }

    proptest! {
        #[test]
        fn pad_then_crop_is_identity(
            v in prop::collection::vec(-10.0..10.0f64, 3..20),
            w in 1usize..6,
            bc in bc_strategy(),
        ) {
            let x = f(&v);
            let back = pad(&x, bc, w).unwrap().crop(w).unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn periodic_pad_composes(
            v in prop::collection::vec(-10.0..10.0f64, 3..20),
            a in 1usize..5,
            b in 1usize..5,
        ) {
            let x = f(&v);
            let bc = BoundaryCondition::Periodic;
            let twice = pad(&pad(&x, bc, a).unwrap(), bc, b).unwrap();
            let once = pad(&x, bc, a + b).unwrap();
            // interior of width a+b ghosts around the original
            prop_assert_eq!(twice.crop(a + b).unwrap(), once.crop(a + b).unwrap());
            prop_assert_eq!(&twice.values()[b..b + a], &once.values()[b..b + a]);
        }
    }
}
