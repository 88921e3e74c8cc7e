//! Discrete differential operators.
//!
//! Fixed Laplacian stencils, the node-centred variable-coefficient stencil
//! `(1/h²)[A(j-1), -2A(j), A(j+1)]`, and the elliptic operator
//! `O_L u = Δ(A u) + B ∂u + C(u)` built from them.

use serde::{Deserialize, Serialize};

use crate::error::{NpdeError, Result};
use crate::grid::{BoundaryCondition, FieldState, GridSpec, Shape};
use crate::solver::ReactionSpec;

/// Three-tap 1D stencil `[left, center, right]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stencil1D {
    taps: [f64; 3],
}

/// 3×3 stencil, row-major; `taps[1][1]` is the center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stencil2D {
    taps: [[f64; 3]; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stencil {
    D1(Stencil1D),
    D2(Stencil2D),
}

impl Stencil1D {
    pub fn new(taps: [f64; 3]) -> Result<Self> {
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(NpdeError::NonFinite("stencil taps".into()));
        }
        Ok(Stencil1D { taps })
    }

    pub fn taps(&self) -> [f64; 3] {
        self.taps
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Stencil1D::new(self.taps.map(|t| t * factor))
    }

    /// `out_j = Σ_i taps_i · padded(field)_{j+i-1}`.
    pub fn apply(&self, field: &FieldState, bc: BoundaryCondition) -> Result<FieldState> {
        let Shape::D1(n) = field.shape() else {
            return Err(NpdeError::shape("1D field", field.shape()));
        };
        let [l, c, r] = self.taps;
        let out = (0..n as isize)
            .map(|j| l * field.read_1d(j - 1, &bc) + c * field.read_1d(j, &bc) + r * field.read_1d(j + 1, &bc))
            .collect();
        FieldState::new(field.shape(), out)
    }
}

impl Stencil2D {
    pub fn new(taps: [[f64; 3]; 3]) -> Result<Self> {
        if taps.iter().flatten().any(|t| !t.is_finite()) {
            return Err(NpdeError::NonFinite("stencil taps".into()));
        }
        Ok(Stencil2D { taps })
    }

    pub fn zeros() -> Self {
        Stencil2D { taps: [[0.0; 3]; 3] }
    }

    pub fn taps(&self) -> [[f64; 3]; 3] {
        self.taps
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().flatten().sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Stencil2D::new(self.taps.map(|row| row.map(|t| t * factor)))
    }

    pub fn apply(&self, field: &FieldState, bc: BoundaryCondition) -> Result<FieldState> {
        let Shape::D2(rows, cols) = field.shape() else {
            return Err(NpdeError::shape("2D field", field.shape()));
        };
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                let mut acc = 0.0;
                for (dr, row) in self.taps.iter().enumerate() {
                    for (dc, &t) in row.iter().enumerate() {
                        if t != 0.0 {
                            acc += t * field.read_2d(r + dr as isize - 1, c + dc as isize - 1, &bc);
                        }
                    }
                }
                out.push(acc);
            }
        }
        FieldState::new(field.shape(), out)
    }
}

/// `(1/h²)[1, -2, 1]`.
pub fn laplacian_1d(h: f64) -> Result<Stencil1D> {
    if !(h.is_finite() && h > 0.0) {
        return Err(NpdeError::invalid("h", "must be finite and > 0"));
    }
    let s = 1.0 / (h * h);
    Stencil1D::new([s, -2.0 * s, s])
}

/// Five-point Laplacian (unit spacing).
pub fn laplacian_2d_5pt() -> Stencil2D {
    Stencil2D {
        taps: [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]],
    }
}

/// Nine-point Laplacian including the diagonals (unit spacing).
pub fn laplacian_2d_9pt() -> Stencil2D {
    Stencil2D {
        taps: [[0.25, 0.5, 0.25], [0.5, -3.0, 0.5], [0.25, 0.5, 0.25]],
    }
}

/// `(1/h²)[A_left, -2 A_center, A_right]`.
pub fn variable_stencil_1d(a_left: f64, a_center: f64, a_right: f64, h: f64) -> Result<Stencil1D> {
    if !(h.is_finite() && h > 0.0) {
        return Err(NpdeError::invalid("h", "must be finite and > 0"));
    }
    let s = 1.0 / (h * h);
    Stencil1D::new([a_left * s, -2.0 * a_center * s, a_right * s])
}

pub fn apply_stencil(field: &FieldState, stencil: &Stencil, bc: BoundaryCondition) -> Result<FieldState> {
    match stencil {
        Stencil::D1(s) => s.apply(field, bc),
        Stencil::D2(s) => s.apply(field, bc),
    }
}

/// Diffusion (A), convection (B) and reaction (C) of the elliptic operator.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub reaction: ReactionSpec,
}

impl EllipticCoefficients {
    pub fn new(a: Vec<f64>, b: Vec<f64>, reaction: ReactionSpec) -> Self {
        EllipticCoefficients { a, b, reaction }
    }

    /// Constant A, zero B.
    pub fn diffusion(grid: &GridSpec, a: f64, reaction: ReactionSpec) -> Self {
        EllipticCoefficients {
            a: vec![a; grid.len()],
            b: vec![0.0; grid.len()],
            reaction,
        }
    }

    /// Per-node A, zero B.
    pub fn with_diffusion_field(a: Vec<f64>, reaction: ReactionSpec) -> Self {
        let b = vec![0.0; a.len()];
        EllipticCoefficients { a, b, reaction }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let n = grid.len();
        if self.a.len() != n {
            return Err(NpdeError::shape(format!("A with {n} entries"), self.a.len()));
        }
        if self.b.len() != n {
            return Err(NpdeError::shape(format!("B with {n} entries"), self.b.len()));
        }
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(NpdeError::NonFinite("coefficients".into()));
        }
        if grid.shape().is_2d() && self.b.iter().any(|&v| v != 0.0) {
            return Err(NpdeError::Unsupported(
                "convection (B) is only supported on 1D grids".into(),
            ));
        }
        self.reaction.validate(n)
    }

    pub fn has_convection(&self) -> bool {
        self.b.iter().any(|&v| v != 0.0)
    }

    pub fn max_a(&self) -> f64 {
        self.a.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_a(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `O_L u` = Δ_h(A ⊙ u) + B ⊙ (u_{j+1} - u_{j-1})/(2h) + C(u).
///
/// On 2D grids the nine-point Laplacian is used and B must vanish.
pub fn elliptic_apply(field: &FieldState, coeffs: &EllipticCoefficients, grid: &GridSpec) -> Result<FieldState> {
    field.ensure_shape(grid.shape())?;
    coeffs.validate(grid)?;
    let bc = grid.bc();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let a = &coeffs.a;
    let out = match grid.shape() {
        Shape::D1(n) => {
            let inv_2h = 0.5 / grid.h();
            (0..n)
                .map(|j| {
                    let ji = j as isize;
                    let al = a[bc.resolve_coefficient(ji - 1, n)];
                    let ar = a[bc.resolve_coefficient(ji + 1, n)];
                    let ul = field.read_1d(ji - 1, &bc);
                    let ur = field.read_1d(ji + 1, &bc);
                    let u = field.values()[j];
                    let diffusion = (al * ul - 2.0 * a[j] * u + ar * ur) * inv_h2;
                    let convection = coeffs.b[j] * (ur - ul) * inv_2h;
                    diffusion + convection + coeffs.reaction.term(u, j)
                })
                .collect()
        }
        Shape::D2(rows, cols) => {
            let lap = nine_point_weighted(field, a, bc, rows, cols);
            lap.into_iter()
                .enumerate()
                .map(|(j, d)| d * inv_h2 + coeffs.reaction.term(field.values()[j], j))
                .collect()
        }
    };
    FieldState::new(field.shape(), out)
}

/// Σ_taps s · (A u)_neighbor with the unit-spacing nine-point stencil.
pub(crate) fn nine_point_weighted(
    field: &FieldState,
    a: &[f64],
    bc: BoundaryCondition,
    rows: usize,
    cols: usize,
) -> Vec<f64> {
    let taps = laplacian_2d_9pt().taps;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let mut acc = 0.0;
            for (dr, row) in taps.iter().enumerate() {
                for (dc, &t) in row.iter().enumerate() {
                    let rr = r + dr as isize - 1;
                    let cc = c + dc as isize - 1;
                    let coeff = a[bc.resolve_coefficient_2d(rr, cc, rows, cols)];
                    acc += t * coeff * field.read_2d(rr, cc, &bc);
                }
            }
            out.push(acc);
        }
    }
    out
}
