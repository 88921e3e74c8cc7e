//! Time stepping for the neural PDE.
//!
//! One-component fields are advanced with forward Euler (any dimension) or
//! backward Euler (1D, diffusion implicit and reaction explicit). Two-component
//! Turing systems use forward Euler with the nine-point Laplacian.

use serde::{Deserialize, Serialize};

use crate::error::{NpdeError, Result};
use crate::grid::{FieldState, Ghost, GridSpec, Shape};
use crate::linalg::Tridiagonal;
use crate::stencil::{elliptic_apply, laplacian_2d_9pt, nine_point_weighted, EllipticCoefficients};
use crate::grid::BoundaryCondition;

/// Pointwise nonlinearity. Used as the reaction term `C(u)` by the solver and
/// as the activation of generated dense blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReactionSpec {
    #[default]
    None,
    /// `r u (1 - u)`
    Fisher { rate: f64 },
    /// `1 / (1 + exp(-gain u))`
    Sigmoid { gain: f64 },
    /// `c u`
    Linear { rate: f64 },
    /// Fixed per-node source, e.g. a heating term.
    Source { values: Vec<f64> },
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ReactionSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        let ok = match self {
            ReactionSpec::None => true,
            ReactionSpec::Fisher { rate } | ReactionSpec::Linear { rate } => rate.is_finite(),
            ReactionSpec::Sigmoid { gain } => gain.is_finite(),
            ReactionSpec::Source { values } => {
                if values.len() != n {
                    return Err(NpdeError::shape(format!("source with {n} entries"), values.len()));
                }
                values.iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(NpdeError::NonFinite("reaction parameters".into()))
        }
    }

    /// Reaction term `C(u)` at node `idx`.
    pub fn term(&self, u: f64, idx: usize) -> f64 {
        match self {
            ReactionSpec::None => 0.0,
            ReactionSpec::Fisher { rate } => rate * u * (1.0 - u),
            ReactionSpec::Sigmoid { gain } => sigmoid(gain * u),
            ReactionSpec::Linear { rate } => rate * u,
            ReactionSpec::Source { values } => values[idx],
        }
    }

    /// `dC/du`.
    pub fn term_derivative(&self, u: f64, _idx: usize) -> f64 {
        match self {
            ReactionSpec::None | ReactionSpec::Source { .. } => 0.0,
            ReactionSpec::Fisher { rate } => rate * (1.0 - 2.0 * u),
            ReactionSpec::Sigmoid { gain } => {
                let s = sigmoid(gain * u);
                gain * s * (1.0 - s)
            }
            ReactionSpec::Linear { rate } => *rate,
        }
    }

    /// Activation view: `None` is the identity, a source shifts by its value.
    pub fn activate(&self, x: f64, idx: usize) -> f64 {
        match self {
            ReactionSpec::None => x,
            ReactionSpec::Source { values } => x + values[idx],
            other => other.term(x, idx),
        }
    }

    pub fn activate_derivative(&self, x: f64, idx: usize) -> f64 {
        match self {
            ReactionSpec::None | ReactionSpec::Source { .. } => 1.0,
            other => other.term_derivative(x, idx),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, ReactionSpec::None)
    }
}

/// Reaction pair `(f(U, V), g(U, V))` of a two-component system.
#[derive(Debug, Clone)]
pub enum TwoComponentReaction {
    /// `f = -UV² + F(1-U)`, `g = UV² - (F + kill)V`.
    GrayScott { feed: f64, kill: f64 },
    Custom {
        name: String,
        f: fn(f64, f64) -> f64,
        g: fn(f64, f64) -> f64,
    },
}

impl TwoComponentReaction {
    pub fn gray_scott(feed: f64, kill: f64) -> Self {
        TwoComponentReaction::GrayScott { feed, kill }
    }

    pub fn none() -> Self {
        TwoComponentReaction::Custom {
            name: "none".into(),
            f: |_, _| 0.0,
            g: |_, _| 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> (f64, f64) {
        match self {
            TwoComponentReaction::GrayScott { feed, kill } => {
                let uvv = u * v * v;
                (-uvv + feed * (1.0 - u), uvv - (feed + kill) * v)
            }
            TwoComponentReaction::Custom { f, g, .. } => (f(u, v), g(u, v)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Explicit,
    Implicit,
}

/// Ordered time slices; slice 0 is the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: GridSpec,
    pub slices: Vec<FieldState>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn initial(&self) -> &FieldState {
        &self.slices[0]
    }

    pub fn last(&self) -> &FieldState {
        self.slices.last().expect("trajectory is never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CflStatus {
    Stable,
    Unstable { max_r_a: f64 },
    /// Some diffusion coefficient is negative (backward diffusion).
    NegativeDiffusion { min_a: f64 },
}

impl CflStatus {
    pub fn is_stable(&self) -> bool {
        matches!(self, CflStatus::Stable)
    }
}

/// Explicit-Euler stability: `r · max A ≤ 1/2` in 1D, `≤ 1/4` in 2D.
pub fn cfl_check(coeffs: &EllipticCoefficients, grid: &GridSpec) -> CflStatus {
    let min_a = coeffs.min_a();
    if min_a < 0.0 {
        return CflStatus::NegativeDiffusion { min_a };
    }
    let limit = if grid.shape().is_2d() { 0.25 } else { 0.5 };
    let max_r_a = grid.r() * coeffs.max_a().max(0.0);
    // allow for rounding in k/h²
    if max_r_a <= limit * (1.0 + 1e-12) {
        CflStatus::Stable
    } else {
        CflStatus::Unstable { max_r_a }
    }
}

fn finite_output(shape: Shape, values: Vec<f64>, what: &str) -> Result<FieldState> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(NpdeError::NonFinite(what.into()));
    }
    FieldState::new(shape, values)
}

/// One forward-Euler step of `u_t = O_L u`.
///
/// In 1D the diffusion part is
/// `u_j' = (1 - 2rA_j) u_j + r A_{j-1} u_{j-1} + r A_{j+1} u_{j+1}`.
pub fn step_explicit(field: &FieldState, coeffs: &EllipticCoefficients, grid: &GridSpec) -> Result<FieldState> {
    field.ensure_shape(grid.shape())?;
    coeffs.validate(grid)?;
    let bc = grid.bc();
    let r = grid.r();
    let k = grid.k();
    let u = field.values();
    let a = &coeffs.a;
    let out = match grid.shape() {
        Shape::D1(n) => {
            let inv_2h = 0.5 / grid.h();
            let convect = coeffs.has_convection();
            (0..n)
                .map(|j| {
                    let ji = j as isize;
                    let ul = field.read_1d(ji - 1, &bc);
                    let ur = field.read_1d(ji + 1, &bc);
                    let al = a[bc.resolve_coefficient(ji - 1, n)];
                    let ar = a[bc.resolve_coefficient(ji + 1, n)];
                    let diffused = (1.0 - 2.0 * r * a[j]) * u[j] + r * al * ul + r * ar * ur;
                    let mut rate = coeffs.reaction.term(u[j], j);
                    if convect {
                        rate += coeffs.b[j] * (ur - ul) * inv_2h;
                    }
                    diffused + k * rate
                })
                .collect()
        }
        Shape::D2(rows, cols) => nine_point_weighted(field, a, bc, rows, cols)
            .into_iter()
            .enumerate()
            .map(|(j, lap)| u[j] + r * lap + k * coeffs.reaction.term(u[j], j))
            .collect(),
    };
    finite_output(grid.shape(), out, "explicit step output")
}

/// Assemble `(1 + 2rA_j) x_j - r A_{j-1} x_{j-1} - r A_{j+1} x_{j+1}` with
/// ghost contributions. Returns the matrix and the constant ghost terms that
/// belong on the right-hand side.
fn implicit_system(a: &[f64], grid: &GridSpec) -> (Tridiagonal, Vec<f64>) {
    let n = a.len();
    let r = grid.r();
    let bc = grid.bc();
    let mut m = Tridiagonal {
        sub: vec![0.0; n],
        diag: a.iter().map(|&aj| 1.0 + 2.0 * r * aj).collect(),
        sup: vec![0.0; n],
    };
    let mut ghost_rhs = vec![0.0; n];
    for j in 0..n {
        for off in [-1isize, 1] {
            let idx = j as isize + off;
            let coeff = r * a[bc.resolve_coefficient(idx, n)];
            match bc.resolve(idx, n) {
                Ghost::Fixed(v) => ghost_rhs[j] += coeff * v,
                Ghost::Node(col) => {
                    if col == j {
                        m.diag[j] -= coeff;
                    } else if off == -1 && col + 1 == j {
                        m.sub[j] -= coeff;
                    } else if off == 1 && col == j + 1 {
                        m.sup[j] -= coeff;
                    } else if j == 0 && col == n - 1 {
                        m.sub[0] -= coeff;
                    } else if j == n - 1 && col == 0 {
                        m.sup[n - 1] -= coeff;
                    } else if off == -1 {
                        // mirror ghost of row 0 lands on column 1
                        m.sup[j] -= coeff;
                    } else {
                        m.sub[j] -= coeff;
                    }
                }
            }
        }
    }
    (m, ghost_rhs)
}

/// One backward-Euler step: diffusion implicit, reaction from the old slice.
///
/// Solves `u_j + k C(u_j) = (1 + 2rA_j) x_j - r A_{j-1} x_{j-1} - r A_{j+1} x_{j+1}`.
pub fn step_implicit(field: &FieldState, coeffs: &EllipticCoefficients, grid: &GridSpec) -> Result<FieldState> {
    field.ensure_shape(grid.shape())?;
    coeffs.validate(grid)?;
    if grid.shape().is_2d() {
        return Err(NpdeError::Unsupported("implicit scheme is 1D only".into()));
    }
    if coeffs.has_convection() {
        return Err(NpdeError::Unsupported("implicit scheme requires B = 0".into()));
    }
    let (m, ghost) = implicit_system(&coeffs.a, grid);
    let k = grid.k();
    let rhs: Vec<f64> = field
        .values()
        .iter()
        .enumerate()
        .map(|(j, &u)| u + k * coeffs.reaction.term(u, j) + ghost[j])
        .collect();
    let x = if matches!(grid.bc(), BoundaryCondition::Periodic) {
        m.solve_cyclic(&rhs)?
    } else {
        m.solve(&rhs)?
    };
    finite_output(grid.shape(), x, "implicit step output")
}

/// Max-norm residual of the implicit system for a candidate `next` slice.
pub fn implicit_residual(
    prev: &FieldState,
    next: &FieldState,
    coeffs: &EllipticCoefficients,
    grid: &GridSpec,
) -> Result<f64> {
    prev.ensure_shape(grid.shape())?;
    next.ensure_shape(grid.shape())?;
    let (m, ghost) = implicit_system(&coeffs.a, grid);
    let cyclic = matches!(grid.bc(), BoundaryCondition::Periodic);
    let lhs = m.mul(next.values(), cyclic);
    let k = grid.k();
    Ok(prev
        .values()
        .iter()
        .enumerate()
        .map(|(j, &u)| (lhs[j] - ghost[j] - u - k * coeffs.reaction.term(u, j)).abs())
        .fold(0.0, f64::max))
}

/// `U' = U + k(Du ∇²U + f)`, `V' = V + k(Dv ∇²V + g)` with the nine-point Laplacian.
pub fn step_two_component(
    u: &FieldState,
    v: &FieldState,
    du: f64,
    dv: f64,
    rxn: &TwoComponentReaction,
    grid: &GridSpec,
) -> Result<(FieldState, FieldState)> {
    let Shape::D2(rows, cols) = grid.shape() else {
        return Err(NpdeError::Unsupported("two-component systems need a 2D grid".into()));
    };
    u.ensure_shape(grid.shape())?;
    v.ensure_shape(grid.shape())?;
    let bc = grid.bc();
    let taps = laplacian_2d_9pt().taps();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let k = grid.k();
    let (uv, vv) = (u.values(), v.values());
    let mut out_u = Vec::with_capacity(uv.len());
    let mut out_v = Vec::with_capacity(vv.len());
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let (mut lu, mut lv) = (0.0, 0.0);
            for (dr, row) in taps.iter().enumerate() {
                for (dc, &t) in row.iter().enumerate() {
                    let (rr, cc) = (r + dr as isize - 1, c + dc as isize - 1);
                    lu += t * u.read_2d(rr, cc, &bc);
                    lv += t * v.read_2d(rr, cc, &bc);
                }
            }
            let idx = r as usize * cols + c as usize;
            let (f, g) = rxn.eval(uv[idx], vv[idx]);
            out_u.push(uv[idx] + k * (du * lu * inv_h2 + f));
            out_v.push(vv[idx] + k * (dv * lv * inv_h2 + g));
        }
    }
    Ok((
        finite_output(grid.shape(), out_u, "two-component U")?,
        finite_output(grid.shape(), out_v, "two-component V")?,
    ))
}

/// Growth factor over the initial max-norm treated as a blow-up.
pub const DIVERGENCE_GROWTH: f64 = 1e12;

/// March `n_steps` steps from `initial`.
///
/// A step that produces a non-finite value, or whose max-norm exceeds
/// [`DIVERGENCE_GROWTH`] × max(1, ‖initial‖∞), fails with
/// [`NpdeError::Diverged`] carrying the 1-based step index.
pub fn solve_forward(
    initial: &FieldState,
    coeffs: &EllipticCoefficients,
    grid: &GridSpec,
    n_steps: usize,
    scheme: Scheme,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(NpdeError::invalid("n_steps", "must be at least 1"));
    }
    initial.ensure_shape(grid.shape())?;
    coeffs.validate(grid)?;
    let bound = DIVERGENCE_GROWTH * initial.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut slices = Vec::with_capacity(n_steps + 1);
    slices.push(initial.clone());
    for step in 1..=n_steps {
        let prev = slices.last().expect("non-empty");
        let next = match scheme {
            Scheme::Explicit => step_explicit(prev, coeffs, grid),
            Scheme::Implicit => step_implicit(prev, coeffs, grid),
        };
        let next = match next {
            Ok(f) => f,
            Err(NpdeError::NonFinite(_)) => return Err(NpdeError::Diverged { step }),
            Err(e) => return Err(e),
        };
        if next.values().iter().any(|v| v.abs() > bound) {
            return Err(NpdeError::Diverged { step });
        }
        slices.push(next);
    }
    Ok(Trajectory { grid: *grid, slices })
}

/// Discrete PDE residual `(u^{n+1} - u^n)/k - O_L u^n` over every step,
/// flattened slice by slice.
pub fn discrete_residual(traj: &Trajectory, coeffs: &EllipticCoefficients) -> Result<Vec<f64>> {
    let k = traj.grid.k();
    let mut out = Vec::with_capacity(traj.steps() * traj.grid.len());
    for pair in traj.slices.windows(2) {
        let op = elliptic_apply(&pair[0], coeffs, &traj.grid)?;
        for ((next, prev), o) in pair[1].values().iter().zip(pair[0].values()).zip(op.values()) {
            out.push((next - prev) / k - o);
        }
    }
    Ok(out)
}
