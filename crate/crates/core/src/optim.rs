//! Losses and optimizers.
//!
//! Plain gradient descent, Adam, Newton with a pseudoinverse Hessian,
//! Gauss–Newton and L-BFGS, plus a central-difference gradient used as the
//! reference for every analytic gradient in the crate.

use std::collections::VecDeque;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NpdeError, Result};
use crate::linalg::Matrix;

/// Identifies one tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamKey {
    pub module: String,
    pub block: usize,
    pub name: String,
}

impl ParamKey {
    pub fn new(module: impl Into<String>, block: usize, name: impl Into<String>) -> Self {
        ParamKey {
            module: module.into(),
            block,
            name: name.into(),
        }
    }
}

/// Flat parameter vector with a named layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    values: Vec<f64>,
    layout: Vec<(ParamKey, Range<usize>)>,
}

impl ThetaVector {
    /// Layout ranges must be disjoint and cover `values` exactly.
    pub fn new(values: Vec<f64>, layout: Vec<(ParamKey, Range<usize>)>) -> Result<Self> {
        let mut ranges: Vec<&Range<usize>> = layout.iter().map(|(_, r)| r).collect();
        ranges.sort_by_key(|r| r.start);
        let mut next = 0;
        for r in ranges {
            if r.start != next || r.end < r.start {
                return Err(NpdeError::invalid("layout", format!("gap or overlap at index {next}")));
            }
            next = r.end;
        }
        if next != values.len() {
            return Err(NpdeError::invalid(
                "layout",
                format!("covers {next} of {} entries", values.len()),
            ));
        }
        Ok(ThetaVector { values, layout })
    }

    /// A single unnamed tensor.
    pub fn flat(values: Vec<f64>) -> Self {
        let n = values.len();
        ThetaVector {
            values,
            layout: vec![(ParamKey::new("theta", 0, "values"), 0..n)],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &[(ParamKey, Range<usize>)] {
        &self.layout
    }

    pub fn get(&self, key: &ParamKey) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, r)| &self.values[r.clone()])
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(NpdeError::shape(format!("{} parameters", self.len()), values.len()));
        }
        Ok(ThetaVector {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// `½‖o − ô‖² + ½ν‖θ‖²`
    L2Decay { nu: f64 },
    /// `½‖u − û‖² + ½β‖θ‖² + ½λ‖u_t − O_L u‖²`
    PdeConstrained { beta: f64, lambda: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        match *self {
            LossSpec::L2Decay { nu } if !ok(nu) => Err(NpdeError::invalid("nu", "must be ≥ 0")),
            LossSpec::PdeConstrained { beta, .. } if !ok(beta) => Err(NpdeError::invalid("beta", "must be ≥ 0")),
            LossSpec::PdeConstrained { lambda, .. } if !ok(lambda) => {
                Err(NpdeError::invalid("lambda", "must be ≥ 0"))
            }
            _ => Ok(()),
        }
    }

    /// Coefficient of `½‖θ‖²`.
    pub fn decay(&self) -> f64 {
        match *self {
            LossSpec::L2Decay { nu } => nu,
            LossSpec::PdeConstrained { beta, .. } => beta,
        }
    }
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(NpdeError::shape(format!("{what} of length {a}"), b));
    }
    Ok(())
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Returns `½(‖output − target‖² + ν‖weights‖²)` and `output − target`.
pub fn l2_loss(output: &[f64], target: &[f64], weights: &[f64], nu: f64) -> Result<(f64, Vec<f64>)> {
    check_len(output.len(), target.len(), "target")?;
    let diff: Vec<f64> = output.iter().zip(target).map(|(o, t)| o - t).collect();
    Ok((0.5 * (sq_norm(&diff) + nu * sq_norm(weights)), diff))
}

/// `½‖u − û‖² + (β/2)‖θ‖² + (λ/2)‖residual‖²`.
pub fn pde_constrained_loss(
    u: &[f64],
    u_hat: &[f64],
    theta: &[f64],
    beta: f64,
    residual: &[f64],
    lambda: f64,
) -> Result<f64> {
    check_len(u.len(), u_hat.len(), "expected output")?;
    let misfit: f64 = u.iter().zip(u_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(0.5 * misfit + 0.5 * beta * sq_norm(theta) + 0.5 * lambda * sq_norm(residual))
}

/// `θ − η g`.
pub fn sgd_step(theta: &ThetaVector, g: &[f64], eta: f64) -> Result<ThetaVector> {
    check_len(theta.len(), g.len(), "gradient")?;
    if !(eta.is_finite() && eta > 0.0) {
        return Err(NpdeError::invalid("eta", "must be finite and > 0"));
    }
    theta.with_values(theta.values().iter().zip(g).map(|(t, gi)| t - eta * gi).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub eta: f64,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const ADAM_ETA: f64 = 0.001;

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState::with_params(n, ADAM_ETA, ADAM_BETA1, ADAM_BETA2, ADAM_EPS).expect("defaults are valid")
    }

    pub fn with_params(n: usize, eta: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) {
            return Err(NpdeError::invalid("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&beta2) {
            return Err(NpdeError::invalid("beta2", "must lie in [0, 1)"));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(NpdeError::invalid("eps", "must be > 0"));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(NpdeError::invalid("eta", "must be > 0"));
        }
        Ok(AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            beta1,
            beta2,
            eps,
            eta,
            t: 0,
        })
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &AdamState, theta: &ThetaVector, g: &[f64]) -> Result<(AdamState, ThetaVector)> {
    check_len(theta.len(), g.len(), "gradient")?;
    check_len(theta.len(), state.m.len(), "adam moments")?;
    let mut next = state.clone();
    next.t += 1;
    let t = i32::try_from(next.t).unwrap_or(i32::MAX);
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let mut values = theta.values().to_vec();
    for i in 0..g.len() {
        next.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
        next.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g[i] * g[i];
        let m_hat = next.m[i] / c1;
        let v_hat = next.v[i] / c2;
        values[i] -= state.eta * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok((next, theta.with_values(values)?))
}

/// Diagnostics of a (possibly regularized) normal-equation solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    /// Condition number estimate of the normal matrix before regularization.
    pub condition: f64,
    /// Ridge added to the diagonal (0 when none).
    pub regularization: f64,
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows, m.cols, &m.data)
}

fn condition_spd(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn solve_spd(mut a: DMatrix<f64>, rhs: DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    if mu > 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] += mu;
        }
    }
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(&rhs));
    }
    a.lu()
        .solve(&rhs)
        .ok_or_else(|| NpdeError::Singular("normal matrix".into()))
}

/// Relative ridge used for the pseudoinverse and for damped Gauss–Newton.
pub const RIDGE: f64 = 1e-12;
/// Condition number above which Gauss–Newton switches to a damped solve.
pub const GN_DAMPING_CONDITION: f64 = 1e12;

/// `θ − η (HᵀH + μI)⁻¹ Hᵀ g` with `μ = 1e-12 · trace(HᵀH)/n`.
pub fn newton_pinv_step(theta: &ThetaVector, g: &[f64], h: &Matrix, eta: f64) -> Result<(ThetaVector, SolveReport)> {
    let n = theta.len();
    check_len(n, g.len(), "gradient")?;
    if h.rows != n || h.cols != n {
        return Err(NpdeError::shape(format!("{n}x{n} Hessian"), format!("{}x{}", h.rows, h.cols)));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(NpdeError::invalid("eta", "must be finite and > 0"));
    }
    let hm = to_dmatrix(h);
    let normal = hm.transpose() * &hm;
    let condition = condition_spd(&normal);
    let mu = RIDGE * normal.trace() / n.max(1) as f64;
    let rhs = hm.transpose() * DVector::from_column_slice(g);
    let dir = solve_spd(normal, rhs, mu)?;
    let values = theta.values().iter().zip(dir.iter()).map(|(t, d)| t - eta * d).collect();
    Ok((
        theta.with_values(values)?,
        SolveReport {
            condition,
            regularization: mu,
        },
    ))
}

/// `θ − η (JᵀJ)⁻¹ Jᵀ r`, damped when `JᵀJ` is ill-conditioned.
pub fn gauss_newton_step(
    theta: &ThetaVector,
    residuals: &[f64],
    j: &Matrix,
    eta: f64,
) -> Result<(ThetaVector, SolveReport)> {
    let n = theta.len();
    if j.cols != n || j.rows != residuals.len() {
        return Err(NpdeError::shape(
            format!("{}x{n} Jacobian", residuals.len()),
            format!("{}x{}", j.rows, j.cols),
        ));
    }
    if j.rows < n {
        return Err(NpdeError::invalid("J", "needs at least as many residuals as parameters"));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(NpdeError::invalid("eta", "must be finite and > 0"));
    }
    let jm = to_dmatrix(j);
    let normal = jm.transpose() * &jm;
    let condition = condition_spd(&normal);
    let mu = if condition > GN_DAMPING_CONDITION {
        RIDGE * normal.trace().max(f64::MIN_POSITIVE) / n.max(1) as f64
    } else {
        0.0
    };
    let rhs = jm.transpose() * DVector::from_column_slice(residuals);
    let dir = solve_spd(normal, rhs, mu)?;
    let values = theta.values().iter().zip(dir.iter()).map(|(t, d)| t - eta * d).collect();
    Ok((
        theta.with_values(values)?,
        SolveReport {
            condition,
            regularization: mu,
        },
    ))
}

/// Limited-memory curvature pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LBFGSState {
    memory: usize,
    history: VecDeque<(Vec<f64>, Vec<f64>)>,
}

pub const LBFGS_MEMORY: usize = 10;

impl Default for LBFGSState {
    fn default() -> Self {
        LBFGSState::new(LBFGS_MEMORY)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LBFGSState {
    pub fn new(memory: usize) -> Self {
        LBFGSState {
            memory: memory.max(1),
            history: VecDeque::new(),
        }
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(Vec<f64>, Vec<f64>)> {
        self.history.iter()
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Store `(s, y)` unless it violates the curvature condition `sᵀy > 0`.
    /// Returns whether the pair was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy.is_finite() && sy > 0.0) || s.len() != y.len() {
            return false;
        }
        if self.history.len() == self.memory {
            self.history.pop_front();
        }
        self.history.push_back((s, y));
        true
    }
}

/// Two-loop recursion: `−H̃ g` with `H̃₀ = (sᵀy / yᵀy) I` from the newest pair.
pub fn lbfgs_direction(state: &LBFGSState, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(state.len());
    for (s, y) in state.history.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push((a, rho));
    }
    if let Some((s, y)) = state.history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (a, rho)) in state.history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Central differences `(L(θ + εe_i) − L(θ − εe_i)) / 2ε`.
pub fn grad_fd(loss_fn: impl Fn(&[f64]) -> f64, theta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(NpdeError::invalid("eps", "must be finite and > 0"));
    }
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + eps;
            let up = loss_fn(&probe);
            probe[i] = theta[i] - eps;
            let down = loss_fn(&probe);
            probe[i] = theta[i];
            if !(up.is_finite() && down.is_finite()) {
                return Err(NpdeError::NonFiniteLoss { index: i });
            }
            Ok((up - down) / (2.0 * eps))
        })
        .collect()
}

/// Symmetrized central-difference Jacobian of a gradient map.
pub fn hessian_fd(grad_fn: impl Fn(&[f64]) -> Result<Vec<f64>>, theta: &[f64], eps: f64) -> Result<Matrix> {
    let n = theta.len();
    let mut h = Matrix::zeros(n, n);
    let mut probe = theta.to_vec();
    for c in 0..n {
        probe[c] = theta[c] + eps;
        let up = grad_fn(&probe)?;
        probe[c] = theta[c] - eps;
        let down = grad_fn(&probe)?;
        probe[c] = theta[c];
        for r in 0..n {
            h.set(r, c, (up[r] - down[r]) / (2.0 * eps));
        }
    }
    for r in 0..n {
        for c in r + 1..n {
            let avg = 0.5 * (h.get(r, c) + h.get(c, r));
            h.set(r, c, avg);
            h.set(c, r, avg);
        }
    }
    Ok(h)
}

/// Optimizer selection and hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { eta: f64 },
    Adam { eta: f64, beta1: f64, beta2: f64, eps: f64 },
    Lbfgs { eta: f64, memory: usize },
    GaussNewton { eta: f64 },
    Newton { eta: f64 },
}

impl OptimizerConfig {
    pub fn adam_defaults() -> Self {
        OptimizerConfig::Adam {
            eta: ADAM_ETA,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn eta(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { eta }
            | OptimizerConfig::Adam { eta, .. }
            | OptimizerConfig::Lbfgs { eta, .. }
            | OptimizerConfig::GaussNewton { eta }
            | OptimizerConfig::Newton { eta } => eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eta = self.eta();
        if !(eta.is_finite() && eta > 0.0) {
            return Err(NpdeError::invalid("optimizer.eta", "must be finite and > 0"));
        }
        match *self {
            OptimizerConfig::Adam { eta, beta1, beta2, eps } => {
                AdamState::with_params(0, eta, beta1, beta2, eps).map(|_| ())
            }
            OptimizerConfig::Lbfgs { memory: 0, .. } => {
                Err(NpdeError::invalid("optimizer.memory", "must be at least 1"))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn theta(v: &[f64]) -> ThetaVector {
        ThetaVector::flat(v.to_vec())
    }

    #[test]
    fn layout_must_cover_exactly() {
        let k = |n: &str| ParamKey::new("m", 0, n);
        assert!(ThetaVector::new(vec![0.0; 4], vec![(k("a"), 0..2), (k("b"), 2..4)]).is_ok());
        assert!(ThetaVector::new(vec![0.0; 4], vec![(k("a"), 0..2), (k("b"), 1..4)]).is_err());
        assert!(ThetaVector::new(vec![0.0; 4], vec![(k("a"), 0..2)]).is_err());
        let t = ThetaVector::new(vec![1.0, 2.0, 3.0], vec![(k("b"), 2..3), (k("a"), 0..2)]).unwrap();
        assert_eq!(t.get(&k("a")).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_loss(&[1.0, 2.0], &[1.0, 2.0], &[], 0.0).unwrap().0, 0.0);
        let (l, g) = l2_loss(&[1.0, 0.0], &[0.0, 0.0], &[], 0.0).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, vec![1.0, 0.0]);
        let (l, _) = l2_loss(&[1.0, 0.0], &[0.0, 0.0], &[2.0], 0.1).unwrap();
        assert!((l - 0.7).abs() < 1e-15);
        assert!(l2_loss(&[1.0], &[1.0, 2.0], &[], 0.0).is_err());
    }

    #[test]
    fn pde_loss_examples() {
        assert_eq!(pde_constrained_loss(&[1.0], &[1.0], &[5.0], 0.0, &[0.0], 3.0).unwrap(), 0.0);
        assert_eq!(pde_constrained_loss(&[0.0], &[0.0], &[0.0], 0.0, &[1.0], 2.0).unwrap(), 1.0);
        assert_eq!(pde_constrained_loss(&[0.0], &[0.0], &[3.0], 1.0, &[], 0.0).unwrap(), 4.5);
    }

    #[test]
    fn sgd_examples() {
        assert_eq!(sgd_step(&theta(&[1.0, 2.0]), &[0.0, 0.0], 0.1).unwrap().values(), &[1.0, 2.0]);
        assert_eq!(sgd_step(&theta(&[1.0]), &[2.0], 0.5).unwrap().values(), &[0.0]);
        assert!(sgd_step(&theta(&[1.0]), &[2.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn sgd_matches_gradient_flow_on_quadratic() {
        let eta = 0.25;
        let mut t = theta(&[2.0]);
        let mut exact = 2.0;
        for _ in 0..20 {
            let g = t.values().to_vec();
            t = sgd_step(&t, &g, eta).unwrap();
            exact *= 1.0 - eta;
            assert_eq!(t.values()[0], exact);
        }
    }

    #[test]
    fn adam_examples() {
        let s = AdamState::new(1);
        let (s1, t1) = adam_step(&s, &theta(&[0.5]), &[0.0]).unwrap();
        assert_eq!(t1.values(), &[0.5]);
        assert_eq!((s1.m[0], s1.v[0]), (0.0, 0.0));

        let (_, t1) = adam_step(&s, &theta(&[0.0]), &[1.0]).unwrap();
        let want = -ADAM_ETA / (1.0 + ADAM_EPS);
        assert!((t1.values()[0] - want).abs() < 1e-15);

        let s0 = AdamState::with_params(2, 0.01, 0.0, 0.0, 1e-8).unwrap();
        let (_, t) = adam_step(&s0, &theta(&[0.0, 0.0]), &[3.0, -0.5]).unwrap();
        assert!((t.values()[0] + 0.01 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!((t.values()[1] - 0.01 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_bad_params() {
        assert!(AdamState::with_params(1, 0.1, 1.0, 0.9, 1e-8).is_err());
        assert!(AdamState::with_params(1, 0.1, 0.9, 0.9, 0.0).is_err());
    }

    #[test]
    fn newton_examples() {
        let (t, _) = newton_pinv_step(&theta(&[1.0, 2.0]), &[0.5, -1.0], &Matrix::identity(2), 0.1).unwrap();
        let s = sgd_step(&theta(&[1.0, 2.0]), &[0.5, -1.0], 0.1).unwrap();
        for (a, b) in t.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let h = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        let (t, report) = newton_pinv_step(&theta(&[0.0, 0.0]), &[2.0, 4.0], &h, 1.0).unwrap();
        assert!((t.values()[0] + 1.0).abs() < 1e-10 && (t.values()[1] + 1.0).abs() < 1e-10);
        assert!((report.condition - 4.0).abs() < 1e-9);
    }

    #[test]
    fn newton_survives_singular_hessian() {
        let h = Matrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let (t, report) = newton_pinv_step(&theta(&[0.0, 0.0]), &[1.0, 1.0], &h, 1.0).unwrap();
        assert!(t.is_finite());
        assert!(report.condition > 1e12);
        assert!(report.regularization > 0.0);
    }

    #[test]
    fn gauss_newton_examples() {
        let (t, _) = gauss_newton_step(&theta(&[1.0, 2.0]), &[0.0, 0.0, 0.0], &Matrix::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap(), 1.0).unwrap();
        assert_eq!(t.values(), &[1.0, 2.0]);
        let (t, _) = gauss_newton_step(&theta(&[1.0, 2.0]), &[0.5, -1.0], &Matrix::identity(2), 0.3).unwrap();
        let s = sgd_step(&theta(&[1.0, 2.0]), &[0.5, -1.0], 0.3).unwrap();
        for (a, b) in t.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(gauss_newton_step(&theta(&[1.0, 2.0]), &[1.0], &Matrix::new(1, 2, vec![1.0, 1.0]).unwrap(), 1.0).is_err());
    }

    #[test]
    fn gauss_newton_damps_rank_deficient_jacobian() {
        let j = Matrix::new(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let (t, report) = gauss_newton_step(&theta(&[0.0, 0.0]), &[1.0, 2.0, 3.0], &j, 1.0).unwrap();
        assert!(t.is_finite());
        assert!(report.regularization > 0.0);
    }

    #[test]
    fn lbfgs_simple_cases() {
        let empty = LBFGSState::default();
        assert_eq!(lbfgs_direction(&empty, &[1.0, -2.0]), vec![-1.0, 2.0]);
        let mut st = LBFGSState::new(3);
        assert!(st.push(vec![1.0, 2.0], vec![1.0, 2.0]));
        let d = lbfgs_direction(&st, &[1.0, 2.0]);
        assert!((d[0] + 1.0).abs() < 1e-15 && (d[1] + 2.0).abs() < 1e-15);
        assert!(!st.push(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert!(!st.push(vec![1.0, 0.0], vec![0.0, 1.0]));
        assert_eq!(st.len(), 1);
    }

    #[test]
    fn lbfgs_memory_is_bounded() {
        let mut st = LBFGSState::new(2);
        for i in 1..=5 {
            st.push(vec![i as f64, 1.0], vec![1.0, i as f64]);
        }
        assert_eq!(st.len(), 2);
        assert_eq!(st.pairs().next().unwrap().0, vec![4.0, 1.0]);
    }

    #[test]
    fn grad_fd_examples() {
        let g = grad_fd(|t| t[0], &[0.3, 0.7, -1.0], 1e-6).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-9 && g[1].abs() < 1e-9 && g[2].abs() < 1e-9);
        let g = grad_fd(|t| 0.5 * (t[0] * t[0] + t[1] * t[1]), &[3.0, 4.0], 1e-5).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let err = grad_fd(|t| if t[1] > 0.0 { f64::NAN } else { 0.0 }, &[0.0, 0.0], 1e-3).unwrap_err();
        assert_eq!(err, NpdeError::NonFiniteLoss { index: 1 });
    }

    proptest! {
        #[test]
        fn adam_sign_descent_limit(g in prop::collection::vec(-5.0..5.0f64, 1..8)) {
            prop_assume!(g.iter().all(|x| x.abs() > 1e-3));
            let eta = 0.01;
            let s = AdamState::with_params(g.len(), eta, 0.0, 0.0, 1e-300).unwrap();
            let (_, t) = adam_step(&s, &theta(&vec![0.0; g.len()]), &g).unwrap();
            for (step, gi) in t.values().iter().zip(&g) {
                prop_assert!((step.abs() - eta).abs() < 1e-15);
                prop_assert!(step.signum() == -gi.signum());
            }
        }

        #[test]
        fn steps_are_permutation_equivariant(
            t in prop::collection::vec(-2.0..2.0f64, 4),
            g in prop::collection::vec(-2.0..2.0f64, 4),
            diag in prop::collection::vec(0.5..3.0f64, 4),
            rot in 1usize..4,
        ) {
            let perm: Vec<usize> = (0..4).map(|i| (i + rot) % 4).collect();
            let p = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let mut h = Matrix::zeros(4, 4);
            let mut ph = Matrix::zeros(4, 4);
            for i in 0..4 {
                for j in 0..4 {
                    let v = if i == j { diag[i] } else { 0.1 * ((i + 2 * j) as f64).sin() };
                    h.set(i, j, v);
                }
            }
            for i in 0..4 {
                for j in 0..4 {
                    ph.set(i, j, h.get(perm[i], perm[j]));
                }
            }
            let a = newton_pinv_step(&theta(&t), &g, &h, 0.5).unwrap().0;
            let b = newton_pinv_step(&theta(&p(&t)), &p(&g), &ph, 0.5).unwrap().0;
            for (x, y) in p(a.values()).iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let a = adam_step(&AdamState::new(4), &theta(&t), &g).unwrap().1;
            let b = adam_step(&AdamState::new(4), &theta(&p(&t)), &p(&g)).unwrap().1;
            prop_assert_eq!(p(a.values()), b.values().to_vec());
            let a = gauss_newton_step(&theta(&t), &g, &h, 0.5).unwrap().0;
            let b = gauss_newton_step(&theta(&p(&t)), &p(&g), &ph, 0.5).unwrap().0;
            for (x, y) in p(a.values()).iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn gauss_newton_equals_pinv_newton_with_normal_hessian(
            jv in prop::collection::vec(-0.4..0.4f64, 15),
            r in prop::collection::vec(-2.0..2.0f64, 5),
            t in prop::collection::vec(-1.0..1.0f64, 3),
        ) {
            let mut j = Matrix::new(5, 3, jv).unwrap();
            for i in 0..3 {
                j.set(i, i, j.get(i, i) + 2.0);
            }
            let jm = to_dmatrix(&j);
            let jtj = jm.transpose() * &jm;
            prop_assume!(condition_spd(&jtj) < 10.0);
            let h = Matrix::new(3, 3, jtj.transpose().as_slice().to_vec()).unwrap();
            let grad = j.tr_mul_vec(&r).unwrap();
            let a = gauss_newton_step(&theta(&t), &r, &j, 1.0).unwrap().0;
            let b = newton_pinv_step(&theta(&t), &grad, &h, 1.0).unwrap().0;
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn lbfgs_gives_descent_directions(
            pairs in prop::collection::vec((prop::collection::vec(-1.0..1.0f64, 3), prop::collection::vec(-1.0..1.0f64, 3)), 0..8),
            g in prop::collection::vec(-1.0..1.0f64, 3),
        ) {
            prop_assume!(g.iter().any(|x| x.abs() > 1e-3));
            let mut st = LBFGSState::new(4);
            for (s, y) in pairs {
                st.push(s, y);
            }
            for (s, y) in st.pairs() {
                prop_assert!(dot(s, y) > 0.0);
            }
            let d = lbfgs_direction(&st, &g);
            prop_assert!(dot(&g, &d) < 0.0);
        }
    }
}
