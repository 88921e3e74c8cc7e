//! Supervised training of block/solver pipelines.
//!
//! A [`Pipeline`] is a chain of dense layers and unrolled explicit diffusion
//! solves with a learnable coefficient field. Gradients are exact for the
//! discrete computation and are obtained by reverse accumulation through the
//! recorded forward pass.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{gen_dense, DenseBlock};
use crate::error::{NpdeError, Result};
use crate::grid::{Ghost, GridSpec};
use crate::io::fmt_num;
use crate::linalg::Matrix;
use crate::optim::{
    adam_step, gauss_newton_step, hessian_fd, lbfgs_direction, newton_pinv_step, sgd_step, AdamState, LBFGSState,
    LossSpec, OptimizerConfig, ParamKey, ThetaVector,
};
use crate::solver::ReactionSpec;

/// Losses above this are treated as divergence.
pub const LOSS_DIVERGENCE: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    /// `activation(W u + b)` with `W` of size `out_dim × in_dim`.
    Dense {
        in_dim: usize,
        out_dim: usize,
        activation: ReactionSpec,
    },
    /// `steps` explicit steps of `u_t = (A u_x)_x + C(u)` with learnable `A`.
    Diffusion {
        grid: GridSpec,
        steps: usize,
        reaction: ReactionSpec,
    },
}

impl Stage {
    fn dims(&self) -> (usize, usize) {
        match self {
            Stage::Dense { in_dim, out_dim, .. } => (*in_dim, *out_dim),
            Stage::Diffusion { grid, .. } => (grid.len(), grid.len()),
        }
    }

    fn n_params(&self) -> usize {
        match self {
            Stage::Dense { in_dim, out_dim, .. } => out_dim * (in_dim + 1),
            Stage::Diffusion { grid, .. } => grid.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pipeline {
    stages: Vec<Stage>,
}

/// Intermediate values kept for the backward pass.
struct Tape {
    /// `inputs[s]` is the input of stage `s`; the last entry is the output.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of dense stages, or every intermediate state of a
    /// diffusion stage (excluding the last).
    inner: Vec<Vec<Vec<f64>>>,
}

impl Pipeline {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        for (i, s) in stages.iter().enumerate() {
            match s {
                Stage::Dense {
                    in_dim,
                    out_dim,
                    activation,
                } => {
                    if *in_dim == 0 || *out_dim == 0 {
                        return Err(NpdeError::invalid("dense", format!("stage {i} has a zero dimension")));
                    }
                    activation.validate(*out_dim)?;
                }
                Stage::Diffusion { grid, steps, reaction } => {
                    if grid.dimensionality() != 1 {
                        return Err(NpdeError::Unsupported("learnable diffusion stages are 1D".into()));
                    }
                    if *steps == 0 {
                        return Err(NpdeError::invalid("steps", "must be at least 1"));
                    }
                    reaction.validate(grid.len())?;
                }
            }
            if i > 0 {
                let prev = stages[i - 1].dims().1;
                if prev != s.dims().0 {
                    return Err(NpdeError::shape(format!("stage {i} input of size {prev}"), s.dims().0));
                }
            }
        }
        Ok(Pipeline { stages })
    }

    /// Dense chain with the shapes and activations of the given blocks.
    pub fn from_dense_blocks(blocks: &[DenseBlock]) -> Result<Self> {
        Pipeline::new(
            blocks
                .iter()
                .map(|b| Stage::Dense {
                    in_dim: b.in_dim(),
                    out_dim: b.out_dim(),
                    activation: b.activation.clone(),
                })
                .collect(),
        )
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.stages.first().map(|s| s.dims().0)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.stages.last().map(|s| s.dims().1)
    }

    pub fn n_params(&self) -> usize {
        self.stages.iter().map(Stage::n_params).sum()
    }

    pub fn layout(&self) -> Vec<(ParamKey, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut at = 0;
        for (i, s) in self.stages.iter().enumerate() {
            match s {
                Stage::Dense { in_dim, out_dim, .. } => {
                    out.push((ParamKey::new("dense", i, "W"), at..at + in_dim * out_dim));
                    at += in_dim * out_dim;
                    out.push((ParamKey::new("dense", i, "b"), at..at + out_dim));
                    at += out_dim;
                }
                Stage::Diffusion { grid, .. } => {
                    out.push((ParamKey::new("diffusion", i, "A"), at..at + grid.len()));
                    at += grid.len();
                }
            }
        }
        out
    }

    pub fn theta(&self, values: Vec<f64>) -> Result<ThetaVector> {
        ThetaVector::new(values, self.layout())
    }

    /// Uniform in `±1/√fan_in` for dense tensors. Diffusion coefficients are
    /// drawn from `[0, min(1/√3, 0.5/r)]` so the first forward solve is stable.
    pub fn init_theta(&self, seed: u64) -> ThetaVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(self.n_params());
        for s in &self.stages {
            match s {
                Stage::Dense { in_dim, out_dim, .. } => {
                    let bound = 1.0 / (*in_dim as f64).sqrt();
                    values.extend((0..out_dim * (in_dim + 1)).map(|_| rng.gen_range(-bound..=bound)));
                }
                Stage::Diffusion { grid, .. } => {
                    let bound = (1.0 / 3f64.sqrt()).min(0.5 / grid.r());
                    values.extend((0..grid.len()).map(|_| rng.gen_range(0.0..=bound)));
                }
            }
        }
        self.theta(values).expect("layout matches parameter count")
    }

    /// Dense blocks holding the parameters in `theta`; fails on diffusion stages.
    pub fn dense_blocks(&self, theta: &[f64]) -> Result<Vec<DenseBlock>> {
        self.check_theta(theta)?;
        let mut at = 0;
        self.stages
            .iter()
            .map(|s| match s {
                Stage::Dense {
                    in_dim,
                    out_dim,
                    activation,
                } => {
                    let w = Matrix::new(*out_dim, *in_dim, theta[at..at + in_dim * out_dim].to_vec())?;
                    at += in_dim * out_dim;
                    let b = theta[at..at + out_dim].to_vec();
                    at += out_dim;
                    gen_dense(w, b, activation.clone())
                }
                Stage::Diffusion { .. } => Err(NpdeError::Unsupported("diffusion stage is not a dense block".into())),
            })
            .collect()
    }

    /// Flatten dense blocks into a parameter vector for this pipeline.
    pub fn theta_from_dense_blocks(&self, blocks: &[DenseBlock]) -> Result<ThetaVector> {
        let mut values = Vec::with_capacity(self.n_params());
        for b in blocks {
            values.extend_from_slice(&b.weights.data);
            values.extend_from_slice(&b.bias);
        }
        self.theta(values)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(NpdeError::shape(format!("{} parameters", self.n_params()), theta.len()));
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if let Some(d) = self.input_dim() {
            if input.len() != d {
                return Err(NpdeError::shape(format!("input of size {d}"), input.len()));
            }
        }
        Ok(())
    }

    pub fn forward(&self, theta: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.record(theta, input)?.inputs.pop().unwrap_or_default())
    }

    fn record(&self, theta: &[f64], input: &[f64]) -> Result<Tape> {
        self.check_theta(theta)?;
        self.check_input(input)?;
        let mut tape = Tape {
            inputs: vec![input.to_vec()],
            inner: Vec::with_capacity(self.stages.len()),
        };
        let mut at = 0;
        for s in &self.stages {
            let u = tape.inputs.last().expect("tape starts with the input");
            let (out, inner) = match s {
                Stage::Dense {
                    in_dim,
                    out_dim,
                    activation,
                } => {
                    let w = &theta[at..at + in_dim * out_dim];
                    let b = &theta[at + in_dim * out_dim..at + out_dim * (in_dim + 1)];
                    let z: Vec<f64> = (0..*out_dim)
                        .map(|i| b[i] + w[i * in_dim..(i + 1) * in_dim].iter().zip(u).map(|(a, x)| a * x).sum::<f64>())
                        .collect();
                    let o = z.iter().enumerate().map(|(i, &zi)| activation.activate(zi, i)).collect();
                    (o, vec![z])
                }
                Stage::Diffusion { grid, steps, reaction } => {
                    let a = &theta[at..at + grid.len()];
                    let mut states = Vec::with_capacity(*steps);
                    let mut cur = u.clone();
                    for _ in 0..*steps {
                        let next = diffusion_step(&cur, a, grid, reaction);
                        states.push(std::mem::replace(&mut cur, next));
                    }
                    (cur, states)
                }
            };
            at += s.n_params();
            tape.inputs.push(out);
            tape.inner.push(inner);
        }
        Ok(tape)
    }

    /// Given `∂L/∂output`, return `(∂L/∂θ, ∂L/∂input)`.
    fn backward(&self, theta: &[f64], tape: &Tape, out_bar: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut grad = vec![0.0; theta.len()];
        let mut bar = out_bar.to_vec();
        let mut end = theta.len();
        for (si, s) in self.stages.iter().enumerate().rev() {
            let start = end - s.n_params();
            let u = &tape.inputs[si];
            match s {
                Stage::Dense {
                    in_dim,
                    out_dim,
                    activation,
                } => {
                    let z = &tape.inner[si][0];
                    let w = &theta[start..start + in_dim * out_dim];
                    let zbar: Vec<f64> = (0..*out_dim)
                        .map(|i| bar[i] * activation.activate_derivative(z[i], i))
                        .collect();
                    let mut ubar = vec![0.0; *in_dim];
                    for i in 0..*out_dim {
                        for j in 0..*in_dim {
                            grad[start + i * in_dim + j] += zbar[i] * u[j];
                            ubar[j] += w[i * in_dim + j] * zbar[i];
                        }
                        grad[start + in_dim * out_dim + i] += zbar[i];
                    }
                    bar = ubar;
                }
                Stage::Diffusion { grid, reaction, .. } => {
                    let a = &theta[start..end];
                    for state in tape.inner[si].iter().rev() {
                        bar = diffusion_step_vjp(state, a, grid, reaction, &bar, &mut grad[start..end]);
                    }
                }
            }
            end = start;
        }
        (grad, bar)
    }

    /// Jacobian of the output with respect to θ (rows = output components).
    pub fn jacobian(&self, theta: &[f64], input: &[f64]) -> Result<Matrix> {
        let tape = self.record(theta, input)?;
        let out = tape.inputs.last().expect("tape has an output");
        let mut j = Matrix::zeros(out.len(), theta.len());
        let mut e = vec![0.0; out.len()];
        for r in 0..out.len() {
            e[r] = 1.0;
            let (g, _) = self.backward(theta, &tape, &e);
            e[r] = 0.0;
            for (c, v) in g.into_iter().enumerate() {
                j.set(r, c, v);
            }
        }
        Ok(j)
    }

    /// Constraint residuals `(u^{n+1} − u^n)/k − O(u^n)` of every unrolled
    /// diffusion step. They vanish up to rounding because the forward pass
    /// solves the discrete equations exactly.
    fn constraint_residual(&self, theta: &[f64], tape: &Tape) -> Vec<f64> {
        let mut out = Vec::new();
        let mut at = 0;
        for (si, s) in self.stages.iter().enumerate() {
            if let Stage::Diffusion { grid, reaction, .. } = s {
                let a = &theta[at..at + grid.len()];
                let states = &tape.inner[si];
                for (n, cur) in states.iter().enumerate() {
                    let next = states.get(n + 1).unwrap_or(&tape.inputs[si + 1]);
                    let k = grid.k();
                    let rate = operator(cur, a, grid, reaction);
                    out.extend(cur.iter().zip(next).zip(rate).map(|((u0, u1), o)| (u1 - u0) / k - o));
                }
            }
            at += s.n_params();
        }
        out
    }
}

/// `u_j + r (A_{j-1} u_{j-1} − 2 A_j u_j + A_{j+1} u_{j+1}) + k C(u_j)`.
fn diffusion_step(u: &[f64], a: &[f64], grid: &GridSpec, reaction: &ReactionSpec) -> Vec<f64> {
    let k = grid.k();
    operator(u, a, grid, reaction)
        .into_iter()
        .zip(u)
        .map(|(o, uj)| uj + k * o)
        .collect()
}

/// Semi-discrete right-hand side `(A u_x)_x + C(u)`.
fn operator(u: &[f64], a: &[f64], grid: &GridSpec, reaction: &ReactionSpec) -> Vec<f64> {
    let n = u.len();
    let bc = grid.bc();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let read = |i: isize| match bc.resolve(i, n) {
        Ghost::Node(m) => u[m],
        Ghost::Fixed(v) => v,
    };
    (0..n)
        .map(|j| {
            let ji = j as isize;
            let al = a[bc.resolve_coefficient(ji - 1, n)];
            let ar = a[bc.resolve_coefficient(ji + 1, n)];
            inv_h2 * (al * read(ji - 1) - 2.0 * a[j] * u[j] + ar * read(ji + 1)) + reaction.term(u[j], j)
        })
        .collect()
}

/// Reverse pass of [`diffusion_step`]: accumulates `∂L/∂A` into `a_bar` and
/// returns `∂L/∂u`.
fn diffusion_step_vjp(
    u: &[f64],
    a: &[f64],
    grid: &GridSpec,
    reaction: &ReactionSpec,
    bar: &[f64],
    a_bar: &mut [f64],
) -> Vec<f64> {
    let n = u.len();
    let bc = grid.bc();
    let r = grid.r();
    let k = grid.k();
    let mut u_bar = vec![0.0; n];
    for j in 0..n {
        let g = bar[j];
        let ji = j as isize;
        u_bar[j] += g * (1.0 - 2.0 * r * a[j] + k * reaction.term_derivative(u[j], j));
        a_bar[j] -= 2.0 * r * g * u[j];
        for side in [ji - 1, ji + 1] {
            let ac = bc.resolve_coefficient(side, n);
            let val = match bc.resolve(side, n) {
                Ghost::Node(m) => {
                    u_bar[m] += g * r * a[ac];
                    u[m]
                }
                Ghost::Fixed(v) => v,
            };
            a_bar[ac] += g * r * val;
        }
    }
    u_bar
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Trailing fraction of samples held out for validation.
    #[serde(default)]
    pub validation_fraction: f64,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let d = Dataset {
            samples,
            validation_fraction: 0.0,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(NpdeError::invalid("validation_fraction", "must lie in [0, 1)"));
        }
        let first = self
            .samples
            .first()
            .ok_or_else(|| NpdeError::invalid("dataset", "needs at least one sample"))?;
        for s in &self.samples {
            if s.input.len() != first.input.len() || s.target.len() != first.target.len() {
                return Err(NpdeError::shape(
                    format!("samples of size {}→{}", first.input.len(), first.target.len()),
                    format!("{}→{}", s.input.len(), s.target.len()),
                ));
            }
            if s.input.iter().chain(&s.target).any(|v| !v.is_finite()) {
                return Err(NpdeError::NonFinite("dataset values".into()));
            }
        }
        if self.train().is_empty() {
            return Err(NpdeError::invalid("dataset", "validation split leaves no training samples"));
        }
        Ok(())
    }

    fn split_at(&self) -> usize {
        let n = self.samples.len();
        n - ((n as f64) * self.validation_fraction).floor() as usize
    }

    pub fn train(&self) -> &[Sample] {
        &self.samples[..self.split_at()]
    }

    pub fn validation(&self) -> &[Sample] {
        &self.samples[self.split_at()..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetLoss,
    MaxEpochs,
    Divergence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss after each epoch.
    pub loss_curve: Vec<f64>,
    /// Running minimum of `initial_loss` followed by `loss_curve`.
    pub min_so_far: Vec<f64>,
    pub initial_loss: f64,
    pub final_theta: ThetaVector,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub epochs: usize,
    pub validation_loss: Option<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.loss_curve.last().copied().unwrap_or(self.initial_loss)
    }

    /// `epoch,loss` lines; epoch 0 is the initial loss.
    pub fn loss_csv(&self) -> String {
        let mut out = format!("0,{}\n", fmt_num(self.initial_loss));
        for (e, l) in self.loss_curve.iter().enumerate() {
            let _ = writeln!(out, "{},{}", e + 1, fmt_num(*l));
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "epochs={} loss={} converged={}",
            self.epochs,
            fmt_num(self.final_loss()),
            self.converged
        )
    }
}

fn sample_misfit(pipeline: &Pipeline, theta: &[f64], s: &Sample) -> Result<(f64, Tape, Vec<f64>)> {
    let tape = pipeline.record(theta, &s.input)?;
    let out = tape.inputs.last().expect("tape has an output");
    if out.len() != s.target.len() {
        return Err(NpdeError::shape(format!("target of size {}", out.len()), s.target.len()));
    }
    let diff: Vec<f64> = out.iter().zip(&s.target).map(|(o, t)| o - t).collect();
    let misfit = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
    Ok((misfit, tape, diff))
}

fn sample_loss(pipeline: &Pipeline, s: &Sample, loss: &LossSpec, theta: &[f64]) -> Result<f64> {
    let (misfit, tape, _) = sample_misfit(pipeline, theta, s)?;
    let mut value = misfit;
    if let LossSpec::PdeConstrained { lambda, .. } = *loss {
        let res = pipeline.constraint_residual(theta, &tape);
        value += 0.5 * lambda * res.iter().map(|r| r * r).sum::<f64>();
    }
    Ok(value)
}

fn decay_term(loss: &LossSpec, theta: &[f64]) -> f64 {
    0.5 * loss.decay() * theta.iter().map(|t| t * t).sum::<f64>()
}

/// Loss of a single sample including the parameter penalty.
pub fn pipeline_loss(pipeline: &Pipeline, sample: &Sample, loss: &LossSpec, theta: &[f64]) -> Result<f64> {
    Ok(sample_loss(pipeline, sample, loss, theta)? + decay_term(loss, theta))
}

/// Exact gradient of [`pipeline_loss`] with respect to θ. The constraint
/// residual of an exact unrolled solve is identically zero as a function of
/// θ, so it contributes nothing.
pub fn pipeline_gradient(pipeline: &Pipeline, sample: &Sample, loss: &LossSpec, theta: &ThetaVector) -> Result<Vec<f64>> {
    loss.validate()?;
    let t = theta.values();
    let (_, tape, diff) = sample_misfit(pipeline, t, sample)?;
    let (mut g, _) = pipeline.backward(t, &tape, &diff);
    let nu = loss.decay();
    g.iter_mut().zip(t).for_each(|(gi, ti)| *gi += nu * ti);
    Ok(g)
}

/// Mean sample loss over `samples` plus the parameter penalty.
pub fn dataset_loss(pipeline: &Pipeline, samples: &[Sample], loss: &LossSpec, theta: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += sample_loss(pipeline, s, loss, theta)?;
    }
    Ok(total / samples.len().max(1) as f64 + decay_term(loss, theta))
}

pub fn dataset_gradient(pipeline: &Pipeline, samples: &[Sample], loss: &LossSpec, theta: &[f64]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; theta.len()];
    let scale = 1.0 / samples.len().max(1) as f64;
    for s in samples {
        let (_, tape, diff) = sample_misfit(pipeline, theta, s)?;
        let (gs, _) = pipeline.backward(theta, &tape, &diff);
        g.iter_mut().zip(gs).for_each(|(a, b)| *a += scale * b);
    }
    let nu = loss.decay();
    g.iter_mut().zip(theta).for_each(|(gi, ti)| *gi += nu * ti);
    Ok(g)
}

/// Residual vector `r` with `½‖r‖²` equal to the dataset loss, and its Jacobian.
fn stacked_residuals(pipeline: &Pipeline, samples: &[Sample], loss: &LossSpec, theta: &[f64]) -> Result<(Vec<f64>, Matrix)> {
    let scale = 1.0 / (samples.len().max(1) as f64).sqrt();
    let nu = loss.decay();
    let n = theta.len();
    let mut res = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for s in samples {
        let (_, _, diff) = sample_misfit(pipeline, theta, s)?;
        let j = pipeline.jacobian(theta, &s.input)?;
        res.extend(diff.iter().map(|d| d * scale));
        rows.extend(j.data.iter().map(|v| v * scale));
    }
    if nu > 0.0 {
        let sq = nu.sqrt();
        res.extend(theta.iter().map(|t| sq * t));
        for i in 0..n {
            rows.extend((0..n).map(|c| if c == i { sq } else { 0.0 }));
        }
    }
    let m = res.len();
    Ok((res, Matrix::new(m, n, rows)?))
}

enum OptState {
    Sgd,
    Adam(AdamState),
    Lbfgs {
        state: LBFGSState,
        prev: Option<(Vec<f64>, Vec<f64>)>,
    },
    GaussNewton,
    Newton,
}

/// Finite-difference step used to build the Newton Hessian from exact gradients.
const HESSIAN_EPS: f64 = 1e-5;

/// Full-batch training: seeded θ, forward solve, optimizer step, repeat
/// until `target_loss` or `max_epochs`.
#[allow(clippy::too_many_arguments)]
pub fn train_supervised(
    pipeline: &Pipeline,
    data: &Dataset,
    loss: &LossSpec,
    opt: &OptimizerConfig,
    seed: u64,
    max_epochs: usize,
    target_loss: f64,
) -> Result<TrainReport> {
    let theta = pipeline.init_theta(seed);
    train_from(pipeline, data, loss, opt, theta, max_epochs, target_loss)
}

/// As [`train_supervised`] but starting from a given θ.
pub fn train_from(
    pipeline: &Pipeline,
    data: &Dataset,
    loss: &LossSpec,
    opt: &OptimizerConfig,
    mut theta: ThetaVector,
    max_epochs: usize,
    target_loss: f64,
) -> Result<TrainReport> {
    data.validate()?;
    loss.validate()?;
    opt.validate()?;
    if target_loss.is_nan() {
        return Err(NpdeError::invalid("target_loss", "must not be NaN"));
    }
    if let Some(d) = pipeline.input_dim() {
        if data.samples[0].input.len() != d {
            return Err(NpdeError::shape(format!("inputs of size {d}"), data.samples[0].input.len()));
        }
    }
    if theta.len() != pipeline.n_params() {
        return Err(NpdeError::shape(format!("{} parameters", pipeline.n_params()), theta.len()));
    }
    let samples = data.train();
    let eval = |t: &[f64]| dataset_loss(pipeline, samples, loss, t);
    let grad = |t: &[f64]| dataset_gradient(pipeline, samples, loss, t);
    let diverged = |l: f64| !l.is_finite() || l > LOSS_DIVERGENCE;

    let initial_loss = eval(theta.values())?;
    let mut report = TrainReport {
        loss_curve: Vec::new(),
        min_so_far: vec![initial_loss],
        initial_loss,
        final_theta: theta.clone(),
        converged: false,
        stop_reason: StopReason::MaxEpochs,
        epochs: 0,
        validation_loss: None,
    };
    if diverged(initial_loss) {
        report.stop_reason = StopReason::Divergence;
        return Ok(report);
    }
    // at least one epoch runs even when the target is already met
    if max_epochs == 0 && initial_loss <= target_loss {
        report.converged = true;
        report.stop_reason = StopReason::TargetLoss;
    }

    let eta = opt.eta();
    let mut state = match *opt {
        OptimizerConfig::Sgd { .. } => OptState::Sgd,
        OptimizerConfig::Adam { eta, beta1, beta2, eps } => {
            OptState::Adam(AdamState::with_params(theta.len(), eta, beta1, beta2, eps)?)
        }
        OptimizerConfig::Lbfgs { memory, .. } => OptState::Lbfgs {
            state: LBFGSState::new(memory),
            prev: None,
        },
        OptimizerConfig::GaussNewton { .. } => OptState::GaussNewton,
        OptimizerConfig::Newton { .. } => OptState::Newton,
    };

    let mut epoch = 0;
    while !report.converged && epoch < max_epochs {
        epoch += 1;
        let next = match &mut state {
            OptState::Sgd => sgd_step(&theta, &grad(theta.values())?, eta)?,
            OptState::Adam(s) => {
                let (ns, t) = adam_step(s, &theta, &grad(theta.values())?)?;
                *s = ns;
                t
            }
            OptState::Lbfgs { state, prev } => {
                let g = grad(theta.values())?;
                if let Some((pt, pg)) = prev.take() {
                    let s: Vec<f64> = theta.values().iter().zip(&pt).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = g.iter().zip(&pg).map(|(a, b)| a - b).collect();
                    state.push(s, y);
                }
                let d = lbfgs_direction(state, &g);
                let values = theta.values().iter().zip(&d).map(|(t, di)| t + eta * di).collect();
                *prev = Some((theta.values().to_vec(), g));
                theta.with_values(values)?
            }
            OptState::GaussNewton => {
                let (r, j) = stacked_residuals(pipeline, samples, loss, theta.values())?;
                if j.rows < j.cols {
                    return Err(NpdeError::invalid(
                        "optimizer",
                        "gauss_newton needs at least as many residuals as parameters",
                    ));
                }
                gauss_newton_step(&theta, &r, &j, eta)?.0
            }
            OptState::Newton => {
                let g = grad(theta.values())?;
                let h = hessian_fd(grad, theta.values(), HESSIAN_EPS)?;
                newton_pinv_step(&theta, &g, &h, eta)?.0
            }
        };
        let l = if next.is_finite() { eval(next.values())? } else { f64::NAN };
        report.loss_curve.push(l);
        let prev_min = *report.min_so_far.last().expect("seeded with the initial loss");
        report.min_so_far.push(if l < prev_min { l } else { prev_min });
        report.epochs = epoch;
        if diverged(l) {
            report.stop_reason = StopReason::Divergence;
            break;
        }
        theta = next;
        if l <= target_loss {
            report.converged = true;
            report.stop_reason = StopReason::TargetLoss;
        }
    }
    if !data.validation().is_empty() {
        report.validation_loss = Some(dataset_loss(pipeline, data.validation(), loss, theta.values())?);
    }
    report.final_theta = theta;
    Ok(report)
}
