//! Built-in self-checks run by `npde verify`.
//!
//! Every check compares a library result against something computed another
//! way (fixed taps, a node-by-node recurrence, a finite difference, a closed
//! form) and reports the measured discrepancy next to its tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use npde::blocks::{gen_conv1d, gen_dense, gen_rnn_cell, rnn_forward};
use npde::io::fmt_num;
use npde::linalg::Matrix;
use npde::optim::{grad_fd, LossSpec, ThetaVector};
use npde::reference::{
    estimate_front_speed, fisher_min_front_speed, front_position, heat_kernel_evolve, sigmoid_derivative_identity,
    wick_coefficient, wick_mass, GaussianProfile,
};
use npde::solver::step_explicit;
use npde::stencil::{laplacian_1d, laplacian_2d_5pt, laplacian_2d_9pt, variable_stencil_1d};
use npde::train::{pipeline_gradient, pipeline_loss, Pipeline, Sample, Stage};
use npde::{BoundaryCondition, EllipticCoefficients, FieldState, GridSpec, ReactionSpec};

pub const SUITES: [&str; 5] = ["stencils", "equivalence", "gradients", "oracles", "all"];

pub fn is_suite(name: &str) -> bool {
    SUITES.contains(&name)
}

pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub measured: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.measured.is_finite() && self.measured <= self.tol
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}/{} measured={} tol={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            fmt_num(self.measured),
            fmt_num(self.tol)
        )
    }
}

type Res = anyhow::Result<f64>;

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn flat<const N: usize>(rows: [[f64; N]; N]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

pub fn run(suite: &str) -> anyhow::Result<Vec<Check>> {
    let mut out = Vec::new();
    let all = suite == "all";
    let mut add = |suite: &'static str, name: &'static str, tol: f64, f: fn() -> Res| -> anyhow::Result<()> {
        out.push(Check { suite, name, measured: f()?, tol });
        Ok(())
    };
    if all || suite == "stencils" {
        add("stencils", "nine_point_taps", 0.0, nine_point_taps)?;
        add("stencils", "five_point_taps", 0.0, five_point_taps)?;
        add("stencils", "three_point_taps", 0.0, three_point_taps)?;
        add("stencils", "nine_point_linear_nullspace", 1e-12, nine_point_linear_nullspace)?;
        add("stencils", "variable_stencil_constant_a", 1e-14, variable_stencil_constant_a)?;
    }
    if all || suite == "equivalence" {
        add("equivalence", "conv1d_vs_explicit_step", 1e-12, conv1d_vs_solver)?;
        add("equivalence", "dense_vs_channel_view", 1e-12, dense_vs_channels)?;
        add("equivalence", "rnn_vs_recurrence", 1e-10, rnn_vs_recurrence)?;
    }
    if all || suite == "gradients" {
        add("gradients", "dense_pipeline", 1e-5, dense_gradient)?;
        add("gradients", "diffusion_pipeline", 1e-5, diffusion_gradient)?;
    }
    if all || suite == "oracles" {
        add("oracles", "heat_kernel_error", 1e-3, heat_kernel_error)?;
        add("oracles", "heat_kernel_order", 0.8, heat_kernel_order)?;
        add("oracles", "fisher_front_speed", 0.05, fisher_front_speed)?;
        add("oracles", "mass_conservation", 1e-10, mass_conservation)?;
        add("oracles", "sigmoid_derivative", 1e-15, sigmoid_derivative)?;
        add("oracles", "wick_round_trip", 1e-15, wick_round_trip)?;
    }
    Ok(out)
}

fn nine_point_taps() -> Res {
    let want = [[0.25, 0.5, 0.25], [0.5, -3.0, 0.5], [0.25, 0.5, 0.25]];
    Ok(max_abs(&flat(laplacian_2d_9pt().taps()), &flat(want)))
}

fn five_point_taps() -> Res {
    let want = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
    Ok(max_abs(&flat(laplacian_2d_5pt().taps()), &flat(want)))
}

fn three_point_taps() -> Res {
    Ok(max_abs(&laplacian_1d(1.0)?.taps(), &[1.0, -2.0, 1.0]).max(max_abs(&laplacian_1d(0.5)?.taps(), &[4.0, -8.0, 4.0])))
}

/// f(x, y) = x convolved by hand over interior nodes.
fn nine_point_linear_nullspace() -> Res {
    let n = 9;
    let taps = laplacian_2d_9pt().taps();
    let f = |_r: usize, c: usize| 0.3 * c as f64 - 1.0;
    let mut worst = 0.0f64;
    for r in 1..n - 1 {
        for c in 1..n - 1 {
            let mut s = 0.0;
            for (dr, row) in taps.iter().enumerate() {
                for (dc, t) in row.iter().enumerate() {
                    s += t * f(r + dr - 1, c + dc - 1);
                }
            }
            worst = worst.max(s.abs());
        }
    }
    let field = FieldState::from_2d(n, n, (0..n * n).map(|i| f(i / n, i % n)).collect())?;
    let applied = laplacian_2d_9pt().apply(&field, BoundaryCondition::Extend)?;
    for r in 1..n - 1 {
        for c in 1..n - 1 {
            worst = worst.max(applied.at(r, c).abs());
        }
    }
    Ok(worst)
}

/// With constant A the variable stencil is A times the plain Laplacian.
fn variable_stencil_constant_a() -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (a, h) = (rng.gen_range(0.0..2.0), rng.gen_range(0.1..2.0));
        let want = laplacian_1d(h)?.taps().map(|t| a * t);
        worst = worst.max(max_abs(&variable_stencil_1d(a, a, a, h)?.taps(), &want) / want[0].abs().max(1.0));
    }
    Ok(worst)
}

fn conv1d_vs_solver() -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let bcs = [
        BoundaryCondition::Periodic,
        BoundaryCondition::Mirror,
        BoundaryCondition::Extend,
        BoundaryCondition::dirichlet(0.25),
    ];
    let mut worst = 0.0f64;
    for trial in 0..40 {
        let n = rng.gen_range(3..40);
        let h = rng.gen_range(0.05..1.0);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let amax = a.iter().copied().fold(1e-3, f64::max);
        let k = rng.gen_range(0.1..0.5) * h * h / amax;
        let reaction = match trial % 3 {
            0 => ReactionSpec::None,
            1 => ReactionSpec::Fisher { rate: rng.gen_range(0.0..3.0) },
            _ => ReactionSpec::Sigmoid { gain: rng.gen_range(-2.0..2.0) },
        };
        let grid = GridSpec::new_1d(n, h, k, bcs[trial % 4])?;
        let coeffs = EllipticCoefficients::with_diffusion_field(a, reaction);
        let u = FieldState::from_1d((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let via_block = gen_conv1d(&coeffs, &grid)?.forward(u.values())?;
        worst = worst.max(max_abs(&via_block, step_explicit(&u, &coeffs, &grid)?.values()));
    }
    Ok(worst)
}

fn dense_vs_channels() -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..40 {
        let (o, i) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let w = Matrix::new(o, i, (0..o * i).map(|_| rng.gen_range(-2.0..2.0)).collect())?;
        let b = (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let block = gen_dense(w, b, ReactionSpec::Sigmoid { gain: 1.0 })?;
        let u: Vec<f64> = (0..i).map(|_| rng.gen_range(-1.0..1.0)).collect();
        worst = worst.max(max_abs(&block.forward(&u)?, &block.forward_channels(&u)?));
    }
    Ok(worst)
}

/// Relative to the state size, since the z-recurrence amplifies transverse modes.
fn rnn_vs_recurrence() -> Res {
    let (n, h, k) = (16, 0.2, 0.01);
    let (dxy, dz, v) = (0.05, 0.4, 1.3);
    let grid = GridSpec::new_1d(n, h, k, BoundaryCondition::Periodic)?;
    let cell = gen_rnn_cell(dxy, dz, v, &grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cur: Vec<f64> = (0..n).map(|j| (j as f64 * 0.4).sin()).collect();
    let mut prev: Vec<f64> = (0..n).map(|j| (j as f64 * 0.4).cos()).collect();
    let mut state: Vec<f64> = cur.iter().chain(&prev).copied().collect();
    let h2 = h * h;
    let mut worst = 0.0f64;
    for _ in 0..60 {
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
        state = rnn_forward(&cell, &state, &f)?;
        let next: Vec<f64> = (0..n)
            .map(|j| {
                let lap = (cur[(j + n - 1) % n] - 2.0 * cur[j] + cur[(j + 1) % n]) / h2;
                let rhs = v * cur[j] / k - dxy * lap - dz * (-2.0 * cur[j] + prev[j]) / h2 - f[j];
                rhs / (v / k + dz / h2)
            })
            .collect();
        prev = std::mem::replace(&mut cur, next);
        let scale = cur.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        worst = worst.max(max_abs(&state[..n], &cur) / scale);
    }
    Ok(worst)
}

fn gradient_rel_err(p: &Pipeline, s: &Sample, loss: &LossSpec, theta: &ThetaVector) -> Res {
    let g = pipeline_gradient(p, s, loss, theta)?;
    let fd = grad_fd(|t| pipeline_loss(p, s, loss, t).unwrap_or(f64::NAN), theta.values(), 1e-6)?;
    Ok(g.iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max))
}

fn dense_gradient() -> Res {
    let sig = ReactionSpec::Sigmoid { gain: 1.0 };
    let p = Pipeline::new(vec![
        Stage::Dense { in_dim: 3, out_dim: 5, activation: sig.clone() },
        Stage::Dense { in_dim: 5, out_dim: 2, activation: sig },
    ])?;
    let s = Sample { input: vec![0.4, -0.9, 0.2], target: vec![0.9, 0.1] };
    gradient_rel_err(&p, &s, &LossSpec::L2Decay { nu: 1e-3 }, &p.init_theta(17))
}

fn diffusion_gradient() -> Res {
    let grid = GridSpec::new_1d(12, 0.5, 0.05, BoundaryCondition::Periodic)?;
    let p = Pipeline::new(vec![Stage::Diffusion { grid, steps: 3, reaction: ReactionSpec::None }])?;
    let input = (0..12).map(|j| (-(j as f64 - 5.5).powi(2) / 4.0).exp()).collect();
    let s = Sample { input, target: vec![0.2; 12] };
    gradient_rel_err(&p, &s, &LossSpec::L2Decay { nu: 0.0 }, &p.init_theta(17))
}

/// Explicit heat solve of a periodic Gaussian against the exact kernel.
fn heat_error_at(h: f64) -> Res {
    let width = 20.0;
    let n = (width / h).round() as usize;
    let k = 0.25 * h * h;
    let steps = (0.5 / k).round() as usize;
    let grid = GridSpec::new_1d(n, h, k, BoundaryCondition::Periodic)?;
    let p = GaussianProfile::new(1.0, width / 2.0, 1.0)?;
    let mut u = FieldState::sample_1d(&grid, |x| p.eval_periodic(x, width))?;
    let coeffs = EllipticCoefficients::diffusion(&grid, 1.0, ReactionSpec::None);
    for _ in 0..steps {
        u = step_explicit(&u, &coeffs, &grid)?;
    }
    let exact = heat_kernel_evolve(p, 1.0, steps as f64 * k)?;
    let want: Vec<f64> = grid.coordinates().iter().map(|&x| exact.eval_periodic(x, width)).collect();
    Ok(max_abs(u.values(), &want))
}

fn heat_kernel_error() -> Res {
    heat_error_at(0.1)
}

/// |err(h)/err(h/2) − 4|: second order in space at fixed r.
fn heat_kernel_order() -> Res {
    Ok((heat_error_at(0.1)? / heat_error_at(0.05)? - 4.0).abs())
}

/// Relative deviation of the measured front speed from 2√(rD).
fn fisher_front_speed() -> Res {
    let (n, h, k) = (1200, 0.25, 0.01);
    let grid = GridSpec::new_1d(n, h, k, BoundaryCondition::Extend)?;
    let coeffs = EllipticCoefficients::diffusion(&grid, 1.0, ReactionSpec::Fisher { rate: 1.0 });
    let mut u = FieldState::from_1d((0..n).map(|j| if j < 100 { 1.0 } else { 0.0 }).collect())?;
    let (mut times, mut fronts) = (Vec::new(), Vec::new());
    for s in 1..=10_000 {
        u = step_explicit(&u, &coeffs, &grid)?;
        if s % 100 == 0 {
            times.push(s as f64 * k);
            fronts.push(front_position(u.values(), h).ok_or_else(|| anyhow::anyhow!("front left the domain"))?);
        }
    }
    let target = fisher_min_front_speed(1.0, 1.0)?;
    Ok((estimate_front_speed(&times, &fronts)? - target).abs() / target)
}

fn mass_conservation() -> Res {
    let n = 64;
    let grid = GridSpec::new_1d(n, 0.1, 0.002, BoundaryCondition::Periodic)?;
    let a = (0..n).map(|j| 0.6 + 0.5 * (2.0 * std::f64::consts::PI * j as f64 / n as f64).sin()).collect();
    let coeffs = EllipticCoefficients::with_diffusion_field(a, ReactionSpec::None);
    let u0 = FieldState::from_1d((0..n).map(|j| 1.0 + (0.3 * j as f64).cos()).collect())?;
    let mut u = u0.clone();
    for _ in 0..1000 {
        u = step_explicit(&u, &coeffs, &grid)?;
    }
    Ok((u.sum() - u0.sum()).abs() / u0.sum().abs())
}

fn sigmoid_derivative() -> Res {
    let mut worst = 0.0f64;
    for r in [-2.0, 0.5, 1.0, 3.0] {
        for x in [-4.0, -0.3, 0.0, 0.7, 5.0] {
            let (lhs, rhs) = sigmoid_derivative_identity(r, x);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

fn wick_round_trip() -> Res {
    let mut worst = 0.0f64;
    for m in [0.1, 1.0, 7.5] {
        worst = worst.max((wick_mass(wick_coefficient(1.0, m)?)? - m).abs() / m);
    }
    Ok(worst)
}
