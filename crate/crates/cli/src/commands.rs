//! The `solve`, `train` and `gen-block` commands.
//!
//! Each command builds and validates everything it needs from the config
//! before touching the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use npde::blocks::{gen_conv1d, gen_conv2d, gen_rnn_cell, rbm_from_coefficients, Block};
use npde::io::{block_to_json, field_to_csv, field_to_pgm, fmt_num, load_block, save_block, trajectory_to_csv};
use npde::solver::{cfl_check, solve_forward, step_two_component, CflStatus, Trajectory};
use npde::stencil::{laplacian_2d_5pt, laplacian_2d_9pt, EllipticCoefficients};
use npde::train::{train_supervised, Pipeline, Stage, StopReason};
use npde::{FieldState, GridSpec, NpdeError, Shape};

use crate::config::{BlockKind, Coefficient, Conv2dStencil, ExperimentConfig, Format, PdeKind};
use crate::Failure;

pub struct RunContext {
    pub config: ExperimentConfig,
    pub config_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
}

type Outcome = std::result::Result<(), Failure>;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn summary(prefix: &str, f: &FieldState) -> String {
    format!("{prefix}min={} max={} sum={}", fmt_num(f.min()), fmt_num(f.max()), fmt_num(f.sum()))
}

impl RunContext {
    fn seed(&self) -> u64 {
        self.seed_override
            .or(self.config.run.as_ref().map(|r| r.seed))
            .unwrap_or(0)
    }

    fn wants(&self, f: Format, default: bool) -> bool {
        match &self.config.io {
            Some(io) if !io.formats.is_empty() => io.formats.contains(&f),
            _ => default,
        }
    }
}

pub fn cmd_solve(ctx: &RunContext) -> Outcome {
    let cfg = &ctx.config;
    let grid = cfg.grid_spec()?;
    let model = cfg.model_section()?;
    let run = cfg.run_section()?;
    if run.n_steps == 0 {
        return Err(Failure::Config(anyhow::anyhow!("run.n_steps must be at least 1")));
    }
    let stride = run.frame_stride.unwrap_or(run.n_steps);
    if stride == 0 || stride > run.n_steps {
        return Err(Failure::Config(anyhow::anyhow!("run.frame_stride must lie in 1..=n_steps")));
    }
    let is_2d = grid.dimensionality() == 2;
    if !is_2d && ctx.wants(Format::Pgm, false) {
        return Err(Failure::Config(anyhow::anyhow!("pgm output needs a 2D grid")));
    }
    if model.pde == PdeKind::GrayScott {
        return solve_gray_scott(ctx, &grid, run.n_steps, stride);
    }
    let coeffs = cfg.coefficients(&grid)?;
    let initial = cfg.initial_field(&grid, ctx.seed(), &ctx.config_dir)?;
    match cfl_check(&coeffs, &grid) {
        CflStatus::Stable => {}
        CflStatus::Unstable { max_r_a } if run.scheme == npde::Scheme::Explicit => {
            eprintln!("warning: explicit scheme is unstable (max r·A = {})", fmt_num(max_r_a));
        }
        CflStatus::NegativeDiffusion { min_a } => {
            eprintln!("warning: negative diffusion coefficient {}", fmt_num(min_a));
        }
        CflStatus::Unstable { .. } => {}
    }
    prepare_out(&ctx.out_dir)?;
    let traj = match solve_forward(&initial, &coeffs, &grid, run.n_steps, run.scheme) {
        Ok(t) => t,
        Err(NpdeError::Diverged { step }) => return Err(Failure::SolveDiverged(step)),
        Err(e) => return Err(Failure::Config(e.into())),
    };
    if ctx.wants(Format::Csv, true) {
        let frames = Trajectory {
            grid,
            slices: traj.slices.iter().step_by(stride).cloned().collect(),
        };
        write(&ctx.out_dir.join("trajectory.csv"), trajectory_to_csv(&frames))?;
        write(&ctx.out_dir.join("final.csv"), field_to_csv(traj.last()))?;
    }
    if is_2d && ctx.wants(Format::Pgm, true) {
        for (i, step) in (stride..=run.n_steps).step_by(stride).enumerate() {
            write(&ctx.out_dir.join(format!("frame_{i:05}.pgm")), field_to_pgm(&traj.slices[step])?)?;
        }
    }
    println!("{}", summary("", traj.last()));
    Ok(())
}

fn solve_gray_scott(ctx: &RunContext, grid: &GridSpec, n_steps: usize, stride: usize) -> Outcome {
    let cfg = &ctx.config;
    let model = cfg.model_section()?;
    let (du, dv, rxn) = cfg.two_component()?;
    let Shape::D2(rows, cols) = grid.shape() else {
        return Err(Failure::Config(anyhow::anyhow!("gray_scott needs grid.dims = 2")));
    };
    if model.initial.is_some() || model.a.is_some() || model.reaction.is_some() {
        return Err(Failure::Config(anyhow::anyhow!(
            "gray_scott takes du, dv, feed, kill, seed_half_width and noise only"
        )));
    }
    let half = model.seed_half_width.unwrap_or(5);
    let noise = model.noise.unwrap_or(0.01);
    if !(noise.is_finite() && noise >= 0.0) || 2 * half > rows.min(cols) {
        return Err(Failure::Config(anyhow::anyhow!("invalid seed_half_width or noise")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
    let mut jitter = || if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 };
    let inside = |i: usize, n: usize| i + half >= n / 2 && i < n / 2 + half;
    let (mut uv, mut vv) = (Vec::with_capacity(rows * cols), Vec::with_capacity(rows * cols));
    for r in 0..rows {
        for c in 0..cols {
            let (u, v) = if inside(r, rows) && inside(c, cols) { (0.5, 0.25) } else { (1.0, 0.0) };
            uv.push(u + jitter());
            vv.push(f64::max(v + jitter(), 0.0));
        }
    }
    let mut u = FieldState::from_2d(rows, cols, uv).map_err(anyhow::Error::from)?;
    let mut v = FieldState::from_2d(rows, cols, vv).map_err(anyhow::Error::from)?;
    prepare_out(&ctx.out_dir)?;
    let mut frames = vec![v.clone()];
    let want_pgm = ctx.wants(Format::Pgm, true);
    for step in 1..=n_steps {
        (u, v) = match step_two_component(&u, &v, du, dv, &rxn, grid) {
            Ok(pair) => pair,
            Err(NpdeError::NonFinite(_)) => return Err(Failure::SolveDiverged(step)),
            Err(e) => return Err(Failure::Config(e.into())),
        };
        if step % stride == 0 {
            if want_pgm {
                let i = step / stride - 1;
                write(&ctx.out_dir.join(format!("frame_{i:05}.pgm")), field_to_pgm(&v)?)?;
            }
            frames.push(v.clone());
        }
    }
    if ctx.wants(Format::Csv, true) {
        let traj = Trajectory {
            grid: *grid,
            slices: frames,
        };
        write(&ctx.out_dir.join("trajectory_v.csv"), trajectory_to_csv(&traj))?;
        write(&ctx.out_dir.join("final_u.csv"), field_to_csv(&u))?;
        write(&ctx.out_dir.join("final_v.csv"), field_to_csv(&v))?;
    }
    println!("{}", summary("u ", &u));
    println!("{}", summary("v ", &v));
    Ok(())
}

pub fn cmd_train(ctx: &RunContext) -> Outcome {
    let cfg = &ctx.config;
    let t = cfg.train.as_ref().context("missing `train` section")?;
    let pipeline = cfg.pipeline()?;
    let data = cfg.dataset(&ctx.config_dir)?;
    let loss = cfg.loss()?;
    let opt = cfg.optimizer()?;
    if t.target_loss.is_nan() {
        return Err(Failure::Config(anyhow::anyhow!("train.target_loss must be a number")));
    }
    if let (Some(d), Some(s)) = (pipeline.input_dim(), data.samples.first()) {
        if d != s.input.len() || pipeline.output_dim() != Some(s.target.len()) {
            return Err(Failure::Config(anyhow::anyhow!(
                "pipeline maps {d} → {:?} but samples are {} → {}",
                pipeline.output_dim(),
                s.input.len(),
                s.target.len()
            )));
        }
    }
    prepare_out(&ctx.out_dir)?;
    let report = train_supervised(&pipeline, &data, &loss, &opt, ctx.seed(), t.max_epochs, t.target_loss)
        .map_err(|e| Failure::Config(e.into()))?;
    write(&ctx.out_dir.join("loss.csv"), report.loss_csv())?;
    let blocks = trained_blocks(&pipeline, report.final_theta.values())?;
    let json = serde_json::to_string_pretty(&blocks).context("cannot serialize model")? + "\n";
    write(&ctx.out_dir.join("model.json"), json)?;
    println!("{}", report.summary_line());
    if let Some(v) = report.validation_loss {
        println!("validation_loss={}", fmt_num(v));
    }
    match report.stop_reason {
        StopReason::Divergence => Err(Failure::TrainDiverged(report.epochs)),
        _ if report.converged => Ok(()),
        _ => Err(Failure::NotConverged),
    }
}

/// Dense stages become dense blocks; learned diffusion stages become the
/// conv1d blocks their coefficient field generates.
fn trained_blocks(pipeline: &Pipeline, theta: &[f64]) -> anyhow::Result<Vec<Block>> {
    let mut at = 0;
    let mut out = Vec::new();
    for s in pipeline.stages() {
        match s {
            Stage::Dense { in_dim, out_dim, .. } => {
                let n = out_dim * (in_dim + 1);
                let single = Pipeline::new(vec![s.clone()])?;
                out.extend(single.dense_blocks(&theta[at..at + n])?.into_iter().map(Block::Dense));
                at += n;
            }
            Stage::Diffusion { grid, reaction, .. } => {
                let n = grid.len();
                let coeffs = EllipticCoefficients::with_diffusion_field(theta[at..at + n].to_vec(), reaction.clone());
                out.push(Block::Conv1d(gen_conv1d(&coeffs, grid)?));
                at += n;
            }
        }
    }
    Ok(out)
}

fn build_block(ctx: &RunContext) -> anyhow::Result<Block> {
    let cfg = &ctx.config;
    let b = cfg.block.as_ref().context("missing `block` section")?;
    let need = |v: Option<f64>, name: &str| v.with_context(|| format!("block.{name} is required for {:?}", b.kind));
    let block = match b.kind {
        BlockKind::Conv1d => {
            let grid = cfg.grid_spec()?;
            Block::Conv1d(gen_conv1d(&cfg.coefficients(&grid)?, &grid)?)
        }
        BlockKind::Rbm => {
            let grid = cfg.grid_spec()?;
            Block::Rbm(rbm_from_coefficients(&cfg.coefficients(&grid)?, &grid)?)
        }
        BlockKind::Conv2d => {
            let grid = cfg.grid_spec()?;
            ensure!(grid.dimensionality() == 2, "conv2d needs grid.dims = 2");
            let coeffs = cfg.coefficients(&grid)?;
            let a = match cfg.model_section()?.a {
                Some(Coefficient::Scalar(a)) => a,
                _ => bail!("conv2d needs a scalar model.a"),
            };
            let base = match b.stencil.unwrap_or_default() {
                Conv2dStencil::NinePoint => laplacian_2d_9pt(),
                Conv2dStencil::FivePoint => laplacian_2d_5pt(),
            };
            let kernel = base.scaled(grid.r() * a)?;
            let block = gen_conv2d(kernel, b.channels.unwrap_or(1), grid.bc())?;
            Block::Conv2d(block.with_reaction(coeffs.reaction, grid.k()))
        }
        BlockKind::Dense => {
            let in_dim = b.in_dim.context("block.in_dim is required for dense")?;
            let out_dim = b.out_dim.context("block.out_dim is required for dense")?;
            let stage = Stage::Dense {
                in_dim,
                out_dim,
                activation: b.activation.clone().unwrap_or_default(),
            };
            let p = Pipeline::new(vec![stage])?;
            let theta = p.init_theta(ctx.seed());
            Block::Dense(p.dense_blocks(theta.values())?.remove(0))
        }
        BlockKind::Rnn => {
            let grid = cfg.grid_spec()?;
            Block::Rnn(gen_rnn_cell(need(b.dxy, "dxy")?, need(b.dz, "dz")?, need(b.v, "v")?, &grid)?)
        }
    };
    if b.kind != BlockKind::Dense && (b.in_dim.is_some() || b.out_dim.is_some()) {
        bail!("block.in_dim/out_dim only apply to dense blocks");
    }
    Ok(block)
}

pub fn cmd_gen_block(ctx: &RunContext) -> Outcome {
    let block = build_block(ctx)?;
    prepare_out(&ctx.out_dir)?;
    let path = ctx.out_dir.join("block.json");
    save_block(&block, &path)?;
    let back = load_block(&path)?;
    let first = fs::read(&path).context("cannot re-read block file")?;
    if back != block || block_to_json(&back)?.into_bytes() != first {
        return Err(Failure::Config(anyhow::anyhow!("block file did not round-trip exactly")));
    }
    println!("kind={} path={}", block.kind(), path.display());
    Ok(())
}
