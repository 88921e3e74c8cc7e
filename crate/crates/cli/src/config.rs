//! Experiment configuration files.
//!
//! One JSON object per experiment with the sections `grid`, `model`, `run`,
//! `optimizer`, `loss`, `train`, `block` and `io`. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Deserializer};

use npde::optim::{LossSpec, OptimizerConfig, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, ADAM_ETA, LBFGS_MEMORY};
use npde::solver::{Scheme, TwoComponentReaction};
use npde::stencil::EllipticCoefficients;
use npde::train::{Dataset, Pipeline, Stage};
use npde::{BoundaryCondition, FieldState, GridSpec, ReactionSpec};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: Option<GridConfig>,
    pub model: Option<ModelConfig>,
    pub run: Option<RunConfig>,
    pub optimizer: Option<OptimizerSection>,
    pub loss: Option<LossSection>,
    pub train: Option<TrainSection>,
    pub block: Option<BlockSection>,
    pub io: Option<IoConfig>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    Dirichlet,
    Periodic,
    Mirror,
    Extend,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_points: usize,
    pub h: f64,
    pub k: f64,
    pub bc: BcKind,
    pub bc_value: Option<f64>,
    #[serde(default = "one")]
    pub dims: usize,
}

fn one() -> usize {
    1
}

/// A scalar broadcast to every node, or one value per node.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Scalar(f64),
    Field(Vec<f64>),
}

impl Coefficient {
    fn expand(&self, n: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            Coefficient::Scalar(v) => Ok(vec![*v; n]),
            Coefficient::Field(v) => {
                ensure!(v.len() == n, "model.{name} has {} entries, grid has {n} nodes", v.len());
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    Heat,
    Fisher,
    ReactionDiffusion,
    GrayScott,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Constant { value: f64 },
    Gaussian {
        #[serde(default = "unit")]
        amplitude: f64,
        center: f64,
        sigma2: f64,
    },
    /// 1 left of `position`, 0 to the right (or `high`/`low`).
    Step {
        position: f64,
        #[serde(default = "unit")]
        high: f64,
        #[serde(default)]
        low: f64,
    },
    Values { values: Vec<f64> },
    File { path: PathBuf },
    /// Uniform noise in `±amplitude` around `mean`, seeded by `run.seed`.
    Random {
        #[serde(default)]
        mean: f64,
        amplitude: f64,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub pde: PdeKind,
    pub a: Option<Coefficient>,
    pub b: Option<Coefficient>,
    pub reaction: Option<ReactionSpec>,
    pub rate: Option<f64>,
    pub initial: Option<InitialCondition>,
    pub du: Option<f64>,
    pub dv: Option<f64>,
    pub feed: Option<f64>,
    pub kill: Option<f64>,
    /// Half-width of the central seeded square (gray-scott), in nodes.
    pub seed_half_width: Option<usize>,
    /// Amplitude of the uniform start-up noise (gray-scott).
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_steps: usize,
    #[serde(default = "explicit")]
    pub scheme: Scheme,
    #[serde(default)]
    pub seed: u64,
    pub frame_stride: Option<usize>,
}

fn explicit() -> Scheme {
    Scheme::Explicit
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Lbfgs,
    GaussNewton,
    Newton,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    pub eta: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub memory: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L2,
    PdeConstrained,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub kind: Option<LossKind>,
    pub nu: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageConfig {
    Dense {
        in_dim: usize,
        out_dim: usize,
        #[serde(default)]
        activation: ReactionSpec,
    },
    /// Learnable-A diffusion over the `grid` section.
    Diffusion {
        steps: usize,
        #[serde(default)]
        reaction: ReactionSpec,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub dataset: PathBuf,
    pub pipeline: Vec<StageConfig>,
    pub max_epochs: usize,
    #[serde(deserialize_with = "extended_float")]
    pub target_loss: f64,
}

/// A JSON number, or one of the strings "inf", "infinity", "-inf".
fn extended_float<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) => match s.to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
            "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
            other => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {other:?}"))),
        },
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Conv1d,
    Conv2d,
    Dense,
    Rnn,
    Rbm,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Conv2dStencil {
    #[default]
    NinePoint,
    FivePoint,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSection {
    pub kind: BlockKind,
    pub channels: Option<usize>,
    pub stencil: Option<Conv2dStencil>,
    pub in_dim: Option<usize>,
    pub out_dim: Option<usize>,
    pub activation: Option<ReactionSpec>,
    pub dxy: Option<f64>,
    pub dz: Option<f64>,
    pub v: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Pgm,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn grid_section(&self) -> Result<&GridConfig> {
        self.grid.as_ref().context("missing `grid` section")
    }

    pub fn model_section(&self) -> Result<&ModelConfig> {
        self.model.as_ref().context("missing `model` section")
    }

    pub fn run_section(&self) -> Result<&RunConfig> {
        self.run.as_ref().context("missing `run` section")
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let g = self.grid_section()?;
        let bc = match g.bc {
            BcKind::Dirichlet => BoundaryCondition::dirichlet(g.bc_value.unwrap_or(0.0)),
            BcKind::Periodic => BoundaryCondition::Periodic,
            BcKind::Mirror => BoundaryCondition::Mirror,
            BcKind::Extend => BoundaryCondition::Extend,
        };
        if g.bc_value.is_some() && g.bc != BcKind::Dirichlet {
            bail!("grid.bc_value only applies to a dirichlet boundary");
        }
        let spec = match g.dims {
            1 => GridSpec::new_1d(g.n_points, g.h, g.k, bc),
            2 => GridSpec::new_2d(g.n_points, g.h, g.k, bc),
            d => bail!("grid.dims must be 1 or 2, got {d}"),
        };
        spec.context("invalid grid")
    }

    /// Single-component coefficients for every kind except gray-scott.
    pub fn coefficients(&self, grid: &GridSpec) -> Result<EllipticCoefficients> {
        let m = self.model_section()?;
        let n = grid.len();
        let a = m.a.as_ref().context("model.a is required")?.expand(n, "a")?;
        let b = match &m.b {
            Some(b) => b.expand(n, "b")?,
            None => vec![0.0; n],
        };
        let reaction = match m.pde {
            PdeKind::Heat => {
                ensure!(m.rate.is_none(), "model.rate only applies to fisher");
                let r = m.reaction.clone().unwrap_or_default();
                ensure!(
                    matches!(r, ReactionSpec::None | ReactionSpec::Source { .. }),
                    "heat models take no reaction other than a source"
                );
                r
            }
            PdeKind::Fisher => {
                ensure!(m.reaction.is_none(), "fisher models set model.rate, not model.reaction");
                ReactionSpec::Fisher {
                    rate: m.rate.context("model.rate is required for fisher")?,
                }
            }
            PdeKind::ReactionDiffusion => m.reaction.clone().context("model.reaction is required")?,
            PdeKind::GrayScott => bail!("gray_scott is a two-component model"),
        };
        let coeffs = EllipticCoefficients::new(a, b, reaction);
        coeffs.validate(grid).context("invalid model coefficients")?;
        Ok(coeffs)
    }

    pub fn initial_field(&self, grid: &GridSpec, seed: u64, config_dir: &Path) -> Result<FieldState> {
        let m = self.model_section()?;
        let init = m.initial.as_ref().context("model.initial is required")?;
        build_initial(init, grid, seed, config_dir)
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig> {
        let o = self.optimizer.as_ref().context("missing `optimizer` section")?;
        let eta = o.eta.unwrap_or(match o.kind {
            OptimizerKind::Adam => ADAM_ETA,
            OptimizerKind::Sgd => 0.01,
            _ => 1.0,
        });
        let unused = |name: &str, set: bool| -> Result<()> {
            ensure!(!set, "optimizer.{name} does not apply to {:?}", o.kind);
            Ok(())
        };
        if o.kind != OptimizerKind::Adam {
            unused("beta1", o.beta1.is_some())?;
            unused("beta2", o.beta2.is_some())?;
            unused("eps", o.eps.is_some())?;
        }
        if o.kind != OptimizerKind::Lbfgs {
            unused("memory", o.memory.is_some())?;
        }
        let cfg = match o.kind {
            OptimizerKind::Sgd => OptimizerConfig::Sgd { eta },
            OptimizerKind::Adam => OptimizerConfig::Adam {
                eta,
                beta1: o.beta1.unwrap_or(ADAM_BETA1),
                beta2: o.beta2.unwrap_or(ADAM_BETA2),
                eps: o.eps.unwrap_or(ADAM_EPS),
            },
            OptimizerKind::Lbfgs => OptimizerConfig::Lbfgs {
                eta,
                memory: o.memory.unwrap_or(LBFGS_MEMORY),
            },
            OptimizerKind::GaussNewton => OptimizerConfig::GaussNewton { eta },
            OptimizerKind::Newton => OptimizerConfig::Newton { eta },
        };
        cfg.validate().context("invalid optimizer")?;
        Ok(cfg)
    }

    pub fn loss(&self) -> Result<LossSpec> {
        let l = self.loss.clone().unwrap_or(LossSection {
            kind: None,
            nu: None,
            beta: None,
            lambda: None,
        });
        let kind = l.kind.unwrap_or(if l.beta.is_some() || l.lambda.is_some() {
            LossKind::PdeConstrained
        } else {
            LossKind::L2
        });
        let spec = match kind {
            LossKind::L2 => {
                ensure!(l.beta.is_none() && l.lambda.is_none(), "loss.beta and loss.lambda need kind pde_constrained");
                LossSpec::L2Decay { nu: l.nu.unwrap_or(0.0) }
            }
            LossKind::PdeConstrained => {
                ensure!(l.nu.is_none(), "loss.nu applies to the l2 loss; use loss.beta");
                LossSpec::PdeConstrained {
                    beta: l.beta.unwrap_or(0.0),
                    lambda: l.lambda.unwrap_or(0.0),
                }
            }
        };
        spec.validate().context("invalid loss")?;
        Ok(spec)
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        let t = self.train.as_ref().context("missing `train` section")?;
        let mut grid = None;
        let stages = t
            .pipeline
            .iter()
            .map(|s| {
                Ok(match s {
                    StageConfig::Dense {
                        in_dim,
                        out_dim,
                        activation,
                    } => Stage::Dense {
                        in_dim: *in_dim,
                        out_dim: *out_dim,
                        activation: activation.clone(),
                    },
                    StageConfig::Diffusion { steps, reaction } => {
                        if grid.is_none() {
                            grid = Some(self.grid_spec().context("diffusion stages need a `grid` section")?);
                        }
                        Stage::Diffusion {
                            grid: grid.expect("set above"),
                            steps: *steps,
                            reaction: reaction.clone(),
                        }
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Pipeline::new(stages).context("invalid pipeline")
    }

    /// Dataset path resolved against the config file's directory.
    pub fn dataset(&self, config_dir: &Path) -> Result<Dataset> {
        let t = self.train.as_ref().context("missing `train` section")?;
        let path = resolve(config_dir, &t.dataset);
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read dataset {}", path.display()))?;
        let data: Dataset =
            serde_json::from_str(&text).with_context(|| format!("invalid dataset {}", path.display()))?;
        data.validate().with_context(|| format!("invalid dataset {}", path.display()))?;
        Ok(data)
    }

    pub fn two_component(&self) -> Result<(f64, f64, TwoComponentReaction)> {
        let m = self.model_section()?;
        ensure!(m.pde == PdeKind::GrayScott, "not a gray_scott model");
        let du = m.du.context("model.du is required")?;
        let dv = m.dv.context("model.dv is required")?;
        let feed = m.feed.context("model.feed is required")?;
        let kill = m.kill.context("model.kill is required")?;
        for (name, v) in [("du", du), ("dv", dv), ("feed", feed), ("kill", kill)] {
            ensure!(v.is_finite() && v >= 0.0, "model.{name} must be finite and ≥ 0");
        }
        Ok((du, dv, TwoComponentReaction::gray_scott(feed, kill)))
    }
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn build_initial(init: &InitialCondition, grid: &GridSpec, seed: u64, config_dir: &Path) -> Result<FieldState> {
    use rand::{Rng, SeedableRng};
    let shape = grid.shape();
    let field = match init {
        InitialCondition::Constant { value } => FieldState::constant(shape, *value)?,
        InitialCondition::Gaussian {
            amplitude,
            center,
            sigma2,
        } => {
            let p = npde::reference::GaussianProfile::new(1.0, *center, *sigma2)?;
            if grid.dimensionality() == 1 {
                FieldState::sample_1d(grid, |x| amplitude * p.eval(x))?
            } else {
                FieldState::sample_2d(grid, |x, y| amplitude * p.eval(x) * p.eval(y))?
            }
        }
        InitialCondition::Step { position, high, low } => {
            ensure!(grid.dimensionality() == 1, "step initial conditions are 1D");
            FieldState::sample_1d(grid, |x| if x < *position { *high } else { *low })?
        }
        InitialCondition::Values { values } => FieldState::new(shape, values.clone())?,
        InitialCondition::File { path } => {
            let path = &resolve(config_dir, path);
            let text = fs::read_to_string(path).with_context(|| format!("cannot read initial field {}", path.display()))?;
            let f = npde::io::field_from_csv(&text)?;
            ensure!(f.shape() == shape, "initial field {} has shape {}, grid is {}", path.display(), f.shape(), shape);
            f
        }
        InitialCondition::Random { mean, amplitude } => {
            ensure!(amplitude.is_finite() && *amplitude >= 0.0, "initial.amplitude must be ≥ 0");
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values = (0..grid.len())
                .map(|_| mean + if *amplitude > 0.0 { rng.gen_range(-amplitude..*amplitude) } else { 0.0 })
                .collect();
            FieldState::new(shape, values)?
        }
    };
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ExperimentConfig {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn optimizer_defaults_by_kind() {
        let adam = parse(r#"{"optimizer": {"kind": "adam"}}"#).optimizer().unwrap();
        assert_eq!(adam, OptimizerConfig::adam_defaults());
        let gn = parse(r#"{"optimizer": {"kind": "gauss_newton"}}"#).optimizer().unwrap();
        assert_eq!(gn, OptimizerConfig::GaussNewton { eta: 1.0 });
        assert!(parse(r#"{"optimizer": {"kind": "sgd", "beta1": 0.5}}"#).optimizer().is_err());
        assert!(parse(r#"{"optimizer": {"kind": "adam", "memory": 3}}"#).optimizer().is_err());
    }

    #[test]
    fn loss_kind_follows_keys() {
        let l = parse(r#"{"loss": {"beta": 0.1, "lambda": 2.0}}"#).loss().unwrap();
        assert_eq!(l, LossSpec::PdeConstrained { beta: 0.1, lambda: 2.0 });
        assert_eq!(ExperimentConfig::default().loss().unwrap(), LossSpec::L2Decay { nu: 0.0 });
        assert!(parse(r#"{"loss": {"nu": 0.1, "beta": 0.1}}"#).loss().is_err());
    }

    #[test]
    fn unknown_keys_and_missing_bc_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"grid": {"n_points": 5, "h": 1, "k": 0.1}}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"grdi": {}}"#).is_err());
    }

    #[test]
    fn target_loss_accepts_inf() {
        let c = parse(r#"{"train": {"dataset": "d.json", "pipeline": [], "max_epochs": 1, "target_loss": "inf"}}"#);
        assert_eq!(c.train.unwrap().target_loss, f64::INFINITY);
    }

    #[test]
    fn scalar_and_field_coefficients() {
        let c = parse(r#"{"grid": {"n_points": 3, "h": 1, "k": 0.1, "bc": "periodic"},
                          "model": {"pde": "fisher", "a": [1, 2, 3], "rate": 0.5}}"#);
        let g = c.grid_spec().unwrap();
        let coeffs = c.coefficients(&g).unwrap();
        assert_eq!(coeffs.a, vec![1.0, 2.0, 3.0]);
        assert_eq!(coeffs.reaction, ReactionSpec::Fisher { rate: 0.5 });
        let short = parse(r#"{"grid": {"n_points": 3, "h": 1, "k": 0.1, "bc": "periodic"},
                              "model": {"pde": "heat", "a": [1, 2]}}"#);
        assert!(short.coefficients(&g).is_err());
    }

    #[test]
    fn random_initial_condition_is_seeded() {
        let c = parse(r#"{"grid": {"n_points": 8, "h": 1, "k": 0.1, "bc": "periodic"},
                          "model": {"pde": "heat", "a": 1, "initial": {"kind": "random", "amplitude": 0.5}}}"#);
        let g = c.grid_spec().unwrap();
        let dir = Path::new(".");
        assert_eq!(c.initial_field(&g, 1, dir).unwrap(), c.initial_field(&g, 1, dir).unwrap());
        assert_ne!(c.initial_field(&g, 1, dir).unwrap(), c.initial_field(&g, 2, dir).unwrap());
    }
}
