//! Network blocks generated from the discretized PDE.
//!
//! Every generated block has a solver counterpart: a conv-1D block is one
//! explicit step with a learnable per-node stencil, a conv-2D block is one 2D
//! diffusion step, a dense block is a multi-channel full-size convolution, the
//! residual step is forward Euler on `x' = F(x)`, and the recurrent cell is the
//! traveling-wave recurrence written as `h(τ) = W h(τ-1) + U f(τ)`.

use serde::{Deserialize, Serialize};

use crate::error::{NpdeError, Result};
use crate::grid::{BoundaryCondition, FieldState, Ghost, GridSpec, Shape};
use crate::linalg::Matrix;
use crate::solver::ReactionSpec;
use crate::stencil::{variable_stencil_1d, EllipticCoefficients, Stencil2D};

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(NpdeError::NonFinite(what.into()));
    }
    Ok(())
}

fn ensure_len(x: &[f64], n: usize, what: &str) -> Result<()> {
    if x.len() != n {
        return Err(NpdeError::shape(format!("{what} of length {n}"), x.len()));
    }
    Ok(())
}

/// Per-node three-tap convolution with the Euler identity folded into the
/// center tap. The activation enters as `dt · C(u)` on the input slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1DBlock {
    pub kernels: Vec<[f64; 3]>,
    pub bias: Option<Vec<f64>>,
    pub activation: ReactionSpec,
    pub dt: f64,
    pub bc: BoundaryCondition,
}

impl Conv1DBlock {
    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n < 3 {
            return Err(NpdeError::GridTooSmall(n));
        }
        ensure_finite(&self.kernels.concat(), "conv1d kernels")?;
        if let Some(b) = &self.bias {
            ensure_len(b, n, "bias")?;
            ensure_finite(b, "conv1d bias")?;
        }
        self.activation.validate(n)
    }

    fn convolve(&self, x: &[f64], center_shift: f64) -> Result<Vec<f64>> {
        let n = self.len();
        ensure_len(x, n, "conv1d input")?;
        let read = |i: isize| match self.bc.resolve(i, n) {
            Ghost::Node(j) => x[j],
            Ghost::Fixed(v) => v,
        };
        Ok((0..n)
            .map(|j| {
                let [l, c, r] = self.kernels[j];
                let ji = j as isize;
                let mut acc = l * read(ji - 1) + (c - center_shift) * x[j] + r * read(ji + 1);
                if let Some(b) = &self.bias {
                    acc += b[j];
                }
                if !self.activation.is_none() {
                    acc += self.dt * self.activation.term(x[j], j);
                }
                acc
            })
            .collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.convolve(x, 0.0)
    }

    /// The residual branch `F(x)`: forward pass with the identity removed.
    pub fn forward_without_identity(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.convolve(x, 1.0)
    }

    pub fn forward_field(&self, field: &FieldState) -> Result<FieldState> {
        FieldState::new(field.shape(), self.forward(field.values())?)
    }
}

/// Kernel row j is `k · (1/h²)[A_{j-1}, -2A_j, A_{j+1}] + [0, 1, 0]`.
pub fn gen_conv1d(coeffs: &EllipticCoefficients, grid: &GridSpec) -> Result<Conv1DBlock> {
    let Shape::D1(n) = grid.shape() else {
        return Err(NpdeError::shape("1D grid", grid.shape()));
    };
    coeffs.validate(grid)?;
    if coeffs.has_convection() {
        return Err(NpdeError::Unsupported("conv1d generation requires B = 0".into()));
    }
    let bc = grid.bc();
    let a = &coeffs.a;
    let kernels = (0..n)
        .map(|j| {
            let ji = j as isize;
            let s = variable_stencil_1d(
                a[bc.resolve_coefficient(ji - 1, n)],
                a[j],
                a[bc.resolve_coefficient(ji + 1, n)],
                grid.h(),
            )?
            .scaled(grid.k())?
            .taps();
            Ok([s[0], s[1] + 1.0, s[2]])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Conv1DBlock {
        kernels,
        bias: None,
        activation: coeffs.reaction.clone(),
        dt: grid.k(),
        bc,
    })
}

/// Multi-channel 3×3 convolution; `kernels[o * channels + i]` maps input
/// channel i to output channel o. Output channel o also receives `x_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2DBlock {
    pub channels: usize,
    pub kernels: Vec<Stencil2D>,
    pub activation: ReactionSpec,
    pub dt: f64,
    pub bc: BoundaryCondition,
}

/// Learnable 3×3 block initialized with `kernel_init` on every channel
/// diagonal and zero cross-channel coupling.
pub fn gen_conv2d(kernel_init: Stencil2D, channels: usize, bc: BoundaryCondition) -> Result<Conv2DBlock> {
    if channels == 0 {
        return Err(NpdeError::invalid("channels", "must be at least 1"));
    }
    let mut kernels = vec![Stencil2D::zeros(); channels * channels];
    for c in 0..channels {
        kernels[c * channels + c] = kernel_init;
    }
    Ok(Conv2DBlock {
        channels,
        kernels,
        activation: ReactionSpec::None,
        dt: 1.0,
        bc,
    })
}

impl Conv2DBlock {
    pub fn with_reaction(mut self, activation: ReactionSpec, dt: f64) -> Self {
        self.activation = activation;
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.kernels.len() != self.channels * self.channels {
            return Err(NpdeError::shape(
                format!("{} kernels", self.channels * self.channels),
                self.kernels.len(),
            ));
        }
        for k in &self.kernels {
            Stencil2D::new(k.taps())?;
        }
        if !self.dt.is_finite() {
            return Err(NpdeError::NonFinite("conv2d dt".into()));
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &[FieldState]) -> Result<Vec<FieldState>> {
        if inputs.len() != self.channels {
            return Err(NpdeError::shape(format!("{} input channels", self.channels), inputs.len()));
        }
        let shape = inputs[0].shape();
        if !shape.is_2d() {
            return Err(NpdeError::shape("2D fields", shape));
        }
        for x in inputs {
            x.ensure_shape(shape)?;
        }
        let mut outputs = Vec::with_capacity(self.channels);
        for o in 0..self.channels {
            let mut acc: Vec<f64> = inputs[o].values().to_vec();
            for (i, x) in inputs.iter().enumerate() {
                let kernel = &self.kernels[o * self.channels + i];
                if kernel.taps().iter().flatten().all(|&t| t == 0.0) {
                    continue;
                }
                let conv = kernel.apply(x, self.bc)?;
                for (a, c) in acc.iter_mut().zip(conv.values()) {
                    *a += c;
                }
            }
            if !self.activation.is_none() {
                for (j, a) in acc.iter_mut().enumerate() {
                    *a += self.dt * self.activation.term(inputs[o].values()[j], j);
                }
            }
            outputs.push(FieldState::new(shape, acc)?);
        }
        Ok(outputs)
    }

    pub fn forward_single(&self, x: &FieldState) -> Result<FieldState> {
        Ok(self.forward(std::slice::from_ref(x))?.remove(0))
    }
}

/// Fully connected layer `activation(W u + bias)`, `W` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseBlock {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: ReactionSpec,
}

pub fn gen_dense(weights: Matrix, bias: Vec<f64>, activation: ReactionSpec) -> Result<DenseBlock> {
    let block = DenseBlock {
        weights,
        bias,
        activation,
    };
    block.validate()?;
    Ok(block)
}

impl DenseBlock {
    pub fn out_dim(&self) -> usize {
        self.weights.rows
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.data.len() != self.weights.rows * self.weights.cols {
            return Err(NpdeError::shape("consistent weight matrix", self.weights.data.len()));
        }
        ensure_len(&self.bias, self.out_dim(), "bias")?;
        ensure_finite(&self.weights.data, "dense weights")?;
        ensure_finite(&self.bias, "dense bias")?;
        self.activation.validate(self.out_dim())
    }

    pub fn pre_activation(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weights.mul_vec(u)?;
        for (zi, b) in z.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        Ok(z)
    }

    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        let z = self.pre_activation(u)?;
        Ok(z.iter().enumerate().map(|(i, &zi)| self.activation.activate(zi, i)).collect())
    }

    /// Full-size kernel of output channel `i` (row i of W).
    pub fn channel_kernel(&self, i: usize) -> &[f64] {
        self.weights.row(i)
    }

    /// Same map evaluated channel by channel: each output neuron is a
    /// single-position "valid" convolution of the input with its full-size
    /// kernel.
    pub fn forward_channels(&self, u: &[f64]) -> Result<Vec<f64>> {
        ensure_len(u, self.in_dim(), "dense input")?;
        let m = self.in_dim();
        (0..self.out_dim())
            .map(|i| {
                let kernel = self.channel_kernel(i);
                // kernel of width m slid over an input of width m: one offset
                let a = (0..=u.len() - m)
                    .map(|offset| (0..m).map(|t| kernel[t] * u[offset + t]).sum::<f64>())
                    .sum::<f64>();
                Ok(self.activation.activate(a + self.bias[i], i))
            })
            .collect()
    }
}

/// Branch `F(x)` of a residual unit `x + F(x)`.
pub trait ResidualBranch {
    fn branch(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl ResidualBranch for DenseBlock {
    fn branch(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }
}

impl ResidualBranch for Conv1DBlock {
    fn branch(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_without_identity(x)
    }
}

/// `x_{l+1} = x_l + F(x_l)`.
pub fn residual_step(x: &[f64], block: &dyn ResidualBranch) -> Result<Vec<f64>> {
    let f = block.branch(x)?;
    ensure_len(&f, x.len(), "residual branch output")?;
    Ok(x.iter().zip(&f).map(|(a, b)| a + b).collect())
}

/// Recurrent cell of the traveling-wave recurrence
/// `-v (u_{τ+1} - u_τ)/k = D_xy L_T u_τ + D_z (u_{τ+1} - 2u_τ + u_{τ-1})/h² + f`
/// in stacked form `[u_{τ+1}; u_τ] = [[W1, W2], [I, 0]] [u_τ; u_{τ-1}] + [U f; 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RNNCell {
    pub w1: Matrix,
    pub w2: Matrix,
    pub u: Matrix,
    pub dxy: f64,
    pub dz: f64,
    pub v: f64,
    pub h: f64,
    pub k: f64,
}

/// Transverse three-point Laplacian `(1/h²)[1, -2, 1]` as an n×n matrix.
/// Dirichlet ghosts drop out, so only a zero boundary value is linear.
pub fn transverse_laplacian(n: usize, h: f64, bc: BoundaryCondition) -> Result<Matrix> {
    if let BoundaryCondition::Dirichlet { value } = bc {
        if value != 0.0 {
            return Err(NpdeError::Unsupported(
                "a non-zero dirichlet value makes the transverse operator affine".into(),
            ));
        }
    }
    let s = 1.0 / (h * h);
    let mut m = Matrix::zeros(n, n);
    for j in 0..n {
        m.data[j * n + j] -= 2.0 * s;
        for off in [-1isize, 1] {
            if let Ghost::Node(c) = bc.resolve(j as isize + off, n) {
                m.data[j * n + c] += s;
            }
        }
    }
    Ok(m)
}

pub fn gen_rnn_cell(dxy: f64, dz: f64, v: f64, grid: &GridSpec) -> Result<RNNCell> {
    if !(v.is_finite() && v > 0.0) {
        return Err(NpdeError::invalid("v", "speed must be finite and > 0"));
    }
    if !(dxy.is_finite() && dz.is_finite()) {
        return Err(NpdeError::NonFinite("rnn diffusion constants".into()));
    }
    let Shape::D1(n) = grid.shape() else {
        return Err(NpdeError::shape("1D transverse grid", grid.shape()));
    };
    let (h, k) = (grid.h(), grid.k());
    let h2 = h * h;
    let denom = v * h2 + k * dz;
    if denom.abs() < 1e-300 || !denom.is_finite() {
        return Err(NpdeError::invalid("denominator", "v·h² + k·Dz vanishes"));
    }
    let lt = transverse_laplacian(n, h, grid.bc())?;
    let mut w1 = Matrix::zeros(n, n);
    for (w, l) in w1.data.iter_mut().zip(&lt.data) {
        *w = -k * h2 * dxy * l / denom;
    }
    let diag = (v * h2 + 2.0 * k * dz) / denom;
    for j in 0..n {
        w1.data[j * n + j] += diag;
    }
    Ok(RNNCell {
        w1,
        w2: Matrix::scaled_identity(n, -k * dz / denom),
        u: Matrix::scaled_identity(n, -k * h2 / denom),
        dxy,
        dz,
        v,
        h,
        k,
    })
}

impl RNNCell {
    pub fn size(&self) -> usize {
        self.w1.rows
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.size();
        for (m, name) in [(&self.w1, "W1"), (&self.w2, "W2"), (&self.u, "U")] {
            if m.rows != n || m.cols != n || m.data.len() != n * n {
                return Err(NpdeError::shape(format!("{n}x{n} {name}"), format!("{}x{}", m.rows, m.cols)));
            }
            ensure_finite(&m.data, name)?;
        }
        Ok(())
    }

    /// Full stacked state matrix `[[W1, W2], [I, 0]]` (2n × 2n).
    pub fn stacked_matrix(&self) -> Matrix {
        let n = self.size();
        let mut m = Matrix::zeros(2 * n, 2 * n);
        for r in 0..n {
            for c in 0..n {
                m.set(r, c, self.w1.get(r, c));
                m.set(r, n + c, self.w2.get(r, c));
            }
            m.set(n + r, r, 1.0);
        }
        m
    }
}

/// `[u_{τ+1}; u_τ]` from `[u_τ; u_{τ-1}]` and the forcing `f`.
pub fn rnn_forward(cell: &RNNCell, state: &[f64], forcing: &[f64]) -> Result<Vec<f64>> {
    let n = cell.size();
    ensure_len(state, 2 * n, "stacked state")?;
    ensure_len(forcing, n, "forcing")?;
    let (cur, prev) = state.split_at(n);
    let a = cell.w1.mul_vec(cur)?;
    let b = cell.w2.mul_vec(prev)?;
    let c = cell.u.mul_vec(forcing)?;
    let mut out: Vec<f64> = (0..n).map(|i| a[i] + b[i] + c[i]).collect();
    out.extend_from_slice(cur);
    Ok(out)
}

/// Elman layer: `h = σ_h(U x + W h_prev + b_h)`, `o = σ_o(V h + b_o)`.
#[allow(clippy::too_many_arguments)]
pub fn elman_forward(
    x: &[f64],
    h_prev: &[f64],
    u: &Matrix,
    w: &Matrix,
    v: &Matrix,
    b_h: &[f64],
    b_o: &[f64],
    sigma_h: &ReactionSpec,
    sigma_o: &ReactionSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure_len(b_h, u.rows, "hidden bias")?;
    ensure_len(b_o, v.rows, "output bias")?;
    if w.rows != u.rows || v.cols != u.rows {
        return Err(NpdeError::shape("consistent Elman weights", format!("U {}x{}, W {}x{}, V {}x{}", u.rows, u.cols, w.rows, w.cols, v.rows, v.cols)));
    }
    let ux = u.mul_vec(x)?;
    let wh = w.mul_vec(h_prev)?;
    let h: Vec<f64> = (0..u.rows)
        .map(|i| sigma_h.activate(ux[i] + wh[i] + b_h[i], i))
        .collect();
    let vh = v.mul_vec(&h)?;
    let o = (0..v.rows).map(|i| sigma_o.activate(vh[i] + b_o[i], i)).collect();
    Ok((h, o))
}

/// Bilinear RBM energy `E(v, h) = -vᵀ W h - bᵀ v - cᵀ h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBMEnergy {
    /// visible × hidden
    pub w: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl RBMEnergy {
    pub fn new(w: Matrix, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let rbm = RBMEnergy { w, b, c };
        rbm.validate()?;
        Ok(rbm)
    }

    pub fn visible(&self) -> usize {
        self.w.rows
    }

    pub fn hidden(&self) -> usize {
        self.w.cols
    }

    pub fn validate(&self) -> Result<()> {
        ensure_len(&self.b, self.visible(), "visible bias")?;
        ensure_len(&self.c, self.hidden(), "hidden bias")?;
        ensure_finite(&self.w.data, "rbm weights")?;
        ensure_finite(&self.b, "rbm visible bias")?;
        ensure_finite(&self.c, "rbm hidden bias")
    }

    pub fn energy(&self, v: &[f64], h: &[f64]) -> Result<f64> {
        ensure_len(h, self.hidden(), "hidden state")?;
        let wh = self.w.mul_vec(h)?;
        let vwh: f64 = v.iter().zip(&wh).map(|(a, b)| a * b).sum();
        let bv: f64 = self.b.iter().zip(v).map(|(a, b)| a * b).sum();
        let ch: f64 = self.c.iter().zip(h).map(|(a, b)| a * b).sum();
        Ok(-vwh - bv - ch)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `F(v) = -bᵀv - Σ_h log(1 + exp(c_h + (Wᵀv)_h))`.
pub fn rbm_free_energy(rbm: &RBMEnergy, v: &[f64]) -> Result<f64> {
    ensure_len(v, rbm.visible(), "visible state")?;
    let act = rbm.w.tr_mul_vec(v)?;
    let bv: f64 = rbm.b.iter().zip(v).map(|(a, b)| a * b).sum();
    let sp: f64 = act.iter().zip(&rbm.c).map(|(a, c)| softplus(a + c)).sum();
    Ok(-bv - sp)
}

/// RBM whose weights are the explicit-step matrix of the variable-coefficient
/// stencil: `W[i][j]` is the weight of visible node i in hidden node j.
/// Fixed (dirichlet) ghost contributions land in the hidden bias.
pub fn rbm_from_coefficients(coeffs: &EllipticCoefficients, grid: &GridSpec) -> Result<RBMEnergy> {
    let conv = gen_conv1d(coeffs, grid)?;
    let n = conv.len();
    let mut w = Matrix::zeros(n, n);
    let mut c = vec![0.0; n];
    for (j, taps) in conv.kernels.iter().enumerate() {
        for (t, &tap) in taps.iter().enumerate() {
            match conv.bc.resolve(j as isize + t as isize - 1, n) {
                Ghost::Node(i) => w.data[i * n + j] += tap,
                Ghost::Fixed(value) => c[j] += tap * value,
            }
        }
    }
    RBMEnergy::new(w, vec![0.0; n], c)
}

/// Serialized form of any generated block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Block {
    Conv1d(Conv1DBlock),
    Conv2d(Conv2DBlock),
    Dense(DenseBlock),
    Rnn(RNNCell),
    Rbm(RBMEnergy),
}

impl Block {
    pub fn kind(&self) -> &'static str {
        match self {
            Block::Conv1d(_) => "conv1d",
            Block::Conv2d(_) => "conv2d",
            Block::Dense(_) => "dense",
            Block::Rnn(_) => "rnn",
            Block::Rbm(_) => "rbm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Block::Conv1d(b) => b.validate(),
            Block::Conv2d(b) => b.validate(),
            Block::Dense(b) => b.validate(),
            Block::Rnn(b) => b.validate(),
            Block::Rbm(b) => b.validate(),
        }
    }
}
