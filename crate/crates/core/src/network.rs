//! Activations, feature-space augmentation and forward propagation.
//!
//! Two architectures share one parameterisation `u = (K^[l], b^[l])`, with
//! `f(u, y) = σ(K y + b)`:
//!
//! * [`Architecture::Standard`]: `y^[l+1] = f(u^[l], y^[l])`;
//! * [`Architecture::RungeKutta`]: one explicit RK step of size `h` per layer,
//!   with the layer's control shared by every stage:
//!
//! ```text
//! y_i     = y^[l] + h Σ_{j<i} a_ij f_j,     f_i = f(u^[l], y_i)
//! y^[l+1] = y^[l] + h Σ_i β_i f_i
//! ```
//!
//! Forward passes run on batches stored one sample per matrix row and record
//! everything the backward sweeps need in a [`ForwardTrace`].

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{gemm, Matrix, RngState, Transpose, Vector};
use crate::tableau::ButcherTableau;
use crate::training::ClassifierHead;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softplus,
    /// The logistic function `1 / (1 + e^{-x})`.
    Sigmoid,
    Tanh,
    /// `σ(x) = x`. Only meant for numerical tests (it turns a layer into a
    /// linear ODE); experiment configs reject it.
    Identity,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            // log(1 + e^x) without overflow
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Exact derivative of [`Activation::eval`]; ReLU uses 0 at the kink.
    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activate(a: Activation, v: &[f64]) -> Vector {
    v.iter().map(|&x| a.eval(x)).collect()
}

pub fn activate_deriv(a: Activation, v: &[f64]) -> Vector {
    v.iter().map(|&x| a.deriv(x)).collect()
}

/// Appends `d_star` zeros to `x`.
pub fn augment(x: &[f64], d_star: usize) -> Vector {
    let mut out = Vec::with_capacity(x.len() + d_star);
    out.extend_from_slice(x);
    out.resize(x.len() + d_star, 0.0);
    out
}

/// Stacks samples into a batch matrix, zero-padding each to `width`.
pub fn augment_batch<R: AsRef<[f64]>>(samples: &[R], width: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(samples.len(), width);
    for (i, s) in samples.iter().enumerate() {
        let s = s.as_ref();
        if s.len() > width {
            return Err(Error::dims("augment_batch", width, s.len()));
        }
        m.row_mut(i)[..s.len()].copy_from_slice(s);
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Plain feed-forward network.
    Standard,
    /// Explicit RK discretisation of the network ODE.
    RungeKutta { tableau: ButcherTableau },
}

impl Architecture {
    pub fn euler() -> Self {
        Architecture::RungeKutta {
            tableau: ButcherTableau::euler(),
        }
    }

    pub fn rk4() -> Self {
        Architecture::RungeKutta {
            tableau: ButcherTableau::rk4(),
        }
    }

    pub fn stages(&self) -> usize {
        match self {
            Architecture::Standard => 1,
            Architecture::RungeKutta { tableau } => tableau.stages(),
        }
    }
}

/// Everything that fixes the shape and behaviour of a model except the
/// parameter values. Serialised next to checkpoints as the shape manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub activation: Activation,
    /// Feature-space dimension `d̂`, constant across layers.
    pub width: usize,
    pub depth: usize,
    /// Step size `h` of RK architectures; ignored by the standard net.
    pub step: f64,
    /// Raw input dimension `d ≤ d̂`; inputs get `d̂ − d` zeros appended.
    pub input_dim: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::InvalidConfig("width must be positive".into()));
        }
        if self.input_dim > self.width {
            return Err(Error::InvalidConfig(format!(
                "input dimension {} exceeds width {}",
                self.input_dim, self.width
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig("at least two classes are required".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.step
            )));
        }
        Ok(())
    }

    /// Number of zero coordinates appended to each input.
    pub fn augmentation(&self) -> usize {
        self.width - self.input_dim
    }
}

/// Control `u^[l] = (K^[l], b^[l])` of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub k: Matrix,
    pub b: Vector,
}

impl LayerParams {
    pub fn zeros(width: usize) -> Self {
        LayerParams {
            k: Matrix::zeros(width, width),
            b: vec![0.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.b.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub layers: Vec<LayerParams>,
    pub head: ClassifierHead,
}

impl ModelParams {
    /// All parameters zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(ModelParams {
            layers: (0..spec.depth).map(|_| LayerParams::zeros(spec.width)).collect(),
            head: ClassifierHead::zeros(spec.classes, spec.width),
            spec,
        })
    }

    /// Every weight and bias uniform in `±1/√d̂`, drawn in parameter order.
    pub fn init(spec: ModelSpec, rng: &mut RngState) -> Result<Self> {
        let mut m = ModelParams::zeros(spec)?;
        let bound = 1.0 / (m.spec.width as f64).sqrt();
        for slice in m.slices_mut() {
            for x in slice.iter_mut() {
                *x = rng.uniform(-bound, bound);
            }
        }
        Ok(m)
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Parameter blocks in canonical order: `K^[0], b^[0], …, W, μ`.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(l.k.as_slice());
            out.push(&l.b);
        }
        out.push(self.head.w.as_slice());
        out.push(&self.head.mu);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(l.k.as_mut_slice());
            out.push(&mut l.b);
        }
        out.push(self.head.w.as_mut_slice());
        out.push(&mut self.head.mu);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Checks that stored parameter shapes agree with `spec`.
    pub fn check_shapes(&self) -> Result<()> {
        self.spec.validate()?;
        let w = self.spec.width;
        check_dim("model depth", self.spec.depth, self.layers.len())?;
        for l in &self.layers {
            check_dim("layer K rows", w, l.k.rows())?;
            check_dim("layer K cols", w, l.k.cols())?;
            check_dim("layer b", w, l.b.len())?;
        }
        check_dim("head W rows", self.spec.classes, self.head.w.rows())?;
        check_dim("head W cols", w, self.head.w.cols())?;
        check_dim("head mu", self.spec.classes, self.head.mu.len())
    }
}

/// States of a forward pass over a batch (row `n` belongs to sample `n`).
///
/// `stage_*[l][i]` hold the stage inputs `y_i^[l]`, pre-activations
/// `z_i^[l] = K y_i + b` and evaluations `f_i^[l] = σ(z_i^[l])`. The standard
/// network is stored as a single stage per layer whose input is `y^[l]`.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub y: Vec<Matrix>,
    pub stage_y: Vec<Vec<Matrix>>,
    pub stage_z: Vec<Vec<Matrix>>,
    pub stage_f: Vec<Vec<Matrix>>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.y[0].rows()
    }

    pub fn depth(&self) -> usize {
        self.y.len() - 1
    }

    pub fn output(&self) -> &Matrix {
        self.y.last().expect("trace holds at least the input")
    }

    /// Layer states `y^[0], …, y^[L]` of one sample.
    pub fn trajectory(&self, sample: usize) -> Vec<Vector> {
        self.y.iter().map(|m| m.row(sample).to_vec()).collect()
    }
}

/// `z = Y Kᵀ + b` and `f = σ(z)` for every row of `y`.
fn eval_stage(p: &LayerParams, act: Activation, y: &Matrix) -> Result<(Matrix, Matrix)> {
    let mut z = Matrix::zeros(y.rows(), p.width());
    gemm(1.0, y, Transpose::No, &p.k, Transpose::Yes, 0.0, &mut z)?;
    z.add_row_vector(&p.b)?;
    let mut f = z.clone();
    f.as_mut_slice().iter_mut().for_each(|x| *x = act.eval(*x));
    Ok((z, f))
}

/// Single-sample layer function: returns `(z, f)` with `z = K y + b`, `f = σ(z)`.
pub fn f_eval(p: &LayerParams, act: Activation, y: &[f64]) -> Result<(Vector, Vector)> {
    check_dim("f_eval", p.width(), y.len())?;
    let batch = Matrix::from_vec(1, y.len(), y.to_vec())?;
    let (z, f) = eval_stage(p, act, &batch)?;
    Ok((z.into_vec(), f.into_vec()))
}

fn check_input(m: &ModelParams, x_hat: &Matrix) -> Result<()> {
    check_dim("forward input width", m.width(), x_hat.cols())
}

/// Feed-forward pass `y^[l+1] = σ(K^[l] y^[l] + b^[l])`.
pub fn forward_standard(m: &ModelParams, x_hat: &Matrix) -> Result<ForwardTrace> {
    check_input(m, x_hat)?;
    let depth = m.depth();
    let mut tr = ForwardTrace {
        y: Vec::with_capacity(depth + 1),
        stage_y: Vec::with_capacity(depth),
        stage_z: Vec::with_capacity(depth),
        stage_f: Vec::with_capacity(depth),
    };
    tr.y.push(x_hat.clone());
    for layer in &m.layers {
        let y = tr.y.last().expect("nonempty").clone();
        let (z, f) = eval_stage(layer, m.spec.activation, &y)?;
        tr.y.push(f.clone());
        tr.stage_y.push(vec![y]);
        tr.stage_z.push(vec![z]);
        tr.stage_f.push(vec![f]);
    }
    Ok(tr)
}

/// One explicit RK step per layer with the layer control shared by all stages.
pub fn forward_rk(m: &ModelParams, tableau: &ButcherTableau, x_hat: &Matrix) -> Result<ForwardTrace> {
    check_input(m, x_hat)?;
    let depth = m.depth();
    let s = tableau.stages();
    let h = m.spec.step;
    let mut tr = ForwardTrace {
        y: Vec::with_capacity(depth + 1),
        stage_y: Vec::with_capacity(depth),
        stage_z: Vec::with_capacity(depth),
        stage_f: Vec::with_capacity(depth),
    };
    tr.y.push(x_hat.clone());
    for layer in &m.layers {
        let y = tr.y.last().expect("nonempty");
        let mut ys = Vec::with_capacity(s);
        let mut zs = Vec::with_capacity(s);
        let mut fs: Vec<Matrix> = Vec::with_capacity(s);
        for i in 0..s {
            let mut yi = y.clone();
            for (j, fj) in fs.iter().enumerate() {
                let aij = tableau.a().get(i, j);
                if aij != 0.0 {
                    yi.axpy(h * aij, fj)?;
                }
            }
            let (zi, fi) = eval_stage(layer, m.spec.activation, &yi)?;
            ys.push(yi);
            zs.push(zi);
            fs.push(fi);
        }
        let mut next = y.clone();
        for (bi, fi) in tableau.beta().iter().zip(&fs) {
            next.axpy(h * bi, fi)?;
        }
        tr.y.push(next);
        tr.stage_y.push(ys);
        tr.stage_z.push(zs);
        tr.stage_f.push(fs);
    }
    Ok(tr)
}

/// Forward pass for whichever architecture `m` uses.
pub fn forward(m: &ModelParams, x_hat: &Matrix) -> Result<ForwardTrace> {
    match &m.spec.arch {
        Architecture::Standard => forward_standard(m, x_hat),
        Architecture::RungeKutta { tableau } => forward_rk(m, tableau, x_hat),
    }
}

/// Final features `y^[L]` without keeping the trace.
///
/// Uses the same arithmetic as [`forward`], so the result is bit-identical to
/// `forward(m, x_hat)?.output()`.
pub fn propagate(m: &ModelParams, x_hat: &Matrix) -> Result<Matrix> {
    check_input(m, x_hat)?;
    let act = m.spec.activation;
    let mut y = x_hat.clone();
    match &m.spec.arch {
        Architecture::Standard => {
            for layer in &m.layers {
                y = eval_stage(layer, act, &y)?.1;
            }
        }
        Architecture::RungeKutta { tableau } => {
            let h = m.spec.step;
            let s = tableau.stages();
            let mut fs: Vec<Matrix> = Vec::with_capacity(s);
            for layer in &m.layers {
                fs.clear();
                for i in 0..s {
                    let mut yi = y.clone();
                    for (j, fj) in fs.iter().enumerate() {
                        let aij = tableau.a().get(i, j);
                        if aij != 0.0 {
                            yi.axpy(h * aij, fj)?;
                        }
                    }
                    fs.push(eval_stage(layer, act, &yi)?.1);
                }
                for (bi, fi) in tableau.beta().iter().zip(&fs) {
                    y.axpy(h * bi, fi)?;
                }
            }
        }
    }
    Ok(y)
}
