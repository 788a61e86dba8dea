//! Exact gradients of the discrete training cost.
//!
//! For RK networks the backward pass is the symplectic partner of the forward
//! scheme. Working with the rescaled stage multipliers `p_i` the sweep reads,
//! for `l = L−1, …, 0`,
//!
//! ```text
//! p_i^[l]  = p^[l+1] + h Σ_{j>i} (a_ji β_j / β_i) f_y(u^[l], y_j^[l])ᵀ p_j^[l]
//! p^[l]    = p^[l+1] + h Σ_i β_i f_y(u^[l], y_i^[l])ᵀ p_i^[l]
//! ```
//!
//! with `p^[L] = ∇F(y^[L])`. With `g_i = −f_yᵀ p_i` this is exactly the RK
//! scheme of the conjugate tableau `(Ã, β)` run on the adjoint equation.
//! Stages are solved in descending order; explicitness of `A` guarantees that
//! stage `i` only references stages `j > i`.
//!
//! The Jacobian is never formed: `f_yᵀ p = Kᵀ(σ′(z) ∘ p)` is evaluated from
//! the pre-activations cached in the [`ForwardTrace`]. The parameter gradient
//! of layer `l` sums the stage contributions because all stages share `u^[l]`:
//!
//! ```text
//! ∂F/∂K^[l] = h Σ_i β_i (σ′(z_i) ∘ p_i) y_iᵀ,   ∂F/∂b^[l] = h Σ_i β_i σ′(z_i) ∘ p_i
//! ```

use crate::error::{check_dim, Error, Result};
use crate::network::{augment_batch, forward, propagate, Activation, Architecture, ModelParams};
use crate::network::{ForwardTrace, LayerParams};
use crate::numerics::{gemm, Matrix, Transpose, Vector};
use crate::tableau::ButcherTableau;
use crate::training::{batch_head_backward, batch_cost};

/// Adjoint states of a batch, one sample per row.
#[derive(Clone, Debug)]
pub struct AdjointTrace {
    /// `p^[0], …, p^[L]`.
    pub p: Vec<Matrix>,
    pub stage_p: Vec<Vec<Matrix>>,
    /// `g_i^[l] = −f_y(u^[l], y_i^[l])ᵀ p_i^[l]`.
    pub stage_g: Vec<Vec<Matrix>>,
}

/// Gradient blocks mirroring [`ModelParams`]; also used as Adam moment storage.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerParams>,
    pub dw: Matrix,
    pub dmu: Vector,
}

impl ParamGrads {
    pub fn zeros_like(m: &ModelParams) -> Self {
        ParamGrads {
            layers: (0..m.depth()).map(|_| LayerParams::zeros(m.width())).collect(),
            dw: Matrix::zeros(m.head.w.rows(), m.head.w.cols()),
            dmu: vec![0.0; m.head.mu.len()],
        }
    }

    /// Blocks in the same order as [`ModelParams::slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(l.k.as_slice());
            out.push(&l.b);
        }
        out.push(self.dw.as_slice());
        out.push(&self.dmu);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(l.k.as_mut_slice());
            out.push(&mut l.b);
        }
        out.push(self.dw.as_mut_slice());
        out.push(&mut self.dmu);
        out
    }

    pub fn flatten(&self) -> Vector {
        self.slices().concat()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

fn check_trace(m: &ModelParams, tr: &ForwardTrace, p_terminal: &Matrix) -> Result<()> {
    check_dim("trace depth", m.depth(), tr.depth())?;
    check_dim("trace stages", m.spec.arch.stages(), tr.stage_z.first().map_or(m.spec.arch.stages(), Vec::len))?;
    check_dim("trace width", m.width(), tr.output().cols())?;
    check_dim("terminal adjoint rows", tr.batch_size(), p_terminal.rows())?;
    check_dim("terminal adjoint cols", m.width(), p_terminal.cols())
}

/// `σ′(z) ∘ p`, row by row.
fn scaled_by_derivative(act: Activation, z: &Matrix, p: &Matrix) -> Matrix {
    let mut q = p.clone();
    for (qv, zv) in q.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *qv *= act.deriv(*zv);
    }
    q
}

/// Rows of `q K`, i.e. `Kᵀ q_n` for every sample.
fn transpose_action(k: &Matrix, q: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(q.rows(), k.cols());
    gemm(1.0, q, Transpose::No, k, Transpose::No, 0.0, &mut out)?;
    Ok(out)
}

/// Backward sweep of the partitioned RK scheme.
pub fn adjoint_sweep(m: &ModelParams, tr: &ForwardTrace, p_terminal: &Matrix) -> Result<AdjointTrace> {
    let tableau = match &m.spec.arch {
        Architecture::RungeKutta { tableau } => tableau,
        Architecture::Standard => {
            return Err(Error::InvalidConfig(
                "adjoint_sweep needs an RK architecture; use standard_backprop".into(),
            ))
        }
    };
    check_trace(m, tr, p_terminal)?;
    let coeff = tableau.adjoint_stage_coefficients()?;
    let s = tableau.stages();
    let h = m.spec.step;
    let act = m.spec.activation;
    let depth = m.depth();

    let mut p = vec![Matrix::zeros(0, 0); depth + 1];
    let mut stage_p = vec![Vec::new(); depth];
    let mut stage_g = vec![Vec::new(); depth];
    p[depth] = p_terminal.clone();

    for l in (0..depth).rev() {
        let k = &m.layers[l].k;
        let p_next = &p[l + 1];
        // r_i = f_yᵀ p_i, filled from the last stage down
        let mut r: Vec<Option<Matrix>> = vec![None; s];
        let mut ps: Vec<Option<Matrix>> = vec![None; s];
        for i in (0..s).rev() {
            let mut pi = p_next.clone();
            for j in (i + 1)..s {
                let cij = coeff.get(i, j);
                if cij != 0.0 {
                    let rj = r[j].as_ref().expect("later stages are solved first");
                    pi.axpy(h * cij, rj)?;
                }
            }
            let q = scaled_by_derivative(act, &tr.stage_z[l][i], &pi);
            r[i] = Some(transpose_action(k, &q)?);
            ps[i] = Some(pi);
        }
        let r: Vec<Matrix> = r.into_iter().map(|x| x.expect("all stages solved")).collect();
        let mut pl = p_next.clone();
        for (bi, ri) in tableau.beta().iter().zip(&r) {
            pl.axpy(h * bi, ri)?;
        }
        p[l] = pl;
        stage_p[l] = ps.into_iter().map(|x| x.expect("all stages solved")).collect();
        stage_g[l] = r
            .into_iter()
            .map(|mut ri| {
                ri.scale(-1.0);
                ri
            })
            .collect();
    }
    Ok(AdjointTrace { p, stage_p, stage_g })
}

/// Accumulates `dK += Σ_i c_i Q_iᵀ Y_i` and `db += Σ_i c_i 1ᵀ Q_i` with one
/// product over the stacked stages.
fn accumulate_layer(
    grads: &mut LayerParams,
    coeffs: &[f64],
    qs: &[Matrix],
    ys: &[&Matrix],
) -> Result<()> {
    let batch = qs[0].rows();
    let width = qs[0].cols();
    let mut q_stack = Matrix::zeros(batch * qs.len(), width);
    let mut y_stack = Matrix::zeros(batch * qs.len(), width);
    for (i, (q, y)) in qs.iter().zip(ys).enumerate() {
        let c = coeffs[i];
        let span = i * batch * width..(i + 1) * batch * width;
        for (dst, src) in q_stack.as_mut_slice()[span.clone()].iter_mut().zip(q.as_slice()) {
            *dst = c * src;
        }
        y_stack.as_mut_slice()[span].copy_from_slice(y.as_slice());
    }
    gemm(1.0, &q_stack, Transpose::Yes, &y_stack, Transpose::No, 1.0, &mut grads.k)?;
    for (db, s) in grads.b.iter_mut().zip(q_stack.column_sums()) {
        *db += s;
    }
    Ok(())
}

/// Layer gradients from a forward/adjoint trace pair. Head blocks are left
/// zero; see [`crate::training::head_grads`].
pub fn param_grads(
    m: &ModelParams,
    tr: &ForwardTrace,
    adj: &AdjointTrace,
    batch_scale: f64,
) -> Result<ParamGrads> {
    let tableau: &ButcherTableau = match &m.spec.arch {
        Architecture::RungeKutta { tableau } => tableau,
        Architecture::Standard => {
            return Err(Error::InvalidConfig("param_grads needs an RK architecture".into()))
        }
    };
    check_dim("adjoint depth", tr.depth(), adj.stage_p.len())?;
    let h = m.spec.step;
    let act = m.spec.activation;
    let coeffs: Vec<f64> = tableau.beta().iter().map(|b| batch_scale * h * b).collect();
    let mut grads = ParamGrads::zeros_like(m);
    for l in 0..m.depth() {
        let qs: Vec<Matrix> = tr.stage_z[l]
            .iter()
            .zip(&adj.stage_p[l])
            .map(|(z, p)| scaled_by_derivative(act, z, p))
            .collect();
        let ys: Vec<&Matrix> = tr.stage_y[l].iter().collect();
        accumulate_layer(&mut grads.layers[l], &coeffs, &qs, &ys)?;
    }
    Ok(grads)
}

/// Reverse-mode chain rule through `y^[l+1] = σ(K^[l] y^[l] + b^[l])`.
/// Head blocks are left zero.
pub fn standard_backprop(
    m: &ModelParams,
    tr: &ForwardTrace,
    p_terminal: &Matrix,
    batch_scale: f64,
) -> Result<ParamGrads> {
    if !matches!(m.spec.arch, Architecture::Standard) {
        return Err(Error::InvalidConfig("standard_backprop needs the standard architecture".into()));
    }
    check_trace(m, tr, p_terminal)?;
    let act = m.spec.activation;
    let mut grads = ParamGrads::zeros_like(m);
    let mut p = p_terminal.clone();
    for l in (0..m.depth()).rev() {
        let q = scaled_by_derivative(act, &tr.stage_z[l][0], &p);
        accumulate_layer(&mut grads.layers[l], &[batch_scale], std::slice::from_ref(&q), &[&tr.y[l]])?;
        p = transpose_action(&m.layers[l].k, &q)?;
    }
    Ok(grads)
}

/// Summed cost and full gradient (layers and head) of a batch.
///
/// Inputs are augmented to the model width. Gradients are of
/// `batch_scale · Σ_n cost_n`; the returned cost is the unscaled sum.
pub fn batch_gradients<R: AsRef<[f64]>>(
    m: &ModelParams,
    inputs: &[R],
    labels: &[usize],
    batch_scale: f64,
) -> Result<(f64, ParamGrads)> {
    let x_hat = augment_batch(inputs, m.width())?;
    gradients_from_batch(m, &x_hat, labels, batch_scale).map(|(c, g, _)| (c, g))
}

/// Like [`batch_gradients`] for an already augmented batch; also returns the
/// number of correct predictions.
pub(crate) fn gradients_from_batch(
    m: &ModelParams,
    x_hat: &Matrix,
    labels: &[usize],
    batch_scale: f64,
) -> Result<(f64, ParamGrads, usize)> {
    let tr = forward(m, x_hat)?;
    let head = batch_head_backward(&m.head, tr.output(), labels)?;
    let mut grads = match &m.spec.arch {
        Architecture::Standard => standard_backprop(m, &tr, &head.dy, batch_scale)?,
        Architecture::RungeKutta { .. } => {
            let adj = adjoint_sweep(m, &tr, &head.dy)?;
            param_grads(m, &tr, &adj, batch_scale)?
        }
    };
    grads.dw = head.dw;
    grads.dw.scale(batch_scale);
    grads.dmu = head.dmu.iter().map(|x| batch_scale * x).collect();
    Ok((head.cost, grads, head.correct))
}

/// Central differences `(F(θ+ε) − F(θ−ε)) / 2ε` of the summed batch cost with
/// respect to every parameter entry.
pub fn finite_diff_grads<R: AsRef<[f64]>>(
    m: &ModelParams,
    inputs: &[R],
    labels: &[usize],
    epsilon: f64,
) -> Result<ParamGrads> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    let x_hat = augment_batch(inputs, m.width())?;
    let cost = |model: &ModelParams| -> Result<f64> {
        let y = propagate(model, &x_hat)?;
        batch_cost(&model.head, &y, labels)
    };
    let mut work = m.clone();
    let mut grads = ParamGrads::zeros_like(m);
    let blocks = m.slices().len();
    for block in 0..blocks {
        let len = m.slices()[block].len();
        for idx in 0..len {
            let orig = m.slices()[block][idx];
            work.slices_mut()[block][idx] = orig + epsilon;
            let plus = cost(&work)?;
            work.slices_mut()[block][idx] = orig - epsilon;
            let minus = cost(&work)?;
            work.slices_mut()[block][idx] = orig;
            grads.slices_mut()[block][idx] = (plus - minus) / (2.0 * epsilon);
        }
    }
    Ok(grads)
}

/// Largest entrywise `|a − b| / max(1, |b|)`.
pub fn max_relative_error(a: &ParamGrads, b: &ParamGrads) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{augment_batch, ModelSpec};
    use crate::numerics::{outer, RngState};

    fn spec(arch: Architecture, act: Activation, width: usize, depth: usize, step: f64) -> ModelSpec {
        ModelSpec {
            arch,
            activation: act,
            width,
            depth,
            step,
            input_dim: 2,
            classes: 3,
        }
    }

    #[test]
    fn zero_parameters_freeze_the_adjoint() {
        let m = ModelParams::zeros(spec(Architecture::rk4(), Activation::Tanh, 3, 4, 0.1)).unwrap();
        let x = augment_batch(&[[0.3, -0.2]], 3).unwrap();
        let tr = forward(&m, &x).unwrap();
        let pt = Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
        let adj = adjoint_sweep(&m, &tr, &pt).unwrap();
        for l in 0..=4 {
            assert_eq!(adj.p[l], pt);
        }
        for l in 0..4 {
            for pi in &adj.stage_p[l] {
                assert_eq!(pi, &pt);
            }
        }
    }

    #[test]
    fn euler_adjoint_is_hand_chain_rule() {
        // y⁺ = y + h tanh(K y + b)  ⇒  p = p⁺ + h Kᵀ(σ′(z) ∘ p⁺)
        let mut m = ModelParams::zeros(spec(Architecture::euler(), Activation::Tanh, 2, 1, 0.5)).unwrap();
        m.layers[0].k = Matrix::from_rows(&[[0.4, -0.3], [0.2, 0.7]]).unwrap();
        m.layers[0].b = vec![0.1, -0.2];
        let y0 = [0.6, -0.9];
        let tr = forward(&m, &Matrix::from_rows(&[y0]).unwrap()).unwrap();
        let pt = [1.5, -0.5];
        let adj = adjoint_sweep(&m, &tr, &Matrix::from_rows(&[pt]).unwrap()).unwrap();

        let z: [f64; 2] = [0.4 * 0.6 - 0.3 * -0.9 + 0.1, 0.2 * 0.6 + 0.7 * -0.9 - 0.2];
        let q = [(1.0 - z[0].tanh().powi(2)) * pt[0], (1.0 - z[1].tanh().powi(2)) * pt[1]];
        let expected = [pt[0] + 0.5 * (0.4 * q[0] + 0.2 * q[1]), pt[1] + 0.5 * (-0.3 * q[0] + 0.7 * q[1])];
        for i in 0..2 {
            assert!((adj.p[0].get(0, i) - expected[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_terminal_gives_zero_gradients() {
        let mut rng = RngState::new(3);
        let m = ModelParams::init(spec(Architecture::rk4(), Activation::Tanh, 3, 3, 0.2), &mut rng).unwrap();
        let x = augment_batch(&[[0.3, -0.2]], 3).unwrap();
        let tr = forward(&m, &x).unwrap();
        let adj = adjoint_sweep(&m, &tr, &Matrix::zeros(1, 3)).unwrap();
        let g = param_grads(&m, &tr, &adj, 1.0).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 0.0));

        let ms = ModelParams::init(spec(Architecture::Standard, Activation::Tanh, 3, 3, 1.0), &mut rng).unwrap();
        let tr = forward(&ms, &x).unwrap();
        let g = standard_backprop(&ms, &tr, &Matrix::zeros(1, 3), 1.0).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_parameter_euler_gradient_is_outer_product() {
        let (h, scale) = (0.25, 0.5);
        let m = ModelParams::zeros(spec(Architecture::euler(), Activation::Tanh, 3, 2, h)).unwrap();
        let y0 = [0.3, -0.2, 0.0];
        let tr = forward(&m, &Matrix::from_rows(&[y0]).unwrap()).unwrap();
        let pt = [1.0, 2.0, -1.0];
        let adj = adjoint_sweep(&m, &tr, &Matrix::from_rows(&[pt]).unwrap()).unwrap();
        let g = param_grads(&m, &tr, &adj, scale).unwrap();
        let mut expected = outer(&pt, &y0);
        expected.scale(scale * h);
        for l in 0..2 {
            assert_eq!(g.layers[l].k, expected);
            let db: Vec<f64> = pt.iter().map(|p| scale * h * p).collect();
            assert_eq!(g.layers[l].b, db);
        }
    }

    #[test]
    fn standard_identity_relu_gradient() {
        let mut m = ModelParams::zeros(spec(Architecture::Standard, Activation::Relu, 3, 1, 1.0)).unwrap();
        m.layers[0].k = Matrix::identity(3);
        let y0 = [0.5, 1.0, 2.0];
        let tr = forward(&m, &Matrix::from_rows(&[y0]).unwrap()).unwrap();
        let pt = [0.3, -0.7, 1.1];
        let g = standard_backprop(&m, &tr, &Matrix::from_rows(&[pt]).unwrap(), 1.0).unwrap();
        assert_eq!(g.layers[0].k, outer(&pt, &y0));
        assert_eq!(g.layers[0].b, pt.to_vec());
    }

    #[test]
    fn adjoint_trace_solves_conjugate_scheme() {
        // p^[l+1] = p^[l] + h Σ β̃_i g_i  and  p_i = p^[l] + h Σ_j ã_ij g_j
        let mut rng = RngState::new(17);
        let m = ModelParams::init(spec(Architecture::rk4(), Activation::Sigmoid, 4, 3, 0.3), &mut rng).unwrap();
        let x = augment_batch(&[[0.5, -0.1], [0.2, 0.9]], 4).unwrap();
        let tr = forward(&m, &x).unwrap();
        let pt = Matrix::from_vec(2, 4, (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let adj = adjoint_sweep(&m, &tr, &pt).unwrap();
        let ct = ButcherTableau::rk4().conjugate().unwrap();
        let h = 0.3;
        for l in 0..3 {
            let mut next = adj.p[l].clone();
            for (bt, g) in ct.beta_tilde().iter().zip(&adj.stage_g[l]) {
                next.axpy(h * bt, g).unwrap();
            }
            let mut diff = next;
            diff.axpy(-1.0, &adj.p[l + 1]).unwrap();
            assert!(diff.max_abs() < 1e-13);
            for i in 0..4 {
                let mut pi = adj.p[l].clone();
                for (j, g) in adj.stage_g[l].iter().enumerate() {
                    pi.axpy(h * ct.a_tilde().get(i, j), g).unwrap();
                }
                pi.axpy(-1.0, &adj.stage_p[l][i]).unwrap();
                assert!(pi.max_abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rk4_gradient_matches_finite_differences() {
        let mut rng = RngState::new(2024);
        let mut sp = spec(Architecture::rk4(), Activation::Tanh, 3, 2, 0.5);
        sp.input_dim = 3;
        let m = ModelParams::init(sp, &mut rng).unwrap();
        let xs = [[0.4, -0.8, 0.1]];
        let (_, g) = batch_gradients(&m, &xs, &[1], 1.0).unwrap();
        let fd = finite_diff_grads(&m, &xs, &[1], 1e-6).unwrap();
        assert!(max_relative_error(&g, &fd) < 1e-6);
    }

    #[test]
    fn standard_gradient_matches_finite_differences() {
        let mut rng = RngState::new(31);
        let m = ModelParams::init(spec(Architecture::Standard, Activation::Softplus, 4, 3, 1.0), &mut rng).unwrap();
        let xs = [[0.4, -0.8], [1.0, 0.3]];
        let (_, g) = batch_gradients(&m, &xs, &[2, 0], 1.0).unwrap();
        let fd = finite_diff_grads(&m, &xs, &[2, 0], 1e-6).unwrap();
        assert!(max_relative_error(&g, &fd) < 1e-5);
    }

    #[test]
    fn masked_row_has_zero_fd_gradient() {
        // Output coordinate 2 never reaches the head (zero W column), and
        // zero K elsewhere means it feeds no other coordinate.
        let mut m = ModelParams::zeros(spec(Architecture::euler(), Activation::Tanh, 3, 1, 0.5)).unwrap();
        m.layers[0].k = Matrix::from_rows(&[[0.3, 0.1, 0.0], [-0.2, 0.4, 0.0], [0.5, 0.5, 0.5]]).unwrap();
        m.head.w = Matrix::from_rows(&[[1.0, -1.0, 0.0], [0.5, 0.2, 0.0], [-0.3, 0.8, 0.0]]).unwrap();
        let fd = finite_diff_grads(&m, &[[0.3, 0.7]], &[0], 1e-6).unwrap();
        for j in 0..3 {
            assert!(fd.layers[0].k.get(2, j).abs() < 1e-9);
        }
        assert!(fd.layers[0].b[2].abs() < 1e-9);
    }

    #[test]
    fn fd_is_consistent_across_epsilons() {
        let mut rng = RngState::new(8);
        let m = ModelParams::init(spec(Architecture::rk4(), Activation::Softplus, 3, 2, 0.3), &mut rng).unwrap();
        let a = finite_diff_grads(&m, &[[0.1, 0.2]], &[2], 1e-5).unwrap();
        let b = finite_diff_grads(&m, &[[0.1, 0.2]], &[2], 1e-6).unwrap();
        assert!(max_relative_error(&a, &b) < 1e-4);
    }

    #[test]
    fn duplicated_sample_doubles_summed_gradient() {
        let mut rng = RngState::new(12);
        let m = ModelParams::init(spec(Architecture::rk4(), Activation::Tanh, 3, 2, 0.3), &mut rng).unwrap();
        let x = [0.25, -0.5];
        let once = finite_diff_grads(&m, &[x], &[1], 1e-6).unwrap();
        let twice = finite_diff_grads(&m, &[x, x], &[1, 1], 1e-6).unwrap();
        let mut doubled = once.clone();
        doubled.scale(2.0);
        assert_eq!(twice, doubled);

        let (_, g1) = batch_gradients(&m, &[x], &[1], 1.0).unwrap();
        let (_, g2) = batch_gradients(&m, &[x, x], &[1, 1], 1.0).unwrap();
        let mut d = g1.clone();
        d.scale(2.0);
        // stage contributions are summed in a different order, so not bitwise
        assert!(max_relative_error(&g2, &d) < 1e-14);
    }

    #[test]
    fn gradients_are_homogeneous_in_batch_scale() {
        let mut rng = RngState::new(5);
        let m = ModelParams::init(spec(Architecture::euler(), Activation::Tanh, 4, 3, 0.2), &mut rng).unwrap();
        let xs = [[0.1, 0.9], [-0.4, 0.3]];
        let (_, g1) = batch_gradients(&m, &xs, &[0, 1], 1.0).unwrap();
        let (_, g4) = batch_gradients(&m, &xs, &[0, 1], 0.25).unwrap();
        let mut expect = g1.clone();
        expect.scale(0.25);
        assert!(max_relative_error(&g4, &expect) < 1e-15);
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let m = ModelParams::zeros(spec(Architecture::rk4(), Activation::Tanh, 3, 2, 0.1)).unwrap();
        let tr = forward(&m, &Matrix::zeros(2, 3)).unwrap();
        assert!(adjoint_sweep(&m, &tr, &Matrix::zeros(1, 3)).is_err());
        let shallow = ModelParams::zeros(spec(Architecture::rk4(), Activation::Tanh, 3, 1, 0.1)).unwrap();
        assert!(adjoint_sweep(&shallow, &tr, &Matrix::zeros(2, 3)).is_err());
    }
}
