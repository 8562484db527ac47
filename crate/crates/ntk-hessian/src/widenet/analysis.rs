//! Assembly and analysis of the loss Hessian `H = I + S` for finite networks:
//! dense bundles below a parameter cap, matrix-free operators with exact or
//! Hutchinson-estimated moments above it, gradient-flow training, and the
//! orthogonality / rank / decay probes.

use super::autodiff::{
    empirical_ntk, forward_tangent, g_trace, hessian, jacobian, reverse_into,
    reverse_tangent_into, TENSOR_PARAM_CAP,
};
use super::{forward, Forward, NetParams};
use crate::activations::Nonlin;
use crate::linalg::{axpy, dot, Mat};
use crate::losses::{loss_grad, loss_hess, loss_value, LossSpec};
use crate::spectral::{sym_eig, top_eigenpairs, SymOp};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

/// Caps on materializing dense objects.
#[derive(Debug, Clone, Copy)]
pub struct Caps {
    /// Largest P for dense `P x P` matrices.
    pub matrix: usize,
    /// Largest P for the full `P x P x N n_out` tensor.
    pub tensor: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { matrix: 6000, tensor: TENSOR_PARAM_CAP }
    }
}

/// Matrix-free view of one network/loss instance: cached forward passes,
/// loss gradient and Hessian at the current outputs, and the operator
/// products that never materialize `P x P` objects. `output_scale` folds the
/// mean-field output rescaling into every derivative consistently.
pub struct HessianOps<'a> {
    pub params: &'a NetParams,
    pub nl: &'a Nonlin,
    pub inputs: &'a [Vec<f64>],
    pub loss: &'a LossSpec,
    pub output_scale: f64,
    fwds: Vec<Forward>,
    y: Vec<f64>,
    grad: Vec<f64>,
    hc: Mat,
    dy: OnceLock<Mat>,
}

impl<'a> HessianOps<'a> {
    pub fn new(
        params: &'a NetParams,
        nl: &'a Nonlin,
        inputs: &'a [Vec<f64>],
        loss: &'a LossSpec,
    ) -> Result<Self> {
        Self::new_scaled(params, nl, inputs, loss, 1.0)
    }

    pub fn new_scaled(
        params: &'a NetParams,
        nl: &'a Nonlin,
        inputs: &'a [Vec<f64>],
        loss: &'a LossSpec,
        output_scale: f64,
    ) -> Result<Self> {
        if loss.n != inputs.len() || loss.n_out != params.arch.n_out() {
            return Err(Error::Config(format!(
                "loss shape ({}, {}) does not match network/dataset ({}, {})",
                loss.n,
                loss.n_out,
                inputs.len(),
                params.arch.n_out()
            )));
        }
        let mut fwds = Vec::with_capacity(inputs.len());
        let mut y = Vec::with_capacity(inputs.len() * params.arch.n_out());
        for x in inputs {
            let f = forward(params, nl, x)?;
            y.extend(f.output().iter().map(|v| v * output_scale));
            fwds.push(f);
        }
        let grad = loss_grad(loss, &y)?;
        let hc = loss_hess(loss, &y)?;
        Ok(HessianOps {
            params,
            nl,
            inputs,
            loss,
            output_scale,
            fwds,
            y,
            grad,
            hc,
            dy: OnceLock::new(),
        })
    }

    pub fn p(&self) -> usize {
        self.params.arch.param_count()
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn n_out(&self) -> usize {
        self.params.arch.n_out()
    }

    /// Scaled outputs on the dataset.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn hc(&self) -> &Mat {
        &self.hc
    }

    pub fn loss_value(&self) -> f64 {
        loss_value(self.loss, &self.y).expect("shape checked at construction")
    }

    /// Scaled Jacobian of the outputs, materialized on first use.
    pub fn dy(&self) -> &Mat {
        self.dy.get_or_init(|| {
            let mut dy = jacobian(self.params, self.nl, self.inputs)
                .expect("forward succeeded at construction");
            if self.output_scale != 1.0 {
                for v in &mut dy.data {
                    *v *= self.output_scale;
                }
            }
            dy
        })
    }

    /// Empirical tangent-kernel Gram of the scaled network.
    pub fn theta_emp(&self) -> Mat {
        empirical_ntk(self.dy())
    }

    /// `DY v` (scaled).
    pub fn jvp(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (x_idx, fwd) in self.fwds.iter().enumerate() {
            let _ = x_idx;
            let tf = forward_tangent(self.params, self.nl, fwd, v);
            out.extend(tf.dpre.last().unwrap().iter().map(|d| d * self.output_scale));
        }
        out
    }

    /// `DY^T u` (scaled).
    pub fn vjp(&self, u: &[f64]) -> Vec<f64> {
        let n_out = self.n_out();
        let mut out = vec![0.0; self.p()];
        for (i, fwd) in self.fwds.iter().enumerate() {
            let block: Vec<f64> = u[i * n_out..(i + 1) * n_out]
                .iter()
                .map(|v| v * self.output_scale)
                .collect();
            reverse_into(self.params, self.nl, fwd, &block, &mut out);
        }
        out
    }

    /// `(u . HY) v`: the output-Hessian tensor contracted with an output
    /// cotangent `u` and a parameter direction `v`.
    pub fn output_hessian_apply(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let n_out = self.n_out();
        let mut out = vec![0.0; self.p()];
        for (i, fwd) in self.fwds.iter().enumerate() {
            let tf = forward_tangent(self.params, self.nl, fwd, v);
            let block: Vec<f64> = u[i * n_out..(i + 1) * n_out]
                .iter()
                .map(|w| w * self.output_scale)
                .collect();
            reverse_tangent_into(self.params, self.nl, fwd, &tf, &block, None, v, &mut out);
        }
        out
    }

    /// `S v` with the loss gradient frozen at the current outputs.
    pub fn s_apply(&self, v: &[f64]) -> Vec<f64> {
        self.output_hessian_apply(&self.grad, v)
    }

    /// `I v = DY^T (HC) DY v`.
    pub fn i_apply(&self, v: &[f64]) -> Vec<f64> {
        let dyv = self.jvp(v);
        let hcdyv = self.hc.matvec(&dyv);
        self.vjp(&hcdyv)
    }

    /// Full loss-Hessian product `H v = (I + S) v` in one combined pass.
    pub fn h_apply(&self, v: &[f64]) -> Vec<f64> {
        let n_out = self.n_out();
        let dyv = self.jvp(v);
        let du_all = self.hc.matvec(&dyv);
        let mut out = vec![0.0; self.p()];
        for (i, fwd) in self.fwds.iter().enumerate() {
            let tf = forward_tangent(self.params, self.nl, fwd, v);
            let ublock: Vec<f64> = self.grad[i * n_out..(i + 1) * n_out]
                .iter()
                .map(|w| w * self.output_scale)
                .collect();
            let dublock: Vec<f64> = du_all[i * n_out..(i + 1) * n_out]
                .iter()
                .map(|w| w * self.output_scale)
                .collect();
            reverse_tangent_into(
                self.params,
                self.nl,
                fwd,
                &tf,
                &ublock,
                Some(&dublock),
                v,
                &mut out,
            );
        }
        out
    }

    /// The parameter Laplacian on the dataset, `G_(ik) = sum_p d^2 Y_(ik)`.
    pub fn g_vec(&self) -> Result<Vec<f64>> {
        let mut g = Vec::with_capacity(self.dim());
        for x in self.inputs {
            let gx = g_trace(self.params, self.nl, x)?;
            g.extend(gx.iter().map(|v| v * self.output_scale));
        }
        Ok(g)
    }

    /// Exact `Tr(I^k)` for k = 1..=k_max via `Tr((HC Θ_emp)^k)`.
    pub fn exact_tr_i_powers(&self, k_max: usize) -> Vec<f64> {
        let m = self.hc.matmul(&self.theta_emp());
        m.power_traces(k_max)
    }

    /// Exact `Tr(S) = G . ∇C`.
    pub fn exact_tr_s1(&self) -> Result<f64> {
        Ok(dot(&self.g_vec()?, &self.grad))
    }

    /// Exact `||I S||_F` via `Tr(I^2 S^2) = Tr(HC Θ HC · B^T B)` with
    /// `B = S DY^T`; needs only `N n_out` S-products.
    pub fn exact_frob_is(&self) -> f64 {
        let dim = self.dim();
        let dy = self.dy();
        let b_cols: Vec<Vec<f64>> = (0..dim).map(|r| self.s_apply(dy.row(r))).collect();
        let mut btb = Mat::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..=r {
                let v = dot(&b_cols[r], &b_cols[c]);
                btb[(r, c)] = v;
                btb[(c, r)] = v;
            }
        }
        let theta = self.theta_emp();
        let m = self.hc.matmul(&theta).matmul(&self.hc);
        let tr = m.frob_inner(&btb.transpose());
        tr.max(0.0).sqrt()
    }

    /// Exact `||I||_F = sqrt(Tr(I^2))`.
    pub fn exact_frob_i(&self) -> f64 {
        self.exact_tr_i_powers(2)[1].max(0.0).sqrt()
    }

    /// Hutchinson estimates of `Tr(A^k)` for k = 1..=k_max (k_max <= 4),
    /// returning per-k means and standard errors over the probes.
    pub fn hutch_powers(
        &self,
        target: ProbeTarget,
        k_max: usize,
        probes: usize,
        seed: u64,
    ) -> (Vec<f64>, Vec<f64>) {
        assert!(k_max >= 1 && k_max <= 4, "hutchinson supports k_max in 1..=4");
        assert!(probes >= 1);
        let p = self.p();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sums = vec![0.0; k_max];
        let mut sq_sums = vec![0.0; k_max];
        for _ in 0..probes {
            let z: Vec<f64> =
                (0..p).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let w1 = match target {
                ProbeTarget::S => self.s_apply(&z),
                ProbeTarget::H => self.h_apply(&z),
            };
            let w2 = if k_max >= 3 {
                Some(match target {
                    ProbeTarget::S => self.s_apply(&w1),
                    ProbeTarget::H => self.h_apply(&w1),
                })
            } else {
                None
            };
            let mut ests = vec![dot(&z, &w1)];
            if k_max >= 2 {
                ests.push(dot(&w1, &w1));
            }
            if k_max >= 3 {
                ests.push(dot(&w1, w2.as_ref().unwrap()));
            }
            if k_max >= 4 {
                let w2 = w2.as_ref().unwrap();
                ests.push(dot(w2, w2));
            }
            for (k, e) in ests.iter().enumerate() {
                sums[k] += e;
                sq_sums[k] += e * e;
            }
        }
        let n = probes as f64;
        let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
        let ses: Vec<f64> = sums
            .iter()
            .zip(&sq_sums)
            .map(|(s, sq)| {
                if probes > 1 {
                    let var = (sq - s * s / n) / (n - 1.0);
                    (var.max(0.0) / n).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        (means, ses)
    }

    /// `||S||_op` by subspace iteration on the matrix-free operator.
    pub fn op_norm_s(&self, iters: usize, seed: u64) -> Result<f64> {
        crate::spectral::op_norm_sym(&SOp(self), iters, seed)
    }
}

/// Which operator a stochastic probe runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTarget {
    S,
    H,
}

struct SOp<'b, 'a>(&'b HessianOps<'a>);

impl SymOp for SOp<'_, '_> {
    fn dim(&self) -> usize {
        self.0.p()
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.0.s_apply(v)
    }
}

struct IOp<'b, 'a>(&'b HessianOps<'a>);

impl SymOp for IOp<'_, '_> {
    fn dim(&self) -> usize {
        self.0.p()
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.0.i_apply(v)
    }
}

/// Dense decomposition of the loss Hessian at the current parameters.
#[derive(Debug, Clone)]
pub struct HessianBundle {
    pub dy: Mat,
    /// One `P x P` slice per flat output index; populated when P is within
    /// the tensor cap.
    pub hy: Option<Vec<Mat>>,
    pub i_mat: Mat,
    pub s_mat: Mat,
    pub h_mat: Mat,
    pub y: Vec<f64>,
}

pub fn assemble(
    params: &NetParams,
    nl: &Nonlin,
    inputs: &[Vec<f64>],
    loss: &LossSpec,
    caps: &Caps,
) -> Result<HessianBundle> {
    assemble_scaled(params, nl, inputs, loss, caps, 1.0)
}

/// Dense assembly with an output rescaling (the mean-field laboratory):
/// outputs, Jacobian, and output Hessian all carry the factor `scale`.
pub fn assemble_scaled(
    params: &NetParams,
    nl: &Nonlin,
    inputs: &[Vec<f64>],
    loss: &LossSpec,
    caps: &Caps,
    scale: f64,
) -> Result<HessianBundle> {
    let p = params.arch.param_count();
    if p > caps.matrix {
        return Err(Error::Config(format!(
            "P = {p} exceeds the dense-matrix cap {}; use the matrix-free HessianOps",
            caps.matrix
        )));
    }
    let ops = HessianOps::new_scaled(params, nl, inputs, loss, scale)?;
    let dy = ops.dy().clone();
    let hc_dy = ops.hc().matmul(&dy);
    let i_mat = dy.transpose().matmul(&hc_dy);

    let hy = if p <= caps.tensor {
        let mut slices = hessian(params, nl, inputs, caps.tensor)?;
        if scale != 1.0 {
            for s in &mut slices {
                for v in &mut s.data {
                    *v *= scale;
                }
            }
        }
        Some(slices)
    } else {
        None
    };

    let s_mat = match &hy {
        Some(slices) => {
            let mut s = Mat::zeros(p, p);
            for (idx, slice) in slices.iter().enumerate() {
                let g = ops.grad()[idx];
                if g != 0.0 {
                    for (sv, hv) in s.data.iter_mut().zip(&slice.data) {
                        *sv += g * hv;
                    }
                }
            }
            s
        }
        None => {
            // Column by column through the directional mode.
            let mut s = Mat::zeros(p, p);
            let mut unit = vec![0.0; p];
            for col in 0..p {
                unit[col] = 1.0;
                let sv = ops.s_apply(&unit);
                unit[col] = 0.0;
                for row in 0..p {
                    s[(row, col)] = sv[row];
                }
            }
            s.symmetrize();
            s
        }
    };
    let h_mat = i_mat.add(&s_mat);
    Ok(HessianBundle { dy, hy, i_mat, s_mat, h_mat, y: ops.y().to_vec() })
}

/// Numerical rank at relative tolerance `tol` on the largest |eigenvalue|.
pub fn numerical_rank(a: &Mat, tol: f64) -> Result<usize> {
    let eig = sym_eig(a)?;
    let top = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if top == 0.0 {
        return Ok(0);
    }
    Ok(eig.values.iter().filter(|v| v.abs() > tol * top).count())
}

/// Exact moment and norm summary of a dense bundle.
#[derive(Debug, Clone)]
pub struct MomentSample {
    pub tr_i: Vec<f64>,
    pub tr_s: Vec<f64>,
    pub tr_h: Vec<f64>,
    pub frob_i: f64,
    pub frob_s: f64,
    pub frob_is: f64,
    /// `||IS||_F / (||I||_F ||S||_F)`, the mutual-orthogonality witness.
    pub frob_is_normalized: f64,
    pub op_s: f64,
}

pub fn empirical_moments(bundle: &HessianBundle, k_max: usize) -> Result<MomentSample> {
    let tr_i = bundle.i_mat.power_traces(k_max);
    let tr_s = bundle.s_mat.power_traces(k_max);
    let tr_h = bundle.h_mat.power_traces(k_max);
    let frob_i = bundle.i_mat.frob_norm();
    let frob_s = bundle.s_mat.frob_norm();
    let frob_is = bundle.i_mat.matmul(&bundle.s_mat).frob_norm();
    let denom = frob_i * frob_s;
    let frob_is_normalized = if denom > 0.0 { frob_is / denom } else { 0.0 };
    let op_s = top_eigenpairs(&bundle.s_mat, 2.min(bundle.s_mat.rows), 200, 17)?
        .0
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(MomentSample { tr_i, tr_s, tr_h, frob_i, frob_s, frob_is, frob_is_normalized, op_s })
}

/// Gradient of the scalar loss in parameter space, with the current outputs
/// and loss value. `scale` is the mean-field output factor.
pub fn loss_param_gradient(
    params: &NetParams,
    nl: &Nonlin,
    inputs: &[Vec<f64>],
    loss: &LossSpec,
    scale: f64,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let n_out = params.arch.n_out();
    let mut y = Vec::with_capacity(inputs.len() * n_out);
    let mut fwds = Vec::with_capacity(inputs.len());
    for x in inputs {
        let f = forward(params, nl, x)?;
        y.extend(f.output().iter().map(|v| v * scale));
        fwds.push(f);
    }
    let value = loss_value(loss, &y)?;
    let grad_y = loss_grad(loss, &y)?;
    let mut grad_theta = vec![0.0; params.arch.param_count()];
    for (i, fwd) in fwds.iter().enumerate() {
        let block: Vec<f64> =
            grad_y[i * n_out..(i + 1) * n_out].iter().map(|v| v * scale).collect();
        reverse_into(params, nl, fwd, &block, &mut grad_theta);
    }
    Ok((y, value, grad_theta))
}

#[derive(Debug, Clone)]
pub struct FlowRecord {
    pub step: usize,
    pub t: f64,
    pub y: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainTrajectory {
    pub records: Vec<FlowRecord>,
    pub final_params: NetParams,
    /// Set when the loss ever increased between steps (step size too large
    /// for the local curvature).
    pub loss_increased: bool,
}

/// Explicit-Euler gradient flow `theta <- theta - dt * grad`, recording
/// outputs and loss every `record_every` steps (and always at both ends).
pub fn train_flow(
    params: &NetParams,
    nl: &Nonlin,
    inputs: &[Vec<f64>],
    loss: &LossSpec,
    dt: f64,
    steps: usize,
    record_every: usize,
) -> Result<TrainTrajectory> {
    if dt <= 0.0 {
        return Err(Error::Config(format!("step size must be positive, got {dt}")));
    }
    let record_every = record_every.max(1);
    let mut current = params.clone();
    let mut records = Vec::new();
    let mut prev_loss = f64::INFINITY;
    let mut loss_increased = false;
    for step in 0..=steps {
        let (y, value, grad_theta) = loss_param_gradient(&current, nl, inputs, loss, 1.0)?;
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "loss became non-finite at step {step} (t = {})",
                step as f64 * dt
            )));
        }
        if value > prev_loss + 1e-12 * prev_loss.abs().max(1.0) {
            loss_increased = true;
        }
        prev_loss = value;
        if step % record_every == 0 || step == steps {
            records.push(FlowRecord { step, t: step as f64 * dt, y: y.clone(), loss: value });
        }
        if step < steps {
            axpy(&mut current.theta, -dt, &grad_theta);
        }
    }
    Ok(TrainTrajectory { records, final_params: current, loss_increased })
}

/// Default Euler step: `1 / (2 λ_max(Θ_emp))` from the empirical tangent
/// kernel at the given parameters.
pub fn default_flow_dt(params: &NetParams, nl: &Nonlin, inputs: &[Vec<f64>]) -> Result<f64> {
    let dy = jacobian(params, nl, inputs)?;
    let gram = empirical_ntk(&dy);
    let (vals, _) = top_eigenpairs(&gram, 1, 150, 3)?;
    let lam = vals[0].max(1e-12);
    Ok(1.0 / (2.0 * lam))
}

/// Gradient of one output component, `∇_theta f_k(x)`.
pub fn output_gradient(
    params: &NetParams,
    nl: &Nonlin,
    x: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    let fwd = forward(params, nl, x)?;
    let mut unit = vec![0.0; params.arch.n_out()];
    unit[k] = 1.0;
    let mut out = vec![0.0; params.arch.param_count()];
    reverse_into(params, nl, &fwd, &unit, &mut out);
    Ok(out)
}

/// `(Hf_k(x)) v` for one output component.
pub fn output_hessian_product(
    params: &NetParams,
    nl: &Nonlin,
    x: &[f64],
    k: usize,
    v: &[f64],
) -> Result<Vec<f64>> {
    let fwd = forward(params, nl, x)?;
    let tf = forward_tangent(params, nl, &fwd, v);
    let mut unit = vec![0.0; params.arch.n_out()];
    unit[k] = 1.0;
    let mut out = vec![0.0; params.arch.param_count()];
    reverse_tangent_into(params, nl, &fwd, &tf, &unit, None, v, &mut out);
    Ok(out)
}

/// First-order contraction `Ω = (∇f_0)^T Hf_1 ∇f_2` across three inputs.
pub fn omega_contraction(
    params: &NetParams,
    nl: &Nonlin,
    points: [(&[f64], usize); 3],
) -> Result<f64> {
    let g0 = output_gradient(params, nl, points[0].0, points[0].1)?;
    let g2 = output_gradient(params, nl, points[2].0, points[2].1)?;
    let hv = output_hessian_product(params, nl, points[1].0, points[1].1, &g2)?;
    Ok(dot(&g0, &hv))
}

/// Second-order contraction `Γ = (∇f_0)^T Hf_1 Hf_2 ∇f_3` across four inputs.
pub fn gamma_contraction(
    params: &NetParams,
    nl: &Nonlin,
    points: [(&[f64], usize); 4],
) -> Result<f64> {
    let g0 = output_gradient(params, nl, points[0].0, points[0].1)?;
    let g3 = output_gradient(params, nl, points[3].0, points[3].1)?;
    let left = output_hessian_product(params, nl, points[1].0, points[1].1, &g0)?;
    let right = output_hessian_product(params, nl, points[2].0, points[2].1, &g3)?;
    Ok(dot(&left, &right))
}

/// Rayleigh quotients `(v^T I v, v^T S v)` along the top eigenvectors of I
/// and of S, each list sorted by its source eigenvalue (descending).
#[derive(Debug, Clone)]
pub struct RayleighProfile {
    pub from_i: Vec<(f64, f64)>,
    pub from_s: Vec<(f64, f64)>,
}

pub fn rayleigh_profile(ops: &HessianOps, m: usize, iters: usize, seed: u64) -> Result<RayleighProfile> {
    let m = m.min(ops.p());
    let (_, i_vecs) = top_eigenpairs(&IOp(ops), m, iters, seed)?;
    let (_, s_vecs) = top_eigenpairs(&SOp(ops), m, iters, seed + 1)?;
    let quotients = |vecs: &[Vec<f64>]| -> Vec<(f64, f64)> {
        vecs.iter()
            .map(|v| (dot(v, &ops.i_apply(v)), dot(v, &ops.s_apply(v))))
            .collect()
    };
    let mut from_i = quotients(&i_vecs);
    from_i.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut from_s = quotients(&s_vecs);
    from_s.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    Ok(RayleighProfile { from_i, from_s })
}

/// Loss values on a centered grid in the plane spanned by two orthonormal
/// directions: entry `(i, j)` is the loss at
/// `theta + a_j v1 + b_i v2` with both offsets running over
/// `[-extent, extent]`.
pub fn loss_surface_slice(
    params: &NetParams,
    nl: &Nonlin,
    inputs: &[Vec<f64>],
    loss: &LossSpec,
    v1: &[f64],
    v2: &[f64],
    grid: usize,
    extent: f64,
) -> Result<Mat> {
    let p = params.arch.param_count();
    if v1.len() != p || v2.len() != p {
        return Err(Error::Config("slice directions must have length P".into()));
    }
    let n1 = crate::linalg::norm2(v1);
    let n2 = crate::linalg::norm2(v2);
    if (n1 - 1.0).abs() > 1e-8 || (n2 - 1.0).abs() > 1e-8 {
        return Err(Error::Config("slice directions must be unit vectors".into()));
    }
    if dot(v1, v2).abs() > 1e-8 {
        return Err(Error::Config("slice directions must be orthogonal".into()));
    }
    if grid < 1 {
        return Err(Error::Config("grid must have at least one point".into()));
    }
    let coord = |idx: usize| -> f64 {
        if grid == 1 {
            0.0
        } else {
            -extent + 2.0 * extent * idx as f64 / (grid - 1) as f64
        }
    };
    let mut out = Mat::zeros(grid, grid);
    let mut shifted = params.clone();
    for i in 0..grid {
        let b = coord(i);
        for j in 0..grid {
            let a = coord(j);
            shifted.theta.copy_from_slice(&params.theta);
            axpy(&mut shifted.theta, a, v1);
            axpy(&mut shifted.theta, b, v2);
            let y = super::outputs(&shifted, nl, inputs)?;
            out[(i, j)] = loss_value(loss, &y)?;
        }
    }
    Ok(out)
}

/// Output factor for the mean-field rescaling of a width-w network.
pub fn meanfield_scale(width: usize) -> f64 {
    1.0 / (width as f64).sqrt()
}
