//! Infinite-width predictions for the Hessian moments at initialization and
//! along gradient flow: `Tr(I^k)` from the weighted tangent-kernel Gram,
//! `Tr(S)` and `Tr(S^2)` from the source kernels, closed forms for MSE, and
//! the mean-field scalings.
//!
//! Conventions. The function-space flow is `dY/dt = -Θ̃ ∇C(Y)`,
//! `dG/dt = -Λ̃ ∇C(Y)`, with the loss gradient carrying its 1/N factor; for
//! MSE this linear system has propagator `E(t) = exp(-t Θ̃ / N)`, and every
//! closed form below uses that propagator so that theory time equals the
//! gradient-flow time of a finite network.

use crate::kernels::GramMatrix;
use crate::linalg::{dot, Mat};
use crate::losses::{loss_grad, loss_hess, loss_value, LossSpec};
use crate::spectral::{expm_scaled, reg_inverse, sym_eig, DEFAULT_REL_CUTOFF};
use crate::widenet::standard_normal;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Joint state of the function-space flow: outputs `y` and the parameter
/// Laplacian `g`, both flattened over (example, output).
#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub y: Vec<f64>,
    pub g: Vec<f64>,
}

/// Predicted `Tr(I^k)` for k = 1..=k_max: the limit is
/// `Tr((HC(Y) Θ̃)^k)`, exact matrix powers of the weighted Gram.
pub fn predict_tr_i(
    loss: &LossSpec,
    theta: &GramMatrix,
    y: &[f64],
    k_max: usize,
) -> Result<Vec<f64>> {
    if k_max < 1 {
        return Err(Error::Config("k_max must be >= 1".into()));
    }
    if y.len() != theta.dim() {
        return Err(Error::Config(format!(
            "output vector length {} does not match gram dimension {}",
            y.len(),
            theta.dim()
        )));
    }
    let hc = loss_hess(loss, y)?;
    Ok(hc.matmul(&theta.mat).power_traces(k_max))
}

/// One joint Gaussian draw of `(G(0), Y(0))` from the stacked covariance
/// `[[Ξ̃, Φ̃], [Φ̃^T, Σ̃]]`, by eigendecomposition square root with small
/// negative eigenvalues clamped (quadrature noise can sit on the boundary).
pub fn sample_init_pair(
    sigma: &GramMatrix,
    phi: &GramMatrix,
    xi: &GramMatrix,
    seed: u64,
) -> Result<FlowState> {
    let dim = sigma.dim();
    if phi.dim() != dim || xi.dim() != dim {
        return Err(Error::Config("gram dimensions disagree".into()));
    }
    let mut stacked = Mat::zeros(2 * dim, 2 * dim);
    for i in 0..dim {
        for j in 0..dim {
            stacked[(i, j)] = xi.mat[(i, j)];
            stacked[(i, dim + j)] = phi.mat[(i, j)];
            stacked[(dim + i, j)] = phi.mat[(j, i)];
            stacked[(dim + i, dim + j)] = sigma.mat[(i, j)];
        }
    }
    stacked.symmetrize();
    let eig = sym_eig(&stacked)?;
    let lam_max = eig.values[0].max(0.0);
    if let Some(bad) = eig.values.iter().find(|&&v| v < -1e-8 * lam_max.max(1e-30)) {
        return Err(Error::Domain(format!(
            "stacked initialization covariance has eigenvalue {bad} beyond tolerance"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..2 * dim).map(|_| standard_normal(&mut rng)).collect();
    // x = V sqrt(max(Λ,0)) z
    let mut x = vec![0.0; 2 * dim];
    for (j, &lam) in eig.values.iter().enumerate() {
        let s = lam.max(0.0).sqrt() * z[j];
        if s != 0.0 {
            for (r, xr) in x.iter_mut().enumerate() {
                *xr += s * eig.vectors[(r, j)];
            }
        }
    }
    Ok(FlowState { t: 0.0, y: x[dim..].to_vec(), g: x[..dim].to_vec() })
}

/// Default RK4 resolution.
pub const ODE_STEPS_PER_UNIT_TIME: usize = 1000;

#[derive(Debug, Clone)]
pub struct OdeTrajectory {
    pub states: Vec<FlowState>,
    pub losses: Vec<f64>,
    /// Cleared when the loss ever increased along the trajectory (step size
    /// above the stability threshold).
    pub loss_non_increasing: bool,
}

/// Classical fixed-step RK4 integration of the function-space flow
/// `dY/dt = -Θ̃ ∇C(Y)`, `dG/dt = -Λ̃ ∇C(Y)` from `init` to time `t_end`.
pub fn ode_flow(
    loss: &LossSpec,
    theta: &GramMatrix,
    lambda: &GramMatrix,
    init: &FlowState,
    t_end: f64,
    steps: usize,
) -> Result<OdeTrajectory> {
    if steps < 1 {
        return Err(Error::Config("ode_flow needs at least one step".into()));
    }
    let dim = theta.dim();
    if init.y.len() != dim || init.g.len() != dim || lambda.dim() != dim {
        return Err(Error::Config("flow state does not match gram dimension".into()));
    }
    let dt = (t_end - init.t) / steps as f64;
    let deriv = |y: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let grad = loss_grad(loss, y)?;
        let dy: Vec<f64> = theta.mat.matvec(&grad).iter().map(|v| -v).collect();
        let dg: Vec<f64> = lambda.mat.matvec(&grad).iter().map(|v| -v).collect();
        Ok((dy, dg))
    };
    let mut states = Vec::with_capacity(steps + 1);
    let mut losses = Vec::with_capacity(steps + 1);
    let mut y = init.y.clone();
    let mut g = init.g.clone();
    let mut monotone = true;
    let mut prev_loss = f64::INFINITY;
    for step in 0..=steps {
        let t = init.t + step as f64 * dt;
        let value = loss_value(loss, &y)?;
        if !y.iter().all(|v| v.is_finite()) || !value.is_finite() {
            return Err(Error::Numerical(format!("flow state non-finite at t = {t}")));
        }
        if value > prev_loss + 1e-12 * prev_loss.abs().max(1.0) {
            monotone = false;
        }
        prev_loss = value;
        states.push(FlowState { t, y: y.clone(), g: g.clone() });
        losses.push(value);
        if step == steps {
            break;
        }
        // RK4 on the joint (y, g) state.
        let (k1y, k1g) = deriv(&y)?;
        let y2: Vec<f64> = y.iter().zip(&k1y).map(|(a, b)| a + 0.5 * dt * b).collect();
        let (k2y, k2g) = deriv(&y2)?;
        let y3: Vec<f64> = y.iter().zip(&k2y).map(|(a, b)| a + 0.5 * dt * b).collect();
        let (k3y, k3g) = deriv(&y3)?;
        let y4: Vec<f64> = y.iter().zip(&k3y).map(|(a, b)| a + dt * b).collect();
        let (k4y, k4g) = deriv(&y4)?;
        for i in 0..dim {
            y[i] += dt / 6.0 * (k1y[i] + 2.0 * k2y[i] + 2.0 * k3y[i] + k4y[i]);
            g[i] += dt / 6.0 * (k1g[i] + 2.0 * k2g[i] + 2.0 * k3g[i] + k4g[i]);
        }
    }
    Ok(OdeTrajectory { states, losses, loss_non_increasing: monotone })
}

fn mse_propagator(theta: &GramMatrix, t: f64) -> Result<Mat> {
    let n = theta.dim() / theta.n_out;
    expm_scaled(&theta.mat, t / n as f64)
}

/// Pathwise MSE limits at time `t` given the trial's own `(Y(0), G(0))`:
///
/// ```text
/// Tr S(t)   = -(1/N) [G0 + Λ̃ Θ̃⁺ (Id - E) r]^T E r,   r = Y* - Y0
/// Tr S²(t)  =  (1/N²) r^T E Υ̃ E r
/// ```
///
/// with `E = exp(-t Θ̃/N)`. Both vanish as `t -> ∞` on the range of `Θ̃`.
pub fn predict_s_moments_mse(
    theta: &GramMatrix,
    lambda: &GramMatrix,
    upsilon: &GramMatrix,
    y0: &[f64],
    g0: &[f64],
    ystar: &[f64],
    t: f64,
) -> Result<(f64, f64)> {
    let dim = theta.dim();
    if y0.len() != dim || g0.len() != dim || ystar.len() != dim {
        return Err(Error::Config("vector lengths do not match gram dimension".into()));
    }
    let n = (dim / theta.n_out) as f64;
    let e = mse_propagator(theta, t)?;
    let r: Vec<f64> = ystar.iter().zip(y0).map(|(a, b)| a - b).collect();
    let er = e.matvec(&r);
    let q: Vec<f64> = r.iter().zip(&er).map(|(a, b)| a - b).collect(); // (Id - E) r
    let theta_pinv = reg_inverse(&theta.mat, DEFAULT_REL_CUTOFF)?;
    let lam_t_er = lambda.mat.matvec_t(&er); // Λ̃^T E r
    let tr_s1 = -(dot(g0, &er) + dot(&theta_pinv.matvec(&q), &lam_t_er)) / n;
    let uer = upsilon.mat.matvec(&er);
    let tr_s2 = dot(&er, &uer) / (n * n);
    Ok((tr_s1, tr_s2))
}

/// Expectations of the pathwise limits over the initialization Gaussian:
///
/// ```text
/// E Tr S(t)  = -(1/N) Tr((Id-E) Θ̃⁺ Λ̃^T E M) + (1/N) Tr(E Φ̃^T)
/// E Tr S²(t) =  (1/N²) Tr(E Υ̃ E M),        M = Σ̃ + Y* Y*^T
/// ```
pub fn expected_s_moments_mse(
    theta: &GramMatrix,
    lambda: &GramMatrix,
    upsilon: &GramMatrix,
    sigma: &GramMatrix,
    phi: &GramMatrix,
    ystar: &[f64],
    t: f64,
) -> Result<(f64, f64)> {
    let dim = theta.dim();
    if ystar.len() != dim {
        return Err(Error::Config("label vector does not match gram dimension".into()));
    }
    let n = (dim / theta.n_out) as f64;
    let e = mse_propagator(theta, t)?;
    let mut m = sigma.mat.clone();
    for i in 0..dim {
        for j in 0..dim {
            m[(i, j)] += ystar[i] * ystar[j];
        }
    }
    let theta_pinv = reg_inverse(&theta.mat, DEFAULT_REL_CUTOFF)?;
    let id = Mat::identity(dim);
    let id_minus_e = id.sub(&e);
    let first = id_minus_e
        .matmul(&theta_pinv)
        .matmul(&lambda.mat.transpose())
        .matmul(&e)
        .matmul(&m);
    let second = e.matmul(&phi.mat.transpose());
    let e_tr_s1 = (-first.trace() + second.trace()) / n;
    let e_tr_s2 = e.matmul(&upsilon.mat).matmul(&e).matmul(&m).trace() / (n * n);
    Ok((e_tr_s1, e_tr_s2))
}

/// Moment prediction at one flow state; `tr_s[k]` is zero for k >= 3 (the
/// higher moments vanish in the limit) and `tr_h = tr_i + tr_s` by
/// construction.
#[derive(Debug, Clone)]
pub struct MomentPrediction {
    pub t: f64,
    pub tr_i: Vec<f64>,
    pub tr_s: Vec<f64>,
    pub tr_h: Vec<f64>,
}

/// Combines `Tr(I^k)` from the weighted Gram with the S-moments evaluated at
/// the state: `Tr S = G . ∇C(Y)` and `Tr S² = ∇C^T Υ̃ ∇C` (the Υ̃ kernel is
/// fixed in time; only the gradient moves). Works for any loss; for MSE the
/// closed forms above are available as a cross-check.
pub fn predict_tr_h(
    loss: &LossSpec,
    theta: &GramMatrix,
    upsilon: &GramMatrix,
    state: &FlowState,
    k_max: usize,
) -> Result<MomentPrediction> {
    let tr_i = predict_tr_i(loss, theta, &state.y, k_max)?;
    let grad = loss_grad(loss, &state.y)?;
    let tr_s1 = dot(&state.g, &grad);
    let tr_s2 = dot(&grad, &upsilon.mat.matvec(&grad));
    let mut tr_s = vec![0.0; k_max];
    if k_max >= 1 {
        tr_s[0] = tr_s1;
    }
    if k_max >= 2 {
        tr_s[1] = tr_s2;
    }
    let tr_h = tr_i.iter().zip(&tr_s).map(|(a, b)| a + b).collect();
    Ok(MomentPrediction { t: state.t, tr_i, tr_s, tr_h })
}

/// Mean-field limits for a rescaled network: the variance of `Tr(H)/sqrt(w)`
/// and the limit of `Tr(H^2)/w`, both quadratic forms in the loss gradient at
/// the limiting (zero) outputs.
pub fn meanfield_predictions(
    xi: &GramMatrix,
    upsilon: &GramMatrix,
    grad_c: &[f64],
) -> Result<(f64, f64)> {
    if grad_c.len() != xi.dim() || xi.dim() != upsilon.dim() {
        return Err(Error::Config("gradient length does not match gram dimension".into()));
    }
    let var = dot(grad_c, &xi.mat.matvec(grad_c));
    let second = dot(grad_c, &upsilon.mat.matvec(grad_c));
    Ok((var, second))
}
