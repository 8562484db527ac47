//! Analytic differentiation of the network: reverse-mode Jacobians,
//! forward-over-reverse second-order products, the full output-Hessian tensor
//! at small parameter counts, and the exact parameter Laplacian
//! `g(x) = sum_p d^2 f(x) / d theta_p^2` via its own layer recursion.

use super::{forward, Forward, NetParams};
use crate::activations::Nonlin;
use crate::linalg::{axpy, dot, Mat};
use crate::{Error, Result};

/// Tangents of one forward pass along a parameter direction.
pub(crate) struct TangentForward {
    /// `dpre[l]` is the tangent of `z^(l+1)`.
    pub dpre: Vec<Vec<f64>>,
    /// `dact[l]` is the tangent of `a^(l)`; `dact[0] = 0`.
    pub dact: Vec<Vec<f64>>,
}

pub(crate) fn forward_tangent(
    params: &NetParams,
    nl: &Nonlin,
    fwd: &Forward,
    v: &[f64],
) -> TangentForward {
    let arch = &params.arch;
    let depth = arch.depth();
    let mut dact: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut dpre: Vec<Vec<f64>> = Vec::with_capacity(depth);
    dact.push(vec![0.0; arch.n_in()]);
    for layer in 0..depth {
        let (n_in, n_out) = (arch.widths[layer], arch.widths[layer + 1]);
        let scale = 1.0 / (n_in as f64).sqrt();
        let w = params.w(layer);
        let vw = &v[arch.w_range(layer)];
        let vb = &v[arch.b_range(layer)];
        let a = &fwd.act[layer];
        let da = &dact[layer];
        let mut dz = vec![0.0; n_out];
        for r in 0..n_out {
            let wrow = &w[r * n_in..(r + 1) * n_in];
            let vrow = &vw[r * n_in..(r + 1) * n_in];
            dz[r] = scale * (dot(vrow, a) + dot(wrow, da)) + arch.beta * vb[r];
        }
        if layer + 1 < depth {
            let z = &fwd.pre[layer];
            dact.push(
                dz.iter().zip(z).map(|(&dzr, &zr)| nl.eval_k(1, zr) * dzr).collect(),
            );
        }
        dpre.push(dz);
    }
    TangentForward { dpre, dact }
}

/// Accumulates the gradient of `u . f(x)` into `out` (length P).
pub(crate) fn reverse_into(
    params: &NetParams,
    nl: &Nonlin,
    fwd: &Forward,
    u: &[f64],
    out: &mut [f64],
) {
    let arch = &params.arch;
    let depth = arch.depth();
    let mut delta = u.to_vec();
    for layer in (0..depth).rev() {
        let (n_in, n_out) = (arch.widths[layer], arch.widths[layer + 1]);
        let scale = 1.0 / (n_in as f64).sqrt();
        let a = &fwd.act[layer];
        let w_range = arch.w_range(layer);
        let b_range = arch.b_range(layer);
        {
            let gw = &mut out[w_range.clone()];
            for r in 0..n_out {
                axpy(&mut gw[r * n_in..(r + 1) * n_in], scale * delta[r], a);
            }
        }
        {
            let gb = &mut out[b_range];
            axpy(gb, arch.beta, &delta);
        }
        if layer > 0 {
            let w = params.w(layer);
            let mut dprev = vec![0.0; n_in];
            for r in 0..n_out {
                axpy(&mut dprev, scale * delta[r], &w[r * n_in..(r + 1) * n_in]);
            }
            let z = &fwd.pre[layer - 1];
            for (d, &zr) in dprev.iter_mut().zip(z) {
                *d *= nl.eval_k(1, zr);
            }
            delta = dprev;
        }
    }
}

/// Accumulates the tangent of the gradient of `u . f(x)` along parameter
/// direction `v` into `out`: the contraction `sum_k u_k (Hf_k) v`, plus
/// `(Df)^T du` when a cotangent tangent `du` is supplied (which is what turns
/// the output-Hessian product into a full loss-Hessian product).
pub(crate) fn reverse_tangent_into(
    params: &NetParams,
    nl: &Nonlin,
    fwd: &Forward,
    tfwd: &TangentForward,
    u: &[f64],
    du: Option<&[f64]>,
    v: &[f64],
    out: &mut [f64],
) {
    let arch = &params.arch;
    let depth = arch.depth();
    let mut delta = u.to_vec();
    let mut ddelta = match du {
        Some(d) => d.to_vec(),
        None => vec![0.0; u.len()],
    };
    for layer in (0..depth).rev() {
        let (n_in, n_out) = (arch.widths[layer], arch.widths[layer + 1]);
        let scale = 1.0 / (n_in as f64).sqrt();
        let a = &fwd.act[layer];
        let da = &tfwd.dact[layer];
        let w_range = arch.w_range(layer);
        let b_range = arch.b_range(layer);
        {
            let gw = &mut out[w_range.clone()];
            for r in 0..n_out {
                let row = &mut gw[r * n_in..(r + 1) * n_in];
                axpy(row, scale * ddelta[r], a);
                axpy(row, scale * delta[r], da);
            }
        }
        {
            let gb = &mut out[b_range];
            axpy(gb, arch.beta, &ddelta);
        }
        if layer > 0 {
            let w = params.w(layer);
            let vw = &v[arch.w_range(layer)];
            let mut dprev = vec![0.0; n_in];
            let mut ddprev = vec![0.0; n_in];
            for r in 0..n_out {
                let wrow = &w[r * n_in..(r + 1) * n_in];
                let vrow = &vw[r * n_in..(r + 1) * n_in];
                axpy(&mut dprev, scale * delta[r], wrow);
                axpy(&mut ddprev, scale * ddelta[r], wrow);
                axpy(&mut ddprev, scale * delta[r], vrow);
            }
            let z = &fwd.pre[layer - 1];
            let dz = &tfwd.dpre[layer - 1];
            let mut next_delta = vec![0.0; n_in];
            let mut next_ddelta = vec![0.0; n_in];
            for c in 0..n_in {
                let slope = nl.eval_k(1, z[c]);
                let curv = nl.eval_k(2, z[c]);
                next_delta[c] = dprev[c] * slope;
                next_ddelta[c] = ddprev[c] * slope + dprev[c] * curv * dz[c];
            }
            delta = next_delta;
            ddelta = next_ddelta;
        }
    }
}

/// Jacobian of the outputs over a dataset: an `N n_out x P` matrix whose row
/// `(i, k)` is the gradient of output k at input i.
pub fn jacobian(params: &NetParams, nl: &Nonlin, inputs: &[Vec<f64>]) -> Result<Mat> {
    let p = params.arch.param_count();
    let n_out = params.arch.n_out();
    let mut dy = Mat::zeros(inputs.len() * n_out, p);
    let mut unit = vec![0.0; n_out];
    for (i, x) in inputs.iter().enumerate() {
        let fwd = forward(params, nl, x)?;
        for k in 0..n_out {
            unit[k] = 1.0;
            reverse_into(params, nl, &fwd, &unit, dy.row_mut(i * n_out + k));
            unit[k] = 0.0;
        }
    }
    Ok(dy)
}

/// Empirical tangent kernel Gram `DY DY^T`.
pub fn empirical_ntk(dy: &Mat) -> Mat {
    let n = dy.rows;
    let mut gram = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = dot(dy.row(i), dy.row(j));
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    gram
}

/// Directional second derivatives: row `(i, k)` holds `(Hf_k(x_i)) v`.
pub fn hessian_vector(
    params: &NetParams,
    nl: &Nonlin,
    inputs: &[Vec<f64>],
    v: &[f64],
) -> Result<Mat> {
    let p = params.arch.param_count();
    if v.len() != p {
        return Err(Error::Config(format!(
            "direction has length {}, expected {p}",
            v.len()
        )));
    }
    let n_out = params.arch.n_out();
    let mut out = Mat::zeros(inputs.len() * n_out, p);
    let mut unit = vec![0.0; n_out];
    for (i, x) in inputs.iter().enumerate() {
        let fwd = forward(params, nl, x)?;
        let tfwd = forward_tangent(params, nl, &fwd, v);
        for k in 0..n_out {
            unit[k] = 1.0;
            reverse_tangent_into(
                params,
                nl,
                &fwd,
                &tfwd,
                &unit,
                None,
                v,
                out.row_mut(i * n_out + k),
            );
            unit[k] = 0.0;
        }
    }
    Ok(out)
}

/// Default cap on P for materializing the full `P x P x N n_out` tensor.
pub const TENSOR_PARAM_CAP: usize = 200;

/// The full output-Hessian tensor as one `P x P` slice per flat output index,
/// assembled column by column from directional products. Guarded by a
/// parameter cap; larger runs must use the directional mode
/// ([`hessian_vector`] / [`HessianOps`]).
pub fn hessian(
    params: &NetParams,
    nl: &Nonlin,
    inputs: &[Vec<f64>],
    param_cap: usize,
) -> Result<Vec<Mat>> {
    let p = params.arch.param_count();
    if p > param_cap {
        return Err(Error::Config(format!(
            "P = {p} exceeds the full-tensor cap {param_cap}; use hessian_vector directional mode"
        )));
    }
    let dim = inputs.len() * params.arch.n_out();
    let mut slices = vec![Mat::zeros(p, p); dim];
    let mut unit = vec![0.0; p];
    for col in 0..p {
        unit[col] = 1.0;
        let hv = hessian_vector(params, nl, inputs, &unit)?;
        unit[col] = 0.0;
        for (out_idx, slice) in slices.iter_mut().enumerate() {
            for row in 0..p {
                slice[(row, col)] = hv[(out_idx, row)];
            }
        }
    }
    Ok(slices)
}

/// Per-neuron squared gradient norms of the layer-`l` preactivations,
/// represented exactly: the first layer is a scalar multiple of the identity
/// and later layers densify only when a deeper layer still needs them.
enum QRep {
    ScalarId(f64),
    Dense(Mat),
}

/// The parameter Laplacian `g(x) = sum_p d^2 f(x)/d theta_p^2`, exact at
/// finite width via the layer recursion
/// `s^(l+1)_k = (1/sqrt(n_l)) sum_m [s^(l)_m slope_m + q^(l)_m curv_m] W_km`,
/// where `q^(l)_m` is the per-neuron tangent-kernel diagonal.
pub fn g_trace(params: &NetParams, nl: &Nonlin, x: &[f64]) -> Result<Vec<f64>> {
    let arch = &params.arch;
    let depth = arch.depth();
    let fwd = forward(params, nl, x)?;
    if depth == 1 {
        return Ok(vec![0.0; arch.n_out()]);
    }

    // q_diag[l-1] holds the diagonal for preactivation layer l = 1..L-1.
    let mut q_diag: Vec<Vec<f64>> = Vec::with_capacity(depth - 1);
    let own = |a: &[f64], n_in: usize| -> f64 {
        dot(a, a) / n_in as f64 + arch.beta * arch.beta
    };
    q_diag.push(vec![own(&fwd.act[0], arch.widths[0]); arch.widths[1]]);
    let mut rep = QRep::ScalarId(own(&fwd.act[0], arch.widths[0]));

    for layer in 2..depth {
        let n_in = arch.widths[layer - 1];
        let n_out = arch.widths[layer];
        let scale = 1.0 / (n_in as f64).sqrt();
        let w = params.w(layer - 1);
        let z_prev = &fwd.pre[layer - 2];
        // Row k of V is the slope-weighted incoming weight row.
        let vrow = |k: usize| -> Vec<f64> {
            (0..n_in)
                .map(|m| scale * w[k * n_in + m] * nl.eval_k(1, z_prev[m]))
                .collect()
        };
        let sc = own(&fwd.act[layer - 1], n_in);
        let mut diag = vec![0.0; n_out];
        match &rep {
            QRep::ScalarId(s) => {
                for (k, d) in diag.iter_mut().enumerate() {
                    let row = vrow(k);
                    *d = sc + s * dot(&row, &row);
                }
            }
            QRep::Dense(q) => {
                for (k, d) in diag.iter_mut().enumerate() {
                    let row = vrow(k);
                    let qv = q.matvec(&row);
                    *d = sc + dot(&row, &qv);
                }
            }
        }
        // Densify only if a deeper hidden layer still needs this table.
        if layer + 1 < depth {
            let mut dense = Mat::zeros(n_out, n_out);
            let rows: Vec<Vec<f64>> = (0..n_out).map(vrow).collect();
            match &rep {
                QRep::ScalarId(s) => {
                    for i in 0..n_out {
                        for j in 0..=i {
                            let v = s * dot(&rows[i], &rows[j]);
                            dense[(i, j)] = v;
                            dense[(j, i)] = v;
                        }
                    }
                }
                QRep::Dense(q) => {
                    let qrows: Vec<Vec<f64>> = rows.iter().map(|r| q.matvec(r)).collect();
                    for i in 0..n_out {
                        for j in 0..=i {
                            let v = dot(&rows[i], &qrows[j]);
                            dense[(i, j)] = v;
                            dense[(j, i)] = v;
                        }
                    }
                }
            }
            for i in 0..n_out {
                dense[(i, i)] += sc;
            }
            rep = QRep::Dense(dense);
        }
        q_diag.push(diag);
    }

    // Trace recursion up through the layers.
    let mut s = vec![0.0; arch.widths[1]];
    for layer in 1..depth {
        let n_in = arch.widths[layer];
        let n_out = arch.widths[layer + 1];
        let scale = 1.0 / (n_in as f64).sqrt();
        let z = &fwd.pre[layer - 1];
        let q = &q_diag[layer - 1];
        let u: Vec<f64> = (0..n_in)
            .map(|m| s[m] * nl.eval_k(1, z[m]) + q[m] * nl.eval_k(2, z[m]))
            .collect();
        let w = params.w(layer);
        s = (0..n_out)
            .map(|k| scale * dot(&w[k * n_in..(k + 1) * n_in], &u))
            .collect();
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::make_nonlin;
    use crate::widenet::{init_params, Arch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64) -> (NetParams, Nonlin, Vec<Vec<f64>>) {
        let nl = make_nonlin("softplus").unwrap();
        let arch = Arch::new(vec![2, 3, 2], 0.1).unwrap();
        let params = init_params(&arch, seed);
        let inputs = vec![vec![0.5, -0.3], vec![-1.0, 0.8]];
        (params, nl, inputs)
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (params, nl, inputs) = small_net(1);
        let dy = jacobian(&params, &nl, &inputs).unwrap();
        let h = 1e-6;
        let mut theta_p = params.clone();
        for p in 0..params.arch.param_count() {
            theta_p.theta[p] += h;
            let yp = crate::widenet::outputs(&theta_p, &nl, &inputs).unwrap();
            theta_p.theta[p] -= 2.0 * h;
            let ym = crate::widenet::outputs(&theta_p, &nl, &inputs).unwrap();
            theta_p.theta[p] += h;
            for row in 0..dy.rows {
                let fd = (yp[row] - ym[row]) / (2.0 * h);
                let err = (dy[(row, p)] - fd).abs() / (1.0 + dy[(row, p)].abs());
                assert!(err < 1e-6, "row {row} param {p}: {} vs {}", dy[(row, p)], fd);
            }
        }
    }

    #[test]
    fn one_layer_ntk_closed_form() {
        // L = 1: Theta(x, x') = x.x'/n0 + beta^2 exactly, for any parameters.
        let id = make_nonlin("identity").unwrap();
        let beta = 0.1;
        let arch = Arch::new(vec![3, 1], beta).unwrap();
        let params = init_params(&arch, 5);
        let inputs = vec![vec![1.0, 2.0, -1.0], vec![0.5, 0.0, 0.25]];
        let dy = jacobian(&params, &id, &inputs).unwrap();
        let gram = empirical_ntk(&dy);
        for i in 0..2 {
            for j in 0..2 {
                let expect = dot(&inputs[i], &inputs[j]) / 3.0 + beta * beta;
                assert!((gram[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jvp_matches_jacobian_product() {
        let (params, nl, inputs) = small_net(2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = params.arch.param_count();
        let v: Vec<f64> = (0..p).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let dy = jacobian(&params, &nl, &inputs).unwrap();
        let expect = dy.matvec(&v);
        let mut got = Vec::new();
        for x in &inputs {
            let fwd = forward(&params, &nl, x).unwrap();
            let tf = forward_tangent(&params, &nl, &fwd, &v);
            got.extend_from_slice(tf.dpre.last().unwrap());
        }
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_matches_finite_difference_of_jacobian() {
        let (params, nl, inputs) = small_net(3);
        let p = params.arch.param_count();
        let slices = hessian(&params, &nl, &inputs, TENSOR_PARAM_CAP).unwrap();
        let h = 1e-5;
        let mut shifted = params.clone();
        for q in 0..p {
            shifted.theta[q] += h;
            let jp = jacobian(&shifted, &nl, &inputs).unwrap();
            shifted.theta[q] -= 2.0 * h;
            let jm = jacobian(&shifted, &nl, &inputs).unwrap();
            shifted.theta[q] += h;
            for (out_idx, slice) in slices.iter().enumerate() {
                for r in 0..p {
                    let fd = (jp[(out_idx, r)] - jm[(out_idx, r)]) / (2.0 * h);
                    let err = (slice[(r, q)] - fd).abs() / (1.0 + slice[(r, q)].abs());
                    assert!(
                        err < 1e-5,
                        "slice {out_idx} entry ({r},{q}): {} vs fd {}",
                        slice[(r, q)],
                        fd
                    );
                }
            }
        }
        // Slices are symmetric.
        for slice in &slices {
            assert!(slice.asymmetry() < 1e-10);
        }
    }

    #[test]
    fn one_layer_hessian_is_zero() {
        let id = make_nonlin("identity").unwrap();
        let arch = Arch::new(vec![3, 2], 0.1).unwrap();
        let params = init_params(&arch, 7);
        let inputs = vec![vec![1.0, -1.0, 0.5]];
        let slices = hessian(&params, &id, &inputs, TENSOR_PARAM_CAP).unwrap();
        for slice in &slices {
            assert_eq!(slice.max_abs(), 0.0);
        }
    }

    #[test]
    fn last_layer_bias_hessian_rows_vanish() {
        let (params, nl, inputs) = small_net(11);
        let slices = hessian(&params, &nl, &inputs, TENSOR_PARAM_CAP).unwrap();
        let b_last = params.arch.b_range(params.arch.depth() - 1);
        for slice in &slices {
            for p in b_last.clone() {
                for q in 0..params.arch.param_count() {
                    assert_eq!(slice[(p, q)], 0.0);
                    assert_eq!(slice[(q, p)], 0.0);
                }
            }
        }
    }

    #[test]
    fn hessian_vector_consistency() {
        let (params, nl, inputs) = small_net(4);
        let p = params.arch.param_count();
        // v = 0 gives 0.
        let zero = hessian_vector(&params, &nl, &inputs, &vec![0.0; p]).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        // v = e_q picks out column q of each slice; random v matches the
        // full-tensor contraction.
        let slices = hessian(&params, &nl, &inputs, TENSOR_PARAM_CAP).unwrap();
        let mut unit = vec![0.0; p];
        unit[3] = 1.0;
        let col = hessian_vector(&params, &nl, &inputs, &unit).unwrap();
        for (out_idx, slice) in slices.iter().enumerate() {
            for r in 0..p {
                assert!((col[(out_idx, r)] - slice[(r, 3)]).abs() < 1e-12);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let v: Vec<f64> = (0..p).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let hv = hessian_vector(&params, &nl, &inputs, &v).unwrap();
        for (out_idx, slice) in slices.iter().enumerate() {
            let expect = slice.matvec(&v);
            for r in 0..p {
                assert!(
                    (hv[(out_idx, r)] - expect[r]).abs() < 1e-8,
                    "contraction mismatch at output {out_idx} row {r}"
                );
            }
        }
    }

    #[test]
    fn g_trace_equals_hessian_diagonal_sum() {
        for depth_widths in [vec![2, 4, 3], vec![2, 3, 3, 2], vec![3, 2, 2, 2, 1]] {
            let nl = make_nonlin("tanh").unwrap();
            let arch = Arch::new(depth_widths.clone(), 0.1).unwrap();
            let params = init_params(&arch, 31);
            let x = vec![0.7; arch.n_in()];
            let slices = hessian(&params, &nl, &[x.clone()], TENSOR_PARAM_CAP).unwrap();
            let g = g_trace(&params, &nl, &x).unwrap();
            for (k, slice) in slices.iter().enumerate() {
                let diag_sum = slice.trace();
                assert!(
                    (g[k] - diag_sum).abs() < 1e-10 * (1.0 + diag_sum.abs()),
                    "widths {depth_widths:?} output {k}: g {} vs tensor {}",
                    g[k],
                    diag_sum
                );
            }
        }
    }

    #[test]
    fn g_trace_trivial_cases() {
        let id = make_nonlin("identity").unwrap();
        // One layer: no second derivatives at all.
        let arch1 = Arch::new(vec![2, 3], 0.1).unwrap();
        let g1 = g_trace(&init_params(&arch1, 1), &id, &[1.0, 2.0]).unwrap();
        assert!(g1.iter().all(|&v| v == 0.0));
        // Identity nonlinearity at any depth: curvature terms vanish.
        let arch2 = Arch::new(vec![2, 5, 4, 1], 0.1).unwrap();
        let g2 = g_trace(&init_params(&arch2, 2), &id, &[1.0, -0.5]).unwrap();
        assert!(g2.iter().all(|&v| v.abs() < 1e-14));
    }
}
