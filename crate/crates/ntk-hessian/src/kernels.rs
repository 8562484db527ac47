//! Limiting kernels of an infinitely wide fully connected network on a fixed
//! dataset, built layer by layer:
//!
//! * forward covariances Σ^(ℓ) with their slope and curvature tables Σ̇, Σ̈,
//! * the tangent kernel Θ^(ℓ) accumulated across layers,
//! * the second-moment kernel Υ of the output Hessian,
//! * the source kernels Ξ, Φ (initialization covariance of the parameter
//!   Laplacian g and its cross-covariance with the output), and
//! * the training kernel Λ that drives g under gradient flow.
//!
//! Φ and Λ are genuinely non-symmetric: the first argument is always the
//! point where g is evaluated.
//!
//! Layer indexing follows the forward pass: Σ^(1) is the first preactivation
//! covariance, and every expectation stepping layer ℓ to ℓ+1 is taken over
//! Σ^(ℓ), so Σ̇^(ℓ+1) and Σ̈^(ℓ+1) denote slope/curvature moments over the
//! layer-ℓ law.

use crate::activations::Nonlin;
use crate::gaussmoments::{bi_expect, Cov2, QuadRule};
use crate::linalg::Mat;
use crate::{Error, Result};
use rayon::prelude::*;

/// A finite dataset: `N` input vectors of dimension `n0`, with optional
/// per-example label vectors of dimension `n_out`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Option<Vec<Vec<f64>>>,
    pub n0: usize,
    pub n_out: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Option<Vec<Vec<f64>>>) -> Result<Dataset> {
        if inputs.is_empty() {
            return Err(Error::Config("dataset has no inputs".into()));
        }
        let n0 = inputs[0].len();
        if n0 == 0 || inputs.iter().any(|x| x.len() != n0) {
            return Err(Error::Config("dataset inputs must share a positive dimension".into()));
        }
        let n_out = match &labels {
            Some(ls) => {
                if ls.len() != inputs.len() {
                    return Err(Error::Config("label count differs from input count".into()));
                }
                let d = ls[0].len();
                if d == 0 || ls.iter().any(|y| y.len() != d) {
                    return Err(Error::Config(
                        "dataset labels must share a positive dimension".into(),
                    ));
                }
                d
            }
            None => 1,
        };
        Ok(Dataset { inputs, labels, n0, n_out })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Labels flattened to the `(i, k) -> i*n_out + k` layout.
    pub fn flat_labels(&self) -> Option<Vec<f64>> {
        self.labels
            .as_ref()
            .map(|ls| ls.iter().flat_map(|y| y.iter().cloned()).collect())
    }
}

/// Per-layer kernel tables on a fixed dataset. `sigma[l]` and `theta[l]`
/// hold layers 1..=L at index l-1; `sigma_dot[l]` and `sigma_ddot[l]` hold
/// layers 2..=L at index l-2.
#[derive(Debug, Clone)]
pub struct KernelStack {
    pub depth: usize,
    pub beta: f64,
    pub nl: Nonlin,
    pub rule: QuadRule,
    pub sigma: Vec<Mat>,
    pub sigma_dot: Vec<Mat>,
    pub sigma_ddot: Vec<Mat>,
    pub theta: Vec<Mat>,
}

impl KernelStack {
    pub fn n(&self) -> usize {
        self.sigma[0].rows
    }

    pub fn sigma_layer(&self, layer: usize) -> &Mat {
        &self.sigma[layer - 1]
    }

    pub fn theta_layer(&self, layer: usize) -> &Mat {
        &self.theta[layer - 1]
    }

    /// Slope moments over the layer-(l-1) law, defined for layers 2..=L.
    pub fn sigma_dot_layer(&self, layer: usize) -> &Mat {
        &self.sigma_dot[layer - 2]
    }

    pub fn sigma_ddot_layer(&self, layer: usize) -> &Mat {
        &self.sigma_ddot[layer - 2]
    }

    /// The limiting tangent kernel table at the output layer.
    pub fn ntk(&self) -> &Mat {
        self.theta_layer(self.depth)
    }
}

/// Evaluates one bivariate moment table over the layer law `sigma`: entry
/// (i, j) is `E[f^(fo)(a_i) g^(go)(a_j)]`. Symmetric pairs fill j <= i and
/// mirror; asymmetric pairs evaluate all ordered entries.
fn moment_table(
    sigma: &Mat,
    nl: &Nonlin,
    fo: usize,
    go: usize,
    rule: &QuadRule,
    symmetric: bool,
) -> Result<Mat> {
    let n = sigma.rows;
    let pairs: Vec<(usize, usize)> = if symmetric {
        (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect()
    } else {
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
    };
    let entries: Result<Vec<((usize, usize), f64)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let k = Cov2::new(sigma[(i, i)], sigma[(i, j)], sigma[(j, j)]);
            bi_expect(nl, fo, nl, go, k, rule).map(|v| ((i, j), v))
        })
        .collect();
    let mut out = Mat::zeros(n, n);
    for ((i, j), v) in entries? {
        out[(i, j)] = v;
        if symmetric {
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Builds the forward kernel tables Σ, Σ̇, Σ̈ and the tangent kernel Θ for
/// every layer: Σ^(1) = x·x'/n0 + β², Σ^(ℓ+1) = E[σσ'] + β² over Σ^(ℓ), and
/// Θ^(ℓ+1) = Θ^(ℓ)·Σ̇^(ℓ+1) + Σ^(ℓ+1) starting from Θ^(1) = Σ^(1).
pub fn forward_kernels(
    data: &Dataset,
    depth: usize,
    beta: f64,
    nl: &Nonlin,
    rule: &QuadRule,
) -> Result<KernelStack> {
    if depth < 1 {
        return Err(Error::Config("network depth must be at least 1".into()));
    }
    let n = data.len();
    let n0 = data.n0 as f64;
    let sigma1 = Mat::from_fn(n, n, |i, j| {
        crate::linalg::dot(&data.inputs[i], &data.inputs[j]) / n0 + beta * beta
    });
    let mut stack = KernelStack {
        depth,
        beta,
        nl: *nl,
        rule: rule.clone(),
        sigma: vec![sigma1.clone()],
        sigma_dot: Vec::new(),
        sigma_ddot: Vec::new(),
        theta: vec![sigma1],
    };
    for layer in 1..depth {
        let prev = &stack.sigma[layer - 1];
        let dot_tab = moment_table(prev, nl, 1, 1, rule, true)?;
        let ddot_tab = moment_table(prev, nl, 2, 2, rule, true)?;
        let mut next_sigma = moment_table(prev, nl, 0, 0, rule, true)?;
        for v in &mut next_sigma.data {
            *v += beta * beta;
        }
        let prev_theta = &stack.theta[layer - 1];
        let next_theta = Mat::from_fn(n, n, |i, j| {
            prev_theta[(i, j)] * dot_tab[(i, j)] + next_sigma[(i, j)]
        });
        stack.sigma.push(next_sigma);
        stack.sigma_dot.push(dot_tab);
        stack.sigma_ddot.push(ddot_tab);
        stack.theta.push(next_theta);
    }
    Ok(stack)
}

/// Second-moment kernel of the output Hessian, accumulated as
/// Υ^(ℓ+1) = Υ^(ℓ)Σ̇^(ℓ+1) + (Θ^(ℓ))²Σ̈^(ℓ+1) + 2Θ^(ℓ)Σ̇^(ℓ+1) from Υ^(1) = 0.
pub fn upsilon_kernel(stack: &KernelStack) -> Mat {
    let n = stack.n();
    let mut upsilon = Mat::zeros(n, n);
    for layer in 1..stack.depth {
        let theta = stack.theta_layer(layer);
        let sdot = stack.sigma_dot_layer(layer + 1);
        let sddot = stack.sigma_ddot_layer(layer + 1);
        upsilon = Mat::from_fn(n, n, |i, j| {
            upsilon[(i, j)] * sdot[(i, j)]
                + theta[(i, j)] * theta[(i, j)] * sddot[(i, j)]
                + 2.0 * theta[(i, j)] * sdot[(i, j)]
        });
    }
    upsilon
}

/// Which bivariate moment closes the Λ recursion's last-layer term: the
/// curvature of the incoming preactivation paired with the activation value
/// (`SecondValue`) or with its slope (`SecondSlope`). The two candidates are
/// adjudicated by the finite-width oracle; `SecondValue` wins and is the
/// default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaVariant {
    SecondValue,
    SecondSlope,
}

pub const DEFAULT_LAMBDA_VARIANT: LambdaVariant = LambdaVariant::SecondValue;

/// All derived kernels that need the mixed moment tables, computed in one
/// pass over the layers so the quadrature work is shared.
#[derive(Debug, Clone)]
pub struct DerivedKernels {
    pub upsilon: Mat,
    pub xi: Mat,
    pub phi: Mat,
    pub lambda: Mat,
}

/// Runs the coupled Ξ/Φ/Λ layer recursions (Υ comes along for free).
pub fn derive_kernels(stack: &KernelStack, variant: LambdaVariant) -> Result<DerivedKernels> {
    let n = stack.n();
    let nl = &stack.nl;
    let rule = &stack.rule;
    let mut xi = Mat::zeros(n, n);
    let mut phi = Mat::zeros(n, n);
    let mut lambda = Mat::zeros(n, n);

    for layer in 1..stack.depth {
        let sig = stack.sigma_layer(layer);
        let theta = stack.theta_layer(layer);
        let sdot = stack.sigma_dot_layer(layer + 1);
        let sddot = stack.sigma_ddot_layer(layer + 1);
        // Mixed moments over the layer law; row index carries the first
        // derivative order, so m_curv_val[(i, j)] = E[σ̈(a_i) σ(a_j)].
        let m_curv_val = moment_table(sig, nl, 2, 0, rule, false)?;
        let m_third_slope = moment_table(sig, nl, 3, 1, rule, false)?;
        let m_curv_slope = match variant {
            LambdaVariant::SecondSlope => Some(moment_table(sig, nl, 2, 1, rule, false)?),
            LambdaVariant::SecondValue => None,
        };

        let next_phi = Mat::from_fn(n, n, |i, j| {
            phi[(i, j)] * sdot[(i, j)] + (phi[(i, i)] + theta[(i, i)]) * m_curv_val[(i, j)]
        });
        let next_xi = Mat::from_fn(n, n, |i, j| {
            // E[σ̇(a_i) σ⃛(a_j)] is the transpose of the (3,1) table.
            let slope_third_ij = m_third_slope[(j, i)];
            let third_slope_ij = m_third_slope[(i, j)];
            xi[(i, j)] * sdot[(i, j)]
                + (phi[(i, j)] * phi[(j, i)] + phi[(i, i)] * phi[(j, j)]) * sddot[(i, j)]
                + phi[(i, j)] * phi[(j, j)] * slope_third_ij
                + phi[(i, i)] * phi[(j, i)] * third_slope_ij
                + theta[(j, j)] * (phi[(i, i)] * sddot[(i, j)] + phi[(i, j)] * slope_third_ij)
                + theta[(i, i)] * (phi[(j, j)] * sddot[(i, j)] + phi[(j, i)] * third_slope_ij)
                + theta[(i, i)] * theta[(j, j)] * sddot[(i, j)]
        });
        let next_lambda = Mat::from_fn(n, n, |i, j| {
            let tail = match (variant, &m_curv_slope) {
                (LambdaVariant::SecondValue, _) => m_curv_val[(i, j)],
                (LambdaVariant::SecondSlope, Some(tab)) => tab[(i, j)],
                _ => unreachable!(),
            };
            lambda[(i, j)] * sdot[(i, j)]
                + theta[(i, j)]
                    * (phi[(i, j)] * sddot[(i, j)] + phi[(i, i)] * m_third_slope[(i, j)])
                + phi[(i, j)] * sdot[(i, j)]
                + phi[(i, i)] * m_curv_val[(i, j)]
                + theta[(i, i)] * theta[(i, j)] * m_third_slope[(i, j)]
                + theta[(i, i)] * tail
        });
        xi = next_xi;
        phi = next_phi;
        lambda = next_lambda;
    }
    Ok(DerivedKernels { upsilon: upsilon_kernel(stack), xi, phi, lambda })
}

/// Initialization covariance of the parameter Laplacian g (symmetric `xi`)
/// and its cross-covariance with the output (non-symmetric `phi`).
pub fn source_kernels(stack: &KernelStack) -> Result<(Mat, Mat)> {
    let derived = derive_kernels(stack, DEFAULT_LAMBDA_VARIANT)?;
    Ok((derived.xi, derived.phi))
}

/// Training-time kernel of g. Non-symmetric: `lambda[(i, j)]` couples the
/// g-evaluation point `x_i` to the loss gradient at the training point `x_j`.
pub fn lambda_kernel(stack: &KernelStack, variant: LambdaVariant) -> Result<Mat> {
    Ok(derive_kernels(stack, variant)?.lambda)
}

/// Gram matrix with Kronecker output blocks: entry ((i,k),(j,m)) is
/// `table[(i,j)] δ_{km}` under the `(i,k) -> i*n_out + k` index layout.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub mat: Mat,
    pub n_out: usize,
    pub symmetric: bool,
}

pub fn gram(table: &Mat, n_out: usize) -> Result<GramMatrix> {
    if n_out < 1 {
        return Err(Error::Config("gram output multiplicity must be >= 1".into()));
    }
    if !table.is_square() {
        return Err(Error::Config("gram needs a square kernel table".into()));
    }
    let n = table.rows;
    let dim = n * n_out;
    let mut mat = Mat::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            let v = table[(i, j)];
            for k in 0..n_out {
                mat[(i * n_out + k, j * n_out + k)] = v;
            }
        }
    }
    let symmetric = table.asymmetry() <= 1e-12 * table.max_abs().max(1.0);
    Ok(GramMatrix { mat, n_out, symmetric })
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.mat.rows
    }
}
