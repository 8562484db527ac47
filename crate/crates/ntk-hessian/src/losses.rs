//! Loss functionals `C(Y) = (1/N) sum_i c_i(Y_i)` over the training outputs,
//! with analytic gradient and Hessian, plus the uniform gradient bounds that
//! make the cross-entropy losses safe for long training horizons.
//!
//! Output vectors are indexed `(example i, output k) -> i * n_out + k`,
//! matching the Gram-matrix block convention.

use crate::linalg::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    BinaryCe,
    SoftmaxCe,
}

/// Labels, one variant per loss kind.
#[derive(Debug, Clone)]
pub enum Targets {
    /// Regression targets, length `N * n_out`.
    Real(Vec<f64>),
    /// ±1 class labels, one per example.
    PlusMinus(Vec<i8>),
    /// Class indices in `0..c`, one per example.
    Classes(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct LossSpec {
    pub kind: LossKind,
    pub n: usize,
    pub n_out: usize,
    pub targets: Targets,
}

impl LossSpec {
    pub fn mse(n: usize, n_out: usize, ystar: Vec<f64>) -> Result<LossSpec> {
        if ystar.len() != n * n_out {
            return Err(Error::Config(format!(
                "mse targets have length {}, expected {}",
                ystar.len(),
                n * n_out
            )));
        }
        Ok(LossSpec { kind: LossKind::Mse, n, n_out, targets: Targets::Real(ystar) })
    }

    /// Binary cross-entropy in the ±1 label convention,
    /// `C(Y) = (1/N) sum_i log(1 + e^{-Y*_i Y_i})`; requires a single output.
    pub fn binary_ce(n: usize, labels: Vec<i8>) -> Result<LossSpec> {
        if labels.len() != n {
            return Err(Error::Config(format!(
                "binary labels have length {}, expected {n}",
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l != 1 && l != -1) {
            return Err(Error::Config("binary labels must be ±1".into()));
        }
        Ok(LossSpec { kind: LossKind::BinaryCe, n, n_out: 1, targets: Targets::PlusMinus(labels) })
    }

    pub fn softmax_ce(n: usize, classes: usize, labels: Vec<usize>) -> Result<LossSpec> {
        if classes < 2 {
            return Err(Error::Config("softmax needs at least 2 classes".into()));
        }
        if labels.len() != n {
            return Err(Error::Config(format!(
                "class labels have length {}, expected {n}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Config(format!("class label {bad} out of range 0..{classes}")));
        }
        Ok(LossSpec {
            kind: LossKind::SoftmaxCe,
            n,
            n_out: classes,
            targets: Targets::Classes(labels),
        })
    }

    pub fn dim(&self) -> usize {
        self.n * self.n_out
    }

    /// The regression targets as a flat vector (MSE only).
    pub fn ystar(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Real(y) => Some(y),
            _ => None,
        }
    }

    fn check_shape(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::Config(format!(
                "output vector has length {}, expected {}",
                y.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log1p_exp(x: f64) -> f64 {
    // log(1 + e^x), stable on both tails.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn loss_value(spec: &LossSpec, y: &[f64]) -> Result<f64> {
    spec.check_shape(y)?;
    let n = spec.n as f64;
    match (&spec.kind, &spec.targets) {
        (LossKind::Mse, Targets::Real(ystar)) => {
            let ss: f64 = y.iter().zip(ystar).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(ss / (2.0 * n))
        }
        (LossKind::BinaryCe, Targets::PlusMinus(labels)) => {
            let s: f64 = y
                .iter()
                .zip(labels)
                .map(|(&yi, &li)| log1p_exp(-(li as f64) * yi))
                .sum();
            Ok(s / n)
        }
        (LossKind::SoftmaxCe, Targets::Classes(labels)) => {
            let c = spec.n_out;
            let mut acc = 0.0;
            for (i, &label) in labels.iter().enumerate() {
                let row = &y[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                acc += lse - row[label];
            }
            Ok(acc / n)
        }
        _ => unreachable!("targets always match kind by construction"),
    }
}

pub fn loss_grad(spec: &LossSpec, y: &[f64]) -> Result<Vec<f64>> {
    spec.check_shape(y)?;
    let n = spec.n as f64;
    match (&spec.kind, &spec.targets) {
        (LossKind::Mse, Targets::Real(ystar)) => {
            Ok(y.iter().zip(ystar).map(|(a, b)| (a - b) / n).collect())
        }
        (LossKind::BinaryCe, Targets::PlusMinus(labels)) => Ok(y
            .iter()
            .zip(labels)
            .map(|(&yi, &li)| {
                let a = li as f64;
                -a * sigmoid(-a * yi) / n
            })
            .collect()),
        (LossKind::SoftmaxCe, Targets::Classes(labels)) => {
            let c = spec.n_out;
            let mut grad = vec![0.0; y.len()];
            for (i, &label) in labels.iter().enumerate() {
                let row = &y[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                for k in 0..c {
                    let p = (row[k] - max).exp() / z;
                    grad[i * c + k] = (p - if k == label { 1.0 } else { 0.0 }) / n;
                }
            }
            Ok(grad)
        }
        _ => unreachable!(),
    }
}

/// The Hessian of the restricted loss as a dense `Nn_out x Nn_out` matrix
/// (diagonal for MSE and binary CE, block diagonal per example for softmax).
pub fn loss_hess(spec: &LossSpec, y: &[f64]) -> Result<Mat> {
    spec.check_shape(y)?;
    let n = spec.n as f64;
    let dim = spec.dim();
    let mut h = Mat::zeros(dim, dim);
    match (&spec.kind, &spec.targets) {
        (LossKind::Mse, Targets::Real(_)) => {
            for i in 0..dim {
                h[(i, i)] = 1.0 / n;
            }
        }
        (LossKind::BinaryCe, Targets::PlusMinus(_)) => {
            // c''(y) = s(y)(1 - s(y)) independent of the label; approaches
            // 1/4 at the decision boundary and 0 for saturated outputs.
            for (i, &yi) in y.iter().enumerate() {
                let s = sigmoid(yi);
                h[(i, i)] = s * (1.0 - s) / n;
            }
        }
        (LossKind::SoftmaxCe, Targets::Classes(_)) => {
            let c = spec.n_out;
            for i in 0..spec.n {
                let row = &y[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let p: Vec<f64> = row.iter().map(|v| (v - max).exp() / z).collect();
                for k in 0..c {
                    for m in 0..c {
                        let delta = if k == m { p[k] } else { 0.0 };
                        h[(i * c + k, i * c + m)] = (delta - p[k] * p[m]) / n;
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(h)
}

/// Margin statistics from checking the uniform cross-entropy gradient bound
/// over a batch of output vectors.
#[derive(Debug, Clone)]
pub struct BgossReport {
    /// The uniform bound: `1/sqrt(N)` for binary CE, `sqrt(2c)/sqrt(N)` for
    /// softmax CE.
    pub bound: f64,
    pub max_norm: f64,
    pub mean_norm: f64,
    pub violations: usize,
}

/// Checks `||∇C(Y)||_2 <= bound` for every sample; only cross-entropy kinds
/// carry a loss-independent bound.
pub fn bgoss_bound_check(spec: &LossSpec, samples: &[Vec<f64>]) -> Result<BgossReport> {
    let bound = match spec.kind {
        LossKind::BinaryCe => 1.0 / (spec.n as f64).sqrt(),
        LossKind::SoftmaxCe => (2.0 * spec.n_out as f64).sqrt() / (spec.n as f64).sqrt(),
        LossKind::Mse => {
            return Err(Error::Config(
                "bgoss_bound_check: MSE gradients are bounded per sublevel set, not uniformly"
                    .into(),
            ))
        }
    };
    let mut max_norm = 0.0f64;
    let mut sum = 0.0;
    let mut violations = 0;
    for y in samples {
        let g = loss_grad(spec, y)?;
        let norm = crate::linalg::norm2(&g);
        max_norm = max_norm.max(norm);
        sum += norm;
        if norm > bound {
            violations += 1;
        }
    }
    Ok(BgossReport {
        bound,
        max_norm,
        mean_norm: if samples.is_empty() { 0.0 } else { sum / samples.len() as f64 },
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
        (0..len).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect()
    }

    fn specs_for_fd() -> Vec<LossSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        vec![
            LossSpec::mse(4, 2, random_vec(&mut rng, 8, 1.0)).unwrap(),
            LossSpec::binary_ce(6, vec![1, -1, 1, 1, -1, -1]).unwrap(),
            LossSpec::softmax_ce(3, 4, vec![0, 3, 1]).unwrap(),
        ]
    }

    #[test]
    fn mse_minimum_is_flat_zero() {
        let ystar = vec![0.3, -1.2, 0.0, 2.5];
        let spec = LossSpec::mse(2, 2, ystar.clone()).unwrap();
        assert_eq!(loss_value(&spec, &ystar).unwrap(), 0.0);
        assert!(loss_grad(&spec, &ystar).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_gradient_norm_identity() {
        // ||∇C||^2 = (1/N^2)||Y - Y*||^2 = 2 C(Y) / N for the 1/(2N) MSE.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = LossSpec::mse(5, 1, random_vec(&mut rng, 5, 2.0)).unwrap();
        let y = random_vec(&mut rng, 5, 2.0);
        let g = loss_grad(&spec, &y).unwrap();
        let lhs = crate::linalg::dot(&g, &g);
        let rhs = 2.0 * loss_value(&spec, &y).unwrap() / 5.0;
        assert!((lhs - rhs).abs() < 1e-14 * rhs.max(1e-14));
    }

    #[test]
    fn mse_hessian_is_identity_over_n() {
        let spec = LossSpec::mse(4, 1, vec![0.0; 4]).unwrap();
        let h = loss_hess(&spec, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 / 4.0 } else { 0.0 };
                assert_eq!(h[(i, j)], expect);
            }
        }
    }

    #[test]
    fn binary_ce_hessian_at_zero_output() {
        // c''(0) = 1/4 exactly (sigmoid variance at the decision boundary).
        let spec = LossSpec::binary_ce(8, vec![1; 8]).unwrap();
        let h = loss_hess(&spec, &vec![0.0; 8]).unwrap();
        for i in 0..8 {
            assert!((h[(i, i)] - 1.0 / 32.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let h = 1e-6;
        for spec in specs_for_fd() {
            for _ in 0..100 {
                let y = random_vec(&mut rng, spec.dim(), 3.0);
                let g = loss_grad(&spec, &y).unwrap();
                for j in 0..y.len() {
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[j] += h;
                    ym[j] -= h;
                    let fd =
                        (loss_value(&spec, &yp).unwrap() - loss_value(&spec, &ym).unwrap())
                            / (2.0 * h);
                    let err = (g[j] - fd).abs() / (1.0 + g[j].abs());
                    assert!(err < 1e-6, "{:?} coord {j}: {} vs fd {}", spec.kind, g[j], fd);
                }
            }
        }
    }

    #[test]
    fn hessians_match_finite_differences_of_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = 1e-5;
        for spec in specs_for_fd() {
            for _ in 0..10 {
                let y = random_vec(&mut rng, spec.dim(), 3.0);
                let hess = loss_hess(&spec, &y).unwrap();
                assert!(hess.asymmetry() < 1e-12);
                for j in 0..y.len() {
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[j] += h;
                    ym[j] -= h;
                    let gp = loss_grad(&spec, &yp).unwrap();
                    let gm = loss_grad(&spec, &ym).unwrap();
                    for i in 0..y.len() {
                        let fd = (gp[i] - gm[i]) / (2.0 * h);
                        let err = (hess[(i, j)] - fd).abs() / (1.0 + hess[(i, j)].abs());
                        assert!(
                            err < 1e-5,
                            "{:?} entry ({i},{j}): {} vs fd {}",
                            spec.kind,
                            hess[(i, j)],
                            fd
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hessians_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for spec in specs_for_fd() {
            let y = random_vec(&mut rng, spec.dim(), 2.0);
            let hess = loss_hess(&spec, &y).unwrap();
            let eig = crate::spectral::sym_eig(&hess).unwrap();
            let lam_max = eig.values[0].max(1e-12);
            for v in &eig.values {
                assert!(*v >= -1e-12 * lam_max, "{:?} eigenvalue {v}", spec.kind);
            }
        }
    }

    #[test]
    fn cross_entropy_gradient_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let n = 16;
        let bspec =
            LossSpec::binary_ce(n, (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect())
                .unwrap();
        let sspec = LossSpec::softmax_ce(n, 10, (0..n).map(|i| i % 10).collect()).unwrap();
        for spec in [bspec, sspec] {
            let samples: Vec<Vec<f64>> =
                (0..10_000).map(|_| random_vec(&mut rng, spec.dim(), 9.0)).collect();
            let report = bgoss_bound_check(&spec, &samples).unwrap();
            assert_eq!(report.violations, 0, "{:?}: {report:?}", spec.kind);
            assert!(report.max_norm <= report.bound);
        }
    }

    #[test]
    fn saturated_binary_ce_gradient_vanishes() {
        let spec = LossSpec::binary_ce(4, vec![1; 4]).unwrap();
        let g = loss_grad(&spec, &vec![40.0; 4]).unwrap();
        for gi in g {
            assert!(gi.abs() < 1e-17);
        }
    }

    #[test]
    fn mse_is_unsupported_for_bgoss() {
        let spec = LossSpec::mse(2, 1, vec![0.0, 0.0]).unwrap();
        match bgoss_bound_check(&spec, &[vec![1.0, 1.0]]) {
            Err(crate::Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let spec = LossSpec::mse(2, 1, vec![0.0, 0.0]).unwrap();
        assert!(loss_value(&spec, &[1.0]).is_err());
        assert!(LossSpec::binary_ce(2, vec![2, 1]).is_err());
        assert!(LossSpec::softmax_ce(2, 3, vec![0, 3]).is_err());
    }
}
