//! Symmetric eigendecomposition and the matrix functions built on it:
//! `e^{-tA}`, regularized (pseudo) inverse, and weighted kernel PCA. The
//! eigensolver is a cyclic Jacobi sweep, which is plenty at desk scale
//! (dimensions up to the low thousands) and keeps the crate dependency-free.

use crate::linalg::{dot, normalize, Mat};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Eigendecomposition of a symmetric matrix: descending eigenvalues and the
/// matching orthonormal eigenvectors as matrix columns.
#[derive(Debug, Clone)]
pub struct EigDecomp {
    pub values: Vec<f64>,
    /// Column j is the eigenvector for `values[j]`.
    pub vectors: Mat,
}

impl EigDecomp {
    /// Reassembles `V f(Λ) V^T`.
    pub fn map_rebuild(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.values.len();
        let mut out = Mat::zeros(n, n);
        for j in 0..n {
            let fv = f(self.values[j]);
            if fv == 0.0 {
                continue;
            }
            for r in 0..n {
                let vr = self.vectors[(r, j)];
                if vr == 0.0 {
                    continue;
                }
                for c in 0..n {
                    out[(r, c)] += fv * vr * self.vectors[(c, j)];
                }
            }
        }
        out
    }
}

const SYMMETRY_TOL: f64 = 1e-10;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eig(a: &Mat) -> Result<EigDecomp> {
    if !a.is_square() {
        return Err(Error::Domain("sym_eig needs a square matrix".into()));
    }
    let n = a.rows;
    let scale = a.max_abs().max(1.0);
    if a.asymmetry() > SYMMETRY_TOL * scale {
        return Err(Error::Domain(format!(
            "matrix asymmetry {:.3e} exceeds tolerance",
            a.asymmetry()
        )));
    }
    let mut m = a.clone();
    m.symmetrize();
    let mut v = Mat::identity(n);

    let frob = m.frob_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-14 * frob {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                let app = m[(p, p)];
                let aqq = m[(q, q)];
                m[(p, p)] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                m[(q, q)] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = m[(i, p)];
                        let aiq = m[(i, q)];
                        m[(i, p)] = c * aip - s * aiq;
                        m[(p, i)] = m[(i, p)];
                        m[(i, q)] = s * aip + c * aiq;
                        m[(q, i)] = m[(i, q)];
                    }
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
    }

    // Sort descending, carrying eigenvector columns along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, new_col)] = v[(r, old_col)];
        }
    }
    Ok(EigDecomp { values, vectors })
}

/// `e^{-tA}` for symmetric `A` and `t >= 0`, via the eigendecomposition.
pub fn expm_scaled(a: &Mat, t: f64) -> Result<Mat> {
    if t < 0.0 {
        return Err(Error::Domain(format!("expm_scaled needs t >= 0, got {t}")));
    }
    let eig = sym_eig(a)?;
    Ok(eig.map_rebuild(|lam| (-t * lam).exp()))
}

/// Spectral pseudo-inverse: eigenvalues at or below `rel_cutoff * λ_max`
/// become zero instead of being inverted.
pub fn reg_inverse(a: &Mat, rel_cutoff: f64) -> Result<Mat> {
    let eig = sym_eig(a)?;
    let lam_max = eig.values.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = rel_cutoff * lam_max;
    Ok(eig.map_rebuild(|lam| if lam > cutoff && lam > 0.0 { 1.0 / lam } else { 0.0 }))
}

/// Default eigenvalue cutoff for [`reg_inverse`].
pub const DEFAULT_REL_CUTOFF: f64 = 1e-10;

/// Spectrum of the weighted Gram `W^{1/2} K W^{1/2}` for a nonnegative
/// diagonal weight vector; with unit weights this is plain kernel PCA of `K`.
pub fn kernel_pca(gram: &Mat, weights: Option<&[f64]>) -> Result<EigDecomp> {
    match weights {
        None => sym_eig(gram),
        Some(w) => {
            if w.len() != gram.rows {
                return Err(Error::Domain(format!(
                    "weight vector length {} does not match gram dimension {}",
                    w.len(),
                    gram.rows
                )));
            }
            if let Some(bad) = w.iter().find(|&&x| x < 0.0) {
                return Err(Error::Domain(format!("negative kernel PCA weight {bad}")));
            }
            let sq: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
            let weighted =
                Mat::from_fn(gram.rows, gram.cols, |i, j| sq[i] * gram[(i, j)] * sq[j]);
            sym_eig(&weighted)
        }
    }
}

/// Anything that acts like a symmetric linear operator. Lets the eigen
/// utilities run matrix-free on operators too large to materialize.
pub trait SymOp {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

impl SymOp for Mat {
    fn dim(&self) -> usize {
        self.rows
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matvec(v)
    }
}

/// Block subspace iteration with a final Rayleigh-Ritz rotation. Returns the
/// `m` Ritz pairs that dominate in magnitude, sorted by descending Ritz value.
pub fn top_eigenpairs(
    op: &dyn SymOp,
    m: usize,
    iters: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = op.dim();
    let m = m.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
        .collect();
    orthonormalize(&mut basis);

    for _ in 0..iters {
        let mut next: Vec<Vec<f64>> = basis.iter().map(|v| op.apply(v)).collect();
        orthonormalize(&mut next);
        basis = next;
    }

    // Rayleigh-Ritz on the converged subspace.
    let images: Vec<Vec<f64>> = basis.iter().map(|v| op.apply(v)).collect();
    let mut small = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            small[(i, j)] = dot(&basis[i], &images[j]);
        }
    }
    small.symmetrize();
    let eig = sym_eig(&small)?;

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        eig.values[j]
            .abs()
            .partial_cmp(&eig.values[i].abs())
            .unwrap()
    });
    let mut values = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    for &k in &order {
        values.push(eig.values[k]);
        let mut v = vec![0.0; n];
        for (i, b) in basis.iter().enumerate() {
            crate::linalg::axpy(&mut v, eig.vectors[(i, k)], b);
        }
        vectors.push(v);
    }
    // Present in descending Ritz-value order.
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap());
    let values_sorted: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    let vectors_sorted: Vec<Vec<f64>> = idx.iter().map(|&i| vectors[i].clone()).collect();
    Ok((values_sorted, vectors_sorted))
}

/// Operator norm of a symmetric operator by subspace iteration (largest |λ|).
pub fn op_norm_sym(op: &dyn SymOp, iters: usize, seed: u64) -> Result<f64> {
    let (values, _) = top_eigenpairs(op, 2.min(op.dim()), iters, seed)?;
    Ok(values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

fn orthonormalize(vs: &mut [Vec<f64>]) {
    for i in 0..vs.len() {
        for j in 0..i {
            let proj = dot(&vs[i], &vs[j]);
            let (left, right) = vs.split_at_mut(i);
            crate::linalg::axpy(&mut right[0], -proj, &left[j]);
        }
        normalize(&mut vs[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_sym(n: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Mat::from_fn(n, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        a.symmetrize();
        a
    }

    /// Characteristic-polynomial root oracle for small symmetric matrices.
    /// Coefficients from Newton's identities on the power traces, roots by
    /// sign-change scan plus bisection inside the Gershgorin disc.
    fn charpoly_eigenvalues(a: &Mat) -> Vec<f64> {
        let n = a.rows;
        assert!(n <= 4);
        let p = a.power_traces(n);
        // Elementary symmetric polynomials e1..en.
        let mut e = vec![0.0f64; n + 1];
        e[0] = 1.0;
        for k in 1..=n {
            let mut s = 0.0;
            for i in 1..=k {
                let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
                s += sign * e[k - i] * p[i - 1];
            }
            e[k] = s / k as f64;
        }
        // charpoly(λ) = Σ_k (-1)^k e_k λ^{n-k}
        let poly = |lam: f64| -> f64 {
            let mut acc = 0.0;
            for k in 0..=n {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * e[k] * lam.powi((n - k) as i32);
            }
            acc
        };
        let radius = (0..n)
            .map(|i| (0..n).map(|j| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0f64, f64::max)
            + 1.0;
        let grid = 40_000;
        let mut roots = Vec::new();
        let mut prev_x = -radius;
        let mut prev_f = poly(prev_x);
        for g in 1..=grid {
            let x = -radius + 2.0 * radius * g as f64 / grid as f64;
            let f = poly(x);
            if prev_f == 0.0 {
                roots.push(prev_x);
            } else if prev_f * f < 0.0 {
                let (mut lo, mut hi) = (prev_x, x);
                let (mut flo, _) = (prev_f, f);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let fm = poly(mid);
                    if flo * fm <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                        flo = fm;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev_x = x;
            prev_f = f;
        }
        roots.sort_by(|x, y| y.partial_cmp(x).unwrap());
        roots
    }

    #[test]
    fn identity_eigenvalues_are_one() {
        let eig = sym_eig(&Mat::identity(5)).unwrap();
        for v in eig.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_matrix_sorted_descending() {
        let mut a = Mat::zeros(3, 3);
        a[(0, 0)] = 3.0;
        a[(1, 1)] = 1.0;
        a[(2, 2)] = 2.0;
        let eig = sym_eig(&a).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-12);
        assert!((eig.values[1] - 2.0).abs() < 1e-12);
        assert!((eig.values[2] - 1.0).abs() < 1e-12);
        // Basis is a permutation of the canonical one.
        assert!((eig.vectors[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((eig.vectors[(2, 1)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        let a = random_sym(8, 7);
        let eig = sym_eig(&a).unwrap();
        let rebuilt = eig.map_rebuild(|x| x);
        assert!(rebuilt.sub(&a).frob_norm() / a.frob_norm() < 1e-10);
        let vtv = eig.vectors.transpose().matmul(&eig.vectors);
        assert!(vtv.sub(&Mat::identity(8)).frob_norm() < 1e-10);
    }

    #[test]
    fn gram_matrix_is_psd_and_matches_charpoly_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // PSD check on a 6x6 Gram.
        let b = Mat::from_fn(6, 6, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let gram = b.matmul(&b.transpose());
        let eig = sym_eig(&gram).unwrap();
        for v in &eig.values {
            assert!(*v >= -1e-10);
        }
        // Char-poly oracle comparison at sizes 2..=4.
        for n in 2..=4usize {
            let a = random_sym(n, 100 + n as u64);
            let ours = sym_eig(&a).unwrap().values;
            let oracle = charpoly_eigenvalues(&a);
            assert_eq!(oracle.len(), n, "oracle found {} roots at n={n}", oracle.len());
            for (x, y) in ours.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-8, "eig {x} vs charpoly {y}");
            }
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        let mut a = Mat::identity(3);
        a[(0, 1)] = 1e-3;
        match sym_eig(&a) {
            Err(crate::Error::Domain(_)) => {}
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn expm_basics() {
        assert!(expm_scaled(&Mat::identity(3), 0.0)
            .unwrap()
            .sub(&Mat::identity(3))
            .frob_norm()
            < 1e-12);
        let a = Mat::from_rows(&[vec![1.0]]);
        let e = expm_scaled(&a, 1.0).unwrap();
        assert!((e[(0, 0)] - (-1.0f64).exp()).abs() < 1e-12);
        assert!(expm_scaled(&a, -0.5).is_err());
    }

    #[test]
    fn expm_matches_taylor_oracle() {
        // 8th-order Taylor with scaling and squaring as an independent oracle.
        fn expm_taylor(a: &Mat, t: f64) -> Mat {
            let n = a.rows;
            let m = a.scale(-t);
            let norm = m.frob_norm();
            let squarings = (norm.log2().ceil().max(0.0) as u32) + 4;
            let small = m.scale(1.0 / f64::powi(2.0, squarings as i32));
            let mut sum = Mat::identity(n);
            let mut term = Mat::identity(n);
            for k in 1..=8 {
                term = term.matmul(&small).scale(1.0 / k as f64);
                sum = sum.add(&term);
            }
            for _ in 0..squarings {
                sum = sum.matmul(&sum);
            }
            sum
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Mat::from_fn(4, 4, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let spd = b.matmul(&b.transpose()).add(&Mat::identity(4).scale(0.1));
        let ours = expm_scaled(&spd, 0.5).unwrap();
        let oracle = expm_taylor(&spd, 0.5);
        assert!(ours.sub(&oracle).frob_norm() < 1e-9);
    }

    #[test]
    fn expm_semigroup_property() {
        let a = random_sym(5, 21).matmul(&random_sym(5, 21).transpose());
        let e_st = expm_scaled(&a, 0.7).unwrap();
        let e_s = expm_scaled(&a, 0.3).unwrap();
        let e_t = expm_scaled(&a, 0.4).unwrap();
        assert!(e_s.matmul(&e_t).sub(&e_st).frob_norm() < 1e-9);
    }

    #[test]
    fn reg_inverse_behaviour() {
        let id = Mat::identity(4);
        assert!(reg_inverse(&id, 1e-10).unwrap().sub(&id).frob_norm() < 1e-12);

        let mut d = Mat::zeros(2, 2);
        d[(0, 0)] = 2.0;
        let pinv = reg_inverse(&d, 1e-10).unwrap();
        assert!((pinv[(0, 0)] - 0.5).abs() < 1e-12);
        assert!(pinv[(1, 1)].abs() < 1e-12);

        // Pseudo-inverse defining identity A A+ A = A on a PSD Gram.
        let b = random_sym(4, 5);
        let a = b.matmul(&b.transpose());
        let ainv = reg_inverse(&a, 1e-10).unwrap();
        let back = a.matmul(&ainv).matmul(&a);
        assert!(back.sub(&a).frob_norm() < 1e-8);
    }

    #[test]
    fn kernel_pca_weight_scaling() {
        let b = random_sym(5, 9);
        let k = b.matmul(&b.transpose());
        let plain = kernel_pca(&k, None).unwrap();
        let unit = kernel_pca(&k, Some(&vec![1.0; 5])).unwrap();
        for (a, b) in plain.values.iter().zip(&unit.values) {
            assert!((a - b).abs() < 1e-10);
        }
        // Uniform weight c scales the spectrum by c and keeps eigenvectors.
        let c = 0.37;
        let scaled = kernel_pca(&k, Some(&vec![c; 5])).unwrap();
        for (s, p) in scaled.values.iter().zip(&plain.values) {
            assert!((s - c * p).abs() < 1e-10);
        }
        for j in 0..5 {
            let col_dot: f64 =
                (0..5).map(|r| scaled.vectors[(r, j)] * plain.vectors[(r, j)]).sum();
            assert!((col_dot.abs() - 1.0).abs() < 1e-8, "eigenvector set changed");
        }
        // All-zero weights give a zero spectrum.
        let zero = kernel_pca(&k, Some(&vec![0.0; 5])).unwrap();
        for v in zero.values {
            assert!(v.abs() < 1e-12);
        }
        assert!(kernel_pca(&k, Some(&vec![-1.0; 5])).is_err());
    }

    #[test]
    fn subspace_iteration_finds_dominant_pairs() {
        let b = random_sym(12, 31);
        let a = b.matmul(&b.transpose());
        let exact = sym_eig(&a).unwrap();
        let (vals, vecs) = top_eigenpairs(&a, 3, 200, 1).unwrap();
        for i in 0..3 {
            assert!((vals[i] - exact.values[i]).abs() < 1e-8 * exact.values[0]);
            let rq = dot(&vecs[i], &a.matvec(&vecs[i]));
            assert!((rq - exact.values[i]).abs() < 1e-8 * exact.values[0]);
        }
        let opn = op_norm_sym(&a, 200, 2).unwrap();
        assert!((opn - exact.values[0]).abs() < 1e-8 * exact.values[0]);
    }
}
