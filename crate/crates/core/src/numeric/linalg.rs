//! Singular value decomposition and Givens-rotation products.

use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `a = u · diag(singular_values) · v` with `k = min(m, p)`.
///
/// `u` is `m×k`, `v` is `k×p` (rows are right singular vectors). The full
/// `p×p` orthogonal right basis is kept as well because feature rotations need
/// every direction, including the null space of a short data matrix.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Tensor,
    pub singular_values: Vec<f64>,
    pub v: Tensor,
    right_basis: Tensor,
}

impl SvdResult {
    /// All `p` right singular directions as rows, sorted by singular value.
    pub fn right_basis(&self) -> &Tensor {
        &self.right_basis
    }

    pub fn reconstruct(&self) -> Tensor {
        let k = self.singular_values.len();
        let m = self.u.rows();
        let mut us = self.u.clone();
        for i in 0..m {
            for (j, s) in self.singular_values.iter().enumerate().take(k) {
                let v = us.get(i, j) * s;
                us.set(i, j, v);
            }
        }
        us.matmul(&self.v).expect("svd factors are conformable")
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Singular values come out non-increasing; each left singular vector is
/// signed so that its first non-negligible entry is non-negative.
pub fn svd(a: &Tensor) -> Result<SvdResult> {
    let (m, p) = a.dims2("svd")?;
    if !a.all_finite() {
        return Err(Error::Numeric(format!("svd of {m}x{p} matrix with non-finite entries")));
    }
    let rows = m;
    // column-major working copy; zero padding rows would stay zero, so none are stored
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| (0..rows).map(|i| a.get(i, j)).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            e
        })
        .collect();

    let eps = 1e-15;
    // columns below this norm are numerically zero and are left alone
    let null_tol = 1e-12 * a.frobenius_norm();
    let floor = null_tol * null_tol;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..p {
            for j in (i + 1)..p {
                let (alpha, beta, gamma) = {
                    let (ci, cj) = (&cols[i], &cols[j]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for (x, y) in ci.iter().zip(cj) {
                        al += x * x;
                        be += y * y;
                        ga += x * y;
                    }
                    (al, be, ga)
                };
                if alpha <= floor || beta <= floor || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, i, j, c, s);
                rotate_pair(&mut vcols, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!("svd of {m}x{p} matrix did not converge in {MAX_SWEEPS} sweeps")));
    }

    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let k = m.min(p);
    let tol = null_tol.max(f64::MIN_POSITIVE);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut sv = Vec::with_capacity(k);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().take(k).enumerate() {
        let s = norms[j];
        if s > tol {
            u_cols.push(cols[j].iter().map(|x| x / s).collect());
            sv.push(s);
        } else {
            u_cols.push(vec![0.0; m]);
            sv.push(0.0);
            missing.push(slot);
        }
    }
    complete_orthonormal(&mut u_cols, &missing, m);

    let mut basis_rows: Vec<Vec<f64>> = order.iter().map(|&j| vcols[j].clone()).collect();
    for (j, u) in u_cols.iter_mut().enumerate() {
        let lead = u.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(0.0);
        if lead < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
            basis_rows[j].iter_mut().for_each(|x| *x = -*x);
        }
    }

    let mut u = Tensor::zeros(&[m, k]);
    for (j, col) in u_cols.iter().enumerate() {
        for (i, x) in col.iter().enumerate() {
            u.set(i, j, *x);
        }
    }
    let v = Tensor::from_parts(vec![k, p], basis_rows[..k].concat());
    let right_basis = Tensor::from_parts(vec![p, p], basis_rows.concat());
    Ok(SvdResult {
        u,
        singular_values: sv,
        v,
        right_basis,
    })
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (ci, cj) = (&mut lo[i], &mut hi[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to all others
/// using Gram-Schmidt against the standard basis.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize], dim: usize) {
    let mut candidate = 0;
    for &slot in missing {
        while candidate < dim {
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (j, c) in cols.iter().enumerate() {
                    if j == slot || (missing.contains(&j) && c.iter().all(|x| *x == 0.0)) {
                        continue;
                    }
                    let d: f64 = c.iter().zip(&e).map(|(a, b)| a * b).sum();
                    e.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
                }
            }
            let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-8 {
                cols[slot] = e.into_iter().map(|x| x / n).collect();
                break;
            }
        }
    }
}

/// `R(θ) = basisᵀ · G(θ) · basis`, where `G` rotates each mirrored axis pair
/// `(i, p-1-i)` for `i < ⌊p/2⌋` by `θ`. For odd `p` the middle axis is fixed.
///
/// Each planar block is `[[cos θ, -sin θ], [sin θ, cos θ]]` on `(i, p-1-i)`.
pub fn givens_product(theta: f64, p: usize, basis: &Tensor) -> Result<Tensor> {
    let (r, c) = basis.dims2("givens_product")?;
    if r != p || c != p {
        return Err(Error::Dimension {
            op: "givens_product",
            left: vec![p, p],
            right: basis.shape().to_vec(),
        });
    }
    let gram = basis.transpose()?.matmul(basis)?;
    let dev = gram.sub(&Tensor::eye(p))?.max_abs();
    if dev > 1e-8 {
        return Err(Error::Precondition(format!(
            "rotation basis is not orthogonal (max |BᵀB - I| = {dev:.3e})"
        )));
    }
    let (s, co) = theta.sin_cos();
    let mut g = Tensor::eye(p);
    for i in 0..p / 2 {
        let j = p - 1 - i;
        g.set(i, i, co);
        g.set(i, j, -s);
        g.set(j, i, s);
        g.set(j, j, co);
    }
    basis.transpose()?.matmul(&g)?.matmul(basis)
}

/// Determinant by partial-pivot LU; used to check rotations are proper.
pub fn determinant(a: &Tensor) -> Result<f64> {
    let (n, c) = a.dims2("determinant")?;
    if n != c {
        return Err(Error::Dimension {
            op: "determinant",
            left: vec![n, c],
            right: vec![n, n],
        });
    }
    let mut m = a.data().to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))
            .unwrap_or(col);
        if m[piv * n + col] == 0.0 {
            return Ok(0.0);
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            det = -det;
        }
        let d = m[col * n + col];
        det *= d;
        for r in (col + 1)..n {
            let f = m[r * n + col] / d;
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
        }
    }
    Ok(det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng::Rng;
    use proptest::prelude::*;

    fn random(m: usize, n: usize, rng: &mut Rng) -> Tensor {
        Tensor::from_parts(vec![m, n], (0..m * n).map(|_| rng.normal()).collect())
    }

    fn orthonormal_cols_err(t: &Tensor) -> f64 {
        let k = t.cols();
        t.transpose().unwrap().matmul(t).unwrap().sub(&Tensor::eye(k)).unwrap().max_abs()
    }

    fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn diagonal_matrix() {
        let a = Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = svd(&a).unwrap();
        assert_eq!(r.singular_values, vec![3.0, 1.0]);
        assert!(r.u.sub(&Tensor::eye(2)).unwrap().max_abs() < 1e-15);
        assert!(r.v.sub(&Tensor::eye(2)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn rank_one_outer_product() {
        let a = Tensor::from_rows(&[vec![1.0], vec![-2.0], vec![0.5], vec![3.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![2.0, 1.0, -1.0]]).unwrap();
        let r = svd(&a.matmul(&b).unwrap()).unwrap();
        assert!(r.singular_values[0] > 1.0);
        assert!(r.singular_values[1..].iter().all(|s| *s <= 1e-10));
        assert!(orthonormal_cols_err(&r.u) < 1e-10);
    }

    #[test]
    fn random_8x5_reconstructs() {
        let mut rng = Rng::new(3);
        let a = random(8, 5, &mut rng);
        let r = svd(&a).unwrap();
        assert!(rel_err(&r.reconstruct(), &a) <= 1e-8);
        assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn wide_matrix_has_full_right_basis() {
        let mut rng = Rng::new(4);
        let a = random(3, 7, &mut rng);
        let r = svd(&a).unwrap();
        assert_eq!(r.v.shape(), &[3, 7]);
        assert!(rel_err(&r.reconstruct(), &a) <= 1e-10);
        let b = r.right_basis();
        assert!(orthonormal_cols_err(b) < 1e-10);
        // trailing directions span the null space
        let tail = b.select_rows(&[3, 4, 5, 6]);
        assert!(a.matmul(&tail.transpose().unwrap()).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn left_vectors_follow_sign_convention() {
        let mut rng = Rng::new(5);
        let r = svd(&random(6, 4, &mut rng)).unwrap();
        for j in 0..4 {
            let lead = (0..6).map(|i| r.u.get(i, j)).find(|x| x.abs() > 1e-12).unwrap();
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn givens_identity_at_zero() {
        let mut rng = Rng::new(9);
        let basis = svd(&random(10, 6, &mut rng)).unwrap().right_basis().clone();
        let r = givens_product(0.0, 6, &basis).unwrap();
        assert!(r.sub(&Tensor::eye(6)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn givens_quarter_turn_in_plane() {
        let r = givens_product(std::f64::consts::FRAC_PI_2, 2, &Tensor::eye(2)).unwrap();
        let want = Tensor::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        assert!(r.sub(&want).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn odd_dimension_fixes_middle_axis() {
        let r = givens_product(0.7, 5, &Tensor::eye(5)).unwrap();
        assert_eq!(r.get(2, 2), 1.0);
        assert_eq!(r.get(0, 2), 0.0);
    }

    #[test]
    fn non_orthogonal_basis_rejected() {
        let b = Tensor::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(givens_product(0.3, 2, &b), Err(Error::Precondition(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn svd_invariants(m in 2usize..=16, n in 2usize..=16, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = random(m, n, &mut rng);
            let r = svd(&a).unwrap();
            prop_assert!(rel_err(&r.reconstruct(), &a) <= 1e-8);
            prop_assert!(orthonormal_cols_err(&r.u) <= 1e-8);
            prop_assert!(orthonormal_cols_err(&r.v.transpose().unwrap()) <= 1e-8);
            prop_assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn givens_is_proper_rotation(p in 2usize..=12, theta in -6.3f64..6.3, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let basis = svd(&random(p + 3, p, &mut rng)).unwrap().right_basis().clone();
            let r = givens_product(theta, p, &basis).unwrap();
            let rtr = r.transpose().unwrap().matmul(&r).unwrap();
            prop_assert!(rtr.sub(&Tensor::eye(p)).unwrap().max_abs() <= 1e-10);
            prop_assert!((determinant(&r).unwrap() - 1.0).abs() <= 1e-8);
        }

        #[test]
        fn matmul_is_associative(m in 1usize..6, k in 1usize..6, l in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let (a, b, c) = (random(m, k, &mut rng), random(k, l, &mut rng), random(l, n, &mut rng));
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(rel_err(&left, &right) <= 1e-10);
        }
    }
}
