//! Reduced SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of the working copy are rotated in cyclic order until every pair
//! is orthogonal to a relative cosine of [`JACOBI_TOL`], or [`MAX_SWEEPS`]
//! sweeps have run. The fixed pair order makes the result deterministic.

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

pub const DEFAULT_RANK_TOL: f64 = 1e-12;
pub const JACOBI_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 60;

/// Thin SVD `a = u · diag(s) · vᵀ` keeping only singular values above
/// `rank_tol · s[0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, &sj) in self.s.iter().enumerate() {
                let v = us.get(i, j) * sj;
                us.set(i, j, v);
            }
        }
        us.matmul_t(&self.v).expect("factor shapes agree")
    }

    /// Top left singular vector, if any.
    pub fn u1(&self) -> Option<Vec<f64>> {
        (self.rank() > 0).then(|| self.u.col(0))
    }

    /// Top right singular vector, if any.
    pub fn v1(&self) -> Option<Vec<f64>> {
        (self.rank() > 0).then(|| self.v.col(0))
    }
}

pub fn svd(a: &Matrix, rank_tol: f64) -> Result<SvdFactors> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::Argument(format!("rank_tol must lie in (0, 1), got {rank_tol}")));
    }
    if !a.is_finite() {
        let idx = a.as_slice().iter().position(|x| !x.is_finite()).unwrap_or(0);
        return Err(Error::NonFinite { row: idx / a.cols().max(1), col: idx % a.cols().max(1) });
    }
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose(), rank_tol)?;
        return Ok(canonical_signs(SvdFactors { u: t.v, s: t.s, v: t.u }));
    }
    svd_tall(a, rank_tol).map(canonical_signs)
}

/// All singular values (including those a reduced factorization would drop),
/// descending.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    let (m, n) = a.shape();
    let work = if m < n { a.transpose() } else { a.clone() };
    let (cols, _) = jacobi_columns(&work)?;
    let mut s: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

pub fn spectral_norm(a: &Matrix) -> f64 {
    singular_values(a).ok().and_then(|s| s.first().copied()).unwrap_or(0.0)
}

pub fn numeric_rank(a: &Matrix, rank_tol: f64) -> Result<usize> {
    Ok(svd(a, rank_tol)?.rank())
}

/// Column-major rotation of a tall matrix; returns rotated columns and the
/// accumulated right rotation (also column-major).
fn jacobi_columns(a: &Matrix) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    // Columns at rounding level carry no signal; rotating them only churns noise.
    let negligible = (m.max(n) as f64 * f64::EPSILON).powi(2) * norms.iter().sum::<f64>();
    let mut residual = 0.0;
    for _sweep in 0..MAX_SWEEPS {
        residual = 0.0_f64;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                let rel = gamma.abs() / (alpha * beta).sqrt();
                residual = residual.max(rel);
                if rel <= JACOBI_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s, m);
                rotate(&mut v, p, q, c, s, n);
                norms[p] = dot(&cols[p], &cols[p]);
                norms[q] = dot(&cols[q], &cols[q]);
            }
        }
        if residual <= JACOBI_TOL {
            return Ok((cols, v));
        }
    }
    Err(Error::NoConvergence { sweeps: MAX_SWEEPS, residual })
}

#[inline]
fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64, len: usize) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for i in 0..len {
        let x = cp[i];
        let y = cq[i];
        cp[i] = c * x - s * y;
        cq[i] = s * x + c * y;
    }
}

fn svd_tall(a: &Matrix, rank_tol: f64) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    let (cols, v) = jacobi_columns(a)?;
    let sigma: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps equal singular values in column order.
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let smax = order.first().map_or(0.0, |&i| sigma[i]);
    let kept: Vec<usize> = if smax > 0.0 {
        order.into_iter().take_while(|&i| sigma[i] > rank_tol * smax).collect()
    } else {
        Vec::new()
    };
    let r = kept.len();
    let mut u = Matrix::zeros(m, r);
    let mut vm = Matrix::zeros(n, r);
    let mut s = Vec::with_capacity(r);
    for (k, &j) in kept.iter().enumerate() {
        let sj = sigma[j];
        let uc: Vec<f64> = cols[j].iter().map(|x| x / sj).collect();
        u.set_col(k, &uc);
        vm.set_col(k, &v[j]);
        s.push(sj);
    }
    Ok(SvdFactors { u, s, v: vm })
}

/// Flips each singular pair so the largest-magnitude entry of the u-column
/// is positive; ties go to the lowest row index.
fn canonical_signs(mut f: SvdFactors) -> SvdFactors {
    for k in 0..f.rank() {
        let col = f.u.col(k);
        let mut best = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            for i in 0..f.u.rows() {
                let x = f.u.get(i, k);
                f.u.set(i, k, -x);
            }
            for i in 0..f.v.rows() {
                let x = f.v.get(i, k);
                f.v.set(i, k, -x);
            }
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn orthogonality_error(q: &Matrix) -> f64 {
        let g = q.t_matmul(q).unwrap();
        g.sub(&Matrix::identity(g.rows())).unwrap().max_abs()
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let f = svd(&Matrix::identity(2), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.s, vec![1.0, 1.0]);
        assert_eq!(f.rank(), 2);
    }

    #[test]
    fn exact_rank_deficiency_is_dropped() {
        let f = svd(&Matrix::from_diag(&[3.0, 0.0]), 1e-12).unwrap();
        assert_eq!(f.rank(), 1);
        assert_eq!(f.s, vec![3.0]);
    }

    #[test]
    fn random_reconstruction_and_orthogonality() {
        let mut rng = SplitMix64::new(11);
        let a = Matrix::random_normal(5, 3, 1.0, &mut rng);
        let f = svd(&a, DEFAULT_RANK_TOL).unwrap();
        let err = f.reconstruct().sub(&a).unwrap().frobenius_norm();
        assert!(err <= 1e-8 * a.frobenius_norm());
        assert!(orthogonality_error(&f.u) <= 1e-10);
        assert!(orthogonality_error(&f.v) <= 1e-10);
        assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn wide_matrices_work() {
        let mut rng = SplitMix64::new(5);
        let a = Matrix::random_normal(3, 7, 1.0, &mut rng);
        let f = svd(&a, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.u.shape(), (3, 3));
        assert_eq!(f.v.shape(), (7, 3));
        assert!(f.reconstruct().sub(&a).unwrap().frobenius_norm() <= 1e-8 * a.frobenius_norm());
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let f = svd(&Matrix::zeros(3, 2), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.rank(), 0);
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2)), 0.0);
        assert_eq!(numeric_rank(&Matrix::zeros(4, 4), 1e-12).unwrap(), 0);
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let a = Matrix::from_rows(&[vec![0.0, -2.0], vec![-5.0, 0.0]]).unwrap();
        let f = svd(&a, DEFAULT_RANK_TOL).unwrap();
        for k in 0..f.rank() {
            let col = f.u.col(k);
            let best = col.iter().cloned().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(best > 0.0);
        }
    }

    #[test]
    fn rejects_bad_tolerance() {
        assert!(matches!(svd(&Matrix::identity(2), 0.0), Err(Error::Argument(_))));
        assert!(matches!(svd(&Matrix::identity(2), 1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn spectral_norm_cases() {
        assert!((spectral_norm(&Matrix::identity(4)) - 1.0).abs() < 1e-15);
        assert!((spectral_norm(&Matrix::from_diag(&[2.0, 1.0, 1.0])) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_norm_dominates_random_probes() {
        let mut rng = SplitMix64::new(21);
        let a = Matrix::random_normal(6, 4, 1.0, &mut rng);
        let norm = spectral_norm(&a);
        let mut sampled: f64 = 0.0;
        for _ in 0..10_000 {
            let x = rng.unit_vector(4);
            let y = a.matvec(&x).unwrap();
            sampled = sampled.max(dot(&y, &y).sqrt());
        }
        assert!(sampled <= norm * (1.0 + 1e-12));
        assert!(norm - sampled < 0.05 * norm);
    }

    #[test]
    fn numeric_rank_cases() {
        assert_eq!(numeric_rank(&Matrix::identity(4), 1e-12).unwrap(), 4);
        let outer = Matrix::outer(&[1.0, -2.0, 0.5], &[3.0, 1.0, 4.0, 1.0]);
        assert_eq!(numeric_rank(&outer, 1e-12).unwrap(), 1);
        let mut rng = SplitMix64::new(2);
        for k in 1..5 {
            let mut acc = Matrix::zeros(7, 6);
            for _ in 0..k {
                let u = rng.normal_vec(7);
                let v = rng.normal_vec(6);
                acc.add_assign(&Matrix::outer(&u, &v)).unwrap();
            }
            assert_eq!(numeric_rank(&acc, 1e-12).unwrap(), k);
        }
    }

    #[test]
    fn deterministic_factors() {
        let mut rng = SplitMix64::new(8);
        let a = Matrix::random_normal(9, 6, 1.0, &mut rng);
        assert_eq!(svd(&a, 1e-12).unwrap(), svd(&a, 1e-12).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn norm_sandwich(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let a = Matrix::random_normal(rows, cols, 1.0, &mut rng);
            let spec = spectral_norm(&a);
            let frob = a.frobenius_norm();
            let rank = numeric_rank(&a, DEFAULT_RANK_TOL).unwrap() as f64;
            prop_assert!(spec <= frob * (1.0 + 1e-12));
            prop_assert!(frob <= rank.sqrt() * spec * (1.0 + 1e-12));
        }
    }
}
