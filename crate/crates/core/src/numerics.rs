//! Dense linear algebra used by every other module.
//!
//! Symmetric positive-definite systems go through a blocked Cholesky
//! factorisation whose trailing updates and triangular-solve updates are
//! expressed as matrix products, so the bulk of the work runs through
//! nalgebra's packed `gemm`. Pseudo-inverses use faer's SVD; eigenvalues use
//! nalgebra's symmetric eigensolver.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::Real;

const BLOCK: usize = 64;

/// Default relative singular-value cutoff for [`pinv_apply`].
pub const PINV_RANK_TOL: f64 = 1e-12;

/// Relative asymmetry accepted by routines that assume symmetric input.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn check_finite<T: Real>(m: &DMatrix<T>, context: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

pub fn check_finite_vec<T: Real>(v: &DVector<T>, context: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

fn check_square<T: Real>(a: &DMatrix<T>) -> Result<()> {
    if a.nrows() == 0 {
        return Err(Error::Empty("square matrix"));
    }
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

/// Largest `|a_ij - a_ji|` relative to the largest `|a_ij|`.
pub fn relative_asymmetry<T: Real>(a: &DMatrix<T>) -> f64 {
    let n = a.nrows();
    let mut scale = 0.0f64;
    let mut asym = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            scale = scale.max(a[(i, j)].as_f64().abs());
            if i > j {
                asym = asym.max((a[(i, j)] - a[(j, i)]).as_f64().abs());
            }
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        asym / scale
    }
}

fn check_symmetric<T: Real>(a: &DMatrix<T>) -> Result<()> {
    let tol = SYMMETRY_TOL.max(100.0 * T::EPSILON);
    let asym = relative_asymmetry(a);
    if asym > tol {
        Err(Error::NotSymmetric { asymmetry: asym })
    } else {
        Ok(())
    }
}

/// `aᵀ·b` through the packed product path.
pub fn at_b<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    a.transpose() * b
}

/// Lower Cholesky factor `L` with `L·Lᵀ = A`.
#[derive(Debug, Clone)]
pub struct Cholesky<T: Real> {
    l: DMatrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factors `a + jitter·I`, reading only the lower triangle of `a`.
    ///
    /// On failure returns the index of the first non-positive pivot.
    pub fn factor(a: &DMatrix<T>, jitter: T) -> std::result::Result<Self, usize> {
        let mut l = a.clone();
        if jitter != T::zero() {
            for i in 0..l.nrows() {
                l[(i, i)] += jitter;
            }
        }
        factor_in_place(&mut l)?;
        Ok(Self { l })
    }

    pub fn l(&self) -> &DMatrix<T> {
        &self.l
    }

    pub fn into_l(self) -> DMatrix<T> {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `L·Lᵀ·X = B`.
    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_vec(&self, b: &DVector<T>) -> DVector<T> {
        let mut x = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.solve_in_place(&mut x);
        DVector::from_column_slice(x.as_slice())
    }

    pub fn solve_in_place(&self, b: &mut DMatrix<T>) {
        assert_eq!(b.nrows(), self.dim(), "cholesky solve: row mismatch");
        forward_substitute(&self.l, b);
        backward_substitute_transposed(&self.l, b);
    }

    /// Solves `L·X = B` only.
    pub fn solve_lower_in_place(&self, b: &mut DMatrix<T>) {
        assert_eq!(b.nrows(), self.dim(), "cholesky solve: row mismatch");
        forward_substitute(&self.l, b);
    }

    /// `log det(L·Lᵀ)`.
    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        (0..self.dim()).fold(T::zero(), |acc, i| acc + two * self.l[(i, i)].ln())
    }
}

fn factor_in_place<T: Real>(a: &mut DMatrix<T>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        {
            let data = a.as_mut_slice();
            for j in k..k + kb {
                let (left, right) = data.split_at_mut(j * n);
                let col_j = &mut right[..n];
                for p in k..j {
                    let col_p = &left[p * n..(p + 1) * n];
                    let ljp = col_p[j];
                    if ljp != T::zero() {
                        for i in j..n {
                            col_j[i] -= ljp * col_p[i];
                        }
                    }
                }
                let d = col_j[j];
                if !(d > T::zero()) || !d.is_finite() {
                    return Err(j);
                }
                let ljj = d.sqrt();
                col_j[j] = ljj;
                let inv = T::one() / ljj;
                for v in &mut col_j[j + 1..n] {
                    *v *= inv;
                }
            }
        }
        let rest = n - k - kb;
        if rest > 0 {
            let panel = a.view((k + kb, k), (rest, kb)).clone_owned();
            let mut jb = 0;
            while jb < rest {
                let w = BLOCK.min(rest - jb);
                let lhs = panel.rows(jb, rest - jb);
                let rhs_t = panel.rows(jb, w).transpose();
                let mut target = a.view_mut((k + kb + jb, k + kb + jb), (rest - jb, w));
                target.gemm(-T::one(), &lhs, &rhs_t, T::one());
                jb += w;
            }
        }
        k += kb;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = T::zero();
        }
    }
    Ok(())
}

/// `B <- L⁻¹·B` for lower-triangular `L`.
fn forward_substitute<T: Real>(l: &DMatrix<T>, b: &mut DMatrix<T>) {
    let n = l.nrows();
    let r = b.ncols();
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        for c in 0..r {
            let mut col = b.column_mut(c);
            for j in k..k + kb {
                let xj = col[j] / l[(j, j)];
                col[j] = xj;
                if xj != T::zero() {
                    let lcol = l.column(j);
                    for i in j + 1..k + kb {
                        col[i] -= lcol[i] * xj;
                    }
                }
            }
        }
        let rest = n - k - kb;
        if rest > 0 {
            let xk = b.rows(k, kb).clone_owned();
            let lpanel = l.view((k + kb, k), (rest, kb));
            let mut tail = b.rows_mut(k + kb, rest);
            tail.gemm(-T::one(), &lpanel, &xk, T::one());
        }
        k += kb;
    }
}

/// `B <- L⁻ᵀ·B` for lower-triangular `L`.
fn backward_substitute_transposed<T: Real>(l: &DMatrix<T>, b: &mut DMatrix<T>) {
    let n = l.nrows();
    let r = b.ncols();
    let mut end = n;
    while end > 0 {
        let kb = BLOCK.min(end);
        let k = end - kb;
        for c in 0..r {
            let mut col = b.column_mut(c);
            for j in (k..end).rev() {
                let lcol = l.column(j);
                let mut acc = col[j];
                for i in j + 1..end {
                    acc -= lcol[i] * col[i];
                }
                col[j] = acc / lcol[j];
            }
        }
        if k > 0 {
            let xk = b.rows(k, kb).clone_owned();
            let lblock_t = l.view((k, 0), (kb, k)).transpose();
            let mut head = b.rows_mut(0, k);
            head.gemm(-T::one(), &lblock_t, &xk, T::one());
        }
        end = k;
    }
}

/// Solves `A·X = B` for symmetric positive-definite `A`.
pub fn spd_solve<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_square(a)?;
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch {
            context: "spd_solve right-hand side",
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    check_finite(a, "spd_solve matrix")?;
    check_finite(b, "spd_solve right-hand side")?;
    check_symmetric(a)?;
    let chol = Cholesky::factor(a, T::zero()).map_err(|_| Error::NotPositiveDefinite)?;
    Ok(chol.solve(b))
}

pub fn spd_solve_vec<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = spd_solve(a, &bm)?;
    Ok(DVector::from_column_slice(x.as_slice()))
}

/// Lower-triangular `L` with `L·Lᵀ = A + jitter·I`; upper entries are exactly zero.
pub fn chol_lower<T: Real>(a: &DMatrix<T>, jitter: T) -> Result<DMatrix<T>> {
    check_square(a)?;
    check_finite(a, "chol_lower matrix")?;
    check_symmetric(a)?;
    if jitter < T::zero() {
        return Err(invalid("jitter must be nonnegative"));
    }
    Cholesky::factor(a, jitter)
        .map(Cholesky::into_l)
        .map_err(|pivot| Error::NeedsLargerJitter { pivot })
}

/// Thin SVD with Moore-Penrose helpers, factorised in `f64`.
#[derive(Debug, Clone)]
pub struct PseudoInverse<T: Real> {
    u: DMatrix<T>,
    singular: DVector<T>,
    v: DMatrix<T>,
    sigma_max: T,
}

impl<T: Real> PseudoInverse<T> {
    pub fn new(a: &DMatrix<T>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::Empty("pseudo-inverse"));
        }
        check_finite(a, "pseudo-inverse input")?;
        let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].to_f64().unwrap_or(f64::NAN));
        let svd = m.thin_svd().map_err(|_| Error::SvdNoConvergence)?;
        let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
        let k = s.nrows();
        let u = DMatrix::from_fn(a.nrows(), k, |i, j| T::lit(u[(i, j)]));
        let v = DMatrix::from_fn(a.ncols(), k, |i, j| T::lit(v[(i, j)]));
        let singular = DVector::from_fn(k, |i, _| T::lit(s[i]));
        let sigma_max = singular
            .iter()
            .copied()
            .fold(T::zero(), |m, s| if s > m { s } else { m });
        Ok(Self {
            u,
            singular,
            v,
            sigma_max,
        })
    }

    pub fn singular_values(&self) -> &DVector<T> {
        &self.singular
    }

    /// Number of singular values above `rel_tol·σ_max`.
    pub fn rank(&self, rel_tol: T) -> usize {
        let cut = rel_tol * self.sigma_max;
        self.singular.iter().filter(|&&s| s > cut).count()
    }

    fn shrink(&self, rel_tol: T) -> DVector<T> {
        let cut = rel_tol * self.sigma_max;
        self.singular.map(|s| {
            if s > cut && s > T::zero() {
                T::one() / s
            } else {
                T::zero()
            }
        })
    }

    /// `A†·b`.
    pub fn apply(&self, b: &DVector<T>, rel_tol: T) -> DVector<T> {
        assert_eq!(b.len(), self.u.nrows(), "pinv apply: length mismatch");
        let mut coeffs = self.u.tr_mul(b);
        coeffs.component_mul_assign(&self.shrink(rel_tol));
        &self.v * coeffs
    }

    /// `(Aᵀ)†·b`, reusing the factorisation of `A`.
    pub fn apply_transposed(&self, b: &DVector<T>, rel_tol: T) -> DVector<T> {
        assert_eq!(b.len(), self.v.nrows(), "pinv apply: length mismatch");
        let mut coeffs = self.v.tr_mul(b);
        coeffs.component_mul_assign(&self.shrink(rel_tol));
        &self.u * coeffs
    }
}

/// Minimum-norm least-squares solution `A†·b`, cutting singular values below
/// `rank_tol·σ_max`.
pub fn pinv_apply<T: Real>(a: &DMatrix<T>, b: &DVector<T>, rank_tol: T) -> Result<DVector<T>> {
    if !(rank_tol > T::zero() && rank_tol < T::one()) {
        return Err(invalid("rank_tol must lie in (0, 1)"));
    }
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            context: "pinv_apply right-hand side",
            expected: a.nrows(),
            found: b.len(),
        });
    }
    check_finite_vec(b, "pinv_apply right-hand side")?;
    Ok(PseudoInverse::new(a)?.apply(b, rank_tol))
}

/// Eigenvalues of a symmetric matrix, sorted descending.
pub fn sym_eigvals<T: Real>(a: &DMatrix<T>) -> Result<DVector<T>> {
    check_square(a)?;
    check_finite(a, "sym_eigvals input")?;
    check_symmetric(a)?;
    let mut vals: Vec<T> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    Ok(DVector::from_vec(vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut s = crate::rng::SeedStream::new(seed);
        DMatrix::from_fn(rows, cols, |_, _| s.normal())
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let b = random_matrix(n, n, seed);
        &b * b.transpose() + DMatrix::identity(n, n) * (n as f64)
    }

    #[test]
    fn spd_solve_scaled_identity() {
        let a = DMatrix::identity(2, 2) * 2.0;
        let x = spd_solve_vec(&a, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(x, DVector::from_vec(vec![0.5, 0.5]), max_relative = 1e-15);
    }

    #[test]
    fn spd_solve_identity_rhs_matrix() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(spd_solve(&i3, &i3).unwrap(), i3);
    }

    #[test]
    fn spd_solve_small_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = spd_solve_vec(&a, &b).unwrap();
        assert!((&a * &x - &b).norm() <= 1e-12);
    }

    #[test]
    fn spd_solve_blocked_sizes() {
        // sizes straddling the block width exercise the gemm updates
        for &n in &[1usize, 63, 64, 65, 130, 200] {
            let a = random_spd(n, n as u64);
            let b = random_matrix(n, 7, 99);
            let x = spd_solve(&a, &b).unwrap();
            let rel = (&a * &x - &b).norm() / b.norm();
            assert!(rel < 1e-10, "n={n} rel={rel}");
        }
    }

    #[test]
    fn spd_solve_errors() {
        let rect = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(
            spd_solve(&rect, &DMatrix::zeros(2, 1)),
            Err(Error::NotSquare { .. })
        ));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            spd_solve(&indef, &DMatrix::zeros(2, 1)),
            Err(Error::NotPositiveDefinite)
        ));
        let nan = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(
            spd_solve(&nan, &DMatrix::zeros(1, 1)),
            Err(Error::NonFinite(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(
            spd_solve(&asym, &DMatrix::zeros(2, 1)),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn pinv_identity() {
        let x = pinv_apply(
            &DMatrix::<f64>::identity(2, 2),
            &DVector::from_vec(vec![3.0, -1.0]),
            1e-12,
        )
        .unwrap();
        assert_relative_eq!(x, DVector::from_vec(vec![3.0, -1.0]), epsilon = 1e-14);
    }

    #[test]
    fn pinv_tall_consistent() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let x = pinv_apply(&a, &DVector::from_vec(vec![1.0, 1.0]), 1e-12).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn pinv_rank_deficient_minimum_norm() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let x = pinv_apply(&a, &DVector::from_vec(vec![2.0, 5.0]), 1e-12).unwrap();
        assert_relative_eq!(x, DVector::from_vec(vec![2.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn pinv_wide_and_transposed() {
        let a = random_matrix(5, 6, 4);
        let b = random_matrix(5, 1, 5).column(0).into_owned();
        let p = PseudoInverse::new(&a).unwrap();
        let x = p.apply(&b, 1e-12);
        assert!((&a * &x - &b).norm() < 1e-10);
        let at = a.transpose();
        let c = random_matrix(6, 1, 6).column(0).into_owned();
        let direct = pinv_apply(&at, &c, 1e-12).unwrap();
        assert_relative_eq!(p.apply_transposed(&c, 1e-12), direct, epsilon = 1e-10);
    }

    #[test]
    fn pinv_errors() {
        let a = DMatrix::<f64>::zeros(0, 0);
        assert!(matches!(
            pinv_apply(&a, &DVector::zeros(0), 1e-12),
            Err(Error::Empty(_))
        ));
        let inf = DMatrix::from_row_slice(1, 1, &[f64::INFINITY]);
        assert!(matches!(
            pinv_apply(&inf, &DVector::zeros(1), 1e-12),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn chol_examples() {
        assert_eq!(
            chol_lower(&DMatrix::<f64>::identity(2, 2), 0.0).unwrap(),
            DMatrix::identity(2, 2)
        );
        let d = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        assert_eq!(
            chol_lower(&d, 0.0).unwrap(),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0])
        );
        let ones = DMatrix::<f64>::from_element(2, 2, 1.0);
        let l = chol_lower(&ones, 1e-6).unwrap();
        let target = &ones + DMatrix::identity(2, 2) * 1e-6;
        assert!((&l * l.transpose() - &target).norm() / ones.norm() <= 1e-10);
    }

    #[test]
    fn chol_reports_pivot() {
        let ones = DMatrix::<f64>::from_element(3, 3, 1.0);
        match chol_lower(&ones, 0.0) {
            Err(Error::NeedsLargerJitter { pivot }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn chol_lower_triangular_exactly() {
        let a = random_spd(150, 8);
        let l = chol_lower(&a, 0.0).unwrap();
        for j in 0..150 {
            for i in 0..j {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
        assert!((&l * l.transpose() - &a).norm() / a.norm() <= 1e-10);
    }

    #[test]
    fn eigen_examples() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        assert_relative_eq!(
            sym_eigvals(&d).unwrap(),
            DVector::from_vec(vec![3.0, 1.0]),
            epsilon = 1e-12
        );
        let i4 = DMatrix::<f64>::identity(4, 4);
        assert_relative_eq!(
            sym_eigvals(&i4).unwrap(),
            DVector::from_element(4, 1.0),
            epsilon = 1e-12
        );
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(
            sym_eigvals(&a).unwrap(),
            DVector::from_vec(vec![3.0, 1.0]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn eigen_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 2.0]);
        assert!(matches!(sym_eigvals(&a), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn eigen_trace_sum() {
        let a = random_spd(40, 12);
        let vals = sym_eigvals(&a).unwrap();
        assert!(vals.as_slice().windows(2).all(|w| w[0] >= w[1]));
        assert_relative_eq!(vals.sum(), a.trace(), max_relative = 1e-8);
    }

    #[test]
    fn single_precision_solve() {
        let a = DMatrix::<f32>::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::<f32>::from_vec(vec![1.0, 2.0]);
        let x = spd_solve_vec(&a, &b).unwrap();
        assert!((&a * &x - &b).norm() <= 1e-5);
    }
}
