//! Small dense linear algebra: LU solves for the KKT oracle and minimum-norm
//! least squares for the price regression.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] += v;
    }

    pub fn mul_vec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .fold(S::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu<S> {
    n: usize,
    lu: Vec<S>,
    perm: Vec<usize>,
}

impl<S: Scalar> Lu<S> {
    pub fn factor(a: &Matrix<S>, context: &'static str) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Dimension(format!(
                "{context}: LU of a {}x{} matrix",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(S::zero(), |m, v| m.max(v.abs()));
        let tiny = scale * S::epsilon() * S::of(n.max(1) as f64);
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|r| (r, lu[r * n + k].abs()))
                    .fold(
                        (k, S::zero()),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pivot <= tiny || pivot == S::zero() {
                return Err(Error::Singular(context));
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let d = lu[k * n + k];
            for r in k + 1..n {
                let f = lu[r * n + k] / d;
                lu[r * n + k] = f;
                if f != S::zero() {
                    for c in k + 1..n {
                        let v = lu[k * n + c];
                        lu[r * n + c] -= f * v;
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut x: Vec<S> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let mut acc = x[r];
            for c in 0..r {
                acc -= self.lu[r * n + c] * x[c];
            }
            x[r] = acc;
        }
        for r in (0..n).rev() {
            let mut acc = x[r];
            for c in r + 1..n {
                acc -= self.lu[r * n + c] * x[c];
            }
            x[r] = acc / self.lu[r * n + r];
        }
        x
    }
}

/// Solves `A x = b` with one round of iterative refinement.
pub fn solve<S: Scalar>(a: &Matrix<S>, b: &[S], context: &'static str) -> Result<Vec<S>> {
    let lu = Lu::factor(a, context)?;
    let mut x = lu.solve(b);
    let ax = a.mul_vec(&x);
    let r: Vec<S> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
    let dx = lu.solve(&r);
    for (xi, di) in x.iter_mut().zip(dx) {
        *xi += di;
    }
    Ok(x)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and the column-major eigenvector matrix
/// (`vectors[k * n + i]` is component `i` of eigenvector `k`).
pub fn symmetric_eigen<S: Scalar>(a: &Matrix<S>) -> (Vec<S>, Vec<S>) {
    let n = a.rows;
    let mut m = a.data.clone();
    let mut v = vec![S::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = S::one();
    }
    let norm = m.iter().fold(S::zero(), |acc, x| acc + *x * *x).sqrt();
    let two = S::of(2.0);
    for _sweep in 0..100 {
        let off = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .fold(S::zero(), |acc, (i, j)| acc + m[i * n + j] * m[i * n + j])
            .sqrt();
        if off <= S::epsilon() * norm || off == S::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == S::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    // transpose to column-major eigenvectors
    let mut vectors = vec![S::zero(); n * n];
    for k in 0..n {
        for i in 0..n {
            vectors[k * n + i] = v[i * n + k];
        }
    }
    (values, vectors)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquares<S> {
    pub coef: Vec<S>,
    pub rank: usize,
    /// Sum of squared residuals.
    pub residual: S,
}

impl<S> LeastSquares<S> {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.coef_len()
    }

    fn coef_len(&self) -> usize {
        self.coef.len()
    }
}

/// Minimum-norm least squares for a tall design matrix.
///
/// Columns are equilibrated, the normal matrix is pseudo-inverted through its
/// eigen-decomposition and the solution gets one refinement pass.
pub fn least_squares_min_norm<S: Scalar>(design: &Matrix<S>, y: &[S]) -> LeastSquares<S> {
    let (rows, p) = (design.rows, design.cols);
    assert_eq!(y.len(), rows);
    let scales: Vec<S> = (0..p)
        .map(|c| {
            let n = (0..rows)
                .fold(S::zero(), |acc, r| {
                    acc + design.get(r, c) * design.get(r, c)
                })
                .sqrt();
            if n > S::zero() {
                n
            } else {
                S::one()
            }
        })
        .collect();
    let mut gram = Matrix::zeros(p, p);
    for r in 0..rows {
        for i in 0..p {
            let xi = design.get(r, i) / scales[i];
            if xi == S::zero() {
                continue;
            }
            for j in 0..p {
                gram.add(i, j, xi * design.get(r, j) / scales[j]);
            }
        }
    }
    let (values, vectors) = symmetric_eigen(&gram);
    let vmax = values.iter().fold(S::zero(), |m, v| m.max(v.abs()));
    let cutoff = vmax * S::of(1e-12) * S::of(p.max(1) as f64);
    let rank = values.iter().filter(|v| **v > cutoff).count();

    let pinv_apply = |rhs: &[S]| -> Vec<S> {
        // rhs is in scaled coordinates
        let mut out = vec![S::zero(); p];
        for k in 0..p {
            if values[k] <= cutoff {
                continue;
            }
            let vk = &vectors[k * p..(k + 1) * p];
            let proj = vk.iter().zip(rhs).fold(S::zero(), |a, (&v, &r)| a + v * r) / values[k];
            for i in 0..p {
                out[i] += proj * vk[i];
            }
        }
        out
    };
    let xt_times = |res: &[S]| -> Vec<S> {
        (0..p)
            .map(|c| {
                (0..rows).fold(S::zero(), |acc, r| {
                    acc + design.get(r, c) / scales[c] * res[r]
                })
            })
            .collect()
    };

    let mut z = pinv_apply(&xt_times(y));
    for _ in 0..2 {
        let resid = residuals(design, &scales, &z, y);
        let dz = pinv_apply(&xt_times(&resid));
        for (zi, di) in z.iter_mut().zip(dz) {
            *zi += di;
        }
    }
    let resid = residuals(design, &scales, &z, y);
    let residual = resid.iter().fold(S::zero(), |a, r| a + *r * *r);
    let coef = z.iter().zip(&scales).map(|(&zi, &s)| zi / s).collect();
    LeastSquares {
        coef,
        rank,
        residual,
    }
}

fn residuals<S: Scalar>(design: &Matrix<S>, scales: &[S], z: &[S], y: &[S]) -> Vec<S> {
    (0..design.rows)
        .map(|r| {
            let fit = (0..design.cols).fold(S::zero(), |acc, c| {
                acc + design.get(r, c) / scales[c] * z[c]
            });
            y[r] - fit
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_permuted_system() {
        let a = Matrix::<f64>::from_rows(3, 3, vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]);
        let x = solve(&a, &[5.0, 3.0, 6.0], "test").unwrap();
        let back = a.mul_vec(&x);
        for (b, e) in back.iter().zip([5.0, 3.0, 6.0]) {
            assert!((b - e).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let a = Matrix::from_rows(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            solve(&a, &[1.0, 2.0], "s"),
            Err(Error::Singular("s"))
        ));
    }

    #[test]
    fn jacobi_recovers_spectrum() {
        let a = Matrix::<f64>::from_rows(2, 2, vec![2.0, 1.0, 1.0, 2.0]);
        let (mut vals, _) = symmetric_eigen(&a);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn min_norm_on_duplicated_column() {
        // y = 2 * x, with x appearing twice: min-norm splits the weight evenly
        let design = Matrix::<f64>::from_rows(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let fit = least_squares_min_norm(&design, &[2.0, 4.0, 6.0]);
        assert_eq!(fit.rank, 1);
        assert!(fit.rank_deficient());
        assert!((fit.coef[0] - 1.0).abs() < 1e-12);
        assert!((fit.coef[1] - 1.0).abs() < 1e-12);
        assert!(fit.residual < 1e-20);
    }

    #[test]
    fn full_rank_fit_matches_normal_equations() {
        let design = Matrix::<f64>::from_rows(4, 2, vec![1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0, 1.0]);
        let fit = least_squares_min_norm(&design, &[1.0, 3.0, 2.0, 5.0]);
        // slope 1.1, intercept 0.0 by hand
        assert!((fit.coef[0] - 1.1).abs() < 1e-12);
        assert!(fit.coef[1].abs() < 1e-12);
        assert_eq!(fit.rank, 2);
    }
}
