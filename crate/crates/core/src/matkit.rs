//! Dense real matrix kernel shared by every other module.
//!
//! Everything is built on `nalgebra::DMatrix<f64>`. The quadratic-form
//! builders [`l_form`] and [`l_sub_form`] evaluate the congruence
//!
//! ```text
//!   (*)^T diag(X, R, S) [ I    0    0 ]
//!                       [ A11  A12  B1 ]
//!                       [ 0    I    0 ]
//!                       [ A21  A22  B2 ]
//!                       [ 0    0    I ]
//!                       [ C1   C2   D ]
//! ```
//!
//! which every analysis and synthesis inequality in the crate is written in.

use std::ops::Deref;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};

pub type Mat = DMatrix<f64>;

/// Real symmetric matrix. The constructor symmetrizes its input.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMat(Mat);

impl SymMat {
    pub fn new(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(dim_err!("symmetric matrix must be square, got {}x{}", m.nrows(), m.ncols()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("matrix has non-finite entries".into()));
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes `m` as `(m + m^T)/2`; `m` must be square.
    pub fn symmetrize(m: Mat) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        Self(Mat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Mat::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn min_eig(&self) -> f64 {
        min_eig(&self.0)
    }

    pub fn max_eig(&self) -> f64 {
        max_eig(&self.0)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }
}

impl Deref for SymMat {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}

/// Ordered list of block sizes partitioning one matrix dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockSpec {
    pub fn new(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        for &s in sizes {
            offsets.push(acc);
            acc += s;
        }
        offsets.push(acc);
        Self { sizes: sizes.to_vec(), offsets }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    /// Copies block `(i, j)` of `m` partitioned by `rows` x `cols`.
    pub fn block(m: &Mat, rows: &BlockSpec, cols: &BlockSpec, i: usize, j: usize) -> Mat {
        m.view((rows.offset(i), cols.offset(j)), (rows.size(i), cols.size(j))).into_owned()
    }

    /// Checks that `m` is partitioned exactly by `rows` x `cols`.
    pub fn check(m: &Mat, rows: &BlockSpec, cols: &BlockSpec) -> Result<()> {
        if m.nrows() != rows.total() || m.ncols() != cols.total() {
            return Err(dim_err!(
                "matrix {}x{} does not match partition {:?} x {:?}",
                m.nrows(),
                m.ncols(),
                rows.sizes,
                cols.sizes
            ));
        }
        Ok(())
    }
}

/// `M + M^T`.
pub fn he(m: &Mat) -> Result<SymMat> {
    if !m.is_square() {
        return Err(dim_err!("He() needs a square matrix, got {}x{}", m.nrows(), m.ncols()));
    }
    Ok(SymMat(m + m.transpose()))
}

/// The nine blocks of a system with one scheduling channel.
#[derive(Clone, Debug)]
pub struct SysBlocks {
    pub a11: Mat,
    pub a12: Mat,
    pub a21: Mat,
    pub a22: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c1: Mat,
    pub c2: Mat,
    pub d: Mat,
}

impl SysBlocks {
    fn check(&self, with_input: bool) -> Result<(usize, usize, usize)> {
        let n = self.a11.ncols();
        let r = self.a12.ncols();
        let q = self.b1.ncols();
        let ok_rows = self.a11.nrows() == self.a12.nrows()
            && self.a21.nrows() == self.a22.nrows()
            && self.c1.nrows() == self.c2.nrows()
            && self.a21.ncols() == n
            && self.c1.ncols() == n
            && self.a22.ncols() == r
            && self.c2.ncols() == r;
        let ok_input = !with_input
            || (self.b1.nrows() == self.a11.nrows()
                && self.b2.nrows() == self.a21.nrows()
                && self.d.nrows() == self.c1.nrows()
                && self.b2.ncols() == q
                && self.d.ncols() == q);
        if !(ok_rows && ok_input) {
            return Err(dim_err!("inconsistent system blocks"));
        }
        Ok((n, r, q))
    }
}

fn congruence(outer: &Mat, middle: &Mat) -> Result<Mat> {
    if middle.nrows() != outer.nrows() || !middle.is_square() {
        return Err(dim_err!(
            "middle factor {}x{} does not fit outer factor with {} rows",
            middle.nrows(),
            middle.ncols(),
            outer.nrows()
        ));
    }
    Ok(outer.transpose() * middle * outer)
}

/// Full quadratic form over the columns `(x, w, w_p)`.
pub fn l_form(x: &Mat, r: &Mat, s: &Mat, sys: &SysBlocks) -> Result<SymMat> {
    let (n, nr, q) = sys.check(true)?;
    let cols = n + nr + q;
    let mut o1 = Mat::zeros(n + sys.a11.nrows(), cols);
    o1.view_mut((0, 0), (n, n)).fill_with_identity();
    o1.view_mut((n, 0), sys.a11.shape()).copy_from(&sys.a11);
    o1.view_mut((n, n), sys.a12.shape()).copy_from(&sys.a12);
    o1.view_mut((n, n + nr), sys.b1.shape()).copy_from(&sys.b1);

    let mut o2 = Mat::zeros(nr + sys.a21.nrows(), cols);
    o2.view_mut((0, n), (nr, nr)).fill_with_identity();
    o2.view_mut((nr, 0), sys.a21.shape()).copy_from(&sys.a21);
    o2.view_mut((nr, n), sys.a22.shape()).copy_from(&sys.a22);
    o2.view_mut((nr, n + nr), sys.b2.shape()).copy_from(&sys.b2);

    let mut o3 = Mat::zeros(q + sys.c1.nrows(), cols);
    o3.view_mut((0, n + nr), (q, q)).fill_with_identity();
    o3.view_mut((q, 0), sys.c1.shape()).copy_from(&sys.c1);
    o3.view_mut((q, n), sys.c2.shape()).copy_from(&sys.c2);
    o3.view_mut((q, n + nr), sys.d.shape()).copy_from(&sys.d);

    let total = congruence(&o1, x)? + congruence(&o2, r)? + congruence(&o3, s)?;
    Ok(SymMat::symmetrize(total))
}

/// Upper-left `(x, w)` sub-block of [`l_form`]; `B1`, `B2` and `D` are ignored.
///
/// The `S` factor keeps its full size: its leading rows pair with a zero
/// block as tall as `dim(S) - rows(C1)`.
pub fn l_sub_form(x: &Mat, r: &Mat, s: &Mat, sys: &SysBlocks) -> Result<SymMat> {
    let (n, nr, _) = sys.check(false)?;
    let cols = n + nr;
    let mut o1 = Mat::zeros(n + sys.a11.nrows(), cols);
    o1.view_mut((0, 0), (n, n)).fill_with_identity();
    o1.view_mut((n, 0), sys.a11.shape()).copy_from(&sys.a11);
    o1.view_mut((n, n), sys.a12.shape()).copy_from(&sys.a12);

    let mut o2 = Mat::zeros(nr + sys.a21.nrows(), cols);
    o2.view_mut((0, n), (nr, nr)).fill_with_identity();
    o2.view_mut((nr, 0), sys.a21.shape()).copy_from(&sys.a21);
    o2.view_mut((nr, n), sys.a22.shape()).copy_from(&sys.a22);

    let p = sys.c1.nrows();
    if s.nrows() < p {
        return Err(dim_err!("S factor smaller than the C rows"));
    }
    let q = s.nrows() - p;
    let mut o3 = Mat::zeros(q + p, cols);
    o3.view_mut((q, 0), sys.c1.shape()).copy_from(&sys.c1);
    o3.view_mut((q, n), sys.c2.shape()).copy_from(&sys.c2);

    let total = congruence(&o1, x)? + congruence(&o2, r)? + congruence(&o3, s)?;
    Ok(SymMat::symmetrize(total))
}

/// Smallest eigenvalue of the symmetric part of `s`.
pub fn min_eig(s: &Mat) -> f64 {
    if s.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (s + s.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of the symmetric part of `s`.
pub fn max_eig(s: &Mat) -> f64 {
    if s.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    let sym = (s + s.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Largest real part among the eigenvalues of `a`.
pub fn spectral_abscissa(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue modulus of `a`.
pub fn spectral_radius(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solves `A^T X + X A + Q = 0` for Hurwitz `A`.
///
/// Complex Schur form `A = U T U^H` reduces the problem to a triangular
/// Sylvester equation solved column by column.
pub fn solve_lyapunov(a: &Mat, q: &Mat) -> Result<SymMat> {
    let (x, residual) = solve_lyapunov_with_residual(a, q)?;
    let tol = 1e-10 * (1.0 + q.norm()) * (1.0 + x.norm()).max(1.0);
    if residual > tol.max(1e-10 * (1.0 + q.norm())) {
        return Err(Error::Numerical(format!("Lyapunov residual {residual:.3e} too large")));
    }
    Ok(x)
}

/// Like [`solve_lyapunov`] but always returns the residual `||A^T X + X A + Q||_F`.
pub fn solve_lyapunov_with_residual(a: &Mat, q: &Mat) -> Result<(SymMat, f64)> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(dim_err!("Lyapunov needs square A and matching Q"));
    }
    if n == 0 {
        return Ok((SymMat::zeros(0), 0.0));
    }
    let abscissa = spectral_abscissa(a);
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz(abscissa));
    }
    let ac: DMatrix<Complex64> = a.map(|v| Complex64::new(v, 0.0));
    let qc: DMatrix<Complex64> = q.map(|v| Complex64::new(v, 0.0));
    let schur = nalgebra::Schur::try_new(ac, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    let (u, t) = schur.unpack();
    let uh = u.adjoint();
    // T^H Y + Y T = -U^H Q U
    let rhs = -(&uh * &qc * &u);
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        let mut c = rhs.column(j).into_owned();
        for k in 0..j {
            let tkj = t[(k, j)];
            if tkj != Complex64::new(0.0, 0.0) {
                let yk = y.column(k).into_owned();
                c -= yk * tkj;
            }
        }
        // (T^H + t_jj I) y_j = c, T^H lower triangular
        let shift = t[(j, j)];
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut acc = c[i];
            for l in 0..i {
                acc -= t[(l, i)].conj() * col[l];
            }
            let diag = t[(i, i)].conj() + shift;
            if diag.norm() < f64::EPSILON * (1.0 + shift.norm()) {
                return Err(Error::Numerical("Lyapunov operator is singular".into()));
            }
            col[i] = acc / diag;
        }
        for i in 0..n {
            y[(i, j)] = col[i];
        }
    }
    let xc = &u * y * &uh;
    let x = SymMat::symmetrize(xc.map(|z| z.re));
    let residual = (a.transpose() * x.as_mat() + x.as_mat() * a + q).norm();
    Ok((x, residual))
}

/// Stabilizing solution of `A^T X + X A - X G X + Q = 0` with `G, Q >= 0`,
/// via the matrix sign function of the Hamiltonian.
pub fn solve_care(a: &Mat, g: &Mat, q: &Mat) -> Result<SymMat> {
    let n = a.nrows();
    if !a.is_square() || g.shape() != (n, n) || q.shape() != (n, n) {
        return Err(dim_err!("Riccati needs square A and matching G, Q"));
    }
    if n == 0 {
        return Ok(SymMat::zeros(0));
    }
    let mut w = Mat::zeros(2 * n, 2 * n);
    w.view_mut((0, 0), (n, n)).copy_from(a);
    w.view_mut((0, n), (n, n)).copy_from(&(-g));
    w.view_mut((n, 0), (n, n)).copy_from(&(-q));
    w.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let mut converged = false;
    for _ in 0..100 {
        let lu = w.clone().lu();
        let det = lu.determinant().abs();
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Numerical("Hamiltonian has imaginary-axis eigenvalues".into()))?;
        let c = if det > 0.0 && det.is_finite() { det.powf(-1.0 / (2 * n) as f64) } else { 1.0 };
        let next = (&w * c + inv / c) * 0.5;
        let delta = (&next - &w).norm();
        let scale = next.norm();
        w = next;
        if !scale.is_finite() {
            break;
        }
        if delta <= 1e-13 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("sign iteration for the Riccati equation did not converge".into()));
    }
    let i = eye(n);
    let w11 = w.view((0, 0), (n, n)).into_owned();
    let w12 = w.view((0, n), (n, n)).into_owned();
    let w21 = w.view((n, 0), (n, n)).into_owned();
    let w22 = w.view((n, n), (n, n)).into_owned();
    let lhs = vcat(&[&w12, &(w22 + &i)])?;
    let rhs = -vcat(&[&(w11 + &i), &w21])?;
    let x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Numerical(format!("Riccati least squares failed: {e}")))?;
    let x = SymMat::symmetrize(x);
    let res = (a.transpose() * x.as_mat() + x.as_mat() * a - x.as_mat() * g * x.as_mat() + q).norm();
    if res > 1e-8 * (1.0 + q.norm() + x.norm() * a.norm()) {
        return Err(Error::Numerical(format!("Riccati residual {res:.3e} too large")));
    }
    Ok(x)
}

/// Result of a checked inversion.
#[derive(Clone, Debug)]
pub struct Inverse {
    pub inv: Mat,
    pub cond: f64,
}

/// 2-norm condition number.
pub fn cond(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Smallest singular value.
pub fn min_singular_value(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return f64::INFINITY;
    }
    m.clone().singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// LU inverse with condition-number reporting; fails on singular input.
pub fn inverse(m: &Mat, what: &str) -> Result<Inverse> {
    if !m.is_square() {
        return Err(dim_err!("cannot invert non-square {what}"));
    }
    if m.nrows() == 0 {
        return Ok(Inverse { inv: Mat::zeros(0, 0), cond: 1.0 });
    }
    let c = cond(m);
    if !c.is_finite() || c > 1e15 {
        return Err(Error::Numerical(format!("{what} is singular (cond {c:.3e})")));
    }
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("{what} is singular")))?;
    if c > 1e12 {
        log::warn!("{what} is ill-conditioned (cond {c:.3e})");
    }
    Ok(Inverse { inv, cond: c })
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Block-diagonal concatenation.
pub fn blockdiag(parts: &[&Mat]) -> Mat {
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for p in parts {
        out.view_mut((r, c), p.shape()).copy_from(*p);
        r += p.nrows();
        c += p.ncols();
    }
    out
}

/// Assembles a block matrix from a grid; every row of blocks must agree in height
/// and every column in width.
pub fn assemble(grid: &[Vec<&Mat>]) -> Result<Mat> {
    if grid.is_empty() {
        return Ok(Mat::zeros(0, 0));
    }
    let ncols = grid[0].len();
    let heights: Vec<usize> = grid.iter().map(|row| row[0].nrows()).collect();
    let widths: Vec<usize> = grid[0].iter().map(|b| b.ncols()).collect();
    for (i, row) in grid.iter().enumerate() {
        if row.len() != ncols {
            return Err(dim_err!("ragged block grid"));
        }
        for (j, b) in row.iter().enumerate() {
            if b.nrows() != heights[i] || b.ncols() != widths[j] {
                return Err(dim_err!(
                    "block ({i},{j}) is {}x{}, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    heights[i],
                    widths[j]
                ));
            }
        }
    }
    let mut out = Mat::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r = 0;
    for (i, row) in grid.iter().enumerate() {
        let mut c = 0;
        for (j, b) in row.iter().enumerate() {
            out.view_mut((r, c), b.shape()).copy_from(*b);
            c += widths[j];
        }
        r += heights[i];
    }
    Ok(out)
}

pub fn hcat(parts: &[&Mat]) -> Result<Mat> {
    assemble(&[parts.to_vec()])
}

pub fn vcat(parts: &[&Mat]) -> Result<Mat> {
    let grid: Vec<Vec<&Mat>> = parts.iter().map(|p| vec![*p]).collect();
    assemble(&grid)
}

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> Mat {
    Mat::zeros(r, c)
}

#[cfg(test)]
mod tests {

    /// Scalar CARE `2 a x - g x^2 + q = 0` has stabilizing root `(a + sqrt(a^2 + g q)) / g`.
    #[test]
    fn scalar_riccati_root() {
        for &(a, g, q) in &[(1.0, 2.0, 3.0), (-0.5, 1.0, 0.2), (0.0, 4.0, 1.0)] {
            let x = solve_care(&Mat::from_element(1, 1, a), &Mat::from_element(1, 1, g), &Mat::from_element(1, 1, q)).unwrap();
            let want = (a + (a * a + g * q).sqrt()) / g;
            assert!((x[(0, 0)] - want).abs() < 1e-10, "{} vs {want}", x[(0, 0)]);
            assert!(a - g * x[(0, 0)] < 0.0);
        }
    }
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn he_examples() {
        assert_eq!(he(&Mat::zeros(3, 3)).unwrap().as_mat(), &Mat::zeros(3, 3));
        assert_eq!(he(&eye(2)).unwrap().as_mat(), &(eye(2) * 2.0));
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        assert_eq!(he(&m).unwrap().as_mat(), &Mat::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 6.0]));
        assert!(matches!(he(&Mat::zeros(2, 3)), Err(Error::Dimension(_))));
    }

    fn stacked_oracle(x: &Mat, r: &Mat, s: &Mat, sys: &SysBlocks) -> Mat {
        let n = sys.a11.ncols();
        let nr = sys.a12.ncols();
        let q = sys.b1.ncols();
        let i_n = eye(n);
        let i_r = eye(nr);
        let i_q = eye(q);
        let z = |r, c| Mat::zeros(r, c);
        let outer = assemble(&[
            vec![&i_n, &z(n, nr), &z(n, q)],
            vec![&sys.a11, &sys.a12, &sys.b1],
            vec![&z(nr, n), &i_r, &z(nr, q)],
            vec![&sys.a21, &sys.a22, &sys.b2],
            vec![&z(q, n), &z(q, nr), &i_q],
            vec![&sys.c1, &sys.c2, &sys.d],
        ])
        .unwrap();
        let mid = blockdiag(&[x, r, s]);
        outer.transpose() * mid * outer
    }

    fn random_sys(rng: &mut ChaCha8Rng, n: usize, nr: usize, q: usize, p: usize) -> SysBlocks {
        SysBlocks {
            a11: rand_mat(rng, n, n),
            a12: rand_mat(rng, n, nr),
            a21: rand_mat(rng, nr, n),
            a22: rand_mat(rng, nr, nr),
            b1: rand_mat(rng, n, q),
            b2: rand_mat(rng, nr, q),
            c1: rand_mat(rng, p, n),
            c2: rand_mat(rng, p, nr),
            d: rand_mat(rng, p, q),
        }
    }

    fn rand_sym(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        let m = rand_mat(rng, n, n);
        &m + m.transpose()
    }

    #[test]
    fn l_form_zero_dynamics_is_block_diagonal() {
        let sys = SysBlocks {
            a11: zeros(1, 1),
            a12: zeros(1, 1),
            a21: zeros(1, 1),
            a22: zeros(1, 1),
            b1: zeros(1, 1),
            b2: zeros(1, 1),
            c1: zeros(1, 1),
            c2: zeros(1, 1),
            d: zeros(1, 1),
        };
        let l = l_form(&eye(2), &eye(2), &eye(2), &sys).unwrap();
        assert_eq!(l.as_mat(), &eye(3));
    }

    #[test]
    fn l_form_scalar_all_ones() {
        let one = Mat::from_element(1, 1, 1.0);
        let sys = SysBlocks {
            a11: one.clone(),
            a12: one.clone(),
            a21: one.clone(),
            a22: one.clone(),
            b1: one.clone(),
            b2: one.clone(),
            c1: one.clone(),
            c2: one.clone(),
            d: one.clone(),
        };
        // rows of the outer factor: [1 0 0],[1 1 1],[0 1 0],[1 1 1],[0 0 1],[1 1 1]
        // with identity weights the result is sum of outer products
        let expected = Mat::from_row_slice(3, 3, &[4.0, 3.0, 3.0, 3.0, 4.0, 3.0, 3.0, 3.0, 4.0]);
        let l = l_form(&eye(2), &eye(2), &eye(2), &sys).unwrap();
        assert!((l.as_mat() - expected).norm() < 1e-15);
    }

    #[test]
    fn l_form_matches_stacked_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let sys = random_sys(&mut rng, 2, 2, 1, 1);
            let x = rand_sym(&mut rng, 4);
            let r = rand_sym(&mut rng, 4);
            let s = rand_sym(&mut rng, 2);
            let l = l_form(&x, &r, &s, &sys).unwrap();
            let o = stacked_oracle(&x, &r, &s, &sys);
            assert!((l.as_mat() - o).norm() < 1e-12);
        }
    }

    #[test]
    fn l_sub_form_is_upper_left_of_zero_input_l_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut sys = random_sys(&mut rng, 3, 2, 2, 1);
            let x = rand_sym(&mut rng, 6);
            let r = rand_sym(&mut rng, 4);
            let s = rand_sym(&mut rng, 3);
            let sub = l_sub_form(&x, &r, &s, &sys).unwrap();
            sys.b1.fill(0.0);
            sys.b2.fill(0.0);
            sys.d.fill(0.0);
            let full = l_form(&x, &r, &s, &sys).unwrap();
            let ul = full.view((0, 0), (5, 5)).into_owned();
            assert!((sub.as_mat() - ul).norm() < 1e-12);
        }
    }

    #[test]
    fn lyapunov_examples() {
        let x = solve_lyapunov(&(-eye(2)), &(eye(2) * 2.0)).unwrap();
        assert!((x.as_mat() - eye(2)).norm() < 1e-12);

        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let (x, res) = solve_lyapunov_with_residual(&a, &eye(2)).unwrap();
        assert!(res <= 1e-10);
        let direct = a.transpose() * x.as_mat() + x.as_mat() * &a + eye(2);
        assert!(direct.norm() <= 1e-10);

        assert!(matches!(solve_lyapunov(&eye(2), &eye(2)), Err(Error::NotHurwitz(_))));
    }

    #[test]
    fn lyapunov_random_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..7 {
            let m = rand_mat(&mut rng, n, n);
            let shift = spectral_abscissa(&m) + 0.5;
            let a = m - eye(n) * shift;
            let q = rand_sym(&mut rng, n);
            let (_, res) = solve_lyapunov_with_residual(&a, &q).unwrap();
            assert!(res < 1e-10 * (1.0 + q.norm()) * 10.0, "residual {res}");
        }
    }

    /// Characteristic polynomial via Faddeev-LeVerrier, then bisection for the
    /// smallest real root.
    fn min_root_oracle(s: &Mat) -> f64 {
        let n = s.nrows();
        let mut coeffs = vec![1.0];
        let mut m = Mat::zeros(n, n);
        let mut c = 1.0;
        for k in 1..=n {
            m = s * &m + eye(n) * c;
            c = -(s * &m).trace() / k as f64;
            coeffs.push(c);
        }
        let poly = |x: f64| coeffs.iter().fold(0.0, |acc, c| acc * x + c);
        let bound = 1.0 + coeffs.iter().skip(1).map(|c| c.abs()).fold(0.0, f64::max);
        // scan for the first sign change from the left
        let steps = 20000;
        let h = 2.0 * bound / steps as f64;
        let mut lo = -bound;
        let mut flo = poly(lo);
        for i in 1..=steps {
            let hi = -bound + h * i as f64;
            let fhi = poly(hi);
            if flo == 0.0 {
                return lo;
            }
            if flo * fhi <= 0.0 {
                let (mut a, mut b) = (lo, hi);
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if poly(a) * poly(mid) <= 0.0 {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                return 0.5 * (a + b);
            }
            lo = hi;
            flo = fhi;
        }
        panic!("no root found");
    }

    #[test]
    fn min_eig_examples() {
        assert!((min_eig(&eye(3)) - 1.0).abs() < 1e-15);
        let d = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        assert!((min_eig(&d) + 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let s = rand_sym(&mut rng, 5);
            let oracle = min_root_oracle(&s);
            assert!((min_eig(&s) - oracle).abs() < 1e-8, "{} vs {}", min_eig(&s), oracle);
        }
    }

    proptest! {
        #[test]
        fn he_symmetric_and_linear(vals in proptest::collection::vec(-10.0f64..10.0, 18), alpha in -3.0f64..3.0) {
            let a = Mat::from_row_slice(3, 3, &vals[..9]);
            let b = Mat::from_row_slice(3, 3, &vals[9..]);
            let ha = he(&a).unwrap();
            prop_assert_eq!(ha.as_mat(), &ha.transpose());
            let lhs = he(&(&a * alpha + &b)).unwrap();
            let rhs = ha.as_mat() * alpha + he(&b).unwrap().as_mat();
            prop_assert!((lhs.as_mat() - rhs).norm() < 1e-12);
        }

        #[test]
        fn inertia_sign_preserved(vals in proptest::collection::vec(-1.0f64..1.0, 25), tvals in proptest::collection::vec(-1.0f64..1.0, 16)) {
            let m = Mat::from_row_slice(4, 4, &vals[..16]);
            let s = &m + m.transpose();
            let t = Mat::from_row_slice(4, 4, &tvals) + eye(4) * 2.5;
            let e0 = min_eig(&s);
            let e1 = min_eig(&(t.transpose() * &s * &t));
            prop_assume!(e0.abs() > 1e-6);
            prop_assert_eq!(e0 > 0.0, e1 > 0.0);
        }
    }
}
