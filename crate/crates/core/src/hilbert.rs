//! Dense complex linear algebra on small Hilbert spaces and time-ordered
//! propagation.
//!
//! Joint spaces use the convention that the **system index is the outer
//! (slow) index**: the product state `|s> ⊗ |r>` sits at position
//! `s * dim_r + r`, i.e. joint operators are built as `A_S.kron(&B_R)`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::{c, cr, is_finite_c, Real, C};

/// A state vector with complex amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct CVector<T> {
    data: Vec<C<T>>,
}

impl<T: Real> CVector<T> {
    pub fn new(data: Vec<C<T>>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidOperand("empty vector".into()));
        }
        if !data.iter().all(|z| is_finite_c(*z)) {
            return Err(Error::InvalidOperand("non-finite vector entry".into()));
        }
        Ok(Self { data })
    }

    pub fn from_real(values: &[T]) -> Result<Self> {
        Self::new(values.iter().map(|&x| cr(x)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Self {
            data: vec![C::zero(); dim],
        }
    }

    /// Standard basis vector `e_i`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.data[i] = C::one();
        v
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &C<T>> {
        self.data.iter()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Self) -> C<T> {
        debug_assert_eq!(self.dim(), other.dim());
        self.data
            .iter()
            .zip(&other.data)
            .fold(C::zero(), |acc, (a, b)| acc + a.conj() * b)
    }

    pub fn norm_sqr(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
    }

    pub fn norm(&self) -> T {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, factor: C<T>) -> Self {
        Self {
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n <= T::min_positive_value() || !n.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        Ok(self.scale(cr(T::one() / n)))
    }

    pub fn kron(&self, other: &Self) -> Self {
        let mut data = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.data {
            for b in &other.data {
                data.push(a * b);
            }
        }
        Self { data }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((a - b).norm()))
    }
}

impl<T> Index<usize> for CVector<T> {
    type Output = C<T>;
    fn index(&self, i: usize) -> &C<T> {
        &self.data[i]
    }
}

impl<T: Real> Add for &CVector<T> {
    type Output = CVector<T>;
    fn add(self, rhs: Self) -> CVector<T> {
        assert_eq!(self.dim(), rhs.dim());
        CVector {
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<T: Real> Sub for &CVector<T> {
    type Output = CVector<T>;
    fn sub(self, rhs: Self) -> CVector<T> {
        assert_eq!(self.dim(), rhs.dim());
        CVector {
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Square complex matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix<T> {
    dim: usize,
    data: Vec<C<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "matrix dimension must be positive");
        Self {
            dim,
            data: vec![C::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = C::one();
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<C<T>>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidOperand("empty matrix".into()));
        }
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionError {
                    expected: dim,
                    found: row.len(),
                    context: "matrix row length",
                });
            }
            data.extend(row);
        }
        let m = Self { dim, data };
        if !m.is_finite() {
            return Err(Error::InvalidOperand("non-finite matrix entry".into()));
        }
        Ok(m)
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&x| cr(T::lit(x))).collect())
                .collect(),
        )
    }

    pub fn from_diag(diag: &[C<T>]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = *d;
        }
        m
    }

    /// `|ket><bra|`.
    pub fn outer(ket: &CVector<T>, bra: &CVector<T>) -> Self {
        assert_eq!(ket.dim(), bra.dim());
        Self::from_fn(ket.dim(), |i, j| ket[i] * bra[j].conj())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| is_finite_c(*z))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C<T> {
        (0..self.dim).fold(C::zero(), |acc, i| acc + self[(i, i)])
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> T {
        (0..self.dim)
            .map(|j| (0..self.dim).fold(T::zero(), |acc, i| acc + self[(i, j)].norm()))
            .fold(T::zero(), T::max)
    }

    pub fn scale(&self, factor: C<T>) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn scale_real(&self, factor: T) -> Self {
        self.scale(cr(factor))
    }

    pub fn apply(&self, v: &CVector<T>) -> CVector<T> {
        assert_eq!(self.dim, v.dim(), "matrix-vector dimension mismatch");
        let data = (0..self.dim)
            .map(|i| (0..self.dim).fold(C::zero(), |acc, j| acc + self[(i, j)] * v[j]))
            .collect();
        CVector { data }
    }

    /// `<psi|self|psi>` (no normalization).
    pub fn expectation(&self, psi: &CVector<T>) -> C<T> {
        psi.inner(&self.apply(psi))
    }

    pub fn kron(&self, other: &Self) -> Self {
        let (n, m) = (self.dim, other.dim);
        Self::from_fn(n * m, |i, j| self[(i / m, j / m)] * other[(i % m, j % m)])
    }

    /// `(M + M†)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.dim, |i, j| (self[(i, j)] + self[(j, i)].conj()).scale(T::lit(0.5)))
    }

    /// `(M - M†)/2`.
    pub fn anti_hermitian_part(&self) -> Self {
        Self::from_fn(self.dim, |i, j| (self[(i, j)] - self[(j, i)].conj()).scale(T::lit(0.5)))
    }

    /// Hermitian within `tol` relative Frobenius distance (absolute below unit norm).
    pub fn is_hermitian(&self, tol: T) -> bool {
        let scale = self.frobenius_norm().max(T::one());
        self.anti_hermitian_part().frobenius_norm() <= tol * scale
    }

    pub fn is_anti_hermitian(&self, tol: T) -> bool {
        let scale = self.frobenius_norm().max(T::one());
        self.hermitian_part().frobenius_norm() <= tol * scale
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        &(self * other) + &(other * self)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((a - b).norm()))
    }

    /// Frobenius distance `||self - other||_F`.
    pub fn distance(&self, other: &Self) -> T {
        (self - other).frobenius_norm()
    }
}

impl<T> Index<(usize, usize)> for CMatrix<T> {
    type Output = C<T>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C<T> {
        &self.data[i * self.dim + j]
    }
}

impl<T> IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<T> {
        &mut self.data[i * self.dim + j]
    }
}

impl<T: Real> Add for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn add(self, rhs: Self) -> CMatrix<T> {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<T: Real> Sub for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn sub(self, rhs: Self) -> CMatrix<T> {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl<T: Real> Neg for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn neg(self) -> CMatrix<T> {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().map(|a| -a).collect(),
        }
    }
}

impl<T: Real> Mul for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn mul(self, rhs: Self) -> CMatrix<T> {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        let n = self.dim;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] = out.data[i * n + j] + a * rhs.data[k * n + j];
                }
            }
        }
        out
    }
}

/// Eigen-decomposition `M = V diag(values) V†` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen<T> {
    /// Eigenvalues in ascending order.
    pub values: Vec<T>,
    /// Eigenvectors as columns, ordered like `values`.
    pub vectors: CMatrix<T>,
}

impl<T: Real> HermitianEigen<T> {
    /// `V diag(f(values)) V†`.
    pub fn map(&self, f: impl Fn(T) -> C<T>) -> CMatrix<T> {
        let n = self.vectors.dim();
        let fv: Vec<C<T>> = self.values.iter().map(|&x| f(x)).collect();
        CMatrix::from_fn(n, |i, j| {
            (0..n).fold(C::zero(), |acc, k| {
                acc + self.vectors[(i, k)] * fv[k] * self.vectors[(j, k)].conj()
            })
        })
    }

    pub fn vector(&self, k: usize) -> CVector<T> {
        let n = self.vectors.dim();
        CVector {
            data: (0..n).map(|i| self.vectors[(i, k)]).collect(),
        }
    }
}

/// Cyclic complex Jacobi eigensolver for Hermitian matrices.
pub fn hermitian_eigen<T: Real>(m: &CMatrix<T>) -> Result<HermitianEigen<T>> {
    if !m.is_finite() {
        return Err(Error::InvalidOperand("non-finite matrix".into()));
    }
    if !m.is_hermitian(T::tol(1e-10)) {
        return Err(Error::InvalidOperand("matrix is not Hermitian".into()));
    }
    let n = m.dim();
    let mut a = m.hermitian_part();
    let mut v = CMatrix::identity(n);
    let scale = a.frobenius_norm();
    let eps = T::epsilon();

    for _sweep in 0..100 {
        let off = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .fold(T::zero(), |acc, (i, j)| acc + a[(i, j)].norm_sqr())
            .sqrt();
        if off <= eps * scale || off <= T::min_positive_value() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let b = a[(p, q)];
                let babs = b.norm();
                if babs <= T::min_positive_value() {
                    continue;
                }
                let phase = b.unscale(babs);
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let zeta = (aqq - app) / (babs + babs);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let t = if zeta == T::zero() { T::one() } else { t };
                let cs = T::one() / (T::one() + t * t).sqrt();
                let sn = t * cs;
                // G = [[c, s], [-s e^{-i phi}, c e^{-i phi}]] on (p, q).
                let g_pp = cr(cs);
                let g_pq = cr(sn);
                let g_qp = phase.conj() * (-sn);
                let g_qq = phase.conj() * cs;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = akp * g_pp + akq * g_qp;
                    a[(k, q)] = akp * g_pq + akq * g_qq;
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vkp * g_pp + vkq * g_qp;
                    v[(k, q)] = vkp * g_pq + vkq * g_qq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = g_pp.conj() * apk + g_qp.conj() * aqk;
                    a[(q, k)] = g_pq.conj() * apk + g_qq.conj() * aqk;
                }
                a[(p, q)] = C::zero();
                a[(q, p)] = C::zero();
                a[(p, p)] = cr(a[(p, p)].re);
                a[(q, q)] = cr(a[(q, q)].re);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.partial_cmp(&a[(j, j)].re).unwrap());
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, |i, k| v[(i, order[k])]);
    Ok(HermitianEigen { values, vectors })
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues<T: Real>(m: &CMatrix<T>) -> Result<Vec<T>> {
    Ok(hermitian_eigen(m)?.values)
}

/// Solves `a x = b` for square `b` by LU with partial pivoting.
pub fn solve<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<CMatrix<T>> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::DimensionError {
            expected: n,
            found: b.dim(),
            context: "linear solve right-hand side",
        });
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| lu[(i, col)].norm().partial_cmp(&lu[(j, col)].norm()).unwrap())
            .unwrap();
        if lu[(pivot, col)].norm() <= T::min_positive_value() {
            return Err(Error::InvalidOperand("singular matrix in linear solve".into()));
        }
        if pivot != col {
            for j in 0..n {
                let tmp = lu[(col, j)];
                lu[(col, j)] = lu[(pivot, j)];
                lu[(pivot, j)] = tmp;
                let tmp = x[(col, j)];
                x[(col, j)] = x[(pivot, j)];
                x[(pivot, j)] = tmp;
            }
        }
        let d = lu[(col, col)];
        for i in (col + 1)..n {
            let f = lu[(i, col)] / d;
            if f.is_zero() {
                continue;
            }
            for j in col..n {
                let v = lu[(col, j)];
                lu[(i, j)] = lu[(i, j)] - f * v;
            }
            for j in 0..n {
                let v = x[(col, j)];
                x[(i, j)] = x[(i, j)] - f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let d = lu[(col, col)];
        for j in 0..n {
            let mut s = x[(col, j)];
            for k in (col + 1)..n {
                s = s - lu[(col, k)] * x[(k, j)];
            }
            x[(col, j)] = s / d;
        }
    }
    Ok(x)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn pade13_expm<T: Real>(m: &CMatrix<T>) -> Result<CMatrix<T>> {
    let n = m.dim();
    let norm = m.norm_one();
    let squarings = if norm > T::lit(THETA13) {
        (norm / T::lit(THETA13)).log2().ceil().to_i32().unwrap_or(0).max(0)
    } else {
        0
    };
    let a = m.scale_real(T::lit(0.5).powi(squarings));
    let b: Vec<C<T>> = PADE13.iter().map(|&x| cr(T::lit(x))).collect();
    let id = CMatrix::identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let lin = |terms: &[(C<T>, &CMatrix<T>)]| {
        terms
            .iter()
            .fold(CMatrix::zeros(n), |acc, (k, mat)| &acc + &mat.scale(*k))
    };
    let inner_u = lin(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)]);
    let u_poly = &(&a6 * &inner_u) + &lin(&[(b[7], &a6), (b[5], &a4), (b[3], &a2), (b[1], &id)]);
    let u = &a * &u_poly;
    let inner_v = lin(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)]);
    let v = &(&a6 * &inner_v) + &lin(&[(b[6], &a6), (b[4], &a4), (b[2], &a2), (b[0], &id)]);
    let mut r = solve(&(&v - &u), &(&v + &u))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Matrix exponential.
///
/// Hermitian and anti-Hermitian inputs go through the Hermitian eigensolver
/// (anti-Hermitian inputs then give unitary results to rounding); anything
/// else uses Padé-13 scaling and squaring.
pub fn matexp<T: Real>(m: &CMatrix<T>) -> Result<CMatrix<T>> {
    if !m.is_finite() {
        return Err(Error::InvalidOperand("non-finite matrix in matexp".into()));
    }
    let tol = T::tol(1e-13);
    if m.is_hermitian(tol) {
        let eig = hermitian_eigen(m)?;
        return Ok(eig.map(|x| cr(x.exp())));
    }
    if m.is_anti_hermitian(tol) {
        // M = -i H with H = i M Hermitian.
        let h = m.scale(c(T::zero(), T::one()));
        let eig = hermitian_eigen(&h)?;
        return Ok(eig.map(|x| Complex::new(x.cos(), -x.sin())));
    }
    pade13_expm(m)
}

/// `exp(-i H tau)` for Hermitian `H`.
pub fn unitary_step<T: Real>(h: &CMatrix<T>, tau: T) -> Result<CMatrix<T>> {
    let eig = hermitian_eigen(h)?;
    Ok(eig.map(|x| {
        let phi = x * tau;
        Complex::new(phi.cos(), -phi.sin())
    }))
}

/// Uniform time grid with `n_steps + 1` points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid<T> {
    t_start: T,
    t_end: T,
    n_steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t_start: T, t_end: T, n_steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_end <= t_start {
            return Err(Error::InvalidParameter(format!(
                "time grid needs finite t_end > t_start, got [{t_start}, {t_end}]"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter("time grid needs n_steps >= 1".into()));
        }
        Ok(Self {
            t_start,
            t_end,
            n_steps,
        })
    }

    /// `[0, periods * 2 pi / omega]` with `n_steps` steps.
    pub fn periods(omega: T, periods: T, n_steps: usize) -> Result<Self> {
        Self::new(T::zero(), periods * T::TAU() / omega, n_steps)
    }

    pub fn t_start(&self) -> T {
        self.t_start
    }

    pub fn t_end(&self) -> T {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid points, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> T {
        (self.t_end - self.t_start) / T::from_usize(self.n_steps).unwrap()
    }

    pub fn time(&self, k: usize) -> T {
        if k == self.n_steps {
            return self.t_end;
        }
        let frac = T::from_usize(k).unwrap() / T::from_usize(self.n_steps).unwrap();
        self.t_start + (self.t_end - self.t_start) * frac
    }

    /// Midpoint of step `k` (between points `k` and `k + 1`).
    pub fn midpoint(&self, k: usize) -> T {
        (self.time(k) + self.time(k + 1)) * T::lit(0.5)
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }
}

/// Time-dependent operator `t -> M(t)`.
#[derive(Clone)]
pub struct Schedule<T> {
    dim: usize,
    f: Arc<dyn Fn(T) -> CMatrix<T> + Send + Sync>,
}

impl<T: Real> Schedule<T> {
    pub fn constant(m: CMatrix<T>) -> Self {
        let dim = m.dim();
        Self {
            dim,
            f: Arc::new(move |_| m.clone()),
        }
    }

    pub fn from_fn(dim: usize, f: impl Fn(T) -> CMatrix<T> + Send + Sync + 'static) -> Self {
        Self { dim, f: Arc::new(f) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: T) -> CMatrix<T> {
        let m = (self.f)(t);
        debug_assert_eq!(m.dim(), self.dim);
        m
    }

    pub fn sample(&self, grid: &TimeGrid<T>) -> Vec<CMatrix<T>> {
        grid.times().into_iter().map(|t| self.eval(t)).collect()
    }

    /// Samples on the grid, checking Hermiticity to `1e-12` relative Frobenius.
    pub fn sample_hermitian(&self, grid: &TimeGrid<T>) -> Result<Vec<CMatrix<T>>> {
        grid.times()
            .into_iter()
            .map(|t| {
                let m = self.eval(t);
                check_hamiltonian(&m, t)?;
                Ok(m)
            })
            .collect()
    }

    /// `t -> factor * M(t)`.
    pub fn scaled(&self, factor: C<T>) -> Self {
        let f = self.f.clone();
        Self::from_fn(self.dim, move |t| f(t).scale(factor))
    }

    /// `t -> M(t) + N(t)`.
    pub fn plus(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let (f, g) = (self.f.clone(), other.f.clone());
        Self::from_fn(self.dim, move |t| &f(t) + &g(t))
    }
}

impl<T> fmt::Debug for Schedule<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Schedule")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

fn check_hamiltonian<T: Real>(m: &CMatrix<T>, t: T) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::InvalidOperand(format!("non-finite Hamiltonian at t = {t}")));
    }
    if !m.is_hermitian(T::tol(1e-12)) {
        return Err(Error::InvalidOperand(format!("Hamiltonian not Hermitian at t = {t}")));
    }
    Ok(())
}

/// `U(t_k)` for every grid point, as the ordered product of midpoint step
/// exponentials `exp(-i H(t_{k+1/2}) dt)`. `U(t_0) = 1`.
pub fn time_ordered_propagator<T: Real>(h: &Schedule<T>, grid: &TimeGrid<T>) -> Result<Vec<CMatrix<T>>> {
    let dt = grid.dt();
    let mut out = Vec::with_capacity(grid.len());
    let mut u = CMatrix::identity(h.dim());
    out.push(u.clone());
    for k in 0..grid.n_steps() {
        let tm = grid.midpoint(k);
        let hm = h.eval(tm);
        check_hamiltonian(&hm, tm)?;
        let step = unitary_step(&hm, dt)?;
        u = &step * &u;
        out.push(u.clone());
    }
    Ok(out)
}

/// Like [`time_ordered_propagator`] for a generator that need not be
/// Hermitian (e.g. an effective no-jump Hamiltonian `H - i K`).
pub fn time_ordered_evolution<T: Real>(generator: &Schedule<T>, grid: &TimeGrid<T>) -> Result<Vec<CMatrix<T>>> {
    let dt = grid.dt();
    let minus_i_dt = c(T::zero(), -dt);
    let mut out = Vec::with_capacity(grid.len());
    let mut u = CMatrix::identity(generator.dim());
    out.push(u.clone());
    for k in 0..grid.n_steps() {
        let gm = generator.eval(grid.midpoint(k));
        let step = matexp(&gm.scale(minus_i_dt))?;
        u = &step * &u;
        out.push(u.clone());
    }
    Ok(out)
}

fn split_dims<T: Real>(joint: &CMatrix<T>, dim_r: usize) -> Result<usize> {
    if dim_r == 0 || !joint.dim().is_multiple_of(dim_r) {
        return Err(Error::DimensionError {
            expected: dim_r,
            found: joint.dim(),
            context: "joint dimension not divisible by reservoir dimension",
        });
    }
    Ok(joint.dim() / dim_r)
}

/// System-space operator `<bra_R| U |ket_R>`.
pub fn partial_inner<T: Real>(bra_r: &CVector<T>, u: &CMatrix<T>, ket_r: &CVector<T>) -> Result<CMatrix<T>> {
    if bra_r.dim() != ket_r.dim() {
        return Err(Error::DimensionError {
            expected: bra_r.dim(),
            found: ket_r.dim(),
            context: "reservoir bra/ket",
        });
    }
    let dim_r = bra_r.dim();
    let dim_s = split_dims(u, dim_r)?;
    Ok(CMatrix::from_fn(dim_s, |s, sp| {
        let mut acc = C::zero();
        for i in 0..dim_r {
            let b = bra_r[i].conj();
            if b.is_zero() {
                continue;
            }
            for j in 0..dim_r {
                acc = acc + b * u[(s * dim_r + i, sp * dim_r + j)] * ket_r[j];
            }
        }
        acc
    }))
}

/// `Tr_R(rho)` for a joint operator with reservoir dimension `dim_r`.
pub fn partial_trace_reservoir<T: Real>(rho: &CMatrix<T>, dim_r: usize) -> Result<CMatrix<T>> {
    let dim_s = split_dims(rho, dim_r)?;
    Ok(CMatrix::from_fn(dim_s, |s, sp| {
        (0..dim_r).fold(C::zero(), |acc, r| acc + rho[(s * dim_r + r, sp * dim_r + r)])
    }))
}

/// Pauli matrices in the ordered basis `(|0>, |1>)`.
pub mod pauli {
    use super::CMatrix;
    use crate::scalar::{c, Real};
    use num_traits::{One, Zero};

    pub fn x<T: Real>() -> CMatrix<T> {
        CMatrix::from_fn(2, |i, j| if i != j { One::one() } else { Zero::zero() })
    }

    pub fn y<T: Real>() -> CMatrix<T> {
        CMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 1) => c(T::zero(), -T::one()),
            (1, 0) => c(T::zero(), T::one()),
            _ => Zero::zero(),
        })
    }

    /// `diag(1, -1)`.
    pub fn z<T: Real>() -> CMatrix<T> {
        CMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) => One::one(),
            (1, 1) => -<crate::scalar::C<T> as One>::one(),
            _ => Zero::zero(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &CMatrix<f64>, b: &CMatrix<f64>, tol: f64) -> bool {
        a.max_abs_diff(b) <= tol
    }

    fn series_exp(m: &CMatrix<f64>) -> CMatrix<f64> {
        // Plain Taylor series; fine for ||m|| of order a few.
        let n = m.dim();
        let mut term = CMatrix::identity(n);
        let mut sum = CMatrix::identity(n);
        for k in 1..80 {
            term = (&term * m).scale_real(1.0 / k as f64);
            sum = &sum + &term;
        }
        sum
    }

    fn random_hermitian(seed: &[f64]) -> CMatrix<f64> {
        let n = 3;
        let mut k = 0;
        let mut next = || {
            k += 1;
            seed[(k - 1) % seed.len()]
        };
        let a = CMatrix::from_fn(n, |_, _| c(next(), next()));
        a.hermitian_part()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let z = CMatrix::<f64>::zeros(3);
        assert!(close(&matexp(&z).unwrap(), &CMatrix::identity(3), 1e-15));
    }

    #[test]
    fn exp_of_diagonal() {
        let d = CMatrix::<f64>::from_diag(&[cr(0.3), cr(-1.2), c(0.5, 2.0)]);
        let e = matexp(&d).unwrap();
        let expect = CMatrix::from_diag(&[cr(0.3f64.exp()), cr((-1.2f64).exp()), c(0.5, 2.0).exp()]);
        assert!(close(&e, &expect, 1e-13));
    }

    #[test]
    fn exp_of_rotation_generator_matches_series() {
        // exp(-i pi sigma_x / 2) = -i sigma_x
        let m = pauli::x::<f64>().scale(c(0.0, -std::f64::consts::FRAC_PI_2));
        let e = matexp(&m).unwrap();
        let oracle = series_exp(&m);
        let expect = pauli::x::<f64>().scale(c(0.0, -1.0));
        assert!(close(&e, &oracle, 1e-12));
        assert!(close(&e, &expect, 1e-12));
    }

    #[test]
    fn pade_path_matches_series_for_general_matrix() {
        let m = CMatrix::<f64>::from_rows(vec![
            vec![c(0.1, 0.3), c(-1.2, 0.0), c(0.4, -0.7)],
            vec![c(0.9, 0.2), c(-0.3, 0.5), c(0.0, 1.1)],
            vec![c(-0.5, 0.0), c(0.2, 0.2), c(0.6, -0.4)],
        ])
        .unwrap();
        assert!(close(&matexp(&m).unwrap(), &series_exp(&m), 1e-12));
        // Large norm exercises the squaring phase.
        let big = m.scale_real(7.0);
        let e = matexp(&big).unwrap();
        let half = matexp(&m.scale_real(3.5)).unwrap();
        let rel = e.distance(&(&half * &half)) / e.frobenius_norm();
        assert!(rel < 1e-12, "relative error {rel}");
    }

    #[test]
    fn matexp_rejects_non_finite() {
        let mut m = CMatrix::<f64>::zeros(2);
        m[(0, 1)] = cr(f64::NAN);
        assert!(matches!(matexp(&m), Err(Error::InvalidOperand(_))));
    }

    #[test]
    fn jacobi_reconstructs_hermitian() {
        let h = random_hermitian(&[0.3, -1.1, 0.7, 0.25, 2.0, -0.4, 0.9, 1.3, -0.2]);
        let eig = hermitian_eigen(&h).unwrap();
        let back = eig.map(cr);
        assert!(close(&back, &h, 1e-13));
        let vv = &eig.vectors.adjoint() * &eig.vectors;
        assert!(close(&vv, &CMatrix::identity(3), 1e-13));
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eigenvalues_of_pauli_y() {
        let v = hermitian_eigenvalues(&pauli::y::<f64>()).unwrap();
        assert!((v[0] + 1.0).abs() < 1e-14 && (v[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn grid_basics() {
        let g = TimeGrid::new(0.0, 2.0, 4).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.dt(), 0.5);
        assert_eq!(g.time(4), 2.0);
        assert_eq!(g.midpoint(1), 0.75);
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn propagator_zero_hamiltonian_is_identity() {
        let g = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let us = time_ordered_propagator(&Schedule::constant(CMatrix::<f64>::zeros(2)), &g).unwrap();
        assert!(us.iter().all(|u| close(u, &CMatrix::identity(2), 0.0)));
    }

    #[test]
    fn propagator_constant_h_is_exact() {
        let h = random_hermitian(&[0.2, 0.5, -0.3, 1.0, 0.1, -0.8, 0.4]);
        let g = TimeGrid::new(0.0, 3.0, 64).unwrap();
        let us = time_ordered_propagator(&Schedule::constant(h.clone()), &g).unwrap();
        let exact = unitary_step(&h, 3.0).unwrap();
        assert!(close(us.last().unwrap(), &exact, 1e-12));
    }

    #[test]
    fn precession_over_one_period_is_minus_identity() {
        // H_S = -(w/2) sigma_z with sigma_z = |e><e| - |g><g| = diag(-1, 1) in (g, e).
        let w = 1.7;
        let sz = pauli::z::<f64>().scale_real(-1.0);
        let h = sz.scale_real(-w / 2.0);
        let g = TimeGrid::periods(w, 1.0, 4096).unwrap();
        let u = time_ordered_propagator(&Schedule::constant(h), &g).unwrap();
        let minus_one = CMatrix::identity(2).scale_real(-1.0);
        assert!(close(u.last().unwrap(), &minus_one, 1e-12));
    }

    #[test]
    fn propagator_is_second_order() {
        // H(t) = sigma_z + t sigma_x: midpoint product error drops ~4x per halving.
        let h = Schedule::from_fn(2, |t: f64| &pauli::z::<f64>() + &pauli::x::<f64>().scale_real(t));
        let at = |n| {
            let g = TimeGrid::new(0.0, 2.0, n).unwrap();
            time_ordered_propagator(&h, &g).unwrap().pop().unwrap()
        };
        let reference = at(4 * 256);
        let e1 = at(64).distance(&reference);
        let e2 = at(128).distance(&reference);
        let ratio = e1 / e2;
        assert!((3.5..4.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn nonhermitian_schedule_rejected_by_unitary_propagator() {
        let mut m = CMatrix::<f64>::zeros(2);
        m[(0, 1)] = cr(1.0);
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert!(time_ordered_propagator(&Schedule::constant(m), &g).is_err());
    }

    #[test]
    fn nonunitary_evolution_matches_exponential() {
        let gen = CMatrix::<f64>::from_diag(&[c(0.5, 0.0), c(-0.5, -0.2)]);
        let g = TimeGrid::new(0.0, 2.0, 32).unwrap();
        let us = time_ordered_evolution(&Schedule::constant(gen.clone()), &g).unwrap();
        let expect = matexp(&gen.scale(c(0.0, -2.0))).unwrap();
        assert!(close(us.last().unwrap(), &expect, 1e-12));
    }

    #[test]
    fn partial_inner_uncoupled_and_identity() {
        let us = pauli::x::<f64>().scale(c(0.0, 1.0));
        let joint = us.kron(&CMatrix::identity(3));
        let r = CVector::basis(3, 1);
        assert!(close(&partial_inner(&r, &joint, &r).unwrap(), &us, 0.0));

        let b = CVector::from_real(&[0.6, 0.8, 0.0]).unwrap();
        let out = partial_inner(&b, &CMatrix::identity(6), &r).unwrap();
        let expect = CMatrix::identity(2).scale(b.inner(&r));
        assert!(close(&out, &expect, 1e-15));
    }

    #[test]
    fn partial_inner_matches_index_contraction() {
        // Explicit contraction oracle on a 2x2 system, 2-level reservoir.
        let h = random_hermitian(&[0.1, 0.7, -0.4, 0.3, 0.9, -1.3, 0.5, 0.2, 0.6, -0.1, 0.8]);
        let h4 = h.kron(&pauli::x::<f64>()); // 6x6; take the leading 4x4 block structure below
        let h4 = CMatrix::from_fn(4, |i, j| h4[(i, j)]).hermitian_part();
        let u = unitary_step(&h4, 0.7).unwrap();
        let bra = CVector::new(vec![c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
        let ket = CVector::new(vec![c(0.0, 1.0), c(0.0, 0.0)]).unwrap();
        let got = partial_inner(&bra, &u, &ket).unwrap();
        for s in 0..2 {
            for sp in 0..2 {
                let mut acc = C::zero();
                for i in 0..2 {
                    for j in 0..2 {
                        acc += bra[i].conj() * u[(2 * s + i, 2 * sp + j)] * ket[j];
                    }
                }
                assert!((got[(s, sp)] - acc).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn partial_inner_dimension_error() {
        let r = CVector::<f64>::basis(3, 0);
        assert!(matches!(
            partial_inner(&r, &CMatrix::identity(4), &r),
            Err(Error::DimensionError { .. })
        ));
    }

    #[test]
    fn f32_exponential_is_unitary() {
        let h = CMatrix::<f32>::from_real_rows(&[&[0.3, 1.0], &[1.0, -0.2]]).unwrap();
        let u = unitary_step(&h, 2.0f32).unwrap();
        let d = (&u.adjoint() * &u).distance(&CMatrix::identity(2));
        assert!(d < 1e-5);
    }

    fn arb_hermitian(n: usize) -> impl Strategy<Value = CMatrix<f64>> {
        prop::collection::vec(-2.0f64..2.0, 2 * n * n).prop_map(move |v| {
            CMatrix::from_fn(n, |i, j| c(v[2 * (i * n + j)], v[2 * (i * n + j) + 1])).hermitian_part()
        })
    }

    proptest! {
        #[test]
        fn anti_hermitian_exponential_is_unitary(h in arb_hermitian(4), tau in 0.0f64..3.0) {
            let u = matexp(&h.scale(c(0.0, -tau))).unwrap();
            let d = (&u.adjoint() * &u).distance(&CMatrix::identity(4));
            prop_assert!(d < 1e-10);
        }

        #[test]
        fn completeness_over_any_reservoir_basis(h in arb_hermitian(4), tau in 0.0f64..2.0, ang in 0.0f64..6.2) {
            let u = unitary_step(&h, tau).unwrap();
            let r = CVector::new(vec![c(ang.cos(), 0.0), c(0.0, ang.sin())]).unwrap();
            let b0 = CVector::new(vec![c(ang.cos(), 0.0), c(0.0, ang.sin())]).unwrap();
            let b1 = CVector::new(vec![c(0.0, ang.sin()), c(ang.cos(), 0.0)]).unwrap();
            let mut sum = CMatrix::zeros(2);
            for b in [&b0, &b1] {
                let k = partial_inner(b, &u, &r).unwrap();
                sum = &sum + &(&k.adjoint() * &k);
            }
            prop_assert!(sum.distance(&CMatrix::identity(2)) < 1e-10);
        }
    }
}
