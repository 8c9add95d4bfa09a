use crate::error::{validation, Result};
use crate::linalg::{Matrix, WhitenedMatrix};
use crate::scalar::Real;

/// Largest order accepted by [`sym_eig`].
pub const MAX_ORDER: usize = 4096;
/// Sweep cap for the cyclic Jacobi iteration.
pub const MAX_SWEEPS: usize = 64;
/// Convergence target on the off-diagonal Frobenius mass relative to `||M||_F`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
/// Orders up to this use cyclic Jacobi under [`EigenMethod::Auto`].
pub const JACOBI_MAX_ORDER: usize = 32;
/// Iteration cap per eigenvalue for the implicit QL route.
pub const QL_MAX_ITERATIONS: usize = 64;
/// Asymmetry beyond this (scaled by `max(1, max|m_ij|)`) is rejected.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Square matrix that is exactly symmetric, plus the ridge already added to
/// its diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix<T> {
    m: Matrix<T>,
    ridge: T,
}

impl<T: Real> SymmetricMatrix<T> {
    /// Accepts `m` if it is symmetric to within [`SYMMETRY_TOL`] and stores
    /// its exact symmetrization. `ridge` records any regularizer already
    /// folded into `m` and must be nonnegative.
    pub fn new(m: Matrix<T>, ridge: T) -> Result<Self> {
        if !m.is_square() {
            return Err(validation(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if m.rows() == 0 {
            return Err(validation("symmetric matrix must be nonempty"));
        }
        if m.data().iter().any(|v| !v.is_finite()) {
            return Err(validation("symmetric matrix has non-finite entries"));
        }
        if !(ridge >= T::zero()) {
            return Err(validation(format!("ridge must be nonnegative, got {ridge}")));
        }
        let tol = T::lit(SYMMETRY_TOL) * m.max_abs().max(T::one());
        let asym = m.asymmetry();
        if asym > tol {
            return Err(validation(format!(
                "matrix is not symmetric: max |m_ij - m_ji| = {asym}"
            )));
        }
        Ok(Self {
            m: m.symmetrized(),
            ridge,
        })
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.m
    }

    pub fn ridge(&self) -> T {
        self.ridge
    }

    pub fn order(&self) -> usize {
        self.m.rows()
    }
}

/// How the ridge term of the correlation matrix is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ridge {
    /// Use exactly this `lambda`.
    Fixed(f64),
    /// `lambda = factor * trace(Z Z^T) / C`.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-4)
    }
}

impl Ridge {
    pub fn resolve<T: Real>(self, gram: &Matrix<T>) -> Result<T> {
        let lambda = match self {
            Ridge::Fixed(l) => T::lit(l),
            Ridge::Relative(f) => {
                if !(f >= 0.0) {
                    return Err(validation(format!("relative ridge must be nonnegative, got {f}")));
                }
                T::lit(f) * gram.trace() / T::from_usize(gram.rows().max(1)).unwrap()
            }
        };
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(validation(format!("ridge lambda must be nonnegative, got {lambda}")));
        }
        Ok(lambda)
    }
}

/// `M = Z Z^T + lambda I`, exactly symmetric.
pub fn regularized_correlation<T: Real>(
    z: &WhitenedMatrix<T>,
    lambda: T,
) -> Result<SymmetricMatrix<T>> {
    if !(lambda >= T::zero()) || !lambda.is_finite() {
        return Err(validation(format!("ridge lambda must be nonnegative, got {lambda}")));
    }
    let mut m = z.matrix().gram();
    for i in 0..m.rows() {
        let d = m.get(i, i) + lambda;
        m.set(i, i, d);
    }
    SymmetricMatrix::new(m, lambda)
}

/// Correlation matrix with the ridge picked by `ridge`.
pub fn regularized_correlation_with<T: Real>(
    z: &WhitenedMatrix<T>,
    ridge: Ridge,
) -> Result<SymmetricMatrix<T>> {
    let gram = z.matrix().gram();
    let lambda = ridge.resolve(&gram)?;
    let mut m = gram;
    for i in 0..m.rows() {
        let d = m.get(i, i) + lambda;
        m.set(i, i, d);
    }
    SymmetricMatrix::new(m, lambda)
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct EigenBasis<T> {
    values: Vec<T>,
    /// Columns are unit eigenvectors aligned with `values`.
    vectors: Matrix<T>,
    method: EigenMethod,
    iterations: usize,
}

/// Eigensolver selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EigenMethod {
    /// Cyclic Jacobi up to [`JACOBI_MAX_ORDER`], tridiagonal QL above.
    #[default]
    Auto,
    /// Cyclic Jacobi rotations.
    Jacobi,
    /// Householder tridiagonalization followed by implicit QL.
    TridiagonalQl,
}

impl<T: Real> EigenBasis<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn vectors(&self) -> &Matrix<T> {
        &self.vectors
    }

    pub fn vector(&self, k: usize) -> Vec<T> {
        self.vectors.column(k)
    }

    /// The solver that actually ran (never `Auto`).
    pub fn method(&self) -> EigenMethod {
        self.method
    }

    /// Jacobi sweeps, or total QL iterations.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `V diag(values) V^T`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let n = self.values.len();
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors.get(i, k) * self.values[k] * self.vectors.get(j, k))
                .sum()
        })
    }
}

/// Symmetric eigendecomposition, eigenvalues sorted descending.
///
/// Small orders use cyclic Jacobi: sweeps run until the off-diagonal
/// Frobenius mass drops to `max(1e-12, eps) * ||M||_F` or [`MAX_SWEEPS`] is
/// reached. Larger orders use Householder tridiagonalization with implicit
/// QL, which is roughly an order of magnitude cheaper at `C = 256`.
pub fn sym_eig<T: Real>(m: &SymmetricMatrix<T>) -> Result<EigenBasis<T>> {
    sym_eig_with(m, EigenMethod::Auto)
}

pub fn sym_eig_with<T: Real>(m: &SymmetricMatrix<T>, method: EigenMethod) -> Result<EigenBasis<T>> {
    let n = m.order();
    if n > MAX_ORDER {
        return Err(validation(format!(
            "eigensolver accepts order <= {MAX_ORDER}, got {n}"
        )));
    }
    let method = match method {
        EigenMethod::Auto if n <= JACOBI_MAX_ORDER => EigenMethod::Jacobi,
        EigenMethod::Auto => EigenMethod::TridiagonalQl,
        other => other,
    };
    let (values, vt, iterations) = match method {
        EigenMethod::Jacobi => jacobi(m.matrix()),
        _ => tridiagonal_ql(m.matrix())?,
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .partial_cmp(&values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted = order.iter().map(|&i| values[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, k| vt.get(order[k], r));
    Ok(EigenBasis {
        values: sorted,
        vectors,
        method,
        iterations,
    })
}

/// Cyclic Jacobi. Returns unsorted eigenvalues, eigenvectors as rows, sweeps.
fn jacobi<T: Real>(m: &Matrix<T>) -> (Vec<T>, Matrix<T>, usize) {
    let n = m.rows();
    let mut a = m.clone();
    let mut vt = Matrix::<T>::identity(n);
    let target = T::lit(OFF_DIAGONAL_TOL).max(T::epsilon()) * a.frobenius_norm();
    let tiny = T::lit(1e-3) * T::epsilon();
    let mut sweeps = 0;

    while sweeps < MAX_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            break;
        }
        sweeps += 1;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                // Negligible once it cannot move either diagonal entry.
                if sweeps > 3 && apq.abs() <= tiny * app.abs() && apq.abs() <= tiny * aqq.abs() {
                    a.set(p, q, T::zero());
                    a.set(q, p, T::zero());
                    continue;
                }
                let theta = (aqq - app) / (apq + apq);
                let t = if theta.abs() > T::lit(1e60) {
                    T::lit(0.5) / theta
                } else {
                    let t = T::one() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    if theta < T::zero() {
                        -t
                    } else {
                        t
                    }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                rotate(&mut a, &mut vt, p, q, c, s, t, apq);
            }
        }
    }
    let values = (0..n).map(|i| a.get(i, i)).collect();
    (values, vt, sweeps)
}

/// Householder reduction to tridiagonal form followed by the implicit QL
/// iteration with accumulated transformations (the classic `tred2`/`tql2`
/// pair). Returns unsorted eigenvalues, eigenvectors as rows, iterations.
fn tridiagonal_ql<T: Real>(m: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>, usize)> {
    let n = m.rows();
    // `m` is symmetric, so its storage already is the transposed layout
    // `tred2` works in, and what comes out is `V^T` with eigenvectors as rows.
    let mut vt = m.clone();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tred2(vt.data_mut(), n, &mut d, &mut e);
    let iterations = tql2(&mut vt, &mut d, &mut e)?;
    Ok((d, vt, iterations))
}

/// Householder tridiagonalization. `w` holds `V` column-major (`V[r][c]` at
/// `w[c * n + r]`) so the inner loops walk contiguous memory.
fn tred2<T: Real>(w: &mut [T], n: usize, d: &mut [T], e: &mut [T]) {
    let at = |r: usize, c: usize| c * n + r;
    for j in 0..n {
        d[j] = w[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for &dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = w[at(i - 1, j)];
                w[at(i, j)] = T::zero();
                w[at(j, i)] = T::zero();
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = T::zero();
            }
            for j in 0..i {
                f = d[j];
                w[at(j, i)] = f;
                let col = &w[j * n..j * n + i];
                g = e[j] + col[j] * f;
                for k in j + 1..i {
                    let vkj = col[k];
                    g += vkj * d[k];
                    e[k] += vkj * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                let col = &mut w[j * n..j * n + i];
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = w[at(i - 1, j)];
                w[at(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        w[at(n - 1, i)] = w[at(i, i)];
        w[at(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            let (head, tail) = w.split_at_mut((i + 1) * n);
            let u = &tail[..=i];
            for k in 0..=i {
                d[k] = u[k] / h;
            }
            for j in 0..=i {
                let col = &mut head[j * n..j * n + i + 1];
                let g = crate::scalar::dot(u, col);
                for (c, &dk) in col.iter_mut().zip(&d[..=i]) {
                    *c -= g * dk;
                }
            }
        }
        for k in 0..=i {
            w[at(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = w[at(n - 1, j)];
        w[at(n - 1, j)] = T::zero();
    }
    if n > 0 {
        w[at(n - 1, n - 1)] = T::one();
        e[0] = T::zero();
    }
}

fn tql2<T: Real>(vt: &mut Matrix<T>, d: &mut [T], e: &mut [T]) -> Result<usize> {
    let n = d.len();
    if n == 0 {
        return Ok(0);
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    let eps = T::epsilon();
    let mut total = 0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        // e[n-1] is zero, so m < n here.
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITERATIONS {
                    return Err(validation(format!(
                        "QL iteration did not converge for eigenvalue {l}"
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (e[l] + e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..n] {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = vt.data_rows_mut(i, i + 1);
                    for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                        let h = *y;
                        *y = s * *x + c * h;
                        *x = c * *x - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
            total += iter;
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(total)
}

fn off_diagonal_norm<T: Real>(a: &Matrix<T>) -> T {
    let n = a.rows();
    let mut acc = T::zero();
    for i in 0..n {
        for (j, &v) in a.row(i).iter().enumerate() {
            if i != j {
                acc += v * v;
            }
        }
    }
    acc.sqrt()
}

/// Applies the rotation `J(p, q, c, s)` as `A <- J^T A J` and accumulates it
/// into the eigenvector rows.
#[allow(clippy::too_many_arguments)]
#[inline]
fn rotate<T: Real>(
    a: &mut Matrix<T>,
    vt: &mut Matrix<T>,
    p: usize,
    q: usize,
    c: T,
    s: T,
    t: T,
    apq: T,
) {
    let n = a.rows();
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    {
        let (lo, hi) = a.data_rows_mut(p, q);
        for k in 0..n {
            let x = lo[k];
            let y = hi[k];
            lo[k] = c * x - s * y;
            hi[k] = s * x + c * y;
        }
    }
    for k in 0..n {
        let x = a.get(p, k);
        let y = a.get(q, k);
        a.set(k, p, x);
        a.set(k, q, y);
    }
    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, T::zero());
    a.set(q, p, T::zero());

    let (lo, hi) = vt.data_rows_mut(p, q);
    for k in 0..n {
        let x = lo[k];
        let y = hi[k];
        lo[k] = c * x - s * y;
        hi[k] = s * x + c * y;
    }
}

impl<T: Real> Matrix<T> {
    /// Mutable views of two distinct rows, `lo < hi`.
    pub(crate) fn data_rows_mut(&mut self, lo: usize, hi: usize) -> (&mut [T], &mut [T]) {
        debug_assert!(lo < hi);
        let cols = self.cols();
        let (head, tail) = self.data_mut().split_at_mut(hi * cols);
        (&mut head[lo * cols..(lo + 1) * cols], &mut tail[..cols])
    }
}
