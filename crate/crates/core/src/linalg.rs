//! Matrix square-root primitives.
//!
//! Everything in the square-root filters reduces to three operations on
//! lower-triangular factors: [`tria`] (QR-based triangularization, so that
//! `tria([A B]) tria([A B])ᵀ = AAᵀ + BBᵀ`), [`cholesky_downdate`] (factor of
//! `LLᵀ − WWᵀ`), and triangular solves. No routine here forms an explicit
//! inverse.
//!
//! All routines are generic over [`Real`] so the same code runs in `f32`,
//! `f64` and forward-mode dual arithmetic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::real::Real;

/// Multiplier on `ε·max|L_ii|` below which a triangular diagonal is treated as zero.
pub const DEFAULT_SINGULAR_FACTOR: f64 = 1e3;

/// Lower-triangular `n×n` factor `L` with `L Lᵀ = M Mᵀ` and nonnegative diagonal.
///
/// Inputs with fewer columns than rows are zero-padded, so the output is
/// always square. Strictly-upper entries of the result are exactly zero.
pub fn tria<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = m.nrows();
    let cols = m.ncols().max(n);
    // QR of the padded transpose; its R factor transposed is the result.
    let mut b = DMatrix::<T>::zeros(cols, n);
    for i in 0..n {
        for j in 0..m.ncols() {
            b[(j, i)] = m[(i, j)];
        }
    }

    let two = T::from_f64(2.0);
    for i in 0..n {
        let mut tail = T::zero();
        for r in (i + 1)..cols {
            tail += b[(r, i)] * b[(r, i)];
        }
        if tail.to_f64() == 0.0 {
            continue;
        }
        let head = b[(i, i)];
        let norm = (head * head + tail).sqrt();
        let alpha = if head > T::zero() { -norm } else { norm };

        // Householder vector v = x − α e₀, stored in place of column i.
        b[(i, i)] = head - alpha;
        let mut vtv = T::zero();
        for r in i..cols {
            vtv += b[(r, i)] * b[(r, i)];
        }
        for j in (i + 1)..n {
            let mut s = T::zero();
            for r in i..cols {
                s += b[(r, i)] * b[(r, j)];
            }
            let f = two * s / vtv;
            for r in i..cols {
                let v = b[(r, i)];
                b[(r, j)] -= f * v;
            }
        }
        b[(i, i)] = alpha;
        for r in (i + 1)..cols {
            b[(r, i)] = T::zero();
        }
    }

    let mut l = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = b[(j, i)];
        }
    }
    for j in 0..n {
        if l[(j, j)] < T::zero() {
            for i in j..n {
                l[(i, j)] = -l[(i, j)];
            }
        }
    }
    l
}

/// Factor `S` with `S Sᵀ = L Lᵀ − W Wᵀ`, computed as successive rank-1
/// downdates over the columns of `W`.
///
/// `L` must be lower triangular with nonnegative diagonal (as produced by
/// [`tria`] or [`cholesky`]). Loss of positive definiteness is reported as
/// [`Error::IndefiniteDowndate`]; no regularization is applied.
pub fn cholesky_downdate<T: Real>(l: &DMatrix<T>, w: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = l.nrows();
    if l.ncols() != n || w.nrows() != n {
        return Err(Error::Dimension(format!(
            "downdate of {}x{} factor by {}x{} matrix",
            l.nrows(),
            l.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let mut s = l.clone();
    let mut v = DVector::<T>::zeros(n);
    for col in 0..w.ncols() {
        v.copy_from(&w.column(col));
        for j in 0..n {
            let vj = v[j];
            if vj.to_f64() == 0.0 && vj == T::zero() {
                continue;
            }
            let ljj = s[(j, j)];
            let r2 = ljj * ljj - vj * vj;
            if !(r2 > T::zero()) || !r2.is_finite() {
                return Err(Error::IndefiniteDowndate { column: col });
            }
            let r = r2.sqrt();
            let c = r / ljj;
            let sn = vj / ljj;
            s[(j, j)] = r;
            for i in (j + 1)..n {
                let lij = (s[(i, j)] - sn * v[i]) / c;
                s[(i, j)] = lij;
                v[i] = c * v[i] - sn * lij;
            }
        }
    }
    Ok(s)
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<T: Real>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension("cholesky of non-square matrix".into()));
    }
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Default singularity threshold `1e3·ε·max|L_ii|` for a triangular factor.
pub fn default_singular_tolerance<T: Real>(l: &DMatrix<T>) -> T {
    let mut max = T::zero();
    for i in 0..l.nrows().min(l.ncols()) {
        max = max.max(l[(i, i)].abs());
    }
    T::from_f64(DEFAULT_SINGULAR_FACTOR) * T::epsilon() * max
}

fn check_diagonal<T: Real>(l: &DMatrix<T>, tol: T) -> Result<()> {
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if !(d.abs() > tol) || !d.is_finite() {
            return Err(Error::SingularDiagonal { index: i });
        }
    }
    Ok(())
}

/// Solves `L X = B` for lower-triangular `L` using the default tolerance.
pub fn solve_lower<T: Real>(l: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    solve_lower_with_tolerance(l, b, default_singular_tolerance(l))
}

pub fn solve_lower_with_tolerance<T: Real>(
    l: &DMatrix<T>,
    b: &DMatrix<T>,
    tol: T,
) -> Result<DMatrix<T>> {
    let n = l.nrows();
    if l.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension("solve_lower".into()));
    }
    check_diagonal(l, tol)?;
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Solves `Lᵀ X = B` for lower-triangular `L` using the default tolerance.
pub fn solve_upper_transpose<T: Real>(l: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    solve_upper_transpose_with_tolerance(l, b, default_singular_tolerance(l))
}

pub fn solve_upper_transpose_with_tolerance<T: Real>(
    l: &DMatrix<T>,
    b: &DMatrix<T>,
    tol: T,
) -> Result<DMatrix<T>> {
    let n = l.nrows();
    if l.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension("solve_upper_transpose".into()));
    }
    check_diagonal(l, tol)?;
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// `B L⁻¹` for lower-triangular `L`.
pub fn right_solve_lower<T: Real>(b: &DMatrix<T>, l: &DMatrix<T>) -> Result<DMatrix<T>> {
    // X L = B  ⇔  Lᵀ Xᵀ = Bᵀ
    Ok(solve_upper_transpose(l, &b.transpose())?.transpose())
}

/// `B L⁻ᵀ` for lower-triangular `L`.
pub fn right_solve_upper_transpose<T: Real>(b: &DMatrix<T>, l: &DMatrix<T>) -> Result<DMatrix<T>> {
    // X Lᵀ = B  ⇔  L Xᵀ = Bᵀ
    Ok(solve_lower(l, &b.transpose())?.transpose())
}

/// Solves `A X = B` for a general square `A` by LU with partial pivoting.
pub fn lu_solve<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension("lu_solve".into()));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let mut scale = T::zero();
    for v in lu.iter() {
        scale = scale.max(v.abs());
    }
    let tol = T::from_f64(n as f64) * T::epsilon() * scale;
    for k in 0..n {
        let mut p = k;
        for i in (k + 1)..n {
            if lu[(i, k)].abs() > lu[(p, k)].abs() {
                p = i;
            }
        }
        if !(lu[(p, k)].abs() > tol) || !lu[(p, k)].is_finite() {
            return Err(Error::SingularMatrix { column: k });
        }
        if p != k {
            lu.swap_rows(p, k);
            x.swap_rows(p, k);
        }
        let pivot = lu[(k, k)];
        for i in (k + 1)..n {
            let f = lu[(i, k)] / pivot;
            if f == T::zero() {
                continue;
            }
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                let u = lu[(k, j)];
                lu[(i, j)] -= f * u;
            }
            for c in 0..x.ncols() {
                let u = x[(k, c)];
                x[(i, c)] -= f * u;
            }
        }
    }
    for c in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= lu[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / lu[(i, i)];
        }
    }
    Ok(x)
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::from_f64(0.5);
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| half * (m[(i, j)] + m[(j, i)]))
}

/// Horizontal concatenation `[A B …]`; all blocks must share a row count.
pub fn hstack<T: Real>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::<T>::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.view_mut((0, at), (rows, b.ncols())).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Block matrix `[[A, B], [C, D]]`; `None` blocks are zero.
pub fn block2x2<T: Real>(
    top_left: &DMatrix<T>,
    top_right: Option<&DMatrix<T>>,
    bottom_left: &DMatrix<T>,
    bottom_right: Option<&DMatrix<T>>,
    right_cols: usize,
) -> DMatrix<T> {
    let r1 = top_left.nrows();
    let r2 = bottom_left.nrows();
    let c1 = top_left.ncols();
    let mut out = DMatrix::<T>::zeros(r1 + r2, c1 + right_cols);
    out.view_mut((0, 0), (r1, c1)).copy_from(top_left);
    out.view_mut((r1, 0), (r2, c1)).copy_from(bottom_left);
    if let Some(tr) = top_right {
        out.view_mut((0, c1), (r1, right_cols)).copy_from(tr);
    }
    if let Some(br) = bottom_right {
        out.view_mut((r1, c1), (r2, right_cols)).copy_from(br);
    }
    out
}

/// Splits a `(p+q)×(p+q)` lower-triangular matrix into its `(11, 21, 22)` blocks.
pub fn split_lower<T: Real>(
    m: &DMatrix<T>,
    p: usize,
) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
    let q = m.nrows() - p;
    (
        m.view((0, 0), (p, p)).into_owned(),
        m.view((p, 0), (q, p)).into_owned(),
        m.view((p, p), (q, q)).into_owned(),
    )
}

pub fn is_lower_triangular<T: Real>(m: &DMatrix<T>) -> bool {
    (0..m.nrows()).all(|i| ((i + 1)..m.ncols()).all(|j| m[(i, j)] == T::zero()))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
pub fn symmetric_eigen<T: Real>(a: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let n = a.nrows();
    let mut m = symmetrize(a);
    let mut v = DMatrix::<T>::identity(n, n);
    let two = T::from_f64(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let x = m[(i, j)] * m[(i, j)];
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if !(off > T::epsilon() * T::epsilon() * total) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let sign = if theta < T::zero() { -T::one() } else { T::one() };
                let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (DVector::from_fn(n, |i, _| m[(i, i)]), v)
}

/// Symmetrizes `a` and clips negative eigenvalues to zero.
///
/// Returns the projected matrix and whether any clipping happened.
pub fn clip_to_psd<T: Real>(a: &DMatrix<T>) -> (DMatrix<T>, bool) {
    let sym = symmetrize(a);
    if cholesky(&sym).is_ok() {
        return (sym, false);
    }
    let (vals, vecs) = symmetric_eigen(&sym);
    if vals.iter().all(|&l| l >= T::zero()) {
        return (sym, false);
    }
    let clipped = DVector::from_fn(vals.len(), |i, _| vals[i].max(T::zero()));
    let out = &vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose();
    (symmetrize(&out), true)
}

/// `L Lᵀ`.
pub fn square<T: Real>(l: &DMatrix<T>) -> DMatrix<T> {
    l * l.transpose()
}
