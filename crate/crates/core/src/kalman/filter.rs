use nalgebra::{DMatrix, DVector};

use super::{map_steps, AffineModel, Execution, GaussianSequence, Mode};
use crate::error::{Error, Result};
use crate::linalg::{
    block2x2, cholesky, hstack, lu_solve, right_solve_lower, right_solve_upper_transpose,
    solve_lower, solve_upper_transpose, split_lower, symmetrize, tria,
};
use crate::real::Real;
use crate::scan::{try_associative_scan, ScanOptions};

/// Filtering element `{A, b, C, η, J}`:
/// `p(x_k | y_k, x_{k−1}) = N(A x_{k−1} + b, C)` and
/// `p(y_k | x_{k−1}) ∝ N_I(x_{k−1}; η, J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StdFilterElement<T: Real> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub c: DMatrix<T>,
    pub eta: DVector<T>,
    pub j: DMatrix<T>,
}

/// Square-root filtering element `{A, b, U, η, Z}` with `C = UUᵀ`, `J = ZZᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SqrtFilterElement<T: Real> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub u: DMatrix<T>,
    pub eta: DVector<T>,
    pub z: DMatrix<T>,
}

impl<T: Real> SqrtFilterElement<T> {
    /// The standard element this one factorizes.
    pub fn squared(&self) -> StdFilterElement<T> {
        StdFilterElement {
            a: self.a.clone(),
            b: self.b.clone(),
            c: &self.u * self.u.transpose(),
            eta: self.eta.clone(),
            j: &self.z * self.z.transpose(),
        }
    }
}

/// Two-sided identity `(I, 0, 0, 0, 0)` of the filtering operator, in
/// either representation (the `C`/`U` and `J`/`Z` slots are zero).
pub fn filter_element_identity<T: Real>(nx: usize) -> StdFilterElement<T> {
    StdFilterElement {
        a: DMatrix::identity(nx, nx),
        b: DVector::zeros(nx),
        c: DMatrix::zeros(nx, nx),
        eta: DVector::zeros(nx),
        j: DMatrix::zeros(nx, nx),
    }
}

// S⁻¹ X through the Cholesky factor of S.
fn spd_solve<T: Real>(ls: &DMatrix<T>, x: &DMatrix<T>) -> Result<DMatrix<T>> {
    solve_upper_transpose(ls, &solve_lower(ls, x)?)
}

fn col<T: Real>(v: DVector<T>) -> DMatrix<T> {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

fn check_mode<T: Real>(model: &AffineModel<T>, mode: Mode) -> Result<()> {
    if model.mode != mode {
        return Err(Error::InvalidArgument(format!(
            "expected a {mode:?} model, got {:?}",
            model.mode
        )));
    }
    Ok(())
}

/// Standard-form element for step `k ∈ 1..=n`; step 1 folds in the prior.
pub fn std_filter_element<T: Real>(
    model: &AffineModel<T>,
    k: usize,
    y: &DVector<T>,
) -> Result<StdFilterElement<T>> {
    check_mode(model, Mode::Standard)?;
    let tr = &model.transitions[k - 1];
    let ob = &model.observations[k - 1];
    let (f, c, lambda) = (&tr.matrix, &tr.offset, &tr.noise);
    let (h, d, omega) = (&ob.matrix, &ob.offset, &ob.noise);
    let nx = f.nrows();
    let innovation = |e: Error| match e {
        Error::NotPositiveDefinite { .. } | Error::SingularDiagonal { .. } => {
            Error::SingularInnovation { step: k }
        }
        other => other,
    };

    let hf = h * f;
    let r = y - h * c - d;

    if k == 1 {
        let m_pred = f * &model.prior_mean + c;
        let p_pred = symmetrize(&(f * &model.prior_cov * f.transpose() + lambda));
        let s = symmetrize(&(h * &p_pred * h.transpose() + omega));
        let ls = cholesky(&s).map_err(innovation)?;
        let k_gain = spd_solve(&ls, &(h * &p_pred)).map_err(innovation)?.transpose();
        let b = &m_pred + &k_gain * (y - h * &m_pred - d);
        let cov = symmetrize(&(&p_pred - &k_gain * &s * k_gain.transpose()));
        let w = solve_lower(&ls, &hf).map_err(innovation)?;
        let eta = w.transpose() * solve_lower(&ls, &col(r)).map_err(innovation)?.column(0);
        return Ok(StdFilterElement {
            a: DMatrix::zeros(nx, nx),
            b,
            c: cov,
            eta,
            j: w.transpose() * &w,
        });
    }

    let s = symmetrize(&(h * lambda * h.transpose() + omega));
    let ls = cholesky(&s).map_err(innovation)?;
    let k_gain = spd_solve(&ls, &(h * lambda)).map_err(innovation)?.transpose();
    let i_kh = DMatrix::identity(nx, nx) - &k_gain * h;
    let w = solve_lower(&ls, &hf).map_err(innovation)?;
    let eta = w.transpose() * solve_lower(&ls, &col(r.clone())).map_err(innovation)?.column(0);
    Ok(StdFilterElement {
        a: &i_kh * f,
        b: c + &k_gain * r,
        c: symmetrize(&(&i_kh * lambda)),
        eta,
        j: w.transpose() * &w,
    })
}

/// `n_x × n_y` factor of `J` made square: zero-padded when `n_x > n_y`,
/// triangularized when `n_x < n_y`.
fn square_up<T: Real>(z: DMatrix<T>) -> DMatrix<T> {
    let (nx, ny) = z.shape();
    if nx > ny {
        let mut out = DMatrix::zeros(nx, nx);
        out.view_mut((0, 0), (nx, ny)).copy_from(&z);
        out
    } else if nx < ny {
        tria(&z)
    } else {
        z
    }
}

/// Square-root element for step `k ∈ 1..=n`; step 1 folds in the prior.
pub fn sqrt_filter_element<T: Real>(
    model: &AffineModel<T>,
    k: usize,
    y: &DVector<T>,
) -> Result<SqrtFilterElement<T>> {
    check_mode(model, Mode::SquareRoot)?;
    let tr = &model.transitions[k - 1];
    let ob = &model.observations[k - 1];
    let (f, c, s_lambda) = (&tr.matrix, &tr.offset, &tr.noise);
    let (h, d, s_omega) = (&ob.matrix, &ob.offset, &ob.noise);
    let nx = f.nrows();
    let ny = h.nrows();
    let innovation = |e: Error| match e {
        Error::SingularDiagonal { .. } => Error::SingularInnovation { step: k },
        other => other,
    };

    // Factor whose square is the state covariance entering the update.
    let (pred_mean, n_pred) = if k == 1 {
        (
            f * &model.prior_mean + c,
            tria(&hstack(&[&(f * &model.prior_cov), s_lambda])),
        )
    } else {
        (c.clone(), s_lambda.clone())
    };

    let psi = tria(&block2x2(&(h * &n_pred), Some(s_omega), &n_pred, None, ny));
    let (y_fac, psi21, psi22) = split_lower(&psi, ny);
    let k_gain = right_solve_lower(&psi21, &y_fac).map_err(innovation)?;

    let hf = h * f;
    let w = solve_lower(&y_fac, &hf).map_err(innovation)?;
    let r = y - h * c - d;
    let eta = w.transpose() * solve_lower(&y_fac, &col(r)).map_err(innovation)?.column(0);
    let z = square_up(w.transpose());

    let (a, b) = if k == 1 {
        (
            DMatrix::zeros(nx, nx),
            &pred_mean + &k_gain * (y - h * &pred_mean - d),
        )
    } else {
        (
            (DMatrix::identity(nx, nx) - &k_gain * h) * f,
            c + &k_gain * (y - h * c - d),
        )
    };
    Ok(SqrtFilterElement {
        a,
        b,
        u: psi22,
        eta,
        z,
    })
}

/// Standard filtering operator `e_i ⊗ e_j` (`e_i` earlier in time).
pub fn combine_filter_std<T: Real>(
    ei: &StdFilterElement<T>,
    ej: &StdFilterElement<T>,
) -> Result<StdFilterElement<T>> {
    let nx = ei.a.nrows();
    let eye = DMatrix::<T>::identity(nx, nx);
    let singular = |_| Error::CombineSingular;

    // (I + C_i J_j)⁻¹ [A_i | b_i + C_i η_j | C_i A_jᵀ]
    let rhs = hstack(&[
        &ei.a,
        &col(&ei.b + &ei.c * &ej.eta),
        &(&ei.c * ej.a.transpose()),
    ]);
    let x = lu_solve(&(&eye + &ei.c * &ej.j), &rhs).map_err(singular)?;
    let a = &ej.a * x.columns(0, nx);
    let b = &ej.a * x.column(nx) + &ej.b;
    let c = symmetrize(&(&ej.a * x.columns(nx + 1, nx) + &ej.c));

    // (I + J_j C_i)⁻¹ [η_j − J_j b_i | J_j A_i]
    let rhs = hstack(&[&col(&ej.eta - &ej.j * &ei.b), &(&ej.j * &ei.a)]);
    let y = lu_solve(&(&eye + &ej.j * &ei.c), &rhs).map_err(singular)?;
    let eta = ei.a.transpose() * y.column(0) + &ei.eta;
    let j = symmetrize(&(ei.a.transpose() * y.columns(1, nx) + &ei.j));

    Ok(StdFilterElement { a, b, c, eta, j })
}

/// Square-root filtering operator `e_i ⊗ e_j` (`e_i` earlier in time).
pub fn combine_filter_sqrt<T: Real>(
    ei: &SqrtFilterElement<T>,
    ej: &SqrtFilterElement<T>,
) -> Result<SqrtFilterElement<T>> {
    let nx = ei.a.nrows();
    let eye = DMatrix::<T>::identity(nx, nx);
    let singular = |_| Error::CombineSingular;

    let xi = tria(&block2x2(
        &(ei.u.transpose() * &ej.z),
        Some(&eye),
        &ej.z,
        None,
        nx,
    ));
    let (xi11, xi21, xi22) = split_lower(&xi, nx);

    // G = Ξ₂₁ Ξ₁₁⁻¹, so (I + J_j C_i)⁻¹ = I − G U_iᵀ and (I + C_i J_j)⁻¹ = I − U_i Gᵀ.
    let g = right_solve_lower(&xi21, &xi11).map_err(singular)?;
    let inv_cj = &eye - &ei.u * g.transpose();
    let inv_jc = &eye - &g * ei.u.transpose();

    let a = &ej.a * &inv_cj * &ei.a;
    let b = &ej.a * (&inv_cj * (&ei.b + &ei.u * (ei.u.transpose() * &ej.eta))) + &ej.b;
    let aj_ui_xi = right_solve_upper_transpose(&(&ej.a * &ei.u), &xi11).map_err(singular)?;
    let u = tria(&hstack(&[&aj_ui_xi, &ej.u]));
    let eta = ei.a.transpose() * (&inv_jc * (&ej.eta - &ej.z * (ej.z.transpose() * &ei.b))) + &ei.eta;
    let z = tria(&hstack(&[&(ei.a.transpose() * &xi22), &ei.z]));

    Ok(SqrtFilterElement { a, b, u, eta, z })
}

/// Filtering by associative scan over per-step elements.
pub fn parallel_filter<T: Real>(
    model: &AffineModel<T>,
    ys: &[DVector<T>],
    opts: ScanOptions,
) -> Result<GaussianSequence<T>> {
    model.validate(ys)?;
    let n = ys.len();
    let exec = Execution::Parallel(opts);
    let mut means = Vec::with_capacity(n + 1);
    let mut covs = Vec::with_capacity(n + 1);
    means.push(model.prior_mean.clone());
    covs.push(model.prior_cov.clone());

    match model.mode {
        Mode::Standard => {
            let elems = map_steps(n, exec, |i| std_filter_element(model, i + 1, &ys[i]))?;
            let scanned = try_associative_scan(elems, combine_filter_std, opts)?;
            for e in scanned {
                means.push(e.b);
                covs.push(e.c);
            }
        }
        Mode::SquareRoot => {
            let elems = map_steps(n, exec, |i| sqrt_filter_element(model, i + 1, &ys[i]))?;
            let scanned = try_associative_scan(elems, combine_filter_sqrt, opts)?;
            for e in scanned {
                means.push(e.b);
                covs.push(e.u);
            }
        }
    }
    Ok(GaussianSequence {
        mode: model.mode,
        means,
        covs,
    })
}

/// Classical predict/update recursion (covariance or Cholesky-factor form).
pub fn sequential_filter<T: Real>(
    model: &AffineModel<T>,
    ys: &[DVector<T>],
) -> Result<GaussianSequence<T>> {
    model.validate(ys)?;
    let n = ys.len();
    let mut means = Vec::with_capacity(n + 1);
    let mut covs = Vec::with_capacity(n + 1);
    let mut m = model.prior_mean.clone();
    let mut p = model.prior_cov.clone();
    means.push(m.clone());
    covs.push(p.clone());

    for (k, y) in ys.iter().enumerate() {
        let step = k + 1;
        let tr = &model.transitions[k];
        let ob = &model.observations[k];
        let (f, h) = (&tr.matrix, &ob.matrix);
        let m_pred = f * &m + &tr.offset;
        let innovation = |e: Error| match e {
            Error::NotPositiveDefinite { .. } | Error::SingularDiagonal { .. } => {
                Error::SingularInnovation { step }
            }
            other => other,
        };
        match model.mode {
            Mode::Standard => {
                let p_pred = symmetrize(&(f * &p * f.transpose() + &tr.noise));
                let s = symmetrize(&(h * &p_pred * h.transpose() + &ob.noise));
                let ls = cholesky(&s).map_err(innovation)?;
                let gain = spd_solve(&ls, &(h * &p_pred)).map_err(innovation)?.transpose();
                m = &m_pred + &gain * (y - h * &m_pred - &ob.offset);
                p = symmetrize(&(&p_pred - &gain * &s * gain.transpose()));
            }
            Mode::SquareRoot => {
                let ny = h.nrows();
                let n_pred = tria(&hstack(&[&(f * &p), &tr.noise]));
                let psi = tria(&block2x2(&(h * &n_pred), Some(&ob.noise), &n_pred, None, ny));
                let (y_fac, psi21, psi22) = split_lower(&psi, ny);
                let gain = right_solve_lower(&psi21, &y_fac).map_err(innovation)?;
                m = &m_pred + &gain * (y - h * &m_pred - &ob.offset);
                p = psi22;
            }
        }
        means.push(m.clone());
        covs.push(p.clone());
    }
    Ok(GaussianSequence {
        mode: model.mode,
        means,
        covs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::AffineMap;

    fn scalar_model(mode: Mode, n: usize) -> AffineModel<f64> {
        let one = DMatrix::from_element(1, 1, 1.0);
        let zero = DVector::zeros(1);
        AffineModel::time_invariant(
            mode,
            zero.clone(),
            DMatrix::zeros(1, 1),
            AffineMap::new(one.clone(), zero.clone(), one.clone()),
            AffineMap::new(one.clone(), zero, one),
            n,
        )
    }

    #[test]
    fn scalar_std_element_by_hand() {
        let model = scalar_model(Mode::Standard, 3);
        let y = DVector::from_element(1, 0.8);
        let e = std_filter_element(&model, 2, &y).unwrap();
        // S = 2, K = 1/2
        assert!((e.a[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((e.c[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((e.j[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((e.eta[0] - 0.4).abs() < 1e-15);
        assert!((e.b[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn scalar_sqrt_element_by_hand() {
        let model = scalar_model(Mode::SquareRoot, 3);
        let y = DVector::from_element(1, 0.8);
        let e = sqrt_filter_element(&model, 2, &y).unwrap();
        assert!((e.u[(0, 0)] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((e.z[(0, 0)].abs() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((e.a[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((e.eta[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn no_measurement_limit() {
        let mut model = scalar_model(Mode::Standard, 2);
        for o in &mut model.observations {
            o.matrix[(0, 0)] = 0.0;
        }
        model.transitions[1].matrix[(0, 0)] = 0.9;
        model.transitions[1].offset[0] = 0.3;
        model.transitions[1].noise[(0, 0)] = 2.0;
        let e = std_filter_element(&model, 2, &DVector::from_element(1, 5.0)).unwrap();
        assert_eq!(e.a[(0, 0)], 0.9);
        assert_eq!(e.b[0], 0.3);
        assert_eq!(e.c[(0, 0)], 2.0);
        assert_eq!(e.j[(0, 0)], 0.0);
        assert_eq!(e.eta[0], 0.0);
    }

    #[test]
    fn first_step_with_known_state() {
        let mut model = scalar_model(Mode::Standard, 1);
        model.prior_mean[0] = 2.0;
        model.transitions[0].matrix[(0, 0)] = 0.5;
        let y = DVector::from_element(1, 3.0);
        let e = std_filter_element(&model, 1, &y).unwrap();
        // m⁻ = 1, P⁻ = 1, S = 2, K = 1/2
        assert!((e.b[0] - 2.0).abs() < 1e-15);
        assert!((e.c[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(e.a[(0, 0)], 0.0);
    }

    #[test]
    fn zero_padding_of_z() {
        let nx = 3;
        let mut model = AffineModel::time_invariant(
            Mode::SquareRoot,
            DVector::zeros(nx),
            DMatrix::identity(nx, nx),
            AffineMap::new(
                DMatrix::from_fn(nx, nx, |i, j| if i == j { 0.9 } else { 0.1 }),
                DVector::zeros(nx),
                DMatrix::identity(nx, nx),
            ),
            AffineMap::new(
                DMatrix::from_row_slice(1, nx, &[1.0, 0.5, -0.2]),
                DVector::zeros(1),
                DMatrix::identity(1, 1),
            ),
            2,
        );
        model.transitions[1].noise[(1, 0)] = 0.3;
        let e = sqrt_filter_element(&model, 2, &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(e.z.shape(), (3, 3));
        assert!(e.z.columns(1, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn singular_innovation_is_reported() {
        let mut model = scalar_model(Mode::Standard, 2);
        model.transitions[1].noise[(0, 0)] = 0.0;
        model.observations[1].noise[(0, 0)] = 0.0;
        let err = std_filter_element(&model, 2, &DVector::zeros(1)).unwrap_err();
        assert_eq!(err, Error::SingularInnovation { step: 2 });
    }

    #[test]
    fn one_step_update_formula() {
        let mut model = scalar_model(Mode::Standard, 1);
        model.prior_mean[0] = 0.3;
        model.prior_cov[(0, 0)] = 0.7;
        model.transitions[0].matrix[(0, 0)] = 1.1;
        model.transitions[0].offset[0] = 0.2;
        model.observations[0].matrix[(0, 0)] = 2.0;
        model.observations[0].offset[0] = -0.1;
        model.observations[0].noise[(0, 0)] = 0.5;
        let y = DVector::from_element(1, 1.3);
        let m_pred: f64 = 1.1 * 0.3 + 0.2;
        let p_pred: f64 = 1.1 * 1.1 * 0.7 + 1.0;
        let expected = m_pred + p_pred * 2.0 / (4.0 * p_pred + 0.5) * (1.3 - 2.0 * m_pred + 0.1);
        let out = sequential_filter(&model, &[y.clone()]).unwrap();
        assert!((out.means[1][0] - expected).abs() < 1e-14);
        let sq = sequential_filter(&model.to_mode(Mode::SquareRoot).unwrap(), &[y]).unwrap();
        assert!((sq.means[1][0] - expected).abs() < 1e-14);
    }
}
