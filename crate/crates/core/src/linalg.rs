//! Small dense least-squares and IV kernels on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reciprocal condition numbers below this are treated as singular.
const RCOND_TOL: f64 = 1e-12;

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return f64::INFINITY;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn singular(context: &str, m: &DMatrix<f64>) -> Error {
    Error::SingularDesign {
        context: context.to_string(),
        condition: condition_number(m),
    }
}

/// Solve `a * x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let cond = condition_number(a);
    if !cond.is_finite() || cond * RCOND_TOL > 1.0 {
        return Err(Error::SingularDesign {
            context: context.to_string(),
            condition: cond,
        });
    }
    let chol = a.clone().cholesky().ok_or_else(|| singular(context, a))?;
    Ok(chol.solve(b))
}

/// Solve a general square system `a * x = b`.
pub fn solve_square(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let cond = condition_number(a);
    if !cond.is_finite() || cond * RCOND_TOL > 1.0 {
        return Err(Error::SingularDesign {
            context: context.to_string(),
            condition: cond,
        });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| singular(context, a))
}

/// OLS coefficients of each column of `y` on `x`.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    if x.ncols() == 0 {
        return Ok(DMatrix::zeros(0, y.ncols()));
    }
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    solve_spd(&xtx, &xty, context)
}

/// Fitted values `P_x y` for every column of `y`.
pub fn project(x: &DMatrix<f64>, y: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    if x.ncols() == 0 {
        return Ok(DMatrix::zeros(y.nrows(), y.ncols()));
    }
    let b = ols(x, y, context)?;
    Ok(x * b)
}

/// Residuals `M_x y` for every column of `y`.
pub fn residualize(x: &DMatrix<f64>, y: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    Ok(y - project(x, y, context)?)
}

/// Horizontally concatenate matrices with equal row counts.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.view_mut((0, c0), (rows, b.ncols())).copy_from(*b);
        c0 += b.ncols();
    }
    out
}

/// Serialize a matrix as a list of rows.
pub fn serialize_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in m.row_iter() {
        seq.serialize_element(&r.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

/// Just-identified IV fit.
#[derive(Debug, Clone)]
pub struct IvFit {
    pub coef: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Residual standard deviation with denominator T.
    pub sigma: f64,
    pub resid: DVector<f64>,
}

/// IV with as many instruments as regressors:
/// `b = (Z'R)^{-1} Z'y`, `Var(b) = s² (Z'R)^{-1} Z'Z (R'Z)^{-1}`, `s² = e'e / T`.
pub fn iv_exact(y: &DVector<f64>, r: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<IvFit> {
    if r.ncols() != z.ncols() {
        return Err(Error::Underidentified {
            instruments: z.ncols(),
            regressors: r.ncols(),
        });
    }
    let t = y.len() as f64;
    let zr = z.transpose() * r;
    let zy = DMatrix::from_column_slice(z.ncols(), 1, (z.transpose() * y).as_slice());
    let coef = solve_square(&zr, &zy, "Z'R")?.column(0).into_owned();
    let resid = y - r * &coef;
    let sigma = (resid.norm_squared() / t).sqrt();
    let zr_inv = solve_square(&zr, &DMatrix::identity(zr.nrows(), zr.ncols()), "Z'R")?;
    let cov = &zr_inv * (z.transpose() * z) * zr_inv.transpose() * (sigma * sigma);
    Ok(IvFit {
        coef,
        cov,
        sigma,
        resid,
    })
}

/// Generalized IV (GMM with weight `B^{-1}`):
/// `θ = (A'B⁻¹A)⁻¹ A'B⁻¹c` with `A = Z'C/T`, `B = Z'Z/T`, `c = Z'y/T`.
/// Returns the coefficients and the condition number of `B`.
pub fn generalized_iv(
    y: &DVector<f64>,
    c: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<(DVector<f64>, f64)> {
    if z.ncols() < c.ncols() {
        return Err(Error::Underidentified {
            instruments: z.ncols(),
            regressors: c.ncols(),
        });
    }
    let t = y.len() as f64;
    let a = z.transpose() * c / t;
    let b = z.transpose() * z / t;
    let cv = DMatrix::from_column_slice(z.ncols(), 1, (z.transpose() * y / t).as_slice());
    let cond = condition_number(&b);
    let binv_a = solve_spd(&b, &a, "instrument moment matrix")?;
    let binv_c = solve_spd(&b, &cv, "instrument moment matrix")?;
    let lhs = a.transpose() * &binv_a;
    let rhs = a.transpose() * &binv_c;
    let theta = solve_spd(&lhs, &rhs, "A'B^-1 A")?;
    Ok((theta.column(0).into_owned(), cond))
}
