use crate::error::{Error, Result};
use crate::grid::SpatialGrid;

/// Thomas algorithm for `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
/// `lower[0]` and `upper[n-1]` are ignored.
pub(crate) fn solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if !(pivot.abs() > 0.0) || !pivot.is_finite() {
        return Err(Error::Tridiagonal { row: 0, pivot });
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if !(pivot.abs() > 1e-300) || !pivot.is_finite() {
            return Err(Error::Tridiagonal { row: i, pivot });
        }
        c[i] = if i + 1 < n { upper[i] / pivot } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Solves `(I - dt D_x(a D_x)) v = rhs` with the conservative three-point
/// stencil; `a_faces` has one entry per face.
pub(crate) fn implicit_diffusion(
    grid: &SpatialGrid,
    dt: f64,
    a_faces: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = grid.n_interior();
    let r = dt / (grid.h() * grid.h());
    let lower: Vec<f64> = (0..n).map(|i| -r * a_faces[i]).collect();
    let upper: Vec<f64> = (0..n).map(|i| -r * a_faces[i + 1]).collect();
    let diag: Vec<f64> = (0..n)
        .map(|i| 1.0 + r * (a_faces[i] + a_faces[i + 1]))
        .collect();
    solve(&lower, &diag, &upper, rhs)
}
