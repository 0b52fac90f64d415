//! Central finite differences.

use crate::matrix::Matrix;

/// Jacobian of `f` at `x` (outputs × inputs) by central differences.
pub fn jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], step: f64) -> Matrix {
    let n = x.len();
    let mut probe = x.to_vec();
    let mut columns = Vec::with_capacity(n);
    for j in 0..n {
        probe[j] = x[j] + step;
        let plus = f(&probe);
        probe[j] = x[j] - step;
        let minus = f(&probe);
        probe[j] = x[j];
        columns.push(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * step)).collect::<Vec<_>>());
    }
    let m = columns.first().map_or(0, Vec::len);
    let mut jac = Matrix::zeros(m, n);
    for (j, col) in columns.iter().enumerate() {
        jac.set_col(j, col);
    }
    jac
}

/// Default step: `1e-5 · (1 + max |x|)`.
pub fn default_step(x: &[f64]) -> f64 {
    1e-5 * (1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// Relative discrepancy between two estimates of the same quantity.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
