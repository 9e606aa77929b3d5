//! Dense solves for the small velocity-Hessian systems.

use crate::error::{Error, Result};

/// Largest accepted 1-norm condition estimate.
pub const MAX_CONDITION: f64 = 1e12;

fn norm1(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    (0..n).map(|j| (0..n).map(|i| m[i][j].abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv = crate::geometry::identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty pivot range");
        if a[pivot][col] == 0.0 || !a[pivot][col].is_finite() {
            return Err(Error::SingularLagrangian { condition: f64::INFINITY });
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for k in 0..n {
            a[col][k] /= d;
            inv[col][k] /= d;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row][col];
            if factor == 0.0 {
                continue;
            }
            for k in 0..n {
                a[row][k] -= factor * a[col][k];
                inv[row][k] -= factor * inv[col][k];
            }
        }
    }
    Ok(inv)
}

/// Solves `m x = b`, rejecting matrices whose condition estimate reaches
/// [`MAX_CONDITION`].
pub fn solve(m: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let inv = invert(m)?;
    let condition = norm1(m) * norm1(&inv);
    if !(condition < MAX_CONDITION) {
        return Err(Error::SingularLagrangian { condition });
    }
    Ok(inv.iter().map(|row| row.iter().zip(b).map(|(a, c)| a * c).sum()).collect())
}
