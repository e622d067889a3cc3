//! Small dense linear-algebra helpers backing policy evaluation and occupancy.

use ndarray::{Array1, Array2};

/// State count above which `(I - gamma * P)` systems switch from a direct LU
/// solve to fixed-point iteration.
pub const DIRECT_SOLVE_MAX_STATES: usize = 4096;

/// Residual target for the iterative fallback path.
const ITERATIVE_RESIDUAL: f64 = 1e-10;
const ITERATIVE_MAX_SWEEPS: usize = 1_000_000;

/// Solve `(I - gamma * P) x = b` for a row-substochastic matrix `P` and
/// `gamma` in `[0, 1)`.
///
/// Uses a direct LU factorization up to [`DIRECT_SOLVE_MAX_STATES`] states and
/// Richardson iteration (`x <- b + gamma * P x`, a gamma-contraction) beyond.
pub fn solve_discounted_system(p: &Array2<f64>, gamma: f64, b: &Array1<f64>) -> Array1<f64> {
    let n = b.len();
    assert_eq!(p.nrows(), n);
    assert_eq!(p.ncols(), n);
    if n <= DIRECT_SOLVE_MAX_STATES {
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = -gamma * p[[i, j]];
            }
            a[(i, i)] += 1.0;
        }
        let rhs = nalgebra::DVector::<f64>::from_iterator(n, b.iter().copied());
        let solved = a
            .lu()
            .solve(&rhs)
            .expect("(I - gamma*P) is nonsingular for gamma < 1 and stochastic P");
        Array1::from_iter(solved.iter().copied())
    } else {
        let mut x = Array1::<f64>::zeros(n);
        for _ in 0..ITERATIVE_MAX_SWEEPS {
            let next = b + &(gamma * p.dot(&x));
            let residual = sup_norm_diff(&next, &x);
            x = next;
            if residual <= ITERATIVE_RESIDUAL {
                break;
            }
        }
        x
    }
}

/// Sup-norm of the difference of two equally sized vectors.
pub fn sup_norm_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Max-shifted log-sum-exp of a slice. Returns negative infinity on an empty
/// slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_two_state_system_exactly() {
        // P cyclic, gamma 0.5: x = b + 0.5 P x has closed form.
        let p = array![[0.0, 1.0], [1.0, 0.0]];
        let b = array![1.0, 0.0];
        let x = solve_discounted_system(&p, 0.5, &b);
        // x0 = 1 + 0.5 x1, x1 = 0.5 x0 => x0 = 4/3, x1 = 2/3.
        assert!((x[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((x[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_large_magnitudes() {
        let v = log_sum_exp(&[1e6, 1e6]);
        assert!((v - (1e6 + std::f64::consts::LN_2)).abs() < 1e-6);
        let v = log_sum_exp(&[-1e6, -1e6 - 1.0]);
        assert!(v.is_finite());
    }
}
