//! Small dense linear algebra and the damped Newton iteration shared by the
//! saddle-point solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue ratio below which a symmetric positive semidefinite matrix is
/// treated as singular.
pub const SINGULAR_RATIO: f64 = 1e-13;

/// Backtracking gives up after this many step reductions.
pub const MAX_HALVINGS: usize = 60;

const ARMIJO: f64 = 1e-4;

/// Neumaier-compensated summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves `h x = rhs` for symmetric positive definite `h`, reporting
/// [`Error::SingularJacobian`] when the spectrum is numerically degenerate.
pub fn solve_spd(h: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    if h.nrows() == 0 {
        return Ok(Vec::new());
    }
    if is_singular(h) {
        return Err(Error::SingularJacobian);
    }
    let chol = h.clone().cholesky().ok_or(Error::SingularJacobian)?;
    let x = chol.solve(&DVector::from_column_slice(rhs));
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJacobian);
    }
    Ok(x.as_slice().to_vec())
}

pub fn is_singular(h: &DMatrix<f64>) -> bool {
    if h.iter().any(|v| !v.is_finite()) {
        return true;
    }
    let eig = SymmetricEigen::new(h.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    max <= 0.0 || min <= SINGULAR_RATIO * max
}

/// `Σ_i w_i a_ki a_li` for the rows `a_k`.
pub fn weighted_gram(rows: &[&[f64]], weights: &[f64]) -> DMatrix<f64> {
    let k = rows.len();
    let mut g = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = compensated_sum(
                rows[a]
                    .iter()
                    .zip(rows[b])
                    .zip(weights)
                    .map(|((x, y), w)| x * y * w),
            );
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

/// Convex log-barrier objective
/// `Φ(x) = c·x − Σ_i log(b_i + Σ_k x_k a_ki)` over the open set where every
/// denominator is positive. Its Hessian is `Σ_i a_i a_iᵀ / D_i²`.
pub(crate) struct Barrier<'a> {
    pub base: &'a [f64],
    pub rows: Vec<&'a [f64]>,
    pub linear: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub damping: f64,
    /// Extra full steps taken after convergence, kept only while the residual
    /// does not grow.
    pub polish: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome {
    pub x: Vec<f64>,
    pub denominators: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl Barrier<'_> {
    pub fn denominators(&self, x: &[f64]) -> Vec<f64> {
        let mut d = self.base.to_vec();
        for (xk, row) in x.iter().zip(&self.rows) {
            for (di, a) in d.iter_mut().zip(*row) {
                *di += xk * a;
            }
        }
        d
    }

    fn objective(&self, x: &[f64], d: &[f64]) -> f64 {
        let lin = compensated_sum(self.linear.iter().zip(x).map(|(c, v)| c * v));
        lin - compensated_sum(d.iter().map(|v| v.ln()))
    }

    fn gradient(&self, d: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.linear)
            .map(|(row, c)| c - compensated_sum(row.iter().zip(d).map(|(a, di)| a / di)))
            .collect()
    }

    pub fn hessian(&self, d: &[f64]) -> DMatrix<f64> {
        let w: Vec<f64> = d.iter().map(|v| 1.0 / (v * v)).collect();
        weighted_gram(&self.rows, &w)
    }

    fn newton_step(&self, d: &[f64]) -> Result<(Vec<f64>, f64)> {
        let grad = self.gradient(d);
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = solve_spd(&self.hessian(d), &neg)?;
        let slope = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        Ok((step, slope))
    }

    /// Damped Newton from `x0`. Convergence is judged by `residual`, evaluated
    /// on the denominators, so callers can test the conditions they care
    /// about rather than the raw gradient.
    pub fn minimize(
        &self,
        x0: Vec<f64>,
        settings: NewtonSettings,
        residual: impl Fn(&[f64]) -> f64,
    ) -> Result<NewtonOutcome> {
        let mut x = x0;
        let mut d = self.denominators(&x);
        if d.iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(Error::InfeasibleDomain);
        }
        // A Jacobian that is singular at the start (redundant rows) must be
        // reported even when the start already satisfies the residuals.
        if !x.is_empty() && is_singular(&self.hessian(&d)) {
            return Err(Error::SingularJacobian);
        }
        let mut res = residual(&d);
        let mut iterations = 0;

        while res > settings.tolerance {
            if iterations >= settings.max_iterations {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: res,
                });
            }
            iterations += 1;
            let (step, slope) = self.newton_step(&d)?;
            let phi = self.objective(&x, &d);
            let mut t = 1.0;
            let mut in_domain = false;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                let dt = self.denominators(&trial);
                if dt.iter().all(|v| *v > 0.0 && v.is_finite()) {
                    in_domain = true;
                    let res_t = residual(&dt);
                    let phi_t = self.objective(&trial, &dt);
                    if phi_t <= phi + ARMIJO * t * slope || res_t < res {
                        accepted = Some((trial, dt, res_t));
                        break;
                    }
                }
                t *= settings.damping;
            }
            match accepted {
                Some((xn, dn, rn)) => {
                    x = xn;
                    d = dn;
                    res = rn;
                }
                None if !in_domain => return Err(Error::InfeasibleDomain),
                None => {
                    return Err(Error::NonConvergence {
                        iterations,
                        residual: res,
                    })
                }
            }
        }

        for _ in 0..settings.polish {
            let Ok((step, _)) = self.newton_step(&d) else {
                break;
            };
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + s).collect();
            let dt = self.denominators(&trial);
            if !dt.iter().all(|v| *v > 0.0) {
                break;
            }
            let rt = residual(&dt);
            if rt > res {
                break;
            }
            x = trial;
            d = dt;
            res = rt;
        }

        Ok(NewtonOutcome {
            x,
            denominators: d,
            residual: res,
            iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn singular_detection() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            solve_spd(&h, &[1.0, 0.0]),
            Err(Error::SingularJacobian)
        ));
        assert!(is_singular(&DMatrix::zeros(1, 1)));
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = solve_spd(&h, &[1.0, 2.0]).unwrap();
        assert!((2.0 * x[0] + 0.5 * x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn barrier_minimizes_one_dimensional_log() {
        // Φ(x) = x − log(x) has its minimum at x = 1.
        let base = [0.0];
        let row = [1.0];
        let b = Barrier {
            base: &base,
            rows: vec![&row],
            linear: vec![1.0],
        };
        let out = b
            .minimize(
                vec![5.0],
                NewtonSettings {
                    max_iterations: 100,
                    tolerance: 1e-14,
                    damping: 0.5,
                    polish: 1,
                },
                |d| (1.0 - 1.0 / d[0]).abs(),
            )
            .unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-13);
    }
}
