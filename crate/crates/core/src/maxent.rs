//! Maximum-entropy member of the solution set.
//!
//! `p_i = exp(−m − Σ_j λ_j f_ji)` with `e^m = Σ_i exp(−Σ_j λ_j f_ji)`. The
//! multipliers minimize the convex dual `ψ(λ) = Σ_j λ_j + m(λ)`, whose
//! gradient is the constraint residual `1 − Σ_i p_i f_ji` and whose Hessian
//! is the covariance of the coefficient rows under `p`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, ProbabilityVector};
use crate::numeric::{compensated_sum, max_abs, solve_spd, MAX_HALVINGS};
use crate::saddle::SolverOptions;

/// Multipliers this large mean the optimum sits on the simplex boundary.
const DIVERGENCE_LIMIT: f64 = 1e8;
/// A dual curvature collapse by this factor relative to the uniform start
/// means the iterates converged by running off towards a face.
const CURVATURE_COLLAPSE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxEntSolution {
    pub multipliers: Vec<f64>,
    pub log_norm: f64,
    pub distribution: ProbabilityVector,
    /// Shannon entropy in nats.
    pub entropy: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

struct Dual<'a> {
    constraints: &'a ConstraintSet,
}

struct DualPoint {
    value: f64,
    log_norm: f64,
    p: Vec<f64>,
    gradient: Vec<f64>,
}

impl Dual<'_> {
    fn eval(&self, lambda: &[f64]) -> DualPoint {
        let n = self.constraints.n_states();
        let mut expo = vec![0.0; n];
        for (l, row) in lambda.iter().zip(self.constraints.rows()) {
            for (e, f) in expo.iter_mut().zip(row) {
                *e -= l * f;
            }
        }
        let shift = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = expo.iter().map(|e| (e - shift).exp()).collect();
        let z = compensated_sum(w.iter().copied());
        let log_norm = shift + z.ln();
        let p: Vec<f64> = w.iter().map(|x| x / z).collect();
        let gradient: Vec<f64> = self
            .constraints
            .rows()
            .map(|row| 1.0 - compensated_sum(row.iter().zip(&p).map(|(f, q)| f * q)))
            .collect();
        DualPoint {
            value: compensated_sum(lambda.iter().copied()) + log_norm,
            log_norm,
            p,
            gradient,
        }
    }

    fn hessian(&self, p: &[f64]) -> DMatrix<f64> {
        let rows: Vec<&[f64]> = self.constraints.rows().collect();
        let mu: Vec<f64> = rows
            .iter()
            .map(|r| compensated_sum(r.iter().zip(p).map(|(f, q)| f * q)))
            .collect();
        let c = rows.len();
        let mut h = DMatrix::zeros(c, c);
        for a in 0..c {
            for b in a..c {
                let v = compensated_sum(
                    rows[a]
                        .iter()
                        .zip(rows[b])
                        .zip(p)
                        .map(|((x, y), q)| q * (x - mu[a]) * (y - mu[b])),
                );
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        h
    }
}

pub fn solve_maxent(constraints: &ConstraintSet, opts: &SolverOptions) -> Result<MaxEntSolution> {
    opts.check()?;
    let c = constraints.n_constraints();
    let dual = Dual { constraints };
    let mut lambda = match &opts.initial_multipliers {
        Some(v) if v.len() != c => return Err(Error::LengthMismatch(v.len(), c)),
        Some(v) => v.clone(),
        None => vec![0.0; c],
    };
    let uniform = vec![1.0 / constraints.n_states() as f64; constraints.n_states()];
    let start_curvature = largest_eigenvalue(&dual.hessian(&uniform));
    let mut point = dual.eval(&lambda);
    if c > 0 && crate::numeric::is_singular(&dual.hessian(&point.p)) {
        return Err(Error::SingularJacobian);
    }
    let mut res = max_abs(&point.gradient);
    let mut iterations = 0;

    while res > opts.residual_tolerance {
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                residual: res,
            });
        }
        let step = match solve_spd(&dual.hessian(&point.p), &point.gradient) {
            Ok(s) => s,
            // degenerate from the start: the rows themselves are redundant
            Err(Error::SingularJacobian) if iterations == 0 => return Err(Error::SingularJacobian),
            // degenerate after moving: p has collapsed onto a face
            Err(Error::SingularJacobian) => return Err(Error::Unbounded),
            Err(e) => return Err(e),
        };
        iterations += 1;
        // Newton direction is −H⁻¹∇ψ; `step` solved H s = ∇ψ
        let slope: f64 = -point
            .gradient
            .iter()
            .zip(&step)
            .map(|(g, s)| g * s)
            .sum::<f64>();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = lambda.iter().zip(&step).map(|(l, s)| l - t * s).collect();
            let tp = dual.eval(&trial);
            let tr = max_abs(&tp.gradient);
            if tp.value.is_finite() && (tp.value <= point.value + 1e-4 * t * slope || tr < res) {
                accepted = Some((trial, tp, tr));
                break;
            }
            t *= opts.damping;
        }
        let Some((l, p, r)) = accepted else {
            return Err(Error::NonConvergence {
                iterations,
                residual: res,
            });
        };
        if max_abs(&l) > DIVERGENCE_LIMIT {
            return Err(Error::Unbounded);
        }
        lambda = l;
        point = p;
        res = r;
    }

    if c > 0 {
        let h = dual.hessian(&point.p);
        let eig = nalgebra::SymmetricEigen::new(h).eigenvalues;
        if eig.min() <= CURVATURE_COLLAPSE * start_curvature {
            return Err(Error::Unbounded);
        }
    }

    let entropy = entropy_of(&point.p);
    Ok(MaxEntSolution {
        multipliers: lambda,
        log_norm: point.log_norm,
        distribution: ProbabilityVector::new(point.p)?,
        entropy,
        residual_norm: res,
        iterations,
    })
}

fn largest_eigenvalue(h: &DMatrix<f64>) -> f64 {
    if h.nrows() == 0 {
        return 0.0;
    }
    nalgebra::SymmetricEigen::new(h.clone()).eigenvalues.max()
}

fn entropy_of(p: &[f64]) -> f64 {
    -compensated_sum(p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()))
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(p: &ProbabilityVector) -> f64 {
    entropy_of(p.values())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_examples() {
        let u = ProbabilityVector::uniform(4).unwrap();
        assert!((entropy(&u) - 1.3862943611198906).abs() < 1e-12);
        let point = ProbabilityVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(entropy(&point), 0.0);
        let half = ProbabilityVector::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert!((entropy(&half) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn unconstrained_is_uniform() {
        let cs = ConstraintSet::unconstrained(16).unwrap();
        let me = solve_maxent(&cs, &SolverOptions::default()).unwrap();
        assert!(me
            .distribution
            .values()
            .iter()
            .all(|&p| (p - 1.0 / 16.0).abs() < 1e-16));
        assert!((me.entropy - 16f64.ln()).abs() < 1e-12);
        assert!((me.log_norm - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ones_row_is_singular() {
        let cs = ConstraintSet::new_lenient(3, vec![vec![1.0, 1.0, 1.0]]).unwrap();
        assert!(matches!(
            solve_maxent(&cs, &SolverOptions::default()),
            Err(Error::SingularJacobian)
        ));
    }

    #[test]
    fn boundary_only_feasibility_is_unbounded() {
        // Σ f p = 1 forces all weight onto the first state.
        let cs = ConstraintSet::new(3, vec![vec![1.0, 0.5, 0.0]]).unwrap();
        let err = solve_maxent(&cs, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Unbounded), "{err}");
    }

    #[test]
    fn stored_entropy_matches_distribution() {
        let cs = ConstraintSet::new(5, vec![vec![2.0, 1.0, 0.5, 0.3, 1.7]]).unwrap();
        let me = solve_maxent(&cs, &SolverOptions::default()).unwrap();
        assert!(me.residual_norm <= 1e-12);
        let direct = -me
            .distribution
            .values()
            .iter()
            .map(|p| p * p.ln())
            .sum::<f64>();
        assert!((me.entropy - direct).abs() < 1e-12);
        assert!(me.entropy <= 5f64.ln());
        for (p, (lam, f)) in me
            .distribution
            .values()
            .iter()
            .zip(std::iter::repeat(me.multipliers[0]).zip(cs.row(0)))
        {
            assert!((p - (-me.log_norm - lam * f).exp()).abs() < 1e-14);
        }
    }
}
