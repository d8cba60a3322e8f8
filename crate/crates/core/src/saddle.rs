//! Saddle-point estimates of the solution-set centroid.
//!
//! The stationarity conditions for `(m, λ)` are
//!
//! ```text
//! r_0 = 1 − Σ_i 1/D_i = 0,    r_j = 1 − Σ_i f_ji/D_i = 0,    D_i = m + Σ_j λ_j f_ji.
//! ```
//!
//! Combining them gives `m = N − Σ_j λ_j`, which is substituted so Newton
//! runs over `λ` alone. With that substitution the conditions are the
//! stationarity conditions of the convex barrier
//! `φ(λ) = N − Σ_i log(N + Σ_j λ_j (f_ji − 1))`, whose Hessian is the
//! fluctuation matrix restricted to the constraint directions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, ProbabilityVector, SaddlePoint, CLAMP_TOLERANCE};
use crate::numeric::{self, compensated_sum, max_abs, Barrier, NewtonSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub residual_tolerance: f64,
    /// Step reduction factor for backtracking.
    pub damping: f64,
    /// Starting multipliers, one per constraint. Defaults to zero (`m = N`).
    pub initial_multipliers: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            residual_tolerance: 1e-12,
            damping: 0.5,
            initial_multipliers: None,
        }
    }
}

impl SolverOptions {
    pub fn check(&self) -> Result<()> {
        if self.residual_tolerance.is_nan() || self.residual_tolerance <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "residual tolerance must be positive, got {}",
                self.residual_tolerance
            )));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::InvalidInput(format!(
                "damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        Ok(())
    }

    pub(crate) fn newton(&self, polish: usize) -> NewtonSettings {
        NewtonSettings {
            max_iterations: self.max_iterations,
            tolerance: self.residual_tolerance,
            damping: self.damping,
            polish,
        }
    }
}

/// Signed stationarity residuals `(r_0, r_1, …, r_C)` for denominators `d`.
pub fn saddle_residuals(constraints: &ConstraintSet, d: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(constraints.n_constraints() + 1);
    out.push(1.0 - compensated_sum(d.iter().map(|x| 1.0 / x)));
    for row in constraints.rows() {
        out.push(1.0 - compensated_sum(row.iter().zip(d).map(|(f, x)| f / x)));
    }
    out
}

pub fn solve_saddle(constraints: &ConstraintSet, opts: &SolverOptions) -> Result<SaddlePoint> {
    opts.check()?;
    let n = constraints.n_states();
    let c = constraints.n_constraints();
    let shifted: Vec<Vec<f64>> = constraints
        .rows()
        .map(|r| r.iter().map(|f| f - 1.0).collect())
        .collect();
    let base = vec![n as f64; n];
    let barrier = Barrier {
        base: &base,
        rows: shifted.iter().map(Vec::as_slice).collect(),
        linear: vec![0.0; c],
    };
    let x0 = match &opts.initial_multipliers {
        Some(v) if v.len() != c => return Err(Error::LengthMismatch(v.len(), c)),
        Some(v) => v.clone(),
        None => vec![0.0; c],
    };
    let out = barrier.minimize(x0, opts.newton(1), |d| {
        max_abs(&saddle_residuals(constraints, d))
    })?;
    let m_star = n as f64 - out.x.iter().sum::<f64>();
    Ok(SaddlePoint {
        m_star,
        lambda_star: out.x,
        residual_norm: out.residual,
        iterations: out.iterations,
    })
}

/// `p_i = 1 / D_i`.
pub fn centroid_first_order(
    constraints: &ConstraintSet,
    sp: &SaddlePoint,
) -> Result<ProbabilityVector> {
    let d = sp.denominators(constraints);
    if d.iter().any(|x| x.is_nan() || *x <= 0.0) {
        return Err(Error::InfeasibleDomain);
    }
    ProbabilityVector::new(d.iter().map(|x| 1.0 / x).collect())
}

/// The `(C+1)×(C+1)` matrix `M_αβ = Σ_i f_αi f_βi / D_i²` with `f_0i = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationMatrix {
    pub entries: DMatrix<f64>,
}

impl FluctuationMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn log_det(&self) -> Result<f64> {
        if numeric::is_singular(&self.entries) {
            return Err(Error::SingularJacobian);
        }
        let chol = self
            .entries
            .clone()
            .cholesky()
            .ok_or(Error::SingularJacobian)?;
        Ok(2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
    }
}

fn augmented_rows(constraints: &ConstraintSet) -> Vec<Vec<f64>> {
    std::iter::once(vec![1.0; constraints.n_states()])
        .chain(constraints.rows().map(<[f64]>::to_vec))
        .collect()
}

fn matrix_from_denominators(constraints: &ConstraintSet, d: &[f64]) -> FluctuationMatrix {
    let rows = augmented_rows(constraints);
    let w: Vec<f64> = d.iter().map(|x| 1.0 / (x * x)).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    FluctuationMatrix {
        entries: numeric::weighted_gram(&refs, &w),
    }
}

/// Fluctuation matrix at the saddle, optionally with a field `h` added to
/// every denominator. At `h = 0` it is the Jacobian of the residual map
/// `(m, λ) ↦ (r_0, r_j)` up to sign.
pub fn fluctuation_matrix(
    constraints: &ConstraintSet,
    sp: &SaddlePoint,
    field: Option<&[f64]>,
) -> Result<FluctuationMatrix> {
    let mut d = sp.denominators(constraints);
    if let Some(h) = field {
        if h.len() != d.len() {
            return Err(Error::LengthMismatch(h.len(), d.len()));
        }
        d.iter_mut().zip(h).for_each(|(x, hi)| *x += hi);
    }
    if d.iter().any(|x| x.is_nan() || *x <= 0.0) {
        return Err(Error::InfeasibleDomain);
    }
    Ok(matrix_from_denominators(constraints, &d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondOrderCentroid {
    pub distribution: ProbabilityVector,
    /// `½ d log det M / dh_i` before the normalization shift.
    pub correction: Vec<f64>,
    /// Uniform shift subtracted from every component so that `Σ p_i = 1`.
    pub normalization_shift: f64,
    /// `|Σ_i p_i − 1|` then `|Σ_i f_ji p_i − 1|` for the returned distribution.
    pub constraint_residuals: Vec<f64>,
}

impl SecondOrderCentroid {
    /// First-order centroid plus correction, before normalization.
    pub fn unshifted(&self) -> Vec<f64> {
        self.distribution
            .values()
            .iter()
            .map(|p| p + self.normalization_shift)
            .collect()
    }
}

/// `½ ∂ log det M / ∂h_i` at zero field, before any normalization.
///
/// With `W = M⁻¹`, `K_ki = f_kᵀ W f_i` and `q_k = K_kk`, differentiating
/// `log det M` through both the explicit `D_i` dependence and the implicit
/// multiplier response `M ∂λ/∂h_i = −f_i p_i²` gives
///
/// ```text
/// ½ ∂_{h_i} log det M = −q_i p_i³ + p_i² Σ_k q_k p_k³ K_ki.
/// ```
///
/// `K` has rank `C+1` and is applied through the Cholesky factor of `M`.
pub fn second_order_correction(constraints: &ConstraintSet, sp: &SaddlePoint) -> Result<Vec<f64>> {
    let n = constraints.n_states();
    let first = centroid_first_order(constraints, sp)?;
    let p = first.values();
    let m = fluctuation_matrix(constraints, sp, None)?;
    if numeric::is_singular(&m.entries) {
        return Err(Error::SingularJacobian);
    }
    let chol = m
        .entries
        .clone()
        .cholesky()
        .ok_or(Error::SingularJacobian)?;

    let rows = augmented_rows(constraints);
    let k = rows.len();
    let a = DMatrix::from_fn(k, n, |alpha, i| rows[alpha][i]);
    // B = L⁻¹ A so that K = Bᵀ B
    let b = chol
        .l()
        .solve_lower_triangular(&a)
        .ok_or(Error::SingularJacobian)?;
    let q: Vec<f64> = (0..n).map(|i| b.column(i).norm_squared()).collect();
    let mut v = DVector::zeros(k);
    for i in 0..n {
        v.axpy(q[i] * p[i].powi(3), &b.column(i), 1.0);
    }
    Ok((0..n)
        .map(|i| -q[i] * p[i].powi(3) + p[i] * p[i] * v.dot(&b.column(i)))
        .collect())
}

/// Gaussian-fluctuation refinement of the first-order centroid: the
/// [`second_order_correction`] added to `p^{c,1}`, then shifted uniformly
/// so the components sum to one.
pub fn centroid_second_order(
    constraints: &ConstraintSet,
    sp: &SaddlePoint,
) -> Result<SecondOrderCentroid> {
    let n = constraints.n_states();
    let first = centroid_first_order(constraints, sp)?;
    let p = first.values();
    let correction = second_order_correction(constraints, sp)?;

    let shift = compensated_sum(correction.iter().copied()) / n as f64;
    let values: Vec<f64> = p
        .iter()
        .zip(&correction)
        .map(|(pi, ci)| pi + ci - shift)
        .collect();
    if let Some((index, &value)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| **v <= -CLAMP_TOLERANCE)
    {
        return Err(Error::NegativeComponent {
            index,
            value,
            first_order: first,
        });
    }
    let constraint_residuals = constraints.residuals(&values);
    Ok(SecondOrderCentroid {
        distribution: ProbabilityVector::new(values)?,
        correction,
        normalization_shift: shift,
        constraint_residuals,
    })
}

/// Saddle of the field-coupled exponent over all `C+1` multipliers
/// `(λ_0 = m, λ_1, …, λ_C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSaddle {
    pub multipliers: Vec<f64>,
    pub denominators: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Re-solves the saddle with `D_i = h_i + Σ_α λ_α f_αi`, warm-started from
/// the zero-field saddle `sp`.
pub fn solve_saddle_with_field(
    constraints: &ConstraintSet,
    field: &[f64],
    sp: &SaddlePoint,
    opts: &SolverOptions,
) -> Result<FieldSaddle> {
    opts.check()?;
    let n = constraints.n_states();
    if field.len() != n {
        return Err(Error::LengthMismatch(field.len(), n));
    }
    let rows = augmented_rows(constraints);
    let barrier = Barrier {
        base: field,
        rows: rows.iter().map(Vec::as_slice).collect(),
        linear: vec![1.0; rows.len()],
    };
    let mut x0: Vec<f64> = std::iter::once(sp.m_star)
        .chain(sp.lambda_star.iter().copied())
        .collect();
    let min_d = barrier
        .denominators(&x0)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if min_d <= 0.0 {
        x0[0] += 1.0 - min_d;
    }
    // gradient of the barrier is exactly the residual vector
    let out = barrier.minimize(x0, opts.newton(2), |d| {
        max_abs(&saddle_residuals(constraints, d))
    })?;
    Ok(FieldSaddle {
        multipliers: out.x,
        denominators: out.denominators,
        residual_norm: out.residual,
        iterations: out.iterations,
    })
}

/// Saddle-plus-Gaussian estimate of `log Z(h)`:
/// `Σ_α λ_α* − Σ_i log D_i − ½ log det M`, all at the field-shifted saddle.
pub fn log_partition_fluct(
    constraints: &ConstraintSet,
    field: &[f64],
    opts: &SolverOptions,
) -> Result<f64> {
    let sp = solve_saddle(constraints, opts)?;
    log_partition_fluct_from(constraints, field, &sp, opts)
}

/// As [`log_partition_fluct`], reusing an already solved zero-field saddle.
pub fn log_partition_fluct_from(
    constraints: &ConstraintSet,
    field: &[f64],
    sp: &SaddlePoint,
    opts: &SolverOptions,
) -> Result<f64> {
    let fs = solve_saddle_with_field(constraints, field, sp, opts)?;
    let log_det = matrix_from_denominators(constraints, &fs.denominators).log_det()?;
    Ok(compensated_sum(fs.multipliers.iter().copied())
        - compensated_sum(fs.denominators.iter().map(|d| d.ln()))
        - 0.5 * log_det)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segment() -> ConstraintSet {
        ConstraintSet::new(3, vec![vec![2.0, 1.0, 0.5]]).unwrap()
    }

    #[test]
    fn unconstrained_saddle_is_uniform() {
        let cs = ConstraintSet::unconstrained(4).unwrap();
        let sp = solve_saddle(&cs, &SolverOptions::default()).unwrap();
        assert_eq!(sp.m_star, 4.0);
        assert!(sp.lambda_star.is_empty());
        let p = centroid_first_order(&cs, &sp).unwrap();
        assert_eq!(p.values(), &[0.25; 4]);

        let m = fluctuation_matrix(&cs, &sp, None).unwrap();
        assert_eq!(m.dim(), 1);
        assert_eq!(m.entries[(0, 0)], 0.25);

        let cs = ConstraintSet::unconstrained(16).unwrap();
        let sp = solve_saddle(&cs, &SolverOptions::default()).unwrap();
        let p = centroid_first_order(&cs, &sp).unwrap();
        assert!(p.values().iter().all(|&x| x == 1.0 / 16.0));
    }

    #[test]
    fn segment_saddle_closed_form() {
        // Stationarity of φ reduces to 1/(3+λ) = 0.5/(3−λ/2), i.e. λ = 3/2.
        let cs = segment();
        let sp = solve_saddle(&cs, &SolverOptions::default()).unwrap();
        assert!((sp.lambda_star[0] - 1.5).abs() < 1e-12);
        assert!((sp.m_star - 1.5).abs() < 1e-12);
        assert!(sp.residual_norm <= 1e-12);
        let p = centroid_first_order(&cs, &sp).unwrap();
        for (a, b) in p.values().iter().zip([2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ones_row_is_singular() {
        let cs = ConstraintSet::new_lenient(3, vec![vec![1.0, 1.0, 1.0]]).unwrap();
        assert!(matches!(
            solve_saddle(&cs, &SolverOptions::default()),
            Err(Error::SingularJacobian)
        ));
    }

    #[test]
    fn infeasible_constraint_does_not_converge() {
        // every coefficient above 1: no distribution satisfies Σ f p = 1
        let cs = ConstraintSet::new(3, vec![vec![2.0, 3.0, 4.0]]).unwrap();
        let err = solve_saddle(&cs, &SolverOptions::default()).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn options_are_checked() {
        let cs = segment();
        let bad = SolverOptions {
            damping: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            solve_saddle(&cs, &bad),
            Err(Error::InvalidInput(_))
        ));
        let bad = SolverOptions {
            initial_multipliers: Some(vec![0.0, 0.0]),
            ..Default::default()
        };
        assert!(matches!(
            solve_saddle(&cs, &bad),
            Err(Error::LengthMismatch(2, 1))
        ));
        let capped = SolverOptions {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(matches!(
            solve_saddle(&cs, &capped),
            Err(Error::NonConvergence { iterations: 0, .. })
        ));
    }

    #[test]
    fn unconstrained_second_order_is_uniform() {
        for n in [2, 5, 17] {
            let cs = ConstraintSet::unconstrained(n).unwrap();
            let sp = solve_saddle(&cs, &SolverOptions::default()).unwrap();
            let c2 = centroid_second_order(&cs, &sp).unwrap();
            assert!(c2.correction.iter().all(|c| c.abs() < 1e-15));
            for v in c2.distribution.values() {
                assert!((v - 1.0 / n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn second_order_preserves_constraints() {
        let cs = ConstraintSet::new(5, vec![vec![2.0, 1.0, 0.5, 0.3, 1.7]]).unwrap();
        let sp = solve_saddle(&cs, &SolverOptions::default()).unwrap();
        let c2 = centroid_second_order(&cs, &sp).unwrap();
        assert!(c2.normalization_shift.abs() < 1e-15);
        assert!(c2.constraint_residuals.iter().all(|r| *r < 1e-12));
    }

    #[test]
    fn log_partition_closed_form() {
        let cs = ConstraintSet::unconstrained(2).unwrap();
        let v = log_partition_fluct(&cs, &[0.0, 0.0], &SolverOptions::default()).unwrap();
        let expected = 2.0 - 2.0 * 2f64.ln() - 0.5 * 0.5f64.ln();
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn uniform_field_shifts_log_partition_by_minus_eps() {
        let cs = ConstraintSet::unconstrained(6).unwrap();
        let opts = SolverOptions::default();
        let v0 = log_partition_fluct(&cs, &[0.0; 6], &opts).unwrap();
        for eps in [1e-3, 1e-2] {
            let v = log_partition_fluct(&cs, &[eps; 6], &opts).unwrap();
            assert!((v - v0 + eps).abs() < 1e-12, "eps {eps}: {}", v - v0);
        }
    }

    #[test]
    fn fluctuation_matrix_is_symmetric_and_checks_field() {
        let cs = ConstraintSet::new(4, vec![vec![3.0, 0.2, 1.1, -0.4]]).unwrap();
        let sp = solve_saddle(&cs, &SolverOptions::default()).unwrap();
        let m = fluctuation_matrix(&cs, &sp, Some(&[0.1, 0.0, 0.2, 0.0])).unwrap();
        assert_eq!(m.entries, m.entries.transpose());
        assert!(matches!(
            fluctuation_matrix(&cs, &sp, Some(&[-1e6, 0.0, 0.0, 0.0])),
            Err(Error::InfeasibleDomain)
        ));
        assert!(matches!(
            fluctuation_matrix(&cs, &sp, Some(&[0.0])),
            Err(Error::LengthMismatch(1, 4))
        ));
    }
}
