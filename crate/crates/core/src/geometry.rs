//! Solution-set geometry read off the first-order centroid.

use crate::error::{Error, Result};
use crate::model::{
    ConstraintSet, GeometrySummary, ProbabilityVector, Regime, SaddlePoint, SampleStats,
};
use crate::numeric::compensated_sum;
use crate::saddle::{centroid_first_order, fluctuation_matrix};

/// `σ_f / √N` at or above which constraints are weak.
pub const WEAK_RATIO: f64 = 5.0;
/// `σ_f / √N` at or below which constraints are strong.
pub const STRONG_RATIO: f64 = 0.5;

/// Saddle estimate of the per-component widths: the centroid itself.
pub fn widths(p_c1: &ProbabilityVector) -> Vec<f64> {
    p_c1.values().to_vec()
}

/// Widths including the multiplier response, `p_i √(1 − q_i p_i²)` with
/// `q_i = a_iᵀ M⁻¹ a_i` and `a_i = (1, f_1i, …, f_Ci)`.
///
/// Since `Σ_i q_i p_i² = C + 1` this differs from [`widths`] only for
/// components the constraints pin down, which carry a large share of the mass.
pub fn response_widths(constraints: &ConstraintSet, sp: &SaddlePoint) -> Result<Vec<f64>> {
    let p = centroid_first_order(constraints, sp)?;
    let m = fluctuation_matrix(constraints, sp, None)?.entries;
    let chol = m.cholesky().ok_or(Error::SingularJacobian)?;
    Ok((0..constraints.n_states())
        .map(|i| {
            let a = nalgebra::DVector::from_iterator(
                constraints.n_constraints() + 1,
                std::iter::once(1.0).chain(constraints.column(i)),
            );
            let q = a.dot(&chol.solve(&a));
            p[i] * (1.0 - q * p[i] * p[i]).max(0.0).sqrt()
        })
        .collect())
}

/// `log Z ≈ N + Σ_i log p_i`.
pub fn log_volume(p_c1: &ProbabilityVector) -> f64 {
    p_c1.len() as f64 + compensated_sum(p_c1.values().iter().map(|p| p.ln()))
}

/// `N − N log N`, the largest value [`log_volume`] can take.
pub fn log_volume_bound(n: usize) -> f64 {
    let n = n as f64;
    n - n * n.ln()
}

/// Root-mean-square of all coefficients, `None` without constraints.
pub fn coefficient_scale(constraints: &ConstraintSet) -> Option<f64> {
    let count = constraints.n_constraints() * constraints.n_states();
    if count == 0 {
        return None;
    }
    let ss = compensated_sum(constraints.rows().flatten().map(|f| f * f));
    Some((ss / count as f64).sqrt())
}

pub fn regime_for(constraints: &ConstraintSet) -> Regime {
    match coefficient_scale(constraints) {
        None => Regime::Weak,
        Some(s) => {
            let ratio = s / (constraints.n_states() as f64).sqrt();
            if ratio >= WEAK_RATIO {
                Regime::Weak
            } else if ratio <= STRONG_RATIO {
                Regime::Strong
            } else {
                Regime::Intermediate
            }
        }
    }
}

pub fn classify_strength(constraints: &ConstraintSet, p_c1: &ProbabilityVector) -> GeometrySummary {
    let n = constraints.n_states();
    let lv = log_volume(p_c1);
    let bound = log_volume_bound(n);
    let sigma_f = coefficient_scale(constraints);
    GeometrySummary {
        widths: widths(p_c1),
        log_volume: lv,
        log_volume_bound: bound,
        volume_deficit: bound - lv,
        sigma_f,
        strength_ratio: sigma_f.map(|s| s / (n as f64).sqrt()),
        regime: regime_for(constraints),
    }
}

/// `Σ_i (p_i − q_i)²`.
pub fn squared_error(p_true: &ProbabilityVector, p_est: &ProbabilityVector) -> Result<f64> {
    if p_true.len() != p_est.len() {
        return Err(Error::LengthMismatch(p_true.len(), p_est.len()));
    }
    Ok(p_true
        .values()
        .iter()
        .zip(p_est.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Squared error of `p` averaged over the uniform measure on the solution
/// set, using sampled moments: `Σ_i p_i² − 2 p_i ⟨p_i⟩ + ⟨p_i²⟩`.
pub fn expected_error(p: &ProbabilityVector, stats: &SampleStats) -> Result<f64> {
    if p.len() != stats.mean.len() {
        return Err(Error::LengthMismatch(p.len(), stats.mean.len()));
    }
    Ok(compensated_sum(
        p.values()
            .iter()
            .zip(&stats.mean)
            .zip(&stats.second_moment)
            .map(|((pi, m), m2)| pi * pi - 2.0 * pi * m + m2),
    ))
}
