//! Domain types shared by every estimator, plus the on-disk formats for
//! constraint sets and distributions.
//!
//! A [`ConstraintSet`] holds `C` rows of coefficients `f_ji` over `N` states.
//! Every row has right-hand side 1 and normalization `Σ p_i = 1` is implicit,
//! so the solution set is `{p ≥ 0 : Σ p_i = 1, Σ_i f_ji p_i = 1 ∀j}`.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Components in `(-CLAMP_TOLERANCE, 0)` are snapped to zero.
pub const CLAMP_TOLERANCE: f64 = 1e-12;
/// Maximum deviation of `Σ p_i` from 1 accepted by [`ProbabilityVector::new`].
pub const SUM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    n_states: usize,
    // row-major, n_constraints * n_states
    coefficients: Vec<f64>,
}

impl ConstraintSet {
    /// Builds a constraint set, rejecting anything [`validate`] complains about.
    pub fn new(n_states: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let report = validate(n_states, &rows);
        if !report.is_valid() {
            return Err(Error::InvalidConstraints(
                report.violations.iter().map(|v| v.to_string()).collect(),
            ));
        }
        let n_constraints = rows.len();
        if n_constraints * 4 > n_states {
            log::warn!(
                "{n_constraints} constraints over {n_states} states: saddle estimates assume C << N"
            );
        }
        Ok(Self {
            n_states,
            coefficients: rows.into_iter().flatten().collect(),
        })
    }

    /// Builds a constraint set checking only structure (shape, finiteness,
    /// zero rows, `C < N`). Redundant rows are let through so that solvers
    /// can report them as singular Jacobians.
    pub fn new_lenient(n_states: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let report = validate(n_states, &rows);
        let structural: Vec<String> = report
            .violations
            .iter()
            .filter(|v| v.is_structural())
            .map(|v| v.to_string())
            .collect();
        if !structural.is_empty() {
            return Err(Error::InvalidConstraints(structural));
        }
        Ok(Self {
            n_states,
            coefficients: rows.into_iter().flatten().collect(),
        })
    }

    /// The unconstrained simplex over `n_states` states.
    pub fn unconstrained(n_states: usize) -> Result<Self> {
        Self::new(n_states, Vec::new())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_constraints(&self) -> usize {
        self.coefficients
            .len()
            .checked_div(self.n_states)
            .unwrap_or(0)
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.coefficients[j * self.n_states..(j + 1) * self.n_states]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coefficients.chunks_exact(self.n_states.max(1))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Coefficient column of state `i` across all constraints.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows().map(|r| r[i]).collect()
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self.n_states, &self.to_rows())
    }

    /// Returns the constraint set with states reordered so that new state `k`
    /// is old state `perm[k]`.
    pub fn permute_states(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_states {
            return Err(Error::LengthMismatch(perm.len(), self.n_states));
        }
        let rows = self
            .rows()
            .map(|r| perm.iter().map(|&i| r[i]).collect())
            .collect();
        Self::new_lenient(self.n_states, rows)
    }

    /// Max-norm residuals `|Σ_i p_i − 1|` followed by `|Σ_i f_ji p_i − 1|`.
    pub fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_constraints() + 1);
        out.push((crate::numeric::compensated_sum(p.iter().copied()) - 1.0).abs());
        for row in self.rows() {
            let s = crate::numeric::compensated_sum(row.iter().zip(p).map(|(f, x)| f * x));
            out.push((s - 1.0).abs());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoStates,
    TooManyConstraints {
        n_constraints: usize,
        n_states: usize,
    },
    RowLengthMismatch {
        row: usize,
        len: usize,
        expected: usize,
    },
    NonFinite {
        row: usize,
        col: usize,
    },
    ZeroRow {
        row: usize,
    },
    DuplicatesNormalization {
        row: usize,
    },
    DuplicateRows {
        first: usize,
        second: usize,
    },
}

impl Violation {
    /// Violations that make the matrix unusable, as opposed to redundant.
    pub fn is_structural(&self) -> bool {
        !matches!(
            self,
            Violation::DuplicatesNormalization { .. } | Violation::DuplicateRows { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoStates => write!(f, "n_states must be positive"),
            Violation::TooManyConstraints {
                n_constraints,
                n_states,
            } => write!(
                f,
                "too many constraints: {n_constraints} constraints require more than {n_states} states"
            ),
            Violation::RowLengthMismatch { row, len, expected } => write!(
                f,
                "row length mismatch: row {row} has {len} entries, expected {expected}"
            ),
            Violation::NonFinite { row, col } => {
                write!(f, "non-finite coefficient at row {row}, column {col}")
            }
            Violation::ZeroRow { row } => write!(f, "row {row} is identically zero"),
            Violation::DuplicatesNormalization { row } => {
                write!(f, "row {row} duplicates normalization")
            }
            Violation::DuplicateRows { first, second } => {
                write!(f, "duplicate constraint rows {first} and {second}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks shape, finiteness and row redundancy of raw constraint rows.
///
/// Rows are compared after dividing by their max-norm, so only exact
/// (scaled) duplicates are caught; near-duplicates show up later as
/// ill-conditioned Jacobians.
pub fn validate(n_states: usize, rows: &[Vec<f64>]) -> ValidationReport {
    let mut violations = Vec::new();
    if n_states == 0 {
        violations.push(Violation::NoStates);
    }
    if n_states > 0 && rows.len() >= n_states {
        violations.push(Violation::TooManyConstraints {
            n_constraints: rows.len(),
            n_states,
        });
    }
    let mut scaled: Vec<Option<Vec<f64>>> = Vec::with_capacity(rows.len());
    for (j, row) in rows.iter().enumerate() {
        if row.len() != n_states {
            violations.push(Violation::RowLengthMismatch {
                row: j,
                len: row.len(),
                expected: n_states,
            });
            scaled.push(None);
            continue;
        }
        if let Some(col) = row.iter().position(|x| !x.is_finite()) {
            violations.push(Violation::NonFinite { row: j, col });
            scaled.push(None);
            continue;
        }
        let norm = row.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if norm == 0.0 {
            violations.push(Violation::ZeroRow { row: j });
            scaled.push(None);
            continue;
        }
        let s: Vec<f64> = row.iter().map(|x| x / norm).collect();
        // a constant row is a multiple of the normalization row
        if s.iter().all(|&x| x == s[0]) {
            violations.push(Violation::DuplicatesNormalization { row: j });
        }
        scaled.push(Some(s));
    }
    for a in 0..scaled.len() {
        for b in a + 1..scaled.len() {
            if let (Some(x), Some(y)) = (&scaled[a], &scaled[b]) {
                if x == y {
                    violations.push(Violation::DuplicateRows {
                        first: a,
                        second: b,
                    });
                }
            }
        }
    }
    ValidationReport { violations }
}

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbabilityVector {
    values: Vec<f64>,
}

impl ProbabilityVector {
    /// Validates without renormalizing. Tiny negative components are clamped to 0.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        for (index, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || *v <= -CLAMP_TOLERANCE || *v > 1.0 + CLAMP_TOLERANCE {
                return Err(Error::OutOfRange { index, value: *v });
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum = crate::numeric::compensated_sum(values.iter().copied());
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::NotNormalized(sum));
        }
        Ok(Self { values })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl std::ops::Index<usize> for ProbabilityVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Saddle-point multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    /// Multiplier conjugate to normalization.
    pub m_star: f64,
    /// Multipliers conjugate to the constraint rows.
    pub lambda_star: Vec<f64>,
    /// Max-norm of the stationarity residuals at termination.
    pub residual_norm: f64,
    pub iterations: usize,
}

impl SaddlePoint {
    /// `D_i = m* + Σ_j λ_j* f_ji` for every state.
    pub fn denominators(&self, constraints: &ConstraintSet) -> Vec<f64> {
        let mut d = vec![self.m_star; constraints.n_states()];
        for (lam, row) in self.lambda_star.iter().zip(constraints.rows()) {
            for (di, f) in d.iter_mut().zip(row) {
                *di += lam * f;
            }
        }
        d
    }
}

/// Running moments of a uniform walk over the solution set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n_samples: u64,
    pub mean: Vec<f64>,
    /// Per-component `E[p_i²]`.
    pub second_moment: Vec<f64>,
    /// Batch-means standard error of each component of `mean`.
    pub mean_std_error: Vec<f64>,
    /// Batch-means standard error of each per-component variance.
    pub variance_std_error: Vec<f64>,
    pub seed: u64,
    pub n_steps: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub n_chains: u64,
    pub generator: String,
}

impl SampleStats {
    /// Per-component `E[p_i²] − E[p_i]²`, floored at zero.
    pub fn variance(&self) -> Vec<f64> {
        self.second_moment
            .iter()
            .zip(&self.mean)
            .map(|(m2, m)| (m2 - m * m).max(0.0))
            .collect()
    }

    /// Pools independent chains by sample-count weighted moments.
    pub fn merge(parts: &[SampleStats]) -> Result<SampleStats> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("nothing to merge".into()))?;
        let n = first.mean.len();
        let total: u64 = parts.iter().map(|s| s.n_samples).sum();
        if total == 0 {
            return Err(Error::InvalidInput("merged chains hold no samples".into()));
        }
        let mut out = SampleStats {
            n_samples: total,
            mean: vec![0.0; n],
            second_moment: vec![0.0; n],
            mean_std_error: vec![0.0; n],
            variance_std_error: vec![0.0; n],
            seed: first.seed,
            n_steps: 0,
            burn_in: first.burn_in,
            thinning: first.thinning,
            n_chains: 0,
            generator: first.generator.clone(),
        };
        for part in parts {
            if part.mean.len() != n {
                return Err(Error::LengthMismatch(part.mean.len(), n));
            }
            let w = part.n_samples as f64 / total as f64;
            for i in 0..n {
                out.mean[i] += w * part.mean[i];
                out.second_moment[i] += w * part.second_moment[i];
                out.mean_std_error[i] += (w * part.mean_std_error[i]).powi(2);
                out.variance_std_error[i] += (w * part.variance_std_error[i]).powi(2);
            }
            out.n_steps += part.n_steps;
            out.n_chains += part.n_chains;
        }
        out.mean_std_error.iter_mut().for_each(|x| *x = x.sqrt());
        out.variance_std_error
            .iter_mut()
            .for_each(|x| *x = x.sqrt());
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Weak,
    Intermediate,
    Strong,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Weak => "weak",
            Regime::Intermediate => "intermediate",
            Regime::Strong => "strong",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Saddle-level description of the solution set's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySummary {
    pub widths: Vec<f64>,
    pub log_volume: f64,
    pub log_volume_bound: f64,
    pub volume_deficit: f64,
    /// RMS of all coefficients; absent without constraints.
    pub sigma_f: Option<f64>,
    /// `sigma_f / √N`; absent without constraints.
    pub strength_ratio: Option<f64>,
    pub regime: Regime,
}

#[derive(Serialize, Deserialize)]
struct ConstraintFile {
    n_states: usize,
    constraints: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest: Option<serde_json::Value>,
}

fn parse_file(text: &str, origin: &str) -> Result<ConstraintFile> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })
}

pub fn parse_constraints(text: &str, origin: &str) -> Result<ConstraintSet> {
    let file = parse_file(text, origin)?;
    ConstraintSet::new(file.n_states, file.constraints)
}

pub fn read_constraints(path: impl AsRef<Path>) -> Result<ConstraintSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_constraints(&text, &path.display().to_string())
}

/// Like [`read_constraints`] but only structurally validated, see
/// [`ConstraintSet::new_lenient`].
pub fn read_constraints_lenient(path: impl AsRef<Path>) -> Result<ConstraintSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = parse_file(&text, &path.display().to_string())?;
    ConstraintSet::new_lenient(file.n_states, file.constraints)
}

pub fn constraints_to_json(
    constraints: &ConstraintSet,
    manifest: Option<serde_json::Value>,
) -> String {
    let file = ConstraintFile {
        n_states: constraints.n_states(),
        constraints: constraints.to_rows(),
        manifest,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("constraint file serializes");
    s.push('\n');
    s
}

pub fn write_constraints(
    constraints: &ConstraintSet,
    path: impl AsRef<Path>,
    manifest: Option<serde_json::Value>,
) -> Result<()> {
    write_atomic(path, constraints_to_json(constraints, manifest).as_bytes())
}

/// `index,value` CSV with 17 significant digits per value.
pub fn distribution_to_csv(values: &[f64]) -> String {
    let mut s = String::from("index,value\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", format_sig17(*v)));
    }
    s
}

pub fn parse_distribution_csv(text: &str, origin: &str) -> Result<Vec<f64>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "index,value" => {}
        _ => return Err(err(1, "expected header `index,value`".into())),
    }
    let mut out = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, val) = line
            .split_once(',')
            .ok_or_else(|| err(ln + 1, "expected two fields".into()))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|e| err(ln + 1, format!("index: {e}")))?;
        if idx != out.len() {
            return Err(err(ln + 1, format!("index {idx} out of order")));
        }
        let val: f64 = val
            .trim()
            .parse()
            .map_err(|e| err(ln + 1, format!("value: {e}")))?;
        out.push(val);
    }
    Ok(out)
}

pub fn read_distribution(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_distribution_csv(&text, &path.display().to_string())
}

pub fn write_distribution(values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, distribution_to_csv(values).as_bytes())
}

/// Scientific notation with 17 significant digits, enough to round-trip any f64.
pub fn format_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_is_valid() {
        assert!(validate(4, &[]).is_valid());
        let cs = ConstraintSet::unconstrained(4).unwrap();
        assert_eq!(cs.n_constraints(), 0);
        assert_eq!(cs.rows().count(), 0);
    }

    #[test]
    fn ones_row_duplicates_normalization() {
        let r = validate(3, &[vec![1.0, 1.0, 1.0]]);
        assert_eq!(
            r.violations,
            vec![Violation::DuplicatesNormalization { row: 0 }]
        );
        assert!(r.violations[0]
            .to_string()
            .contains("duplicates normalization"));
    }

    #[test]
    fn identical_rows_rejected() {
        let row = vec![0.3, -1.0, 2.0, 0.7, 1.5];
        let r = validate(5, &[row.clone(), row]);
        assert_eq!(
            r.violations,
            vec![Violation::DuplicateRows {
                first: 0,
                second: 1
            }]
        );
        assert!(r.violations[0]
            .to_string()
            .contains("duplicate constraint rows"));
        // scaled copies are duplicates too
        let r = validate(3, &[vec![1.0, 2.0, 4.0], vec![0.5, 1.0, 2.0]]);
        assert!(!r.is_valid());
    }

    #[test]
    fn shape_and_finiteness() {
        let r = validate(3, &[vec![2.0, 1.0]]);
        assert!(r.violations[0].to_string().contains("row length mismatch"));
        let r = validate(3, &[vec![f64::NAN, 1.0, 2.0]]);
        assert_eq!(r.violations, vec![Violation::NonFinite { row: 0, col: 0 }]);
        let r = validate(2, &[vec![0.0, 3.0], vec![1.0, 3.0]]);
        assert!(matches!(
            r.violations[0],
            Violation::TooManyConstraints { .. }
        ));
        assert!(!validate(0, &[]).is_valid());
    }

    #[test]
    fn probability_vector_clamps_but_never_renormalizes() {
        let p = ProbabilityVector::new(vec![0.5, 0.5 + 5e-13, -5e-13]).unwrap();
        assert_eq!(p[2], 0.0);
        assert!(matches!(
            ProbabilityVector::new(vec![0.5, 0.5 + 1e-9]),
            Err(Error::NotNormalized(_))
        ));
        assert!(matches!(
            ProbabilityVector::new(vec![1.1, -0.1]),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn constraint_file_examples() {
        let cs = parse_constraints(
            r#"{"n_states": 3, "constraints": [[2.0, 1.0, 0.5]]}"#,
            "inline",
        )
        .unwrap();
        assert_eq!((cs.n_states(), cs.n_constraints()), (3, 1));
        assert_eq!(cs.row(0), &[2.0, 1.0, 0.5]);

        let cs = parse_constraints(r#"{"n_states": 16, "constraints": []}"#, "inline").unwrap();
        assert_eq!((cs.n_states(), cs.n_constraints()), (16, 0));

        let err = parse_constraints(r#"{"n_states": 3, "constraints": [[2.0, 1.0]]}"#, "inline")
            .unwrap_err();
        assert!(err.to_string().contains("row length mismatch"));

        let err = parse_constraints(
            "{\"n_states\": 3,\n \"constraints\": [[1, \"x\"]]}",
            "f.json",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("f.json") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn csv_round_trip() {
        let v = vec![0.1, 1.0 / 3.0, 0.1 + 0.2, 1e-300];
        let text = distribution_to_csv(&v);
        assert!(text.starts_with("index,value\n0,1.0000000000000001e-1\n"));
        assert_eq!(parse_distribution_csv(&text, "x").unwrap(), v);
        assert!(parse_distribution_csv("i,v\n", "x").is_err());
    }

    #[test]
    fn merge_weights_by_sample_count() {
        let mk = |n, m: f64| SampleStats {
            n_samples: n,
            mean: vec![m, 1.0 - m],
            second_moment: vec![m * m, (1.0 - m) * (1.0 - m)],
            mean_std_error: vec![0.1, 0.1],
            variance_std_error: vec![0.0, 0.0],
            seed: 1,
            n_steps: n,
            burn_in: 0,
            thinning: 1,
            n_chains: 1,
            generator: "g".into(),
        };
        let merged = SampleStats::merge(&[mk(1, 0.2), mk(3, 0.6)]).unwrap();
        assert_eq!(merged.n_samples, 4);
        assert!((merged.mean[0] - 0.5).abs() < 1e-15);
        assert!((merged.variance()[0] - 0.03).abs() < 1e-12);
        assert_eq!(merged.n_chains, 2);
    }
}
