//! Estimator comparisons, weak/strong regime checks, instance generation and
//! the single-constraint N = 16 experiment.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::{classify_strength, expected_error, regime_for};
use crate::maxent::solve_maxent;
use crate::model::{
    constraints_to_json, format_sig17, write_atomic, ConstraintSet, GeometrySummary,
    ProbabilityVector, Regime, SaddlePoint, SampleStats,
};
use crate::numeric::max_abs;
use crate::saddle::{centroid_first_order, centroid_second_order, solve_saddle, SolverOptions};
use crate::sampler::{chart, run_chains, WalkParams};

/// Retries allowed when a generated instance is infeasible.
pub const MAX_RETRIES: u32 = 100;

/// SplitMix64 finalizer applied to `seed + k·γ`; used for derived sub-seeds.
pub fn mix_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `c × n` independent `N(0, σ²)` coefficients.
pub fn gen_gaussian_constraints(
    n: usize,
    c: usize,
    sigma: f64,
    seed: u64,
) -> Result<ConstraintSet> {
    if n == 0 || c >= n {
        return Err(Error::InvalidInput(format!(
            "need 0 <= c < n, got n = {n}, c = {c}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..c)
        .map(|_| (0..n).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    ConstraintSet::new(n, rows)
}

/// A generated instance together with the sub-seed that produced it.
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub constraints: ConstraintSet,
    pub seed: u64,
    pub retries: u32,
}

/// Whether the solution set has a nonempty interior. Exact for a single
/// constraint (`min f < 1 < max f`); otherwise decided by whether the
/// max-ent dual attains its minimum.
pub fn is_feasible(constraints: &ConstraintSet) -> bool {
    match constraints.n_constraints() {
        0 => true,
        1 => {
            let row = constraints.row(0);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lo < 1.0 && 1.0 < hi
        }
        _ => solve_maxent(constraints, &SolverOptions::default()).is_ok(),
    }
}

/// Draws Gaussian instances until one is feasible, re-seeding attempt `k`
/// with `mix_seed(seed, k)`. Gives up after [`MAX_RETRIES`] retries.
pub fn gen_feasible_constraints(
    n: usize,
    c: usize,
    sigma: f64,
    seed: u64,
) -> Result<GeneratedInstance> {
    gen_feasible_constraints_with(n, c, sigma, seed, MAX_RETRIES)
}

/// [`gen_feasible_constraints`] with an explicit retry budget; feasible
/// instances become rare quickly as `c` grows at small `sigma`.
pub fn gen_feasible_constraints_with(
    n: usize,
    c: usize,
    sigma: f64,
    seed: u64,
    max_retries: u32,
) -> Result<GeneratedInstance> {
    for attempt in 0..=max_retries {
        let sub = if attempt == 0 {
            seed
        } else {
            mix_seed(seed, attempt as u64)
        };
        let cs = gen_gaussian_constraints(n, c, sigma, sub)?;
        if is_feasible(&cs) {
            if attempt > 0 {
                log::info!("feasible instance after {attempt} retries (seed {sub})");
            }
            return Ok(GeneratedInstance {
                constraints: cs,
                seed: sub,
                retries: attempt,
            });
        }
        log::info!("instance from seed {sub} is infeasible, retrying");
    }
    Err(Error::InvalidInput(format!(
        "no feasible instance in {max_retries} retries (n = {n}, c = {c}, sigma = {sigma})"
    )))
}

/// First-order expansion `p_i ≈ α + Σ_j β_j f_ji` with `α = 1/N` and
/// `β_j = (1 − Σ_i f_ji / N) / Σ_k f_jk²`. Not clamped: negative entries
/// mean the expansion has broken down.
pub fn leading_order_estimate(constraints: &ConstraintSet) -> Result<Vec<f64>> {
    let n = constraints.n_states() as f64;
    let mut p = vec![1.0 / n; constraints.n_states()];
    for (j, row) in constraints.rows().enumerate() {
        let ss: f64 = row.iter().map(|f| f * f).sum();
        if ss == 0.0 {
            return Err(Error::ZeroRow(j));
        }
        let beta = (1.0 - row.iter().sum::<f64>() / n) / ss;
        p.iter_mut().zip(row).for_each(|(pi, f)| *pi += beta * f);
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub l2_gap: f64,
    pub linf_gap: f64,
    /// `a_i − b_i`.
    pub per_component: Vec<f64>,
    /// `|a_i − b_i| / width_i`, when widths were supplied.
    pub relative_to_width: Option<Vec<f64>>,
}

pub fn compare(a: &[f64], b: &[f64], widths: Option<&[f64]>) -> Result<ComparisonReport> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let per_component: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let relative_to_width = match widths {
        Some(w) if w.len() != a.len() => return Err(Error::LengthMismatch(w.len(), a.len())),
        Some(w) => Some(
            per_component
                .iter()
                .zip(w)
                .map(|(d, wi)| d.abs() / wi)
                .collect(),
        ),
        None => None,
    };
    Ok(ComparisonReport {
        l2_gap: per_component.iter().map(|d| d * d).sum::<f64>().sqrt(),
        linf_gap: max_abs(&per_component),
        per_component,
        relative_to_width,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakGapReport {
    /// `‖p^{c,1} − p^{ME}‖_∞`.
    pub gap: f64,
    /// Largest saddle width, `max_i p^{c,1}_i`.
    pub max_width: f64,
    /// `gap · N² / C`, zero without constraints.
    pub scaled_gap: f64,
    pub regime: Regime,
    pub passed: bool,
}

/// In the weak regime the first-order centroid and the max-ent solution
/// should agree to much better than the solution-set width.
pub fn weak_limit_gap_check(
    constraints: &ConstraintSet,
    opts: &SolverOptions,
) -> Result<WeakGapReport> {
    let regime = regime_for(constraints);
    if regime == Regime::Strong {
        return Err(Error::RegimeMismatch {
            expected: "weak",
            found: regime.as_str(),
        });
    }
    let sp = solve_saddle(constraints, opts)?;
    let p1 = centroid_first_order(constraints, &sp)?;
    let me = solve_maxent(constraints, opts)?;
    let gap = max_abs(&compare(p1.values(), me.distribution.values(), None)?.per_component);
    let max_width = p1.values().iter().copied().fold(0.0, f64::max);
    let n = constraints.n_states() as f64;
    let c = constraints.n_constraints();
    Ok(WeakGapReport {
        gap,
        max_width,
        scaled_gap: if c == 0 { 0.0 } else { gap * n * n / c as f64 },
        regime,
        passed: gap < max_width / 10.0,
    })
}

/// Fraction of components where `p_me` sits below `mean` on the top and
/// bottom quartiles of `mean`, and above it on the middle two.
pub fn quartile_sign_agreement(p_me: &[f64], mean: &[f64]) -> f64 {
    let n = mean.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mean[a].total_cmp(&mean[b]).then(a.cmp(&b)));
    let agree = order
        .iter()
        .enumerate()
        .filter(|&(rank, &i)| {
            let outer = 4 * rank < n || 4 * rank >= 3 * n;
            if outer {
                p_me[i] < mean[i]
            } else {
                p_me[i] > mean[i]
            }
        })
        .count();
    agree as f64 / n as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub const SIGN_AGREEMENT_THRESHOLD: f64 = 0.7;
pub const MEDIAN_RATIO_RANGE: (f64, f64) = (0.1, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongGapReport {
    /// `|p^{c,1}_i − p^{ME}_i| / σ_i` with sampled widths.
    pub ratios: Vec<f64>,
    pub median_ratio: f64,
    pub sign_agreement: f64,
    pub ratio_passed: bool,
    pub sign_passed: bool,
    pub passed: bool,
}

/// In the strong regime the two estimators separate by about one width, and
/// max-ent lifts intermediate components at the expense of the extremes.
pub fn strong_limit_gap_check(
    constraints: &ConstraintSet,
    stats: &SampleStats,
    opts: &SolverOptions,
) -> Result<StrongGapReport> {
    let regime = regime_for(constraints);
    if regime == Regime::Weak {
        return Err(Error::RegimeMismatch {
            expected: "strong",
            found: regime.as_str(),
        });
    }
    let n = constraints.n_states();
    if stats.mean.len() != n {
        return Err(Error::LengthMismatch(stats.mean.len(), n));
    }
    let sp = solve_saddle(constraints, opts)?;
    let p1 = centroid_first_order(constraints, &sp)?;
    let me = solve_maxent(constraints, opts)?;
    let sd: Vec<f64> = stats.variance().iter().map(|v| v.sqrt()).collect();
    let ratios: Vec<f64> = p1
        .values()
        .iter()
        .zip(me.distribution.values())
        .zip(&sd)
        .map(|((a, b), s)| (a - b).abs() / s)
        .collect();
    let median_ratio = median(&ratios);
    let sign_agreement = quartile_sign_agreement(me.distribution.values(), &stats.mean);
    let ratio_passed = (MEDIAN_RATIO_RANGE.0..=MEDIAN_RATIO_RANGE.1).contains(&median_ratio);
    let sign_passed = sign_agreement >= SIGN_AGREEMENT_THRESHOLD;
    Ok(StrongGapReport {
        ratios,
        median_ratio,
        sign_agreement,
        ratio_passed,
        sign_passed,
        passed: ratio_passed && sign_passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure1Config {
    pub n: usize,
    pub sigma_f: f64,
    pub walk_steps: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub chains: u64,
    pub seed: u64,
}

impl Default for Figure1Config {
    fn default() -> Self {
        Self {
            n: 16,
            sigma_f: 1.0,
            walk_steps: 10_000_000,
            burn_in: 10_000,
            thinning: 10,
            chains: 1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure1Row {
    pub index: usize,
    pub p_c_sampled: f64,
    pub p_c1: f64,
    pub p_c2: f64,
    pub p_me: f64,
    pub width: f64,
    pub rel_err_c1: f64,
    pub rel_err_c2: f64,
}

#[derive(Debug, Clone)]
pub struct Figure1Bundle {
    pub config: Figure1Config,
    pub instance: GeneratedInstance,
    pub saddle: SaddlePoint,
    pub p_c1: ProbabilityVector,
    pub p_c2: ProbabilityVector,
    pub p_me: ProbabilityVector,
    pub stats: SampleStats,
    pub geometry: GeometrySummary,
    pub rows: Vec<Figure1Row>,
    pub timings: Vec<(&'static str, f64)>,
}

/// Single random Gaussian constraint on `n` states: first- and second-order
/// centroids, max-ent, and a hit-and-run ground truth.
pub fn run_figure1(config: &Figure1Config) -> Result<Figure1Bundle> {
    let params = WalkParams {
        n_steps: config.walk_steps,
        seed: mix_seed(config.seed, 1 << 32),
        burn_in: config.burn_in,
        thinning: config.thinning,
    };
    params.check()?;
    let opts = SolverOptions::default();
    let mut timings = Vec::new();

    let t = Instant::now();
    let instance = gen_feasible_constraints(config.n, 1, config.sigma_f, config.seed)?;
    let cs = &instance.constraints;
    let saddle = solve_saddle(cs, &opts)?;
    let p_c1 = centroid_first_order(cs, &saddle)?;
    timings.push(("saddle", t.elapsed().as_secs_f64()));

    let ch = chart(cs, Some(&p_c1))?;
    let (walk, solvers) = std::thread::scope(|s| {
        let walker = s.spawn(|| {
            let t = Instant::now();
            run_chains(&ch, params, config.chains).map(|st| (st, t.elapsed().as_secs_f64()))
        });
        let t = Instant::now();
        let solved = centroid_second_order(cs, &saddle)
            .and_then(|c2| solve_maxent(cs, &opts).map(|me| (c2, me)))
            .map(|x| (x, t.elapsed().as_secs_f64()));
        (walker.join().expect("walk thread panicked"), solved)
    });
    let ((c2, me), solver_secs) = solvers?;
    let (stats, walk_secs) = walk?;
    timings.push(("second_order_and_maxent", solver_secs));
    timings.push(("walk", walk_secs));

    let sd: Vec<f64> = stats.variance().iter().map(|v| v.sqrt()).collect();
    let rows = (0..config.n)
        .map(|i| {
            let truth = stats.mean[i];
            Figure1Row {
                index: i,
                p_c_sampled: truth,
                p_c1: p_c1[i],
                p_c2: c2.distribution[i],
                p_me: me.distribution[i],
                width: sd[i],
                rel_err_c1: (p_c1[i] - truth).abs() / truth,
                rel_err_c2: (c2.distribution[i] - truth).abs() / truth,
            }
        })
        .collect();
    let geometry = classify_strength(cs, &p_c1);

    Ok(Figure1Bundle {
        config: config.clone(),
        instance: instance.clone(),
        saddle,
        p_c1,
        p_c2: c2.distribution,
        p_me: me.distribution,
        stats,
        geometry,
        rows,
        timings,
    })
}

pub const TABLE_HEADER: &str = "index,p_c_sampled,p_c1,p_c2,p_me,width,rel_err_c1,rel_err_c2";

impl Figure1Bundle {
    pub fn table_csv(&self) -> String {
        let mut s = String::from(TABLE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let vals = [
                r.p_c_sampled,
                r.p_c1,
                r.p_c2,
                r.p_me,
                r.width,
                r.rel_err_c1,
                r.rel_err_c2,
            ];
            s.push_str(&r.index.to_string());
            for v in vals {
                s.push(',');
                s.push_str(&format_sig17(v));
            }
            s.push('\n');
        }
        s
    }

    /// Fraction of components where the second-order estimate is at least as
    /// close to the sampled centroid as the first-order one.
    pub fn second_order_win_rate(&self) -> f64 {
        let wins = self
            .rows
            .iter()
            .filter(|r| r.rel_err_c2 <= r.rel_err_c1)
            .count();
        wins as f64 / self.rows.len() as f64
    }

    pub fn expected_errors(&self) -> Result<(f64, f64)> {
        Ok((
            expected_error(&self.p_c1, &self.stats)?,
            expected_error(&self.p_me, &self.stats)?,
        ))
    }

    pub fn manifest(&self) -> serde_json::Value {
        json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": "experiment",
            "parameters": self.config,
            "seeds": {
                "experiment": self.config.seed,
                "coefficients": self.instance.seed,
                "walk": mix_seed(self.config.seed, 1 << 32),
            },
            "coefficient_retries": self.instance.retries,
            "generator": self.stats.generator,
            "saddle": {
                "iterations": self.saddle.iterations,
                "residual_norm": self.saddle.residual_norm,
            },
            "n_samples": self.stats.n_samples,
            "wall_clock_seconds": self
                .timings
                .iter()
                .map(|(k, v)| (k.to_string(), json!(v)))
                .collect::<serde_json::Map<_, _>>(),
        })
    }

    /// Writes `constraints.json`, `table.csv`, `geometry.json` and
    /// `manifest.json` into `dir`, creating it if needed.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        write_atomic(
            dir.join("constraints.json"),
            constraints_to_json(&self.instance.constraints, Some(manifest.clone())).as_bytes(),
        )?;
        write_atomic(dir.join("table.csv"), self.table_csv().as_bytes())?;
        let geometry = serde_json::to_string_pretty(&self.geometry).expect("geometry serializes");
        write_atomic(dir.join("geometry.json"), (geometry + "\n").as_bytes())?;
        let manifest = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(dir.join("manifest.json"), (manifest + "\n").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        let a = gen_gaussian_constraints(16, 1, 1.0, 7).unwrap();
        let b = gen_gaussian_constraints(16, 1, 1.0, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_gaussian_constraints(16, 1, 1.0, 8).unwrap());
        let empty = gen_gaussian_constraints(5, 0, 2.0, 1).unwrap();
        assert_eq!(empty.n_constraints(), 0);
        assert!(gen_gaussian_constraints(3, 3, 1.0, 1).is_err());
        assert!(gen_gaussian_constraints(3, 1, 0.0, 1).is_err());
    }

    #[test]
    fn generator_scale() {
        let cs = gen_gaussian_constraints(1_000_000, 1, 2.5, 11).unwrap();
        let rms = crate::geometry::coefficient_scale(&cs).unwrap();
        assert!((rms / 2.5 - 1.0).abs() < 0.01, "{rms}");
    }

    #[test]
    fn leading_order_examples() {
        let cs = ConstraintSet::unconstrained(5).unwrap();
        assert_eq!(leading_order_estimate(&cs).unwrap(), vec![0.2; 5]);
        // Σ f = N makes β vanish
        let cs = ConstraintSet::new(4, vec![vec![0.5, 1.5, 0.25, 1.75]]).unwrap();
        assert_eq!(leading_order_estimate(&cs).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn unconstrained_gap_is_zero() {
        let cs = ConstraintSet::unconstrained(12).unwrap();
        let r = weak_limit_gap_check(&cs, &SolverOptions::default()).unwrap();
        assert_eq!(r.gap, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn strong_check_rejects_weak_input() {
        let cs = ConstraintSet::unconstrained(4).unwrap();
        let stats = SampleStats {
            n_samples: 2,
            mean: vec![0.25; 4],
            second_moment: vec![0.07; 4],
            mean_std_error: vec![0.0; 4],
            variance_std_error: vec![0.0; 4],
            seed: 0,
            n_steps: 2,
            burn_in: 0,
            thinning: 1,
            n_chains: 1,
            generator: String::new(),
        };
        assert!(matches!(
            strong_limit_gap_check(&cs, &stats, &SolverOptions::default()),
            Err(Error::RegimeMismatch { .. })
        ));
    }

    #[test]
    fn weak_check_rejects_strong_input() {
        let cs = gen_feasible_constraints_with(32, 2, 0.5, 3, 10_000)
            .unwrap()
            .constraints;
        assert!(matches!(
            weak_limit_gap_check(&cs, &SolverOptions::default()),
            Err(Error::RegimeMismatch { .. })
        ));
    }

    #[test]
    fn quartile_pattern() {
        let mean = [0.1, 0.2, 0.3, 0.4];
        // outer components low, inner components high
        assert_eq!(
            quartile_sign_agreement(&[0.05, 0.25, 0.35, 0.35], &mean),
            1.0
        );
        assert_eq!(
            quartile_sign_agreement(&[0.15, 0.15, 0.25, 0.45], &mean),
            0.0
        );
    }

    #[test]
    fn compare_examples() {
        let a = [0.2, 0.3, 0.5];
        let r = compare(&a, &a, None).unwrap();
        assert_eq!((r.l2_gap, r.linf_gap), (0.0, 0.0));
        let r = compare(&a, &[0.3, 0.3, 0.4], Some(&[0.1, 0.1, 0.2])).unwrap();
        assert!((r.linf_gap - 0.1).abs() < 1e-15);
        assert!(r.per_component.iter().sum::<f64>().abs() < 1e-15);
        assert!((r.relative_to_width.unwrap()[2] - 0.5).abs() < 1e-12);
        assert!(compare(&a, &[0.5, 0.5], None).is_err());
    }

    #[test]
    fn figure1_rejects_short_walk() {
        let cfg = Figure1Config {
            walk_steps: 100,
            burn_in: 1000,
            ..Default::default()
        };
        assert!(matches!(run_figure1(&cfg), Err(Error::InvalidInput(_))));
    }
}
