//! Uniform sampling of the solution polytope by hit-and-run, and exact
//! moments for one-dimensional (segment) polytopes.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maxent::solve_maxent;
use crate::model::{ConstraintSet, ProbabilityVector, SampleStats};
use crate::saddle::{centroid_first_order, solve_saddle, SolverOptions};

pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.9), seed_from_u64";

/// Feasibility tolerance for starting points.
const FEASIBILITY_TOLERANCE: f64 = 1e-10;
const POSITIVITY_FLOOR: f64 = 1e-12;
/// Projected residual norm below which a candidate basis vector is dependent.
const DEPENDENCE_TOLERANCE: f64 = 1e-10;
const DEGENERATE_CHORD: f64 = 1e-15;
const MAX_DEGENERATE_RUN: usize = 1000;
/// Walk states are re-projected onto the affine hull this often.
const REPROJECT_EVERY: u64 = 1024;
const BATCHES: u64 = 100;

/// Affine parametrization `x = interior_point + basis · y` of the solution set.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeChart {
    pub interior_point: ProbabilityVector,
    /// `N × d`, orthonormal columns spanning the null space of the stacked
    /// normalization and constraint rows.
    pub basis: DMatrix<f64>,
    pub dim: usize,
}

fn strictly_feasible(constraints: &ConstraintSet, p: &ProbabilityVector) -> bool {
    p.len() == constraints.n_states()
        && p.values().iter().all(|&x| x > POSITIVITY_FLOOR)
        && constraints
            .residuals(p.values())
            .iter()
            .all(|r| *r <= FEASIBILITY_TOLERANCE)
}

/// Orthonormal basis of the orthogonal complement of `rows`, by twice-applied
/// modified Gram-Schmidt. Returns `(rank of rows, complement basis)`.
fn null_space(rows: &[Vec<f64>], n: usize) -> (usize, Vec<Vec<f64>>) {
    fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
        for _ in 0..2 {
            for q in against {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
    }
    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    let mut q: Vec<Vec<f64>> = Vec::new();
    for row in rows {
        let scale = norm(row);
        if scale == 0.0 {
            continue;
        }
        let mut v: Vec<f64> = row.iter().map(|x| x / scale).collect();
        orthogonalize(&mut v, &q);
        let r = norm(&v);
        if r > DEPENDENCE_TOLERANCE {
            v.iter_mut().for_each(|x| *x /= r);
            q.push(v);
        }
    }
    let rank = q.len();
    let mut all = q;
    for k in 0..n {
        if all.len() == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        orthogonalize(&mut v, &all);
        let r = norm(&v);
        if r > 1e-6 {
            v.iter_mut().for_each(|x| *x /= r);
            all.push(v);
        }
    }
    let complement = all.split_off(rank);
    (rank, complement)
}

/// Builds the chart, taking the interior point from `start` when it is
/// strictly positive and feasible, else from the first-order saddle
/// centroid, else from the max-ent solution.
pub fn chart(
    constraints: &ConstraintSet,
    start: Option<&ProbabilityVector>,
) -> Result<PolytopeChart> {
    let n = constraints.n_states();
    let c = constraints.n_constraints();
    let mut rows = vec![vec![1.0; n]];
    rows.extend(constraints.to_rows());
    let (rank, complement) = null_space(&rows, n);
    let expected = n - c - 1;
    if rank != c + 1 || complement.len() != expected {
        return Err(Error::RankDeficient {
            expected,
            found: n - rank,
        });
    }
    let basis = DMatrix::from_fn(n, expected, |i, k| complement[k][i]);

    let interior_point = start
        .filter(|p| strictly_feasible(constraints, p))
        .cloned()
        .or_else(|| {
            let opts = SolverOptions::default();
            solve_saddle(constraints, &opts)
                .and_then(|sp| centroid_first_order(constraints, &sp))
                .ok()
                .filter(|p| strictly_feasible(constraints, p))
                .or_else(|| {
                    solve_maxent(constraints, &opts)
                        .ok()
                        .map(|me| me.distribution)
                        .filter(|p| strictly_feasible(constraints, p))
                })
        })
        .ok_or(Error::NoInteriorPoint)?;

    Ok(PolytopeChart {
        interior_point,
        basis,
        dim: expected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkParams {
    pub n_steps: u64,
    pub seed: u64,
    pub burn_in: u64,
    pub thinning: u64,
}

impl WalkParams {
    pub fn new(n_steps: u64, seed: u64) -> Self {
        Self {
            n_steps,
            seed,
            burn_in: 10_000,
            thinning: 10,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n_steps <= self.burn_in {
            return Err(Error::InvalidInput(format!(
                "walk of {} steps does not exceed burn-in of {}",
                self.n_steps, self.burn_in
            )));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidInput("thinning must be at least 1".into()));
        }
        if self.recorded() < 2 {
            return Err(Error::InvalidInput(
                "walk records fewer than two states".into(),
            ));
        }
        Ok(())
    }

    /// Number of states kept after burn-in and thinning.
    pub fn recorded(&self) -> u64 {
        self.n_steps.saturating_sub(self.burn_in) / self.thinning.max(1)
    }
}

/// Exact chord `[t_lo, t_hi]` of `{t : x + t u ≥ 0}`.
fn chord(x: &[f64], u: &[f64]) -> (f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (xi, ui) in x.iter().zip(u) {
        if *ui > 0.0 {
            lo = lo.max(-xi / ui);
        } else if *ui < 0.0 {
            hi = hi.min(-xi / ui);
        }
    }
    (lo, hi)
}

struct Accumulator {
    n: usize,
    recorded: u64,
    total: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    batch_sum: Vec<Vec<f64>>,
    batch_sq: Vec<Vec<f64>>,
    batch_count: Vec<u64>,
}

impl Accumulator {
    fn new(n: usize, total: u64) -> Self {
        let nb = BATCHES.min(total) as usize;
        Self {
            n,
            recorded: 0,
            total,
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
            batch_sum: vec![vec![0.0; n]; nb],
            batch_sq: vec![vec![0.0; n]; nb],
            batch_count: vec![0; nb],
        }
    }

    fn record(&mut self, x: &[f64]) {
        let nb = self.batch_count.len() as u64;
        let b = (self.recorded * nb / self.total) as usize;
        for (i, &v) in x.iter().enumerate().take(self.n) {
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
            self.batch_sum[b][i] += v;
            self.batch_sq[b][i] += v * v;
        }
        self.batch_count[b] += 1;
        self.recorded += 1;
    }

    fn finish(self, params: &WalkParams) -> SampleStats {
        let n = self.n;
        let cnt = self.recorded as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / cnt).collect();
        let second_moment: Vec<f64> = self.sum_sq.iter().map(|s| s / cnt).collect();
        let nb = self.batch_count.len();
        let mut mean_se = vec![0.0; n];
        let mut var_se = vec![0.0; n];
        if nb >= 2 {
            for i in 0..n {
                let bm: Vec<f64> = (0..nb)
                    .map(|b| self.batch_sum[b][i] / self.batch_count[b] as f64)
                    .collect();
                let bv: Vec<f64> = (0..nb)
                    .map(|b| self.batch_sq[b][i] / self.batch_count[b] as f64 - bm[b] * bm[b])
                    .collect();
                mean_se[i] = spread(&bm) / (nb as f64).sqrt();
                var_se[i] = spread(&bv) / (nb as f64).sqrt();
            }
        }
        SampleStats {
            n_samples: self.recorded,
            mean,
            second_moment,
            mean_std_error: mean_se,
            variance_std_error: var_se,
            seed: params.seed,
            n_steps: params.n_steps,
            burn_in: params.burn_in,
            thinning: params.thinning,
            n_chains: 1,
            generator: GENERATOR.to_string(),
        }
    }
}

/// Sample standard deviation.
fn spread(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Runs a single hit-and-run chain and accumulates moments of the recorded
/// states (every `thinning`-th state after `burn_in` moves).
pub fn hit_and_run(chart: &PolytopeChart, params: WalkParams) -> Result<SampleStats> {
    hit_and_run_with(chart, params, |_| {})
}

/// As [`hit_and_run`], handing every recorded state to `visit`.
pub fn hit_and_run_with(
    chart: &PolytopeChart,
    params: WalkParams,
    mut visit: impl FnMut(&[f64]),
) -> Result<SampleStats> {
    params.check()?;
    let n = chart.interior_point.len();
    let d = chart.dim;
    let origin = chart.interior_point.values().to_vec();
    // row-major copy of the basis for the inner loop
    let basis: Vec<f64> = (0..n)
        .flat_map(|i| (0..d).map(move |k| (i, k)))
        .map(|(i, k)| chart.basis[(i, k)])
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut acc = Accumulator::new(n, params.recorded());
    let mut x = origin.clone();
    let mut z = vec![0.0; d];
    let mut u = vec![0.0; n];
    let mut degenerate_run = 0;

    for step in 0..params.n_steps {
        if d > 0 {
            let mut zn = 0.0_f64;
            for zk in z.iter_mut() {
                *zk = rng.sample(StandardNormal);
                zn += *zk * *zk;
            }
            let inv = 1.0 / zn.sqrt();
            for (i, ui) in u.iter_mut().enumerate() {
                let row = &basis[i * d..(i + 1) * d];
                *ui = row.iter().zip(&z).map(|(b, zk)| b * zk).sum::<f64>() * inv;
            }
            let (lo, hi) = chord(&x, &u);
            if hi - lo < DEGENERATE_CHORD {
                degenerate_run += 1;
                if degenerate_run >= MAX_DEGENERATE_RUN {
                    return Err(Error::DegenerateInterval);
                }
            } else {
                degenerate_run = 0;
                let t = lo + (hi - lo) * rng.random::<f64>();
                for (xi, ui) in x.iter_mut().zip(&u) {
                    *xi = (*xi + t * ui).max(0.0);
                }
            }
            if (step + 1) % REPROJECT_EVERY == 0 {
                reproject(&mut x, &origin, &basis, d);
            }
        }
        if step >= params.burn_in && (step + 1 - params.burn_in).is_multiple_of(params.thinning) {
            acc.record(&x);
            visit(&x);
        }
    }
    Ok(acc.finish(&params))
}

/// `x ← origin + B Bᵀ (x − origin)`, removing drift off the affine hull.
fn reproject(x: &mut [f64], origin: &[f64], basis: &[f64], d: usize) {
    let n = x.len();
    let mut y = vec![0.0; d];
    for i in 0..n {
        let dx = x[i] - origin[i];
        let row = &basis[i * d..(i + 1) * d];
        y.iter_mut().zip(row).for_each(|(yk, b)| *yk += b * dx);
    }
    for i in 0..n {
        let row = &basis[i * d..(i + 1) * d];
        let v = origin[i] + row.iter().zip(&y).map(|(b, yk)| b * yk).sum::<f64>();
        x[i] = v.max(0.0);
    }
}

/// Seed of chain `k` in a multi-chain run; chain 0 uses `seed` itself.
pub fn chain_seed(seed: u64, k: u64) -> u64 {
    if k == 0 {
        seed
    } else {
        crate::analysis::mix_seed(seed, k)
    }
}

/// Runs `n_chains` independent chains on scoped threads and pools them in
/// chain order, so the result depends only on the parameters.
pub fn run_chains(chart: &PolytopeChart, params: WalkParams, n_chains: u64) -> Result<SampleStats> {
    if n_chains == 0 {
        return Err(Error::InvalidInput("need at least one chain".into()));
    }
    params.check()?;
    let results: Vec<Result<SampleStats>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n_chains)
            .map(|k| {
                let p = WalkParams {
                    seed: chain_seed(params.seed, k),
                    ..params
                };
                s.spawn(move || hit_and_run(chart, p))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    });
    let parts = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut merged = SampleStats::merge(&parts)?;
    merged.seed = params.seed;
    Ok(merged)
}

/// Endpoints of a one-dimensional solution set.
pub fn segment_endpoints(constraints: &ConstraintSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let ch = chart(constraints, None)?;
    if ch.dim != 1 {
        return Err(Error::WrongDimension(ch.dim));
    }
    let x = ch.interior_point.values();
    let u: Vec<f64> = ch.basis.column(0).iter().copied().collect();
    let (lo, hi) = chord(x, &u);
    let at = |t: f64| -> Vec<f64> {
        x.iter()
            .zip(&u)
            .map(|(a, b)| (a + t * b).max(0.0))
            .collect()
    };
    Ok((at(lo), at(hi)))
}

/// Exact uniform-measure centroid of a segment polytope: its midpoint.
pub fn segment_centroid(constraints: &ConstraintSet) -> Result<ProbabilityVector> {
    let (a, b) = segment_endpoints(constraints)?;
    ProbabilityVector::new(a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect())
}

/// Exact per-component variance of the uniform measure on a segment polytope.
pub fn segment_variance(constraints: &ConstraintSet) -> Result<Vec<f64>> {
    let (a, b) = segment_endpoints(constraints)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (y - x).powi(2) / 12.0)
        .collect())
}

/// Per-component variance `E[p_i²] − E[p_i]²`, floored at zero.
pub fn variance_estimates(stats: &SampleStats) -> Result<Vec<f64>> {
    if stats.n_samples < 2 {
        return Err(Error::InvalidInput(format!(
            "variance needs at least two samples, have {}",
            stats.n_samples
        )));
    }
    Ok(stats.variance())
}

/// JSON export of walk statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStatsExport {
    pub n_samples: u64,
    pub seed: u64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub mean_std_error: Vec<f64>,
    pub variance_std_error: Vec<f64>,
    pub n_steps: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub n_chains: u64,
    pub generator: String,
}

impl From<&SampleStats> for SampleStatsExport {
    fn from(s: &SampleStats) -> Self {
        Self {
            n_samples: s.n_samples,
            seed: s.seed,
            mean: s.mean.clone(),
            variance: s.variance(),
            second_moment: s.second_moment.clone(),
            mean_std_error: s.mean_std_error.clone(),
            variance_std_error: s.variance_std_error.clone(),
            n_steps: s.n_steps,
            burn_in: s.burn_in,
            thinning: s.thinning,
            n_chains: s.n_chains,
            generator: s.generator.clone(),
        }
    }
}

impl From<SampleStatsExport> for SampleStats {
    fn from(e: SampleStatsExport) -> Self {
        Self {
            n_samples: e.n_samples,
            mean: e.mean,
            second_moment: e.second_moment,
            mean_std_error: e.mean_std_error,
            variance_std_error: e.variance_std_error,
            seed: e.seed,
            n_steps: e.n_steps,
            burn_in: e.burn_in,
            thinning: e.thinning,
            n_chains: e.n_chains,
            generator: e.generator,
        }
    }
}
