use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BlockGrid, Vec3};

use super::online::{run_localization, Testbed, TrialConfig};
use super::record::TrialRecord;
use super::Scheme;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "METARADAR_THREADS";

/// Runs `f` on a pool sized by `METARADAR_THREADS` (all cores when unset).
pub fn with_workers<R, F>(f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub trials: usize,
    /// Cycle at which final errors are read.
    pub cycles: usize,
    /// Error of every scored user in every trial at `cycles`, in trial order.
    pub final_errors: Vec<f64>,
    pub mean_error: f64,
    pub median_error: f64,
    pub p90_error: f64,
    /// `(error, fraction of samples ≤ error)` at each distinct error.
    pub cdf: Vec<(f64, f64)>,
    /// Mean and median error over trials and users at each cycle.
    pub mean_error_curve: Vec<f64>,
    pub median_error_curve: Vec<f64>,
    /// Mean loss bound at each cycle.
    pub mean_loss_curve: Vec<f64>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Linear-interpolated quantile of a sample, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn empirical_cdf(xs: &[f64]) -> Vec<(f64, f64)> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = f,
            _ => out.push((*x, f)),
        }
    }
    out
}

/// Aggregates records at cycle `cycles`. `user` restricts scoring to one
/// user index; `None` pools all users.
pub fn summarize(records: &[TrialRecord], cycles: usize, user: Option<usize>) -> SummaryStats {
    let pick = |r: &TrialRecord, k: usize| -> Vec<f64> {
        let e = r.errors_at(k);
        match user {
            Some(u) => e.get(u).copied().into_iter().collect(),
            None => e.to_vec(),
        }
    };
    let final_errors: Vec<f64> = records.iter().flat_map(|r| pick(r, cycles)).collect();
    let mut mean_error_curve = Vec::with_capacity(cycles + 1);
    let mut median_error_curve = Vec::with_capacity(cycles + 1);
    let mut mean_loss_curve = Vec::with_capacity(cycles + 1);
    for k in 0..=cycles {
        let at: Vec<f64> = records.iter().flat_map(|r| pick(r, k)).collect();
        mean_error_curve.push(mean(&at));
        median_error_curve.push(median(&at));
        let losses: Vec<f64> = records.iter().map(|r| r.loss_at(k)).collect();
        mean_loss_curve.push(mean(&losses));
    }
    SummaryStats {
        trials: records.len(),
        cycles,
        mean_error: mean(&final_errors),
        median_error: median(&final_errors),
        p90_error: quantile(&final_errors, 0.9),
        cdf: empirical_cdf(&final_errors),
        final_errors,
        mean_error_curve,
        median_error_curve,
        mean_loss_curve,
    }
}

/// Runs every trial `repetitions` times with seeds `seed + 0 … seed + R − 1`,
/// in parallel. Records come back in (trial, repetition) order.
pub fn run_trials(bed: &Testbed, trials: &[TrialConfig], repetitions: usize) -> Result<Vec<TrialRecord>> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be >= 1".into()));
    }
    let jobs: Vec<TrialConfig> = trials
        .iter()
        .flat_map(|t| {
            (0..repetitions as u64).map(move |r| TrialConfig {
                seed: t.seed.wrapping_add(r),
                ..t.clone()
            })
        })
        .collect();
    with_workers(|| jobs.par_iter().map(|t| run_localization(bed, t)).collect::<Result<Vec<_>>>())?
}

pub fn run_monte_carlo(bed: &Testbed, trials: &[TrialConfig], repetitions: usize) -> Result<SummaryStats> {
    let records = run_trials(bed, trials, repetitions)?;
    let cycles = trials.iter().map(|t| t.max_cycles).max().unwrap_or(0);
    Ok(summarize(&records, cycles, None))
}

/// Offsets of the multi-user layout from the SOI center.
pub const USER_OFFSETS: [Vec3; 3] = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.15, 0.0), Vec3::new(0.0, -0.15, 0.0)];

/// Positions of `count` users around the SOI center, each moved to the
/// center of the block containing it.
pub fn user_positions(grid: &BlockGrid, count: usize) -> Result<Vec<Vec3>> {
    if count == 0 || count > USER_OFFSETS.len() {
        return Err(Error::Config(format!("user count must be 1..={}, got {count}", USER_OFFSETS.len())));
    }
    USER_OFFSETS[..count].iter().map(|&o| grid.snap(grid.center() + o)).collect()
}

pub fn user_trial(grid: &BlockGrid, seed: u64, scheme: Scheme, count: usize) -> Result<TrialConfig> {
    Ok(TrialConfig::new(seed, scheme, user_positions(grid, count)?))
}

/// Separation of the two users in the obstruction layout, along the surface normal.
pub const OBSTRUCTION_SPACING_M: f64 = 0.5;

/// Two users in line with the surface, `0.5 m` apart and straddling the SOI
/// center; the nearer one shadows the farther one. Both sit on the SOI faces,
/// so snapping to block centers leaves them one block edge closer.
pub fn obstruction_scenario(grid: &BlockGrid, seed: u64, scheme: Scheme) -> Result<TrialConfig> {
    let half = Vec3::new(OBSTRUCTION_SPACING_M / 2.0, 0.0, 0.0);
    let near = grid.snap(grid.center() - half)?;
    let far = grid.snap(grid.center() + half)?;
    let mut t = TrialConfig::new(seed, scheme, vec![near, far]);
    t.obstruction_enabled = true;
    Ok(t)
}

/// A single localized user at the SOI center with a bystander
/// `OBSTRUCTION_SPACING_M` nearer the surface, displaced sideways by `offset`
/// meters. The bystander is only an obstacle and may lie outside the SOI.
pub fn lateral_obstruction_scenario(grid: &BlockGrid, seed: u64, scheme: Scheme, offset: f64) -> Result<TrialConfig> {
    let target = grid.snap(grid.center())?;
    let mut t = TrialConfig::new(seed, scheme, vec![target]);
    t.bystanders = vec![grid.center() + Vec3::new(-OBSTRUCTION_SPACING_M, offset, 0.0)];
    t.obstruction_enabled = true;
    Ok(t)
}

/// One line of a sweep summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub d_m: f64,
    pub users: usize,
    pub cycles: usize,
    pub mean_error_m: f64,
    pub median_error_m: f64,
    pub p90_error_m: f64,
}

impl SummaryRow {
    pub fn new(scheme: Scheme, d_m: f64, users: usize, stats: &SummaryStats) -> Self {
        SummaryRow {
            scheme,
            d_m,
            users,
            cycles: stats.cycles,
            mean_error_m: stats.mean_error,
            median_error_m: stats.median_error,
            p90_error_m: stats.p90_error,
        }
    }
}
