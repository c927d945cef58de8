use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::channel::Configuration;
use crate::error::Result;

use super::Scheme;

/// Simulated duration of one localization cycle.
pub const CYCLE_MS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The loss bound fell below the threshold.
    LossThreshold,
    /// The cycle index passed the iteration limit.
    IterationLimit,
    /// The trial's own cycle cap was reached first.
    CycleCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleEntry {
    pub cycle: usize,
    pub config: Configuration,
    /// Sampled RSS per localized user, watts.
    pub rss: Vec<f64>,
    /// Loss bound of `config` under the posterior it was chosen for, meters.
    pub loss: f64,
    pub estimates: Vec<usize>,
    pub errors: Vec<f64>,
    /// Users whose posterior collapsed and was reset this cycle.
    pub reset_users: Vec<usize>,
}

impl CycleEntry {
    pub fn sim_time_ms(&self) -> u64 {
        CYCLE_MS * self.cycle as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub scheme: Scheme,
    pub seed: u64,
    pub cycles: Vec<CycleEntry>,
    pub stop: StopReason,
}

/// One CSV line: a user in a cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialCsvRow {
    pub cycle: usize,
    pub config: String,
    pub user: usize,
    pub rss_w: f64,
    pub loss_lu_m: f64,
    pub error_m: f64,
    pub sim_time_ms: u64,
}

impl TrialRecord {
    pub fn users(&self) -> usize {
        self.cycles.first().map_or(0, |c| c.errors.len())
    }

    pub fn final_entry(&self) -> &CycleEntry {
        self.cycles.last().expect("a trial records at least one cycle")
    }

    pub fn final_estimates(&self) -> &[usize] {
        &self.final_entry().estimates
    }

    /// Per-user error at cycle `k`; a trial that stopped earlier keeps its
    /// last estimate.
    pub fn errors_at(&self, k: usize) -> &[f64] {
        let i = k.min(self.cycles.len() - 1);
        &self.cycles[i].errors
    }

    pub fn loss_at(&self, k: usize) -> f64 {
        self.cycles[k.min(self.cycles.len() - 1)].loss
    }

    pub fn csv_rows(&self) -> Vec<TrialCsvRow> {
        let mut rows = Vec::with_capacity(self.cycles.len() * self.users());
        for c in &self.cycles {
            let digits = c.config.to_digits();
            for (user, (&rss, &err)) in c.rss.iter().zip(&c.errors).enumerate() {
                rows.push(TrialCsvRow {
                    cycle: c.cycle,
                    config: digits.clone(),
                    user,
                    rss_w: rss,
                    loss_lu_m: c.loss,
                    error_m: err,
                    sim_time_ms: c.sim_time_ms(),
                });
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, &self.csv_rows())
    }
}

pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| crate::Error::io("csv output", e))?;
    Ok(())
}

pub fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>> {
    let mut input = csv::Reader::from_reader(r);
    Ok(input.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

pub fn read_trial_csv<R: Read>(r: R) -> Result<Vec<TrialCsvRow>> {
    read_rows(r)
}
