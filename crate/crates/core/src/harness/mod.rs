//! Simulated campaigns: site survey, the online localization loop, and
//! Monte-Carlo aggregation.

mod campaign;
mod offline;
mod online;
mod record;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use campaign::{
    empirical_cdf, lateral_obstruction_scenario, mean, median, obstruction_scenario, quantile, run_monte_carlo,
    run_trials, summarize, user_positions, user_trial, with_workers, SummaryRow, SummaryStats, OBSTRUCTION_SPACING_M,
    THREADS_ENV, USER_OFFSETS,
};
pub use offline::{run_offline_phase, OfflineParams};
pub use online::{
    drive, localization_error, run_localization, Choice, LocalizerSettings, OnlineLocalizer, RssSource,
    SimulatedUsers, Testbed, TrialConfig,
};
pub use record::{
    read_rows, read_trial_csv, write_rows, CycleEntry, StopReason, TrialCsvRow, TrialRecord, CYCLE_MS,
};

/// How each cycle's metasurface configuration is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Every element stays in the base state.
    Fixed,
    /// A fresh uniform configuration each cycle.
    Random,
    /// The loss-guided search each cycle.
    Optimized,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Fixed, Scheme::Random, Scheme::Optimized];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Fixed => "fixed",
            Scheme::Random => "random",
            Scheme::Optimized => "optimized",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| crate::Error::Config(format!("unknown scheme {s:?} (fixed, random, optimized)")))
    }
}
