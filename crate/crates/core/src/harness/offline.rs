use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::radiomap::{critical_configurations, deltas_from_measurements, CriticalConfigId, CriticalMeasurements};
use crate::rng;

/// How the site survey is simulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineParams {
    /// Samples averaged per critical measurement.
    pub averaging: u32,
    /// Std of the complex perturbation on each sample, relative to the
    /// square root of the scene's mean base RSS.
    pub noise: f64,
    pub seed: u64,
}

impl Default for OfflineParams {
    fn default() -> Self {
        OfflineParams {
            averaging: 16,
            noise: 0.01,
            seed: 0,
        }
    }
}

fn id_slot(id: CriticalConfigId, n_states: usize) -> usize {
    if id == CriticalConfigId::BASE {
        0
    } else {
        1 + id.m * (n_states - 1) + (id.k - 2)
    }
}

/// Places the receiver at every block center and records every critical
/// configuration, then differences against the base measurement.
///
/// Blocks are surveyed in parallel; each block draws its perturbations from
/// its own stream, so the result does not depend on the worker count.
pub fn run_offline_phase(channel: &Channel, params: &OfflineParams) -> Result<CriticalMeasurements> {
    if params.averaging == 0 {
        return Err(Error::Config("offline averaging must be >= 1".into()));
    }
    if !(params.noise >= 0.0 && params.noise.is_finite()) {
        return Err(Error::Config(format!("offline noise must be >= 0, got {}", params.noise)));
    }
    let m = channel.n_elements();
    let ns = channel.n_states();
    let configs: Vec<_> = critical_configurations(m, ns).into_iter().map(|(_, c)| c).collect();
    let std = if params.noise > 0.0 {
        params.noise * channel.mean_base_rss().sqrt() / std::f64::consts::SQRT_2
    } else {
        0.0
    };

    let per_block = (0..channel.n_blocks())
        .into_par_iter()
        .map(|n| {
            let mut r = rng::stream(params.seed, rng::domain::OFFLINE, n as u64);
            configs
                .iter()
                .map(|cfg| {
                    let y = channel.received_signal(cfg, n)?;
                    if std == 0.0 {
                        return Ok(y);
                    }
                    let mut acc = Complex64::new(0.0, 0.0);
                    for _ in 0..params.averaging {
                        let re: f64 = r.sample(StandardNormal);
                        let im: f64 = r.sample(StandardNormal);
                        acc += y + Complex64::new(re, im) * std;
                    }
                    Ok(acc / params.averaging as f64)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let cm = deltas_from_measurements(m, ns, channel.n_blocks(), |id, n| {
        per_block.get(n).and_then(|row| row.get(id_slot(id, ns))).copied()
    })?;
    Ok(cm.with_metadata(channel.fingerprint(), params.averaging))
}
