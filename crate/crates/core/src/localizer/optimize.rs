use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{Configuration, ElementState};
use crate::error::{Error, Result};
use crate::radiomap::CriticalMeasurements;

use super::loss::{ErrorMatrix, LossContext};
use super::posterior::{active_blocks, ActiveSet, Posterior};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Observation noise standard deviation, watts.
    pub sigma: f64,
    /// Blocks whose summed user probability is at most this are dropped.
    pub alpha: f64,
}

impl LossParams {
    pub fn new(sigma: f64, alpha: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be > 0, got {sigma}")));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1), got {alpha}")));
        }
        Ok(LossParams { sigma, alpha })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub z_u: usize,
    pub epsilon: f64,
    /// Seeds the random starting configuration.
    pub seed: u64,
    /// Cosine with the descent direction that the first accepted change of
    /// an iteration must exceed. With unit vectors, `|g − d*| < |g − 0|`
    /// is the same test at 0.5.
    pub min_alignment: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            z_u: 50,
            epsilon: 1e-6,
            seed: 0,
            min_alignment: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminationParams {
    pub beta1: f64,
    pub beta2: usize,
}

impl Default for TerminationParams {
    fn default() -> Self {
        TerminationParams {
            beta1: 0.1,
            beta2: 500,
        }
    }
}

pub fn should_terminate(loss: f64, k: usize, t: &TerminationParams) -> bool {
    loss < t.beta1 || k > t.beta2
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub config: Configuration,
    pub loss: f64,
    pub initial_config: Configuration,
    pub initial_loss: f64,
    /// Loss after each accepted change, in order.
    pub accepted_losses: Vec<f64>,
    /// Outer iterations that ran.
    pub iterations: usize,
    pub active: ActiveSet,
}

fn unit(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        v.iter_mut().for_each(|x| *x /= norm);
        true
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
        false
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient-guided single-element search over metasurface configurations.
///
/// Each outer iteration takes the descent direction of the loss bound at the
/// current configuration and scans every single-element change. A candidate
/// replaces the running choice when its radio-map change points closer to
/// the descent direction than the running choice does and it lowers the loss
/// by more than `epsilon`. Directions are compared as unit vectors, so
/// "closer" means a larger cosine; the empty running choice has cosine
/// `min_alignment`. The search stops when an iteration accepts nothing or
/// after `z_u` iterations.
pub fn optimize_configuration(
    cm: &CriticalMeasurements,
    p: &Posterior,
    gamma: &ErrorMatrix,
    params: &OptimizerParams,
    loss_params: &LossParams,
) -> Result<OptimizeOutcome> {
    if p.blocks() != cm.n_blocks() {
        return Err(Error::Domain(format!(
            "posterior covers {} blocks, measurements {}",
            p.blocks(),
            cm.n_blocks()
        )));
    }
    let active = active_blocks(p, loss_params.alpha);
    let blocks = &active.blocks;
    let ctx = LossContext::for_active(p, gamma, blocks, loss_params.sigma)?;
    let n_states = cm.n_states();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut config = Configuration::random(cm.n_elements(), n_states, &mut rng);
    let mut mu = cm.radio_map(&config, blocks)?.mu;
    let mut signal = cm.predict_signals(&config, blocks)?;
    let mut loss = ctx.upper_bound(&mu);
    let initial_config = config.clone();
    let initial_loss = loss;

    let mut accepted_losses = Vec::new();
    let mut iterations = 0;
    let mut direction = vec![0.0; blocks.len()];
    let mut candidate = vec![0.0; blocks.len()];

    while iterations < params.z_u {
        iterations += 1;
        let mut g = ctx.gradient(&mu);
        if !unit(&mut g) {
            break;
        }
        let mut best: Option<(Configuration, Vec<f64>, f64)> = None;
        let mut best_alignment = params.min_alignment;
        for m in 0..cm.n_elements() {
            let current = config.state(m);
            for s in ElementState::all(n_states).filter(|&s| s != current) {
                for (j, &n) in blocks.iter().enumerate() {
                    let y: Complex64 = signal[j] - cm.delta(m, current, n) + cm.delta(m, s, n);
                    candidate[j] = y.norm_sqr() - mu[j];
                }
                direction.copy_from_slice(&candidate);
                if !unit(&mut direction) {
                    continue;
                }
                let alignment = dot(&g, &direction);
                if alignment <= best_alignment {
                    continue;
                }
                let trial = config.with_state(m, s);
                let trial_mu = cm.radio_map(&trial, blocks)?.mu;
                let trial_loss = ctx.upper_bound(&trial_mu);
                if trial_loss + params.epsilon < loss {
                    best_alignment = alignment;
                    best = Some((trial, trial_mu, trial_loss));
                }
            }
        }
        let Some((next, next_mu, next_loss)) = best else {
            break;
        };
        config = next;
        mu = next_mu;
        loss = next_loss;
        signal = cm.predict_signals(&config, blocks)?;
        accepted_losses.push(loss);
    }

    Ok(OptimizeOutcome {
        config,
        loss,
        initial_config,
        initial_loss,
        accepted_losses,
        iterations,
        active,
    })
}
