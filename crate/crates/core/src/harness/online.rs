use rand_chacha::ChaCha8Rng;

use crate::channel::{Channel, Configuration, NoiseModel};
use crate::error::{Error, Result};
use crate::localizer::{
    active_blocks, optimize_configuration, should_terminate, ErrorMatrix, LossContext, LossParams, OptimizerParams,
    Posterior, TerminationParams,
};
use crate::radiomap::CriticalMeasurements;
use crate::rng;
use crate::scene::{BlockGrid, UserBody, Vec3, DEFAULT_OCCLUSION_RADIUS};

use super::record::{CycleEntry, StopReason, TrialRecord};
use super::Scheme;

/// Tunables of the online loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizerSettings {
    pub alpha: f64,
    pub epsilon: f64,
    pub z_u: usize,
    /// See [`OptimizerParams::min_alignment`].
    pub min_alignment: f64,
    pub termination: TerminationParams,
}

impl Default for LocalizerSettings {
    fn default() -> Self {
        LocalizerSettings {
            alpha: 1e-3,
            epsilon: 1e-6,
            z_u: 50,
            min_alignment: 0.0,
            termination: TerminationParams::default(),
        }
    }
}

/// Everything a trial needs that does not change between trials: the true
/// channel, the stored critical measurements and the localizer settings.
#[derive(Debug, Clone)]
pub struct Testbed {
    pub channel: Channel,
    pub cm: CriticalMeasurements,
    pub gamma: ErrorMatrix,
    pub settings: LocalizerSettings,
    pub noise: NoiseModel,
    /// Observation std assumed by the localizer.
    pub loss_sigma: f64,
}

impl Testbed {
    pub fn new(channel: Channel, cm: CriticalMeasurements, settings: LocalizerSettings) -> Result<Self> {
        if cm.n_blocks() != channel.n_blocks()
            || cm.n_elements() != channel.n_elements()
            || cm.n_states() != channel.n_states()
        {
            return Err(Error::SceneMismatch);
        }
        if *cm.scene_hash() != [0; 32] && *cm.scene_hash() != channel.fingerprint() {
            return Err(Error::SceneMismatch);
        }
        let gamma = ErrorMatrix::from_grid(&channel.scene().grid);
        let noise = channel.noise_model();
        // A noiseless channel still needs a proper likelihood.
        let loss_sigma = noise.sigma.max(1e-6 * channel.mean_base_rss());
        LossParams::new(loss_sigma, settings.alpha)?;
        Ok(Testbed {
            channel,
            cm,
            gamma,
            settings,
            noise,
            loss_sigma,
        })
    }

    pub fn grid(&self) -> &BlockGrid {
        &self.channel.scene().grid
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            sigma: self.loss_sigma,
            alpha: self.settings.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub seed: u64,
    pub scheme: Scheme,
    /// True positions of the users being localized.
    pub truth: Vec<Vec3>,
    /// Bodies that only shadow signals and are not localized.
    pub bystanders: Vec<Vec3>,
    /// Highest cycle index that will be run.
    pub max_cycles: usize,
    pub obstruction_enabled: bool,
    pub occlusion_radius: f64,
}

impl TrialConfig {
    pub fn new(seed: u64, scheme: Scheme, truth: Vec<Vec3>) -> Self {
        TrialConfig {
            seed,
            scheme,
            truth,
            bystanders: Vec::new(),
            max_cycles: TerminationParams::default().beta2,
            obstruction_enabled: false,
            occlusion_radius: DEFAULT_OCCLUSION_RADIUS,
        }
    }
}

pub fn localization_error(true_pos: Vec3, est_block: usize, grid: &BlockGrid) -> Result<f64> {
    Ok(true_pos.distance(grid.block_center(est_block)?))
}

/// Anything that returns one RSS reading per localized user for a given
/// metasurface configuration. The localizer sees users only through this.
pub trait RssSource {
    fn users(&self) -> usize;
    fn measure(&mut self, cfg: &Configuration) -> Result<Vec<f64>>;
}

/// Users in the simulated room, observed through the true channel plus noise.
/// Each user's signal is evaluated at the center of the block it occupies.
pub struct SimulatedUsers<'a> {
    channel: &'a Channel,
    noise: NoiseModel,
    users: Vec<UserBody>,
    bodies: Vec<UserBody>,
    obstruction: bool,
    rng: ChaCha8Rng,
}

impl<'a> SimulatedUsers<'a> {
    pub fn new(channel: &'a Channel, noise: NoiseModel, trial: &TrialConfig) -> Result<Self> {
        let grid = &channel.scene().grid;
        let users = trial
            .truth
            .iter()
            .map(|&p| UserBody::in_grid(grid, p, trial.occlusion_radius))
            .collect::<Result<Vec<_>>>()?;
        // Bystanders may stand outside the space of interest.
        let bodies = users
            .iter()
            .copied()
            .chain(trial.bystanders.iter().map(|&position| UserBody {
                position,
                block_index: usize::MAX,
                occlusion_radius: trial.occlusion_radius,
            }))
            .collect();
        Ok(SimulatedUsers {
            channel,
            noise,
            users,
            bodies,
            obstruction: trial.obstruction_enabled,
            rng: rng::stream(trial.seed, rng::domain::MEASUREMENT, 0),
        })
    }
}

impl RssSource for SimulatedUsers<'_> {
    fn users(&self) -> usize {
        self.users.len()
    }

    fn measure(&mut self, cfg: &Configuration) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.users.len());
        for (i, u) in self.users.iter().enumerate() {
            let y = if self.obstruction {
                let others: Vec<UserBody> =
                    self.bodies.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, b)| *b).collect();
                self.channel.obstructed_received_signal(cfg, u.block_index, &others)?
            } else {
                self.channel.received_signal(cfg, u.block_index)?
            };
            out.push(self.noise.sample_rss(y.norm_sqr(), &mut self.rng)?);
        }
        Ok(out)
    }
}

/// The estimation side of the loop: posterior, configuration choice and
/// update. Holds no ground truth.
pub struct OnlineLocalizer<'a> {
    cm: &'a CriticalMeasurements,
    gamma: &'a ErrorMatrix,
    loss: LossParams,
    settings: LocalizerSettings,
    scheme: Scheme,
    seed: u64,
    posterior: Posterior,
}

/// A configuration and its loss bound under the posterior it was chosen for.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub config: Configuration,
    pub loss: f64,
}

impl<'a> OnlineLocalizer<'a> {
    pub fn new(
        cm: &'a CriticalMeasurements,
        gamma: &'a ErrorMatrix,
        loss: LossParams,
        settings: LocalizerSettings,
        scheme: Scheme,
        seed: u64,
        users: usize,
    ) -> Result<Self> {
        if users == 0 {
            return Err(Error::Domain("a trial needs at least one user".into()));
        }
        Ok(OnlineLocalizer {
            cm,
            gamma,
            loss,
            settings,
            scheme,
            seed,
            posterior: Posterior::uniform(users, cm.n_blocks()),
        })
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    fn loss_of(&self, cfg: &Configuration) -> Result<f64> {
        let active = active_blocks(&self.posterior, self.loss.alpha);
        let ctx = LossContext::for_active(&self.posterior, self.gamma, &active.blocks, self.loss.sigma)?;
        Ok(ctx.upper_bound(&self.cm.radio_map(cfg, &active.blocks)?.mu))
    }

    /// Configuration for cycle `k`. Cycle 0 always uses the all-base state.
    pub fn choose(&self, k: usize) -> Result<Choice> {
        let m = self.cm.n_elements();
        let config = match (k, self.scheme) {
            (0, _) | (_, Scheme::Fixed) => Configuration::all_base(m),
            (_, Scheme::Random) => {
                let mut r = rng::stream(self.seed, rng::domain::SCHEME, k as u64);
                Configuration::random(m, self.cm.n_states(), &mut r)
            }
            (_, Scheme::Optimized) => {
                let params = OptimizerParams {
                    z_u: self.settings.z_u,
                    epsilon: self.settings.epsilon,
                    seed: rng::split_seed(self.seed, rng::domain::OPTIMIZER, k as u64),
                    min_alignment: self.settings.min_alignment,
                };
                let out = optimize_configuration(self.cm, &self.posterior, self.gamma, &params, &self.loss)?;
                return Ok(Choice {
                    config: out.config,
                    loss: out.loss,
                });
            }
        };
        let loss = self.loss_of(&config)?;
        Ok(Choice { config, loss })
    }

    /// Folds one cycle of readings into the posterior; returns the users
    /// whose rows had to be reset.
    pub fn update(&mut self, cfg: &Configuration, rss: &[f64]) -> Result<Vec<usize>> {
        let map = self.cm.full_radio_map(cfg)?;
        Ok(self.posterior.update(&map.mu, rss, self.loss.sigma)?.reset_rows)
    }

    pub fn estimates(&self) -> Vec<usize> {
        self.posterior.estimate_locations()
    }
}

/// Drives a localizer against an RSS source until the termination rule or
/// the cycle cap stops it. `score` turns estimates into per-user errors.
pub fn drive<S, F>(
    localizer: &mut OnlineLocalizer<'_>,
    source: &mut S,
    termination: &TerminationParams,
    max_cycles: usize,
    mut score: F,
) -> Result<(Vec<CycleEntry>, StopReason)>
where
    S: RssSource + ?Sized,
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    let mut cycles = Vec::new();
    let mut k = 0;
    loop {
        let choice = localizer.choose(k)?;
        let rss = source.measure(&choice.config)?;
        let reset_users = localizer.update(&choice.config, &rss)?;
        let estimates = localizer.estimates();
        let errors = score(&estimates)?;
        cycles.push(CycleEntry {
            cycle: k,
            config: choice.config,
            rss,
            loss: choice.loss,
            estimates,
            errors,
            reset_users,
        });
        if choice.loss < termination.beta1 {
            return Ok((cycles, StopReason::LossThreshold));
        }
        if should_terminate(choice.loss, k + 1, termination) {
            return Ok((cycles, StopReason::IterationLimit));
        }
        if k >= max_cycles {
            return Ok((cycles, StopReason::CycleCap));
        }
        k += 1;
    }
}

pub fn run_localization(bed: &Testbed, trial: &TrialConfig) -> Result<TrialRecord> {
    let grid = bed.grid();
    let truth = trial
        .truth
        .iter()
        .map(|&p| {
            if grid.block_index_of(p).is_err() {
                return Err(Error::OutOfDomain { x: p.x, y: p.y, z: p.z });
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut source = SimulatedUsers::new(&bed.channel, bed.noise, trial)?;
    let mut localizer = OnlineLocalizer::new(
        &bed.cm,
        &bed.gamma,
        bed.loss_params(),
        bed.settings,
        trial.scheme,
        trial.seed,
        truth.len(),
    )?;
    let (cycles, stop) = drive(&mut localizer, &mut source, &bed.settings.termination, trial.max_cycles, |est| {
        truth
            .iter()
            .zip(est)
            .map(|(&p, &n)| localization_error(p, n, grid))
            .collect()
    })?;
    Ok(TrialRecord {
        scheme: trial.scheme,
        seed: trial.seed,
        cycles,
        stop,
    })
}
