//! Ground-truth propagation model.
//!
//! Every link uses the free-space kernel `λ/(4πd)·exp(-j2πd/λ)`. An element
//! reflects the field incident on it scaled by its state's reflectivity, so
//! the contribution of element `m` at a point `p` is
//!
//! ```text
//! kernel(|p - e_m|) · r(φ_I, φ_R, c_m) · kernel(|ap - e_m|) · x
//! ```
//!
//! The received signal at a block is the LOS term, the element terms and a
//! static per-block multipath gain. Noise is applied on the RSS, not on the
//! complex signal.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scene::{direction_angles, segment_blocked, Angles, Scene, UserBody, Vec3};

/// Number of element states of the reference metasurface.
pub const NUM_STATES: usize = 4;

/// Deviation std and average RSS of the reference hardware, both observed
/// at a receiver [`CALIBRATION_RANGE_M`] in front of the surface center over
/// many configurations; the default noise level keeps their ratio.
pub const REFERENCE_DEVIATION_STD_W: f64 = 0.1717;
pub const REFERENCE_MEAN_RSS_W: f64 = 1.7753;
pub const CALIBRATION_RANGE_M: f64 = 0.5;

/// Metamaterial units per element side in per-unit mode.
pub const UNITS_PER_ELEMENT_SIDE: usize = 12;

/// State of one element, `0` being the base state `c₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ElementState(u8);

impl ElementState {
    pub const BASE: ElementState = ElementState(0);

    pub fn new(index: usize) -> Self {
        ElementState(u8::try_from(index).expect("state index fits in u8"))
    }

    /// Zero-based index into the state set.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all(n_states: usize) -> impl Iterator<Item = ElementState> {
        (0..n_states).map(ElementState::new)
    }
}

impl fmt::Display for ElementState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    states: Vec<ElementState>,
}

impl Configuration {
    pub fn new(states: Vec<ElementState>) -> Self {
        Configuration { states }
    }

    pub fn all_base(m: usize) -> Self {
        Configuration {
            states: vec![ElementState::BASE; m],
        }
    }

    pub fn random<R: Rng + ?Sized>(m: usize, n_states: usize, rng: &mut R) -> Self {
        Configuration {
            states: (0..m).map(|_| ElementState::new(rng.gen_range(0..n_states))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[ElementState] {
        &self.states
    }

    pub fn state(&self, m: usize) -> ElementState {
        self.states[m]
    }

    pub fn with_state(&self, m: usize, s: ElementState) -> Self {
        let mut c = self.clone();
        c.states[m] = s;
        c
    }

    pub fn set(&mut self, m: usize, s: ElementState) {
        self.states[m] = s;
    }

    /// Parses a digit string, element 0 first. Digit `d` is state `c_{d+1}`.
    pub fn parse_digits(s: &str, n_states: usize) -> Result<Self> {
        let states = s
            .chars()
            .map(|ch| {
                ch.to_digit(10)
                    .map(|d| d as usize)
                    .filter(|&d| d < n_states)
                    .map(ElementState::new)
                    .ok_or_else(|| {
                        Error::InvalidConfiguration(format!(
                            "'{ch}' in \"{s}\" is not a state digit below {n_states}"
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        if states.is_empty() {
            return Err(Error::InvalidConfiguration("empty configuration string".into()));
        }
        Ok(Configuration { states })
    }

    pub fn parse_for(s: &str, m: usize) -> Result<Self> {
        let cfg = Configuration::parse_digits(s, NUM_STATES)?;
        if cfg.len() != m {
            return Err(Error::InvalidConfiguration(format!(
                "\"{s}\" has {} digits, the surface has {m} elements",
                cfg.len()
            )));
        }
        Ok(cfg)
    }

    pub fn to_digits(&self) -> String {
        self.states
            .iter()
            .map(|s| char::from_digit(s.0 as u32, 10).unwrap_or('?'))
            .collect()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_digits())
    }
}

/// Angle-dependent multiplicative factor applied on top of the state table.
pub trait AngleResponse: Send + Sync + fmt::Debug {
    fn factor(&self, incident: Angles, reflected: Angles) -> Complex64;
}

/// One row of a reflectivity table document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectivityEntry {
    /// 1-based state number.
    pub state: usize,
    pub amplitude: f64,
    pub phase_deg: f64,
}

/// Reflectivity of a metamaterial unit at 3.2 GHz in each of its four states.
pub const UNIT_STATES: [ReflectivityEntry; NUM_STATES] = [
    ReflectivityEntry { state: 1, amplitude: 0.95, phase_deg: -33.0 },
    ReflectivityEntry { state: 2, amplitude: 0.97, phase_deg: 60.0 },
    ReflectivityEntry { state: 3, amplitude: 0.93, phase_deg: 134.0 },
    ReflectivityEntry { state: 4, amplitude: 0.88, phase_deg: -136.0 },
];

#[derive(Debug, Clone)]
pub struct ReflectivityModel {
    table: Vec<Complex64>,
    angle_response: Option<Arc<dyn AngleResponse>>,
}

impl Default for ReflectivityModel {
    fn default() -> Self {
        ReflectivityModel::from_entries(&UNIT_STATES).expect("reference table is valid")
    }
}

impl ReflectivityModel {
    /// Builds a table; every state `1..=len` must appear once with `|r| ≤ 1`.
    pub fn from_entries(entries: &[ReflectivityEntry]) -> Result<Self> {
        check_entries(entries)?;
        let mut table = vec![Complex64::new(0.0, 0.0); entries.len()];
        for e in entries {
            table[e.state - 1] = Complex64::from_polar(e.amplitude, e.phase_deg.to_radians());
        }
        Ok(ReflectivityModel {
            table,
            angle_response: None,
        })
    }

    pub fn with_angle_response(mut self, response: Arc<dyn AngleResponse>) -> Self {
        self.angle_response = Some(response);
        self
    }

    pub fn n_states(&self) -> usize {
        self.table.len()
    }

    pub fn is_isotropic(&self) -> bool {
        self.angle_response.is_none()
    }

    pub fn table_value(&self, s: ElementState) -> Complex64 {
        self.table[s.index()]
    }

    pub fn reflectivity(&self, s: ElementState, incident: Angles, reflected: Angles) -> Complex64 {
        let r = self.table[s.index()];
        match &self.angle_response {
            Some(resp) => r * resp.factor(incident, reflected),
            None => r,
        }
    }
}

/// Validation shared by model construction and the `verify` suites.
pub fn check_entries(entries: &[ReflectivityEntry]) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::Config("reflectivity table is empty".into()));
    }
    let mut seen = vec![false; entries.len()];
    for e in entries {
        if e.state == 0 || e.state > entries.len() || std::mem::replace(&mut seen[e.state - 1], true) {
            return Err(Error::Config(format!(
                "reflectivity states must be 1..={} each once (bad state {})",
                entries.len(),
                e.state
            )));
        }
        if !(e.amplitude.is_finite() && e.phase_deg.is_finite()) {
            return Err(Error::Config(format!("state {} has a non-finite value", e.state)));
        }
        if !(0.0..=1.0).contains(&e.amplitude) {
            return Err(Error::Config(format!(
                "state {} has |r| = {} outside [0, 1]",
                e.state, e.amplitude
            )));
        }
    }
    Ok(())
}

/// `λ/(4πd)·exp(-j2πd/λ)`.
pub fn free_space_kernel(d: f64, wavelength: f64) -> Complex64 {
    Complex64::from_polar(wavelength / (4.0 * PI * d), -2.0 * PI * d / wavelength)
}

fn checked_distance(a: Vec3, b: Vec3, what: &str) -> Result<f64> {
    let d = a.distance(b);
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::Domain(format!("{what}: coincident points")))
    }
}

/// Field `x_m` incident on element `m`.
pub fn incident_field_on_element(scene: &Scene, m: usize) -> Result<Complex64> {
    let e = scene.surface.element_center(m)?;
    let d = checked_distance(scene.emitter.position, e, "emitter to element")?;
    Ok(scene.emitter.tx_amplitude * free_space_kernel(d, scene.emitter.wavelength))
}

/// Line-of-sight gain `h^LOS_n` (without `x`).
pub fn los_gain(scene: &Scene, n: usize) -> Result<Complex64> {
    let c = scene.grid.block_center(n)?;
    let d = checked_distance(scene.emitter.position, c, "emitter to block")?;
    Ok(free_space_kernel(d, scene.emitter.wavelength))
}

/// Per-block static multipath gains with `|h^R_n| = ρ·|h^LOS_n|`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathModel {
    rho: f64,
    gains: Vec<Complex64>,
}

impl MultipathModel {
    pub fn none(n_blocks: usize) -> Self {
        MultipathModel {
            rho: 0.0,
            gains: vec![Complex64::new(0.0, 0.0); n_blocks],
        }
    }

    pub fn generate(scene: &Scene, rho: f64, seed: u64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("multipath rho must be >= 0, got {rho}")));
        }
        let mut r = rng::stream(seed, rng::domain::MULTIPATH, 0);
        let gains = (0..scene.grid.len())
            .map(|n| {
                let phase = r.gen_range(0.0..2.0 * PI);
                Ok(Complex64::from_polar(rho * los_gain(scene, n)?.norm(), phase))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultipathModel { rho, gains })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn gain(&self, n: usize) -> Complex64 {
        self.gains[n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(NoiseModel { sigma })
    }

    /// One RSS observation around `mu`, clamped at zero.
    pub fn sample_rss<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> Result<f64> {
        if !(mu >= 0.0) {
            return Err(Error::Domain(format!("mean RSS must be >= 0, got {mu}")));
        }
        if self.sigma == 0.0 {
            return Ok(mu);
        }
        let normal = Normal::new(mu, self.sigma).expect("sigma validated");
        Ok(normal.sample(rng).max(0.0))
    }
}

/// Physical knobs of the simulated channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// RSS noise std in watts; `None` calibrates it from the scene.
    pub sigma_w: Option<f64>,
    pub rho: f64,
    pub a_obs: f64,
    pub per_unit_mode: bool,
    pub multipath_seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            sigma_w: None,
            rho: 0.1,
            a_obs: 0.1,
            per_unit_mode: false,
            multipath_seed: 0,
        }
    }
}

/// Ground-truth channel for one scene. Element terms `h_{m,n}(c)·x` are
/// tabulated for every block center and state.
#[derive(Debug, Clone)]
pub struct Channel {
    scene: Scene,
    model: ReflectivityModel,
    multipath: MultipathModel,
    params: ChannelParams,
    los: Vec<Complex64>,
    // [(n * M + m) * n_states + k]
    terms: Vec<Complex64>,
}

impl Channel {
    pub fn new(scene: Scene, model: ReflectivityModel, params: ChannelParams) -> Result<Self> {
        if !(0.0..=1.0).contains(&params.a_obs) {
            return Err(Error::Config(format!("a_obs must lie in [0, 1], got {}", params.a_obs)));
        }
        if let Some(s) = params.sigma_w {
            NoiseModel::new(s)?;
        }
        let multipath = MultipathModel::generate(&scene, params.rho, params.multipath_seed)?;
        Channel::with_multipath(scene, model, multipath, params)
    }

    pub fn with_multipath(
        scene: Scene,
        model: ReflectivityModel,
        multipath: MultipathModel,
        params: ChannelParams,
    ) -> Result<Self> {
        let x = scene.emitter.tx_amplitude;
        let n_blocks = scene.grid.len();
        let m_count = scene.surface.len();
        let ns = model.n_states();
        let los = (0..n_blocks)
            .map(|n| Ok(los_gain(&scene, n)? * x))
            .collect::<Result<Vec<_>>>()?;
        let mut ch = Channel {
            scene,
            model,
            multipath,
            params,
            los,
            terms: Vec::new(),
        };
        let centers = ch.scene.grid.block_centers();
        let mut terms = Vec::with_capacity(n_blocks * m_count * ns);
        for c in centers {
            for m in 0..m_count {
                for s in ElementState::all(ns) {
                    terms.push(ch.element_term(m, s, c)?);
                }
            }
        }
        ch.terms = terms;
        Ok(ch)
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn model(&self) -> &ReflectivityModel {
        &self.model
    }

    pub fn multipath(&self) -> &MultipathModel {
        &self.multipath
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn n_elements(&self) -> usize {
        self.scene.surface.len()
    }

    pub fn n_states(&self) -> usize {
        self.model.n_states()
    }

    pub fn n_blocks(&self) -> usize {
        self.scene.grid.len()
    }

    fn check_cfg(&self, cfg: &Configuration) -> Result<()> {
        if cfg.len() != self.n_elements() {
            return Err(Error::InvalidConfiguration(format!(
                "configuration has {} states, surface has {} elements",
                cfg.len(),
                self.n_elements()
            )));
        }
        if let Some(s) = cfg.states().iter().find(|s| s.index() >= self.n_states()) {
            return Err(Error::InvalidConfiguration(format!("unknown state {s}")));
        }
        Ok(())
    }

    fn reflection_via(&self, point: Vec3, s: ElementState, p: Vec3) -> Result<Complex64> {
        let em = &self.scene.emitter;
        let d_in = checked_distance(em.position, point, "emitter to element")?;
        let d_out = checked_distance(point, p, "element to receiver")?;
        let r = if self.model.is_isotropic() {
            self.model.table_value(s)
        } else {
            let normal = self.scene.surface.normal();
            let inc = direction_angles(point, em.position, normal)?;
            let refl = direction_angles(point, p, normal)?;
            self.model.reflectivity(s, inc, refl)
        };
        Ok(free_space_kernel(d_out, em.wavelength)
            * r
            * free_space_kernel(d_in, em.wavelength)
            * em.tx_amplitude)
    }

    /// Contribution `h_{m}(c)·x` of element `m` in state `s` at point `p`,
    /// evaluated from the geometry.
    pub fn element_term(&self, m: usize, s: ElementState, p: Vec3) -> Result<Complex64> {
        if self.params.per_unit_mode {
            self.scene
                .surface
                .unit_centers(m, UNITS_PER_ELEMENT_SIDE)?
                .into_iter()
                .map(|u| self.reflection_via(u, s, p))
                .sum()
        } else {
            self.reflection_via(self.scene.surface.element_center(m)?, s, p)
        }
    }

    /// Reflected field at an arbitrary point.
    pub fn reflected_field_at(&self, cfg: &Configuration, p: Vec3) -> Result<Complex64> {
        self.check_cfg(cfg)?;
        if self.scene.surface.signed_distance(p).abs() < 1e-12 {
            return Err(Error::Domain("receiver lies on the surface plane".into()));
        }
        cfg.states()
            .iter()
            .enumerate()
            .map(|(m, &s)| self.element_term(m, s, p))
            .sum()
    }

    /// Tabulated `h_{m,n}(c)·x`.
    pub fn block_term(&self, m: usize, n: usize, s: ElementState) -> Complex64 {
        let (mc, ns) = (self.n_elements(), self.n_states());
        self.terms[(n * mc + m) * ns + s.index()]
    }

    /// `h^LOS_n·x`.
    pub fn los_term(&self, n: usize) -> Complex64 {
        self.los[n]
    }

    /// `h^R_n·x`.
    pub fn multipath_term(&self, n: usize) -> Complex64 {
        self.multipath.gain(n) * self.scene.emitter.tx_amplitude
    }

    /// Noiseless received signal at block `n`.
    pub fn received_signal(&self, cfg: &Configuration, n: usize) -> Result<Complex64> {
        self.obstructed_received_signal(cfg, n, &[])
    }

    pub fn mean_rss(&self, cfg: &Configuration, n: usize) -> Result<f64> {
        Ok(self.received_signal(cfg, n)?.norm_sqr())
    }

    /// Received signal at block `n` when `others` may shadow the LOS and the
    /// element-to-block paths. Shadowed terms are scaled by `a_obs`.
    pub fn obstructed_received_signal(
        &self,
        cfg: &Configuration,
        n: usize,
        others: &[UserBody],
    ) -> Result<Complex64> {
        self.check_cfg(cfg)?;
        if n >= self.n_blocks() {
            return Err(Error::Index {
                what: "block",
                index: n,
                len: self.n_blocks(),
            });
        }
        let a_obs = self.params.a_obs;
        let target = self.scene.grid.block_center(n)?;
        let blocked = |from: Vec3| others.iter().any(|b| segment_blocked(from, target, b));
        let mut y = self.los[n];
        if !others.is_empty() && blocked(self.scene.emitter.position) {
            y *= a_obs;
        }
        for (m, &s) in cfg.states().iter().enumerate() {
            let mut t = self.block_term(m, n, s);
            if !others.is_empty() && blocked(self.scene.surface.element_centers()[m]) {
                t *= a_obs;
            }
            y += t;
        }
        Ok(y + self.multipath_term(n))
    }

    /// SHA-256 over the geometry and physical parameters that determine the
    /// noiseless signals. Stored with critical measurements.
    pub fn fingerprint(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        let mut put = |v: f64| h.update(v.to_bits().to_le_bytes());
        let s = &self.scene;
        for v in [s.grid.origin(), s.surface.center(), s.surface.normal(), s.emitter.position] {
            put(v.x);
            put(v.y);
            put(v.z);
        }
        put(s.grid.edge());
        put(s.surface.pitch());
        put(s.emitter.carrier_hz);
        put(s.emitter.tx_amplitude.re);
        put(s.emitter.tx_amplitude.im);
        put(self.params.rho);
        for r in &self.model.table {
            put(r.re);
            put(r.im);
        }
        for d in s.grid.dims() {
            h.update((d as u64).to_le_bytes());
        }
        h.update((s.surface.rows() as u64).to_le_bytes());
        h.update((s.surface.cols() as u64).to_le_bytes());
        h.update(self.params.multipath_seed.to_le_bytes());
        h.update([self.params.per_unit_mode as u8, self.model.is_isotropic() as u8]);
        h.finalize().into()
    }

    /// Mean over all blocks of the noiseless RSS under the all-base configuration.
    pub fn mean_base_rss(&self) -> f64 {
        let base = Configuration::all_base(self.n_elements());
        let total: f64 = (0..self.n_blocks())
            .map(|n| self.mean_rss(&base, n).expect("valid block"))
            .sum();
        total / self.n_blocks() as f64
    }

    /// Point on the surface normal where the noise level is calibrated.
    pub fn calibration_point(&self) -> Vec3 {
        let s = &self.scene.surface;
        s.center() + s.normal() * CALIBRATION_RANGE_M
    }

    /// Expected RSS at `p` when every element draws its state uniformly and
    /// independently. With `y = a + Σ_m t_m`,
    /// `E|y|² = |a + Σ_m E t_m|² + Σ_m (E|t_m|² − |E t_m|²)`; the random-phase
    /// multipath adds `ρ²·|h_LOS|²`.
    pub fn expected_rss_at(&self, p: Vec3) -> Result<f64> {
        let em = &self.scene.emitter;
        let los = free_space_kernel(checked_distance(em.position, p, "emitter to receiver")?, em.wavelength)
            * em.tx_amplitude;
        let ns = self.n_states() as f64;
        let mut mean = los;
        let mut spread = 0.0;
        for m in 0..self.n_elements() {
            let mut first = Complex64::new(0.0, 0.0);
            let mut second = 0.0;
            for s in ElementState::all(self.n_states()) {
                let t = self.element_term(m, s, p)?;
                first += t;
                second += t.norm_sqr();
            }
            first /= ns;
            mean += first;
            spread += second / ns - first.norm_sqr();
        }
        Ok(mean.norm_sqr() + spread + self.params.rho.powi(2) * los.norm_sqr())
    }

    /// RSS noise std: the configured value, or the reference deviation/mean
    /// ratio applied to the expected RSS at the calibration point. The level
    /// is fixed in watts, so distant SOIs see a lower SNR.
    pub fn noise_sigma(&self) -> f64 {
        self.params.sigma_w.unwrap_or_else(|| {
            let rss = self
                .expected_rss_at(self.calibration_point())
                .expect("calibration point lies off the surface");
            REFERENCE_DEVIATION_STD_W / REFERENCE_MEAN_RSS_W * rss
        })
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel::new(self.noise_sigma()).expect("validated sigma")
    }
}
