//! Scene and run configuration documents.
//!
//! A scene file is JSON:
//!
//! ```json
//! {
//!   "grid":     { "origin": [0.75, -0.25, -0.25], "edge_m": 0.05, "dims": [10, 10, 10] },
//!   "surface":  { "center": [0, 0, 0], "normal": [1, 0, 0], "rows": 4, "cols": 4, "pitch_m": 0.1725 },
//!   "emitter":  { "position": [0.5, 0, 0.866], "f_c_hz": 3.2e9, "tx_amplitude": [1, 0] },
//!   "users":    [ { "position": [0.975, -0.025, -0.025] } ],
//!   "channel":  { "rho": 0.1, "a_obs": 0.1 },
//!   "localizer": { "alpha": 0.001 }
//! }
//! ```
//!
//! Every section except `grid`, `surface` and `emitter` may be omitted.
//! Unknown keys are rejected.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channel::{check_entries, Channel, ChannelParams, ReflectivityEntry, ReflectivityModel, UNIT_STATES};
use crate::error::{Error, Result};
use crate::harness::{run_offline_phase, LocalizerSettings, OfflineParams, Testbed};
use crate::radiomap::CriticalMeasurements;
use crate::localizer::TerminationParams;
use crate::scene::{BlockGrid, Emitter, MetasurfaceLayout, Scene, UserBody, Vec3, DEFAULT_OCCLUSION_RADIUS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub origin: Vec3,
    pub edge_m: f64,
    pub dims: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub center: Vec3,
    pub normal: Vec3,
    pub rows: usize,
    pub cols: usize,
    pub pitch_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterConfig {
    pub position: Vec3,
    pub f_c_hz: f64,
    /// Complex baseband amplitude as `[re, im]`.
    pub tx_amplitude: [f64; 2],
}

fn default_occlusion() -> f64 {
    DEFAULT_OCCLUSION_RADIUS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub position: Vec3,
    #[serde(default = "default_occlusion")]
    pub occlusion_radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// RSS noise std in watts; calibrated from the scene when absent.
    pub sigma_w: Option<f64>,
    pub rho: f64,
    pub a_obs: f64,
    pub per_unit_mode: bool,
    pub multipath_seed: u64,
    pub offline_averaging: u32,
    pub offline_noise: f64,
    /// Inline reflectivity table; the built-in table when absent.
    pub reflectivity: Option<Vec<ReflectivityEntry>>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let p = ChannelParams::default();
        let o = OfflineParams::default();
        ChannelConfig {
            sigma_w: p.sigma_w,
            rho: p.rho,
            a_obs: p.a_obs,
            per_unit_mode: p.per_unit_mode,
            multipath_seed: p.multipath_seed,
            offline_averaging: o.averaging,
            offline_noise: o.noise,
            reflectivity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizerConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub z_u: usize,
    pub min_alignment: f64,
    pub beta1: f64,
    pub beta2: usize,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        let s = LocalizerSettings::default();
        LocalizerConfig {
            alpha: s.alpha,
            epsilon: s.epsilon,
            z_u: s.z_u,
            min_alignment: s.min_alignment,
            beta1: s.termination.beta1,
            beta2: s.termination.beta2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub grid: GridConfig,
    pub surface: SurfaceConfig,
    pub emitter: EmitterConfig,
    #[serde(default)]
    pub users: Vec<UserConfig>,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub localizer: LocalizerConfig,
}

impl SceneConfig {
    /// Document describing [`Scene::reference`] with default channel and
    /// localizer settings.
    pub fn reference(d: f64) -> Result<Self> {
        let s = Scene::reference(d)?;
        Ok(SceneConfig {
            grid: GridConfig {
                origin: s.grid.origin(),
                edge_m: s.grid.edge(),
                dims: s.grid.dims(),
            },
            surface: SurfaceConfig {
                center: s.surface.center(),
                normal: s.surface.normal(),
                rows: s.surface.rows(),
                cols: s.surface.cols(),
                pitch_m: s.surface.pitch(),
            },
            emitter: EmitterConfig {
                position: s.emitter.position,
                f_c_hz: s.emitter.carrier_hz,
                tx_amplitude: [s.emitter.tx_amplitude.re, s.emitter.tx_amplitude.im],
            },
            users: s
                .users
                .iter()
                .map(|u| UserConfig {
                    position: u.position,
                    occlusion_radius_m: u.occlusion_radius,
                })
                .collect(),
            channel: ChannelConfig::default(),
            localizer: LocalizerConfig::default(),
        })
    }

    pub fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a scene file and applies `key=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Copy with `key=value` overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene documents serialize")
    }

    pub fn scene(&self) -> Result<Scene> {
        let grid = BlockGrid::new(self.grid.origin, self.grid.edge_m, self.grid.dims)?;
        let s = &self.surface;
        let surface = MetasurfaceLayout::new(s.center, s.normal, s.rows, s.cols, s.pitch_m)?;
        let [re, im] = self.emitter.tx_amplitude;
        let emitter = Emitter::new(self.emitter.position, self.emitter.f_c_hz, Complex64::new(re, im))?;
        let users = self
            .users
            .iter()
            .map(|u| UserBody::in_grid(&grid, u.position, u.occlusion_radius_m))
            .collect::<Result<Vec<_>>>()?;
        Scene::new(grid, surface, emitter, users)
    }

    pub fn reflectivity(&self) -> Result<ReflectivityModel> {
        match &self.channel.reflectivity {
            Some(entries) => ReflectivityModel::from_entries(entries),
            None => ReflectivityModel::from_entries(&UNIT_STATES),
        }
    }

    pub fn channel_params(&self) -> ChannelParams {
        let c = &self.channel;
        ChannelParams {
            sigma_w: c.sigma_w,
            rho: c.rho,
            a_obs: c.a_obs,
            per_unit_mode: c.per_unit_mode,
            multipath_seed: c.multipath_seed,
        }
    }

    pub fn channel(&self) -> Result<Channel> {
        Channel::new(self.scene()?, self.reflectivity()?, self.channel_params())
    }

    pub fn offline_params(&self, seed: u64) -> OfflineParams {
        OfflineParams {
            averaging: self.channel.offline_averaging,
            noise: self.channel.offline_noise,
            seed,
        }
    }

    pub fn localizer_settings(&self) -> Result<LocalizerSettings> {
        let l = &self.localizer;
        if !(l.epsilon > 0.0) {
            return Err(Error::Config(format!("localizer.epsilon must be > 0, got {}", l.epsilon)));
        }
        if !(l.beta1 > 0.0) || l.beta2 == 0 {
            return Err(Error::Config("localizer.beta1 must be > 0 and beta2 >= 1".into()));
        }
        if !(0.0..1.0).contains(&l.alpha) {
            return Err(Error::Config(format!("localizer.alpha must be in [0, 1), got {}", l.alpha)));
        }
        Ok(LocalizerSettings {
            alpha: l.alpha,
            epsilon: l.epsilon,
            z_u: l.z_u,
            min_alignment: l.min_alignment,
            termination: TerminationParams {
                beta1: l.beta1,
                beta2: l.beta2,
            },
        })
    }

    /// Channel, freshly surveyed critical measurements and localizer settings.
    pub fn testbed(&self, seed: u64) -> Result<Testbed> {
        let ch = self.channel()?;
        let cm = run_offline_phase(&ch, &self.offline_params(seed))?;
        Testbed::new(ch, cm, self.localizer_settings()?)
    }

    /// As [`SceneConfig::testbed`], reusing stored measurements.
    pub fn testbed_with(&self, cm: CriticalMeasurements) -> Result<Testbed> {
        Testbed::new(self.channel()?, cm, self.localizer_settings()?)
    }

    /// Same document with the SOI moved so its center sits `d` meters in
    /// front of the surface center; users move with it.
    pub fn at_distance(&self, d: f64) -> Result<Self> {
        let normal = self
            .surface
            .normal
            .normalized()
            .ok_or_else(|| Error::Config("surface normal must be non-zero".into()))?;
        let scene = self.scene()?;
        let moved = scene.with_soi_center(self.surface.center + normal * d)?;
        let mut out = self.clone();
        out.grid.origin = moved.grid.origin();
        for (u, m) in out.users.iter_mut().zip(&moved.users) {
            u.position = m.position;
        }
        Ok(out)
    }
}

/// Loads a reflectivity table document: a list of
/// `{ "state", "amplitude", "phase_deg" }`.
pub fn load_reflectivity(path: &Path) -> Result<Vec<ReflectivityEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ReflectivityEntry> =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    check_entries(&entries)?;
    Ok(entries)
}

/// Applies `a.b.c=value` to a JSON document. The value is parsed as JSON
/// when possible and taken as a string otherwise; missing objects on the
/// path are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override {assignment:?} has an empty key")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is inside a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}
