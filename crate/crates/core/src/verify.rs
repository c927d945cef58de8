//! Runtime self-checks over a scene: each suite re-derives a property of the
//! models from an independent computation and reports pass or fail.

use std::fmt;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{check_entries, Configuration, UNIT_STATES};
use crate::config::SceneConfig;
use crate::harness::{run_offline_phase, OfflineParams};
use crate::localizer::{optimize_configuration, ErrorMatrix, LossContext, LossParams, OptimizerParams, Posterior};
use crate::radiomap::critical_configurations;
use crate::rng;
use crate::scene::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<14} {}", self.name, self.detail)
    }
}

fn result(name: &'static str, passed: bool, detail: impl Into<String>) -> SuiteResult {
    SuiteResult {
        name,
        passed,
        detail: detail.into(),
    }
}

/// Runs every suite against `cfg`. Suites that need a working channel fail
/// when the scene cannot produce one.
pub fn run_all(cfg: &SceneConfig, seed: u64) -> Vec<SuiteResult> {
    let mut out = vec![reflectivity_suite(cfg), geometry_suite(cfg)];
    match cfg.channel() {
        Ok(ch) => out.push(compressive_suite(&ch, seed)),
        Err(e) => out.push(result("compressive", false, format!("no channel: {e}"))),
    }
    out.push(critical_count_suite(seed));
    out.push(gradient_suite(seed));
    out.push(union_bound_suite(seed));
    out.push(posterior_suite(seed));
    out.push(optimizer_suite(cfg, seed));
    out
}

pub fn reflectivity_suite(cfg: &SceneConfig) -> SuiteResult {
    let entries = cfg.channel.reflectivity.clone().unwrap_or_else(|| UNIT_STATES.to_vec());
    match check_entries(&entries) {
        Ok(()) => result("reflectivity", true, format!("{} states, all |r| <= 1", entries.len())),
        Err(e) => result("reflectivity", false, e.to_string()),
    }
}

pub fn geometry_suite(cfg: &SceneConfig) -> SuiteResult {
    let scene = match cfg.scene() {
        Ok(s) => s,
        Err(e) => return result("geometry", false, e.to_string()),
    };
    let g = &scene.grid;
    let mut bad = 0;
    for n in 0..g.len() {
        match g.block_center(n).and_then(|c| g.block_index_of(c)) {
            Ok(back) if back == n => {}
            _ => bad += 1,
        }
    }
    let side = scene.surface.signed_distance(g.center()).signum();
    let same_side = g.block_centers().iter().all(|&c| scene.surface.signed_distance(c).signum() == side);
    result(
        "geometry",
        bad == 0 && same_side,
        format!("{} blocks, {bad} index round-trip failures, SOI on one side: {same_side}", g.len()),
    )
}

pub fn compressive_suite(ch: &crate::channel::Channel, seed: u64) -> SuiteResult {
    let exact = OfflineParams {
        averaging: 1,
        noise: 0.0,
        seed,
    };
    let cm = match run_offline_phase(ch, &exact) {
        Ok(cm) => cm,
        Err(e) => return result("compressive", false, e.to_string()),
    };
    let mut r = rng::stream(seed, rng::domain::VERIFY, 1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let c = Configuration::random(ch.n_elements(), ch.n_states(), &mut r);
        for n in 0..ch.n_blocks() {
            let direct = ch.received_signal(&c, n).expect("valid block");
            let predicted: Complex64 = cm.predict_signal(&c, n).expect("valid block");
            worst = worst.max((predicted - direct).norm() / direct.norm());
        }
    }
    result("compressive", worst < 1e-10, format!("max relative deviation {worst:.2e} over 20 configurations"))
}

pub fn critical_count_suite(seed: u64) -> SuiteResult {
    let mut r = rng::stream(seed, rng::domain::VERIFY, 2);
    let mut ok = critical_configurations(16, 4).len() == 49;
    for _ in 0..50 {
        let m = r.gen_range(1..=12);
        let na = r.gen_range(2..=5);
        let set: std::collections::BTreeSet<String> =
            critical_configurations(m, na).into_iter().map(|(_, c)| c.to_digits()).collect();
        ok &= set.len() == na * m - m + 1;
    }
    result("critical-set", ok, "49 for 16 elements x 4 states; 50 random sizes")
}

fn random_instance(r: &mut impl Rng, n: usize) -> (Posterior, ErrorMatrix, Vec<f64>, f64) {
    let users = r.gen_range(1..=3);
    let rows = (0..users).map(|_| (0..n).map(|_| r.gen_range(0.01..1.0)).collect()).collect();
    let pts: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(r.gen_range(0.0..0.5), r.gen_range(0.0..0.5), r.gen_range(0.0..0.5)))
        .collect();
    let mu = (0..n).map(|_| r.gen_range(0.5..2.0)).collect();
    (Posterior::from_rows(rows).expect("positive rows"), ErrorMatrix::from_points(&pts), mu, r.gen_range(0.05..0.5))
}

pub fn gradient_suite(seed: u64) -> SuiteResult {
    let mut r = rng::stream(seed, rng::domain::VERIFY, 3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.gen_range(2..=32);
        let (p, g, mu, sigma) = random_instance(&mut r, n);
        let ctx = LossContext::new(p.block_mass(), g, sigma).expect("valid instance");
        let grad = ctx.gradient(&mu);
        let h = 1e-6 * mu.iter().cloned().fold(0.0, f64::max);
        for k in 0..n {
            if grad[k].abs() <= 1e-12 {
                continue;
            }
            let mut up = mu.clone();
            let mut down = mu.clone();
            up[k] += h;
            down[k] -= h;
            let fd = -(ctx.upper_bound(&up) - ctx.upper_bound(&down)) / (2.0 * h);
            worst = worst.max(((grad[k] - fd) / grad[k]).abs());
        }
    }
    result("gradient", worst < 1e-5, format!("max relative error {worst:.2e} over 100 instances"))
}

pub fn union_bound_suite(seed: u64) -> SuiteResult {
    let mut r = rng::stream(seed, rng::domain::VERIFY, 4);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = r.gen_range(1..=8);
        let (p, g, mu, sigma) = random_instance(&mut r, n);
        let ctx = LossContext::new(p.block_mass(), g, sigma).expect("valid instance");
        if ctx.upper_bound(&mu) < ctx.brute_force(&mu).expect("small instance") {
            violations += 1;
        }
    }
    result("union-bound", violations == 0, format!("{violations} violations in 1000 instances"))
}

pub fn posterior_suite(seed: u64) -> SuiteResult {
    let mut r = rng::stream(seed, rng::domain::VERIFY, 5);
    let mut worst = 0.0f64;
    let mut negative = false;
    for _ in 0..50 {
        let n = r.gen_range(2..50);
        let (mut p, _, _, sigma) = random_instance(&mut r, n);
        for _ in 0..20 {
            let mu: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..2.0)).collect();
            let s: Vec<f64> = (0..p.users()).map(|_| r.gen_range(0.0..2.0)).collect();
            p.update(&mu, &s, sigma / 10.0).expect("matching sizes");
            for row in p.rows() {
                negative |= row.iter().any(|&v| v < 0.0);
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    result(
        "posterior",
        worst < 1e-9 && !negative,
        format!("max row-sum deviation {worst:.2e} over 1000 updates"),
    )
}

pub fn optimizer_suite(cfg: &SceneConfig, seed: u64) -> SuiteResult {
    let ch = match cfg.channel() {
        Ok(c) => c,
        Err(e) => return result("optimizer", false, format!("no channel: {e}")),
    };
    let cm = match run_offline_phase(&ch, &OfflineParams { averaging: 1, noise: 0.0, seed }) {
        Ok(c) => c,
        Err(e) => return result("optimizer", false, e.to_string()),
    };
    let gamma = ErrorMatrix::from_grid(&ch.scene().grid);
    let sigma = ch.noise_sigma().max(1e-6 * ch.mean_base_rss());
    let mut r = rng::stream(seed, rng::domain::VERIFY, 6);
    let n = ch.n_blocks();
    let mut ok = true;
    let mut accepted = 0;
    for t in 0..5 {
        // A posterior spread over a random neighborhood of blocks.
        let centre = r.gen_range(0..n);
        let row: Vec<f64> = (0..n)
            .map(|b| if gamma.get(centre, b) < 0.12 { r.gen_range(0.1..1.0) } else { 0.0 })
            .collect();
        let p = Posterior::from_rows(vec![row]).expect("non-empty support");
        let params = OptimizerParams {
            seed: rng::split_seed(seed, rng::domain::VERIFY, 100 + t),
            ..Default::default()
        };
        let lp = LossParams { sigma, alpha: 0.0 };
        match optimize_configuration(&cm, &p, &gamma, &params, &lp) {
            Ok(out) => {
                let mut prev = out.initial_loss;
                for &l in &out.accepted_losses {
                    ok &= l + params.epsilon < prev;
                    prev = l;
                }
                ok &= out.iterations <= params.z_u;
                accepted += out.accepted_losses.len();
            }
            Err(_) => ok = false,
        }
    }
    result("optimizer", ok, format!("{accepted} accepted changes, each lowering the loss by more than epsilon"))
}
