use metaradar::channel::{Channel, ChannelParams, Configuration, ReflectivityModel};
use metaradar::harness::*;
use metaradar::radiomap::critical_configurations;
use metaradar::scene::{BlockGrid, Scene, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn channel(sigma_w: Option<f64>) -> Channel {
    let params = ChannelParams {
        sigma_w,
        ..ChannelParams::default()
    };
    Channel::new(Scene::reference(1.0).unwrap(), ReflectivityModel::default(), params).unwrap()
}

fn exact() -> OfflineParams {
    OfflineParams {
        averaging: 1,
        noise: 0.0,
        seed: 0,
    }
}

fn testbed(sigma_w: Option<f64>, offline: &OfflineParams) -> Testbed {
    let ch = channel(sigma_w);
    let cm = run_offline_phase(&ch, offline).unwrap();
    Testbed::new(ch, cm, LocalizerSettings::default()).unwrap()
}

fn center_trial(bed: &Testbed, seed: u64, scheme: Scheme, cycles: usize) -> TrialConfig {
    let mut t = user_trial(bed.grid(), seed, scheme, 1).unwrap();
    t.max_cycles = cycles;
    t
}

#[test]
fn exact_offline_phase_reproduces_the_channel() {
    let ch = channel(None);
    let cm = run_offline_phase(&ch, &exact()).unwrap();
    for (_, cfg) in critical_configurations(ch.n_elements(), ch.n_states()) {
        for n in (0..ch.n_blocks()).step_by(37) {
            let want = ch.received_signal(&cfg, n).unwrap();
            assert!((cm.predict_signal(&cfg, n).unwrap() - want).norm() <= 1e-12 * want.norm());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let cfg = Configuration::random(16, 4, &mut rng);
        for n in (0..ch.n_blocks()).step_by(11) {
            let want = ch.received_signal(&cfg, n).unwrap();
            assert!((cm.predict_signal(&cfg, n).unwrap() - want).norm() <= 1e-10 * want.norm());
        }
    }
}

#[test]
fn noisy_offline_phase_is_seeded() {
    let ch = channel(None);
    let p = OfflineParams { seed: 5, ..OfflineParams::default() };
    let a = run_offline_phase(&ch, &p).unwrap();
    let b = run_offline_phase(&ch, &p).unwrap();
    let c = run_offline_phase(&ch, &OfflineParams { seed: 6, ..p }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.averaging(), 16);
    assert_eq!(*a.scene_hash(), ch.fingerprint());
    // A small perturbation: relative error of a few percent at most.
    let cfg = Configuration::all_base(16);
    let want = ch.received_signal(&cfg, 500).unwrap();
    assert!((a.predict_signal(&cfg, 500).unwrap() - want).norm() < 0.2 * want.norm());
}

#[test]
fn localization_error_examples() {
    let grid = BlockGrid::centered_cube(Vec3::new(1.0, 0.0, 0.0), 0.5, 0.05).unwrap();
    let n = 555;
    let c = grid.block_center(n).unwrap();
    assert_eq!(localization_error(c, n, &grid).unwrap(), 0.0);
    let corner = c + Vec3::new(0.025, 0.025, 0.025);
    let half_diag = 0.05 * 3f64.sqrt() / 2.0;
    assert!((localization_error(corner, n, &grid).unwrap() - half_diag).abs() < 1e-12);
    let neighbour = grid.block_index_of(c + Vec3::new(0.05, 0.0, 0.0)).unwrap();
    assert!((localization_error(c, neighbour, &grid).unwrap() - 0.05).abs() < 1e-12);
    assert!(localization_error(c, grid.len(), &grid).is_err());
}

#[test]
fn fixed_scheme_never_changes_configuration() {
    let bed = testbed(None, &OfflineParams::default());
    let rec = run_localization(&bed, &center_trial(&bed, 1, Scheme::Fixed, 30)).unwrap();
    assert!(rec.cycles.iter().all(|c| c.config == Configuration::all_base(16)));
    assert_eq!(rec.cycles.len(), 31);
    assert_eq!(rec.stop, StopReason::CycleCap);
}

#[test]
fn random_scheme_starts_from_base_then_varies() {
    let bed = testbed(None, &OfflineParams::default());
    let rec = run_localization(&bed, &center_trial(&bed, 1, Scheme::Random, 10)).unwrap();
    assert_eq!(rec.cycles[0].config, Configuration::all_base(16));
    let distinct: std::collections::BTreeSet<String> = rec.cycles.iter().map(|c| c.config.to_digits()).collect();
    assert!(distinct.len() > 5);
}

#[test]
fn simulated_time_advances_one_hundred_ms_per_cycle() {
    let bed = testbed(None, &OfflineParams::default());
    let rec = run_localization(&bed, &center_trial(&bed, 2, Scheme::Random, 12)).unwrap();
    for (k, c) in rec.cycles.iter().enumerate() {
        assert_eq!(c.cycle, k);
        assert_eq!(c.sim_time_ms(), 100 * k as u64);
    }
}

#[test]
fn identical_trials_give_identical_records() {
    let bed = testbed(None, &OfflineParams::default());
    let t = center_trial(&bed, 9, Scheme::Optimized, 15);
    assert_eq!(run_localization(&bed, &t).unwrap(), run_localization(&bed, &t).unwrap());
    let other = TrialConfig { seed: 10, ..t.clone() };
    assert_ne!(run_localization(&bed, &t).unwrap(), run_localization(&bed, &other).unwrap());
}

#[test]
fn noiseless_optimized_trial_finds_the_exact_block_quickly() {
    let bed = testbed(Some(0.0), &exact());
    let rec = run_localization(&bed, &center_trial(&bed, 1, Scheme::Optimized, 500)).unwrap();
    let hit = rec.cycles.iter().position(|c| c.errors[0] == 0.0).expect("reaches the true block");
    assert!(hit < 20, "first exact estimate at cycle {hit}");
    assert_eq!(rec.final_entry().errors[0], 0.0);
    assert_ne!(rec.stop, StopReason::CycleCap);
}

/// Replays a fixed reading list; the localizer cannot tell it from a user.
struct Replay {
    readings: Vec<Vec<f64>>,
    next: usize,
}

impl RssSource for Replay {
    fn users(&self) -> usize {
        1
    }

    fn measure(&mut self, _cfg: &Configuration) -> metaradar::Result<Vec<f64>> {
        self.next += 1;
        Ok(self.readings[self.next - 1].clone())
    }
}

#[test]
fn localizer_depends_on_truth_only_through_readings() {
    let bed = testbed(None, &OfflineParams::default());
    let trial = center_trial(&bed, 4, Scheme::Optimized, 12);
    let rec = run_localization(&bed, &trial).unwrap();

    // Unused truth fields must not matter.
    let mut perturbed = trial.clone();
    perturbed.occlusion_radius = 0.4;
    perturbed.bystanders = vec![Vec3::new(0.9, 0.1, 0.0)];
    assert_eq!(run_localization(&bed, &perturbed).unwrap(), rec);

    // Feeding the logged readings back reproduces every decision.
    let mut replay = Replay {
        readings: rec.cycles.iter().map(|c| c.rss.clone()).collect(),
        next: 0,
    };
    let mut loc = OnlineLocalizer::new(
        &bed.cm,
        &bed.gamma,
        bed.loss_params(),
        bed.settings,
        Scheme::Optimized,
        trial.seed,
        1,
    )
    .unwrap();
    let (cycles, stop) = drive(&mut loc, &mut replay, &bed.settings.termination, 12, |e| Ok(vec![e[0] as f64])).unwrap();
    assert_eq!(stop, rec.stop);
    for (a, b) in cycles.iter().zip(&rec.cycles) {
        assert_eq!(a.config, b.config);
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.estimates, b.estimates);
    }
}

#[test]
fn optimized_loss_is_the_value_chosen_for_that_cycle() {
    let bed = testbed(None, &OfflineParams::default());
    let trial = center_trial(&bed, 8, Scheme::Optimized, 6);
    let rec = run_localization(&bed, &trial).unwrap();
    let mut loc =
        OnlineLocalizer::new(&bed.cm, &bed.gamma, bed.loss_params(), bed.settings, Scheme::Optimized, 8, 1).unwrap();
    for c in &rec.cycles {
        let choice = loc.choose(c.cycle).unwrap();
        assert_eq!(choice.config, c.config);
        assert_eq!(choice.loss, c.loss);
        loc.update(&c.config, &c.rss).unwrap();
    }
}

#[test]
fn disabled_obstruction_matches_plain_two_user_trial() {
    let ch = Channel::new(Scene::reference(2.75).unwrap(), ReflectivityModel::default(), ChannelParams::default()).unwrap();
    let cm = run_offline_phase(&ch, &OfflineParams::default()).unwrap();
    let bed = Testbed::new(ch, cm, LocalizerSettings::default()).unwrap();
    let mut obstructed = obstruction_scenario(bed.grid(), 3, Scheme::Random).unwrap();
    obstructed.max_cycles = 8;
    let mut plain = TrialConfig::new(3, Scheme::Random, obstructed.truth.clone());
    plain.max_cycles = 8;
    let mut disabled = obstructed.clone();
    disabled.obstruction_enabled = false;
    assert_eq!(run_localization(&bed, &disabled).unwrap(), run_localization(&bed, &plain).unwrap());

    // The far user reads a different signal once the near one is in the way.
    let on = run_localization(&bed, &obstructed).unwrap();
    let off = run_localization(&bed, &plain).unwrap();
    assert_eq!(on.cycles[0].rss[0], off.cycles[0].rss[0]);
    assert_ne!(on.cycles[0].rss[1], off.cycles[0].rss[1]);
    // 0.5 m apart before snapping; the block centers nearest the SOI faces are 0.45 m apart.
    assert!((obstructed.truth[1].x - obstructed.truth[0].x - 0.45).abs() < 1e-9);
}

#[test]
fn trial_csv_round_trips() {
    let bed = testbed(None, &OfflineParams::default());
    let mut t = user_trial(bed.grid(), 5, Scheme::Random, 2).unwrap();
    t.max_cycles = 7;
    let rec = run_localization(&bed, &t).unwrap();
    let mut buf = Vec::new();
    rec.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("cycle,config,user,rss_w,loss_lu_m,error_m,sim_time_ms\n"));
    let rows = read_trial_csv(buf.as_slice()).unwrap();
    assert_eq!(rows, rec.csv_rows());
    assert_eq!(rows.len(), 16);
    assert_eq!(rows[3].config.len(), 16);
}

#[test]
fn single_repetition_summary_matches_the_record() {
    let bed = testbed(None, &OfflineParams::default());
    let t = center_trial(&bed, 12, Scheme::Random, 9);
    let records = run_trials(&bed, &[t.clone()], 1).unwrap();
    assert_eq!(records[0], run_localization(&bed, &t).unwrap());
    let s = summarize(&records, 9, None);
    let e = records[0].errors_at(9)[0];
    assert_eq!((s.trials, s.mean_error, s.median_error, s.p90_error), (1, e, e, e));
    assert_eq!(s.cdf, vec![(e, 1.0)]);
    assert_eq!(s.mean_error_curve.len(), 10);
    assert!(run_trials(&bed, &[t], 0).is_err());
}

#[test]
fn repetitions_use_consecutive_seeds_in_order() {
    let bed = testbed(None, &OfflineParams::default());
    let t = center_trial(&bed, 20, Scheme::Random, 3);
    let records = run_trials(&bed, &[t], 4).unwrap();
    assert_eq!(records.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![20, 21, 22, 23]);
}

#[test]
fn summary_statistics() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(quantile(&[0.0, 10.0], 0.9), 9.0);
    assert!(mean(&[]).is_nan());
    assert_eq!(empirical_cdf(&[1.0, 1.0, 2.0, 3.0]), vec![(1.0, 0.5), (2.0, 0.75), (3.0, 1.0)]);
}

#[test]
fn scenario_layouts() {
    let grid = BlockGrid::centered_cube(Vec3::new(1.0, 0.0, 0.0), 0.5, 0.05).unwrap();
    let three = user_positions(&grid, 3).unwrap();
    assert!((three[1].y - three[0].y - 0.15).abs() < 1e-9);
    assert!((three[0].y - three[2].y - 0.15).abs() < 1e-9);
    assert!(three.iter().all(|p| p.x == three[0].x));
    assert!(user_positions(&grid, 4).is_err());
    let lateral = lateral_obstruction_scenario(&grid, 1, Scheme::Optimized, 0.25).unwrap();
    assert_eq!(lateral.truth.len(), 1);
    let b = lateral.bystanders[0];
    assert!((b - Vec3::new(0.5, 0.25, 0.0)).norm() < 1e-12);
}
