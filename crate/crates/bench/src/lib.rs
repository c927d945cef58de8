//! Fixtures shared by the benchmark targets.

use metaradar::config::SceneConfig;
use metaradar::harness::Testbed;
use metaradar::localizer::Posterior;

/// Built-in scene with the SOI `d` meters out, surveyed with seed 0.
pub fn reference_testbed(d: f64) -> Testbed {
    SceneConfig::reference(d)
        .and_then(|c| c.testbed(0))
        .expect("built-in scene is valid")
}

/// One user whose belief is spread over the blocks within `radius` meters
/// of the SOI center, the situation a few cycles into a trial.
pub fn spread_posterior(bed: &Testbed, radius: f64) -> Posterior {
    let grid = bed.grid();
    let center = grid.center();
    let row = grid
        .block_centers()
        .iter()
        .map(|c| if c.distance(center) <= radius { 1.0 } else { 0.0 })
        .collect();
    Posterior::from_rows(vec![row]).expect("radius covers at least one block")
}
