use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use metaradar::channel::Configuration;
use metaradar::config::SceneConfig;
use metaradar::harness::{
    obstruction_scenario, run_localization, run_trials, summarize, user_positions, write_rows, Scheme, SummaryRow,
    Testbed, TrialConfig,
};
use metaradar::heatmap::plane_slice;
use metaradar::io::write_atomic;
use metaradar::radiomap::CriticalMeasurements;
use metaradar::verify;

#[derive(Parser)]
#[command(name = "metaradar", version, about = "Metasurface-assisted RSS localization simulator")]
struct Cli {
    /// Scene file (JSON). Defaults to the built-in scene with the SOI 1 m in front of the surface.
    #[arg(long, global = true)]
    scene: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override a scene key, e.g. `--set channel.rho=0`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in property suites against the scene.
    Verify,
    /// Write RSS heatmaps of constant-x planes for given configurations.
    Radiomap(RadiomapArgs),
    /// Run one localization trial.
    Localize(LocalizeArgs),
    /// Monte-Carlo sweep over distance, user count or scheme.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RadiomapArgs {
    /// Configuration as a digit string, element 0 first (digit d = state d+1). Repeatable.
    #[arg(long = "config", value_name = "DIGITS")]
    configs: Vec<String>,

    /// Plane position(s) along x, meters. Defaults to the SOI center.
    #[arg(long = "plane-x", value_name = "X")]
    planes: Vec<f64>,

    /// Reuse stored critical measurements instead of surveying.
    #[arg(long)]
    load: Option<PathBuf>,

    /// Store the critical measurements used.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long, value_enum, default_value_t = SchemeArg::Optimized)]
    scheme: SchemeArg,

    /// RSS noise std in watts; overrides the calibrated level. Zero also
    /// makes a survey built here exact.
    #[arg(long)]
    sigma: Option<f64>,

    /// Critical measurements written by `radiomap --save`.
    #[arg(long, conflicts_with = "build_offline")]
    measurements: Option<PathBuf>,

    /// Survey the scene before localizing.
    #[arg(long)]
    build_offline: bool,

    /// Place 1–3 users in the standard layout instead of the scene's users.
    #[arg(long)]
    users: Option<usize>,

    /// Use the two-user in-line layout with shadowing between users.
    #[arg(long, conflicts_with = "users")]
    obstruction: bool,

    /// Cycle cap; the iteration limit applies as well.
    #[arg(long)]
    max_cycles: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    Distance,
    Users,
    Scheme,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Fixed,
    Random,
    Optimized,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Fixed => Scheme::Fixed,
            SchemeArg::Random => Scheme::Random,
            SchemeArg::Optimized => Scheme::Optimized,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    axis: Axis,

    /// Comma-separated axis values: distances in meters, user counts, or scheme names.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,

    #[arg(long, default_value_t = 20)]
    reps: usize,

    /// Scheme for distance and user sweeps.
    #[arg(long, value_enum, default_value_t = SchemeArg::Optimized)]
    scheme: SchemeArg,

    /// SOI distance for user and scheme sweeps.
    #[arg(long, default_value_t = 1.0)]
    distance: f64,

    /// User count for distance and scheme sweeps.
    #[arg(long, default_value_t = 1)]
    users: usize,

    #[arg(long)]
    max_cycles: Option<usize>,
}

enum Failure {
    /// Bad arguments; exit 2.
    Usage(String),
    /// A check failed or the run could not complete; exit 1.
    Run(String),
}

impl From<metaradar::Error> for Failure {
    fn from(e: metaradar::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Run(m) => f.write_str(m),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("metaradar: {e}");
            ExitCode::from(match e {
                Failure::Usage(_) => 2,
                Failure::Run(_) => 1,
            })
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    let scene = load_scene(cli)?;
    match &cli.command {
        Command::Verify => cmd_verify(&scene, cli.seed.unwrap_or(0)),
        Command::Radiomap(a) => cmd_radiomap(cli, &scene, a),
        Command::Localize(a) => cmd_localize(cli, scene, a),
        Command::Sweep(a) => cmd_sweep(cli, &scene, a),
    }
}

fn load_scene(cli: &Cli) -> Outcome<SceneConfig> {
    let bad_override = |e: metaradar::Error| Failure::Usage(e.to_string());
    match &cli.scene {
        Some(path) => {
            if !path.exists() {
                return Err(Failure::Usage(format!("scene file {} does not exist", path.display())));
            }
            SceneConfig::load(path, &cli.overrides).map_err(|e| match e {
                metaradar::Error::Io { .. } => Failure::Run(e.to_string()),
                other => Failure::Usage(other.to_string()),
            })
        }
        None => SceneConfig::reference(1.0)?.with_overrides(&cli.overrides).map_err(bad_override),
    }
}

fn required_seed(cli: &Cli, what: &str) -> Outcome<u64> {
    cli.seed.ok_or_else(|| Failure::Usage(format!("{what} needs --seed <u64>")))
}

fn output(cli: &Cli, name: &str, bytes: &[u8]) -> Outcome<PathBuf> {
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::Run(format!("cannot create {}: {e}", cli.out.display())))?;
    let path = cli.out.join(name);
    write_atomic(&path, bytes)?;
    Ok(path)
}

fn cmd_verify(scene: &SceneConfig, seed: u64) -> Outcome {
    let results = verify::run_all(scene, seed);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Run(format!("{failed} of {} suites failed", results.len())));
    }
    println!("all {} suites passed", results.len());
    Ok(())
}

fn measurements(scene: &SceneConfig, load: Option<&Path>, seed: u64) -> Outcome<Testbed> {
    match load {
        Some(p) => Ok(scene.testbed_with(CriticalMeasurements::load(p)?)?),
        None => Ok(scene.testbed(seed)?),
    }
}

fn cmd_radiomap(cli: &Cli, scene: &SceneConfig, a: &RadiomapArgs) -> Outcome {
    let bed = measurements(scene, a.load.as_deref(), cli.seed.unwrap_or(0))?;
    let m = bed.cm.n_elements();
    let configs = if a.configs.is_empty() {
        vec![Configuration::all_base(m)]
    } else {
        a.configs
            .iter()
            .map(|s| Configuration::parse_for(s, m).map_err(|e| Failure::Usage(e.to_string())))
            .collect::<Outcome<Vec<_>>>()?
    };
    let planes = if a.planes.is_empty() { vec![bed.grid().center().x] } else { a.planes.clone() };
    for &x in &planes {
        for cfg in &configs {
            let slice = plane_slice(&bed.cm, bed.grid(), cfg, x).map_err(|e| Failure::Usage(e.to_string()))?;
            let stem = format!("radiomap_{}_x{x}", cfg.to_digits());
            let mut csv = Vec::new();
            slice.write_csv(&mut csv)?;
            output(cli, &format!("{stem}.csv"), &csv)?;
            let pgm = output(cli, &format!("{stem}.pgm"), &slice.pgm())?;
            println!("{} ({}x{})", pgm.display(), slice.width, slice.height);
        }
    }
    if let Some(p) = &a.save {
        bed.cm.save(p)?;
        println!("saved critical measurements to {}", p.display());
    }
    Ok(())
}

fn cmd_localize(cli: &Cli, mut scene: SceneConfig, a: &LocalizeArgs) -> Outcome {
    let seed = required_seed(cli, "localize")?;
    if let Some(s) = a.sigma {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Failure::Usage(format!("--sigma must be a finite non-negative number, got {s}")));
        }
        scene.channel.sigma_w = Some(s);
        if s == 0.0 {
            // A noiseless run: the survey is exact as well.
            scene.channel.offline_noise = 0.0;
        }
    }
    let bed = match (&a.measurements, a.build_offline) {
        (Some(p), _) => measurements(&scene, Some(p), seed)?,
        (None, true) => measurements(&scene, None, seed)?,
        (None, false) => {
            return Err(Failure::Usage(
                "no offline measurements: pass --measurements <file> (written by `metaradar radiomap --save`) \
                 or --build-offline to survey the scene first"
                    .into(),
            ))
        }
    };
    let scheme = Scheme::from(a.scheme);
    let mut trial = if a.obstruction {
        obstruction_scenario(bed.grid(), seed, scheme)?
    } else if let Some(n) = a.users {
        TrialConfig::new(seed, scheme, user_positions(bed.grid(), n).map_err(|e| Failure::Usage(e.to_string()))?)
    } else if scene.users.is_empty() {
        return Err(Failure::Usage("the scene has no users; add some or pass --users".into()));
    } else {
        TrialConfig::new(seed, scheme, scene.users.iter().map(|u| u.position).collect())
    };
    if let Some(c) = a.max_cycles {
        trial.max_cycles = c;
    }
    let rec = run_localization(&bed, &trial)?;
    let name = format!("trial_{scheme}_seed{seed}.csv");
    let mut csv = Vec::new();
    rec.write_csv(&mut csv)?;
    let path = output(cli, &name, &csv)?;
    let last = rec.final_entry();
    for (i, (&block, &err)) in last.estimates.iter().zip(&last.errors).enumerate() {
        println!("user {i}: block {block}, error {err:.4} m");
    }
    println!(
        "{} cycles ({} ms simulated), stop: {:?}, loss {:.4} m -> {}",
        rec.cycles.len(),
        last.sim_time_ms(),
        rec.stop,
        last.loss,
        path.display()
    );
    Ok(())
}

fn parse_values<T: std::str::FromStr>(values: &[String], what: &str) -> Outcome<Vec<T>> {
    values
        .iter()
        .map(|v| v.trim().parse().map_err(|_| Failure::Usage(format!("{v:?} is not a valid {what}"))))
        .collect()
}

fn cmd_sweep(cli: &Cli, scene: &SceneConfig, a: &SweepArgs) -> Outcome {
    let seed = required_seed(cli, "sweep")?;
    if a.reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    // (scheme, distance, users) per sweep point.
    let points: Vec<(Scheme, f64, usize)> = match a.axis {
        Axis::Distance => parse_values::<f64>(&a.values, "distance")?
            .into_iter()
            .map(|d| (a.scheme.into(), d, a.users))
            .collect(),
        Axis::Users => parse_values::<usize>(&a.values, "user count")?
            .into_iter()
            .map(|u| (a.scheme.into(), a.distance, u))
            .collect(),
        Axis::Scheme => parse_values::<Scheme>(&a.values, "scheme")?
            .into_iter()
            .map(|s| (s, a.distance, a.users))
            .collect(),
    };
    let mut rows = Vec::with_capacity(points.len());
    let mut bed_at: Option<(f64, Testbed)> = None;
    for (scheme, d, users) in points {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Failure::Usage(format!("distance must be positive, got {d}")));
        }
        if bed_at.as_ref().map_or(true, |(at, _)| *at != d) {
            bed_at = Some((d, scene.at_distance(d)?.testbed(seed)?));
        }
        let bed = &bed_at.as_ref().expect("testbed built above").1;
        let positions = user_positions(bed.grid(), users).map_err(|e| Failure::Usage(e.to_string()))?;
        let mut trial = TrialConfig::new(seed, scheme, positions);
        if let Some(c) = a.max_cycles {
            trial.max_cycles = c;
        }
        let records = run_trials(bed, &[trial.clone()], a.reps)?;
        let stats = summarize(&records, trial.max_cycles, None);
        let row = SummaryRow::new(scheme, d, users, &stats);
        println!(
            "{:<9} d={:<4} users={} mean {:.4} m, median {:.4} m, p90 {:.4} m",
            scheme.name(),
            d,
            users,
            row.mean_error_m,
            row.median_error_m,
            row.p90_error_m
        );
        rows.push(row);
    }
    let axis = match a.axis {
        Axis::Distance => "distance",
        Axis::Users => "users",
        Axis::Scheme => "scheme",
    };
    let mut csv = Vec::new();
    write_rows(&mut csv, &rows)?;
    let path = output(cli, &format!("sweep_{axis}.csv"), &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}
