//! Command-line front end: run scenarios, verify trajectory logs against the
//! merging objectives, and exercise the solver self-test.
//!
//! Exit codes: 0 success, 2 scenario/parse problems, 3 safety aborts,
//! 4 numeric aborts, 5 failed verification or self-test.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use c2te_core::cbf::GammaSpec;
use c2te_core::metrics::{
    check_platoon_objectives, check_premerge_objectives, min_gap_timeseries, ObjectiveReport,
    PlatoonTolerances,
};
use c2te_core::scenario::Scenario;
use c2te_core::selftest::{run_qp_selftest, SelftestConfig};
use c2te_core::sim::{exit_code, run, TrajectoryLog};

const EXIT_SCENARIO: u8 = 2;
const EXIT_VERIFY_FAILED: u8 = 5;

#[derive(Parser)]
#[command(name = "c2te", version, about = "Two-stage platoon-merging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write the trajectory log, CSV export, and manifest.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check a trajectory log against every merging objective.
    Verify {
        log: PathBuf,
        scenario: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
        /// Trailing settle window in seconds; defaults to 20% of the run.
        #[arg(long)]
        window: Option<f64>,
        /// Lateral tolerance for the platoon objectives, meters.
        #[arg(long, default_value_t = 0.05)]
        tol_y: f64,
        /// Velocity tolerance, m/s; defaults to 1% of the cruise velocity.
        #[arg(long)]
        tol_v: Option<f64>,
    },
    /// Randomized solver-vs-oracle equivalence report.
    SelftestQp {
        #[arg(short = 'n', long, default_value_t = 10_000)]
        instances: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run several scenarios and summarize their final platoon orderings.
    Batch {
        scenarios: Vec<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct OutputArgs {
    /// Output directory; created if missing.
    #[arg(short = 'o', long = "out", default_value = "out")]
    out: PathBuf,
}

/// Numeric knobs that may be changed without editing the scenario file.
/// The overridden scenario is re-validated before running.
#[derive(Args, Clone)]
struct Overrides {
    /// Integration step, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Simulation horizon, seconds.
    #[arg(long)]
    t_end: Option<f64>,
    /// Stage-switch / platoon spacing bound, meters.
    #[arg(long)]
    rho: Option<f64>,
    /// Slack penalty weight.
    #[arg(long)]
    c: Option<f64>,
    /// Class-K shaping: `identity` or `power:GAIN,EXPONENT`.
    #[arg(long)]
    gamma: Option<String>,
    /// Reserved; recorded in the manifest.
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, scenario: &mut Scenario) -> Result<()> {
        if let Some(dt) = self.dt {
            scenario.dt_s = dt;
        }
        if let Some(t_end) = self.t_end {
            scenario.t_end_s = t_end;
        }
        if let Some(rho) = self.rho {
            scenario.controller.switch_gap_m = Some(rho);
        }
        if let Some(c) = self.c {
            scenario.controller.slack_weight = c;
        }
        if let Some(text) = &self.gamma {
            scenario.controller.gamma = parse_gamma(text)?;
        }
        if let Some(seed) = self.seed {
            scenario.seed = seed;
        }
        Ok(())
    }
}

fn parse_gamma(text: &str) -> Result<GammaSpec> {
    if text == "identity" {
        return Ok(GammaSpec::Identity);
    }
    if let Some(rest) = text.strip_prefix("power:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() == 2 {
            return Ok(GammaSpec::PowerLaw {
                gain: parts[0].parse().context("power-law gain")?,
                exponent: parts[1].parse().context("power-law exponent")?,
            });
        }
    }
    bail!("gamma must be `identity` or `power:GAIN,EXPONENT`, got `{text}`");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("C2TE_LOG")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(EXIT_SCENARIO)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run {
            scenario,
            output,
            overrides,
        } => cmd_run(&scenario, &output.out, &overrides),
        Command::Verify {
            log,
            scenario,
            output,
            window,
            tol_y,
            tol_v,
        } => cmd_verify(&log, &scenario, &output.out, window, tol_y, tol_v),
        Command::SelftestQp {
            instances,
            seed,
            output,
        } => cmd_selftest(instances, seed, &output.out),
        Command::Batch {
            scenarios,
            output,
            overrides,
        } => cmd_batch(&scenarios, &output.out, &overrides),
    }
}

fn load_with_overrides(path: &Path, overrides: &Overrides) -> Result<Scenario> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    let mut scenario: Scenario =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    overrides.apply(&mut scenario)?;
    scenario
        .validate()
        .with_context(|| format!("validating {}", path.display()))?;
    Ok(scenario)
}

#[derive(serde::Serialize)]
struct RunManifest<'a> {
    version: &'static str,
    scenario: &'a str,
    n_vehicles: usize,
    dt_s: f64,
    t_end_s: f64,
    seed: u64,
    sensing_radius_m: f64,
    safe_radius_m: f64,
    switch_gap_m: f64,
    slack_weight: f64,
    gamma: &'a GammaSpec,
    cruise_v_mps: f64,
    records: usize,
    aborted: bool,
    wall_time_s: f64,
    outputs: [&'static str; 2],
}

fn write_run_outputs(scenario: &Scenario, scenario_name: &str, out: &Path) -> Result<TrajectoryLog> {
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let log = run(scenario);
    let wall = start.elapsed().as_secs_f64();

    let jsonl = fs::File::create(out.join("trajectory.jsonl"))?;
    log.write_jsonl(std::io::BufWriter::new(jsonl))?;
    let csv = fs::File::create(out.join("trajectory.csv"))?;
    log.write_csv(std::io::BufWriter::new(csv))?;

    let sensing = scenario.sensing();
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        scenario: scenario_name,
        n_vehicles: scenario.vehicles.len(),
        dt_s: scenario.dt_s,
        t_end_s: scenario.t_end_s,
        seed: scenario.seed,
        sensing_radius_m: sensing.sensing_radius,
        safe_radius_m: sensing.safe_radius,
        switch_gap_m: sensing.switch_gap,
        slack_weight: scenario.controller.slack_weight,
        gamma: &scenario.controller.gamma,
        cruise_v_mps: scenario.target0.v_mps,
        records: log.records.len(),
        aborted: log.abort.is_some(),
        wall_time_s: wall,
        outputs: ["trajectory.jsonl", "trajectory.csv"],
    };
    fs::write(
        out.join("run-manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    if let Some(abort) = &log.abort {
        eprintln!("run aborted at t = {} s: {}", abort.t_s, abort.message);
    }
    Ok(log)
}

fn cmd_run(scenario_path: &Path, out: &Path, overrides: &Overrides) -> Result<u8> {
    let scenario = load_with_overrides(scenario_path, overrides)?;
    let log = write_run_outputs(&scenario, &scenario_path.display().to_string(), out)?;
    Ok(exit_code(&log) as u8)
}

#[derive(serde::Serialize)]
struct VerifyReport {
    premerge: ObjectiveReport,
    platoon: ObjectiveReport,
    all_pass: bool,
    settle_window_s: f64,
    tolerances: PlatoonTolerances,
    /// Minimum pairwise gap per record; null when fewer than two normal
    /// vehicles exist.
    min_gap_series: Vec<(f64, Option<f64>)>,
}

fn cmd_verify(
    log_path: &Path,
    scenario_path: &Path,
    out: &Path,
    window: Option<f64>,
    tol_y: f64,
    tol_v: Option<f64>,
) -> Result<u8> {
    let scenario = load_with_overrides(scenario_path, &Overrides::default_empty())?;
    let text =
        fs::read_to_string(log_path).with_context(|| format!("reading {}", log_path.display()))?;
    let log = TrajectoryLog::from_jsonl(&text)
        .with_context(|| format!("parsing {}", log_path.display()))?;

    check_log_matches_scenario(&log, &scenario)?;

    let span = log
        .records
        .last()
        .map(|r| r.t_s - log.records[0].t_s)
        .unwrap_or(0.0);
    let settle_window = window.unwrap_or(0.2 * span);
    let tolerances = PlatoonTolerances {
        lateral: tol_y,
        velocity: tol_v.unwrap_or(0.01 * scenario.target0.v_mps),
        gap_margin: 0.0,
        safety: 1e-9,
    };
    let premerge = check_premerge_objectives(&log, &scenario.sensing(), 1e-9);
    let platoon =
        check_platoon_objectives(&log, &scenario.controller_params(), settle_window, &tolerances);
    let all_pass = premerge.all_pass && platoon.all_pass && log.abort.is_none();

    let report = VerifyReport {
        all_pass,
        settle_window_s: settle_window,
        tolerances,
        min_gap_series: min_gap_timeseries(&log)
            .into_iter()
            .map(|(t, gap)| (t, gap.is_finite().then_some(gap)))
            .collect(),
        premerge,
        platoon,
    };
    fs::create_dir_all(out)?;
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    for objective in report
        .premerge
        .objectives
        .iter()
        .chain(&report.platoon.objectives)
    {
        println!(
            "{}: {} — {}",
            objective.name,
            if objective.pass { "pass" } else { "FAIL" },
            objective.detail
        );
    }
    Ok(if all_pass { 0 } else { EXIT_VERIFY_FAILED })
}

impl Overrides {
    fn default_empty() -> Self {
        Overrides {
            dt: None,
            t_end: None,
            rho: None,
            c: None,
            gamma: None,
            seed: None,
        }
    }
}

/// The log must have been produced by the given scenario: same fleet at the
/// same initial poses and the same target start.
fn check_log_matches_scenario(log: &TrajectoryLog, scenario: &Scenario) -> Result<()> {
    let first = match log.records.first() {
        Some(first) => first,
        None => bail!("log holds no records"),
    };
    if first.vehicles.len() != scenario.vehicles.len() {
        bail!(
            "log starts with {} vehicles but the scenario declares {}",
            first.vehicles.len(),
            scenario.vehicles.len()
        );
    }
    for spec in &scenario.vehicles {
        let logged = first
            .vehicles
            .iter()
            .find(|v| v.id == spec.id)
            .with_context(|| format!("vehicle {} missing from the log", spec.id))?;
        if (logged.x_m - spec.x_m).abs() > 1e-9 || (logged.y_m - spec.y_m).abs() > 1e-9 {
            bail!(
                "vehicle {} starts at ({}, {}) in the log but ({}, {}) in the scenario",
                spec.id,
                logged.x_m,
                logged.y_m,
                spec.x_m,
                spec.y_m
            );
        }
    }
    if (first.target.x_m - scenario.target0.x_m).abs() > 1e-9
        || (first.target.y_m - scenario.target0.y_m).abs() > 1e-9
    {
        bail!("log target start does not match the scenario");
    }
    Ok(())
}

fn cmd_selftest(instances: usize, seed: u64, out: &Path) -> Result<u8> {
    if instances == 0 {
        bail!("need at least one instance");
    }
    let config = SelftestConfig {
        instances,
        seed,
        ..SelftestConfig::default()
    };
    let report = run_qp_selftest(&config);
    fs::create_dir_all(out)?;
    fs::write(
        out.join("qp-selftest.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "{} instances: max u deviation {:.3e}, max objective deviation {:.3e}, {} failures",
        report.instances_run, report.max_u_deviation, report.max_objective_deviation,
        report.failures
    );
    Ok(if report.pass { 0 } else { EXIT_VERIFY_FAILED })
}

#[derive(serde::Serialize)]
struct BatchEntry {
    scenario: String,
    exit_code: i32,
    final_ordering: Option<Vec<u32>>,
}

fn cmd_batch(scenarios: &[PathBuf], out: &Path, overrides: &Overrides) -> Result<u8> {
    if scenarios.is_empty() {
        bail!("batch needs at least one scenario");
    }
    let mut entries = Vec::new();
    let mut orderings = std::collections::BTreeSet::new();
    let mut worst: u8 = 0;
    for path in scenarios {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        let scenario = load_with_overrides(path, overrides)?;
        let log = write_run_outputs(&scenario, &path.display().to_string(), &out.join(&stem))?;
        let code = exit_code(&log);
        worst = worst.max(code as u8);
        let final_ordering = log
            .records
            .last()
            .and_then(|r| c2te_core::extract_ordering(r).ok());
        if let Some(ordering) = &final_ordering {
            orderings.insert(ordering.clone());
        }
        entries.push(BatchEntry {
            scenario: path.display().to_string(),
            exit_code: code,
            final_ordering,
        });
    }
    let summary = serde_json::json!({
        "runs": entries,
        "distinct_final_orderings": orderings.len(),
        "orderings": orderings.iter().collect::<Vec<_>>(),
    });
    fs::create_dir_all(out)?;
    fs::write(
        out.join("batch-summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "{} runs, {} distinct final orderings",
        entries.len(),
        orderings.len()
    );
    Ok(worst)
}
