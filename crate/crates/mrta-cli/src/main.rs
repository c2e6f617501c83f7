//! Command-line front end: data collection, experiment runs, and
//! nominal-vs-robust comparisons.
//!
//! Set `MRTA_LOG=info` (or `debug`) for progress logging.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use mrta::allocator::ExecutionMode;
use mrta::gp::GpDataset;
use mrta::scenario::{Scenario, ScenarioError, VerdictThresholds};
use mrta::simulator::{
    collect_training_data, detect_reallocations, first_adoption, fit_models, mode_name, run,
    HullSource, RunLog,
};

#[derive(Parser)]
#[command(
    name = "mrta",
    about = "Adaptive multi-robot task allocation simulator",
    long_about = "Simulates joint task allocation and execution for disturbed robot teams.\n\
                  Scenario files are TOML; see the repository's scenarios/ directory.\n\
                  Set the MRTA_LOG environment variable (error|warn|info|debug) to control\n\
                  log verbosity.",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Nominal,
    Robust,
}

impl From<ModeArg> for ExecutionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nominal => ExecutionMode::Nominal,
            ModeArg::Robust => ExecutionMode::Robust,
        }
    }
}

/// Scenario overrides shared by the run-style commands.
#[derive(clap::Args, Clone, Copy)]
struct Overrides {
    /// Override the scenario's step count.
    #[arg(long)]
    steps: Option<usize>,
    /// Override the scenario's seed (reserved; runs are deterministic).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the disturbance magnitude cap d_max (state units / s).
    #[arg(long)]
    dmax: Option<f64>,
    /// Override the GP confidence multiplier k_c.
    #[arg(long)]
    kc: Option<f64>,
    /// Override the specialization update rate beta1.
    #[arg(long)]
    beta1: Option<f64>,
}

impl Overrides {
    fn apply(&self, scenario: &mut Scenario) {
        if let Some(steps) = self.steps {
            scenario.steps = steps;
        }
        if let Some(seed) = self.seed {
            scenario.seed = seed;
        }
        if let Some(dmax) = self.dmax {
            scenario.gp.estimate.d_max = dmax;
        }
        if let Some(kc) = self.kc {
            scenario.gp.estimate.k_c = kc;
        }
        if let Some(beta1) = self.beta1 {
            scenario.beta1 = beta1;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Drive the data-collection sweep and write per-robot dataset files.
    Collect {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory for robot_<i>.csv dataset files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute one closed-loop run and write its CSV artifacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Execution mode for the constraints and the specialization law.
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Directory with collected datasets (required in robust mode).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory for run artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Also write SVG charts of energy and specializations.
        #[arg(long)]
        plot: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run both modes, emit aligned time series, charts, and a verdict.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Directory with collected datasets; collected on the fly if absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

enum CliError {
    Validation(String),
    Solver(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Solver(m) | CliError::Io(m) => m,
        }
    }
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}

fn load_scenario(path: &Path, overrides: &Overrides) -> Result<Scenario, CliError> {
    let mut scenario = Scenario::load(path).map_err(|e| match e {
        ScenarioError::Io { .. } => CliError::Io(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    })?;
    overrides.apply(&mut scenario);
    Ok(scenario)
}

fn dataset_path(dir: &Path, robot: usize) -> PathBuf {
    dir.join(format!("robot_{robot}.csv"))
}

fn save_datasets(dir: &Path, datasets: &[GpDataset]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err("creating dataset directory", e))?;
    for (i, ds) in datasets.iter().enumerate() {
        ds.save(&dataset_path(dir, i))
            .map_err(|e| CliError::Io(format!("writing dataset for robot {i}: {e}")))?;
    }
    Ok(())
}

fn load_datasets(dir: &Path, num_robots: usize) -> Result<Vec<GpDataset>, CliError> {
    (0..num_robots)
        .map(|i| {
            let path = dataset_path(dir, i);
            GpDataset::load(&path)
                .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))
        })
        .collect()
}

fn cmd_collect(scenario_path: &Path, out: &Path) -> Result<(), CliError> {
    let scenario = load_scenario(scenario_path, &Overrides::default_empty())?;
    info!("collecting training data for {} robots", scenario.num_robots());
    let datasets = collect_training_data(&scenario);
    save_datasets(out, &datasets)?;
    for (i, ds) in datasets.iter().enumerate() {
        println!("robot {i}: {} samples -> {}", ds.len(), dataset_path(out, i).display());
    }
    Ok(())
}

impl Overrides {
    fn default_empty() -> Self {
        Overrides {
            steps: None,
            seed: None,
            dmax: None,
            kc: None,
            beta1: None,
        }
    }
}

/// Build the hull source for a robust run from datasets on disk or memory.
fn learned_hulls(scenario: &Scenario, datasets: &[GpDataset]) -> Result<HullSource, CliError> {
    let models = fit_models(scenario, datasets)
        .map_err(|e| CliError::Validation(format!("GP fitting failed: {e}")))?;
    Ok(HullSource::Learned(models))
}

fn execute(scenario: &Scenario, hulls: &HullSource, out: &Path) -> Result<RunLog, CliError> {
    match run(scenario, hulls) {
        Ok(log) => {
            log.write_csvs(out)
                .map_err(|e| io_err("writing run artifacts", e))?;
            Ok(log)
        }
        Err(failure) => {
            // Keep the partial log around for post-mortems.
            let _ = failure.partial.write_csvs(out);
            Err(CliError::Solver(failure.to_string()))
        }
    }
}

fn spec_toward_assigned(log: &RunLog, robot: usize) -> Vec<(f64, f64)> {
    log.records
        .iter()
        .map(|r| (r.time, r.specializations[(robot, r.assignment[robot])]))
        .collect()
}

fn write_plots(out: &Path, logs: &[(&str, &RunLog)]) -> Result<(), CliError> {
    let energy_series: Vec<plot::Series<'_>> = logs
        .iter()
        .map(|(name, log)| plot::Series {
            name,
            points: log.records.iter().map(|r| (r.time, r.energy)).collect(),
        })
        .collect();
    std::fs::write(
        out.join("energy.svg"),
        plot::line_chart(
            "sum of squared task energies",
            "time (s)",
            "energy (m^4)",
            &energy_series,
        ),
    )
    .map_err(|e| io_err("writing energy.svg", e))?;

    let spec_series: Vec<plot::Series<'_>> = logs
        .iter()
        .map(|(name, log)| plot::Series {
            name,
            points: spec_toward_assigned(log, 0),
        })
        .collect();
    std::fs::write(
        out.join("specializations.svg"),
        plot::line_chart(
            "robot 0 specialization toward its assigned task",
            "time (s)",
            "specialization",
            &spec_series,
        ),
    )
    .map_err(|e| io_err("writing specializations.svg", e))?;
    Ok(())
}

fn cmd_run(
    scenario_path: &Path,
    mode: ModeArg,
    dataset: Option<&Path>,
    out: &Path,
    plot_flag: bool,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let mut scenario = load_scenario(scenario_path, overrides)?;
    scenario.team.mode = mode.into();
    std::fs::create_dir_all(out).map_err(|e| io_err("creating output directory", e))?;

    let hulls = match scenario.team.mode {
        ExecutionMode::Nominal => HullSource::Zero,
        ExecutionMode::Robust => {
            let dir = dataset.ok_or_else(|| {
                CliError::Validation("robust mode requires --dataset <dir>".into())
            })?;
            let datasets = load_datasets(dir, scenario.num_robots())?;
            learned_hulls(&scenario, &datasets)?
        }
    };

    info!("running {} for {} steps", scenario.name, scenario.steps);
    let log = execute(&scenario, &hulls, out)?;
    if plot_flag {
        write_plots(out, &[(mode_name(log.mode), &log)])?;
    }
    println!(
        "{}: {} steps, energy {:.6} -> {:.6}, {} reallocations",
        scenario.name,
        log.records.len(),
        log.initial_energy(),
        log.final_energy(),
        detect_reallocations(&log).len()
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn evaluate_verdict(
    thresholds: &VerdictThresholds,
    nominal: &RunLog,
    robust: &RunLog,
) -> Vec<Check> {
    let mut checks = Vec::new();
    let initial = nominal.initial_energy();
    let ratio = |log: &RunLog| {
        if initial > 0.0 {
            log.final_energy() / initial
        } else {
            0.0
        }
    };

    if let Some(max) = thresholds.robust_energy_max_ratio {
        let r = ratio(robust);
        checks.push(Check {
            name: "robust_energy_convergence",
            passed: r < max,
            detail: format!("final/initial {r:.4} (threshold < {max})"),
        });
    }
    if let Some(min) = thresholds.baseline_energy_min_ratio {
        let r = ratio(nominal);
        checks.push(Check {
            name: "baseline_energy_stall",
            passed: r > min,
            detail: format!("final/initial {r:.4} (threshold > {min})"),
        });
    }
    if let Some(min) = thresholds.robust_final_specialization_min {
        let s = robust.final_assigned_specialization(0).unwrap_or(0.0);
        checks.push(Check {
            name: "robust_specialization_retained",
            passed: s >= min,
            detail: format!("robot 0 final {s:.3} (threshold >= {min})"),
        });
    }
    if let Some(max) = thresholds.baseline_final_specialization_max {
        let s = nominal.final_assigned_specialization(0).unwrap_or(1.0);
        checks.push(Check {
            name: "baseline_specialization_collapse",
            passed: s <= max,
            detail: format!("robot 0 final {s:.3} (threshold <= {max})"),
        });
    }

    let initial_task = nominal.records.first().map(|r| r.assignment[0]);
    let adoption = |log: &RunLog| initial_task.and_then(|j| first_adoption(log, j, 0));
    if thresholds.require_reallocation_transfer == Some(true) {
        let step = adoption(robust);
        checks.push(Check {
            name: "robust_task_transfer",
            passed: step.is_some(),
            detail: match step {
                Some(k) => format!("robot 0's task adopted by a teammate at step {k}"),
                None => "no teammate ever adopted robot 0's task".into(),
            },
        });
    }
    if thresholds.require_robust_not_earlier == Some(true) {
        let (b, r) = (adoption(nominal), adoption(robust));
        let passed = match (b, r) {
            (Some(bs), Some(rs)) => rs >= bs,
            _ => true, // nothing to compare
        };
        checks.push(Check {
            name: "robust_adapts_no_earlier",
            passed,
            detail: format!("baseline adoption {b:?}, robust adoption {r:?}"),
        });
    }
    if let Some(max_gap) = thresholds.max_mode_energy_gap_ratio {
        let gap = nominal
            .records
            .iter()
            .zip(robust.records.iter())
            .map(|(a, b)| (a.energy - b.energy).abs())
            .fold(0.0f64, f64::max);
        let rel = if initial > 0.0 { gap / initial } else { 0.0 };
        checks.push(Check {
            name: "modes_agree_without_disturbance",
            passed: rel < max_gap,
            detail: format!("max energy gap {rel:.4} of initial (threshold < {max_gap})"),
        });
    }
    checks
}

fn write_compare_csv(path: &Path, nominal: &RunLog, robust: &RunLog) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# aligned per-step series from both modes")?;
    writeln!(f, "# energy in m^4; spec0: robot 0 specialization toward its assigned task")?;
    writeln!(
        f,
        "step,time_s,nominal_energy,robust_energy,nominal_spec0,robust_spec0"
    )?;
    for (a, b) in nominal.records.iter().zip(robust.records.iter()) {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            a.step,
            a.time,
            a.energy,
            b.energy,
            a.specializations[(0, a.assignment[0])],
            b.specializations[(0, b.assignment[0])]
        )?;
    }
    Ok(())
}

fn cmd_compare(
    scenario_path: &Path,
    dataset: Option<&Path>,
    out: &Path,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let scenario = load_scenario(scenario_path, overrides)?;
    std::fs::create_dir_all(out).map_err(|e| io_err("creating output directory", e))?;

    let datasets = match dataset {
        Some(dir) => load_datasets(dir, scenario.num_robots())?,
        None => {
            info!("no dataset directory given; collecting on the fly");
            let datasets = collect_training_data(&scenario);
            save_datasets(&out.join("datasets"), &datasets)?;
            datasets
        }
    };
    let hulls = learned_hulls(&scenario, &datasets)?;

    let mut nominal_scenario = scenario.clone();
    nominal_scenario.team.mode = ExecutionMode::Nominal;
    let mut robust_scenario = scenario.clone();
    robust_scenario.team.mode = ExecutionMode::Robust;

    // The two runs are independent; run them concurrently.
    let (nominal, robust) = std::thread::scope(|s| {
        let nominal_handle = s.spawn(|| execute(&nominal_scenario, &HullSource::Zero, &out.join("nominal")));
        let robust_handle = s.spawn(|| execute(&robust_scenario, &hulls, &out.join("robust")));
        (
            nominal_handle.join().expect("nominal run thread"),
            robust_handle.join().expect("robust run thread"),
        )
    });
    let nominal = nominal?;
    let robust = robust?;

    write_compare_csv(&out.join("compare.csv"), &nominal, &robust)
        .map_err(|e| io_err("writing compare.csv", e))?;
    write_plots(out, &[("nominal", &nominal), ("robust", &robust)])?;

    let thresholds = scenario.verdict.clone().unwrap_or_default();
    let checks = evaluate_verdict(&thresholds, &nominal, &robust);
    let mut all_passed = true;
    let mut verdict_text = String::new();
    for check in &checks {
        all_passed &= check.passed;
        let line = format!(
            "check {}: {} ({})",
            check.name,
            if check.passed { "PASS" } else { "FAIL" },
            check.detail
        );
        println!("{line}");
        verdict_text.push_str(&line);
        verdict_text.push('\n');
    }
    let overall = if checks.is_empty() {
        "verdict: PASS (no checks configured)".to_string()
    } else if all_passed {
        "verdict: PASS".to_string()
    } else {
        "verdict: FAIL".to_string()
    };
    println!("{overall}");
    verdict_text.push_str(&overall);
    verdict_text.push('\n');
    std::fs::write(out.join("verdict.txt"), verdict_text)
        .map_err(|e| io_err("writing verdict.txt", e))?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Collect { scenario, out } => cmd_collect(scenario, out),
        Command::Run {
            scenario,
            mode,
            dataset,
            out,
            plot,
            overrides,
        } => cmd_run(scenario, *mode, dataset.as_deref(), out, *plot, overrides),
        Command::Compare {
            scenario,
            dataset,
            out,
            overrides,
        } => cmd_compare(scenario, dataset.as_deref(), out, overrides),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MRTA_LOG")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
