//! powerbench: run power-attribution validation scenarios, calibrate
//! model constants, and render reports.
//!
//! Exit codes are stable: 0 success, 2 configuration error, 3 runtime
//! invariant breach, 4 infeasible calibration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use powerbench_core::calibrate::{calibrate, CalibrationTargets};
use powerbench_core::error::Error;
use powerbench_core::report::{
    emit_cv_table, emit_manifest, emit_report, load_report, ReportBundle,
};
use powerbench_core::scenario::ScenarioConfig;
use powerbench_core::telemetry::{dump_power_csv, dump_usage_csv};
use powerbench_core::valframe::{run_test, RunArtifacts, TestKind, TestReport, REPORT_VERSION};

#[derive(Parser)]
#[command(name = "powerbench", version, about = "Container power attribution validation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run validation tests from a scenario file.
    Run {
        /// Scenario JSON path.
        scenario: PathBuf,
        /// Comma-separated subset of t1,t2-pkg,t2-dram,t3,inactive or "all".
        #[arg(long, default_value = "all")]
        tests: String,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for reports.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write raw per-tick power/usage sample CSVs.
        #[arg(long)]
        dump_raw: bool,
    },
    /// Solve model constants against target bands and write a scenario.
    Calibrate {
        /// Calibration targets JSON path.
        targets: PathBuf,
        /// Where to write the calibrated scenario.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render CSV/SVG artifacts and the CV table from report JSONs.
    Report {
        /// Directory containing `<test>.json` reports.
        dir: PathBuf,
    },
    /// List scenario files in a directory.
    ListScenarios {
        #[arg(default_value = "scenarios")]
        dir: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Calibration(_) => 4,
        Error::Invariant(_) | Error::BaselineRejected(_) | Error::DataQuality(_) => 3,
        _ => 2,
    }
}

fn parse_tests(spec: &str) -> Result<Vec<TestKind>, Error> {
    if spec == "all" {
        return Ok(TestKind::all().to_vec());
    }
    spec.split(',').map(|s| TestKind::parse(s.trim())).collect()
}

fn summary_line(report: &TestReport) -> String {
    let first = report.steps.first();
    let last = report.steps.last();
    match (first, last) {
        (Some(a), Some(b)) => format!(
            "{}: {} steps | oracle pkg {:.3}->{:.3} W | kepler pkg {:.3}->{:.3} W | \
             resource-centric pkg {:.3}->{:.3} W | internal invariants {}",
            report.test_id,
            report.steps.len(),
            a.oracle_pkg_w,
            b.oracle_pkg_w,
            a.kepler.dyn_pkg_w,
            b.kepler.dyn_pkg_w,
            a.resource_centric.dyn_pkg_w,
            b.resource_centric.dyn_pkg_w,
            if report.overall_pass { "held" } else { "BREACHED" },
        ),
        _ => format!("{}: empty report", report.test_id),
    }
}

fn cmd_run(
    scenario_path: &Path,
    tests: &str,
    seed: Option<u64>,
    out: &Path,
    dump_raw: bool,
) -> Result<(), Error> {
    let mut scenario = ScenarioConfig::load(scenario_path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let kinds = parse_tests(tests)?;
    std::fs::create_dir_all(out)?;

    let mut files: Vec<String> = Vec::new();
    let mut reports: Vec<TestReport> = Vec::new();
    for kind in kinds {
        let RunArtifacts { report, raw_power, raw_usage } = run_test(&scenario, kind, dump_raw)?;
        println!("{}", summary_line(&report));
        for path in emit_report(&report, out)? {
            files.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
        if dump_raw {
            let base = report.test_id.replace('-', "_");
            let power_path = out.join(format!("{base}_raw_power.csv"));
            let usage_path = out.join(format!("{base}_raw_usage.csv"));
            let mut power_file = std::fs::File::create(&power_path)?;
            dump_power_csv(&mut power_file, &raw_power)?;
            let mut usage_file = std::fs::File::create(&usage_path)?;
            dump_usage_csv(&mut usage_file, &raw_usage)?;
            files.push(power_path.file_name().unwrap().to_string_lossy().into_owned());
            files.push(usage_path.file_name().unwrap().to_string_lossy().into_owned());
        }
        reports.push(report);
    }

    for path in emit_cv_table(&reports, out)? {
        files.push(path.file_name().unwrap().to_string_lossy().into_owned());
    }
    files.sort();
    let bundle = ReportBundle {
        report_version: REPORT_VERSION,
        scenario_name: scenario.name.clone(),
        scenario_hash: scenario.content_hash(),
        seed: scenario.seed,
        files,
    };
    emit_manifest(&bundle, out)?;
    println!(
        "wrote {} files to {} (scenario {}, seed {})",
        bundle.files.len() + 1,
        out.display(),
        bundle.scenario_hash,
        scenario.seed
    );
    Ok(())
}

fn cmd_calibrate(targets_path: &Path, out: &Path) -> Result<(), Error> {
    let targets = CalibrationTargets::load(targets_path)?;
    let scenario = calibrate(&targets)?;
    scenario.save(out)?;
    println!("calibration feasible; wrote {}", out.display());
    for (key, (value, band)) in &scenario.calibration.achieved {
        println!("  {key} = {value:.4}  [{band}]");
    }
    Ok(())
}

fn cmd_report(dir: &Path) -> Result<(), Error> {
    let mut reports: Vec<TestReport> = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    entries.sort();
    for path in entries {
        match load_report(&path) {
            Ok(report) => {
                emit_report(&report, dir)?;
                println!("re-rendered {}", report.test_id);
                reports.push(report);
            }
            Err(_) => continue, // not a test report; leave it alone
        }
    }
    if reports.is_empty() {
        return Err(Error::Configuration(format!(
            "no test reports found in {}",
            dir.display()
        )));
    }
    emit_cv_table(&reports, dir)?;
    Ok(())
}

fn cmd_list_scenarios(dir: &Path) -> Result<(), Error> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Configuration(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    let mut found = 0;
    for path in entries {
        if let Ok(s) = ScenarioConfig::load(&path) {
            println!(
                "{:<28} seed={:<6} {}",
                path.file_name().unwrap().to_string_lossy(),
                s.seed,
                s.description
            );
            found += 1;
        }
    }
    if found == 0 {
        println!("no scenarios in {}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, tests, seed, out, dump_raw } => {
            cmd_run(scenario, tests, *seed, out, *dump_raw)
        }
        Command::Calibrate { targets, out } => cmd_calibrate(targets, out),
        Command::Report { dir } => cmd_report(dir),
        Command::ListScenarios { dir } => cmd_list_scenarios(dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
