use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rovdock::batch::{run_batch, summarize, write_csv};
use rovdock::config::{load_config, ScenarioFile};
use rovdock::error::{HarnessError, Result};
use rovdock::layout_doc::{default_layout, load_layout_file};
use rovdock::log::{log_result, read_log_file, run_logged, write_file};
use rovdock::plot::plot_svg;
use rovdock::replay::replay;
use rovdock_core::geometry::Pose;
use rovdock_core::layout::{
    compare_bit_patterns, coverage_map, frontal_approach_path, peak_coverage, survey_path,
};
use rovdock_core::scenario::{Approach, ScenarioConfig, SiteProfile, TrialResult};
use rovdock_core::sensors::camera::CameraModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ApproachArg {
    Front,
    Left,
    Right,
}

impl From<ApproachArg> for Approach {
    fn from(a: ApproachArg) -> Self {
        match a {
            ApproachArg::Front => Approach::Front,
            ApproachArg::Left => Approach::Left,
            ApproachArg::Right => Approach::Right,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rovdock", version, about = "ROV docking simulator harness")]
struct Cli {
    /// Scenario file (TOML). Defaults to the deep-site profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed, or base seed for `batch`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    approach: Option<ApproachArg>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "jsonl")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trial.
    Run,
    /// Run seeds × approaches trials in parallel.
    Batch {
        /// Trials per approach; overrides the scenario file.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Summarise finished trials from their logs.
    Analyze {
        /// Log files or directories of `.jsonl` logs.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Validate a layout document and print its coverage along a survey
    /// of the station.
    LayoutCheck {
        /// Layout document; defaults to the scenario's layout.
        #[arg(long)]
        layout: Option<PathBuf>,
        /// Survey clearance from the station faces, m.
        #[arg(long, default_value_t = 1.2)]
        clearance: f64,
    },
    /// Compare marker sizes and bit densities along a frontal approach.
    /// Uses the clear-water camera unless `--config` is given.
    Bitpattern {
        #[arg(long, value_delimiter = ',', default_value = "0.22")]
        sizes: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "4,5,6,7")]
        densities: Vec<u8>,
    },
    /// Re-run a logged trial and compare.
    Replay { log: PathBuf },
    /// Render a logged trial as SVG.
    Plot { log: PathBuf },
}

fn scenario(cli: &Cli) -> Result<ScenarioFile> {
    match &cli.config {
        Some(p) => load_config(p),
        None => {
            let mut cfg = ScenarioConfig::for_profile(SiteProfile::Deep90m);
            cfg.layout = default_layout();
            Ok(ScenarioFile::new(cfg))
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn trial_name(r: &TrialResult) -> String {
    format!("{}_{:04}", r.approach.name(), r.seed)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_results_csv(path: &Path, results: &[TrialResult]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(results, &mut buf)?;
    write_file(path, &buf)
}

fn status(all_ok: bool) -> ExitCode {
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_run(cli: &Cli) -> Result<ExitCode> {
    let file = scenario(cli)?;
    let mut cfg = file.scenario;
    if let Some(a) = cli.approach {
        cfg = cfg.with_approach(a.into());
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    let (result, log) = run_logged(&cfg, seed)?;
    let dir = out_dir(cli);
    let name = trial_name(&result);
    match cli.format {
        Format::Jsonl => write_file(&dir.join(format!("{name}.jsonl")), &log)?,
        Format::Csv => write_results_csv(
            &dir.join(format!("{name}.csv")),
            std::slice::from_ref(&result),
        )?,
    }
    print_json(&result)?;
    Ok(status(result.success))
}

fn cmd_batch(cli: &Cli, seeds: Option<usize>) -> Result<ExitCode> {
    let file = scenario(cli)?;
    let approaches: Vec<Approach> = match cli.approach {
        Some(a) => vec![a.into()],
        None => file.batch.approaches.clone(),
    };
    let base = cli.seed.unwrap_or(file.batch.base_seed);
    let n = seeds.unwrap_or(file.batch.seeds);
    if n == 0 {
        return Err(HarnessError::Config("seeds must be at least 1".into()));
    }
    let out = run_batch(&file.scenario, &approaches, base, n)?;
    let dir = out_dir(cli);
    match cli.format {
        Format::Jsonl => {
            for (r, log) in out.results.iter().zip(&out.logs) {
                write_file(
                    &dir.join("logs").join(format!("{}.jsonl", trial_name(r))),
                    log,
                )?;
            }
        }
        Format::Csv => write_results_csv(&dir.join("results.csv"), &out.results)?,
    }
    let summary = serde_json::to_vec_pretty(&out.summary)?;
    write_file(&dir.join("summary.json"), &summary)?;
    print_json(&out.summary)?;
    Ok(status(out.summary.successes == out.summary.trials))
}

fn collect_logs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| HarnessError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn cmd_analyze(cli: &Cli, logs: &[PathBuf]) -> Result<ExitCode> {
    let mut results = Vec::new();
    for f in collect_logs(logs)? {
        let records = read_log_file(&f)?;
        let r = log_result(&records).ok_or_else(|| HarnessError::Log {
            line: records.len(),
            message: format!("{} has no result record", f.display()),
        })?;
        results.push(r.clone());
    }
    let summary = summarize(&results);
    if cli.format == Format::Csv {
        write_csv(&results, std::io::stdout())?;
    } else {
        print_json(&summary)?;
    }
    Ok(status(summary.successes == summary.trials))
}

fn cmd_layout_check(cli: &Cli, layout: Option<&Path>, clearance: f64) -> Result<ExitCode> {
    let (layout, cam) = match layout {
        Some(p) => (load_layout_file(p)?, scenario(cli)?.scenario.camera),
        None => {
            let s = scenario(cli)?.scenario;
            (s.layout, s.camera)
        }
    };
    layout.validate()?;
    let survey = survey_path(&layout.station, clearance, 40);
    let poses: Vec<Pose> = survey.iter().map(|(_, p)| *p).collect();
    let counts = coverage_map(&poses, &layout, &cam, &[]);
    let mut text = String::from("index,face,x,y,detections\n");
    for (i, ((face, pose), c)) in survey.iter().zip(&counts).enumerate() {
        text.push_str(&format!(
            "{i},{face:?},{:.3},{:.3},{c}\n",
            pose.position.x, pose.position.y
        ));
    }
    if let Some(dir) = &cli.out {
        write_file(&dir.join("coverage.csv"), text.as_bytes())?;
    } else {
        print!("{text}");
    }
    if let Some((peak, at)) = peak_coverage(&counts) {
        eprintln!(
            "layout ok: {} tags, peak {peak} detections at survey index {at}",
            layout.tags.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bitpattern(cli: &Cli, sizes: &[f64], densities: &[u8]) -> Result<ExitCode> {
    if let Some(d) = densities.iter().find(|d| !(4..=7).contains(*d)) {
        return Err(HarnessError::Config(format!("density {d} outside 4..=7")));
    }
    let cam = match cli.config {
        Some(_) => scenario(cli)?.scenario.camera,
        None => CameraModel::default(),
    };
    let path = frontal_approach_path(12.0, 0.5, 400, 0.8);
    let report = compare_bit_patterns(sizes, densities, &cam, &path);
    match &cli.out {
        Some(dir) => write_file(
            &dir.join("bitpattern.json"),
            &serde_json::to_vec_pretty(&report)?,
        )?,
        None => print_json(&report)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(log: &Path) -> Result<ExitCode> {
    let records = read_log_file(log)?;
    let report = replay(&records)?;
    println!(
        "steps compared: {}, max divergence: {:e}, identical: {}",
        report.steps_compared, report.max_divergence, report.identical
    );
    Ok(status(report.identical))
}

fn cmd_plot(cli: &Cli, log: &Path) -> Result<ExitCode> {
    let records = read_log_file(log)?;
    let svg = plot_svg(&records)?;
    let stem = log.file_stem().and_then(|s| s.to_str()).unwrap_or("trial");
    let path = out_dir(cli).join(format!("{stem}.svg"));
    write_file(&path, svg.as_bytes())?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run => cmd_run(&cli),
        Command::Batch { seeds } => cmd_batch(&cli, *seeds),
        Command::Analyze { logs } => cmd_analyze(&cli, logs),
        Command::LayoutCheck { layout, clearance } => {
            cmd_layout_check(&cli, layout.as_deref(), *clearance)
        }
        Command::Bitpattern { sizes, densities } => cmd_bitpattern(&cli, sizes, densities),
        Command::Replay { log } => cmd_replay(log),
        Command::Plot { log } => cmd_plot(&cli, log),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
