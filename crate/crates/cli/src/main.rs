//! `stylepredict` command line: simulate, analyze, evaluate, calibrate.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use stylepredict::centrality::write_series_csv;
use stylepredict::config::{AnalysisConfig, ConfigFile, ThresholdsFile};
use stylepredict::evaluation::{evaluate_run, AnnotationSet, Predictions};
use stylepredict::ingest::parse_trajectories;
use stylepredict::pipeline::{analyze, calibrate, RunReport};
use stylepredict::sim::presets;
use stylepredict::sim::{run_scenario, write_labels, ScenarioConfig};

/// Frame rate assumed for trajectory files when neither the flag nor the
/// config file provides one; matches the simulator's default timestep.
const DEFAULT_FRAME_RATE_HZ: f64 = 10.0;
/// Runs generated per preset name during calibration.
const DEFAULT_CALIBRATION_RUNS: u64 = 8;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nreport schema ",
    "1.0",
    "\nthresholds file: thresholds, conservative_agents, percentile",
    "\ntrajectory csv: timestamp,agent_id,agent_type,x,y[,vx,vy]",
    "\nlabels csv: [video_id,]agent_id,style,[annotator_id,]start_frame,end_frame",
);

#[derive(Parser)]
#[command(name = "stylepredict", version = LONG_VERSION, about = "Driving-style inference from multi-agent trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a highway scenario and write trajectories and ground-truth labels.
    Simulate(SimulateArgs),
    /// Run the centrality pipeline over a trajectory file.
    Analyze(AnalyzeArgs),
    /// Score reports against labels with the temporal deviation error.
    Evaluate(EvaluateArgs),
    /// Derive classification thresholds from simulated conservative traffic.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML file or preset name (see `--list-presets`).
    #[arg(long, required_unless_present = "list_presets")]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives trajectories.csv, labels.csv and events.json.
    #[arg(long, required_unless_present = "list_presets")]
    out: Option<PathBuf>,
    #[arg(long)]
    list_presets: bool,
}

#[derive(Args, Clone, Default)]
struct AnalysisFlags {
    /// TOML run configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Thresholds file written by `calibrate`.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Squared-distance edge threshold, m^2.
    #[arg(long)]
    mu: Option<f64>,
    /// Window length, s.
    #[arg(long)]
    window: Option<f64>,
    /// Window stride, s.
    #[arg(long)]
    stride: Option<f64>,
    /// Sharpness ball radius, s.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    trajectories: PathBuf,
    #[command(flatten)]
    analysis: AnalysisFlags,
    #[arg(long)]
    frame_rate: Option<f64>,
    /// Video identifier stored in the report; defaults to the file stem.
    #[arg(long)]
    video_id: Option<String>,
    /// Output directory; receives report.json and centrality.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Report JSON; repeat to evaluate several runs, paired with `--labels`.
    #[arg(long, required = true)]
    report: Vec<PathBuf>,
    /// Label CSV for the report at the same position.
    #[arg(long, required = true)]
    labels: Vec<PathBuf>,
    /// Output directory; receives tde.csv and tde.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Scenario TOML files or preset names; the bundled mixed-traffic set
    /// when absent.
    #[arg(long)]
    scenario: Vec<String>,
    /// First seed for preset scenarios.
    #[arg(long)]
    seed: Option<u64>,
    /// Seeds per preset scenario.
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_RUNS)]
    runs: u64,
    #[command(flatten)]
    analysis: AnalysisFlags,
    /// Thresholds TOML to write.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let internal = e.chain().any(|c| c.downcast_ref::<stylepredict::Error>().is_some_and(|e| e.is_internal()));
            ExitCode::from(if internal { 2 } else { 1 })
        }
    }
}

const PRESETS: [&str; 6] = ["overspeeding", "overtaking", "sudden-lane-change", "weaving", "mixed", "all-conservative"];

fn preset(name: &str, seed: u64) -> Option<ScenarioConfig> {
    Some(match name {
        "overspeeding" => presets::overspeeding(seed),
        "overtaking" => presets::overtaking(seed),
        "sudden-lane-change" => presets::sudden_lane_change(seed),
        "weaving" => presets::weaving(seed),
        "mixed" => presets::mixed(seed),
        "all-conservative" => presets::all_conservative(seed),
        _ => return None,
    })
}

/// A scenario file when `spec` names an existing path, else a preset.
fn load_scenario(spec: &str, seed: Option<u64>) -> anyhow::Result<ScenarioConfig> {
    let path = Path::new(spec);
    let mut cfg = if path.exists() {
        ScenarioConfig::load(path).with_context(|| format!("scenario `{}`", path.display()))?
    } else if let Some(cfg) = preset(spec, seed.unwrap_or(0)) {
        cfg
    } else {
        bail!("scenario `{spec}` is neither a readable file nor a preset ({})", PRESETS.join(", "));
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory `{}`", dir.display()))
}

fn create_file(path: &Path) -> anyhow::Result<File> {
    File::create(path).with_context(|| format!("cannot write `{}`", path.display()))
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    if a.list_presets {
        for p in PRESETS {
            println!("{p}");
        }
        return Ok(());
    }
    let (Some(spec), Some(out)) = (a.scenario, a.out) else {
        bail!("`--scenario` and `--out` are required");
    };
    let cfg = load_scenario(&spec, a.seed)?;
    let run = run_scenario(&cfg).context("simulation")?;
    create_dir(&out)?;
    run.table.write_csv(create_file(&out.join("trajectories.csv"))?)?;
    write_labels(&run.labels, create_file(&out.join("labels.csv"))?)?;
    fs::write(out.join("events.json"), serde_json::to_string_pretty(&run.events)?)?;
    info!("simulated {} frames, {} labels, {} events", cfg.frame_count(), run.labels.len(), run.events.len());
    Ok(())
}

/// Config file values overridden by flags.
fn analysis_config(flags: &AnalysisFlags) -> anyhow::Result<(AnalysisConfig, Option<f64>)> {
    let file = match &flags.config {
        Some(p) => ConfigFile::load(p).with_context(|| format!("config `{}`", p.display()))?,
        None => ConfigFile::default(),
    };
    let mut cfg = file.analysis;
    if let Some(p) = &flags.thresholds {
        let text = fs::read_to_string(p).with_context(|| format!("cannot read thresholds `{}`", p.display()))?;
        cfg.thresholds = ThresholdsFile::from_toml_str(&text).with_context(|| format!("thresholds `{}`", p.display()))?.thresholds;
    }
    if let Some(v) = flags.mu {
        cfg.mu = v;
    }
    if let Some(v) = flags.window {
        cfg.window_s = v;
    }
    if let Some(v) = flags.stride {
        cfg.stride_s = Some(v);
    }
    if let Some(v) = flags.epsilon {
        cfg.epsilon = v;
    }
    cfg.validate().context("analysis configuration")?;
    Ok((cfg, file.frame_rate_hz))
}

fn cmd_analyze(a: AnalyzeArgs) -> anyhow::Result<()> {
    let (cfg, file_rate) = analysis_config(&a.analysis)?;
    let rate = a.frame_rate.or(file_rate).unwrap_or(DEFAULT_FRAME_RATE_HZ);
    let source = File::open(&a.trajectories).with_context(|| format!("cannot open trajectories `{}`", a.trajectories.display()))?;
    let table = parse_trajectories(source, rate).with_context(|| format!("ingest `{}`", a.trajectories.display()))?;
    let video_id = a.video_id.unwrap_or_else(|| {
        a.trajectories.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let (report, series) = analyze(&table, &cfg, &video_id).context("analysis")?;
    create_dir(&a.out)?;
    fs::write(a.out.join("report.json"), report.to_json()?)?;
    write_series_csv(&series, create_file(&a.out.join("centrality.csv"))?)?;
    info!("analysed {} agents", report.agents.len());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    if a.report.len() != a.labels.len() {
        bail!("got {} reports but {} label files; pass them in pairs", a.report.len(), a.labels.len());
    }
    let mut predictions = Predictions::new();
    let mut labels = AnnotationSet::default();
    let mut rate = None;
    for (rp, lp) in a.report.iter().zip(&a.labels) {
        let text = fs::read_to_string(rp).with_context(|| format!("cannot read report `{}`", rp.display()))?;
        let report = RunReport::from_json(&text).with_context(|| format!("report `{}`", rp.display()))?;
        match rate {
            None => rate = Some(report.frame_rate_hz),
            Some(r) if r != report.frame_rate_hz => {
                bail!("report `{}` has frame rate {} but earlier reports use {r}", rp.display(), report.frame_rate_hz)
            }
            Some(_) => {}
        }
        predictions.extend(report.predictions());
        let source = File::open(lp).with_context(|| format!("cannot open labels `{}`", lp.display()))?;
        let set = AnnotationSet::read_csv(source, &report.video_id).with_context(|| format!("labels `{}`", lp.display()))?;
        for (key, intervals) in set.entries {
            for iv in intervals {
                labels.insert(key.clone(), iv)?;
            }
        }
    }
    if labels.is_empty() {
        warn!("no labels to evaluate; writing an empty table");
    }
    let table = evaluate_run(&predictions, &labels, rate.unwrap_or(DEFAULT_FRAME_RATE_HZ))?;
    if table.missing_total() > 0 {
        warn!("{} labelled maneuvers have no prediction", table.missing_total());
    }
    create_dir(&a.out)?;
    table.write_csv(create_file(&a.out.join("tde.csv"))?)?;
    fs::write(a.out.join("tde.json"), serde_json::to_string_pretty(&table)?)?;
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> anyhow::Result<()> {
    let (cfg, _) = analysis_config(&a.analysis)?;
    let scenarios: Vec<ScenarioConfig> = if a.scenario.is_empty() {
        presets::calibration_set().into_iter().map(|(_, c)| c).collect()
    } else {
        let mut out = Vec::new();
        for spec in &a.scenario {
            if Path::new(spec).exists() {
                out.push(load_scenario(spec, a.seed)?);
            } else {
                let first = a.seed.unwrap_or(0);
                for seed in first..first + a.runs {
                    out.push(load_scenario(spec, Some(seed))?);
                }
            }
        }
        out
    };
    let file = calibrate(&scenarios, &cfg).context("calibration")?;
    fs::write(&a.out, file.to_toml_string()).with_context(|| format!("cannot write `{}`", a.out.display()))?;
    info!("thresholds from {} conservative agents", file.conservative_agents);
    Ok(())
}
