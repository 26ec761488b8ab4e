mod manifest;
mod plotdata;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gripforge_core::cmaes::TraceRecord;
use gripforge_core::config::Config;
use gripforge_core::metrics::{self, MetricReport, Summary};
use gripforge_core::refiner::{refine_sequence, WindowReport};
use gripforge_core::scenario::{corrupt, export_contacts, synthesize_demo, CorruptionSpec, Scenario, Task, Trajectory};
use serde::Serialize;

use manifest::{sibling, RunManifest};
use plotdata::InputKind;

/// Physics-based refinement of hand-object demonstrations.
#[derive(Parser)]
#[command(name = "gripforge", version)]
struct Cli {
    /// TOML configuration; command-line flags take precedence.
    #[arg(long, global = true, env = "GRIPFORGE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record a scripted demonstration, optionally corrupted.
    Synth(SynthArgs),
    /// Refine a scenario's hand trajectory in simulation.
    Refine(RefineArgs),
    /// Compare a scenario (or a directory of them) with a reference.
    Eval(EvalArgs),
    /// Turn a trace, window-report stream or contact CSV into plot columns.
    Plotdata(PlotArgs),
}

/// Writes `<out>` and `<out stem>.manifest.json`.
#[derive(Args)]
struct SynthArgs {
    /// grasp_lift or press_stabilize
    #[arg(long)]
    task: Task,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// kind:magnitude[:from-to], may be repeated
    #[arg(long)]
    corrupt: Vec<CorruptionSpec>,
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
}

/// Writes `<out>`, `<stem>.contacts.csv`, `<stem>.windows.jsonl`,
/// `<stem>.manifest.json` and the optional trace.
#[derive(Args)]
struct RefineArgs {
    input: PathBuf,
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
    /// Loss weight override key=value, may be repeated
    #[arg(long)]
    weight: Vec<String>,
    /// CMA-ES generations per window; 0 replays the keyframes unchanged
    #[arg(long)]
    budget: Option<usize>,
    /// Frames between keyframes
    #[arg(long)]
    interval: Option<usize>,
    /// Optimizer seed
    #[arg(long)]
    seed: Option<u64>,
    /// Threads for candidate evaluation; results do not depend on it
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Per-generation optimizer trace, one JSON object per line
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Prints CSV rows on stdout; `-o` also writes the JSON report and
/// `<stem>.manifest.json`.
#[derive(Args)]
struct EvalArgs {
    /// Scenario file or directory of `.scn` files
    sim: PathBuf,
    /// Reference scenario, or a directory holding files of the same names
    reference: PathBuf,
    /// Evaluate a fresh replay of the controls instead of the stored frames
    #[arg(long)]
    replay: bool,
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
}

/// Writes `<out>` and `<out stem>.manifest.json`.
#[derive(Args)]
struct PlotArgs {
    input: PathBuf,
    /// Input kind; guessed from the file name when absent
    #[arg(long, value_enum)]
    kind: Option<InputKind>,
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn synth(args: &SynthArgs, config: &Config) -> Result<RunManifest> {
    let mut scenario = synthesize_demo(args.task, args.seed)?;
    for spec in &args.corrupt {
        scenario = corrupt(&scenario, spec)?;
    }
    scenario.save(&args.output)?;
    let mut m = RunManifest::new("synth", config);
    m.seed = Some(args.seed);
    m.outputs.push(args.output.clone());
    Ok(m)
}

#[derive(Serialize)]
struct TraceLine<'a> {
    window: usize,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn refine(args: &RefineArgs, mut config: Config) -> Result<RunManifest> {
    for w in &args.weight {
        config.set_weight(w)?;
    }
    if let Some(b) = args.budget {
        config.refine.generations = b;
    }
    if let Some(i) = args.interval {
        config.refine.keyframe_interval = i;
    }
    if let Some(s) = args.seed {
        config.refine.seed = s;
    }
    config.validate()?;
    let scenario = Scenario::load(&args.input)?;
    let pool = match args.jobs {
        1 => None,
        n => Some(rayon::ThreadPoolBuilder::new().num_threads(n as usize).build()?),
    };

    let windows_path = sibling(&args.output, "windows.jsonl");
    let mut windows = create(&windows_path)?;
    let mut trace = args.trace.as_deref().map(create).transpose()?;
    let mut failed: Option<anyhow::Error> = None;
    let mut record = |r: &WindowReport| -> Result<()> {
        writeln!(windows, "{}", serde_json::to_string(r)?)?;
        windows.flush()?;
        if let Some(t) = trace.as_mut() {
            for rec in &r.trace {
                writeln!(t, "{}", serde_json::to_string(&TraceLine { window: r.index, record: rec })?)?;
            }
            t.flush()?;
        }
        Ok(())
    };
    let refinement = refine_sequence(&scenario, &config.refinement(), pool.as_ref(), |r| {
        eprintln!(
            "window {} frame {}: {:.6} -> {:.6}{}",
            r.index,
            r.free_frame,
            r.incumbent_fitness,
            r.best_fitness,
            if r.all_diverged { " (all candidates diverged)" } else { "" }
        );
        if failed.is_none() {
            failed = record(r).err();
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }

    refinement.scenario(&scenario).save(&args.output)?;
    let contacts_path = sibling(&args.output, "contacts.csv");
    export_contacts(&refinement.contacts, &contacts_path)?;

    let mut m = RunManifest::new("refine", &config);
    m.seed = Some(config.refine.seed);
    m.inputs.push(args.input.clone());
    m.outputs.extend([args.output.clone(), contacts_path, windows_path]);
    m.outputs.extend(args.trace.clone());
    Ok(m)
}

fn evaluated_trajectory(s: &Scenario, replay: bool) -> Result<Trajectory> {
    if !replay {
        return Ok(s.trajectory.clone());
    }
    let t = &s.trajectory;
    let rollout = s.replay()?;
    Ok(Trajectory::from_rollout(&s.simulator()?, &rollout, &t.controls(), t.frame_rate, t.start_frame))
}

fn evaluate_pair(sim: &Path, reference: &Path, replay: bool, config: &Config) -> Result<MetricReport> {
    let s = Scenario::load(sim)?;
    let r = Scenario::load(reference)?;
    let tips = r.scene.gripper.fingertip_keypoints();
    let report = metrics::evaluate(&evaluated_trajectory(&s, replay)?, &r.trajectory, &tips, &config.metrics)?;
    Ok(report)
}

#[derive(Serialize)]
struct NamedReport {
    name: String,
    report: MetricReport,
}

#[derive(Serialize)]
struct DirectoryReport {
    reports: Vec<NamedReport>,
    summary: Summary,
}

fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "scn") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn name_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn eval(args: &EvalArgs, config: &Config) -> Result<RunManifest> {
    config.validate()?;
    let mut m = RunManifest::new("eval", config);
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", metrics::CSV_HEADER)?;
    let document = if args.sim.is_dir() {
        let files = scenario_files(&args.sim)?;
        if files.is_empty() {
            bail!("no .scn files in {}", args.sim.display());
        }
        let mut reports = Vec::new();
        for file in files {
            let reference = if args.reference.is_dir() {
                args.reference.join(file.file_name().expect("listed file"))
            } else {
                args.reference.clone()
            };
            let report = evaluate_pair(&file, &reference, args.replay, config)
                .with_context(|| format!("evaluating {}", file.display()))?;
            writeln!(stdout, "{}", report.csv_row(&name_of(&file)))?;
            m.inputs.extend([file.clone(), reference]);
            reports.push(NamedReport { name: name_of(&file), report });
        }
        let summary = metrics::aggregate(&reports.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
        eprintln!("success rate {:.1}% over {} sequences", summary.success_rate, summary.sequences);
        serde_json::to_string_pretty(&DirectoryReport { reports, summary })?
    } else {
        let report = evaluate_pair(&args.sim, &args.reference, args.replay, config)?;
        writeln!(stdout, "{}", report.csv_row(&name_of(&args.sim)))?;
        m.inputs.extend([args.sim.clone(), args.reference.clone()]);
        serde_json::to_string_pretty(&report)?
    };
    if let Some(out) = &args.output {
        std::fs::write(out, document + "\n").with_context(|| format!("writing {}", out.display()))?;
        m.outputs.push(out.clone());
    }
    Ok(m)
}

fn plot(args: &PlotArgs, config: &Config) -> Result<RunManifest> {
    let kind = args.kind.unwrap_or_else(|| InputKind::detect(&args.input));
    let data = plotdata::convert(&args.input, kind)?;
    std::fs::write(&args.output, data).with_context(|| format!("writing {}", args.output.display()))?;
    let mut m = RunManifest::new("plotdata", config);
    m.inputs.push(args.input.clone());
    m.outputs.push(args.output.clone());
    Ok(m)
}

fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let config = load_config(cli.config.as_deref())?;
    let (mut manifest, out) = match &cli.command {
        Command::Synth(a) => (synth(a, &config)?, Some(a.output.as_path())),
        Command::Refine(a) => (refine(a, config)?, Some(a.output.as_path())),
        Command::Eval(a) => (eval(a, &config)?, a.output.as_deref()),
        Command::Plotdata(a) => (plot(a, &config)?, Some(a.output.as_path())),
    };
    if let Some(c) = &cli.config {
        manifest.inputs.insert(0, c.clone());
    }
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.emit(out.map(|o| sibling(o, "manifest.json")).as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
