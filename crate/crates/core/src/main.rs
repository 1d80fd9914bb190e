//! Command-line front end: run simulations, rebuild propagation paths from
//! event traces, score reconstructions against ground truth, and export
//! Graphviz views.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wormtrace::engine::{log_from_jsonl, log_to_jsonl, Seed, SimTime};
use wormtrace::eval::{compare_paths, export_dot, export_dot_diff};
use wormtrace::experiment::{
    preset, run_experiment, run_suite, suite_csv, suite_plan, ExperimentConfig, RunReport,
    PRESET_NAMES,
};
use wormtrace::sim::{reconstruct_from_trace, Event};
use wormtrace::traceback::{GraphKind, PropagationGraph};

#[derive(Parser)]
#[command(
    name = "wormtrace",
    version,
    about = "Scanning-worm simulator with distributed propagation-path trace-back"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation; write the event trace, run report, and graphs.
    Simulate(SimulateArgs),
    /// Rebuild propagation graphs from an event-trace file alone.
    Traceback(TracebackArgs),
    /// Score a reconstructed graph against a ground-truth graph.
    Evaluate(EvaluateArgs),
    /// Run the standard suite: every preset, three seeds, both rules.
    Report(ReportArgs),
    /// List bundled worm profiles, or print one as a TOML config.
    Presets(PresetsArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    Origins,
    Extended,
    Both,
}

impl RuleArg {
    fn selected(self) -> &'static [&'static str] {
        match self {
            RuleArg::Origins => &["origins"],
            RuleArg::Extended => &["extended"],
            RuleArg::Both => &["origins", "extended"],
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Dot,
}

#[derive(Args)]
struct SimulateArgs {
    /// Bundled profile to run (see `presets`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML config file describing topology, worm, traffic, and run settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's RNG seed.
    #[arg(long)]
    seed: Option<Seed>,
    /// Override the config's monitor window length.
    #[arg(long)]
    window_ms: Option<SimTime>,
    /// Directory for the output set (config.toml, trace.jsonl, report.json,
    /// graphs). Without it, the report prints to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Graph output format: json graphs or Graphviz dot (with diffs).
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Which reconstruction rules to export graphs for.
    #[arg(long, value_enum, default_value_t = RuleArg::Both)]
    rule: RuleArg,
}

#[derive(Args)]
struct TracebackArgs {
    /// Event trace (JSON lines), e.g. from `simulate --out`.
    trace: PathBuf,
    /// Monitor window length the agents replay with.
    #[arg(long, default_value_t = 1000)]
    window_ms: SimTime,
    /// Parent candidates must connect strictly after their own infection.
    #[arg(long)]
    strict: bool,
    /// Output format: the reconstruction as json, or graphs as dot.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Which rules to export when the format is dot.
    #[arg(long, value_enum, default_value_t = RuleArg::Both)]
    rule: RuleArg,
    /// Directory for the output files instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reconstructed propagation graph (JSON).
    reconstruction: PathBuf,
    /// Ground-truth propagation graph (JSON).
    truth: PathBuf,
    /// Output format: metrics as json or csv, or the edge diff as dot.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Directory for the output file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory for suite.csv, suite.json, and per-run DOT diffs.
    /// Without it, the CSV prints to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PresetsArgs {
    /// Print this preset as a complete TOML config.
    #[arg(long)]
    show: Option<String>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => simulate(args),
        Command::Traceback(args) => traceback(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Report(args) => report(args),
        Command::Presets(args) => presets(args),
    }
}

fn load_config(args: &SimulateArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            ExperimentConfig::from_toml_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => preset("slammer")?,
    };
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(window) = args.window_ms {
        cfg.experiment.window_ms = window;
    }
    Ok(cfg)
}

fn reconstruction_for<'a>(report: &'a RunReport, rule: &str) -> Option<&'a PropagationGraph> {
    match rule {
        "origins" => report.reconstruction_origins.as_ref(),
        _ => report.reconstruction_extended.as_ref(),
    }
}

fn write_or_print(out: Option<&Path>, name: &str, body: &str) -> Result<()> {
    match out {
        Some(dir) => {
            let path = dir.join(name);
            fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let run = run_experiment(&cfg)?;
    let report_json = serde_json::to_string_pretty(&run.report)?;

    let Some(dir) = &args.out else {
        match args.format {
            FormatArg::Json => println!("{report_json}"),
            FormatArg::Dot => {
                for rule in args.rule.selected() {
                    match reconstruction_for(&run.report, rule) {
                        Some(graph) => print!("{}", export_dot(graph)),
                        None => bail!("run produced no reconstruction to export"),
                    }
                }
            }
            FormatArg::Csv => bail!("simulate emits json or dot, not csv"),
        }
        return Ok(());
    };

    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    fs::write(dir.join("trace.jsonl"), log_to_jsonl(&run.outcome.log))?;
    fs::write(dir.join("report.json"), &report_json)?;
    match args.format {
        FormatArg::Json => {
            fs::write(
                dir.join("ground_truth.json"),
                serde_json::to_string_pretty(&run.report.ground_truth)?,
            )?;
            for rule in args.rule.selected() {
                if let Some(graph) = reconstruction_for(&run.report, rule) {
                    fs::write(
                        dir.join(format!("reconstruction_{rule}.json")),
                        serde_json::to_string_pretty(graph)?,
                    )?;
                }
            }
        }
        FormatArg::Dot => {
            fs::write(dir.join("ground_truth.dot"), export_dot(&run.report.ground_truth))?;
            for rule in args.rule.selected() {
                if let Some(graph) = reconstruction_for(&run.report, rule) {
                    fs::write(dir.join(format!("reconstruction_{rule}.dot")), export_dot(graph))?;
                    fs::write(
                        dir.join(format!("diff_{rule}.dot")),
                        export_dot_diff(graph, &run.report.ground_truth),
                    )?;
                }
            }
        }
        FormatArg::Csv => bail!("simulate emits json or dot, not csv"),
    }
    if run.report.vacuous {
        eprintln!("note: no complete trace-back before the horizon; graphs were not produced");
    }
    Ok(())
}

fn traceback(args: TracebackArgs) -> Result<()> {
    let text = fs::read_to_string(&args.trace)
        .with_context(|| format!("reading trace {}", args.trace.display()))?;
    let log = log_from_jsonl::<Event>(&text)
        .with_context(|| format!("parsing trace {}", args.trace.display()))?;
    let recon = reconstruct_from_trace(&log, args.window_ms, args.strict)?;

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    match args.format {
        FormatArg::Json => {
            let body = serde_json::to_string_pretty(&recon)?;
            write_or_print(args.out.as_deref(), "reconstruction.json", &format!("{body}\n"))?;
        }
        FormatArg::Dot => {
            for rule in args.rule.selected() {
                let graph =
                    if *rule == "origins" { &recon.origins_rule } else { &recon.extended_rule };
                write_or_print(
                    args.out.as_deref(),
                    &format!("reconstruction_{rule}.dot"),
                    &export_dot(graph),
                )?;
            }
        }
        FormatArg::Csv => bail!("traceback emits json or dot, not csv"),
    }
    Ok(())
}

fn load_graph(path: &Path) -> Result<PropagationGraph> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading graph {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing graph {}", path.display()))
}

fn rule_name(kind: GraphKind) -> &'static str {
    match kind {
        GraphKind::Origins => "origins",
        GraphKind::Extended => "extended",
        GraphKind::GroundTruth => "ground_truth",
    }
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let recon = load_graph(&args.reconstruction)?;
    let truth = load_graph(&args.truth)?;
    let metrics = compare_paths(&recon, &truth);
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    match args.format {
        FormatArg::Json => {
            let body = serde_json::to_string_pretty(&metrics)?;
            write_or_print(args.out.as_deref(), "metrics.json", &format!("{body}\n"))?;
        }
        FormatArg::Csv => {
            let body = format!(
                "rule,tp,fn,fp,precision,recall,origins_correct\n{},{},{},{},{:.6},{:.6},{}\n",
                rule_name(recon.rule),
                metrics.tp,
                metrics.fn_,
                metrics.fp,
                metrics.precision,
                metrics.recall,
                metrics.origins_correct
            );
            write_or_print(args.out.as_deref(), "metrics.csv", &body)?;
        }
        FormatArg::Dot => {
            write_or_print(args.out.as_deref(), "diff.dot", &export_dot_diff(&recon, &truth))?;
        }
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let suite = run_suite()?;
    let csv = suite_csv(&suite.rows);
    let Some(dir) = &args.out else {
        print!("{csv}");
        for agg in &suite.aggregates {
            eprintln!(
                "{}: {} runs, mean precision {:.4}, mean recall {:.4}, origins correct in {}",
                agg.rule, agg.runs, agg.mean_precision, agg.mean_recall, agg.origins_correct_runs
            );
        }
        return Ok(());
    };

    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("suite.csv"), &csv)?;
    let summary = serde_json::json!({
        "rows": suite.rows,
        "aggregates": suite.aggregates,
    });
    fs::write(dir.join("suite.json"), serde_json::to_string_pretty(&summary)?)?;
    for (entry, report) in suite_plan().iter().zip(&suite.reports) {
        for rule in ["origins", "extended"] {
            if let Some(graph) = reconstruction_for(report, rule) {
                let name = format!("diff_{}_{}_{}.dot", entry.test_plan, entry.experiment, rule);
                fs::write(dir.join(name), export_dot_diff(graph, &report.ground_truth))?;
            }
        }
    }
    Ok(())
}

fn presets(args: PresetsArgs) -> Result<()> {
    if let Some(name) = &args.show {
        print!("{}", preset(name)?.to_toml_string()?);
        return Ok(());
    }
    for name in PRESET_NAMES {
        let cfg = preset(name)?;
        let transport = format!("{:?}", cfg.worm.transport).to_lowercase();
        println!(
            "{name:<10} {transport:<4} scan={:?} hosts={} vulnerable={}",
            cfg.worm.scan_strategy, cfg.topology.host_count, cfg.topology.vulnerable_count,
        );
    }
    Ok(())
}
