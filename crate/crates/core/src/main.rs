use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seqguard::pipeline::{run_ablation, run_pipeline, run_stage, ExperimentConfig, PipelineError, Stage};

#[derive(Parser)]
#[command(name = "seqguard", version, about = "Log anomaly detection over Drain event-ID windows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine templates and write templates.csv / structured.csv
    Parse(Common),
    /// Group parsed lines into labelled block sessions and windows
    Sessionize(Common),
    /// Sample and split windows into train / val / test
    Dataset(Common),
    /// Fine-tune the classifier and write checkpoint.json, curve.csv
    Train(Common),
    /// Score the evaluation split
    Eval(Common),
    /// Ask the configured chat model about the evaluation split
    Judge(Common),
    /// Build comparison.csv from scores and verdicts
    Compare(Common),
    /// Run all three arms on one shared split
    Ablate(Common),
    /// Assemble report.json and the summary files
    Report(Common),
    /// Run every stage in order
    Run {
        #[command(flatten)]
        common: Common,
        /// Skip the stages before this one and reuse their artifacts
        #[arg(long)]
        resume_from: Option<Stage>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    sim_threshold: Option<f64>,
    #[arg(long)]
    max_children: Option<usize>,
    #[arg(long)]
    header_pattern: Option<String>,
    #[arg(long)]
    judge_model: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Replay judge answers from this directory; no network access
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Judge requests per second
    #[arg(long)]
    rate_limit: Option<f64>,
    /// Any other config key, e.g. `--set train.epochs=3`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn json_str(s: impl AsRef<str>) -> String {
    serde_json::to_string(s.as_ref()).expect("strings serialize")
}

fn json_path(p: &std::path::Path) -> String {
    json_str(p.to_string_lossy())
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>, PipelineError> {
        let mut o: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        push("paths.out_dir", self.out.as_deref().map(json_path));
        push("paths.logs", self.logs.as_deref().map(json_path));
        push("paths.labels", self.labels.as_deref().map(json_path));
        push("seed", self.seed.map(|v| v.to_string()));
        push("drain.depth", self.depth.map(|v| v.to_string()));
        push("drain.sim_threshold", self.sim_threshold.map(|v| v.to_string()));
        push("drain.max_children", self.max_children.map(|v| v.to_string()));
        push("drain.header_pattern", self.header_pattern.as_deref().map(json_str));
        push("judge.model", self.judge_model.as_deref().map(json_str));
        push("judge.cache_dir", self.cache_dir.as_deref().map(json_path));
        push("judge.fixtures", self.fixtures.as_deref().map(json_path));
        push("judge.rate_limit", self.rate_limit.map(|v| v.to_string()));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            o.push((k.to_string(), v.to_string()));
        }
        Ok(o)
    }

    fn load(&self) -> Result<ExperimentConfig, PipelineError> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides()?)
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let stage_cmd = |stage: Stage, common: &Common, enable_judge: bool| -> Result<(), PipelineError> {
        let mut config = common.load()?;
        config.judge.enabled |= enable_judge;
        run_stage(stage, &config)
    };
    match &cli.command {
        Command::Parse(c) => stage_cmd(Stage::Parse, c, false),
        Command::Sessionize(c) => stage_cmd(Stage::Sessionize, c, false),
        Command::Dataset(c) => stage_cmd(Stage::Dataset, c, false),
        Command::Train(c) => stage_cmd(Stage::Train, c, false),
        Command::Eval(c) => stage_cmd(Stage::Eval, c, false),
        Command::Judge(c) => stage_cmd(Stage::Judge, c, true),
        Command::Compare(c) => stage_cmd(Stage::Compare, c, false),
        Command::Report(c) => {
            stage_cmd(Stage::Report, c, false)?;
            let config = c.load()?;
            let summary = std::fs::read_to_string(config.out(seqguard::pipeline::artifacts::SUMMARY)).unwrap_or_default();
            print!("{summary}");
            Ok(())
        }
        Command::Ablate(c) => {
            let report = run_ablation(&c.load()?)?;
            println!("{:<4} {:<10} {:>9} {:>6} {:>6}", "arm", "input", "precision", "recall", "f1");
            for r in &report.rows {
                println!(
                    "{:<4} {:<10} {:>9.3} {:>6.3} {:>6.3}",
                    r.arm.name(),
                    r.input,
                    r.eval.precision,
                    r.eval.recall,
                    r.eval.f1
                );
            }
            Ok(())
        }
        Command::Run { common, resume_from } => {
            let report = run_pipeline(&common.load()?, *resume_from)?;
            print!("{}", report.summary());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
