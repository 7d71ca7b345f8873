use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mcdm_cli::config::FlowMethod;
use mcdm_cli::stages::{sample_stage, SampleRequest};
use mcdm_cli::{cache_root, run_ablation, run_if_needed, run_pipeline, AblationGrid, RunConfig, RunContext, Stage, StageOutcome};

#[derive(Parser)]
#[command(name = "mcdm", version, about = "Motion-conditioned echo video synthesis pipeline")]
struct Cli {
    /// TOML run configuration; paper-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the top-level `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact cache root (takes precedence over MCDM_CACHE).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rerun stages even when their markers exist.
    #[arg(long)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    PhantomGen,
    TrainReid,
    GenFlow {
        #[arg(long, value_parser = parse_method)]
        method: Option<FlowMethod>,
        /// Directory of `<video_id>.mcfl` files for `--method import`.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        search: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    TrainMafe,
    ExtractMotion,
    TrainVae,
    TrainLvdm,
    Sample {
        /// Video whose motion vector conditions the sample; every test video when omitted.
        #[arg(long)]
        cond_id: Option<String>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    Evaluate,
    Ablate,
    Report {
        /// Run directories or metrics.json files; every run in the cache when omitted.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Runs the listed stages (all by default) in pipeline order.
    Run {
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
    },
}

fn parse_method(s: &str) -> Result<FlowMethod, String> {
    match s {
        "block_match" | "block-match" => Ok(FlowMethod::BlockMatch),
        "import" => Ok(FlowMethod::Import),
        other => Err(format!("unknown flow method `{other}` (block_match | import)")),
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::PhantomGen => "phantom-gen",
            Command::TrainReid => "train-reid",
            Command::GenFlow { .. } => "gen-flow",
            Command::TrainMafe => "train-mafe",
            Command::ExtractMotion => "extract-motion",
            Command::TrainVae => "train-vae",
            Command::TrainLvdm => "train-lvdm",
            Command::Sample { .. } => "sample",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::Report { .. } => "report",
            Command::Run { .. } => "run",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Command::GenFlow { method, from, patch, search, stride } = &cli.command {
        let p = &mut cfg.pseudo;
        if let Some(m) = method {
            p.flow_method = *m;
        }
        if from.is_some() {
            p.flow_import_dir = from.clone();
        }
        p.patch = patch.unwrap_or(p.patch);
        p.search = search.unwrap_or(p.search);
        p.stride = stride.unwrap_or(p.stride);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn outcome_word(o: StageOutcome) -> &'static str {
    match o {
        StageOutcome::Ran => "ran",
        StageOutcome::Skipped => "skipped",
    }
}

fn execute(cli: &Cli) -> Result<String> {
    let cache = cache_root(cli.out.as_deref());
    if let Command::Report { inputs, output } = &cli.command {
        let reports = mcdm_cli::report::collect_reports(inputs, &cache)?;
        let text = mcdm_cli::report::render(&reports);
        print!("{text}");
        if let Some(o) = output {
            std::fs::write(o, &text).with_context(|| format!("writing {}", o.display()))?;
        }
        return Ok(format!("reports={}", reports.len()));
    }
    let mut ctx = RunContext::new(load_config(cli)?, &cache)?;
    ctx.force = cli.force;
    let run = format!("run={} hash={}", ctx.dir.display(), ctx.hash);
    let single = |stage: Stage| -> Result<String> { Ok(format!("{run} outcome={}", outcome_word(run_if_needed(&ctx, stage)?))) };
    match &cli.command {
        Command::PhantomGen => single(Stage::PhantomGen),
        Command::TrainReid => single(Stage::TrainReid),
        Command::GenFlow { .. } => single(Stage::GenFlow),
        Command::TrainMafe => single(Stage::TrainMafe),
        Command::ExtractMotion => single(Stage::ExtractMotion),
        Command::TrainVae => single(Stage::TrainVae),
        Command::TrainLvdm => single(Stage::TrainLvdm),
        Command::Sample { cond_id: None, frames: None, seed: None } => single(Stage::Sample),
        Command::Sample { cond_id, frames, seed } => {
            ctx.require(Stage::Sample)?;
            let paths = sample_stage(&ctx, &SampleRequest { cond_id: cond_id.clone(), frames: *frames, seed: *seed })?;
            for p in &paths {
                println!("{}", p.display());
            }
            Ok(format!("{run} samples={}", paths.len()))
        }
        Command::Evaluate => {
            let r = single(Stage::Evaluate)?;
            print!("{}", std::fs::read_to_string(ctx.path("metrics.txt"))?);
            Ok(r)
        }
        Command::Ablate => {
            for p in [Stage::PhantomGen, Stage::TrainReid, Stage::GenFlow] {
                if p != Stage::PhantomGen || ctx.config.data.dataset_dir.is_none() {
                    anyhow::ensure!(ctx.is_done(p), "ablate needs the artifacts of `{p}`; run `mcdm {p}` first");
                }
            }
            let grid = AblationGrid { lambda1: ctx.config.ablation.lambda1.clone(), lambda2: ctx.config.ablation.lambda2.clone() };
            let table = run_ablation(&ctx, &grid)?;
            print!("{}", table.to_markdown());
            let failed = table.cells.iter().filter(|c| c.psnr.is_none()).count();
            Ok(format!("{run} cells={} failed={failed}", table.cells.len()))
        }
        Command::Run { stages } => {
            let stages = if stages.is_empty() { Stage::ALL.to_vec() } else { stages.clone() };
            let done = run_pipeline(&ctx, &stages)?;
            let summary: Vec<String> = done.iter().map(|(s, o)| format!("{s}:{}", outcome_word(*o))).collect();
            Ok(format!("{run} stages={}", summary.join(",")))
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let name = cli.command.name();
    match execute(&cli) {
        Ok(detail) => {
            println!("status=ok command={name} {detail}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            println!("status=error command={name} message={:?}", format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
