use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use neurevo_core::config::{KeyValues, RunConfig};
use neurevo_core::evolution::{run_meta_training, KMeansConfig, RunOptions, TiedSpace, TrainingCheckpoint};
use neurevo_core::inner_loop::{run_many, LifeCycleConfig, LifeCycleResult, Policy, TraceRecord};
use neurevo_core::maze::{MazeGenConfig, MazeTask};
use neurevo_core::metrics::{self, BestRolloutMode, EvalSummary};
use neurevo_core::models::table::{self, AuditStatus};
use neurevo_core::models::{read_checkpoint, Arch, Model, ModelConfig};
use neurevo_core::plasticity::ModulationKind;

#[derive(Parser)]
#[command(
    name = "neurevo",
    version,
    about = "Evolve plastic recurrent networks on procedural mazes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train a genotype.
    Train(TrainArgs),
    /// Evaluate a genotype (or the random policy) on held-out mazes.
    Eval(EvalArgs),
    /// Compute vibration and migration series from recorded traces.
    AnalyzeExport(AnalyzeArgs),
    /// Print genotype and adaptive sizes for a model.
    ParamCount(ParamArgs),
    /// Play back every rollout of one life cycle as ASCII.
    Demo(DemoArgs),
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set hidden=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, env = "NEUREVO_WORKERS")]
    workers: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut kv = match &self.config {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
            kv.set(k.trim(), v.trim());
        }
        if let Some(s) = self.seed {
            kv.set("seed", &s.to_string());
        }
        if let Some(w) = self.workers {
            kv.set("workers", &w.to_string());
        }
        let cfg = RunConfig::from_key_values(kv)?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .ok();
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Continue from a `state.json` written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Warm start from a genotype checkpoint with the same layout.
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Cluster the rules of a trained PRNN checkpoint and re-evolve the tied genotype.
    #[arg(long)]
    merge_from: Option<PathBuf>,
    #[arg(long, default_value_t = table::DEFAULT_MERGED_RULES)]
    merge_k: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Model,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Global,
    PerTask,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Genotype checkpoint (not needed for `--policy random`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "model")]
    policy: PolicyArg,
    /// Number of test mazes (overrides `eval_tasks`).
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long, value_enum, default_value = "global")]
    best_rollout: ModeArg,
    /// Write per-step adaptive-state traces as JSON lines.
    #[arg(long)]
    record_traces: bool,
    /// Only trace the first N tasks.
    #[arg(long, default_value_t = 6)]
    trace_tasks: usize,
    #[arg(long, default_value_t = 1)]
    record_stride: usize,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace files written by `eval --record-traces`.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value_t = metrics::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = metrics::DEFAULT_STEP_CAP)]
    cap: usize,
    /// Report vibration only over interior steps.
    #[arg(long)]
    interior: bool,
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long)]
    arch: Option<Arch>,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value = "none")]
    modulation: ModulationKind,
    /// Retroactive: evolve the initial recurrent weights.
    #[arg(long)]
    retro_init: bool,
    /// Compare every reference row against our layouts.
    #[arg(long)]
    audit: bool,
}

#[derive(Args)]
struct DemoArgs {
    #[command(flatten)]
    common: Common,
    /// Genotype checkpoint; the zero genotype of the configured model otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    maze_seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::AnalyzeExport(a) => analyze(a),
        Command::ParamCount(a) => param_count(a),
        Command::Demo(a) => demo(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("resolved.cfg"), &cfg.to_text())
}

fn load_genotype(path: &Path, expected: &ModelConfig) -> Result<Vec<f64>> {
    let ck = read_checkpoint(path)?;
    ck.verify(expected)
        .with_context(|| format!("{} does not match the configured model", path.display()))?;
    Ok(ck.values)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let cfg = a.common.resolve()?;
    prepare_out(&a.out, &cfg)?;
    let mut options = RunOptions {
        workers: cfg.workers,
        out_dir: Some(a.out.clone()),
        ..RunOptions::default()
    };
    if let Some(p) = &a.resume {
        options.resume = Some(TrainingCheckpoint::load(p)?);
    }
    let outcome = if let Some(src) = &a.merge_from {
        if cfg.model.arch != Arch::Prnn {
            bail!("--merge-from needs arch = PRNN in the configuration");
        }
        let source = load_genotype(src, &cfg.model)?;
        let (space, point) = TiedSpace::merge(&cfg.model, &source, &KMeansConfig::new(a.merge_k, cfg.training.seed))?;
        log::info!(
            "tied {} connections to {} rules",
            space.assignment().len(),
            space.rule_count()
        );
        if options.resume.is_none() {
            options.init = Some(point);
        }
        run_meta_training(&space, &cfg.training, options)?
    } else {
        if let Some(p) = &a.init_from {
            options.init = Some(load_genotype(p, &cfg.model)?);
        }
        run_meta_training(&cfg.model, &cfg.training, options)?
    };
    match outcome.best_validation {
        Some(v) => println!("best validation fitness {v} ({})", a.out.join("best.bin").display()),
        None => println!("no validated centroid yet"),
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let mut cfg = a.common.resolve()?;
    if let Some(n) = a.tasks {
        cfg.eval_tasks = n;
    }
    prepare_out(&a.out, &cfg)?;
    let t = &cfg.training;
    let tasks = t.test_set(cfg.eval_tasks)?;
    let mut lc = t.life_cycle()?;

    let model = match a.policy {
        PolicyArg::Random => None,
        PolicyArg::Model => {
            let path = a
                .checkpoint
                .as_ref()
                .context("--checkpoint is required unless --policy random")?;
            let ck = read_checkpoint(path)?;
            let mc = ck.config()?;
            Some(Model::decode(&ck.values, &mc)?)
        }
    };
    let policy = model.as_ref().map_or(Policy::Random, Policy::Model);
    let results = run_many(policy, &tasks, &lc, |j| t.test_seed(j))?;
    let mode = match a.best_rollout {
        ModeArg::Global => BestRolloutMode::Global,
        ModeArg::PerTask => BestRolloutMode::PerTask,
    };
    let faults = results.iter().filter(|r| r.is_faulted()).count();
    if faults > 0 {
        bail!("{faults} life cycles hit a numeric fault");
    }
    let summary = EvalSummary::from_results(&results, mode)?;
    write(&a.out.join("eval_rollouts.csv"), &summary.per_rollout_csv())?;
    write(&a.out.join("eval_summary.csv"), &summary.summary_csv())?;
    println!("{}", summary.per_rollout_csv().trim_end());
    println!(
        "best rollout reward {:.4}, failure rate {:.4} over {} mazes",
        summary.best_rollout_reward, summary.failure_rate, summary.task_count
    );

    if a.record_traces {
        let Some(model) = &model else {
            bail!("--record-traces needs a model policy");
        };
        lc.record_traces = true;
        lc.record_stride = a.record_stride;
        let n = a.trace_tasks.min(tasks.len());
        let traced = run_many(Policy::Model(model), &tasks[..n], &lc, |j| t.test_seed(j))?;
        let dir = a.out.join("traces");
        fs::create_dir_all(&dir)?;
        for (j, r) in traced.iter().enumerate() {
            write_traces(&dir.join(format!("task_{j:03}.jsonl")), r)?;
        }
        println!("wrote {n} trace files to {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn write_traces(path: &Path, r: &LifeCycleResult) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for rec in r.traces.iter().flatten() {
        serde_json::to_writer(&mut f, rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn read_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}

fn analyze(a: AnalyzeArgs) -> Result<ExitCode> {
    fs::create_dir_all(&a.out)?;
    let mut vib_rows = String::from("trace,vib_weights,vib_hidden\n");
    let mut mig_w: Vec<Vec<f64>> = Vec::new();
    let mut mig_h: Vec<Vec<f64>> = Vec::new();
    for path in &a.traces {
        let recs = read_traces(path)?;
        let recs = metrics::cap_steps(&recs, a.cap);
        let w: Vec<Vec<f64>> = recs.iter().map(|r| r.w_h_p.clone()).collect();
        let h: Vec<Vec<f64>> = recs.iter().map(|r| r.h.clone()).collect();
        let vw = metrics::vibration_with(&w, a.window, a.interior)?;
        let vh = metrics::vibration_with(&h, a.window, a.interior)?;
        vib_rows.push_str(&format!("{},{vw},{vh}\n", path.display()));
        mig_w.push(metrics::migration(&w, a.window)?);
        mig_h.push(metrics::migration(&h, a.window)?);
    }
    let len = mig_w.iter().map(Vec::len).min().unwrap_or(0);
    let mean = |series: &[Vec<f64>]| -> Vec<f64> {
        (0..len)
            .map(|t| series.iter().map(|s| s[t]).sum::<f64>() / series.len() as f64)
            .collect()
    };
    let (mw, mh) = (mean(&mig_w), mean(&mig_h));
    write(&a.out.join("vibration.csv"), &vib_rows)?;
    write(
        &a.out.join("migration.csv"),
        &metrics::series_csv(&[("d_mig_weights", &mw), ("d_mig_hidden", &mh)])?,
    )?;
    println!("wrote vibration.csv and migration.csv to {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn param_count(a: ParamArgs) -> Result<ExitCode> {
    if a.audit {
        let mut failed = false;
        println!(
            "{:<22} {:>8} {:>8} {:>9} {:>9}  status",
            "model", "meta", "ours", "adaptive", "ours"
        );
        for line in table::audit() {
            let status = match line.status {
                AuditStatus::Match => "ok".to_string(),
                AuditStatus::Flagged => format!("flagged: {}", line.row.known_gap.map_or("", |g| g.1)),
                AuditStatus::Mismatch => {
                    failed = true;
                    "MISMATCH".to_string()
                }
            };
            println!(
                "{:<22} {:>8} {:>8} {:>9} {:>9}  {status}",
                line.row.name, line.row.meta, line.ours_meta, line.row.adaptive, line.ours_adaptive
            );
        }
        return Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS });
    }
    let arch = a.arch.context("--arch is required without --audit")?;
    let mut cfg = ModelConfig::new(arch, a.hidden, a.modulation);
    cfg.retro_init_from_genotype = a.retro_init;
    cfg.validate()?;
    println!(
        "{cfg}: meta-parameters {}, adaptive variables {}",
        cfg.param_count(),
        cfg.adaptive_count()
    );
    Ok(ExitCode::SUCCESS)
}

fn demo(a: DemoArgs) -> Result<ExitCode> {
    let cfg = a.common.resolve()?;
    let (model_cfg, values) = match &a.checkpoint {
        Some(p) => {
            let ck = read_checkpoint(p)?;
            (ck.config()?, ck.values)
        }
        None => (cfg.model, vec![0.0; cfg.model.param_count()]),
    };
    let model = Model::decode(&values, &model_cfg)?;
    let task = MazeTask::generate_with(
        cfg.training.maze_size,
        a.maze_seed,
        &MazeGenConfig {
            loop_fraction: cfg.training.loop_fraction,
        },
    )?;
    let mut lc = LifeCycleConfig::with_episodes(cfg.training.episodes)?;
    lc.max_steps = cfg.training.max_steps;
    lc.record_paths = true;
    let r = &run_many(Policy::Model(&model), std::slice::from_ref(&task), &lc, |_| {
        cfg.training.seed
    })?[0];
    println!(
        "{model_cfg} on maze {} (shortest path {})",
        a.maze_seed,
        task.shortest_path_length()
    );
    for (z, path) in r.paths.iter().flatten().enumerate() {
        let outcome = if r.reached_goal[z] { "goal" } else { "timeout" };
        println!(
            "\nrollout {}: {} steps, {outcome}, reward {:.2}",
            z + 1,
            r.episode_steps[z],
            r.episode_rewards[z]
        );
        print!("{}", task.render(path, None));
    }
    if let Some(f) = &r.fault {
        println!("\nstopped: {f}");
    }
    println!("\nfitness {}", r.fitness);
    Ok(ExitCode::SUCCESS)
}
