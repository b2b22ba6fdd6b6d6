use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use corridor_cli::manifest::{RunManifest, RunStatus};
use corridor_cli::{default_out_root, report, sweep};
use corridor_core::env::EnvConfig;
use corridor_core::eval::{self, EpisodeTrace, EvalSummary};
use corridor_core::presets::PresetName;
use corridor_core::sim::ScenarioConfig;
use corridor_core::trainer::{train_loop, PrefillPolicy, TrainConfig};

#[derive(Parser)]
#[command(name = "corridor", version, about = "Corridor signal-control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one agent.
    Train(TrainArgs),
    /// Run the fixed-split base case.
    Baseline(BaselineArgs),
    /// Train a size x ratio x seed grid, one process per cell.
    Sweep(SweepArgs),
    /// Evaluate a checkpoint greedily.
    Evaluate(EvaluateArgs),
    /// Reward curves and queue heatmaps as CSV and SVG.
    Report(ReportArgs),
}

#[derive(Args, Clone, Debug)]
struct ScenarioArgs {
    /// Built-in demand pattern: 1 (west-east dominant) or 2 (balanced).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    scenario: Option<u8>,
    /// Scenario JSON file; overrides --scenario and --intersections.
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    /// Signalized intersections on the corridor [default: 5].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    intersections: Option<u64>,
    /// Remove all demand.
    #[arg(long)]
    zero_demand: bool,
}

impl ScenarioArgs {
    fn given(&self) -> bool {
        self.scenario.is_some() || self.scenario_file.is_some() || self.intersections.is_some() || self.zero_demand
    }

    fn resolve(&self) -> Result<ScenarioConfig> {
        let sc = match &self.scenario_file {
            Some(p) => ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ScenarioConfig::by_id(self.scenario.unwrap_or(1), self.intersections.unwrap_or(5) as usize)?,
        };
        Ok(if self.zero_demand { sc.without_demand() } else { sc })
    }

    fn to_args(&self) -> Vec<String> {
        let mut a = Vec::new();
        if let Some(s) = self.scenario {
            a.extend(["--scenario".to_string(), s.to_string()]);
        }
        if let Some(p) = &self.scenario_file {
            a.extend(["--scenario-file".to_string(), p.display().to_string()]);
        }
        if let Some(m) = self.intersections {
            a.extend(["--intersections".to_string(), m.to_string()]);
        }
        if self.zero_demand {
            a.push("--zero-demand".to_string());
        }
        a
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

/// Training settings shared by `train` and every `sweep` cell.
#[derive(Args, Clone, Debug)]
struct TrainShared {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Environment steps to collect (144 per episode).
    #[arg(long, default_value_t = 20 * 144)]
    budget: u64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 64)]
    batch_length: usize,
    #[arg(long, default_value_t = 500_000)]
    replay_capacity: usize,
    /// Episodes between checkpoints.
    #[arg(long, default_value_t = 10)]
    checkpoint_every: usize,
    #[arg(long, value_parser = positive)]
    wm_lr: Option<f64>,
    #[arg(long, value_parser = positive)]
    actor_lr: Option<f64>,
    #[arg(long, value_parser = positive)]
    critic_lr: Option<f64>,
    /// Imagination horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Actor entropy bonus.
    #[arg(long)]
    entropy: Option<f64>,
    /// Episodes collected before the first update.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    prefill_episodes: u64,
    /// Prefill actions: `uniform` per step, or `targets` (a random split per intersection, approached and held).
    #[arg(long, default_value = "uniform")]
    prefill_policy: PrefillPolicy,
    /// Log 0 instead of wall-clock time so metrics files are byte-identical across runs.
    #[arg(long)]
    deterministic: bool,
}

impl TrainShared {
    fn config(&self, size: PresetName, ratio: f64, seed: u64) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.scenario.resolve()?, size);
        cfg.training_ratio = ratio;
        cfg.seed = seed;
        cfg.budget_env_steps = self.budget;
        cfg.batch_size = self.batch_size;
        cfg.batch_length = self.batch_length;
        cfg.replay_capacity = self.replay_capacity;
        cfg.checkpoint_every = self.checkpoint_every;
        cfg.record_wall_clock = !self.deterministic;
        if let Some(lr) = self.wm_lr {
            cfg.optim.world_model.lr = lr;
        }
        if let Some(lr) = self.actor_lr {
            cfg.optim.actor.lr = lr;
        }
        if let Some(lr) = self.critic_lr {
            cfg.optim.critic.lr = lr;
        }
        if let Some(h) = self.horizon {
            cfg.behavior.horizon = h;
        }
        if let Some(e) = self.entropy {
            cfg.behavior.entropy = e;
        }
        cfg.prefill_episodes = self.prefill_episodes as usize;
        cfg.prefill_policy = self.prefill_policy;
        cfg.validate()?;
        Ok(cfg)
    }

    fn to_args(&self) -> Vec<String> {
        let mut a = self.scenario.to_args();
        let mut kv = |k: &str, v: String| a.extend([k.to_string(), v]);
        kv("--budget", self.budget.to_string());
        kv("--batch-size", self.batch_size.to_string());
        kv("--batch-length", self.batch_length.to_string());
        kv("--replay-capacity", self.replay_capacity.to_string());
        kv("--checkpoint-every", self.checkpoint_every.to_string());
        if let Some(v) = self.wm_lr {
            kv("--wm-lr", v.to_string());
        }
        if let Some(v) = self.actor_lr {
            kv("--actor-lr", v.to_string());
        }
        if let Some(v) = self.critic_lr {
            kv("--critic-lr", v.to_string());
        }
        if let Some(v) = self.horizon {
            kv("--horizon", v.to_string());
        }
        if let Some(v) = self.entropy {
            kv("--entropy", v.to_string());
        }
        kv("--prefill-episodes", self.prefill_episodes.to_string());
        kv(
            "--prefill-policy",
            match self.prefill_policy {
                PrefillPolicy::Uniform => "uniform",
                PrefillPolicy::Targets => "targets",
            }
            .to_string(),
        );
        if self.deterministic {
            a.push("--deterministic".to_string());
        }
        a
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: TrainShared,
    #[arg(long, default_value = "S")]
    size: PresetName,
    /// Replayed steps per environment step.
    #[arg(long, default_value_t = 128.0, value_parser = positive)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run directory [default: $CORRIDOR_OUT/train_<size>_r<ratio>_s<seed>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    shared: TrainShared,
    #[arg(long, value_delimiter = ',', default_value = "XS,S,M,L")]
    sizes: Vec<PresetName>,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512", value_parser = positive)]
    ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Cells trained at once [default: logical cores - 1].
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Overrides the scenario stored in the checkpoint.
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 5)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A run directory or a directory containing run directories.
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Base-case queue trace (CSV file or baseline output directory).
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Controlled queue trace (CSV file or evaluate output directory).
    #[arg(long)]
    controlled: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Baseline(a) => cmd_baseline(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Report(a) => cmd_report(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.shared.config(a.size, a.ratio, a.seed)?;
    let out = a
        .out
        .unwrap_or_else(|| default_out_root().join(format!("train_{}_r{}_s{}", a.size, a.ratio, a.seed)));
    if let Some(m) = RunManifest::try_load(&out) {
        if m.status == RunStatus::Completed && m.config == cfg {
            println!("{} already completed", out.display());
            return Ok(());
        }
    }
    let mut manifest = RunManifest::start(cfg.clone());
    manifest.save(&out)?;
    eprintln!(
        "training {} ratio {} seed {} for {} episodes into {}",
        cfg.preset,
        cfg.training_ratio,
        cfg.seed,
        cfg.episodes_in_budget(),
        out.display()
    );
    let outcome = train_loop(cfg, &out).map(|log| {
        if let Some(last) = log.rows.last() {
            println!(
                "episodes {}  last reward {:.1}  measured ratio {:.2}",
                log.rows.len(),
                last.episode_reward,
                last.measured_ratio
            );
        }
    });
    let outcome = outcome.map_err(anyhow::Error::from);
    manifest.finish(&outcome);
    manifest.save(&out)?;
    outcome
}

fn write_eval_outputs(out: &Path, summary: &EvalSummary, traces: &[EpisodeTrace]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    if let Some(t) = traces.first() {
        t.write_queue_csv(&out.join("queues.csv"))?;
        t.write_split_csv(&out.join("splits.csv"))?;
    }
    println!(
        "episodes {}  mean reward {:.1}  min {:.1}  max {:.1}  max queue {}  max weighted-link queue {}",
        summary.episodes,
        summary.mean_reward,
        summary.min_reward,
        summary.max_reward,
        summary.max_queue,
        summary.max_weighted_queue
    );
    Ok(())
}

fn cmd_baseline(a: BaselineArgs) -> Result<()> {
    let sc = a.scenario.resolve()?;
    let out = a
        .out
        .unwrap_or_else(|| default_out_root().join(format!("baseline_{}_m{}_s{}", sc.name, sc.intersections, a.seed)));
    let (summary, traces) = eval::baseline(&sc, &EnvConfig::default(), a.episodes, a.seed)?;
    write_eval_outputs(&out, &summary, &traces)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let sc = if a.scenario.given() { Some(a.scenario.resolve()?) } else { None };
    let out = a.out.unwrap_or_else(|| default_out_root().join("evaluate"));
    let (summary, traces) = eval::evaluate_policy(&a.checkpoint, sc.as_ref(), a.episodes, a.seed)
        .with_context(|| format!("evaluating {}", a.checkpoint.display()))?;
    write_eval_outputs(&out, &summary, &traces)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    // Validate the shared settings once instead of failing in every cell.
    for &size in &a.sizes {
        for &ratio in &a.ratios {
            a.shared.config(size, ratio, 0)?;
        }
    }
    let jobs = a.jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get().saturating_sub(1))
            .unwrap_or(1)
            .max(1)
    });
    let plan = sweep::SweepPlan {
        exe: std::env::current_exe()?,
        out: a.out.unwrap_or_else(|| default_out_root().join("sweep")),
        cells: sweep::grid(&a.sizes, &a.ratios, &a.seeds),
        common_args: a.shared.to_args(),
        jobs,
    };
    let summary = sweep::run(&plan)?;
    println!("{:<24} {:>10} {:>18}", "cell", "status", "final-window reward");
    for name in &summary.ranking {
        let c = summary.cells.iter().find(|c| &c.name == name).expect("ranked cell exists");
        println!("{:<24} {:>10} {:>18.1}", c.name, "completed", c.final_window_mean_reward.unwrap_or(f64::NAN));
    }
    let failed: Vec<&str> = summary
        .cells
        .iter()
        .filter(|c| c.status != RunStatus::Completed)
        .map(|c| c.name.as_str())
        .collect();
    if !failed.is_empty() {
        eprintln!("failed cells: {}", failed.join(", "));
    }
    Ok(())
}

fn trace_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("queues.csv")
    } else {
        p.to_path_buf()
    }
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    if a.runs.is_none() && a.baseline.is_none() {
        bail!("nothing to report: pass --runs and/or --baseline");
    }
    if a.controlled.is_some() && a.baseline.is_none() {
        bail!("--controlled needs --baseline for a shared colour scale");
    }
    let out = a.out.unwrap_or_else(|| default_out_root().join("report"));
    if let Some(runs) = &a.runs {
        let found = report::curves(runs, &out)?;
        println!("{} reward curve(s) written to {}", found.len(), out.display());
    }
    if let Some(base) = &a.baseline {
        let ctrl = a.controlled.as_deref().map(trace_path);
        report::queue_heatmaps(&trace_path(base), ctrl.as_deref(), &out)?;
        println!("queue heatmaps written to {}", out.display());
    }
    Ok(())
}
