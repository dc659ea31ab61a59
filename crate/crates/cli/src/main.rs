use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pathbench_core::collocation::{solve_ocp, SpeedMode};
use pathbench_core::feasibility::{build_map, map_stats, GridSpec};
use pathbench_core::geom::Point2;
use pathbench_core::harness::{compare, train_two_phase, RunConfig};
use pathbench_core::io::write_text;
use pathbench_core::reward::heatmap;
use pathbench_core::trainer::{self, AgentKind, Checkpoint, ResumeOverrides, TrainResult, TrainStatus};
use pathbench_core::Error;

const DEFAULT_CONFIG: &str = "configs/paper.cfg";

#[derive(Parser, Debug)]
#[command(name = "pathbench", version, about = "Learned and optimal path planning around a no-go zone")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true, default_value = DEFAULT_CONFIG)]
    config: PathBuf,
    /// Random seed; overrides the scenario's training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a DDPG agent.
    Train(TrainArgs),
    /// Continue training from a checkpoint.
    Resume(ResumeArgs),
    /// Deterministic rollout of a trained agent.
    Eval(EvalArgs),
    /// Feasibility map of a trained agent.
    Feasmap(FeasmapArgs),
    /// Reward heat map.
    Heatmap(HeatmapArgs),
    /// Minimum-time trajectory by pseudo-spectral collocation.
    PsSolve(PsArgs),
    /// DDPG rollout vs collocation solve, timed.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Specialized,
    General,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    agent: Option<Kind>,
    #[arg(long)]
    max_episodes: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    stop_reward: Option<f64>,
    /// Follow up with the low-noise resume phase from the scenario file.
    #[arg(long)]
    two_phase: bool,
}

#[derive(Args, Debug)]
struct ResumeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Constant exploration sigma in degrees.
    #[arg(long)]
    sigma_deg: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    stop_reward: Option<f64>,
    #[arg(long)]
    max_episodes: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Start point `x,y`; defaults to the scenario start.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    start: Option<Point2<f64>>,
    /// Trajectory CSV destination; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FeasmapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "feasmap")]
    name: String,
    /// Grid as `x0,y0,spacing,nx,ny`.
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
    grid: Option<GridSpec>,
    #[arg(long)]
    step_cap: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "heatmap")]
    name: String,
    #[arg(long)]
    spacing: Option<f64>,
}

#[derive(Args, Debug)]
struct PsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    start: Option<Point2<f64>>,
    #[arg(long)]
    intervals: Option<usize>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Replace the speed equality with a speed cap.
    #[arg(long)]
    free_speed: bool,
    #[arg(long)]
    opt_tol: Option<f64>,
    #[arg(long)]
    feas_tol: Option<f64>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Start points `x,y`; repeatable. Defaults to the scenario list.
    #[arg(long = "start", value_parser = parse_point, allow_hyphen_values = true)]
    starts: Vec<Point2<f64>>,
}

fn parse_numbers(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_point(s: &str) -> Result<Point2<f64>, String> {
    let v = parse_numbers(s, 2)?;
    Ok(Point2::new(v[0], v[1]))
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let v = parse_numbers(s, 5)?;
    let count = |x: f64| {
        if x >= 1.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(format!("grid counts must be positive integers, got {x}"))
        }
    };
    Ok(GridSpec {
        origin: Point2::new(v[0], v[1]),
        spacing: v[2],
        nx: count(v[3])?,
        ny: count(v[4])?,
    })
}

enum Outcome {
    Success,
    NotConverged(String),
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    write_text(path, &serde_json::to_string_pretty(value).expect("json serializes"))
}

fn save_training(out: &Path, result: &TrainResult, config: &RunConfig) -> Result<serde_json::Value, Error> {
    result.checkpoint.save(&out.join("checkpoint"))?;
    write_text(&out.join("curve.csv"), &result.curve.to_csv())?;
    let eval = result.checkpoint.evaluate(config.env.start)?;
    write_text(&out.join("eval.csv"), &eval.to_csv())?;
    Ok(json!({
        "status": format!("{:?}", result.status),
        "episodes": result.curve.rows.len(),
        "final_avg_reward": result.curve.last_avg(),
        "checkpoint_id": result.checkpoint.id(),
        "eval_outcome": eval.outcome.as_str(),
        "eval_steps": eval.steps(),
        "eval_travel_time": eval.travel_time(),
    }))
}

fn status_outcome(status: &TrainStatus, what: &str) -> Outcome {
    match status {
        TrainStatus::Converged => Outcome::Success,
        TrainStatus::NotConverged => Outcome::NotConverged(format!("{what} did not reach its reward threshold")),
        TrainStatus::Aborted(reason) => Outcome::NotConverged(format!("{what} aborted: {reason}")),
    }
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.training.seed = seed;
    }
    match cli.command {
        Command::Train(a) => {
            if let Some(kind) = a.agent {
                config.training.agent_kind = match kind {
                    Kind::Specialized => AgentKind::Specialized,
                    Kind::General => AgentKind::General,
                };
            }
            if let Some(n) = a.max_episodes {
                config.training.max_episodes = n;
            }
            if let Some(r) = a.stop_reward {
                config.training.stop_reward = r;
            }
            config.validate()?;
            let (first, second) = if a.two_phase {
                train_two_phase(&config)?
            } else {
                (trainer::train(config.train_config())?, None)
            };
            let mut summary = json!({ "phase1": save_training(&a.out.join("phase1"), &first, &config)? });
            let last = match second {
                Some(second) => {
                    summary["phase2"] = save_training(&a.out.join("phase2"), &second, &config)?;
                    second
                }
                None => first,
            };
            let outcome = status_outcome(&last.status, "training");
            summary["final"] = save_training(&a.out, &last, &config)?;
            write_json(&a.out.join("summary.json"), &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary["final"]).expect("json"));
            Ok(outcome)
        }
        Command::Resume(a) => {
            let checkpoint = Checkpoint::load(&a.checkpoint)?;
            let overrides = ResumeOverrides {
                stop_reward: a.stop_reward.or(Some(config.training.resume_stop_reward)),
                sigma: Some(a.sigma_deg.unwrap_or(config.training.resume_sigma_deg).to_radians()),
                max_episodes: a.max_episodes.or(Some(config.training.resume_max_episodes)),
                reseed: cli.seed,
            };
            let expected = config.train_config().env;
            let result = trainer::resume(checkpoint, Some(&expected), &overrides)?;
            let summary = save_training(&a.out, &result, &config)?;
            write_json(&a.out.join("summary.json"), &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
            Ok(status_outcome(&result.status, "resumed training"))
        }
        Command::Eval(a) => {
            let checkpoint = Checkpoint::load(&a.checkpoint)?;
            let start = a.start.unwrap_or(config.env.start);
            let traj = checkpoint.evaluate(start)?;
            match &a.out {
                Some(path) => write_text(path, &traj.to_csv())?,
                None => print!("{}", traj.to_csv()),
            }
            eprintln!(
                "outcome: {} after {} steps, travel time {}",
                traj.outcome,
                traj.steps(),
                traj.travel_time()
            );
            Ok(if traj.reached() {
                Outcome::Success
            } else {
                Outcome::NotConverged(format!("rollout ended with {}", traj.outcome))
            })
        }
        Command::Feasmap(a) => {
            let checkpoint = Checkpoint::load(&a.checkpoint)?;
            let grid = a.grid.unwrap_or(config.feasibility.grid);
            let map = build_map(
                &checkpoint,
                checkpoint.env(),
                grid,
                a.step_cap.unwrap_or(config.feasibility.step_cap),
                a.workers.unwrap_or(config.feasibility.workers),
            )?;
            map.write(&a.out, &a.name)?;
            println!("{}", serde_json::to_string_pretty(&map_stats(&map)).expect("json"));
            Ok(Outcome::Success)
        }
        Command::Heatmap(a) => {
            let h = heatmap(
                &config.reward,
                config.env.destination,
                config.env.zone_center,
                config.heatmap.bounds,
                a.spacing.unwrap_or(config.heatmap.spacing),
            )?;
            h.write(&a.out, &a.name)?;
            println!("{}", serde_json::to_string_pretty(&h.meta()).expect("json"));
            Ok(Outcome::Success)
        }
        Command::PsSolve(a) => {
            let mut ocp = config.ocp();
            if let Some(s) = a.start {
                ocp.start = s;
            }
            if a.free_speed {
                ocp.speed_mode = SpeedMode::Capped;
            }
            let mut settings = config.collocation_settings();
            settings.intervals = a.intervals.unwrap_or(settings.intervals);
            settings.nodes = a.nodes.unwrap_or(settings.nodes);
            settings.solver.opt_tol = a.opt_tol.unwrap_or(settings.solver.opt_tol);
            settings.solver.feas_tol = a.feas_tol.unwrap_or(settings.solver.feas_tol);
            let (sol, oracle) = solve_ocp(&ocp, &settings)?;
            write_text(&a.out.join("solution.csv"), &sol.to_csv())?;
            let summary = serde_json::to_value(sol.summary(oracle.t_min)).expect("json");
            write_json(&a.out.join("summary.json"), &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
            Ok(if sol.converged {
                Outcome::Success
            } else {
                Outcome::NotConverged(format!(
                    "solver stopped with violation {:e}, stationarity {:e}",
                    sol.max_violation, sol.stationarity
                ))
            })
        }
        Command::Compare(a) => {
            let checkpoint = Checkpoint::load(&a.checkpoint)?;
            let starts = if a.starts.is_empty() { config.compare.starts.clone() } else { a.starts };
            let report = compare(
                &starts,
                &checkpoint,
                &config.ocp(),
                &config.collocation_settings(),
                config.compare.repetitions,
            )?;
            write_text(&a.out.join("compare.csv"), &report.to_csv())?;
            let value = serde_json::to_value(&report).expect("json");
            write_json(&a.out.join("compare.json"), &value)?;
            println!("{}", serde_json::to_string_pretty(&value["summary"]).expect("json"));
            Ok(Outcome::Success)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged(msg)) => {
            eprintln!("not-converged: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(2)
        }
    }
}
