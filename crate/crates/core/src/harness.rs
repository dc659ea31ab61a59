//! Scenario configuration and the DDPG vs collocation comparison.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::collocation::{solve_ocp, CollocationSettings, OcpDefinition, SolverSettings, SpeedMode};
use crate::ddpg::DdpgConfig;
use crate::environment::{EnvConfig, Terminal};
use crate::error::{Error, Result};
use crate::feasibility::GridSpec;
use crate::geom::{Point2, Rect};
use crate::io::{fmt_sig, parse_csv, parse_field, read_text};
use crate::reward::RewardParams;
use crate::trainer::{self, env_hash, AgentKind, Checkpoint, ResumeOverrides, TrainConfig, TrainResult, TrainStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub agent_kind: AgentKind,
    pub seed: u64,
    pub stop_reward: f64,
    pub eval_window: usize,
    pub max_episodes: usize,
    pub checkpoint_every: usize,
    pub terminate_on_arrival: bool,
    pub warmup_steps: usize,
    /// Episode cap used instead of `env.max_steps` for the general agent.
    pub general_max_steps: usize,
    pub resume_stop_reward: f64,
    pub resume_sigma_deg: f64,
    pub resume_max_episodes: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            agent_kind: t.agent_kind,
            seed: t.seed,
            stop_reward: t.stop_reward,
            eval_window: t.eval_window,
            max_episodes: t.max_episodes,
            checkpoint_every: t.checkpoint_every,
            terminate_on_arrival: t.terminate_on_arrival,
            warmup_steps: t.warmup_steps,
            general_max_steps: 100,
            resume_stop_reward: 18_000.0,
            resume_sigma_deg: 2.0,
            resume_max_episodes: 3000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollocationSection {
    pub intervals: usize,
    pub nodes: usize,
    pub speed_mode: SpeedMode,
    pub solver: SolverSettings,
}

impl Default for CollocationSection {
    fn default() -> Self {
        let c = CollocationSettings::default();
        Self {
            intervals: c.intervals,
            nodes: c.nodes,
            speed_mode: SpeedMode::Equality,
            solver: c.solver,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeasibilitySection {
    pub grid: GridSpec,
    pub step_cap: usize,
    pub workers: usize,
}

impl Default for FeasibilitySection {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            step_cap: 100,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapSection {
    pub bounds: Rect<f64>,
    pub spacing: f64,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        Self {
            bounds: EnvConfig::<f64>::default().world_bounds,
            spacing: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareSection {
    pub starts: Vec<Point2<f64>>,
    pub repetitions: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            starts: vec![Point2::new(400.0, 400.0)],
            repetitions: 5,
        }
    }
}

/// Everything a CLI run needs, loaded from one TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvConfig<f64>,
    pub reward: RewardParams<f64>,
    pub ddpg: DdpgConfig,
    pub training: TrainingSection,
    pub collocation: CollocationSection,
    pub feasibility: FeasibilitySection,
    pub heatmap: HeatmapSection,
    pub compare: CompareSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.ocp().validate()?;
        self.feasibility.grid.validate()?;
        if self.compare.repetitions == 0 {
            return Err(Error::Config("compare.repetitions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        let mut env = self.env.clone();
        if t.agent_kind == AgentKind::General {
            env.max_steps = t.general_max_steps;
        }
        TrainConfig {
            env,
            ddpg: self.ddpg.clone(),
            reward: self.reward.clone(),
            agent_kind: t.agent_kind,
            stop_reward: t.stop_reward,
            eval_window: t.eval_window,
            max_episodes: t.max_episodes,
            checkpoint_every: t.checkpoint_every,
            seed: t.seed,
            terminate_on_arrival: t.terminate_on_arrival,
            warmup_steps: t.warmup_steps,
        }
    }

    pub fn resume_overrides(&self) -> ResumeOverrides {
        ResumeOverrides {
            stop_reward: Some(self.training.resume_stop_reward),
            sigma: Some(self.training.resume_sigma_deg.to_radians()),
            max_episodes: Some(self.training.resume_max_episodes),
            reseed: None,
        }
    }

    pub fn ocp(&self) -> OcpDefinition {
        OcpDefinition {
            start: self.env.start,
            dest: self.env.destination,
            zone_center: self.env.zone_center,
            zone_radius: self.env.zone_radius,
            speed: self.env.speed,
            speed_mode: self.collocation.speed_mode,
        }
    }

    pub fn collocation_settings(&self) -> CollocationSettings {
        CollocationSettings {
            intervals: self.collocation.intervals,
            nodes: self.collocation.nodes,
            solver: self.collocation.solver.clone(),
        }
    }
}

/// Initial training, then the low-noise resume phase from the scenario's
/// resume settings. The second phase is skipped when the first aborted.
pub fn train_two_phase(config: &RunConfig) -> Result<(TrainResult, Option<TrainResult>)> {
    let first = trainer::train(config.train_config())?;
    if matches!(first.status, TrainStatus::Aborted(_)) {
        return Ok((first, None));
    }
    let second = trainer::resume(first.checkpoint.clone(), None, &config.resume_overrides())?;
    Ok((first, Some(second)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub x0: f64,
    pub y0: f64,
    pub ddpg_time: f64,
    pub ddpg_outcome: Terminal,
    pub ddpg_wall_ms: f64,
    pub ps_tf: f64,
    pub ps_converged: bool,
    pub ps_wall_ms: f64,
    pub speed_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ps_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub checkpoint_id: String,
    pub env_hash: String,
    pub rows: usize,
    pub ddpg_reached: usize,
    pub ps_converged: usize,
    pub median_speed_ratio: f64,
    pub min_speed_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<CompareRow>,
    pub summary: CompareSummary,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Plans from every start with both methods. Planner failures are recorded
/// in the row; only invalid inputs are errors.
pub fn compare(
    starts: &[Point2<f64>],
    checkpoint: &Checkpoint,
    ocp: &OcpDefinition,
    settings: &CollocationSettings,
    repetitions: usize,
) -> Result<ComparisonReport> {
    if starts.is_empty() {
        return Err(Error::Config("compare needs at least one start point".into()));
    }
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(starts.len());
    for &start in starts {
        let mut times = Vec::with_capacity(repetitions);
        let mut traj = None;
        for _ in 0..repetitions {
            let clock = Instant::now();
            let t = checkpoint.evaluate(start)?;
            times.push(clock.elapsed().as_secs_f64() * 1e3);
            traj = Some(t);
        }
        let traj = traj.expect("at least one repetition");
        let ddpg_wall_ms = median(times);
        let problem = OcpDefinition { start, ..ocp.clone() };
        let clock = Instant::now();
        let ps = solve_ocp(&problem, settings);
        let ps_wall_ms = clock.elapsed().as_secs_f64() * 1e3;
        let (ps_tf, ps_converged, ps_error) = match ps {
            Ok((sol, _)) => (sol.t_f, sol.converged, None),
            Err(e) => (f64::NAN, false, Some(e.to_string())),
        };
        rows.push(CompareRow {
            x0: start.x,
            y0: start.y,
            ddpg_time: traj.travel_time(),
            ddpg_outcome: traj.outcome,
            ddpg_wall_ms,
            ps_tf,
            ps_converged,
            ps_wall_ms,
            speed_ratio: ps_wall_ms / ddpg_wall_ms.max(1e-9),
            ps_error,
        });
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.speed_ratio).collect();
    let summary = CompareSummary {
        checkpoint_id: checkpoint.id(),
        env_hash: env_hash(checkpoint.env()),
        rows: rows.len(),
        ddpg_reached: rows.iter().filter(|r| r.ddpg_outcome == Terminal::ReachedDestination).count(),
        ps_converged: rows.iter().filter(|r| r.ps_converged).count(),
        min_speed_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        median_speed_ratio: median(ratios),
    };
    Ok(ComparisonReport { rows, summary })
}

impl ComparisonReport {
    pub const CSV_HEADER: &'static str = "x0,y0,ddpg_time,ddpg_outcome,ddpg_wall_ms,ps_tf,ps_converged,ps_wall_ms,speed_ratio";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                fmt_sig(r.x0, 17),
                fmt_sig(r.y0, 17),
                fmt_sig(r.ddpg_time, 17),
                r.ddpg_outcome,
                fmt_sig(r.ddpg_wall_ms, 6),
                fmt_sig(r.ps_tf, 17),
                r.ps_converged,
                fmt_sig(r.ps_wall_ms, 6),
                fmt_sig(r.speed_ratio, 6)
            ));
        }
        out
    }

    /// Parses rows written by [`ComparisonReport::to_csv`].
    pub fn rows_from_csv(text: &str) -> Result<Vec<CompareRow>> {
        parse_csv(text, Self::CSV_HEADER)?
            .into_iter()
            .map(|f| {
                Ok(CompareRow {
                    x0: parse_field(f[0], "x0")?,
                    y0: parse_field(f[1], "y0")?,
                    ddpg_time: parse_field(f[2], "ddpg_time")?,
                    ddpg_outcome: f[3].parse()?,
                    ddpg_wall_ms: parse_field(f[4], "ddpg_wall_ms")?,
                    ps_tf: parse_field(f[5], "ps_tf")?,
                    ps_converged: parse_field(f[6], "ps_converged")?,
                    ps_wall_ms: parse_field(f[7], "ps_wall_ms")?,
                    speed_ratio: parse_field(f[8], "speed_ratio")?,
                    ps_error: None,
                })
            })
            .collect()
    }

    /// Planner outcomes with wall times removed, for reproducibility checks.
    pub fn outcomes(&self) -> Vec<(f64, f64, f64, Terminal, String, bool)> {
        self.rows
            .iter()
            .map(|r| (r.x0, r.y0, r.ddpg_time, r.ddpg_outcome, format!("{:?}", r.ps_tf), r.ps_converged))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c = RunConfig::from_toml("[env]\nzone_radius = 200.0\n[training]\nseed = 9\n").unwrap();
        assert_eq!(c.env.zone_radius, 200.0);
        assert_eq!(c.env.speed, 200.0);
        assert_eq!(c.training.seed, 9);
        assert_eq!(c.train_config().seed, 9);
    }

    #[test]
    fn invalid_config_is_config_error() {
        assert!(matches!(RunConfig::from_toml("[env]\nzone_radius = 900.0\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("env = 3"), Err(Error::Config(_))));
    }

    #[test]
    fn general_agent_uses_long_episodes() {
        let mut c = RunConfig::default();
        c.training.agent_kind = AgentKind::General;
        assert_eq!(c.train_config().env.max_steps, 100);
        assert_eq!(RunConfig::default().train_config().env.max_steps, 24);
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
