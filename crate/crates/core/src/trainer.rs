//! Episode orchestration: specialized (fixed start) and general (random
//! start) agents, moving-average stopping, noise annealing, checkpoints.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ddpg::{encode_state, DdpgAgent, DdpgConfig, ReplayBuffer, StepReport, Transition};
use crate::environment::{self, AgentState, EnvConfig, StepOutcome, Terminal, Trajectory};
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::io::{fmt_sig, parse_csv, parse_field, read_text, write_text};
use crate::reward::{RewardField, RewardParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Specialized,
    General,
}

/// Serializes non-finite floats as strings so thresholds like `-inf` survive JSON.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else {
            Repr::Text(v.to_string()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub env: EnvConfig<f64>,
    pub ddpg: DdpgConfig,
    pub reward: RewardParams<f64>,
    pub agent_kind: AgentKind,
    #[serde(with = "extended_float")]
    pub stop_reward: f64,
    pub eval_window: usize,
    pub max_episodes: usize,
    /// Episodes between on-disk checkpoints; 0 disables periodic saving.
    pub checkpoint_every: usize,
    pub seed: u64,
    /// End training episodes on arrival. When false the vehicle flies through
    /// the destination neighborhood and the episode runs to the step cap.
    pub terminate_on_arrival: bool,
    /// Transitions collected before the first gradient step.
    pub warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            ddpg: DdpgConfig::default(),
            reward: RewardParams::default(),
            agent_kind: AgentKind::Specialized,
            stop_reward: 12_000.0,
            eval_window: 20,
            max_episodes: 5000,
            checkpoint_every: 0,
            seed: 0,
            terminate_on_arrival: false,
            warmup_steps: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ddpg.validate()?;
        self.reward.validate()?;
        if self.stop_reward.is_nan() || self.stop_reward == f64::INFINITY {
            return Err(Error::Config(format!("stop_reward must be finite or -inf, got {}", self.stop_reward)));
        }
        if self.eval_window == 0 {
            return Err(Error::Config("eval_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-step reward: the potential field plus the arrival bonus on any step
/// that lands in the destination neighborhood.
#[derive(Clone, Debug)]
pub struct EpisodeRewards {
    field: RewardField<f64>,
    terminal_bonus: f64,
}

impl EpisodeRewards {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            field: RewardField::new(&config.reward, config.env.destination, config.env.zone_center)?,
            terminal_bonus: config.reward.terminal_bonus,
        })
    }

    pub fn step_reward(&self, action: f64, outcome: &StepOutcome<f64>) -> f64 {
        let r = self.field.eval(outcome.next_state.position(), action);
        if outcome.terminal == Terminal::ReachedDestination {
            r + self.terminal_bonus
        } else {
            r
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub reward: f64,
    pub steps: usize,
    pub outcome: Terminal,
    pub sigma: f64,
    pub avg_reward: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve {
    pub rows: Vec<CurveRow>,
}

impl TrainingCurve {
    pub const CSV_HEADER: &'static str = "episode,reward,steps,outcome,sigma,avg_reward";

    /// Moving average of the last `window` rewards including `reward`.
    fn push(&mut self, episode: usize, reward: f64, steps: usize, outcome: Terminal, sigma: f64, window: usize) -> f64 {
        let tail = self.rows.len().saturating_sub(window - 1);
        let recent = &self.rows[tail..];
        let avg = (recent.iter().map(|r| r.reward).sum::<f64>() + reward) / (recent.len() + 1) as f64;
        self.rows.push(CurveRow {
            episode,
            reward,
            steps,
            outcome,
            sigma,
            avg_reward: avg,
        });
        avg
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.episode,
                fmt_sig(r.reward, 17),
                r.steps,
                r.outcome,
                fmt_sig(r.sigma, 17),
                fmt_sig(r.avg_reward, 17)
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = parse_csv(text, Self::CSV_HEADER)?
            .into_iter()
            .map(|f| {
                Ok(CurveRow {
                    episode: parse_field(f[0], "episode")?,
                    reward: parse_field(f[1], "reward")?,
                    steps: parse_field(f[2], "steps")?,
                    outcome: f[3].parse()?,
                    sigma: parse_field(f[4], "sigma")?,
                    avg_reward: parse_field(f[5], "avg_reward")?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn last_avg(&self) -> Option<f64> {
        self.rows.last().map(|r| r.avg_reward)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let bytes = hex::decode(&self.seed).map_err(|e| Error::Parse(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Parse("rng seed must be 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(parse_field(&self.word_pos, "rng word position")?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub config: TrainConfig,
    pub rng: RngState,
    /// Episodes completed over the agent's lifetime.
    pub episode: usize,
    /// Episodes elapsed on the current noise schedule.
    pub schedule_position: usize,
    pub converged: bool,
    pub avg_reward: Option<f64>,
}

/// A frozen agent with the state needed to continue training it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub agent: DdpgAgent,
    pub meta: CheckpointMeta,
}

pub const CHECKPOINT_FORMAT: &str = "pathbench-agent-v1";
pub const META_FILE: &str = "agent.meta.json";

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.agent.save_networks(dir)?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("checkpoint meta serializes");
        write_text(&dir.join(META_FILE), &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta: CheckpointMeta = serde_json::from_str(&read_text(&meta_path)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", meta_path.display())))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::UnsupportedVersion(format!(
                "checkpoint format `{}`, expected {CHECKPOINT_FORMAT}",
                meta.format
            )));
        }
        let agent = DdpgAgent::load_networks(dir, meta.config.ddpg.clone())?;
        Ok(Self { agent, meta })
    }

    /// Short content hash of the actor parameters.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.agent.actor.to_text().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn env(&self) -> &EnvConfig<f64> {
        &self.meta.config.env
    }

    /// Deterministic rollout from `start` with the checkpoint's environment.
    pub fn evaluate(&self, start: Point2<f64>) -> Result<Trajectory<f64>> {
        self.evaluate_with_cap(start, self.env().max_steps)
    }

    pub fn evaluate_with_cap(&self, start: Point2<f64>, max_steps: usize) -> Result<Trajectory<f64>> {
        let env = EnvConfig {
            start,
            max_steps,
            ..self.env().clone()
        };
        if env.in_zone(start) {
            return Err(Error::Config(format!("start ({}, {}) lies inside the no-go zone", start.x, start.y)));
        }
        let config = TrainConfig {
            env: env.clone(),
            ..self.meta.config.clone()
        };
        let rewards = EpisodeRewards::new(&config)?;
        Ok(rollout_policy(&self.agent, &env, &rewards))
    }
}

/// Deterministic rollout from the environment's start with aim-at-destination
/// (or configured) heading.
pub fn rollout_policy(agent: &DdpgAgent, env: &EnvConfig<f64>, rewards: &EpisodeRewards) -> Trajectory<f64> {
    let heading = match env.start_heading {
        environment::HeadingPolicy::Fixed(h) => h,
        _ => env.aim_heading(env.start),
    };
    let initial = AgentState::new(env.start.x, env.start.y, heading);
    environment::rollout(initial, env, |s| agent.policy(s), |_, a, out| rewards.step_reward(a, out))
}

pub fn env_hash(env: &EnvConfig<f64>) -> String {
    let json = serde_json::to_string(env).expect("env serializes");
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainStatus {
    Converged,
    NotConverged,
    Aborted(String),
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub curve: TrainingCurve,
    pub status: TrainStatus,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResumeOverrides {
    pub stop_reward: Option<f64>,
    /// Constant exploration sigma for the resumed run.
    pub sigma: Option<f64>,
    /// Additional episode budget.
    pub max_episodes: Option<usize>,
    /// Replaces the saved random stream.
    pub reseed: Option<u64>,
}

pub struct Trainer {
    config: TrainConfig,
    agent: DdpgAgent,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    rewards: EpisodeRewards,
    episode: usize,
    schedule_position: usize,
    curve: TrainingCurve,
    checkpoint_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = DdpgAgent::new(config.ddpg.clone(), &mut rng)?;
        Self::assemble(config, agent, rng, 0, 0)
    }

    fn assemble(config: TrainConfig, agent: DdpgAgent, rng: ChaCha8Rng, episode: usize, schedule_position: usize) -> Result<Self> {
        Ok(Self {
            buffer: ReplayBuffer::new(config.ddpg.buffer_capacity)?,
            rewards: EpisodeRewards::new(&config)?,
            config,
            agent,
            rng,
            episode,
            schedule_position,
            curve: TrainingCurve::default(),
            checkpoint_dir: None,
        })
    }

    /// Continues from a checkpoint with a fresh replay buffer.
    pub fn from_checkpoint(checkpoint: Checkpoint, overrides: &ResumeOverrides) -> Result<Self> {
        let meta = checkpoint.meta;
        let mut config = meta.config;
        let mut schedule_position = meta.schedule_position;
        if let Some(stop) = overrides.stop_reward {
            config.stop_reward = stop;
        }
        if let Some(sigma) = overrides.sigma {
            config.ddpg.noise = config.ddpg.noise.constant(sigma);
            schedule_position = 0;
        }
        if let Some(n) = overrides.max_episodes {
            config.max_episodes = n;
        }
        config.validate()?;
        let mut agent = checkpoint.agent;
        agent.config = config.ddpg.clone();
        let rng = match overrides.reseed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => meta.rng.restore()?,
        };
        Self::assemble(config, agent, rng, meta.episode, schedule_position)
    }

    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn agent(&self) -> &DdpgAgent {
        &self.agent
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn curve(&self) -> &TrainingCurve {
        &self.curve
    }

    pub fn checkpoint(&self, converged: bool) -> Checkpoint {
        Checkpoint {
            agent: self.agent.clone(),
            meta: CheckpointMeta {
                format: CHECKPOINT_FORMAT.to_string(),
                config: self.config.clone(),
                rng: RngState::capture(&self.rng),
                episode: self.episode,
                schedule_position: self.schedule_position,
                converged,
                avg_reward: self.curve.last_avg(),
            },
        }
    }

    fn sample_start(&mut self) -> Result<AgentState<f64>> {
        let env = &self.config.env;
        match self.config.agent_kind {
            AgentKind::Specialized => environment::reset(env, &mut self.rng),
            AgentKind::General => {
                let b = env.world_bounds;
                let clearance = env.zone_radius + env.step_length();
                loop {
                    let p = Point2::new(
                        self.rng.random_range(b.min.x..=b.max.x),
                        self.rng.random_range(b.min.y..=b.max.y),
                    );
                    if p.dist(env.zone_center) > clearance {
                        return Ok(AgentState::new(p.x, p.y, env.aim_heading(p)));
                    }
                }
            }
        }
    }

    /// Runs one exploratory episode, learning after every step. The curve
    /// records the episode as reached when it entered the destination
    /// neighborhood before any failure.
    pub fn run_episode(&mut self) -> Result<Trajectory<f64>> {
        let sigma = self.config.ddpg.noise.sigma_at(self.schedule_position);
        self.agent.sigma = sigma;
        self.agent.reset_noise();
        let initial = self.sample_start()?;
        let env = self.config.env.clone();
        let mut traj = Trajectory {
            states: vec![initial],
            actions: Vec::new(),
            rewards: Vec::new(),
            terminals: Vec::new(),
            outcome: env.classify(initial.position()),
            time_step: env.time_step,
        };
        let mut state = initial;
        let mut arrived = traj.outcome == Terminal::ReachedDestination;
        let learn_after = self.config.warmup_steps.max(self.config.ddpg.batch_size);
        let scale = self.config.ddpg.reward_scale;
        let ends = |t: Terminal| match t {
            Terminal::ReachedDestination => self.config.terminate_on_arrival,
            other => other.is_terminal(),
        };
        let mut k = 0;
        while !ends(traj.outcome) && k < env.max_steps {
            k += 1;
            let enc = encode_state(&state);
            let action = self.agent.act_exploratory(&enc, &mut self.rng);
            let mut out = environment::step(&state, action, &env);
            let done = ends(out.terminal);
            if !done && k == env.max_steps && out.terminal == Terminal::None {
                out.terminal = Terminal::MaxSteps;
            }
            out.reward = self.rewards.step_reward(action, &out);
            self.buffer.push(Transition {
                state: enc,
                action,
                reward: scale * out.reward,
                next_state: encode_state(&out.next_state),
                // time-limit truncation bootstraps
                terminal: done,
            });
            if self.buffer.len() >= learn_after {
                if let StepReport::Trained(d) = self.agent.train_step(&self.buffer, &mut self.rng)? {
                    if !(d.critic_loss.is_finite() && d.actor_objective.is_finite()) {
                        return Err(Error::Numerical(format!(
                            "non-finite training loss at episode {}",
                            self.episode + 1
                        )));
                    }
                }
            }
            arrived |= out.terminal == Terminal::ReachedDestination;
            traj.states.push(out.next_state);
            traj.actions.push(action);
            traj.rewards.push(out.reward);
            traj.terminals.push(out.terminal);
            traj.outcome = out.terminal;
            state = out.next_state;
        }
        let failed = matches!(traj.outcome, Terminal::EnteredZone | Terminal::OutOfBounds);
        let outcome = if arrived && !failed { Terminal::ReachedDestination } else { traj.outcome };
        self.episode += 1;
        self.schedule_position += 1;
        self.curve.push(self.episode, traj.total_reward(), traj.steps(), outcome, sigma, self.config.eval_window);
        Ok(traj)
    }

    /// Trains until the moving average reaches `stop_reward` or the episode
    /// budget is spent. Without convergence the best-average snapshot is returned.
    pub fn train(mut self) -> Result<TrainResult> {
        let mut best: Option<(f64, Checkpoint)> = None;
        for n in 0..self.config.max_episodes {
            if let Err(e) = self.run_episode() {
                let Error::Numerical(reason) = e else {
                    return Err(e);
                };
                let checkpoint = self.checkpoint(false);
                self.save_periodic(&checkpoint, true)?;
                return Ok(TrainResult {
                    checkpoint,
                    curve: self.curve,
                    status: TrainStatus::Aborted(reason),
                });
            }
            let avg = self.curve.last_avg().expect("episode recorded");
            if avg >= self.config.stop_reward {
                let checkpoint = self.checkpoint(true);
                self.save_periodic(&checkpoint, true)?;
                return Ok(TrainResult {
                    checkpoint,
                    curve: self.curve,
                    status: TrainStatus::Converged,
                });
            }
            let full_window = self.curve.rows.len() >= self.config.eval_window;
            if full_window && best.as_ref().is_none_or(|(b, _)| avg > *b) {
                best = Some((avg, self.checkpoint(false)));
            }
            if self.config.checkpoint_every > 0 && (n + 1) % self.config.checkpoint_every == 0 {
                let checkpoint = self.checkpoint(false);
                self.save_periodic(&checkpoint, false)?;
            }
        }
        let checkpoint = match best {
            Some((_, c)) => c,
            None => self.checkpoint(false),
        };
        self.save_periodic(&checkpoint, true)?;
        Ok(TrainResult {
            checkpoint,
            curve: self.curve,
            status: TrainStatus::NotConverged,
        })
    }

    fn save_periodic(&self, checkpoint: &Checkpoint, last: bool) -> Result<()> {
        let Some(dir) = &self.checkpoint_dir else {
            return Ok(());
        };
        checkpoint.save(dir)?;
        if last {
            write_text(&dir.join("curve.csv"), &self.curve.to_csv())?;
        }
        Ok(())
    }
}

pub fn train(config: TrainConfig) -> Result<TrainResult> {
    Trainer::new(config)?.train()
}

/// Resumes training. When `expected_env` is given it must match the
/// checkpoint's environment.
pub fn resume(checkpoint: Checkpoint, expected_env: Option<&EnvConfig<f64>>, overrides: &ResumeOverrides) -> Result<TrainResult> {
    if let Some(env) = expected_env {
        if env != checkpoint.env() {
            return Err(Error::Config(
                "scenario environment differs from the checkpoint's environment".into(),
            ));
        }
    }
    if overrides.max_episodes == Some(0) {
        return Ok(TrainResult {
            status: if checkpoint.meta.converged {
                TrainStatus::Converged
            } else {
                TrainStatus::NotConverged
            },
            checkpoint,
            curve: TrainingCurve::default(),
        });
    }
    Trainer::from_checkpoint(checkpoint, overrides)?.train()
}
