//! Deep deterministic policy gradient: replay, exploration noise, target
//! networks, critic regression and actor ascent through the critic.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::environment::AgentState;
use crate::error::{Error, Result};
use crate::io::{read_text, write_text};
use crate::neuralnet::{Activation, DenseNetwork, GradientUpdater, Gradients, UpdaterKind};

pub const STATE_DIM: usize = 4;
/// Positions are divided by this before entering the networks.
pub const POSITION_SCALE: f64 = 1000.0;

pub type EncodedState = [f64; STATE_DIM];

/// `(x / 1000, y / 1000, cos heading, sin heading)`; continuous across the heading wrap.
pub fn encode_state(s: &AgentState<f64>) -> EncodedState {
    [
        s.x / POSITION_SCALE,
        s.y / POSITION_SCALE,
        s.heading.cos(),
        s.heading.sin(),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: EncodedState,
    pub action: f64,
    pub reward: f64,
    pub next_state: EncodedState,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Parameter("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample with replacement; `None` while fewer than `batch` items are stored.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some((0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Ou,
}

/// Exploration noise with a linear sigma schedule over episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Radians.
    pub sigma_initial: f64,
    pub sigma_final: f64,
    /// Episodes over which sigma moves from initial to final.
    pub decay_episodes: usize,
    pub ou_theta: f64,
    pub ou_mu: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma_initial: 30f64.to_radians(),
            sigma_final: 5f64.to_radians(),
            decay_episodes: 300,
            ou_theta: 0.15,
            ou_mu: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn sigma_at(&self, episode: usize) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.sigma_final;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.sigma_initial + (self.sigma_final - self.sigma_initial) * frac
    }

    /// Constant sigma.
    pub fn constant(mut self, sigma: f64) -> Self {
        self.sigma_initial = sigma;
        self.sigma_final = sigma;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Largest heading change per step, radians.
    pub action_bound: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Multiplies environment rewards before they enter the replay buffer.
    pub reward_scale: f64,
    pub noise: NoiseConfig,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 64,
            buffer_capacity: 100_000,
            action_bound: std::f64::consts::FRAC_PI_3,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            hidden_activation: Activation::Relu,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            reward_scale: 1e-4,
            noise: NoiseConfig::default(),
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch_size <= buffer_capacity".into());
        }
        if !(self.action_bound > 0.0 && self.action_bound.is_finite()) {
            return bad("action_bound must be positive".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive".into());
        }
        let n = &self.noise;
        if !(n.sigma_initial >= 0.0 && n.sigma_final >= 0.0 && n.sigma_final <= n.sigma_initial) {
            return bad("noise needs 0 <= sigma_final <= sigma_initial".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainDiagnostics {
    pub critic_loss: f64,
    /// Mean critic value of the current policy's actions over the batch.
    pub actor_objective: f64,
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepReport {
    Trained(TrainDiagnostics),
    InsufficientData { stored: usize, needed: usize },
}

#[derive(Clone, Debug)]
pub struct DdpgAgent {
    pub actor: DenseNetwork<f64>,
    pub critic: DenseNetwork<f64>,
    pub target_actor: DenseNetwork<f64>,
    pub target_critic: DenseNetwork<f64>,
    actor_opt: GradientUpdater<f64>,
    critic_opt: GradientUpdater<f64>,
    pub config: DdpgConfig,
    /// Current exploration standard deviation, radians.
    pub sigma: f64,
    ou_state: f64,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(config: DdpgConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut actor_dims = vec![STATE_DIM];
        actor_dims.extend(&config.actor_hidden);
        actor_dims.push(1);
        let mut critic_dims = vec![STATE_DIM + 1];
        critic_dims.extend(&config.critic_hidden);
        critic_dims.push(1);
        let actor = DenseNetwork::new(&actor_dims, config.hidden_activation, Activation::Tanh, rng)?;
        let critic = DenseNetwork::new(&critic_dims, config.hidden_activation, Activation::Linear, rng)?;
        Self::from_networks(actor.clone(), critic.clone(), actor, critic, config)
    }

    pub fn from_networks(
        actor: DenseNetwork<f64>,
        critic: DenseNetwork<f64>,
        target_actor: DenseNetwork<f64>,
        target_critic: DenseNetwork<f64>,
        config: DdpgConfig,
    ) -> Result<Self> {
        config.validate()?;
        if actor.input_dim() != STATE_DIM || actor.output_dim() != 1 || actor.output_activation() != Activation::Tanh {
            return Err(Error::Shape(format!("actor must map {STATE_DIM} inputs to one tanh output")));
        }
        if critic.input_dim() != STATE_DIM + 1 || critic.output_dim() != 1 {
            return Err(Error::Shape(format!("critic must map {} inputs to one output", STATE_DIM + 1)));
        }
        if target_actor.dims() != actor.dims() || target_critic.dims() != critic.dims() {
            return Err(Error::Shape("target networks must match their sources".into()));
        }
        Ok(Self {
            actor_opt: GradientUpdater::new(config.actor_lr, UpdaterKind::adam())?,
            critic_opt: GradientUpdater::new(config.critic_lr, UpdaterKind::adam())?,
            sigma: config.noise.sigma_initial,
            actor,
            critic,
            target_actor,
            target_critic,
            config,
            ou_state: 0.0,
        })
    }

    /// Squashed actor output in `[-1, 1]`.
    fn unit_action(net: &DenseNetwork<f64>, s: &EncodedState) -> f64 {
        net.forward(s).expect("actor input is STATE_DIM wide")[0]
    }

    pub fn act_deterministic(&self, s: &EncodedState) -> f64 {
        self.config.action_bound * Self::unit_action(&self.actor, s)
    }

    pub fn policy(&self, s: &AgentState<f64>) -> f64 {
        self.act_deterministic(&encode_state(s))
    }

    /// Deterministic action plus noise, clamped to the action bound.
    pub fn act_exploratory<R: Rng + ?Sized>(&mut self, s: &EncodedState, rng: &mut R) -> f64 {
        let base = self.act_deterministic(s);
        let noise = self.sample_noise(rng);
        (base + noise).clamp(-self.config.action_bound, self.config.action_bound)
    }

    fn sample_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        let n: f64 = rng.sample(StandardNormal);
        match self.config.noise.kind {
            NoiseKind::Gaussian => self.sigma * n,
            NoiseKind::Ou => {
                let cfg = &self.config.noise;
                self.ou_state += cfg.ou_theta * (cfg.ou_mu - self.ou_state) + self.sigma * n;
                self.ou_state
            }
        }
    }

    /// Restarts the correlated noise process; call at episode start.
    pub fn reset_noise(&mut self) {
        self.ou_state = self.config.noise.ou_mu;
    }

    fn critic_input(s: &EncodedState, unit_action: f64) -> [f64; STATE_DIM + 1] {
        [s[0], s[1], s[2], s[3], unit_action]
    }

    pub fn q_value(&self, s: &EncodedState, action: f64) -> f64 {
        let input = Self::critic_input(s, action / self.config.action_bound);
        self.critic.forward(&input).expect("critic input width")[0]
    }

    /// `y = r + gamma * Q'(s', pi'(s'))`, or `y = r` for terminal transitions.
    pub fn critic_target(&self, batch: &[&Transition]) -> Vec<f64> {
        batch
            .iter()
            .map(|t| {
                if t.terminal {
                    t.reward
                } else {
                    let a = Self::unit_action(&self.target_actor, &t.next_state);
                    let q = self
                        .target_critic
                        .forward(&Self::critic_input(&t.next_state, a))
                        .expect("critic input width")[0];
                    t.reward + self.config.gamma * q
                }
            })
            .collect()
    }

    /// One Adam step on the mean squared Bellman error; returns (loss, grad norm).
    pub fn update_critic(&mut self, batch: &[&Transition]) -> Result<(f64, f64)> {
        let targets = self.critic_target(batch);
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.critic);
        let mut loss = 0.0;
        for (t, y) in batch.iter().zip(&targets) {
            let input = Self::critic_input(&t.state, t.action / self.config.action_bound);
            let cache = self.critic.forward_cached(&input)?;
            let err = cache.output()[0] - y;
            loss += err * err;
            self.critic.backward_into(&cache, &[2.0 * err / n], &mut grads)?;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("critic loss is {loss}")));
        }
        let norm = grads.norm();
        self.critic_opt.apply(&mut self.critic, &grads)?;
        Ok((loss, norm))
    }

    /// One Adam step ascending the mean critic value of the policy's actions.
    pub fn update_actor(&mut self, batch: &[&Transition]) -> Result<(f64, f64)> {
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.actor);
        let mut objective = 0.0;
        for t in batch {
            let acache = self.actor.forward_cached(&t.state)?;
            let u = acache.output()[0];
            let ccache = self.critic.forward_cached(&Self::critic_input(&t.state, u))?;
            objective += ccache.output()[0];
            let dq = self.critic.input_gradient(&ccache, &[1.0])?;
            // minimize -Q
            self.actor.backward_into(&acache, &[-dq[STATE_DIM] / n], &mut grads)?;
        }
        let norm = grads.norm();
        self.actor_opt.apply(&mut self.actor, &grads)?;
        Ok((objective / n, norm))
    }

    pub fn update_targets(&mut self) -> Result<()> {
        self.target_actor.soft_update(&self.actor, self.config.tau)?;
        self.target_critic.soft_update(&self.critic, self.config.tau)
    }

    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<StepReport> {
        let Some(batch) = buffer.sample(self.config.batch_size, rng) else {
            return Ok(StepReport::InsufficientData {
                stored: buffer.len(),
                needed: self.config.batch_size,
            });
        };
        let (critic_loss, critic_grad_norm) = self.update_critic(&batch)?;
        let (actor_objective, actor_grad_norm) = self.update_actor(&batch)?;
        self.update_targets()?;
        Ok(StepReport::Trained(TrainDiagnostics {
            critic_loss,
            actor_objective,
            critic_grad_norm,
            actor_grad_norm,
        }))
    }

    pub const NETWORK_FILES: [&'static str; 4] = ["actor.nn", "critic.nn", "target_actor.nn", "target_critic.nn"];

    pub fn save_networks(&self, dir: &Path) -> Result<()> {
        for (name, net) in Self::NETWORK_FILES.iter().zip(self.networks()) {
            write_text(&dir.join(name), &net.to_text())?;
        }
        Ok(())
    }

    pub fn load_networks(dir: &Path, config: DdpgConfig) -> Result<Self> {
        let mut nets = Vec::with_capacity(4);
        for name in Self::NETWORK_FILES {
            nets.push(DenseNetwork::from_text(&read_text(&dir.join(name))?)?);
        }
        let [actor, critic, target_actor, target_critic]: [DenseNetwork<f64>; 4] =
            nets.try_into().expect("four networks loaded");
        Self::from_networks(actor, critic, target_actor, target_critic, config)
    }

    pub fn networks(&self) -> [&DenseNetwork<f64>; 4] {
        [&self.actor, &self.critic, &self.target_actor, &self.target_critic]
    }
}
