//! Deep Q-learning: epsilon-greedy interaction, experience replay and a periodically
//! synchronized target network.

mod replay;

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, DrivingEnv, EnvConfig};
use crate::error::{Error, Result};
use crate::neural::{
    huber_loss, AdamConfig, AdamState, Checkpoint, DuelingCombine, NetworkParams, NetworkSpec,
};
use crate::road::ScenarioConfig;
use crate::seeding;

pub use replay::{ReplayBuffer, Transition};

/// One environment transition as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Terminal: the value of `obs` is not bootstrapped.
    pub done: bool,
    /// The episode ends here but `obs` is not terminal.
    pub truncated: bool,
}

/// Minimal episodic interface the learner trains against.
pub trait Environment {
    fn observation_len(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: usize) -> Result<EnvStep>;
}

/// Driving episodes on a fixed scenario; each reset rebuilds the world with a new seed.
#[derive(Debug, Clone)]
pub struct ScenarioEnv {
    scenario: ScenarioConfig,
    env_cfg: EnvConfig,
    current: Option<DrivingEnv>,
}

impl ScenarioEnv {
    pub fn new(scenario: &ScenarioConfig, env_cfg: &EnvConfig) -> Result<Self> {
        scenario.validate()?;
        env_cfg.validate()?;
        Ok(ScenarioEnv {
            scenario: scenario.clone(),
            env_cfg: env_cfg.clone(),
            current: None,
        })
    }

    pub fn current(&self) -> Option<&DrivingEnv> {
        self.current.as_ref()
    }
}

impl Environment for ScenarioEnv {
    fn observation_len(&self) -> usize {
        self.env_cfg.observation_len()
    }

    fn n_actions(&self) -> usize {
        Action::COUNT
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let (env, obs) = DrivingEnv::reset(&self.scenario, &self.env_cfg, seed)?;
        self.current = Some(env);
        Ok(obs.0)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let env = self
            .current
            .as_mut()
            .ok_or_else(|| Error::Contract("step before reset".into()))?;
        let out = env.step(Action::from_index(action)?)?;
        Ok(EnvStep {
            obs: out.observation.0,
            reward: out.reward,
            done: out.done,
            truncated: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub episodes: usize,
    pub adam: AdamConfig,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Decay constant of the exponential schedule, in policy steps.
    pub epsilon_decay: f64,
    /// Gradient steps between target-network synchronizations.
    pub target_update_period: u64,
    /// Transitions collected before the first gradient step.
    pub warmup: usize,
    pub buffer_capacity: usize,
    pub trunk: Vec<usize>,
    pub stream: Vec<usize>,
    pub combine: DuelingCombine,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            batch_size: 100,
            episodes: 3072,
            adam: AdamConfig::default(),
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 6000.0,
            target_update_period: 50,
            warmup: 1000,
            buffer_capacity: 15_000,
            trunk: vec![256, 192, 128],
            stream: vec![128, 128],
            combine: DuelingCombine::MeanCentered,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the compact network.
    pub fn compact() -> Self {
        let spec = NetworkSpec::compact(1, 1);
        TrainConfig {
            trunk: spec.trunk,
            stream: spec.stream,
            ..TrainConfig::default()
        }
    }

    pub fn network_spec(&self, input_dim: usize, n_actions: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            n_actions,
            trunk: self.trunk.clone(),
            stream: self.stream.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("batch_size must be positive and at most buffer_capacity");
        }
        if !(0.0..=1.0).contains(&self.epsilon_end)
            || !(0.0..=1.0).contains(&self.epsilon_start)
            || self.epsilon_end > self.epsilon_start
        {
            return bad("epsilon bounds must satisfy 0 <= end <= start <= 1");
        }
        if !(self.epsilon_decay > 0.0) {
            return bad("epsilon_decay must be positive");
        }
        if self.target_update_period == 0 {
            return bad("target_update_period must be positive");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        self.network_spec(1, 1).validate()
    }

    /// Exploration rate after `steps` policy steps.
    pub fn epsilon_at(&self, steps: u64) -> f64 {
        self.epsilon_end
            + (self.epsilon_start - self.epsilon_end) * (-(steps as f64) / self.epsilon_decay).exp()
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn greedy_action(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice. One uniform draw decides exploration, a second picks the action.
pub fn select_action<R: Rng + ?Sized>(
    params: &NetworkParams,
    obs: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Contract(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rng.gen::<f64>() < epsilon {
        Ok(rng.gen_range(0..params.n_actions()))
    } else {
        Ok(greedy_action(&params.q_values(obs)?))
    }
}

/// `r` for terminal transitions, else `r + gamma * max_a Q_target(next, a)`.
pub fn td_targets(batch: &[&Transition], target: &NetworkParams, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let x: Vec<f64> = batch
        .iter()
        .flat_map(|t| t.next_obs.iter().copied())
        .collect();
    let q = target.forward_batch(&x, batch.len())?.q;
    let n = target.n_actions();
    Ok(batch
        .iter()
        .zip(q.chunks_exact(n))
        .map(|(t, q)| {
            if t.done {
                t.reward
            } else {
                t.reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub target_synced: bool,
}

/// Online and target networks, optimizer and replay memory.
#[derive(Debug, Clone)]
pub struct Learner {
    pub online: NetworkParams,
    pub target: NetworkParams,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
    pub grad_steps: u64,
    cfg: TrainConfig,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(
        cfg: &TrainConfig,
        input_dim: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let online =
            NetworkParams::init(&cfg.network_spec(input_dim, n_actions), cfg.combine, rng)?;
        Ok(Learner {
            target: online.clone(),
            adam: AdamState::new(&online, cfg.adam),
            online,
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            grad_steps: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.cfg.warmup.max(self.cfg.batch_size)
    }

    /// One gradient step on a uniform minibatch, or `None` while the buffer is warming up.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<StepStats>> {
        if !self.ready() {
            return Ok(None);
        }
        let idx = self.buffer.sample_indices(rng, self.cfg.batch_size);
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect();
        let loss = fit_batch(
            &mut self.online,
            &mut self.adam,
            &self.target,
            self.cfg.gamma,
            &batch,
        )?;
        self.grad_steps += 1;
        let target_synced = self.grad_steps % self.cfg.target_update_period == 0;
        if target_synced {
            self.target.copy_from(&self.online);
        }
        Ok(Some(StepStats {
            loss,
            target_synced,
        }))
    }

    /// One optimizer step on an explicit batch; returns the mean loss.
    pub fn fit(&mut self, batch: &[&Transition]) -> Result<f64> {
        fit_batch(
            &mut self.online,
            &mut self.adam,
            &self.target,
            self.cfg.gamma,
            batch,
        )
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.online.clone(),
            self.target.clone(),
            self.adam.clone(),
            self.grad_steps,
        )
    }
}

/// Huber regression of `Q(s, a_taken)` onto the TD targets; returns the mean loss.
fn fit_batch(
    online: &mut NetworkParams,
    adam: &mut AdamState,
    target: &NetworkParams,
    gamma: f64,
    batch: &[&Transition],
) -> Result<f64> {
    let targets = td_targets(batch, target, gamma)?;
    let x: Vec<f64> = batch.iter().flat_map(|t| t.obs.iter().copied()).collect();
    let cache = online.forward_batch(&x, batch.len())?;
    let n = online.n_actions();
    let scale = 1.0 / batch.len() as f64;
    let mut dq = vec![0.0; batch.len() * n];
    let mut loss = 0.0;
    for (r, (t, y)) in batch.iter().zip(&targets).enumerate() {
        if t.action >= n {
            return Err(Error::Contract(format!(
                "action {} outside 0..{n}",
                t.action
            )));
        }
        let (l, d) = huber_loss(cache.q[r * n + t.action], *y);
        loss += l * scale;
        dq[r * n + t.action] = d * scale;
    }
    let grads = online.backward(&cache, &dq)?;
    adam.step(online, &grads)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub epsilon: f64,
    /// Mean minibatch loss over the episode's gradient steps; empty before learning starts.
    pub loss_mean: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub rows: Vec<CurveRow>,
}

impl TrainingCurve {
    pub fn returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ret).collect()
    }

    /// Mean return over the last `n` episodes.
    pub fn tail_mean(&self, n: usize) -> Option<f64> {
        let n = n.min(self.rows.len());
        (n > 0).then(|| {
            self.rows[self.rows.len() - n..]
                .iter()
                .map(|r| r.ret)
                .sum::<f64>()
                / n as f64
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<curve>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub learner: Learner,
    pub curve: TrainingCurve,
}

impl TrainOutcome {
    pub fn params(&self) -> &NetworkParams {
        &self.learner.online
    }
}

/// Seed of the environment for training episode `episode`.
pub fn training_episode_seed(scenario_seed: u64, train_seed: u64, episode: usize) -> u64 {
    seeding::mix(seeding::mix(scenario_seed, train_seed), episode as u64)
}

/// Trains against any [`Environment`]; `episode_seed` picks the reset seed per episode.
pub fn train_on<E: Environment>(
    env: &mut E,
    cfg: &TrainConfig,
    episode_seed: impl Fn(usize) -> u64,
    mut progress: impl FnMut(&CurveRow),
) -> Result<TrainOutcome> {
    let mut rng: ChaCha8Rng = seeding::rng(cfg.seed, 0xA6E7);
    let mut learner = Learner::new(cfg, env.observation_len(), env.n_actions(), &mut rng)?;
    let mut curve = TrainingCurve::default();
    let mut policy_steps: u64 = 0;
    for episode in 0..cfg.episodes {
        let mut obs = env.reset(episode_seed(episode))?;
        let (mut ret, mut steps, mut loss_sum, mut loss_n) = (0.0, 0, 0.0, 0usize);
        loop {
            let eps = cfg.epsilon_at(policy_steps);
            let action = select_action(&learner.online, &obs, eps, &mut rng)?;
            let out = env.step(action)?;
            policy_steps += 1;
            steps += 1;
            ret += out.reward;
            let end = out.done || out.truncated;
            learner.buffer.push(Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward: out.reward,
                next_obs: out.obs.clone(),
                done: out.done,
            });
            if let Some(stats) = learner.train_step(&mut rng)? {
                loss_sum += stats.loss;
                loss_n += 1;
            }
            obs = out.obs;
            if end {
                break;
            }
        }
        let row = CurveRow {
            episode,
            ret,
            epsilon: cfg.epsilon_at(policy_steps),
            loss_mean: (loss_n > 0).then(|| loss_sum / loss_n as f64),
            steps,
        };
        progress(&row);
        curve.rows.push(row);
    }
    Ok(TrainOutcome { learner, curve })
}

/// Trains on driving episodes of `scenario`.
pub fn train(
    scenario: &ScenarioConfig,
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(scenario, env_cfg, cfg, |_| {})
}

pub fn train_with_progress(
    scenario: &ScenarioConfig,
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
    progress: impl FnMut(&CurveRow),
) -> Result<TrainOutcome> {
    let mut env = ScenarioEnv::new(scenario, env_cfg)?;
    let (scenario_seed, train_seed) = (scenario.seed, cfg.seed);
    train_on(
        &mut env,
        cfg,
        |e| training_episode_seed(scenario_seed, train_seed, e),
        progress,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub returns: Vec<f64>,
    pub mean: f64,
}

/// Greedy return of one episode.
pub fn rollout<E: Environment>(params: &NetworkParams, env: &mut E, seed: u64) -> Result<f64> {
    let mut obs = env.reset(seed)?;
    let mut ret = 0.0;
    loop {
        let out = env.step(greedy_action(&params.q_values(&obs)?))?;
        ret += out.reward;
        if out.done || out.truncated {
            return Ok(ret);
        }
        obs = out.obs;
    }
}

/// Greedy rollouts on seeds `seed, seed + 1, ...`.
pub fn evaluate_on<E: Environment>(
    params: &NetworkParams,
    env: &mut E,
    n_episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    if n_episodes == 0 {
        return Err(Error::Contract(
            "evaluation needs at least one episode".into(),
        ));
    }
    let returns = (0..n_episodes)
        .map(|i| rollout(params, env, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mean = returns.iter().sum::<f64>() / n_episodes as f64;
    Ok(Evaluation { returns, mean })
}

pub fn evaluate(
    params: &NetworkParams,
    scenario: &ScenarioConfig,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    let mut env = ScenarioEnv::new(scenario, env_cfg)?;
    evaluate_on(params, &mut env, n_episodes, seed)
}
