//! Minimal deterministic actor-critic with target networks, the RL substrate
//! that consumes shaped rewards, plus the baseline/ablation reward providers.

use crate::env::{env_success, Env, EnvSpec};
use crate::error::{Error, Result};
use crate::nn::{finite_difference_check, Activation, Grads, Mlp};
use crate::relevance::RelevanceModel;
use crate::shaping::{r_mvr, r_vlm_from_vals, RefSnapshot, ShapingConfig};
use crate::types::{StateSequence, StateVec};
use rand::prelude::*;
use rand_distr::{Distribution, Normal};

/// One stored replay transition. The task reward is immutable; shaped
/// rewards are recomputed from it on demand.
#[derive(Debug, Clone)]
pub struct StoredTransition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub task_reward: f64,
    /// Episode-level similarity score, non-zero only on the terminal
    /// transition; consumed by the sparse-trajectory baseline.
    pub terminal_bonus: f64,
    pub done: bool,
}

/// FIFO ring of transitions with an optional parallel array of shaped
/// rewards for the periodic-relabel mode.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: Vec<StoredTransition>,
    shaped: Vec<f64>,
    capacity: usize,
    head: usize,
}

impl ReplayBuffer {
    pub const DESK_CAPACITY: usize = 100_000;

    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            data: Vec::with_capacity(capacity.min(4096)),
            shaped: Vec::with_capacity(capacity.min(4096)),
            capacity,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: StoredTransition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
            self.shaped.push(0.0);
        } else {
            self.data[self.head] = t;
            self.shaped[self.head] = 0.0;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn get(&self, idx: usize) -> &StoredTransition {
        &self.data[idx]
    }

    /// Index of the most recently pushed transition.
    pub fn last_index(&self) -> usize {
        if self.data.len() < self.capacity {
            self.data.len() - 1
        } else {
            (self.head + self.capacity - 1) % self.capacity
        }
    }

    /// Attach the episode-level similarity score to a terminal transition.
    pub fn set_terminal_bonus(&mut self, idx: usize, bonus: f64) {
        self.data[idx].terminal_bonus = bonus;
    }

    pub fn shaped_reward(&self, idx: usize) -> f64 {
        self.shaped[idx]
    }

    pub fn set_shaped_reward(&mut self, idx: usize, r: f64) {
        self.shaped[idx] = r;
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredTransition> {
        self.data.iter()
    }
}

/// Reward scheme selector: the full method, its ablations, and baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardVariant {
    /// Task reward plus the reference-set expectation.
    Mvr,
    TaskOnly,
    /// Per-frame pose similarity fitted by MSE, added to the task reward.
    ImageSim,
    /// Episode-level similarity added at the terminal step only.
    TrajSparse,
    /// Matching loss only, no embedding regularizer.
    MvrNoReg,
    /// Raw relevance added directly, no reference-set expectation.
    MvrNoReference,
    /// Relevance fitted to similarity scores by MSE instead of matching.
    MvrDirect,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 7] = [
        RewardVariant::Mvr,
        RewardVariant::TaskOnly,
        RewardVariant::ImageSim,
        RewardVariant::TrajSparse,
        RewardVariant::MvrNoReg,
        RewardVariant::MvrNoReference,
        RewardVariant::MvrDirect,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mvr" => Ok(RewardVariant::Mvr),
            "task_only" => Ok(RewardVariant::TaskOnly),
            "image_sim" => Ok(RewardVariant::ImageSim),
            "traj_sparse" => Ok(RewardVariant::TrajSparse),
            "mvr_no_reg" => Ok(RewardVariant::MvrNoReg),
            "mvr_no_reference" => Ok(RewardVariant::MvrNoReference),
            "mvr_direct" => Ok(RewardVariant::MvrDirect),
            other => Err(Error::Config(format!("unknown reward variant '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardVariant::Mvr => "mvr",
            RewardVariant::TaskOnly => "task_only",
            RewardVariant::ImageSim => "image_sim",
            RewardVariant::TrajSparse => "traj_sparse",
            RewardVariant::MvrNoReg => "mvr_no_reg",
            RewardVariant::MvrNoReference => "mvr_no_reference",
            RewardVariant::MvrDirect => "mvr_direct",
        }
    }

    /// Whether the variant trains a relevance-architecture model at all.
    pub fn uses_model(self) -> bool {
        !matches!(self, RewardVariant::TaskOnly | RewardVariant::TrajSparse)
    }
}

/// Everything a reward provider may need besides the transition itself.
pub struct RewardContext<'a> {
    pub model: Option<&'a RelevanceModel>,
    pub snapshot: &'a RefSnapshot,
    pub shaping: &'a ShapingConfig,
}

/// Scalar training reward for one transition under the active variant.
pub fn provide_reward(variant: RewardVariant, t: &StoredTransition, ctx: &RewardContext) -> f64 {
    let w = ctx.shaping.w;
    match variant {
        RewardVariant::TaskOnly => t.task_reward,
        RewardVariant::TrajSparse => t.task_reward + w * t.terminal_bonus,
        RewardVariant::Mvr | RewardVariant::MvrNoReg | RewardVariant::MvrDirect => {
            match ctx.model {
                Some(m) if !ctx.snapshot.is_empty() => {
                    let aux = r_vlm_from_vals(
                        m.value_slice(&t.state),
                        &ctx.snapshot.f_vals,
                        ctx.shaping.m_ref,
                        ctx.shaping.seed,
                        &t.state,
                    );
                    r_mvr(t.task_reward, aux, w)
                }
                // Shaping inactive before the first render/refit.
                _ => t.task_reward,
            }
        }
        RewardVariant::ImageSim | RewardVariant::MvrNoReference => match ctx.model {
            Some(m) => t.task_reward + w * m.value_slice(&t.state),
            None => t.task_reward,
        },
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    /// Env steps between update calls.
    pub update_every: usize,
    /// Gradient steps performed per update call.
    pub gradient_steps: usize,
    /// Env steps driven by uniform random actions before the policy (and its
    /// updates) take over; seeds the replay buffer with diverse states.
    pub warmup_steps: usize,
    pub exploration_noise_std: f64,
    /// L2 penalty on the actor's action output. Besides favoring gentle
    /// motion, it lets the policy walk off reward plateaus where the action
    /// gradient of Q vanishes (e.g. a saturated velocity clamp).
    pub action_l2: f64,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub twin_critic: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            tau: 0.01,
            batch_size: 64,
            update_every: 2,
            gradient_steps: 1,
            warmup_steps: 2_000,
            exploration_noise_std: 0.1,
            action_l2: 0.05,
            hidden: vec![32, 32],
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            twin_critic: false,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::Config("gamma must be in (0, 1)".into()));
        }
        if !(0.0 < self.tau && self.tau <= 1.0) {
            return Err(Error::Config("tau must be in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.hidden.is_empty() {
            return Err(Error::Config("batch_size and hidden must be non-empty".into()));
        }
        if self.update_every == 0 || self.gradient_steps == 0 {
            return Err(Error::Config("update_every and gradient_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Deterministic actor-critic with soft-updated target copies.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub critic2: Option<Mlp>,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub critic2_target: Option<Mlp>,
    pub cfg: AgentConfig,
}

/// Uniform(-3e-3, 3e-3) on the final layer's weights and biases.
fn reinit_output_layer<R: Rng>(net: &mut Mlp, rng: &mut R) {
    let last = net.layers.last_mut().expect("mlp has at least one layer");
    for w in last.w.iter_mut().chain(last.b.iter_mut()) {
        *w = rng.gen_range(-3e-3..3e-3);
    }
}

impl Agent {
    pub fn new<R: Rng>(state_dim: usize, action_dim: usize, cfg: AgentConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut actor_dims = vec![state_dim];
        actor_dims.extend(&cfg.hidden);
        actor_dims.push(action_dim);
        let mut actor_acts = vec![Activation::Relu; cfg.hidden.len()];
        actor_acts.push(Activation::Tanh);
        let mut actor = Mlp::new(&actor_dims, &actor_acts, rng);
        // Small uniform init on the output layers keeps the tanh head
        // unsaturated early so the policy gradient does not vanish.
        reinit_output_layer(&mut actor, rng);

        let mut critic_dims = vec![state_dim + action_dim];
        critic_dims.extend(&cfg.hidden);
        critic_dims.push(1);
        let mut critic_acts = vec![Activation::Relu; cfg.hidden.len()];
        critic_acts.push(Activation::Identity);
        let mut critic = Mlp::new(&critic_dims, &critic_acts, rng);
        reinit_output_layer(&mut critic, rng);
        let critic2 = cfg.twin_critic.then(|| {
            let mut c = Mlp::new(&critic_dims, &critic_acts, rng);
            reinit_output_layer(&mut c, rng);
            c
        });

        Ok(Agent {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic,
            critic2,
            cfg,
        })
    }

    /// Deterministic policy output, optionally perturbed by clipped Gaussian
    /// exploration noise.
    pub fn act<R: Rng>(&self, s: &[f64], explore: bool, rng: &mut R) -> Vec<f64> {
        let mut a = self.actor.forward(s);
        if explore && self.cfg.exploration_noise_std > 0.0 {
            let normal = Normal::new(0.0, self.cfg.exploration_noise_std).unwrap();
            for v in &mut a {
                *v = (*v + normal.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        a
    }

    fn q_value(critic: &Mlp, s: &[f64], a: &[f64]) -> f64 {
        let mut input = s.to_vec();
        input.extend_from_slice(a);
        critic.forward(&input)[0]
    }

    fn td_target(&self, t: &StoredTransition, reward: f64) -> f64 {
        let a_next = self.actor_target.forward(&t.next_state);
        let q_next = match &self.critic2_target {
            Some(c2t) => Self::q_value(&self.critic_target, &t.next_state, &a_next)
                .min(Self::q_value(c2t, &t.next_state, &a_next)),
            None => Self::q_value(&self.critic_target, &t.next_state, &a_next),
        };
        reward + self.cfg.gamma * (1.0 - t.done as u8 as f64) * q_next
    }

    /// One gradient step each for critic(s) and actor on a sampled batch,
    /// followed by soft target updates.
    fn gradient_step<R, F>(&mut self, buffer: &ReplayBuffer, reward_fn: &F, rng: &mut R) -> Result<()>
    where
        R: Rng,
        F: Fn(usize, &StoredTransition) -> f64,
    {
        let batch: Vec<usize> = (0..self.cfg.batch_size)
            .map(|_| rng.gen_range(0..buffer.len()))
            .collect();
        let scale = 1.0 / batch.len() as f64;

        // Critic regression toward the TD target.
        let mut critic_grads = Grads::zeros_like(&self.critic);
        let mut critic2_grads = self.critic2.as_ref().map(Grads::zeros_like);
        let mut critic_loss = 0.0;
        for &i in &batch {
            let t = buffer.get(i);
            let y = self.td_target(t, reward_fn(i, t));
            let mut input = t.state.clone();
            input.extend_from_slice(&t.action);
            let (q, cache) = self.critic.forward_cached(&input);
            let err = q[0] - y;
            critic_loss += err * err * scale;
            self.critic
                .backward(&cache, &[2.0 * err * scale], &mut critic_grads);
            if let (Some(c2), Some(g2)) = (&self.critic2, critic2_grads.as_mut()) {
                let (q2, cache2) = c2.forward_cached(&input);
                let err2 = q2[0] - y;
                c2.backward(&cache2, &[2.0 * err2 * scale], g2);
            }
        }
        if !critic_loss.is_finite() {
            return Err(Error::Numeric("non-finite critic loss".into()));
        }
        self.critic.sgd_step(&critic_grads, self.cfg.critic_lr);
        if let (Some(c2), Some(g2)) = (self.critic2.as_mut(), critic2_grads.as_ref()) {
            c2.sgd_step(g2, self.cfg.critic_lr);
        }

        // Deterministic policy gradient: ascend Q(s, actor(s)).
        let mut actor_grads = Grads::zeros_like(&self.actor);
        for &i in &batch {
            let t = buffer.get(i);
            let (a, actor_cache) = self.actor.forward_cached(&t.state);
            let mut input = t.state.clone();
            input.extend_from_slice(&a);
            let (_, critic_cache) = self.critic.forward_cached(&input);
            let input_grad = self.critic.backward_input(&critic_cache, &[1.0]);
            let dq_da = &input_grad[t.state.len()..];
            // Inverted-gradient rule: a push toward a bound is scaled by the
            // remaining headroom, so the tanh head never saturates hard and
            // the pull-back direction keeps its full strength.
            let grad_out: Vec<f64> = dq_da
                .iter()
                .zip(&a)
                .map(|(g, ak)| {
                    let headroom = if *g > 0.0 { 1.0 - ak } else { 1.0 + ak };
                    (-g * (headroom / 2.0) + 2.0 * self.cfg.action_l2 * ak) * scale
                })
                .collect();
            self.actor.backward(&actor_cache, &grad_out, &mut actor_grads);
        }
        self.actor.sgd_step(&actor_grads, self.cfg.actor_lr);

        self.actor_target.soft_update_from(&self.actor, self.cfg.tau);
        self.critic_target.soft_update_from(&self.critic, self.cfg.tau);
        if let (Some(c2t), Some(c2)) = (self.critic2_target.as_mut(), self.critic2.as_ref()) {
            c2t.soft_update_from(c2, self.cfg.tau);
        }
        Ok(())
    }

    /// `gradient_steps` updates with rewards produced by the active provider.
    pub fn update<R, F>(&mut self, buffer: &ReplayBuffer, reward_fn: F, rng: &mut R) -> Result<()>
    where
        R: Rng,
        F: Fn(usize, &StoredTransition) -> f64,
    {
        if buffer.len() < self.cfg.batch_size {
            return Err(Error::Invalid(format!(
                "buffer of {} transitions smaller than batch {}",
                buffer.len(),
                self.cfg.batch_size
            )));
        }
        for _ in 0..self.cfg.gradient_steps {
            self.gradient_step(buffer, &reward_fn, rng)?;
        }
        Ok(())
    }
}

/// Max relative error of the analytic critic-loss gradient against central
/// finite differences, on a single-transition batch.
pub fn critic_grad_check(agent: &Agent, t: &StoredTransition, reward: f64, epsilon: f64) -> f64 {
    let y = agent.td_target(t, reward);
    let mut input = t.state.clone();
    input.extend_from_slice(&t.action);
    let (q, cache) = agent.critic.forward_cached(&input);
    let err = q[0] - y;
    let mut grads = Grads::zeros_like(&agent.critic);
    agent.critic.backward(&cache, &[2.0 * err], &mut grads);
    finite_difference_check(
        &agent.critic.params_flat(),
        &grads.to_flat(),
        epsilon,
        |p| {
            let mut c = agent.critic.clone();
            c.set_params_flat(p).unwrap();
            let q = c.forward(&input)[0];
            (q - y) * (q - y)
        },
    )
}

/// One greedy evaluation episode with its per-step record.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub states: Vec<StateVec>,
    pub task_rewards: Vec<f64>,
    pub task_return: f64,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub mean_return: f64,
    pub std_return: f64,
    pub success_rate: f64,
    pub episodes: Vec<EpisodeRecord>,
}

/// Greedy rollouts scored on the task reward only; the relevance model never
/// enters evaluation.
pub fn evaluate(agent: &Agent, spec: &EnvSpec, n_episodes: usize) -> Result<EvalResult> {
    if n_episodes == 0 {
        return Err(Error::Invalid("n_episodes must be >= 1".into()));
    }
    let mut episodes = Vec::with_capacity(n_episodes);
    let mut returns = Vec::with_capacity(n_episodes);
    // Greedy actions need no rng; this one is never sampled from.
    let mut null_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for ep in 0..n_episodes {
        let mut env = Env::new(spec.clone());
        let mut states = vec![env.reset()];
        let mut rewards = Vec::new();
        loop {
            let a = agent.act(states.last().unwrap().as_slice(), false, &mut null_rng);
            let t = env.step(&a)?;
            states.push(t.next_state.clone());
            rewards.push(t.task_reward);
            if t.done {
                break;
            }
        }
        let seq = StateSequence::new(states.clone(), ep as u64, (0, rewards.len()))?;
        let success = env_success(spec, &seq)?;
        let ret: f64 = rewards.iter().sum();
        returns.push(ret);
        episodes.push(EpisodeRecord {
            states,
            task_rewards: rewards,
            task_return: ret,
            success,
        });
    }
    Ok(EvalResult {
        mean_return: crate::math::mean(&returns),
        std_return: crate::math::std_dev(&returns),
        success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n_episodes as f64,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(dim: usize) -> StoredTransition {
        StoredTransition {
            state: (0..dim).map(|i| 0.1 * i as f64).collect(),
            action: vec![0.5, -0.3],
            next_state: (0..dim).map(|i| 0.1 * i as f64 + 0.05).collect(),
            task_reward: 0.7,
            terminal_bonus: 0.0,
            done: false,
        }
    }

    #[test]
    fn buffer_fifo_and_capacity() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            let mut t = transition(2);
            t.task_reward = i as f64;
            b.push(t);
        }
        assert_eq!(b.len(), 3);
        let mut rewards: Vec<f64> = b.iter().map(|t| t.task_reward).collect();
        rewards.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn act_is_deterministic_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = Agent::new(4, 2, AgentConfig::default(), &mut rng).unwrap();
        let s = [0.1, 0.2, 0.3, 0.4];
        let a1 = agent.act(&s, false, &mut rng);
        let a2 = agent.act(&s, false, &mut rng);
        assert_eq!(a1, a2);
        assert!(a1.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn zero_weight_actor_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = Agent::new(4, 2, AgentConfig::default(), &mut rng).unwrap();
        for l in &mut agent.actor.layers {
            l.w.iter_mut().for_each(|v| *v = 0.0);
            l.b.iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(agent.act(&[1.0, -1.0, 0.5, 0.0], false, &mut rng), vec![0.0, 0.0]);
    }

    #[test]
    fn exploration_noise_has_configured_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = Agent::new(2, 1, AgentConfig::default(), &mut rng).unwrap();
        for l in &mut agent.actor.layers {
            l.w.iter_mut().for_each(|v| *v = 0.0);
            l.b.iter_mut().for_each(|v| *v = 0.0);
        }
        // Actor output is 0, far from the clip bounds, so clipping is inert.
        let draws: Vec<f64> = (0..10_000)
            .map(|_| agent.act(&[0.0, 0.0], true, &mut rng)[0])
            .collect();
        let std = crate::math::std_dev(&draws);
        assert!((std - 0.1).abs() < 0.005, "std {std}");
    }

    #[test]
    fn tau_one_copies_online_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = AgentConfig {
            tau: 1.0,
            batch_size: 4,
            gradient_steps: 1,
            ..AgentConfig::default()
        };
        let mut agent = Agent::new(2, 2, cfg, &mut rng).unwrap();
        let mut buffer = ReplayBuffer::new(16);
        for _ in 0..8 {
            buffer.push(transition(2));
        }
        agent.update(&buffer, |_, t| t.task_reward, &mut rng).unwrap();
        assert_eq!(agent.actor.params_flat(), agent.actor_target.params_flat());
        assert_eq!(agent.critic.params_flat(), agent.critic_target.params_flat());
    }

    #[test]
    fn update_requires_full_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut agent = Agent::new(2, 2, AgentConfig::default(), &mut rng).unwrap();
        let mut buffer = ReplayBuffer::new(16);
        buffer.push(transition(2));
        assert!(agent.update(&buffer, |_, t| t.task_reward, &mut rng).is_err());
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let agent = Agent::new(3, 2, AgentConfig::default(), &mut rng).unwrap();
            let t = transition(3);
            let err = critic_grad_check(&agent, &t, 0.7, 1e-5);
            assert!(err < 1e-4, "seed {seed}: error {err}");
        }
    }

    #[test]
    fn provide_reward_variants() {
        let snapshot = RefSnapshot::default();
        let shaping = ShapingConfig::default();
        let ctx = RewardContext {
            model: None,
            snapshot: &snapshot,
            shaping: &shaping,
        };
        let mut t = transition(2);
        assert_eq!(provide_reward(RewardVariant::TaskOnly, &t, &ctx), 0.7);
        // Sparse trajectory reward only pays at the terminal step.
        assert_eq!(provide_reward(RewardVariant::TrajSparse, &t, &ctx), 0.7);
        t.terminal_bonus = 0.9;
        t.done = true;
        let r = provide_reward(RewardVariant::TrajSparse, &t, &ctx);
        assert!((r - (0.7 + 0.1 * 0.9)).abs() < 1e-12);
        // Empty reference set: shaping inactive, reward equals task reward.
        assert_eq!(provide_reward(RewardVariant::Mvr, &t, &ctx), 0.7);
    }

    #[test]
    fn evaluation_ignores_the_relevance_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = EnvSpec::new(EnvKind::Cycler);
        let agent = Agent::new(2, 2, AgentConfig::default(), &mut rng).unwrap();
        let before = evaluate(&agent, &spec, 3).unwrap();
        // Corrupt a relevance model; evaluation must not change.
        let mut model = RelevanceModel::new(2, 8, &mut rng);
        model.predictor.iter_mut().for_each(|v| *v = f64::MAX / 2.0);
        let after = evaluate(&agent, &spec, 3).unwrap();
        assert_eq!(before.mean_return, after.mean_return);
        assert_eq!(before.success_rate, after.success_rate);
        // Return bound: horizon times max per-step reward.
        assert!(before.mean_return <= spec.horizon as f64);
    }

    #[test]
    fn evaluation_deterministic_across_repeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = EnvSpec::new(EnvKind::Seat);
        let agent = Agent::new(4, 2, AgentConfig::default(), &mut rng).unwrap();
        let a = evaluate(&agent, &spec, 2).unwrap();
        let b = evaluate(&agent, &spec, 2).unwrap();
        assert_eq!(a.mean_return, b.mean_return);
    }
}
