//! Run configuration: a flat dotted-key text format, CLI overrides, and the
//! resolved-config echo that makes any run reproducible from its output
//! directory.
//!
//! Grammar: one `key = value` per line, `#` starts a comment, blank lines
//! ignored. Keys are dotted paths (`agent.tau`), values are scalars, names,
//! or comma-separated lists. Unknown keys are errors.

use crate::agent::{AgentConfig, RewardVariant};
use crate::env::{EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::oracle::OracleConfig;
use crate::relevance::{LrSchedule, RelevanceModel, TrainConfig};
use crate::shaping::{RefSubsample, ShapingConfig};
use crate::types::{RewardDataset, ReferenceSet, ViewId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewSampling {
    RoundRobin,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelabelMode {
    /// Shaped rewards computed at sampling time from the current snapshot.
    OnSample,
    /// Stored shaped rewards rewritten after every relevance refit.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    /// Render the final clip-length window of the episode.
    Final,
    /// Render a window at a seeded random offset.
    Random,
}

/// Outer-loop cadence. Desk defaults; the documented paper-scale values are
/// t_env 1e7, t_update 1e5, t_video 64 with the same t_render of 9.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub t_env: usize,
    pub t_render: usize,
    pub t_update: usize,
    pub t_video: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            t_env: 50_000,
            t_render: 9,
            t_update: 2_000,
            t_video: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub oracle: OracleConfig,
    pub relevance: TrainConfig,
    pub relevance_hidden: usize,
    pub agent: AgentConfig,
    pub buffer_capacity: usize,
    pub shaping: ShapingConfig,
    pub schedule: Schedule,
    pub views: Vec<ViewId>,
    pub view_sampling: ViewSampling,
    pub window: WindowMode,
    pub relabel_mode: RelabelMode,
    pub variant: RewardVariant,
    pub seed: u64,
    pub eval_episodes: usize,
    pub refset_k: usize,
    pub dataset_capacity: usize,
    /// When false, the wall_ms metrics column is written as 0 so identical
    /// seeds produce byte-identical CSVs.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvSpec::new(EnvKind::Cycler),
            oracle: OracleConfig::default(),
            relevance: TrainConfig::default(),
            relevance_hidden: RelevanceModel::DESK_HIDDEN,
            agent: AgentConfig::default(),
            buffer_capacity: crate::agent::ReplayBuffer::DESK_CAPACITY,
            shaping: ShapingConfig::default(),
            schedule: Schedule::default(),
            views: (0..ViewId::COUNT).map(|i| ViewId::new(i).unwrap()).collect(),
            view_sampling: ViewSampling::RoundRobin,
            window: WindowMode::Final,
            relabel_mode: RelabelMode::OnSample,
            variant: RewardVariant::Mvr,
            seed: 0,
            eval_episodes: 10,
            refset_k: ReferenceSet::DEFAULT_K,
            dataset_capacity: RewardDataset::DEFAULT_CAPACITY,
            timing: false,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got '{v}'")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got '{v}'"))),
    }
}

impl RunConfig {
    /// Parse config text and apply it over the defaults. `env.kind` is
    /// applied first so later `env.*` keys override the right spec.
    pub fn from_str(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = RunConfig::default();
        if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "env.kind") {
            cfg.env = EnvSpec::new(EnvKind::parse(v)?);
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    /// Apply `key=value` overrides (CLI) after file values.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for ov in overrides {
            let (k, v) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "env.kind" {
                // Switching env resets the spec to that env's defaults.
                self.env = EnvSpec::new(EnvKind::parse(v)?);
            } else {
                self.set(k, v)?;
            }
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "env.kind" => {
                let kind = EnvKind::parse(v)?;
                self.env.kind = kind;
            }
            "env.horizon" => self.env.horizon = parse_usize(key, v)?,
            "env.sparse_task_reward" => self.env.sparse_task_reward = parse_bool(key, v)?,
            "env.seed" => self.env.rng_seed = parse_u64(key, v)?,
            "env.phase_gain" => self.env.phase_gain = parse_f64(key, v)?,
            "env.accel" => self.env.accel = parse_f64(key, v)?,
            "env.drag" => self.env.drag = parse_f64(key, v)?,
            "env.target_speed" => self.env.target_speed = parse_f64(key, v)?,
            "env.vel_gain" => self.env.vel_gain = parse_f64(key, v)?,
            "env.vel_max" => self.env.vel_max = parse_f64(key, v)?,
            "env.chair_center_x" => self.env.chair_center.0 = parse_f64(key, v)?,
            "env.chair_center_y" => self.env.chair_center.1 = parse_f64(key, v)?,
            "env.seat_center_x" => self.env.seat_center.0 = parse_f64(key, v)?,
            "env.seat_center_y" => self.env.seat_center.1 = parse_f64(key, v)?,
            "env.leg_center_x" => self.env.leg_center.0 = parse_f64(key, v)?,
            "env.leg_center_y" => self.env.leg_center.1 = parse_f64(key, v)?,
            "env.region_half_width" => self.env.region_half_width = parse_f64(key, v)?,
            "env.cycler_eval_window" => self.env.cycler_eval_window = parse_usize(key, v)?,
            "env.seat_eval_window" => self.env.seat_eval_window = parse_usize(key, v)?,

            "oracle.noise_std" => self.oracle.noise_std = parse_f64(key, v)?,
            "oracle.embed_dim" => self.oracle.embed_dim = parse_usize(key, v)?,
            "oracle.seed" => self.oracle.rng_seed = parse_u64(key, v)?,
            "oracle.view_bias_0" => self.oracle.view_bias[0] = parse_f64(key, v)?,
            "oracle.view_bias_1" => self.oracle.view_bias[1] = parse_f64(key, v)?,
            "oracle.view_bias_2" => self.oracle.view_bias[2] = parse_f64(key, v)?,
            "oracle.view_bias_3" => self.oracle.view_bias[3] = parse_f64(key, v)?,

            "relevance.hidden" => self.relevance_hidden = parse_usize(key, v)?,
            "relevance.lr" => self.relevance.schedule = LrSchedule::Fixed(parse_f64(key, v)?),
            "relevance.lr_schedule" => {
                self.relevance.schedule = match v {
                    "fixed" => LrSchedule::Fixed(1e-3),
                    "paper" => TrainConfig::paper_schedule(),
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected fixed|paper, got '{v}'"
                        )))
                    }
                }
            }
            "relevance.batch_size" => self.relevance.batch_size = parse_usize(key, v)?,
            "relevance.max_epochs" => self.relevance.max_epochs = parse_usize(key, v)?,
            "relevance.patience" => self.relevance.early_stop_patience = parse_usize(key, v)?,
            "relevance.beta" => self.relevance.beta = parse_f64(key, v)?,
            "relevance.reg_weight" => self.relevance.reg_weight = parse_f64(key, v)?,

            "agent.gamma" => self.agent.gamma = parse_f64(key, v)?,
            "agent.tau" => self.agent.tau = parse_f64(key, v)?,
            "agent.batch_size" => self.agent.batch_size = parse_usize(key, v)?,
            "agent.update_every" => self.agent.update_every = parse_usize(key, v)?,
            "agent.gradient_steps" => self.agent.gradient_steps = parse_usize(key, v)?,
            "agent.warmup_steps" => self.agent.warmup_steps = parse_usize(key, v)?,
            "agent.noise_std" => self.agent.exploration_noise_std = parse_f64(key, v)?,
            "agent.action_l2" => self.agent.action_l2 = parse_f64(key, v)?,
            "agent.actor_lr" => self.agent.actor_lr = parse_f64(key, v)?,
            "agent.critic_lr" => self.agent.critic_lr = parse_f64(key, v)?,
            "agent.twin_critic" => self.agent.twin_critic = parse_bool(key, v)?,
            "agent.buffer_capacity" => self.buffer_capacity = parse_usize(key, v)?,
            "agent.hidden" => {
                self.agent.hidden = v
                    .split(',')
                    .map(|s| parse_usize(key, s.trim()))
                    .collect::<Result<Vec<_>>>()?;
            }

            "shaping.w" => self.shaping.w = parse_f64(key, v)?,
            "shaping.m_ref" => {
                self.shaping.m_ref = if v == "all" {
                    RefSubsample::All
                } else {
                    RefSubsample::Count(parse_usize(key, v)?)
                }
            }
            "shaping.seed" => self.shaping.seed = parse_u64(key, v)?,

            "schedule.t_env" => self.schedule.t_env = parse_usize(key, v)?,
            "schedule.t_render" => self.schedule.t_render = parse_usize(key, v)?,
            "schedule.t_update" => self.schedule.t_update = parse_usize(key, v)?,
            "schedule.t_video" => self.schedule.t_video = parse_usize(key, v)?,

            "views" => {
                self.views = v
                    .split(',')
                    .map(|s| ViewId::new(parse_usize(key, s.trim())?))
                    .collect::<Result<Vec<_>>>()?;
            }
            "view_sampling" => {
                self.view_sampling = match v {
                    "round_robin" => ViewSampling::RoundRobin,
                    "random" => ViewSampling::Random,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected round_robin|random, got '{v}'"
                        )))
                    }
                }
            }
            "window" => {
                self.window = match v {
                    "final" => WindowMode::Final,
                    "random" => WindowMode::Random,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected final|random, got '{v}'"
                        )))
                    }
                }
            }
            "relabel_mode" => {
                self.relabel_mode = match v {
                    "on_sample" => RelabelMode::OnSample,
                    "periodic" => RelabelMode::Periodic,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected on_sample|periodic, got '{v}'"
                        )))
                    }
                }
            }
            "variant" => self.variant = RewardVariant::parse(v)?,
            "seed" => self.seed = parse_u64(key, v)?,
            "eval_episodes" => self.eval_episodes = parse_usize(key, v)?,
            "refset.k" => self.refset_k = parse_usize(key, v)?,
            "dataset.capacity" => self.dataset_capacity = parse_usize(key, v)?,
            "timing" => self.timing = parse_bool(key, v)?,

            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.oracle.validate()?;
        self.agent.validate()?;
        self.shaping.validate()?;
        if self.schedule.t_render < 1 {
            return Err(Error::Config("schedule.t_render must be >= 1".into()));
        }
        if self.schedule.t_env < 1 || self.schedule.t_update < 1 || self.schedule.t_video < 1 {
            return Err(Error::Config("schedule values must be >= 1".into()));
        }
        if self.views.is_empty() {
            return Err(Error::Config("views must be non-empty".into()));
        }
        if self.eval_episodes < 1 {
            return Err(Error::Config("eval_episodes must be >= 1".into()));
        }
        if self.refset_k < 1 || self.dataset_capacity < 1 {
            return Err(Error::Config("refset.k and dataset.capacity must be >= 1".into()));
        }
        if self.relevance_hidden < 1 {
            return Err(Error::Config("relevance.hidden must be >= 1".into()));
        }
        if self.env.horizon < 1 || self.env.horizon < self.schedule.t_video {
            return Err(Error::Config(
                "env.horizon must be >= 1 and >= schedule.t_video".into(),
            ));
        }
        Ok(())
    }

    /// Every key materialized, sorted, in the accepted grammar. Parsing the
    /// echo reproduces this config exactly.
    pub fn resolved(&self) -> String {
        let lr_line = match self.relevance.schedule {
            LrSchedule::Fixed(lr) => format!("relevance.lr = {lr:?}"),
            LrSchedule::Linear { .. } => "relevance.lr_schedule = paper".to_string(),
        };
        let mut lines = vec![
            format!("agent.action_l2 = {:?}", self.agent.action_l2),
            format!("agent.actor_lr = {:?}", self.agent.actor_lr),
            format!("agent.batch_size = {}", self.agent.batch_size),
            format!("agent.buffer_capacity = {}", self.buffer_capacity),
            format!("agent.critic_lr = {:?}", self.agent.critic_lr),
            format!("agent.gamma = {:?}", self.agent.gamma),
            format!("agent.gradient_steps = {}", self.agent.gradient_steps),
            format!("agent.update_every = {}", self.agent.update_every),
            format!("agent.warmup_steps = {}", self.agent.warmup_steps),
            format!(
                "agent.hidden = {}",
                self.agent
                    .hidden
                    .iter()
                    .map(|h| h.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            format!("agent.noise_std = {:?}", self.agent.exploration_noise_std),
            format!("agent.tau = {:?}", self.agent.tau),
            format!("agent.twin_critic = {}", self.agent.twin_critic),
            format!("dataset.capacity = {}", self.dataset_capacity),
            format!("env.accel = {:?}", self.env.accel),
            format!("env.chair_center_x = {:?}", self.env.chair_center.0),
            format!("env.chair_center_y = {:?}", self.env.chair_center.1),
            format!("env.cycler_eval_window = {}", self.env.cycler_eval_window),
            format!("env.drag = {:?}", self.env.drag),
            format!("env.horizon = {}", self.env.horizon),
            format!("env.kind = {}", self.env.kind.name()),
            format!("env.leg_center_x = {:?}", self.env.leg_center.0),
            format!("env.leg_center_y = {:?}", self.env.leg_center.1),
            format!("env.phase_gain = {:?}", self.env.phase_gain),
            format!("env.region_half_width = {:?}", self.env.region_half_width),
            format!("env.seat_center_x = {:?}", self.env.seat_center.0),
            format!("env.seat_center_y = {:?}", self.env.seat_center.1),
            format!("env.seat_eval_window = {}", self.env.seat_eval_window),
            format!("env.seed = {}", self.env.rng_seed),
            format!("env.sparse_task_reward = {}", self.env.sparse_task_reward),
            format!("env.target_speed = {:?}", self.env.target_speed),
            format!("env.vel_gain = {:?}", self.env.vel_gain),
            format!("env.vel_max = {:?}", self.env.vel_max),
            format!("eval_episodes = {}", self.eval_episodes),
            format!("oracle.embed_dim = {}", self.oracle.embed_dim),
            format!("oracle.noise_std = {:?}", self.oracle.noise_std),
            format!("oracle.seed = {}", self.oracle.rng_seed),
            format!("oracle.view_bias_0 = {:?}", self.oracle.view_bias[0]),
            format!("oracle.view_bias_1 = {:?}", self.oracle.view_bias[1]),
            format!("oracle.view_bias_2 = {:?}", self.oracle.view_bias[2]),
            format!("oracle.view_bias_3 = {:?}", self.oracle.view_bias[3]),
            format!("refset.k = {}", self.refset_k),
            format!(
                "relabel_mode = {}",
                match self.relabel_mode {
                    RelabelMode::OnSample => "on_sample",
                    RelabelMode::Periodic => "periodic",
                }
            ),
            format!("relevance.batch_size = {}", self.relevance.batch_size),
            format!("relevance.beta = {:?}", self.relevance.beta),
            format!("relevance.hidden = {}", self.relevance_hidden),
            lr_line,
            format!("relevance.max_epochs = {}", self.relevance.max_epochs),
            format!("relevance.patience = {}", self.relevance.early_stop_patience),
            format!("relevance.reg_weight = {:?}", self.relevance.reg_weight),
            format!("schedule.t_env = {}", self.schedule.t_env),
            format!("schedule.t_render = {}", self.schedule.t_render),
            format!("schedule.t_update = {}", self.schedule.t_update),
            format!("schedule.t_video = {}", self.schedule.t_video),
            format!("seed = {}", self.seed),
            format!("shaping.m_ref = {}", match self.shaping.m_ref {
                RefSubsample::All => "all".to_string(),
                RefSubsample::Count(m) => m.to_string(),
            }),
            format!("shaping.seed = {}", self.shaping.seed),
            format!("shaping.w = {:?}", self.shaping.w),
            format!("timing = {}", self.timing),
            format!("variant = {}", self.variant.name()),
            format!(
                "view_sampling = {}",
                match self.view_sampling {
                    ViewSampling::RoundRobin => "round_robin",
                    ViewSampling::Random => "random",
                }
            ),
            format!(
                "views = {}",
                self.views
                    .iter()
                    .map(|v| v.0.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            format!(
                "window = {}",
                match self.window {
                    WindowMode::Final => "final",
                    WindowMode::Random => "random",
                }
            ),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_defaults() {
        let cfg = RunConfig::from_str("").unwrap();
        assert_eq!(cfg.env.kind, EnvKind::Cycler);
        assert_eq!(cfg.schedule.t_env, 50_000);
        assert_eq!(cfg.schedule.t_render, 9);
        assert_eq!(cfg.schedule.t_update, 2_000);
        assert_eq!(cfg.schedule.t_video, 16);
        assert_eq!(cfg.views.len(), 4);
        assert_eq!(cfg.variant, RewardVariant::Mvr);
        assert!(!cfg.timing);
    }

    #[test]
    fn parses_comments_and_values() {
        let text = "\
# experiment
env.kind = seat   # deceptive task
schedule.t_env = 1000
views = 0, 2
shaping.w = 0.5
variant = task_only
";
        let cfg = RunConfig::from_str(text).unwrap();
        assert_eq!(cfg.env.kind, EnvKind::Seat);
        assert_eq!(cfg.schedule.t_env, 1000);
        assert_eq!(cfg.views, vec![ViewId::new(0).unwrap(), ViewId::new(2).unwrap()]);
        assert_eq!(cfg.shaping.w, 0.5);
        assert_eq!(cfg.variant, RewardVariant::TaskOnly);
    }

    #[test]
    fn unknown_key_and_bad_values_error() {
        assert!(RunConfig::from_str("bogus.key = 1").is_err());
        assert!(RunConfig::from_str("agent.tau = fast").is_err());
        assert!(RunConfig::from_str("views = 9").is_err());
        assert!(RunConfig::from_str("no equals sign").is_err());
        assert!(RunConfig::from_str("schedule.t_render = 0").is_err());
        assert!(RunConfig::from_str("env.horizon = 4").is_err()); // < t_video
    }

    #[test]
    fn overrides_apply_after_file_values() {
        let mut cfg = RunConfig::from_str("seed = 1").unwrap();
        cfg.apply_overrides(&[
            "seed=7".to_string(),
            "env.kind=seat".to_string(),
            "agent.hidden=32,32".to_string(),
        ])
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.env.kind, EnvKind::Seat);
        assert_eq!(cfg.agent.hidden, vec![32, 32]);
        assert!(cfg.apply_overrides(&["nope".to_string()]).is_err());
    }

    #[test]
    fn resolved_echo_round_trips() {
        let mut cfg = RunConfig::from_str("env.kind = seat\nshaping.m_ref = all").unwrap();
        cfg.apply_overrides(&["relevance.lr_schedule=paper".into(), "seed=42".into()])
            .unwrap();
        let echo = cfg.resolved();
        let cfg2 = RunConfig::from_str(&echo).unwrap();
        assert_eq!(echo, cfg2.resolved());
        assert_eq!(cfg2.seed, 42);
        assert_eq!(cfg2.shaping.m_ref, RefSubsample::All);
    }
}
