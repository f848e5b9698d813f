//! Outer training loop, metrics emission, checkpoints, and the ablation and
//! diagnostic runners.
//!
//! Every per-run source of randomness is a ChaCha stream derived from the run
//! seed (or from content hashes), so a config plus seed pins every byte of
//! `metrics.csv`.

use crate::agent::{
    evaluate, provide_reward, Agent, EvalResult, ReplayBuffer, RewardContext, RewardVariant,
    StoredTransition,
};
use crate::config::{RelabelMode, RunConfig, ViewSampling, WindowMode};
use crate::env::{render, Env, EnvSpec};
use crate::error::{Error, Result};
use crate::math::{hash_u64, mean, std_dev};
use crate::oracle::Oracle;
use crate::relevance::{train_mse, train_relevance, RelevanceModel};
use crate::shaping::{
    correlation_report, decay_metric, jensen_gap, r_vlm, relabel_buffer, DecayReport, EpisodeDiag,
    RefSnapshot, ShapingDiagnostics,
};
use crate::types::{
    ReferenceSet, RewardDataset, SimilaritySample, StateSequence, TaskPrompt, ViewId,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// One row per evaluation interval. Optional fields are blank until the
/// quantity first becomes defined (e.g. before the first render).
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub step: usize,
    pub episode: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub success_rate: f64,
    pub r_vlm_mean: Option<f64>,
    pub r_vlm_std: Option<f64>,
    pub jensen_lhs: Option<f64>,
    pub jensen_rhs: Option<f64>,
    pub decay_ratio: Option<f64>,
    pub view_id_last_rendered: Option<usize>,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "step,episode,eval_return_mean,eval_return_std,success_rate,\
r_vlm_mean,r_vlm_std,jensen_lhs,jensen_rhs,decay_ratio,view_id_last_rendered,wall_ms";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{},{},{},{},{},{},{}",
            self.step,
            self.episode,
            self.eval_return_mean,
            self.eval_return_std,
            self.success_rate,
            fmt_opt(self.r_vlm_mean),
            fmt_opt(self.r_vlm_std),
            fmt_opt(self.jensen_lhs),
            fmt_opt(self.jensen_rhs),
            fmt_opt(self.decay_ratio),
            self.view_id_last_rendered
                .map(|v| v.to_string())
                .unwrap_or_default(),
            self.wall_ms,
        )
    }
}

/// Deterministic viewpoint scheduler over the configured view list.
struct ViewSchedule {
    views: Vec<ViewId>,
    mode: ViewSampling,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ViewSchedule {
    fn new(views: Vec<ViewId>, mode: ViewSampling, seed: u64) -> Self {
        ViewSchedule {
            views,
            mode,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(hash_u64(seed, 0x5EED)),
        }
    }

    /// The view assigned to the next render.
    fn next(&mut self) -> ViewId {
        match self.mode {
            ViewSampling::RoundRobin => {
                let v = self.views[self.cursor % self.views.len()];
                self.cursor += 1;
                v
            }
            ViewSampling::Random => self.views[self.rng.gen_range(0..self.views.len())],
        }
    }

    /// The view the next render would use, without advancing.
    fn current(&self) -> ViewId {
        self.views[self.cursor % self.views.len()]
    }
}

/// Slice the episode down to the clip window that will be rendered.
fn select_window(
    seq: &StateSequence,
    t_video: usize,
    mode: WindowMode,
    seed: u64,
) -> Result<StateSequence> {
    let n = seq.len();
    let len = t_video.min(n);
    let start = match mode {
        WindowMode::Final => n - len,
        WindowMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(hash_u64(seed, seq.episode_id));
            rng.gen_range(0..=n - len)
        }
    };
    StateSequence::new(
        seq.states[start..start + len].to_vec(),
        seq.episode_id,
        (start, start + len),
    )
}

/// Everything a finished run exposes to callers beyond its output files.
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub final_eval: EvalResult,
    pub agent: Agent,
    pub model: Option<RelevanceModel>,
    pub refset: ReferenceSet,
    pub snapshot: RefSnapshot,
    pub dataset_len: usize,
    pub episodes_completed: u64,
    pub clips_scored: usize,
    pub rendered_views: Vec<ViewId>,
    /// Per-state auxiliary-reward values at each evaluation interval,
    /// concatenated chronologically; `decay_window` values per interval.
    pub r_vlm_history: Vec<f64>,
    pub decay_window: usize,
}

/// Per-frame fitting target in [-1, 1] from a score in [0, 1].
fn score_to_target(score: f64) -> f64 {
    2.0 * score.clamp(0.0, 1.0) - 1.0
}

fn refit_model(
    cfg: &RunConfig,
    model: &mut RelevanceModel,
    dataset: &RewardDataset,
    oracle: &Oracle,
    prompt: &TaskPrompt,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if dataset.len() < 2 {
        return Ok(());
    }
    match cfg.variant {
        RewardVariant::Mvr | RewardVariant::MvrNoReference => {
            train_relevance(model, dataset, &cfg.relevance, rng)
        }
        RewardVariant::MvrNoReg => {
            let mut tcfg = cfg.relevance.clone();
            tcfg.reg_weight = 0.0;
            train_relevance(model, dataset, &tcfg, rng)
        }
        RewardVariant::MvrDirect => {
            let data: Vec<(Vec<f64>, f64)> = dataset
                .iter()
                .flat_map(|s| {
                    let t = score_to_target(s.text_score);
                    s.sequence
                        .states
                        .iter()
                        .map(move |st| (st.as_slice().to_vec(), t))
                })
                .collect();
            train_mse(model, &data, &cfg.relevance, rng)
        }
        RewardVariant::ImageSim => {
            // Fit per-frame pose similarity from a fully visible viewpoint.
            let view = ViewId::new(1)?;
            let mut data = Vec::new();
            for s in dataset.iter() {
                for st in &s.sequence.states {
                    let one =
                        StateSequence::new(vec![st.clone()], s.sequence.episode_id, (0, 1))?;
                    let frame = render(&one, cfg.env.kind, view, 1).frames.remove(0);
                    let score = oracle.image_score(&frame, view, prompt)?;
                    data.push((st.as_slice().to_vec(), score_to_target(score)));
                }
            }
            train_mse(model, &data, &cfg.relevance, rng)
        }
        RewardVariant::TaskOnly | RewardVariant::TrajSparse => Ok(()),
    }
}

/// Algorithm loop without any file IO; `run_training` adds the artifacts.
pub fn train_core(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = &cfg.env;
    let d_s = spec.state_dim();
    let d_a = spec.action_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agent = Agent::new(d_s, d_a, cfg.agent.clone(), &mut rng)?;
    let mut model = cfg
        .variant
        .uses_model()
        .then(|| RelevanceModel::new(d_s, cfg.relevance_hidden, &mut rng));
    let oracle = Oracle::with_standard_prompts(cfg.oracle.clone())?;
    let prompt = TaskPrompt::new(spec.kind.default_prompt());
    let mut dataset = RewardDataset::new(cfg.dataset_capacity);
    let mut refset = ReferenceSet::new(cfg.refset_k);
    let mut snapshot = RefSnapshot::default();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut sched = ViewSchedule::new(cfg.views.clone(), cfg.view_sampling, cfg.seed);

    let mut env = Env::new(spec.clone());
    let mut state = env.reset();
    let mut ep_states = vec![state.clone()];
    let mut episodes: u64 = 0;
    let mut clips_scored = 0usize;
    let mut rendered_views = Vec::new();
    let mut last_view: Option<ViewId> = None;
    let mut rows = Vec::new();
    let mut r_vlm_history = Vec::new();
    let mut decay_window = 0usize;
    let start = Instant::now();

    for step in 1..=cfg.schedule.t_env {
        let action = if step <= cfg.agent.warmup_steps {
            (0..d_a).map(|_| rng.gen_range(-1.0..1.0)).collect()
        } else {
            agent.act(state.as_slice(), true, &mut rng)
        };
        let tr = env.step(&action)?;
        buffer.push(StoredTransition {
            state: state.as_slice().to_vec(),
            action,
            next_state: tr.next_state.as_slice().to_vec(),
            task_reward: tr.task_reward,
            terminal_bonus: 0.0,
            done: tr.done,
        });
        if cfg.relabel_mode == RelabelMode::Periodic {
            let idx = buffer.last_index();
            let ctx = RewardContext {
                model: model.as_ref(),
                snapshot: &snapshot,
                shaping: &cfg.shaping,
            };
            let r = provide_reward(cfg.variant, buffer.get(idx), &ctx);
            buffer.set_shaped_reward(idx, r);
        }
        state = tr.next_state;
        ep_states.push(state.clone());

        if tr.done {
            episodes += 1;
            let seq = StateSequence::new(ep_states, episodes, (0, spec.horizon))?;
            if cfg.variant == RewardVariant::TrajSparse {
                // Episode-level score from the currently scheduled view.
                let window = select_window(&seq, cfg.schedule.t_video, cfg.window, cfg.seed)?;
                let clip = render(&window, spec.kind, sched.current(), cfg.schedule.t_video);
                let score = oracle.score_text(&clip, &prompt)?;
                let idx = buffer.last_index();
                buffer.set_terminal_bonus(idx, score);
            }
            if episodes % cfg.schedule.t_render as u64 == 0 {
                let view = sched.next();
                let window = select_window(&seq, cfg.schedule.t_video, cfg.window, cfg.seed)?;
                let clip = render(&window, spec.kind, view, cfg.schedule.t_video);
                let score = oracle.score_text(&clip, &prompt)?;
                let embedding = oracle.embed(&clip);
                dataset.append(SimilaritySample {
                    sequence: window.clone(),
                    clip_embedding: embedding,
                    text_score: score,
                    view,
                })?;
                refset.offer(window, score)?;
                clips_scored += 1;
                rendered_views.push(view);
                last_view = Some(view);
            }
            state = env.reset();
            ep_states = vec![state.clone()];
        }

        if step > cfg.agent.warmup_steps
            && buffer.len() >= cfg.agent.batch_size
            && step % cfg.agent.update_every == 0
        {
            match cfg.relabel_mode {
                RelabelMode::OnSample => {
                    let ctx = RewardContext {
                        model: model.as_ref(),
                        snapshot: &snapshot,
                        shaping: &cfg.shaping,
                    };
                    agent.update(
                        &buffer,
                        |_, t| provide_reward(cfg.variant, t, &ctx),
                        &mut rng,
                    )?;
                }
                RelabelMode::Periodic => {
                    agent.update(&buffer, |i, _| buffer.shaped_reward(i), &mut rng)?;
                }
            }
        }

        if step % cfg.schedule.t_update == 0 {
            if let Some(m) = model.as_mut() {
                refit_model(cfg, m, &dataset, &oracle, &prompt, &mut rng)?;
                snapshot = RefSnapshot::build(m, &refset);
            }
            if cfg.relabel_mode == RelabelMode::Periodic {
                let ctx = RewardContext {
                    model: model.as_ref(),
                    snapshot: &snapshot,
                    shaping: &cfg.shaping,
                };
                relabel_buffer(&mut buffer, cfg.variant, &ctx);
            }

            let eval = evaluate(&agent, spec, cfg.eval_episodes)?;
            if !eval.mean_return.is_finite() {
                return Err(Error::Numeric("non-finite evaluation return".into()));
            }
            let mut vals = Vec::new();
            if let Some(m) = &model {
                if !snapshot.is_empty() {
                    for ep in &eval.episodes {
                        for s in &ep.states {
                            vals.push(r_vlm(m, s, &snapshot, &cfg.shaping).0);
                        }
                    }
                }
            }
            let (r_mean, r_std) = if vals.is_empty() {
                (None, None)
            } else {
                (Some(mean(&vals)), Some(std_dev(&vals)))
            };
            let (jl, jr) = match (&model, snapshot.is_empty()) {
                (Some(m), false) => {
                    let (l, r) = jensen_gap(m, &eval.episodes[0].states, &snapshot);
                    (Some(l), Some(r))
                }
                _ => (None, None),
            };
            if !vals.is_empty() {
                if decay_window == 0 {
                    decay_window = vals.len();
                }
                r_vlm_history.extend_from_slice(&vals);
            }
            let decay_ratio = if decay_window > 0 {
                decay_metric(&r_vlm_history, decay_window)
                    .ok()
                    .map(|d| d.std_ratio)
            } else {
                None
            };
            rows.push(MetricsRow {
                step,
                episode: episodes,
                eval_return_mean: eval.mean_return,
                eval_return_std: eval.std_return,
                success_rate: eval.success_rate,
                r_vlm_mean: r_mean,
                r_vlm_std: r_std,
                jensen_lhs: jl,
                jensen_rhs: jr,
                decay_ratio,
                view_id_last_rendered: last_view.map(|v| v.0),
                wall_ms: if cfg.timing {
                    start.elapsed().as_millis() as u64
                } else {
                    0
                },
            });
        }
    }

    let final_eval = evaluate(&agent, spec, cfg.eval_episodes)?;
    Ok(TrainOutcome {
        rows,
        final_eval,
        agent,
        model,
        refset,
        snapshot,
        dataset_len: dataset.len(),
        episodes_completed: episodes,
        clips_scored,
        rendered_views,
        r_vlm_history,
        decay_window,
    })
}

/// Full training run with artifacts: `config.resolved`, `metrics.csv`, and
/// `checkpoint.txt` in `out_dir`. Returns the metrics path and the outcome.
pub fn run_training(cfg: &RunConfig, out_dir: &Path) -> Result<(PathBuf, TrainOutcome)> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.resolved"), cfg.resolved())?;
    let outcome = train_core(cfg)?;
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for row in &outcome.rows {
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    let metrics_path = out_dir.join("metrics.csv");
    std::fs::write(&metrics_path, csv)?;
    save_checkpoint(
        &out_dir.join("checkpoint.txt"),
        cfg,
        &outcome.agent,
        outcome.model.as_ref(),
        &outcome.refset,
    )?;
    Ok((metrics_path, outcome))
}

// ---------------------------------------------------------------------------
// Checkpoints: plain text, f64s as big-endian bit-pattern hex for exactness.

fn write_params(out: &mut String, name: &str, params: &[f64]) {
    let _ = write!(out, "params {name} {}", params.len());
    for p in params {
        let _ = write!(out, " {:016x}", p.to_bits());
    }
    out.push('\n');
}

pub struct Checkpoint {
    pub agent: Agent,
    pub model: Option<RelevanceModel>,
    pub refset: ReferenceSet,
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &RunConfig,
    agent: &Agent,
    model: Option<&RelevanceModel>,
    refset: &ReferenceSet,
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "mvrlab-checkpoint 1");
    let _ = writeln!(out, "env {}", cfg.env.kind.name());
    let _ = writeln!(out, "state_dim {}", cfg.env.state_dim());
    let _ = writeln!(out, "action_dim {}", cfg.env.action_dim());
    let _ = writeln!(out, "relevance_hidden {}", cfg.relevance_hidden);
    write_params(&mut out, "actor", &agent.actor.params_flat());
    write_params(&mut out, "actor_target", &agent.actor_target.params_flat());
    write_params(&mut out, "critic", &agent.critic.params_flat());
    write_params(&mut out, "critic_target", &agent.critic_target.params_flat());
    if let (Some(c2), Some(c2t)) = (&agent.critic2, &agent.critic2_target) {
        write_params(&mut out, "critic2", &c2.params_flat());
        write_params(&mut out, "critic2_target", &c2t.params_flat());
    }
    if let Some(m) = model {
        write_params(&mut out, "relevance", &m.params_flat());
    }
    for (seq, score) in refset.entries() {
        let _ = write!(
            out,
            "refseq {:016x} {} {}",
            score.to_bits(),
            seq.len(),
            seq.states[0].dim()
        );
        for s in &seq.states {
            for v in s.as_slice() {
                let _ = write!(out, " {:016x}", v.to_bits());
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_hex_f64(tok: &str) -> Result<f64> {
    u64::from_str_radix(tok, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Config(format!("bad checkpoint value '{tok}'")))
}

pub fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some("mvrlab-checkpoint 1") {
        return Err(Error::Config("not a checkpoint file".into()));
    }
    // Networks are rebuilt at config shapes, then overwritten in place.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d_s = cfg.env.state_dim();
    let d_a = cfg.env.action_dim();
    let mut agent = Agent::new(d_s, d_a, cfg.agent.clone(), &mut rng)?;
    let mut model = cfg
        .variant
        .uses_model()
        .then(|| RelevanceModel::new(d_s, cfg.relevance_hidden, &mut rng));
    let mut refset = ReferenceSet::new(cfg.refset_k);
    for line in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("env") => {
                if toks.next() != Some(cfg.env.kind.name()) {
                    return Err(Error::Config("checkpoint env differs from config".into()));
                }
            }
            Some("state_dim") | Some("action_dim") | Some("relevance_hidden") => {
                let expected = match line.split_whitespace().next().unwrap() {
                    "state_dim" => d_s,
                    "action_dim" => d_a,
                    _ => cfg.relevance_hidden,
                };
                if toks.next() != Some(expected.to_string().as_str()) {
                    return Err(Error::Config(format!(
                        "checkpoint dimension mismatch in '{line}'"
                    )));
                }
            }
            Some("params") => {
                let name = toks
                    .next()
                    .ok_or_else(|| Error::Config("truncated params line".into()))?;
                let n: usize = toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Config("bad params count".into()))?;
                let vals: Vec<f64> = toks.map(parse_hex_f64).collect::<Result<_>>()?;
                if vals.len() != n {
                    return Err(Error::Config(format!("params {name}: wrong count")));
                }
                match name {
                    "actor" => agent.actor.set_params_flat(&vals)?,
                    "actor_target" => agent.actor_target.set_params_flat(&vals)?,
                    "critic" => agent.critic.set_params_flat(&vals)?,
                    "critic_target" => agent.critic_target.set_params_flat(&vals)?,
                    "critic2" => match agent.critic2.as_mut() {
                        Some(c2) => c2.set_params_flat(&vals)?,
                        None => {
                            return Err(Error::Config(
                                "checkpoint has a twin critic but config does not".into(),
                            ))
                        }
                    },
                    "critic2_target" => match agent.critic2_target.as_mut() {
                        Some(c2) => c2.set_params_flat(&vals)?,
                        None => {
                            return Err(Error::Config(
                                "checkpoint has a twin critic but config does not".into(),
                            ))
                        }
                    },
                    "relevance" => match model.as_mut() {
                        Some(m) => m.set_params_flat(&vals)?,
                        None => {
                            return Err(Error::Config(
                                "checkpoint has a relevance model but the variant does not".into(),
                            ))
                        }
                    },
                    other => return Err(Error::Config(format!("unknown section '{other}'"))),
                }
            }
            Some("refseq") => {
                let score = parse_hex_f64(
                    toks.next()
                        .ok_or_else(|| Error::Config("truncated refseq line".into()))?,
                )?;
                let n: usize = toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Config("bad refseq length".into()))?;
                let dim: usize = toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Config("bad refseq dim".into()))?;
                let flat: Vec<f64> = toks.map(parse_hex_f64).collect::<Result<_>>()?;
                if flat.len() != n * dim {
                    return Err(Error::Config("refseq value count mismatch".into()));
                }
                let states = flat
                    .chunks(dim)
                    .map(|c| crate::types::StateVec::new(c.to_vec()))
                    .collect::<Result<Vec<_>>>()?;
                let seq = StateSequence::new(states, 0, (0, n))?;
                refset.offer(seq, score)?;
            }
            Some(other) => return Err(Error::Config(format!("unknown checkpoint line '{other}'"))),
            None => {}
        }
    }
    Ok(Checkpoint {
        agent,
        model,
        refset,
    })
}

// ---------------------------------------------------------------------------
// Ablation sweep.

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub mean: f64,
    pub std: f64,
    /// Final-return mean divided by the mvr variant's mean, when available.
    pub normalized: Option<f64>,
    pub failed: bool,
}

/// Worker pool capped by the `MVRLAB_THREADS` env var.
pub fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(n) = std::env::var("MVRLAB_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            if n >= 1 {
                builder = builder.num_threads(n);
            }
        }
    }
    builder.build().expect("thread pool")
}

pub fn run_ablation(
    base: &RunConfig,
    variants: &[RewardVariant],
    n_seeds: u64,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() || n_seeds == 0 {
        return Err(Error::Config("need >= 1 variant and >= 1 seed".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let jobs: Vec<(RewardVariant, u64)> = variants
        .iter()
        .flat_map(|&v| (0..n_seeds).map(move |s| (v, base.seed + s)))
        .collect();
    let pool = thread_pool();
    let results: Vec<(RewardVariant, u64, Result<f64>)> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(variant, seed)| {
                let mut cfg = base.clone();
                cfg.variant = variant;
                cfg.seed = seed;
                let run_dir = out_dir.join(format!("{}_seed{}", variant.name(), seed));
                let r = run_training(&cfg, &run_dir).map(|(_, o)| o.final_eval.mean_return);
                (variant, seed, r)
            })
            .collect()
    });

    let mut rows = Vec::new();
    for &variant in variants {
        let finals: Vec<f64> = results
            .iter()
            .filter(|(v, _, r)| *v == variant && r.is_ok())
            .map(|(_, _, r)| *r.as_ref().unwrap())
            .collect();
        let failed = finals.len() != n_seeds as usize;
        let (m, s) = if finals.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (mean(&finals), std_dev(&finals))
        };
        rows.push(AblationRow {
            variant: variant.name(),
            mean: m,
            std: s,
            normalized: None,
            failed,
        });
    }
    let mvr_mean = rows
        .iter()
        .find(|r| r.variant == "mvr" && !r.failed && r.mean.abs() > 1e-12)
        .map(|r| r.mean);
    for row in &mut rows {
        row.normalized = match (mvr_mean, row.failed) {
            (Some(m), false) => Some(row.mean / m),
            _ => None,
        };
    }

    let mut csv = String::from("variant,mean_final_return,std_final_return,normalized,failed\n");
    let mut table = format!(
        "{:<18} {:>14} {:>12} {:>12} {:>8}\n",
        "variant", "mean_return", "std", "normalized", "failed"
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{:?},{:?},{},{}",
            r.variant,
            r.mean,
            r.std,
            fmt_opt(r.normalized),
            r.failed
        );
        let _ = writeln!(
            table,
            "{:<18} {:>14.4} {:>12.4} {:>12} {:>8}",
            r.variant,
            r.mean,
            r.std,
            r.normalized
                .map(|n| format!("{n:.4}"))
                .unwrap_or_else(|| "-".into()),
            if r.failed { "yes" } else { "no" }
        );
    }
    std::fs::write(out_dir.join("ablation.csv"), csv)?;
    std::fs::write(out_dir.join("summary.txt"), &table)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Diagnostics on a checkpoint.

pub struct DiagOutcome {
    pub shaping_active: bool,
    pub n_rollouts: usize,
    pub diagnostics: Option<ShapingDiagnostics>,
    pub decay: Option<DecayReport>,
    pub jensen: Option<(f64, f64)>,
}

/// Greedy-rollout diagnostics for a trained policy + relevance model.
pub fn diag_core(cfg: &RunConfig, ckpt: &Checkpoint, n_rollouts: usize) -> Result<DiagOutcome> {
    let spec: &EnvSpec = &cfg.env;
    let oracle = Oracle::with_standard_prompts(cfg.oracle.clone())?;
    let prompt = TaskPrompt::new(spec.kind.default_prompt());
    let eval = evaluate(&ckpt.agent, spec, n_rollouts)?;

    let snapshot = match &ckpt.model {
        Some(m) => RefSnapshot::build(m, &ckpt.refset),
        None => RefSnapshot::default(),
    };
    let shaping_active = ckpt.model.is_some() && !snapshot.is_empty();
    if !shaping_active {
        return Ok(DiagOutcome {
            shaping_active,
            n_rollouts,
            diagnostics: None,
            decay: None,
            jensen: None,
        });
    }
    let model = ckpt.model.as_ref().unwrap();

    let mut episodes = Vec::with_capacity(n_rollouts);
    let mut all_r_vlm = Vec::new();
    let mut window = 0usize;
    for (i, ep) in eval.episodes.iter().enumerate() {
        let seq = StateSequence::new(ep.states.clone(), i as u64, (0, ep.states.len()))?;
        // Trajectory similarity: best score over the configured views.
        let mut f_vlm = f64::NEG_INFINITY;
        for &view in &cfg.views {
            let window_seq = select_window(&seq, cfg.schedule.t_video, WindowMode::Final, 0)?;
            let clip = render(&window_seq, spec.kind, view, cfg.schedule.t_video);
            f_vlm = f_vlm.max(oracle.score_text(&clip, &prompt)?);
        }
        let f_vals: Vec<f64> = ep.states.iter().map(|s| model.value(s)).collect();
        let r_vlm_vals: Vec<f64> = ep
            .states
            .iter()
            .map(|s| r_vlm(model, s, &snapshot, &cfg.shaping).0)
            .collect();
        let shaped: Vec<f64> = ep
            .task_rewards
            .iter()
            .zip(&r_vlm_vals)
            .map(|(&t, &v)| crate::shaping::r_mvr(t, v, cfg.shaping.w))
            .collect();
        if window == 0 {
            window = r_vlm_vals.len();
        }
        all_r_vlm.extend_from_slice(&r_vlm_vals);
        episodes.push(EpisodeDiag {
            f_vlm,
            f_mvr: mean(&f_vals),
            r_mvr: mean(&shaped),
            r_task: mean(&ep.task_rewards),
            success: ep.success,
        });
    }
    let diagnostics = correlation_report(&episodes, &all_r_vlm)?;
    let decay = decay_metric(&all_r_vlm, window).ok();
    let learner_states: Vec<crate::types::StateVec> = eval
        .episodes
        .iter()
        .flat_map(|e| e.states.iter().cloned())
        .take(500)
        .collect();
    let jensen = Some(jensen_gap(model, &learner_states, &snapshot));
    Ok(DiagOutcome {
        shaping_active,
        n_rollouts,
        diagnostics: Some(diagnostics),
        decay,
        jensen,
    })
}

pub fn run_diag(cfg: &RunConfig, checkpoint: &Path, out_path: &Path) -> Result<DiagOutcome> {
    let ckpt = load_checkpoint(checkpoint, cfg)?;
    let outcome = diag_core(cfg, &ckpt, 100)?;
    let mut out = String::from("key,value\n");
    let _ = writeln!(out, "n_rollouts,{}", outcome.n_rollouts);
    let _ = writeln!(out, "shaping_active,{}", outcome.shaping_active);
    if let Some(d) = &outcome.diagnostics {
        let _ = writeln!(out, "mean_r_vlm,{:?}", d.mean_r_vlm);
        let _ = writeln!(out, "std_r_vlm,{:?}", d.std_r_vlm);
        let _ = writeln!(out, "corr_f_vlm_success,{}", fmt_opt(d.f_vlm_vs_success));
        let _ = writeln!(out, "corr_f_mvr_success,{}", fmt_opt(d.f_mvr_vs_success));
        let _ = writeln!(out, "corr_r_mvr_success,{}", fmt_opt(d.r_mvr_vs_success));
        let _ = writeln!(out, "corr_f_vlm_task,{}", fmt_opt(d.f_vlm_vs_task));
        let _ = writeln!(out, "corr_f_mvr_task,{}", fmt_opt(d.f_mvr_vs_task));
        let _ = writeln!(out, "corr_r_mvr_task,{}", fmt_opt(d.r_mvr_vs_task));
    }
    if let Some(d) = &outcome.decay {
        let _ = writeln!(out, "decay_std_ratio,{:?}", d.std_ratio);
        let _ = writeln!(out, "decay_mean_ratio,{:?}", d.mean_magnitude_ratio);
        let _ = writeln!(out, "decay_degenerate,{}", d.degenerate);
    }
    if let Some((l, r)) = outcome.jensen {
        let _ = writeln!(out, "jensen_lhs,{l:?}");
        let _ = writeln!(out, "jensen_rhs,{r:?}");
    }
    std::fs::write(out_path, out)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvKind;
    use tempfile::tempdir;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.env = EnvSpec::new(EnvKind::Cycler);
        cfg.env.horizon = 20;
        cfg.env.cycler_eval_window = 10;
        cfg.schedule.t_env = 1200;
        cfg.schedule.t_update = 400;
        cfg.schedule.t_video = 8;
        cfg.schedule.t_render = 3;
        cfg.agent.batch_size = 32;
        cfg.agent.warmup_steps = 100;
        cfg.relevance.max_epochs = 5;
        cfg.eval_episodes = 2;
        cfg
    }

    #[test]
    fn loop_accounting_matches_schedule() {
        let out = train_core(&tiny_cfg()).unwrap();
        // 1200 steps / horizon 20 = 60 episodes; every 3rd rendered.
        assert_eq!(out.episodes_completed, 60);
        assert_eq!(out.clips_scored, 20);
        assert_eq!(out.dataset_len, 20);
        assert_eq!(out.refset.len(), 10);
        assert_eq!(out.rows.len(), 3);
    }

    #[test]
    fn round_robin_view_sequence_is_exact() {
        let out = train_core(&tiny_cfg()).unwrap();
        let views: Vec<usize> = out.rendered_views.iter().map(|v| v.0).collect();
        let expected: Vec<usize> = (0..views.len()).map(|i| i % 4).collect();
        assert_eq!(views, expected);
    }

    #[test]
    fn random_view_frequencies_are_uniform() {
        let mut cfg = tiny_cfg();
        cfg.view_sampling = crate::config::ViewSampling::Random;
        // 400 renders: 24000 steps / 20 horizon / 3 render cadence.
        cfg.schedule.t_env = 24_000;
        cfg.schedule.t_update = 24_000;
        cfg.variant = RewardVariant::TaskOnly; // skip refits for speed
        let out = train_core(&cfg).unwrap();
        assert_eq!(out.rendered_views.len(), 400);
        for v in 0..4usize {
            let freq = out.rendered_views.iter().filter(|x| x.0 == v).count() as f64 / 400.0;
            assert!((freq - 0.25).abs() <= 0.06, "view {v}: freq {freq}");
        }
    }

    #[test]
    fn identical_seeds_reproduce_metrics_bytes() {
        let dir = tempdir().unwrap();
        let cfg = tiny_cfg();
        let (p1, _) = run_training(&cfg, &dir.path().join("a")).unwrap();
        let (p2, _) = run_training(&cfg, &dir.path().join("b")).unwrap();
        let a = std::fs::read(p1).unwrap();
        let b = std::fs::read(p2).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn resolved_config_echo_reproduces_run() {
        let dir = tempdir().unwrap();
        let cfg = tiny_cfg();
        let (p1, _) = run_training(&cfg, &dir.path().join("a")).unwrap();
        let echoed = std::fs::read_to_string(dir.path().join("a/config.resolved")).unwrap();
        let cfg2 = RunConfig::from_str(&echoed).unwrap();
        let (p2, _) = run_training(&cfg2, &dir.path().join("b")).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let dir = tempdir().unwrap();
        let cfg = tiny_cfg();
        let (_, out) = run_training(&cfg, dir.path()).unwrap();
        let ckpt = load_checkpoint(&dir.path().join("checkpoint.txt"), &cfg).unwrap();
        assert_eq!(out.agent.actor.params_flat(), ckpt.agent.actor.params_flat());
        assert_eq!(
            out.agent.critic_target.params_flat(),
            ckpt.agent.critic_target.params_flat()
        );
        assert_eq!(
            out.model.as_ref().unwrap().params_flat(),
            ckpt.model.as_ref().unwrap().params_flat()
        );
        assert_eq!(out.refset.len(), ckpt.refset.len());
        let a: Vec<f64> = out
            .refset
            .all_states()
            .iter()
            .flat_map(|s| s.as_slice().to_vec())
            .collect();
        let b: Vec<f64> = ckpt
            .refset
            .all_states()
            .iter()
            .flat_map(|s| s.as_slice().to_vec())
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn ablation_bookkeeping_and_self_normalization() {
        let dir = tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.schedule.t_env = 400;
        cfg.schedule.t_update = 200;
        let rows = run_ablation(&cfg, &[RewardVariant::Mvr], 2, dir.path()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(!rows[0].failed);
        assert!((rows[0].normalized.unwrap() - 1.0).abs() < 1e-12);
        assert!(dir.path().join("ablation.csv").exists());
        assert!(dir.path().join("summary.txt").exists());
        assert!(dir.path().join("mvr_seed0/metrics.csv").exists());
        assert!(dir.path().join("mvr_seed1/metrics.csv").exists());
    }

    #[test]
    fn diag_on_untrained_checkpoint_flags_inactive_shaping() {
        let dir = tempdir().unwrap();
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = Agent::new(2, 2, cfg.agent.clone(), &mut rng).unwrap();
        let model = RelevanceModel::new(2, cfg.relevance_hidden, &mut rng);
        let refset = ReferenceSet::new(cfg.refset_k); // empty
        let path = dir.path().join("ckpt.txt");
        save_checkpoint(&path, &cfg, &agent, Some(&model), &refset).unwrap();
        let out_path = dir.path().join("diag.csv");
        let outcome = run_diag(&cfg, &path, &out_path).unwrap();
        assert!(!outcome.shaping_active);
        let text = std::fs::read_to_string(&out_path).unwrap();
        assert!(text.contains("shaping_active,false"));
        // Re-running produces identical bytes.
        run_diag(&cfg, &path, &dir.path().join("diag2.csv")).unwrap();
        assert_eq!(
            std::fs::read(&out_path).unwrap(),
            std::fs::read(dir.path().join("diag2.csv")).unwrap()
        );
    }

    #[test]
    fn missing_checkpoint_is_a_config_error() {
        let cfg = tiny_cfg();
        let err = run_diag(&cfg, Path::new("/nonexistent/ckpt.txt"), Path::new("/tmp/x.csv"));
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
