//! Two synthetic continuous-control environments plus a multi-view renderer
//! with occlusion.
//!
//! `Cycler` is a rhythmic task: the dense task reward tracks a target speed
//! while success additionally requires sustained phase rotation, so a policy
//! frozen at the single best pose tracks speed yet fails.
//!
//! `Seat` is a goal task with a deceptive zone: the dense task reward peaks at
//! the chair center, but success requires settling inside the proper-seat
//! region slightly above it; the "chair-leg" zone nearby collects high task
//! reward without ever counting as success.

use crate::error::{Error, Result};
use crate::math::{angle_diff, wrap_angle};
use crate::types::{RenderedClip, StateSequence, StateVec, ViewId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Cycler,
    Seat,
}

impl EnvKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "cycler" => Ok(EnvKind::Cycler),
            "seat" => Ok(EnvKind::Seat),
            other => Err(Error::Config(format!("unknown env name '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Cycler => "cycler",
            EnvKind::Seat => "seat",
        }
    }

    pub fn default_prompt(self) -> &'static str {
        match self {
            EnvKind::Cycler => "running",
            EnvKind::Seat => "sitting",
        }
    }
}

/// Environment parameters. Dynamics constants are config-exposed; the
/// defaults are calibrated so random policies rarely succeed.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub horizon: usize,
    pub sparse_task_reward: bool,
    pub rng_seed: u64,
    // Cycler constants.
    pub phase_gain: f64,
    pub accel: f64,
    pub drag: f64,
    pub target_speed: f64,
    // Seat constants.
    pub vel_gain: f64,
    pub vel_max: f64,
    pub chair_center: (f64, f64),
    pub seat_center: (f64, f64),
    pub region_half_width: f64,
    pub leg_center: (f64, f64),
    // Success evaluation windows.
    pub cycler_eval_window: usize,
    pub seat_eval_window: usize,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        EnvSpec {
            kind,
            horizon: 200,
            sparse_task_reward: false,
            rng_seed: 0,
            phase_gain: 0.3,
            accel: 0.1,
            drag: 0.05,
            target_speed: 0.8,
            vel_gain: 0.05,
            vel_max: 0.1,
            chair_center: (0.7, 0.7),
            seat_center: (0.7, 0.78),
            region_half_width: 0.08,
            leg_center: (0.78, 0.62),
            cycler_eval_window: 100,
            seat_eval_window: 20,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            EnvKind::Cycler => 2,
            EnvKind::Seat => 4,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            EnvKind::Cycler => 2,
            EnvKind::Seat => 2,
        }
    }

    /// Strictly inside the proper-seat square, by construction disjoint from
    /// "hovering exactly at the chair center".
    pub fn in_proper_seat(&self, px: f64, py: f64) -> bool {
        (px - self.seat_center.0).abs() < self.region_half_width
            && (py - self.seat_center.1).abs() < self.region_half_width
    }

    pub fn in_leg_zone(&self, px: f64, py: f64) -> bool {
        (px - self.leg_center.0).abs() < self.region_half_width
            && (py - self.leg_center.1).abs() < self.region_half_width
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: StateVec,
    pub action: Vec<f64>,
    pub next_state: StateVec,
    pub task_reward: f64,
    pub done: bool,
}

/// Deterministic initial state.
pub fn env_reset(spec: &EnvSpec) -> StateVec {
    match spec.kind {
        EnvKind::Cycler => StateVec(vec![0.0, 0.0]),
        EnvKind::Seat => StateVec(vec![-0.9, -0.9, 0.0, 0.0]),
    }
}

/// Pure single-step dynamics; `done` is owned by the episode driver.
pub fn env_step(spec: &EnvSpec, state: &StateVec, action: &[f64]) -> Result<(StateVec, f64)> {
    if action.len() != spec.action_dim() {
        return Err(Error::Invalid(format!(
            "action dim {} != {}",
            action.len(),
            spec.action_dim()
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Invalid("non-finite action".into()));
    }
    let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    match spec.kind {
        EnvKind::Cycler => {
            let (theta, v) = (state.0[0], state.0[1]);
            let theta2 = wrap_angle(theta + spec.phase_gain * a[0]);
            let v2 = (v + spec.accel * a[1] - spec.drag * v).clamp(0.0, 1.0);
            let reward = if spec.sparse_task_reward {
                if (v2 - spec.target_speed).abs() < 0.1 {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 - (v2 - spec.target_speed).abs()
            };
            Ok((StateVec(vec![theta2, v2]), reward))
        }
        EnvKind::Seat => {
            let (px, py, qx, qy) = (state.0[0], state.0[1], state.0[2], state.0[3]);
            let qx2 = (qx + spec.vel_gain * a[0]).clamp(-spec.vel_max, spec.vel_max);
            let qy2 = (qy + spec.vel_gain * a[1]).clamp(-spec.vel_max, spec.vel_max);
            let px2 = (px + qx2).clamp(-1.0, 1.0);
            let py2 = (py + qy2).clamp(-1.0, 1.0);
            let speed = (qx2 * qx2 + qy2 * qy2).sqrt();
            let reward = if spec.sparse_task_reward {
                if spec.in_proper_seat(px2, py2) && speed < 0.02 {
                    1.0
                } else {
                    0.0
                }
            } else {
                let dx = px2 - spec.chair_center.0;
                let dy = py2 - spec.chair_center.1;
                1.0 - (dx * dx + dy * dy).sqrt()
            };
            Ok((StateVec(vec![px2, py2, qx2, qy2]), reward))
        }
    }
}

/// Episode driver owning the current state and step counter.
#[derive(Debug, Clone)]
pub struct Env {
    pub spec: EnvSpec,
    state: StateVec,
    step_idx: usize,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Self {
        let state = env_reset(&spec);
        Env {
            spec,
            state,
            step_idx: 0,
        }
    }

    pub fn reset(&mut self) -> StateVec {
        self.state = env_reset(&self.spec);
        self.step_idx = 0;
        self.state.clone()
    }

    pub fn state(&self) -> &StateVec {
        &self.state
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let (next, reward) = env_step(&self.spec, &self.state, action)?;
        self.step_idx += 1;
        let done = self.step_idx >= self.spec.horizon;
        let t = Transition {
            state: self.state.clone(),
            action: action.to_vec(),
            next_state: next.clone(),
            task_reward: reward,
            done,
        };
        self.state = next;
        Ok(t)
    }
}

/// Mean absolute speed error and mean signed phase increment over the last
/// `window` transitions of a cycler sequence.
pub fn cycler_stats(spec: &EnvSpec, seq: &StateSequence, window: usize) -> Result<(f64, f64)> {
    if seq.len() < window + 1 {
        return Err(Error::Invalid(format!(
            "sequence of {} states shorter than eval window {window}",
            seq.len()
        )));
    }
    let start = seq.len() - window - 1;
    let mut speed_err = 0.0;
    let mut inc = 0.0;
    for i in start..seq.len() - 1 {
        let a = &seq.states[i].0;
        let b = &seq.states[i + 1].0;
        speed_err += (b[1] - spec.target_speed).abs();
        inc += angle_diff(a[0], b[0]);
    }
    Ok((speed_err / window as f64, inc / window as f64))
}

/// Binary success indicator over a completed episode.
pub fn env_success(spec: &EnvSpec, seq: &StateSequence) -> Result<bool> {
    match spec.kind {
        EnvKind::Cycler => {
            let window = spec.cycler_eval_window;
            if seq.len() < window + 1 {
                return Err(Error::Invalid("episode shorter than eval window".into()));
            }
            let start = seq.len() - window - 1;
            let mut speed_err = 0.0;
            let mut inc = 0.0;
            for i in start..seq.len() - 1 {
                let a = &seq.states[i].0;
                let b = &seq.states[i + 1].0;
                speed_err += (b[1] - spec.target_speed).abs();
                inc += angle_diff(a[0], b[0]);
            }
            let mean_err = speed_err / window as f64;
            let mean_inc = (inc / window as f64).abs();
            Ok(mean_err < 0.1 && mean_inc >= 0.15)
        }
        EnvKind::Seat => {
            let window = spec.seat_eval_window;
            if seq.len() < window {
                return Err(Error::Invalid("episode shorter than eval window".into()));
            }
            Ok(seq.states[seq.len() - window..].iter().all(|s| {
                let speed = (s.0[2] * s.0[2] + s.0[3] * s.0[3]).sqrt();
                spec.in_proper_seat(s.0[0], s.0[1]) && speed < 0.02
            }))
        }
    }
}

/// Per-view visibility over state features. A feature hidden in one view is
/// visible in at least one other, so the union covers every feature.
pub fn occlusion_mask(kind: EnvKind, view: ViewId) -> Vec<bool> {
    match kind {
        // Frontal views (0 and 180 degrees) cannot see the phase angle.
        EnvKind::Cycler => match view.0 {
            0 | 2 => vec![false, true],
            _ => vec![true, true],
        },
        // Frontal views cannot judge the robot-chair distance along y.
        EnvKind::Seat => match view.0 {
            0 | 2 => vec![true, false, true, true],
            _ => vec![true, true, true, true],
        },
    }
}

/// View projection: a cyclic channel shift by the view index.
/// `frame[i] = masked_state[(i + view) % d]`, invertible per view.
fn project(view: ViewId, masked: &[f64]) -> Vec<f64> {
    let d = masked.len();
    let shift = view.0 % d;
    (0..d).map(|i| masked[(i + shift) % d]).collect()
}

/// Inverse of `project`; occluded channels come back as their fill value.
pub fn unproject(view: ViewId, frame: &[f64]) -> Vec<f64> {
    let d = frame.len();
    let shift = view.0 % d;
    (0..d).map(|j| frame[(j + d - shift) % d]).collect()
}

/// Render the final `clip_len` states of a sequence from one viewpoint.
///
/// Short sequences are padded by repeating the last state. Occluded features
/// are replaced by 0 (they are never visible from this view).
pub fn render(seq: &StateSequence, kind: EnvKind, view: ViewId, clip_len: usize) -> RenderedClip {
    let mask = occlusion_mask(kind, view);
    let n = seq.len();
    let mut frames = Vec::with_capacity(clip_len);
    let start = n.saturating_sub(clip_len);
    for t in 0..clip_len {
        let idx = (start + t).min(n - 1);
        let masked: Vec<f64> = seq.states[idx]
            .0
            .iter()
            .zip(&mask)
            .map(|(&v, &vis)| if vis { v } else { 0.0 })
            .collect();
        frames.push(project(view, &masked));
    }
    RenderedClip {
        frames,
        view,
        source_episode: seq.episode_id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn seq_from(states: Vec<Vec<f64>>) -> StateSequence {
        StateSequence::new(states.into_iter().map(StateVec).collect(), 0, (0, 0)).unwrap()
    }

    #[test]
    fn reset_canonical_starts() {
        assert_eq!(env_reset(&EnvSpec::new(EnvKind::Cycler)).0, vec![0.0, 0.0]);
        assert_eq!(
            env_reset(&EnvSpec::new(EnvKind::Seat)).0,
            vec![-0.9, -0.9, 0.0, 0.0]
        );
    }

    #[test]
    fn cycler_step_arithmetic() {
        let spec = EnvSpec::new(EnvKind::Cycler);
        let s = StateVec(vec![0.0, 0.0]);
        let (next, _) = env_step(&spec, &s, &[1.0, 0.0]).unwrap();
        assert!((next.0[0] - 0.3).abs() < 1e-12);
        // Exact speed tracking gives reward 1.
        let s = StateVec(vec![0.0, 0.8 / (1.0 - spec.drag)]);
        let (next, r) = env_step(&spec, &s, &[0.0, 0.0]).unwrap();
        assert!((next.0[1] - 0.8).abs() < 1e-12);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seat_reward_at_center() {
        let spec = EnvSpec::new(EnvKind::Seat);
        // Lands exactly on the chair center with zero velocity.
        let s = StateVec(vec![0.7, 0.7, 0.0, 0.0]);
        let (next, r) = env_step(&spec, &s, &[0.0, 0.0]).unwrap();
        assert_eq!(next.0, vec![0.7, 0.7, 0.0, 0.0]);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_non_finite_action() {
        let spec = EnvSpec::new(EnvKind::Cycler);
        let s = env_reset(&spec);
        assert!(env_step(&spec, &s, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn dynamics_replay_is_bit_exact() {
        let spec = EnvSpec::new(EnvKind::Seat);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actions: Vec<[f64; 2]> = (0..50)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let run = |acts: &[[f64; 2]]| {
            let mut env = Env::new(spec.clone());
            env.reset();
            let mut trace = Vec::new();
            for a in acts {
                let t = env.step(a).unwrap();
                trace.push(t.next_state.0.clone());
            }
            trace
        };
        assert_eq!(run(&actions), run(&actions));
    }

    #[test]
    fn seat_success_at_rest_in_region() {
        let spec = EnvSpec::new(EnvKind::Seat);
        let states = vec![vec![0.7, 0.78, 0.0, 0.0]; 25];
        assert!(env_success(&spec, &seq_from(states)).unwrap());
    }

    #[test]
    fn cycler_pitfall_frozen_pose_fails() {
        let spec = EnvSpec::new(EnvKind::Cycler);
        // Frozen at the best pose with perfect speed tracking: zero phase
        // increment, so no success.
        let states = vec![vec![std::f64::consts::FRAC_PI_2, 0.8]; 150];
        assert!(!env_success(&spec, &seq_from(states)).unwrap());
    }

    #[test]
    fn cycler_steady_rotation_succeeds() {
        let spec = EnvSpec::new(EnvKind::Cycler);
        let states: Vec<Vec<f64>> = (0..150)
            .map(|i| vec![wrap_angle(0.2 * i as f64), 0.8])
            .collect();
        assert!(env_success(&spec, &seq_from(states)).unwrap());
    }

    #[test]
    fn success_errors_on_short_sequence() {
        let spec = EnvSpec::new(EnvKind::Cycler);
        let states = vec![vec![0.0, 0.8]; 10];
        assert!(env_success(&spec, &seq_from(states)).is_err());
    }

    #[test]
    fn seat_leg_zone_is_deceptive() {
        let spec = EnvSpec::new(EnvKind::Seat);
        // High task reward at the zone center, zero success contribution.
        let (cx, cy) = spec.leg_center;
        let s = StateVec(vec![cx, cy, 0.0, 0.0]);
        let (_, r) = env_step(&spec, &s, &[0.0, 0.0]).unwrap();
        assert!(r >= 0.8);
        assert!(!spec.in_proper_seat(cx, cy));
        // Anywhere in the zone the dense reward stays high.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let px = cx + rng.gen_range(-0.08..0.08);
            let py = cy + rng.gen_range(-0.08..0.08);
            let s = StateVec(vec![px, py, 0.0, 0.0]);
            let (_, r) = env_step(&spec, &s, &[0.0, 0.0]).unwrap();
            assert!(r >= 0.77, "reward {r} at ({px},{py})");
            assert!(!spec.in_proper_seat(px, py));
        }
    }

    #[test]
    fn random_policy_rarely_succeeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [EnvKind::Cycler, EnvKind::Seat] {
            let spec = EnvSpec::new(kind);
            let mut successes = 0;
            for _ in 0..100 {
                let mut env = Env::new(spec.clone());
                let mut states = vec![env.reset()];
                loop {
                    let a: Vec<f64> = (0..spec.action_dim())
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect();
                    let t = env.step(&a).unwrap();
                    states.push(t.next_state.clone());
                    if t.done {
                        break;
                    }
                }
                let seq = StateSequence::new(states, 0, (0, spec.horizon)).unwrap();
                if env_success(&spec, &seq).unwrap() {
                    successes += 1;
                }
            }
            assert!(successes <= 2, "{} random successes on {:?}", successes, kind);
        }
    }

    #[test]
    fn occlusion_union_covers_all_features() {
        for kind in [EnvKind::Cycler, EnvKind::Seat] {
            let dim = EnvSpec::new(kind).state_dim();
            let mut covered = vec![false; dim];
            for v in 0..ViewId::COUNT {
                let mask = occlusion_mask(kind, ViewId(v));
                assert!(mask.iter().any(|&m| m), "view {v} sees nothing");
                for (c, m) in covered.iter_mut().zip(&mask) {
                    *c |= m;
                }
            }
            assert!(covered.iter().all(|&c| c));
        }
    }

    #[test]
    fn render_identity_view_matches_states() {
        // Seat view 1: no occlusion, shift by 1.
        let states: Vec<Vec<f64>> = (0..16)
            .map(|i| vec![i as f64, 10.0 + i as f64, 0.1, 0.2])
            .collect();
        let seq = seq_from(states.clone());
        let clip = render(&seq, EnvKind::Seat, ViewId(1), 16);
        for (frame, s) in clip.frames.iter().zip(&states) {
            let recon = unproject(ViewId(1), frame);
            assert_eq!(&recon, s);
        }
    }

    #[test]
    fn render_occludes_py_to_zero() {
        let states: Vec<Vec<f64>> = (0..16)
            .map(|i| vec![0.1, 0.5 + 0.01 * i as f64, 0.0, 0.0])
            .collect();
        let clip = render(&seq_from(states), EnvKind::Seat, ViewId(0), 16);
        for frame in &clip.frames {
            let recon = unproject(ViewId(0), frame);
            assert_eq!(recon[1], 0.0);
        }
    }

    #[test]
    fn render_pads_short_sequences() {
        let states = vec![vec![1.0, 0.5]; 4];
        let clip = render(&seq_from(states), EnvKind::Cycler, ViewId(1), 16);
        assert_eq!(clip.frames.len(), 16);
        assert!(clip.frames.iter().all(|f| f == &clip.frames[0]));
    }

    #[test]
    fn views_differ_only_in_projection_and_occlusion() {
        // Independent per-frame reimplementation of the render rule.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let states: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let seq = seq_from(states.clone());
        for v in 0..4 {
            let clip = render(&seq, EnvKind::Seat, ViewId(v), 16);
            let mask = occlusion_mask(EnvKind::Seat, ViewId(v));
            for (t, frame) in clip.frames.iter().enumerate() {
                let shift = v % 4;
                for i in 0..4 {
                    let src = (i + shift) % 4;
                    let expect = if mask[src] { states[t][src] } else { 0.0 };
                    assert_eq!(frame[i], expect);
                }
            }
        }
    }
}
