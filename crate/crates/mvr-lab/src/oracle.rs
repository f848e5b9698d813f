//! Synthetic similarity oracle standing in for a video-language model.
//!
//! Scores are a ground-truth motion quality read off the rendered clip
//! (so occlusion degrades them), plus a per-view bias and deterministic
//! noise derived from the clip contents rather than call order.

use crate::env::unproject;
use crate::error::{Error, Result};
use crate::math::{angle_diff, clamp01, dot, hash_f64s, norm};
use crate::types::{RenderedClip, TaskPrompt, ViewId};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub view_bias: [f64; ViewId::COUNT],
    pub noise_std: f64,
    pub embed_dim: usize,
    pub rng_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            view_bias: [0.10, 0.00, -0.05, 0.00],
            noise_std: 0.02,
            embed_dim: 16,
            rng_seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config("embed_dim must be >= 2".into()));
        }
        Ok(())
    }
}

/// Ground-truth quality function, evaluated purely on clip content.
#[derive(Debug, Clone)]
pub enum Quality {
    /// Mean per-frame phase increment of the first reconstructed channel,
    /// scaled by `1 / inc_scale` and clamped to [0, 1].
    Running { inc_scale: f64 },
    /// Fraction of the final `tail` frames whose reconstructed position sits
    /// in the proper-seat square with reconstructed speed below `speed_max`.
    Sitting {
        seat_center: (f64, f64),
        half_width: f64,
        speed_max: f64,
        tail: usize,
    },
}

impl Quality {
    fn evaluate(&self, clip: &RenderedClip) -> f64 {
        match *self {
            Quality::Running { inc_scale } => {
                if clip.frames.len() < 2 {
                    return 0.0;
                }
                let mut inc = 0.0;
                let mut prev = unproject(clip.view, &clip.frames[0])[0];
                for frame in &clip.frames[1..] {
                    let theta = unproject(clip.view, frame)[0];
                    inc += angle_diff(prev, theta);
                    prev = theta;
                }
                let mean_inc = (inc / (clip.frames.len() - 1) as f64).abs();
                clamp01(mean_inc / inc_scale)
            }
            Quality::Sitting {
                seat_center,
                half_width,
                speed_max,
                tail,
            } => {
                let n = clip.frames.len();
                let take = tail.min(n);
                if take == 0 {
                    return 0.0;
                }
                let hits = clip.frames[n - take..]
                    .iter()
                    .filter(|frame| {
                        let s = unproject(clip.view, frame);
                        let in_region = (s[0] - seat_center.0).abs() < half_width
                            && (s[1] - seat_center.1).abs() < half_width;
                        let speed = (s[2] * s[2] + s[3] * s[3]).sqrt();
                        in_region && speed < speed_max
                    })
                    .count();
                hits as f64 / take as f64
            }
        }
    }
}

pub struct Oracle {
    cfg: OracleConfig,
    prompts: Vec<(String, Quality)>,
    // Per-frame scorers for the image-similarity baseline.
    chair_center: (f64, f64),
}

impl Oracle {
    pub fn new(cfg: OracleConfig, prompts: Vec<(String, Quality)>) -> Result<Self> {
        cfg.validate()?;
        Ok(Oracle {
            cfg,
            prompts,
            chair_center: (0.7, 0.7),
        })
    }

    /// Oracle with the two standard prompts registered at the default
    /// environment geometry.
    pub fn with_standard_prompts(cfg: OracleConfig) -> Result<Self> {
        Self::new(
            cfg,
            vec![
                ("running".into(), Quality::Running { inc_scale: 0.25 }),
                (
                    "sitting".into(),
                    Quality::Sitting {
                        seat_center: (0.7, 0.78),
                        half_width: 0.08,
                        speed_max: 0.02,
                        tail: 16,
                    },
                ),
            ],
        )
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    fn quality_for(&self, prompt: &TaskPrompt) -> Result<&Quality> {
        self.prompts
            .iter()
            .find(|(name, _)| *name == prompt.0)
            .map(|(_, q)| q)
            .ok_or_else(|| Error::Invalid(format!("unknown prompt '{}'", prompt.0)))
    }

    /// Video-text similarity in [0, 1]: quality plus view bias plus noise
    /// drawn deterministically from the clip contents.
    pub fn score_text(&self, clip: &RenderedClip, prompt: &TaskPrompt) -> Result<f64> {
        let quality = self.quality_for(prompt)?;
        let q = quality.evaluate(clip);
        let bias = self.cfg.view_bias[clip.view.0];
        let eta = if self.cfg.noise_std > 0.0 {
            let flat: Vec<f64> = clip
                .frames
                .iter()
                .flatten()
                .copied()
                .chain(std::iter::once(clip.view.0 as f64))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(hash_f64s(self.cfg.rng_seed, &flat));
            Normal::new(0.0, self.cfg.noise_std).unwrap().sample(&mut rng)
        } else {
            0.0
        };
        Ok(clamp01(q + bias + eta))
    }

    /// Deterministic unit-norm clip embedding: temporal summary statistics
    /// (per-channel mean and mean absolute first difference, plus a constant)
    /// through a fixed seeded random projection.
    pub fn embed(&self, clip: &RenderedClip) -> Vec<f64> {
        let d_o = clip.frame_dim();
        let n = clip.frames.len();
        let mut feats = vec![0.0; 2 * d_o + 1];
        for frame in &clip.frames {
            for (c, &v) in frame.iter().enumerate() {
                feats[c] += v / n as f64;
            }
        }
        if n > 1 {
            for w in clip.frames.windows(2) {
                for c in 0..d_o {
                    feats[d_o + c] += (w[1][c] - w[0][c]).abs() / (n - 1) as f64;
                }
            }
        }
        feats[2 * d_o] = 1.0;
        let proj = self.projection_matrix(feats.len());
        let mut e: Vec<f64> = (0..self.cfg.embed_dim)
            .map(|r| dot(&proj[r * feats.len()..(r + 1) * feats.len()], &feats))
            .collect();
        let nrm = norm(&e);
        e.iter_mut().for_each(|v| *v /= nrm);
        e
    }

    /// Pairwise video similarity: cosine of the two clip embeddings.
    pub fn score_pair(&self, a: &RenderedClip, b: &RenderedClip) -> f64 {
        dot(&self.embed(a), &self.embed(b))
    }

    /// Single-frame score for the image-similarity baseline: peaks at one
    /// static pose, deliberately blind to motion.
    pub fn image_score(&self, frame: &[f64], view: ViewId, prompt: &TaskPrompt) -> Result<f64> {
        let s = unproject(view, frame);
        match self.quality_for(prompt)? {
            Quality::Running { .. } => {
                let theta = s[0];
                Ok(((theta - std::f64::consts::FRAC_PI_2).cos() + 1.0) / 2.0)
            }
            Quality::Sitting { .. } => {
                let dx = s[0] - self.chair_center.0;
                let dy = s[1] - self.chair_center.1;
                Ok((1.0 - (dx * dx + dy * dy).sqrt()).max(0.0))
            }
        }
    }

    fn projection_matrix(&self, feat_dim: usize) -> Vec<f64> {
        let mut rng =
            ChaCha8Rng::seed_from_u64(crate::math::hash_u64(self.cfg.rng_seed, feat_dim as u64));
        let scale = 1.0 / (feat_dim as f64).sqrt();
        (0..self.cfg.embed_dim * feat_dim)
            .map(|_| rng.gen_range(-scale..scale))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{render, EnvKind};
    use crate::types::{StateSequence, StateVec};

    fn oracle(noise_std: f64) -> Oracle {
        Oracle::with_standard_prompts(OracleConfig {
            noise_std,
            ..OracleConfig::default()
        })
        .unwrap()
    }

    fn cycler_seq(inc: f64) -> StateSequence {
        let states = (0..16)
            .map(|i| StateVec(vec![crate::math::wrap_angle(inc * i as f64), 0.8]))
            .collect();
        StateSequence::new(states, 0, (0, 16)).unwrap()
    }

    fn seat_seq(px: f64, py: f64) -> StateSequence {
        let states = (0..16).map(|_| StateVec(vec![px, py, 0.0, 0.0])).collect();
        StateSequence::new(states, 0, (0, 16)).unwrap()
    }

    #[test]
    fn frozen_cycler_scores_only_bias() {
        let o = oracle(0.0);
        let clip = render(&cycler_seq(0.0), EnvKind::Cycler, ViewId(1), 16);
        let s = o.score_text(&clip, &TaskPrompt::new("running")).unwrap();
        assert_eq!(s, 0.0); // bias[1] = 0, q = 0
        let clip0 = render(&cycler_seq(0.0), EnvKind::Cycler, ViewId(0), 16);
        let s0 = o.score_text(&clip0, &TaskPrompt::new("running")).unwrap();
        assert!((s0 - 0.10).abs() < 1e-12); // only the view-0 bias remains
    }

    #[test]
    fn perfect_sit_from_side_view_scores_one() {
        let o = oracle(0.0);
        let clip = render(&seat_seq(0.7, 0.78), EnvKind::Seat, ViewId(1), 16);
        let s = o.score_text(&clip, &TaskPrompt::new("sitting")).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn occluded_front_view_misses_sitting() {
        let o = oracle(0.0);
        let front = render(&seat_seq(0.7, 0.78), EnvKind::Seat, ViewId(0), 16);
        let side = render(&seat_seq(0.7, 0.78), EnvKind::Seat, ViewId(1), 16);
        let s_front = o.score_text(&front, &TaskPrompt::new("sitting")).unwrap();
        let s_side = o.score_text(&side, &TaskPrompt::new("sitting")).unwrap();
        assert!(s_front < s_side);
    }

    #[test]
    fn unknown_prompt_is_an_error() {
        let o = oracle(0.0);
        let clip = render(&cycler_seq(0.1), EnvKind::Cycler, ViewId(1), 16);
        assert!(o.score_text(&clip, &TaskPrompt::new("juggling")).is_err());
    }

    #[test]
    fn embedding_is_unit_norm_and_deterministic() {
        let o = oracle(0.02);
        let clip = render(&cycler_seq(0.17), EnvKind::Cycler, ViewId(1), 16);
        let e1 = o.embed(&clip);
        let e2 = o.embed(&clip);
        assert_eq!(e1, e2);
        assert!((norm(&e1) - 1.0).abs() <= 1e-9);
        assert!((o.score_pair(&clip, &clip) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_score_symmetric_and_bounded() {
        let o = oracle(0.02);
        let a = render(&cycler_seq(0.17), EnvKind::Cycler, ViewId(1), 16);
        let b = render(&cycler_seq(0.02), EnvKind::Cycler, ViewId(3), 16);
        let ab = o.score_pair(&a, &b);
        let ba = o.score_pair(&b, &a);
        assert_eq!(ab, ba);
        assert!(ab.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn pitfall_property() {
        let o = oracle(0.02);
        // Best single pose, frozen.
        let states = (0..16)
            .map(|_| StateVec(vec![std::f64::consts::FRAC_PI_2, 0.8]))
            .collect();
        let frozen = StateSequence::new(states, 0, (0, 16)).unwrap();
        for v in 0..4 {
            let clip = render(&frozen, EnvKind::Cycler, ViewId(v), 16);
            let s = o.score_text(&clip, &TaskPrompt::new("running")).unwrap();
            let bound = o.cfg.view_bias[v] + 3.0 * o.cfg.noise_std;
            assert!(s <= bound, "view {v}: frozen score {s} > {bound}");
        }
        // Steady cycling from an unoccluded view.
        let clip = render(&cycler_seq(0.25), EnvKind::Cycler, ViewId(1), 16);
        let s = o.score_text(&clip, &TaskPrompt::new("running")).unwrap();
        assert!(s >= 0.8, "cycling score {s}");
    }

    #[test]
    fn view_bias_property() {
        let o = oracle(0.0);
        // Unoccluded views 1 and 3 see the same quality, so the score gap is
        // exactly the bias gap.
        let seq = cycler_seq(0.1);
        let s1 = o
            .score_text(&render(&seq, EnvKind::Cycler, ViewId(1), 16), &TaskPrompt::new("running"))
            .unwrap();
        let s3 = o
            .score_text(&render(&seq, EnvKind::Cycler, ViewId(3), 16), &TaskPrompt::new("running"))
            .unwrap();
        assert!((s1 - s3).abs() < 1e-12);
    }

    #[test]
    fn image_score_peaks_at_single_pose() {
        let o = oracle(0.0);
        // Cycler view 1 shifts channels by one: frame = [v, theta].
        let best = o
            .image_score(&[0.8, std::f64::consts::FRAC_PI_2], ViewId(1), &TaskPrompt::new("running"))
            .unwrap();
        assert!((best - 1.0).abs() < 1e-12);
        let worse = o
            .image_score(&[0.8, 0.0], ViewId(1), &TaskPrompt::new("running"))
            .unwrap();
        assert!(worse < best);
    }
}
