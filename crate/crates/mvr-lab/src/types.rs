//! Core domain types: states, sequences, clips, the comparison dataset and
//! the reference set of top-scoring sequences.

use crate::error::{Error, Result};
use std::collections::VecDeque;

/// A single environment state: fixed-length vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVec(pub Vec<f64>);

impl StateVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("state must be non-empty and finite".into()));
        }
        Ok(StateVec(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// An ordered run of states from one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    pub states: Vec<StateVec>,
    pub episode_id: u64,
    pub step_range: (usize, usize),
}

impl StateSequence {
    pub fn new(states: Vec<StateVec>, episode_id: u64, step_range: (usize, usize)) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Invalid("state sequence must be non-empty".into()));
        }
        let dim = states[0].dim();
        if states.iter().any(|s| s.dim() != dim) {
            return Err(Error::Invalid("state sequence has mixed dimensions".into()));
        }
        Ok(StateSequence {
            states,
            episode_id,
            step_range,
        })
    }

    /// Number of states in the sequence (the `n(s)` used to average per-state
    /// quantities over a sequence).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].dim()
    }
}

/// Camera viewpoint index; four azimuths at 90-degree spacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ViewId(pub usize);

impl ViewId {
    pub const COUNT: usize = 4;

    pub fn new(index: usize) -> Result<Self> {
        if index >= Self::COUNT {
            return Err(Error::Invalid(format!("view index {index} out of range")));
        }
        Ok(ViewId(index))
    }

    pub fn azimuth_deg(self) -> usize {
        self.0 * 90
    }
}

/// A viewpoint-specific frame sequence derived from a state sequence.
///
/// Frames are feature vectors rather than pixels: a view-specific linear
/// projection of the state with occluded features zeroed out.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedClip {
    pub frames: Vec<Vec<f64>>,
    pub view: ViewId,
    pub source_episode: u64,
}

impl RenderedClip {
    pub fn frame_dim(&self) -> usize {
        self.frames.first().map(|f| f.len()).unwrap_or(0)
    }
}

/// Text label selecting the oracle's quality function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskPrompt(pub String);

impl TaskPrompt {
    pub fn new(text: &str) -> Self {
        TaskPrompt(text.to_string())
    }
}

/// One element of the comparison dataset: a state sequence, the unit-norm
/// embedding of one rendered clip of it, and that clip's text-similarity score.
#[derive(Debug, Clone)]
pub struct SimilaritySample {
    pub sequence: StateSequence,
    pub clip_embedding: Vec<f64>,
    pub text_score: f64,
    pub view: ViewId,
}

impl SimilaritySample {
    pub fn validate(&self) -> Result<()> {
        if !self.text_score.is_finite() || !(0.0..=1.0).contains(&self.text_score) {
            return Err(Error::Invalid(format!(
                "text score {} outside [0,1]",
                self.text_score
            )));
        }
        if self.clip_embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite clip embedding".into()));
        }
        let n = crate::math::norm(&self.clip_embedding);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("clip embedding norm {n} != 1")));
        }
        Ok(())
    }
}

/// Bounded FIFO collection of similarity samples (the comparison dataset).
#[derive(Debug, Clone)]
pub struct RewardDataset {
    samples: VecDeque<SimilaritySample>,
    capacity: usize,
}

impl RewardDataset {
    pub const DEFAULT_CAPACITY: usize = 20_000;

    pub fn new(capacity: usize) -> Self {
        RewardDataset {
            samples: VecDeque::new(),
            capacity,
        }
    }

    pub fn with_default_capacity() -> Self {
        Self::new(Self::DEFAULT_CAPACITY)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Append a sample, evicting the oldest one when full.
    pub fn append(&mut self, sample: SimilaritySample) -> Result<()> {
        sample.validate()?;
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        Ok(())
    }

    /// Samples in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &SimilaritySample> {
        self.samples.iter()
    }

    pub fn get(&self, idx: usize) -> &SimilaritySample {
        &self.samples[idx]
    }
}

/// Top-k sequences by text score, ties broken by earlier arrival.
///
/// Scores offered for the same behavior from different views are aggregated
/// by the caller offering each view's score; `offer` keeps the max per entry
/// implicitly because a better-scoring later offer of the same sequence is a
/// distinct entry competing on its own score.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    // (score, arrival index, sequence); kept sorted best-first.
    entries: Vec<(f64, u64, StateSequence)>,
    k: usize,
    next_arrival: u64,
}

impl ReferenceSet {
    pub const DEFAULT_K: usize = 10;

    pub fn new(k: usize) -> Self {
        ReferenceSet {
            entries: Vec::new(),
            k,
            next_arrival: 0,
        }
    }

    pub fn with_default_k() -> Self {
        Self::new(Self::DEFAULT_K)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Offer a scored sequence; it is retained iff it ranks in the top-k of
    /// everything offered so far. Higher score wins; on equal scores the
    /// earlier arrival wins.
    pub fn offer(&mut self, seq: StateSequence, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Invalid("non-finite reference score".into()));
        }
        let arrival = self.next_arrival;
        self.next_arrival += 1;
        self.entries.push((score, arrival, seq));
        // Best first: higher score, then earlier arrival.
        self.entries.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| a.1.cmp(&b.1))
        });
        self.entries.truncate(self.k);
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&StateSequence, f64)> {
        self.entries.iter().map(|(score, _, seq)| (seq, *score))
    }

    /// All states across all retained sequences, in rank order.
    pub fn all_states(&self) -> Vec<StateVec> {
        self.entries
            .iter()
            .flat_map(|(_, _, seq)| seq.states.iter().cloned())
            .collect()
    }
}
