//! State-relevance model and its two learning objectives.
//!
//! The model factors into a state encoder (two dense layers, the second
//! l2-normalized) and a relevance direction; the value of a state is the
//! cosine between its normalized embedding and the normalized predictor, so
//! outputs are bounded in [-1, 1] by construction.
//!
//! The matching loss is a cross-entropy between two Bradley-Terry comparison
//! probabilities: one from video-text similarity scores, one from per-state
//! relevance averaged over each sequence. The regularizer pins mean state
//! embeddings to the pairwise similarity of the corresponding clip embeddings.
//! All gradients are written by hand and validated against central finite
//! differences.

use crate::error::{Error, Result};
use crate::math::{dot, log_sigmoid, norm, sigmoid};
use crate::nn::{finite_difference_check, Activation, Grads, Mlp};
use crate::types::{RewardDataset, SimilaritySample, StateSequence, StateVec};
use rand::prelude::*;

#[derive(Debug, Clone)]
pub enum LrSchedule {
    Fixed(f64),
    /// Linear interpolation from `start` (first epoch) to `end` (last epoch).
    Linear { start: f64, end: f64 },
}

impl LrSchedule {
    pub fn at(&self, epoch: usize, max_epochs: usize) -> f64 {
        match *self {
            LrSchedule::Fixed(lr) => lr,
            LrSchedule::Linear { start, end } => {
                if max_epochs <= 1 {
                    start
                } else {
                    let t = epoch as f64 / (max_epochs - 1) as f64;
                    start + (end - start) * t
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Temperature applied to similarity-score differences before the sigmoid.
    pub beta: f64,
    /// Weight of the embedding regularizer (1.0 = full objective, 0.0 = the
    /// "w/o reg" ablation).
    pub reg_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: LrSchedule::Fixed(1e-3),
            batch_size: 64,
            max_epochs: 60,
            early_stop_patience: 8,
            beta: 1.0,
            reg_weight: 1.0,
        }
    }
}

impl TrainConfig {
    /// Schedule documented alongside the desk default: linear 6e-4 -> 5e-5.
    pub fn paper_schedule() -> LrSchedule {
        LrSchedule::Linear {
            start: 6e-4,
            end: 5e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr_ok = match self.schedule {
            LrSchedule::Fixed(lr) => lr >= 0.0,
            LrSchedule::Linear { start, end } => start > 0.0 && end > 0.0,
        };
        if !lr_ok {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Encoder + relevance direction.
#[derive(Debug, Clone)]
pub struct RelevanceModel {
    pub backbone: Mlp,
    pub predictor: Vec<f64>,
    pub hidden: usize,
}

/// Cached forward pass of the encoder for one state.
struct StateForward {
    cache: crate::nn::Cache,
    /// Normalized embedding; all zeros when the pre-normalization output
    /// vanished (value and gradient are defined as 0 there).
    e: Vec<f64>,
    h2_norm: f64,
    f: f64,
}

/// Gradients for the full parameter set.
#[derive(Debug, Clone)]
pub struct RelGrads {
    pub backbone: Grads,
    pub predictor: Vec<f64>,
}

impl RelGrads {
    pub fn zeros_like(m: &RelevanceModel) -> Self {
        RelGrads {
            backbone: Grads::zeros_like(&m.backbone),
            predictor: vec![0.0; m.predictor.len()],
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.backbone.scale(c);
        self.predictor.iter_mut().for_each(|v| *v *= c);
    }

    pub fn add(&mut self, other: &RelGrads) {
        self.backbone.add(&other.backbone);
        self.predictor
            .iter_mut()
            .zip(&other.predictor)
            .for_each(|(v, o)| *v += o);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.backbone.to_flat();
        out.extend_from_slice(&self.predictor);
        out
    }
}

impl RelevanceModel {
    pub const DESK_HIDDEN: usize = 32;
    pub const PAPER_HIDDEN: usize = 512;

    pub fn new<R: Rng>(state_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let backbone = Mlp::new(
            &[state_dim, hidden, hidden],
            &[Activation::Relu, Activation::Identity],
            rng,
        );
        // Kaiming-uniform bound over the predictor's fan-in.
        let bound = (6.0 / hidden as f64).sqrt();
        let predictor = (0..hidden).map(|_| rng.gen_range(-bound..bound)).collect();
        RelevanceModel {
            backbone,
            predictor,
            hidden,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.backbone.in_dim()
    }

    fn forward_state(&self, s: &[f64]) -> StateForward {
        let (h2, cache) = self.backbone.forward_cached(s);
        let h2_norm = norm(&h2);
        if h2_norm == 0.0 {
            return StateForward {
                cache,
                e: vec![0.0; self.hidden],
                h2_norm,
                f: 0.0,
            };
        }
        let e: Vec<f64> = h2.iter().map(|v| v / h2_norm).collect();
        let pn = norm(&self.predictor);
        let f = if pn == 0.0 {
            0.0
        } else {
            dot(&e, &self.predictor) / pn
        };
        StateForward {
            cache,
            e,
            h2_norm,
            f,
        }
    }

    /// Normalized state embedding (the encoder output).
    pub fn embed_state(&self, s: &StateVec) -> Vec<f64> {
        self.forward_state(s.as_slice()).e
    }

    /// Relevance value in [-1, 1].
    pub fn value(&self, s: &StateVec) -> f64 {
        self.value_slice(s.as_slice())
    }

    pub fn value_slice(&self, s: &[f64]) -> f64 {
        self.forward_state(s).f
    }

    /// Mean relevance over a sequence.
    pub fn seq_mean_value(&self, seq: &StateSequence) -> f64 {
        seq.states.iter().map(|s| self.value(s)).sum::<f64>() / seq.len() as f64
    }

    /// Mean of per-state normalized embeddings.
    pub fn encode_seq_mean(&self, seq: &StateSequence) -> Vec<f64> {
        let mut acc = vec![0.0; self.hidden];
        for s in &seq.states {
            let e = self.embed_state(s);
            acc.iter_mut().zip(&e).for_each(|(a, v)| *a += v);
        }
        let n = seq.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Backpropagate upstream gradients for one state: `grad_f` w.r.t. the
    /// scalar relevance value and `grad_e` w.r.t. the normalized embedding.
    fn backward_state(
        &self,
        fwd: &StateForward,
        grad_e: Option<&[f64]>,
        grad_f: f64,
        grads: &mut RelGrads,
    ) {
        if fwd.h2_norm == 0.0 {
            return; // value and embedding pinned to zero at the singularity
        }
        let pn = norm(&self.predictor);
        let pt: Vec<f64> = if pn == 0.0 {
            vec![0.0; self.hidden]
        } else {
            self.predictor.iter().map(|v| v / pn).collect()
        };
        // Upstream gradient w.r.t. e, combining both paths.
        let mut u: Vec<f64> = pt.iter().map(|v| grad_f * v).collect();
        if let Some(ge) = grad_e {
            u.iter_mut().zip(ge).for_each(|(a, v)| *a += v);
        }
        // Through the normalization: d e / d h2 = (I - e e^T) / ||h2||.
        let ue = dot(&u, &fwd.e);
        let g_h2: Vec<f64> = u
            .iter()
            .zip(&fwd.e)
            .map(|(uv, ev)| (uv - ue * ev) / fwd.h2_norm)
            .collect();
        self.backbone.backward(&fwd.cache, &g_h2, &mut grads.backbone);
        // Predictor path: d f / d p = (e - f * pt) / ||p||.
        if pn > 0.0 && grad_f != 0.0 {
            for i in 0..self.hidden {
                grads.predictor[i] += grad_f * (fwd.e[i] - fwd.f * pt[i]) / pn;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.backbone.param_count() + self.predictor.len()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = self.backbone.params_flat();
        out.extend_from_slice(&self.predictor);
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let nb = self.backbone.param_count();
        self.backbone.set_params_flat(&params[..nb])?;
        self.predictor.copy_from_slice(&params[nb..]);
        Ok(())
    }
}

/// Bradley-Terry probability that video i beats video j, from their
/// text-similarity scores.
pub fn h_vid(score_i: f64, score_j: f64, beta: f64) -> f64 {
    sigmoid(beta * (score_i - score_j))
}

/// Bradley-Terry probability that sequence i beats sequence j, from mean
/// per-state relevance.
pub fn h_state(m: &RelevanceModel, seq_i: &StateSequence, seq_j: &StateSequence) -> f64 {
    sigmoid(m.seq_mean_value(seq_i) - m.seq_mean_value(seq_j))
}

/// Per-pair loss components.
#[derive(Debug, Clone, Copy, Default)]
pub struct PairTerms {
    pub matching: f64,
    pub reg: f64,
}

impl PairTerms {
    pub fn total(&self, reg_weight: f64) -> f64 {
        self.matching + reg_weight * self.reg
    }
}

/// Cross-entropy between the video-level and state-level comparison
/// probabilities for one pair of samples.
pub fn loss_matching(m: &RelevanceModel, a: &SimilaritySample, b: &SimilaritySample, beta: f64) -> f64 {
    let t = h_vid(a.text_score, b.text_score, beta);
    let x = m.seq_mean_value(&a.sequence) - m.seq_mean_value(&b.sequence);
    -t * log_sigmoid(x) - (1.0 - t) * log_sigmoid(-x)
}

/// Absolute gap between pairwise clip-embedding similarity and the inner
/// product of mean state embeddings.
pub fn loss_reg(m: &RelevanceModel, a: &SimilaritySample, b: &SimilaritySample) -> f64 {
    let psi = dot(&a.clip_embedding, &b.clip_embedding);
    let ip = dot(&m.encode_seq_mean(&a.sequence), &m.encode_seq_mean(&b.sequence));
    (psi - ip).abs()
}

/// Mean of (matching + reg) over a batch of pairs.
pub fn loss_total(
    m: &RelevanceModel,
    pairs: &[(&SimilaritySample, &SimilaritySample)],
    beta: f64,
    reg_weight: f64,
) -> f64 {
    assert!(!pairs.is_empty());
    pairs
        .iter()
        .map(|(a, b)| loss_matching(m, a, b, beta) + reg_weight * loss_reg(m, a, b))
        .sum::<f64>()
        / pairs.len() as f64
}

/// Loss terms and analytic gradients for one pair, accumulated into `grads`
/// with weight `scale`.
pub fn pair_loss_grads(
    m: &RelevanceModel,
    a: &SimilaritySample,
    b: &SimilaritySample,
    beta: f64,
    reg_weight: f64,
    scale: f64,
    grads: &mut RelGrads,
) -> PairTerms {
    let fwd_a: Vec<StateForward> = a.sequence.states.iter().map(|s| m.forward_state(s.as_slice())).collect();
    let fwd_b: Vec<StateForward> = b.sequence.states.iter().map(|s| m.forward_state(s.as_slice())).collect();
    let n_a = fwd_a.len() as f64;
    let n_b = fwd_b.len() as f64;

    let mu_a = fwd_a.iter().map(|f| f.f).sum::<f64>() / n_a;
    let mu_b = fwd_b.iter().map(|f| f.f).sum::<f64>() / n_b;
    let t = h_vid(a.text_score, b.text_score, beta);
    let x = mu_a - mu_b;
    let q = sigmoid(x);
    let matching = -t * log_sigmoid(x) - (1.0 - t) * log_sigmoid(-x);

    let mean_e = |fwds: &[StateForward]| {
        let mut acc = vec![0.0; m.hidden];
        for f in fwds {
            acc.iter_mut().zip(&f.e).for_each(|(x, v)| *x += v);
        }
        let n = fwds.len() as f64;
        acc.iter_mut().for_each(|x| *x /= n);
        acc
    };
    let g_a = mean_e(&fwd_a);
    let g_b = mean_e(&fwd_b);
    let psi = dot(&a.clip_embedding, &b.clip_embedding);
    let residual = psi - dot(&g_a, &g_b);
    let reg = residual.abs();

    // d matching / d mu_a = q - t; d reg / d g_a = -sign(residual) * g_b.
    let dmu = (q - t) * scale;
    let sgn = if residual > 0.0 {
        -1.0
    } else if residual < 0.0 {
        1.0
    } else {
        0.0
    };
    let ge_a: Vec<f64> = g_b.iter().map(|v| sgn * reg_weight * v * scale / n_a).collect();
    let ge_b: Vec<f64> = g_a.iter().map(|v| sgn * reg_weight * v * scale / n_b).collect();
    for f in &fwd_a {
        m.backward_state(f, Some(&ge_a), dmu / n_a, grads);
    }
    for f in &fwd_b {
        m.backward_state(f, Some(&ge_b), -dmu / n_b, grads);
    }
    PairTerms { matching, reg }
}

/// Fit the model to scalar targets by MSE (the "direct" ablation and the
/// image-similarity baseline both use this).
pub fn train_mse<R: Rng>(
    m: &mut RelevanceModel,
    data: &[(Vec<f64>, f64)],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::Invalid("need at least 2 samples".into()));
    }
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.schedule.at(epoch, cfg.max_epochs);
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.batch_size) {
            let mut grads = RelGrads::zeros_like(m);
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &i in chunk {
                let (x, y) = &data[i];
                let fwd = m.forward_state(x);
                let err = fwd.f - y;
                loss += err * err * scale;
                m.backward_state(&fwd, None, 2.0 * err * scale, &mut grads);
            }
            if !loss.is_finite() {
                return Err(Error::Numeric("non-finite MSE loss".into()));
            }
            m.backbone.sgd_step(&grads.backbone, lr);
            for (p, g) in m.predictor.iter_mut().zip(&grads.predictor) {
                *p -= lr * g;
            }
        }
    }
    Ok(())
}

/// Train on uniformly sampled cross-view pairs from the dataset, with a 10%
/// held-out split for early stopping.
pub fn train_relevance<R: Rng>(
    m: &mut RelevanceModel,
    dataset: &RewardDataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "dataset of {n} samples is too small to form pairs"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let n_holdout = n / 10;
    let (holdout, train): (&[usize], &[usize]) = indices.split_at(n_holdout);
    let train = if train.len() >= 2 { train } else { &indices[..] };

    // Fixed held-out pair set for the early-stopping criterion.
    let holdout_pairs: Vec<(usize, usize)> = if holdout.len() >= 2 {
        (0..holdout.len())
            .flat_map(|i| (i + 1..holdout.len()).map(move |j| (i, j)))
            .take(128)
            .map(|(i, j)| (holdout[i], holdout[j]))
            .collect()
    } else {
        Vec::new()
    };

    let eval_holdout = |m: &RelevanceModel| -> f64 {
        let pairs: Vec<_> = holdout_pairs
            .iter()
            .map(|&(i, j)| (dataset.get(i), dataset.get(j)))
            .collect();
        if pairs.is_empty() {
            f64::NAN
        } else {
            loss_total(m, &pairs, cfg.beta, cfg.reg_weight)
        }
    };

    let draws_per_epoch = (train.len() * 2).max(cfg.batch_size);
    let mut best_loss = f64::INFINITY;
    let mut best_params: Option<Vec<f64>> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.schedule.at(epoch, cfg.max_epochs);
        let mut remaining = draws_per_epoch;
        while remaining > 0 {
            let batch = remaining.min(cfg.batch_size);
            remaining -= batch;
            let mut grads = RelGrads::zeros_like(m);
            let scale = 1.0 / batch as f64;
            let mut loss = 0.0;
            for _ in 0..batch {
                let i = train[rng.gen_range(0..train.len())];
                let mut j = train[rng.gen_range(0..train.len())];
                while j == i {
                    j = train[rng.gen_range(0..train.len())];
                }
                let terms = pair_loss_grads(
                    m,
                    dataset.get(i),
                    dataset.get(j),
                    cfg.beta,
                    cfg.reg_weight,
                    scale,
                    &mut grads,
                );
                loss += terms.total(cfg.reg_weight) * scale;
            }
            if !loss.is_finite() {
                return Err(Error::Numeric("non-finite relevance loss".into()));
            }
            m.backbone.sgd_step(&grads.backbone, lr);
            for (p, g) in m.predictor.iter_mut().zip(&grads.predictor) {
                *p -= lr * g;
            }
        }
        if !holdout_pairs.is_empty() {
            let held = eval_holdout(m);
            if !held.is_finite() {
                return Err(Error::Numeric("non-finite held-out loss".into()));
            }
            if held + 1e-9 < best_loss {
                best_loss = held;
                best_params = Some(m.params_flat());
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.early_stop_patience {
                    break;
                }
            }
        }
    }
    if let Some(p) = best_params {
        m.set_params_flat(&p)?;
    }
    Ok(())
}

/// Max relative error between analytic and finite-difference gradients of the
/// combined pair loss over all model parameters.
pub fn grad_check(
    m: &RelevanceModel,
    a: &SimilaritySample,
    b: &SimilaritySample,
    beta: f64,
    epsilon: f64,
) -> f64 {
    let mut grads = RelGrads::zeros_like(m);
    pair_loss_grads(m, a, b, beta, 1.0, 1.0, &mut grads);
    let params = m.params_flat();
    finite_difference_check(&params, &grads.to_flat(), epsilon, |p| {
        let mut probe = m.clone();
        probe.set_params_flat(p).unwrap();
        loss_matching(&probe, a, b, beta) + loss_reg(&probe, a, b)
    })
}

/// Finite-difference errors for the matching loss and the regularizer
/// separately: `(matching_err, reg_err)`.
pub fn grad_check_components(
    m: &RelevanceModel,
    a: &SimilaritySample,
    b: &SimilaritySample,
    beta: f64,
    epsilon: f64,
) -> (f64, f64) {
    let params = m.params_flat();
    let mut match_grads = RelGrads::zeros_like(m);
    pair_loss_grads(m, a, b, beta, 0.0, 1.0, &mut match_grads);
    let match_flat = match_grads.to_flat();
    let match_err = finite_difference_check(&params, &match_flat, epsilon, |p| {
        let mut probe = m.clone();
        probe.set_params_flat(p).unwrap();
        loss_matching(&probe, a, b, beta)
    });

    let mut total_grads = RelGrads::zeros_like(m);
    pair_loss_grads(m, a, b, beta, 1.0, 1.0, &mut total_grads);
    let reg_flat: Vec<f64> = total_grads
        .to_flat()
        .iter()
        .zip(&match_flat)
        .map(|(t, mg)| t - mg)
        .collect();
    let reg_err = finite_difference_check(&params, &reg_flat, epsilon, |p| {
        let mut probe = m.clone();
        probe.set_params_flat(p).unwrap();
        loss_reg(&probe, a, b)
    });
    (match_err, reg_err)
}

/// Random well-formed similarity sample, for gradient checks and tests.
pub fn synthetic_sample<R: Rng>(
    state_dim: usize,
    seq_len: usize,
    embed_dim: usize,
    rng: &mut R,
) -> SimilaritySample {
    let states = (0..seq_len)
        .map(|_| StateVec::new((0..state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let mut emb: Vec<f64> = (0..embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = norm(&emb);
    emb.iter_mut().for_each(|v| *v /= n);
    SimilaritySample {
        sequence: StateSequence::new(states, 0, (0, seq_len)).unwrap(),
        clip_embedding: emb,
        text_score: rng.gen_range(0.0..=1.0),
        view: crate::types::ViewId(rng.gen_range(0..crate::types::ViewId::COUNT)),
    }
}
