//! Pointwise three-layer domain discriminator and its balanced training loop.
//!
//! Source frames carry label `0`, target frames label `1`. A frame's
//! domainness score is the mean of its per-point target probabilities.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Domain;
use crate::numerics::{adam_step, poly_lr, Matrix, OptimizerState, ParamId, ParamStore, Tape, Var, PROB_CLAMP};

/// Hidden width of the discriminator.
pub const DISC_HIDDEN: usize = 32;

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Discriminator {
    pub fn init(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Discriminator {
            w1: store.add_normal(format!("{name}.l1.w"), input, hidden, input, rng),
            b1: store.add_zeros(format!("{name}.l1.b"), 1, hidden),
            w2: store.add_normal(format!("{name}.l2.w"), hidden, hidden, hidden, rng),
            b2: store.add_zeros(format!("{name}.l2.b"), 1, hidden),
            w3: store.add_normal(format!("{name}.l3.w"), hidden, 1, hidden, rng),
            b3: store.add_zeros(format!("{name}.l3.b"), 1, 1),
            input,
            hidden,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]
    }

    /// Per-point logits, N×1.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.input {
            return Err(Error::shape(format!(
                "discriminator expects width {}, got {}",
                self.input,
                tape.value(x).cols()
            )));
        }
        let mut h = x;
        for (w, b, relu) in [(self.w1, self.b1, true), (self.w2, self.b2, true), (self.w3, self.b3, false)] {
            let (wv, bv) = (tape.param(store, w), tape.param(store, b));
            h = tape.matmul(h, wv)?;
            h = tape.add_row(h, bv)?;
            if relu {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Per-point probabilities (N×1) and the frame score (1×1).
    pub fn probs(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let z = self.logits(tape, store, x)?;
        let p = tape.sigmoid(z);
        let s = tape.mean(p)?;
        Ok((p, s))
    }

    /// Frame score of a materialised input matrix.
    pub fn score(&self, store: &ParamStore, x: &Matrix) -> Result<f64> {
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let (_, s) = self.probs(&mut tape, store, xv)?;
        Ok(tape.scalar(s))
    }
}

/// Scores the concatenation `[f̂_2D, f̂_3D]`; returns per-point probs and frame score.
pub fn discriminate(
    tape: &mut Tape,
    store: &ParamStore,
    disc: &Discriminator,
    f2d: Var,
    f3d: Var,
) -> Result<(Var, Var)> {
    if tape.value(f2d).shape() != tape.value(f3d).shape() {
        return Err(Error::shape(format!(
            "discriminate: {:?} vs {:?}",
            tape.value(f2d).shape(),
            tape.value(f3d).shape()
        )));
    }
    let x = tape.concat_cols(f2d, f3d)?;
    disc.probs(tape, store, x)
}

/// Mean binary cross-entropy of probabilities against a domain label.
pub fn bce_domain_loss(probs: &[f64], label: Domain) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::arg("no probabilities"));
    }
    let y = label.label();
    let mut total = 0.0;
    for &p in probs {
        let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::Numeric(format!("probability {p} outside (0, 1)")));
        }
        total -= y * c.ln() + (1.0 - y) * (1.0 - c).ln();
    }
    Ok(total / probs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscTrainConfig {
    pub iterations: usize,
    /// Frames per domain per iteration.
    pub batch: usize,
    pub lr: f64,
    pub poly_power: f64,
    /// Points subsampled per frame per iteration; 0 keeps all.
    pub points_per_frame: usize,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for DiscTrainConfig {
    fn default() -> Self {
        DiscTrainConfig {
            iterations: 500,
            batch: 8,
            lr: 1e-3,
            poly_power: 0.9,
            points_per_frame: 128,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscHistory {
    pub loss: Vec<f64>,
    /// Per-point accuracy on each training batch.
    pub accuracy: Vec<f64>,
}

fn subsample(rng: &mut impl Rng, n: usize, k: usize) -> Option<Vec<usize>> {
    if k == 0 || k >= n {
        return None;
    }
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Some(idx)
}

/// Trains `disc` in place on per-frame input matrices (one row per point).
///
/// Each iteration draws `batch` source and `batch` target frames with
/// replacement and minimises the sum of the two per-domain mean losses.
pub fn train_discriminator(
    store: &mut ParamStore,
    disc: &Discriminator,
    source: &[&Matrix],
    target: &[&Matrix],
    cfg: &DiscTrainConfig,
    seed: u64,
) -> Result<DiscHistory> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::arg("discriminator training needs frames from both domains"));
    }
    if cfg.batch == 0 || cfg.iterations == 0 {
        return Err(Error::arg("discriminator batch and iterations must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = disc.param_ids();
    let mut opt = OptimizerState::with_betas(store, &ids, cfg.beta1, cfg.beta2);
    let mut history = DiscHistory::default();
    for it in 0..cfg.iterations {
        store.zero_grads(&ids);
        let mut loss = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (frames, domain) in [(source, Domain::Source), (target, Domain::Target)] {
            for _ in 0..cfg.batch {
                let x = frames[rng.random_range(0..frames.len())];
                let rows = subsample(&mut rng, x.rows(), cfg.points_per_frame);
                let x = match rows {
                    Some(r) => x.select_rows(&r),
                    None => x.clone(),
                };
                let mut tape = Tape::with_trainable(&ids);
                let xv = tape.constant(x);
                let (p, _) = disc.probs(&mut tape, store, xv)?;
                let l = tape.bce(p, domain.label())?;
                let l = tape.scale(l, 1.0 / cfg.batch as f64);
                let grads = tape.backward(l)?;
                tape.accumulate_into(&grads, store)?;
                loss += tape.scalar(l);
                for &pv in tape.value(p).as_slice() {
                    if (pv >= 0.5) == (domain == Domain::Target) {
                        correct += 1;
                    }
                    seen += 1;
                }
            }
        }
        let lr = poly_lr(it, cfg.iterations, cfg.lr, cfg.poly_power)?;
        adam_step(store, &mut opt, lr)?;
        history.loss.push(loss);
        history.accuracy.push(correct as f64 / seen as f64);
    }
    Ok(history)
}

/// Fraction of frames whose score falls on the correct side of 0.5.
pub fn frame_accuracy(scores: &[(f64, Domain)]) -> f64 {
    let correct = scores
        .iter()
        .filter(|(s, d)| (*s >= 0.5) == (*d == Domain::Target))
        .count();
    correct as f64 / scores.len().max(1) as f64
}
