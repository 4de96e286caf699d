//! Domainness scoring and top-B frame selection for either domain.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::Discriminator;
use crate::encoders::{PreparedFrame, SegModel};
use crate::error::{Error, Result};
use crate::interaction::{interact_values, InteractionConfig, InteractionParams};
use crate::numerics::{Matrix, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringStrategy {
    #[default]
    CrossModal,
    TwoDOnly,
    ThreeDOnly,
    Average2d3d,
    Random,
}

impl ScoringStrategy {
    pub const ALL: [ScoringStrategy; 5] = [
        ScoringStrategy::CrossModal,
        ScoringStrategy::TwoDOnly,
        ScoringStrategy::ThreeDOnly,
        ScoringStrategy::Average2d3d,
        ScoringStrategy::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoringStrategy::CrossModal => "cross_modal",
            ScoringStrategy::TwoDOnly => "two_d_only",
            ScoringStrategy::ThreeDOnly => "three_d_only",
            ScoringStrategy::Average2d3d => "average_2d_3d",
            ScoringStrategy::Random => "random",
        }
    }
}

impl fmt::Display for ScoringStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoringStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scoring strategy `{s}`")))
    }
}

/// Annotation budget as an absolute count or a fraction of the domain size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    Count(usize),
    Fraction(f64),
}

impl Budget {
    /// Resolves against `n` frames: fractions floor with a minimum of one.
    pub fn resolve(self, n: usize) -> Result<usize> {
        let b = match self {
            Budget::Count(c) => c,
            Budget::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::arg(format!("budget fraction {f} outside (0, 1]")));
                }
                ((f * n as f64).floor() as usize).max(1)
            }
        };
        if b == 0 {
            return Err(Error::arg("budget must be at least one frame"));
        }
        if b > n {
            return Err(Error::arg(format!("budget {b} exceeds {n} frames")));
        }
        Ok(b)
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Count(c) => write!(f, "{c}"),
            Budget::Fraction(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub budget: usize,
    pub strategy: ScoringStrategy,
}

/// Per-frame discriminator inputs for every scoring strategy.
#[derive(Clone, Debug)]
pub struct ScoringInputs {
    pub id: u64,
    /// `[f̂_2D, f̂_3D]`, N×2F.
    pub cross: Matrix,
    pub f2d: Matrix,
    pub f3d: Matrix,
}

fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(a.len() + b.len());
    for r in 0..a.rows() {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Matrix::from_vec(a.rows(), a.cols() + b.cols(), data).expect("aligned rows")
}

pub fn scoring_inputs(
    store: &ParamStore,
    model: &SegModel,
    interaction: &InteractionParams,
    config: &InteractionConfig,
    frame: &PreparedFrame,
) -> Result<ScoringInputs> {
    let pair = model.feature_pair(store, frame)?;
    let (x2, x3) = interact_values(store, interaction, &pair.f2d, &pair.f3d, config)?;
    Ok(ScoringInputs { id: frame.id, cross: hcat(&x2, &x3), f2d: pair.f2d, f3d: pair.f3d })
}

/// Discriminators available for scoring; unused strategies may stay empty.
#[derive(Clone, Debug, Default)]
pub struct Scorers {
    pub cross: Option<Discriminator>,
    pub two_d: Option<Discriminator>,
    pub three_d: Option<Discriminator>,
}

fn need<'a>(d: &'a Option<Discriminator>, what: &str) -> Result<&'a Discriminator> {
    d.as_ref()
        .ok_or_else(|| Error::State(format!("{what} discriminator has not been trained")))
}

pub fn score_frames(
    inputs: &[ScoringInputs],
    scorers: &Scorers,
    store: &ParamStore,
    strategy: ScoringStrategy,
    seed: u64,
) -> Result<Vec<(u64, f64)>> {
    match strategy {
        ScoringStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(inputs.iter().map(|x| (x.id, rng.random::<f64>())).collect())
        }
        ScoringStrategy::CrossModal => {
            let d = need(&scorers.cross, "cross-modal")?;
            inputs.iter().map(|x| Ok((x.id, d.score(store, &x.cross)?))).collect()
        }
        ScoringStrategy::TwoDOnly => {
            let d = need(&scorers.two_d, "2D")?;
            inputs.iter().map(|x| Ok((x.id, d.score(store, &x.f2d)?))).collect()
        }
        ScoringStrategy::ThreeDOnly => {
            let d = need(&scorers.three_d, "3D")?;
            inputs.iter().map(|x| Ok((x.id, d.score(store, &x.f3d)?))).collect()
        }
        ScoringStrategy::Average2d3d => {
            let d2 = need(&scorers.two_d, "2D")?;
            let d3 = need(&scorers.three_d, "3D")?;
            inputs
                .iter()
                .map(|x| Ok((x.id, average(d2.score(store, &x.f2d)?, d3.score(store, &x.f3d)?))))
                .collect()
        }
    }
}

pub fn average(s2d: f64, s3d: f64) -> f64 {
    (s2d + s3d) / 2.0
}

/// Highest-scoring `budget` frames, ties broken by ascending id.
pub fn select_top(scored: &[(u64, f64)], budget: Budget, strategy: ScoringStrategy) -> Result<SelectionResult> {
    if let Some((id, s)) = scored.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::Numeric(format!("frame {id} has non-finite score {s}")));
    }
    let mut seen: Vec<u64> = scored.iter().map(|x| x.0).collect();
    seen.sort_unstable();
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::arg(format!("duplicate frame id {}", w[0])));
    }
    let b = budget.resolve(scored.len())?;
    let mut order: Vec<&(u64, f64)> = scored.iter().collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let top = &order[..b];
    let ids: Vec<u64> = top.iter().map(|x| x.0).collect();
    Ok(SelectionResult { ids, scores: top.iter().map(|x| x.1).collect(), budget: b, strategy })
}

/// Scores source frames and keeps the most target-like.
pub fn sample_source(
    inputs: &[ScoringInputs],
    scorers: &Scorers,
    store: &ParamStore,
    budget: Budget,
    strategy: ScoringStrategy,
    seed: u64,
) -> Result<SelectionResult> {
    select_top(&score_frames(inputs, scorers, store, strategy, seed)?, budget, strategy)
}

/// Same mechanics as [`sample_source`] over target frames.
pub fn sample_target(
    inputs: &[ScoringInputs],
    scorers: &Scorers,
    store: &ParamStore,
    budget: Budget,
    strategy: ScoringStrategy,
    seed: u64,
) -> Result<SelectionResult> {
    sample_source(inputs, scorers, store, budget, strategy, seed)
}

#[derive(Serialize)]
struct SelectionRow<'a> {
    frame_id: u64,
    score: f64,
    rank: usize,
    strategy: &'a str,
    budget: usize,
}

pub fn write_selections_csv(selections: &[&SelectionResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for sel in selections {
        for (rank, (&frame_id, &score)) in sel.ids.iter().zip(&sel.scores).enumerate() {
            w.serialize(SelectionRow {
                frame_id,
                score,
                rank: rank + 1,
                strategy: sel.strategy.as_str(),
                budget: sel.budget,
            })
            .map_err(|e| Error::format(path, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
