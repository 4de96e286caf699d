//! The full parameter set (segmentation, interaction, discriminators) and its checkpoint file.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FORMAT_VERSION;
use crate::discriminator::{Discriminator, DISC_HIDDEN};
use crate::encoders::{PreparedFrame, SegModel};
use crate::error::{Error, Result};
use crate::interaction::{InteractionConfig, InteractionParams};
use crate::numerics::{Matrix, ParamStore};
use crate::sampling::{scoring_inputs, Scorers, ScoringInputs, ScoringStrategy};
use crate::seed::stage_seed;

const CHECKPOINT_MAGIC: &[u8; 4] = b"CMCK";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub features: usize,
    pub classes: usize,
    pub disc_hidden: usize,
    pub interaction: InteractionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { features: 16, classes: 6, disc_hidden: DISC_HIDDEN, interaction: InteractionConfig::default() }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.features == 0 || self.classes < 2 || self.disc_hidden == 0 {
            return Err(Error::Config("model needs F ≥ 1, C ≥ 2 and H ≥ 1".into()));
        }
        Ok(())
    }
}

/// Which discriminators hold trained weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainedScorers {
    pub cross: bool,
    pub two_d: bool,
    pub three_d: bool,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub seg: SegModel,
    pub interaction: InteractionParams,
    pub disc_cross: Discriminator,
    pub disc_2d: Discriminator,
    pub disc_3d: Discriminator,
    pub trained: TrainedScorers,
}

impl Model {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (f, h) = (config.features, config.disc_hidden);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, "init.seg"));
        let seg = SegModel::init(&mut store, f, config.classes, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, "init.interaction"));
        let interaction = InteractionParams::init(&mut store, f, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, "init.disc"));
        let disc_cross = Discriminator::init(&mut store, "disc.cross", 2 * f, h, &mut rng);
        let disc_2d = Discriminator::init(&mut store, "disc.2d", f, h, &mut rng);
        let disc_3d = Discriminator::init(&mut store, "disc.3d", f, h, &mut rng);
        Ok(Model {
            config: config.clone(),
            store,
            seg,
            interaction,
            disc_cross,
            disc_2d,
            disc_3d,
            trained: TrainedScorers::default(),
        })
    }

    pub fn scoring_inputs(&self, frame: &PreparedFrame) -> Result<ScoringInputs> {
        scoring_inputs(&self.store, &self.seg, &self.interaction, &self.config.interaction, frame)
    }

    /// Trained discriminators only.
    pub fn scorers(&self) -> Scorers {
        Scorers {
            cross: self.trained.cross.then(|| self.disc_cross.clone()),
            two_d: self.trained.two_d.then(|| self.disc_2d.clone()),
            three_d: self.trained.three_d.then(|| self.disc_3d.clone()),
        }
    }

    pub fn needs(strategy: ScoringStrategy) -> TrainedScorers {
        match strategy {
            ScoringStrategy::CrossModal => TrainedScorers { cross: true, ..Default::default() },
            ScoringStrategy::TwoDOnly => TrainedScorers { two_d: true, ..Default::default() },
            ScoringStrategy::ThreeDOnly => TrainedScorers { three_d: true, ..Default::default() },
            ScoringStrategy::Average2d3d => TrainedScorers { two_d: true, three_d: true, cross: false },
            ScoringStrategy::Random => TrainedScorers::default(),
        }
    }

    pub fn encode_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.trained.cross as u8 | (self.trained.two_d as u8) << 1 | (self.trained.three_d as u8) << 2);
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for t in self.store.tensors() {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            let (r, c) = t.value.shape();
            out.extend_from_slice(&(r as u32).to_le_bytes());
            out.extend_from_slice(&(c as u32).to_le_bytes());
            for v in t.value.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_checkpoint()).map_err(|e| Error::io(path, e))
    }

    /// Rebuilds the layout from `config` and loads every tensor by name.
    pub fn decode_checkpoint(config: &ModelConfig, bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(path, m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated checkpoint"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let u32_of = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
        if u32_of(take(4)?) != FORMAT_VERSION as usize {
            return Err(bad("unsupported checkpoint version"));
        }
        let flags = take(1)?[0];
        let n = u32_of(take(4)?);
        let mut loaded = ParamStore::new();
        for _ in 0..n {
            let len = u32_of(take(4)?);
            let name = std::str::from_utf8(take(len)?).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
            let (r, c) = (u32_of(take(4)?), u32_of(take(4)?));
            let bytes_len = r.checked_mul(c).and_then(|x| x.checked_mul(8)).ok_or_else(|| bad("tensor too large"))?;
            let data = take(bytes_len)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            loaded.add(name, Matrix::from_vec(r, c, data)?);
        }
        if take(1).is_ok() {
            return Err(bad("trailing bytes after checkpoint"));
        }
        let mut model = Model::init(config, 0)?;
        model.store.load_values(&loaded).map_err(|e| Error::format(path, e.to_string()))?;
        model.trained = TrainedScorers { cross: flags & 1 != 0, two_d: flags & 2 != 0, three_d: flags & 4 != 0 };
        Ok(model)
    }

    pub fn load_checkpoint(config: &ModelConfig, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_checkpoint(config, &bytes, path)
    }
}
