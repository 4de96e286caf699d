//! Synthetic dataset generation, on-disk persistence and class-mapping tables.

pub mod generator;
pub mod io;
pub mod mapping;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Domain, Frame};

pub use generator::{
    generate_domain_pair, generate_frame, spec_hash, ClassSpec, DomainPair, DomainSpec, GeneratedFrame, HiddenMeta,
    PairCounts, Primitive, TARGET_ID_BASE,
};
pub use io::{decode_frame, encode_frame, load_dataset, load_hidden, load_pair, save_dataset, save_hidden, save_pair};
pub use mapping::{apply_mapping, load_class_mapping, ClassMapping, MAPPED_CLASSES};

/// Version stamped into every file this crate writes.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub domain: Domain,
    pub classes: Vec<String>,
    pub spec_hash: String,
    pub seed: u64,
    pub frame_ids: Vec<u64>,
    pub splits: Splits,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = self.frame_ids.clone();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::arg("duplicate frame ids in manifest"));
        }
        let known = |id: &u64| ids.binary_search(id).is_ok();
        if !self.splits.train.iter().chain(&self.splits.test).all(known) {
            return Err(Error::arg("split references an unknown frame id"));
        }
        if self.splits.train.iter().any(|id| self.splits.test.contains(id)) {
            return Err(Error::arg("train and test splits overlap"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn frame(&self, id: u64) -> Option<&Frame> {
        self.frames.iter().find(|f| f.id == id)
    }

    fn pick(&self, ids: &[u64]) -> Vec<&Frame> {
        ids.iter().filter_map(|&id| self.frame(id)).collect()
    }

    pub fn train(&self) -> Vec<&Frame> {
        self.pick(&self.manifest.splits.train)
    }

    pub fn test(&self) -> Vec<&Frame> {
        self.pick(&self.manifest.splits.test)
    }
}
