//! Versioned checkpoints: every parameter section plus vocabulary hashes.
//! Loading refuses version or hash mismatches.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ehr::records::Cohort;
use crate::error::{Error, Result};
use crate::nn::Adam;

use super::config::ModelConfig;
use super::layout::{build_model, VocabSizes};
use super::train::Trainer;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabHashes {
    pub diag: u64,
    pub proc: u64,
    pub med: u64,
}

impl VocabHashes {
    pub fn of(cohort: &Cohort) -> VocabHashes {
        VocabHashes {
            diag: cohort.diag_vocab.content_hash(),
            proc: cohort.proc_vocab.content_hash(),
            med: cohort.med_vocab.content_hash(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub sizes: VocabSizes,
    pub vocab_hashes: VocabHashes,
    pub variant: String,
    pub epoch: usize,
    pub best_val_jaccard: f64,
    params: Vec<ParamEntry>,
    optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn from_trainer(
        trainer: &Trainer,
        hashes: VocabHashes,
        best_val_jaccard: f64,
        keep_optimizer: bool,
    ) -> Checkpoint {
        let params = trainer
            .store
            .iter()
            .map(|(name, value)| ParamEntry {
                name: name.to_string(),
                rows: value.nrows(),
                cols: value.ncols(),
                data: value.iter().copied().collect(),
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: trainer.cfg.clone(),
            sizes: trainer.sizes,
            vocab_hashes: hashes,
            variant: trainer.cfg.ablation.variant_name().to_string(),
            epoch: trainer.epochs_done,
            best_val_jaccard,
            params,
            optimizer: keep_optimizer.then(|| trainer.optimizer.clone()),
        }
    }

    /// Rebuild a trainer. The parameter registry is reconstructed from the
    /// stored config, then every section is matched by name and shape.
    pub fn into_trainer(self, lr: f64, seed: u64) -> Result<Trainer> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Integrity(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let (mut store, layout) = build_model(&self.model, self.sizes, seed);
        if store.len() != self.params.len() {
            return Err(Error::Integrity(format!(
                "checkpoint has {} parameter sections, model defines {}",
                self.params.len(),
                store.len()
            )));
        }
        for (i, entry) in self.params.iter().enumerate() {
            let id = crate::nn::ParamId(i);
            if store.name(id) != entry.name {
                return Err(Error::Integrity(format!(
                    "parameter section {i} is {:?} in the checkpoint but {:?} in the model",
                    entry.name,
                    store.name(id)
                )));
            }
            let value = Array2::from_shape_vec((entry.rows, entry.cols), entry.data.clone())
                .map_err(|e| Error::Integrity(format!("section {:?}: {e}", entry.name)))?;
            if store.get(id).dim() != value.dim() {
                return Err(Error::Integrity(format!(
                    "section {:?} has shape {:?}, expected {:?}",
                    entry.name,
                    value.dim(),
                    store.get(id).dim()
                )));
            }
            *store.get_mut(id) = value;
        }
        let optimizer = match self.optimizer {
            Some(op) => op,
            None => Adam::new(lr, &store),
        };
        let mut trainer = Trainer::new(self.model, self.sizes, lr, seed)?;
        trainer.store = store;
        trainer.layout = layout;
        trainer.optimizer = optimizer;
        trainer.epochs_done = self.epoch;
        Ok(trainer)
    }

    /// Verify stored vocabulary hashes against the cohort in use.
    pub fn check_hashes(&self, hashes: VocabHashes) -> Result<()> {
        if self.vocab_hashes != hashes {
            return Err(Error::Integrity(format!(
                "vocabulary hashes changed since training: checkpoint {:?}, data {:?}",
                self.vocab_hashes, hashes
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layout::VocabSizes;

    fn hashes() -> VocabHashes {
        VocabHashes { diag: 1, proc: 2, med: 3 }
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig { dim: 8, ..Default::default() };
        let sizes = VocabSizes { diag: 4, proc: 3, med: 5 };
        let trainer = Trainer::new(cfg, sizes, 0.01, 7).unwrap();
        let ckpt = Checkpoint::from_trainer(&trainer, hashes(), 0.5, true);
        let json = serde_json::to_string(&ckpt).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let restored = back.into_trainer(0.01, 7).unwrap();
        for ((n1, v1), (n2, v2)) in trainer.store.iter().zip(restored.store.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(v1, v2, "section {n1} must round-trip bit-exactly");
        }
        assert_eq!(restored.epochs_done, trainer.epochs_done);
    }

    #[test]
    fn hash_mismatch_is_integrity_error() {
        let cfg = ModelConfig { dim: 4, ..Default::default() };
        let trainer =
            Trainer::new(cfg, VocabSizes { diag: 2, proc: 2, med: 2 }, 0.01, 1).unwrap();
        let ckpt = Checkpoint::from_trainer(&trainer, hashes(), 0.0, false);
        let other = VocabHashes { diag: 9, proc: 2, med: 3 };
        assert!(matches!(ckpt.check_hashes(other).unwrap_err(), Error::Integrity(_)));
        ckpt.check_hashes(hashes()).unwrap();
    }

    #[test]
    fn version_mismatch_rejected() {
        let cfg = ModelConfig { dim: 4, ..Default::default() };
        let trainer =
            Trainer::new(cfg, VocabSizes { diag: 2, proc: 2, med: 2 }, 0.01, 1).unwrap();
        let mut ckpt = Checkpoint::from_trainer(&trainer, hashes(), 0.0, false);
        ckpt.version = 99;
        assert!(matches!(
            ckpt.into_trainer(0.01, 1).unwrap_err(),
            Error::Integrity(_)
        ));
    }
}
