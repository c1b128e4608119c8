//! Run configuration, run records, and checkpoint metadata sidecars shared
//! by the command-line entry point.

use crate::distill::MdConfig;
use crate::net::{BackboneConfig, FusionMode, NetSpec, PathSpec};
use crate::tensor::SgdConfig;
use crate::train::EpochLog;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("run record hash mismatch in {path}: the configuration or dataset changed after the run started (expected {expected}, found {found}); remove the record or pass --force")]
    HashMismatch { path: String, expected: String, found: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ConfigError + '_ {
    move |source| ConfigError::Io { path: path.display().to_string(), source }
}

/// Everything a training-family command needs, validated up front.
/// Environment variables are deliberately never consulted.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset manifest path; relative paths resolve against the config
    /// file's directory.
    pub dataset: PathBuf,
    pub mode: FusionMode,
    pub backbone: BackboneConfig,
    pub sgd: SgdConfig,
    /// SGD settings for path weights during search; defaults to `sgd`.
    pub path_sgd: Option<SgdConfig>,
    pub md: MdConfig,
    pub epochs: usize,
    /// Seed for parameter initialization (SGD shuffling uses `sgd.seed`).
    pub init_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("dataset/manifest.json"),
            mode: FusionMode::Plif,
            backbone: BackboneConfig::default(),
            sgd: SgdConfig::default(),
            path_sgd: None,
            md: MdConfig::default(),
            epochs: 10,
            init_seed: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        if cfg.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset = dir.join(&cfg.dataset);
            }
        }
        cfg.validate().map_err(|msg| ConfigError::Invalid { path: path.display().to_string(), msg })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.sgd.validate()?;
        if let Some(p) = &self.path_sgd {
            p.validate()?;
        }
        self.md.validate()?;
        Ok(())
    }
}

/// Stable content hash of the configuration plus the dataset manifest bytes
/// at `manifest_path`; detects edits made after a run has started. The
/// manifest path is passed separately so configs may keep relative paths.
pub fn content_hash(cfg: &RunConfig, manifest_path: &Path) -> Result<String, ConfigError> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(cfg).expect("config serializes"));
    let manifest = std::fs::read(manifest_path).map_err(io_err(manifest_path))?;
    hasher.update(&manifest);
    Ok(hex_digest(&hasher.finalize()))
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Journal of one training run: the exact configuration, its content hash,
/// the per-epoch log, and the final checkpoint. Written atomically after
/// every epoch so an interrupted run leaves a consistent record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub config: RunConfig,
    pub content_hash: String,
    pub epochs: Vec<EpochLog>,
    pub checkpoint: Option<PathBuf>,
    pub completed: bool,
}

impl RunRecord {
    pub fn new(config: RunConfig, content_hash: String) -> Self {
        RunRecord { config, content_hash, epochs: Vec::new(), checkpoint: None, completed: false }
    }

    pub fn load(path: &Path) -> Result<RunRecord, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    /// Write via a temporary file and rename so readers never observe a
    /// partially written record.
    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        write_atomic(path, &serde_json::to_vec_pretty(self).expect("record serializes"))
    }

    /// A record at `path` from an earlier run of the same inputs, if any.
    /// A record with a different hash is an error unless `force` is set.
    pub fn resume(path: &Path, hash: &str, force: bool) -> Result<Option<RunRecord>, ConfigError> {
        if !path.exists() || force {
            return Ok(None);
        }
        let existing = RunRecord::load(path)?;
        if existing.content_hash != hash {
            return Err(ConfigError::HashMismatch {
                path: path.display().to_string(),
                expected: existing.content_hash,
                found: hash.to_string(),
            });
        }
        Ok(Some(existing))
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ConfigError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

/// Sidecar describing what a checkpoint expects at inference time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub spec: NetSpec,
    /// True for distilled students whose second branch consumes the RGB
    /// image instead of a pseudo-LiDAR feature.
    pub rgb_aux: bool,
}

impl CheckpointMeta {
    /// Whether inference on this checkpoint needs a depth map.
    pub fn needs_depth(&self) -> bool {
        match self.spec.mode {
            FusionMode::NfRgb => false,
            FusionMode::NfPl | FusionMode::NfDepth => true,
            FusionMode::Lif | FusionMode::Plif => !self.rgb_aux,
        }
    }

    pub fn path_for(checkpoint: &Path) -> PathBuf {
        let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
        name.push(".meta.json");
        checkpoint.with_file_name(name)
    }

    pub fn save(&self, checkpoint: &Path) -> Result<(), ConfigError> {
        let path = Self::path_for(checkpoint);
        write_atomic(&path, &serde_json::to_vec_pretty(self).expect("meta serializes"))
    }

    pub fn load(checkpoint: &Path) -> Result<CheckpointMeta, ConfigError> {
        let path = Self::path_for(checkpoint);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }
}

/// Network spec implied by a run configuration and an optional searched
/// path selection.
pub fn spec_from(cfg: &RunConfig, paths: PathSpec, rgb_aux: bool) -> NetSpec {
    NetSpec {
        mode: cfg.mode,
        backbone: cfg.backbone.clone(),
        paths,
        pl_input_channels: if rgb_aux { 3 } else { 1 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"epochs": 3, "surprise": 1}"#).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }), "{err}");
        assert!(err.to_string().contains("surprise"));
    }

    #[test]
    fn defaults_fill_missing_keys_and_dataset_resolves_relative() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"epochs": 3, "dataset": "data/manifest.json"}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.mode, FusionMode::Plif);
        assert_eq!(cfg.dataset, dir.path().join("data/manifest.json"));
    }

    #[test]
    fn invalid_nested_config_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"sgd": {"learning_rate": -1.0}}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn content_hash_tracks_config_and_manifest() {
        let dir = tempdir().unwrap();
        let manifest = dir.path().join("manifest.json");
        std::fs::write(&manifest, b"{}").unwrap();
        let cfg = RunConfig { dataset: manifest.clone(), ..RunConfig::default() };
        let h1 = content_hash(&cfg, &manifest).unwrap();
        assert_eq!(h1, content_hash(&cfg, &manifest).unwrap());
        let cfg2 = RunConfig { epochs: cfg.epochs + 1, ..cfg.clone() };
        assert_ne!(h1, content_hash(&cfg2, &manifest).unwrap());
        std::fs::write(&manifest, b"{\"count\":0}").unwrap();
        assert_ne!(h1, content_hash(&cfg, &manifest).unwrap());
    }

    #[test]
    fn record_roundtrip_and_resume_semantics() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("record.json");
        let mut rec = RunRecord::new(RunConfig::default(), "abc".into());
        rec.completed = true;
        rec.save(&path).unwrap();
        let resumed = RunRecord::resume(&path, "abc", false).unwrap().unwrap();
        assert_eq!(resumed, rec);
        // changed hash aborts unless forced
        assert!(matches!(
            RunRecord::resume(&path, "other", false),
            Err(ConfigError::HashMismatch { .. })
        ));
        assert!(RunRecord::resume(&path, "other", true).unwrap().is_none());
        // no record yet -> fresh start
        assert!(RunRecord::resume(&dir.path().join("none.json"), "abc", false).unwrap().is_none());
    }

    #[test]
    fn meta_needs_depth_matrix() {
        let base = |mode, rgb_aux| CheckpointMeta {
            spec: NetSpec::new(mode, BackboneConfig::default()),
            rgb_aux,
        };
        assert!(!base(FusionMode::NfRgb, false).needs_depth());
        assert!(base(FusionMode::NfPl, false).needs_depth());
        assert!(base(FusionMode::NfDepth, false).needs_depth());
        assert!(base(FusionMode::Lif, false).needs_depth());
        assert!(base(FusionMode::Plif, false).needs_depth());
        assert!(!base(FusionMode::Plif, true).needs_depth());
    }

    #[test]
    fn meta_sidecar_roundtrip() {
        let dir = tempdir().unwrap();
        let ckpt = dir.path().join("teacher.plrd");
        let meta = CheckpointMeta {
            spec: NetSpec::new(FusionMode::Plif, BackboneConfig::default()),
            rgb_aux: false,
        };
        meta.save(&ckpt).unwrap();
        assert!(dir.path().join("teacher.plrd.meta.json").exists());
        assert_eq!(CheckpointMeta::load(&ckpt).unwrap(), meta);
    }
}
