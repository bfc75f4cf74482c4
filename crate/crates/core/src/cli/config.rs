use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::res2net::BackboneConfig;
use crate::trainer::TrainConfig;

/// JSON configuration for `train`. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    /// Manifest CSV of the training split.
    pub train_manifest: PathBuf,
    /// Directory image paths are relative to; defaults to the manifest's.
    #[serde(default)]
    pub dataset_root: Option<PathBuf>,
    /// Output directory; `--out` overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// `num_identities` left at 0 is filled from the training manifest.
    #[serde(default = "unsized_backbone")]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: CliConfig =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.train_manifest = base.join(&cfg.train_manifest);
        cfg.dataset_root = cfg.dataset_root.map(|p| base.join(p));
        cfg.out_dir = cfg.out_dir.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn dataset_root(&self) -> PathBuf {
        self.dataset_root
            .clone()
            .unwrap_or_else(|| manifest_root(&self.train_manifest))
    }
}

/// Directory that manifest paths are relative to.
pub fn manifest_root(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"train_manifest": "t.csv", "trian": {}}"#).unwrap();
        let err = CliConfig::load(&p).unwrap_err();
        assert!(err.contains("trian"), "{err}");
        fs::write(&p, r#"{"train_manifest": "t.csv", "train": {"base_lr": 0.1, "momentun": 0.9}}"#).unwrap();
        assert!(CliConfig::load(&p).unwrap_err().contains("momentun"));
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"train_manifest": "data/train.csv", "train": {"max_iterations": 3}}"#).unwrap();
        let cfg = CliConfig::load(&p).unwrap();
        assert_eq!(cfg.train_manifest, dir.path().join("data/train.csv"));
        assert_eq!(cfg.dataset_root(), dir.path().join("data"));
        assert_eq!(cfg.train.max_iterations, Some(3));
        assert_eq!(cfg.train.base_lr, 0.05);
    }
}

fn unsized_backbone() -> BackboneConfig {
    BackboneConfig {
        num_identities: 0,
        ..BackboneConfig::default()
    }
}
