//! Run configuration: a plain-text key=value file, every key overridable
//! from the command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::HarnessError;

/// Everything a training or evaluation run needs. See the README for the
/// config-file schema; defaults match [`RunConfig::default`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: String,
    pub k: usize,
    pub model: String,
    pub layers: usize,
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub train: PathBuf,
    pub test: PathBuf,
    pub out_dir: PathBuf,
    pub coloring: usize,
    pub val_fraction: f64,
    pub lr_patience: usize,
    pub lr_floor: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: "cycles".into(),
            k: 4,
            model: "smp-fast".into(),
            layers: 8,
            width: 16,
            epochs: 200,
            batch_size: 16,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            train: PathBuf::new(),
            test: PathBuf::new(),
            out_dir: PathBuf::from("run"),
            coloring: 0,
            val_fraction: 0.1,
            lr_patience: 20,
            lr_floor: 1e-5,
            max_grad_norm: 1.0,
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value", idx + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one `key value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let bad = |e: std::fmt::Arguments| HarnessError::Config(format!("key `{key}`: {e}"));
        macro_rules! parse {
            ($field:expr) => {
                $field = value
                    .parse()
                    .map_err(|e| bad(format_args!("bad value `{value}` ({e})")))?
            };
        }
        match key {
            "task" => self.task = value.to_string(),
            "k" => parse!(self.k),
            "model" => self.model = value.to_string(),
            "layers" => parse!(self.layers),
            "width" => parse!(self.width),
            "epochs" => parse!(self.epochs),
            "batch_size" => parse!(self.batch_size),
            "lr" => parse!(self.lr),
            "beta1" => parse!(self.beta1),
            "beta2" => parse!(self.beta2),
            "eps" => parse!(self.eps),
            "seed" => parse!(self.seed),
            "train" => self.train = PathBuf::from(value),
            "test" => self.test = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "coloring" => parse!(self.coloring),
            "val_fraction" => parse!(self.val_fraction),
            "lr_patience" => parse!(self.lr_patience),
            "lr_floor" => parse!(self.lr_floor),
            "max_grad_norm" => parse!(self.max_grad_norm),
            other => {
                return Err(HarnessError::Config(format!("unknown config key `{other}`")))
            }
        }
        Ok(())
    }

    /// Checks value ranges and that referenced files exist.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !matches!(self.task.as_str(), "cycles" | "multitask") {
            return Err(HarnessError::Config(format!("unknown task `{}`", self.task)));
        }
        if !matches!(self.model.as_str(), "smp-fast" | "smp-default" | "mpnn") {
            return Err(HarnessError::Config(format!("unknown model `{}`", self.model)));
        }
        if self.layers == 0 || self.width == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(HarnessError::Config(
                "layers, width, epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return Err(HarnessError::Config(
                "val_fraction must lie in [0, 0.5)".into(),
            ));
        }
        for (name, path) in [("train", &self.train), ("test", &self.test)] {
            if !path.is_file() {
                return Err(HarnessError::Config(format!(
                    "{name} dataset `{}` does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Canonical serialization, the input of [`RunConfig::hash`].
    pub fn canonical(&self) -> String {
        let mut entries: BTreeMap<&str, String> = BTreeMap::new();
        entries.insert("task", self.task.clone());
        entries.insert("k", self.k.to_string());
        entries.insert("model", self.model.clone());
        entries.insert("layers", self.layers.to_string());
        entries.insert("width", self.width.to_string());
        entries.insert("epochs", self.epochs.to_string());
        entries.insert("batch_size", self.batch_size.to_string());
        entries.insert("lr", self.lr.to_string());
        entries.insert("beta1", self.beta1.to_string());
        entries.insert("beta2", self.beta2.to_string());
        entries.insert("eps", self.eps.to_string());
        entries.insert("seed", self.seed.to_string());
        entries.insert("train", self.train.display().to_string());
        entries.insert("test", self.test.display().to_string());
        entries.insert("out_dir", self.out_dir.display().to_string());
        entries.insert("coloring", self.coloring.to_string());
        entries.insert("val_fraction", self.val_fraction.to_string());
        entries.insert("lr_patience", self.lr_patience.to_string());
        entries.insert("lr_floor", self.lr_floor.to_string());
        entries.insert("max_grad_norm", self.max_grad_norm.to_string());
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_parse_and_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# cycle run\ntask = cycles\nk = 6\nwidth = 8   # narrow\n",
        )
        .unwrap();
        let mut cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.k, 6);
        assert_eq!(cfg.width, 8);
        cfg.set("width", "32").unwrap();
        assert_eq!(cfg.width, 32);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("widht", "8").is_err());
        assert!(cfg.set("width", "eight").is_err());
    }

    #[test]
    fn validation_requires_existing_datasets() {
        let cfg = RunConfig {
            train: PathBuf::from("/nonexistent/train.jsonl"),
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
