//! Experiment manifest: built-in defaults, overlaid by an optional TOML file,
//! overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tipforce_core::analysis::AnalysisConfig;
use tipforce_core::control::SessionConfig;
use tipforce_core::meta::Provenance;
use tipforce_core::neural::Arch;
use tipforce_core::neural::{
    CalibrationConfig, CgruConfig, ModelConfig, ResNetConfig, TrainConfig,
};
use tipforce_core::phantom::{default_phantoms_with, PhantomGenConfig};
use tipforce_core::PhantomSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoConfig {
    pub velocity_mm_s: f64,
    pub insertions: usize,
    /// Runs stop this far above the bottom of the phantom.
    pub depth_margin_mm: f64,
}

impl Default for AutoConfig {
    fn default() -> Self {
        Self {
            velocity_mm_s: 5.0,
            insertions: 25,
            depth_margin_mm: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollabConfig {
    /// Scripted participants; each inserts once into every phantom.
    pub operators: usize,
    /// Fixed feedback gain; `None` lets each participant pick one after practice runs.
    pub alpha: Option<f64>,
}

impl Default for CollabConfig {
    fn default() -> Self {
        Self {
            operators: 5,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub telemetry_hz: f64,
    /// Telemetry frames buffered per client before the oldest are dropped.
    pub queue: usize,
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8765,
            telemetry_hz: 50.0,
            queue: 64,
            time_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    /// Phantom documents; empty means the four generated defaults.
    pub phantom_files: Vec<PathBuf>,
    pub phantom_gen: PhantomGenConfig,
    pub session: SessionConfig,
    pub calibration: CalibrationConfig,
    /// Length of the held-out test stream.
    pub test_frames: usize,
    pub train: TrainConfig,
    pub cgru: CgruConfig,
    pub resnet: ResNetConfig,
    pub auto: AutoConfig,
    pub collab: CollabConfig,
    pub analysis: AnalysisConfig,
    pub serve: ServeConfig,
    /// Estimator used by `run` and `serve` when no checkpoint flag is given.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            seed: 1,
            phantom_files: Vec::new(),
            phantom_gen: PhantomGenConfig::default(),
            session: SessionConfig::default(),
            calibration: CalibrationConfig::default(),
            test_frames: 10_000,
            train: TrainConfig::default(),
            cgru: CgruConfig::default(),
            resnet: ResNetConfig::default(),
            auto: AutoConfig::default(),
            collab: CollabConfig::default(),
            analysis: AnalysisConfig::default(),
            serve: ServeConfig::default(),
            checkpoint: None,
        }
    }
}

impl Manifest {
    /// Defaults overlaid by `path` when given. Relative phantom and checkpoint
    /// paths in the file resolve against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut m: Manifest =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in &mut m.phantom_files {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        if let Some(c) = &mut m.checkpoint {
            if c.is_relative() {
                *c = base.join(&*c);
            }
        }
        Ok(m)
    }

    /// Desk-check sizes: short calibration, few epochs, few insertions.
    pub fn quick(mut self) -> Self {
        self.calibration.n = 5_000;
        self.test_frames = 2_000;
        self.train.epochs = 5;
        self.auto.insertions = 5;
        self.collab.operators = 1;
        self
    }

    /// Seeds every stochastic stage from the manifest seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sync_seeds();
        self
    }

    pub fn sync_seeds(&mut self) {
        self.session.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn model_config(&self, arch: Arch) -> ModelConfig {
        match arch {
            Arch::Cgru => ModelConfig::Cgru(self.cgru),
            Arch::Resnet => ModelConfig::Resnet(self.resnet),
        }
    }

    pub fn phantoms(&self) -> Result<Vec<PhantomSpec>> {
        if self.phantom_files.is_empty() {
            return Ok(default_phantoms_with(self.seed, &self.phantom_gen));
        }
        self.phantom_files
            .iter()
            .map(|p| PhantomSpec::load(p).with_context(|| format!("loading {}", p.display())))
            .collect()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.seed, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_overlay_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        std::fs::write(
            &path,
            "seed = 9\nphantom_files = [\"p.toml\"]\n[session.controller]\nk_p = 0.75\n[train]\nepochs = 3\n",
        )
        .unwrap();
        let m = Manifest::load(Some(&path)).unwrap();
        assert_eq!(m.seed, 9);
        assert_eq!(m.session.controller.k_p, 0.75);
        assert_eq!(m.session.controller.k_i, 2.0);
        assert_eq!(m.train.epochs, 3);
        assert_eq!(m.train.batch, TrainConfig::default().batch);
        assert_eq!(m.phantom_files, vec![dir.path().join("p.toml")]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        std::fs::write(&path, "sede = 9\n").unwrap();
        assert!(Manifest::load(Some(&path)).is_err());
    }

    #[test]
    fn seed_reaches_every_stage() {
        let m = Manifest::default().with_seed(42);
        assert_eq!(m.session.seed, 42);
        assert_eq!(m.train.seed, 42);
        assert_ne!(m.provenance(), Manifest::default().provenance());
    }
}
