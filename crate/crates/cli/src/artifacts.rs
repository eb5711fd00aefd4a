//! Reading and writing the files the commands exchange.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tipforce_core::control::InsertionTrace;
use tipforce_core::estimator::{AnalyticEstimator, NeuralEstimator, TrueForce};
use tipforce_core::meta::{config_hash, Provenance};
use tipforce_core::neural::Checkpoint;
use tipforce_core::{PhantomSpec, SensorConfig, TipForceEstimator};

pub type EstimatorFactory = Arc<dyn Fn() -> Box<dyn TipForceEstimator> + Send + Sync>;

/// Where in-loop tip-force estimates come from.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorChoice {
    Checkpoint(PathBuf),
    Analytic,
    True,
}

impl EstimatorChoice {
    pub fn parse(ckpt: Option<&Path>, name: &str) -> Result<Self> {
        if let Some(p) = ckpt {
            return Ok(Self::Checkpoint(p.to_path_buf()));
        }
        match name {
            "analytic" => Ok(Self::Analytic),
            "true" => Ok(Self::True),
            other => {
                bail!("unknown estimator {other:?}; expected analytic or true, or pass --ckpt")
            }
        }
    }

    pub fn factory(&self, sensor: SensorConfig) -> Result<EstimatorFactory> {
        Ok(match self {
            Self::Checkpoint(p) => {
                let ck = Checkpoint::load(p)
                    .with_context(|| format!("loading checkpoint {}", p.display()))?;
                neural_factory(&ck)?
            }
            Self::Analytic => Arc::new(move || Box::new(AnalyticEstimator::new(sensor))),
            Self::True => Arc::new(|| Box::new(TrueForce)),
        })
    }
}

pub fn neural_factory(ck: &Checkpoint) -> Result<EstimatorFactory> {
    let model = Arc::new(ck.model()?);
    let params = Arc::new(ck.params.clone());
    Ok(Arc::new(move || {
        Box::new(NeuralEstimator::new(model.clone(), params.clone()))
    }))
}

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// A JSON document stamped with version, seed and config hash.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct Stamped<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_stamped<T: Serialize>(path: &Path, provenance: &Provenance, body: T) -> Result<()> {
    write_json(
        path,
        &Stamped {
            provenance: provenance.clone(),
            body,
        },
    )
}

/// Phantom TOML with a provenance comment line on top.
pub fn write_phantom(path: &Path, p: &PhantomSpec, provenance: &Provenance) -> Result<()> {
    let text = format!(
        "# tipforce phantom version={} seed={} config_hash={} phantom_hash={}\n{}",
        provenance.version,
        provenance.seed,
        provenance.config_hash,
        config_hash(p),
        p.to_toml()
    );
    write_text(path, &text)
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    Ok(out)
}

/// A single phantom file, or every `.toml` file in a directory.
pub fn load_phantoms(path: &Path) -> Result<Vec<PhantomSpec>> {
    let files = if path.is_dir() {
        sorted_files(path, "toml")?
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        bail!("no phantom files in {}", path.display());
    }
    files
        .iter()
        .map(|f| PhantomSpec::load(f).with_context(|| format!("loading {}", f.display())))
        .collect()
}

/// Every `.csv` trace in `dir`, by file name, with the file stem as the trace name.
pub fn load_traces(dir: &Path) -> Result<Vec<(String, InsertionTrace)>> {
    let files = sorted_files(dir, "csv")?;
    if files.is_empty() {
        bail!("no traces in {}", dir.display());
    }
    files
        .iter()
        .map(|f| {
            let name = f
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let t = InsertionTrace::load(f).with_context(|| format!("loading {}", f.display()))?;
            Ok((name, t))
        })
        .collect()
}

/// Phantom names as they appear in trace headers.
pub fn trace_name(p: &PhantomSpec) -> String {
    p.name.split_whitespace().collect::<Vec<_>>().join("_")
}
