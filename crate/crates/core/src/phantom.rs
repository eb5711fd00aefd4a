//! Layered tissue phantoms and their ground-truth interfaces.
//!
//! A phantom is an ordered stack of contiguous [`TissueLayer`]s starting at the
//! surface (depth 0). Interfaces of interest are the material changes into and
//! out of ex-vivo tissue; boundaries inside the skin layer only add friction and
//! are not scored.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, Stream};

/// Tolerance used when checking layer contiguity, in mm.
const CONTIGUITY_EPS: f64 = 1e-9;

pub const MAX_INTERFACES: usize = 4;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("contiguity error: {0}")]
    Contiguity(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("composition error: {0}")]
    Composition(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    SkinFoam,
    Silicone,
    Gelatin,
    ExVivoTissue,
}

impl Material {
    pub fn is_skin(self) -> bool {
        matches!(self, Material::SkinFoam | Material::Silicone)
    }

    pub fn is_tissue(self) -> bool {
        self == Material::ExVivoTissue
    }

    /// Material group used for the per-material friction table.
    pub fn group(self) -> MaterialGroup {
        match self {
            Material::SkinFoam | Material::Silicone => MaterialGroup::Skin,
            Material::Gelatin => MaterialGroup::Gelatin,
            Material::ExVivoTissue => MaterialGroup::Tissue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialGroup {
    Skin,
    Tissue,
    Gelatin,
}

impl fmt::Display for MaterialGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaterialGroup::Skin => "Skin Layer",
            MaterialGroup::Tissue => "Tissue",
            MaterialGroup::Gelatin => "Gelatin",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueLayer {
    pub material: Material,
    pub start_mm: f64,
    pub end_mm: f64,
    /// Post-puncture tip-force plateau.
    pub cutting_force_n: f64,
    /// Pre-puncture ramp stiffness of the boundary into this layer.
    pub stiffness_n_per_mm: f64,
    /// Peak tip force before the boundary into this layer ruptures.
    pub rupture_force_n: f64,
    /// `[min, max]` range the per-insertion friction slope is drawn from.
    pub friction_slope_n_per_mm: [f64; 2],
}

impl TissueLayer {
    pub fn thickness(&self) -> f64 {
        self.end_mm - self.start_mm
    }

    pub fn contains(&self, depth: f64) -> bool {
        depth >= self.start_mm && depth < self.end_mm
    }

    /// Pre-puncture deformation at which the boundary into this layer ruptures.
    pub fn rupture_deformation(&self) -> f64 {
        if self.stiffness_n_per_mm > 0.0 {
            self.rupture_force_n / self.stiffness_n_per_mm
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub name: String,
    pub seed: u64,
    pub layers: Vec<TissueLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceKind {
    /// Into a denser layer (gelatin to tissue).
    Entry,
    /// Back out into gelatin.
    Exit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceEvent {
    pub depth_mm: f64,
    pub kind: InterfaceKind,
    pub from_material: Material,
    pub to_material: Material,
    /// Table-style label such as `G1 to T1`.
    pub label: String,
}

impl PhantomSpec {
    pub fn total_depth(&self) -> f64 {
        self.layers.last().map_or(0.0, |l| l.end_mm)
    }

    /// Index of the layer containing `depth`; depths at or beyond the bottom map to the last layer.
    pub fn layer_index_at(&self, depth: f64) -> usize {
        match self.layers.iter().position(|l| depth < l.end_mm) {
            Some(i) => i,
            None => self.layers.len().saturating_sub(1),
        }
    }

    pub fn layer_at(&self, depth: f64) -> &TissueLayer {
        &self.layers[self.layer_index_at(depth)]
    }

    /// Depth at which the skin stack ends (0 when there is no skin layer).
    pub fn skin_end(&self) -> f64 {
        self.layers
            .iter()
            .take_while(|l| l.material.is_skin())
            .last()
            .map_or(0.0, |l| l.end_mm)
    }

    pub fn max_rupture_force(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.rupture_force_n)
            .fold(0.0, f64::max)
    }

    /// Short per-layer labels in the `S`, `G1`, `T1`, ... convention.
    pub fn segment_labels(&self) -> Vec<String> {
        let (mut s, mut g, mut t) = (0, 0, 0);
        self.layers
            .iter()
            .map(|l| match l.material.group() {
                MaterialGroup::Skin => {
                    s += 1;
                    format!("S{s}")
                }
                MaterialGroup::Gelatin => {
                    g += 1;
                    format!("G{g}")
                }
                MaterialGroup::Tissue => {
                    t += 1;
                    format!("T{t}")
                }
            })
            .collect()
    }

    /// Ground-truth interfaces: every material change where either side is tissue.
    pub fn interfaces(&self) -> Vec<InterfaceEvent> {
        let labels = self.segment_labels();
        self.layers
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].material != w[1].material)
            .filter(|(_, w)| w[0].material.is_tissue() || w[1].material.is_tissue())
            .map(|(i, w)| InterfaceEvent {
                depth_mm: w[1].start_mm,
                kind: if w[1].material.is_tissue() {
                    InterfaceKind::Entry
                } else {
                    InterfaceKind::Exit
                },
                from_material: w[0].material,
                to_material: w[1].material,
                label: format!("{} to {}", labels[i], labels[i + 1]),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.layers.is_empty() {
            return Err(PhantomError::Schema("phantom has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let fields = [
                l.start_mm,
                l.end_mm,
                l.cutting_force_n,
                l.stiffness_n_per_mm,
                l.rupture_force_n,
                l.friction_slope_n_per_mm[0],
                l.friction_slope_n_per_mm[1],
            ];
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(PhantomError::Range(format!("layer {i}: non-finite value")));
            }
            if l.end_mm <= l.start_mm {
                return Err(PhantomError::Contiguity(format!(
                    "layer {i}: end {} <= start {}",
                    l.end_mm, l.start_mm
                )));
            }
            if l.cutting_force_n < 0.0 {
                return Err(PhantomError::Range(format!(
                    "layer {i}: negative cutting force {}",
                    l.cutting_force_n
                )));
            }
            if l.stiffness_n_per_mm < 0.0 {
                return Err(PhantomError::Range(format!(
                    "layer {i}: negative stiffness {}",
                    l.stiffness_n_per_mm
                )));
            }
            if l.rupture_force_n < l.cutting_force_n {
                return Err(PhantomError::Range(format!(
                    "layer {i}: rupture force {} below cutting force {}",
                    l.rupture_force_n, l.cutting_force_n
                )));
            }
            let [lo, hi] = l.friction_slope_n_per_mm;
            if lo > hi {
                return Err(PhantomError::Range(format!(
                    "layer {i}: friction slope range [{lo}, {hi}] is inverted"
                )));
            }
        }
        if self.layers[0].start_mm.abs() > CONTIGUITY_EPS {
            return Err(PhantomError::Contiguity(format!(
                "first layer starts at {} instead of 0",
                self.layers[0].start_mm
            )));
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            let gap = w[1].start_mm - w[0].end_mm;
            if gap > CONTIGUITY_EPS {
                return Err(PhantomError::Contiguity(format!(
                    "gap of {gap} mm between layers {i} and {}",
                    i + 1
                )));
            }
            if gap < -CONTIGUITY_EPS {
                return Err(PhantomError::Contiguity(format!(
                    "overlap of {} mm between layers {i} and {}",
                    -gap,
                    i + 1
                )));
            }
        }
        if !self.layers.iter().any(|l| l.material == Material::Gelatin) {
            return Err(PhantomError::Composition(
                "phantom contains no gelatin".into(),
            ));
        }
        let n = self.interfaces().len();
        if n > MAX_INTERFACES {
            return Err(PhantomError::Composition(format!(
                "{n} tissue interfaces, at most {MAX_INTERFACES} allowed"
            )));
        }
        Ok(())
    }

    /// Parses and validates a phantom document. JSON is detected by a leading `{`,
    /// anything else is read as TOML.
    pub fn parse(document: &str) -> Result<Self, PhantomError> {
        let spec: PhantomSpec = if document.trim_start().starts_with('{') {
            serde_json::from_str(document).map_err(|e| PhantomError::Schema(e.to_string()))?
        } else {
            toml::from_str(document).map_err(|e| PhantomError::Schema(e.to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, PhantomError> {
        let text = std::fs::read_to_string(path).map_err(|source| PhantomError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("phantom serializes to toml")
    }

    pub fn save(&self, path: &Path) -> Result<(), PhantomError> {
        let text = if path.extension().is_some_and(|e| e == "json") {
            serde_json::to_string_pretty(self).expect("phantom serializes to json")
        } else {
            self.to_toml()
        };
        std::fs::write(path, text).map_err(|source| PhantomError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Lower bound of the friction force over the whole insertion when every
    /// layer draws the least favourable slope of its range.
    pub fn worst_case_friction_after_skin(&self) -> f64 {
        let skin_end = self.skin_end();
        let mut acc = 0.0;
        let mut worst = f64::INFINITY;
        for l in &self.layers {
            acc += l.friction_slope_n_per_mm[0] * l.thickness();
            if l.end_mm > skin_end {
                worst = worst.min(acc);
            }
        }
        worst
    }
}

/// Parses a phantom document (TOML or JSON) and validates every invariant.
pub fn load_phantom(document: &str) -> Result<PhantomSpec, PhantomError> {
    PhantomSpec::parse(document)
}

/// Parameter ranges used by [`default_phantoms`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomGenConfig {
    pub thickness_mm: [f64; 2],
    /// Fraction of the skin stack made of foam; the rest is silicone.
    pub foam_fraction: f64,
    pub skin_friction: [f64; 2],
    pub gelatin_friction: [f64; 2],
    pub tissue_friction: [f64; 2],
    pub gelatin_cutting: [f64; 2],
    pub tissue_cutting: [f64; 2],
    pub tissue_stiffness: [f64; 2],
    pub tissue_rupture: [f64; 2],
    /// Friction lower bound after the skin stack every accepted phantom must satisfy.
    pub min_friction_margin_n: f64,
}

impl Default for PhantomGenConfig {
    fn default() -> Self {
        Self {
            thickness_mm: [10.0, 35.0],
            foam_fraction: 0.4,
            skin_friction: [0.30, 0.45],
            gelatin_friction: [-0.35, 0.05],
            tissue_friction: [0.20, 0.52],
            gelatin_cutting: [0.30, 0.50],
            tissue_cutting: [1.40, 2.20],
            tissue_stiffness: [0.40, 0.70],
            tissue_rupture: [2.20, 3.00],
            min_friction_margin_n: 0.25,
        }
    }
}

fn draw<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn round_mm(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Generates one phantom with the S, G1, T1, G2, T2, G3 topology.
pub fn generate_phantom(seed: u64, index: u64, cfg: &PhantomGenConfig) -> PhantomSpec {
    let mut rng = stream_rng(seed, Stream::Phantom, index);
    loop {
        let mut thickness = || round_mm(draw(&mut rng, cfg.thickness_mm));
        let widths: Vec<f64> = (0..6).map(|_| thickness()).collect();
        let mut layers = Vec::with_capacity(7);
        let mut depth = 0.0;
        let mut push = |material, width: f64, cf: f64, k: f64, rupture: f64, friction| {
            let end = round_mm(depth + width);
            layers.push(TissueLayer {
                material,
                start_mm: depth,
                end_mm: end,
                cutting_force_n: cf,
                stiffness_n_per_mm: k,
                rupture_force_n: rupture,
                friction_slope_n_per_mm: friction,
            });
            depth = end;
        };
        let foam = round_mm(widths[0] * cfg.foam_fraction);
        push(Material::SkinFoam, foam, 0.6, 0.4, 1.5, cfg.skin_friction);
        push(
            Material::Silicone,
            widths[0] - foam,
            0.7,
            0.5,
            1.8,
            cfg.skin_friction,
        );
        for (i, &w) in widths[1..].iter().enumerate() {
            if i % 2 == 0 {
                let cf = round_cn(draw(&mut rng, cfg.gelatin_cutting));
                push(
                    Material::Gelatin,
                    w,
                    cf,
                    0.3,
                    round_cn(cf + 0.1),
                    cfg.gelatin_friction,
                );
            } else {
                let cf = round_cn(draw(&mut rng, cfg.tissue_cutting));
                let k = round_cn(draw(&mut rng, cfg.tissue_stiffness));
                let rupture = round_cn(draw(&mut rng, cfg.tissue_rupture)).max(round_cn(cf + 0.3));
                push(
                    Material::ExVivoTissue,
                    w,
                    cf,
                    k,
                    rupture,
                    cfg.tissue_friction,
                );
            }
        }
        let spec = PhantomSpec {
            name: format!("phantom-{}", index + 1),
            seed: crate::rng::derive_seed(seed, Stream::FrictionDraw, index) >> 1,
            layers,
        };
        if spec.worst_case_friction_after_skin() >= cfg.min_friction_margin_n {
            debug_assert!(spec.validate().is_ok());
            return spec;
        }
    }
}

fn round_cn(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// The four study phantoms, a pure function of `seed`.
pub fn default_phantoms(seed: u64) -> Vec<PhantomSpec> {
    default_phantoms_with(seed, &PhantomGenConfig::default())
}

pub fn default_phantoms_with(seed: u64, cfg: &PhantomGenConfig) -> Vec<PhantomSpec> {
    (0..4).map(|i| generate_phantom(seed, i, cfg)).collect()
}
