//! Needle-tissue interaction along a straight insertion path.
//!
//! The tip force follows a ramp-and-plateau model: an unpunctured boundary into a
//! layer with a higher rupture force indents linearly with that layer's stiffness
//! until the rupture force is reached, after which the tip cuts at the layer's
//! plateau force. Leaving a layer with a higher plateau unloads linearly over the
//! tip protrusion. Friction accumulates per traversed segment with a slope drawn
//! once per segment and insertion, and relaxes while the needle is stationary.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phantom::PhantomSpec;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum MechError {
    #[error("retraction by {dx} mm from depth {depth} mm would leave the surface")]
    RetractionBelowZero { depth: f64, dx: f64 },
    #[error("invalid step: {0}")]
    InvalidStep(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeedleGeometry {
    pub sheath_outer_diameter_mm: f64,
    /// Length of the tip beyond the sheath; sets the exit-unloading distance.
    pub tip_protrusion_mm: f64,
    /// Rest length of the air cavity in front of the fibre.
    pub fiber_gap_rest_mm: f64,
}

impl Default for NeedleGeometry {
    fn default() -> Self {
        Self {
            sheath_outer_diameter_mm: 2.05,
            tip_protrusion_mm: 5.0,
            fiber_gap_rest_mm: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MechConfig {
    pub v_max_mm_s: f64,
    /// Fraction of the friction force that remains after full relaxation.
    pub relax_fraction: f64,
    pub relax_tau_s: f64,
}

impl Default for MechConfig {
    fn default() -> Self {
        Self {
            v_max_mm_s: 20.0,
            relax_fraction: 0.7,
            relax_tau_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechState {
    pub t_s: f64,
    pub depth_mm: f64,
    pub velocity_mm_s: f64,
    /// One flag per layer boundary; boundary `i` is the top of layer `i` (0 is the surface).
    pub punctured: Vec<bool>,
    pub pending_deformation_mm: f64,
    /// Friction slope drawn for each layer segment in this insertion.
    pub segment_slopes: Vec<f64>,
    /// Friction lost to relaxation, subtracted from the geometric friction profile.
    pub relax_loss_n: f64,
    /// Friction at the moment the needle last came to rest.
    pub relax_anchor_n: Option<f64>,
    pub insertion: u64,
}

/// Tissue model bound to one phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanics {
    pub phantom: PhantomSpec,
    pub geometry: NeedleGeometry,
    pub config: MechConfig,
}

impl Mechanics {
    pub fn new(phantom: PhantomSpec, geometry: NeedleGeometry, config: MechConfig) -> Self {
        Self {
            phantom,
            geometry,
            config,
        }
    }

    /// Fresh state at the surface with friction slopes drawn for `insertion`.
    pub fn start(&self, insertion: u64) -> MechState {
        let mut rng = stream_rng(self.phantom.seed, Stream::FrictionDraw, insertion);
        let segment_slopes = self
            .phantom
            .layers
            .iter()
            .map(|l| {
                let [lo, hi] = l.friction_slope_n_per_mm;
                if hi > lo {
                    rng.gen_range(lo..hi)
                } else {
                    lo
                }
            })
            .collect();
        MechState {
            t_s: 0.0,
            depth_mm: 0.0,
            velocity_mm_s: 0.0,
            punctured: vec![false; self.phantom.layers.len()],
            pending_deformation_mm: 0.0,
            segment_slopes,
            relax_loss_n: 0.0,
            relax_anchor_n: None,
            insertion,
        }
    }

    fn boundary(&self, i: usize) -> f64 {
        self.phantom.layers[i].start_mm
    }

    /// Whether the boundary into layer `i` must be indented to rupture before it can be cut.
    pub fn needs_puncture(&self, i: usize) -> bool {
        let layers = &self.phantom.layers;
        let prev_cf = if i == 0 {
            0.0
        } else {
            layers[i - 1].cutting_force_n
        };
        layers[i].rupture_force_n > prev_cf && layers[i].stiffness_n_per_mm > 0.0
    }

    /// Indentation at which the boundary into layer `i` ruptures.
    pub fn rupture_deformation(&self, i: usize) -> f64 {
        self.phantom.layers[i].rupture_deformation()
    }

    fn next_unpunctured(&self, state: &MechState) -> Option<usize> {
        state.punctured.iter().position(|p| !p)
    }

    /// Boundary currently being indented, if any.
    fn engaged(&self, state: &MechState) -> Option<usize> {
        self.next_unpunctured(state)
            .filter(|&i| self.needs_puncture(i) && state.depth_mm >= self.boundary(i))
    }

    pub fn step(&self, state: &MechState, dx: f64, dt: f64) -> Result<MechState, MechError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(MechError::InvalidStep(format!("dt = {dt}")));
        }
        if !dx.is_finite() || dx.abs() > self.config.v_max_mm_s * dt * (1.0 + 1e-9) {
            return Err(MechError::InvalidStep(format!(
                "|dx| = {} exceeds v_max * dt = {}",
                dx.abs(),
                self.config.v_max_mm_s * dt
            )));
        }
        if state.depth_mm + dx < 0.0 {
            return Err(MechError::RetractionBelowZero {
                depth: state.depth_mm,
                dx,
            });
        }
        let friction_before = self.friction_force(state);
        let mut next = state.clone();
        next.t_s += dt;
        next.velocity_mm_s = dx / dt;

        if dx > 0.0 {
            self.advance(&mut next, dx);
        } else if dx < 0.0 {
            next.depth_mm = (state.depth_mm + dx).max(0.0);
        }
        next.pending_deformation_mm = match self.engaged(&next) {
            Some(i) => next.depth_mm - self.boundary(i),
            None => 0.0,
        };

        if dx == 0.0 {
            let anchor = *next.relax_anchor_n.get_or_insert(friction_before);
            let target = self.config.relax_fraction * anchor;
            let decay = (-dt / self.config.relax_tau_s).exp();
            let relaxed = target + (friction_before - target) * decay;
            next.relax_loss_n = self.friction_profile(&next) - relaxed;
        } else {
            next.relax_anchor_n = None;
        }
        Ok(next)
    }

    fn advance(&self, state: &mut MechState, dx: f64) {
        let mut remaining = dx;
        while remaining > 0.0 {
            let Some(i) = self.next_unpunctured(state) else {
                state.depth_mm += remaining;
                break;
            };
            let b = self.boundary(i);
            let through = if self.needs_puncture(i) {
                b + self.rupture_deformation(i)
            } else {
                b
            };
            let d = state.depth_mm;
            if d + remaining >= through {
                remaining -= (through - d).max(0.0);
                state.depth_mm = d.max(through);
                state.punctured[i] = true;
            } else {
                state.depth_mm = d + remaining;
                remaining = 0.0;
            }
        }
    }

    /// Plateau force of layer `j` at `depth`, including unloading from a stiffer predecessor.
    fn plateau(&self, j: usize, depth: f64) -> f64 {
        let layers = &self.phantom.layers;
        let cf = layers[j].cutting_force_n;
        if j == 0 {
            return cf;
        }
        let prev_cf = layers[j - 1].cutting_force_n;
        let x = depth - layers[j].start_mm;
        let p = self.geometry.tip_protrusion_mm;
        if prev_cf > cf && x >= 0.0 && x < p {
            prev_cf - x / p * (prev_cf - cf)
        } else {
            cf
        }
    }

    pub fn tip_force(&self, state: &MechState) -> f64 {
        if state.depth_mm <= 0.0 || state.velocity_mm_s < 0.0 {
            return 0.0;
        }
        if let Some(i) = self.engaged(state) {
            let layer = &self.phantom.layers[i];
            let before = if i == 0 {
                0.0
            } else {
                self.plateau(i - 1, state.depth_mm)
            };
            let ramp = layer.stiffness_n_per_mm * (state.depth_mm - layer.start_mm);
            return before.max(ramp).min(layer.rupture_force_n);
        }
        let j = self.phantom.layer_index_at(state.depth_mm);
        self.plateau(j, state.depth_mm)
    }

    /// Friction from covered segment lengths before relaxation.
    pub fn friction_profile(&self, state: &MechState) -> f64 {
        let d = state.depth_mm;
        let last = self.phantom.layers.len() - 1;
        self.phantom
            .layers
            .iter()
            .zip(&state.segment_slopes)
            .enumerate()
            .map(|(i, (l, slope))| {
                let covered = (d - l.start_mm).max(0.0);
                let covered = if i == last {
                    covered
                } else {
                    covered.min(l.thickness())
                };
                slope * covered
            })
            .sum()
    }

    pub fn friction_force(&self, state: &MechState) -> f64 {
        if state.depth_mm <= 0.0 {
            return 0.0;
        }
        self.friction_profile(state) - state.relax_loss_n
    }

    pub fn shaft_force(&self, state: &MechState) -> f64 {
        (self.tip_force(state) + self.friction_force(state)).max(0.0)
    }
}
