use serde::{Deserialize, Serialize};

use super::{AnalysisError, Stats};
use crate::control::{ForceSample, InsertionTrace};
use crate::phantom::{Material, MaterialGroup, PhantomSpec};

const MIN_SEGMENT_SAMPLES: usize = 10;

/// Which friction signal is regressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionSource {
    /// Measured shaft force minus the true tip force.
    ShaftMinusTrue,
    /// Measured shaft force minus the estimated tip force.
    ShaftMinusEst,
    /// The simulator's own friction column.
    Internal,
}

impl FrictionSource {
    fn pick(self, s: &ForceSample) -> f64 {
        match self {
            FrictionSource::ShaftMinusTrue => s.f_shaft_n - s.f_tip_true_n,
            FrictionSource::ShaftMinusEst => s.f_shaft_n - s.f_tip_est_n,
            FrictionSource::Internal => s.f_friction_n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSlope {
    pub layer: usize,
    pub label: String,
    pub material: Material,
    pub start_mm: f64,
    pub end_mm: f64,
    pub n: usize,
    pub slope_n_per_mm: f64,
    pub intercept_n: f64,
}

/// Ordinary least squares fit `y = a + b x`, returned as `(b, a)`.
/// `None` for fewer than two points or no spread in `x`.
pub fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        sxx += dx * dx;
        sxy += dx * (y[i] - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let b = sxy / sxx;
    Some((b, my - b * mx))
}

/// Per-layer OLS slope of friction against depth.
///
/// Every layer is its own segment, so the two skin sublayers get separate
/// slopes. Layers the needle never reached are skipped.
pub fn friction_regression(
    trace: &InsertionTrace,
    phantom: &PhantomSpec,
    source: FrictionSource,
) -> Result<Vec<SegmentSlope>, AnalysisError> {
    let labels = phantom.segment_labels();
    let mut out = Vec::new();
    for (i, layer) in phantom.layers.iter().enumerate() {
        let (x, y): (Vec<f64>, Vec<f64>) = trace
            .samples
            .iter()
            .filter(|s| layer.contains(s.depth_mm))
            .map(|s| (s.depth_mm, source.pick(s)))
            .unzip();
        if x.is_empty() {
            continue;
        }
        let degenerate = || AnalysisError::DegenerateSegment {
            label: labels[i].clone(),
            n: x.len(),
        };
        if x.len() < MIN_SEGMENT_SAMPLES {
            return Err(degenerate());
        }
        let (slope, intercept) = ols(&x, &y).ok_or_else(degenerate)?;
        out.push(SegmentSlope {
            layer: i,
            label: labels[i].clone(),
            material: layer.material,
            start_mm: layer.start_mm,
            end_mm: layer.end_mm,
            n: x.len(),
            slope_n_per_mm: slope,
            intercept_n: intercept,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionRow {
    pub group: MaterialGroup,
    pub stats: Option<Stats>,
}

/// Friction per unit length aggregated by material group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionTable {
    pub rows: Vec<FrictionRow>,
}

pub fn friction_table(segments: &[SegmentSlope]) -> FrictionTable {
    let rows = [
        MaterialGroup::Skin,
        MaterialGroup::Tissue,
        MaterialGroup::Gelatin,
    ]
    .into_iter()
    .map(|group| {
        let v: Vec<f64> = segments
            .iter()
            .filter(|s| s.material.group() == group)
            .map(|s| s.slope_n_per_mm)
            .collect();
        FrictionRow {
            group,
            stats: Stats::of(&v),
        }
    })
    .collect();
    FrictionTable { rows }
}

impl FrictionTable {
    pub fn get(&self, group: MaterialGroup) -> Option<&Stats> {
        self.rows.iter().find(|r| r.group == group)?.stats.as_ref()
    }

    /// Materials as columns; mean(sd), min and max as rows, in N/mm.
    pub fn render(&self) -> String {
        let cell =
            |r: &FrictionRow, f: &dyn Fn(&Stats) -> String| r.stats.as_ref().map_or("-".into(), f);
        let mut lines = vec![format!(
            "Material | {}",
            self.rows
                .iter()
                .map(|r| r.group.to_string())
                .collect::<Vec<_>>()
                .join(" | ")
        )];
        let rows: [(&str, &dyn Fn(&Stats) -> String); 4] = [
            ("Mean", &|s| format!("{:.2}({:.2})", s.mean, s.sd)),
            ("Min", &|s| format!("{:.2}", s.min)),
            ("Max", &|s| format!("{:.2}", s.max)),
            ("n", &|s| s.n.to_string()),
        ];
        for (label, f) in rows {
            lines.push(format!(
                "{label} | {}",
                self.rows
                    .iter()
                    .map(|r| cell(r, f))
                    .collect::<Vec<_>>()
                    .join(" | ")
            ));
        }
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_a_line() {
        let x: Vec<f64> = (0..50).map(|i| 10.0 + i as f64 * 0.025).collect();
        let y: Vec<f64> = x.iter().map(|x| 1.2 + 0.38 * x).collect();
        let (b, a) = ols(&x, &y).unwrap();
        assert!((b - 0.38).abs() < 1e-9);
        assert!((a - 1.2).abs() < 1e-9);
        assert!(ols(&[1.0, 1.0], &[0.0, 1.0]).is_none());
        assert!(ols(&[1.0], &[0.0]).is_none());
    }

    #[test]
    fn table_groups_by_material() {
        let seg = |m, s| SegmentSlope {
            layer: 0,
            label: String::new(),
            material: m,
            start_mm: 0.0,
            end_mm: 1.0,
            n: 10,
            slope_n_per_mm: s,
            intercept_n: 0.0,
        };
        let t = friction_table(&[
            seg(Material::SkinFoam, 0.4),
            seg(Material::Silicone, 0.3),
            seg(Material::Gelatin, -0.1),
        ]);
        let skin = t.get(MaterialGroup::Skin).unwrap();
        assert!((skin.mean - 0.35).abs() < 1e-12);
        assert!(t.get(MaterialGroup::Tissue).is_none());
        let text = t.render();
        assert!(text.starts_with("Material | Skin Layer | Tissue | Gelatin"));
        assert!(text.contains("Min | 0.30 | - | -0.10"));
    }
}
