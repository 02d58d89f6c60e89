use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ihm::{save_components, ComponentModel};
use crate::spectra::{load_spectra, save_sizes, save_spectra, SpectraSet, WavenumberGrid};
use crate::synth::{arc_manifold, peak_spectra, two_sensor_common, PeakSpectraParams};

fn default_dim() -> usize {
    10
}

fn default_angle() -> f64 {
    std::f64::consts::PI
}

fn default_nuisance() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SynthKind {
    ArcManifold {
        #[serde(default = "default_dim")]
        dim: usize,
        /// radians
        #[serde(default = "default_angle")]
        angle: f64,
    },
    TwoSensorCommon {
        #[serde(default = "default_nuisance")]
        nuisance_scale: f64,
    },
    PeakSpectra(PeakSpectraParams),
}

/// A synthetic data set request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub kind: SynthKind,
    pub n_samples: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Generated spectra plus every hidden variable.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub primary: SpectraSet,
    /// Second sensor for pair data, rows aligned with `primary`.
    pub secondary: Option<SpectraSet>,
    pub truth: BTreeMap<String, Vec<f64>>,
    pub components: Option<Vec<ComponentModel>>,
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:04}")).collect()
}

fn index_grid(d: usize) -> Result<WavenumberGrid> {
    WavenumberGrid::new((1..=d).map(|k| k as f64).collect())
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    let n = spec.n_samples;
    let mut truth = BTreeMap::new();
    Ok(match &spec.kind {
        SynthKind::ArcManifold { dim, angle } => {
            let a = arc_manifold(n, *dim, *angle, spec.noise, spec.seed)?;
            truth.insert("arclength".into(), a.arclength);
            SynthData {
                primary: SpectraSet::new(index_grid(*dim)?, a.points, ids(n), None)?,
                secondary: None,
                truth,
                components: None,
            }
        }
        SynthKind::TwoSensorCommon { nuisance_scale } => {
            let t = two_sensor_common(n, spec.noise, *nuisance_scale, spec.seed)?;
            truth.insert("theta".into(), t.theta);
            truth.insert("nuisance1".into(), t.nuisance1);
            truth.insert("nuisance2".into(), t.nuisance2);
            SynthData {
                primary: SpectraSet::new(index_grid(3)?, t.sensor1, ids(n), None)?,
                secondary: Some(SpectraSet::new(index_grid(3)?, t.sensor2, ids(n), None)?),
                truth,
                components: None,
            }
        }
        SynthKind::PeakSpectra(p) => {
            let d = peak_spectra(n, spec.noise, p, spec.seed)?;
            let sizes = Array1::from(d.sizes.clone());
            truth.insert("size_nm".into(), d.sizes);
            truth.insert("nuisance".into(), d.nuisance);
            SynthData {
                primary: SpectraSet::new(WavenumberGrid::new(d.grid)?, d.intensities, ids(n), Some(sizes))?,
                secondary: None,
                truth,
                components: Some(d.components),
            }
        }
    })
}

/// Writes `spectra.csv`, and when present `sizes.csv`, `secondary.csv`,
/// `components.json`, plus `truth.json`.
pub fn write_synth(data: &SynthData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_spectra(&data.primary, &dir.join("spectra.csv"))?;
    if data.primary.sizes().is_some() {
        save_sizes(&data.primary, &dir.join("sizes.csv"))?;
    }
    if let Some(s) = &data.secondary {
        save_spectra(s, &dir.join("secondary.csv"))?;
    }
    if let Some(c) = &data.components {
        save_components(c, &dir.join("components.json"))?;
    }
    let path = dir.join("truth.json");
    let text = serde_json::to_string_pretty(&data.truth)?;
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Reads a secondary observation file and checks it pairs with `primary`.
pub fn load_secondary(path: &Path, primary: &SpectraSet) -> Result<Array2<f64>> {
    let s = load_spectra(path, None)?;
    if s.sample_ids() != primary.sample_ids() {
        return Err(Error::InvalidInput(format!(
            "{}: sample ids do not match the primary spectra",
            path.display()
        )));
    }
    Ok(s.intensities().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_shapes() {
        let s: SynthSpec = serde_json::from_str(
            r#"{"kind": "peak_spectra", "n_samples": 20, "noise": 0.01, "n_wavenumbers": 50}"#,
        )
        .unwrap();
        let SynthKind::PeakSpectra(p) = &s.kind else {
            panic!("wrong kind")
        };
        assert_eq!(p.n_wavenumbers, 50);
        assert_eq!(p.size_range, (208.0, 483.0));
        let d = synth_generate(&s).unwrap();
        assert_eq!(d.primary.intensities().dim(), (20, 50));
        let back: SynthSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn files_round_trip_bit_identically() {
        let s = SynthSpec {
            kind: SynthKind::TwoSensorCommon { nuisance_scale: 2.0 },
            n_samples: 30,
            noise: 0.05,
            seed: 3,
        };
        let d = synth_generate(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_synth(&d, dir.path()).unwrap();
        let p = load_spectra(&dir.path().join("spectra.csv"), None).unwrap();
        assert_eq!(p, d.primary);
        let sec = load_secondary(&dir.path().join("secondary.csv"), &p).unwrap();
        assert_eq!(&sec, d.secondary.as_ref().unwrap().intensities());
        let truth: BTreeMap<String, Vec<f64>> =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
        assert_eq!(truth, d.truth);
    }

    #[test]
    fn invalid_spec_rejected() {
        let s = SynthSpec {
            kind: SynthKind::ArcManifold { dim: 3, angle: 1.0 },
            n_samples: 5,
            noise: 0.0,
            seed: 0,
        };
        assert!(synth_generate(&s).is_err());
    }
}
