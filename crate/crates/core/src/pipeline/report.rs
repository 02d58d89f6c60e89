use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{compute_metrics, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLabel {
    Train,
    Test,
}

impl SplitLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub sample_id: String,
    pub actual_nm: f64,
    pub predicted_nm: f64,
    pub split: SplitLabel,
}

/// Sample indices (into the loaded data) of each split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Intermediate quantities; absent ones do not apply to the workflow.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Test rows: Nyström coordinates against a joint refit, each joint
    /// column rescaled onto the training fit by least squares.
    pub nystrom_mse: Option<f64>,
    /// Greedy reconstruction CV MSE after each chosen coordinate.
    pub coordinate_cv_mse: Option<Vec<f64>>,
    pub alt_eigenvalues: Option<Vec<f64>>,
    pub alt_selection: Option<Vec<usize>>,
    /// Training rows: predicted against actual Ψ.
    pub alt_prediction_mse: Option<f64>,
    /// Training R² of the size regressor fed the actual Ψ.
    pub train_r2_actual_alt: Option<f64>,
    /// Test rows: relative L2 error of decode(encode(φ)).
    pub reconstruction_l2: Option<f64>,
    /// Training rows.
    pub orthogonality: Option<f64>,
    pub pls_cv_mse: Option<Vec<f64>>,
    pub ihm_mean_sse: Option<f64>,
    pub ihm_unconverged: Option<usize>,
    pub search_best_cv_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub workflow: String,
    pub config_hash: String,
    pub seed: u64,
    pub split: SplitRecord,
    pub train: MetricsReport,
    pub test: MetricsReport,
    /// Latent variables feeding the size regressor.
    pub latent_count: usize,
    /// Diffusion-map eigenvector indices used, empty for PLS workflows.
    pub coordinates: Vec<usize>,
    pub diagnostics: Diagnostics,
    /// 2-means label of each pretreated spectrum.
    pub clusters: BTreeMap<String, usize>,
    pub parity: Vec<ParityRow>,
    pub loss_history: Option<LossHistory>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Recomputes both splits' metrics from the parity rows.
    pub fn recompute_metrics(&self) -> Result<(MetricsReport, MetricsReport)> {
        let part = |label: SplitLabel| -> Result<MetricsReport> {
            let rows: Vec<&ParityRow> = self.parity.iter().filter(|r| r.split == label).collect();
            let pred: Vec<f64> = rows.iter().map(|r| r.predicted_nm).collect();
            let act: Vec<f64> = rows.iter().map(|r| r.actual_nm).collect();
            let ids: Vec<String> = rows.iter().map(|r| r.sample_id.clone()).collect();
            Ok(MetricsReport::new(&compute_metrics(&pred, &act)?, &ids))
        };
        Ok((part(SplitLabel::Train)?, part(SplitLabel::Test)?))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `metrics.csv`, `parity.csv` and, for trained
/// networks, `loss_history.csv`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("report.json"), &report.to_json()?)?;

    let mut m = String::from("split,n,r2,rmse_nm,mape_pct\n");
    for (label, r) in [("train", &report.train), ("test", &report.test)] {
        m.push_str(&format!(
            "{label},{},{},{},{}\n",
            r.percent_errors.len(),
            r.r2,
            r.rmse_nm,
            r.mape_pct
        ));
    }
    write_file(&dir.join("metrics.csv"), &m)?;

    let mut p = String::from("sample_id,actual_nm,predicted_nm,split\n");
    for r in &report.parity {
        p.push_str(&format!(
            "{},{},{},{}\n",
            r.sample_id,
            r.actual_nm,
            r.predicted_nm,
            r.split.as_str()
        ));
    }
    write_file(&dir.join("parity.csv"), &p)?;

    let loss_path = dir.join("loss_history.csv");
    if let Some(h) = &report.loss_history {
        let mut t = h.columns.join(",");
        t.push('\n');
        for row in &h.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            t.push_str(&cells.join(","));
            t.push('\n');
        }
        write_file(&loss_path, &t)?;
    } else if loss_path.exists() {
        std::fs::remove_file(&loss_path).map_err(|e| Error::io(&loss_path, e))?;
    }
    Ok(())
}

/// Reads `parity.csv` back into rows.
pub fn read_parity(path: &Path) -> Result<Vec<ParityRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec.map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?);
    }
    Ok(out)
}

/// Writes `sample_id,predicted_nm`.
pub fn write_predictions(ids: &[String], predicted: &[f64], path: &Path) -> Result<()> {
    let mut t = String::from("sample_id,predicted_nm\n");
    for (id, p) in ids.iter().zip(predicted) {
        t.push_str(&format!("{id},{p}\n"));
    }
    write_file(path, &t)
}

pub fn read_predictions(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<(String, f64)>() {
        out.push(rec.map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::Metrics;

    fn toy() -> RunReport {
        let parity = vec![
            ParityRow { sample_id: "a".into(), actual_nm: 200.0, predicted_nm: 210.0, split: SplitLabel::Train },
            ParityRow { sample_id: "b".into(), actual_nm: 300.0, predicted_nm: 290.0, split: SplitLabel::Train },
            ParityRow { sample_id: "c".into(), actual_nm: 250.0, predicted_nm: 260.0, split: SplitLabel::Test },
        ];
        let m = |p: &[f64], a: &[f64], ids: &[&str]| -> MetricsReport {
            let ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
            let mm: Metrics = compute_metrics(p, a).unwrap();
            MetricsReport::new(&mm, &ids)
        };
        RunReport {
            workflow: "pls_direct".into(),
            config_hash: "0".repeat(64),
            seed: 0,
            split: SplitRecord { train: vec![0, 1], test: vec![2] },
            train: m(&[210.0, 290.0], &[200.0, 300.0], &["a", "b"]),
            test: m(&[260.0], &[250.0], &["c"]),
            latent_count: 1,
            coordinates: vec![],
            diagnostics: Diagnostics::default(),
            clusters: BTreeMap::new(),
            parity,
            loss_history: Some(LossHistory { columns: vec!["epoch".into(), "loss".into()], rows: vec![vec![0.0, 1.5]] }),
        }
    }

    #[test]
    fn emit_twice_is_byte_identical_and_parseable() {
        let r = toy();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        emit_report(&r, d1.path()).unwrap();
        let back = RunReport::load(&d1.path().join("report.json")).unwrap();
        assert_eq!(back, r);
        emit_report(&back, d2.path()).unwrap();
        for f in ["report.json", "metrics.csv", "parity.csv", "loss_history.csv"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        let rows = read_parity(&d1.path().join("parity.csv")).unwrap();
        assert_eq!(rows, r.parity);
        let (tr, te) = r.recompute_metrics().unwrap();
        assert_eq!(tr, r.train);
        assert_eq!(te, r.test);
    }
}
