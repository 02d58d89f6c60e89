use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{SpectraSet, WavenumberGrid};
use crate::error::{Error, Result};

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_f64(field: &str, line: u64, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::Csv(format!("line {line}: cannot parse {what} {field:?}")))
}

/// Reads a wide spectra CSV (`wavenumber,<id1>,<id2>,...`, one row per
/// wavenumber) and optionally attaches sizes from a `sample_id,diameter_nm`
/// CSV by sample id.
pub fn load_spectra(path: &Path, sizes_path: Option<&Path>) -> Result<SpectraSet> {
    let mut rdr = reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?
        .clone();
    if header.is_empty() || !header[0].eq_ignore_ascii_case("wavenumber") {
        return Err(Error::Csv(format!(
            "{}: first header field must be \"wavenumber\"",
            path.display()
        )));
    }
    let ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if ids.is_empty() {
        return Err(Error::Csv(format!("{}: no sample columns", path.display())));
    }

    let mut grid = Vec::new();
    let mut columns: Vec<f64> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
        if rec.len() != ids.len() + 1 {
            return Err(Error::Csv(format!(
                "line {line}: expected {} fields, found {}",
                ids.len() + 1,
                rec.len()
            )));
        }
        grid.push(parse_f64(&rec[0], line, "wavenumber")?);
        for field in rec.iter().skip(1) {
            columns.push(parse_f64(field, line, "intensity")?);
        }
    }
    let n_w = grid.len();
    let grid = WavenumberGrid::new(grid)?;
    // `columns` is wavenumber-major; transpose to one row per sample.
    let by_wavenumber =
        Array2::from_shape_vec((n_w, ids.len()), columns).map_err(|e| Error::Csv(e.to_string()))?;
    let intensities = by_wavenumber.t().as_standard_layout().into_owned();

    let set = SpectraSet::new(grid, intensities, ids, None)?;
    match sizes_path {
        None => Ok(set),
        Some(p) => {
            let table = load_sizes(p)?;
            attach_sizes(set, &table)
        }
    }
}

/// Reads a `sample_id,diameter_nm` CSV in file order.
pub fn load_sizes(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?
        .clone();
    if header.len() != 2 || &header[0] != "sample_id" || &header[1] != "diameter_nm" {
        return Err(Error::Csv(format!(
            "{}: header must be sample_id,diameter_nm",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
        if rec.len() != 2 {
            return Err(Error::Csv(format!("line {line}: expected 2 fields")));
        }
        out.push((rec[0].to_owned(), parse_f64(&rec[1], line, "diameter")?));
    }
    Ok(out)
}

fn attach_sizes(set: SpectraSet, table: &[(String, f64)]) -> Result<SpectraSet> {
    let index: HashMap<&str, usize> = set
        .sample_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut sizes = vec![f64::NAN; set.n_samples()];
    for (id, d) in table {
        let i = *index
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("size row for unknown sample id {id:?}")))?;
        if !sizes[i].is_nan() {
            return Err(Error::InvalidInput(format!(
                "duplicate size row for {id:?}"
            )));
        }
        sizes[i] = *d;
    }
    if let Some(i) = sizes.iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidInput(format!(
            "no size given for sample {:?}",
            set.sample_ids()[i]
        )));
    }
    set.with_sizes(Some(Array1::from(sizes)))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Writes the wide spectra CSV. Values use Rust's shortest round-trip float
/// formatting, so load → save → load is bit-identical.
pub fn save_spectra(set: &SpectraSet, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let mut line = String::from("wavenumber");
    for id in set.sample_ids() {
        line.push(',');
        line.push_str(id);
    }
    writeln!(w, "{line}").map_err(io)?;
    let m = set.intensities();
    for (j, wn) in set.grid().values().iter().enumerate() {
        line.clear();
        line.push_str(&wn.to_string());
        for i in 0..m.nrows() {
            line.push(',');
            line.push_str(&m[[i, j]].to_string());
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_sizes(set: &SpectraSet, path: &Path) -> Result<()> {
    let sizes = set.require_sizes("save_sizes")?;
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "sample_id,diameter_nm").map_err(io)?;
    for (id, d) in set.sample_ids().iter().zip(sizes.iter()) {
        writeln!(w, "{id},{d}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn toy_file_parses_to_samples_by_wavenumbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s.csv",
            "wavenumber,a,b\n1,0.1,1.1\n2,0.2,1.2\n3,0.3,1.3\n4,0.4,1.4\n5,0.5,1.5\n",
        );
        let set = load_spectra(&p, None).unwrap();
        assert_eq!(set.intensities().dim(), (2, 5));
        assert_eq!(set.intensities()[[1, 2]], 1.3);
        assert_eq!(set.sample_ids(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn decreasing_grid_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.csv", "wavenumber,a\n3,1\n2,1\n1,1\n");
        let err = load_spectra(&p, None).unwrap_err();
        assert!(err.to_string().contains("grid not increasing"), "{err}");
    }

    #[test]
    fn malformed_rows_and_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.csv", "wavenumber,a,b\n1,0.1\n");
        assert!(matches!(load_spectra(&p, None), Err(Error::Csv(_))));
        let p = write(dir.path(), "s2.csv", "wavenumber,a,a\n1,0.1,0.2\n");
        assert!(load_spectra(&p, None).is_err());
        let p = write(dir.path(), "s3.csv", "wavenumber,a\n1,abc\n");
        assert!(matches!(load_spectra(&p, None), Err(Error::Csv(_))));
    }

    #[test]
    fn sizes_attach_by_id_and_unknown_ids_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s.csv",
            "wavenumber,a,b\n1,0.1,1.1\n2,0.2,1.2\n",
        );
        let s = write(
            dir.path(),
            "z.csv",
            "sample_id,diameter_nm\nb,300\na,250.5\n",
        );
        let set = load_spectra(&p, Some(&s)).unwrap();
        assert_eq!(set.sizes().unwrap().to_vec(), vec![250.5, 300.0]);
        let bad = write(dir.path(), "bad.csv", "sample_id,diameter_nm\nc,300\n");
        let err = load_spectra(&p, Some(&bad)).unwrap_err();
        assert!(err.to_string().contains("unknown sample id"));
    }
}
