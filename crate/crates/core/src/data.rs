//! Tabular datasets: CSV ingestion and export, deterministic splits.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::shuffle;

/// Feature rows plus one numeric target. Classification targets hold the
/// class index as a float.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Row positions in the source the dataset was drawn from.
    pub rows: Vec<usize>,
    /// Identifies the source; subsets of one source share it.
    pub origin: Option<String>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, target_name: &str, x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::domain(format!("{} feature rows but {} targets", x.len(), y.len())));
        }
        if let Some(r) = x.iter().position(|r| r.len() != feature_names.len()) {
            return Err(Error::Row {
                row: r + 1,
                msg: format!("expected {} features, found {}", feature_names.len(), x[r].len()),
            });
        }
        let rows = (0..y.len()).collect();
        Ok(Self {
            feature_names,
            target_name: target_name.to_string(),
            x,
            y,
            rows,
            origin: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn with_origin(mut self, origin: impl Into<String>) -> Self {
        self.origin = Some(origin.into());
        self
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            rows: idx.iter().map(|&i| self.rows[i]).collect(),
            origin: self.origin.clone(),
        }
    }

    /// Class labels, checking that every target is a nonnegative integer.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.y
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64 {
                    Ok(v as usize)
                } else {
                    Err(Error::Row {
                        row: i + 1,
                        msg: format!("label {v} is not a class index"),
                    })
                }
            })
            .collect()
    }

    /// Errors if both sets come from the same source and share a row.
    pub fn check_disjoint(&self, other: &Dataset) -> Result<()> {
        if self.origin.is_some() && self.origin == other.origin {
            let mine: std::collections::HashSet<usize> = self.rows.iter().copied().collect();
            if let Some(r) = other.rows.iter().find(|r| mine.contains(r)) {
                return Err(Error::domain(format!("datasets overlap at source row {r}")));
            }
        }
        Ok(())
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a headered CSV. `target` names the target column; every other
/// column is a feature, in file order.
pub fn load_csv(path: &Path, target: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let Some(t) = header.iter().position(|h| h == target) else {
        return Err(Error::Schema(format!(
            "no target column `{target}` in header [{}]",
            header.join(", ")
        )));
    };
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != t)
        .map(|(_, h)| h.clone())
        .collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Row { row, msg: e.to_string() })?;
        if rec.len() != header.len() {
            return Err(Error::Row {
                row,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let yv = parse_cell(&rec[t]).ok_or_else(|| {
            Error::Schema(format!("row {row}: target `{target}` value `{}` is not numeric", &rec[t]))
        })?;
        let mut feats = Vec::with_capacity(feature_names.len());
        for (j, cell) in rec.iter().enumerate() {
            if j == t {
                continue;
            }
            feats.push(parse_cell(cell).ok_or_else(|| Error::Row {
                row,
                msg: format!("column `{}` value `{cell}` is not numeric", header[j]),
            })?);
        }
        x.push(feats);
        y.push(yv);
    }
    if y.is_empty() {
        return Err(Error::Schema(format!("{} has no data rows", path.display())));
    }
    Ok(Dataset::new(feature_names, target, x, y)?.with_origin(path.display().to_string()))
}

/// 17 significant digits, enough for an exact round trip.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = ds.feature_names.clone();
    header.push(ds.target_name.clone());
    w.write_record(&header)?;
    for (r, &t) in ds.x.iter().zip(&ds.y) {
        let mut rec: Vec<String> = r.iter().map(|&v| format_f64(v)).collect();
        rec.push(format_f64(t));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.60, 0.15, 0.25];

/// Shuffles with `seed` and cuts into (train, recalibration, test).
pub fn split(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut idx, &mut rng);
    let n1 = ((n as f64 * fractions[0]).round() as usize).min(n);
    let n2 = ((n as f64 * fractions[1]).round() as usize).min(n - n1);
    Ok((
        ds.subset(&idx[..n1]),
        ds.subset(&idx[n1..n1 + n2]),
        ds.subset(&idx[n1 + n2..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(n: usize) -> Dataset {
        Dataset::new(
            vec!["a".into(), "b".into()],
            "y",
            (0..n).map(|i| vec![i as f64, (i * i) as f64]).collect(),
            (0..n).map(|i| i as f64 * 0.5).collect(),
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy(4);
        let (a, b, c) = split(&ds, [0.5, 0.25, 0.25], 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (2, 1, 1));
        let again = split(&ds, [0.5, 0.25, 0.25], 3).unwrap();
        assert_eq!((a.clone(), b.clone(), c.clone()), again);
        let mut all: Vec<usize> = a.rows.iter().chain(&b.rows).chain(&c.rows).copied().collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        let (a, _, c) = split(&toy(1000), DEFAULT_SPLIT, 1).unwrap();
        assert_eq!((a.len(), c.len()), (600, 250));
        assert!(split(&ds, [0.5, 0.5, 0.5], 0).is_err());
    }

    #[test]
    fn disjointness_check() {
        let ds = toy(10).with_origin("mem");
        let (a, b, _) = split(&ds, DEFAULT_SPLIT, 0).unwrap();
        assert!(a.check_disjoint(&b).is_ok());
        assert!(a.check_disjoint(&a).is_err());
        // different sources are never compared
        assert!(toy(3).check_disjoint(&toy(3)).is_ok());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random::<f64>() * 1e-300, rng.random_range(-1e12..1e12), std::f64::consts::PI])
            .collect();
        let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>() - 0.5).collect();
        let ds = Dataset::new(vec!["p".into(), "q".into(), "r".into()], "y", x, y).unwrap();
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path, "y").unwrap();
        for (a, b) in ds.x.iter().flatten().zip(back.x.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in ds.y.iter().zip(&back.y) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_rows_report_their_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,y\n1,2\n3,oops\n").unwrap();
        assert!(matches!(load_csv(&path, "y"), Err(Error::Schema(m)) if m.contains("row 2")));
        std::fs::write(&path, "a,y\n1,2\nzz,3\n").unwrap();
        assert!(matches!(load_csv(&path, "y"), Err(Error::Row { row: 2, .. })));
        std::fs::write(&path, "a,y\n1,2\n1,2,3\n").unwrap();
        assert!(matches!(load_csv(&path, "y"), Err(Error::Row { row: 2, .. })));
        assert!(matches!(load_csv(&path, "label"), Err(Error::Schema(_))));
    }

    #[test]
    fn labels_must_be_class_indices() {
        let ds = Dataset::new(vec!["a".into()], "label", vec![vec![0.0]; 3], vec![0.0, 2.0, 1.0]).unwrap();
        assert_eq!(ds.labels().unwrap(), vec![0, 2, 1]);
        let bad = Dataset::new(vec!["a".into()], "label", vec![vec![0.0]; 2], vec![0.0, 0.5]).unwrap();
        assert!(matches!(bad.labels(), Err(Error::Row { row: 2, .. })));
    }
}
