//! Labeled datasets with per-feature kind information.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a feature is continuous or discrete with a fixed level set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    Continuous,
    /// Discrete with at least two strictly increasing levels.
    Discrete { levels: Vec<f64> },
}

impl FeatureKind {
    pub fn discrete(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidConfig(
                "discrete feature needs at least two levels".into(),
            ));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "discrete levels must be strictly increasing".into(),
            ));
        }
        Ok(Self::Discrete { levels })
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::Discrete { .. })
    }
}

/// An `N x P` feature matrix with responses and per-feature kinds.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    kinds: Vec<FeatureKind>,
    responses: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, kinds: Vec<FeatureKind>, responses: Vec<f64>) -> Result<Self> {
        if kinds.len() != features.ncols() {
            return Err(Error::SchemaMismatch(format!(
                "{} feature kinds for {} columns",
                kinds.len(),
                features.ncols()
            )));
        }
        if responses.len() != features.nrows() {
            return Err(Error::SchemaMismatch(format!(
                "{} responses for {} rows",
                responses.len(),
                features.nrows()
            )));
        }
        Ok(Self {
            features,
            kinds,
            responses,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn kind(&self, feature: usize) -> &FeatureKind {
        &self.kinds[feature]
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[[row, feature]]
    }

    /// Pearson correlation matrix of the features over the full sample.
    /// Zero-variance features correlate zero with everything.
    pub fn correlation_matrix(&self) -> Array2<f64> {
        let n = self.n() as f64;
        let p = self.p();
        let means: Vec<f64> = (0..p)
            .map(|j| self.features.column(j).sum() / n)
            .collect();
        let mut cov = Array2::<f64>::zeros((p, p));
        for i in 0..self.n() {
            let row = self.features.row(i);
            for a in 0..p {
                let da = row[a] - means[a];
                for b in a..p {
                    cov[[a, b]] += da * (row[b] - means[b]);
                }
            }
        }
        let sd: Vec<f64> = (0..p).map(|j| (cov[[j, j]] / n).sqrt()).collect();
        let mut corr = Array2::<f64>::zeros((p, p));
        for a in 0..p {
            for b in a..p {
                let c = if sd[a] > 0.0 && sd[b] > 0.0 {
                    (cov[[a, b]] / n) / (sd[a] * sd[b])
                } else if a == b {
                    1.0
                } else {
                    0.0
                };
                corr[[a, b]] = c;
                corr[[b, a]] = c;
            }
        }
        corr
    }
}

/// Sidecar metadata stored next to an exported dataset CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub schema: String,
    pub kinds: Vec<FeatureKind>,
    pub seed: Option<u64>,
    /// Free-form echo of the generating configuration.
    pub spec: Option<serde_json::Value>,
}

const DATASET_SCHEMA: &str = "losaw-dataset-v1";

/// Write `dataset.csv` (columns `x1..xP,y`) and a `.json` sidecar with the
/// feature kinds, levels and generator echo.
pub fn export_dataset(
    data: &Dataset,
    csv_path: &Path,
    seed: Option<u64>,
    spec: Option<serde_json::Value>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_path(csv_path)?;
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.responses()[i].to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    let sidecar = DatasetSidecar {
        schema: DATASET_SCHEMA.into(),
        kinds: data.kinds().to_vec(),
        seed,
        spec,
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(csv_path.with_extension("json"), json)?;
    Ok(())
}

/// Read a dataset written by [`export_dataset`].
pub fn import_dataset(csv_path: &Path) -> Result<(Dataset, DatasetSidecar)> {
    let sidecar: DatasetSidecar =
        serde_json::from_str(&std::fs::read_to_string(csv_path.with_extension("json"))?)?;
    if sidecar.schema != DATASET_SCHEMA {
        return Err(Error::SchemaMismatch(format!(
            "unexpected sidecar schema {}",
            sidecar.schema
        )));
    }
    let mut rdr = csv::Reader::from_path(csv_path)?;
    let p = sidecar.kinds.len();
    let mut values = Vec::new();
    let mut responses = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != p + 1 {
            return Err(Error::SchemaMismatch(format!(
                "row with {} fields, expected {}",
                record.len(),
                p + 1
            )));
        }
        for field in record.iter().take(p) {
            values.push(field.parse::<f64>().map_err(|e| {
                Error::SchemaMismatch(format!("bad float {field:?}: {e}"))
            })?);
        }
        responses.push(record[p].parse::<f64>().map_err(|e| {
            Error::SchemaMismatch(format!("bad float {:?}: {e}", &record[p]))
        })?);
    }
    let n = responses.len();
    let features = Array2::from_shape_vec((n, p), values)
        .map_err(|e| Error::SchemaMismatch(e.to_string()))?;
    let data = Dataset::new(features, sidecar.kinds.clone(), responses)?;
    Ok((data, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Dataset {
        let x = array![[1.0, -1.0], [2.0, 0.5], [3.0, 0.25], [4.5, -2.0]];
        Dataset::new(
            x,
            vec![FeatureKind::Continuous, FeatureKind::Continuous],
            vec![0.5, 1.5, 2.5, 3.25],
        )
        .unwrap()
    }

    #[test]
    fn kind_validation() {
        assert!(FeatureKind::discrete(vec![0.0]).is_err());
        assert!(FeatureKind::discrete(vec![1.0, 1.0]).is_err());
        assert!(FeatureKind::discrete(vec![-1.0, 0.0, 1.0]).is_ok());
    }

    #[test]
    fn correlation_of_identical_columns_is_one() {
        let x = array![[1.0, 1.0], [2.0, 2.0], [5.0, 5.0]];
        let d = Dataset::new(
            x,
            vec![FeatureKind::Continuous, FeatureKind::Continuous],
            vec![0.0; 3],
        )
        .unwrap();
        let c = d.correlation_matrix();
        assert!((c[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = toy();
        export_dataset(&data, &path, Some(7), None).unwrap();
        let (back, sidecar) = import_dataset(&path).unwrap();
        assert_eq!(back.features(), data.features());
        assert_eq!(back.responses(), data.responses());
        assert_eq!(sidecar.seed, Some(7));

        // re-export must produce identical bytes
        let path2 = dir.path().join("data2.csv");
        export_dataset(&back, &path2, Some(7), None).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }
}
