//! Published reference results for the benchmark tables, used by the
//! `reproduce` command to report side-by-side comparisons. Only the
//! low-noise (`phi = 0.1`) slices are embedded; every table covers the
//! seven regression models at training sizes 500 and 5,000.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    R2Test,
    R2Ind,
    PrAuc,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::R2Test => "r2_test",
            Metric::R2Ind => "r2_ind",
            Metric::PrAuc => "pr_auc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, Copy)]
pub struct TableSpec {
    pub id: u8,
    pub kind: TableKind,
    pub p: usize,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ReferenceEntry {
    pub regression: u8,
    pub n: usize,
    pub metric: Metric,
    pub rf: f64,
    pub losaw_rf: f64,
}

/// Per regression model: the twelve reference values in the order
/// r2_test (rf/losaw at N=500, rf/losaw at N=5000), then r2_ind, then
/// pr-AUC in the same layout.
type TableData = [[f64; 12]; 7];

const TABLE_2_CONTINUOUS_P100: TableData = [
    [0.871, 0.869, 0.901, 0.901, 0.686, 0.723, 0.806, 0.822, 1.000, 1.000, 1.000, 1.000],
    [0.830, 0.823, 0.889, 0.887, 0.681, 0.709, 0.823, 0.849, 1.000, 0.999, 1.000, 1.000],
    [0.849, 0.845, 0.885, 0.888, 0.315, 0.516, 0.445, 0.668, 0.417, 0.547, 0.417, 0.656],
    [0.833, 0.823, 0.879, 0.877, 0.369, 0.520, 0.464, 0.685, 0.513, 0.659, 0.514, 0.714],
    [0.830, 0.848, 0.902, 0.903, 0.752, 0.815, 0.972, 0.969, 0.629, 0.959, 0.881, 1.000],
    [0.844, 0.850, 0.902, 0.903, 0.826, 0.846, 0.979, 0.970, 1.000, 1.000, 1.000, 1.000],
    [0.829, 0.843, 0.898, 0.901, 0.741, 0.805, 0.949, 0.964, 0.734, 0.958, 0.919, 1.000],
];

const TABLE_3_DISCRETE_P100: TableData = [
    [0.880, 0.881, 0.904, 0.904, 0.705, 0.713, 0.945, 0.953, 1.000, 1.000, 1.000, 1.000],
    [0.874, 0.867, 0.897, 0.898, 0.718, 0.703, 0.907, 0.923, 1.000, 1.000, 1.000, 1.000],
    [0.885, 0.886, 0.898, 0.902, 0.265, 0.358, 0.600, 0.787, 0.417, 0.417, 0.417, 0.999],
    [0.864, 0.863, 0.897, 0.901, 0.306, 0.378, 0.592, 0.799, 0.485, 0.510, 0.514, 0.961],
    [0.868, 0.871, 0.906, 0.908, 0.656, 0.693, 0.899, 0.959, 0.571, 0.797, 0.702, 1.000],
    [0.873, 0.875, 0.906, 0.907, 0.780, 0.810, 0.961, 0.972, 1.000, 1.000, 1.000, 1.000],
    [0.879, 0.879, 0.905, 0.906, 0.695, 0.738, 0.871, 0.932, 0.696, 0.797, 0.797, 1.000],
];

const TABLE_4_DISCRETE_P10: TableData = [
    [0.870, 0.878, 0.903, 0.905, 0.590, 0.685, 0.918, 0.938, 1.000, 1.000, 1.000, 1.000],
    [0.864, 0.872, 0.891, 0.892, 0.705, 0.750, 0.876, 0.905, 0.999, 1.000, 1.000, 1.000],
    [0.883, 0.889, 0.904, 0.907, 0.466, 0.629, 0.647, 0.804, 0.417, 0.976, 0.417, 1.000],
    [0.878, 0.882, 0.900, 0.903, 0.439, 0.532, 0.680, 0.828, 0.516, 0.803, 0.515, 0.929],
    [0.882, 0.888, 0.902, 0.904, 0.787, 0.854, 0.895, 0.940, 0.948, 0.999, 0.904, 1.000],
    [0.881, 0.888, 0.904, 0.905, 0.781, 0.854, 0.943, 0.958, 1.000, 1.000, 1.000, 1.000],
    [0.879, 0.888, 0.906, 0.907, 0.662, 0.756, 0.874, 0.928, 0.706, 0.936, 0.818, 0.993],
];

const TABLE_5_CONTINUOUS_P10: TableData = [
    // the N=5000 r2_test entry of the first model is 0.989 as published
    [0.873, 0.874, 0.898, 0.989, 0.642, 0.678, 0.769, 0.783, 1.000, 1.000, 1.000, 1.000],
    [0.848, 0.846, 0.889, 0.887, 0.667, 0.695, 0.797, 0.820, 1.000, 1.000, 1.000, 1.000],
    [0.862, 0.859, 0.891, 0.891, 0.419, 0.530, 0.520, 0.652, 0.417, 0.543, 0.417, 0.688],
    [0.854, 0.850, 0.888, 0.886, 0.440, 0.542, 0.539, 0.686, 0.513, 0.661, 0.514, 0.766],
    [0.842, 0.854, 0.902, 0.904, 0.768, 0.811, 0.956, 0.951, 0.728, 0.980, 0.947, 1.000],
    [0.850, 0.856, 0.900, 0.902, 0.811, 0.823, 0.964, 0.952, 1.000, 1.000, 1.000, 1.000],
    [0.842, 0.854, 0.901, 0.904, 0.753, 0.803, 0.941, 0.951, 0.753, 0.970, 0.927, 1.000],
];

const TABLE_6_DISCRETE_P50: TableData = [
    [0.882, 0.885, 0.903, 0.904, 0.658, 0.696, 0.943, 0.951, 1.000, 1.000, 1.000, 1.000],
    [0.867, 0.867, 0.904, 0.906, 0.710, 0.737, 0.905, 0.923, 1.000, 0.999, 1.000, 1.000],
    [0.876, 0.882, 0.895, 0.900, 0.367, 0.552, 0.648, 0.820, 0.417, 0.875, 0.417, 1.000],
    [0.864, 0.866, 0.898, 0.901, 0.419, 0.475, 0.636, 0.826, 0.515, 0.524, 0.514, 0.993],
    [0.891, 0.891, 0.906, 0.907, 0.773, 0.814, 0.866, 0.931, 0.999, 1.000, 1.000, 1.000],
    [0.882, 0.886, 0.905, 0.906, 0.778, 0.828, 0.947, 0.965, 0.998, 1.000, 1.000, 1.000],
    [0.879, 0.878, 0.903, 0.904, 0.668, 0.707, 0.881, 0.940, 0.737, 0.790, 0.825, 1.000],
];

const TABLE_7_CONTINUOUS_P50: TableData = [
    [0.871, 0.869, 0.898, 0.898, 0.680, 0.716, 0.798, 0.812, 1.000, 1.000, 1.000, 1.000],
    [0.834, 0.829, 0.887, 0.885, 0.676, 0.705, 0.817, 0.842, 1.000, 1.000, 1.000, 1.000],
    [0.854, 0.851, 0.888, 0.890, 0.343, 0.530, 0.462, 0.661, 0.417, 0.562, 0.417, 0.637],
    [0.836, 0.826, 0.882, 0.880, 0.385, 0.519, 0.478, 0.685, 0.513, 0.641, 0.514, 0.727],
    [0.832, 0.848, 0.901, 0.903, 0.751, 0.813, 0.968, 0.965, 0.642, 0.969, 0.888, 1.000],
    [0.848, 0.854, 0.903, 0.904, 0.823, 0.842, 0.975, 0.966, 1.000, 1.000, 1.000, 1.000],
    [0.833, 0.847, 0.899, 0.902, 0.746, 0.809, 0.947, 0.961, 0.743, 0.971, 0.920, 1.000],
];

fn expand(spec: TableSpec, data: &TableData) -> (TableSpec, Vec<ReferenceEntry>) {
    let mut entries = Vec::with_capacity(7 * 6);
    for (row, values) in data.iter().enumerate() {
        let regression = row as u8 + 1;
        for (block, metric) in [Metric::R2Test, Metric::R2Ind, Metric::PrAuc]
            .into_iter()
            .enumerate()
        {
            for (pair, n) in [(0usize, 500usize), (1, 5000)] {
                entries.push(ReferenceEntry {
                    regression,
                    n,
                    metric,
                    rf: values[block * 4 + pair * 2],
                    losaw_rf: values[block * 4 + pair * 2 + 1],
                });
            }
        }
    }
    (spec, entries)
}

/// Reference table by id: 2 and 3 are the continuous/discrete P=100
/// tables, 4-7 the P=10 and P=50 tables (discrete before continuous).
pub fn table(id: u8) -> Option<(TableSpec, Vec<ReferenceEntry>)> {
    let (kind, p, data): (TableKind, usize, &TableData) = match id {
        2 => (TableKind::Continuous, 100, &TABLE_2_CONTINUOUS_P100),
        3 => (TableKind::Discrete, 100, &TABLE_3_DISCRETE_P100),
        4 => (TableKind::Discrete, 10, &TABLE_4_DISCRETE_P10),
        5 => (TableKind::Continuous, 10, &TABLE_5_CONTINUOUS_P10),
        6 => (TableKind::Discrete, 50, &TABLE_6_DISCRETE_P50),
        7 => (TableKind::Continuous, 50, &TABLE_7_CONTINUOUS_P50),
        _ => return None,
    };
    Some(expand(
        TableSpec {
            id,
            kind,
            p,
            phi: 0.1,
        },
        data,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_rows_are_embedded() {
        let (spec, rows) = table(3).unwrap();
        assert_eq!(spec.p, 100);
        let f3 = rows
            .iter()
            .find(|r| r.regression == 3 && r.n == 5000 && r.metric == Metric::PrAuc)
            .unwrap();
        assert_eq!(f3.rf, 0.417);
        assert_eq!(f3.losaw_rf, 0.999);

        let (_, rows) = table(2).unwrap();
        let f5 = rows
            .iter()
            .find(|r| r.regression == 5 && r.n == 500 && r.metric == Metric::PrAuc)
            .unwrap();
        assert_eq!(f5.rf, 0.629);
        assert_eq!(f5.losaw_rf, 0.959);

        let (_, rows) = table(4).unwrap();
        let f3 = rows
            .iter()
            .find(|r| r.regression == 3 && r.n == 5000 && r.metric == Metric::PrAuc)
            .unwrap();
        assert_eq!(f3.rf, 0.417);
        assert_eq!(f3.losaw_rf, 1.000);

        assert!(table(1).is_none());
        assert!(table(8).is_none());
        assert_eq!(table(6).unwrap().1.len(), 42);
    }
}
