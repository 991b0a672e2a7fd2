//! SDR, loss-as-metric matrices, row standardization and correlation with listening scores.

mod eval;
mod sdr;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Metric;

pub use eval::{item_metrics, metric_matrix, MetricContext, MetricValue, PreparedPair, Scope, SystemEstimates};
pub use sdr::{sdr_metric, SDR_CAP_DB};

/// Rows are metrics (optionally `metric/source`), columns are systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Cells where every contributing value was degenerate.
    #[serde(default)]
    pub flags: Vec<Vec<bool>>,
}

impl MetricMatrix {
    pub fn new(rows: Vec<String>, columns: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let flags = vec![vec![false; columns.len()]; rows.len()];
        Self::with_flags(rows, columns, values, flags)
    }

    pub fn with_flags(
        rows: Vec<String>,
        columns: Vec<String>,
        values: Vec<Vec<f64>>,
        flags: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let m = Self { rows, columns, values, flags };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.values.len() != self.rows.len() || self.flags.len() != self.rows.len() {
            return Err(Error::Shape(format!(
                "{} row names for {} value rows",
                self.rows.len(),
                self.values.len()
            )));
        }
        for (name, (row, flags)) in self.rows.iter().zip(self.values.iter().zip(&self.flags)) {
            if row.len() != self.columns.len() || flags.len() != self.columns.len() {
                return Err(Error::Shape(format!(
                    "row {name} has {} values for {} columns",
                    row.len(),
                    self.columns.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("metric matrix cell"));
            }
        }
        Ok(())
    }

    pub fn row(&self, name: &str) -> Option<&[f64]> {
        self.rows.iter().position(|r| r == name).map(|i| self.values[i].as_slice())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header = std::iter::once("metric").chain(self.columns.iter().map(String::as_str));
        w.write_record(header).map_err(csv_err)?;
        for (name, row) in self.rows.iter().zip(&self.values) {
            let record = std::iter::once(name.clone()).chain(row.iter().map(|v| v.to_string()));
            w.write_record(record).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let (columns, rows, values) = read_table(reader)?;
        Self::new(rows, columns, values)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut m: Self = serde_json::from_str(s)?;
        if m.flags.is_empty() {
            m.flags = vec![vec![false; m.columns.len()]; m.rows.len()];
        }
        m.validate()?;
        Ok(m)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Header `label,<columns...>` followed by `name,<values...>` rows.
fn read_table<R: Read>(reader: R) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.len() < 2 {
        return Err(Error::Parse("table needs a label column and at least one system".into()));
    }
    let columns: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let (mut rows, mut values) = (Vec::new(), Vec::new());
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let name = record.get(0).unwrap_or_default().to_string();
        let row = record
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {} ({name}): bad number {v:?}", line + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(name);
        values.push(row);
    }
    Ok((columns, rows, values))
}

/// Zero-mean, unit population variance. `None` for a constant row.
pub fn standardize_row(row: &[f64]) -> Option<Vec<f64>> {
    let first = *row.first()?;
    if row.iter().all(|&v| v == first) {
        return None;
    }
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return None;
    }
    Some(row.iter().map(|v| (v - mean) / std).collect())
}

/// Standardizes each row and clips to `[-1, 1]`. Constant rows become zero with a warning.
pub fn standardize_rows(matrix: &MetricMatrix) -> MetricMatrix {
    let values = matrix
        .rows
        .iter()
        .zip(&matrix.values)
        .map(|(name, row)| match standardize_row(row) {
            Some(z) => z.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
            None => {
                log::warn!("row {name} is constant; standardized to zeros");
                vec![0.0; row.len()]
            }
        })
        .collect();
    MetricMatrix {
        rows: matrix.rows.clone(),
        columns: matrix.columns.clone(),
        values,
        flags: matrix.flags.clone(),
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Shape(format!(
            "correlation needs two equal-length vectors of at least 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) || sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Listening-test scores on a 0-100 scale: one row per source (plus optionally `mean`), one column per system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosTable {
    pub systems: Vec<String>,
    pub rows: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl MosTable {
    pub fn new(systems: Vec<String>, rows: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != values.len() || rows.is_empty() {
            return Err(Error::Shape("score table needs at least one row".into()));
        }
        for (name, row) in rows.iter().zip(&values) {
            if row.len() != systems.len() {
                return Err(Error::Shape(format!(
                    "score row {name} has {} values for {} systems",
                    row.len(),
                    systems.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=100.0).contains(*v)) {
                return Err(Error::Domain(format!("score {v} in row {name} is outside [0, 100]")));
            }
        }
        Ok(Self { systems, rows, values })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let (systems, rows, values) = read_table(reader)?;
        Self::new(systems, rows, values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(std::iter::once("source").chain(self.systems.iter().map(String::as_str)))
            .map_err(csv_err)?;
        for (name, row) in self.rows.iter().zip(&self.values) {
            w.write_record(std::iter::once(name.clone()).chain(row.iter().map(|v| v.to_string())))
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn row(&self, name: &str) -> Option<&[f64]> {
        self.rows.iter().position(|r| r == name).map(|i| self.values[i].as_slice())
    }

    /// The `mean` row if present, otherwise the average of all rows.
    pub fn mean_row(&self) -> Vec<f64> {
        if let Some(r) = self.row("mean") {
            return r.to_vec();
        }
        (0..self.systems.len())
            .map(|s| self.values.iter().map(|r| r[s]).sum::<f64>() / self.values.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub metric: String,
    /// Score row the metric was compared with.
    pub against: String,
    /// `None` when either vector is constant.
    pub r: Option<f64>,
}

/// Pearson correlation of every metric row with the matching score row, sorted descending.
///
/// A row named `metric/source` is compared with score row `source` when it exists and with the
/// mean row otherwise. With `sign_flip`, lower-is-better metrics have their correlation negated.
pub fn correlate_with_mos(matrix: &MetricMatrix, mos: &MosTable, sign_flip: bool) -> Result<Vec<Correlation>> {
    if mos.systems.len() < 2 {
        return Err(Error::Shape("correlation needs at least 2 systems".into()));
    }
    let mut order = Vec::with_capacity(mos.systems.len());
    for s in &mos.systems {
        let idx = matrix
            .columns
            .iter()
            .position(|c| c == s)
            .ok_or_else(|| Error::Missing(format!("system {s} has scores but no metric column")))?;
        order.push(idx);
    }
    if let Some(extra) = matrix.columns.iter().find(|c| !mos.systems.contains(c)) {
        return Err(Error::Missing(format!("system {extra} has metrics but no scores")));
    }
    let mean = mos.mean_row();
    let mut out = Vec::with_capacity(matrix.rows.len());
    for (name, row) in matrix.rows.iter().zip(&matrix.values) {
        let (base, source) = match name.split_once('/') {
            Some((b, s)) => (b, Some(s)),
            None => (name.as_str(), None),
        };
        let (against, target) = match source.and_then(|s| mos.row(s).map(|r| (s, r))) {
            Some((s, r)) => (s.to_string(), r.to_vec()),
            None => ("mean".to_string(), mean.clone()),
        };
        let x: Vec<f64> = order.iter().map(|&i| row[i]).collect();
        let flip = sign_flip && base.parse::<Metric>().map(Metric::lower_is_better).unwrap_or(false);
        let r = match pearson(&x, &target) {
            Ok(r) => Some(if flip { -r } else { r }),
            Err(Error::Undefined(_)) => {
                log::warn!("correlation for {name} is undefined");
                None
            }
            Err(e) => return Err(e),
        };
        out.push(Correlation {
            metric: name.clone(),
            against,
            r,
        });
    }
    out.sort_by(|a, b| match (a.r, b.r) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.metric.cmp(&b.metric)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.metric.cmp(&b.metric),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn standardize_clips() {
        let m = MetricMatrix::new(vec!["a".into()], names("s", 3), vec![vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(standardize_rows(&m).values[0], vec![-1.0, 0.0, 1.0]);
        let z = standardize_row(&[1.0, 2.0, 3.0]).unwrap();
        assert!((z[2] - 1.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_row_goes_to_zero() {
        assert_eq!(standardize_row(&[5.0, 5.0, 5.0]), None);
        let m = MetricMatrix::new(vec!["a".into()], names("s", 3), vec![vec![5.0; 3]]).unwrap();
        assert_eq!(standardize_rows(&m).values[0], vec![0.0; 3]);
    }

    #[test]
    fn restandardizing_is_idempotent_inside_the_clip() {
        let row = [0.5, -0.5, 0.9, -0.9, 0.0];
        let once = standardize_row(&row).unwrap();
        let twice = standardize_row(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        // direct formula: sxy = 5, sxx = 2, syy = 38/3
        let expected = 5.0 / (2.0f64 * 38.0 / 3.0).sqrt();
        let r = pearson(&x, &[2.0, 4.0, 7.0]).unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 0.993399).abs() < 1e-6);
        // sxy = 3, syy = 14/3
        let r = pearson(&x, &[2.0, 4.0, 5.0]).unwrap();
        assert!((r - 3.0 / (2.0f64 * 14.0 / 3.0).sqrt()).abs() < 1e-12);
        assert!((r - 0.9819).abs() < 1e-4);
        assert!(matches!(pearson(&x, &[1.0, 1.0, 1.0]), Err(Error::Undefined(_))));
        assert!(pearson(&x, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn csv_and_json_round_trip_losslessly() {
        let m = MetricMatrix::new(
            vec!["l2_freq".into(), "sdr/vocals".into()],
            vec!["A".into(), "B, with comma".into()],
            vec![vec![0.1 + 0.2, -1e-300], vec![std::f64::consts::PI, 12345.678]],
        )
        .unwrap();
        let csv = m.to_csv_string();
        assert!(csv.starts_with("metric,A,\"B, with comma\"\n"));
        assert_eq!(MetricMatrix::read_csv(csv.as_bytes()).unwrap(), m);
        assert_eq!(MetricMatrix::from_json_str(&m.to_json_string()).unwrap(), m);
    }

    fn table2() -> MosTable {
        MosTable::new(
            ["L2_freq", "SISDR_freq", "LOGL1_time", "LOGL1_freq", "Adv"].map(String::from).to_vec(),
            vec!["mean".into()],
            vec![vec![59.09, 56.99, 55.01, 58.96, 55.39]],
        )
        .unwrap()
    }

    #[test]
    fn correlation_report() {
        let mos = table2();
        let m = mos.mean_row();
        let neg: Vec<f64> = m.iter().map(|v| -v).collect();
        let matrix = MetricMatrix::new(
            vec!["mos".into(), "l1_time".into(), "flat".into()],
            mos.systems.clone(),
            vec![m.clone(), neg, vec![1.0; 5]],
        )
        .unwrap();
        let raw = correlate_with_mos(&matrix, &mos, false).unwrap();
        assert_eq!(raw[0].metric, "mos");
        assert!((raw[0].r.unwrap() - 1.0).abs() < 1e-12);
        assert!((raw[1].r.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(raw[2].r, None);
        let flipped = correlate_with_mos(&matrix, &mos, true).unwrap();
        assert!(flipped[..2].iter().all(|c| (c.r.unwrap() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn columns_are_matched_by_name() {
        let mos = table2();
        let mut cols = mos.systems.clone();
        cols.reverse();
        let mut row = mos.mean_row();
        row.reverse();
        let matrix = MetricMatrix::new(vec!["x".into()], cols, vec![row]).unwrap();
        assert!((correlate_with_mos(&matrix, &mos, false).unwrap()[0].r.unwrap() - 1.0).abs() < 1e-12);
        let bad = MetricMatrix::new(vec!["x".into()], names("s", 5), vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        assert!(correlate_with_mos(&bad, &mos, false).is_err());
    }

    #[test]
    fn per_source_rows_use_source_scores() {
        let systems = names("s", 4);
        let mos = MosTable::new(
            systems.clone(),
            vec!["vocals".into(), "bass".into()],
            vec![vec![10.0, 20.0, 30.0, 40.0], vec![40.0, 30.0, 20.0, 10.0]],
        )
        .unwrap();
        assert_eq!(mos.mean_row(), vec![25.0; 4]);
        let matrix = MetricMatrix::new(
            vec!["sdr/vocals".into(), "sdr/bass".into()],
            systems,
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0]],
        )
        .unwrap();
        let out = correlate_with_mos(&matrix, &mos, true).unwrap();
        assert_eq!((out[0].metric.as_str(), out[0].against.as_str()), ("sdr/vocals", "vocals"));
        assert!((out[0].r.unwrap() - 1.0).abs() < 1e-12);
        assert!((out[1].r.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn scores_outside_range_are_rejected() {
        assert!(MosTable::new(vec!["a".into()], vec!["mean".into()], vec![vec![101.0]]).is_err());
    }

    #[test]
    fn independent_rows_average_to_zero_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..100.0)).collect();
        let draws = 4000;
        let mut total = 0.0;
        for _ in 0..draws {
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut y = base.clone();
            y.shuffle(&mut rng);
            total += pearson(&x, &y).unwrap();
        }
        assert!((total / draws as f64).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn standardized_rows_are_bounded_and_centred(row in proptest::collection::vec(-1e3f64..1e3, 2..12)) {
            if let Some(z) = standardize_row(&row) {
                let mean = z.iter().sum::<f64>() / z.len() as f64;
                prop_assert!(mean.abs() < 1e-12);
            }
            let m = MetricMatrix::new(vec!["r".into()], names("s", row.len()), vec![row]).unwrap();
            prop_assert!(standardize_rows(&m).values[0].iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn pearson_affine_invariance(
            x in proptest::collection::vec(-10f64..10.0, 3..10),
            a in 0.1f64..10.0,
            b in -50f64..50.0,
            seed in 0u64..100,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Ok(r) = pearson(&x, &y) {
                let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let ys: Vec<f64> = y.iter().map(|v| a * v - b).collect();
                prop_assert!((pearson(&xs, &y).unwrap() - r).abs() < 1e-12);
                prop_assert!((pearson(&x, &ys).unwrap() - r).abs() < 1e-12);
            }
        }
    }
}
