use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::numeric::{linear_fit, median, quantile};

/// One line of `report.csv`. Failed cells appear with metric `error` and a
/// NaN value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: usize,
    pub seed: u64,
    pub alpha: f64,
    pub metric: String,
    pub value: f64,
    pub wall_ms: u64,
}

pub const ERROR_METRIC: &str = "error";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMessage {
    pub n: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub errors: Vec<CellMessage>,
    pub warnings: Vec<CellMessage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub count: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Least-squares fit of `log(median)` on `log(n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_grid: Vec<usize>,
    pub medians: Vec<f64>,
    /// Adjacent pairs where the median went up.
    pub inversions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RateFitEntry {
    Fit(RateFit),
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub metrics: BTreeMap<String, Vec<MetricSummary>>,
    pub rate_fits: BTreeMap<String, RateFitEntry>,
    pub errors: Vec<CellMessage>,
    pub warnings: Vec<CellMessage>,
}

/// Per-n summaries of one metric over the finite values in `rows`.
pub fn summarize_metric(rows: &[ReportRow], metric: &str) -> Vec<MetricSummary> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric && r.value.is_finite()) {
        by_n.entry(r.n).or_default().push(r.value);
    }
    by_n
        .into_iter()
        .map(|(n, v)| MetricSummary { n, count: v.len(), median: median(&v), q25: quantile(&v, 0.25), q75: quantile(&v, 0.75) })
        .collect()
}

pub fn count_inversions(medians: &[f64]) -> usize {
    medians.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Fits the per-n medians of `metric` on a log-log scale. Needs at least
/// three grid points, all with positive medians.
pub fn rate_fit(rows: &[ReportRow], metric: &str) -> Result<RateFit, HarnessError> {
    let s = summarize_metric(rows, metric);
    if s.len() < 3 {
        return Err(HarnessError::RateFit(format!("{metric}: need at least 3 grid points, have {}", s.len())));
    }
    if let Some(bad) = s.iter().find(|m| !(m.median > 0.0)) {
        return Err(HarnessError::RateFit(format!(
            "{metric}: median at n = {} is {}; a log-log fit needs positive values",
            bad.n, bad.median
        )));
    }
    let x: Vec<f64> = s.iter().map(|m| (m.n as f64).ln()).collect();
    let y: Vec<f64> = s.iter().map(|m| m.median.ln()).collect();
    let (slope, intercept, r_squared) = linear_fit(&x, &y);
    let medians: Vec<f64> = s.iter().map(|m| m.median).collect();
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        n_grid: s.iter().map(|m| m.n).collect(),
        inversions: count_inversions(&medians),
        medians,
    })
}

impl ExperimentReport {
    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            if r.metric != ERROR_METRIC && !names.contains(&r.metric) {
                names.push(r.metric.clone());
            }
        }
        names
    }

    pub fn summary(&self) -> Summary {
        let mut metrics = BTreeMap::new();
        let mut rate_fits = BTreeMap::new();
        for name in self.metric_names() {
            metrics.insert(name.clone(), summarize_metric(&self.rows, &name));
            if name != "value" {
                let entry = match rate_fit(&self.rows, &name) {
                    Ok(f) => RateFitEntry::Fit(f),
                    Err(e) => RateFitEntry::Failed { error: e.to_string() },
                };
                rate_fits.insert(name, entry);
            }
        }
        Summary { metrics, rate_fits, errors: self.errors.clone(), warnings: self.warnings.clone() }
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        write_report_csv(&self.rows, &dir.join("report.csv"))?;
        let summary = serde_json::to_string_pretty(&self.summary()).map_err(|e| HarnessError::Io(e.to_string()))?;
        std::fs::write(dir.join("summary.json"), summary + "\n")?;
        Ok(())
    }
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(points: &[(usize, f64)]) -> Vec<ReportRow> {
        points
            .iter()
            .map(|&(n, value)| ReportRow { n, seed: 0, alpha: 0.1, metric: "l2_pb".into(), value, wall_ms: 0 })
            .collect()
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let pts: Vec<(usize, f64)> = [100usize, 400, 1600, 6400].iter().map(|&n| (n, 3.0 * (n as f64).powf(-0.5))).collect();
        let fit = rate_fit(&rows(&pts), "l2_pb").unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.inversions, 0);
    }

    #[test]
    fn fit_rejects_short_or_nonpositive() {
        assert!(rate_fit(&rows(&[(10, 1.0), (20, 0.5)]), "l2_pb").is_err());
        assert!(rate_fit(&rows(&[(10, 1.0), (20, 0.0), (40, 0.1)]), "l2_pb").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut rs = rows(&[(10, 0.1), (20, 1.0 / 3.0)]);
        rs.push(ReportRow { n: 20, seed: 1, alpha: 0.0, metric: ERROR_METRIC.into(), value: f64::NAN, wall_ms: 5 });
        write_report_csv(&rs, &path).unwrap();
        let back = read_report_csv(&path).unwrap();
        assert_eq!(back[..2], rs[..2]);
        assert!(back[2].value.is_nan());
    }
}
