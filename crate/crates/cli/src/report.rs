//! Metrics table and its CSV form.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use simchan::chanscene::Task;
use simchan::Result;

pub const HEADER: &str = "L,k,stage,metric_name,value,runtime_s,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Init,
    FineTuned,
    Mlp,
    Elm,
    UpperBound,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::FineTuned => "fine_tuned",
            Stage::Mlp => "mlp",
            Stage::Elm => "elm",
            Stage::UpperBound => "upper_bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub l: usize,
    pub k: usize,
    pub stage: Stage,
    pub metric: String,
    pub value: f64,
    pub runtime_s: f64,
}

/// A `(L, k, stage)` entry that could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub l: usize,
    pub k: usize,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub task: Task,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<CellFailure>,
}

impl MetricsReport {
    pub fn new(task: Task, seed: u64) -> Self {
        Self { task, seed, rows: Vec::new(), failures: Vec::new() }
    }

    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn push(&mut self, l: usize, k: usize, stage: Stage, metric: &str, value: f64, runtime_s: f64) {
        self.rows.push(ReportRow { l, k, stage, metric: metric.to_string(), value, runtime_s });
    }

    pub fn fail(&mut self, l: usize, k: usize, stage: Stage, message: String) {
        self.failures.push(CellFailure { l, k, stage, message });
    }

    /// Value of one row, if present.
    pub fn value(&self, l: usize, k: usize, stage: Stage, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.l == l && r.k == k && r.stage == stage && r.metric == metric)
            .map(|r| r.value)
    }

    /// CSV text. Rows are ordered by L, k, stage, then metric name; failed
    /// cells appear with metric `failed` and value `NaN`.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(usize, usize, Stage, &str, f64, f64)> = self
            .rows
            .iter()
            .map(|r| (r.l, r.k, r.stage, r.metric.as_str(), r.value, r.runtime_s))
            .chain(self.failures.iter().map(|f| (f.l, f.k, f.stage, "failed", f64::NAN, 0.0)))
            .collect();
        rows.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
        let mut out = String::from(HEADER);
        out.push('\n');
        for (l, k, stage, metric, value, runtime) in rows {
            writeln!(out, "{l},{k},{},{metric},{value},{runtime:.3},{}", stage.as_str(), self.seed).unwrap();
        }
        out
    }
}

/// Writes `<dir>/<task>.csv` and returns its path.
pub fn emit_report(report: &MetricsReport, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.csv", report.task.as_str()));
    std::fs::write(&path, report.to_csv())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_header_only() {
        let r = MetricsReport::new(Task::Positioning, 0);
        assert_eq!(r.to_csv(), format!("{HEADER}\n"));
    }

    #[test]
    fn rows_sorted_by_l_k_stage() {
        let mut r = MetricsReport::new(Task::ChannelMapping, 9);
        r.push(1000, 5, Stage::FineTuned, "mean_se", 0.5, 0.0);
        r.push(250, 5, Stage::UpperBound, "mean_se", 1.5, 0.0);
        r.push(250, 5, Stage::Init, "mean_se", 0.25, 1.23456);
        r.fail(250, 7, Stage::FineTuned, "boom".into());
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines,
            vec![
                HEADER,
                "250,5,init,mean_se,0.25,1.235,9",
                "250,5,upper_bound,mean_se,1.5,0.000,9",
                "250,7,fine_tuned,failed,NaN,0.000,9",
                "1000,5,fine_tuned,mean_se,0.5,0.000,9",
            ]
        );
        assert!(r.is_partial());
        assert_eq!(r.value(1000, 5, Stage::FineTuned, "mean_se"), Some(0.5));
    }

    #[test]
    fn emission_is_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = MetricsReport::new(Task::Positioning, 1);
        r.push(10, 2, Stage::Init, "mean_error", 3.0, 0.0);
        let p = emit_report(&r, dir.path()).unwrap();
        assert!(p.ends_with("positioning.csv"));
        let a = std::fs::read(&p).unwrap();
        emit_report(&r, dir.path()).unwrap();
        assert_eq!(a, std::fs::read(&p).unwrap());
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, b"x").unwrap();
        let r = MetricsReport::new(Task::Positioning, 1);
        assert!(emit_report(&r, &file.join("sub")).is_err());
    }
}
