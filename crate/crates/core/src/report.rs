//! Benchmark result tables: CSV I/O, merging, baseline normalization and
//! two-column plot data.
//!
//! Metadata travels in `# key: value` lines ahead of the header row.

use std::fmt::Write as _;

use thiserror::Error;

pub const REPORT_HEADER: [&str; 8] = ["label", "m", "k", "n", "engine", "seconds", "gflops", "gflops_per_watt"];

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("baseline label '{0}' not found")]
    MissingBaseline(String),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for ReportError {
    fn from(e: csv::Error) -> Self {
        ReportError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub label: String,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Engine name for measured rows, preset name for analytic rows.
    pub engine: String,
    pub seconds: f64,
    pub gflops: f64,
    /// Empty for wall-clock rows, which have no power figure.
    pub gflops_per_watt: Option<f64>,
}

impl BenchmarkRow {
    pub fn flops(&self) -> u64 {
        2 * self.m as u64 * self.k as u64 * self.n as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Seconds,
    Gflops,
    GflopsPerWatt,
    Speedup,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Seconds, Metric::Gflops, Metric::GflopsPerWatt, Metric::Speedup];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Seconds => "seconds",
            Metric::Gflops => "gflops",
            Metric::GflopsPerWatt => "gflops_per_watt",
            Metric::Speedup => "speedup",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRow {
    pub label: String,
    pub engine: String,
    pub seconds: f64,
    /// `baseline seconds / row seconds`; above 1 means faster than baseline.
    pub speedup: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchmarkReport {
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_metadata(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn metadata_value(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn row(&self, label: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn push(&mut self, row: BenchmarkRow) -> Result<(), ReportError> {
        if self.row(&row.label).is_some() {
            return Err(ReportError::SchemaMismatch(format!("duplicate label '{}'", row.label)));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Concatenates rows; metadata keys from later reports are prefixed with
    /// their input index to stay distinct.
    pub fn merge(reports: &[BenchmarkReport]) -> Result<BenchmarkReport, ReportError> {
        let mut out = BenchmarkReport::new();
        for (i, r) in reports.iter().enumerate() {
            for (k, v) in &r.metadata {
                let key = if reports.len() == 1 { k.clone() } else { format!("{i}.{k}") };
                out.metadata.push((key, v.clone()));
            }
            for row in &r.rows {
                out.push(row.clone())?;
            }
        }
        Ok(out)
    }

    pub fn normalize(&self, baseline: &str) -> Result<Vec<NormalizedRow>, ReportError> {
        let base = self.row(baseline).ok_or_else(|| ReportError::MissingBaseline(baseline.to_string()))?;
        Ok(self
            .rows
            .iter()
            .map(|r| NormalizedRow {
                label: r.label.clone(),
                engine: r.engine.clone(),
                seconds: r.seconds,
                speedup: base.seconds / r.seconds,
            })
            .collect())
    }

    /// `label<TAB>value` lines; rows without a value for `metric` are skipped.
    pub fn plot_data(&self, metric: Metric, baseline: Option<&str>) -> Result<String, ReportError> {
        let mut out = String::new();
        let values: Vec<(String, Option<f64>)> = match metric {
            Metric::Speedup => {
                let base = baseline.ok_or_else(|| ReportError::MissingBaseline(String::new()))?;
                self.normalize(base)?.into_iter().map(|r| (r.label, Some(r.speedup))).collect()
            }
            _ => self
                .rows
                .iter()
                .map(|r| {
                    let v = match metric {
                        Metric::Seconds => Some(r.seconds),
                        Metric::Gflops => Some(r.gflops),
                        _ => r.gflops_per_watt,
                    };
                    (r.label.clone(), v)
                })
                .collect(),
        };
        for (label, v) in values {
            if let Some(v) = v {
                writeln!(out, "{label}\t{v}").expect("write to string");
            }
        }
        Ok(out)
    }

    pub fn ratio_table(&self, baseline: &str) -> Result<String, ReportError> {
        let rows = self.normalize(baseline)?;
        let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>14}  {:>10}\n", "label", "seconds", "speedup");
        for r in rows {
            writeln!(out, "{:<width$}  {:>14.6e}  {:>10.3}", r.label, r.seconds, r.speedup).expect("write to string");
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            writeln!(out, "# {}: {}", k, v.replace('\n', " ")).expect("write to string");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.m.to_string(),
                r.k.to_string(),
                r.n.to_string(),
                r.engine.clone(),
                r.seconds.to_string(),
                r.gflops.to_string(),
                r.gflops_per_watt.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    /// Like [`to_csv`](Self::to_csv) with a trailing `speedup` column.
    /// [`from_csv`](Self::from_csv) accepts and drops that column.
    pub fn to_normalized_csv(&self, baseline: &str) -> Result<String, ReportError> {
        let speedups = self.normalize(baseline)?;
        let mut out = String::new();
        for (k, v) in &self.metadata {
            writeln!(out, "# {}: {}", k, v.replace('\n', " ")).expect("write to string");
        }
        writeln!(out, "# baseline: {baseline}").expect("write to string");
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = REPORT_HEADER.to_vec();
        header.push("speedup");
        w.write_record(&header)?;
        let plain = self.to_csv()?;
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(plain.as_bytes());
        for (rec, s) in r.records().zip(&speedups) {
            let mut rec = rec?;
            rec.push_field(&s.speedup.to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<BenchmarkReport, ReportError> {
        let mut report = BenchmarkReport::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(meta) = line.strip_prefix('#') {
                let (k, v) = meta.trim().split_once(':').unwrap_or((meta.trim(), ""));
                report.metadata.push((k.trim().to_string(), v.trim().to_string()));
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let known = header.len() >= 8 && header[..8] == REPORT_HEADER;
        if !known || (header.len() == 9 && header[8] != "speedup") || header.len() > 9 {
            return Err(ReportError::SchemaMismatch(format!("unexpected header '{}'", header.join(","))));
        }
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |col: &str| ReportError::SchemaMismatch(format!("row {}: bad {col}", i + 1));
            let get = |idx: usize| rec.get(idx).unwrap_or("");
            let int = |idx: usize| get(idx).parse::<usize>().map_err(|_| bad(REPORT_HEADER[idx]));
            let float = |idx: usize| get(idx).parse::<f64>().map_err(|_| bad(REPORT_HEADER[idx]));
            let gpw = match get(7) {
                "" => None,
                _ => Some(float(7)?),
            };
            report.push(BenchmarkRow {
                label: get(0).to_string(),
                m: int(1)?,
                k: int(2)?,
                n: int(3)?,
                engine: get(4).to_string(),
                seconds: float(5)?,
                gflops: float(6)?,
                gflops_per_watt: gpw,
            })?;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, seconds: f64, gpw: Option<f64>) -> BenchmarkRow {
        BenchmarkRow {
            label: label.into(),
            m: 64,
            k: 32,
            n: 16,
            engine: "streamed".into(),
            seconds,
            gflops: 65536.0 / seconds / 1e9,
            gflops_per_watt: gpw,
        }
    }

    fn sample() -> BenchmarkReport {
        let mut r = BenchmarkReport::new().with_metadata("host", "test box").with_metadata("timestamp", 17);
        r.push(row("reference", 0.1 + 0.2, None)).unwrap();
        r.push(row("streamed", 1.0 / 3.0, None)).unwrap();
        r.push(row("alveo-like", 1e-7, Some(std::f64::consts::PI))).unwrap();
        r
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let r = sample();
        let text = r.to_csv().unwrap();
        assert!(text.contains("\nlabel,m,k,n,engine,seconds,gflops,gflops_per_watt\n"));
        assert_eq!(BenchmarkReport::from_csv(&text).unwrap(), r);
    }

    #[test]
    fn duplicate_labels() {
        let r = sample();
        assert!(matches!(BenchmarkReport::merge(&[r.clone(), r]), Err(ReportError::SchemaMismatch(_))));
        let text = "label,m,k,n,engine,seconds,gflops,gflops_per_watt\na,1,1,1,x,1,1,\na,1,1,1,x,1,1,\n";
        assert!(matches!(BenchmarkReport::from_csv(text), Err(ReportError::SchemaMismatch(_))));
    }

    #[test]
    fn wrong_header() {
        assert!(matches!(
            BenchmarkReport::from_csv("name,cycles\nx,1\n"),
            Err(ReportError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn speedup_against_baseline() {
        let mut r = BenchmarkReport::new();
        r.push(row("reference", 2.0, None)).unwrap();
        r.push(row("streamed", 0.5, None)).unwrap();
        let n = r.normalize("reference").unwrap();
        assert_eq!(n[0].speedup, 1.0);
        assert_eq!(n[1].speedup, 4.0);
        assert!(matches!(r.normalize("nope"), Err(ReportError::MissingBaseline(_))));
        let csv = r.to_normalized_csv("reference").unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "# baseline: reference");
        assert!(lines[1].ends_with(",gflops_per_watt,speedup"));
        assert!(lines[2].ends_with(",1"));
        let back = BenchmarkReport::from_csv(&csv).unwrap();
        assert_eq!(back.rows, r.rows);
    }

    #[test]
    fn plot_data_skips_missing() {
        let r = sample();
        let gpw = r.plot_data(Metric::GflopsPerWatt, None).unwrap();
        assert_eq!(gpw.lines().count(), 1);
        let s = r.plot_data(Metric::Speedup, Some("reference")).unwrap();
        assert_eq!(s.lines().count(), 3);
        assert!(s.starts_with("reference\t1\n"));
    }

    #[test]
    fn flops_at_paper_shape() {
        let r = BenchmarkRow { m: 2048, k: 4096, n: 16384, ..row("x", 1.0, None) };
        assert_eq!(r.flops(), 274_877_906_944);
    }
}
