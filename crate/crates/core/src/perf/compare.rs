use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{estimate, DevicePreset, PerfError, PerfEstimate};
use crate::engine::{gemm_reference, gemm_streamed, plan_tiles, EngineConfig, GemmShape};
use crate::tensor::Matrix;

pub const COMPARISON_HEADER: [&str; 6] = ["name", "cycles", "seconds", "gflops", "watts", "gflops_per_watt"];

/// One comparison row. Measured rows have no cycle or power figures.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    pub cycles: Option<u64>,
    pub seconds: f64,
    pub gflops: f64,
    pub watts: Option<f64>,
    pub gflops_per_watt: Option<f64>,
    pub estimate: Option<PerfEstimate>,
}

/// `value = seconds(denominator) / seconds(numerator)`: how many times
/// faster `numerator` runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Ratio {
    pub numerator: String,
    pub denominator: String,
    pub value: f64,
}

impl Ratio {
    pub fn label(&self) -> String {
        format!("{} vs {}", self.numerator, self.denominator)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub shape: GemmShape,
    pub rows: Vec<ComparisonRow>,
}

/// Wall-clock timings of both local engines on one seeded input pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredEngines {
    pub reference_seconds: f64,
    pub streamed_seconds: f64,
    pub bitwise_equal: bool,
}

/// One analytic row per preset, in order.
pub fn compare(
    presets: &[DevicePreset],
    shape: GemmShape,
    config: &EngineConfig,
) -> Result<Comparison, PerfError> {
    let schedule = plan_tiles(shape, config)?;
    let counters = schedule.transfer_counters();
    let rows = presets
        .iter()
        .map(|p| {
            let e = estimate(&schedule, &counters, p)?;
            Ok(ComparisonRow {
                name: p.name.clone(),
                cycles: Some(e.total_cycles),
                seconds: e.seconds,
                gflops: e.gflops,
                watts: Some(e.watts),
                gflops_per_watt: Some(e.gflops_per_watt),
                estimate: Some(e),
            })
        })
        .collect::<Result<Vec<_>, PerfError>>()?;
    Ok(Comparison { shape, rows })
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Matrix::new(rows, cols, data).expect("positive dims")
}

/// Times `gemm_reference` and `gemm_streamed` once each on seeded inputs.
pub fn measure_engines(
    shape: GemmShape,
    config: &EngineConfig,
    seed: u64,
) -> Result<MeasuredEngines, PerfError> {
    let a = random_matrix(shape.m, shape.k, seed);
    let b = random_matrix(shape.k, shape.n, seed.wrapping_add(1));
    let t = Instant::now();
    let reference = gemm_reference(&a, &b)?;
    let reference_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let streamed = gemm_streamed(&a, &b, config)?;
    let streamed_seconds = t.elapsed().as_secs_f64();
    let bitwise_equal =
        reference.data().iter().zip(streamed.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok(MeasuredEngines { reference_seconds, streamed_seconds, bitwise_equal })
}

impl Comparison {
    pub fn push_measured(&mut self, name: &str, seconds: f64) {
        self.rows.push(ComparisonRow {
            name: name.to_string(),
            cycles: None,
            seconds,
            gflops: self.shape.flops() as f64 / seconds / 1e9,
            watts: None,
            gflops_per_watt: None,
            estimate: None,
        });
    }

    /// Appends `reference` and `streamed` wall-clock rows.
    pub fn with_measured(mut self, measured: &MeasuredEngines) -> Self {
        self.push_measured("reference", measured.reference_seconds);
        self.push_measured("streamed", measured.streamed_seconds);
        self
    }

    /// Every row relative to the first.
    pub fn ratios(&self) -> Vec<Ratio> {
        let Some(base) = self.rows.first() else { return Vec::new() };
        self.rows
            .iter()
            .map(|r| Ratio {
                numerator: r.name.clone(),
                denominator: base.name.clone(),
                value: base.seconds / r.seconds,
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String, PerfError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| PerfError::Csv(e.to_string());
        w.write_record(COMPARISON_HEADER).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.cycles.map(|c| c.to_string()).unwrap_or_default(),
                r.seconds.to_string(),
                r.gflops.to_string(),
                opt(r.watts),
                opt(r.gflops_per_watt),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| PerfError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn compute_bound(name: &str, clock_hz: f64) -> DevicePreset {
        DevicePreset {
            name: name.into(),
            clock_hz,
            macs_per_cycle: 64,
            bytes_per_cycle_per_bank: 1e9,
            n_banks_max: 8,
            static_watts: 1.0,
            joules_per_flop: 0.0,
            joules_per_byte: 0.0,
        }
    }

    #[test]
    fn identical_presets_ratio_one() {
        let p = DevicePreset::kria_like();
        let c = compare(&[p.clone(), p], GemmShape::new(64, 64, 64).unwrap(), &EngineConfig::default()).unwrap();
        assert_eq!(c.ratios()[1].value, 1.0);
    }

    #[test]
    fn ten_times_clock() {
        let slow = compute_bound("slow", 1e8);
        let fast = compute_bound("fast", 1e9);
        let c = compare(&[slow, fast], GemmShape::new(100, 90, 80).unwrap(), &EngineConfig::default()).unwrap();
        let r = &c.ratios()[1];
        assert_eq!(r.numerator, "fast");
        assert!((r.value - 10.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn csv_has_every_column() {
        let shape = GemmShape::new(2048, 4096, 16384).unwrap();
        let c = compare(&DevicePreset::builtin(), shape, &EngineConfig::default()).unwrap();
        let c = c.with_measured(&MeasuredEngines { reference_seconds: 100.0, streamed_seconds: 10.0, bitwise_equal: true });
        let text = c.to_csv().unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "name,cycles,seconds,gflops,watts,gflops_per_watt");
        let rows: Vec<_> = lines.collect();
        assert_eq!(rows.len(), 6);
        for row in &rows[..4] {
            assert!(row.split(',').all(|f| !f.is_empty()), "{row}");
        }
        assert!(rows[4].starts_with("reference,,100,"));
    }

    #[test]
    fn measured_engines_agree() {
        let m = measure_engines(GemmShape::new(33, 17, 29).unwrap(), &EngineConfig::default(), 7).unwrap();
        assert!(m.bitwise_equal);
    }
}
