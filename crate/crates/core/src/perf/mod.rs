//! Analytic cycle and energy model for the streamed GEMM engine.
//!
//! Transfers and compute overlap fully, so a schedule costs
//! `max(compute, slowest bank) + fill_latency` cycles, where the pipeline
//! fill is `PIPELINE_STAGES * stream_depth * tile_cycle_cost`. One MAC is
//! two FLOPs.

mod compare;
mod preset;

use thiserror::Error;

pub use compare::{
    compare, measure_engines, random_matrix, Comparison, ComparisonRow, MeasuredEngines, Ratio,
    COMPARISON_HEADER,
};
pub use preset::DevicePreset;

use crate::engine::{TileSchedule, TransferCounters, PIPELINE_STAGES};

#[derive(Debug, Error, PartialEq)]
pub enum PerfError {
    #[error("invalid preset: {0}")]
    InvalidPreset(String),
    #[error("preset line {line}: {msg}")]
    PresetParse { line: usize, msg: String },
    #[error("transfer counters cover {got} banks, schedule uses {expected}")]
    CounterMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfEstimate {
    pub transfer_cycles_per_bank: Vec<u64>,
    pub compute_cycles: u64,
    pub fill_latency: u64,
    pub total_cycles: u64,
    pub flops: u64,
    pub bytes: u64,
    pub seconds: f64,
    pub compute_joules: f64,
    pub transfer_joules: f64,
    pub static_joules: f64,
    pub energy_joules: f64,
    pub watts: f64,
    pub gflops: f64,
    pub gflops_per_watt: f64,
}

impl PerfEstimate {
    pub fn max_transfer_cycles(&self) -> u64 {
        self.transfer_cycles_per_bank.iter().copied().max().unwrap_or(0)
    }
}

/// Cycles for one full tile op on `preset`'s MAC array.
pub fn tile_cycle_cost(schedule: &TileSchedule, preset: &DevicePreset) -> u64 {
    let c = schedule.config();
    ((c.tile_m * c.tile_k * c.tile_n) as u64).div_ceil(preset.macs_per_cycle)
}

pub fn fill_latency(schedule: &TileSchedule, preset: &DevicePreset) -> u64 {
    (PIPELINE_STAGES * schedule.config().stream_depth) as u64 * tile_cycle_cost(schedule, preset)
}

/// A bank moves at most one bus word and at most `bytes_per_cycle_per_bank`
/// payload bytes per cycle.
pub fn bank_transfer_cycles(words: u64, elems: u64, preset: &DevicePreset) -> u64 {
    let byte_cycles = ((elems * 4) as f64 / preset.bytes_per_cycle_per_bank).ceil() as u64;
    words.max(byte_cycles)
}

pub fn estimate(
    schedule: &TileSchedule,
    counters: &TransferCounters,
    preset: &DevicePreset,
) -> Result<PerfEstimate, PerfError> {
    preset.validate()?;
    let n_banks = schedule.config().n_banks;
    if n_banks > preset.n_banks_max {
        return Err(PerfError::InvalidPreset(format!(
            "{}: {n_banks} banks exceed n_banks_max {}",
            preset.name, preset.n_banks_max
        )));
    }
    if counters.n_banks() != n_banks {
        return Err(PerfError::CounterMismatch { expected: n_banks, got: counters.n_banks() });
    }

    let shape = schedule.shape();
    let compute_cycles = shape.macs().div_ceil(preset.macs_per_cycle);
    let transfer_cycles_per_bank: Vec<u64> = counters
        .words_per_bank
        .iter()
        .zip(&counters.elems_per_bank)
        .map(|(&w, &e)| bank_transfer_cycles(w, e, preset))
        .collect();
    let fill = fill_latency(schedule, preset);
    let busiest = transfer_cycles_per_bank.iter().copied().max().unwrap_or(0);
    let total_cycles = compute_cycles.max(busiest) + fill;

    let flops = shape.flops();
    let bytes = counters.total_elems() * 4;
    let seconds = total_cycles as f64 / preset.clock_hz;
    let compute_joules = flops as f64 * preset.joules_per_flop;
    let transfer_joules = bytes as f64 * preset.joules_per_byte;
    let static_joules = seconds * preset.static_watts;
    let energy_joules = compute_joules + transfer_joules + static_joules;
    let watts = energy_joules / seconds;
    if !(watts > 0.0 && watts.is_finite()) {
        return Err(PerfError::InvalidPreset(format!("{}: model draws no power", preset.name)));
    }
    let gflops = flops as f64 / seconds / 1e9;
    Ok(PerfEstimate {
        transfer_cycles_per_bank,
        compute_cycles,
        fill_latency: fill,
        total_cycles,
        flops,
        bytes,
        seconds,
        compute_joules,
        transfer_joules,
        static_joules,
        energy_joules,
        watts,
        gflops,
        gflops_per_watt: gflops / watts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{plan_tiles, EngineConfig, GemmShape};

    fn compute_bound(macs: u64) -> DevicePreset {
        DevicePreset {
            name: "test".into(),
            clock_hz: 1e9,
            macs_per_cycle: macs,
            bytes_per_cycle_per_bank: 1e6,
            n_banks_max: 64,
            static_watts: 1.0,
            joules_per_flop: 1e-12,
            joules_per_byte: 1e-12,
        }
    }

    #[test]
    fn single_tile_closed_form() {
        let cfg = EngineConfig { tile_m: 16, tile_k: 8, tile_n: 16, ..Default::default() };
        let s = plan_tiles(GemmShape::new(16, 8, 16).unwrap(), &cfg).unwrap();
        let p = compute_bound(16 * 16);
        let e = estimate(&s, &s.transfer_counters(), &p).unwrap();
        assert_eq!(e.compute_cycles, 8);
        assert_eq!(e.fill_latency, 3 * 2 * 8);
        assert_eq!(e.total_cycles, 8 + e.fill_latency);
    }

    #[test]
    fn energy_terms_sum() {
        let cfg = EngineConfig::default();
        let s = plan_tiles(GemmShape::new(100, 70, 130).unwrap(), &cfg).unwrap();
        for p in DevicePreset::builtin() {
            let e = estimate(&s, &s.transfer_counters(), &p).unwrap();
            assert_eq!(e.energy_joules, e.compute_joules + e.transfer_joules + e.static_joules);
            assert!(e.total_cycles >= e.compute_cycles.max(e.max_transfer_cycles()));
            assert!((e.gflops - e.flops as f64 / e.seconds / 1e9).abs() <= 1e-9 * e.gflops);
            assert!(e.gflops_per_watt.is_finite() && e.gflops_per_watt > 0.0);
        }
    }

    #[test]
    fn paper_shape_flops() {
        let s = plan_tiles(GemmShape::new(2048, 4096, 16384).unwrap(), &EngineConfig::default()).unwrap();
        let e = estimate(&s, &s.transfer_counters(), &DevicePreset::alveo_like()).unwrap();
        assert_eq!(e.flops, 274_877_906_944);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = plan_tiles(GemmShape::new(8, 8, 8).unwrap(), &EngineConfig::default()).unwrap();
        let mut p = compute_bound(4);
        p.n_banks_max = 2;
        assert!(matches!(estimate(&s, &s.transfer_counters(), &p), Err(PerfError::InvalidPreset(_))));
        let p = compute_bound(4);
        assert!(matches!(
            estimate(&s, &TransferCounters::new(1), &p),
            Err(PerfError::CounterMismatch { .. })
        ));
        let p = DevicePreset { static_watts: 0.0, joules_per_flop: 0.0, joules_per_byte: 0.0, ..compute_bound(4) };
        assert!(matches!(estimate(&s, &s.transfer_counters(), &p), Err(PerfError::InvalidPreset(_))));
    }

    #[test]
    fn transfer_rate_limits() {
        let p = DevicePreset { bytes_per_cycle_per_bank: 8.0, ..compute_bound(1) };
        // 64 floats = 256 bytes at 8 bytes/cycle beats 4 bus words.
        assert_eq!(bank_transfer_cycles(4, 64, &p), 32);
        let p = DevicePreset { bytes_per_cycle_per_bank: 1024.0, ..p };
        assert_eq!(bank_transfer_cycles(4, 64, &p), 4);
    }
}
