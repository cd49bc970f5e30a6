//! Streamed, bank-partitioned tiled GEMM.
//!
//! Each lane (worker) runs three stages connected by bounded FIFOs:
//!
//! ```text
//!   bank loader 0 ──A,B pieces──┐
//!   bank loader 1 ──A,B pieces──┼──> tile MAC ──C tiles──> result writer
//!   bank loader … ──A,B pieces──┘
//! ```
//!
//! Loaders stream the lane's tile ops in schedule order, each carrying its
//! bank's rows of the A tile and columns of the B tile, zero-padded to the
//! full tile. The MAC stage assembles the tiles and accumulates in ascending
//! `k`. All lanes feed one writer, which copies valid regions into the output.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;

use super::banks::lanes_for_bank;
use super::config::{EngineConfig, EngineError, GemmShape};
use super::schedule::{plan_tiles, TileOp, TileSchedule, TransferCounters};
use crate::tensor::Matrix;

/// Stage count of the pipeline (loaders, MAC, writer).
pub const PIPELINE_STAGES: usize = 3;

/// Counters recorded while the engine runs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EngineCounters {
    pub tile_ops: u64,
    pub transfers: TransferCounters,
    /// High-water mark of floats held in live tile buffers.
    pub peak_live_elems: usize,
    pub lanes: usize,
}

#[derive(Default)]
struct LiveGauge {
    live: AtomicUsize,
    peak: AtomicUsize,
}

/// Tile-sized buffer whose lifetime is tracked by a [`LiveGauge`].
struct TileBuf<'g> {
    data: Vec<f32>,
    gauge: &'g LiveGauge,
}

impl<'g> TileBuf<'g> {
    fn zeroed(len: usize, gauge: &'g LiveGauge) -> Self {
        let now = gauge.live.fetch_add(len, Ordering::SeqCst) + len;
        gauge.peak.fetch_max(now, Ordering::SeqCst);
        Self { data: vec![0.0; len], gauge }
    }
}

impl Drop for TileBuf<'_> {
    fn drop(&mut self) {
        self.gauge.live.fetch_sub(self.data.len(), Ordering::SeqCst);
    }
}

struct CTile<'g> {
    mi: usize,
    ni: usize,
    buf: TileBuf<'g>,
}

pub fn gemm_streamed(a: &Matrix, b: &Matrix, config: &EngineConfig) -> Result<Matrix, EngineError> {
    gemm_streamed_counted(a, b, config).map(|(c, _)| c)
}

pub fn gemm_streamed_counted(
    a: &Matrix,
    b: &Matrix,
    config: &EngineConfig,
) -> Result<(Matrix, EngineCounters), EngineError> {
    if a.cols() != b.rows() {
        return Err(EngineError::DimMismatch(format!(
            "A is {}x{} but B is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let shape = GemmShape::new(a.rows(), a.cols(), b.cols())?;
    let schedule = plan_tiles(shape, config)?;
    let lanes = config.workers.min(schedule.output_tiles());
    let gauge = LiveGauge::default();
    let depth = config.stream_depth;

    let (out, per_lane) = thread::scope(|s| {
        let (c_tx, c_rx) = sync_channel::<CTile>(depth);
        let writer = {
            let schedule = &schedule;
            s.spawn(move || write_results(schedule, c_rx))
        };
        let lane_handles: Vec<_> = (0..lanes)
            .map(|lane| {
                let c_tx = c_tx.clone();
                let (schedule, gauge) = (&schedule, &gauge);
                s.spawn(move || run_lane(s, schedule, a, b, lane, lanes, c_tx, gauge))
            })
            .collect();
        drop(c_tx);
        let per_lane: Vec<_> =
            lane_handles.into_iter().map(|h| h.join().expect("lane panicked")).collect();
        (writer.join().expect("writer panicked"), per_lane)
    });

    let mut counters = EngineCounters {
        transfers: TransferCounters::new(config.n_banks),
        peak_live_elems: gauge.peak.load(Ordering::SeqCst),
        lanes,
        ..Default::default()
    };
    for (ops, transfers) in per_lane {
        counters.tile_ops += ops;
        counters.transfers.merge(&transfers);
    }
    Ok((Matrix::new(shape.m, shape.n, out)?, counters))
}

#[allow(clippy::too_many_arguments)]
fn run_lane<'s, 'env: 's>(
    s: &'s thread::Scope<'s, 'env>,
    schedule: &'env TileSchedule,
    a: &'env Matrix,
    b: &'env Matrix,
    lane: usize,
    lanes: usize,
    c_tx: SyncSender<CTile<'env>>,
    gauge: &'env LiveGauge,
) -> (u64, TransferCounters) {
    let cfg = schedule.config();
    let nb = cfg.n_banks;
    let mut a_rx = Vec::with_capacity(nb);
    let mut b_rx = Vec::with_capacity(nb);
    let mut loaders = Vec::with_capacity(nb);
    for bank in 0..nb {
        let (a_tx, ar) = sync_channel::<TileBuf>(cfg.stream_depth);
        let (b_tx, br) = sync_channel::<TileBuf>(cfg.stream_depth);
        a_rx.push(ar);
        b_rx.push(br);
        loaders.push(s.spawn(move || {
            load_bank(schedule, a, b, lane, lanes, bank, a_tx, b_tx, gauge)
        }));
    }
    let ops = mac_stage(schedule, lane, lanes, &a_rx, &b_rx, c_tx, gauge);
    let mut transfers = TransferCounters::new(nb);
    for h in loaders {
        transfers.merge(&h.join().expect("bank loader panicked"));
    }
    (ops, transfers)
}

#[allow(clippy::too_many_arguments)]
fn load_bank<'g>(
    schedule: &TileSchedule,
    a: &Matrix,
    b: &Matrix,
    lane: usize,
    lanes: usize,
    bank: usize,
    a_tx: SyncSender<TileBuf<'g>>,
    b_tx: SyncSender<TileBuf<'g>>,
    gauge: &'g LiveGauge,
) -> TransferCounters {
    let cfg = schedule.config();
    let (tm, tk, tn, nb) = (cfg.tile_m, cfg.tile_k, cfg.tile_n, cfg.n_banks);
    let (k_total, n_total) = (a.cols(), b.cols());
    let mut counters = TransferCounters::new(nb);
    for op in schedule.lane_ops(lane, lanes) {
        let (vm, vk, vn) = (schedule.valid_m(op.mi), schedule.valid_k(op.ki), schedule.valid_n(op.ni));
        let (row0, k0, col0) = (op.mi * tm, op.ki * tk, op.ni * tn);

        // A piece: tile rows bank, bank+nb, ... each tk wide.
        let mut piece = TileBuf::zeroed(lanes_for_bank(tm, bank, nb) * tk, gauge);
        for (slot, r) in (bank..vm).step_by(nb).enumerate() {
            let src = &a.data()[(row0 + r) * k_total + k0..][..vk];
            piece.data[slot * tk..slot * tk + vk].copy_from_slice(src);
        }
        counters.record(bank, lanes_for_bank(vm, bank, nb) * vk, cfg.bus_width_bits);
        a_tx.send(piece).expect("MAC stage hung up");

        // B piece: tk rows of this bank's tile columns bank, bank+nb, ...
        let width = lanes_for_bank(tn, bank, nb);
        let mut piece = TileBuf::zeroed(tk * width, gauge);
        for kk in 0..vk {
            let src = &b.data()[(k0 + kk) * n_total + col0..][..vn];
            let dst = &mut piece.data[kk * width..(kk + 1) * width];
            for (d, s) in dst.iter_mut().zip(src.iter().skip(bank).step_by(nb)) {
                *d = *s;
            }
        }
        counters.record(bank, lanes_for_bank(vn, bank, nb) * vk, cfg.bus_width_bits);
        b_tx.send(piece).expect("MAC stage hung up");
    }
    counters
}

fn mac_stage<'g>(
    schedule: &TileSchedule,
    lane: usize,
    lanes: usize,
    a_rx: &[Receiver<TileBuf<'g>>],
    b_rx: &[Receiver<TileBuf<'g>>],
    c_tx: SyncSender<CTile<'g>>,
    gauge: &'g LiveGauge,
) -> u64 {
    let cfg = schedule.config();
    let (tm, tk, tn, nb) = (cfg.tile_m, cfg.tile_k, cfg.tile_n, cfg.n_banks);
    let (_, _, tiles_k) = schedule.counts();
    let mut acc: Option<TileBuf> = None;
    let mut ops = 0u64;
    for TileOp { mi, ni, ki } in schedule.lane_ops(lane, lanes) {
        let c = acc.get_or_insert_with(|| TileBuf::zeroed(tm * tn, gauge));
        let a_tile = assemble_a(a_rx, tm, tk, nb, gauge);
        let b_tile = assemble_b(b_rx, tk, tn, nb, gauge);
        mac_tile(&mut c.data, &a_tile.data, &b_tile.data, tm, tk, tn);
        drop(a_tile);
        drop(b_tile);
        ops += 1;
        if ki + 1 == tiles_k {
            let buf = acc.take().expect("accumulator present");
            c_tx.send(CTile { mi, ni, buf }).expect("writer hung up");
        }
    }
    ops
}

fn assemble_a<'g>(
    rx: &[Receiver<TileBuf<'g>>],
    tm: usize,
    tk: usize,
    nb: usize,
    gauge: &'g LiveGauge,
) -> TileBuf<'g> {
    if nb == 1 {
        return rx[0].recv().expect("bank loader hung up");
    }
    let mut tile = TileBuf::zeroed(tm * tk, gauge);
    for (bank, rx) in rx.iter().enumerate() {
        let piece = rx.recv().expect("bank loader hung up");
        for (slot, r) in (bank..tm).step_by(nb).enumerate() {
            tile.data[r * tk..(r + 1) * tk].copy_from_slice(&piece.data[slot * tk..(slot + 1) * tk]);
        }
    }
    tile
}

fn assemble_b<'g>(
    rx: &[Receiver<TileBuf<'g>>],
    tk: usize,
    tn: usize,
    nb: usize,
    gauge: &'g LiveGauge,
) -> TileBuf<'g> {
    if nb == 1 {
        return rx[0].recv().expect("bank loader hung up");
    }
    let mut tile = TileBuf::zeroed(tk * tn, gauge);
    for (bank, rx) in rx.iter().enumerate() {
        let piece = rx.recv().expect("bank loader hung up");
        let width = lanes_for_bank(tn, bank, nb);
        for kk in 0..tk {
            let src = &piece.data[kk * width..(kk + 1) * width];
            let dst = &mut tile.data[kk * tn..(kk + 1) * tn];
            for (d, s) in dst.iter_mut().skip(bank).step_by(nb).zip(src) {
                *d = *s;
            }
        }
    }
    tile
}

fn write_results(schedule: &TileSchedule, rx: Receiver<CTile>) -> Vec<f32> {
    let shape = schedule.shape();
    let cfg = schedule.config();
    let mut out = vec![0.0f32; shape.m * shape.n];
    for CTile { mi, ni, buf } in rx {
        let (vm, vn) = (schedule.valid_m(mi), schedule.valid_n(ni));
        let (row0, col0) = (mi * cfg.tile_m, ni * cfg.tile_n);
        for r in 0..vm {
            let dst = &mut out[(row0 + r) * shape.n + col0..][..vn];
            dst.copy_from_slice(&buf.data[r * cfg.tile_n..][..vn]);
        }
    }
    out
}

/// `c += a * b` over full (padded) tiles; each `c[i][j]` sees its products
/// in ascending `k`. Padded lanes add `0 * 0`, which leaves sums unchanged.
fn mac_tile(c: &mut [f32], a: &[f32], b: &[f32], tm: usize, tk: usize, tn: usize) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx") {
            // SAFETY: the required CPU feature was just detected.
            unsafe { mac_tile_avx(c, a, b, tm, tk, tn) };
            return;
        }
    }
    mac_tile_portable(c, a, b, tm, tk, tn)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn mac_tile_avx(c: &mut [f32], a: &[f32], b: &[f32], tm: usize, tk: usize, tn: usize) {
    // Same loop; wider vectors only. Multiplies and adds stay separate, so
    // results are bitwise identical to the portable path.
    mac_tile_portable(c, a, b, tm, tk, tn)
}

#[inline(always)]
fn mac_tile_portable(c: &mut [f32], a: &[f32], b: &[f32], tm: usize, tk: usize, tn: usize) {
    for (crow, arow) in c.chunks_exact_mut(tn).zip(a.chunks_exact(tk)).take(tm) {
        for (&aik, brow) in arow.iter().zip(b.chunks_exact(tn)) {
            for (cj, &bkj) in crow.iter_mut().zip(brow) {
                *cj += aik * bkj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::gemm_reference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn bits(m: &Matrix) -> Vec<u32> {
        m.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn single_tile_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random(&mut rng, 8, 8), random(&mut rng, 8, 8));
        let cfg = EngineConfig { tile_m: 8, tile_k: 8, tile_n: 8, ..Default::default() };
        let c = gemm_streamed(&a, &b, &cfg).unwrap();
        assert_eq!(bits(&c), bits(&gemm_reference(&a, &b).unwrap()));
    }

    #[test]
    fn coprime_edges_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random(&mut rng, 37, 41), random(&mut rng, 41, 43));
        for nb in [1, 2, 3, 4] {
            let cfg = EngineConfig {
                tile_m: 8,
                tile_k: 16,
                tile_n: 8,
                n_banks: nb,
                stream_depth: 1,
                workers: 3,
                ..Default::default()
            };
            let c = gemm_streamed(&a, &b, &cfg).unwrap();
            assert_eq!(bits(&c), bits(&gemm_reference(&a, &b).unwrap()), "banks={nb}");
        }
    }

    #[test]
    fn counters_match_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random(&mut rng, 30, 20), random(&mut rng, 20, 50));
        let cfg = EngineConfig { tile_m: 8, tile_k: 8, tile_n: 16, n_banks: 3, workers: 2, ..Default::default() };
        let (_, counters) = gemm_streamed_counted(&a, &b, &cfg).unwrap();
        let schedule = plan_tiles(GemmShape::new(30, 20, 50).unwrap(), &cfg).unwrap();
        assert_eq!(counters.tile_ops, schedule.len() as u64);
        assert_eq!(counters.transfers, schedule.transfer_counters());
    }

    #[test]
    fn peak_live_buffers_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (random(&mut rng, 64, 64), random(&mut rng, 64, 64));
        for (nb, depth) in [(1, 1), (2, 1), (4, 2), (4, 4), (1, 4)] {
            let cfg = EngineConfig {
                tile_m: 8,
                tile_k: 8,
                tile_n: 8,
                n_banks: nb,
                stream_depth: depth,
                ..Default::default()
            };
            let (_, counters) = gemm_streamed_counted(&a, &b, &cfg).unwrap();
            let bound = (nb + depth * PIPELINE_STAGES) * cfg.working_set_elems();
            assert!(counters.peak_live_elems > 0);
            assert!(
                counters.peak_live_elems <= bound,
                "peak {} > bound {bound} (banks {nb}, depth {depth})",
                counters.peak_live_elems
            );
        }
    }

    #[test]
    fn rejects_mismatch_and_budget() {
        let a = Matrix::zeros(2, 3).unwrap();
        assert!(matches!(
            gemm_streamed(&a, &a, &EngineConfig::default()),
            Err(EngineError::DimMismatch(_))
        ));
        let b = Matrix::zeros(3, 2).unwrap();
        let cfg = EngineConfig { tile_m: 512, tile_k: 512, tile_n: 512, ..Default::default() };
        assert!(matches!(gemm_streamed(&a, &b, &cfg), Err(EngineError::BudgetExceeded { .. })));
    }
}
