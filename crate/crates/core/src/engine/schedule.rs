use super::banks::{lanes_for_bank, pack_bus_words};
use super::config::{EngineConfig, EngineError, GemmShape};

/// One MAC step: output tile `(mi, ni)` accumulates the `ki`-th K block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileOp {
    pub mi: usize,
    pub ni: usize,
    pub ki: usize,
}

/// Ordered tile traversal: `mi`-major, then `ni`, then `ki` ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSchedule {
    shape: GemmShape,
    config: EngineConfig,
    tiles_m: usize,
    tiles_n: usize,
    tiles_k: usize,
}

pub fn plan_tiles(shape: GemmShape, config: &EngineConfig) -> Result<TileSchedule, EngineError> {
    config.validate()?;
    Ok(TileSchedule {
        shape,
        config: config.clone(),
        tiles_m: shape.m.div_ceil(config.tile_m),
        tiles_n: shape.n.div_ceil(config.tile_n),
        tiles_k: shape.k.div_ceil(config.tile_k),
    })
}

impl TileSchedule {
    pub fn shape(&self) -> GemmShape {
        self.shape
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// `(Tm, Tn, Tk)` tile counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.tiles_m, self.tiles_n, self.tiles_k)
    }

    pub fn len(&self) -> usize {
        self.tiles_m * self.tiles_n * self.tiles_k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn output_tiles(&self) -> usize {
        self.tiles_m * self.tiles_n
    }

    pub fn ops(&self) -> impl Iterator<Item = TileOp> + '_ {
        let (tn, tk) = (self.tiles_n, self.tiles_k);
        (0..self.len()).map(move |i| TileOp { mi: i / (tn * tk), ni: (i / tk) % tn, ki: i % tk })
    }

    /// Ops whose output tile index `mi*Tn + ni` is congruent to `lane`
    /// modulo `lanes`, in schedule order.
    pub fn lane_ops(&self, lane: usize, lanes: usize) -> impl Iterator<Item = TileOp> + '_ {
        let tn = self.tiles_n;
        self.ops().filter(move |op| (op.mi * tn + op.ni) % lanes == lane)
    }

    /// Valid (unpadded) rows of A tile-row block `mi`.
    pub fn valid_m(&self, mi: usize) -> usize {
        valid_extent(self.shape.m, self.config.tile_m, mi)
    }

    pub fn valid_k(&self, ki: usize) -> usize {
        valid_extent(self.shape.k, self.config.tile_k, ki)
    }

    pub fn valid_n(&self, ni: usize) -> usize {
        valid_extent(self.shape.n, self.config.tile_n, ni)
    }

    /// Transfer volume implied by the schedule, computed without running it.
    /// Matches what [`super::gemm_streamed_counted`] records.
    pub fn transfer_counters(&self) -> TransferCounters {
        let mut counters = TransferCounters::new(self.config.n_banks);
        for op in self.ops() {
            counters.record_op(self, op);
        }
        counters
    }
}

fn valid_extent(total: usize, tile: usize, index: usize) -> usize {
    tile.min(total - index * tile)
}

/// Floats and bus words moved per memory bank.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransferCounters {
    pub words_per_bank: Vec<u64>,
    pub elems_per_bank: Vec<u64>,
}

impl TransferCounters {
    pub fn new(n_banks: usize) -> Self {
        Self { words_per_bank: vec![0; n_banks], elems_per_bank: vec![0; n_banks] }
    }

    pub fn n_banks(&self) -> usize {
        self.words_per_bank.len()
    }

    pub fn total_elems(&self) -> u64 {
        self.elems_per_bank.iter().sum()
    }

    pub fn total_words(&self) -> u64 {
        self.words_per_bank.iter().sum()
    }

    pub(crate) fn record(&mut self, bank: usize, elems: usize, bus_width_bits: usize) {
        self.elems_per_bank[bank] += elems as u64;
        self.words_per_bank[bank] += pack_bus_words(elems as u64, bus_width_bits);
    }

    /// A tile rows and B tile columns are interleaved over the banks.
    pub(crate) fn record_op(&mut self, schedule: &TileSchedule, op: TileOp) {
        let nb = self.n_banks();
        let bus = schedule.config.bus_width_bits;
        let (vm, vk, vn) = (schedule.valid_m(op.mi), schedule.valid_k(op.ki), schedule.valid_n(op.ni));
        for bank in 0..nb {
            self.record(bank, lanes_for_bank(vm, bank, nb) * vk, bus);
            self.record(bank, lanes_for_bank(vn, bank, nb) * vk, bus);
        }
    }

    pub fn merge(&mut self, other: &TransferCounters) {
        for (a, b) in self.words_per_bank.iter_mut().zip(&other.words_per_bank) {
            *a += b;
        }
        for (a, b) in self.elems_per_bank.iter_mut().zip(&other.elems_per_bank) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(tm: usize, tk: usize, tn: usize) -> EngineConfig {
        EngineConfig { tile_m: tm, tile_k: tk, tile_n: tn, ..Default::default() }
    }

    #[test]
    fn single_tile() {
        let s = plan_tiles(GemmShape::new(8, 8, 8).unwrap(), &cfg(8, 8, 8)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.ops().collect::<Vec<_>>(), vec![TileOp { mi: 0, ni: 0, ki: 0 }]);
    }

    #[test]
    fn ceil_on_m() {
        let s = plan_tiles(GemmShape::new(3, 4, 4).unwrap(), &cfg(2, 4, 4)).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.valid_m(1), 1);
    }

    #[test]
    fn paper_shape_tile_count() {
        let c = EngineConfig {
            tile_m: 64,
            tile_k: 512,
            tile_n: 64,
            onchip_budget_bytes: 1 << 20,
            ..Default::default()
        };
        let s = plan_tiles(GemmShape::new(2048, 4096, 16384).unwrap(), &c).unwrap();
        assert_eq!(s.counts(), (32, 256, 8));
        assert_eq!(s.len(), 65_536);
    }

    #[test]
    fn order_is_mi_ni_ki() {
        let s = plan_tiles(GemmShape::new(5, 7, 3).unwrap(), &cfg(2, 3, 2)).unwrap();
        let ops: Vec<_> = s.ops().collect();
        assert_eq!(ops.len(), 3 * 2 * 3);
        let keys: Vec<_> = ops.iter().map(|o| (o.mi, o.ni, o.ki)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn lanes_partition_ops() {
        let s = plan_tiles(GemmShape::new(9, 9, 9).unwrap(), &cfg(2, 4, 3)).unwrap();
        let mut all: Vec<_> = (0..3).flat_map(|l| s.lane_ops(l, 3).collect::<Vec<_>>()).collect();
        all.sort_by_key(|o| (o.mi, o.ni, o.ki));
        assert_eq!(all, s.ops().collect::<Vec<_>>());
    }

    #[test]
    fn transfer_elems_cover_operands() {
        let shape = GemmShape::new(13, 11, 7).unwrap();
        let s = plan_tiles(shape, &EngineConfig { n_banks: 3, ..cfg(4, 4, 4) }).unwrap();
        let t = s.transfer_counters();
        let (tm, tn, _) = s.counts();
        // A is streamed once per output column block, B once per row block.
        let expected = (shape.m * shape.k * tn + shape.k * shape.n * tm) as u64;
        assert_eq!(t.total_elems(), expected);
    }
}
