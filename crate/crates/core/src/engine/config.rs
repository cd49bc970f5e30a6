use thiserror::Error;

use crate::tensor::TensorError;

/// On-chip budget the default tile set is sized against (analogous to BRAM).
pub const DEFAULT_ONCHIP_BUDGET_BYTES: usize = 256 * 1024;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("tile working set of {needed} bytes exceeds the on-chip budget of {budget} bytes")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("gemm shape {m}x{k}x{n} overflows the flop counter")]
    ShapeOverflow { m: usize, k: usize, n: usize },
}

impl From<TensorError> for EngineError {
    fn from(e: TensorError) -> Self {
        EngineError::DimMismatch(e.to_string())
    }
}

/// Tile and transfer parameters of the compute engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub tile_m: usize,
    pub tile_k: usize,
    pub tile_n: usize,
    /// Memory banks each tile transfer is split across.
    pub n_banks: usize,
    /// External bus width; one bus word carries `bus_width_bits / 32` floats.
    pub bus_width_bits: usize,
    /// Capacity, in messages, of every FIFO between pipeline stages.
    pub stream_depth: usize,
    pub onchip_budget_bytes: usize,
    /// Independent pipelines, each owning a disjoint set of output tiles.
    pub workers: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tile_m: 64,
            tile_k: 64,
            tile_n: 64,
            n_banks: 4,
            bus_width_bits: 512,
            stream_depth: 2,
            onchip_budget_bytes: DEFAULT_ONCHIP_BUDGET_BYTES,
            workers: 1,
        }
    }
}

impl EngineConfig {
    /// Floats held on chip for one tile op: the A, B and C tiles.
    pub fn working_set_elems(&self) -> usize {
        self.tile_m * self.tile_k + self.tile_k * self.tile_n + self.tile_m * self.tile_n
    }

    pub fn bus_lanes(&self) -> usize {
        self.bus_width_bits / 32
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let positive = [
            ("tile_m", self.tile_m),
            ("tile_k", self.tile_k),
            ("tile_n", self.tile_n),
            ("n_banks", self.n_banks),
            ("bus_width_bits", self.bus_width_bits),
            ("stream_depth", self.stream_depth),
            ("workers", self.workers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(EngineError::InvalidConfig(format!("{name} must be positive")));
        }
        if self.bus_width_bits % 32 != 0 {
            return Err(EngineError::InvalidConfig(format!(
                "bus_width_bits {} is not a multiple of 32",
                self.bus_width_bits
            )));
        }
        let needed = self.working_set_elems() * 4;
        if needed > self.onchip_budget_bytes {
            return Err(EngineError::BudgetExceeded { needed, budget: self.onchip_budget_bytes });
        }
        Ok(())
    }
}

/// `C[m x n] = A[m x k] * B[k x n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GemmShape {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl GemmShape {
    pub fn new(m: usize, k: usize, n: usize) -> Result<Self, EngineError> {
        if m == 0 || k == 0 || n == 0 {
            return Err(EngineError::DimMismatch(format!("gemm shape {m}x{k}x{n} must be positive")));
        }
        let flops = 2u128 * m as u128 * k as u128 * n as u128;
        if flops > u64::MAX as u128 {
            return Err(EngineError::ShapeOverflow { m, k, n });
        }
        Ok(Self { m, k, n })
    }

    /// `2*m*k*n`: one multiply and one add per MAC.
    pub fn flops(&self) -> u64 {
        2 * self.macs()
    }

    pub fn macs(&self) -> u64 {
        self.m as u64 * self.k as u64 * self.n as u64
    }
}

impl std::fmt::Display for GemmShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.k, self.n)
    }
}
