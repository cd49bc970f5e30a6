//! Software analogue of a streamed, bank-partitioned tiled GEMM accelerator,
//! plus the naive reference GEMM it is checked against.

mod banks;
mod config;
mod reference;
mod schedule;
mod streamed;

pub use banks::{bank_partition, lanes_for_bank, merge_partitions, pack_bus_words, partition_indices};
pub use config::{EngineConfig, EngineError, GemmShape, DEFAULT_ONCHIP_BUDGET_BYTES};
pub use reference::gemm_reference;
pub use schedule::{plan_tiles, TileOp, TileSchedule, TransferCounters};
pub use streamed::{gemm_streamed, gemm_streamed_counted, EngineCounters, PIPELINE_STAGES};
