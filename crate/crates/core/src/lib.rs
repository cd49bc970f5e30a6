//! FP32 CNN inference whose compute core is a stream-pipelined,
//! bank-partitioned tiled GEMM engine, with an analytic cycle/energy model.
//!
//! * [`frontend`] parses Darknet `.cfg`/`.weights` files, folding batchnorm.
//! * [`tensor`] holds tensors, matrices and the im2col/col2im lowering kernels.
//! * [`engine`] plans tile schedules and runs the streamed GEMM pipeline.
//! * [`perf`] turns schedules and transfer counters into cycles, GFLOPS and GFLOPS/W.
//! * [`runtime`] lowers a network to GEMM steps and runs the forward pass.
//! * [`report`] is the benchmark CSV schema shared by the CLI tools.

pub mod engine;
pub mod frontend;
pub mod perf;
pub mod report;
pub mod runtime;
pub mod tensor;

pub use engine::{
    gemm_reference, gemm_streamed, plan_tiles, EngineConfig, EngineError, GemmShape, TileSchedule,
};
pub use frontend::{load_weights, parse_cfg, FrontendError, NetworkGraph, WeightedNetwork};
pub use perf::{estimate, DevicePreset, PerfEstimate};
pub use report::{BenchmarkReport, BenchmarkRow};
pub use runtime::{forward, lower, ExecutionPlan, RuntimeError};
pub use tensor::{Activation, Dims4, Matrix, Tensor, TensorError};
