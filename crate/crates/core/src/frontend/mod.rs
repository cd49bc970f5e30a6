//! Darknet network descriptions: `.cfg` parsing, graph construction and
//! `.weights` loading with batchnorm folded into the preceding layer.

mod cfg;
mod graph;
mod weights;

use thiserror::Error;

pub use cfg::parse_cfg;
pub use graph::{Chw, ConnectedParams, ConvParams, LayerKind, LayerSpec, NetworkGraph, PoolParams};
pub use weights::{
    encode_weights, fold_batchnorm, load_weights, BatchNorm, BatchNormStats, LayerWeights, RawLayerWeights,
    WeightedNetwork, WeightsHeader, BATCHNORM_EPS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontendError {
    #[error("config is empty")]
    EmptyConfig,
    #[error("line {line}: first section must be [net] or [network]")]
    MissingNetHeader { line: usize },
    #[error("line {line}: unknown or unsupported section [{name}]")]
    UnknownSection { name: String, line: usize },
    #[error("line {line}: layer {layer_index} has a non-integral or empty output dimension")]
    NonIntegralOutputDim { layer_index: usize, line: usize },
    #[error("line {line}: [{section}] is missing required key '{key}'")]
    MissingRequiredKey { section: String, key: String, line: usize },
    #[error("line {line}: [{section}] {key}={value} is not valid")]
    InvalidValue { section: String, key: String, value: String, line: usize },
    #[error("line {line}: expected key=value, got '{text}'")]
    MalformedLine { line: usize, text: String },
    #[error("network declares no layers")]
    NoLayers,
    #[error("weights file truncated: expected {expected} bytes, got {got}")]
    TruncatedFile { expected: usize, got: usize },
    #[error("weights file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("bad weights header: {0}")]
    BadHeader(String),
    #[error("layer {layer_index}: batchnorm variance is negative")]
    NegativeVariance { layer_index: usize },
    #[error("layer {layer_index}: {detail}")]
    WeightsMismatch { layer_index: usize, detail: String },
}
