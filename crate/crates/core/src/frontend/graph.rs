use std::fmt::Write as _;

use super::FrontendError;
use crate::tensor::{conv_out_extent, maxpool_out_extent, Activation};

/// Per-image dims `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Chw {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Chw {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Chw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.c, self.h, self.w)
    }
}

/// Convolution and deconvolution parameters. `pad` is the resolved
/// per-side padding in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub filters: usize,
    pub size: usize,
    pub stride: usize,
    pub pad: usize,
    pub activation: Activation,
    pub batch_normalize: bool,
}

/// Max-pool parameters. `pad` is the total padding across both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolParams {
    pub size: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectedParams {
    pub outputs: usize,
    pub activation: Activation,
    pub batch_normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Convolutional(ConvParams),
    Deconvolutional(ConvParams),
    Maxpool(PoolParams),
    Connected(ConnectedParams),
    Softmax,
    Avgpool,
}

impl LayerKind {
    pub fn section_name(&self) -> &'static str {
        match self {
            LayerKind::Convolutional(_) => "convolutional",
            LayerKind::Deconvolutional(_) => "deconvolutional",
            LayerKind::Maxpool(_) => "maxpool",
            LayerKind::Connected(_) => "connected",
            LayerKind::Softmax => "softmax",
            LayerKind::Avgpool => "avgpool",
        }
    }

    pub fn batch_normalize(&self) -> bool {
        match self {
            LayerKind::Convolutional(p) | LayerKind::Deconvolutional(p) => p.batch_normalize,
            LayerKind::Connected(p) => p.batch_normalize,
            _ => false,
        }
    }

    pub fn without_batchnorm(self) -> Self {
        match self {
            LayerKind::Convolutional(p) => {
                LayerKind::Convolutional(ConvParams { batch_normalize: false, ..p })
            }
            LayerKind::Deconvolutional(p) => {
                LayerKind::Deconvolutional(ConvParams { batch_normalize: false, ..p })
            }
            LayerKind::Connected(p) => {
                LayerKind::Connected(ConnectedParams { batch_normalize: false, ..p })
            }
            other => other,
        }
    }

    /// Output dims for the given input, or `None` when the geometry does not fit.
    pub fn out_dims(&self, input: Chw) -> Option<Chw> {
        match *self {
            LayerKind::Convolutional(p) => Some(Chw::new(
                p.filters,
                conv_out_extent(input.h, p.size, p.stride, p.pad)?,
                conv_out_extent(input.w, p.size, p.stride, p.pad)?,
            )),
            LayerKind::Deconvolutional(p) => {
                let extent = |x: usize| {
                    ((x - 1) * p.stride + p.size).checked_sub(2 * p.pad).filter(|v| *v >= 1)
                };
                Some(Chw::new(p.filters, extent(input.h)?, extent(input.w)?))
            }
            LayerKind::Maxpool(p) => Some(Chw::new(
                input.c,
                maxpool_out_extent(input.h, p.size, p.stride, p.pad)?,
                maxpool_out_extent(input.w, p.size, p.stride, p.pad)?,
            )),
            LayerKind::Connected(p) => Some(Chw::new(p.outputs, 1, 1)),
            LayerKind::Softmax => Some(Chw::new(input.len(), 1, 1)),
            LayerKind::Avgpool => Some(Chw::new(input.c, 1, 1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dims: Chw,
    pub out_dims: Chw,
    /// Line of the section header in the source, 0 when built in code.
    pub line: usize,
}

/// A validated layer sequence; each layer's input dims equal the previous
/// layer's output dims.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    input_dims: Chw,
    layers: Vec<LayerSpec>,
}

impl NetworkGraph {
    /// Chains dims through `kinds`. `lines` (if given) tags each layer with
    /// its source line for error messages.
    pub fn new(input_dims: Chw, kinds: Vec<LayerKind>) -> Result<Self, FrontendError> {
        let lines = vec![0; kinds.len()];
        Self::with_lines(input_dims, kinds, &lines)
    }

    pub(crate) fn with_lines(
        input_dims: Chw,
        kinds: Vec<LayerKind>,
        lines: &[usize],
    ) -> Result<Self, FrontendError> {
        if kinds.is_empty() {
            return Err(FrontendError::NoLayers);
        }
        let mut dims = input_dims;
        let mut layers = Vec::with_capacity(kinds.len());
        for (layer_index, (kind, &line)) in kinds.into_iter().zip(lines).enumerate() {
            let out_dims = kind
                .out_dims(dims)
                .filter(|d| !d.is_empty())
                .ok_or(FrontendError::NonIntegralOutputDim { layer_index, line })?;
            layers.push(LayerSpec { kind, in_dims: dims, out_dims, line });
            dims = out_dims;
        }
        Ok(Self { input_dims, layers })
    }

    pub fn input_dims(&self) -> Chw {
        self.input_dims
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn output_dims(&self) -> Chw {
        self.layers.last().expect("graph has layers").out_dims
    }

    pub(crate) fn without_batchnorm(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerSpec { kind: l.kind.without_batchnorm(), ..l.clone() })
            .collect();
        Self { input_dims: self.input_dims, layers }
    }

    /// Renders the graph back to `.cfg` text that parses to the same graph.
    pub fn to_cfg(&self) -> String {
        let mut s = String::new();
        let d = self.input_dims;
        let _ = writeln!(s, "[net]\nchannels={}\nheight={}\nwidth={}", d.c, d.h, d.w);
        for layer in &self.layers {
            let _ = writeln!(s, "\n[{}]", layer.kind.section_name());
            match layer.kind {
                LayerKind::Convolutional(p) | LayerKind::Deconvolutional(p) => {
                    let _ = writeln!(
                        s,
                        "filters={}\nsize={}\nstride={}\npadding={}\nactivation={}",
                        p.filters,
                        p.size,
                        p.stride,
                        p.pad,
                        p.activation.name()
                    );
                    if p.batch_normalize {
                        let _ = writeln!(s, "batch_normalize=1");
                    }
                }
                LayerKind::Maxpool(p) => {
                    let _ = writeln!(s, "size={}\nstride={}\npadding={}", p.size, p.stride, p.pad);
                }
                LayerKind::Connected(p) => {
                    let _ = writeln!(s, "output={}\nactivation={}", p.outputs, p.activation.name());
                    if p.batch_normalize {
                        let _ = writeln!(s, "batch_normalize=1");
                    }
                }
                LayerKind::Softmax | LayerKind::Avgpool => {}
            }
        }
        s
    }
}
