//! Lowers each layer onto the GEMM engine and runs the forward pass.
//!
//! Convolution is im2col followed by `weights x columns`; deconvolution is
//! `weights^T x input` followed by col2im; connected layers are a matrix-vector
//! GEMM. Biases are added after the GEMM and before the activation.

use thiserror::Error;

use crate::engine::{gemm_streamed, EngineConfig, EngineError, GemmShape};
use crate::frontend::{ConvParams, LayerKind, LayerSpec, LayerWeights, WeightedNetwork};
use crate::tensor::{
    activate_in_place, avgpool, col2im, im2col, maxpool, softmax, Activation, Dims4, Matrix, Tensor,
    TensorError,
};

#[derive(Debug, Error, PartialEq)]
pub enum RuntimeError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("layer {layer_index}: unsupported layer ({detail})")]
    UnsupportedLayer { layer_index: usize, detail: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl From<TensorError> for RuntimeError {
    fn from(e: TensorError) -> Self {
        RuntimeError::DimMismatch(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lowering {
    Im2colGemm,
    GemmCol2im,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStep {
    pub layer_index: usize,
    pub lowering: Lowering,
    pub gemm: Option<GemmShape>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionPlan {
    pub steps: Vec<PlanStep>,
    pub config: EngineConfig,
}

impl ExecutionPlan {
    pub fn gemm_steps(&self) -> impl Iterator<Item = (usize, GemmShape)> + '_ {
        self.steps.iter().filter_map(|s| s.gemm.map(|g| (s.layer_index, g)))
    }

    pub fn total_flops(&self) -> u64 {
        self.gemm_steps().map(|(_, g)| g.flops()).sum()
    }
}

fn step_for(layer_index: usize, spec: &LayerSpec) -> Result<PlanStep, RuntimeError> {
    let (lowering, gemm) = match spec.kind {
        LayerKind::Convolutional(p) => (
            Lowering::Im2colGemm,
            Some(GemmShape::new(
                p.filters,
                spec.in_dims.c * p.size * p.size,
                spec.out_dims.h * spec.out_dims.w,
            )?),
        ),
        LayerKind::Deconvolutional(p) => (
            Lowering::GemmCol2im,
            Some(GemmShape::new(
                p.filters * p.size * p.size,
                spec.in_dims.c,
                spec.in_dims.h * spec.in_dims.w,
            )?),
        ),
        LayerKind::Connected(p) => {
            (Lowering::Im2colGemm, Some(GemmShape::new(p.outputs, spec.in_dims.len(), 1)?))
        }
        LayerKind::Maxpool(_) | LayerKind::Avgpool | LayerKind::Softmax => (Lowering::Direct, None),
    };
    Ok(PlanStep { layer_index, lowering, gemm })
}

/// One step per layer; every convolution, deconvolution and connected layer
/// maps to exactly one GEMM.
pub fn lower(network: &WeightedNetwork, config: &EngineConfig) -> Result<ExecutionPlan, RuntimeError> {
    config.validate()?;
    let steps = network
        .graph()
        .layers()
        .iter()
        .enumerate()
        .map(|(i, spec)| step_for(i, spec))
        .collect::<Result<_, _>>()?;
    Ok(ExecutionPlan { steps, config: config.clone() })
}

pub fn forward(
    network: &WeightedNetwork,
    input: &Tensor,
    config: &EngineConfig,
) -> Result<Tensor, RuntimeError> {
    let plan = lower(network, config)?;
    execute(&plan, network, input)
}

pub fn execute(
    plan: &ExecutionPlan,
    network: &WeightedNetwork,
    input: &Tensor,
) -> Result<Tensor, RuntimeError> {
    let g = network.graph();
    let d = g.input_dims();
    if input.dims() != Dims4::new(1, d.c, d.h, d.w) {
        return Err(RuntimeError::DimMismatch(format!(
            "network expects input 1x{}x{}x{}, got {}",
            d.c,
            d.h,
            d.w,
            input.dims()
        )));
    }
    let mut x = input.clone();
    for ((step, spec), weights) in plan.steps.iter().zip(g.layers()).zip(network.layer_weights()) {
        x = run_layer(step, spec, weights.as_ref(), &x, &plan.config)?;
    }
    Ok(x)
}

fn require<'a>(step: &PlanStep, weights: Option<&'a LayerWeights>) -> Result<&'a LayerWeights, RuntimeError> {
    weights.ok_or_else(|| RuntimeError::UnsupportedLayer {
        layer_index: step.layer_index,
        detail: "parameterized layer has no weights".into(),
    })
}

fn add_bias_rows(data: &mut [f32], biases: &[f32]) {
    let row = data.len() / biases.len();
    for (chunk, b) in data.chunks_exact_mut(row).zip(biases) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn finish(mut data: Vec<f32>, biases: &[f32], dims: Dims4, act: Activation) -> Result<Tensor, RuntimeError> {
    add_bias_rows(&mut data, biases);
    let mut out = Tensor::new(dims, data)?;
    activate_in_place(&mut out, act);
    Ok(out)
}

/// `(filters*k*k) x in_c` operand from `(filters, in_c, k, k)` weights.
fn deconv_operand(w: &[f32], p: &ConvParams, in_c: usize) -> Result<Matrix, TensorError> {
    let kk = p.size * p.size;
    let mut data = vec![0.0f32; w.len()];
    for f in 0..p.filters {
        for c in 0..in_c {
            for k in 0..kk {
                data[(f * kk + k) * in_c + c] = w[(f * in_c + c) * kk + k];
            }
        }
    }
    Matrix::new(p.filters * kk, in_c, data)
}

fn run_layer(
    step: &PlanStep,
    spec: &LayerSpec,
    weights: Option<&LayerWeights>,
    x: &Tensor,
    config: &EngineConfig,
) -> Result<Tensor, RuntimeError> {
    let (i, o) = (spec.in_dims, spec.out_dims);
    let out_dims = Dims4::new(1, o.c, o.h, o.w);
    match spec.kind {
        LayerKind::Convolutional(p) => {
            let w = require(step, weights)?;
            let cols = im2col(x, p.size, p.stride, p.pad)?;
            let a = Matrix::new(p.filters, i.c * p.size * p.size, w.weights.clone())?;
            let c = gemm_streamed(&a, &cols, config)?;
            finish(c.into_data(), &w.biases, out_dims, p.activation)
        }
        LayerKind::Deconvolutional(p) => {
            let w = require(step, weights)?;
            let a = deconv_operand(&w.weights, &p, i.c)?;
            let b = Matrix::new(i.c, i.h * i.w, x.data().to_vec())?;
            let c = gemm_streamed(&a, &b, config)?;
            let y = col2im(&c, p.filters, o.h, o.w, p.size, p.stride, p.pad)?;
            finish(y.into_data(), &w.biases, out_dims, p.activation)
        }
        LayerKind::Connected(p) => {
            let w = require(step, weights)?;
            let a = Matrix::new(p.outputs, i.len(), w.weights.clone())?;
            let b = Matrix::new(i.len(), 1, x.data().to_vec())?;
            let c = gemm_streamed(&a, &b, config)?;
            finish(c.into_data(), &w.biases, out_dims, p.activation)
        }
        LayerKind::Maxpool(p) => Ok(maxpool(x, p.size, p.stride, p.pad)?),
        LayerKind::Avgpool => Ok(avgpool(x)?),
        LayerKind::Softmax => Ok(softmax(&x.clone().reshape(out_dims)?)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_cfg, RawLayerWeights};

    fn net(cfg: &str, raw: Vec<Option<RawLayerWeights>>) -> WeightedNetwork {
        WeightedNetwork::new(parse_cfg(cfg).unwrap(), raw).unwrap()
    }

    fn raw(weights: Vec<f32>, biases: Vec<f32>) -> Option<RawLayerWeights> {
        Some(RawLayerWeights { weights, biases, batchnorm: None })
    }

    #[test]
    fn lowering_shapes() {
        let n = net(
            "[net]\nchannels=3\nheight=32\nwidth=32\n[convolutional]\nfilters=16\nsize=3\nstride=1\npad=1\n\
             [avgpool]\n[connected]\noutput=10\n[softmax]",
            vec![raw(vec![0.0; 16 * 27], vec![0.0; 16]), None, raw(vec![0.0; 160], vec![0.0; 10]), None],
        );
        let plan = lower(&n, &EngineConfig::default()).unwrap();
        assert_eq!(plan.steps.len(), 4);
        assert_eq!(plan.steps[0].gemm, Some(GemmShape { m: 16, k: 27, n: 1024 }));
        assert_eq!(plan.steps[2].gemm, Some(GemmShape { m: 10, k: 16, n: 1 }));
        assert_eq!(plan.steps[3].lowering, Lowering::Direct);
        assert_eq!(plan.steps[3].gemm, None);
    }

    #[test]
    fn connected_shape_from_flat_input() {
        let n = net(
            "[net]\nchannels=100\nheight=1\nwidth=1\n[connected]\noutput=10\nactivation=linear",
            vec![raw(vec![0.0; 1000], vec![0.0; 10])],
        );
        let plan = lower(&n, &EngineConfig::default()).unwrap();
        assert_eq!(plan.steps[0].gemm, Some(GemmShape { m: 10, k: 100, n: 1 }));
    }

    #[test]
    fn identity_conv_is_bitwise_identity() {
        let n = net(
            "[net]\nchannels=1\nheight=3\nwidth=5\n[convolutional]\nfilters=1\nsize=1\nactivation=linear",
            vec![raw(vec![1.0], vec![0.0])],
        );
        let x = Tensor::new(Dims4::new(1, 1, 3, 5), (0..15).map(|v| v as f32 * 0.37 - 2.0).collect()).unwrap();
        let y = forward(&n, &x, &EngineConfig::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn deconv_scatter() {
        let n = net(
            "[net]\nchannels=1\nheight=1\nwidth=1\n[deconvolutional]\nfilters=1\nsize=2\nstride=2\nactivation=linear",
            vec![raw(vec![1.0; 4], vec![0.0])],
        );
        let x = Tensor::new(Dims4::new(1, 1, 1, 1), vec![2.5]).unwrap();
        let y = forward(&n, &x, &EngineConfig::default()).unwrap();
        assert_eq!(y.dims(), Dims4::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[2.5; 4]);
    }

    #[test]
    fn bias_then_activation() {
        let n = net(
            "[net]\nchannels=1\nheight=1\nwidth=2\n[convolutional]\nfilters=1\nsize=1\nactivation=relu",
            vec![raw(vec![1.0], vec![-1.0])],
        );
        let x = Tensor::new(Dims4::new(1, 1, 1, 2), vec![0.5, 3.0]).unwrap();
        assert_eq!(forward(&n, &x, &EngineConfig::default()).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn softmax_head_sums_to_one() {
        let n = net(
            "[net]\nchannels=2\nheight=2\nwidth=2\n[maxpool]\nsize=2\nstride=2\n[softmax]",
            vec![None, None],
        );
        let x = Tensor::new(Dims4::new(1, 2, 2, 2), vec![1., 2., 3., 4., 0., 0., 0., 1.]).unwrap();
        let y = forward(&n, &x, &EngineConfig::default()).unwrap();
        assert_eq!(y.dims(), Dims4::new(1, 2, 1, 1));
        assert!((y.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_wrong_input() {
        let n = net(
            "[net]\nchannels=1\nheight=2\nwidth=2\n[softmax]",
            vec![None],
        );
        let x = Tensor::zeros(Dims4::new(1, 1, 2, 3)).unwrap();
        assert!(matches!(forward(&n, &x, &EngineConfig::default()), Err(RuntimeError::DimMismatch(_))));
    }
}
