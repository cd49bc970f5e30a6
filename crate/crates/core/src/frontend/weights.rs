use super::graph::{LayerKind, LayerSpec, NetworkGraph};
use super::FrontendError;

/// Variance epsilon used when folding batchnorm.
pub const BATCHNORM_EPS: f32 = 1e-6;

/// Leading fields of a `.weights` file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightsHeader {
    pub major: i32,
    pub minor: i32,
    pub revision: i32,
    pub seen: u64,
}

impl Default for WeightsHeader {
    fn default() -> Self {
        Self { major: 0, minor: 2, revision: 0, seen: 0 }
    }
}

impl WeightsHeader {
    /// Files from version 0.2 on store `seen` as 64 bits.
    pub fn wide_seen(&self) -> bool {
        self.major * 10 + self.minor >= 2
    }

    pub fn byte_len(&self) -> usize {
        12 + if self.wide_seen() { 8 } else { 4 }
    }

    fn decode(bytes: &[u8]) -> Result<Self, FrontendError> {
        if bytes.len() < 12 {
            return Err(FrontendError::TruncatedFile { expected: 12, got: bytes.len() });
        }
        let int = |i: usize| i32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
        let (major, minor, revision) = (int(0), int(1), int(2));
        if major < 0 || minor < 0 || revision < 0 || major >= 1000 || minor >= 1000 {
            return Err(FrontendError::BadHeader(format!(
                "unsupported version {major}.{minor}.{revision}"
            )));
        }
        let mut header = Self { major, minor, revision, seen: 0 };
        let len = header.byte_len();
        if bytes.len() < len {
            return Err(FrontendError::TruncatedFile { expected: len, got: bytes.len() });
        }
        header.seen = if header.wide_seen() {
            u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"))
        } else {
            u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as u64
        };
        Ok(header)
    }

    fn encode(&self, out: &mut Vec<u8>) {
        for v in [self.major, self.minor, self.revision] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if self.wide_seen() {
            out.extend_from_slice(&self.seen.to_le_bytes());
        } else {
            out.extend_from_slice(&(self.seen as u32).to_le_bytes());
        }
    }
}

/// Full batchnorm parameter set for [`fold_batchnorm`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Batchnorm scale and rolling statistics as stored in a weights file.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub gamma: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Parameters of one layer before folding. `weights` is `(filters, in_c,
/// size, size)` for convolution and deconvolution and `(outputs, inputs)`
/// for connected layers.
///
/// With batchnorm, Darknet files carry no separate layer bias: the stored
/// bias vector is batchnorm's `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLayerWeights {
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
    pub batchnorm: Option<BatchNormStats>,
}

/// Folded parameters; same layout as [`RawLayerWeights::weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

/// `w'[f,..] = w[f,..]*s[f]` and `b'[f] = beta[f] + (b[f] - mean[f])*s[f]`
/// with `s[f] = gamma[f]/sqrt(var[f] + eps)`.
pub fn fold_batchnorm(
    weights: &[f32],
    biases: &[f32],
    bn: &BatchNorm,
    eps: f32,
) -> Result<(Vec<f32>, Vec<f32>), FrontendError> {
    let filters = biases.len();
    let mismatch = |detail: String| FrontendError::WeightsMismatch { layer_index: 0, detail };
    for (name, v) in [("gamma", &bn.gamma), ("beta", &bn.beta), ("mean", &bn.mean), ("var", &bn.var)] {
        if v.len() != filters {
            return Err(mismatch(format!("batchnorm {name} has {} values, expected {filters}", v.len())));
        }
    }
    if filters == 0 || weights.len() % filters != 0 {
        return Err(mismatch(format!("{} weights do not split into {filters} filters", weights.len())));
    }
    if bn.var.iter().any(|v| !(*v >= 0.0)) {
        return Err(FrontendError::NegativeVariance { layer_index: 0 });
    }
    let per_filter = weights.len() / filters;
    let scale: Vec<f32> = (0..filters).map(|f| bn.gamma[f] / (bn.var[f] + eps).sqrt()).collect();
    let folded_w = weights
        .chunks_exact(per_filter)
        .zip(&scale)
        .flat_map(|(chunk, s)| chunk.iter().map(move |w| w * s))
        .collect();
    let folded_b = (0..filters).map(|f| bn.beta[f] + (biases[f] - bn.mean[f]) * scale[f]).collect();
    Ok((folded_w, folded_b))
}

/// `(bias count, weight count)` for layers that carry parameters.
fn param_counts(layer: &LayerSpec) -> Option<(usize, usize)> {
    match layer.kind {
        LayerKind::Convolutional(p) | LayerKind::Deconvolutional(p) => {
            Some((p.filters, p.filters * layer.in_dims.c * p.size * p.size))
        }
        LayerKind::Connected(p) => Some((p.outputs, p.outputs * layer.in_dims.len())),
        _ => None,
    }
}

/// Darknet stores deconvolution weights as `(in_c, filters, k, k)`.
fn swap_leading(w: &[f32], outer: usize, inner: usize, block: usize) -> Vec<f32> {
    let mut out = vec![0.0; w.len()];
    for o in 0..outer {
        for i in 0..inner {
            out[(i * outer + o) * block..][..block].copy_from_slice(&w[(o * inner + i) * block..][..block]);
        }
    }
    out
}

fn expected_len(graph: &NetworkGraph, header: &WeightsHeader) -> usize {
    let floats: usize = graph
        .layers()
        .iter()
        .filter_map(|l| {
            let (b, w) = param_counts(l)?;
            Some(b + w + if l.kind.batch_normalize() { 3 * b } else { 0 })
        })
        .sum();
    header.byte_len() + floats * 4
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn floats(&mut self, n: usize) -> Vec<f32> {
        let out = self.bytes[self.pos..self.pos + n * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        self.pos += n * 4;
        out
    }
}

/// Network bound to its parameters, with every batchnorm folded away.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNetwork {
    graph: NetworkGraph,
    layers: Vec<Option<LayerWeights>>,
}

impl WeightedNetwork {
    /// Binds raw parameters to `graph`, folding batchnorm where present.
    /// `raw` has one entry per layer; weightless layers take `None`.
    pub fn new(graph: NetworkGraph, raw: Vec<Option<RawLayerWeights>>) -> Result<Self, FrontendError> {
        if raw.len() != graph.layers().len() {
            return Err(FrontendError::WeightsMismatch {
                layer_index: raw.len().min(graph.layers().len()),
                detail: format!("{} parameter sets for {} layers", raw.len(), graph.layers().len()),
            });
        }
        let mut layers = Vec::with_capacity(raw.len());
        for (layer_index, (spec, raw)) in graph.layers().iter().zip(raw).enumerate() {
            let mismatch = |detail: String| FrontendError::WeightsMismatch { layer_index, detail };
            let folded = match (param_counts(spec), raw) {
                (None, None) => None,
                (None, Some(_)) => return Err(mismatch("layer takes no parameters".into())),
                (Some(_), None) => return Err(mismatch("missing parameters".into())),
                (Some((nb, nw)), Some(raw)) => {
                    if raw.biases.len() != nb || raw.weights.len() != nw {
                        return Err(mismatch(format!(
                            "expected {nb} biases and {nw} weights, got {} and {}",
                            raw.biases.len(),
                            raw.weights.len()
                        )));
                    }
                    if raw.batchnorm.is_some() != spec.kind.batch_normalize() {
                        return Err(mismatch("batchnorm parameters disagree with the layer".into()));
                    }
                    Some(match raw.batchnorm {
                        None => LayerWeights { weights: raw.weights, biases: raw.biases },
                        Some(bn) => {
                            // The stored bias is beta; the layer itself has none.
                            let zero = vec![0.0; nb];
                            let bn = BatchNorm { gamma: bn.gamma, beta: raw.biases, mean: bn.mean, var: bn.var };
                            let (weights, biases) = fold_batchnorm(&raw.weights, &zero, &bn, BATCHNORM_EPS)
                                .map_err(|e| match e {
                                    FrontendError::NegativeVariance { .. } => {
                                        FrontendError::NegativeVariance { layer_index }
                                    }
                                    FrontendError::WeightsMismatch { detail, .. } => mismatch(detail),
                                    other => other,
                                })?;
                            LayerWeights { weights, biases }
                        }
                    })
                }
            };
            layers.push(folded);
        }
        Ok(Self { graph: graph.without_batchnorm(), layers })
    }

    /// The bound graph. Batchnorm flags are cleared once folded.
    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn layer_weights(&self) -> &[Option<LayerWeights>] {
        &self.layers
    }

    /// Serializes the folded parameters; reloading the bytes against
    /// [`Self::graph`] reproduces this network bit for bit.
    pub fn to_weights_bytes(&self) -> Vec<u8> {
        let raw: Vec<_> = self
            .layers
            .iter()
            .map(|l| {
                l.as_ref().map(|l| RawLayerWeights {
                    weights: l.weights.clone(),
                    biases: l.biases.clone(),
                    batchnorm: None,
                })
            })
            .collect();
        encode_weights(&self.graph, &WeightsHeader::default(), &raw)
            .expect("folded network is self-consistent")
    }
}

/// Writes parameters in Darknet order: biases, `[gamma, mean, var]`, weights
/// (connected layers put batchnorm after the weights).
pub fn encode_weights(
    graph: &NetworkGraph,
    header: &WeightsHeader,
    raw: &[Option<RawLayerWeights>],
) -> Result<Vec<u8>, FrontendError> {
    // Validates counts and batchnorm presence.
    WeightedNetwork::new(graph.clone(), raw.to_vec())?;
    let mut out = Vec::with_capacity(expected_len(graph, header));
    header.encode(&mut out);
    let mut put = |v: &[f32]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    for (spec, raw) in graph.layers().iter().zip(raw) {
        let Some(raw) = raw else { continue };
        let bn_parts = |bn: &BatchNormStats| [bn.gamma.clone(), bn.mean.clone(), bn.var.clone()];
        match spec.kind {
            LayerKind::Convolutional(_) => {
                put(&raw.biases);
                raw.batchnorm.iter().flat_map(bn_parts).for_each(|v| put(&v));
                put(&raw.weights);
            }
            LayerKind::Deconvolutional(p) => {
                put(&raw.biases);
                raw.batchnorm.iter().flat_map(bn_parts).for_each(|v| put(&v));
                put(&swap_leading(&raw.weights, p.filters, spec.in_dims.c, p.size * p.size));
            }
            LayerKind::Connected(_) => {
                put(&raw.biases);
                put(&raw.weights);
                raw.batchnorm.iter().flat_map(bn_parts).for_each(|v| put(&v));
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Loads a Darknet `.weights` image against `graph`. The file must be
/// consumed exactly.
pub fn load_weights(bytes: &[u8], graph: NetworkGraph) -> Result<WeightedNetwork, FrontendError> {
    let header = WeightsHeader::decode(bytes)?;
    let expected = expected_len(&graph, &header);
    if bytes.len() < expected {
        return Err(FrontendError::TruncatedFile { expected, got: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(FrontendError::TrailingBytes(bytes.len() - expected));
    }
    let mut cur = Cursor { bytes, pos: header.byte_len() };
    let mut raw = Vec::with_capacity(graph.layers().len());
    for spec in graph.layers() {
        let Some((nb, nw)) = param_counts(spec) else {
            raw.push(None);
            continue;
        };
        let bn_flag = spec.kind.batch_normalize();
        let read_bn = |cur: &mut Cursor| BatchNormStats {
            gamma: cur.floats(nb),
            mean: cur.floats(nb),
            var: cur.floats(nb),
        };
        let layer = match spec.kind {
            LayerKind::Convolutional(_) | LayerKind::Deconvolutional(_) => {
                let biases = cur.floats(nb);
                let batchnorm = bn_flag.then(|| read_bn(&mut cur));
                let mut weights = cur.floats(nw);
                if let LayerKind::Deconvolutional(p) = spec.kind {
                    weights = swap_leading(&weights, spec.in_dims.c, p.filters, p.size * p.size);
                }
                RawLayerWeights { weights, biases, batchnorm }
            }
            _ => {
                let biases = cur.floats(nb);
                let weights = cur.floats(nw);
                let batchnorm = bn_flag.then(|| read_bn(&mut cur));
                RawLayerWeights { weights, biases, batchnorm }
            }
        };
        raw.push(Some(layer));
    }
    debug_assert_eq!(cur.pos, bytes.len());
    WeightedNetwork::new(graph, raw)
}
