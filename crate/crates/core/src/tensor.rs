//! FP32 tensor and matrix containers plus the lowering kernels that turn
//! layer semantics into GEMM calls.
//!
//! Tensors are NCHW row-major with `w` fastest. Inference runs with `n == 1`.

use std::io::{Read, Write};

use thiserror::Error;

/// Leaky ReLU slope for negative inputs.
pub const LEAKY_SLOPE: f32 = 0.1;

/// Size in bytes of the raw tensor header (four little-endian `u32`s).
pub const RAW_HEADER_BYTES: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("raw tensor truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("raw tensor has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("i/o error: {0}")]
    Io(String),
}

fn mismatch(msg: impl Into<String>) -> TensorError {
    TensorError::DimMismatch(msg.into())
}

/// Dims of a 4-D tensor in `(n, c, h, w)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Dims4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Dims4,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Dims4, data: Vec<f32>) -> Result<Self, TensorError> {
        if dims.is_empty() {
            return Err(mismatch(format!("tensor dims {dims} must be positive")));
        }
        if data.len() != dims.len() {
            return Err(mismatch(format!(
                "tensor {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims4) -> Result<Self, TensorError> {
        Self::new(dims, vec![0.0; dims.len()])
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data, new dims with an identical element count.
    pub fn reshape(self, dims: Dims4) -> Result<Self, TensorError> {
        if dims.len() != self.data.len() {
            return Err(mismatch(format!("cannot reshape {} into {dims}", self.dims)));
        }
        Ok(Self { dims, data: self.data })
    }

    fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.dims.h + y) * self.dims.w + x]
    }

    /// Reads the raw format: `n,c,h,w` as little-endian `u32`, then the
    /// FP32 payload. The input must contain exactly one tensor.
    pub fn from_raw_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < RAW_HEADER_BYTES {
            return Err(TensorError::Truncated { expected: RAW_HEADER_BYTES, got: bytes.len() });
        }
        let word = |i: usize| {
            u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().expect("4-byte slice")) as usize
        };
        let dims = Dims4::new(word(0), word(1), word(2), word(3));
        let expected = RAW_HEADER_BYTES + dims.len() * 4;
        if bytes.len() < expected {
            return Err(TensorError::Truncated { expected, got: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(TensorError::TrailingBytes(bytes.len() - expected));
        }
        let data = bytes[RAW_HEADER_BYTES..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect();
        Self::new(dims, data)
    }

    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RAW_HEADER_BYTES + self.data.len() * 4);
        for d in [self.dims.n, self.dims.c, self.dims.h, self.dims.w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn read_raw<R: Read>(mut r: R) -> Result<Self, TensorError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| TensorError::Io(e.to_string()))?;
        Self::from_raw_bytes(&buf)
    }

    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        w.write_all(&self.to_raw_bytes()).map_err(|e| TensorError::Io(e.to_string()))
    }
}

/// Row-major FP32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if rows == 0 || cols == 0 {
            return Err(mismatch(format!("matrix dims {rows}x{cols} must be positive")));
        }
        if data.len() != rows * cols {
            return Err(mismatch(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, TensorError> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self, TensorError> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix { rows: self.cols, cols: self.rows, data }
    }

    /// Copies the listed rows (in the given order) into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Matrix, TensorError> {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            if r >= self.rows {
                return Err(mismatch(format!("row {r} out of range for {} rows", self.rows)));
            }
            data.extend_from_slice(self.row(r));
        }
        Matrix::new(rows.len(), self.cols, data)
    }

    /// Copies the listed columns (in the given order) into a new matrix.
    pub fn select_cols(&self, cols: &[usize]) -> Result<Matrix, TensorError> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.cols) {
            return Err(mismatch(format!("column {c} out of range for {} cols", self.cols)));
        }
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Matrix::new(self.rows, cols.len(), data)
    }
}

/// Output extent of a convolution window sweep along one axis.
///
/// Returns `None` unless `(input + 2*pad - size)` is non-negative and
/// divisible by `stride`.
pub fn conv_out_extent(input: usize, size: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = (input + 2 * pad).checked_sub(size)?;
    if stride == 0 || span % stride != 0 {
        return None;
    }
    Some(span / stride + 1)
}

struct Window {
    out_h: usize,
    out_w: usize,
}

fn window(
    c: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    pad: usize,
) -> Result<Window, TensorError> {
    if c == 0 || size == 0 {
        return Err(mismatch("channels and window size must be positive"));
    }
    let out_h = conv_out_extent(h, size, stride, pad);
    let out_w = conv_out_extent(w, size, stride, pad);
    match (out_h, out_w) {
        (Some(out_h), Some(out_w)) => Ok(Window { out_h, out_w }),
        _ => Err(mismatch(format!(
            "window size={size} stride={stride} pad={pad} does not tile {h}x{w}"
        ))),
    }
}

/// Gathers convolution windows into columns.
///
/// Row `(ch*size + ky)*size + kx`, column `oy*out_w + ox` holds the input at
/// `(ch, oy*stride + ky - pad, ox*stride + kx - pad)`, or 0.0 in the padding.
pub fn im2col(x: &Tensor, size: usize, stride: usize, pad: usize) -> Result<Matrix, TensorError> {
    let Dims4 { n, c, h, w } = x.dims();
    if n != 1 {
        return Err(mismatch(format!("im2col expects batch 1, got {n}")));
    }
    let Window { out_h, out_w } = window(c, h, w, size, stride, pad)?;
    let cols = out_h * out_w;
    let mut data = vec![0.0f32; c * size * size * cols];
    for ch in 0..c {
        for ky in 0..size {
            for kx in 0..size {
                let row = (ch * size + ky) * size + kx;
                let dst = &mut data[row * cols..(row + 1) * cols];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..out_w {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * out_w + ox] = x.at(ch, iy as usize, ix as usize);
                        }
                    }
                }
            }
        }
    }
    Matrix::new(c * size * size, cols, data)
}

/// Scatter-add adjoint of [`im2col`] into a `1 x c x h x w` tensor.
pub fn col2im(
    m: &Matrix,
    c: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor, TensorError> {
    let Window { out_h, out_w } = window(c, h, w, size, stride, pad)?;
    let cols = out_h * out_w;
    if m.rows() != c * size * size || m.cols() != cols {
        return Err(mismatch(format!(
            "col2im expects a {}x{} matrix, got {}x{}",
            c * size * size,
            cols,
            m.rows(),
            m.cols()
        )));
    }
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for ky in 0..size {
            for kx in 0..size {
                let row = (ch * size + ky) * size + kx;
                let src = m.row(row);
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..out_w {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out[(ch * h + iy as usize) * w + ix as usize] += src[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(Dims4::new(1, c, h, w), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Linear,
    Relu,
    Leaky,
    Logistic,
}

impl Activation {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Linear => v,
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::Leaky => {
                if v > 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
            Activation::Logistic => 1.0 / (1.0 + (-v).exp()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Leaky => "leaky",
            Activation::Logistic => "logistic",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "leaky" => Ok(Activation::Leaky),
            "logistic" => Ok(Activation::Logistic),
            other => Err(format!("unsupported activation '{other}'")),
        }
    }
}

pub fn activate(x: &Tensor, kind: Activation) -> Tensor {
    let mut out = x.clone();
    activate_in_place(&mut out, kind);
    out
}

pub fn activate_in_place(x: &mut Tensor, kind: Activation) {
    if kind != Activation::Linear {
        x.data_mut().iter_mut().for_each(|v| *v = kind.apply(*v));
    }
}

/// Output extent of a max-pool sweep: `floor((in + pad - size)/stride) + 1`.
pub fn maxpool_out_extent(input: usize, size: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 {
        return None;
    }
    Some((input + pad).checked_sub(size)? / stride + 1)
}

/// Window max with `-inf` padding. `pad` is the total padding; windows start
/// at `o*stride - pad/2`.
pub fn maxpool(x: &Tensor, size: usize, stride: usize, pad: usize) -> Result<Tensor, TensorError> {
    let Dims4 { n, c, h, w } = x.dims();
    if n != 1 {
        return Err(mismatch(format!("maxpool expects batch 1, got {n}")));
    }
    if size == 0 {
        return Err(mismatch("maxpool size must be positive"));
    }
    let (out_h, out_w) =
        match (maxpool_out_extent(h, size, stride, pad), maxpool_out_extent(w, size, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(mismatch(format!(
                    "maxpool size={size} stride={stride} pad={pad} does not fit {h}x{w}"
                )))
            }
        };
    let offset = (pad / 2) as isize;
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = f32::NEG_INFINITY;
                for ky in 0..size {
                    let iy = (oy * stride + ky) as isize - offset;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..size {
                        let ix = (ox * stride + kx) as isize - offset;
                        if ix >= 0 && ix < w as isize {
                            best = best.max(x.at(ch, iy as usize, ix as usize));
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(Dims4::new(1, c, out_h, out_w), out)
}

/// Global average pool: one value per channel.
pub fn avgpool(x: &Tensor) -> Result<Tensor, TensorError> {
    let Dims4 { n, c, h, w } = x.dims();
    if n != 1 {
        return Err(mismatch(format!("avgpool expects batch 1, got {n}")));
    }
    let plane = h * w;
    let out = x
        .data()
        .chunks_exact(plane)
        .map(|ch| ch.iter().sum::<f32>() / plane as f32)
        .collect();
    Tensor::new(Dims4::new(1, c, 1, 1), out)
}

/// Max-subtracted softmax over the channel axis of a `1 x c x 1 x 1` tensor.
pub fn softmax(x: &Tensor) -> Result<Tensor, TensorError> {
    let d = x.dims();
    if d.n != 1 || d.h != 1 || d.w != 1 {
        return Err(mismatch(format!("softmax expects 1xCx1x1, got {d}")));
    }
    let max = x.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = x.data().iter().map(|v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    Tensor::new(d, exps.into_iter().map(|e| e / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(c: usize, h: usize, w: usize, data: Vec<f32>) -> Tensor {
        Tensor::new(Dims4::new(1, c, h, w), data).unwrap()
    }

    #[test]
    fn im2col_pointwise_is_reshape() {
        let x = t(2, 2, 3, (0..12).map(|v| v as f32).collect());
        let m = im2col(&x, 1, 1, 0).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 6));
        assert_eq!(m.data(), x.data());
    }

    #[test]
    fn im2col_single_window() {
        let x = t(1, 3, 3, (1..=9).map(|v| v as f32).collect());
        let m = im2col(&x, 3, 1, 0).unwrap();
        assert_eq!((m.rows(), m.cols()), (9, 1));
        assert_eq!(m.data(), &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
    }

    #[test]
    fn im2col_padded_first_column() {
        let x = t(1, 2, 2, vec![1., 2., 3., 4.]);
        let m = im2col(&x, 3, 1, 1).unwrap();
        assert_eq!((m.rows(), m.cols()), (9, 4));
        let col0: Vec<f32> = (0..9).map(|r| m.get(r, 0)).collect();
        assert_eq!(col0, vec![0., 0., 0., 0., 1., 2., 0., 3., 4.]);
    }

    #[test]
    fn im2col_rejects_batch_and_bad_geometry() {
        let x = Tensor::zeros(Dims4::new(2, 1, 3, 3)).unwrap();
        assert!(matches!(im2col(&x, 1, 1, 0), Err(TensorError::DimMismatch(_))));
        let x = t(1, 2, 2, vec![0.; 4]);
        assert!(matches!(im2col(&x, 3, 2, 0), Err(TensorError::DimMismatch(_))));
    }

    #[test]
    fn col2im_pointwise_inverts_im2col() {
        let x = t(3, 2, 2, (0..12).map(|v| v as f32 * 0.5).collect());
        let back = col2im(&im2col(&x, 1, 1, 0).unwrap(), 3, 2, 2, 1, 1, 0).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn col2im_counts_overlaps() {
        // size 2, stride 1 on 3x3: corners in 1 window, edges in 2, center in 4.
        let x = t(1, 3, 3, vec![1.0; 9]);
        let back = col2im(&im2col(&x, 2, 1, 0).unwrap(), 1, 3, 3, 2, 1, 0).unwrap();
        assert_eq!(back.data(), &[1., 2., 1., 2., 4., 2., 1., 2., 1.]);
    }

    #[test]
    fn col2im_rejects_wrong_matrix() {
        let m = Matrix::zeros(4, 3).unwrap();
        assert!(matches!(col2im(&m, 1, 3, 3, 2, 1, 0), Err(TensorError::DimMismatch(_))));
    }

    #[test]
    fn activations() {
        assert_eq!(Activation::Leaky.apply(-1.0), -0.1);
        assert_eq!(Activation::Leaky.apply(2.0), 2.0);
        assert_eq!(Activation::Relu.apply(-3.0), 0.0);
        assert_eq!(Activation::Logistic.apply(0.0), 0.5);
        let x = t(1, 1, 3, vec![-1.0, 0.0, 5.0]);
        assert_eq!(activate(&x, Activation::Linear), x);
        assert!("tanh".parse::<Activation>().is_err());
    }

    #[test]
    fn pooling_and_softmax() {
        let x = t(1, 2, 2, vec![1., 2., 3., 4.]);
        assert_eq!(maxpool(&x, 2, 2, 0).unwrap().data(), &[4.0]);
        assert_eq!(maxpool(&x, 2, 2, 1).unwrap().data(), &[4.0]);
        let v = t(2, 3, 3, vec![0.75; 18]);
        assert_eq!(avgpool(&v).unwrap().data(), &[0.75, 0.75]);
        let s = softmax(&t(2, 1, 1, vec![0.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        assert!(softmax(&x).is_err());
    }

    #[test]
    fn maxpool_padding_is_negative_infinity() {
        let x = t(1, 2, 2, vec![-5., -6., -7., -8.]);
        // 3x3 windows over a 2x2 input with total padding 2 never see a zero.
        let y = maxpool(&x, 3, 1, 2).unwrap();
        assert_eq!(y.dims(), Dims4::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|v| *v == -5.0));
    }

    #[test]
    fn raw_io_round_trip_and_errors() {
        let x = t(2, 1, 2, vec![1.5, -2.0, f32::MIN_POSITIVE, 7.0]);
        let bytes = x.to_raw_bytes();
        assert_eq!(bytes.len(), 16 + 16);
        assert_eq!(Tensor::from_raw_bytes(&bytes).unwrap(), x);
        assert!(matches!(
            Tensor::from_raw_bytes(&bytes[..10]),
            Err(TensorError::Truncated { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(Tensor::from_raw_bytes(&extra), Err(TensorError::TrailingBytes(1)));
    }

    #[test]
    fn matrix_helpers() {
        let m = Matrix::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(m.transpose().data(), &[1., 4., 2., 5., 3., 6.]);
        assert_eq!(m.select_rows(&[1]).unwrap().data(), &[4., 5., 6.]);
        assert_eq!(m.select_cols(&[2, 0]).unwrap().data(), &[3., 1., 6., 4.]);
        assert!(Matrix::new(0, 3, vec![]).is_err());
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }
}
