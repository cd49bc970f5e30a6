use super::config::EngineError;
use crate::tensor::Matrix;

/// Naive triple-loop GEMM: one FP32 accumulator per output element, summed
/// in ascending `k`. This ordering is the contract the streamed engine
/// reproduces bit for bit.
pub fn gemm_reference(a: &Matrix, b: &Matrix) -> Result<Matrix, EngineError> {
    if a.cols() != b.rows() {
        return Err(EngineError::DimMismatch(format!(
            "A is {}x{} but B is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let mut acc = 0.0f32;
            for (kk, &aik) in arow.iter().enumerate() {
                acc += aik * bd[kk * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    Ok(Matrix::new(m, n, c)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_exact() {
        let b = Matrix::new(2, 3, vec![0.1, -2.5, 1e-30, 3.0, f32::MAX, -0.0]).unwrap();
        let c = gemm_reference(&Matrix::identity(2).unwrap(), &b).unwrap();
        for (x, y) in c.data().iter().zip(b.data()) {
            // -0.0 becomes +0.0 because accumulation starts from +0.0.
            assert!(x.to_bits() == y.to_bits() || (*x == 0.0 && *y == 0.0));
        }
    }

    #[test]
    fn hand_computed() {
        let a = Matrix::new(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let b = Matrix::new(2, 2, vec![5., 6., 7., 8.]).unwrap();
        assert_eq!(gemm_reference(&a, &b).unwrap().data(), &[19., 22., 43., 50.]);
    }

    #[test]
    fn zero_a() {
        let a = Matrix::zeros(3, 2).unwrap();
        let b = Matrix::new(2, 2, vec![1., 2., 3., 4.]).unwrap();
        assert!(gemm_reference(&a, &b).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_mismatch() {
        let a = Matrix::zeros(2, 3).unwrap();
        assert!(matches!(gemm_reference(&a, &a), Err(EngineError::DimMismatch(_))));
    }
}
