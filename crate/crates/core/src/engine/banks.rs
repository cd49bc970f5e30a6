//! Memory-bank interleaving and bus-word packing.
//!
//! Every tile transfer is split across all banks: tile row `r` of an A tile
//! (column `j` of a B tile) travels on bank `r % n_banks`.

use crate::tensor::{Matrix, TensorError};

/// Round-robin partition of `m`'s rows: row `i` goes to bank `i % n_banks`.
///
/// The sets are disjoint, ascending, and together cover every row.
pub fn bank_partition(m: &Matrix, n_banks: usize) -> Vec<Vec<usize>> {
    partition_indices(m.rows(), n_banks)
}

pub fn partition_indices(count: usize, n_banks: usize) -> Vec<Vec<usize>> {
    assert!(n_banks >= 1, "n_banks must be positive");
    (0..n_banks).map(|b| (b..count).step_by(n_banks).collect()).collect()
}

/// Reassembles rows split by [`bank_partition`] back into one matrix.
pub fn merge_partitions(
    parts: &[Matrix],
    sets: &[Vec<usize>],
    cols: usize,
) -> Result<Matrix, TensorError> {
    let rows: usize = sets.iter().map(Vec::len).sum();
    let mut data = vec![0.0f32; rows * cols];
    for (part, set) in parts.iter().zip(sets) {
        for (local, &row) in set.iter().enumerate() {
            data[row * cols..(row + 1) * cols].copy_from_slice(part.row(local));
        }
    }
    Matrix::new(rows, cols, data)
}

/// Number of indices in `0..count` owned by `bank`.
pub fn lanes_for_bank(count: usize, bank: usize, n_banks: usize) -> usize {
    (count + n_banks - 1 - bank) / n_banks
}

/// Full-width bus words needed for `count_fp32` floats.
pub fn pack_bus_words(count_fp32: u64, bus_width_bits: usize) -> u64 {
    let lanes = (bus_width_bits / 32).max(1) as u64;
    count_fp32.div_ceil(lanes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_bank_holds_everything() {
        let m = Matrix::zeros(5, 2).unwrap();
        assert_eq!(bank_partition(&m, 1), vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn round_robin() {
        let m = Matrix::zeros(4, 3).unwrap();
        assert_eq!(bank_partition(&m, 2), vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(partition_indices(2, 4), vec![vec![0], vec![1], vec![], vec![]]);
        for count in 0..20 {
            for nb in 1..6 {
                let sizes: Vec<_> = partition_indices(count, nb).iter().map(Vec::len).collect();
                let expected: Vec<_> = (0..nb).map(|b| lanes_for_bank(count, b, nb)).collect();
                assert_eq!(sizes, expected);
            }
        }
    }

    #[test]
    fn bus_words() {
        assert_eq!(pack_bus_words(16, 512), 1);
        assert_eq!(pack_bus_words(17, 512), 2);
        assert_eq!(pack_bus_words(0, 512), 0);
        assert_eq!(pack_bus_words(2048 * 4096, 512), 524_288);
        assert_eq!(pack_bus_words(3, 32), 3);
    }
}
