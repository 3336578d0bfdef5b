//! Flat parameter vector layout.
//!
//! Matrix parameters come first, as the row-wise vectorization of the
//! horizontally stacked blocks `[M_0 | M_1 | ... | M_np]`; entries of
//! structurally zero `D` blocks are skipped. Net parameters follow, layer by
//! layer with weights row-wise and then biases.

use super::lpv::Dims;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    dims: Dims,
    d_zero: bool,
    n_matrix: usize,
    n_net: usize,
    /// `index[(j * rows + r) * cols + c]` is the packed position of `M_j[r, c]`.
    index: Vec<Option<usize>>,
}

impl ParamLayout {
    pub fn new(dims: Dims, d_zero: bool, n_net: usize) -> Self {
        let (rows, cols) = (dims.block_rows(), dims.block_cols());
        let blocks = dims.n_p + 1;
        let mut index = vec![None; blocks * rows * cols];
        let mut next = 0;
        for r in 0..rows {
            for j in 0..blocks {
                for c in 0..cols {
                    if d_zero && r >= dims.n_x && c >= dims.n_x {
                        continue;
                    }
                    index[(j * rows + r) * cols + c] = Some(next);
                    next += 1;
                }
            }
        }
        Self {
            dims,
            d_zero,
            n_matrix: next,
            n_net,
            index,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn d_zero(&self) -> bool {
        self.d_zero
    }

    /// Total length `n_theta`.
    pub fn len(&self) -> usize {
        self.n_matrix + self.n_net
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matrix_len(&self) -> usize {
        self.n_matrix
    }

    pub fn net_len(&self) -> usize {
        self.n_net
    }

    pub fn net_offset(&self) -> usize {
        self.n_matrix
    }

    /// Packed index of `M_block[row, col]`, `None` for a structural zero.
    #[inline]
    pub fn matrix_index(&self, block: usize, row: usize, col: usize) -> Option<usize> {
        let (rows, cols) = (self.dims.block_rows(), self.dims.block_cols());
        self.index[(block * rows + row) * cols + col]
    }

    /// Dense table indexed like the model's block storage.
    pub(crate) fn dense_index(&self) -> &[Option<usize>] {
        &self.index
    }

    /// Packed indices of all free entries of one block, in row-major order.
    pub fn block_indices(&self, block: usize) -> Vec<usize> {
        let (rows, cols) = (self.dims.block_rows(), self.dims.block_cols());
        let mut out = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if let Some(i) = self.matrix_index(block, r, c) {
                    out.push(i);
                }
            }
        }
        out
    }
}
