//! Block-structured operators over DG coefficient vectors.
//!
//! Coefficient vectors are laid out element by element, so element-local
//! operators are block diagonal and face couplings are block sparse. Bundles
//! of fields are stored as column-major `DMatrix` values with one column per
//! component.

use nalgebra::DMatrix;
use rayon::prelude::*;

/// Block-diagonal operator with square dense blocks (row-major storage).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiag {
    pub block_size: usize,
    pub blocks: Vec<Vec<f64>>,
}

impl BlockDiag {
    pub fn identity(n_blocks: usize, block_size: usize) -> Self {
        let mut id = vec![0.0; block_size * block_size];
        for i in 0..block_size {
            id[i * block_size + i] = 1.0;
        }
        Self {
            block_size,
            blocks: vec![id; n_blocks],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.blocks.len() * self.block_size
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let bs = self.block_size;
        let mut y = vec![0.0; x.len()];
        for (e, b) in self.blocks.iter().enumerate() {
            let xs = &x[e * bs..(e + 1) * bs];
            let ys = &mut y[e * bs..(e + 1) * bs];
            for k in 0..bs {
                let row = &b[k * bs..(k + 1) * bs];
                ys[k] = row.iter().zip(xs).map(|(a, b)| a * b).sum();
            }
        }
        y
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n_rows());
        let n = x.nrows();
        let mut y = DMatrix::zeros(n, x.ncols());
        y.as_mut_slice()
            .par_chunks_mut(n.max(1))
            .zip(x.as_slice().par_chunks(n.max(1)))
            .for_each(|(yc, xc)| {
                let r = self.apply_vec(xc);
                yc.copy_from_slice(&r);
            });
        y
    }

    /// Inverts every block; returns the offending block index on failure.
    pub fn inverse(&self) -> Result<Self, usize> {
        let bs = self.block_size;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (e, b) in self.blocks.iter().enumerate() {
            let m = DMatrix::from_row_slice(bs, bs, b);
            let inv = m.try_inverse().ok_or(e)?;
            let mut out = vec![0.0; bs * bs];
            for i in 0..bs {
                for j in 0..bs {
                    out[i * bs + j] = inv[(i, j)];
                }
            }
            blocks.push(out);
        }
        Ok(Self {
            block_size: bs,
            blocks,
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_rows();
        let bs = self.block_size;
        let mut m = DMatrix::zeros(n, n);
        for (e, b) in self.blocks.iter().enumerate() {
            for i in 0..bs {
                for j in 0..bs {
                    m[(e * bs + i, e * bs + j)] = b[i * bs + j];
                }
            }
        }
        m
    }
}

/// Block-sparse square operator: for each block row, a list of
/// `(block column, dense row-major block)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparse {
    pub block_size: usize,
    pub rows: Vec<Vec<(usize, Vec<f64>)>>,
}

impl BlockSparse {
    pub fn zeros(n_blocks: usize, block_size: usize) -> Self {
        Self {
            block_size,
            rows: vec![Vec::new(); n_blocks],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len() * self.block_size
    }

    /// Accumulates `block` into position (`i`, `j`).
    pub fn add_block(&mut self, i: usize, j: usize, block: &[f64]) {
        let bs = self.block_size;
        debug_assert_eq!(block.len(), bs * bs);
        if let Some((_, b)) = self.rows[i].iter_mut().find(|(c, _)| *c == j) {
            for (dst, src) in b.iter_mut().zip(block) {
                *dst += src;
            }
        } else {
            self.rows[i].push((j, block.to_vec()));
        }
    }

    pub fn finalize(&mut self) {
        for row in &mut self.rows {
            row.sort_by_key(|(c, _)| *c);
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let bs = self.block_size;
        let mut y = vec![0.0; x.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let ys = &mut y[i * bs..(i + 1) * bs];
            for (j, b) in row {
                let xs = &x[j * bs..(j + 1) * bs];
                for k in 0..bs {
                    let br = &b[k * bs..(k + 1) * bs];
                    let mut acc = 0.0;
                    for l in 0..bs {
                        acc += br[l] * xs[l];
                    }
                    ys[k] += acc;
                }
            }
        }
        y
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n_rows());
        let n = x.nrows();
        let mut y = DMatrix::zeros(n, x.ncols());
        y.as_mut_slice()
            .par_chunks_mut(n.max(1))
            .zip(x.as_slice().par_chunks(n.max(1)))
            .for_each(|(yc, xc)| {
                let r = self.apply_vec(xc);
                yc.copy_from_slice(&r);
            });
        y
    }

    pub fn transpose(&self) -> Self {
        let bs = self.block_size;
        let mut t = Self::zeros(self.rows.len(), bs);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, b) in row {
                let mut bt = vec![0.0; bs * bs];
                for k in 0..bs {
                    for l in 0..bs {
                        bt[l * bs + k] = b[k * bs + l];
                    }
                }
                t.add_block(*j, i, &bt);
            }
        }
        t.finalize();
        t
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_rows();
        let bs = self.block_size;
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, b) in row {
                for k in 0..bs {
                    for l in 0..bs {
                        m[(i * bs + k, j * bs + l)] += b[k * bs + l];
                    }
                }
            }
        }
        m
    }
}

/// Compressed sparse row matrix assembled from triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|k| self.vals[k] * x[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.cols[k] == i)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[k])] += self.vals[k];
            }
        }
        m
    }
}

/// Weighted inner products `a^T W b` for all column pairs.
pub fn gram(a: &DMatrix<f64>, wb: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * wb
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
