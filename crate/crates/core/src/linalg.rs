//! Block vectors, dense linear blocks, sparse block operator matrices and
//! diagonal metrics, plus the preconditioned operator norm used by every
//! step-size condition.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Iteration cap of the power method in [`scaled_norm`].
pub const POWER_ITERATION_CAP: usize = 10_000;

/// Seed of the default power-iteration start vector.
pub const DEFAULT_NORM_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("block {index} has zero dimension")]
    EmptyBlock { index: usize },
    #[error("block ({row}, {col}) lies outside a {rows}x{cols} block grid")]
    BlockOutOfRange { row: usize, col: usize, rows: usize, cols: usize },
    #[error("block ({row}, {col}) given twice")]
    DuplicateBlock { row: usize, col: usize },
    #[error("row {0} of the block operator has no nonzero block")]
    EmptyRow(usize),
    #[error("column {0} of the block operator has no nonzero block")]
    EmptyColumn(usize),
    #[error("metric entry {value} in block {block} is not a positive finite number")]
    NonPositiveMetric { block: usize, value: f64 },
    #[error("power iteration stalled after {iterations} iterations with the norm in [{lower}, {upper}]")]
    NotConverged { iterations: usize, lower: f64, upper: f64 },
}

fn check_len(expected: usize, got: usize) -> Result<(), LinalgError> {
    if expected == got {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch { expected, got })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Element of a product of finite-dimensional spaces, stored block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    blocks: Vec<Vec<f64>>,
}

impl BlockVector {
    pub fn new(blocks: Vec<Vec<f64>>) -> Result<Self, LinalgError> {
        if let Some(index) = blocks.iter().position(|b| b.is_empty()) {
            return Err(LinalgError::EmptyBlock { index });
        }
        Ok(Self { blocks })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self { blocks: dims.iter().map(|&d| vec![0.0; d]).collect() }
    }

    pub fn from_flat(dims: &[usize], data: &[f64]) -> Result<Self, LinalgError> {
        check_len(dims.iter().sum(), data.len())?;
        let mut blocks = Vec::with_capacity(dims.len());
        let mut offset = 0;
        for (index, &d) in dims.iter().enumerate() {
            if d == 0 {
                return Err(LinalgError::EmptyBlock { index });
            }
            blocks.push(data[offset..offset + d].to_vec());
            offset += d;
        }
        Ok(Self { blocks })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.blocks[i]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        self.blocks
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    pub fn check_shape(&self, dims: &[usize]) -> Result<(), LinalgError> {
        check_len(dims.len(), self.blocks.len())?;
        for (b, &d) in self.blocks.iter().zip(dims) {
            check_len(d, b.len())?;
        }
        Ok(())
    }

    pub fn dot(&self, other: &BlockVector) -> Result<f64, LinalgError> {
        other.check_shape(&self.dims())?;
        Ok(self.blocks.iter().zip(&other.blocks).map(|(a, b)| dot(a, b)).sum())
    }

    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(|b| dot(b, b)).sum::<f64>().sqrt()
    }

    pub fn dist(&self, other: &BlockVector) -> Result<f64, LinalgError> {
        other.check_shape(&self.dims())?;
        let sq: f64 = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .sum();
        Ok(sq.sqrt())
    }
}

/// Dense row-major linear map between two finite-dimensional spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBlock {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LinearBlock {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 {
            return Err(LinalgError::EmptyBlock { index: 0 });
        }
        if cols == 0 {
            return Err(LinalgError::EmptyBlock { index: 1 });
        }
        check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        for r in rows {
            check_len(cols, r.len())?;
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = s;
        }
        Self { rows: n, cols: n, data }
    }

    /// Map `x` to the `copy`-th slot of a stack of `copies` vectors of size `dim`.
    pub fn selection(copies: usize, dim: usize, copy: usize) -> Self {
        assert!(copy < copies);
        let mut data = vec![0.0; copies * dim * dim];
        for i in 0..dim {
            data[(copy * dim + i) * dim + i] = 1.0;
        }
        Self { rows: copies * dim, cols: dim, data }
    }

    /// First-difference operator `(x_{i+1} - x_i)_i` from `R^n` to `R^{n-1}`.
    pub fn first_difference(n: usize) -> Self {
        assert!(n >= 2);
        let mut data = vec![0.0; (n - 1) * n];
        for i in 0..n - 1 {
            data[i * n + i] = -1.0;
            data[i * n + i + 1] = 1.0;
        }
        Self { rows: n - 1, cols: n, data }
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self, LinalgError> {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self::new(m.nrows(), m.ncols(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&a| a == 0.0)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Self { rows: self.cols, cols: self.rows, data }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * s).collect() }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        check_len(self.cols, x.len())?;
        let mut out = vec![0.0; self.rows];
        self.apply_add(x, &mut out);
        Ok(out)
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        check_len(self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        self.apply_transpose_add(v, &mut out);
        Ok(out)
    }

    /// `out += L x`; shapes are the caller's responsibility.
    pub fn apply_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += L^T v`; shapes are the caller's responsibility.
    pub fn apply_transpose_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&vr, row) in v.iter().zip(self.data.chunks_exact(self.cols)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vr;
            }
        }
    }

    /// Spectral norm from a dense SVD.
    pub fn operator_norm(&self) -> f64 {
        self.to_dmatrix().singular_values().max()
    }

    /// `|| diag(u)^{1/2} L diag(w)^{1/2} ||` from a dense SVD.
    pub fn scaled_operator_norm(&self, w: &[f64], u: &[f64]) -> f64 {
        debug_assert_eq!(w.len(), self.cols);
        debug_assert_eq!(u.len(), self.rows);
        let mut m = self.to_dmatrix();
        for r in 0..self.rows {
            for c in 0..self.cols {
                m[(r, c)] *= u[r].sqrt() * w[c].sqrt();
            }
        }
        m.singular_values().max()
    }
}

/// Block operator `L = [L_{k,j}]` with only nonzero blocks stored.
///
/// Rows index dual blocks `k`, columns index primal blocks `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperatorMatrix {
    row_dims: Vec<usize>,
    col_dims: Vec<usize>,
    blocks: BTreeMap<(usize, usize), LinearBlock>,
    row_support: Vec<Vec<usize>>,
    col_support: Vec<Vec<usize>>,
}

impl BlockOperatorMatrix {
    /// Builds the operator from `(row, col, block)` triples. All-zero blocks
    /// are dropped; every row and column must keep at least one block.
    pub fn new(
        row_dims: Vec<usize>,
        col_dims: Vec<usize>,
        entries: impl IntoIterator<Item = (usize, usize, LinearBlock)>,
    ) -> Result<Self, LinalgError> {
        for (index, &d) in row_dims.iter().chain(&col_dims).enumerate() {
            if d == 0 {
                return Err(LinalgError::EmptyBlock { index });
            }
        }
        let (rows, cols) = (row_dims.len(), col_dims.len());
        let mut blocks = BTreeMap::new();
        for (row, col, block) in entries {
            if row >= rows || col >= cols {
                return Err(LinalgError::BlockOutOfRange { row, col, rows, cols });
            }
            check_len(row_dims[row], block.rows)?;
            check_len(col_dims[col], block.cols)?;
            if blocks.contains_key(&(row, col)) {
                return Err(LinalgError::DuplicateBlock { row, col });
            }
            if !block.is_zero() {
                blocks.insert((row, col), block);
            }
        }
        let mut row_support = vec![Vec::new(); rows];
        let mut col_support = vec![Vec::new(); cols];
        for &(k, j) in blocks.keys() {
            row_support[k].push(j);
            col_support[j].push(k);
        }
        if let Some(k) = row_support.iter().position(Vec::is_empty) {
            return Err(LinalgError::EmptyRow(k));
        }
        if let Some(j) = col_support.iter().position(Vec::is_empty) {
            return Err(LinalgError::EmptyColumn(j));
        }
        Ok(Self { row_dims, col_dims, blocks, row_support, col_support })
    }

    pub fn num_rows(&self) -> usize {
        self.row_dims.len()
    }

    pub fn num_cols(&self) -> usize {
        self.col_dims.len()
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    pub fn block(&self, k: usize, j: usize) -> Option<&LinearBlock> {
        self.blocks.get(&(k, j))
    }

    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, &LinearBlock)> {
        self.blocks.iter().map(|(&(k, j), b)| (k, j, b))
    }

    /// Columns `j` with `L_{k,j} != 0`.
    pub fn row_support(&self, k: usize) -> &[usize] {
        &self.row_support[k]
    }

    /// Rows `k` with `L_{k,j} != 0`.
    pub fn col_support(&self, j: usize) -> &[usize] {
        &self.col_support[j]
    }

    /// `sum_{j in row k} L_{k,j} x_j`, reading only the supported `x_j`.
    pub fn row_apply(&self, k: usize, x: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.row_dims[k]];
        for &j in &self.row_support[k] {
            self.blocks[&(k, j)].apply_add(&x[j], &mut out);
        }
        out
    }

    /// `sum_{k in column j} L_{k,j}^T v_k`, reading only the supported `v_k`.
    pub fn col_adjoint_apply(&self, j: usize, v: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.col_dims[j]];
        for &k in &self.col_support[j] {
            self.blocks[&(k, j)].apply_transpose_add(&v[k], &mut out);
        }
        out
    }

    pub fn apply(&self, x: &BlockVector) -> Result<BlockVector, LinalgError> {
        x.check_shape(&self.col_dims)?;
        let blocks = (0..self.num_rows()).map(|k| self.row_apply(k, x.blocks())).collect();
        Ok(BlockVector { blocks })
    }

    pub fn adjoint_apply(&self, v: &BlockVector) -> Result<BlockVector, LinalgError> {
        v.check_shape(&self.row_dims)?;
        let blocks = (0..self.num_cols()).map(|j| self.col_adjoint_apply(j, v.blocks())).collect();
        Ok(BlockVector { blocks })
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        let row_off = offsets(&self.row_dims);
        let col_off = offsets(&self.col_dims);
        let mut m = DMatrix::zeros(row_off[self.num_rows()], col_off[self.num_cols()]);
        for (&(k, j), b) in &self.blocks {
            for r in 0..b.rows {
                for c in 0..b.cols {
                    m[(row_off[k] + r, col_off[j] + c)] = b.get(r, c);
                }
            }
        }
        m
    }
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    out.push(0);
    for d in dims {
        acc += d;
        out.push(acc);
    }
    out
}

/// Positive diagonal metric, one diagonal per block.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMetric {
    blocks: Vec<Vec<f64>>,
}

impl DiagonalMetric {
    pub fn new(blocks: Vec<Vec<f64>>) -> Result<Self, LinalgError> {
        for (block, b) in blocks.iter().enumerate() {
            if b.is_empty() {
                return Err(LinalgError::EmptyBlock { index: block });
            }
            if let Some(&value) = b.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
                return Err(LinalgError::NonPositiveMetric { block, value });
            }
        }
        Ok(Self { blocks })
    }

    pub fn scalar(dims: &[usize], s: f64) -> Result<Self, LinalgError> {
        Self::new(dims.iter().map(|&d| vec![s; d]).collect())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    /// Operator norm of block `i`, i.e. its largest diagonal entry.
    pub fn max_diag(&self, i: usize) -> f64 {
        self.blocks[i].iter().copied().fold(0.0, f64::max)
    }
}

/// `|| U^{1/2} L W^{1/2} ||` by power iteration on `W^{1/2} L^T U L W^{1/2}`.
///
/// Stops once successive Rayleigh quotients differ by less than
/// `tol * current`.
pub fn scaled_norm(
    l: &BlockOperatorMatrix,
    w: &DiagonalMetric,
    u: &DiagonalMetric,
    tol: f64,
) -> Result<f64, LinalgError> {
    scaled_norm_seeded(l, w, u, tol, DEFAULT_NORM_SEED)
}

/// [`scaled_norm`] with an explicit seed for the start-vector perturbation.
///
/// The start vector is the all-ones vector plus a seeded perturbation in
/// `[-1/2, 1/2]`; the pure all-ones vector is annihilated by difference
/// operators.
pub fn scaled_norm_seeded(
    l: &BlockOperatorMatrix,
    w: &DiagonalMetric,
    u: &DiagonalMetric,
    tol: f64,
    seed: u64,
) -> Result<f64, LinalgError> {
    check_len(l.num_cols(), w.num_blocks())?;
    check_len(l.num_rows(), u.num_blocks())?;
    for (j, &d) in l.col_dims().iter().enumerate() {
        check_len(d, w.block(j).len())?;
    }
    for (k, &d) in l.row_dims().iter().enumerate() {
        check_len(d, u.block(k).len())?;
    }
    let w_sqrt: Vec<Vec<f64>> = w.blocks().iter().map(|b| b.iter().map(|a| a.sqrt()).collect()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Vec<f64>> =
        l.col_dims().iter().map(|&d| (0..d).map(|_| 1.0 + rng.random_range(-0.5..0.5)).collect()).collect();
    let nx = x.iter().map(|b| dot(b, b)).sum::<f64>().sqrt();
    x.iter_mut().flatten().for_each(|a| *a /= nx);

    let mut prev = f64::NAN;
    let mut t = x.clone();
    for it in 1..=POWER_ITERATION_CAP {
        for (tj, (xj, sj)) in t.iter_mut().zip(x.iter().zip(&w_sqrt)) {
            for (a, (b, s)) in tj.iter_mut().zip(xj.iter().zip(sj)) {
                *a = b * s;
            }
        }
        let mut s: Vec<Vec<f64>> = (0..l.num_rows()).map(|k| l.row_apply(k, &t)).collect();
        for (sk, uk) in s.iter_mut().zip(u.blocks()) {
            sk.iter_mut().zip(uk).for_each(|(a, b)| *a *= b);
        }
        let mut y: Vec<Vec<f64>> = (0..l.num_cols()).map(|j| l.col_adjoint_apply(j, &s)).collect();
        for (yj, sj) in y.iter_mut().zip(&w_sqrt) {
            yj.iter_mut().zip(sj).for_each(|(a, b)| *a *= b);
        }
        let rq: f64 = x.iter().zip(&y).map(|(a, b)| dot(a, b)).sum();
        let ny = y.iter().map(|b| dot(b, b)).sum::<f64>().sqrt();
        if ny == 0.0 {
            return Ok(0.0);
        }
        if (rq - prev).abs() < tol * rq {
            return Ok(rq.max(0.0).sqrt());
        }
        if it == POWER_ITERATION_CAP {
            return Err(LinalgError::NotConverged {
                iterations: it,
                lower: prev.min(rq).max(0.0).sqrt(),
                upper: prev.max(rq).max(0.0).sqrt(),
            });
        }
        prev = rq;
        for (xj, yj) in x.iter_mut().zip(&y) {
            xj.iter_mut().zip(yj).for_each(|(a, b)| *a = b / ny);
        }
    }
    unreachable!()
}

/// Upper bound `(sum_{k,j} || U_k^{1/2} L_{k,j} W_j^{1/2} ||^2)^{1/2}` on
/// [`scaled_norm`], with each block norm from a dense SVD.
pub fn scaled_norm_bound(l: &BlockOperatorMatrix, w: &DiagonalMetric, u: &DiagonalMetric) -> Result<f64, LinalgError> {
    check_len(l.num_cols(), w.num_blocks())?;
    check_len(l.num_rows(), u.num_blocks())?;
    let mut sq = 0.0;
    for (k, j, b) in l.blocks() {
        check_len(b.cols(), w.block(j).len())?;
        check_len(b.rows(), u.block(k).len())?;
        sq += b.scaled_operator_norm(w.block(j), u.block(k)).powi(2);
    }
    Ok(sq.sqrt())
}
