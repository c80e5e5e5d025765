//! Dense matrices and the rectangular identity-pair construction.
//!
//! The pair generator draws a random wide matrix `H` (n x h, h > n), checks
//! full row rank, and forms the right inverse `H^T (H H^T)^{-1}`, so that
//! `H * H_inv = I_n` up to floating-point error. Splitting a linear layer
//! through such a pair leaves the composed map unchanged.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::math;
use crate::rng;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix construction",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// i.i.d. entries uniform on [-1, 1].
    pub fn random_uniform(rows: usize, cols: usize, rng: &mut rng::Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Mat { rows, cols, data }
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

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn scale(&self, factor: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self * other`, ikj loop order so the inner axis is contiguous.
    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matrix product",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Row vector times matrix: `x (1 x rows) * self -> (1 x cols)`.
    pub fn row_vec_mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "row-vector product",
                expected: self.rows,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (k, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = &self.data[k * self.cols..(k + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += xv * a;
            }
        }
        Ok(out)
    }

    /// Max absolute deviation from the identity matrix.
    pub fn identity_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max(math::abs(self.data[r * self.cols + c] - target));
            }
        }
        worst
    }

    /// Gauss-Jordan inverse with partial pivoting. Square matrices only.
    pub fn inverse(&self) -> Result<Mat> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch {
                context: "matrix inverse",
                expected: self.rows,
                got: self.cols,
            });
        }
        let n = self.rows;
        let mut a = self.data.clone();
        let mut inv = Mat::identity(n);
        for col in 0..n {
            let mut pivot = col;
            let mut best = math::abs(a[col * n + col]);
            for r in col + 1..n {
                let mag = math::abs(a[r * n + col]);
                if mag > best {
                    best = mag;
                    pivot = r;
                }
            }
            if best < 1e-300 {
                return Err(Error::Singular);
            }
            if pivot != col {
                for c in 0..n {
                    a.swap(col * n + c, pivot * n + c);
                    inv.data.swap(col * n + c, pivot * n + c);
                }
            }
            let p = a[col * n + col];
            for c in 0..n {
                a[col * n + c] /= p;
                inv.data[col * n + c] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[r * n + col];
                if factor == 0.0 {
                    continue;
                }
                for c in 0..n {
                    a[r * n + c] -= factor * a[col * n + c];
                    inv.data[r * n + c] -= factor * inv.data[col * n + c];
                }
            }
        }
        Ok(inv)
    }

    /// Full row rank check by pivoted elimination on a copy. The pivot floor
    /// is absolute; draws from uniform [-1, 1] have O(1) pivots.
    pub fn has_full_row_rank(&self, pivot_tol: f64) -> bool {
        let (n, h) = (self.rows, self.cols);
        if h < n {
            return false;
        }
        let mut a = self.data.clone();
        let mut pivot_col = 0;
        for row in 0..n {
            let mut found = false;
            while pivot_col < h {
                let mut pivot_row = row;
                let mut best = math::abs(a[row * h + pivot_col]);
                for r in row + 1..n {
                    let mag = math::abs(a[r * h + pivot_col]);
                    if mag > best {
                        best = mag;
                        pivot_row = r;
                    }
                }
                if best > pivot_tol {
                    if pivot_row != row {
                        for c in 0..h {
                            a.swap(row * h + c, pivot_row * h + c);
                        }
                    }
                    for r in row + 1..n {
                        let factor = a[r * h + pivot_col] / a[row * h + pivot_col];
                        if factor != 0.0 {
                            for c in pivot_col..h {
                                a[r * h + c] -= factor * a[row * h + c];
                            }
                        }
                    }
                    found = true;
                    pivot_col += 1;
                    break;
                }
                pivot_col += 1;
            }
            if !found {
                return false;
            }
        }
        true
    }
}

/// A wide matrix `H` together with its right inverse, `H * h_inv = I_n`.
#[derive(Debug, Clone)]
pub struct InvertiblePair {
    h: Mat,
    h_inv: Mat,
}

const RANK_PIVOT_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-10;
const RETRY_BUDGET: usize = 8;

impl InvertiblePair {
    /// Draw `H` (n x h) with i.i.d. uniform [-1, 1] entries, resampling until
    /// it has full row rank and the computed right inverse reproduces the
    /// identity within tolerance. Fails with [`Error::RankDeficient`] once
    /// the retry budget is exhausted.
    pub fn generate(n: usize, h: usize, seed: u64) -> Result<Self> {
        if n == 0 || h <= n {
            return Err(Error::InvalidShape { n, h });
        }
        let mut rng = rng::new_rng(seed);
        for _ in 0..RETRY_BUDGET {
            let cand = Mat::random_uniform(n, h, &mut rng);
            if !cand.has_full_row_rank(RANK_PIVOT_TOL) {
                continue;
            }
            if let Ok(pair) = Self::from_matrix(cand) {
                if pair.residual() <= RESIDUAL_TOL {
                    return Ok(pair);
                }
            }
        }
        Err(Error::RankDeficient {
            attempts: RETRY_BUDGET,
        })
    }

    /// Build the pair for a given `H` via `H^T (H H^T)^{-1}`, with Newton
    /// refinement of the Gram inverse when the residual warrants it.
    pub fn from_matrix(h: Mat) -> Result<Self> {
        let (n, width) = (h.rows(), h.cols());
        if n == 0 || width <= n {
            return Err(Error::InvalidShape { n, h: width });
        }
        let ht = h.transpose();
        let gram = h.matmul(&ht)?;
        let mut gram_inv = gram.inverse()?;
        // Newton step Z <- Z (2I - G Z); the iterate squares the residual.
        for _ in 0..2 {
            let gz = gram.matmul(&gram_inv)?;
            if gz.identity_residual() <= 1e-13 {
                break;
            }
            let mut two_i_minus = gz.scale(-1.0);
            for i in 0..n {
                let v = two_i_minus.at(i, i);
                two_i_minus.set(i, i, v + 2.0);
            }
            gram_inv = gram_inv.matmul(&two_i_minus)?;
        }
        let h_inv = ht.matmul(&gram_inv)?;
        Ok(InvertiblePair { h, h_inv })
    }

    pub fn n(&self) -> usize {
        self.h.rows()
    }

    pub fn h_dim(&self) -> usize {
        self.h.cols()
    }

    pub fn h(&self) -> &Mat {
        &self.h
    }

    pub fn h_inv(&self) -> &Mat {
        &self.h_inv
    }

    /// `max |H * h_inv - I|`.
    pub fn residual(&self) -> f64 {
        self.h
            .matmul(&self.h_inv)
            .expect("pair dimensions are consistent")
            .identity_residual()
    }
}
