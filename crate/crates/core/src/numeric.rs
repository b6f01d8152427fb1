//! Dense linear algebra, log-domain helpers and scaled-probability vectors.
//!
//! All inference runs in linear probability space so that the low-rank
//! reordering `U (V^T b)` stays exact. Underflow over long chains is handled by
//! [`ScaledVector`], which keeps a separate natural-log scale factor next to a
//! vector whose largest entry is kept in `[0.5, 1)`.

use crate::{Error, Result};

/// Default singular-value threshold for [`estimate_rank`].
pub const RANK_THRESHOLD: f64 = 1e-5;

/// A nonnegative vector standing for `values * exp(log_scale)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledVector {
    values: Vec<f64>,
    log_scale: f64,
}

impl ScaledVector {
    pub fn new(values: Vec<f64>, log_scale: f64) -> Result<Self> {
        if !log_scale.is_finite() {
            return Err(Error::NonFinite("scaled vector log scale"));
        }
        for &v in &values {
            if !v.is_finite() {
                return Err(Error::NonFinite("scaled vector"));
            }
            if v < 0.0 {
                return Err(Error::Negative("scaled vector"));
            }
        }
        Ok(Self { values, log_scale })
    }

    /// Wraps values already known to be finite and nonnegative.
    pub(crate) fn from_raw(values: Vec<f64>, log_scale: f64) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self { values, log_scale }
    }

    pub fn ones(len: usize) -> Self {
        Self::from_raw(vec![1.0; len], 0.0)
    }

    pub fn zeros(len: usize) -> Self {
        Self::from_raw(vec![0.0; len], 0.0)
    }

    /// Builds a renormalized vector from log-domain entries (`-inf` allowed).
    pub fn from_log(log_values: &[f64]) -> Self {
        let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Self::zeros(log_values.len());
        }
        let values = log_values.iter().map(|&v| (v - max).exp()).collect();
        let mut out = Self::from_raw(values, max);
        out.renormalize();
        out
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Rescales by an exact power of two so the largest entry lands in `[0.5, 1)`.
    pub fn renormalize(&mut self) {
        self.log_scale += rescale_pow2(&mut self.values);
    }

    /// Natural log of the represented quantity's entry sum.
    pub fn log_sum(&self) -> f64 {
        let s: f64 = self.values.iter().sum();
        if s == 0.0 {
            f64::NEG_INFINITY
        } else {
            s.ln() + self.log_scale
        }
    }

    /// Entries of the represented vector, `values * exp(log_scale)`.
    pub fn to_linear(&self) -> Vec<f64> {
        let k = self.log_scale.exp();
        self.values.iter().map(|v| v * k).collect()
    }

    /// Accumulates `other` into `self`, aligning scales first.
    pub fn add_assign(&mut self, other: &ScaledVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(shape("scaled vector add", self.len(), other.len()));
        }
        if other.is_zero() {
            return Ok(());
        }
        if self.is_zero() {
            self.values.copy_from_slice(&other.values);
            self.log_scale = other.log_scale;
            return Ok(());
        }
        if other.log_scale <= self.log_scale {
            let k = (other.log_scale - self.log_scale).exp();
            for (a, b) in self.values.iter_mut().zip(&other.values) {
                *a += k * b;
            }
        } else {
            let k = (self.log_scale - other.log_scale).exp();
            for (a, b) in self.values.iter_mut().zip(&other.values) {
                *a = k * *a + b;
            }
            self.log_scale = other.log_scale;
        }
        Ok(())
    }

    /// Entrywise product with a nonnegative vector.
    pub fn hadamard_in_place(&mut self, weights: &[f64]) {
        debug_assert_eq!(weights.len(), self.values.len());
        for (v, w) in self.values.iter_mut().zip(weights) {
            *v *= w;
        }
    }

    pub fn add_log_scale(&mut self, delta: f64) {
        self.log_scale += delta;
    }
}

/// Scales `values` by a power of two so the maximum lands in `[0.5, 1)` and
/// returns the natural log of the factor removed. All-zero input is untouched.
pub(crate) fn rescale_pow2(values: &mut [f64]) -> f64 {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    let exp = binary_exponent(max);
    if exp == 0 {
        return 0.0;
    }
    // Subnormal maxima need a factor beyond 2^1023; apply it in two exact steps.
    let (f1, f2) = if -exp > 1000 {
        (pow2(1000), pow2(-exp - 1000))
    } else {
        (pow2(-exp), 1.0)
    };
    for v in values.iter_mut() {
        *v = *v * f1 * f2;
    }
    exp as f64 * std::f64::consts::LN_2
}

/// `e` such that `x * 2^-e` lies in `[0.5, 1)`, for finite positive `x`.
fn binary_exponent(x: f64) -> i32 {
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        // Subnormal: normalize through a multiplication that is exact.
        return binary_exponent(x * pow2(64)) - 64;
    }
    biased - 1022
}

fn pow2(e: i32) -> f64 {
    // Split so each factor stays a normal double.
    if e > 1000 {
        pow2(1000) * pow2(e - 1000)
    } else if e < -1000 {
        pow2(-1000) * pow2(e + 1000)
    } else {
        f64::from_bits(((e + 1023) as u64) << 52)
    }
}

fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

/// Row-major dense matrix of finite reals.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape(
                "dense matrix",
                format!("{rows}x{cols} = {} entries", rows * cols),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Wraps a buffer without the finiteness check, for internal tables that
    /// may hold `-inf` log-probabilities.
    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(shape("dense matrix rows", c, bad.len()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    /// Checks that every row sums to one within `tol`.
    pub fn check_row_stochastic(&self, what: &'static str, tol: f64) -> Result<()> {
        if !self.is_nonnegative() {
            return Err(Error::Negative(what));
        }
        for (row, sum) in self.row_sums().into_iter().enumerate() {
            if (sum - 1.0).abs() > tol {
                return Err(Error::NotNormalized { what, row, sum });
            }
        }
        Ok(())
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(shape("matmul", self.cols, other.rows));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            Operand::row_major(&self.data, self.cols),
            Operand::row_major(&other.data, other.cols),
            &mut out.data,
            0.0,
        );
        Ok(out)
    }
}

/// Independent seed for stream `stream` of a base seed (SplitMix64 finalizer),
/// so derived streams do not depend on the order they are consumed in.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `log(sum(exp(v)))` with max-subtraction.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("logsumexp"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return Ok(max);
    }
    let s: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + s.ln())
}

/// Dot product with independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// `y += alpha * x`.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `M v`.
pub fn matvec(m: &DenseMatrix, v: &[f64]) -> Result<Vec<f64>> {
    if m.cols != v.len() {
        return Err(shape("matvec", m.cols, v.len()));
    }
    let mut out = vec![0.0; m.rows];
    matvec_into(m, v, &mut out);
    Ok(out)
}

pub(crate) fn matvec_into(m: &DenseMatrix, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(i), v);
    }
}

/// `M^T v`.
pub fn matvec_transpose(m: &DenseMatrix, v: &[f64]) -> Result<Vec<f64>> {
    if m.rows != v.len() {
        return Err(shape("transposed matvec", m.rows, v.len()));
    }
    let mut out = vec![0.0; m.cols];
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            axpy(vi, m.row(i), &mut out);
        }
    }
    Ok(out)
}

/// Strided view used by [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> Operand<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major `rows x cols` buffer.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `C = A B + beta C` for an `m x k` operand `A`, `k x n` operand `B` and a
/// row-major `m x n` output.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: Operand<'_>,
    b: Operand<'_>,
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let span = |op: &Operand<'_>, r: usize, cc: usize| {
        if r == 0 || cc == 0 {
            0
        } else {
            (r as isize - 1) * op.row_stride + (cc as isize - 1) * op.col_stride + 1
        }
    };
    assert!(span(&a, m, k) as usize <= a.data.len());
    assert!(span(&b, k, n) as usize <= b.data.len());
    // SAFETY: the asserts above bound every strided access inside the slices,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rank estimation input"));
    }
    if m.rows == 0 || m.cols == 0 {
        return Ok(Vec::new());
    }
    let a = nalgebra::DMatrix::from_row_slice(m.rows, m.cols, &m.data);
    let svd = a
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or(Error::SvdFailed)?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// Number of singular values strictly above `threshold`.
pub fn estimate_rank(m: &DenseMatrix, threshold: f64) -> Result<usize> {
    Ok(singular_values(m)?
        .into_iter()
        .filter(|&s| s > threshold)
        .count())
}
