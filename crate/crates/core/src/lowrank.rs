//! Nonnegative low-rank scoring matrices.
//!
//! A factorized scoring matrix is `diag(c) U V^T` (head-side constants) or
//! `U V^T diag(c)` (tail-side constants, e.g. clamped potentials). `U` is
//! `rows x N`, `V` is `cols x N`, both elementwise nonnegative. Applying it to a
//! vector costs `O((rows + cols) N)` instead of `O(rows cols)`.
//!
//! [`BandedLowRankFactors`] adds a banded nonnegative matrix `theta` to the
//! unnormalized product and renormalizes rows: `(theta + U V^T) / Z`.

use crate::numeric::{axpy, dot, gemm, DenseMatrix, Operand};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// Upper bound on the exponent argument of a feature map.
pub const FEATURE_EXP_CLAMP: f64 = 40.0;

/// Refuse dense materialization above this many entries.
pub const DEFAULT_MATERIALIZE_LIMIT: u128 = 100_000_000;

/// Band-to-low-rank mass ratio used by [`init_band`].
pub const DEFAULT_BAND_MASS_RATIO: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    /// `exp(W x)`
    ExpLinear,
    /// `exp(W x - |x|^2 / 2)`
    ExpLinearMinusHalfNormSq,
}

/// Positive feature map `R^D -> R^N_+`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    kind: FeatureKind,
    projection: DenseMatrix,
}

impl FeatureMap {
    pub fn new(kind: FeatureKind, projection: DenseMatrix) -> Self {
        Self { kind, projection }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn projection(&self) -> &DenseMatrix {
        &self.projection
    }

    /// Feature dimension `N`.
    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    /// Embedding dimension `D`.
    pub fn input_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "feature map input",
                expected: self.input_dim().to_string(),
                got: x.len().to_string(),
            });
        }
        let offset = match self.kind {
            FeatureKind::ExpLinear => 0.0,
            FeatureKind::ExpLinearMinusHalfNormSq => 0.5 * dot(x, x),
        };
        Ok((0..self.dim())
            .map(|n| (dot(self.projection.row(n), x) - offset).min(FEATURE_EXP_CLAMP).exp())
            .collect())
    }

    /// Applies the map to every row of `embeddings`.
    pub fn apply_rows(&self, embeddings: &DenseMatrix) -> Result<DenseMatrix> {
        let mut data = Vec::with_capacity(embeddings.rows() * self.dim());
        for i in 0..embeddings.rows() {
            data.extend(self.apply(embeddings.row(i))?);
        }
        DenseMatrix::new(embeddings.rows(), self.dim(), data)
    }
}

/// Which side the constant vector `c` scales.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalizerSide {
    /// `c` has one entry per row and multiplies `U` (row normalizers).
    Head,
    /// `c` has one entry per column and multiplies `V` (clamped potentials).
    Tail,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactors {
    u: DenseMatrix,
    v: DenseMatrix,
    c: Vec<f64>,
    side: NormalizerSide,
}

impl LowRankFactors {
    /// Assembles factors from explicit parts, validating shapes and signs.
    pub fn from_parts(
        u: DenseMatrix,
        v: DenseMatrix,
        c: Vec<f64>,
        side: NormalizerSide,
    ) -> Result<Self> {
        if u.cols() != v.cols() {
            return Err(Error::Shape {
                context: "low-rank factor inner dimension",
                expected: u.cols().to_string(),
                got: v.cols().to_string(),
            });
        }
        let want = match side {
            NormalizerSide::Head => u.rows(),
            NormalizerSide::Tail => v.rows(),
        };
        if c.len() != want {
            return Err(Error::Shape {
                context: "low-rank normalizer",
                expected: want.to_string(),
                got: c.len().to_string(),
            });
        }
        if !u.is_nonnegative() || !v.is_nonnegative() {
            return Err(Error::Negative("low-rank factors"));
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("low-rank normalizer"));
        }
        if c.iter().any(|&x| x < 0.0) {
            return Err(Error::Negative("low-rank normalizer"));
        }
        Ok(Self { u, v, c, side })
    }

    /// Directly supplied nonnegative factors with `c = 1`.
    pub fn from_raw(u: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        let c = vec![1.0; u.rows()];
        Self::from_parts(u, v, c, NormalizerSide::Head)
    }

    /// Unnormalized factors made row-stochastic: `c = 1 / (U (V^T 1))`.
    pub fn row_normalized(u: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        let mut f = Self::from_raw(u, v)?;
        let mass = f.unnormalized_row_mass();
        for (row, (c, m)) in f.c.iter_mut().zip(mass).enumerate() {
            if m <= 0.0 || !m.is_finite() {
                return Err(Error::ZeroNormalizer(row));
            }
            *c = 1.0 / m;
        }
        Ok(f)
    }

    /// `U (V^T 1)`, the row sums of the product without constants, in `O((rows + cols) N)`.
    pub fn unnormalized_row_mass(&self) -> Vec<f64> {
        let col_sum = self.v_column_sums();
        (0..self.u.rows()).map(|i| dot(self.u.row(i), &col_sum)).collect()
    }

    fn v_column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rank()];
        for z in 0..self.v.rows() {
            axpy(1.0, self.v.row(z), &mut s);
        }
        s
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn side(&self) -> NormalizerSide {
        self.side
    }

    pub fn rows(&self) -> usize {
        self.u.rows()
    }

    pub fn cols(&self) -> usize {
        self.v.rows()
    }

    /// Inner dimension `N`.
    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    /// Same `U, V` with head-side constants replaced by `c`.
    pub fn with_head_constants(&self, c: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.u.clone(), self.v.clone(), c, NormalizerSide::Head)
    }

    /// `gamma = V^T (c * beta)` or `V^T beta`, depending on the constant side.
    pub(crate) fn project_tail(&self, beta: &[f64], gamma: &mut [f64]) {
        gamma.fill(0.0);
        match self.side {
            NormalizerSide::Head => {
                for (z, &b) in beta.iter().enumerate() {
                    if b != 0.0 {
                        axpy(b, self.v.row(z), gamma);
                    }
                }
            }
            NormalizerSide::Tail => {
                for (z, (&b, &c)) in beta.iter().zip(&self.c).enumerate() {
                    let w = b * c;
                    if w != 0.0 {
                        axpy(w, self.v.row(z), gamma);
                    }
                }
            }
        }
    }

    /// `out = Psi beta` without materializing `Psi`.
    pub(crate) fn apply_into(&self, beta: &[f64], gamma: &mut [f64], out: &mut [f64]) {
        self.project_tail(beta, gamma);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.u.row(i), gamma);
        }
        if self.side == NormalizerSide::Head {
            for (o, c) in out.iter_mut().zip(&self.c) {
                *o *= c;
            }
        }
    }

    pub fn apply(&self, beta: &[f64]) -> Result<Vec<f64>> {
        check_len("low-rank apply", self.cols(), beta.len())?;
        let mut gamma = vec![0.0; self.rank()];
        let mut out = vec![0.0; self.rows()];
        self.apply_into(beta, &mut gamma, &mut out);
        Ok(out)
    }

    /// `Psi^T a`.
    pub fn apply_transpose(&self, a: &[f64]) -> Result<Vec<f64>> {
        check_len("low-rank transposed apply", self.rows(), a.len())?;
        let mut gamma = vec![0.0; self.rank()];
        for (i, &ai) in a.iter().enumerate() {
            let w = match self.side {
                NormalizerSide::Head => ai * self.c[i],
                NormalizerSide::Tail => ai,
            };
            if w != 0.0 {
                axpy(w, self.u.row(i), &mut gamma);
            }
        }
        let mut out: Vec<f64> = (0..self.cols()).map(|z| dot(self.v.row(z), &gamma)).collect();
        if self.side == NormalizerSide::Tail {
            for (o, c) in out.iter_mut().zip(&self.c) {
                *o *= c;
            }
        }
        Ok(out)
    }

    /// One row of `Psi` in `O(cols N)`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        let u = self.u.row(i);
        (0..self.cols())
            .map(|z| {
                let x = dot(u, self.v.row(z));
                match self.side {
                    NormalizerSide::Head => x * self.c[i],
                    NormalizerSide::Tail => x * self.c[z],
                }
            })
            .collect()
    }

    pub fn materialize(&self) -> Result<DenseMatrix> {
        self.materialize_with_limit(DEFAULT_MATERIALIZE_LIMIT)
    }

    pub fn materialize_with_limit(&self, limit: u128) -> Result<DenseMatrix> {
        size_guard(self.rows(), self.cols(), limit)?;
        let mut out = DenseMatrix::zeros(self.rows(), self.cols());
        gemm(
            self.rows(),
            self.rank(),
            self.cols(),
            Operand::row_major(self.u.data(), self.rank()),
            Operand::transposed(self.v.data(), self.rank()),
            out.data_mut(),
            0.0,
        );
        match self.side {
            NormalizerSide::Head => {
                for i in 0..self.rows() {
                    let c = self.c[i];
                    out.row_mut(i).iter_mut().for_each(|x| *x *= c);
                }
            }
            NormalizerSide::Tail => {
                for i in 0..self.rows() {
                    for (x, c) in out.row_mut(i).iter_mut().zip(&self.c) {
                        *x *= c;
                    }
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        });
    }
    Ok(())
}

pub(crate) fn size_guard(rows: usize, cols: usize, limit: u128) -> Result<()> {
    let entries = rows as u128 * cols as u128;
    if entries > limit {
        return Err(Error::SizeGuard { entries, limit });
    }
    Ok(())
}

/// Row-normalized factors from head and tail embeddings passed through `phi`.
///
/// `c` is computed from `U (V^T 1)` without ever forming `U V^T`.
pub fn build_factors(
    head_embeddings: &DenseMatrix,
    tail_embeddings: &DenseMatrix,
    phi: &FeatureMap,
) -> Result<LowRankFactors> {
    if head_embeddings.cols() != phi.input_dim() || tail_embeddings.cols() != phi.input_dim() {
        return Err(Error::Shape {
            context: "embedding dimension",
            expected: phi.input_dim().to_string(),
            got: format!("{} / {}", head_embeddings.cols(), tail_embeddings.cols()),
        });
    }
    let u = phi.apply_rows(head_embeddings)?;
    let v = phi.apply_rows(tail_embeddings)?;
    LowRankFactors::row_normalized(u, v)
}

/// Orthonormal feature projection of shape `n x d`.
///
/// Rows come in blocks of at most `d` mutually orthonormal vectors obtained by
/// Gram-Schmidt on Gaussian draws. Deterministic in `seed`.
pub fn init_orthogonal(n: usize, d: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DenseMatrix::zeros(n, d);
    let mut block: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        if block.len() == d {
            block.clear();
        }
        let row = loop {
            let mut w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            // Two passes of modified Gram-Schmidt keep the block orthogonal to
            // working precision.
            for _ in 0..2 {
                for q in &block {
                    let p = dot(q, &w);
                    axpy(-p, q, &mut w);
                }
            }
            let norm = dot(&w, &w).sqrt();
            if norm > 1e-8 {
                w.iter_mut().for_each(|x| *x /= norm);
                break w;
            }
        };
        out.row_mut(i).copy_from_slice(&row);
        block.push(row);
    }
    out
}

/// `(theta + U V^T) / Z` with `theta` supported on `|i - j| <= half_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedLowRankFactors {
    low_rank: LowRankFactors,
    half_width: usize,
    /// `rows x (2 half_width + 1)`; entry `(i, o)` is `theta[i][i + o - half_width]`.
    band: DenseMatrix,
    /// Row normalizers `Z`.
    z: Vec<f64>,
}

/// Band half-width tied to the feature dimension: `floor(N / 2)`.
pub fn band_half_width(rank: usize) -> usize {
    rank / 2
}

impl BandedLowRankFactors {
    /// Builds from a full `L x L` theta, which must vanish outside the band
    /// `|i - j| <= N / 2`.
    pub fn build(low_rank: LowRankFactors, theta: &DenseMatrix) -> Result<Self> {
        let l = low_rank.rows();
        if low_rank.cols() != l || theta.rows() != l || theta.cols() != l {
            return Err(Error::Shape {
                context: "banded transition",
                expected: format!("square {l}x{l}"),
                got: format!(
                    "factors {}x{}, theta {}x{}",
                    low_rank.rows(),
                    low_rank.cols(),
                    theta.rows(),
                    theta.cols()
                ),
            });
        }
        let h = band_half_width(low_rank.rank());
        let width = 2 * h + 1;
        let mut band = DenseMatrix::zeros(l, width);
        for i in 0..l {
            for j in 0..l {
                let x = theta.get(i, j);
                if x < 0.0 {
                    return Err(Error::Negative("band parameters"));
                }
                if i.abs_diff(j) > h {
                    if x != 0.0 {
                        return Err(Error::InvalidParameter(format!(
                            "theta[{i}][{j}] = {x} lies outside the band of half-width {h}"
                        )));
                    }
                } else {
                    band.set(i, j + h - i, x);
                }
            }
        }
        Self::from_band(low_rank, band)
    }

    /// Builds from compact band storage (`L x (2h + 1)`, `h = N / 2`).
    pub fn from_band(low_rank: LowRankFactors, band: DenseMatrix) -> Result<Self> {
        if low_rank.side() != NormalizerSide::Head {
            return Err(Error::InvalidParameter(
                "banded transitions need head-side low-rank constants".into(),
            ));
        }
        let l = low_rank.rows();
        let h = band_half_width(low_rank.rank());
        if low_rank.cols() != l || band.rows() != l || band.cols() != 2 * h + 1 {
            return Err(Error::Shape {
                context: "band storage",
                expected: format!("{l}x{}", 2 * h + 1),
                got: format!("{}x{}", band.rows(), band.cols()),
            });
        }
        if !band.is_nonnegative() {
            return Err(Error::Negative("band parameters"));
        }
        let mut band = band;
        // Slots that fall off the matrix edge carry no mass.
        for i in 0..l {
            for o in 0..2 * h + 1 {
                let j = i as isize + o as isize - h as isize;
                if j < 0 || j >= l as isize {
                    band.set(i, o, 0.0);
                }
            }
        }
        let lr_mass = low_rank.unnormalized_row_mass();
        let mut z = Vec::with_capacity(l);
        for (i, m) in lr_mass.into_iter().enumerate() {
            let zi = band.row(i).iter().sum::<f64>() + m;
            if zi <= 0.0 || !zi.is_finite() {
                return Err(Error::ZeroNormalizer(i));
            }
            z.push(zi);
        }
        Ok(Self {
            low_rank,
            half_width: h,
            band,
            z,
        })
    }

    pub fn low_rank(&self) -> &LowRankFactors {
        &self.low_rank
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn band(&self) -> &DenseMatrix {
        &self.band
    }

    pub fn normalizers(&self) -> &[f64] {
        &self.z
    }

    pub fn size(&self) -> usize {
        self.low_rank.rows()
    }

    fn band_range(&self, i: usize) -> (usize, usize) {
        let l = self.size();
        let lo = i.saturating_sub(self.half_width);
        let hi = (i + self.half_width + 1).min(l);
        (lo, hi)
    }

    pub(crate) fn apply_into(&self, beta: &[f64], gamma: &mut [f64], out: &mut [f64]) {
        let lr = &self.low_rank;
        lr.project_tail(beta, gamma);
        for (i, o) in out.iter_mut().enumerate() {
            let (lo, hi) = self.band_range(i);
            let off = lo + self.half_width - i;
            let band = &self.band.row(i)[off..off + (hi - lo)];
            *o = (dot(band, &beta[lo..hi]) + dot(lr.u.row(i), gamma)) / self.z[i];
        }
    }

    pub fn apply(&self, beta: &[f64]) -> Result<Vec<f64>> {
        check_len("banded apply", self.size(), beta.len())?;
        let mut gamma = vec![0.0; self.low_rank.rank()];
        let mut out = vec![0.0; self.size()];
        self.apply_into(beta, &mut gamma, &mut out);
        Ok(out)
    }

    pub fn apply_transpose(&self, a: &[f64]) -> Result<Vec<f64>> {
        check_len("banded transposed apply", self.size(), a.len())?;
        let lr = &self.low_rank;
        let scaled: Vec<f64> = a.iter().zip(&self.z).map(|(x, z)| x / z).collect();
        let mut gamma = vec![0.0; lr.rank()];
        for (i, &w) in scaled.iter().enumerate() {
            if w != 0.0 {
                axpy(w, lr.u.row(i), &mut gamma);
            }
        }
        let mut out: Vec<f64> = (0..self.size()).map(|j| dot(lr.v.row(j), &gamma)).collect();
        for (i, &w) in scaled.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (lo, hi) = self.band_range(i);
            let off = lo + self.half_width - i;
            axpy(w, &self.band.row(i)[off..off + (hi - lo)], &mut out[lo..hi]);
        }
        Ok(out)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let lr = &self.low_rank;
        let u = lr.u.row(i);
        let mut r: Vec<f64> = (0..self.size()).map(|j| dot(u, lr.v.row(j))).collect();
        let (lo, hi) = self.band_range(i);
        for j in lo..hi {
            r[j] += self.band.get(i, j + self.half_width - i);
        }
        r.iter_mut().for_each(|x| *x /= self.z[i]);
        r
    }

    pub fn materialize(&self) -> Result<DenseMatrix> {
        self.materialize_with_limit(DEFAULT_MATERIALIZE_LIMIT)
    }

    pub fn materialize_with_limit(&self, limit: u128) -> Result<DenseMatrix> {
        let l = self.size();
        size_guard(l, l, limit)?;
        let lr = &self.low_rank;
        let mut out = DenseMatrix::zeros(l, l);
        gemm(
            l,
            lr.rank(),
            l,
            Operand::row_major(lr.u.data(), lr.rank()),
            Operand::transposed(lr.v.data(), lr.rank()),
            out.data_mut(),
            0.0,
        );
        for i in 0..l {
            let (lo, hi) = self.band_range(i);
            for j in lo..hi {
                let x = out.get(i, j) + self.band.get(i, j + self.half_width - i);
                out.set(i, j, x);
            }
            let z = self.z[i];
            out.row_mut(i).iter_mut().for_each(|x| *x /= z);
        }
        Ok(out)
    }
}

/// Random band with each row's band mass set to `mass_ratio` times that row's
/// low-rank mass, so neither term dominates at initialization.
pub fn init_band(low_rank: &LowRankFactors, mass_ratio: f64, seed: u64) -> Result<DenseMatrix> {
    if !(mass_ratio >= 0.0 && mass_ratio.is_finite()) {
        return Err(Error::InvalidParameter(format!("band mass ratio {mass_ratio}")));
    }
    let l = low_rank.rows();
    let h = band_half_width(low_rank.rank());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unif = Uniform::new(0.5, 1.5).expect("valid range");
    let mass = low_rank.unnormalized_row_mass();
    let mut band = DenseMatrix::zeros(l, 2 * h + 1);
    for i in 0..l {
        let lo = i.saturating_sub(h);
        let hi = (i + h + 1).min(l);
        let draws: Vec<f64> = (lo..hi).map(|_| unif.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        for (j, d) in (lo..hi).zip(draws) {
            band.set(i, j + h - i, mass_ratio * mass[i] * d / total);
        }
    }
    Ok(band)
}
