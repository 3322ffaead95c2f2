//! Block-diagonal matrix algebras `M_{r_1} ⊕ … ⊕ M_{r_m}`, their elements, and
//! the hermitian functional calculus everything else is built on.
//!
//! Elements store every block in one flat column-major buffer, so a function
//! on a 400-point space (400 blocks of size 1) costs a single allocation.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type Mat = DMatrix<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Largest block size accepted unless the caller raises it.
pub const DEFAULT_MAX_BLOCK: usize = 64;

/// Numerical tolerances used across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Identity checks (hermitian, idempotent, orthogonal, reconstruction).
    pub identity: f64,
    /// Eigenvalues at or below this are treated as zero when computing ranks and supports.
    pub rank_cut: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            identity: 1e-9,
            rank_cut: 1e-6,
        }
    }
}

/// `M_{r_1} ⊕ … ⊕ M_{r_m}`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct FiniteDimAlgebra {
    sizes: Arc<[usize]>,
    offsets: Arc<[usize]>,
}

impl fmt::Debug for FiniteDimAlgebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FiniteDimAlgebra{:?}", &*self.sizes)
    }
}

impl FiniteDimAlgebra {
    pub fn new(block_sizes: Vec<usize>) -> Result<Self> {
        Self::with_max_block(block_sizes, DEFAULT_MAX_BLOCK)
    }

    pub fn with_max_block(block_sizes: Vec<usize>, max_block: usize) -> Result<Self> {
        if block_sizes.is_empty() {
            return Err(Error::InvalidAlgebra("no blocks".into()));
        }
        if let Some(i) = block_sizes.iter().position(|&r| r == 0) {
            return Err(Error::InvalidAlgebra(format!("block {i} has size 0")));
        }
        if let Some(i) = block_sizes.iter().position(|&r| r > max_block) {
            return Err(Error::InvalidAlgebra(format!(
                "block {i} has size {} above the cap {max_block}",
                block_sizes[i]
            )));
        }
        Ok(Self::from_sizes_unchecked(block_sizes))
    }

    fn from_sizes_unchecked(block_sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(block_sizes.len() + 1);
        let mut acc = 0;
        for &r in &block_sizes {
            offsets.push(acc);
            acc += r * r;
        }
        offsets.push(acc);
        FiniteDimAlgebra {
            sizes: block_sizes.into(),
            offsets: offsets.into(),
        }
    }

    /// The full matrix algebra `M_n`.
    pub fn matrix(n: usize) -> Self {
        assert!(n >= 1, "matrix algebra of size 0");
        Self::from_sizes_unchecked(vec![n])
    }

    /// `ℂ^s`, equivalently functions on `s` points.
    pub fn abelian(s: usize) -> Self {
        assert!(s >= 1, "abelian algebra with no generators");
        Self::from_sizes_unchecked(vec![1; s])
    }

    /// `ℂ^points ⊗ M_fiber`, matrix-valued functions on a finite set.
    pub fn functions(points: usize, fiber: usize) -> Self {
        assert!(points >= 1 && fiber >= 1);
        Self::from_sizes_unchecked(vec![fiber; points])
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn block_size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    /// Complex dimension `Σ r_i²`.
    pub fn dimension(&self) -> usize {
        self.offsets[self.sizes.len()]
    }

    /// `Σ r_i`, the size of a maximal elementary set.
    pub fn total_rank(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn is_abelian(&self) -> bool {
        self.sizes.iter().all(|&r| r == 1)
    }

    pub(crate) fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// `F ⊗ M_r`.
    pub fn tensor(&self, r: usize) -> Self {
        Self::from_sizes_unchecked(self.sizes.iter().map(|&s| s * r).collect())
    }

    pub fn direct_sum(&self, other: &Self) -> Self {
        let mut sizes = self.sizes.to_vec();
        sizes.extend_from_slice(&other.sizes);
        Self::from_sizes_unchecked(sizes)
    }

    /// Iterates `(block, row, col)` over all matrix units, block-major then row-major.
    pub fn matrix_units(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.sizes
            .iter()
            .enumerate()
            .flat_map(|(i, &r)| (0..r).flat_map(move |j| (0..r).map(move |k| (i, j, k))))
    }
}

#[derive(Serialize, Deserialize)]
struct AlgebraRepr {
    block_sizes: Vec<usize>,
}

impl Serialize for FiniteDimAlgebra {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AlgebraRepr {
            block_sizes: self.sizes.to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FiniteDimAlgebra {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = AlgebraRepr::deserialize(d)?;
        FiniteDimAlgebra::new(repr.block_sizes).map_err(serde::de::Error::custom)
    }
}

/// An element of a [`FiniteDimAlgebra`]: one complex square matrix per block.
#[derive(Clone, PartialEq)]
pub struct AlgebraElement {
    algebra: FiniteDimAlgebra,
    data: Vec<C64>,
}

impl fmt::Debug for AlgebraElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for i in 0..self.algebra.num_blocks() {
            list.entry(&self.block(i));
        }
        list.finish()
    }
}

impl AlgebraElement {
    pub fn zeros(algebra: &FiniteDimAlgebra) -> Self {
        AlgebraElement {
            algebra: algebra.clone(),
            data: vec![ZERO; algebra.dimension()],
        }
    }

    pub fn identity(algebra: &FiniteDimAlgebra) -> Self {
        let mut out = Self::zeros(algebra);
        for i in 0..algebra.num_blocks() {
            out.block_mut(i).fill_with_identity();
        }
        out
    }

    /// The central projection `1_i` of block `i`.
    pub fn block_unit(algebra: &FiniteDimAlgebra, i: usize) -> Self {
        let mut out = Self::zeros(algebra);
        out.block_mut(i).fill_with_identity();
        out
    }

    /// The matrix unit `e_{jk}` of block `i`.
    pub fn matrix_unit(algebra: &FiniteDimAlgebra, i: usize, j: usize, k: usize) -> Self {
        let mut out = Self::zeros(algebra);
        out.block_mut(i)[(j, k)] = ONE;
        out
    }

    pub fn from_blocks(algebra: &FiniteDimAlgebra, blocks: &[Mat]) -> Result<Self> {
        if blocks.len() != algebra.num_blocks() {
            return Err(Error::ShapeMismatch(format!(
                "{} blocks given for an algebra with {}",
                blocks.len(),
                algebra.num_blocks()
            )));
        }
        let mut out = Self::zeros(algebra);
        for (i, b) in blocks.iter().enumerate() {
            let r = algebra.block_size(i);
            if b.nrows() != r || b.ncols() != r {
                return Err(Error::ShapeMismatch(format!(
                    "block {i} is {}x{}, expected {r}x{r}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            out.block_mut(i).copy_from(b);
        }
        Ok(out)
    }

    /// Builds an element from its blocks, inferring the algebra.
    pub fn from_block_list(blocks: Vec<Mat>) -> Result<Self> {
        let sizes = blocks.iter().map(|b| b.nrows()).collect();
        let algebra = FiniteDimAlgebra::new(sizes)?;
        Self::from_blocks(&algebra, &blocks)
    }

    /// A single-block element.
    pub fn from_matrix(m: Mat) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "matrix must be square");
        let algebra = FiniteDimAlgebra::matrix(m.nrows());
        AlgebraElement {
            algebra,
            data: m.as_slice().to_vec(),
        }
    }

    /// A complex function on `values.len()` points, i.e. an element of `ℂ^s`.
    pub fn from_function(values: &[C64]) -> Self {
        AlgebraElement {
            algebra: FiniteDimAlgebra::abelian(values.len()),
            data: values.to_vec(),
        }
    }

    pub fn from_real_function(values: &[f64]) -> Self {
        AlgebraElement {
            algebra: FiniteDimAlgebra::abelian(values.len()),
            data: values.iter().map(|&v| C64::new(v, 0.0)).collect(),
        }
    }

    /// A single-block diagonal matrix with real entries.
    pub fn real_diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_matrix(Mat::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(values[i], 0.0)
            } else {
                ZERO
            }
        }))
    }

    pub fn algebra(&self) -> &FiniteDimAlgebra {
        &self.algebra
    }

    pub fn num_blocks(&self) -> usize {
        self.algebra.num_blocks()
    }

    pub fn block(&self, i: usize) -> DMatrixView<'_, C64> {
        let r = self.algebra.block_size(i);
        let off = self.algebra.offset(i);
        DMatrixView::from_slice(&self.data[off..off + r * r], r, r)
    }

    pub fn block_mut(&mut self, i: usize) -> DMatrixViewMut<'_, C64> {
        let r = self.algebra.block_size(i);
        let off = self.algebra.offset(i);
        DMatrixViewMut::from_slice(&mut self.data[off..off + r * r], r, r)
    }

    pub fn block_matrix(&self, i: usize) -> Mat {
        self.block(i).into_owned()
    }

    pub fn blocks(&self) -> Vec<Mat> {
        (0..self.num_blocks())
            .map(|i| self.block_matrix(i))
            .collect()
    }

    /// For single-block elements, the underlying matrix.
    pub fn as_matrix(&self) -> Mat {
        assert_eq!(self.num_blocks(), 1, "element has several blocks");
        self.block_matrix(0)
    }

    /// Raw flat storage; for abelian algebras this is the function's value list.
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// Value list of an element of an abelian algebra.
    pub fn function_values(&self) -> &[C64] {
        assert!(self.algebra.is_abelian(), "element is not a function");
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|z| *z == ZERO)
    }

    fn check_same(&self, other: &Self, op: &str) {
        assert!(
            self.algebra == other.algebra,
            "{op} of elements of different algebras: {:?} vs {:?}",
            self.algebra,
            other.algebra
        );
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(&self.algebra);
        for i in 0..self.num_blocks() {
            let adj = self.block(i).adjoint();
            out.block_mut(i).copy_from(&adj);
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        AlgebraElement {
            algebra: self.algebra.clone(),
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// `self += alpha · x`.
    pub fn axpy(&mut self, alpha: C64, x: &Self) {
        self.check_same(x, "axpy");
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    /// `self ⊗ b` blockwise, landing in `F ⊗ M_r`.
    pub fn kron(&self, b: &Mat) -> Self {
        let r = b.nrows();
        let algebra = self.algebra.tensor(r);
        let mut out = Self::zeros(&algebra);
        for i in 0..self.num_blocks() {
            let k = self.block(i).kronecker(b);
            out.block_mut(i).copy_from(&k);
        }
        out
    }

    /// Concatenation in `F ⊕ G`.
    pub fn direct_sum(&self, other: &Self) -> Self {
        let algebra = self.algebra.direct_sum(&other.algebra);
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        AlgebraElement { algebra, data }
    }

    /// Operator norm: the largest singular value over all blocks.
    pub fn norm(&self) -> f64 {
        (0..self.num_blocks())
            .map(|i| block_norm(&self.block(i)))
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Sum of the traces of all blocks.
    pub fn trace(&self) -> C64 {
        (0..self.num_blocks()).map(|i| self.block(i).trace()).sum()
    }

    /// Frobenius inner product `tr(self* · other)`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.check_same(other, "inner product");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Largest entrywise `|a_jk − conj(a_kj)|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.num_blocks() {
            let b = self.block(i);
            let r = b.nrows();
            for j in 0..r {
                for k in j..r {
                    worst = worst.max((b[(j, k)] - b[(k, j)].conj()).norm());
                }
            }
        }
        worst
    }

    /// Elementwise distance in operator norm, `‖self − other‖`.
    pub fn dist(&self, other: &Self) -> f64 {
        (self - other).norm()
    }

    fn ensure_hermitian(&self, tol: f64) -> Result<()> {
        let asymmetry = self.asymmetry();
        if asymmetry > tol {
            Err(Error::NotHermitian { asymmetry })
        } else {
            Ok(())
        }
    }

    /// Per-block hermitian eigendecomposition, checking hermitianness first.
    pub fn eigen(&self, tol: f64) -> Result<Vec<HermitianEigen>> {
        self.ensure_hermitian(tol)?;
        Ok((0..self.num_blocks())
            .map(|i| hermitian_eigen(&self.block(i).into_owned()))
            .collect())
    }

    /// Applies `f` to the eigenvalues of every block. No domain checks.
    pub fn map_spectrum(&self, tol: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.ensure_hermitian(tol)?;
        let mut out = Self::zeros(&self.algebra);
        for i in 0..self.num_blocks() {
            if self.algebra.block_size(i) == 1 {
                out.block_mut(i)[(0, 0)] = C64::new(f(self.block(i)[(0, 0)].re), 0.0);
                continue;
            }
            let eig = hermitian_eigen(&self.block(i).into_owned());
            let rebuilt = eig.rebuild(|t| f(t));
            out.block_mut(i).copy_from(&rebuilt);
        }
        Ok(out)
    }

    pub fn min_eigenvalue(&self, tol: f64) -> Result<f64> {
        Ok(spectrum(self, tol)?.merged.first().copied().unwrap_or(0.0))
    }

    pub fn max_eigenvalue(&self, tol: f64) -> Result<f64> {
        Ok(spectrum(self, tol)?.merged.last().copied().unwrap_or(0.0))
    }
}

fn block_norm(b: &DMatrixView<'_, C64>) -> f64 {
    match b.nrows() {
        0 => 0.0,
        1 => b[(0, 0)].norm(),
        _ => {
            let owned = b.into_owned();
            if owned.iter().all(|z| *z == ZERO) {
                return 0.0;
            }
            owned.singular_values().max()
        }
    }
}

impl Add for &AlgebraElement {
    type Output = AlgebraElement;
    fn add(self, rhs: &AlgebraElement) -> AlgebraElement {
        self.check_same(rhs, "sum");
        AlgebraElement {
            algebra: self.algebra.clone(),
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &AlgebraElement {
    type Output = AlgebraElement;
    fn sub(self, rhs: &AlgebraElement) -> AlgebraElement {
        self.check_same(rhs, "difference");
        AlgebraElement {
            algebra: self.algebra.clone(),
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Neg for &AlgebraElement {
    type Output = AlgebraElement;
    fn neg(self) -> AlgebraElement {
        self.scale_real(-1.0)
    }
}

impl Mul for &AlgebraElement {
    type Output = AlgebraElement;
    fn mul(self, rhs: &AlgebraElement) -> AlgebraElement {
        self.check_same(rhs, "product");
        let mut out = AlgebraElement::zeros(&self.algebra);
        for i in 0..self.num_blocks() {
            if self.algebra.block_size(i) == 1 {
                out.block_mut(i)[(0, 0)] = self.block(i)[(0, 0)] * rhs.block(i)[(0, 0)];
            } else {
                let a = self.block(i);
                let b = rhs.block(i);
                out.block_mut(i).gemm(ONE, &a, &b, ZERO);
            }
        }
        out
    }
}

impl Add for AlgebraElement {
    type Output = AlgebraElement;
    fn add(self, rhs: AlgebraElement) -> AlgebraElement {
        &self + &rhs
    }
}

impl Sub for AlgebraElement {
    type Output = AlgebraElement;
    fn sub(self, rhs: AlgebraElement) -> AlgebraElement {
        &self - &rhs
    }
}

impl Mul for AlgebraElement {
    type Output = AlgebraElement;
    fn mul(self, rhs: AlgebraElement) -> AlgebraElement {
        &self * &rhs
    }
}

/// Eigenvalues in ascending order with orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl HermitianEigen {
    /// `V · diag(f(λ)) · V*`.
    pub fn rebuild(&self, f: impl Fn(f64) -> f64) -> Mat {
        let mut scaled = self.vectors.clone();
        for (c, &lambda) in self.values.iter().enumerate() {
            let s = f(lambda);
            scaled.column_mut(c).scale_mut(s);
        }
        &scaled * self.vectors.adjoint()
    }

    /// Rank-one projection onto eigenvector `c`.
    pub fn eigenprojection(&self, c: usize) -> Mat {
        let v = self.vectors.column(c);
        &v * v.adjoint()
    }
}

/// Deterministic hermitian eigendecomposition.
///
/// The input is symmetrized first. Eigenpairs are sorted by ascending
/// eigenvalue and each eigenvector's first non-negligible component is made
/// real-positive so repeated runs produce identical output.
pub fn hermitian_eigen(m: &Mat) -> HermitianEigen {
    let n = m.nrows();
    if n == 0 {
        return HermitianEigen {
            values: vec![],
            vectors: Mat::zeros(0, 0),
        };
    }
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut vectors = Mat::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (c, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut col = eig.eigenvectors.column(src).into_owned();
        let norm = col.norm();
        if norm > 0.0 {
            col.unscale_mut(norm);
        }
        if let Some(lead) = col.iter().find(|z| z.norm() > 1e-12).copied() {
            let phase = lead.conj() / lead.norm();
            col *= phase;
        }
        vectors.set_column(c, &col);
    }
    HermitianEigen { values, vectors }
}

/// Eigenvalues of a hermitian element, per block and merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub per_block: Vec<Vec<f64>>,
    pub merged: Vec<f64>,
}

pub fn spectrum(a: &AlgebraElement, tol: f64) -> Result<Spectrum> {
    a.ensure_hermitian(tol)?;
    let per_block: Vec<Vec<f64>> = (0..a.num_blocks())
        .map(|i| {
            if a.algebra.block_size(i) == 1 {
                vec![a.block(i)[(0, 0)].re]
            } else {
                hermitian_eigen(&a.block_matrix(i)).values
            }
        })
        .collect();
    let mut merged: Vec<f64> = per_block.iter().flatten().copied().collect();
    merged.sort_by(f64::total_cmp);
    Ok(Spectrum { per_block, merged })
}

/// Scalar functions applied through the spectral theorem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarFunction {
    Identity,
    /// `0` for `t ≤ α`, `t` for `t ≥ α + ε`, linear in between.
    CutRamp {
        alpha: f64,
        eps: f64,
    },
    /// `0` for `t ≤ α`, `1` for `t ≥ α + ε`, linear in between.
    StepRamp {
        alpha: f64,
        eps: f64,
    },
    /// Indicator of `[α, ∞)`.
    Threshold {
        alpha: f64,
    },
    /// Indicator of `[1/2, ∞)`, only for spectra inside `[0, ε] ∪ [1 − ε, 1]`.
    GapThreshold {
        eps: f64,
    },
    /// `0` for `t ≤ ε`, `1/t` for `t ≥ 1 − ε`, linear in between; same gap requirement.
    GapInverse {
        eps: f64,
    },
    /// `1/t` above `cut`, `0` otherwise.
    InverseOnSupport {
        cut: f64,
    },
    /// `t^{-1/2}` above `cut`, `0` otherwise.
    InverseSqrtOnSupport {
        cut: f64,
    },
    /// Continuous interpolation of `(t, value)` knots, defined on `[t_first, t_last]`.
    PiecewiseLinear {
        knots: Vec<(f64, f64)>,
    },
}

impl ScalarFunction {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidFunction(msg.to_string()));
        match self {
            ScalarFunction::CutRamp { eps, .. } | ScalarFunction::StepRamp { eps, .. } => {
                if !(*eps > 0.0) {
                    return bad("ramp width must be positive");
                }
            }
            ScalarFunction::GapThreshold { eps } | ScalarFunction::GapInverse { eps } => {
                if !(*eps >= 0.0 && *eps < 0.5) {
                    return bad("gap parameter must lie in [0, 1/2)");
                }
            }
            ScalarFunction::InverseOnSupport { cut }
            | ScalarFunction::InverseSqrtOnSupport { cut } => {
                if !(*cut >= 0.0) {
                    return bad("support cut must be non-negative");
                }
            }
            ScalarFunction::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return bad("need at least two knots");
                }
                if knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                    return bad("knot abscissae must increase strictly");
                }
            }
            ScalarFunction::Identity | ScalarFunction::Threshold { .. } => {}
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ScalarFunction::Identity => t,
            ScalarFunction::CutRamp { alpha, eps } => {
                if t <= alpha {
                    0.0
                } else if t >= alpha + eps {
                    t
                } else {
                    (t - alpha) / eps * (alpha + eps)
                }
            }
            ScalarFunction::StepRamp { alpha, eps } => {
                if t <= alpha {
                    0.0
                } else if t >= alpha + eps {
                    1.0
                } else {
                    (t - alpha) / eps
                }
            }
            ScalarFunction::Threshold { alpha } => {
                if t >= alpha {
                    1.0
                } else {
                    0.0
                }
            }
            ScalarFunction::GapThreshold { .. } => {
                if t >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            ScalarFunction::GapInverse { eps } => {
                if t <= eps {
                    0.0
                } else if t >= 1.0 - eps {
                    1.0 / t
                } else {
                    let top = 1.0 / (1.0 - eps);
                    (t - eps) / (1.0 - 2.0 * eps) * top
                }
            }
            ScalarFunction::InverseOnSupport { cut } => {
                if t > cut {
                    1.0 / t
                } else {
                    0.0
                }
            }
            ScalarFunction::InverseSqrtOnSupport { cut } => {
                if t > cut {
                    1.0 / t.sqrt()
                } else {
                    0.0
                }
            }
            ScalarFunction::PiecewiseLinear { ref knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if t <= first.0 {
                    return first.1;
                }
                if t >= last.0 {
                    return last.1;
                }
                let idx = knots.partition_point(|k| k.0 <= t);
                let (x0, y0) = knots[idx - 1];
                let (x1, y1) = knots[idx];
                y0 + (t - x0) / (x1 - x0) * (y1 - y0)
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            ScalarFunction::Identity => "identity",
            ScalarFunction::CutRamp { .. } => "cut ramp",
            ScalarFunction::StepRamp { .. } => "step ramp",
            ScalarFunction::Threshold { .. } => "threshold",
            ScalarFunction::GapThreshold { .. } => "gap threshold",
            ScalarFunction::GapInverse { .. } => "gap inverse",
            ScalarFunction::InverseOnSupport { .. } => "inverse on support",
            ScalarFunction::InverseSqrtOnSupport { .. } => "inverse square root on support",
            ScalarFunction::PiecewiseLinear { .. } => "piecewise linear",
        }
    }

    fn check_eigenvalue(&self, t: f64, tol: f64) -> Result<()> {
        match *self {
            ScalarFunction::GapThreshold { eps } | ScalarFunction::GapInverse { eps } => {
                let low = t >= -tol && t <= eps + tol;
                let high = t >= 1.0 - eps - tol && t <= 1.0 + tol;
                if !(low || high) {
                    return Err(Error::GapViolated { eigenvalue: t });
                }
            }
            ScalarFunction::InverseOnSupport { .. }
            | ScalarFunction::InverseSqrtOnSupport { .. } => {
                if t < -tol {
                    return Err(Error::OutsideDomain {
                        eigenvalue: t,
                        function: self.name().into(),
                    });
                }
            }
            ScalarFunction::PiecewiseLinear { ref knots } => {
                if t < knots[0].0 - tol || t > knots[knots.len() - 1].0 + tol {
                    return Err(Error::OutsideDomain {
                        eigenvalue: t,
                        function: self.name().into(),
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// `f(a)` for hermitian `a`, with the domain and gap checks of `f`.
pub fn apply_function(a: &AlgebraElement, f: &ScalarFunction, tol: f64) -> Result<AlgebraElement> {
    f.validate()?;
    let spec = spectrum(a, tol)?;
    for &t in &spec.merged {
        f.check_eigenvalue(t, tol)?;
    }
    a.map_spectrum(tol, |t| f.eval(t))
}

/// Projection onto the span of eigenvectors with eigenvalue above `tol.rank_cut`.
pub fn support_projection(a: &AlgebraElement, tol: Tolerances) -> Result<AlgebraElement> {
    let spec = spectrum(a, tol.identity)?;
    if let Some(&low) = spec.merged.first() {
        if low < -tol.rank_cut {
            return Err(Error::NotPositive { eigenvalue: low });
        }
    }
    a.map_spectrum(tol.identity, |t| if t > tol.rank_cut { 1.0 } else { 0.0 })
}

/// Number of eigenvalues above the rank cut.
pub fn numerical_rank(a: &AlgebraElement, tol: Tolerances) -> Result<usize> {
    Ok(spectrum(a, tol.identity)?
        .merged
        .iter()
        .filter(|&&t| t > tol.rank_cut)
        .count())
}

pub fn norm(a: &AlgebraElement) -> f64 {
    a.norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Hermitian,
    Positive,
    Projection,
    Contraction,
}

/// Outcome of [`validate`]: whether the predicate holds and by how much it fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub holds: bool,
    pub defect: f64,
}

pub fn validate(a: &AlgebraElement, predicate: Predicate, tol: f64) -> Validation {
    let asym = a.asymmetry();
    let defect = match predicate {
        Predicate::Hermitian => asym,
        Predicate::Positive => {
            if asym > tol {
                asym
            } else {
                let low = spectrum(a, f64::INFINITY)
                    .map(|s| s.merged.first().copied().unwrap_or(0.0))
                    .unwrap_or(0.0);
                asym.max(-low)
            }
        }
        Predicate::Projection => asym.max((&(a * a) - a).norm()),
        Predicate::Contraction => (a.norm() - 1.0).max(0.0),
    };
    Validation {
        holds: defect <= tol,
        defect,
    }
}

/// JSON form of a complex matrix: rows of `[re, im]` pairs.
pub type MatrixJson = Vec<Vec<[f64; 2]>>;

pub fn encode_matrix(m: &DMatrixView<'_, C64>) -> MatrixJson {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| [m[(i, j)].re, m[(i, j)].im])
                .collect()
        })
        .collect()
}

pub fn decode_matrix(rows: &MatrixJson) -> Result<Mat> {
    let n = rows.len();
    if let Some(i) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "row {i} has {} entries, expected {n}",
            rows[i].len()
        )));
    }
    Ok(Mat::from_fn(n, n, |i, j| {
        C64::new(rows[i][j][0], rows[i][j][1])
    }))
}

#[derive(Serialize, Deserialize)]
struct ElementRepr {
    blocks: Vec<MatrixJson>,
}

impl Serialize for AlgebraElement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ElementRepr {
            blocks: (0..self.num_blocks())
                .map(|i| encode_matrix(&self.block(i)))
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AlgebraElement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ElementRepr::deserialize(d)?;
        let blocks = repr
            .blocks
            .iter()
            .map(decode_matrix)
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        AlgebraElement::from_block_list(blocks).map_err(serde::de::Error::custom)
    }
}
