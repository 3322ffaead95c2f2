//! Linear maps out of `F = ⊕ M_{r_i}` stored by their values on matrix units.
//!
//! Complete positivity is read off the Choi matrices, strict order is bounded
//! through elementary sets of minimal projections.

use std::fmt;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clique::{max_clique, max_weight_clique, Graph};
use crate::error::{Error, Result};
use crate::matfun::{
    decode_matrix, encode_matrix, hermitian_eigen, AlgebraElement, FiniteDimAlgebra, Mat,
    MatrixJson, C64, ONE, ZERO,
};
use crate::sample;

/// Default threshold below which a product counts as zero.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;
/// Smallest Choi eigenvalue still accepted as positive.
pub const CHOI_TOL: f64 = 1e-9;
/// Largest `e_kj` vs `φ(e_jk)*` mismatch accepted.
pub const ADJOINT_TOL: f64 = 1e-10;
/// Eigenvalues of `φ(1_i)` at or below this are outside the support used by `σ_i`.
pub const SUPPORT_CUT: f64 = 1e-6;

/// Where a map lands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Codomain {
    /// `M_N`.
    Matrix(usize),
    /// `M_fiber`-valued functions on `points` points.
    Space { points: usize, fiber: usize },
    /// A general block algebra.
    Algebra(FiniteDimAlgebra),
}

impl Codomain {
    pub fn algebra(&self) -> FiniteDimAlgebra {
        match self {
            Codomain::Matrix(n) => FiniteDimAlgebra::matrix(*n),
            Codomain::Space { points, fiber } => FiniteDimAlgebra::functions(*points, *fiber),
            Codomain::Algebra(a) => a.clone(),
        }
    }

    pub fn tensor(&self, r: usize) -> Codomain {
        match self {
            Codomain::Matrix(n) => Codomain::Matrix(n * r),
            Codomain::Space { points, fiber } => Codomain::Space {
                points: *points,
                fiber: fiber * r,
            },
            Codomain::Algebra(a) => Codomain::Algebra(a.tensor(r)),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CodomainRepr {
    Matrix(usize),
    Space { points: usize, fiber: usize },
    Algebra(FiniteDimAlgebra),
}

impl Serialize for Codomain {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Codomain::Matrix(n) => CodomainRepr::Matrix(*n),
            Codomain::Space { points, fiber } => CodomainRepr::Space {
                points: *points,
                fiber: *fiber,
            },
            Codomain::Algebra(a) => CodomainRepr::Algebra(a.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Codomain {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        Ok(match CodomainRepr::deserialize(d)? {
            CodomainRepr::Matrix(0) => return Err(D::Error::custom("matrix codomain of size 0")),
            CodomainRepr::Matrix(n) => Codomain::Matrix(n),
            CodomainRepr::Space { points, fiber } => {
                if points == 0 || fiber == 0 {
                    return Err(D::Error::custom("empty space codomain"));
                }
                Codomain::Space { points, fiber }
            }
            CodomainRepr::Algebra(a) => Codomain::Algebra(a),
        })
    }
}

/// A linear map `F → B` given by the images of the matrix units of `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct CPMap {
    domain: FiniteDimAlgebra,
    codomain: Codomain,
    target: FiniteDimAlgebra,
    images: Vec<AlgebraElement>,
}

impl CPMap {
    /// Builds a map from images listed in [`FiniteDimAlgebra::matrix_units`] order.
    pub fn new(
        domain: FiniteDimAlgebra,
        codomain: Codomain,
        images: Vec<AlgebraElement>,
    ) -> Result<Self> {
        let target = codomain.algebra();
        if images.len() != domain.dimension() {
            return Err(Error::ShapeMismatch(format!(
                "{} unit images for a domain of dimension {}",
                images.len(),
                domain.dimension()
            )));
        }
        if let Some(i) = images.iter().position(|x| x.algebra() != &target) {
            return Err(Error::ShapeMismatch(format!(
                "image {i} lives in {:?}, codomain is {:?}",
                images[i].algebra(),
                target
            )));
        }
        Ok(CPMap {
            domain,
            codomain,
            target,
            images,
        })
    }

    /// Builds a map from a closure on matrix units `(block, row, col)`.
    pub fn from_fn(
        domain: FiniteDimAlgebra,
        codomain: Codomain,
        mut f: impl FnMut(usize, usize, usize) -> AlgebraElement,
    ) -> Result<Self> {
        let images = domain.matrix_units().map(|(i, j, k)| f(i, j, k)).collect();
        CPMap::new(domain, codomain, images)
    }

    /// The map `x ↦ Σ_l x_l · h_l` from `ℂ^s` into functions on a space.
    pub fn from_functions(points: usize, functions: &[Vec<f64>]) -> Result<Self> {
        if let Some(i) = functions.iter().position(|h| h.len() != points) {
            return Err(Error::ShapeMismatch(format!(
                "function {i} has the wrong length"
            )));
        }
        if functions.is_empty() {
            return Err(Error::InvalidAlgebra("no generators".into()));
        }
        CPMap::new(
            FiniteDimAlgebra::abelian(functions.len()),
            Codomain::Space { points, fiber: 1 },
            functions
                .iter()
                .map(|h| AlgebraElement::from_real_function(h))
                .collect(),
        )
    }

    /// Conjugation `x ↦ v* x v` on `M_n` with `v` an `n × N` matrix.
    pub fn conjugation(v: &Mat) -> Self {
        let n = v.nrows();
        let big_n = v.ncols();
        let dom = FiniteDimAlgebra::matrix(n);
        CPMap::from_fn(dom.clone(), Codomain::Matrix(big_n), |_, j, k| {
            let row_j = v.row(j);
            let row_k = v.row(k);
            AlgebraElement::from_matrix(row_j.adjoint() * row_k)
        })
        .expect("shapes match by construction")
    }

    pub fn identity(n: usize) -> Self {
        CPMap::conjugation(&Mat::identity(n, n))
    }

    /// `x ↦ tr(x)/n · 1_N` on `M_n`.
    pub fn normalized_trace(n: usize, big_n: usize) -> Self {
        let dom = FiniteDimAlgebra::matrix(n);
        CPMap::from_fn(dom, Codomain::Matrix(big_n), |_, j, k| {
            if j == k {
                AlgebraElement::identity(&FiniteDimAlgebra::matrix(big_n))
                    .scale_real(1.0 / n as f64)
            } else {
                AlgebraElement::zeros(&FiniteDimAlgebra::matrix(big_n))
            }
        })
        .expect("shapes match by construction")
    }

    /// `x ↦ xᵀ` on `M_n`.
    pub fn transpose(n: usize) -> Self {
        CPMap::from_fn(
            FiniteDimAlgebra::matrix(n),
            Codomain::Matrix(n),
            |_, j, k| AlgebraElement::matrix_unit(&FiniteDimAlgebra::matrix(n), 0, k, j),
        )
        .expect("shapes match by construction")
    }

    /// `x ↦ x ⊗ d` on `M_n` with `d` a fixed `m × m` matrix.
    pub fn amplification(n: usize, d: &Mat) -> Self {
        let dom = FiniteDimAlgebra::matrix(n);
        let m = d.nrows();
        CPMap::from_fn(dom.clone(), Codomain::Matrix(n * m), |_, j, k| {
            AlgebraElement::matrix_unit(&dom, 0, j, k).kron(d)
        })
        .expect("shapes match by construction")
    }

    /// Random completely positive map given by `kraus` gaussian Kraus operators,
    /// scaled so that `‖φ(1)‖ = scale`.
    pub fn random_cp<R: Rng + ?Sized>(
        rng: &mut R,
        domain: &FiniteDimAlgebra,
        codomain_size: usize,
        kraus: usize,
        scale: f64,
    ) -> Self {
        let n = domain.total_rank();
        let ks: Vec<Mat> = (0..kraus)
            .map(|_| sample::gaussian_matrix(rng, n, codomain_size))
            .collect();
        let offsets: Vec<usize> = domain
            .block_sizes()
            .iter()
            .scan(0, |acc, &r| {
                let o = *acc;
                *acc += r;
                Some(o)
            })
            .collect();
        let target = FiniteDimAlgebra::matrix(codomain_size);
        let raw = CPMap::from_fn(
            domain.clone(),
            Codomain::Matrix(codomain_size),
            |i, j, k| {
                let mut out = Mat::from_element(codomain_size, codomain_size, ZERO);
                for kr in &ks {
                    let a = kr.row(offsets[i] + j);
                    let b = kr.row(offsets[i] + k);
                    out += a.adjoint() * b;
                }
                AlgebraElement::from_blocks(&target, &[out]).expect("square")
            },
        )
        .expect("shapes match by construction");
        let norm = raw.unit_image().norm();
        raw.scaled(scale / norm)
    }

    pub fn domain(&self) -> &FiniteDimAlgebra {
        &self.domain
    }

    pub fn codomain(&self) -> &Codomain {
        &self.codomain
    }

    /// The codomain as a block algebra.
    pub fn target(&self) -> &FiniteDimAlgebra {
        &self.target
    }

    pub fn images(&self) -> &[AlgebraElement] {
        &self.images
    }

    pub fn unit_index(&self, i: usize, j: usize, k: usize) -> usize {
        let r = self.domain.block_size(i);
        self.domain.offset(i) + j * r + k
    }

    /// `φ(e^{(i)}_{jk})`.
    pub fn image(&self, i: usize, j: usize, k: usize) -> &AlgebraElement {
        &self.images[self.unit_index(i, j, k)]
    }

    pub fn apply(&self, x: &AlgebraElement) -> AlgebraElement {
        assert_eq!(x.algebra(), &self.domain, "argument outside the domain");
        let mut out = AlgebraElement::zeros(&self.target);
        for i in 0..self.domain.num_blocks() {
            let b = x.block(i);
            let r = b.nrows();
            for j in 0..r {
                for k in 0..r {
                    let c = b[(j, k)];
                    if c != ZERO {
                        out.axpy(c, self.image(i, j, k));
                    }
                }
            }
        }
        out
    }

    /// `φ(1_i)`.
    pub fn block_unit_image(&self, i: usize) -> AlgebraElement {
        let mut out = AlgebraElement::zeros(&self.target);
        for j in 0..self.domain.block_size(i) {
            out.axpy(ONE, self.image(i, j, j));
        }
        out
    }

    /// `φ(1_F)`.
    pub fn unit_image(&self) -> AlgebraElement {
        let mut out = AlgebraElement::zeros(&self.target);
        for i in 0..self.domain.num_blocks() {
            out.axpy(ONE, &self.block_unit_image(i));
        }
        out
    }

    pub fn scaled(&self, s: f64) -> CPMap {
        CPMap {
            images: self.images.iter().map(|x| x.scale_real(s)).collect(),
            ..self.clone()
        }
    }

    /// `φ − ψ` as a linear map (not positive in general).
    pub fn difference(&self, other: &CPMap) -> Result<CPMap> {
        if self.domain != other.domain || self.target != other.target {
            return Err(Error::ShapeMismatch("maps with different shapes".into()));
        }
        CPMap::new(
            self.domain.clone(),
            self.codomain.clone(),
            self.images
                .iter()
                .zip(&other.images)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// Composition `self ∘ inner`.
    pub fn compose(&self, inner: &CPMap) -> Result<CPMap> {
        if inner.target != self.domain {
            return Err(Error::ShapeMismatch(format!(
                "cannot compose: inner lands in {:?}, outer starts at {:?}",
                inner.target, self.domain
            )));
        }
        CPMap::new(
            inner.domain.clone(),
            self.codomain.clone(),
            inner.images.iter().map(|x| self.apply(x)).collect(),
        )
    }

    /// The restriction to block `i`, a map out of `M_{r_i}`.
    pub fn restrict_to_block(&self, i: usize) -> CPMap {
        let r = self.domain.block_size(i);
        let start = self.domain.offset(i);
        CPMap {
            domain: FiniteDimAlgebra::matrix(r),
            codomain: self.codomain.clone(),
            target: self.target.clone(),
            images: self.images[start..start + r * r].to_vec(),
        }
    }

    /// Largest `‖φ(e_kj) − φ(e_jk)*‖`.
    pub fn adjoint_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.domain.num_blocks() {
            let r = self.domain.block_size(i);
            for j in 0..r {
                for k in j..r {
                    let d = self.image(i, k, j).dist(&self.image(i, j, k).adjoint());
                    worst = worst.max(d);
                }
            }
        }
        worst
    }

    /// Largest `‖φ(xy) − φ(x)φ(y)‖` over matrix-unit pairs.
    pub fn multiplicativity_defect_on_units(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.domain.num_blocks() {
            let r = self.domain.block_size(i);
            for j in 0..r {
                for k in 0..r {
                    for l in 0..r {
                        for m in 0..r {
                            let prod = self.image(i, j, k) * self.image(i, l, m);
                            let d = if k == l {
                                prod.dist(self.image(i, j, m))
                            } else {
                                prod.norm()
                            };
                            worst = worst.max(d);
                        }
                    }
                }
            }
            for i2 in 0..self.domain.num_blocks() {
                if i2 != i {
                    let p = &self.block_unit_image(i) * &self.block_unit_image(i2);
                    worst = worst.max(p.norm());
                }
            }
        }
        worst
    }
}

/// JSON value of one unit image: a matrix, a real or complex function, or a block list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueJson {
    Function(Vec<f64>),
    ComplexFunction(Vec<[f64; 2]>),
    Matrix(MatrixJson),
    Blocks(Vec<MatrixJson>),
}

pub fn encode_value(codomain: &Codomain, x: &AlgebraElement) -> ValueJson {
    match codomain {
        Codomain::Matrix(_) => ValueJson::Matrix(encode_matrix(&x.block(0))),
        Codomain::Space { fiber: 1, .. } => {
            let v = x.as_slice();
            if v.iter().all(|z| z.im == 0.0) {
                ValueJson::Function(v.iter().map(|z| z.re).collect())
            } else {
                ValueJson::ComplexFunction(v.iter().map(|z| [z.re, z.im]).collect())
            }
        }
        _ => ValueJson::Blocks(
            (0..x.num_blocks())
                .map(|i| encode_matrix(&x.block(i)))
                .collect(),
        ),
    }
}

pub fn decode_value(target: &FiniteDimAlgebra, v: &ValueJson) -> Result<AlgebraElement> {
    let blocks: Vec<Mat> = match v {
        ValueJson::Function(f) => f
            .iter()
            .map(|&x| Mat::from_element(1, 1, C64::new(x, 0.0)))
            .collect(),
        ValueJson::ComplexFunction(f) => f
            .iter()
            .map(|z| Mat::from_element(1, 1, C64::new(z[0], z[1])))
            .collect(),
        ValueJson::Matrix(m) => vec![decode_matrix(m)?],
        ValueJson::Blocks(bs) => bs.iter().map(decode_matrix).collect::<Result<_>>()?,
    };
    AlgebraElement::from_blocks(target, &blocks)
}

#[derive(Serialize, Deserialize)]
struct UnitImageJson {
    block: usize,
    row: usize,
    col: usize,
    value: ValueJson,
}

#[derive(Serialize, Deserialize)]
struct CPMapRepr {
    domain: FiniteDimAlgebra,
    codomain: Codomain,
    unit_images: Vec<UnitImageJson>,
}

impl Serialize for CPMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let unit_images = self
            .domain
            .matrix_units()
            .zip(&self.images)
            .map(|((block, row, col), x)| UnitImageJson {
                block,
                row,
                col,
                value: encode_value(&self.codomain, x),
            })
            .collect();
        CPMapRepr {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            unit_images,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CPMap {
    /// Missing unit images are read as zero.
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = CPMapRepr::deserialize(d)?;
        let target = repr.codomain.algebra();
        let mut images = vec![AlgebraElement::zeros(&target); repr.domain.dimension()];
        let mut seen = vec![false; images.len()];
        for u in &repr.unit_images {
            if u.block >= repr.domain.num_blocks() {
                return Err(D::Error::custom(format!("block {} out of range", u.block)));
            }
            let r = repr.domain.block_size(u.block);
            if u.row >= r || u.col >= r {
                return Err(D::Error::custom(format!(
                    "unit ({}, {}) outside block {} of size {r}",
                    u.row, u.col, u.block
                )));
            }
            let idx = repr.domain.offset(u.block) + u.row * r + u.col;
            if seen[idx] {
                return Err(D::Error::custom(format!(
                    "unit ({}, {}, {}) listed twice",
                    u.block, u.row, u.col
                )));
            }
            seen[idx] = true;
            images[idx] = decode_value(&target, &u.value).map_err(D::Error::custom)?;
        }
        CPMap::new(repr.domain, repr.codomain, images).map_err(D::Error::custom)
    }
}

/// Choi matrix `Σ_{jk} e_jk ⊗ φ(e_jk)_b` of one domain block against one codomain block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChoiBlock {
    pub domain_block: usize,
    pub codomain_block: usize,
    #[serde(skip)]
    pub matrix: Mat,
    pub min_eigenvalue: f64,
    pub psd: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChoiReport {
    pub blocks: Vec<ChoiBlock>,
    pub min_eigenvalue: f64,
    pub completely_positive: bool,
}

pub fn choi_blocks(phi: &CPMap) -> Result<ChoiReport> {
    let asym = phi.adjoint_defect();
    if asym > ADJOINT_TOL {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    let mut blocks = Vec::new();
    let mut overall = f64::INFINITY;
    for i in 0..phi.domain.num_blocks() {
        let r = phi.domain.block_size(i);
        for b in 0..phi.target.num_blocks() {
            let s = phi.target.block_size(b);
            let mut c = Mat::from_element(r * s, r * s, ZERO);
            for j in 0..r {
                for k in 0..r {
                    c.view_mut((j * s, k * s), (s, s))
                        .copy_from(&phi.image(i, j, k).block(b));
                }
            }
            let c = (&c + c.adjoint()).scale(0.5);
            let low = if r * s == 1 {
                c[(0, 0)].re
            } else {
                hermitian_eigen(&c).values[0]
            };
            overall = overall.min(low);
            blocks.push(ChoiBlock {
                domain_block: i,
                codomain_block: b,
                matrix: c,
                min_eigenvalue: low,
                psd: low >= -CHOI_TOL,
            });
        }
    }
    Ok(ChoiReport {
        blocks,
        min_eigenvalue: overall,
        completely_positive: overall >= -CHOI_TOL,
    })
}

fn ensure_cp(phi: &CPMap) -> Result<ChoiReport> {
    let rep = choi_blocks(phi)?;
    if !rep.completely_positive {
        return Err(Error::NotPositive {
            eigenvalue: rep.min_eigenvalue,
        });
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contractivity {
    pub contractive: bool,
    pub norm: f64,
}

/// `‖φ‖ = ‖φ(1_F)‖` for completely positive `φ`.
pub fn is_contractive(phi: &CPMap) -> Result<Contractivity> {
    ensure_cp(phi)?;
    let norm = phi.unit_image().norm();
    Ok(Contractivity {
        contractive: norm <= 1.0 + 1e-9,
        norm,
    })
}

/// `x ↦ h* φ(x) h`.
pub fn compress(phi: &CPMap, h: &AlgebraElement) -> Result<CPMap> {
    if h.algebra() != &phi.target {
        return Err(Error::ShapeMismatch(format!(
            "h lives in {:?}, codomain is {:?}",
            h.algebra(),
            phi.target
        )));
    }
    let ha = h.adjoint();
    CPMap::new(
        phi.domain.clone(),
        phi.codomain.clone(),
        phi.images.iter().map(|x| &(&ha * x) * h).collect(),
    )
}

/// Extends a c.p. contraction to `F ⊕ ℂ`, the new summand mapping to `1 − φ(1_F)`.
///
/// An element `a + λ1` of the unitization corresponds to `(a + λ1_F, λ)`.
pub fn unitize(phi: &CPMap) -> Result<CPMap> {
    let c = is_contractive(phi)?;
    if !c.contractive {
        return Err(Error::precondition(format!(
            "‖φ(1)‖ = {} exceeds 1",
            c.norm
        )));
    }
    let domain = phi.domain.direct_sum(&FiniteDimAlgebra::abelian(1));
    let mut images = phi.images.clone();
    images.push(&AlgebraElement::identity(&phi.target) - &phi.unit_image());
    CPMap::new(domain, phi.codomain.clone(), images)
}

/// Block-diagonal matrix of an element.
pub fn embed_block_diagonal(x: &AlgebraElement) -> Mat {
    let n = x.algebra().total_rank();
    let mut out = Mat::from_element(n, n, ZERO);
    let mut off = 0;
    for i in 0..x.num_blocks() {
        let r = x.algebra().block_size(i);
        out.view_mut((off, off), (r, r)).copy_from(&x.block(i));
        off += r;
    }
    out
}

/// `φ(a) = V* π(a) V` with `π(e^{(i)}_{jk}) = e_jk ⊗ 1_{m_i}` on `⊕ ℂ^{r_i} ⊗ ℂ^{m_i}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StinespringDilation {
    pub rep_dimension: usize,
    /// Multiplicity `m_i` of each domain block in `π`.
    pub multiplicities: Vec<usize>,
    #[serde(skip)]
    pub rep_unit_images: Vec<Mat>,
    #[serde(skip)]
    pub v: Mat,
    pub reconstruction_error: f64,
    pub hom_defect: f64,
    /// `‖V‖²`, equal to `‖φ(1)‖`.
    pub v_norm_sq: f64,
    /// Whether `V*V = 1`.
    pub isometry: bool,
}

impl StinespringDilation {
    /// `V* π(x) V` for an element of the domain.
    pub fn compress(&self, x: &AlgebraElement) -> Mat {
        let mut pi = Mat::from_element(self.rep_dimension, self.rep_dimension, ZERO);
        let mut idx = 0;
        for i in 0..x.num_blocks() {
            let b = x.block(i);
            for j in 0..b.nrows() {
                for k in 0..b.ncols() {
                    if b[(j, k)] != ZERO {
                        pi += self.rep_unit_images[idx].scale(1.0) * b[(j, k)];
                    }
                    idx += 1;
                }
            }
        }
        self.v.adjoint() * pi * &self.v
    }
}

/// Stinespring dilation read off the Choi eigendecomposition of each block.
///
/// The codomain is embedded block-diagonally in `M_N`, `N = Σ` codomain block sizes.
pub fn stinespring(phi: &CPMap) -> Result<StinespringDilation> {
    ensure_cp(phi)?;
    let n = phi.target.total_rank();
    let embedded: Vec<Mat> = phi.images.iter().map(embed_block_diagonal).collect();
    let mut kraus_rows: Vec<Vec<Mat>> = Vec::new();
    let mut multiplicities = Vec::new();
    for i in 0..phi.domain.num_blocks() {
        let r = phi.domain.block_size(i);
        let mut c = Mat::from_element(r * n, r * n, ZERO);
        for j in 0..r {
            for k in 0..r {
                c.view_mut((j * n, k * n), (n, n))
                    .copy_from(&embedded[phi.unit_index(i, j, k)]);
            }
        }
        let eig = hermitian_eigen(&c);
        let top = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let keep: Vec<usize> = (0..eig.values.len())
            .filter(|&m| eig.values[m] > 1e-14 * top.max(1.0))
            .collect();
        // K_j[m, :] = √λ_m conj(w_m^{(j)})ᵀ
        let mut ks = Vec::with_capacity(r);
        for j in 0..r {
            let mut kj = Mat::from_element(keep.len(), n, ZERO);
            for (row, &m) in keep.iter().enumerate() {
                let s = eig.values[m].sqrt();
                for col in 0..n {
                    kj[(row, col)] = eig.vectors[(j * n + col, m)].conj() * s;
                }
            }
            ks.push(kj);
        }
        multiplicities.push(keep.len());
        kraus_rows.push(ks);
    }
    let rep_dimension: usize = phi
        .domain
        .block_sizes()
        .iter()
        .zip(&multiplicities)
        .map(|(r, m)| r * m)
        .sum();
    let mut v = Mat::from_element(rep_dimension, n, ZERO);
    let mut rep_unit_images = Vec::with_capacity(phi.domain.dimension());
    let mut off = 0;
    for (i, ks) in kraus_rows.iter().enumerate() {
        let r = phi.domain.block_size(i);
        let m = multiplicities[i];
        for (j, kj) in ks.iter().enumerate() {
            v.view_mut((off + j * m, 0), (m, n)).copy_from(kj);
        }
        for j in 0..r {
            for k in 0..r {
                let mut e = Mat::from_element(rep_dimension, rep_dimension, ZERO);
                for t in 0..m {
                    e[(off + j * m + t, off + k * m + t)] = ONE;
                }
                rep_unit_images.push(e);
            }
        }
        off += r * m;
    }
    let mut reconstruction_error = 0.0f64;
    for (idx, target) in embedded.iter().enumerate() {
        let got = v.adjoint() * &rep_unit_images[idx] * &v;
        reconstruction_error = reconstruction_error.max(mat_norm(&(got - target)));
    }
    let mut hom_defect = 0.0f64;
    let units: Vec<(usize, usize, usize)> = phi.domain.matrix_units().collect();
    for (a, &(i, j, k)) in units.iter().enumerate() {
        for (b, &(i2, l, m)) in units.iter().enumerate() {
            let prod = &rep_unit_images[a] * &rep_unit_images[b];
            let expected = if i == i2 && k == l {
                rep_unit_images[phi.unit_index(i, j, m)].clone()
            } else {
                Mat::from_element(rep_dimension, rep_dimension, ZERO)
            };
            hom_defect = hom_defect.max(mat_norm(&(prod - expected)));
        }
    }
    let vtv = v.adjoint() * &v;
    let v_norm_sq = mat_norm(&vtv);
    let isometry = mat_norm(&(vtv - Mat::identity(n, n))) <= 1e-9;
    Ok(StinespringDilation {
        rep_dimension,
        multiplicities,
        rep_unit_images,
        v,
        reconstruction_error,
        hom_defect,
        v_norm_sq,
        isometry,
    })
}

pub(crate) fn mat_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 || m.iter().all(|z| *z == ZERO) {
        0.0
    } else {
        m.clone().singular_values().max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchwarzReport {
    /// Smallest eigenvalue of `φ(x*x) − φ(x)*φ(x)`.
    pub min_eigenvalue: f64,
    /// `min_eigenvalue` floored at 0 when it is within the tolerance of 0.
    pub defect: f64,
    pub input_norm: f64,
}

pub fn schwarz_defect(phi: &CPMap, x: &AlgebraElement, tol: f64) -> Result<SchwarzReport> {
    let fx = phi.apply(x);
    let gap = &phi.apply(&(&x.adjoint() * x)) - &(&fx.adjoint() * &fx);
    let low = gap.min_eigenvalue(1e-9_f64.max(tol))?;
    Ok(SchwarzReport {
        min_eigenvalue: low,
        defect: if low >= -tol { low.max(0.0) } else { low },
        input_norm: x.norm(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplicativityReport {
    /// `‖φ(yx) − φ(y)φ(x)‖`.
    pub lhs: f64,
    /// `√ε` with `ε = ‖φ(x*x) − φ(x)*φ(x)‖`.
    pub bound: f64,
    pub ok: bool,
}

pub fn multiplicativity_defect(
    phi: &CPMap,
    x: &AlgebraElement,
    y: &AlgebraElement,
) -> MultiplicativityReport {
    let fx = phi.apply(x);
    let eps = (&phi.apply(&(&x.adjoint() * x)) - &(&fx.adjoint() * &fx)).norm();
    let lhs = (&phi.apply(&(y * x)) - &(&phi.apply(y) * &fx)).norm();
    let bound = eps.sqrt();
    MultiplicativityReport {
        lhs,
        bound,
        ok: lhs <= bound + 1e-9,
    }
}

/// `x ⊥ y` up to `tol`: all of `xy`, `yx`, `x*y`, `xy*` small.
pub fn orthogonal(x: &AlgebraElement, y: &AlgebraElement, tol: f64) -> bool {
    let xa = x.adjoint();
    let ya = y.adjoint();
    (x * y).norm() <= tol
        && (y * x).norm() <= tol
        && (&xa * y).norm() <= tol
        && (x * &ya).norm() <= tol
}

/// Graph on generators of `ℂ^s`, with an edge when the images are not orthogonal.
pub fn abelian_overlap_graph(phi: &CPMap, tol: f64) -> Result<Graph> {
    if !phi.domain.is_abelian() {
        return Err(Error::precondition("domain is not abelian"));
    }
    let s = phi.domain.num_blocks();
    Ok(Graph::from_fn(s, |i, j| {
        !orthogonal(&phi.images[i], &phi.images[j], tol)
    }))
}

/// Exact strict order of a map out of `ℂ^s`, with a maximum clique as witness.
pub fn strict_order_abelian(phi: &CPMap, tol: f64) -> Result<(usize, Vec<usize>)> {
    let g = abelian_overlap_graph(phi, tol)?;
    let clique = max_clique(&g);
    Ok((clique.len().saturating_sub(1), clique))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderZeroCheck {
    /// `φ(1_i) φ(1_j) ≠ 0` for blocks `i ≠ j`.
    CrossBlock,
    /// `φ(e_jj) φ(e_kk) ≠ 0` inside one block.
    DiagonalUnits,
    /// `[φ(1_i), φ(e_jk)] ≠ 0`.
    Commutator,
    /// The support compression `σ_i` is not multiplicative.
    SigmaMultiplicativity,
    /// `φ(e_jk) ≠ φ(1_i) σ_i(e_jk)`.
    Reconstruction,
}

/// Why a map failed order-zero certification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderZeroWitness {
    pub check: OrderZeroCheck,
    pub block: usize,
    pub other_block: Option<usize>,
    /// Matrix-unit indices involved, `(row, col)` within `block`.
    pub units: Vec<(usize, usize)>,
    pub value: f64,
    pub tol: f64,
}

impl fmt::Display for OrderZeroWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} check failed in block {}", self.check, self.block)?;
        if let Some(o) = self.other_block {
            write!(f, " against block {o}")?;
        }
        if !self.units.is_empty() {
            write!(f, " at units {:?}", self.units)?;
        }
        write!(f, " (value {:.3e} > tol {:.1e})", self.value, self.tol)
    }
}

/// Largest residuals of a successful certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderZeroCertificate {
    pub tol: f64,
    pub max_cross_block: f64,
    pub max_diagonal_product: f64,
    pub max_commutator: f64,
    pub max_sigma_defect: f64,
    pub max_reconstruction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Certification {
    OrderZero(OrderZeroCertificate),
    NotOrderZero(OrderZeroWitness),
}

impl Certification {
    pub fn is_order_zero(&self) -> bool {
        matches!(self, Certification::OrderZero(_))
    }
}

/// `σ_i(e_jk) = S φ(e_jk) S` with `S` the inverse square root of `φ(1_i)` on its support.
pub(crate) fn support_compression(
    phi: &CPMap,
    i: usize,
    cut: f64,
) -> Result<(AlgebraElement, AlgebraElement, Vec<AlgebraElement>)> {
    let h = phi.block_unit_image(i);
    let s = h.map_spectrum(1e-9, |t| if t > cut { 1.0 / t.sqrt() } else { 0.0 })?;
    let r = phi.domain.block_size(i);
    let mut sigma = Vec::with_capacity(r * r);
    for j in 0..r {
        for k in 0..r {
            sigma.push(&(&s * phi.image(i, j, k)) * &s);
        }
    }
    Ok((h, s, sigma))
}

/// Certifies strict order zero through the structure `φ = h·σ` blockwise.
pub fn certify_order_zero(phi: &CPMap, tol: f64) -> Result<Certification> {
    let asym = phi.adjoint_defect();
    if asym > ADJOINT_TOL {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    let m = phi.domain.num_blocks();
    let units: Vec<AlgebraElement> = (0..m).map(|i| phi.block_unit_image(i)).collect();
    let fail = |check, block, other_block, units: Vec<(usize, usize)>, value| {
        Ok(Certification::NotOrderZero(OrderZeroWitness {
            check,
            block,
            other_block,
            units,
            value,
            tol,
        }))
    };
    let mut cert = OrderZeroCertificate {
        tol,
        max_cross_block: 0.0,
        max_diagonal_product: 0.0,
        max_commutator: 0.0,
        max_sigma_defect: 0.0,
        max_reconstruction: 0.0,
    };
    for i in 0..m {
        for j in i + 1..m {
            let v = (&units[i] * &units[j]).norm();
            if v > tol {
                return fail(OrderZeroCheck::CrossBlock, i, Some(j), vec![], v);
            }
            cert.max_cross_block = cert.max_cross_block.max(v);
        }
    }
    for i in 0..m {
        let r = phi.domain.block_size(i);
        for j in 0..r {
            for k in j + 1..r {
                let v = (phi.image(i, j, j) * phi.image(i, k, k)).norm();
                if v > tol {
                    return fail(
                        OrderZeroCheck::DiagonalUnits,
                        i,
                        None,
                        vec![(j, j), (k, k)],
                        v,
                    );
                }
                cert.max_diagonal_product = cert.max_diagonal_product.max(v);
            }
        }
        for j in 0..r {
            for k in 0..r {
                let v = units[i].commutator(phi.image(i, j, k)).norm();
                if v > tol {
                    return fail(OrderZeroCheck::Commutator, i, None, vec![(j, k)], v);
                }
                cert.max_commutator = cert.max_commutator.max(v);
            }
        }
        let (h, _, sigma) = support_compression(phi, i, SUPPORT_CUT)?;
        for j in 0..r {
            for k in 0..r {
                for l in 0..r {
                    for mm in 0..r {
                        let prod = &sigma[j * r + k] * &sigma[l * r + mm];
                        let v = if k == l {
                            prod.dist(&sigma[j * r + mm])
                        } else {
                            prod.norm()
                        };
                        if v > tol {
                            return fail(
                                OrderZeroCheck::SigmaMultiplicativity,
                                i,
                                None,
                                vec![(j, k), (l, mm)],
                                v,
                            );
                        }
                        cert.max_sigma_defect = cert.max_sigma_defect.max(v);
                    }
                }
            }
        }
        for j in 0..r {
            for k in 0..r {
                let v = (&h * &sigma[j * r + k]).dist(phi.image(i, j, k));
                if v > tol {
                    return fail(OrderZeroCheck::Reconstruction, i, None, vec![(j, k)], v);
                }
                cert.max_reconstruction = cert.max_reconstruction.max(v);
            }
        }
    }
    Ok(Certification::OrderZero(cert))
}

/// Mutually orthogonal minimal projections of the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementarySet {
    pub projections: Vec<AlgebraElement>,
}

impl ElementarySet {
    /// Largest pairwise product and whether every member has rank one in a single block.
    pub fn check(&self) -> (f64, bool) {
        let mut worst = 0.0f64;
        for a in 0..self.projections.len() {
            for b in a + 1..self.projections.len() {
                worst = worst.max((&self.projections[a] * &self.projections[b]).norm());
            }
        }
        let minimal = self.projections.iter().all(|p| {
            let nonzero: Vec<usize> = (0..p.num_blocks())
                .filter(|&i| p.block(i).iter().any(|z| z.norm() > 1e-12))
                .collect();
            nonzero.len() == 1 && (p.trace().re - 1.0).abs() < 1e-9
        });
        (worst, minimal)
    }

    /// Smallest `‖φ(e)φ(ē)‖` over distinct pairs.
    pub fn min_image_product(&self, phi: &CPMap) -> f64 {
        let imgs: Vec<AlgebraElement> = self.projections.iter().map(|p| phi.apply(p)).collect();
        min_pair_product(&imgs)
    }
}

fn min_pair_product(imgs: &[AlgebraElement]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..imgs.len() {
        for b in a + 1..imgs.len() {
            best = best.min((&imgs[a] * &imgs[b]).norm());
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementarySearch {
    pub set: Option<ElementarySet>,
    pub attempts: usize,
    pub seed: u64,
    /// True when no such set can exist (size exceeds the block-clique bound).
    pub infeasible: bool,
}

pub const DEFAULT_SEARCH_BUDGET: usize = 400;

/// Block graph: edge when `φ(1_i)` and `φ(1_j)` are not orthogonal.
/// Capacity: 0 for blocks with zero image, 1 for order-zero blocks, `r_i` otherwise.
fn block_structure(phi: &CPMap, tol: f64) -> Result<(Graph, Vec<usize>)> {
    let m = phi.domain.num_blocks();
    let units: Vec<AlgebraElement> = (0..m).map(|i| phi.block_unit_image(i)).collect();
    let g = Graph::from_fn(m, |i, j| !orthogonal(&units[i], &units[j], tol));
    let mut caps = Vec::with_capacity(m);
    for i in 0..m {
        let r = phi.domain.block_size(i);
        let cap = if units[i].norm() <= tol {
            0
        } else if r == 1 || certify_order_zero(&phi.restrict_to_block(i), tol)?.is_order_zero() {
            1
        } else {
            r
        };
        caps.push(cap);
    }
    Ok((g, caps))
}

fn frame_projection(domain: &FiniteDimAlgebra, block: usize, v: &DVector<C64>) -> AlgebraElement {
    let mut out = AlgebraElement::zeros(domain);
    out.block_mut(block).copy_from(&(v * v.adjoint()));
    out
}

/// Random 2×2 unitary near the identity, acting on columns `a`, `b` of `u`.
fn rotate_columns<R: Rng + ?Sized>(rng: &mut R, u: &mut Mat, a: usize, b: usize, radius: f64) {
    let w = sample::unitary_near(rng, &Mat::identity(2, 2), radius);
    let ca = u.column(a).into_owned();
    let cb = u.column(b).into_owned();
    u.set_column(a, &(&ca * w[(0, 0)] + &cb * w[(1, 0)]));
    u.set_column(b, &(&ca * w[(0, 1)] + &cb * w[(1, 1)]));
}

/// Searches for `m` orthogonal minimal projections whose images pairwise multiply to norm `> tol`.
///
/// Frames start at the matrix units, then get perturbed inside 2×2 corners by
/// unitaries near the identity, restarting from Haar frames every 50 samples.
pub fn witness_elementary_set(
    phi: &CPMap,
    m: usize,
    seed: u64,
    tol: f64,
    budget: usize,
) -> Result<ElementarySearch> {
    let domain = phi.domain.clone();
    let nothing = |attempts, infeasible| ElementarySearch {
        set: None,
        attempts,
        seed,
        infeasible,
    };
    if m == 0 {
        return Ok(ElementarySearch {
            set: Some(ElementarySet {
                projections: vec![],
            }),
            attempts: 0,
            seed,
            infeasible: false,
        });
    }
    let (g, caps) = block_structure(phi, tol)?;
    if m == 1 {
        let e = AlgebraElement::matrix_unit(&domain, 0, 0, 0);
        return Ok(ElementarySearch {
            set: Some(ElementarySet {
                projections: vec![e],
            }),
            attempts: 1,
            seed,
            infeasible: false,
        });
    }
    let (weight, clique) = max_weight_clique(&g, &caps);
    if weight < m {
        return Ok(nothing(0, true));
    }
    // fill the largest-capacity blocks of the clique first
    let mut order = clique.clone();
    order.sort_by(|&a, &b| caps[b].cmp(&caps[a]).then(a.cmp(&b)));
    let mut counts = vec![0usize; domain.num_blocks()];
    let mut left = m;
    for &i in &order {
        let c = caps[i].min(left);
        counts[i] = c;
        left -= c;
    }
    let active: Vec<usize> = (0..domain.num_blocks())
        .filter(|&i| counts[i] > 0)
        .collect();
    let mut rng = sample::rng(seed);
    let build = |frames: &[Mat]| -> (Vec<AlgebraElement>, Vec<AlgebraElement>) {
        let mut ps = Vec::with_capacity(m);
        for (f, &i) in frames.iter().zip(&active) {
            for c in 0..counts[i] {
                ps.push(frame_projection(&domain, i, &f.column(c).into_owned()));
            }
        }
        let imgs = ps.iter().map(|p| phi.apply(p)).collect();
        (ps, imgs)
    };
    let identity_frames: Vec<Mat> = active
        .iter()
        .map(|&i| {
            let r = domain.block_size(i);
            Mat::identity(r, r)
        })
        .collect();
    let mut best_frames = identity_frames;
    let (mut best_ps, imgs) = build(&best_frames);
    let mut best_score = min_pair_product(&imgs);
    for attempt in 1..=budget.max(1) {
        if best_score > tol {
            return Ok(ElementarySearch {
                set: Some(ElementarySet {
                    projections: best_ps,
                }),
                attempts: attempt,
                seed,
                infeasible: false,
            });
        }
        if attempt == budget.max(1) {
            break;
        }
        let candidate: Vec<Mat> = if attempt % 50 == 0 {
            active
                .iter()
                .map(|&i| sample::haar_unitary(&mut rng, domain.block_size(i)))
                .collect()
        } else {
            let mut frames = best_frames.clone();
            let slot = rng.random_range(0..active.len());
            let r = domain.block_size(active[slot]);
            if r >= 2 {
                let a = rng.random_range(0..counts[active[slot]]);
                let mut b = rng.random_range(0..r - 1);
                if b >= a {
                    b += 1;
                }
                rotate_columns(&mut rng, &mut frames[slot], a, b, 0.5);
            }
            frames
        };
        let (ps, imgs) = build(&candidate);
        let score = min_pair_product(&imgs);
        if score >= best_score || attempt % 50 == 0 {
            best_score = score;
            best_frames = candidate;
            best_ps = ps;
        }
    }
    Ok(nothing(budget, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrictOrderBounds {
    pub lower: usize,
    pub upper: usize,
    pub exact: bool,
    /// How the bounds were obtained.
    pub method: String,
    pub tol: f64,
}

/// Bounds on the strict order of `φ`.
///
/// Abelian domains are exact by clique search and single blocks by the dichotomy.
/// With several blocks the upper bound is a weighted clique on the block graph
/// and the lower bound comes from the best elementary set found.
pub fn strict_order_bounds(phi: &CPMap, tol: f64, seed: u64) -> Result<StrictOrderBounds> {
    if phi.domain.is_abelian() {
        let (ord, _) = strict_order_abelian(phi, tol)?;
        return Ok(StrictOrderBounds {
            lower: ord,
            upper: ord,
            exact: true,
            method: "abelian clique".into(),
            tol,
        });
    }
    if phi.domain.num_blocks() == 1 {
        let r = phi.domain.block_size(0);
        let ord = if certify_order_zero(phi, tol)?.is_order_zero() {
            0
        } else {
            r - 1
        };
        return Ok(StrictOrderBounds {
            lower: ord,
            upper: ord,
            exact: true,
            method: "dichotomy".into(),
            tol,
        });
    }
    let (g, caps) = block_structure(phi, tol)?;
    let (weight, _) = max_weight_clique(&g, &caps);
    let upper = weight.saturating_sub(1);
    let mut lower = 0;
    for size in (2..=upper + 1).rev() {
        let found = witness_elementary_set(phi, size, seed, tol, DEFAULT_SEARCH_BUDGET)?;
        if found.set.is_some() {
            lower = size - 1;
            break;
        }
    }
    Ok(StrictOrderBounds {
        lower,
        upper,
        exact: lower == upper,
        method: "block clique and elementary-set search".into(),
        tol,
    })
}

/// `φ ⊗ id_{M_r}` on `F ⊗ M_r`.
pub fn tensor_with_identity(phi: &CPMap, r: usize) -> Result<CPMap> {
    if r == 0 {
        return Err(Error::precondition("r must be at least 1"));
    }
    if r == 1 {
        return Ok(phi.clone());
    }
    let domain = phi.domain.tensor(r);
    let codomain = phi.codomain.tensor(r);
    let units: Vec<Mat> = (0..r * r)
        .map(|idx| {
            let mut e = Mat::from_element(r, r, ZERO);
            e[(idx / r, idx % r)] = ONE;
            e
        })
        .collect();
    CPMap::from_fn(domain, codomain, |i, row, col| {
        let (j, a) = (row / r, row % r);
        let (k, b) = (col / r, col % r);
        phi.image(i, j, k).kron(&units[a * r + b])
    })
}
