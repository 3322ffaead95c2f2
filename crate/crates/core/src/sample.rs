//! Seeded random matrices. Every generator takes the RNG explicitly so a run
//! is fully determined by its `u64` seed.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matfun::{hermitian_eigen, AlgebraElement, FiniteDimAlgebra, Mat, C64, ZERO};

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Matrix of i.i.d. standard complex gaussians.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// Haar-distributed unitary: QR of a gaussian matrix with the phases of `R`'s diagonal fixed.
pub fn haar_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Mat {
    let z = gaussian_matrix(rng, n, n);
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

/// `U diag(values) U*` with Haar `U`.
pub fn hermitian_with_spectrum<R: Rng + ?Sized>(rng: &mut R, values: &[f64]) -> Mat {
    let n = values.len();
    let u = haar_unitary(rng, n);
    let d = Mat::from_diagonal(&DVector::from_iterator(
        n,
        values.iter().map(|&v| C64::new(v, 0.0)),
    ));
    let m = &u * d * u.adjoint();
    (&m + m.adjoint()).scale(0.5)
}

/// Gaussian hermitian matrix (GUE up to scaling).
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Mat {
    let g = gaussian_matrix(rng, n, n);
    (&g + g.adjoint()).scale(0.5)
}

/// Positive matrix of the given rank, eigenvalues drawn from `[0.2, 1]`.
pub fn random_psd_of_rank<R: Rng + ?Sized>(rng: &mut R, n: usize, rank: usize) -> AlgebraElement {
    let values: Vec<f64> = (0..n)
        .map(|i| {
            if i < rank {
                rng.random_range(0.2..1.0)
            } else {
                0.0
            }
        })
        .collect();
    AlgebraElement::from_matrix(hermitian_with_spectrum(rng, &values))
}

/// Positive contraction with eigenvalues uniform in `[0, 1]`.
pub fn random_positive_contraction<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Mat {
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    hermitian_with_spectrum(rng, &values)
}

/// Contraction `A/‖A‖ · s` with gaussian `A` and `s` uniform in `[0, 1]`.
pub fn random_contraction<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Mat {
    let a = gaussian_matrix(rng, n, n);
    let norm = a.clone().singular_values().max();
    let s: f64 = rng.random_range(0.0..1.0);
    if norm > 0.0 {
        a.scale(s / norm)
    } else {
        a
    }
}

/// Random element of a block algebra, one gaussian block each.
pub fn random_element<R: Rng + ?Sized>(rng: &mut R, algebra: &FiniteDimAlgebra) -> AlgebraElement {
    let blocks: Vec<Mat> = algebra
        .block_sizes()
        .iter()
        .map(|&r| gaussian_matrix(rng, r, r))
        .collect();
    AlgebraElement::from_blocks(algebra, &blocks).expect("shapes match by construction")
}

/// Random contraction in a block algebra with norm at most 1.
pub fn random_contraction_element<R: Rng + ?Sized>(
    rng: &mut R,
    algebra: &FiniteDimAlgebra,
) -> AlgebraElement {
    let blocks: Vec<Mat> = algebra
        .block_sizes()
        .iter()
        .map(|&r| random_contraction(rng, r))
        .collect();
    AlgebraElement::from_blocks(algebra, &blocks).expect("shapes match by construction")
}

/// Orthogonal projection of rank `k` in `M_n`.
pub fn random_projection<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Mat {
    let u = haar_unitary(rng, n);
    let v = u.columns(0, k);
    &v * v.adjoint()
}

/// `center · exp(iH)` with hermitian `H` of norm `radius · t`, `t` uniform in `[0, 1)`.
pub fn unitary_near<R: Rng + ?Sized>(rng: &mut R, center: &Mat, radius: f64) -> Mat {
    let n = center.nrows();
    let h = random_hermitian(rng, n);
    let eig = hermitian_eigen(&h);
    let scale = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let t: f64 = rng.random_range(0.0..1.0);
    let factor = if scale > 0.0 { radius * t / scale } else { 0.0 };
    let mut scaled = eig.vectors.clone();
    for (c, &lambda) in eig.values.iter().enumerate() {
        let phase = C64::new(0.0, lambda * factor).exp();
        let mut col = scaled.column_mut(c);
        col *= phase;
    }
    let expo = &scaled * eig.vectors.adjoint();
    center * expo
}

/// Rank-`k` projection whose range sits inside the first `n` coordinates of `C^total`.
pub fn embed(m: &Mat, total: usize) -> Mat {
    let mut out = Mat::from_element(total, total, ZERO);
    out.view_mut((0, 0), (m.nrows(), m.ncols())).copy_from(m);
    out
}
