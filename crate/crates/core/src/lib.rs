//! Completely positive maps between finite-dimensional C*-algebras, strict
//! order, projection perturbation, and the translation between covers of
//! finite metric spaces and completely positive approximations.

pub mod clique;
pub mod covers;
pub mod cpmap;
pub mod cprlab;
pub mod error;
pub mod matfun;
pub mod orderzero;
pub mod projkit;
pub mod sample;

pub use covers::{Cover, FiniteMetricSpace, SimplicialComplex};
pub use cpmap::{CPMap, Codomain, ElementarySet, StinespringDilation};
pub use cprlab::{CPApproximation, ExtractionConstants, FunctionSystem};
pub use error::{Error, Result};
pub use matfun::{AlgebraElement, FiniteDimAlgebra, ScalarFunction, Tolerances, C64};
