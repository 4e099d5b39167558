//! Laplace and skew-corrected Laplace approximations for posteriors `π ∝ e^{-V}`.
//!
//! The crate fits the Gaussian `γ̂ = N(x̂, ∇²V(x̂)⁻¹)`, builds the cubic skew
//! factor `S` from the whitened third derivative, and computes the error
//! diagnostics (`ε̄₃`, `L_TV`, weighted operator norms, assembled bounds).
//!
//! Bundled targets: a Dirichlet posterior from multinomial counts, a logistic
//! regression posterior, and the population logistic potential.

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod laplace;
pub mod linalg;
pub mod logreg;
pub mod model;
pub mod multinomial;
pub mod population;
pub mod quadrature;
pub mod rng;
pub mod skew;
pub mod tensor;

pub use error::{Error, Result};
pub use laplace::{find_mode, fit_laplace, sample_gaussian, whitened_third, LaplaceFit, ModeOptions, ModeResult, Representation};
pub use model::{check_derivatives, DerivativeCheckReport, PosteriorModel, QuadraticModel};
pub use skew::SkewCorrection;
pub use tensor::WhitenedThird;

pub use nalgebra::{DMatrix, DVector};
