//! Hyperbolic multi-modal embedding toolkit built on the Lorentz hyperboloid.
//!
//! The crate is organised bottom-up:
//!
//! - [`real`] and [`grad`]: a scalar abstraction shared by plain `f64`
//!   evaluation and a reverse-mode tape, plus finite-difference checking.
//! - [`lorentz`]: hyperboloid points, the exponential map at the origin and
//!   geodesic distance.
//! - [`entailment`] and [`centroid`]: entailment cones across three
//!   modalities and Einstein-midpoint centroid ordering.
//! - [`losses`]: Lorentzian InfoNCE, Smooth-L1 alignment with stop-gradient,
//!   Chamfer reconstruction and uncertainty-weighted loss combination.
//! - [`hyperbolicity`]: Gromov products and relative delta-hyperbolicity.
//! - [`synth`]: synthetic concept trees with text/image/point-cloud views.
//! - [`lemb`]: the `LEMB` embedding file format and raw point-set files.

pub mod centroid;
pub mod entailment;
pub mod error;
pub mod grad;
pub mod hyperbolicity;
pub mod lemb;
pub mod lorentz;
pub mod losses;
pub mod real;
pub mod synth;

pub use error::{Error, Result};
pub use grad::{Gradients, Parameter, Tape, Var};
pub use lorentz::{CurvatureSpace, LorentzPoint, ScaleParam, TangentAtOrigin};
pub use real::Real;
