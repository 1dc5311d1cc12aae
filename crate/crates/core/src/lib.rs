//! Geometric-phase distributions for open quantum systems.
//!
//! A joint unitary (or a set of Kraus operators) yields one conditional
//! system trajectory per reservoir state. Each trajectory gets a phase from
//! the functional `Z[psi] = D[psi] <psi(0)|psi(t)>`, and the weighted phases
//! form the distributions `P_Z` and `P_H`.
//!
//! Every numerical type is generic over [`Real`] (`f32` or `f64`). The
//! aliases below fix the double-precision variants.

// `!(x >= 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod distribution;
pub mod error;
pub mod hilbert;
pub mod models;
pub mod phase;
pub mod scalar;
pub mod weakcoupling;

pub use error::{Error, Result};
pub use scalar::{Real, C};

/// Version of this crate.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Complex64 = C<f64>;
pub type CVector64 = hilbert::CVector<f64>;
pub type CMatrix64 = hilbert::CMatrix<f64>;
pub type TimeGrid64 = hilbert::TimeGrid<f64>;
pub type Schedule64 = hilbert::Schedule<f64>;
pub type Trajectory64 = phase::Trajectory<f64>;
pub type PhaseDistribution64 = distribution::PhaseDistribution<f64>;
pub type MomentReport64 = distribution::MomentReport<f64>;
pub type ReservoirSpec64 = channels::ReservoirSpec<f64>;
pub type KrausChannel64 = channels::KrausChannel<f64>;
pub type LindbladModel64 = channels::LindbladModel<f64>;
pub type WeakCouplingModel64 = weakcoupling::WeakCouplingModel<f64>;

pub type Complex32 = C<f32>;
pub type CVector32 = hilbert::CVector<f32>;
pub type CMatrix32 = hilbert::CMatrix<f32>;
pub type TimeGrid32 = hilbert::TimeGrid<f32>;
pub type Trajectory32 = phase::Trajectory<f32>;
pub type PhaseDistribution32 = distribution::PhaseDistribution<f32>;
