//! Saddle points of the convex–concave ferrofluid free-boundary functional
//!
//! ```text
//! J(u, ρ) = ∫_D ρ M(|∇u|) + ½(1 − ρ)|∇u|² − μ_d ∂_z u  −  ∫_D (b z + p₀) ρ  −  τ TV(ρ)
//! ```
//!
//! on a discretized container `D = Ω × (−1, 1)`: convex in the magnetic
//! potential `u`, concave in the ferrofluid density `ρ`.
//!
//! * [`maglaw`]: magnetization laws `μ`, `M` and their constants.
//! * [`grid`]: the discretization and field types.
//! * [`functional`]: `J`, its parts, the graph form `F`, and the linear-law energies.
//! * [`inner`]: `min_u J(u, ρ)`.
//! * [`outer`]: `max_ρ J(u, ρ)` over densities of fixed volume.
//! * [`saddle`]: the alternating saddle iteration and verification checks.
//! * [`config`], [`io`], [`cli`]: configuration, field files, reports and the command line.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod functional;
pub mod grid;
pub mod inner;
pub mod io;
pub mod maglaw;
pub mod outer;
pub mod saddle;

pub use error::{Error, Result};
