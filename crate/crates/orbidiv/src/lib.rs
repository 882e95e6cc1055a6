//! Numerical toolkit for constructing and certifying transverse divisors on
//! flat symplectic orbifolds.
//!
//! The pipeline operates on two kinds of model spaces: linear charts `C^n / H`
//! for a finite unitary group `H`, and global torus quotients `T^{2n} / G` for
//! a finite group `G` acting linearly and preserving the period lattice. On
//! both, the crate builds equivariant peak sections of high tensor powers of
//! the prequantum line bundle, distributes perturbation centers on separated
//! lattices, runs a cascade of local perturbations until the section is
//! uniformly transverse to zero, and then extracts and analyzes the zero
//! divisor.
//!
//! Modules follow the pipeline order:
//!
//! * [`group`]: finite unitary actions, subgroups, fixed subspaces.
//! * [`strata`]: the isotropy stratification of a quotient and its poset.
//! * [`lattice`]: separated, evenly distributed equivariant lattices.
//! * [`sections`]: peak sections, equivariant averaging, analytic jets.
//! * [`transversality`]: perturbation schedules, local perturbation search,
//!   the globalization loop, and transversality certificates.
//! * [`divisor`]: zero set extraction, symplectic checks, Morse analysis.

pub mod cvec;
pub mod divisor;
pub mod geometry;
pub mod group;
pub mod lattice;
pub mod linalg;
pub mod presets;
pub mod sections;
pub mod strata;
pub mod transversality;

pub use cvec::CVec;
pub use geometry::{ModelChart, TorusQuotient};
pub use group::FiniteUnitaryAction;
