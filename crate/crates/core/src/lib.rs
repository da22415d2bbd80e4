//! Numerical toolkit for volume gaps of closed minimal submanifolds in round
//! spheres.
//!
//! The crate is organised bottom-up:
//!
//! * [`specfn`]: log-Gamma, sphere/ball/Clifford volumes and the closed-form
//!   gap constants.
//! * [`catalog`]: explicit minimal immersions (equators, Clifford tori,
//!   multiply covered great circles) with analytic Jacobians, normals,
//!   multiplicity counting and a finite-difference Laplace–Beltrami operator.
//! * [`quad`]: tensor-product / Monte Carlo integration over charts, including
//!   integrals restricted to slabs `{s <= <f, a> <= t}` and cumulative profiles.
//! * [`height`]: height functions, the level-set monotonicity profile, the
//!   density `xi`, slab bounds and the half-space inequality audit.
//! * [`curvature`]: shape operator, `S = |A|^2`, `Tr A^3`, integral-Einstein
//!   conditions and Simons-identity residuals for hypersurfaces.
//! * [`verify`]: the suite of named pass/fail checks.

pub mod catalog;
pub mod compare;
pub mod curvature;
mod error;
pub mod height;
mod linalg;
pub mod quad;
pub mod specfn;
pub mod verify;

pub use error::{Error, Result};
