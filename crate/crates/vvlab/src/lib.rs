//! Numerical laboratory for boundary null-control of the vanishing-viscosity
//! transport equation `(∂_t + f′∂_x + 𝔟 − ε∂_x²) y = 0` on `[0, L]`.
//!
//! Modules follow the chain from the vector field to measured control costs:
//! [`problem`] → [`agmon`] / [`classical`] → [`bounds`]; [`spectral`] discretizes
//! the semiclassical operator `P_ε = −ε²∂_x² + f′²/4 + ε q_f`; [`transport`] solves the
//! ε = 0 limit; [`moment`] builds biorthogonal families and controls; [`sim`] runs
//! time-domain solvers and the Gramian cost scan.

pub mod agmon;
pub mod bounds;
pub mod classical;
pub mod error;
pub mod moment;
pub mod numerics;
pub mod problem;
pub mod sim;
pub mod spectral;
pub mod transport;

pub use error::{Error, Result};
