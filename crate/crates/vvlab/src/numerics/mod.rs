//! Shared numerical kernels.

pub mod fit;
pub mod logsum;
pub mod mp;
pub mod quad;
pub mod roots;
pub mod spline;
pub mod tridiag;
