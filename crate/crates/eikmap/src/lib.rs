//! Anisotropic eikonal solver on triangulated surfaces and inversion of
//! sparse activation-time measurements for the full conductivity tensor
//! (fiber direction, fiber and cross-fiber velocity).
//!
//! The toolkit has two halves:
//!
//! * a forward model: the anisotropic eikonal equation solved by a
//!   parallel soft-min fixed-point iteration on a triangulated 2-D
//!   manifold embedded in R³, differentiable with respect to the
//!   per-triangle conductivity parameters;
//! * an inverse solver: Huber total-variation regularized least squares
//!   over a log-Euclidean tensor parameterization, minimized by quadratic
//!   majorization with Lipschitz backtracking and a primal-dual inner loop.
//!
//! Units convention: mesh coordinates in mm, times in ms. Conductivity
//! tensor entries are then in (mm/ms)² = (m/s)², so velocity read-outs are
//! square roots of eigenvalues with no further conversion.

pub mod eikonal;
pub mod error;
pub mod frames;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod tv;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
