//! Safe online model-based reinforcement learning for control-affine systems.
//!
//! The crate wires together five pieces:
//!
//! * [`dynamics`] — control-affine plants `ẋ = f(x) + g(x)u` with a
//!   structured drift parametrization `f(x) = Y(x)θ`.
//! * [`safety`] — reciprocal barriers over sets `{h ≥ 0}`, their recentered
//!   Lyapunov-like form `B = (b − b(0))²`, and the gradient-descent
//!   safeguarding controller built from `∇B`.
//! * [`basis`] — state-following polynomial kernels whose centers ride along
//!   with the current state, used to represent the value function locally.
//! * [`sysid`] — integral concurrent learning: drift-weight estimation from
//!   windowed integrals of the dynamics kept in a small history stack.
//! * [`learner`] — the actor-critic core: Bellman errors on and off the
//!   trajectory, recursive-least-squares critic updates with a forgetting
//!   factor, and a projected actor update.
//!
//! [`sim`] assembles everything into a fixed-step RK4 closed loop and ships
//! the two bundled experiment families (a nonlinear system inside parabolic
//! safe sets, and a single integrator avoiding a disk obstacle).

pub mod basis;
pub mod dynamics;
pub mod error;
pub mod learner;
pub mod safety;
pub mod scenarios;
pub mod sim;
pub mod sysid;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
