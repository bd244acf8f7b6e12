//! Certified abstraction-based control of stochastic nonlinear systems:
//! interval MDP abstraction, robust synthesis of permissive policies, and
//! model predictive control restricted to the certified input sets.

pub mod abstraction;
pub mod benchmarks;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod mpc;
pub mod partition;
pub mod pipeline;
pub mod pwa;
pub mod qp;
pub mod simulation;
pub mod synthesis;

pub use abstraction::{build_imdp, ActionSet, Imdp};
pub use dynamics::{Dynamics, NoiseStream, SystemModel};
pub use error::{Error, Result};
pub use geometry::{Interval, IntervalBox};
pub use partition::{Label, LabelMode, Partition};
pub use synthesis::{robust_value_iteration, PermissivePolicy, RobustPolicy, ValueBounds};
