//! Asynchronous federated policy gradient (AFedPG) on exactly solvable
//! tabular MDPs.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! * [`env`]: tabular MDPs, trajectory sampling and dynamic-programming
//!   oracles for values, returns and visitation measures;
//! * [`policy`]: the tabular softmax policy, its score function, the
//!   smoothness constants of the expected return and the exact gradient;
//! * [`gradient`]: the REINFORCE estimator and the momentum combination;
//! * [`afedpg`]: the server and agent state machines with delay-adaptive
//!   lookahead and normalized updates;
//! * [`sim`]: a deterministic discrete-event model of heterogeneous agents
//!   plus synchronous and single-agent baselines;
//! * [`analysis`]: numerical checks of the convergence machinery.
//!
//! IO, configuration files and the threaded runner live in the `afedpg`
//! companion crate.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod afedpg;
pub mod analysis;
pub mod env;
pub mod error;
pub mod gradient;
pub mod linalg;
pub mod policy;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
