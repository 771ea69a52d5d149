//! Learned placement search for task graphs on heterogeneous device networks.
//!
//! The crate is `no_std` and only needs `alloc`. It contains the data model,
//! the random instance generators, a deterministic discrete-event runtime
//! simulator, the placement graph ("gpNet") construction, the two-way
//! message-passing policy network with hand-written gradients, the search MDP,
//! REINFORCE training with Adam, and the comparison baselines (HEFT, EFT
//! search, random sampling, exhaustive search).
//!
//! File formats, datasets and the command line live in the `giph` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod baselines;
pub mod domain;
pub mod environment;
pub mod error;
pub mod generator;
pub mod gpnet;
pub mod neuralnet;
pub mod simulator;
pub mod training;

mod math;

#[cfg(test)]
pub(crate) mod testutil;

pub use domain::{
    topological_order, DataLink, Device, DeviceId, DeviceNetwork, HwTag, Link, Placement,
    ProblemInstance, Task, TaskGraph, TaskId, UNIVERSAL_TAG,
};
pub use error::{Error, Result};
