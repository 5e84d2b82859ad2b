//! Slice management agent for a two-slice (URLLC / eMBB) cell.
//!
//! The crate is `no_std` with `alloc`. It holds everything that does not
//! touch the outside world:
//!
//! - [`domain`]: rates, slice configs, RB ledgers and the network state
//! - [`perception`]: request parsing and network observations
//! - [`memory`]: state keys, the action log and the known-state cache
//! - [`planning`]: the five-step workflow, the planner contract and the rule-based planner
//! - [`tools`]: channel generation, zero-forcing rate caps, handover execution
//! - [`baseline`]: the traditional random-within-range controller
//! - [`sim`]: scenario generation, the arrival loop and checkpoint comparison
//!
//! File formats, the LLM transport and the CLI live in the `slicesim` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baseline;
pub mod domain;
pub mod memory;
pub mod perception;
pub mod planning;
pub mod sim;
pub mod tools;

pub use domain::{Mbps, NetworkState, RateRange, RejectReason, SliceConfig, SliceKind, SliceLedger, UserId};
pub use planning::{Agent, IntentCatalog, Outcome, Planner, WorkflowConfig};
pub use sim::{gen_scenario, run, Policy, RunConfig, Scenario, Simulation};
