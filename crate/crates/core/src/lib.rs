//! Training-plan search and simulation for heterogeneous GPU clusters.
//!
//! The planner partitions the cluster into data-parallel GPU groups by
//! bandwidth ([`partition`]), lays pipeline stages and interleaved
//! ministages over them ([`configure`]), and ranks candidates with
//! closed-form latency and memory models ([`cost`]). The [`sim`] module
//! executes a plan event by event and serves as the reference for those
//! models.
#![no_std]

extern crate alloc;

pub mod configure;
pub mod context;
pub mod cost;
pub mod partition;
pub mod plan;
pub mod sim;
pub mod synth;
pub mod workload;

pub use configure::{select_plan, PlanSelection};
pub use context::{PlannerConfig, PlanningContext};
pub use cost::{CommParams, LatencyEstimate, MemoryEstimate, StrategyKind};
pub use partition::{ClusterGraph, Partition};
pub use plan::{GpuGroup, PlanError, TrainingPlan};
pub use sim::{simulate, SimError, Timeline};
pub use workload::{ClusterProfile, GpuDevice, ModelSpec, RuntimeSample, WorkloadError, WorkloadSpec};
