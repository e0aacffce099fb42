//! Discrete-event simulation of one training iteration.
//!
//! [`build_schedule`] turns a plan into a task graph; [`run`] executes it
//! with list scheduling over four independent lanes per device.

mod engine;
mod schedule;

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::context::PlanningContext;
use crate::cost::StrategyKind;
use crate::plan::{PlanError, TrainingPlan};
use crate::workload::DeviceIdx;

pub use engine::run;
pub use schedule::build_schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lane {
    Compute,
    Collective,
    P2p,
    HostTransfer,
}

impl Lane {
    pub const ALL: [Lane; 4] = [Lane::Compute, Lane::Collective, Lane::P2p, Lane::HostTransfer];

    pub fn name(self) -> &'static str {
        match self {
            Lane::Compute => "compute",
            Lane::Collective => "collective",
            Lane::P2p => "p2p",
            Lane::HostTransfer => "host_transfer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Fwd,
    Bwd,
    Recompute,
    AllGather,
    ReduceScatter,
    P2PSend,
    P2PRecv,
    OffloadParams,
    LoadParams,
    OffloadAct,
    LoadAct,
    OptimStep,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Fwd => "Fwd",
            EventKind::Bwd => "Bwd",
            EventKind::Recompute => "Recompute",
            EventKind::AllGather => "AllGather",
            EventKind::ReduceScatter => "ReduceScatter",
            EventKind::P2PSend => "P2PSend",
            EventKind::P2PRecv => "P2PRecv",
            EventKind::OffloadParams => "OffloadParams",
            EventKind::LoadParams => "LoadParams",
            EventKind::OffloadAct => "OffloadAct",
            EventKind::LoadAct => "LoadAct",
            EventKind::OptimStep => "OptimStep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MemCategory {
    Params,
    Grads,
    Optim,
    Activations,
}

impl MemCategory {
    pub const ALL: [MemCategory; 4] =
        [MemCategory::Params, MemCategory::Grads, MemCategory::Optim, MemCategory::Activations];
}

/// Allocation (`alloc`) or free of `bytes` on `device`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemDelta {
    pub device: DeviceIdx,
    pub category: MemCategory,
    pub bytes: u64,
    pub alloc: bool,
}

impl MemDelta {
    pub fn alloc(device: DeviceIdx, category: MemCategory, bytes: u64) -> Self {
        Self { device, category, bytes, alloc: true }
    }

    pub fn free(device: DeviceIdx, category: MemCategory, bytes: u64) -> Self {
        Self { device, category, bytes, alloc: false }
    }
}

/// Ready-queue order: lower sorts first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Priority {
    /// Position of the owning ministage pass in the iteration.
    pub seq: usize,
    pub microbatch: u64,
    pub rank: u8,
    pub order: usize,
}

pub type TaskId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub kind: EventKind,
    pub group: usize,
    /// Global ministage index.
    pub ministage: usize,
    pub microbatch: Option<u64>,
    pub layer: Option<usize>,
    pub duration: f64,
    pub bytes: u64,
    /// Lanes held for the whole duration, with the event kind logged on
    /// each.
    pub lanes: Vec<(DeviceIdx, Lane, EventKind)>,
    pub deps: Vec<TaskId>,
    pub on_start: Vec<MemDelta>,
    pub on_end: Vec<MemDelta>,
    pub priority: Priority,
}

impl Task {
    pub fn label(&self) -> String {
        let mut s = alloc::format!("{}(ministage {}", self.kind.name(), self.ministage);
        if let Some(m) = self.microbatch {
            s.push_str(&alloc::format!(", microbatch {m}"));
        }
        if let Some(l) = self.layer {
            s.push_str(&alloc::format!(", layer {l}"));
        }
        if let Some((d, _, _)) = self.lanes.first() {
            s.push_str(&alloc::format!(", device {d}"));
        }
        s.push(')');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    pub n_devices: usize,
    pub n_groups: usize,
    pub tasks: Vec<Task>,
    /// Allocations present at time zero (sharded state, resident params).
    pub initial: Vec<MemDelta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEvent {
    pub device: DeviceIdx,
    pub lane: Lane,
    pub kind: EventKind,
    pub ministage: usize,
    pub microbatch: Option<u64>,
    pub start: f64,
    pub end: f64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub events: Vec<ScheduleEvent>,
    pub makespan: f64,
    /// Fraction of the makespan each device's compute lane is busy.
    pub busy_fraction: Vec<f64>,
    /// Per device, (time, resident bytes) after all changes at that time.
    pub memory_trace: Vec<Vec<(f64, u64)>>,
    /// Per device, peak bytes of each category (indexed like
    /// [`MemCategory::ALL`]).
    pub category_peaks: Vec<[u64; 4]>,
    /// Per device, bytes resident at time zero.
    pub baseline: Vec<u64>,
    /// (AllGathers, ReduceScatters) summed over groups.
    pub collective_counts: (u64, u64),
    /// Per group (AllGathers, ReduceScatters).
    pub group_collectives: Vec<(u64, u64)>,
}

impl Timeline {
    pub fn category_peak(&self, device: DeviceIdx, cat: MemCategory) -> u64 {
        self.category_peaks[device][cat as usize]
    }

    pub fn final_bytes(&self, device: DeviceIdx) -> u64 {
        self.memory_trace[device].last().map_or(0, |&(_, b)| b)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("schedule deadlock; blocking cycle: {}", .cycle.join(" -> "))]
    Deadlock { cycle: Vec<String> },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

pub fn peak_memory(timeline: &Timeline, device: DeviceIdx) -> u64 {
    timeline.memory_trace[device].iter().map(|&(_, b)| b).max().unwrap_or(0)
}

/// Simulate `plan` executed under `strategy`.
pub fn simulate(ctx: &PlanningContext, plan: &TrainingPlan, strategy: StrategyKind) -> Result<Timeline, SimError> {
    let plan = plan.as_strategy(strategy);
    plan.validate(ctx)?;
    run(&build_schedule(ctx, &plan))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub strategy: StrategyKind,
    pub makespan: f64,
    /// Largest per-device peak.
    pub peak_memory: u64,
    /// Largest per-device peak of parameter bytes.
    pub peak_params: u64,
    pub collective_counts: (u64, u64),
    /// Makespan lost to host transfers that did not hide behind compute.
    pub offload_stall: f64,
}

/// Simulate the same groups and layer split under every strategy.
pub fn compare_strategies(ctx: &PlanningContext, plan: &TrainingPlan) -> Result<Vec<StrategyReport>, SimError> {
    let mut fast_host = ctx.clone();
    fast_host.config.host_bandwidth = f64::INFINITY;
    StrategyKind::ALL
        .into_iter()
        .map(|k| {
            let t = simulate(ctx, plan, k)?;
            let offload_stall =
                if k.offloads() { (t.makespan - simulate(&fast_host, plan, k)?.makespan).max(0.0) } else { 0.0 };
            let n = t.memory_trace.len();
            Ok(StrategyReport {
                strategy: k,
                makespan: t.makespan,
                peak_memory: (0..n).map(|d| peak_memory(&t, d)).max().unwrap_or(0),
                peak_params: (0..n).map(|d| t.category_peak(d, MemCategory::Params)).max().unwrap_or(0),
                collective_counts: t.collective_counts,
                offload_stall,
            })
        })
        .collect()
}
