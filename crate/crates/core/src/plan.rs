//! Training plan: GPU groups in pipeline order, their layers and
//! ministages, per-GPU microbatch shares and cross-stage routing.

use alloc::vec::Vec;
use core::ops::Range;

use thiserror::Error;

use crate::context::PlanningContext;
use crate::cost::StrategyKind;
use crate::workload::DeviceIdx;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no feasible plan: every candidate exceeds device memory")]
    NoFeasiblePlan,
    #[error("need at least as many layers ({layers}) as groups ({groups})")]
    TooFewLayers { layers: usize, groups: usize },
    #[error("ministage count {s} out of range 1..={layers}")]
    MinistagesOutOfRange { s: usize, layers: usize },
    #[error("invalid plan: {0}")]
    Invalid(alloc::string::String),
}

/// A set of GPUs doing data parallelism together; one pipeline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GpuGroup {
    pub devices: Vec<DeviceIdx>,
    /// Layers/sec.
    pub aggregate_speed: f64,
    /// Slowest link inside the group; `None` for a single GPU.
    pub intra_bw: Option<f64>,
    pub layers_assigned: usize,
    /// Layer count of each ministage, in local execution order.
    pub ministage_sizes: Vec<usize>,
    /// Samples of every microbatch processed by each device (aligned with
    /// `devices`).
    pub shares: Vec<u64>,
}

impl GpuGroup {
    pub fn ministages(&self) -> usize {
        self.ministage_sizes.len()
    }

    pub fn d_dp(&self) -> usize {
        self.devices.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteEntry {
    pub microbatch: u64,
    pub src: Vec<DeviceIdx>,
    /// Destination devices and their sample counts, in service order.
    pub dst: Vec<(DeviceIdx, u64)>,
}

/// Routing across one pipeline boundary between two groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageBoundary {
    pub src_group: usize,
    pub dst_group: usize,
    pub entries: Vec<RouteEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    /// Pipeline order.
    pub groups: Vec<GpuGroup>,
    pub n_microbatches: u64,
    pub microbatch_size: u64,
    pub n_ministage_rounds: usize,
    pub strategy: StrategyKind,
    pub routing: Vec<StageBoundary>,
}

/// One ministage in global execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ministage {
    pub group: usize,
    /// Index within its group's ministages.
    pub local: usize,
    pub layers: Range<usize>,
}

impl TrainingPlan {
    /// Ministages ordered round-robin across groups; consecutive model
    /// layers are laid out along that order.
    pub fn ministages(&self) -> Vec<Ministage> {
        let mut out = Vec::new();
        let mut next_layer = 0;
        for r in 0..self.n_ministage_rounds {
            for (g, group) in self.groups.iter().enumerate() {
                if let Some(&n) = group.ministage_sizes.get(r) {
                    out.push(Ministage { group: g, local: r, layers: next_layer..next_layer + n });
                    next_layer += n;
                }
            }
        }
        out
    }

    pub fn total_layers(&self) -> usize {
        self.groups.iter().map(|g| g.layers_assigned).sum()
    }

    pub fn num_devices(&self) -> usize {
        self.groups.iter().map(|g| g.devices.len()).sum()
    }

    /// Same groups, layers and shares, executed as classic pipeline
    /// parallelism (one stage per group) under `strategy`.
    pub fn as_strategy(&self, strategy: StrategyKind) -> TrainingPlan {
        let mut plan = self.clone();
        plan.strategy = strategy;
        if strategy != StrategyKind::ZorseInterleaved {
            for g in &mut plan.groups {
                g.ministage_sizes = alloc::vec![g.layers_assigned];
            }
            plan.n_ministage_rounds = 1;
        }
        plan
    }

    /// Structural checks against the context: layer and sample
    /// conservation, device coverage, ministage layout.
    pub fn validate(&self, ctx: &PlanningContext) -> Result<(), PlanError> {
        let bad = |m: alloc::string::String| Err(PlanError::Invalid(m));
        if self.groups.is_empty() {
            return bad("plan has no groups".into());
        }
        if self.n_microbatches == 0 || self.microbatch_size == 0 {
            return bad("microbatch count and size must be >= 1".into());
        }
        if self.n_microbatches * self.microbatch_size != ctx.workload.global_batch {
            return bad(alloc::format!(
                "{} microbatches x {} samples != global batch {}",
                self.n_microbatches,
                self.microbatch_size,
                ctx.workload.global_batch
            ));
        }
        if self.total_layers() != ctx.model.num_layers {
            return bad(alloc::format!(
                "plan assigns {} layers, model has {}",
                self.total_layers(),
                ctx.model.num_layers
            ));
        }
        let n = ctx.profile.num_devices();
        let mut seen = alloc::vec![false; n];
        let mut max_s = 0;
        for (gi, g) in self.groups.iter().enumerate() {
            if g.devices.is_empty() || g.devices.len() != g.shares.len() {
                return bad(alloc::format!("group {gi} has mismatched devices/shares"));
            }
            for &d in &g.devices {
                if d >= n || seen[d] {
                    return bad(alloc::format!("group {gi} references device {d} twice or out of range"));
                }
                seen[d] = true;
            }
            if g.shares.iter().sum::<u64>() != self.microbatch_size {
                return bad(alloc::format!("group {gi} shares do not sum to the microbatch size"));
            }
            if g.layers_assigned == 0
                || g.ministage_sizes.is_empty()
                || g.ministage_sizes.contains(&0)
                || g.ministage_sizes.iter().sum::<usize>() != g.layers_assigned
            {
                return bad(alloc::format!("group {gi} has an invalid ministage layout"));
            }
            max_s = max_s.max(g.ministages());
        }
        if max_s != self.n_ministage_rounds {
            return bad("n_ministage_rounds must equal the largest ministage count".into());
        }
        for b in &self.routing {
            for e in &b.entries {
                if e.dst.iter().map(|&(_, s)| s).sum::<u64>() != self.microbatch_size {
                    return bad("routing entry does not conserve samples".into());
                }
            }
        }
        Ok(())
    }
}
