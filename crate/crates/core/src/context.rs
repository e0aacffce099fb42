use crate::cost::CommParams;
use crate::partition::ClusterGraph;
use crate::workload::{ClusterProfile, LayerRuntimeModel, ModelSpec, RuntimeTable, WorkloadError, WorkloadSpec};

/// Tunables shared by the planner and the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub comm: CommParams,
    /// Transient activation working set during a compute task, in units of
    /// one boundary activation.
    pub k_act: f64,
    /// Host <-> device transfer bandwidth, bytes/sec.
    pub host_bandwidth: f64,
    /// Seconds per sharded parameter for an optimizer step.
    pub optimizer_step_cost: f64,
    /// Fraction of device memory a plan may use.
    pub headroom: f64,
    /// Upper bound on the number of microbatches considered.
    pub max_microbatches: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            comm: CommParams::default(),
            k_act: 2.0,
            host_bandwidth: 12e9,
            optimizer_step_cost: 1e-10,
            headroom: 0.9,
            max_microbatches: 64,
        }
    }
}

/// Everything the planner and simulator read: profile, model, workload,
/// config, and the derived cluster graph and runtime fits.
#[derive(Debug, Clone)]
pub struct PlanningContext {
    pub profile: ClusterProfile,
    pub model: ModelSpec,
    pub workload: WorkloadSpec,
    pub config: PlannerConfig,
    pub graph: ClusterGraph,
    pub runtime: LayerRuntimeModel,
    pub table: RuntimeTable,
}

impl PlanningContext {
    pub fn new(
        profile: ClusterProfile,
        model: ModelSpec,
        workload: WorkloadSpec,
        config: PlannerConfig,
    ) -> Result<Self, WorkloadError> {
        let runtime = LayerRuntimeModel::from_profile(&profile)?;
        let table = RuntimeTable::new(&profile, &model, &runtime)?;
        let graph = ClusterGraph::from_profile(&profile);
        Ok(Self { profile, model, workload, config, graph, runtime, table })
    }

    /// Bytes of one boundary activation for `samples` samples.
    pub fn activation_bytes(&self, samples: u64) -> u64 {
        self.workload.activation_bytes(&self.model, samples)
    }
}
