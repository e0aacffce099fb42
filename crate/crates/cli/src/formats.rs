//! JSON documents read and written by the command-line tool. Field names
//! are documented in `docs/file-formats.md`.

use std::collections::BTreeMap;
use std::path::Path;

use hetplan_core::configure::PlanSelection;
use hetplan_core::cost::StrategyKind;
use hetplan_core::plan::{RouteEntry, StageBoundary};
use hetplan_core::workload::{Precision, DEFAULT_LAYER_CLASS};
use hetplan_core::{
    ClusterProfile, CommParams, GpuDevice, GpuGroup, LatencyEstimate, MemoryEstimate, ModelSpec, PlannerConfig,
    RuntimeSample, TrainingPlan, WorkloadSpec,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable document");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDoc {
    pub id: String,
    pub kind: String,
    pub peak_tflops: f64,
    pub mem_capacity: u64,
    pub node_id: String,
    pub region_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub a: String,
    pub b: String,
    pub bw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleDoc {
    pub batch: u32,
    pub fwd: f64,
    pub bwd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSetDoc {
    pub kind: String,
    #[serde(default = "default_class")]
    pub class: String,
    pub samples: Vec<SampleDoc>,
}

fn default_class() -> String {
    DEFAULT_LAYER_CLASS.into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterDoc {
    pub devices: Vec<DeviceDoc>,
    pub intra_node_bw: BTreeMap<String, f64>,
    pub inter_node_bw: Vec<LinkDoc>,
    pub runtime_samples: Vec<SampleSetDoc>,
}

impl ClusterDoc {
    pub fn into_profile(self) -> Result<ClusterProfile> {
        let devices = self
            .devices
            .into_iter()
            .map(|d| GpuDevice {
                id: d.id,
                kind: d.kind,
                peak_tflops: d.peak_tflops,
                mem_capacity: d.mem_capacity,
                node_id: d.node_id,
                region_id: d.region_id,
            })
            .collect();
        let inter = self.inter_node_bw.into_iter().map(|l| (l.a, l.b, l.bw)).collect();
        let mut samples = BTreeMap::new();
        for set in self.runtime_samples {
            let list: Vec<RuntimeSample> =
                set.samples.iter().map(|s| RuntimeSample { batch: s.batch, fwd: s.fwd, bwd: s.bwd }).collect();
            if samples.insert((set.kind.clone(), set.class.clone()), list).is_some() {
                return Err(CliError::invalid(format!("duplicate runtime samples for {}/{}", set.kind, set.class)));
            }
        }
        Ok(ClusterProfile::new(devices, self.intra_node_bw, inter, samples)?)
    }

    pub fn from_profile(p: &ClusterProfile) -> Self {
        Self {
            devices: p
                .devices
                .iter()
                .map(|d| DeviceDoc {
                    id: d.id.clone(),
                    kind: d.kind.clone(),
                    peak_tflops: d.peak_tflops,
                    mem_capacity: d.mem_capacity,
                    node_id: d.node_id.clone(),
                    region_id: d.region_id.clone(),
                })
                .collect(),
            intra_node_bw: p.intra_node_bw.clone(),
            inter_node_bw: p
                .inter_node_bw
                .iter()
                .map(|((a, b), &bw)| LinkDoc { a: a.clone(), b: b.clone(), bw })
                .collect(),
            runtime_samples: p
                .runtime_samples
                .iter()
                .map(|((kind, class), s)| SampleSetDoc {
                    kind: kind.clone(),
                    class: class.clone(),
                    samples: s.iter().map(|s| SampleDoc { batch: s.batch, fwd: s.fwd, bwd: s.bwd }).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerClassDoc {
    pub name: String,
    pub params: u64,
    pub layers: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub num_layers: usize,
    pub params_per_layer: u64,
    pub hidden_size: u64,
    pub bytes_per_element: u64,
    pub global_batch: u64,
    pub seq_len: u64,
    pub precision: String,
    pub optimizer_bytes_per_param: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layer_classes: Vec<LayerClassDoc>,
}

fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::Half => "fp16",
        Precision::Single => "fp32",
    }
}

impl ModelDoc {
    pub fn into_specs(self) -> Result<(ModelSpec, WorkloadSpec)> {
        let (precision, bytes) = match self.precision.as_str() {
            "fp16" | "bf16" => (Precision::Half, 2),
            "fp32" => (Precision::Single, 4),
            other => return Err(CliError::invalid(format!("unknown precision `{other}`"))),
        };
        if self.bytes_per_element != bytes {
            return Err(CliError::invalid(format!(
                "precision {} implies {bytes} bytes per element, got {}",
                self.precision, self.bytes_per_element
            )));
        }
        let mut model = ModelSpec::uniform(self.num_layers, self.params_per_layer, self.hidden_size, bytes)?;
        for c in &self.layer_classes {
            model = model.with_class(&c.name, c.params, &c.layers)?;
        }
        let mut workload = WorkloadSpec::new(self.global_batch, self.seq_len)?;
        workload.precision = precision;
        workload.optimizer_bytes_per_param = self.optimizer_bytes_per_param;
        Ok((model, workload))
    }

    pub fn from_specs(model: &ModelSpec, workload: &WorkloadSpec) -> Self {
        let layer_classes = model
            .classes
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| LayerClassDoc {
                name: c.name.clone(),
                params: c.params,
                layers: (0..model.num_layers).filter(|&l| model.class_of(l) == i).collect(),
            })
            .collect();
        Self {
            num_layers: model.num_layers,
            params_per_layer: model.params_per_layer(),
            hidden_size: model.hidden_size,
            bytes_per_element: model.bytes_per_element,
            global_batch: workload.global_batch,
            seq_len: workload.seq_len,
            precision: precision_name(workload.precision).into(),
            optimizer_bytes_per_param: workload.optimizer_bytes_per_param,
            layer_classes,
        }
    }
}

/// Planner tunables; every field is optional and defaults to the built-in
/// value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub ring_latency_per_hop: Option<f64>,
    pub p2p_latency: Option<f64>,
    pub k_act: Option<f64>,
    pub host_bandwidth: Option<f64>,
    pub optimizer_step_cost: Option<f64>,
    pub headroom: Option<f64>,
    pub max_microbatches: Option<u64>,
}

impl ConfigDoc {
    pub fn apply(&self, c: &mut PlannerConfig) -> Result<()> {
        let d = CommParams::default();
        c.comm.ring_latency_per_hop = self.ring_latency_per_hop.unwrap_or(d.ring_latency_per_hop);
        c.comm.p2p_latency = self.p2p_latency.unwrap_or(d.p2p_latency);
        if let Some(v) = self.k_act {
            c.k_act = v;
        }
        if let Some(v) = self.host_bandwidth {
            c.host_bandwidth = v;
        }
        if let Some(v) = self.optimizer_step_cost {
            c.optimizer_step_cost = v;
        }
        if let Some(v) = self.headroom {
            c.headroom = v;
        }
        if let Some(v) = self.max_microbatches {
            c.max_microbatches = v;
        }
        check_config(c)
    }
}

pub fn check_config(c: &PlannerConfig) -> Result<()> {
    let nonneg = |v: f64| v >= 0.0 && v.is_finite();
    if !nonneg(c.comm.ring_latency_per_hop) || !nonneg(c.comm.p2p_latency) {
        return Err(CliError::invalid("latencies must be finite and >= 0"));
    }
    if !nonneg(c.k_act) || !nonneg(c.optimizer_step_cost) {
        return Err(CliError::invalid("k_act and optimizer_step_cost must be finite and >= 0"));
    }
    if !(c.host_bandwidth > 0.0) {
        return Err(CliError::invalid("host_bandwidth must be > 0"));
    }
    if !(c.headroom > 0.0 && c.headroom <= 1.0) {
        return Err(CliError::invalid("headroom must be in (0, 1]"));
    }
    if c.max_microbatches == 0 {
        return Err(CliError::invalid("max_microbatches must be >= 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDoc {
    pub devices: Vec<String>,
    pub aggregate_speed: f64,
    pub intra_bw: Option<f64>,
    /// First layer and one past the last.
    pub layers: [usize; 2],
    pub ministages: Vec<usize>,
    pub shares: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteDoc {
    pub microbatch: u64,
    pub src: Vec<String>,
    pub dst: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryDoc {
    pub src_group: usize,
    pub dst_group: usize,
    pub entries: Vec<RouteDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyDoc {
    pub l_forwards: f64,
    pub l_backwards: f64,
    pub l_startup: f64,
    pub n_ministages: usize,
    pub l_total: f64,
}

impl From<LatencyEstimate> for LatencyDoc {
    fn from(e: LatencyEstimate) -> Self {
        Self {
            l_forwards: e.l_forwards,
            l_backwards: e.l_backwards,
            l_startup: e.l_startup,
            n_ministages: e.n_ministages,
            l_total: e.l_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryDoc {
    pub device: String,
    pub params: u64,
    pub grads: u64,
    pub optim: u64,
    pub activations: u64,
    pub total: u64,
}

impl MemoryDoc {
    fn new(device: &str, m: &MemoryEstimate) -> Self {
        Self {
            device: device.into(),
            params: m.m_params,
            grads: m.m_grads,
            optim: m.m_optim,
            activations: m.m_activations,
            total: m.m_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatesDoc {
    pub latency: LatencyDoc,
    pub memory: Vec<MemoryDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDoc {
    pub strategy: String,
    pub n_microbatches: u64,
    pub microbatch_size: u64,
    pub n_ministage_rounds: usize,
    pub groups: Vec<GroupDoc>,
    pub routing: Vec<BoundaryDoc>,
    pub estimates: EstimatesDoc,
}

impl PlanDoc {
    pub fn from_selection(profile: &ClusterProfile, sel: &PlanSelection) -> Self {
        let id = |d: usize| profile.devices[d].id.clone();
        let plan = &sel.plan;
        let mut next = 0;
        let groups = plan
            .groups
            .iter()
            .map(|g| {
                let start = next;
                next += g.layers_assigned;
                GroupDoc {
                    devices: g.devices.iter().map(|&d| id(d)).collect(),
                    aggregate_speed: g.aggregate_speed,
                    intra_bw: g.intra_bw,
                    layers: [start, next],
                    ministages: g.ministage_sizes.clone(),
                    shares: g.shares.clone(),
                }
            })
            .collect();
        let routing = plan
            .routing
            .iter()
            .map(|b| BoundaryDoc {
                src_group: b.src_group,
                dst_group: b.dst_group,
                entries: b
                    .entries
                    .iter()
                    .map(|e| RouteDoc {
                        microbatch: e.microbatch,
                        src: e.src.iter().map(|&d| id(d)).collect(),
                        dst: e.dst.iter().map(|&(d, n)| (id(d), n)).collect(),
                    })
                    .collect(),
            })
            .collect();
        Self {
            strategy: plan.strategy.name().into(),
            n_microbatches: plan.n_microbatches,
            microbatch_size: plan.microbatch_size,
            n_ministage_rounds: plan.n_ministage_rounds,
            groups,
            routing,
            estimates: EstimatesDoc {
                latency: sel.latency.into(),
                memory: sel.memory.iter().map(|(d, m)| MemoryDoc::new(&profile.devices[*d].id, m)).collect(),
            },
        }
    }

    /// Rebuilds the plan against `profile`, resolving device ids.
    pub fn to_plan(&self, profile: &ClusterProfile) -> Result<TrainingPlan> {
        let strategy = StrategyKind::from_name(&self.strategy)
            .ok_or_else(|| CliError::invalid(format!("unknown strategy `{}`", self.strategy)))?;
        let idx = |id: &str| {
            profile
                .device_index(id)
                .ok_or_else(|| CliError::invalid(format!("plan names device `{id}` which is not in the cluster")))
        };
        let mut groups = Vec::with_capacity(self.groups.len());
        let mut next = 0;
        for (i, g) in self.groups.iter().enumerate() {
            if g.layers[0] != next || g.layers[1] < g.layers[0] {
                return Err(CliError::invalid(format!("group {i} layers {:?} are not contiguous", g.layers)));
            }
            next = g.layers[1];
            groups.push(GpuGroup {
                devices: g.devices.iter().map(|d| idx(d)).collect::<Result<_>>()?,
                aggregate_speed: g.aggregate_speed,
                intra_bw: g.intra_bw,
                layers_assigned: g.layers[1] - g.layers[0],
                ministage_sizes: g.ministages.clone(),
                shares: g.shares.clone(),
            });
        }
        let mut routing = Vec::with_capacity(self.routing.len());
        for b in &self.routing {
            let mut entries = Vec::with_capacity(b.entries.len());
            for e in &b.entries {
                entries.push(RouteEntry {
                    microbatch: e.microbatch,
                    src: e.src.iter().map(|d| idx(d)).collect::<Result<_>>()?,
                    dst: e.dst.iter().map(|(d, n)| Ok((idx(d)?, *n))).collect::<Result<_>>()?,
                });
            }
            routing.push(StageBoundary { src_group: b.src_group, dst_group: b.dst_group, entries });
        }
        Ok(TrainingPlan {
            groups,
            n_microbatches: self.n_microbatches,
            microbatch_size: self.microbatch_size,
            n_ministage_rounds: self.n_ministage_rounds,
            strategy,
            routing,
        })
    }
}
