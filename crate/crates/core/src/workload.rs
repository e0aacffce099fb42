//! Cluster, model and workload descriptions, plus the linear layer-runtime
//! model fitted from profiled samples.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use thiserror::Error;

/// Index of a device inside [`ClusterProfile::devices`].
pub type DeviceIdx = usize;

/// Name of the layer class every layer belongs to unless overridden.
pub const DEFAULT_LAYER_CLASS: &str = "transformer";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("missing samples for gpu kind `{kind}` layer class `{class}`")]
    MissingSamples { kind: String, class: String },
    #[error("fewer than 2 distinct sample sizes")]
    TooFewSamples,
    #[error("batch must be at least 1")]
    ZeroBatch,
    #[error("unknown runtime entry for gpu kind `{kind}` layer class `{class}`")]
    UnknownRuntime { kind: String, class: String },
    #[error("fitted runtime for `{kind}`/`{class}` is not positive at batch 1")]
    NonPositiveRuntime { kind: String, class: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpuDevice {
    pub id: String,
    pub kind: String,
    /// Half-precision peak, TFlops.
    pub peak_tflops: f64,
    /// Bytes.
    pub mem_capacity: u64,
    pub node_id: String,
    pub region_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeSample {
    pub batch: u32,
    pub fwd: f64,
    pub bwd: f64,
}

/// Profiled view of the cluster: devices, measured bandwidths and
/// per-kind layer runtimes. Constructed through [`ClusterProfile::new`],
/// which validates and symmetrizes the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProfile {
    pub devices: Vec<GpuDevice>,
    /// node id -> bytes/sec between GPUs on that node.
    pub intra_node_bw: BTreeMap<String, f64>,
    /// (node a, node b) with a < b -> bytes/sec.
    pub inter_node_bw: BTreeMap<(String, String), f64>,
    /// (gpu kind, layer class) -> samples.
    pub runtime_samples: BTreeMap<(String, String), Vec<RuntimeSample>>,
}

fn node_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl ClusterProfile {
    /// Validates the raw measurements. Inter-node entries may be given in
    /// either or both directions; asymmetric pairs keep the smaller value.
    pub fn new(
        devices: Vec<GpuDevice>,
        intra_node_bw: BTreeMap<String, f64>,
        inter_node_entries: Vec<(String, String, f64)>,
        runtime_samples: BTreeMap<(String, String), Vec<RuntimeSample>>,
    ) -> Result<Self, WorkloadError> {
        let schema = |msg: String| Err(WorkloadError::Schema(msg));
        if devices.is_empty() {
            return schema("cluster has no devices".into());
        }
        let mut seen = BTreeMap::new();
        for d in &devices {
            if d.mem_capacity == 0 {
                return schema(alloc::format!("device `{}` has zero memory", d.id));
            }
            if !(d.peak_tflops > 0.0) {
                return schema(alloc::format!("device `{}` has non-positive tflops", d.id));
            }
            if seen.insert(d.id.clone(), ()).is_some() {
                return schema(alloc::format!("duplicate device id `{}`", d.id));
            }
        }
        for (node, bw) in &intra_node_bw {
            if !(*bw > 0.0) {
                return schema(alloc::format!("intra-node bandwidth of `{node}` must be > 0"));
            }
        }
        let mut inter = BTreeMap::new();
        for (a, b, bw) in inter_node_entries {
            if a == b {
                return schema(alloc::format!("inter-node entry for `{a}` with itself"));
            }
            if !(bw > 0.0) {
                return schema(alloc::format!("inter-node bandwidth {a}-{b} must be > 0"));
            }
            let key = node_key(&a, &b);
            let slot = inter.entry(key).or_insert(bw);
            if bw < *slot {
                *slot = bw;
            }
        }

        let nodes: alloc::collections::BTreeSet<&str> = devices.iter().map(|d| d.node_id.as_str()).collect();
        for node in &nodes {
            let count = devices.iter().filter(|d| d.node_id == *node).count();
            if count > 1 && !intra_node_bw.contains_key(*node) {
                return schema(alloc::format!("missing intra-node bandwidth for node `{node}`"));
            }
        }
        let node_list: Vec<&str> = nodes.iter().copied().collect();
        for (i, a) in node_list.iter().enumerate() {
            for b in &node_list[i + 1..] {
                if !inter.contains_key(&node_key(a, b)) {
                    return schema(alloc::format!("missing inter-node bandwidth {a}-{b}"));
                }
            }
        }

        for ((kind, class), samples) in &runtime_samples {
            for s in samples {
                if s.fwd < 0.0 || s.bwd < 0.0 {
                    return schema(alloc::format!("negative runtime sample for {kind}/{class}"));
                }
            }
        }
        for d in &devices {
            if !runtime_samples.keys().any(|(kind, _)| *kind == d.kind) {
                return Err(WorkloadError::MissingSamples { kind: d.kind.clone(), class: DEFAULT_LAYER_CLASS.into() });
            }
        }

        Ok(Self { devices, intra_node_bw, inter_node_bw: inter, runtime_samples })
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn device_index(&self, id: &str) -> Option<DeviceIdx> {
        self.devices.iter().position(|d| d.id == id)
    }

    /// Bandwidth between two distinct devices in bytes/sec.
    pub fn bandwidth(&self, a: DeviceIdx, b: DeviceIdx) -> f64 {
        let (na, nb) = (&self.devices[a].node_id, &self.devices[b].node_id);
        if na == nb {
            self.intra_node_bw[na]
        } else {
            self.inter_node_bw[&node_key(na, nb)]
        }
    }

    /// Checks that every present GPU kind has samples for every class the
    /// model uses.
    pub fn check_samples_for(&self, model: &ModelSpec) -> Result<(), WorkloadError> {
        for d in &self.devices {
            for class in &model.classes {
                if !self.runtime_samples.contains_key(&(d.kind.clone(), class.name.clone())) {
                    return Err(WorkloadError::MissingSamples { kind: d.kind.clone(), class: class.name.clone() });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerClass {
    pub name: String,
    pub params: u64,
}

/// Model shape. Layers default to a single uniform transformer class;
/// individual layers may be moved to extra classes (embedding, head).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub num_layers: usize,
    pub hidden_size: u64,
    pub bytes_per_element: u64,
    /// Index 0 is always the default class.
    pub classes: Vec<LayerClass>,
    layer_class: Vec<usize>,
}

impl ModelSpec {
    pub fn uniform(
        num_layers: usize,
        params_per_layer: u64,
        hidden_size: u64,
        bytes_per_element: u64,
    ) -> Result<Self, WorkloadError> {
        if num_layers == 0 {
            return Err(WorkloadError::Schema("num_layers must be >= 1".into()));
        }
        if params_per_layer == 0 || hidden_size == 0 {
            return Err(WorkloadError::Schema("params_per_layer and hidden_size must be > 0".into()));
        }
        if !matches!(bytes_per_element, 1 | 2 | 4) {
            return Err(WorkloadError::Schema("bytes_per_element must be 1, 2 or 4".into()));
        }
        Ok(Self {
            num_layers,
            hidden_size,
            bytes_per_element,
            classes: alloc::vec![LayerClass { name: DEFAULT_LAYER_CLASS.into(), params: params_per_layer }],
            layer_class: alloc::vec![0; num_layers],
        })
    }

    /// Moves `layers` into a new class with its own parameter count.
    pub fn with_class(mut self, name: &str, params: u64, layers: &[usize]) -> Result<Self, WorkloadError> {
        if params == 0 {
            return Err(WorkloadError::Schema(alloc::format!("class `{name}` has zero params")));
        }
        if self.classes.iter().any(|c| c.name == name) {
            return Err(WorkloadError::Schema(alloc::format!("duplicate layer class `{name}`")));
        }
        let idx = self.classes.len();
        self.classes.push(LayerClass { name: name.into(), params });
        for &l in layers {
            if l >= self.num_layers {
                return Err(WorkloadError::Schema(alloc::format!(
                    "class `{name}` references layer {l} beyond num_layers"
                )));
            }
            self.layer_class[l] = idx;
        }
        Ok(self)
    }

    pub fn class_of(&self, layer: usize) -> usize {
        self.layer_class[layer]
    }

    pub fn layer_params(&self, layer: usize) -> u64 {
        self.classes[self.layer_class[layer]].params
    }

    pub fn params_in(&self, layers: Range<usize>) -> u64 {
        layers.map(|l| self.layer_params(l)).sum()
    }

    /// Bytes of one layer's parameters (or full gradients).
    pub fn layer_bytes(&self, layer: usize) -> u64 {
        self.layer_params(layer) * self.bytes_per_element
    }

    pub fn params_per_layer(&self) -> u64 {
        self.classes[0].params
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Half,
    Single,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSpec {
    /// Samples per iteration.
    pub global_batch: u64,
    /// Tokens per sample.
    pub seq_len: u64,
    pub precision: Precision,
    pub optimizer_bytes_per_param: u64,
}

impl WorkloadSpec {
    pub fn new(global_batch: u64, seq_len: u64) -> Result<Self, WorkloadError> {
        if global_batch == 0 || seq_len == 0 {
            return Err(WorkloadError::Schema("global_batch and seq_len must be >= 1".into()));
        }
        Ok(Self { global_batch, seq_len, precision: Precision::Half, optimizer_bytes_per_param: 12 })
    }

    /// Bytes of one boundary activation for `samples` samples.
    pub fn activation_bytes(&self, model: &ModelSpec, samples: u64) -> u64 {
        samples * self.seq_len * model.hidden_size * model.bytes_per_element
    }
}

/// Affine runtime `alpha + beta * batch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub alpha: f64,
    pub beta: f64,
}

impl LinearFit {
    pub fn eval(&self, batch: f64) -> f64 {
        self.alpha + self.beta * batch
    }
}

/// Least-squares affine fit constrained to a nondecreasing line. When the
/// unconstrained slope is negative the best flat line (the mean) is used.
pub fn fit_layer_runtime(samples: &[(f64, f64)]) -> Result<LinearFit, WorkloadError> {
    let n = samples.len();
    if n < 2 {
        return Err(WorkloadError::TooFewSamples);
    }
    let nf = n as f64;
    let mean_x = samples.iter().map(|s| s.0).sum::<f64>() / nf;
    let mean_y = samples.iter().map(|s| s.1).sum::<f64>() / nf;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mean_x) * (s.0 - mean_x)).sum();
    if !(sxx > 0.0) {
        return Err(WorkloadError::TooFewSamples);
    }
    let sxy: f64 = samples.iter().map(|s| (s.0 - mean_x) * (s.1 - mean_y)).sum();
    let beta = sxy / sxx;
    if beta < 0.0 {
        log::warn!("negative fitted slope {beta}; clamping to 0");
        return Ok(LinearFit { alpha: mean_y, beta: 0.0 });
    }
    Ok(LinearFit { alpha: mean_y - beta * mean_x, beta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Fwd,
    Bwd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerFit {
    pub fwd: LinearFit,
    pub bwd: LinearFit,
}

impl LayerFit {
    pub fn time(&self, pass: Pass, batch: u64) -> f64 {
        if batch == 0 {
            return 0.0;
        }
        match pass {
            Pass::Fwd => self.fwd.eval(batch as f64),
            Pass::Bwd => self.bwd.eval(batch as f64),
        }
    }
}

/// Fitted runtime predictors keyed by (gpu kind, layer class).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerRuntimeModel {
    pub fits: BTreeMap<(String, String), LayerFit>,
}

impl LayerRuntimeModel {
    pub fn from_profile(profile: &ClusterProfile) -> Result<Self, WorkloadError> {
        let mut fits = BTreeMap::new();
        for ((kind, class), samples) in &profile.runtime_samples {
            let fwd: Vec<(f64, f64)> = samples.iter().map(|s| (s.batch as f64, s.fwd)).collect();
            let bwd: Vec<(f64, f64)> = samples.iter().map(|s| (s.batch as f64, s.bwd)).collect();
            let fit = LayerFit { fwd: fit_layer_runtime(&fwd)?, bwd: fit_layer_runtime(&bwd)? };
            if !(fit.fwd.eval(1.0) > 0.0) || !(fit.bwd.eval(1.0) > 0.0) {
                return Err(WorkloadError::NonPositiveRuntime { kind: kind.clone(), class: class.clone() });
            }
            fits.insert((kind.clone(), class.clone()), fit);
        }
        Ok(Self { fits })
    }

    pub fn get(&self, gpu_kind: &str, layer_class: &str) -> Result<&LayerFit, WorkloadError> {
        self.fits
            .get(&(gpu_kind.to_string(), layer_class.to_string()))
            .ok_or_else(|| WorkloadError::UnknownRuntime { kind: gpu_kind.into(), class: layer_class.into() })
    }
}

pub fn predict_layer_runtime(
    model: &LayerRuntimeModel,
    gpu_kind: &str,
    layer_class: &str,
    batch: u64,
    pass: Pass,
) -> Result<f64, WorkloadError> {
    if batch == 0 {
        return Err(WorkloadError::ZeroBatch);
    }
    Ok(model.get(gpu_kind, layer_class)?.time(pass, batch))
}

/// Per-device runtime lookup, resolved once for a given model so the
/// planner and simulator avoid string-keyed lookups in hot loops.
#[derive(Debug, Clone)]
pub struct RuntimeTable {
    /// `per_device[d][class]`
    per_device: Vec<Vec<LayerFit>>,
}

impl RuntimeTable {
    pub fn new(
        profile: &ClusterProfile,
        model: &ModelSpec,
        runtime: &LayerRuntimeModel,
    ) -> Result<Self, WorkloadError> {
        profile.check_samples_for(model)?;
        let per_device = profile
            .devices
            .iter()
            .map(|d| {
                model.classes.iter().map(|c| runtime.get(&d.kind, &c.name).copied()).collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { per_device })
    }

    pub fn fit(&self, device: DeviceIdx, class: usize) -> &LayerFit {
        &self.per_device[device][class]
    }

    /// Time for `device` to run `layers` on `batch` samples. Zero batch is
    /// an idle device.
    pub fn layers_time(
        &self,
        model: &ModelSpec,
        device: DeviceIdx,
        layers: Range<usize>,
        batch: u64,
        pass: Pass,
    ) -> f64 {
        layers.map(|l| self.per_device[device][model.class_of(l)].time(pass, batch)).sum()
    }
}

/// Fixed-point iterations used to place the per-GPU batch share when
/// estimating a group's speed.
const SPEED_FIXED_POINT_ITERS: usize = 3;

/// Layer processing rate of a group (layers/sec), summed over its GPUs.
/// Each GPU is evaluated at its share of `batch`, with shares moved
/// towards proportional-to-throughput over a few fixed-point rounds.
pub fn aggregate_group_speed(fits: &[LayerFit], batch: u64) -> f64 {
    assert!(!fits.is_empty(), "group must be nonempty");
    let n = fits.len() as f64;
    let total = batch.max(1) as f64;
    let mut shares: Vec<f64> = alloc::vec![total / n; fits.len()];
    for _ in 0..SPEED_FIXED_POINT_ITERS {
        let throughput: Vec<f64> = fits.iter().zip(&shares).map(|(f, &b)| b / f.fwd.eval(b)).collect();
        let sum: f64 = throughput.iter().sum();
        if !(sum > 0.0) {
            break;
        }
        for (s, t) in shares.iter_mut().zip(&throughput) {
            *s = total * t / sum;
        }
    }
    fits.iter().zip(&shares).map(|(f, &b)| 1.0 / f.fwd.eval(b)).sum()
}
