//! Synthetic clusters and models for tests, examples and the shipped
//! fixtures. Runtimes come from a simple FLOP count at a fixed fraction
//! of each GPU's peak throughput.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::workload::{ClusterProfile, GpuDevice, ModelSpec, RuntimeSample, WorkloadError, WorkloadSpec};

const GIB: u64 = 1 << 30;

/// Fraction of peak throughput a layer achieves.
pub const EFFICIENCY: f64 = 0.4;
/// Fixed per-layer launch overhead, seconds.
pub const LAUNCH_OVERHEAD: f64 = 1e-3;
/// Batch sizes at which runtimes are sampled.
pub const SAMPLE_BATCHES: [u32; 4] = [1, 2, 4, 8];

/// GPU SKU: memory, peak half-precision TFLOPs and the bandwidth between
/// two GPUs of this kind on one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpuKind {
    pub name: &'static str,
    pub mem_capacity: u64,
    pub peak_tflops: f64,
    pub intra_node_bw: f64,
}

pub const H100: GpuKind = GpuKind { name: "H100", mem_capacity: 94 * GIB, peak_tflops: 989.0, intra_node_bw: 400e9 };
pub const A100: GpuKind = GpuKind { name: "A100", mem_capacity: 40 * GIB, peak_tflops: 312.0, intra_node_bw: 222.2e9 };
pub const A100_80: GpuKind =
    GpuKind { name: "A100-80", mem_capacity: 80 * GIB, peak_tflops: 312.0, intra_node_bw: 222.2e9 };
pub const V100: GpuKind = GpuKind { name: "V100", mem_capacity: 16 * GIB, peak_tflops: 125.0, intra_node_bw: 23.9e9 };
pub const A10G: GpuKind = GpuKind { name: "A10G", mem_capacity: 24 * GIB, peak_tflops: 125.0, intra_node_bw: 3.0e9 };
pub const T4: GpuKind = GpuKind { name: "T4", mem_capacity: 16 * GIB, peak_tflops: 65.0, intra_node_bw: 6.1e9 };

pub const KINDS: [GpuKind; 6] = [H100, A100, A100_80, V100, A10G, T4];

/// Bandwidth between nodes of one region and across regions (bytes/sec).
pub const SAME_REGION_BW: f64 = 12.06e9;
pub const CROSS_REGION_BW: f64 = 2.69e9;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub region: String,
    pub gpus: Vec<GpuKind>,
    /// Defaults to the slowest GPU kind's link.
    pub intra_bw: Option<f64>,
}

impl NodeSpec {
    pub fn new(id: &str, region: &str, kind: GpuKind, count: usize) -> Self {
        Self { id: id.into(), region: region.into(), gpus: alloc::vec![kind; count], intra_bw: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub nodes: Vec<NodeSpec>,
    pub same_region_bw: f64,
    pub cross_region_bw: f64,
}

/// Forward FLOPs of one transformer-like layer for one sample.
pub fn layer_flops(params: u64, hidden: u64, seq_len: u64) -> f64 {
    2.0 * params as f64 * seq_len as f64 + 4.0 * (seq_len * seq_len) as f64 * hidden as f64
}

/// Runtime samples of one layer on `kind`; backward costs twice forward.
pub fn runtime_samples(kind: &GpuKind, params: u64, hidden: u64, seq_len: u64) -> Vec<RuntimeSample> {
    let per_sample = layer_flops(params, hidden, seq_len) / (EFFICIENCY * kind.peak_tflops * 1e12);
    SAMPLE_BATCHES
        .iter()
        .map(|&b| {
            let fwd = LAUNCH_OVERHEAD + b as f64 * per_sample;
            RuntimeSample { batch: b, fwd, bwd: 2.0 * fwd }
        })
        .collect()
}

/// Profile for `spec` with runtime samples for every layer class of
/// `model` at `seq_len`.
pub fn build_profile(spec: &ClusterSpec, model: &ModelSpec, seq_len: u64) -> Result<ClusterProfile, WorkloadError> {
    let mut devices = Vec::new();
    let mut intra = BTreeMap::new();
    let mut kinds: BTreeMap<&'static str, GpuKind> = BTreeMap::new();
    for node in &spec.nodes {
        for (i, k) in node.gpus.iter().enumerate() {
            devices.push(GpuDevice {
                id: alloc::format!("{}-g{}", node.id, i),
                kind: k.name.to_string(),
                peak_tflops: k.peak_tflops,
                mem_capacity: k.mem_capacity,
                node_id: node.id.clone(),
                region_id: node.region.clone(),
            });
            kinds.insert(k.name, *k);
        }
        let bw =
            node.intra_bw.unwrap_or_else(|| node.gpus.iter().map(|k| k.intra_node_bw).fold(f64::INFINITY, f64::min));
        intra.insert(node.id.clone(), bw);
    }
    let mut inter = Vec::new();
    for (i, a) in spec.nodes.iter().enumerate() {
        for b in &spec.nodes[i + 1..] {
            let bw = if a.region == b.region { spec.same_region_bw } else { spec.cross_region_bw };
            inter.push((a.id.clone(), b.id.clone(), bw));
        }
    }
    let mut samples = BTreeMap::new();
    for k in kinds.values() {
        for c in &model.classes {
            samples
                .insert((k.name.to_string(), c.name.clone()), runtime_samples(k, c.params, model.hidden_size, seq_len));
        }
    }
    ClusterProfile::new(devices, intra, inter, samples)
}

/// A synthetic scenario: cluster, model and workload.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub profile: ClusterProfile,
    pub model: ModelSpec,
    pub workload: WorkloadSpec,
}

/// 7B-parameter-class model: 32 layers of ~202M parameters, hidden 4096.
pub fn llama7b_like() -> ModelSpec {
    ModelSpec::uniform(32, 202_000_000, 4096, 2).expect("valid model")
}

/// 1.3B-parameter-class model: 24 layers of 50M parameters, hidden 2048.
pub fn gpt1b_like() -> ModelSpec {
    ModelSpec::uniform(24, 50_000_000, 2048, 2).expect("valid model")
}

fn scenario(name: &'static str, spec: ClusterSpec, model: ModelSpec, batch: u64, seq: u64) -> Scenario {
    let profile = build_profile(&spec, &model, seq).expect("valid synthetic profile");
    let workload = WorkloadSpec::new(batch, seq).expect("valid workload");
    Scenario { name, profile, model, workload }
}

fn spec(nodes: Vec<NodeSpec>) -> ClusterSpec {
    ClusterSpec { nodes, same_region_bw: SAME_REGION_BW, cross_region_bw: CROSS_REGION_BW }
}

/// Four mixed GPUs on two nodes; 8 layers of 7B-class width; 8 samples.
pub fn toy4() -> Scenario {
    let nodes = alloc::vec![
        NodeSpec::new("n0", "r0", A100, 2),
        NodeSpec { id: "n1".into(), region: "r0".into(), gpus: alloc::vec![V100, T4], intra_bw: None },
    ];
    let model = ModelSpec::uniform(8, 202_000_000, 4096, 2).expect("valid model");
    scenario("toy4", spec(nodes), model, 8, 2048)
}

/// Eight GPUs in two regions joined by a 2.69 GB/s link; every link
/// inside a region is at least 12 GB/s.
pub fn two_region8() -> Scenario {
    let nodes = alloc::vec![
        NodeSpec::new("east1-a", "us-east-1", A100, 2),
        NodeSpec::new("east1-b", "us-east-1", V100, 2),
        NodeSpec::new("east2-a", "us-east-2", A100_80, 2),
        NodeSpec::new("east2-b", "us-east-2", V100, 2),
    ];
    scenario("two-region8", spec(nodes), llama7b_like(), 32, 4096)
}

/// Eight T4s where no link exceeds 3 GB/s.
pub fn slow8() -> Scenario {
    let nodes: Vec<NodeSpec> = (0..4)
        .map(|i| NodeSpec {
            id: alloc::format!("slow-{i}"),
            region: "r0".into(),
            gpus: alloc::vec![T4; 2],
            intra_bw: Some(3.0e9),
        })
        .collect();
    let spec = ClusterSpec { nodes, same_region_bw: 1.0e9, cross_region_bw: 1.0e9 };
    scenario("slow8", spec, gpt1b_like(), 16, 2048)
}

/// 128 GPUs: 2x8 A10G, 2x8 V100 and 12x8 T4 nodes over two regions.
pub fn cluster_c128() -> Scenario {
    let mut nodes = Vec::new();
    for i in 0..2 {
        nodes.push(NodeSpec::new(&alloc::format!("a10g-{i}"), "us-east-1", A10G, 8));
    }
    for i in 0..2 {
        nodes.push(NodeSpec::new(&alloc::format!("v100-{i}"), "us-east-1", V100, 8));
    }
    for i in 0..12 {
        let region = if i < 4 { "us-east-1" } else { "us-east-2" };
        nodes.push(NodeSpec::new(&alloc::format!("t4-{i:02}"), region, T4, 8));
    }
    scenario("cluster-c128", spec(nodes), llama7b_like(), 256, 4096)
}

/// One A100.
pub fn single_gpu() -> Scenario {
    scenario("single", spec(alloc::vec![NodeSpec::new("n0", "r0", A100, 1)]), gpt1b_like(), 8, 2048)
}

pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "toy4" => Some(toy4()),
        "two-region8" => Some(two_region8()),
        "slow8" => Some(slow8()),
        "cluster-c128" => Some(cluster_c128()),
        "single" => Some(single_gpu()),
        _ => None,
    }
}

pub const SCENARIOS: [&str; 5] = ["toy4", "two-region8", "slow8", "cluster-c128", "single"];
