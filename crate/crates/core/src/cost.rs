//! Latency and memory cost models.
//!
//! Latency follows `L_total = (L_fwd + L_bwd) * N_ministages + L_startup`
//! where the per-round terms take the slower of compute and the
//! communication lanes that overlap with it. Memory is the per-GPU sum of
//! parameters, gradients, optimizer state and activations.

use alloc::vec::Vec;

use crate::context::PlanningContext;
use crate::partition::ClusterGraph;
use crate::plan::TrainingPlan;
use crate::workload::{DeviceIdx, GpuDevice, Pass};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommParams {
    pub ring_latency_per_hop: f64,
    pub p2p_latency: f64,
}

impl Default for CommParams {
    fn default() -> Self {
        Self { ring_latency_per_hop: 50e-6, p2p_latency: 100e-6 }
    }
}

impl CommParams {
    pub const ZERO: CommParams = CommParams { ring_latency_per_hop: 0.0, p2p_latency: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrategyKind {
    /// Interleaved ministages with parameter and activation offloading.
    ZorseInterleaved,
    /// Classic pipeline + ZeRO-2 data parallelism.
    PpZero2,
    /// Classic pipeline + ZeRO-3 data parallelism.
    PpZero3,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::ZorseInterleaved, StrategyKind::PpZero2, StrategyKind::PpZero3];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::ZorseInterleaved => "zorse",
            StrategyKind::PpZero2 => "pp-zero2",
            StrategyKind::PpZero3 => "pp-zero3",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn offloads(self) -> bool {
        self == StrategyKind::ZorseInterleaved
    }
}

fn ring_time(bytes_total: f64, group: &[DeviceIdx], graph: &ClusterGraph, comm: &CommParams) -> f64 {
    ring(bytes_total, group.len(), graph.min_pairwise(group).unwrap_or(f64::INFINITY), comm)
}

/// Ring collective over `g` devices whose slowest link is `bw`.
fn ring(bytes_total: f64, g: usize, bw: f64, comm: &CommParams) -> f64 {
    if g <= 1 {
        return 0.0;
    }
    let gf = g as f64;
    (gf - 1.0) / gf * bytes_total / bw + (gf - 1.0) * comm.ring_latency_per_hop
}

/// Ring AllGather of `g` shards of `bytes_per_shard` each, bottlenecked by
/// the slowest link in the group.
pub fn allgather_time(bytes_per_shard: f64, group: &[DeviceIdx], graph: &ClusterGraph, comm: &CommParams) -> f64 {
    ring_time(bytes_per_shard * group.len() as f64, group, graph, comm)
}

/// Ring ReduceScatter of a `bytes_total` buffer.
pub fn reduce_scatter_time(bytes_total: f64, group: &[DeviceIdx], graph: &ClusterGraph, comm: &CommParams) -> f64 {
    ring_time(bytes_total, group, graph, comm)
}

/// Point-to-point transfer between two groups over their best link.
pub fn p2p_transfer_time(
    bytes: f64,
    src: &[DeviceIdx],
    dst: &[DeviceIdx],
    graph: &ClusterGraph,
    comm: &CommParams,
) -> f64 {
    if bytes <= 0.0 {
        return comm.p2p_latency;
    }
    bytes / graph.max_cross(src, dst) + comm.p2p_latency
}

/// Work of one group for one ministage round, split by execution lane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageWork {
    pub n_microbatches: u64,
    /// Slowest device's compute per microbatch.
    pub compute_per_microbatch: f64,
    /// Compute-lane work done once per ministage (optimizer step).
    pub compute_fixed: f64,
    /// Collective-lane time (prefetch AllGather, ReduceScatter).
    pub collective: f64,
    /// Host-transfer lane time.
    pub host: f64,
    /// P2P-lane time per microbatch (receive plus send).
    pub p2p_per_microbatch: f64,
}

impl StageWork {
    pub fn compute(&self) -> f64 {
        self.n_microbatches as f64 * self.compute_per_microbatch + self.compute_fixed
    }

    pub fn comm(&self) -> f64 {
        self.collective.max(self.host).max(self.n_microbatches as f64 * self.p2p_per_microbatch)
    }
}

/// Lanes run concurrently, so a stage takes as long as its busiest lane.
pub fn stage_latency(work: &StageWork) -> f64 {
    work.compute().max(work.comm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyEstimate {
    pub l_forwards: f64,
    pub l_backwards: f64,
    pub l_startup: f64,
    pub n_ministages: usize,
    pub l_total: f64,
}

impl LatencyEstimate {
    pub fn new(l_forwards: f64, l_backwards: f64, l_startup: f64, n_ministages: usize) -> Self {
        let l_total = (l_forwards + l_backwards) * n_ministages as f64 + l_startup;
        Self { l_forwards, l_backwards, l_startup, n_ministages, l_total }
    }
}

/// Per-ministage cost terms used by the latency model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MinistageCost {
    /// Slowest device, one microbatch forward.
    pub fwd: f64,
    /// Distinct (forward, recompute + backward) times of the members.
    pub members: Vec<(f64, f64)>,
    /// Slowest device, one microbatch recompute + backward.
    pub bwd: f64,
    pub allgather: f64,
    pub reduce_scatter: f64,
    /// Parameter shard host transfer (each direction).
    pub params_host: f64,
    /// Boundary activations of one microbatch over the host link.
    pub act_host: f64,
    pub optim: f64,
    /// Incoming / outgoing activation transfer per microbatch.
    pub p2p_in: f64,
    pub p2p_out: f64,
}

/// Cost terms for every ministage of `plan` in global order.
pub fn ministage_costs(ctx: &PlanningContext, plan: &TrainingPlan) -> Vec<MinistageCost> {
    let ms = plan.ministages();
    let model = &ctx.model;
    let comm = &ctx.config.comm;
    let host = ctx.config.host_bandwidth;
    let mb_bytes = ctx.activation_bytes(plan.microbatch_size) as f64;
    let zero3 = plan.strategy == StrategyKind::PpZero3;
    let slowest: Vec<f64> =
        plan.groups.iter().map(|g| ctx.graph.min_pairwise(&g.devices).unwrap_or(f64::INFINITY)).collect();
    ms.iter()
        .enumerate()
        .map(|(i, u)| {
            let group = &plan.groups[u.group];
            let d = group.d_dp() as u64;
            let ring = |bytes: u64| ring(bytes as f64, d as usize, slowest[u.group], comm);
            let mut c = MinistageCost::default();
            for (pos, &dev) in group.devices.iter().enumerate() {
                let b = group.shares[pos];
                let (f, bw) = if zero3 {
                    // per-layer gather sits on the critical path of every microbatch
                    let mut f = 0.0;
                    let mut bw = 0.0;
                    for l in u.layers.clone() {
                        let ag = ring(model.layer_bytes(l) / d * d);
                        let lf = ctx.table.layers_time(model, dev, l..l + 1, b, Pass::Fwd);
                        let lb = ctx.table.layers_time(model, dev, l..l + 1, b, Pass::Bwd);
                        f += lf.max(ag);
                        bw += (lf + lb).max(ag);
                    }
                    (f, bw)
                } else {
                    let f = ctx.table.layers_time(model, dev, u.layers.clone(), b, Pass::Fwd);
                    (f, f + ctx.table.layers_time(model, dev, u.layers.clone(), b, Pass::Bwd))
                };
                c.fwd = c.fwd.max(f);
                if !c.members.contains(&(f, bw)) {
                    c.members.push((f, bw));
                }
                c.bwd = c.bwd.max(bw);
                let act = (u.layers.len() as u64 * ctx.activation_bytes(b)) as f64 / host;
                c.act_host = c.act_host.max(act);
            }
            let shard: u64 = u.layers.clone().map(|l| model.layer_bytes(l) / d).sum();
            c.params_host = shard as f64 / host;
            if !zero3 {
                c.allgather = u.layers.clone().map(|l| ring(model.layer_bytes(l) / d * d)).sum();
            }
            c.reduce_scatter = u.layers.clone().map(|l| ring(model.layer_bytes(l))).sum();
            c.optim = (model.params_in(u.layers.clone()) / d) as f64 * ctx.config.optimizer_step_cost;
            let p2p = |a: usize, b: usize| {
                p2p_transfer_time(mb_bytes, &plan.groups[a].devices, &plan.groups[b].devices, &ctx.graph, comm)
            };
            if i > 0 && ms[i - 1].group != u.group {
                c.p2p_in = p2p(ms[i - 1].group, u.group);
            }
            if i + 1 < ms.len() && ms[i + 1].group != u.group {
                c.p2p_out = p2p(u.group, ms[i + 1].group);
            }
            c
        })
        .collect()
}

/// Forward and backward [`StageWork`] of every ministage in global order.
pub fn stage_works(ctx: &PlanningContext, plan: &TrainingPlan) -> Vec<(StageWork, StageWork)> {
    let ms = plan.ministages();
    let costs = ministage_costs(ctx, plan);
    let m = plan.n_microbatches;
    let offload = plan.strategy.offloads();
    // global index of each group's ministages in local order
    let mut local: Vec<Vec<usize>> = alloc::vec![Vec::new(); plan.groups.len()];
    for (i, u) in ms.iter().enumerate() {
        local[u.group].push(i);
    }
    ms.iter()
        .enumerate()
        .map(|(i, u)| {
            let c = &costs[i];
            let mine = &local[u.group];
            let s = mine.len();
            let p2p = c.p2p_in + c.p2p_out;
            // forward prefetches the next ministage, or re-gathers itself for backward
            let (next_ag, next_load) = if u.local + 1 < s {
                let n = &costs[mine[u.local + 1]];
                (n.allgather, n.params_host)
            } else {
                (c.allgather, 0.0)
            };
            let fwd = StageWork {
                n_microbatches: m,
                compute_per_microbatch: c.fwd,
                compute_fixed: 0.0,
                collective: next_ag,
                host: if offload { next_load + m as f64 * c.act_host } else { 0.0 },
                p2p_per_microbatch: p2p,
            };
            let (prev_ag, prev_load) = if u.local > 0 {
                let n = &costs[mine[u.local - 1]];
                (n.allgather, n.params_host)
            } else {
                (0.0, 0.0)
            };
            let bwd = StageWork {
                n_microbatches: m,
                compute_per_microbatch: c.bwd,
                compute_fixed: c.optim,
                collective: c.reduce_scatter + prev_ag,
                host: if offload { prev_load + m as f64 * c.act_host + c.params_host } else { 0.0 },
                p2p_per_microbatch: p2p,
            };
            (fwd, bwd)
        })
        .collect()
}

/// Iteration latency of `plan`.
///
/// Ministages are walked in execution order. Each group keeps a clock for
/// its compute, collective and host-transfer lanes: a ministage computes
/// once its parameters are gathered, each microbatch once its input has
/// arrived and its activation buffer is available, and a gather waits for
/// the parameter buffer it reuses to be released after the optimizer step
/// two ministages later. The walk's forward and backward spans, net of the
/// pipeline fill, give `L_fwd * N` and `L_bwd * N`. Everything else is
/// `L_startup`: the first gather, pipeline fill in both directions, the
/// forward/backward turn and the trailing reduction and update.
pub fn total_iteration_latency(ctx: &PlanningContext, plan: &TrainingPlan) -> LatencyEstimate {
    let costs = ministage_costs(ctx, plan);
    let w = iteration_walk(plan, &costs);
    let k = costs.len();
    let mm = plan.n_microbatches as usize;
    let n = plan.n_ministage_rounds;
    let fwd_done = w.end_f[k - 1][mm - 1];
    let bwd_done = w.end_b[0][mm - 1];
    let head = w.start_f[0];
    let fwd_span = fwd_done - head;
    let bwd_span = bwd_done - w.start_b[k - 1];
    let fill_f: f64 = (0..k - 1).map(|u| costs[u].fwd + costs[u].p2p_out).sum::<f64>().min(fwd_span);
    let fill_b: f64 = (1..k).map(|u| costs[u].bwd + costs[u].p2p_in).sum::<f64>().min(bwd_span);
    let turn = w.start_b[k - 1] - fwd_done;
    let tail = w.total - bwd_done;
    let startup = head + fill_f + fill_b + turn + tail;
    LatencyEstimate::new((fwd_span - fill_f) / n as f64, (bwd_span - fill_b) / n as f64, startup, n)
}

/// Per-ministage timing of the latency model's walk.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationWalk {
    /// First forward microbatch start of each ministage.
    pub start_f: Vec<f64>,
    /// Forward end of every microbatch of each ministage.
    pub end_f: Vec<Vec<f64>>,
    pub start_b: Vec<f64>,
    pub end_b: Vec<Vec<f64>>,
    /// When each ministage's parameters are updated and released.
    pub release: Vec<f64>,
    pub total: f64,
}

/// Walk `plan` with the ministage costs `costs`.
pub fn iteration_walk(plan: &TrainingPlan, costs: &[MinistageCost]) -> IterationWalk {
    let ms = plan.ministages();
    let k = ms.len();
    let mm = plan.n_microbatches as usize;
    let offload = plan.strategy.offloads();
    let groups = plan.groups.len();

    let mut next_local: Vec<Option<usize>> = alloc::vec![None; k];
    let mut prev_local: Vec<Option<usize>> = alloc::vec![None; k];
    let mut last_seen: Vec<Option<usize>> = alloc::vec![None; groups];
    for (u, x) in ms.iter().enumerate() {
        if let Some(p) = last_seen[x.group] {
            prev_local[u] = Some(p);
            next_local[p] = Some(u);
        }
        last_seen[x.group] = Some(u);
    }
    // Transfers from ministage `a` into `b`. A group's P2P lane carries both its
    // incoming and outgoing microbatches, so consecutive transfers are
    // spaced by the busier of the two lanes.
    // Across boundaries a lane cannot finish before its first ready
    // transfer plus all the transfer time booked on it so far; `lanes`
    // holds (first ready, booked) per group.
    let hop = |done: &[f64], a: usize, b: usize, h: f64, lanes: &mut [(f64, f64)]| -> Vec<f64> {
        let lane = |x: usize| costs[x].p2p_in + costs[x].p2p_out;
        let pace = lane(a).max(lane(b));
        let mut last = f64::NEG_INFINITY;
        let mut out: Vec<f64> = done
            .iter()
            .map(|&t| {
                last = (t + h).max(last + pace);
                last
            })
            .collect();
        let mut floor = f64::NEG_INFINITY;
        for g in [ms[a].group, ms[b].group] {
            let l = &mut lanes[g];
            l.0 = l.0.min(done[0]);
            l.1 += h * done.len() as f64;
            floor = floor.max(l.0 + l.1);
        }
        if let Some(x) = out.last_mut() {
            *x = x.max(floor);
        }
        out
    };
    let mut lanes = alloc::vec![(f64::INFINITY, 0.0_f64); groups];
    let load = |c: &MinistageCost| if offload { c.params_host } else { 0.0 };

    let mut compute_free = alloc::vec![0.0_f64; groups];
    let mut coll_free = alloc::vec![0.0_f64; groups];
    // per group, end of each activation offload in execution order
    let mut offloads: Vec<Vec<f64>> = alloc::vec![Vec::new(); groups];
    let mut start_f = alloc::vec![0.0_f64; k];
    let mut end_f: Vec<Vec<f64>> = alloc::vec![Vec::new(); k];
    // gathered parameters for the backward of each ministage
    let mut gathered_b = alloc::vec![f64::NAN; k];
    for u in 0..k {
        let g = ms[u].group;
        let c = &costs[u];
        // the buffer two ministages back is dropped after its last microbatch
        let gate = prev_local[u].and_then(|p| prev_local[p]).map_or(0.0, |q| end_f[q][mm - 1]);
        let gathered = coll_free[g].max(gate + load(c)) + c.allgather;
        coll_free[g] = gathered;
        let arrive = if u == 0 {
            alloc::vec![0.0; mm]
        } else if ms[u - 1].group == g {
            end_f[u - 1].clone()
        } else {
            hop(&end_f[u - 1], u - 1, u, c.p2p_in, &mut lanes)
        };
        let mut t = compute_free[g].max(gathered);
        let mut ends = Vec::with_capacity(mm);
        for (m, &a) in arrive.iter().enumerate() {
            let mut s = t.max(a);
            let chain = &mut offloads[g];
            if offload && chain.len() >= 2 {
                s = s.max(chain[chain.len() - 2]);
            }
            if m == 0 {
                start_f[u] = s;
            }
            t = s + c.fwd;
            if offload {
                let prev = chain.last().copied().unwrap_or(0.0);
                chain.push(t.max(prev) + c.act_host);
            }
            ends.push(t);
        }
        compute_free[g] = t;
        end_f[u] = ends;
        if next_local[u].is_none() {
            // the last ministage gathers again for its backward
            coll_free[g] += c.allgather;
            gathered_b[u] = coll_free[g];
        }
    }
    if !offload {
        // resident parameters: backward gathers are ready from the start
        for u in (0..k).rev() {
            let g = ms[u].group;
            if next_local[u].is_some() {
                coll_free[g] += costs[u].allgather;
                gathered_b[u] = coll_free[g];
            }
        }
    }

    let fwd_done = end_f[k - 1][mm - 1];
    lanes.fill((f64::INFINITY, 0.0));
    let mut start_b = alloc::vec![0.0_f64; k];
    let mut end_b: Vec<Vec<f64>> = alloc::vec![Vec::new(); k];
    // start of each backward microbatch
    let mut blocks: Vec<Vec<f64>> = alloc::vec![Vec::new(); k];
    let mut rs_end = alloc::vec![f64::NAN; k];
    let mut release = alloc::vec![f64::NAN; k];
    let mut loads: Vec<Vec<f64>> = alloc::vec![Vec::new(); groups];
    let mut bwd_chain: Vec<Vec<f64>> = alloc::vec![Vec::new(); groups];
    // optimizer steps wait for the compute task running when the
    // reduction lands
    let finish = |x: usize, rs_end: &[f64], starts: &[Vec<f64>]| -> f64 {
        let r = rs_end[x];
        let mut s = r;
        if let Some(p) = prev_local[x] {
            // a device whose recompute ends first waits out its backward
            for &(f, fb) in &costs[p].members {
                if let Some(&b) = starts[p].iter().find(|&&b| r < b + fb) {
                    if r > b {
                        s = s.max(if r <= b + f { b + f } else { b + fb });
                    }
                }
            }
        }
        s + costs[x].optim + load(&costs[x])
    };
    for u in (0..k).rev() {
        let g = ms[u].group;
        let c = &costs[u];
        let p = next_local[u];
        let mut gathered = gathered_b[u];
        if let Some(pq) = p.filter(|_| offload) {
            let gate = match next_local[pq] {
                Some(q) => {
                    release[q] = finish(q, &rs_end, &blocks);
                    release[q]
                }
                None => end_f[u][mm - 1],
            };
            let ready = gate + c.params_host;
            // the pending reduction of the next ministage shares the lane
            let rs_ready = end_b[pq][mm - 1];
            if rs_ready <= ready {
                let e = coll_free[g].max(rs_ready) + costs[pq].reduce_scatter;
                rs_end[pq] = e;
                gathered = e.max(ready) + c.allgather;
                coll_free[g] = gathered;
            } else {
                gathered = coll_free[g].max(ready) + c.allgather;
                rs_end[pq] = gathered.max(rs_ready) + costs[pq].reduce_scatter;
                coll_free[g] = rs_end[pq];
            }
        } else if let Some(pq) = p {
            let e = coll_free[g].max(end_b[pq][mm - 1]) + costs[pq].reduce_scatter;
            rs_end[pq] = e;
            coll_free[g] = e;
        }
        let arrive = if u == k - 1 {
            alloc::vec![fwd_done; mm]
        } else if ms[u + 1].group == g {
            end_b[u + 1].clone()
        } else {
            hop(&end_b[u + 1], u + 1, u, c.p2p_out, &mut lanes)
        };
        let mut t = compute_free[g].max(gathered);
        let mut ends = Vec::with_capacity(mm);
        for (m, &a) in arrive.iter().enumerate() {
            let mut s = t.max(a);
            if offload {
                let chain = &bwd_chain[g];
                let mut ready = offloads[g].last().copied().unwrap_or(0.0);
                if chain.len() >= 2 {
                    ready = ready.max(chain[chain.len() - 2]);
                }
                let la = &mut loads[g];
                let done = ready.max(la.last().copied().unwrap_or(0.0)) + c.act_host;
                la.push(done);
                s = s.max(done);
            }
            if m == 0 {
                start_b[u] = s;
            }
            blocks[u].push(s);
            t = s + c.bwd;
            bwd_chain[g].push(t);
            ends.push(t);
        }
        compute_free[g] = t;
        end_b[u] = ends;
        if prev_local[u].is_none() {
            let e = coll_free[g].max(t) + c.reduce_scatter;
            rs_end[u] = e;
            coll_free[g] = e;
        }
    }
    for x in 0..k {
        if release[x].is_nan() {
            release[x] = finish(x, &rs_end, &blocks);
        }
    }
    let total = release.iter().copied().fold(0.0, f64::max);
    IterationWalk { start_f, end_f, start_b, end_b, release, total }
}

/// Everything the memory model needs about one GPU's assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSlice {
    /// Parameters of each ministage in local execution order.
    pub ministage_params: Vec<u64>,
    /// Parameters of each assigned layer.
    pub layer_params: Vec<u64>,
    pub d_dp: u64,
    /// This GPU's samples per microbatch.
    pub microbatch_share: u64,
    pub n_microbatches: u64,
    pub seq_len: u64,
    pub hidden_size: u64,
    pub bytes_per_element: u64,
    pub optimizer_bytes_per_param: u64,
    pub k_act: f64,
    pub offload_activations: bool,
}

impl DeviceSlice {
    /// Slice of the device at position `pos` of group `group` in `plan`.
    pub fn for_device(ctx: &PlanningContext, plan: &TrainingPlan, group: usize, pos: usize) -> Self {
        let g = &plan.groups[group];
        let mut ministage_params = Vec::new();
        let mut layer_params = Vec::new();
        for u in plan.ministages().into_iter().filter(|u| u.group == group) {
            ministage_params.push(ctx.model.params_in(u.layers.clone()));
            layer_params.extend(u.layers.map(|l| ctx.model.layer_params(l)));
        }
        Self {
            ministage_params,
            layer_params,
            d_dp: g.d_dp() as u64,
            microbatch_share: g.shares[pos],
            n_microbatches: plan.n_microbatches,
            seq_len: ctx.workload.seq_len,
            hidden_size: ctx.model.hidden_size,
            bytes_per_element: ctx.model.bytes_per_element,
            optimizer_bytes_per_param: ctx.workload.optimizer_bytes_per_param,
            k_act: ctx.config.k_act,
            offload_activations: plan.strategy.offloads(),
        }
    }

    pub fn boundary_activation(&self) -> u64 {
        self.microbatch_share * self.seq_len * self.hidden_size * self.bytes_per_element
    }

    /// Per-layer shard of a `bytes` buffer.
    pub fn shard(&self, bytes: u64) -> u64 {
        bytes / self.d_dp
    }
}

/// Transient activation bytes while a compute task runs.
pub fn working_set_bytes(k_act: f64, boundary: u64) -> u64 {
    let x = k_act * boundary as f64;
    let t = x as u64;
    if (t as f64) < x {
        t + 1
    } else {
        t
    }
}

/// Largest sum of two consecutively resident ministages. The last
/// ministage stays resident across the forward/backward turn, so the
/// sequence is 0, 1, .., s-1, .., 1, 0 and adjacent pairs repeat.
pub fn max_adjacent_pair(ministage: &[u64]) -> u64 {
    match ministage.len() {
        0 => 0,
        1 => ministage[0],
        _ => ministage.windows(2).map(|w| w[0] + w[1]).max().unwrap_or(0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub m_params: u64,
    pub m_grads: u64,
    pub m_optim: u64,
    pub m_activations: u64,
    pub m_total: u64,
}

impl MemoryEstimate {
    pub fn new(m_params: u64, m_grads: u64, m_optim: u64, m_activations: u64) -> Self {
        Self { m_params, m_grads, m_optim, m_activations, m_total: m_params + m_grads + m_optim + m_activations }
    }
}

pub fn memory_estimate(slice: &DeviceSlice, strategy: StrategyKind) -> MemoryEstimate {
    let d = slice.bytes_per_element;
    let layer_bytes: Vec<u64> = slice.layer_params.iter().map(|p| p * d).collect();
    let full: u64 = layer_bytes.iter().sum();
    let sharded: u64 = layer_bytes.iter().map(|&b| slice.shard(b)).sum();
    let ministage_bytes: Vec<u64> = slice.ministage_params.iter().map(|p| p * d).collect();
    let pair = max_adjacent_pair(&ministage_bytes);

    let (m_params, grads_full) = match strategy {
        StrategyKind::ZorseInterleaved => (pair, pair),
        StrategyKind::PpZero2 => (full, full),
        StrategyKind::PpZero3 => {
            let gathered = layer_bytes.iter().map(|&b| b - slice.shard(b)).max().unwrap_or(0);
            let resident = if layer_bytes.len() > 1 { 2 * gathered } else { gathered };
            (sharded + resident, full)
        }
    };
    let m_optim: u64 = slice.layer_params.iter().map(|p| slice.shard(p * slice.optimizer_bytes_per_param)).sum();
    let a = slice.boundary_activation();
    let ws = working_set_bytes(slice.k_act, a);
    let m_activations = if slice.offload_activations {
        2 * a + ws
    } else {
        slice.n_microbatches * slice.layer_params.len() as u64 * a + ws
    };
    MemoryEstimate::new(m_params, grads_full + sharded, m_optim, m_activations)
}

pub fn memory_fits(estimate: &MemoryEstimate, gpu: &GpuDevice, headroom: f64) -> bool {
    debug_assert!(headroom > 0.0 && headroom <= 1.0);
    estimate.m_total as f64 <= headroom * gpu.mem_capacity as f64
}

/// (AllGathers, ReduceScatters) issued by one group per iteration.
pub fn count_collectives(layers: u64, n_microbatches: u64, strategy: StrategyKind) -> (u64, u64) {
    let allgathers = match strategy {
        StrategyKind::ZorseInterleaved | StrategyKind::PpZero2 => 2 * layers,
        StrategyKind::PpZero3 => 2 * layers * n_microbatches,
    };
    (allgathers, layers)
}
