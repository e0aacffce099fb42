use alloc::vec::Vec;
use core::ops::Range;

use super::{EventKind, Lane, MemCategory, MemDelta, Priority, Task, TaskGraph, TaskId};
use crate::context::PlanningContext;
use crate::cost::{allgather_time, p2p_transfer_time, reduce_scatter_time, working_set_bytes, StrategyKind};
use crate::plan::TrainingPlan;
use crate::workload::{DeviceIdx, Pass};

const RANK_LOAD_PARAMS: u8 = 0;
const RANK_ALLGATHER: u8 = 1;
const RANK_LOAD_ACT: u8 = 2;
const RANK_COMPUTE: u8 = 3;
const RANK_P2P: u8 = 4;
const RANK_OFFLOAD_ACT: u8 = 5;
const RANK_REDUCE_SCATTER: u8 = 6;
const RANK_OPTIM: u8 = 7;
const RANK_RELEASE: u8 = 8;

/// Per-device constants for one group member.
struct Member {
    device: DeviceIdx,
    share: u64,
    act: u64,
    ws: u64,
}

struct Builder<'a> {
    ctx: &'a PlanningContext,
    plan: &'a TrainingPlan,
    tasks: Vec<Task>,
    initial: Vec<MemDelta>,
    members: Vec<Vec<Member>>,
    /// Global ministage -> (group, layers).
    ms: Vec<(usize, Range<usize>)>,
    order: usize,
}

impl<'a> Builder<'a> {
    fn new(ctx: &'a PlanningContext, plan: &'a TrainingPlan) -> Self {
        let members = plan
            .groups
            .iter()
            .map(|g| {
                g.devices
                    .iter()
                    .zip(&g.shares)
                    .map(|(&device, &share)| {
                        let act = ctx.activation_bytes(share);
                        Member { device, share, act, ws: working_set_bytes(ctx.config.k_act, act) }
                    })
                    .collect()
            })
            .collect();
        let ms = plan.ministages().into_iter().map(|u| (u.group, u.layers)).collect();
        Self { ctx, plan, tasks: Vec::new(), initial: Vec::new(), members, ms, order: 0 }
    }

    fn k(&self) -> usize {
        self.ms.len()
    }

    fn fseq(&self, u: usize) -> usize {
        u
    }

    fn bseq(&self, u: usize) -> usize {
        2 * self.k() - 1 - u
    }

    fn d_dp(&self, g: usize) -> u64 {
        self.plan.groups[g].devices.len() as u64
    }

    fn full(&self, l: usize) -> u64 {
        self.ctx.model.layer_bytes(l)
    }

    fn shard(&self, g: usize, l: usize) -> u64 {
        self.full(l) / self.d_dp(g)
    }

    fn ministage_full(&self, u: usize) -> u64 {
        self.ms[u].1.clone().map(|l| self.full(l)).sum()
    }

    fn ministage_shard(&self, u: usize) -> u64 {
        let g = self.ms[u].0;
        self.ms[u].1.clone().map(|l| self.shard(g, l)).sum()
    }

    fn host_time(&self, bytes: u64) -> f64 {
        bytes as f64 / self.ctx.config.host_bandwidth
    }

    #[allow(clippy::too_many_arguments)]
    fn add(
        &mut self,
        kind: EventKind,
        u: usize,
        microbatch: Option<u64>,
        layer: Option<usize>,
        duration: f64,
        bytes: u64,
        lanes: Vec<(DeviceIdx, Lane, EventKind)>,
        seq: usize,
        rank: u8,
    ) -> TaskId {
        let id = self.tasks.len();
        self.order += 1;
        self.tasks.push(Task {
            kind,
            group: self.ms[u].0,
            ministage: u,
            microbatch,
            layer,
            duration,
            bytes,
            lanes,
            deps: Vec::new(),
            on_start: Vec::new(),
            on_end: Vec::new(),
            priority: Priority {
                seq,
                microbatch: microbatch.unwrap_or(self.plan.n_microbatches),
                rank,
                order: self.order,
            },
        });
        id
    }

    fn dep(&mut self, task: TaskId, on: TaskId) {
        self.tasks[task].deps.push(on);
    }

    fn deps(&mut self, task: TaskId, on: &[TaskId]) {
        self.tasks[task].deps.extend_from_slice(on);
    }

    fn group_lanes(&self, g: usize, lane: Lane, kind: EventKind) -> Vec<(DeviceIdx, Lane, EventKind)> {
        self.members[g].iter().map(|m| (m.device, lane, kind)).collect()
    }

    fn compute_time(&self, device: DeviceIdx, layers: Range<usize>, share: u64, pass: Pass) -> f64 {
        self.ctx.table.layers_time(&self.ctx.model, device, layers, share, pass)
    }

    fn allgather(&self, g: usize, l: usize) -> f64 {
        allgather_time(self.shard(g, l) as f64, &self.plan.groups[g].devices, &self.ctx.graph, &self.ctx.config.comm)
    }

    fn reduce_scatter(&self, g: usize, l: usize) -> f64 {
        reduce_scatter_time(self.full(l) as f64, &self.plan.groups[g].devices, &self.ctx.graph, &self.ctx.config.comm)
    }

    /// Persistent sharded gradients and optimizer state of every group.
    fn add_sharded_state(&mut self, shard_params: bool) {
        let opt = self.ctx.workload.optimizer_bytes_per_param;
        for g in 0..self.plan.groups.len() {
            let layers: Vec<usize> =
                (0..self.k()).filter(|&u| self.ms[u].0 == g).flat_map(|u| self.ms[u].1.clone()).collect();
            let d = self.d_dp(g);
            let optim: u64 = layers.iter().map(|&l| self.ctx.model.layer_params(l) * opt / d).sum();
            let sharded: u64 = layers.iter().map(|&l| self.shard(g, l)).sum();
            for m in 0..self.members[g].len() {
                let dev = self.members[g][m].device;
                self.initial.push(MemDelta::alloc(dev, MemCategory::Optim, optim));
                self.initial.push(MemDelta::alloc(dev, MemCategory::Grads, sharded));
                if shard_params {
                    self.initial.push(MemDelta::alloc(dev, MemCategory::Params, sharded));
                }
            }
        }
    }

    /// Activation transfer of microbatch `m` from ministage `from` to the
    /// neighbouring ministage `to` (forward or backward).
    fn p2p(&mut self, from: usize, to: usize, m: u64, seq: usize) -> TaskId {
        let (src, dst) = (self.ms[from].0, self.ms[to].0);
        let bytes = self.ctx.activation_bytes(self.plan.microbatch_size);
        let t = p2p_transfer_time(
            bytes as f64,
            &self.plan.groups[src].devices,
            &self.plan.groups[dst].devices,
            &self.ctx.graph,
            &self.ctx.config.comm,
        );
        let mut lanes = self.group_lanes(src, Lane::P2p, EventKind::P2PSend);
        lanes.extend(self.group_lanes(dst, Lane::P2p, EventKind::P2PRecv));
        self.add(EventKind::P2PSend, from, Some(m), None, t, bytes, lanes, seq, RANK_P2P)
    }

    fn optim_time(&self, u: usize) -> f64 {
        let d = self.d_dp(self.ms[u].0);
        let params: u64 = self.ms[u].1.clone().map(|l| self.ctx.model.layer_params(l) / d).sum();
        params as f64 * self.ctx.config.optimizer_step_cost
    }

    /// Per-layer ReduceScatter after the ministage's last backward, then
    /// one optimizer step per device. Returns the optimizer tasks.
    fn reduce_and_step(&mut self, u: usize, last_bwd: &[TaskId]) -> Vec<TaskId> {
        let g = self.ms[u].0;
        let seq = self.bseq(u);
        let mut rs = Vec::new();
        for l in self.ms[u].1.clone().rev() {
            let t = self.reduce_scatter(g, l);
            let lanes = self.group_lanes(g, Lane::Collective, EventKind::ReduceScatter);
            let id =
                self.add(EventKind::ReduceScatter, u, None, Some(l), t, self.full(l), lanes, seq, RANK_REDUCE_SCATTER);
            self.deps(id, last_bwd);
            rs.push(id);
        }
        let full = self.ministage_full(u);
        let dt = self.optim_time(u);
        (0..self.members[g].len())
            .map(|p| {
                let dev = self.members[g][p].device;
                let id = self.add(
                    EventKind::OptimStep,
                    u,
                    None,
                    None,
                    dt,
                    0,
                    alloc::vec![(dev, Lane::Compute, EventKind::OptimStep)],
                    seq,
                    RANK_OPTIM,
                );
                self.deps(id, &rs);
                self.tasks[id].on_end.push(MemDelta::free(dev, MemCategory::Grads, full));
                id
            })
            .collect()
    }
}

/// Ministage-granular schedule shared by the interleaved strategy and
/// the ZeRO-2 baseline.
fn build_ministage_schedule(b: &mut Builder) {
    let offload = b.plan.strategy == StrategyKind::ZorseInterleaved;
    let k = b.k();
    let n_groups = b.plan.groups.len();
    let mm = b.plan.n_microbatches;
    b.add_sharded_state(false);

    // per group, global ministage indices in local order
    let local: Vec<Vec<usize>> = (0..n_groups).map(|g| (0..k).filter(|&u| b.ms[u].0 == g).collect()).collect();

    // Parameter buffers: forward for every ministage, then backward for
    // all but the last (which stays resident across the turn).
    // buffers[g] = (ministage, backward?) in use order
    let buffers: Vec<Vec<(usize, bool)>> = local
        .iter()
        .map(|us| {
            let mut v: Vec<(usize, bool)> = us.iter().map(|&u| (u, false)).collect();
            v.extend(us.iter().rev().skip(1).map(|&u| (u, true)));
            v
        })
        .collect();
    // load[g][buffer][pos], gather[g][buffer]
    let mut load: Vec<Vec<Vec<TaskId>>> = alloc::vec![Vec::new(); n_groups];
    let mut gather: Vec<Vec<Vec<TaskId>>> = alloc::vec![Vec::new(); n_groups];
    // AllGathers re-issued for the backward of each group's last ministage
    let mut turn_gather: Vec<Vec<TaskId>> = alloc::vec![Vec::new(); n_groups];
    for g in 0..n_groups {
        for &(u, backward) in &buffers[g] {
            let seq = if backward { b.bseq(u) } else { b.fseq(u) };
            let mut loads = Vec::new();
            if offload {
                let shard = b.ministage_shard(u);
                for p in 0..b.members[g].len() {
                    let dev = b.members[g][p].device;
                    let id = b.add(
                        EventKind::LoadParams,
                        u,
                        None,
                        None,
                        b.host_time(shard),
                        shard,
                        alloc::vec![(dev, Lane::HostTransfer, EventKind::LoadParams)],
                        seq,
                        RANK_LOAD_PARAMS,
                    );
                    b.tasks[id].on_start.push(MemDelta::alloc(dev, MemCategory::Params, shard));
                    loads.push(id);
                }
            } else if !backward {
                for p in 0..b.members[g].len() {
                    let dev = b.members[g][p].device;
                    let full = b.ministage_full(u);
                    b.initial.push(MemDelta::alloc(dev, MemCategory::Params, full));
                }
            }
            let mut ags = Vec::new();
            for l in b.ms[u].1.clone() {
                let lanes = b.group_lanes(g, Lane::Collective, EventKind::AllGather);
                let id = b.add(
                    EventKind::AllGather,
                    u,
                    None,
                    Some(l),
                    b.allgather(g, l),
                    b.full(l),
                    lanes,
                    seq,
                    RANK_ALLGATHER,
                );
                b.deps(id, &loads);
                if offload {
                    let extra = b.full(l) - b.shard(g, l);
                    for p in 0..b.members[g].len() {
                        let dev = b.members[g][p].device;
                        b.tasks[id].on_start.push(MemDelta::alloc(dev, MemCategory::Params, extra));
                    }
                }
                ags.push(id);
            }
            load[g].push(loads);
            gather[g].push(ags);
        }
        // the last ministage's backward gathers again, without new memory
        let &u = local[g].last().expect("group has ministages");
        let s = local[g].len();
        for l in b.ms[u].1.clone() {
            let lanes = b.group_lanes(g, Lane::Collective, EventKind::AllGather);
            let seq = b.bseq(u);
            let id =
                b.add(EventKind::AllGather, u, None, Some(l), b.allgather(g, l), b.full(l), lanes, seq, RANK_ALLGATHER);
            let fwd_gather = gather[g][s - 1].clone();
            b.deps(id, &fwd_gather);
            turn_gather[g].push(id);
        }
    }
    let buffer_of = |g: usize, u: usize, backward: bool| -> usize {
        buffers[g].iter().position(|&x| x == (u, backward)).expect("buffer exists")
    };

    // Forward pass.
    // fwd[u][m][pos]
    let mut fwd: Vec<Vec<Vec<TaskId>>> = alloc::vec![Vec::new(); k];
    let mut off_act: Vec<Vec<Vec<TaskId>>> = alloc::vec![Vec::new(); k];
    let mut p2p_fwd: Vec<Vec<Option<TaskId>>> = alloc::vec![Vec::new(); k];
    let mut chain: Vec<Vec<TaskId>> = alloc::vec![Vec::new(); b.ctx.profile.num_devices()];
    let mut off_chain: Vec<Vec<TaskId>> = alloc::vec![Vec::new(); b.ctx.profile.num_devices()];
    for u in 0..k {
        let (g, layers) = b.ms[u].clone();
        let seq = b.fseq(u);
        let ags = gather[g][buffer_of(g, u, false)].clone();
        let n_layers = layers.len() as u64;
        for m in 0..mm {
            let mut row = Vec::new();
            let mut off_row = Vec::new();
            for p in 0..b.members[g].len() {
                let (dev, share, act, ws) = {
                    let x = &b.members[g][p];
                    (x.device, x.share, x.act, x.ws)
                };
                let t = b.compute_time(dev, layers.clone(), share, Pass::Fwd);
                let id = b.add(
                    EventKind::Fwd,
                    u,
                    Some(m),
                    None,
                    t,
                    0,
                    alloc::vec![(dev, Lane::Compute, EventKind::Fwd)],
                    seq,
                    RANK_COMPUTE,
                );
                b.deps(id, &ags);
                if u > 0 {
                    if let Some(x) = p2p_fwd[u - 1][m as usize] {
                        b.dep(id, x);
                    } else {
                        b.dep(id, fwd[u - 1][m as usize][p]);
                    }
                }
                if let Some(&prev) = chain[dev].last() {
                    b.dep(id, prev);
                }
                let kept = if offload { act } else { n_layers * act };
                b.tasks[id].on_start.push(MemDelta::alloc(dev, MemCategory::Activations, ws));
                b.tasks[id].on_end.push(MemDelta::free(dev, MemCategory::Activations, ws));
                b.tasks[id].on_end.push(MemDelta::alloc(dev, MemCategory::Activations, kept));
                if offload {
                    let c = chain[dev].len();
                    if c >= 2 {
                        let gate = off_chain[dev][c - 2];
                        b.dep(id, gate);
                    }
                    let bytes = n_layers * act;
                    let off = b.add(
                        EventKind::OffloadAct,
                        u,
                        Some(m),
                        None,
                        b.host_time(bytes),
                        bytes,
                        alloc::vec![(dev, Lane::HostTransfer, EventKind::OffloadAct)],
                        seq,
                        RANK_OFFLOAD_ACT,
                    );
                    b.dep(off, id);
                    b.tasks[off].on_end.push(MemDelta::free(dev, MemCategory::Activations, act));
                    off_chain[dev].push(off);
                    off_row.push(off);
                }
                chain[dev].push(id);
                row.push(id);
            }
            let hop = if u + 1 < k && b.ms[u + 1].0 != g {
                let x = b.p2p(u, u + 1, m, seq);
                b.deps(x, &row);
                Some(x)
            } else {
                None
            };
            p2p_fwd[u].push(hop);
            fwd[u].push(row);
            off_act[u].push(off_row);
        }
    }

    // Release forward buffers of every ministage except each group's last.
    // release[g][buffer][pos]
    let mut release: Vec<Vec<Vec<TaskId>>> = buffers.iter().map(|bs| alloc::vec![Vec::new(); bs.len()]).collect();
    if offload {
        for g in 0..n_groups {
            for &u in &local[g][..local[g].len() - 1] {
                let full = b.ministage_full(u);
                let bi = buffer_of(g, u, false);
                for p in 0..b.members[g].len() {
                    let dev = b.members[g][p].device;
                    let id =
                        b.add(EventKind::OffloadParams, u, None, None, 0.0, 0, Vec::new(), b.fseq(u), RANK_RELEASE);
                    let last = fwd[u][mm as usize - 1][p];
                    b.dep(id, last);
                    b.tasks[id].on_end.push(MemDelta::free(dev, MemCategory::Params, full));
                    release[g][bi].push(id);
                }
            }
        }
    }

    // Backward pass, last ministage first.
    let last_offload: Vec<Option<TaskId>> = off_chain.iter().map(|c| c.last().copied()).collect();
    let mut bwd: Vec<Vec<Vec<TaskId>>> = alloc::vec![Vec::new(); k];
    let mut p2p_bwd: Vec<Vec<Option<TaskId>>> = alloc::vec![Vec::new(); k];
    let mut bchain: Vec<Vec<TaskId>> = alloc::vec![Vec::new(); b.ctx.profile.num_devices()];
    for u in (0..k).rev() {
        let (g, layers) = b.ms[u].clone();
        let seq = b.bseq(u);
        let ags =
            if Some(&u) == local[g].last() { turn_gather[g].clone() } else { gather[g][buffer_of(g, u, true)].clone() };
        let n_layers = layers.len() as u64;
        let grads = b.ministage_full(u);
        for m in 0..mm {
            let mut row = Vec::new();
            for p in 0..b.members[g].len() {
                let (dev, share, act, ws) = {
                    let x = &b.members[g][p];
                    (x.device, x.share, x.act, x.ws)
                };
                let kept = if offload { act } else { n_layers * act };
                let mut inputs: Vec<TaskId> = ags.clone();
                if offload {
                    let bytes = n_layers * act;
                    let la = b.add(
                        EventKind::LoadAct,
                        u,
                        Some(m),
                        None,
                        b.host_time(bytes),
                        bytes,
                        alloc::vec![(dev, Lane::HostTransfer, EventKind::LoadAct)],
                        seq,
                        RANK_LOAD_ACT,
                    );
                    b.dep(la, off_act[u][m as usize][p]);
                    if let Some(x) = last_offload[dev] {
                        b.dep(la, x);
                    }
                    let c = bchain[dev].len();
                    if c >= 2 {
                        let gate = bchain[dev][c - 2];
                        b.dep(la, gate);
                    }
                    b.tasks[la].on_start.push(MemDelta::alloc(dev, MemCategory::Activations, act));
                    inputs.push(la);
                } else {
                    inputs.push(fwd[u][m as usize][p]);
                }
                if u + 1 < k {
                    match p2p_bwd[u + 1][m as usize] {
                        Some(x) => inputs.push(x),
                        None => inputs.push(bwd[u + 1][m as usize][p]),
                    }
                }
                if let Some(&prev) = bchain[dev].last() {
                    inputs.push(prev);
                }
                let rc = b.add(
                    EventKind::Recompute,
                    u,
                    Some(m),
                    None,
                    b.compute_time(dev, layers.clone(), share, Pass::Fwd),
                    0,
                    alloc::vec![(dev, Lane::Compute, EventKind::Recompute)],
                    seq,
                    RANK_COMPUTE,
                );
                b.deps(rc, &inputs);
                b.tasks[rc].on_start.push(MemDelta::alloc(dev, MemCategory::Activations, ws));
                let id = b.add(
                    EventKind::Bwd,
                    u,
                    Some(m),
                    None,
                    b.compute_time(dev, layers.clone(), share, Pass::Bwd),
                    0,
                    alloc::vec![(dev, Lane::Compute, EventKind::Bwd)],
                    seq,
                    RANK_COMPUTE,
                );
                b.dep(id, rc);
                if m == 0 {
                    b.tasks[id].on_start.push(MemDelta::alloc(dev, MemCategory::Grads, grads));
                }
                b.tasks[id].on_end.push(MemDelta::free(dev, MemCategory::Activations, ws + kept));
                bchain[dev].push(id);
                row.push(id);
            }
            let hop = if u > 0 && b.ms[u - 1].0 != g {
                let x = b.p2p(u, u - 1, m, seq);
                b.deps(x, &row);
                Some(x)
            } else {
                None
            };
            p2p_bwd[u].push(hop);
            bwd[u].push(row);
        }
        let last_row = bwd[u][mm as usize - 1].clone();
        let steps = b.reduce_and_step(u, &last_row);
        if offload {
            let shard = b.ministage_shard(u);
            let full = b.ministage_full(u);
            let bi = if Some(&u) == local[g].last() { buffer_of(g, u, false) } else { buffer_of(g, u, true) };
            for (p, &step) in steps.iter().enumerate() {
                let dev = b.members[g][p].device;
                let id = b.add(
                    EventKind::OffloadParams,
                    u,
                    None,
                    None,
                    b.host_time(shard),
                    shard,
                    alloc::vec![(dev, Lane::HostTransfer, EventKind::OffloadParams)],
                    seq,
                    RANK_RELEASE,
                );
                b.dep(id, step);
                b.tasks[id].on_end.push(MemDelta::free(dev, MemCategory::Params, full));
                release[g][bi].push(id);
            }
        }
    }

    // A buffer may load once the buffer two positions earlier is gone.
    if offload {
        for g in 0..n_groups {
            for bi in 2..buffers[g].len() {
                let gate = bi - 2;
                // the shared last buffer is released at its backward
                for p in 0..load[g][bi].len() {
                    let id = load[g][bi][p];
                    let r = release[g][gate][p];
                    b.dep(id, r);
                }
            }
        }
    }
}

/// ZeRO-3 baseline: every layer is gathered before each use and dropped
/// right after.
fn build_zero3_schedule(b: &mut Builder) {
    let k = b.k();
    let n_groups = b.plan.groups.len();
    let mm = b.plan.n_microbatches;
    b.add_sharded_state(true);
    // per group, gathers in issue order with the compute tasks that free them
    let mut issued: Vec<Vec<(TaskId, Vec<TaskId>)>> = alloc::vec![Vec::new(); n_groups];
    let nd = b.ctx.profile.num_devices();
    let mut chain: Vec<Option<TaskId>> = alloc::vec![None; nd];

    let gathered = |b: &mut Builder,
                    issued: &mut Vec<Vec<(TaskId, Vec<TaskId>)>>,
                    u: usize,
                    l: usize,
                    seq: usize,
                    order: usize| {
        let g = b.ms[u].0;
        let lanes = b.group_lanes(g, Lane::Collective, EventKind::AllGather);
        let id =
            b.add(EventKind::AllGather, u, None, Some(l), b.allgather(g, l), b.full(l), lanes, seq, RANK_ALLGATHER);
        b.tasks[id].priority.order = order;
        let extra = b.full(l) - b.shard(g, l);
        for p in 0..b.members[g].len() {
            let dev = b.members[g][p].device;
            b.tasks[id].on_start.push(MemDelta::alloc(dev, MemCategory::Params, extra));
        }
        let n = issued[g].len();
        if n >= 2 {
            let frees = issued[g][n - 2].1.clone();
            b.deps(id, &frees);
        }
        issued[g].push((id, Vec::new()));
        (id, extra)
    };

    // forward
    let mut fwd_out: Vec<Vec<Vec<TaskId>>> = alloc::vec![Vec::new(); k];
    let mut p2p_fwd: Vec<Vec<Option<TaskId>>> = alloc::vec![Vec::new(); k];
    for u in 0..k {
        let (g, layers) = b.ms[u].clone();
        let seq = b.fseq(u);
        for m in 0..mm {
            let mut last = Vec::new();
            for (li, l) in layers.clone().enumerate() {
                let (ag, extra) = gathered(b, &mut issued, u, l, seq, li);
                let mut frees = Vec::new();
                for p in 0..b.members[g].len() {
                    let (dev, share, act, ws) = {
                        let x = &b.members[g][p];
                        (x.device, x.share, x.act, x.ws)
                    };
                    let t = b.compute_time(dev, l..l + 1, share, Pass::Fwd);
                    let id = b.add(
                        EventKind::Fwd,
                        u,
                        Some(m),
                        Some(l),
                        t,
                        0,
                        alloc::vec![(dev, Lane::Compute, EventKind::Fwd)],
                        seq,
                        RANK_COMPUTE,
                    );
                    b.tasks[id].priority.order = li;
                    b.dep(id, ag);
                    if li == 0 && u > 0 {
                        match p2p_fwd[u - 1][m as usize] {
                            Some(x) => b.dep(id, x),
                            None => b.dep(id, fwd_out[u - 1][m as usize][p]),
                        }
                    }
                    if let Some(prev) = chain[dev] {
                        b.dep(id, prev);
                    }
                    chain[dev] = Some(id);
                    b.tasks[id].on_start.push(MemDelta::alloc(dev, MemCategory::Activations, ws));
                    b.tasks[id].on_end.push(MemDelta::free(dev, MemCategory::Activations, ws));
                    b.tasks[id].on_end.push(MemDelta::free(dev, MemCategory::Params, extra));
                    b.tasks[id].on_end.push(MemDelta::alloc(dev, MemCategory::Activations, act));
                    frees.push(id);
                }
                issued[g].last_mut().unwrap().1 = frees.clone();
                last = frees;
            }
            let hop = if u + 1 < k && b.ms[u + 1].0 != g {
                let x = b.p2p(u, u + 1, m, seq);
                b.deps(x, &last);
                Some(x)
            } else {
                None
            };
            p2p_fwd[u].push(hop);
            fwd_out[u].push(last);
        }
    }

    // backward
    let mut bwd_out: Vec<Vec<Vec<TaskId>>> = alloc::vec![Vec::new(); k];
    let mut p2p_bwd: Vec<Vec<Option<TaskId>>> = alloc::vec![Vec::new(); k];
    for u in (0..k).rev() {
        let (g, layers) = b.ms[u].clone();
        let seq = b.bseq(u);
        let grads = b.ministage_full(u);
        for m in 0..mm {
            let mut last = Vec::new();
            for (li, l) in layers.clone().rev().enumerate() {
                let (ag, extra) = gathered(b, &mut issued, u, l, seq, li);
                let mut frees = Vec::new();
                for p in 0..b.members[g].len() {
                    let (dev, share, act, ws) = {
                        let x = &b.members[g][p];
                        (x.device, x.share, x.act, x.ws)
                    };
                    let rc = b.add(
                        EventKind::Recompute,
                        u,
                        Some(m),
                        Some(l),
                        b.compute_time(dev, l..l + 1, share, Pass::Fwd),
                        0,
                        alloc::vec![(dev, Lane::Compute, EventKind::Recompute)],
                        seq,
                        RANK_COMPUTE,
                    );
                    b.tasks[rc].priority.order = li;
                    b.dep(rc, ag);
                    if li == 0 && u + 1 < k {
                        match p2p_bwd[u + 1][m as usize] {
                            Some(x) => b.dep(rc, x),
                            None => b.dep(rc, bwd_out[u + 1][m as usize][p]),
                        }
                    }
                    if let Some(prev) = chain[dev] {
                        b.dep(rc, prev);
                    }
                    b.tasks[rc].on_start.push(MemDelta::alloc(dev, MemCategory::Activations, ws));
                    let id = b.add(
                        EventKind::Bwd,
                        u,
                        Some(m),
                        Some(l),
                        b.compute_time(dev, l..l + 1, share, Pass::Bwd),
                        0,
                        alloc::vec![(dev, Lane::Compute, EventKind::Bwd)],
                        seq,
                        RANK_COMPUTE,
                    );
                    b.tasks[id].priority.order = li;
                    b.dep(id, rc);
                    chain[dev] = Some(id);
                    if m == 0 && li == 0 {
                        b.tasks[id].on_start.push(MemDelta::alloc(dev, MemCategory::Grads, grads));
                    }
                    b.tasks[id].on_end.push(MemDelta::free(dev, MemCategory::Activations, ws + act));
                    b.tasks[id].on_end.push(MemDelta::free(dev, MemCategory::Params, extra));
                    frees.push(id);
                }
                issued[g].last_mut().unwrap().1 = frees.clone();
                last = frees;
            }
            let hop = if u > 0 && b.ms[u - 1].0 != g {
                let x = b.p2p(u, u - 1, m, seq);
                b.deps(x, &last);
                Some(x)
            } else {
                None
            };
            p2p_bwd[u].push(hop);
            bwd_out[u].push(last);
        }
        let last_row = bwd_out[u][mm as usize - 1].clone();
        b.reduce_and_step(u, &last_row);
    }
}

/// Task graph for one training iteration of `plan` under its strategy.
pub fn build_schedule(ctx: &PlanningContext, plan: &TrainingPlan) -> TaskGraph {
    let mut b = Builder::new(ctx, plan);
    match plan.strategy {
        StrategyKind::ZorseInterleaved | StrategyKind::PpZero2 => build_ministage_schedule(&mut b),
        StrategyKind::PpZero3 => build_zero3_schedule(&mut b),
    }
    TaskGraph { n_devices: ctx.profile.num_devices(), n_groups: plan.groups.len(), tasks: b.tasks, initial: b.initial }
}
