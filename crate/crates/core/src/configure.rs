//! Phase 2: turn a cluster partition into concrete plans and pick the
//! fastest one that fits in memory.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::context::PlanningContext;
use crate::cost::{
    memory_estimate, memory_fits, total_iteration_latency, DeviceSlice, LatencyEstimate, MemoryEstimate, StrategyKind,
};
use crate::partition::{split_min_k_cut_sequence, Partition, PartitionError};
use crate::plan::{GpuGroup, PlanError, RouteEntry, StageBoundary, TrainingPlan};
use crate::workload::{aggregate_group_speed, DeviceIdx, LayerFit, Pass};

/// Largest-remainder apportionment of `layers` proportional to `speeds`.
/// Remainder ties go to the lower group index. A group left with no
/// layers takes one from the largest group.
pub fn partition_layers(speeds: &[f64], layers: usize) -> Result<Vec<usize>, PlanError> {
    let k = speeds.len();
    if layers < k || k == 0 {
        return Err(PlanError::TooFewLayers { layers, groups: k });
    }
    let total: f64 = speeds.iter().sum();
    assert!(total > 0.0, "aggregate speeds must be positive");
    let quotas: Vec<f64> = speeds.iter().map(|s| layers as f64 * s / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|&q| q as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &g in order.iter().take(layers.saturating_sub(assigned)) {
        counts[g] += 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let largest = (0..k).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
        counts[largest] -= 1;
        counts[empty] += 1;
    }
    Ok(counts)
}

/// Near-even contiguous split of a group's layers into `s` ministages;
/// the first `layers % s` ministages get one extra layer.
pub fn make_ministages(layers_assigned: usize, s: usize) -> Result<Vec<usize>, PlanError> {
    if s == 0 || s > layers_assigned {
        return Err(PlanError::MinistagesOutOfRange { s, layers: layers_assigned });
    }
    let base = layers_assigned / s;
    let extra = layers_assigned % s;
    Ok((0..s).map(|i| base + usize::from(i < extra)).collect())
}

/// Pipeline order: intra-group bandwidth descending (a single GPU has no
/// internal link and sorts first), then aggregate speed descending, then
/// input index.
pub fn order_groups(groups: &[GpuGroup]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..groups.len()).collect();
    idx.sort_by(|&a, &b| {
        let bw = |g: &GpuGroup| g.intra_bw.unwrap_or(f64::INFINITY);
        bw(&groups[b])
            .total_cmp(&bw(&groups[a]))
            .then(groups[b].aggregate_speed.total_cmp(&groups[a].aggregate_speed))
            .then(a.cmp(&b))
    });
    idx
}

#[derive(PartialEq)]
struct Slot {
    next: f64,
    unit: f64,
    idx: usize,
}

impl Eq for Slot {}

impl Ord for Slot {
    // min-heap on (next cost, unit cost, index)
    fn cmp(&self, other: &Self) -> Ordering {
        other.next.total_cmp(&self.next).then(other.unit.total_cmp(&self.unit)).then(other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Slot {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Hand out `items` one at a time to whichever device would finish its
/// next item soonest. With nondecreasing `cost` this minimizes the
/// largest per-device cost. Every device gets at least one item when
/// there are enough to go around.
fn water_fill(n: usize, items: u64, cost: impl Fn(usize, u64) -> f64) -> Vec<u64> {
    let base = u64::from(items >= n as u64);
    let mut counts = alloc::vec![base; n];
    let mut heap: BinaryHeap<Slot> =
        (0..n).map(|i| Slot { next: cost(i, base + 1), unit: cost(i, 1), idx: i }).collect();
    for _ in 0..items - base * n as u64 {
        let mut top = heap.pop().expect("nonempty");
        counts[top.idx] += 1;
        top.next = cost(top.idx, counts[top.idx] + 1);
        heap.push(top);
    }
    counts
}

/// Per-device sample counts for one microbatch. `fits` are the devices'
/// runtime fits and `layers` the number of layers each runs; the split
/// minimizes the slowest device's forward+backward time.
pub fn balance_microbatch_within_group(fits: &[LayerFit], layers: u64, microbatch_size: u64) -> Vec<u64> {
    assert!(microbatch_size >= 1 && !fits.is_empty());
    water_fill(fits.len(), microbatch_size, |d, b| {
        layers as f64 * (fits[d].time(Pass::Fwd, b) + fits[d].time(Pass::Bwd, b))
    })
}

/// Assign arriving microbatches to destination GPUs. `arrivals` are
/// completion times at the source stage, `unit_times` each destination's
/// runtime for one microbatch. Each destination's remaining runtime
/// starts at its balanced quota; the i-th arrival goes to the GPU with the
/// most remaining runtime (ties: faster GPU, then index). Returns the
/// destination index for each arrival, indexed like `arrivals`.
pub fn route_microbatches(arrivals: &[f64], unit_times: &[f64]) -> Vec<usize> {
    assert!(!unit_times.is_empty());
    let quota = water_fill(unit_times.len(), arrivals.len() as u64, |d, b| b as f64 * unit_times[d]);
    let mut remaining: Vec<f64> = quota.iter().zip(unit_times).map(|(&q, &u)| q as f64 * u).collect();
    let mut order: Vec<usize> = (0..arrivals.len()).collect();
    order.sort_by(|&a, &b| arrivals[a].total_cmp(&arrivals[b]).then(a.cmp(&b)));
    let mut out = alloc::vec![0; arrivals.len()];
    for i in order {
        let d = (0..unit_times.len())
            .min_by(|&a, &b| {
                remaining[b].total_cmp(&remaining[a]).then(unit_times[a].total_cmp(&unit_times[b])).then(a.cmp(&b))
            })
            .unwrap();
        remaining[d] -= unit_times[d];
        out[i] = d;
    }
    out
}

/// One point in the Phase 2 search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CandidateConfig {
    pub n_microbatches: u64,
    pub microbatch_size: u64,
    /// Ministage rounds; the group with the most layers gets this many
    /// ministages and the others the same fraction of their layers.
    pub s_index: usize,
}

/// Microbatch counts considered: divisors of the global batch up to `cap`.
pub fn microbatch_counts(global_batch: u64, cap: u64) -> Vec<u64> {
    (1..=global_batch.min(cap)).filter(|&m| global_batch.is_multiple_of(m)).collect()
}

/// Ministages of a group holding `layers` when the largest group holds
/// `l_max` and runs `s_index` ministages: ceil(s_index * layers / l_max).
pub fn ministages_for(layers: usize, l_max: usize, s_index: usize) -> usize {
    (s_index * layers).div_ceil(l_max).max(1)
}

/// Groups of a partition in pipeline order with speeds, layer split and
/// microbatch shares for one microbatch size; ministages not yet set.
pub fn prepare_groups(
    ctx: &PlanningContext,
    partition: &Partition,
    microbatch_size: u64,
) -> Result<Vec<GpuGroup>, PlanError> {
    let class = ctx.model.class_of(0);
    let layers = ctx.model.num_layers;
    if partition.groups.len() > layers {
        return Err(PlanError::TooFewLayers { layers, groups: partition.groups.len() });
    }
    let fits_of = |devs: &[DeviceIdx]| -> Vec<LayerFit> { devs.iter().map(|&d| *ctx.table.fit(d, class)).collect() };
    let unordered: Vec<GpuGroup> = partition
        .groups
        .iter()
        .map(|devs| GpuGroup {
            devices: devs.clone(),
            aggregate_speed: aggregate_group_speed(&fits_of(devs), microbatch_size),
            intra_bw: ctx.graph.min_pairwise(devs),
            layers_assigned: 0,
            ministage_sizes: Vec::new(),
            shares: Vec::new(),
        })
        .collect();
    let mut groups: Vec<GpuGroup> = order_groups(&unordered).into_iter().map(|i| unordered[i].clone()).collect();
    let speeds: Vec<f64> = groups.iter().map(|g| g.aggregate_speed).collect();
    let counts = partition_layers(&speeds, layers)?;
    for (g, n) in groups.iter_mut().zip(counts) {
        g.layers_assigned = n;
        g.shares = balance_microbatch_within_group(&fits_of(&g.devices), n as u64, microbatch_size);
    }
    Ok(groups)
}

/// Candidate configurations for a partition: microbatch counts crossed
/// with ministage round counts.
pub fn enumerate_candidates(ctx: &PlanningContext, partition: &Partition) -> Vec<CandidateConfig> {
    let b = ctx.workload.global_batch;
    let k = partition.groups.len();
    if k > ctx.model.num_layers {
        return Vec::new();
    }
    // the largest group holds at most L - (k - 1) layers
    let l_max = ctx.model.num_layers - (k - 1);
    let mut out = Vec::new();
    for m in microbatch_counts(b, ctx.config.max_microbatches) {
        for s in 1..=l_max {
            out.push(CandidateConfig { n_microbatches: m, microbatch_size: b / m, s_index: s });
        }
    }
    out
}

/// Plan from prepared groups, or `None` if `s_index` exceeds the largest
/// group's layers.
pub fn build_plan(groups: &[GpuGroup], cand: &CandidateConfig, strategy: StrategyKind) -> Option<TrainingPlan> {
    let l_max = groups.iter().map(|g| g.layers_assigned).max()?;
    let s_index = if strategy == StrategyKind::ZorseInterleaved { cand.s_index } else { 1 };
    if s_index > l_max {
        return None;
    }
    let groups: Vec<GpuGroup> = groups
        .iter()
        .map(|g| {
            let mut g = g.clone();
            let s = ministages_for(g.layers_assigned, l_max, s_index);
            g.ministage_sizes = make_ministages(g.layers_assigned, s).expect("1 <= s <= layers");
            g
        })
        .collect();
    Some(TrainingPlan {
        groups,
        n_microbatches: cand.n_microbatches,
        microbatch_size: cand.microbatch_size,
        n_ministage_rounds: s_index,
        strategy,
        routing: Vec::new(),
    })
}

/// Per-device memory estimates in plan order (groups, then devices).
pub fn plan_memory(ctx: &PlanningContext, plan: &TrainingPlan) -> Vec<(DeviceIdx, MemoryEstimate)> {
    let mut out = Vec::with_capacity(plan.num_devices());
    for (gi, g) in plan.groups.iter().enumerate() {
        let mut slice = DeviceSlice::for_device(ctx, plan, gi, 0);
        for (pos, &d) in g.devices.iter().enumerate() {
            slice.microbatch_share = g.shares[pos];
            out.push((d, memory_estimate(&slice, plan.strategy)));
        }
    }
    out
}

pub fn plan_fits(ctx: &PlanningContext, plan: &TrainingPlan) -> bool {
    plan_memory(ctx, plan).iter().all(|(d, m)| memory_fits(m, &ctx.profile.devices[*d], ctx.config.headroom))
}

/// Routing for every group-to-group hop in ministage order.
pub fn plan_routing(ctx: &PlanningContext, plan: &TrainingPlan) -> Vec<StageBoundary> {
    let ms = plan.ministages();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for w in ms.windows(2) {
        let p = (w[0].group, w[1].group);
        if p.0 != p.1 && !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    let class = ctx.model.class_of(0);
    pairs
        .into_iter()
        .map(|(src, dst)| {
            let g = &plan.groups[dst];
            let layers = g.layers_assigned as f64;
            let unit: Vec<f64> = g
                .devices
                .iter()
                .zip(&g.shares)
                .map(|(&d, &b)| {
                    let f = ctx.table.fit(d, class);
                    layers * (f.time(Pass::Fwd, b) + f.time(Pass::Bwd, b))
                })
                .collect();
            let speed: Vec<f64> = g
                .devices
                .iter()
                .map(|&d| {
                    let f = ctx.table.fit(d, class);
                    f.time(Pass::Fwd, 1) + f.time(Pass::Bwd, 1)
                })
                .collect();
            let mut remaining: Vec<f64> = unit.iter().map(|u| u * plan.n_microbatches as f64).collect();
            let entries = (0..plan.n_microbatches)
                .map(|m| {
                    let mut order: Vec<usize> = (0..g.devices.len()).filter(|&i| g.shares[i] > 0).collect();
                    order.sort_by(|&a, &b| {
                        remaining[b]
                            .total_cmp(&remaining[a])
                            .then(speed[a].total_cmp(&speed[b]))
                            .then(g.devices[a].cmp(&g.devices[b]))
                    });
                    for &i in &order {
                        remaining[i] -= unit[i];
                    }
                    RouteEntry {
                        microbatch: m,
                        src: plan.groups[src].devices.clone(),
                        dst: order.iter().map(|&i| (g.devices[i], g.shares[i])).collect(),
                    }
                })
                .collect();
            StageBoundary { src_group: src, dst_group: dst, entries }
        })
        .collect()
}

/// Selected plan with its estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanSelection {
    pub plan: TrainingPlan,
    pub latency: LatencyEstimate,
    pub memory: Vec<(DeviceIdx, MemoryEstimate)>,
    /// Candidates evaluated (memory-checked) across all partitions.
    pub candidates_evaluated: usize,
    pub candidates_feasible: usize,
}

/// Phase 1: greedy min k-cut partitions for k = 1..=N.
pub fn phase1(ctx: &PlanningContext) -> Result<Vec<Partition>, PartitionError> {
    split_min_k_cut_sequence(&ctx.graph, ctx.graph.len())
}

#[derive(Debug, Clone, Default)]
struct Best {
    found: Option<(TrainingPlan, LatencyEstimate)>,
    evaluated: usize,
    feasible: usize,
}

impl Best {
    fn offer(&mut self, plan: TrainingPlan, est: LatencyEstimate) {
        // strict improvement keeps the earliest candidate on ties
        if self.found.as_ref().is_none_or(|(_, b)| est.l_total < b.l_total) {
            self.found = Some((plan, est));
        }
    }
}

fn phase2_into(ctx: &PlanningContext, partition: &Partition, strategy: StrategyKind, best: &mut Best) {
    let mut prepared: BTreeMap<u64, Option<Vec<GpuGroup>>> = BTreeMap::new();
    for cand in enumerate_candidates(ctx, partition) {
        if strategy != StrategyKind::ZorseInterleaved && cand.s_index > 1 {
            continue;
        }
        let groups = prepared
            .entry(cand.microbatch_size)
            .or_insert_with(|| prepare_groups(ctx, partition, cand.microbatch_size).ok());
        let Some(groups) = groups else { continue };
        let Some(plan) = build_plan(groups, &cand, strategy) else { continue };
        best.evaluated += 1;
        if !plan_fits(ctx, &plan) {
            continue;
        }
        best.feasible += 1;
        let est = total_iteration_latency(ctx, &plan);
        best.offer(plan, est);
    }
}

/// Phase 2 for one partition: the fastest memory-feasible plan.
pub fn phase2(
    ctx: &PlanningContext,
    partition: &Partition,
    strategy: StrategyKind,
) -> Option<(TrainingPlan, LatencyEstimate)> {
    let mut best = Best::default();
    phase2_into(ctx, partition, strategy, &mut best);
    best.found
}

/// Phase 2 over the given partitions (in increasing k), then attach
/// routing and estimates to the winner.
pub fn select_from_partitions(
    ctx: &PlanningContext,
    partitions: &[Partition],
    strategy: StrategyKind,
) -> Result<PlanSelection, PlanError> {
    let mut best = Best::default();
    for p in partitions {
        phase2_into(ctx, p, strategy, &mut best);
    }
    let (mut plan, latency) = best.found.ok_or(PlanError::NoFeasiblePlan)?;
    plan.routing = plan_routing(ctx, &plan);
    let memory = plan_memory(ctx, &plan);
    Ok(PlanSelection {
        plan,
        latency,
        memory,
        candidates_evaluated: best.evaluated,
        candidates_feasible: best.feasible,
    })
}

/// Phase 1 + Phase 2: the plan with the lowest estimated iteration
/// latency. Ties prefer fewer groups, then fewer microbatches, then fewer
/// ministage rounds.
pub fn select_plan(ctx: &PlanningContext, strategy: StrategyKind) -> Result<PlanSelection, PlanError> {
    let partitions = phase1(ctx).map_err(|e| PlanError::Invalid(alloc::format!("{e}")))?;
    select_from_partitions(ctx, &partitions, strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::LinearFit;
    use alloc::vec;

    fn lin(beta: f64) -> LayerFit {
        LayerFit { fwd: LinearFit { alpha: 0.0, beta }, bwd: LinearFit { alpha: 0.0, beta } }
    }

    #[test]
    fn layer_apportionment() {
        assert_eq!(partition_layers(&[2.0, 2.0, 1.0], 20).unwrap(), vec![8, 8, 4]);
        assert_eq!(partition_layers(&[1.0, 1.0, 1.0], 20).unwrap(), vec![7, 7, 6]);
        assert_eq!(partition_layers(&[3.0, 3.0], 10).unwrap(), vec![5, 5]);
        assert_eq!(partition_layers(&[100.0, 1.0], 2).unwrap(), vec![1, 1]);
        assert!(matches!(partition_layers(&[1.0, 1.0, 1.0], 2), Err(PlanError::TooFewLayers { .. })));
    }

    #[test]
    fn ministage_split() {
        assert_eq!(make_ministages(8, 4).unwrap(), vec![2, 2, 2, 2]);
        assert_eq!(make_ministages(5, 2).unwrap(), vec![3, 2]);
        assert!(make_ministages(3, 4).is_err());
        assert!(make_ministages(3, 0).is_err());
    }

    fn group(intra: Option<f64>, speed: f64) -> GpuGroup {
        GpuGroup {
            devices: vec![0],
            aggregate_speed: speed,
            intra_bw: intra,
            layers_assigned: 0,
            ministage_sizes: vec![],
            shares: vec![],
        }
    }

    #[test]
    fn group_order() {
        let gs = [group(Some(6.1e9), 1.0), group(Some(222.2e9), 1.0), group(Some(23.9e9), 1.0)];
        assert_eq!(order_groups(&gs), vec![1, 2, 0]);
        let gs = [group(Some(1e9), 1.0), group(Some(1e9), 3.0), group(Some(1e9), 3.0)];
        assert_eq!(order_groups(&gs), vec![1, 2, 0]);
        assert_eq!(order_groups(&gs[..1]), vec![0]);
    }

    #[test]
    fn balance_examples() {
        assert_eq!(balance_microbatch_within_group(&[lin(0.5), lin(1.0)], 1, 12), vec![8, 4]);
        assert_eq!(balance_microbatch_within_group(&[lin(1.0); 3], 4, 9), vec![3, 3, 3]);
        assert_eq!(balance_microbatch_within_group(&[lin(1.0); 3], 4, 2), vec![1, 1, 0]);
        // a very slow device still gets one sample when there are enough
        assert_eq!(balance_microbatch_within_group(&[lin(1.0), lin(100.0)], 1, 4), vec![3, 1]);
    }

    #[test]
    fn routing_examples() {
        assert_eq!(route_microbatches(&[0.0, 1.0, 2.0], &[1.0]), vec![0, 0, 0]);
        let two = route_microbatches(&[0.0, 1.0], &[1.0, 1.0]);
        assert_eq!(two, vec![0, 1]);
        let r = route_microbatches(&[0.0, 1.0, 2.0], &[0.5, 1.0]);
        assert_eq!(r.iter().filter(|&&d| d == 0).count(), 2);
    }

    #[test]
    fn candidate_space() {
        assert_eq!(microbatch_counts(8, 64), vec![1, 2, 4, 8]);
        assert_eq!(microbatch_counts(128, 64).last(), Some(&64));
        assert_eq!(ministages_for(8, 8, 3), 3);
        assert_eq!(ministages_for(4, 8, 3), 2);
        assert_eq!(ministages_for(1, 8, 1), 1);
    }
}
