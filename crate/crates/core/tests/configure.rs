use hetplan_core::configure::*;
use hetplan_core::cost::{total_iteration_latency, StrategyKind};
use hetplan_core::synth::{self, ClusterSpec, GpuKind, NodeSpec};
use hetplan_core::workload::{LayerFit, LinearFit, ModelSpec, Pass, WorkloadSpec};
use hetplan_core::{PlannerConfig, PlanningContext};
use proptest::prelude::*;

fn lin(alpha: f64, beta: f64) -> LayerFit {
    let f = LinearFit { alpha, beta };
    LayerFit { fwd: f, bwd: LinearFit { alpha: 2.0 * alpha, beta: 2.0 * beta } }
}

fn slowest(fits: &[LayerFit], layers: u64, split: &[u64]) -> f64 {
    fits.iter()
        .zip(split)
        .map(|(f, &b)| layers as f64 * (f.time(Pass::Fwd, b) + f.time(Pass::Bwd, b)))
        .fold(0.0, f64::max)
}

/// Every split of `size` over `n` devices, each device >= 1 sample when
/// there are enough samples.
fn all_splits(n: usize, size: u64) -> Vec<Vec<u64>> {
    let floor = u64::from(size >= n as u64);
    let mut out = Vec::new();
    let mut cur = vec![0; n];
    fn rec(i: usize, left: u64, floor: u64, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if i + 1 == cur.len() {
            if left >= floor {
                cur[i] = left;
                out.push(cur.clone());
            }
            return;
        }
        for x in floor..=left {
            cur[i] = x;
            rec(i + 1, left - x, floor, cur, out);
        }
    }
    rec(0, size, floor, &mut cur, &mut out);
    out
}

#[test]
fn proportional_example() {
    let fits = [lin(0.0, 0.01), lin(0.0, 0.02)];
    assert_eq!(balance_microbatch_within_group(&fits, 4, 12), vec![8, 4]);
}

/// Stage makespan when destination `d` serves its arrivals in order.
fn makespan(arrivals: &[f64], unit: &[f64], assign: &[usize]) -> f64 {
    let mut free = vec![0.0_f64; unit.len()];
    let mut order: Vec<usize> = (0..arrivals.len()).collect();
    order.sort_by(|&a, &b| arrivals[a].total_cmp(&arrivals[b]));
    for i in order {
        let d = assign[i];
        free[d] = free[d].max(arrivals[i]) + unit[d];
    }
    free.into_iter().fold(0.0, f64::max)
}

#[test]
fn routing_matches_brute_force_on_two_gpus() {
    let unit = [1.0, 2.0];
    for arrivals in [[0.0, 0.0, 0.0], [0.0, 0.5, 1.0], [0.0, 1.0, 2.0]] {
        let got = makespan(&arrivals, &unit, &route_microbatches(&arrivals, &unit));
        let best = (0..8u32)
            .map(|mask| {
                let a: Vec<usize> = (0..3).map(|i| ((mask >> i) & 1) as usize).collect();
                makespan(&arrivals, &unit, &a)
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(got, best, "arrivals {arrivals:?}");
    }
}

#[test]
fn routing_degenerate_cases() {
    assert_eq!(route_microbatches(&[0.0, 1.0, 2.0], &[1.0]), vec![0, 0, 0]);
    let r = route_microbatches(&[0.0, 1.0], &[1.0, 1.0]);
    assert_ne!(r[0], r[1]);
}

#[test]
fn candidate_space_size() {
    let s = synth::toy4();
    let ctx = PlanningContext::new(s.profile, s.model, s.workload, PlannerConfig::default()).unwrap();
    let parts = phase1(&ctx).unwrap();
    // B = 8 -> M in {1, 2, 4, 8}; L = 8
    assert_eq!(microbatch_counts(8, 64), vec![1, 2, 4, 8]);
    for p in &parts {
        let c = enumerate_candidates(&ctx, p);
        assert_eq!(c.len(), 4 * (8 - (p.k - 1)));
        assert!(c.len() <= 8 * 8);
    }
    // 160 has ten divisors up to 64
    assert_eq!(microbatch_counts(160, 64), vec![1, 2, 4, 5, 8, 10, 16, 20, 32, 40]);
}

fn toy_context(kinds: &[GpuKind], split: usize, layers: usize, batch: u64) -> PlanningContext {
    let (a, b) = kinds.split_at(split.min(kinds.len()));
    let mut nodes = vec![NodeSpec { id: "n0".into(), region: "r0".into(), gpus: a.to_vec(), intra_bw: None }];
    if !b.is_empty() {
        nodes.push(NodeSpec { id: "n1".into(), region: "r0".into(), gpus: b.to_vec(), intra_bw: None });
    }
    let nodes: Vec<NodeSpec> = nodes.into_iter().filter(|n| !n.gpus.is_empty()).collect();
    let spec = ClusterSpec { nodes, same_region_bw: synth::SAME_REGION_BW, cross_region_bw: synth::CROSS_REGION_BW };
    let model = ModelSpec::uniform(layers, 50_000_000, 2048, 2).unwrap();
    let profile = synth::build_profile(&spec, &model, 1024).unwrap();
    PlanningContext::new(profile, model, WorkloadSpec::new(batch, 1024).unwrap(), PlannerConfig::default()).unwrap()
}

/// Lowest estimate over every partition, microbatch count and ministage
/// round count, scanned independently of the planner's loop.
fn exhaustive_best(ctx: &PlanningContext, strategy: StrategyKind) -> Option<f64> {
    let b = ctx.workload.global_batch;
    let mut best: Option<f64> = None;
    for p in phase1(ctx).unwrap() {
        for m in (1..=b).filter(|&m| b.is_multiple_of(m) && m <= 64) {
            let Ok(groups) = prepare_groups(ctx, &p, b / m) else { continue };
            for s in 1..=ctx.model.num_layers {
                let cand = CandidateConfig { n_microbatches: m, microbatch_size: b / m, s_index: s };
                let Some(plan) = build_plan(&groups, &cand, strategy) else { continue };
                if !plan_fits(ctx, &plan) {
                    continue;
                }
                let l = total_iteration_latency(ctx, &plan).l_total;
                best = Some(best.map_or(l, |x: f64| x.min(l)));
            }
        }
    }
    best
}

#[test]
fn toy_planner_matches_exhaustive_search() {
    let s = synth::toy4();
    let ctx = PlanningContext::new(s.profile, s.model, s.workload, PlannerConfig::default()).unwrap();
    for strategy in StrategyKind::ALL {
        let sel = select_plan(&ctx, strategy).unwrap();
        assert_eq!(Some(sel.latency.l_total), exhaustive_best(&ctx, strategy), "{}", strategy.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn balance_is_optimal_among_integer_splits(
        params in proptest::collection::vec((0.0f64..0.01, 0.001f64..0.05), 1..=3),
        size in 1u64..=12,
        layers in 1u64..4,
    ) {
        let fits: Vec<LayerFit> = params.iter().map(|&(a, b)| lin(a, b)).collect();
        let got = balance_microbatch_within_group(&fits, layers, size);
        prop_assert_eq!(got.iter().sum::<u64>(), size);
        let best = all_splits(fits.len(), size)
            .iter()
            .map(|s| slowest(&fits, layers, s))
            .fold(f64::INFINITY, f64::min);
        prop_assert!(slowest(&fits, layers, &got) <= best * (1.0 + 1e-12));
        if size >= fits.len() as u64 {
            prop_assert!(got.iter().all(|&x| x >= 1));
        }
    }

    #[test]
    fn faster_devices_never_get_fewer_samples(
        betas in proptest::collection::vec(0.001f64..0.05, 1..=4),
        size in 1u64..=32,
    ) {
        let fits: Vec<LayerFit> = betas.iter().map(|&b| lin(0.001, b)).collect();
        let got = balance_microbatch_within_group(&fits, 2, size);
        for i in 0..fits.len() {
            for j in 0..fits.len() {
                if betas[i] < betas[j] {
                    prop_assert!(got[i] >= got[j]);
                }
            }
        }
    }

    #[test]
    fn layer_split_conserves_and_follows_speed(
        speeds in proptest::collection::vec(0.1f64..10.0, 1..=6),
        extra in 0usize..20,
    ) {
        let layers = speeds.len() + extra;
        let c = partition_layers(&speeds, layers).unwrap();
        prop_assert_eq!(c.iter().sum::<usize>(), layers);
        prop_assert!(c.iter().all(|&x| x >= 1));
        let total: f64 = speeds.iter().sum();
        let quotas: Vec<f64> = speeds.iter().map(|s| layers as f64 * s / total).collect();
        if quotas.iter().all(|&q| q >= 1.0) {
            for (&n, &q) in c.iter().zip(&quotas) {
                prop_assert!((n as f64 - q).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn ministages_split_evenly(layers in 1usize..64, s in 1usize..64) {
        prop_assume!(s <= layers);
        let m = make_ministages(layers, s).unwrap();
        prop_assert_eq!(m.len(), s);
        prop_assert_eq!(m.iter().sum::<usize>(), layers);
        prop_assert!(m.iter().max().unwrap() - m.iter().min().unwrap() <= 1);
    }

    #[test]
    fn random_toy_clusters_plan_optimally(
        kinds in proptest::collection::vec(0usize..synth::KINDS.len(), 1..=4),
        split in 0usize..=4,
        layers in 1usize..=8,
        batch in 1u64..=8,
    ) {
        let kinds: Vec<GpuKind> = kinds.into_iter().map(|i| synth::KINDS[i]).collect();
        let ctx = toy_context(&kinds, split, layers, batch);
        match select_plan(&ctx, StrategyKind::ZorseInterleaved) {
            Ok(sel) => {
                prop_assert_eq!(Some(sel.latency.l_total), exhaustive_best(&ctx, StrategyKind::ZorseInterleaved));
                let plan = &sel.plan;
                prop_assert!(plan.validate(&ctx).is_ok());
                prop_assert_eq!(plan.groups.iter().map(|g| g.layers_assigned).sum::<usize>(), layers);
                prop_assert_eq!(plan.n_microbatches * plan.microbatch_size, batch);
                for g in &plan.groups {
                    prop_assert_eq!(g.shares.iter().sum::<u64>(), plan.microbatch_size);
                }
                for b in &plan.routing {
                    for e in &b.entries {
                        prop_assert_eq!(e.dst.iter().map(|x| x.1).sum::<u64>(), plan.microbatch_size);
                    }
                }
                prop_assert!(plan_fits(&ctx, plan));
                prop_assert_eq!(select_plan(&ctx, StrategyKind::ZorseInterleaved).unwrap(), sel);
            }
            Err(_) => prop_assert_eq!(exhaustive_best(&ctx, StrategyKind::ZorseInterleaved), None),
        }
    }
}
