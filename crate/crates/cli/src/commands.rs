//! Command implementations. Each returns the text it would print and the
//! documents it would write, so the binary only does IO.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use hetplan_core::configure::{phase1, select_from_partitions, PlanSelection};
use hetplan_core::cost::{count_collectives, StrategyKind};
use hetplan_core::partition::split_min_k_cut_sequence;
use hetplan_core::sim::{compare_strategies, peak_memory, StrategyReport};
use hetplan_core::{simulate, ClusterGraph, ClusterProfile, PlannerConfig, PlanningContext, Timeline, TrainingPlan};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::export::{gantt_csv, memory_csv};
use crate::formats::{read_json, to_json, ClusterDoc, ConfigDoc, ModelDoc, PlanDoc};

const GIB: f64 = (1u64 << 30) as f64;

/// Files and overrides shared by the planning commands.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub cluster: PathBuf,
    pub model: PathBuf,
    pub batch_tokens: Option<u64>,
    pub headroom: Option<f64>,
    pub comm_config: Option<PathBuf>,
}

pub fn load_profile(path: &std::path::Path) -> Result<ClusterProfile> {
    read_json::<ClusterDoc>(path)?.into_profile()
}

pub fn load_context(inputs: &Inputs) -> Result<PlanningContext> {
    let profile = load_profile(&inputs.cluster)?;
    let (model, mut workload) = read_json::<ModelDoc>(&inputs.model)?.into_specs()?;
    if let Some(tokens) = inputs.batch_tokens {
        if tokens == 0 || tokens % workload.seq_len != 0 {
            return Err(CliError::invalid(format!(
                "batch tokens {tokens} is not a positive multiple of seq_len {}",
                workload.seq_len
            )));
        }
        workload.global_batch = tokens / workload.seq_len;
    }
    let mut config = PlannerConfig::default();
    if let Some(path) = &inputs.comm_config {
        read_json::<ConfigDoc>(path)?.apply(&mut config)?;
    }
    if let Some(h) = inputs.headroom {
        config.headroom = h;
    }
    crate::formats::check_config(&config)?;
    profile.check_samples_for(&model)?;
    Ok(PlanningContext::new(profile, model, workload, config)?)
}

pub fn partition(profile: &ClusterProfile, k: usize) -> Result<String> {
    let n = profile.num_devices();
    if k == 0 || k > n {
        return Err(CliError::invalid(format!("k must be in 1..={n}, got {k}")));
    }
    let graph = ClusterGraph::from_profile(profile);
    let seq = split_min_k_cut_sequence(&graph, k).map_err(|e| CliError::invalid(e.to_string()))?;
    let p = &seq[k - 1];
    let mut out = String::new();
    writeln!(out, "k {} cut_weight {}", p.k, p.cut_weight).unwrap();
    for (i, g) in p.groups.iter().enumerate() {
        let ids: Vec<&str> = g.iter().map(|&d| profile.devices[d].id.as_str()).collect();
        writeln!(out, "group {i}: {}", ids.join(" ")).unwrap();
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChosenPlan {
    pub strategy: String,
    pub groups: usize,
    pub n_microbatches: u64,
    pub microbatch_size: u64,
    pub n_ministage_rounds: usize,
    pub estimated_latency: f64,
    pub estimated_peak_memory: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub makespan: f64,
    pub peak_memory: u64,
    pub peak_params: u64,
    pub allgathers: u64,
    pub reduce_scatters: u64,
    pub offload_stall: f64,
}

impl From<&StrategyReport> for ComparisonRow {
    fn from(r: &StrategyReport) -> Self {
        Self {
            strategy: r.strategy.name().into(),
            makespan: r.makespan,
            peak_memory: r.peak_memory,
            peak_params: r.peak_params,
            allgathers: r.collective_counts.0,
            reduce_scatters: r.collective_counts.1,
            offload_stall: r.offload_stall,
        }
    }
}

/// Planning summary. Wall-clock phase times are only filled in on
/// request so that reports stay reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase1_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase2_time: Option<f64>,
    pub candidates_evaluated: usize,
    pub candidates_feasible: usize,
    pub chosen: ChosenPlan,
    pub comparison: Vec<ComparisonRow>,
}

pub struct Planned {
    pub ctx: PlanningContext,
    pub selection: PlanSelection,
    pub report: RunReport,
}

impl Planned {
    pub fn plan_json(&self) -> String {
        to_json(&PlanDoc::from_selection(&self.ctx.profile, &self.selection))
    }

    pub fn report_json(&self) -> String {
        to_json(&self.report)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let r = &self.report;
        if let (Some(p1), Some(p2)) = (r.phase1_time, r.phase2_time) {
            writeln!(out, "phase1 {p1:.3} s  phase2 {p2:.3} s").unwrap();
        }
        writeln!(out, "candidates evaluated {}  feasible {}", r.candidates_evaluated, r.candidates_feasible).unwrap();
        let c = &r.chosen;
        writeln!(
            out,
            "chosen {}: {} groups, M={} x {} samples, {} ministage rounds, est. {:.4} s, est. peak {:.2} GiB",
            c.strategy,
            c.groups,
            c.n_microbatches,
            c.microbatch_size,
            c.n_ministage_rounds,
            c.estimated_latency,
            c.estimated_peak_memory as f64 / GIB
        )
        .unwrap();
        for (i, g) in self.selection.plan.groups.iter().enumerate() {
            let ids: Vec<&str> = g.devices.iter().map(|&d| self.ctx.profile.devices[d].id.as_str()).collect();
            writeln!(
                out,
                "  group {i}: {} layers, ministages {:?}, shares {:?}: {}",
                g.layers_assigned,
                g.ministage_sizes,
                g.shares,
                ids.join(" ")
            )
            .unwrap();
        }
        out.push_str(&comparison_table(&r.comparison));
        out
    }
}

pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<9} {:>12} {:>14} {:>16} {:>10} {:>15} {:>15}",
        "strategy", "makespan_s", "peak_mem_gib", "peak_params_gib", "allgathers", "reduce_scatters", "offload_stall_s"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<9} {:>12.4} {:>14.3} {:>16.3} {:>10} {:>15} {:>15.4}",
            r.strategy,
            r.makespan,
            r.peak_memory as f64 / GIB,
            r.peak_params as f64 / GIB,
            r.allgathers,
            r.reduce_scatters,
            r.offload_stall
        )
        .unwrap();
    }
    out
}

pub fn plan(inputs: &Inputs, strategy: StrategyKind, timing: bool) -> Result<Planned> {
    let ctx = load_context(inputs)?;
    let t0 = Instant::now();
    let partitions = phase1(&ctx).map_err(|e| CliError::invalid(e.to_string()))?;
    let t1 = Instant::now();
    let selection = select_from_partitions(&ctx, &partitions, strategy)?;
    let t2 = Instant::now();
    log::info!("phase1 {:?}, phase2 {:?}", t1 - t0, t2 - t1);
    let comparison = compare_strategies(&ctx, &selection.plan)?.iter().map(ComparisonRow::from).collect();
    let plan = &selection.plan;
    let report = RunReport {
        phase1_time: timing.then(|| (t1 - t0).as_secs_f64()),
        phase2_time: timing.then(|| (t2 - t1).as_secs_f64()),
        candidates_evaluated: selection.candidates_evaluated,
        candidates_feasible: selection.candidates_feasible,
        chosen: ChosenPlan {
            strategy: strategy.name().into(),
            groups: plan.groups.len(),
            n_microbatches: plan.n_microbatches,
            microbatch_size: plan.microbatch_size,
            n_ministage_rounds: plan.n_ministage_rounds,
            estimated_latency: selection.latency.l_total,
            estimated_peak_memory: selection.memory.iter().map(|(_, m)| m.m_total).max().unwrap_or(0),
        },
        comparison,
    };
    Ok(Planned { ctx, selection, report })
}

pub struct Simulated {
    pub strategy: StrategyKind,
    pub timeline: Timeline,
    pub text: String,
    pub gantt: String,
    pub memory: String,
}

pub fn load_plan(ctx: &PlanningContext, path: &std::path::Path) -> Result<TrainingPlan> {
    let plan = read_json::<PlanDoc>(path)?.to_plan(&ctx.profile)?;
    plan.validate(ctx)?;
    Ok(plan)
}

/// Simulates `plan` under each of `strategies`.
pub fn simulate_plan(
    ctx: &PlanningContext,
    plan: &TrainingPlan,
    strategies: &[StrategyKind],
) -> Result<Vec<Simulated>> {
    let mut out = Vec::new();
    for &strategy in strategies {
        let t = simulate(ctx, plan, strategy)?;
        let expected = plan.groups.iter().fold((0, 0), |acc, g| {
            let c = count_collectives(g.layers_assigned as u64, plan.n_microbatches, strategy);
            (acc.0 + c.0, acc.1 + c.1)
        });
        let mut text = String::new();
        writeln!(text, "{}: makespan {:.4} s", strategy.name(), t.makespan).unwrap();
        writeln!(
            text,
            "  allgathers {} (formula {}), reduce_scatters {} (formula {})",
            t.collective_counts.0, expected.0, t.collective_counts.1, expected.1
        )
        .unwrap();
        for (d, dev) in ctx.profile.devices.iter().enumerate() {
            if plan.groups.iter().any(|g| g.devices.contains(&d)) {
                writeln!(
                    text,
                    "  {:<12} busy {:>6.2}%  peak {:.3} GiB",
                    dev.id,
                    100.0 * t.busy_fraction[d],
                    peak_memory(&t, d) as f64 / GIB
                )
                .unwrap();
            }
        }
        let gantt = gantt_csv(&ctx.profile, &t);
        let memory = memory_csv(&ctx.profile, &t);
        out.push(Simulated { strategy, timeline: t, text, gantt, memory });
    }
    Ok(out)
}

/// Comparison rows for `plan`, including offload stall.
pub fn compare(ctx: &PlanningContext, plan: &TrainingPlan) -> Result<Vec<ComparisonRow>> {
    Ok(compare_strategies(ctx, plan)?.iter().map(ComparisonRow::from).collect())
}
