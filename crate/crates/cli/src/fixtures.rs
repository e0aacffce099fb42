//! Synthetic cluster and model files: the named scenarios, plus seeded
//! random clusters.

use hetplan_core::synth::{self, ClusterSpec, NodeSpec};
use hetplan_core::WorkloadSpec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};
use crate::formats::{ClusterDoc, ModelDoc};

pub fn scenario(name: &str) -> Result<(ClusterDoc, ModelDoc)> {
    let s = synth::by_name(name).ok_or_else(|| {
        CliError::invalid(format!("unknown scenario `{name}`; known: {}", synth::SCENARIOS.join(", ")))
    })?;
    Ok((ClusterDoc::from_profile(&s.profile), ModelDoc::from_specs(&s.model, &s.workload)))
}

/// `nodes` nodes of 1..=4 GPUs of one random kind each, spread over one or
/// two regions; a 1.3B-class model with 16 samples.
pub fn random(seed: u64, nodes: usize) -> Result<(ClusterDoc, ModelDoc)> {
    if nodes == 0 {
        return Err(CliError::invalid("need at least one node"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regions = if nodes > 1 && rng.gen_bool(0.5) { 2 } else { 1 };
    let spec = ClusterSpec {
        nodes: (0..nodes)
            .map(|i| {
                let kind = *synth::KINDS.choose(&mut rng).expect("kinds");
                let region = format!("r{}", i % regions);
                NodeSpec::new(&format!("n{i}"), &region, kind, rng.gen_range(1..=4))
            })
            .collect(),
        same_region_bw: synth::SAME_REGION_BW,
        cross_region_bw: synth::CROSS_REGION_BW,
    };
    let model = synth::gpt1b_like();
    let workload = WorkloadSpec::new(16, 2048)?;
    let profile = synth::build_profile(&spec, &model, workload.seq_len)?;
    Ok((ClusterDoc::from_profile(&profile), ModelDoc::from_specs(&model, &workload)))
}
