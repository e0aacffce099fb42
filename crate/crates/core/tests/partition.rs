use hetplan_core::partition::{exact_min_k_cut, min_2cut, split_min_k_cut_sequence, ClusterGraph};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Connected graph with integer weights, so cut sums compare exactly.
fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> ClusterGraph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.gen_range(0..v), v, rng.gen_range(1..=10) as f64));
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(0.4) {
                edges.push((u, v, rng.gen_range(1..=10) as f64));
            }
        }
    }
    ClusterGraph::from_edges(n, &edges)
}

fn brute_min_bipartition(g: &ClusterGraph) -> f64 {
    let n = g.len();
    let mut best = f64::INFINITY;
    // vertex n-1 always on side 0; every other subset pattern once
    for mask in 1u32..(1 << (n - 1)) {
        let side: Vec<usize> = (0..n - 1).filter(|&v| mask & (1 << v) != 0).collect();
        let rest: Vec<usize> = (0..n).filter(|v| !side.contains(v)).collect();
        best = best.min(g.cut_weight(&[side, rest]));
    }
    best
}

/// Minimum k-cut by trying every labelling in 0..k^n.
fn brute_min_k_cut(g: &ClusterGraph, k: usize) -> f64 {
    let n = g.len();
    let mut best = f64::INFINITY;
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut groups = vec![Vec::new(); k];
        for v in 0..n {
            groups[c % k].push(v);
            c /= k;
        }
        if groups.iter().all(|g| !g.is_empty()) {
            best = best.min(g.cut_weight(&groups));
        }
    }
    best
}

#[test]
fn min_2cut_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.gen_range(2..=9);
        let g = random_graph(&mut rng, n);
        let cut = min_2cut(&g).unwrap();
        assert_eq!(cut.weight, brute_min_bipartition(&g));
        assert_eq!(g.cut_weight(&[cut.side.clone(), cut.rest.clone()]), cut.weight);
        assert!(!cut.side.is_empty() && !cut.rest.is_empty());
    }
}

#[test]
fn exact_k_cut_matches_labelling_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..40 {
        let n = rng.gen_range(2..=6);
        let g = random_graph(&mut rng, n);
        for k in 1..=n {
            let p = exact_min_k_cut(&g, k).unwrap();
            assert_eq!(p.k, k);
            assert_eq!(p.cut_weight, brute_min_k_cut(&g, k));
        }
    }
}

#[test]
fn split_within_factor_of_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let n = rng.gen_range(2..=8);
        let g = random_graph(&mut rng, n);
        let seq = split_min_k_cut_sequence(&g, n).unwrap();
        for k in 2..=n {
            let opt = exact_min_k_cut(&g, k).unwrap().cut_weight;
            let bound = (2.0 - 2.0 / k as f64) * opt;
            assert!(seq[k - 1].cut_weight <= bound + 1e-9, "k={k}: {} > {bound}", seq[k - 1].cut_weight);
        }
    }
}

#[test]
fn equal_weights_split_by_id_order() {
    // four vertices, uniform weights: every single-vertex cut ties
    let e: Vec<_> = (0..4).flat_map(|u| (u + 1..4).map(move |v| (u, v, 1.0))).collect();
    let g = ClusterGraph::from_edges(4, &e);
    let a = split_min_k_cut_sequence(&g, 4).unwrap();
    let b = split_min_k_cut_sequence(&g, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[1].cut_weight, 3.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_sequence_is_a_refining_chain(seed in any::<u64>(), n in 2usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n);
        let seq = split_min_k_cut_sequence(&g, n).unwrap();
        prop_assert_eq!(seq.len(), n);
        for (i, p) in seq.iter().enumerate() {
            prop_assert_eq!(p.k, i + 1);
            prop_assert_eq!(p.groups.len(), i + 1);
            let mut all: Vec<usize> = p.groups.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(p.cut_weight, g.cut_weight(&p.groups));
            if i > 0 {
                // every group of k+1 lies inside one group of k
                for grp in &p.groups {
                    prop_assert!(seq[i - 1].groups.iter().any(|q| grp.iter().all(|v| q.contains(v))));
                }
                prop_assert!(p.cut_weight >= seq[i - 1].cut_weight);
            }
        }
        prop_assert_eq!(seq[n - 1].cut_weight, g.total_weight());
    }

    #[test]
    fn relabelling_preserves_cut_weight(seed in any::<u64>(), n in 2usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n);
        // reverse vertex order
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                let w = g.weight(u, v);
                if w > 0.0 {
                    edges.push((n - 1 - u, n - 1 - v, w));
                }
            }
        }
        let h = ClusterGraph::from_edges(n, &edges);
        prop_assert_eq!(min_2cut(&g).unwrap().weight, min_2cut(&h).unwrap().weight);
    }
}
