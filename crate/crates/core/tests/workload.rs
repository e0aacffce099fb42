use hetplan_core::workload::{aggregate_group_speed, fit_layer_runtime, LayerFit, LinearFit};
use proptest::prelude::*;

/// Least squares through the 2x2 normal equations.
fn normal_equations(s: &[(f64, f64)]) -> (f64, f64) {
    let n = s.len() as f64;
    let sx: f64 = s.iter().map(|p| p.0).sum();
    let sy: f64 = s.iter().map(|p| p.1).sum();
    let sxx: f64 = s.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = s.iter().map(|p| p.0 * p.1).sum();
    let det = n * sxx - sx * sx;
    let beta = (n * sxy - sx * sy) / det;
    let alpha = (sy * sxx - sx * sxy) / det;
    (alpha, beta)
}

fn lin(alpha: f64, beta: f64) -> LayerFit {
    let f = LinearFit { alpha, beta };
    LayerFit { fwd: f, bwd: f }
}

#[test]
fn fit_matches_normal_equations() {
    let s = [(1.0, 0.013), (2.0, 0.019), (4.0, 0.036), (8.0, 0.061)];
    let f = fit_layer_runtime(&s).unwrap();
    let (a, b) = normal_equations(&s);
    assert!((f.alpha - a).abs() < 1e-12);
    assert!((f.beta - b).abs() < 1e-12);
}

#[test]
fn decreasing_samples_fit_flat_mean() {
    let s = [(1.0, 0.05), (2.0, 0.04), (4.0, 0.03)];
    let f = fit_layer_runtime(&s).unwrap();
    assert_eq!(f.beta, 0.0);
    assert!((f.alpha - 0.04).abs() < 1e-12);
}

proptest! {
    #[test]
    fn collinear_samples_are_reproduced(alpha in 0.0f64..0.1, beta in 0.0f64..0.05, extra in 0usize..4) {
        let xs: Vec<f64> = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0][..3 + extra].to_vec();
        let s: Vec<(f64, f64)> = xs.iter().map(|&x| (x, alpha + beta * x)).collect();
        let f = fit_layer_runtime(&s).unwrap();
        for &(x, y) in &s {
            prop_assert!((f.eval(x) - y).abs() <= 1e-12 * (1.0 + y));
        }
    }

    #[test]
    fn fit_agrees_with_oracle_or_clamps(ys in proptest::collection::vec(0.001f64..1.0, 4)) {
        let s: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().copied().zip(ys.iter().copied()).collect();
        let f = fit_layer_runtime(&s).unwrap();
        let (a, b) = normal_equations(&s);
        if b >= 0.0 {
            prop_assert!((f.beta - b).abs() < 1e-9 && (f.alpha - a).abs() < 1e-9);
        } else {
            prop_assert_eq!(f.beta, 0.0);
        }
        prop_assert!(f.eval(3.0) <= f.eval(5.0));
    }

    #[test]
    fn group_speed_ignores_member_order(
        params in proptest::collection::vec((0.0f64..0.01, 0.001f64..0.05), 1..5),
        batch in 1u64..64,
        rot in 0usize..5,
    ) {
        let fits: Vec<LayerFit> = params.iter().map(|&(a, b)| lin(a, b)).collect();
        let mut turned = fits.clone();
        turned.rotate_left(rot % fits.len());
        let x = aggregate_group_speed(&fits, batch);
        let y = aggregate_group_speed(&turned, batch);
        prop_assert!((x - y).abs() <= 1e-9 * x);
    }
}
