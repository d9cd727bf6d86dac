mod common;

use common::{random_array, rng};
use nmrl::analysis::{build_heatmaps, capture_representations, linear_cka, AnalysisError};
use nmrl::autodiff::Array;
use nmrl::layers::{GateMode, Head, LayerKind, Network, PolicySpec};
use proptest::prelude::*;

/// Biased HSIC of linear kernels, `tr(K H L H) / (n − 1)²`, with explicit
/// n × n Gram and centring matrices.
fn hsic(x: &Array, y: &Array) -> f64 {
    let n = x.shape()[0];
    let gram = |m: &Array| {
        let c = m.shape()[1];
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = (0..c).map(|t| m.get2(i, t) * m.get2(j, t)).sum();
            }
        }
        k
    };
    let h: Vec<f64> = (0..n * n)
        .map(|ij| if ij / n == ij % n { 1.0 } else { 0.0 } - 1.0 / n as f64)
        .collect();
    let mul = |a: &[f64], b: &[f64]| {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    out[i * n + j] += a[i * n + k] * b[k * n + j];
                }
            }
        }
        out
    };
    let khlh = mul(&mul(&gram(x), &h), &mul(&gram(y), &h));
    (0..n).map(|i| khlh[i * n + i]).sum::<f64>() / ((n - 1) * (n - 1)) as f64
}

fn hsic_cka(x: &Array, y: &Array) -> f64 {
    hsic(x, y) / (hsic(x, x) * hsic(y, y)).sqrt()
}

/// Random orthogonal matrix from Gram–Schmidt on a random square matrix.
fn orthogonal(n: usize, seed: u64) -> Array {
    let a = random_array(&mut rng(seed), &[n, n], -1.0, 1.0);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..n {
        let mut v: Vec<f64> = (0..n).map(|i| a.get2(i, j)).collect();
        for q in &cols {
            let d: f64 = v.iter().zip(q).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(q) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    Array::new(vec![n, n], (0..n * n).map(|k| cols[k % n][k / n]).collect()).unwrap()
}

fn matmul(a: &Array, b: &Array) -> Array {
    a.matmul(b, false, false).unwrap()
}

#[test]
fn agrees_with_hsic_oracle_on_random_matrices() {
    let mut r = rng(91);
    for _ in 0..20 {
        let x = random_array(&mut r, &[10, 4], -1.0, 1.0);
        let y = random_array(&mut r, &[10, 4], -2.0, 2.0);
        let cka = linear_cka(&x, &y).unwrap();
        assert!((cka - hsic_cka(&x, &y)).abs() < 1e-12);
    }
    // Different widths are allowed.
    let x = random_array(&mut r, &[10, 4], -1.0, 1.0);
    let y = random_array(&mut r, &[10, 7], -1.0, 1.0);
    assert!((linear_cka(&x, &y).unwrap() - hsic_cka(&x, &y)).abs() < 1e-12);
}

#[test]
fn hand_computed_case() {
    // Centred X, Y = X·diag(1, 2): CKA = 20 / (√8 · √68) = 5 / √34.
    let x = Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]])
        .unwrap();
    let y = Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 0.0], vec![0.0, -2.0]])
        .unwrap();
    let expected = 5.0 / 34f64.sqrt();
    assert!((linear_cka(&x, &y).unwrap() - expected).abs() < 1e-12);
    assert!((hsic_cka(&x, &y) - expected).abs() < 1e-12);
}

#[test]
fn self_similarity_symmetry_and_invariances() {
    let mut r = rng(92);
    for seed in 0..10 {
        let x = random_array(&mut r, &[12, 5], -1.0, 1.0);
        let y = random_array(&mut r, &[12, 3], -1.0, 1.0);
        let base = linear_cka(&x, &y).unwrap();
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        assert!((linear_cka(&y, &x).unwrap() - base).abs() < 1e-9);
        let rotated = matmul(&x, &orthogonal(5, 100 + seed));
        assert!((linear_cka(&rotated, &y).unwrap() - base).abs() < 1e-9);
        let scaled = x.map(|v| -7.5 * v);
        assert!((linear_cka(&scaled, &y).unwrap() - base).abs() < 1e-9);
        let shifted = x.map(|v| v + 3.0);
        assert!((linear_cka(&shifted, &y).unwrap() - base).abs() < 1e-9);
    }
}

#[test]
fn mismatched_rows_are_rejected() {
    let x = Array::zeros(&[5, 2]);
    let y = Array::zeros(&[6, 2]);
    assert_eq!(linear_cka(&x, &y), Err(AnalysisError::RowMismatch(5, 6)));
}

fn npn_spec() -> PolicySpec {
    PolicySpec {
        input_dim: 3,
        context_dim: 2,
        hidden_sizes: vec![8, 6],
        nm_sizes: vec![3, 2],
        layer_kind: LayerKind::Neuromodulated,
        gate_mode: GateMode::Magnitude,
        head: Head::Categorical { n_actions: 3 },
    }
}

#[test]
fn step_zero_heatmap_is_all_ones() {
    let spec = npn_spec();
    let theta = Network::init(&spec, &mut rng(93)).unwrap();
    let mut r = rng(94);
    let probes: Vec<Vec<f64>> = (0..15).map(|_| random_array(&mut r, &[3], -1.0, 1.0).into_data()).collect();
    // Every task starts from φ = 0 and then moves to its own context.
    let contexts: Vec<Vec<Array>> = (0..5)
        .map(|_| vec![Array::zeros(&[2]), random_array(&mut r, &[2], -2.0, 2.0)])
        .collect();
    let maps = build_heatmaps(&spec, &theta, &contexts, &probes).unwrap();
    assert_eq!(maps.len(), 2 * 2);
    for m in &maps {
        assert_eq!(m.n_tasks, 5);
        for a in 0..5 {
            assert!((m.get(a, a) - 1.0).abs() < 1e-9);
            for b in 0..5 {
                assert_eq!(m.get(a, b), m.get(b, a));
                assert!((0.0..=1.0).contains(&m.get(a, b)));
                if m.grad_step == 0 {
                    assert!((m.get(a, b) - 1.0).abs() < 1e-9);
                }
            }
        }
    }
    // Layer-major, then step.
    let order: Vec<(usize, usize)> = maps.iter().map(|m| (m.layer, m.grad_step)).collect();
    assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
}

#[test]
fn heatmap_entries_match_direct_captures() {
    let spec = npn_spec();
    let theta = Network::init(&spec, &mut rng(95)).unwrap();
    let mut r = rng(96);
    let probes: Vec<Vec<f64>> = (0..10).map(|_| random_array(&mut r, &[3], -1.0, 1.0).into_data()).collect();
    let contexts: Vec<Vec<Array>> = (0..3).map(|_| vec![random_array(&mut r, &[2], -2.0, 2.0)]).collect();
    let maps = build_heatmaps(&spec, &theta, &contexts, &probes).unwrap();
    let reps: Vec<_> = contexts
        .iter()
        .enumerate()
        .map(|(t, c)| capture_representations(&spec, &theta, c, &probes, t).unwrap())
        .collect();
    for m in &maps {
        for a in 0..3 {
            for b in 0..3 {
                let x = &reps[a][m.layer].values;
                let y = &reps[b][m.layer].values;
                assert_eq!(x.shape(), &[10, spec.hidden_sizes[m.layer]]);
                assert!((m.get(a, b) - hsic_cka_or_degenerate(x, y)).abs() < 1e-9);
            }
        }
    }
}

fn hsic_cka_or_degenerate(x: &Array, y: &Array) -> f64 {
    let (hx, hy) = (hsic(x, x), hsic(y, y));
    match (hx == 0.0, hy == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => hsic(x, y) / (hx * hy).sqrt(),
    }
}

#[test]
fn empty_probe_set_is_rejected() {
    let spec = npn_spec();
    let theta = Network::init(&spec, &mut rng(97)).unwrap();
    let err = capture_representations(&spec, &theta, &[Array::zeros(&[2])], &[], 0).unwrap_err();
    assert_eq!(err, AnalysisError::EmptyProbes);
}

proptest! {
    #[test]
    fn cka_is_a_symmetric_index_in_the_unit_interval(
        xs in prop::collection::vec(-3.0f64..3.0, 24),
        ys in prop::collection::vec(-3.0f64..3.0, 16),
        c in 0.1f64..10.0,
    ) {
        let x = Array::new(vec![8, 3], xs).unwrap();
        let y = Array::new(vec![8, 2], ys).unwrap();
        let v = linear_cka(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((linear_cka(&y, &x).unwrap() - v).abs() < 1e-9);
        prop_assert!((linear_cka(&x.map(|t| c * t), &y).unwrap() - v).abs() < 1e-9);
        prop_assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    }
}
