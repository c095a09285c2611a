use fedlite::analysis::{
    estimate_constants, hessian_norm, jacobian_norm, kappa_trajectory, mixed_hessian_norm,
    optimal_lambda, power_iteration, quantization_term, sgd_term, theorem1_bound,
    AnalysisConstants, Diagnostics, EstimateOptions,
};
use fedlite::federation::{generate_synthetic, partition, PartitionMode, SyntheticSpec};
use fedlite::nn::{Activation, SplitModel};
use fedlite::quantizer::QuantizerConfig;
use fedlite::trainer::{train, TrainingConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn constants() -> impl Strategy<Value = AnalysisConstants> {
    (
        (0.0..5.0f64, 0.0..5.0f64, 0.0..5.0f64, 0.0..5.0f64),
        (0.0..5.0f64, 0.0..5.0f64, 0.0..5.0f64, 0.0..5.0f64),
        (1usize..64, 1usize..16, 1usize..1000),
    )
        .prop_map(
            |((kappa, sigma2, l_smooth, lambda1), (lambda2, lambda3, lambda, f0), (b, s, t))| {
                AnalysisConstants {
                    kappa,
                    sigma2,
                    l_smooth,
                    lambda1,
                    lambda2,
                    lambda3,
                    lambda,
                    f0_minus_finf: f0,
                    batch_size: b,
                    clients_per_round: s,
                    rounds: t,
                }
            },
        )
}

proptest! {
    #[test]
    fn bound_is_monotone_in_kappa(c in constants(), extra in 0.0..3.0f64) {
        let bigger = AnalysisConstants { kappa: c.kappa + extra, ..c };
        prop_assert!(theorem1_bound(&bigger) >= theorem1_bound(&c));
    }

    #[test]
    fn zero_kappa_removes_the_quantization_term(c in constants(), lambda in 0.0..10.0f64, l1 in 0.0..10.0f64) {
        let a = AnalysisConstants { kappa: 0.0, ..c };
        let b = AnalysisConstants { kappa: 0.0, lambda, lambda1: l1, ..c };
        prop_assert_eq!(quantization_term(&a), 0.0);
        prop_assert_eq!(theorem1_bound(&a), theorem1_bound(&b));
        prop_assert_eq!(theorem1_bound(&a), sgd_term(&a));
    }

    #[test]
    fn lambda_parabola_has_its_vertex_at_lambda2(c in constants(), offset in 0.01..3.0f64) {
        prop_assume!(c.kappa > 0.01 && c.lambda3 > 0.01);
        let at = |lambda: f64| theorem1_bound(&AnalysisConstants { lambda, ..c });
        let best = optimal_lambda(&c);
        prop_assert_eq!(best, c.lambda2);
        prop_assert!(at(best) < at(best + offset));
        if best >= offset {
            prop_assert!(at(best) < at(best - offset));
        }
        // symmetric around the vertex
        if best >= offset {
            let (l, r) = (at(best - offset), at(best + offset));
            prop_assert!((l - r).abs() <= 1e-9 * l.abs().max(1.0));
        }
    }
}

#[test]
fn bound_components_by_hand() {
    let c = AnalysisConstants {
        kappa: 0.5,
        sigma2: 2.0,
        l_smooth: 3.0,
        lambda1: 1.0,
        lambda2: 2.0,
        lambda3: 0.5,
        lambda: 1.0,
        f0_minus_finf: 1.5,
        batch_size: 4,
        clients_per_round: 4,
        rounds: 100,
    };
    // (6 + 24) / sqrt(1600) = 0.75
    assert!((sgd_term(&c) - 0.75).abs() < 1e-15);
    // (4 * sqrt(0.16) + 2) * (1 + 0.25) * 0.25 = 1.125
    assert!((quantization_term(&c) - 1.125).abs() < 1e-15);
}

#[test]
fn quadratic_head_has_unit_curvature_and_no_coupling() {
    // h(z, ws) = 0.5 |z|^2 + ws . c: d2h/dz2 = I, d2h/dz dws = 0
    let c = [0.3, -0.2];
    let z = [1.0, 2.0, -1.0];
    let ws = [0.5, 0.5];
    let grad_z = |z: &[f64]| Ok(z.to_vec());
    let l2 = hessian_norm(grad_z, &z, 20, 1e-5, 0).unwrap();
    assert!((l2.value - 1.0).abs() < 1e-3, "{}", l2.value);
    let grad_z_of_ws = |_ws: &[f64]| Ok(z.to_vec());
    let grad_ws_of_z = |_z: &[f64]| Ok(c.to_vec());
    let l1 = mixed_hessian_norm(grad_z_of_ws, grad_ws_of_z, &ws, &z, 20, 1e-5, 0).unwrap();
    assert!(l1.value.abs() < 1e-3, "{}", l1.value);
}

#[test]
fn bilinear_coupling_matches_svd() {
    // h(z, ws) = z^T M ws: d2h/dz dws = M
    let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.25]);
    let z = [0.1, 0.2, 0.3];
    let ws = [1.0, -1.0];
    let mm = m.clone();
    let grad_z_of_ws = move |w: &[f64]| {
        Ok((&mm * DMatrix::from_column_slice(2, 1, w))
            .as_slice()
            .to_vec())
    };
    let mt = m.transpose();
    let grad_ws_of_z = move |z: &[f64]| {
        Ok((&mt * DMatrix::from_column_slice(3, 1, z))
            .as_slice()
            .to_vec())
    };
    let est = mixed_hessian_norm(grad_z_of_ws, grad_ws_of_z, &ws, &z, 50, 1e-5, 1).unwrap();
    let want = m.singular_values().max();
    assert!(
        (est.value - want).abs() < 1e-3 * want,
        "{} vs {want}",
        est.value
    );
}

#[test]
fn linear_client_jacobian_matches_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let a = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-2.0..2.0));
        let wc = [0.4, -0.7];
        let fwd = a.clone();
        let forward = move |w: &[f64]| {
            Ok((&fwd * DMatrix::from_column_slice(2, 1, w))
                .as_slice()
                .to_vec())
        };
        let at = a.transpose();
        let vjp = move |y: &[f64]| {
            Ok((&at * DMatrix::from_column_slice(3, 1, y))
                .as_slice()
                .to_vec())
        };
        let est = jacobian_norm(forward, vjp, &wc, 50, 1e-5, 2).unwrap();
        let want = a.singular_values().max();
        assert!(
            (est.value - want).abs() < 1e-3 * want.max(1.0),
            "{} vs {want}",
            est.value
        );
    }
}

#[test]
fn power_iteration_on_a_symmetric_matrix() {
    let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
    let est = power_iteration(3, 200, 5, |v| {
        Ok((&m * DMatrix::from_column_slice(3, 1, v))
            .as_slice()
            .to_vec())
    })
    .unwrap();
    let want = m
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max);
    assert!(est.converged);
    assert!(
        (est.value - want).abs() < 1e-4 * want,
        "{} vs {want}",
        est.value
    );
}

fn small_model(seed: u64) -> SplitModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SplitModel::mlp(
        &[3, 5, 4],
        &[4, 3],
        Activation::Tanh,
        Activation::Tanh,
        &mut rng,
    )
    .unwrap()
}

#[test]
fn identical_samples_have_no_gradient_noise() {
    let data = generate_synthetic(&SyntheticSpec {
        num_classes: 1,
        input_dim: 3,
        samples_per_class: 30,
        spread: 1.0,
        noise: 0.0,
        seed: 1,
    })
    .unwrap();
    let opts = EstimateOptions {
        batch_size: 4,
        clients_per_round: 2,
        curvature_examples: 2,
        ..Default::default()
    };
    let est = estimate_constants(&small_model(2), &data.samples, &opts).unwrap();
    assert!(
        est.constants.sigma2.abs() < 1e-12,
        "{}",
        est.constants.sigma2
    );
    assert!(est.constants.l_smooth >= 0.0);
    est.constants.validate().unwrap();
}

#[test]
fn estimates_on_noisy_data_are_finite_and_positive() {
    let data = generate_synthetic(&SyntheticSpec {
        num_classes: 3,
        input_dim: 3,
        samples_per_class: 30,
        spread: 2.0,
        noise: 1.0,
        seed: 3,
    })
    .unwrap();
    let opts = EstimateOptions {
        batch_size: 4,
        clients_per_round: 2,
        curvature_examples: 3,
        ..Default::default()
    };
    let model = small_model(4);
    let a = estimate_constants(&model, &data.samples, &opts).unwrap();
    let c = a.constants;
    for v in [
        c.sigma2,
        c.l_smooth,
        c.lambda1,
        c.lambda2,
        c.lambda3,
        c.f0_minus_finf,
    ] {
        assert!(v.is_finite() && v > 0.0, "{c:?}");
    }
    assert_eq!(a, estimate_constants(&model, &data.samples, &opts).unwrap());
}

#[test]
fn kappa_trajectory_is_zero_without_compression_loss() {
    let data = generate_synthetic(&SyntheticSpec {
        num_classes: 3,
        input_dim: 3,
        samples_per_class: 20,
        spread: 2.0,
        noise: 1.0,
        seed: 5,
    })
    .unwrap();
    let fed = partition(&data, 3, PartitionMode::Iid, 5).unwrap();
    let model = small_model(6);
    let lossless = TrainingConfig {
        batch_size: 3,
        clients_per_round: 2,
        rounds: 10,
        quantizer: Some(QuantizerConfig::new(4, 1, 12)),
        ..Default::default()
    };
    let out = train(&model, &fed, &lossless).unwrap();
    let k = kappa_trajectory(&out.traces).unwrap();
    assert_eq!(k.max, 0.0);
    assert!(k.series.iter().all(|&v| v == 0.0));

    let lossy = TrainingConfig {
        quantizer: Some(QuantizerConfig::new(2, 1, 2)),
        ..lossless
    };
    let out = train(&model, &fed, &lossy).unwrap();
    let k = kappa_trajectory(&out.traces).unwrap();
    assert!(k.max > 0.0);
    assert!(k.running_max.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*k.running_max.last().unwrap(), k.max);
    assert!(kappa_trajectory(&[]).is_err());

    let opts = EstimateOptions {
        batch_size: 3,
        clients_per_round: 2,
        rounds: 10,
        curvature_examples: 2,
        kappa: k.max,
        ..Default::default()
    };
    let est = estimate_constants(&model, &data.samples, &opts).unwrap();
    let diag = Diagnostics::new(&est, &out.traces);
    assert_eq!(diag.constants.kappa, k.max);
    assert!((diag.bound - (diag.sgd_term + diag.quantization_term)).abs() < 1e-12 * diag.bound);
    let json: serde_json::Value = serde_json::from_str(&diag.to_json().unwrap()).unwrap();
    assert!(json["constants"]["lambda2"].is_number());
}
