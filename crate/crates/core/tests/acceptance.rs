//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use fedlite::analysis::{
    optimal_lambda, quantization_term, sgd_term, theorem1_bound, AnalysisConstants,
};
use fedlite::federation::{generate_synthetic, partition, PartitionMode, SyntheticSpec};
use fedlite::harness::{
    run_single, tradeoff_table, ConfigFile, ExperimentSpec, QuantizerFamily, TradeoffRow,
};
use fedlite::nn::{stack_samples, Activation, DenseNetwork, SplitModel};
use fedlite::protocol::{ActivationPayload, UplinkActivationMsg};
use fedlite::quantizer::kmeans::{kmeans, DEFAULT_MAX_ITERS};
use fedlite::quantizer::{
    compression_ratio, encode, message_bits, raw_activation_bits, wire, QuantizerConfig,
};
use fedlite::trainer::{
    client_backward, round_splitfed, server_step, train, RoundSampler, TrainingConfig,
};
use fedlite::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($fmt:tt)*) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)*));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn compression_arithmetic() -> Outcome {
    let cfg = QuantizerConfig {
        phi: 64,
        ..QuantizerConfig::new(1152, 1, 2)
    };
    let bits = message_bits(&cfg, 9216, 20);
    check!(bits.ideal == 24_064.0, "ideal bits {} != 24064", bits.ideal);
    check!(
        raw_activation_bits(64, 9216, 20) == 11_796_480,
        "raw bits differ"
    );
    let ratio = compression_ratio(64, 9216, 20, bits.ideal);
    check!(
        ratio == 11_796_480.0 / 24_064.0,
        "ratio {ratio} is not 11796480 / 24064"
    );
    check!(
        (ratio - 490.0).abs() <= 1.0,
        "ratio {ratio} is not within 1 of 490"
    );
    Ok(format!("ideal bits {}, ratio {ratio:.1}", bits.ideal))
}

fn split_equivalence() -> Outcome {
    let data = ok(generate_synthetic(&SyntheticSpec {
        num_classes: 4,
        input_dim: 8,
        samples_per_class: 30,
        spread: 3.0,
        noise: 1.0,
        seed: 11,
    }))?;
    let fed = ok(partition(&data, 6, PartitionMode::Iid, 12))?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let start = ok(SplitModel::mlp(
        &[8, 16, 12],
        &[12, 16, 4],
        Activation::Tanh,
        Activation::Relu,
        &mut rng,
    ))?;
    let cfg = TrainingConfig {
        eta_client: 0.1,
        eta_server: 0.1,
        batch_size: 5,
        clients_per_round: 3,
        rounds: 100,
        ..Default::default()
    };
    let out = ok(train(&start, &fed, &cfg))?;

    // monolithic SGD on the pooled B |S| batch drawn by the same sampler
    let mut net = start.merged();
    let mut sampler = RoundSampler::new(cfg.seed);
    for _ in 0..cfg.rounds {
        let batches = ok(sampler.sample(&fed, cfg.clients_per_round, cfg.batch_size))?;
        let cols: Vec<Vec<f64>> = batches
            .iter()
            .flat_map(|b| b.inputs.columns().map(|c| c.to_vec()))
            .collect();
        let labels: Vec<usize> = batches
            .iter()
            .flat_map(|b| b.labels.iter().copied())
            .collect();
        let (_, g, _) = ok(net.loss_and_grad(&ok(Matrix::from_columns(&cols))?, &labels))?;
        ok(net.apply_gradient(&g, cfg.eta_client))?;
    }
    let dev = out
        .model
        .merged()
        .params_flat()
        .iter()
        .zip(net.params_flat())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check!(dev <= 1e-9, "max deviation {dev:e} > 1e-9");
    Ok(format!("100 rounds, max deviation {dev:.1e}"))
}

fn gradient_correction_identity() -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..12u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let input = rng.random_range(3..7);
        let cut = [4usize, 6, 8][rng.random_range(0..3)];
        let classes = rng.random_range(2..5);
        let batch = rng.random_range(3..9);
        let lambda = rng.random_range(0.1..2.0);
        let model = ok(SplitModel::mlp(
            &[input, 7, cut],
            &[cut, 6, classes],
            Activation::Tanh,
            Activation::Tanh,
            &mut rng,
        ))?;
        let cols: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..input).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let x = ok(Matrix::from_columns(&cols))?;
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();

        let (z, cache) = ok(model.client.forward(&x))?;
        let msg = ok(encode(&z, &QuantizerConfig::new(2, 1, 2), case))?;
        let up = UplinkActivationMsg {
            payload: ActivationPayload::Quantized(msg),
            labels,
        };
        let step = ok(server_step(&model.server, &up))?;
        let grad = ok(client_backward(
            &model.client,
            &cache,
            &z,
            &step.reconstructed,
            &step.downlink,
            lambda,
        ))?
        .flat();

        // z^ = z - dh/dz~ / 2 and z~ are constants
        let z_hat: Vec<f64> = z
            .as_slice()
            .iter()
            .zip(step.downlink.grad.as_slice())
            .map(|(a, g)| a - g / 2.0)
            .collect();
        let z_tilde = step.reconstructed.as_slice().to_vec();
        let surrogate = |net: &DenseNetwork| -> Result<f64, String> {
            let zz = ok(net.predict(&x))?;
            let mut s = 0.0;
            for ((&zi, &hi), &ti) in zz.as_slice().iter().zip(&z_hat).zip(&z_tilde) {
                s += (zi - hi).powi(2) + 0.5 * lambda * (zi - ti).powi(2);
            }
            Ok(s / batch as f64)
        };
        let w = model.client.params_flat();
        let h = 1e-6;
        let mut fd = Vec::with_capacity(w.len());
        for i in 0..w.len() {
            let mut probe = model.client.clone();
            let mut wp = w.clone();
            wp[i] += h;
            ok(probe.set_params_flat(&wp))?;
            let plus = surrogate(&probe)?;
            wp[i] -= 2.0 * h;
            ok(probe.set_params_flat(&wp))?;
            fd.push((plus - surrogate(&probe)?) / (2.0 * h));
        }
        let diff: f64 = fd
            .iter()
            .zip(&grad)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let rel = diff / scale.max(f64::MIN_POSITIVE);
        check!(rel <= 1e-4, "case {case}: relative error {rel:e}");
        worst = worst.max(rel);
    }
    Ok(format!("12 cases, worst relative error {worst:.1e}"))
}

fn cut_activations() -> Result<Matrix, String> {
    let data = ok(generate_synthetic(&SyntheticSpec {
        num_classes: 4,
        input_dim: 16,
        samples_per_class: 8,
        spread: 3.0,
        noise: 1.0,
        seed: 1,
    }))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = ok(SplitModel::mlp(
        &[16, 32, 64],
        &[64, 4],
        Activation::Tanh,
        Activation::Relu,
        &mut rng,
    ))?;
    let (x, _) = ok(stack_samples(data.samples.iter()))?;
    ok(model.client.predict(&x))
}

fn within(a: &TradeoffRow, reference: &TradeoffRow) -> bool {
    (a.mean_error - reference.mean_error).abs() <= 0.1 * reference.mean_error
}

fn quantizer_dominance() -> Outcome {
    let z = cut_activations()?;
    check!(z.shape() == (64, 32), "activation batch is {:?}", z.shape());
    let mut grid: Vec<QuantizerConfig> = (1..=32).map(|l| QuantizerConfig::new(1, 1, l)).collect();
    for q in [2, 4, 8, 16, 32, 64] {
        for l in [2, 3, 4, 6, 8, 16] {
            grid.push(QuantizerConfig::new(q, q, l));
            grid.push(QuantizerConfig::new(q, 1, l));
        }
    }
    let rows = ok(tradeoff_table(&grid, &z, 64, 0))?;
    let family = |f: QuantizerFamily| rows.iter().filter(move |r| r.family == f);
    let mut best: Option<(f64, String)> = None;
    for v in family(QuantizerFamily::VanillaPq) {
        let g = family(QuantizerFamily::GroupedPq)
            .filter(|g| within(g, v))
            .max_by(|a, b| a.ideal_ratio.total_cmp(&b.ideal_ratio));
        let k = family(QuantizerFamily::KMeans)
            .filter(|k| within(k, v))
            .max_by(|a, b| a.ideal_ratio.total_cmp(&b.ideal_ratio));
        if let (Some(g), Some(k)) = (g, k) {
            let (gv, vk) = (g.ideal_ratio / v.ideal_ratio, v.ideal_ratio / k.ideal_ratio);
            if gv >= 5.0 && vk >= 2.0 {
                let margin = (gv / 5.0).min(vk / 2.0);
                let text = format!(
                    "error {:.3}: grouped q={} L={} ratio {:.1}, vanilla q={} L={} ratio {:.2}, k-means L={} ratio {:.2}",
                    v.mean_error,
                    g.config.subvectors,
                    g.config.centroids,
                    g.ideal_ratio,
                    v.config.subvectors,
                    v.config.centroids,
                    v.ideal_ratio,
                    k.config.centroids,
                    k.ideal_ratio
                );
                if best.as_ref().is_none_or(|(m, _)| margin > *m) {
                    best = Some((margin, text));
                }
            }
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| "no matched-error triple shows the 5x / 2x ordering".into())
}

fn naive_lloyd(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> f64 {
    let n = points.len();
    let mut picks: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        picks.swap(i, j);
    }
    let mut centres: Vec<[f64; 2]> = picks[..k].iter().map(|&i| points[i]).collect();
    let d2 = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    for _ in 0..100 {
        let labels: Vec<usize> = points
            .iter()
            .map(|&p| {
                (0..k)
                    .min_by(|&a, &b| d2(p, centres[a]).total_cmp(&d2(p, centres[b])))
                    .unwrap()
            })
            .collect();
        let mut next = centres.clone();
        for (c, centre) in next.iter_mut().enumerate() {
            let members: Vec<[f64; 2]> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| *p)
                .collect();
            if !members.is_empty() {
                let m = members.len() as f64;
                *centre = [
                    members.iter().map(|p| p[0]).sum::<f64>() / m,
                    members.iter().map(|p| p[1]).sum::<f64>() / m,
                ];
            }
        }
        if next == centres {
            break;
        }
        centres = next;
    }
    points
        .iter()
        .map(|&p| {
            centres
                .iter()
                .map(|&c| d2(p, c))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Best two-way split by exhaustive labelling, as a set of point indices.
fn best_split(points: &[[f64; 2]]) -> (f64, BTreeSet<usize>) {
    let n = points.len();
    let cost = |ids: &[usize]| -> f64 {
        if ids.is_empty() {
            return 0.0;
        }
        let m = ids.len() as f64;
        let c = [
            ids.iter().map(|&i| points[i][0]).sum::<f64>() / m,
            ids.iter().map(|&i| points[i][1]).sum::<f64>() / m,
        ];
        ids.iter()
            .map(|&i| (points[i][0] - c[0]).powi(2) + (points[i][1] - c[1]).powi(2))
            .sum()
    };
    let mut best = (f64::INFINITY, BTreeSet::new());
    for mask in 0u32..(1 << (n - 1)) {
        let a: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let b: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 0).collect();
        let c = cost(&a) + cost(&b);
        if c < best.0 {
            best = (c, b.into_iter().collect());
        }
    }
    best
}

fn kmeans_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut iterations = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..40);
        let dim = rng.random_range(1..5);
        let k = rng.random_range(1..8);
        let pool = rng.random_range(1..12);
        let distinct: Vec<Vec<f64>> = (0..pool)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| distinct[rng.random_range(0..pool)].clone())
            .collect();
        let pts = ok(Matrix::from_columns(&cols))?;
        let res = ok(kmeans(&pts, k, DEFAULT_MAX_ITERS, &mut rng))?;
        check!(
            res.history.windows(2).all(|w| w[1] <= w[0]),
            "instance {case}: inertia rose: {:?}",
            res.history
        );
        iterations += res.history.len();
    }
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let mut points = Vec::new();
        for centre in [[-6.0, 0.0], [6.0, 1.0]] {
            for _ in 0..7 {
                points.push([
                    centre[0] + rng.random_range(-1.0..1.0),
                    centre[1] + rng.random_range(-1.0..1.0),
                ]);
            }
        }
        let oracle = (0..1000)
            .map(|_| naive_lloyd(&points, 2, &mut rng))
            .fold(f64::INFINITY, f64::min);
        let (exhaustive, split) = best_split(&points);
        check!(
            (oracle - exhaustive).abs() <= 1e-9 * exhaustive,
            "restart oracle {oracle} misses optimum {exhaustive}"
        );
        let pts = ok(Matrix::from_columns(
            &points.iter().map(|p| p.to_vec()).collect::<Vec<_>>(),
        ))?;
        let res = ok(kmeans(&pts, 2, DEFAULT_MAX_ITERS, &mut rng))?;
        let last = res.assignments[points.len() - 1];
        let ours: BTreeSet<usize> = (0..points.len())
            .filter(|&i| res.assignments[i] == last)
            .collect();
        check!(
            ours == split,
            "seed {seed}: partition differs from the optimum"
        );
        check!(
            (res.inertia - oracle).abs() <= 1e-12 * oracle,
            "seed {seed}: inertia {} vs oracle {oracle}",
            res.inertia
        );
    }
    Ok(format!(
        "1000 fuzzed instances ({iterations} monotone steps), 10 two-blob optima matched"
    ))
}

fn wire_format() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..100u64 {
        let d = [1usize, 2, 6, 8, 12, 16, 24, 64][rng.random_range(0..8)];
        let qs: Vec<usize> = (1..=d).filter(|q| d.is_multiple_of(*q)).collect();
        let q = qs[rng.random_range(0..qs.len())];
        let rs: Vec<usize> = (1..=q).filter(|r| q.is_multiple_of(*r)).collect();
        let r = rs[rng.random_range(0..rs.len())];
        let l = rng.random_range(1..40);
        let b = rng.random_range(1..24);
        let cfg = QuantizerConfig::new(q, r, l);
        let z = ok(Matrix::from_col_major(
            d,
            b,
            (0..d * b).map(|_| rng.sample(StandardNormal)).collect(),
        ))?;
        let msg = ok(encode(&z, &cfg, case))?;
        let (bytes, layout) = ok(wire::serialize(&msg))?;
        let back = ok(wire::deserialize(&bytes))?;
        check!(back == msg, "case {case}: round trip changed the message");
        let bit_identical = back
            .codebook
            .groups
            .iter()
            .zip(&msg.codebook.groups)
            .all(|(a, b)| {
                a.as_slice()
                    .iter()
                    .zip(b.as_slice())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            });
        check!(bit_identical, "case {case}: codebook bits changed");
        check!(
            ok(wire::serialize(&back))?.0 == bytes,
            "case {case}: re-serialization differs"
        );
        let want = message_bits(&cfg, d, b).wire;
        check!(
            layout.payload_bits() == message_bits(&cfg, d, b).payload,
            "case {case}: payload bits differ"
        );
        check!(
            layout.total_bits() - layout.label_bits == want,
            "case {case}: measured bits {} vs {want}",
            layout.total_bits()
        );
    }
    Ok("100 configs round-trip, measured bits match".into())
}

fn correction_config(extra: &str, seed: u64) -> Result<ExperimentSpec, String> {
    let text = format!(
        "classes = 8\ninput_dim = 16\nsamples_per_class = 100\nnoise = 1.0\nclients = 10\npartition = \"shard:2\"\n\
         cut_dim = 16\nsubvectors = 4\ngroups = 1\ncentroids = 2\nrounds = 300\neval_every = 1000\n\
         diagnostics = false\nseed = {seed}\ndata_seed = {}\n{extra}",
        100 + seed
    );
    ok(ExperimentSpec::from_config(&ok(ConfigFile::parse(
        &text,
        std::iter::empty::<(String, String)>(),
    ))?))
}

fn gradient_correction_benefit() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let settings: Vec<(String, &str)> = vec![
        ("baseline".into(), "quantize = false"),
        ("lambda 0".into(), "quantize = true\nlambda = 0.0"),
        ("lambda 0.1".into(), "quantize = true\nlambda = 0.1"),
        ("lambda 0.3".into(), "quantize = true\nlambda = 0.3"),
        ("lambda 1".into(), "quantize = true\nlambda = 1.0"),
    ];
    let mut jobs = Vec::new();
    for (i, (_, extra)) in settings.iter().enumerate() {
        for seed in 0..5u64 {
            jobs.push((i, seed, correction_config(extra, seed)?));
        }
    }
    let results: Vec<Result<(usize, f64), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(i, seed, spec)| {
                let out = dir.path().join(format!("{i}_{seed}"));
                s.spawn(move || ok(run_single(spec, &out)).map(|r| (*i, r.final_accuracy)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run panicked"))
            .collect()
    });
    let mut means = vec![0.0; settings.len()];
    for r in results {
        let (i, acc) = r?;
        means[i] += acc / 5.0;
    }
    let (baseline, plain) = (means[0], means[1]);
    let best = means[2..].iter().cloned().fold(f64::MIN, f64::max);
    let text = settings
        .iter()
        .zip(&means)
        .map(|((n, _), m)| format!("{n} {m:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    check!(plain < baseline, "lambda 0 shows no degradation: {text}");
    check!(best >= plain, "best lambda > 0 is below lambda 0: {text}");
    Ok(text)
}

fn bound_evaluator() -> Outcome {
    let ones = AnalysisConstants {
        kappa: 1.0,
        sigma2: 1.0,
        l_smooth: 1.0,
        lambda1: 1.0,
        lambda2: 1.0,
        lambda3: 1.0,
        lambda: 0.0,
        f0_minus_finf: 1.0,
        batch_size: 1,
        clients_per_round: 1,
        rounds: 1,
    };
    check!(
        theorem1_bound(&ones) == 20.0,
        "all-ones bound {} != 20",
        theorem1_bound(&ones)
    );
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let c = AnalysisConstants {
            kappa: rng.random_range(0.0..3.0),
            sigma2: rng.random_range(0.0..3.0),
            l_smooth: rng.random_range(0.0..3.0),
            lambda1: rng.random_range(0.0..3.0),
            lambda2: rng.random_range(0.0..3.0),
            lambda3: rng.random_range(0.1..3.0),
            lambda: rng.random_range(0.0..3.0),
            f0_minus_finf: rng.random_range(0.0..3.0),
            batch_size: rng.random_range(1..64),
            clients_per_round: rng.random_range(1..16),
            rounds: rng.random_range(1..10_000),
        };
        let zero = AnalysisConstants { kappa: 0.0, ..c };
        let bst = (c.batch_size * c.clients_per_round * c.rounds) as f64;
        let sgd = (4.0 * c.f0_minus_finf + 4.0 * c.l_smooth * c.sigma2) / bst.sqrt();
        check!(
            theorem1_bound(&zero) == sgd,
            "kappa = 0 bound {} != {sgd}",
            theorem1_bound(&zero)
        );
        check!(sgd_term(&c) == sgd, "sgd term differs");
        if c.kappa < 0.1 {
            continue;
        }
        // vertex of the parabola through three samples
        let f = |lambda: f64| quantization_term(&AnalysisConstants { lambda, ..c });
        let (y0, y1, y2) = (f(0.0), f(1.0), f(2.0));
        let a = (y2 - 2.0 * y1 + y0) / 2.0;
        let b = y1 - y0 - a;
        let vertex = -b / (2.0 * a);
        let err = (vertex - c.lambda2)
            .abs()
            .max((optimal_lambda(&c) - c.lambda2).abs());
        check!(err <= 1e-9, "vertex {vertex} vs lambda2 {}", c.lambda2);
        worst = worst.max(err);
    }
    Ok(format!(
        "all-ones bound 20, kappa = 0 exact, vertex error {worst:.1e}"
    ))
}

fn ledger() -> Outcome {
    let data = ok(generate_synthetic(&SyntheticSpec {
        num_classes: 3,
        input_dim: 6,
        samples_per_class: 20,
        spread: 2.0,
        noise: 1.0,
        seed: 9,
    }))?;
    let fed = ok(partition(&data, 5, PartitionMode::Iid, 9))?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let model = ok(SplitModel::mlp(
        &[6, 9, 7],
        &[7, 3],
        Activation::Tanh,
        Activation::Relu,
        &mut rng,
    ))?;
    let cfg = TrainingConfig {
        batch_size: 4,
        clients_per_round: 3,
        rounds: 1,
        ..Default::default()
    };
    let batches = ok(RoundSampler::new(0).sample(&fed, 3, 4))?;
    let round = ok(round_splitfed(&model, &batches, &cfg))?;
    let wc = model.client.parameter_count() as u64;
    let want = 64 * (wc + 4 * 7);
    check!(
        round.ledger_delta.len() == 3,
        "{} records for 3 clients",
        round.ledger_delta.len()
    );
    for r in &round.ledger_delta {
        check!(
            r.uplink_bits() == want,
            "client {} uplink {} != {want}",
            r.client,
            r.uplink_bits()
        );
    }
    let out = ok(train(&model, &fed, &TrainingConfig { rounds: 10, ..cfg }))?;
    let totals = out.ledger.totals();
    let recs = out.ledger.records();
    let sum = |f: fn(&fedlite::protocol::LedgerRecord) -> u64| recs.iter().map(f).sum::<u64>();
    check!(
        totals.uplink_act_bits == sum(|r| r.uplink_act_bits),
        "activation totals not additive"
    );
    check!(
        totals.uplink_sync_bits == sum(|r| r.uplink_sync_bits),
        "sync totals not additive"
    );
    check!(
        totals.downlink_bits == sum(|r| r.downlink_bits),
        "downlink totals not additive"
    );
    check!(
        totals.uplink_bits() == 30 * want,
        "10 rounds total {} != {}",
        totals.uplink_bits(),
        30 * want
    );
    Ok(format!(
        "{want} uplink bits per client (|wc| = {wc}, B d = 28), totals additive"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("compression arithmetic", compression_arithmetic),
        ("split/monolithic equivalence", split_equivalence),
        ("gradient-correction identity", gradient_correction_identity),
        ("quantizer dominance", quantizer_dominance),
        ("k-means soundness", kmeans_soundness),
        ("wire format", wire_format),
        ("gradient-correction benefit", gradient_correction_benefit),
        ("bound evaluator", bound_evaluator),
        ("communication ledger", ledger),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name} ({secs:.2}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name} ({secs:.2}s): {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
