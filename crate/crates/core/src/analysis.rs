//! Convergence-bound evaluation and toy-scale estimates of its constants.
//!
//! The bound on `min_t E||grad F(w_t)||^2` after `T` rounds is
//!
//! ```text
//! 4 (F0 - Finf) / sqrt(BST) + 4 L sigma^2 / sqrt(BST)
//!     + (4 sqrt(BS/T) + 2) (Lambda1^2 + (Lambda2 - lambda)^2 Lambda3^2) kappa^2
//! ```
//!
//! `Lambda1 = ||d2h/dz dws||`, `Lambda2 = ||d2h/dz2||` and `Lambda3 = ||du/dwc||`
//! are estimated with matrix-free power iteration on finite-difference
//! products. Rectangular blocks use their spectral norm. `Finf` is taken as 0,
//! the infimum of cross-entropy.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Result};
use crate::nn::{softmax_cross_entropy, stack_samples, DataSample, DenseNetwork, SplitModel};
use crate::tensor::{norm, Matrix};
use crate::trainer::RoundTrace;

pub const DEFAULT_POWER_STEPS: usize = 20;
pub const DEFAULT_FD_STEP: f64 = 1e-5;
const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnalysisConstants {
    pub kappa: f64,
    pub sigma2: f64,
    pub l_smooth: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda: f64,
    pub f0_minus_finf: f64,
    pub batch_size: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
}

impl AnalysisConstants {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.kappa, "kappa"),
            (self.sigma2, "sigma2"),
            (self.l_smooth, "l_smooth"),
            (self.lambda1, "lambda1"),
            (self.lambda2, "lambda2"),
            (self.lambda3, "lambda3"),
            (self.lambda, "lambda"),
            (self.f0_minus_finf, "f0_minus_finf"),
        ] {
            ensure!(v >= 0.0, Domain, "{name} must be non-negative, got {v}");
        }
        ensure!(
            self.batch_size >= 1 && self.clients_per_round >= 1 && self.rounds >= 1,
            Domain,
            "B, S and T must be at least 1"
        );
        Ok(())
    }

    fn bst(&self) -> f64 {
        (self.batch_size * self.clients_per_round) as f64 * self.rounds as f64
    }
}

/// The mini-batch SGD part: `(4 (F0 - Finf) + 4 L sigma^2) / sqrt(BST)`.
pub fn sgd_term(c: &AnalysisConstants) -> f64 {
    (4.0 * c.f0_minus_finf + 4.0 * c.l_smooth * c.sigma2) / c.bst().sqrt()
}

/// The extra error from quantization.
pub fn quantization_term(c: &AnalysisConstants) -> f64 {
    let bs = (c.batch_size * c.clients_per_round) as f64;
    let alpha = (bs / c.rounds as f64).sqrt();
    let gap = c.lambda2 - c.lambda;
    (4.0 * alpha + 2.0)
        * (c.lambda1 * c.lambda1 + gap * gap * c.lambda3 * c.lambda3)
        * c.kappa
        * c.kappa
}

/// Evaluates the bound. Requires `T >= 1` and `B S >= 1`.
pub fn theorem1_bound(c: &AnalysisConstants) -> f64 {
    sgd_term(c) + quantization_term(c)
}

/// The `lambda` minimising the quantization term.
pub fn optimal_lambda(c: &AnalysisConstants) -> f64 {
    c.lambda2
}

/// Outcome of a power iteration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EigenEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Largest-magnitude eigenvalue of a symmetric operator, as `||A v||` for the
/// final unit iterate `v`.
pub fn power_iteration<F>(dim: usize, steps: usize, seed: u64, mut op: F) -> Result<EigenEstimate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if dim == 0 {
        return Ok(EigenEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);

    let mut value = f64::NAN;
    for k in 1..=steps {
        let w = op(&v)?;
        ensure!(
            w.len() == dim,
            Shape,
            "operator returned {} values for a {dim}-vector",
            w.len()
        );
        let n = norm(&w);
        if n == 0.0 {
            return Ok(EigenEstimate {
                value: 0.0,
                converged: true,
                iterations: k,
            });
        }
        let prev = value;
        value = n;
        v = w.into_iter().map(|x| x / n).collect();
        if (value - prev).abs() <= CONVERGENCE_TOL * value {
            return Ok(EigenEstimate {
                value,
                converged: true,
                iterations: k,
            });
        }
    }
    Ok(EigenEstimate {
        value,
        converged: false,
        iterations: steps,
    })
}

/// Largest singular value of `A`, by power iteration on `A^T A`.
pub fn spectral_norm<A, At>(
    in_dim: usize,
    steps: usize,
    seed: u64,
    mut apply: A,
    mut apply_t: At,
) -> Result<EigenEstimate>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
    At: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let est = power_iteration(in_dim, steps, seed, |v| apply_t(&apply(v)?))?;
    Ok(EigenEstimate {
        value: est.value.sqrt(),
        ..est
    })
}

/// Central difference of `f` at `x` along `v`, evaluated on the unit
/// direction and rescaled by `||v||`.
pub fn directional_derivative<F>(mut f: F, x: &[f64], v: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = norm(v);
    if n == 0.0 {
        return Ok(vec![0.0; f(x)?.len()]);
    }
    let shifted = |sign: f64| -> Vec<f64> {
        x.iter()
            .zip(v)
            .map(|(a, b)| a + sign * step * b / n)
            .collect()
    };
    let plus = f(&shifted(1.0))?;
    let minus = f(&shifted(-1.0))?;
    Ok(plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| n * (p - m) / (2.0 * step))
        .collect())
}

/// `||d2h/dz2||` at `z`, given `grad_z(z) = dh/dz`.
pub fn hessian_norm<G>(
    grad_z: G,
    z: &[f64],
    steps: usize,
    step: f64,
    seed: u64,
) -> Result<EigenEstimate>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    power_iteration(z.len(), steps, seed, |v| {
        directional_derivative(&grad_z, z, v, step)
    })
}

/// `||d2h/dz dws||` at `(ws, z)`, given `dh/dz` as a function of `ws` and
/// `dh/dws` as a function of `z`. The transpose product uses symmetry of the
/// mixed partials.
pub fn mixed_hessian_norm<Gz, Gw>(
    grad_z_of_ws: Gz,
    grad_ws_of_z: Gw,
    ws: &[f64],
    z: &[f64],
    steps: usize,
    step: f64,
    seed: u64,
) -> Result<EigenEstimate>
where
    Gz: Fn(&[f64]) -> Result<Vec<f64>>,
    Gw: Fn(&[f64]) -> Result<Vec<f64>>,
{
    spectral_norm(
        ws.len(),
        steps,
        seed,
        |v| directional_derivative(&grad_z_of_ws, ws, v, step),
        |u| directional_derivative(&grad_ws_of_z, z, u, step),
    )
}

/// `||du/dwc||` at `wc`: forward products by finite differences, transpose
/// products by `vjp(y) = (du/dwc)^T y`.
pub fn jacobian_norm<U, V>(
    forward: U,
    vjp: V,
    wc: &[f64],
    steps: usize,
    step: f64,
    seed: u64,
) -> Result<EigenEstimate>
where
    U: Fn(&[f64]) -> Result<Vec<f64>>,
    V: Fn(&[f64]) -> Result<Vec<f64>>,
{
    spectral_norm(
        wc.len(),
        steps,
        seed,
        |v| directional_derivative(&forward, wc, v, step),
        |y| vjp(y),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    /// Mini-batch draws for `sigma^2` and perturbation pairs for `L`.
    pub num_seeds: usize,
    pub batch_size: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub lambda: f64,
    /// Observed `kappa`, usually from [`kappa_trajectory`].
    pub kappa: f64,
    /// Probe examples at which the curvature blocks are evaluated.
    pub curvature_examples: usize,
    pub power_steps: usize,
    pub fd_step: f64,
    /// Norm of the parameter perturbation used for `L`.
    pub pair_radius: f64,
    pub seed: u64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            num_seeds: 8,
            batch_size: 20,
            clients_per_round: 4,
            rounds: 100,
            lambda: 0.0,
            kappa: 0.0,
            curvature_examples: 8,
            power_steps: DEFAULT_POWER_STEPS,
            fd_step: DEFAULT_FD_STEP,
            pair_radius: 1e-2,
            seed: 0,
        }
    }
}

/// Which estimates are trustworthy. Every estimate is a lower bound on the
/// supremum the bound asks for, since it only visits sampled points.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EstimateFlags {
    pub lower_bound: bool,
    pub lambda1_converged: bool,
    pub lambda2_converged: bool,
    pub lambda3_converged: bool,
    /// Samples per mini-batch actually used for `sigma^2`, which is smaller
    /// than `B S` when the probe set is small.
    pub sigma2_batch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConstantEstimates {
    pub constants: AnalysisConstants,
    pub flags: EstimateFlags,
}

fn server_grads(server: &DenseNetwork, z: &[f64], label: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let input = Matrix::from_col_major(z.len(), 1, z.to_vec())?;
    let (logits, cache) = server.forward(&input)?;
    let (_, head) = softmax_cross_entropy(&logits, &[label])?;
    let (pg, ig) = server.backward(&cache, &head)?;
    Ok((pg.flat(), ig.into_vec()))
}

fn with_params(net: &DenseNetwork, params: &[f64]) -> Result<DenseNetwork> {
    let mut out = net.clone();
    out.set_params_flat(params)?;
    Ok(out)
}

fn full_gradient(net: &DenseNetwork, inputs: &Matrix, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (loss, pg, _) = net.loss_and_grad(inputs, labels)?;
    Ok((loss, pg.flat()))
}

/// Estimates the bound's constants at the model's current parameters.
pub fn estimate_constants(
    model: &SplitModel,
    probe: &[DataSample],
    opts: &EstimateOptions,
) -> Result<ConstantEstimates> {
    ensure!(!probe.is_empty(), Contract, "probe set is empty");
    ensure!(opts.num_seeds >= 1, Config, "num_seeds must be at least 1");
    ensure!(opts.fd_step > 0.0, Config, "fd_step must be positive");
    let merged = model.merged();
    let (inputs, labels) = stack_samples(probe.iter())?;
    let (f0, grad_full) = full_gradient(&merged, &inputs, &labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // sigma^2 = m * E||g_m - grad F||^2
    let m = (opts.batch_size * opts.clients_per_round).clamp(1, probe.len());
    let mut var = 0.0;
    for _ in 0..opts.num_seeds {
        let picks = index::sample(&mut rng, probe.len(), m).into_vec();
        let (x, y) = stack_samples(picks.iter().map(|&i| &probe[i]))?;
        let (_, g) = full_gradient(&merged, &x, &y)?;
        var += g
            .iter()
            .zip(&grad_full)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    let sigma2 = m as f64 * var / opts.num_seeds as f64;

    // L from random perturbation pairs around w
    let w = merged.params_flat();
    let mut l_smooth: f64 = 0.0;
    for _ in 0..opts.num_seeds {
        let dir: Vec<f64> = (0..w.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let n = norm(&dir);
        let v: Vec<f64> = w
            .iter()
            .zip(&dir)
            .map(|(a, d)| a + opts.pair_radius * d / n)
            .collect();
        let (_, gv) = full_gradient(&with_params(&merged, &v)?, &inputs, &labels)?;
        let diff: Vec<f64> = gv.iter().zip(&grad_full).map(|(a, b)| a - b).collect();
        l_smooth = l_smooth.max(norm(&diff) / opts.pair_radius);
    }

    // curvature blocks, maximised over a few probe examples
    let count = opts.curvature_examples.clamp(1, probe.len());
    let examples = index::sample(&mut rng, probe.len(), count).into_vec();
    let ws = model.server.params_flat();
    let wc = model.client.params_flat();
    let (mut l1, mut l2, mut l3) = (0.0_f64, 0.0_f64, 0.0_f64);
    let (mut c1, mut c2, mut c3) = (true, true, true);
    for (k, &i) in examples.iter().enumerate() {
        let sample = &probe[i];
        let x = Matrix::from_col_major(sample.features.len(), 1, sample.features.clone())?;
        let z = model.client.predict(&x)?.into_vec();
        let seed = opts.seed.wrapping_add(k as u64);

        let h = hessian_norm(
            |zz| Ok(server_grads(&model.server, zz, sample.label)?.1),
            &z,
            opts.power_steps,
            opts.fd_step,
            seed,
        )?;
        l2 = l2.max(h.value);
        c2 &= h.converged;

        let mixed = mixed_hessian_norm(
            |p| Ok(server_grads(&with_params(&model.server, p)?, &z, sample.label)?.1),
            |zz| Ok(server_grads(&model.server, zz, sample.label)?.0),
            &ws,
            &z,
            opts.power_steps,
            opts.fd_step,
            seed,
        )?;
        l1 = l1.max(mixed.value);
        c1 &= mixed.converged;

        let (_, cache) = model.client.forward(&x)?;
        let jac = jacobian_norm(
            |p| {
                with_params(&model.client, p)?
                    .predict(&x)
                    .map(Matrix::into_vec)
            },
            |y| {
                let up = Matrix::from_col_major(y.len(), 1, y.to_vec())?;
                Ok(model.client.backward(&cache, &up)?.0.flat())
            },
            &wc,
            opts.power_steps,
            opts.fd_step,
            seed,
        )?;
        l3 = l3.max(jac.value);
        c3 &= jac.converged;
    }

    let constants = AnalysisConstants {
        kappa: opts.kappa,
        sigma2,
        l_smooth,
        lambda1: l1,
        lambda2: l2,
        lambda3: l3,
        lambda: opts.lambda,
        f0_minus_finf: f0,
        batch_size: opts.batch_size,
        clients_per_round: opts.clients_per_round,
        rounds: opts.rounds,
    };
    for (ok, name) in [(c1, "Lambda1"), (c2, "Lambda2"), (c3, "Lambda3")] {
        if !ok {
            log::warn!(
                "{name} power iteration did not converge in {} steps",
                opts.power_steps
            );
        }
    }
    Ok(ConstantEstimates {
        constants,
        flags: EstimateFlags {
            lower_bound: true,
            lambda1_converged: c1,
            lambda2_converged: c2,
            lambda3_converged: c3,
            sigma2_batch: m,
        },
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct KappaTrajectory {
    pub max: f64,
    pub series: Vec<f64>,
    pub running_max: Vec<f64>,
}

/// Per-round `kappa_max` and its running maximum.
pub fn kappa_trajectory(traces: &[RoundTrace]) -> Result<KappaTrajectory> {
    ensure!(!traces.is_empty(), Contract, "no rounds to summarise");
    let series: Vec<f64> = traces.iter().map(|t| t.kappa_max).collect();
    let mut running_max = Vec::with_capacity(series.len());
    let mut max: f64 = 0.0;
    for &k in &series {
        max = max.max(k);
        running_max.push(max);
    }
    Ok(KappaTrajectory {
        max,
        series,
        running_max,
    })
}

/// Everything written to `diagnostics.json`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Diagnostics {
    pub constants: AnalysisConstants,
    pub bound: f64,
    pub sgd_term: f64,
    pub quantization_term: f64,
    pub optimal_lambda: f64,
    pub flags: EstimateFlags,
    /// Smallest observed `||grad F(w_t)||^2`, for comparison with the bound.
    pub min_grad_norm_sq: Option<f64>,
}

impl Diagnostics {
    pub fn new(estimates: &ConstantEstimates, traces: &[RoundTrace]) -> Self {
        let c = &estimates.constants;
        let min_grad_norm_sq = traces
            .iter()
            .map(|t| t.grad_norm_est)
            .filter(|g| g.is_finite())
            .reduce(f64::min);
        Self {
            constants: *c,
            bound: theorem1_bound(c),
            sgd_term: sgd_term(c),
            quantization_term: quantization_term(c),
            optimal_lambda: optimal_lambda(c),
            flags: estimates.flags,
            min_grad_norm_sq,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones() -> AnalysisConstants {
        AnalysisConstants {
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
        }
    }

    #[test]
    fn all_ones_bound_is_twenty() {
        assert_eq!(theorem1_bound(&ones()), 20.0);
    }

    #[test]
    fn quantization_term_vanishes_at_lambda2_without_lambda1() {
        let c = AnalysisConstants {
            lambda1: 0.0,
            lambda2: 0.7,
            lambda: 0.7,
            ..ones()
        };
        assert_eq!(quantization_term(&c), 0.0);
    }

    #[test]
    fn identity_hessian() {
        let est = hessian_norm(|z| Ok(z.to_vec()), &[0.3, -1.0, 2.0], 20, 1e-5, 1).unwrap();
        assert!((est.value - 1.0).abs() < 1e-9);
        assert!(est.converged);
    }

    #[test]
    fn zero_operator() {
        let est = power_iteration(4, 20, 0, |v| Ok(vec![0.0; v.len()])).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(est.converged);
    }

    #[test]
    fn slow_power_iteration_is_flagged() {
        let est = power_iteration(2, 3, 5, |v| Ok(vec![v[0], 0.5 * v[1]])).unwrap();
        assert!(!est.converged);
        assert_eq!(est.iterations, 3);
        assert!(est.value <= 1.0 + 1e-12);
    }

    #[test]
    fn kappa_examples() {
        let trace = |k: f64| RoundTrace {
            round: 0,
            loss: 0.0,
            kappa: vec![k],
            kappa_max: k,
            grad_norm_est: 0.0,
            ledger: vec![],
        };
        let t = kappa_trajectory(&[trace(1.0), trace(3.0), trace(2.0)]).unwrap();
        assert_eq!(t.max, 3.0);
        assert_eq!(t.running_max, vec![1.0, 3.0, 3.0]);
        assert_eq!(kappa_trajectory(&[trace(0.0)]).unwrap().max, 0.0);
        assert!(kappa_trajectory(&[]).is_err());
    }
}
