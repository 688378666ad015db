//! RO-TS training: a compositional min-max over network weights and
//! per-sample perturbations,
//!
//!   min_w max_a (1/n) Σ_i [ ℓ(f(x_i + a_i; w), y_i) + λ ln k_GAK(x_i, x_i + a_i) ],
//!
//! solved by alternating stochastic steps. The GAK term is estimated from
//! sampled alignment subsets; a per-sample moving average ω_i tracks the
//! sampled kernel mass so the dual gradient's 1/k factor has a stable
//! stand-in.
//!
//! RNG discipline: minibatch draws come from the shared `train/minibatch`
//! stream (the plain-SGD trainer uses the same stream and draw helper, so
//! λ = 0, γ = 0 degenerates to it bit-for-bit), alignment subsets from
//! `rots/align`, and the ω warm start from `rots/warm-start` — alignment
//! randomness can never shift a minibatch draw.

use crate::align::{
    gak_sampled, grad_path_cost, path_cost, AlignmentSet, GakParams, Norm,
    estimate_nu, gak_exact, sample_alignments,
};
use crate::data::Dataset;
use crate::error::CoreError;
use crate::net::{loss_and_grads, sgd_step, Model};
use crate::rng::{self, streams};
use crate::trace::{SolveTrace, TraceRow};
use crate::Result;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// GAK bandwidth: fixed, or estimated from the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuSpec {
    Fixed(f64),
    Auto,
}

/// Sakoe-Chiba band for alignment draws and kernel evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSpec {
    /// `|i - j| < ceil(T/2)` — the default.
    Half,
    /// No band.
    Full,
    /// `|i - j| < width`.
    Fixed(usize),
}

impl BandSpec {
    pub fn resolve(&self, t: usize) -> Option<f64> {
        match *self {
            BandSpec::Half => Some(((t + 1) / 2).max(1) as f64),
            BandSpec::Full => None,
            BandSpec::Fixed(w) => Some(w as f64),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotsHyper {
    /// Regularizer weight λ. Zero is allowed and reduces the trainer to its
    /// unregularized core (the dual step becomes pure loss ascent).
    pub lambda: f64,
    pub nu: NuSpec,
    /// Moving-average weight β ∈ (0, 1].
    pub beta: f64,
    /// Primal (descent) step size.
    pub eta: f64,
    /// Dual (ascent) step size. Zero freezes the perturbations.
    pub gamma: f64,
    /// Minibatch size.
    pub s: usize,
    /// Iteration count.
    pub k: usize,
    /// Alignments drawn per sample per iteration.
    pub align_samples: usize,
    pub band: BandSpec,
    pub p: Norm,
    pub seed: u64,
    /// Initialize each ω_i from a sampled kernel evaluation at a_i = 0
    /// instead of the cold ω_i = 0.
    pub warm_start: bool,
}

impl Default for RotsHyper {
    fn default() -> Self {
        RotsHyper {
            lambda: 1e-2,
            nu: NuSpec::Auto,
            beta: 0.5,
            eta: 0.01,
            gamma: 0.01,
            s: 16,
            k: 500,
            align_samples: 32,
            band: BandSpec::Half,
            p: Norm::L2,
            seed: 0,
            warm_start: true,
        }
    }
}

impl RotsHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(CoreError::Arg("lambda must be finite and >= 0".into()));
        }
        if let NuSpec::Fixed(v) = self.nu {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CoreError::Arg("nu must be finite and > 0".into()));
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(CoreError::Arg("beta must lie in (0, 1]".into()));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(CoreError::Arg("eta must be finite and > 0".into()));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(CoreError::Arg("gamma must be finite and >= 0".into()));
        }
        if self.s == 0 || self.k == 0 || self.align_samples == 0 {
            return Err(CoreError::Arg(
                "s, k and align_samples must be >= 1".into(),
            ));
        }
        if let BandSpec::Fixed(w) = self.band {
            if w == 0 {
                return Err(CoreError::Arg("band width must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// The bandwidth as a number; errors when still `Auto` (callers that
    /// need a value must resolve against a dataset first).
    pub fn nu_value(&self) -> Result<f64> {
        match self.nu {
            NuSpec::Fixed(v) => Ok(v),
            NuSpec::Auto => Err(CoreError::State(
                "nu is 'auto'; resolve it against a dataset before gradient calls".into(),
            )),
        }
    }

    /// Replace `Auto` with an estimate from the dataset (deterministic per
    /// seed); fixed values pass through unchanged.
    pub fn resolve(&self, ds: &Dataset) -> Result<RotsHyper> {
        let mut out = self.clone();
        if let NuSpec::Auto = self.nu {
            let mut r = rng::stream(self.seed, streams::NU);
            out.nu = NuSpec::Fixed(estimate_nu(ds, self.p, &mut r)?);
        }
        Ok(out)
    }

    pub fn gak_params(&self, t: usize) -> Result<GakParams> {
        GakParams::new(self.nu_value()?, self.p)?.with_band(self.band.resolve(t))
    }
}

/// Per-sample perturbations and kernel moving averages.
#[derive(Debug, Clone)]
pub struct PerturbationState {
    /// One `C x T` perturbation per training sample.
    pub a: Vec<Array2<f64>>,
    /// Sampled-kernel moving average per training sample.
    pub omega: Vec<f64>,
}

impl PerturbationState {
    pub fn zeros(ds: &Dataset) -> Self {
        PerturbationState {
            a: ds
                .samples
                .iter()
                .map(|s| Array2::zeros(s.values.dim()))
                .collect(),
            omega: vec![0.0; ds.n()],
        }
    }

    pub fn check_shapes(&self, ds: &Dataset) -> Result<()> {
        if self.a.len() != ds.n() || self.omega.len() != ds.n() {
            return Err(CoreError::Shape(format!(
                "perturbation state holds {} blocks for {} samples",
                self.a.len(),
                ds.n()
            )));
        }
        for (i, (a, s)) in self.a.iter().zip(&ds.samples).enumerate() {
            if a.dim() != s.values.dim() {
                return Err(CoreError::Shape(format!(
                    "perturbation {i} has shape {:?}, sample has {:?}",
                    a.dim(),
                    s.values.dim()
                )));
            }
        }
        Ok(())
    }
}

/// Initialize each ω_i from one sampled kernel evaluation at a_i = 0, on its
/// own RNG stream. All resulting ω_i are positive, so the 1/ω factor in the
/// dual gradient is well-defined from the first iteration.
pub fn warm_start_omega(
    ds: &Dataset,
    pert: &PerturbationState,
    hyper: &RotsHyper,
) -> Result<PerturbationState> {
    pert.check_shapes(ds)?;
    let t = ds.len_t();
    let gp = hyper.gak_params(t)?;
    let mut r = rng::stream(hyper.seed, streams::WARM_START);
    let mut out = pert.clone();
    for (i, s) in ds.samples.iter().enumerate() {
        let set = sample_alignments(t, t, hyper.align_samples, gp.band, &mut r)?;
        out.omega[i] = gak_sampled(&s.values, &s.values, &set, &gp)?;
    }
    Ok(out)
}

/// RO-TS objective value at the given weights and perturbations:
/// mean of loss plus λ ln k_GAK(x_i, x_i + a_i). `exact` uses the full DP
/// kernel; otherwise fresh sampled alignment subsets estimate it.
pub fn rots_objective(
    model: &Model,
    ds: &Dataset,
    pert: &PerturbationState,
    hyper: &RotsHyper,
    exact: bool,
) -> Result<f64> {
    pert.check_shapes(ds)?;
    if ds.n() == 0 {
        return Err(CoreError::Arg("empty dataset".into()));
    }
    let t = ds.len_t();
    let gp = if hyper.lambda != 0.0 {
        Some(hyper.gak_params(t)?)
    } else {
        None
    };
    let mut r = rng::stream(hyper.seed, streams::OBJECTIVE);
    let mut total = 0.0;
    for (i, s) in ds.samples.iter().enumerate() {
        let xp = &s.values + &pert.a[i];
        let cache = crate::net::forward_cached(model, &xp)?;
        total += crate::net::cross_entropy(cache.logits.view(), s.label);
        if let Some(gp) = &gp {
            let log_k = if exact {
                let k = gak_exact(&s.values, &xp, gp)?;
                k.ln()
            } else {
                let set = sample_alignments(t, t, hyper.align_samples, gp.band, &mut r)?;
                let k_hat = gak_sampled(&s.values, &xp, &set, gp)?;
                if k_hat <= 0.0 || !k_hat.is_finite() {
                    return Err(CoreError::Numeric(format!(
                        "sampled kernel mass for sample {i} degenerated to {k_hat}"
                    )));
                }
                k_hat.ln()
            };
            total += hyper.lambda * log_k;
        }
    }
    Ok(total / ds.n() as f64)
}

/// Per-sample dual ascent direction at the current weights:
///
///   𝒢 = ∇_a ℓ(f(x + a; w), y) − [Σ_{π∈Â} exp(−d_π/ν) ∇_a d_π] · λ/(ω ν).
///
/// `a_hat` must be the same subset used for this iteration's ω update;
/// both the subset weights and ω then live on the same scale and the
/// ratio estimates ∇_a λ ln k_GAK.
pub fn dual_grad(
    model: &Model,
    x: &Array2<f64>,
    y: usize,
    a: &Array2<f64>,
    omega: f64,
    a_hat: &AlignmentSet,
    hyper: &RotsHyper,
) -> Result<Array2<f64>> {
    if x.dim() != a.dim() {
        return Err(CoreError::Shape(format!(
            "perturbation shape {:?} does not match input shape {:?}",
            a.dim(),
            x.dim()
        )));
    }
    let xp = x + a;
    let (_, grads) = loss_and_grads(model, std::slice::from_ref(&xp), &[y])?;
    let mut g = grads.input_grad.into_iter().next().expect("one input grad");
    if hyper.lambda != 0.0 {
        let nu = hyper.nu_value()?;
        if omega <= 0.0 || !omega.is_finite() {
            return Err(CoreError::State(format!(
                "omega = {omega} but the regularizer divides by it; warm-start \
                 the moving average or update it before the dual step"
            )));
        }
        let mut weighted = Array2::<f64>::zeros(a.dim());
        for al in &a_hat.alignments {
            let w = (-path_cost(x, &xp, al, hyper.p)? / nu).exp();
            if w != 0.0 {
                weighted.scaled_add(w, &grad_path_cost(x, x, a, al, hyper.p)?);
            }
        }
        g.scaled_add(-hyper.lambda / (omega * nu), &weighted);
    }
    Ok(g)
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn all_finite(v: &Array2<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Alternating stochastic descent/ascent on the RO-TS objective.
/// Returns the trained model, the final perturbation state, and
/// a per-iteration trace (`obj` is the minibatch estimate; its loss and
/// regularizer parts are recorded separately).
pub fn rots_train(
    ds: &Dataset,
    model: Model,
    hyper: &RotsHyper,
) -> Result<(Model, PerturbationState, SolveTrace)> {
    hyper.validate()?;
    if ds.n() == 0 {
        return Err(CoreError::Arg("empty dataset".into()));
    }
    if hyper.s > ds.n() {
        return Err(CoreError::Arg(format!(
            "minibatch size {} exceeds dataset size {}",
            hyper.s,
            ds.n()
        )));
    }
    if model.arch.in_channels != ds.channels()
        || model.arch.in_len != ds.len_t()
        || model.arch.num_classes != ds.num_classes
    {
        return Err(CoreError::Shape(format!(
            "model expects {}x{} inputs with {} classes; dataset is {}x{} with {}",
            model.arch.in_channels,
            model.arch.in_len,
            model.arch.num_classes,
            ds.channels(),
            ds.len_t(),
            ds.num_classes
        )));
    }
    let hyper = hyper.resolve(ds)?;
    let t = ds.len_t();
    let gp = hyper.gak_params(t)?;
    let mut model = model;

    let mut trace = SolveTrace::default();
    trace.note("solver", "rots");
    trace.note("lambda", hyper.lambda);
    trace.note("nu", gp.nu);
    trace.note("beta", hyper.beta);
    trace.note("eta", hyper.eta);
    trace.note("gamma", hyper.gamma);
    trace.note("s", hyper.s);
    trace.note("align_samples", hyper.align_samples);
    trace.note(
        "band",
        gp.band.map(|b| b.to_string()).unwrap_or_else(|| "none".into()),
    );
    trace.note("seed", hyper.seed);
    trace.note("warm_start", hyper.warm_start);

    let mut pert = PerturbationState::zeros(ds);
    if hyper.warm_start {
        pert = warm_start_omega(ds, &pert, &hyper)?;
    }

    let mut rng_mb = rng::stream(hyper.seed, streams::MINIBATCH);
    let mut rng_align = rng::stream(hyper.seed, streams::ALIGN);

    for k in 0..hyper.k {
        // Primal phase at w_k: mean loss gradient over the perturbed batch.
        let batch_idx = rng::sample_without_replacement(&mut rng_mb, ds.n(), hyper.s);
        let inputs: Vec<Array2<f64>> = batch_idx
            .iter()
            .map(|&i| &ds.samples[i].values + &pert.a[i])
            .collect();
        let labels: Vec<usize> = batch_idx.iter().map(|&i| ds.samples[i].label).collect();
        let (loss, grads) = match loss_and_grads(&model, &inputs, &labels) {
            Err(CoreError::Numeric(msg)) => {
                log::warn!("iteration {}: {msg}", k + 1);
                return Err(CoreError::Diverged {
                    iteration: k + 1,
                    trace: Box::new(trace),
                });
            }
            other => other?,
        };
        let grad_norm = l2_norm(&grads.weight_grad);
        sgd_step(&mut model, &grads.weight_grad, hyper.eta)?;

        // Dual phase at w_{k+1}: fresh alignment subset per sample, ω moving
        // average first, then the ascent step — each subset serves both.
        let mut reg_sum = 0.0;
        for (pos, &i) in batch_idx.iter().enumerate() {
            let a_hat = sample_alignments(t, t, hyper.align_samples, gp.band, &mut rng_align)?;
            let x = &ds.samples[i].values;
            let h = gak_sampled(x, &inputs[pos], &a_hat, &gp)?;
            pert.omega[i] = (1.0 - hyper.beta) * pert.omega[i] + hyper.beta * h;
            if hyper.lambda != 0.0 {
                reg_sum += hyper.lambda * pert.omega[i].ln();
            }
            let g = match dual_grad(
                &model,
                x,
                ds.samples[i].label,
                &pert.a[i],
                pert.omega[i],
                &a_hat,
                &hyper,
            ) {
                Err(CoreError::Numeric(msg)) => {
                    log::warn!("iteration {}: {msg}", k + 1);
                    return Err(CoreError::Diverged {
                        iteration: k + 1,
                        trace: Box::new(trace),
                    });
                }
                other => other?,
            };
            pert.a[i].scaled_add(hyper.gamma, &g);
        }
        let reg = reg_sum / hyper.s as f64;

        let mut row = TraceRow::new(k + 1, loss + reg, grad_norm);
        row.loss_term = Some(loss);
        row.reg_term = Some(reg);
        trace.push(row);

        let diverged = !loss.is_finite()
            || model.flat_params().iter().any(|x| !x.is_finite())
            || batch_idx
                .iter()
                .any(|&i| !all_finite(&pert.a[i]) || !pert.omega[i].is_finite());
        if diverged {
            return Err(CoreError::Diverged {
                iteration: k + 1,
                trace: Box::new(trace),
            });
        }
    }
    Ok((model, pert, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::enumerate_alignments;
    use crate::align::grad_log_gak_exact;
    use crate::data::synth_two_class;
    use crate::net::{init_model, ArchSpec};

    fn tiny_dataset(n: usize, t: usize, seed: u64) -> Dataset {
        synth_two_class(n, t, 0.05, seed).unwrap()
    }

    fn tiny_model(ds: &Dataset, seed: u64) -> Model {
        let arch = ArchSpec::parse("", ds.channels(), ds.len_t(), ds.num_classes).unwrap();
        init_model(&arch, seed).unwrap()
    }

    fn fixed_hyper() -> RotsHyper {
        RotsHyper {
            lambda: 0.05,
            nu: NuSpec::Fixed(1.0),
            beta: 0.5,
            eta: 0.05,
            gamma: 0.05,
            s: 4,
            k: 5,
            align_samples: 8,
            band: BandSpec::Full,
            p: Norm::L2,
            seed: 9,
            warm_start: true,
        }
    }

    #[test]
    fn hyper_validation_rejects_bad_fields() {
        let mut h = fixed_hyper();
        h.beta = 0.0;
        assert!(h.validate().is_err());
        let mut h = fixed_hyper();
        h.beta = 1.5;
        assert!(h.validate().is_err());
        let mut h = fixed_hyper();
        h.eta = 0.0;
        assert!(h.validate().is_err());
        let mut h = fixed_hyper();
        h.lambda = -1.0;
        assert!(h.validate().is_err());
        let mut h = fixed_hyper();
        h.nu = NuSpec::Fixed(0.0);
        assert!(h.validate().is_err());
        let mut h = fixed_hyper();
        h.s = 0;
        assert!(h.validate().is_err());
        // Degenerate-but-legal corners.
        let mut h = fixed_hyper();
        h.lambda = 0.0;
        h.gamma = 0.0;
        assert!(h.validate().is_ok());
        assert!(matches!(
            fixed_hyper().nu_value(),
            Ok(v) if v == 1.0
        ));
        let mut h = fixed_hyper();
        h.nu = NuSpec::Auto;
        assert!(matches!(h.nu_value(), Err(CoreError::State(_))));
    }

    #[test]
    fn band_resolution() {
        assert_eq!(BandSpec::Half.resolve(32), Some(16.0));
        assert_eq!(BandSpec::Half.resolve(5), Some(3.0));
        assert_eq!(BandSpec::Half.resolve(1), Some(1.0));
        assert_eq!(BandSpec::Full.resolve(32), None);
        assert_eq!(BandSpec::Fixed(4).resolve(32), Some(4.0));
    }

    #[test]
    fn auto_nu_resolves_deterministically() {
        let ds = tiny_dataset(8, 8, 1);
        let mut h = fixed_hyper();
        h.nu = NuSpec::Auto;
        let a = h.resolve(&ds).unwrap().nu_value().unwrap();
        let b = h.resolve(&ds).unwrap().nu_value().unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0);
    }

    #[test]
    fn warm_start_is_positive_bounded_and_deterministic() {
        let ds = tiny_dataset(6, 8, 2);
        let h = fixed_hyper();
        let zero = PerturbationState::zeros(&ds);
        let w1 = warm_start_omega(&ds, &zero, &h).unwrap();
        let w2 = warm_start_omega(&ds, &zero, &h).unwrap();
        for i in 0..ds.n() {
            assert!(w1.omega[i] > 0.0);
            // At a = 0 every sampled path weight is exp(-cost/nu) <= 1.
            assert!(w1.omega[i] <= h.align_samples as f64);
            assert_eq!(w1.omega[i].to_bits(), w2.omega[i].to_bits());
        }
    }

    #[test]
    fn objective_with_zero_lambda_is_plain_empirical_risk() {
        let ds = tiny_dataset(6, 8, 3);
        let model = tiny_model(&ds, 4);
        let pert = PerturbationState::zeros(&ds);
        let mut h = fixed_hyper();
        h.lambda = 0.0;
        let obj = rots_objective(&model, &ds, &pert, &h, true).unwrap();
        let batch: Vec<Array2<f64>> = ds.samples.iter().map(|s| s.values.clone()).collect();
        let labels: Vec<usize> = ds.labels();
        let (loss, _) = loss_and_grads(&model, &batch, &labels).unwrap();
        assert!((obj - loss).abs() < 1e-15);
    }

    #[test]
    fn objective_regularizer_is_nonnegative_at_zero_perturbation() {
        // k_GAK(x, x) >= 1: the diagonal alignment alone contributes exp(0).
        let ds = tiny_dataset(6, 8, 5);
        let model = tiny_model(&ds, 6);
        let pert = PerturbationState::zeros(&ds);
        let h = fixed_hyper();
        let with_reg = rots_objective(&model, &ds, &pert, &h, true).unwrap();
        let mut h0 = h.clone();
        h0.lambda = 0.0;
        let without = rots_objective(&model, &ds, &pert, &h0, true).unwrap();
        assert!(with_reg >= without - 1e-12);
    }

    #[test]
    fn exact_objective_matches_an_enumerated_recomputation() {
        let ds = tiny_dataset(4, 8, 7);
        let model = tiny_model(&ds, 8);
        let mut pert = PerturbationState::zeros(&ds);
        for (i, a) in pert.a.iter_mut().enumerate() {
            a.mapv_inplace(|_| 0.0);
            a[[0, i % 5]] = 0.2;
        }
        let h = fixed_hyper();
        let obj = rots_objective(&model, &ds, &pert, &h, true).unwrap();

        let gp = h.gak_params(8).unwrap();
        let set = enumerate_alignments(8, 8, gp.band).unwrap();
        let mut manual = 0.0;
        for (i, s) in ds.samples.iter().enumerate() {
            let xp = &s.values + &pert.a[i];
            let cache = crate::net::forward_cached(&model, &xp).unwrap();
            manual += crate::net::cross_entropy(cache.logits.view(), s.label);
            let mut k = 0.0;
            for al in &set.alignments {
                k += (-path_cost(&s.values, &xp, al, h.p).unwrap() / gp.nu).exp();
            }
            manual += h.lambda * k.ln();
        }
        manual /= ds.n() as f64;
        assert!(
            (obj - manual).abs() <= 1e-9 * manual.abs().max(1.0),
            "{obj} vs {manual}"
        );
    }

    #[test]
    fn dual_grad_with_zero_lambda_is_the_loss_input_gradient() {
        let ds = tiny_dataset(4, 8, 9);
        let model = tiny_model(&ds, 10);
        let x = &ds.samples[0].values;
        let a = Array2::from_elem(x.dim(), 0.1);
        let set = enumerate_alignments(8, 8, None).unwrap();
        let mut h = fixed_hyper();
        h.lambda = 0.0;
        let g = dual_grad(&model, x, ds.samples[0].label, &a, 0.0, &set, &h).unwrap();
        let xp = x + &a;
        let (_, grads) = loss_and_grads(&model, &[xp], &[ds.samples[0].label]).unwrap();
        assert_eq!(g, grads.input_grad[0]);
    }

    #[test]
    fn dual_grad_exhaustive_matches_the_exact_chain_rule() {
        // With the exhaustive subset and omega = k_GAK exactly, the sampled
        // direction is the exact gradient of l + lambda ln k.
        let ds = tiny_dataset(4, 8, 11);
        let mut model = tiny_model(&ds, 12);
        let h = fixed_hyper();
        let x = &ds.samples[1].values;
        let y = ds.samples[1].label;
        let mut a = Array2::zeros(x.dim());
        a[[0, 1]] = 0.3;
        a[[0, 3]] = -0.2;

        // Take one primal step first so the check runs at w_{k+1} like the
        // trainer does (one deterministic GDA iteration on the objective).
        let (_, grads) = loss_and_grads(&model, &[x + &a], &[y]).unwrap();
        sgd_step(&mut model, &grads.weight_grad, h.eta).unwrap();

        let gp = h.gak_params(8).unwrap();
        let set = enumerate_alignments(8, 8, gp.band).unwrap();
        let k = gak_exact(x, &(x + &a), &gp).unwrap();
        let got = dual_grad(&model, x, y, &a, k, &set, &h).unwrap();

        let (_, grads) = loss_and_grads(&model, &[x + &a], &[y]).unwrap();
        let mut want = grads.input_grad[0].clone();
        want.scaled_add(h.lambda, &grad_log_gak_exact(x, &a, &gp).unwrap());

        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-9 * scale.max(1.0), "{g} vs {w}");
        }
    }

    #[test]
    fn dual_direction_is_invariant_to_joint_rescaling() {
        // Duplicating every sampled path doubles the weighted sum; doubling
        // omega alongside leaves the direction unchanged.
        let ds = tiny_dataset(4, 8, 13);
        let model = tiny_model(&ds, 14);
        let h = fixed_hyper();
        let x = &ds.samples[2].values;
        let y = ds.samples[2].label;
        let mut a = Array2::zeros(x.dim());
        a[[0, 0]] = 0.4;
        let set = enumerate_alignments(8, 8, None).unwrap();
        let mut doubled = set.clone();
        doubled.alignments.extend(set.alignments.iter().cloned());
        let omega = 0.8;
        let g1 = dual_grad(&model, x, y, &a, omega, &set, &h).unwrap();
        let g2 = dual_grad(&model, x, y, &a, 2.0 * omega, &doubled, &h).unwrap();
        let scale = g1.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (p, q) in g1.iter().zip(g2.iter()) {
            assert!((p - q).abs() <= 1e-12 * scale.max(1.0), "{p} vs {q}");
        }
    }

    #[test]
    fn dual_grad_rejects_nonpositive_omega_when_regularized() {
        let ds = tiny_dataset(4, 8, 15);
        let model = tiny_model(&ds, 16);
        let h = fixed_hyper();
        let x = &ds.samples[0].values;
        let a = Array2::zeros(x.dim());
        let set = enumerate_alignments(8, 8, None).unwrap();
        let err = dual_grad(&model, x, 0, &a, 0.0, &set, &h).unwrap_err();
        assert!(matches!(err, CoreError::State(_)));
    }

    #[test]
    fn training_is_deterministic_and_moves_the_perturbations() {
        let ds = tiny_dataset(8, 8, 17);
        let h = fixed_hyper();
        let m0 = tiny_model(&ds, 18);
        let (m1, p1, t1) = rots_train(&ds, m0.clone(), &h).unwrap();
        let (m2, p2, t2) = rots_train(&ds, m0, &h).unwrap();
        for (a, b) in m1.flat_params().iter().zip(m2.flat_params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(t1.rows.len(), h.k);
        assert_eq!(t2.rows.len(), h.k);
        for (r1, r2) in t1.rows.iter().zip(&t2.rows) {
            assert_eq!(r1.obj.to_bits(), r2.obj.to_bits());
        }
        for (a, b) in p1.a.iter().zip(&p2.a) {
            assert_eq!(a, b);
        }
        // gamma > 0 and lambda > 0: at least one perturbation moved.
        assert!(p1.a.iter().any(|a| a.iter().any(|&v| v != 0.0)));
        // Every omega was warm-started or updated; all positive.
        assert!(p1.omega.iter().all(|&o| o > 0.0));
    }

    #[test]
    fn lambda_and_gamma_zero_reduce_to_plain_minibatch_sgd() {
        // Independent re-implementation of the degenerate loop: same
        // minibatch stream, clean inputs, same step rule.
        let ds = tiny_dataset(8, 8, 19);
        let mut h = fixed_hyper();
        h.lambda = 0.0;
        h.gamma = 0.0;
        h.k = 7;
        let m0 = tiny_model(&ds, 20);
        let (m_rots, pert, trace) = rots_train(&ds, m0.clone(), &h).unwrap();

        let mut m_sgd = m0;
        let mut r = rng::stream(h.seed, streams::MINIBATCH);
        let mut objs = Vec::new();
        for _ in 0..h.k {
            let idx = rng::sample_without_replacement(&mut r, ds.n(), h.s);
            let batch: Vec<Array2<f64>> =
                idx.iter().map(|&i| ds.samples[i].values.clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| ds.samples[i].label).collect();
            let (loss, grads) = loss_and_grads(&m_sgd, &batch, &labels).unwrap();
            sgd_step(&mut m_sgd, &grads.weight_grad, h.eta).unwrap();
            objs.push(loss);
        }
        for (a, b) in m_rots.flat_params().iter().zip(m_sgd.flat_params()) {
            assert_eq!(a.to_bits(), b.to_bits(), "weights drifted");
        }
        for (row, loss) in trace.rows.iter().zip(objs) {
            assert_eq!(row.obj.to_bits(), loss.to_bits(), "trace drifted");
        }
        // Perturbations never moved.
        assert!(pert.a.iter().all(|a| a.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn large_lambda_suppresses_perturbation_growth() {
        let mut small = 0.0;
        let mut large = 0.0;
        // The contrast only holds while the dual step stays stable, so keep
        // gamma * lambda / (omega nu) well below 1 on the regularized run.
        for seed in 0..3u64 {
            let ds = tiny_dataset(8, 8, 100 + seed);
            let m0 = tiny_model(&ds, 200 + seed);
            let mut h = fixed_hyper();
            h.k = 25;
            h.gamma = 0.05;
            h.seed = 300 + seed;
            h.lambda = 1e-3;
            let (_, p, _) = rots_train(&ds, m0.clone(), &h).unwrap();
            small += p.a.iter().map(|a| l2_norm(a.as_slice().unwrap())).sum::<f64>();
            h.lambda = 1.0;
            let (_, p, _) = rots_train(&ds, m0, &h).unwrap();
            large += p.a.iter().map(|a| l2_norm(a.as_slice().unwrap())).sum::<f64>();
        }
        assert!(
            large < small,
            "lambda=1 perturbations ({large}) should be smaller than lambda=1e-3 ({small})"
        );
    }

    #[test]
    fn minibatch_larger_than_dataset_is_rejected() {
        let ds = tiny_dataset(4, 8, 21);
        let mut h = fixed_hyper();
        h.s = 10;
        let m0 = tiny_model(&ds, 22);
        assert!(matches!(
            rots_train(&ds, m0, &h),
            Err(CoreError::Arg(_))
        ));
    }
}
