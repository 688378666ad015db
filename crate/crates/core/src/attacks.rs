//! Input-space attacks, baseline trainers, and robust-accuracy evaluation.
//!
//! The attacks are pure per (model, input, rng): FGS takes one signed
//! gradient step, PGD iterates signed steps with an L∞ projection, and the
//! Gaussian baseline adds i.i.d. noise. Trainers come in two shapes: the
//! iteration-based [`sgd_train`] (the clean counterpart of the RO-TS loop —
//! it shares the minibatch stream and draw helper, so the degenerate RO-TS
//! run reproduces it bit-for-bit) and epoch-based Adam trainers for the
//! adversarial and stability baselines.

use crate::data::Dataset;
use crate::error::CoreError;
use crate::net::{
    accuracy, adam_step, cross_entropy, forward_cached, loss_and_grads, sgd_step, softmax,
    AdamState, Model,
};
use crate::rng::{self, streams};
use crate::trace::{SolveTrace, TraceRow};
use crate::Result;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgs,
    Pgd,
    Gaussian,
}

/// Attack configuration. `epsilon` is the L∞ budget (fgs/pgd), `sigma` the
/// Gaussian scale; evaluation sweeps override them per level.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default = "default_level")]
    pub epsilon: f64,
    #[serde(default = "default_level")]
    pub sigma: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// PGD step size; `None` means the 2.5·ε/steps convention.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_level() -> f64 {
    0.1
}

fn default_steps() -> usize {
    20
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        AttackSpec {
            kind,
            epsilon: 0.1,
            sigma: 0.1,
            steps: 20,
            alpha: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(CoreError::Arg("epsilon must be finite and >= 0".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(CoreError::Arg("sigma must be finite and >= 0".into()));
        }
        if self.steps == 0 {
            return Err(CoreError::Arg("steps must be >= 1".into()));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0) || !a.is_finite() {
                return Err(CoreError::Arg("alpha must be finite and > 0".into()));
            }
        }
        Ok(())
    }

    /// PGD step size at a given budget.
    pub fn alpha_at(&self, epsilon: f64) -> f64 {
        self.alpha.unwrap_or(2.5 * epsilon / self.steps as f64)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn input_grad(model: &Model, x: &Array2<f64>, y: usize) -> Result<Array2<f64>> {
    let (_, grads) = loss_and_grads(model, std::slice::from_ref(x), &[y])?;
    Ok(grads.input_grad.into_iter().next().expect("one input grad"))
}

/// Fast gradient sign: x + ε·sign(∇_x ℓ), with sign(0) = 0.
pub fn fgs_attack(model: &Model, x: &Array2<f64>, y: usize, epsilon: f64) -> Result<Array2<f64>> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(CoreError::Arg("epsilon must be finite and >= 0".into()));
    }
    let mut delta = input_grad(model, x, y)?;
    delta.mapv_inplace(|g| epsilon * sign(g));
    Ok(x + &delta)
}

/// Projected gradient descent in the L∞ ball of radius ε around x:
/// optional uniform random start, then `steps` signed ascent steps of size
/// `alpha`, clipping the perturbation to the ball after each step.
///
/// With `steps = 1`, `alpha = epsilon`, and no random start this is
/// bit-identical to [`fgs_attack`].
pub fn pgd_attack(
    model: &Model,
    x: &Array2<f64>,
    y: usize,
    epsilon: f64,
    steps: usize,
    alpha: f64,
    random_start: bool,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(CoreError::Arg("epsilon must be finite and >= 0".into()));
    }
    if steps == 0 || !(alpha > 0.0) {
        return Err(CoreError::Arg("pgd needs steps >= 1 and alpha > 0".into()));
    }
    let mut delta = Array2::<f64>::zeros(x.dim());
    if random_start {
        delta.mapv_inplace(|_| rng.random_range(-epsilon..=epsilon));
    }
    for _ in 0..steps {
        let xp = x + &delta;
        let g = input_grad(model, &xp, y)?;
        for (d, gv) in delta.iter_mut().zip(g.iter()) {
            *d = (*d + alpha * sign(*gv)).clamp(-epsilon, epsilon);
        }
    }
    Ok(x + &delta)
}

/// Additive i.i.d. Gaussian noise with standard deviation sigma.
pub fn gaussian_perturb(x: &Array2<f64>, sigma: f64, rng: &mut impl Rng) -> Result<Array2<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(CoreError::Arg("sigma must be finite and >= 0".into()));
    }
    let mut out = x.clone();
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(out)
}

/// Apply one attack at the given level to one sample.
fn attack_sample(
    model: &Model,
    spec: &AttackSpec,
    level: f64,
    x: &Array2<f64>,
    y: usize,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    match spec.kind {
        AttackKind::Fgs => fgs_attack(model, x, y, level),
        AttackKind::Pgd => pgd_attack(
            model,
            x,
            y,
            level,
            spec.steps,
            spec.alpha_at(level),
            true,
            rng,
        ),
        AttackKind::Gaussian => gaussian_perturb(x, level, rng),
    }
}

fn check_model_matches(model: &Model, ds: &Dataset) -> Result<()> {
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
    Ok(())
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_divergence(model: &Model, loss: f64, k: usize, trace: &SolveTrace) -> Result<()> {
    if !loss.is_finite() || model.flat_params().iter().any(|x| !x.is_finite()) {
        return Err(CoreError::Diverged {
            iteration: k,
            trace: Box::new(trace.clone()),
        });
    }
    Ok(())
}

/// Plain minibatch SGD on the clean data, iteration-based. Draws its batch
/// indices from the shared minibatch stream with the shared helper, making
/// it the exact degenerate target of the RO-TS trainer at λ = 0, γ = 0.
pub fn sgd_train(
    ds: &Dataset,
    model: Model,
    eta: f64,
    s: usize,
    k: usize,
    seed: u64,
) -> Result<(Model, SolveTrace)> {
    if ds.n() == 0 {
        return Err(CoreError::Arg("empty dataset".into()));
    }
    if s == 0 || s > ds.n() {
        return Err(CoreError::Arg(format!(
            "minibatch size {s} must lie in 1..={}",
            ds.n()
        )));
    }
    if k == 0 {
        return Err(CoreError::Arg("iteration count must be >= 1".into()));
    }
    check_model_matches(&model, ds)?;
    let mut model = model;
    let mut trace = SolveTrace::default();
    trace.note("solver", "sgd");
    trace.note("eta", eta);
    trace.note("s", s);
    trace.note("seed", seed);
    let mut rng_mb = rng::stream(seed, streams::MINIBATCH);
    for step in 0..k {
        let idx = rng::sample_without_replacement(&mut rng_mb, ds.n(), s);
        let batch: Vec<Array2<f64>> = idx.iter().map(|&i| ds.samples[i].values.clone()).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| ds.samples[i].label).collect();
        let (loss, grads) = match loss_and_grads(&model, &batch, &labels) {
            Err(CoreError::Numeric(msg)) => {
                log::warn!("iteration {}: {msg}", step + 1);
                return Err(CoreError::Diverged {
                    iteration: step + 1,
                    trace: Box::new(trace),
                });
            }
            other => other?,
        };
        sgd_step(&mut model, &grads.weight_grad, eta)?;
        trace.push(TraceRow::new(step + 1, loss, l2_norm(&grads.weight_grad)));
        check_divergence(&model, loss, step + 1, &trace)?;
    }
    Ok((model, trace))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { eta: f64 },
    Adam { eta: f64 },
}

impl Optimizer {
    fn eta(&self) -> f64 {
        match *self {
            Optimizer::Sgd { eta } | Optimizer::Adam { eta } => eta,
        }
    }
}

/// Epoch-based trainer core shared by the adversarial and stability
/// baselines: shuffle, chunk, transform the minibatch, step.
fn epoch_train<F>(
    ds: &Dataset,
    model: Model,
    epochs: usize,
    batch_size: usize,
    opt: Optimizer,
    seed: u64,
    solver_name: &str,
    mut step_fn: F,
) -> Result<(Model, SolveTrace)>
where
    F: FnMut(&Model, &[usize], &mut rand_chacha::ChaCha8Rng) -> Result<(f64, Vec<f64>)>,
{
    if ds.n() == 0 {
        return Err(CoreError::Arg("empty dataset".into()));
    }
    if epochs == 0 || batch_size == 0 {
        return Err(CoreError::Arg("epochs and batch_size must be >= 1".into()));
    }
    if !(opt.eta() > 0.0) || !opt.eta().is_finite() {
        return Err(CoreError::Arg("step size must be finite and > 0".into()));
    }
    check_model_matches(&model, ds)?;
    let mut model = model;
    let mut trace = SolveTrace::default();
    trace.note("solver", solver_name);
    trace.note("eta", opt.eta());
    trace.note("epochs", epochs);
    trace.note("batch_size", batch_size);
    trace.note("seed", seed);
    let mut rng_shuffle = rng::stream(seed, streams::SHUFFLE);
    let mut rng_attack = rng::stream(seed, streams::ATTACK);
    let mut adam = AdamState::new(model.num_params());
    let mut step = 0usize;
    for _ in 0..epochs {
        let order = rng::sample_without_replacement(&mut rng_shuffle, ds.n(), ds.n());
        for chunk in order.chunks(batch_size) {
            let (loss, grad) = match step_fn(&model, chunk, &mut rng_attack) {
                Err(CoreError::Numeric(msg)) => {
                    log::warn!("step {}: {msg}", step + 1);
                    return Err(CoreError::Diverged {
                        iteration: step + 1,
                        trace: Box::new(trace),
                    });
                }
                other => other?,
            };
            match opt {
                Optimizer::Sgd { eta } => sgd_step(&mut model, &grad, eta)?,
                Optimizer::Adam { eta } => adam_step(&mut adam, &mut model, &grad, eta)?,
            }
            step += 1;
            trace.push(TraceRow::new(step, loss, l2_norm(&grad)));
            check_divergence(&model, loss, step, &trace)?;
        }
    }
    Ok((model, trace))
}

/// Adversarial training: every minibatch is replaced by attacked inputs
/// generated against the current weights, then a standard optimizer step.
pub fn adv_train(
    ds: &Dataset,
    model: Model,
    attack: &AttackSpec,
    epochs: usize,
    batch_size: usize,
    opt: Optimizer,
    seed: u64,
) -> Result<(Model, SolveTrace)> {
    attack.validate()?;
    if attack.kind == AttackKind::Gaussian {
        return Err(CoreError::Arg(
            "adversarial training expects an fgs or pgd attack".into(),
        ));
    }
    if attack.epsilon >= 1.0 {
        log::warn!(
            "adversarial training with epsilon {} >= 1; typical budgets are well below 1",
            attack.epsilon
        );
    }
    let name = match attack.kind {
        AttackKind::Fgs => "adv_fgs",
        AttackKind::Pgd => "adv_pgd",
        AttackKind::Gaussian => unreachable!(),
    };
    epoch_train(
        ds,
        model,
        epochs,
        batch_size,
        opt,
        seed,
        name,
        |model, chunk, rng_attack| {
            let mut batch = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &ds.samples[i];
                batch.push(attack_sample(
                    model,
                    attack,
                    attack.epsilon,
                    &s.values,
                    s.label,
                    rng_attack,
                )?);
                labels.push(s.label);
            }
            let (loss, grads) = loss_and_grads(model, &batch, &labels)?;
            Ok((loss, grads.weight_grad))
        },
    )
}

/// KL(p ‖ q) from two logit vectors, in log space. Vanishing p-entries
/// contribute their limit, zero.
pub fn kl_from_logits(z_p: &Array1<f64>, z_q: &Array1<f64>) -> f64 {
    let lse_p = crate::net::logsumexp(z_p.view());
    let lse_q = crate::net::logsumexp(z_q.view());
    let mut kl = 0.0;
    for (zp, zq) in z_p.iter().zip(z_q.iter()) {
        let lp = zp - lse_p;
        let p = lp.exp();
        if p > 0.0 {
            kl += p * (lp - (zq - lse_q));
        }
    }
    kl
}

/// Stability-training loss and its weight gradient over one batch:
/// mean of CE(f(x), y) + kl_weight · KL(softmax f(x) ‖ softmax f(x')).
pub fn stn_loss_and_grads(
    model: &Model,
    batch: &[Array2<f64>],
    labels: &[usize],
    perturbed: &[Array2<f64>],
    kl_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() || batch.len() != labels.len() || batch.len() != perturbed.len() {
        return Err(CoreError::Arg(
            "batch, labels and perturbed batch must be nonempty and aligned".into(),
        ));
    }
    let bsz = batch.len() as f64;
    let mut loss = 0.0;
    let mut weight_grad = vec![0.0; model.num_params()];
    for ((x, &y), xp) in batch.iter().zip(labels).zip(perturbed) {
        let cache = forward_cached(model, x)?;
        let cache_p = forward_cached(model, xp)?;
        let z = &cache.logits;
        let zp = &cache_p.logits;
        let kl = kl_from_logits(z, zp);
        loss += cross_entropy(z.view(), y) + kl_weight * kl;

        let p = softmax(z.view());
        let q = softmax(zp.view());
        // d/dz [CE + w·KL]: (p - onehot) + w·p⊙(ln p - ln q - KL).
        let lse_p = crate::net::logsumexp(z.view());
        let lse_q = crate::net::logsumexp(zp.view());
        let mut dz = p.clone();
        dz[y] -= 1.0;
        for i in 0..z.len() {
            if p[i] > 0.0 {
                dz[i] += kl_weight * p[i] * ((z[i] - lse_p) - (zp[i] - lse_q) - kl);
            }
        }
        dz.mapv_inplace(|v| v / bsz);
        let g = crate::net::backward(model, &cache, &dz)?;
        for (acc, v) in weight_grad.iter_mut().zip(&g.weight_grad) {
            *acc += v;
        }
        // d/dz' [w·KL] = w·(q - p).
        let mut dzp = &q - &p;
        dzp.mapv_inplace(|v| kl_weight * v / bsz);
        let gp = crate::net::backward(model, &cache_p, &dzp)?;
        for (acc, v) in weight_grad.iter_mut().zip(&gp.weight_grad) {
            *acc += v;
        }
    }
    Ok((loss / bsz, weight_grad))
}

/// Stability training: Adam on CE plus a KL term that ties the prediction on
/// x to the prediction on a Gaussian-jittered copy.
pub fn stn_train(
    ds: &Dataset,
    model: Model,
    sigma_stn: f64,
    kl_weight: f64,
    epochs: usize,
    batch_size: usize,
    eta: f64,
    seed: u64,
) -> Result<(Model, SolveTrace)> {
    if !(sigma_stn >= 0.0) || !(kl_weight >= 0.0) {
        return Err(CoreError::Arg(
            "sigma_stn and kl_weight must be >= 0".into(),
        ));
    }
    epoch_train(
        ds,
        model,
        epochs,
        batch_size,
        Optimizer::Adam { eta },
        seed,
        "stn",
        |model, chunk, rng_attack| {
            let mut batch = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            let mut perturbed = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &ds.samples[i];
                batch.push(s.values.clone());
                labels.push(s.label);
                perturbed.push(gaussian_perturb(&s.values, sigma_stn, rng_attack)?);
            }
            stn_loss_and_grads(model, &batch, &labels, &perturbed, kl_weight)
        },
    )
}

/// Paper defaults for stability training.
pub const STN_KL_WEIGHT: f64 = 0.01;
pub const STN_SIGMA: f64 = 0.04;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalRow {
    pub level: f64,
    pub mean_acc: f64,
    pub min_acc: f64,
    pub max_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,mean_acc,min_acc,max_acc\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.level, r.mean_acc, r.min_acc, r.max_acc
            ));
        }
        out
    }
}

/// Robust accuracy sweep: for every perturbation level, run `repeats`
/// independent attack/noise draws over the whole set and report the mean,
/// min, and max accuracy. Level 0 short-circuits to the clean accuracy.
/// Per-sample RNG streams keep the result independent of thread count.
pub fn eval_robust_accuracy(
    model: &Model,
    ds: &Dataset,
    attack: &AttackSpec,
    levels: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<EvalTable> {
    attack.validate()?;
    if levels.is_empty() || repeats == 0 {
        return Err(CoreError::Arg(
            "need at least one level and one repeat".into(),
        ));
    }
    if ds.n() == 0 {
        return Err(CoreError::Arg("empty dataset".into()));
    }
    check_model_matches(model, ds)?;
    let mut rows = Vec::with_capacity(levels.len());
    for (li, &level) in levels.iter().enumerate() {
        if !(level >= 0.0) || !level.is_finite() {
            return Err(CoreError::Arg(format!("bad level {level}")));
        }
        if level == 0.0 {
            let samples: Vec<(Array2<f64>, usize)> = ds
                .samples
                .iter()
                .map(|s| (s.values.clone(), s.label))
                .collect();
            let acc = accuracy(model, &samples)?;
            rows.push(EvalRow {
                level,
                mean_acc: acc,
                min_acc: acc,
                max_acc: acc,
            });
            continue;
        }
        let mut accs = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            let base = ((li * repeats + rep) * ds.n()) as u64;
            let perturbed: Vec<(Array2<f64>, usize)> = ds
                .samples
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut r = rng::stream_indexed(seed, "attack/eval", base + i as u64);
                    attack_sample(model, attack, level, &s.values, s.label, &mut r)
                        .map(|x| (x, s.label))
                })
                .collect::<Result<Vec<_>>>()?;
            accs.push(accuracy(model, &perturbed)?);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        rows.push(EvalRow {
            level,
            mean_acc: mean,
            min_acc: min,
            max_acc: max,
        });
    }
    Ok(EvalTable { rows })
}
