//! Central finite-difference suites for every hand-written gradient in the
//! workspace. Each suite runs a fixed number of seeded random instances,
//! compares an analytic gradient against central differences, and reports
//! the worst relative error. The relative scale is the FD gradient's ∞-norm
//! (floored), so near-zero gradients do not inflate the error.

use crate::align::{
    d_gak, enumerate_alignments, grad_log_gak_exact, grad_path_cost, path_cost,
    sample_alignments, GakParams, Norm,
};
use crate::attacks::stn_loss_and_grads;
use crate::net::{init_model, loss_and_grads, ArchSpec, Model};
use crate::plbench::{build_pl_problem, PlProblemSpec};
use crate::rng;
use crate::rots::{dual_grad, BandSpec, NuSpec, RotsHyper};
use crate::Result;
use ndarray::Array2;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const DEFAULT_TRIALS: usize = 50;

/// Central finite differences of `f` at `x` over every coordinate.
pub fn central_diff(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + step;
        let up = f(&point)?;
        point[i] = orig - step;
        let down = f(&point)?;
        point[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Worst |analytic - fd| over the FD gradient's ∞-norm (floored at 1e-8).
pub fn max_rel_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic
        .iter()
        .zip(fd)
        .fold(0.0f64, |m, (a, f)| m.max((a - f).abs() / scale))
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} over {} trials, max rel err {:.3e} (tol {:.1e})",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.trials,
            self.max_rel_err,
            self.tol
        )
    }
}

fn to_matrix(flat: &[f64], c: usize, t: usize) -> Array2<f64> {
    Array2::from_shape_vec((c, t), flat.to_vec()).expect("shape agrees by construction")
}

/// Path-cost gradients vs. FD. p alternates between 2 and 1; instances are
/// redrawn until every alignment residual stays clear of the norm's kink at
/// zero, where finite differences are meaningless.
pub fn suite_path_cost(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut r = rng::stream(seed, "gradcheck/path-cost");
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let p = if trial % 2 == 0 { Norm::L2 } else { Norm::L1 };
        let c = 1 + trial % 2;
        let t = 4 + trial % 3;
        let (x, a, align) = loop {
            let x = Array2::from_shape_fn((c, t), |_| r.random_range(-1.0f64..1.0));
            let a = Array2::from_shape_fn((c, t), |_| r.random_range(-0.5f64..0.5));
            let set = sample_alignments(t, t, 1, None, &mut r)?;
            let align = set.alignments.into_iter().next().expect("one alignment");
            let y = &x + &a;
            let clear = align
                .pi1()
                .iter()
                .zip(align.pi2())
                .all(|(&i, &j)| (0..c).all(|ch| (y[[ch, j]] - x[[ch, i]]).abs() > 0.05));
            if clear {
                break (x, a, align);
            }
        };
        let analytic = grad_path_cost(&x, &x, &a, &align, p)?;
        let flat: Vec<f64> = a.iter().cloned().collect();
        let fd = central_diff(
            &mut |v: &[f64]| path_cost(&x, &(&x + &to_matrix(v, c, t)), &align, p),
            &flat,
            FD_STEP,
        )?;
        let an_flat: Vec<f64> = analytic.iter().cloned().collect();
        worst = worst.max(max_rel_error(&an_flat, &fd));
    }
    Ok(SuiteReport {
        name: "path_cost".into(),
        trials,
        max_rel_err: worst,
        tol: FD_TOL,
    })
}

/// Exhaustive log-kernel gradients vs. FD of ln k_GAK = -d_GAK/ν.
pub fn suite_log_gak(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut r = rng::stream(seed, "gradcheck/log-gak");
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let c = 1 + trial % 2;
        let t = 4 + trial % 3;
        let nu = r.random_range(0.5..2.0);
        let params = GakParams::new(nu, Norm::L2)?;
        let x = Array2::from_shape_fn((c, t), |_| r.random_range(-1.0f64..1.0));
        let a = Array2::from_shape_fn((c, t), |_| r.random_range(-0.4f64..0.4));
        let analytic = grad_log_gak_exact(&x, &a, &params)?;
        let flat: Vec<f64> = a.iter().cloned().collect();
        let fd = central_diff(
            &mut |v: &[f64]| {
                let y = &x + &to_matrix(v, c, t);
                Ok(-d_gak(&x, &y, &params)? / nu)
            },
            &flat,
            FD_STEP,
        )?;
        let an_flat: Vec<f64> = analytic.iter().cloned().collect();
        worst = worst.max(max_rel_error(&an_flat, &fd));
    }
    Ok(SuiteReport {
        name: "log_gak".into(),
        trials,
        max_rel_err: worst,
        tol: FD_TOL,
    })
}

const NET_ARCHS: [&str; 5] = ["", "R:6", "C:2,K:3", "C:3,K:5;P:2", "C:2,K:3;P:2;R:8"];

fn random_batch(
    c: usize,
    t: usize,
    classes: usize,
    n: usize,
    r: &mut impl Rng,
) -> (Vec<Array2<f64>>, Vec<usize>) {
    let batch = (0..n)
        .map(|_| Array2::from_shape_fn((c, t), |_| r.random_range(-1.0f64..1.0)))
        .collect();
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    (batch, labels)
}

fn check_weight_grad(
    model: &Model,
    analytic: &[f64],
    mut eval: impl FnMut(&Model) -> Result<f64>,
) -> Result<f64> {
    let mut probe = model.clone();
    let flat = model.flat_params();
    let fd = central_diff(
        &mut |v: &[f64]| {
            probe.set_flat_params(v)?;
            eval(&probe)
        },
        &flat,
        FD_STEP,
    )?;
    Ok(max_rel_error(analytic, &fd))
}

/// Network weight and input gradients vs. FD across a family of small
/// conv/pool/dense architectures.
pub fn suite_net(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut r = rng::stream(seed, "gradcheck/net");
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let arch_src = NET_ARCHS[trial % NET_ARCHS.len()];
        let (c, t, classes) = (1 + trial % 2, 12, 2 + trial % 2);
        let arch = ArchSpec::parse(arch_src, c, t, classes)?;
        let model = init_model(&arch, seed ^ (trial as u64 + 1))?;
        let (batch, labels) = random_batch(c, t, classes, 2, &mut r);
        let (_, grads) = loss_and_grads(&model, &batch, &labels)?;

        worst = worst.max(check_weight_grad(&model, &grads.weight_grad, |m| {
            loss_and_grads(m, &batch, &labels).map(|(l, _)| l)
        })?);

        // Input gradient of the batch-mean loss, sample 0.
        let flat: Vec<f64> = batch[0].iter().cloned().collect();
        let fd = central_diff(
            &mut |v: &[f64]| {
                let mut b = batch.clone();
                b[0] = to_matrix(v, c, t);
                loss_and_grads(&model, &b, &labels).map(|(l, _)| l)
            },
            &flat,
            FD_STEP,
        )?;
        let an: Vec<f64> = grads.input_grad[0].iter().cloned().collect();
        worst = worst.max(max_rel_error(&an, &fd));
    }
    Ok(SuiteReport {
        name: "net".into(),
        trials,
        max_rel_err: worst,
        tol: FD_TOL,
    })
}

/// Stability-training combined loss (CE + weighted KL) weight gradients vs. FD.
pub fn suite_stn(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut r = rng::stream(seed, "gradcheck/stn");
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let arch_src = NET_ARCHS[trial % NET_ARCHS.len()];
        let (c, t, classes) = (1 + trial % 2, 10, 2 + trial % 2);
        let arch = ArchSpec::parse(arch_src, c, t, classes)?;
        let model = init_model(&arch, seed ^ (0x5000 + trial as u64))?;
        let (batch, labels) = random_batch(c, t, classes, 2, &mut r);
        let perturbed: Vec<Array2<f64>> = batch
            .iter()
            .map(|x| x.mapv(|v| v + r.random_range(-0.05..0.05)))
            .collect();
        let (_, grad) = stn_loss_and_grads(&model, &batch, &labels, &perturbed, 0.01)?;
        worst = worst.max(check_weight_grad(&model, &grad, |m| {
            stn_loss_and_grads(m, &batch, &labels, &perturbed, 0.01).map(|(l, _)| l)
        })?);
    }
    Ok(SuiteReport {
        name: "stn".into(),
        trials,
        max_rel_err: worst,
        tol: FD_TOL,
    })
}

/// Synthetic-benchmark component gradients ∇h_{i,j} vs. FD.
pub fn suite_plbench_h(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut r = rng::stream(seed, "gradcheck/plbench");
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let spec = PlProblemSpec {
            d: 1 + trial % 2,
            center_jitter: 0.1,
            ..PlProblemSpec::default()
        };
        let problem = build_pl_problem(&spec, seed ^ (0x9000 + trial as u64))?;
        let i = r.random_range(0..spec.n);
        let j = r.random_range(0..spec.m);
        let a: Vec<f64> = (0..spec.d).map(|_| r.random_range(-1.5..1.5)).collect();
        let analytic = problem.grad_h_component(&a, i, j);
        let fd = central_diff(
            &mut |v: &[f64]| Ok(problem.h_component(v, i, j)),
            &a,
            FD_STEP,
        )?;
        let an: Vec<f64> = analytic.to_vec();
        worst = worst.max(max_rel_error(&an, &fd));
    }
    Ok(SuiteReport {
        name: "plbench_h".into(),
        trials,
        max_rel_err: worst,
        tol: FD_TOL,
    })
}

/// Full RO-TS dual gradient (loss + alignment regularizer, exhaustive subset,
/// ω set to the exact kernel) vs. FD of ℓ(f(x+a), y) + λ ln k_GAK(x, x+a).
pub fn suite_rots_dual(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut r = rng::stream(seed, "gradcheck/rots-dual");
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let t = 5;
        let lambda = r.random_range(0.01..0.2);
        let nu = r.random_range(0.5..1.5);
        let hyper = RotsHyper {
            lambda,
            nu: NuSpec::Fixed(nu),
            band: BandSpec::Full,
            p: Norm::L2,
            ..RotsHyper::default()
        };
        let arch = ArchSpec::parse("", 1, t, 2)?;
        let model = init_model(&arch, seed ^ (0xA000 + trial as u64))?;
        let x = Array2::from_shape_fn((1, t), |_| r.random_range(-1.0f64..1.0));
        let a = Array2::from_shape_fn((1, t), |_| r.random_range(-0.3f64..0.3));
        let y = trial % 2;
        let gp = GakParams::new(nu, Norm::L2)?;
        let set = enumerate_alignments(t, t, None)?;
        let omega = crate::align::gak_exact(&x, &(&x + &a), &gp)?;
        let analytic = dual_grad(&model, &x, y, &a, omega, &set, &hyper)?;

        let flat: Vec<f64> = a.iter().cloned().collect();
        let fd = central_diff(
            &mut |v: &[f64]| {
                let av = to_matrix(v, 1, t);
                let xp = &x + &av;
                let cache = crate::net::forward_cached(&model, &xp)?;
                let ce = crate::net::cross_entropy(cache.logits.view(), y);
                Ok(ce + lambda * (-d_gak(&x, &xp, &gp)? / nu))
            },
            &flat,
            FD_STEP,
        )?;
        let an: Vec<f64> = analytic.iter().cloned().collect();
        worst = worst.max(max_rel_error(&an, &fd));
    }
    Ok(SuiteReport {
        name: "rots_dual".into(),
        trials,
        max_rel_err: worst,
        tol: FD_TOL,
    })
}

/// Every suite at the default trial count.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        suite_path_cost(DEFAULT_TRIALS, seed)?,
        suite_log_gak(DEFAULT_TRIALS, seed)?,
        suite_net(DEFAULT_TRIALS, seed)?,
        suite_stn(DEFAULT_TRIALS, seed)?,
        suite_plbench_h(DEFAULT_TRIALS, seed)?,
        suite_rots_dual(DEFAULT_TRIALS, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_is_exact_on_quadratics() {
        let mut f = |v: &[f64]| Ok(v.iter().map(|x| x * x).sum::<f64>());
        let g = central_diff(&mut f, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        for (got, want) in g.iter().zip([2.0, -4.0, 1.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn max_rel_error_uses_the_fd_scale() {
        assert!(max_rel_error(&[1.0, 2.0], &[1.0, 2.0]) == 0.0);
        let e = max_rel_error(&[1.0, 2.1], &[1.0, 2.0]);
        assert!((e - 0.05).abs() < 1e-12);
        // Tiny gradients fall back to the absolute floor.
        assert!(max_rel_error(&[1e-9], &[0.0]) > 0.0);
    }

    #[test]
    fn short_suites_all_pass() {
        for report in [
            suite_path_cost(6, 101).unwrap(),
            suite_log_gak(6, 102).unwrap(),
            suite_net(5, 103).unwrap(),
            suite_stn(5, 104).unwrap(),
            suite_plbench_h(6, 105).unwrap(),
            suite_rots_dual(6, 106).unwrap(),
        ] {
            assert!(report.passed(), "{report}");
        }
    }
}
