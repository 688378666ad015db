//! Generic SCAGDA solver for compositional min-max problems of the form
//! min_w max_a (1/n) sum_i [ f_i(w, a_i) - g((1/m) sum_j h_{i,j}(a_i)) ],
//! with a per-block moving average omega_i standing in for the inner sum.

use crate::error::CoreError;
use crate::rng::{self, streams};
use crate::trace::{SolveTrace, TraceRow};
use crate::Result;
use rand::Rng;

/// Problem interface consumed by [`scagda_run`]. All sampling indices are
/// drawn by the solver; implementations must be deterministic functions of
/// their arguments.
pub trait CompositionalProblem {
    /// Number of dual blocks.
    fn n(&self) -> usize;
    /// Inner components per block.
    fn m(&self) -> usize;
    fn primal_dim(&self) -> usize;
    /// Dimension of each dual block a_i.
    fn dual_dim(&self) -> usize;
    /// Dimension of the h range (1 for scalar compositions).
    fn h_dim(&self) -> usize;

    /// Stochastic primal gradient: grad_w f_i(w, a_i).
    fn primal_grad(&self, w: &[f64], a_i: &[f64], i: usize) -> Result<Vec<f64>>;
    /// Stochastic dual gradient of the f part: grad_a f_i(w, a_i).
    fn dual_f_grad(&self, w: &[f64], a_i: &[f64], i: usize) -> Result<Vec<f64>>;
    /// One inner component h_{i,j}(a_i).
    fn h_value(&self, a_i: &[f64], i: usize, j: usize) -> Result<Vec<f64>>;
    /// Jacobian-vector product grad h_{i,j}(a_i)^T v with v in the h range.
    fn h_jvp(&self, a_i: &[f64], i: usize, j: usize, v: &[f64]) -> Result<Vec<f64>>;
    /// grad g(u) on the h range.
    fn g_grad(&self, u: &[f64]) -> Result<Vec<f64>>;
    /// Sampled objective phi_i(w, a_i), used only for trace rows.
    fn objective_sample(&self, w: &[f64], a_i: &[f64], i: usize) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub struct ScagdaParams {
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub k: usize,
    pub seed: u64,
    /// Record a trace row (and diagnostics) every this many iterations.
    pub trace_every: usize,
    /// Replace omega with the sampled h on a block's first touch instead of
    /// averaging from zero. Off by default: omega starts at 0, and the update
    /// order already guarantees omega > 0 before g_grad sees it whenever
    /// beta > 0 and h > 0.
    pub first_touch_replace: bool,
}

impl ScagdaParams {
    pub fn new(eta: f64, gamma: f64, beta: f64, k: usize, seed: u64) -> ScagdaParams {
        ScagdaParams {
            eta,
            gamma,
            beta,
            k,
            seed,
            trace_every: 1,
            first_touch_replace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(CoreError::Arg("eta must be positive and finite".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(CoreError::Arg("gamma must be positive and finite".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(CoreError::Arg("beta must be in (0, 1]".into()));
        }
        if self.k == 0 {
            return Err(CoreError::Arg("iteration budget must be >= 1".into()));
        }
        if self.trace_every == 0 {
            return Err(CoreError::Arg("trace_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Moving-average update `(1 - beta) * omega + beta * value`.
pub fn ma_update(omega: &mut [f64], value: &[f64], beta: f64) {
    for (o, v) in omega.iter_mut().zip(value) {
        *o = (1.0 - beta) * *o + beta * v;
    }
}

/// Optional exact oracles, evaluated at the trace cadence.
#[derive(Default)]
pub struct Diagnostics<'a> {
    /// Exact primal function P(w) = max_a (1/n) sum_i phi_i(w, a_i).
    pub exact_p: Option<Box<dyn Fn(&[f64]) -> Result<f64> + 'a>>,
    /// Independently computed P* = min_w P(w); the gap column is
    /// P(w_k) - P* and needs both oracles.
    pub p_star: Option<f64>,
    /// Exact inner mean h_i(a_i); enables the MA-error column
    /// sum_i ||omega_i - h_i(a_i)||^2.
    pub exact_h: Option<Box<dyn Fn(&[f64], usize) -> Result<Vec<f64>> + 'a>>,
}

impl<'a> Diagnostics<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exact_p(mut self, f: impl Fn(&[f64]) -> Result<f64> + 'a) -> Self {
        self.exact_p = Some(Box::new(f));
        self
    }

    pub fn with_p_star(mut self, p_star: f64) -> Self {
        self.p_star = Some(p_star);
        self
    }

    pub fn with_exact_h(
        mut self,
        f: impl Fn(&[f64], usize) -> Result<Vec<f64>> + 'a,
    ) -> Self {
        self.exact_h = Some(Box::new(f));
        self
    }
}

#[derive(Debug)]
pub struct ScagdaOutput {
    pub w: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub trace: SolveTrace,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Run Algorithm-style SCAGDA. Per iteration, with all four indices drawn
/// up front from one ChaCha stream (`i1, i2, j1, j2` in that order):
///   1. primal descent  w_{k+1} = w_k - eta * grad_w f_{i1}(w_k, a_{i1});
///   2. moving average  omega_{i2} <- (1-beta) omega_{i2} + beta h_{i2,j1}(a_{i2});
///   3. dual ascent     a_{i2} += gamma * (grad_a f_{i2}(w_{k+1}, a_{i2})
///                                          - h_jvp_{j2}(a_{i2}, g_grad(omega_{i2})));
/// note the dual gradient is evaluated at the NEW primal iterate (alternating
/// order), and only block i2 moves. Non-finite iterates abort with the trace
/// collected so far.
pub fn scagda_run<P: CompositionalProblem>(
    problem: &P,
    params: &ScagdaParams,
    init_w: Vec<f64>,
    init_a: Vec<Vec<f64>>,
    diag: Option<&Diagnostics>,
) -> Result<ScagdaOutput> {
    params.validate()?;
    let (n, m) = (problem.n(), problem.m());
    if n == 0 || m == 0 {
        return Err(CoreError::Arg("problem must have n >= 1, m >= 1".into()));
    }
    if init_w.len() != problem.primal_dim() {
        return Err(CoreError::Shape(format!(
            "init_w has length {}, problem wants {}",
            init_w.len(),
            problem.primal_dim()
        )));
    }
    if init_a.len() != n || init_a.iter().any(|a| a.len() != problem.dual_dim()) {
        return Err(CoreError::Shape(
            "init_a must hold n blocks of dual_dim each".into(),
        ));
    }
    let mut w = init_w;
    let mut a = init_a;
    let mut omega = vec![vec![0.0; problem.h_dim()]; n];
    let mut touched = vec![false; n];
    let mut trace = SolveTrace::new();
    trace.note("solver", "scagda");
    trace.note("eta", params.eta);
    trace.note("gamma", params.gamma);
    trace.note("beta", params.beta);
    trace.note("seed", params.seed);
    let mut r = rng::stream(params.seed, streams::SCAGDA);

    // Pre-loop row: the k=0 state, so 'initial value' comparisons have an anchor.
    {
        let obj = problem.objective_sample(&w, &a[0], 0)?;
        let g0 = problem.primal_grad(&w, &a[0], 0)?;
        let mut row = TraceRow::new(0, obj, norm2(&g0));
        record_diagnostics(&mut row, diag, &w, &a, &omega)?;
        trace.push(row);
    }

    for k in 0..params.k {
        let i1 = r.random_range(0..n);
        let i2 = r.random_range(0..n);
        let j1 = r.random_range(0..m);
        let j2 = r.random_range(0..m);

        // Primal descent at w_k.
        let gw = problem.primal_grad(&w, &a[i1], i1)?;
        if gw.len() != w.len() {
            return Err(CoreError::Shape("primal gradient length mismatch".into()));
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= params.eta * gi;
        }

        // Moving average on block i2 only.
        let h = problem.h_value(&a[i2], i2, j1)?;
        if h.len() != omega[i2].len() {
            return Err(CoreError::Shape("h value length mismatch".into()));
        }
        if params.first_touch_replace && !touched[i2] {
            omega[i2].copy_from_slice(&h);
        } else {
            ma_update(&mut omega[i2], &h, params.beta);
        }
        touched[i2] = true;

        let record = (k + 1) % params.trace_every == 0 || k + 1 == params.k;
        // MA error is measured after the omega update, against the a that fed it.
        let ma_error = match (record, diag.and_then(|d| d.exact_h.as_ref())) {
            (true, Some(hf)) => {
                let mut acc = 0.0;
                for i in 0..n {
                    let hi = hf(&a[i], i)?;
                    acc += omega[i]
                        .iter()
                        .zip(&hi)
                        .map(|(o, h)| (o - h) * (o - h))
                        .sum::<f64>();
                }
                Some(acc / n as f64)
            }
            _ => None,
        };

        // Dual ascent on block i2, at the new primal iterate.
        let gf = problem.dual_f_grad(&w, &a[i2], i2)?;
        let gg = problem.g_grad(&omega[i2])?;
        let jvp = problem.h_jvp(&a[i2], i2, j2, &gg)?;
        if gf.len() != a[i2].len() || jvp.len() != a[i2].len() {
            return Err(CoreError::Shape("dual gradient length mismatch".into()));
        }
        for (ai, (f, hv)) in a[i2].iter_mut().zip(gf.iter().zip(&jvp)) {
            *ai += params.gamma * (f - hv);
        }

        if !all_finite(&w) || !all_finite(&a[i2]) || !all_finite(&omega[i2]) {
            return Err(CoreError::Diverged {
                iteration: k + 1,
                trace: Box::new(trace),
            });
        }

        if record {
            let obj = problem.objective_sample(&w, &a[i1], i1)?;
            let mut row = TraceRow::new(k + 1, obj, norm2(&gw));
            row.ma_error = ma_error;
            if let (Some(pf), Some(p_star)) =
                (diag.and_then(|d| d.exact_p.as_ref()), diag.and_then(|d| d.p_star))
            {
                row.primal_gap = Some(pf(&w)? - p_star);
            }
            trace.push(row);
        }
    }

    Ok(ScagdaOutput {
        w,
        a,
        omega,
        trace,
    })
}

fn record_diagnostics(
    row: &mut TraceRow,
    diag: Option<&Diagnostics>,
    w: &[f64],
    a: &[Vec<f64>],
    omega: &[Vec<f64>],
) -> Result<()> {
    if let Some(d) = diag {
        if let (Some(pf), Some(p_star)) = (d.exact_p.as_ref(), d.p_star) {
            row.primal_gap = Some(pf(w)? - p_star);
        }
        if let Some(hf) = d.exact_h.as_ref() {
            let mut acc = 0.0;
            for (i, ai) in a.iter().enumerate() {
                let hi = hf(ai, i)?;
                acc += omega[i]
                    .iter()
                    .zip(&hi)
                    .map(|(o, h)| (o - h) * (o - h))
                    .sum::<f64>();
            }
            row.ma_error = Some(acc / a.len().max(1) as f64);
        }
    }
    Ok(())
}
