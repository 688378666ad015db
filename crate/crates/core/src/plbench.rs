//! Synthetic compositional min-max problems with an independent numerical
//! primal oracle. The block objective mirrors the training objective's
//! structure — a strongly convex primal term, a bilinear coupling, and a
//! log of a mean of Gaussian bumps — so the solver is exercised on the same
//! log-of-sum-of-exponentials composition, but where convergence can be
//! measured against a grid oracle:
//!
//!   phi_i(w, a_i) = (mu_w/2) ||w||^2 + w^T A a_i + lambda ln hbar_i(a_i),
//!   hbar_i(a)     = (1/m) sum_j exp(-||a - c_{i,j}||^2 / nu).
//!
//! The oracle is grid search plus shrinking-grid polish only; it shares no
//! gradient code with the solver.

use crate::error::CoreError;
use crate::rng;
use crate::scagda::{scagda_run, CompositionalProblem, Diagnostics, ScagdaParams};
use crate::trace::SolveTrace;
use crate::Result;
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlProblemSpec {
    /// Dual dimension per block (1 or 2: the oracle is a dense grid).
    pub d: usize,
    /// Number of dual blocks.
    pub n: usize,
    /// Inner components per block.
    pub m: usize,
    /// Primal dimension (rows of the coupling matrix; 1 or 2 so P* stays
    /// grid-searchable).
    pub primal_dim: usize,
    /// Primal curvature mu_w > 0.
    pub mu_w: f64,
    pub lambda_syn: f64,
    pub nu_syn: f64,
    /// Block base centers are drawn uniformly in [-center_spread, center_spread]^d.
    pub center_spread: f64,
    /// Component centers jitter around the block base by this much.
    pub center_jitter: f64,
    /// Coupling matrix entries are uniform in [-coupling_scale, coupling_scale].
    pub coupling_scale: f64,
    /// Half-width of the primal search box for the P* oracle.
    pub w_box: f64,
}

impl Default for PlProblemSpec {
    fn default() -> Self {
        PlProblemSpec {
            d: 2,
            n: 4,
            m: 4,
            primal_dim: 2,
            mu_w: 1.0,
            lambda_syn: 0.5,
            nu_syn: 1.0,
            center_spread: 1.0,
            center_jitter: 0.03,
            coupling_scale: 0.3,
            w_box: 3.0,
        }
    }
}

impl PlProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > 2 {
            return Err(CoreError::Arg(
                "dual dimension must be 1 or 2 (grid oracle)".into(),
            ));
        }
        if self.primal_dim == 0 || self.primal_dim > 2 {
            return Err(CoreError::Arg(
                "primal dimension must be 1 or 2 (grid oracle)".into(),
            ));
        }
        if self.n == 0 || self.m == 0 {
            return Err(CoreError::Arg("n and m must be >= 1".into()));
        }
        if !(self.mu_w > 0.0) {
            return Err(CoreError::Arg("mu_w must be positive".into()));
        }
        if !(self.nu_syn > 0.0) {
            return Err(CoreError::Arg("nu_syn must be positive".into()));
        }
        if !(self.lambda_syn > 0.0) {
            return Err(CoreError::Arg("lambda_syn must be positive".into()));
        }
        if !(self.w_box > 0.0) {
            return Err(CoreError::Arg("w_box must be positive".into()));
        }
        for v in [self.center_spread, self.center_jitter, self.coupling_scale] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CoreError::Arg(
                    "spread/jitter/coupling must be finite and >= 0".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlProblem {
    pub spec: PlProblemSpec,
    /// primal_dim x d coupling.
    pub a_mat: Array2<f64>,
    /// Per block: m x d component centers.
    pub centers: Vec<Array2<f64>>,
}

/// Instantiate the problem data from the spec; deterministic per seed.
pub fn build_pl_problem(spec: &PlProblemSpec, seed: u64) -> Result<PlProblem> {
    spec.validate()?;
    let mut r = rng::stream(seed, "plbench/build");
    let a_mat = Array2::from_shape_fn((spec.primal_dim, spec.d), |_| {
        r.random_range(-spec.coupling_scale..=spec.coupling_scale)
    });
    let mut centers = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let base: Vec<f64> = (0..spec.d)
            .map(|_| r.random_range(-spec.center_spread..=spec.center_spread))
            .collect();
        centers.push(Array2::from_shape_fn((spec.m, spec.d), |(_, c)| {
            base[c] + spec.center_jitter * r.random_range(-1.0..=1.0)
        }));
    }
    Ok(PlProblem {
        spec: spec.clone(),
        a_mat,
        centers,
    })
}

impl PlProblem {
    /// One Gaussian-bump component h_{i,j}(a).
    pub fn h_component(&self, a: &[f64], i: usize, j: usize) -> f64 {
        let c = self.centers[i].row(j);
        let sq: f64 = a.iter().zip(c.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        (-sq / self.spec.nu_syn).exp()
    }

    /// Gradient of h_{i,j} with respect to a.
    pub fn grad_h_component(&self, a: &[f64], i: usize, j: usize) -> Array1<f64> {
        let c = self.centers[i].row(j);
        let h = self.h_component(a, i, j);
        Array1::from_iter(
            a.iter()
                .zip(c.iter())
                .map(|(x, y)| -2.0 * (x - y) / self.spec.nu_syn * h),
        )
    }

    /// Exact inner mean hbar_i(a) = (1/m) sum_j h_{i,j}(a).
    pub fn h_mean(&self, a: &[f64], i: usize) -> f64 {
        (0..self.spec.m)
            .map(|j| self.h_component(a, i, j))
            .sum::<f64>()
            / self.spec.m as f64
    }

    /// The a-dependent part of phi_i given atw = A^T w:
    /// q_i(a) = atw . a + lambda ln hbar_i(a).
    fn q(&self, atw: &[f64], a: &[f64], i: usize) -> f64 {
        let dot: f64 = atw.iter().zip(a).map(|(x, y)| x * y).sum();
        dot + self.spec.lambda_syn * self.h_mean(a, i).ln()
    }

    fn atw(&self, w: &[f64]) -> Vec<f64> {
        (0..self.spec.d)
            .map(|c| (0..w.len()).map(|r| self.a_mat[[r, c]] * w[r]).sum())
            .collect()
    }

    fn w_quad(&self, w: &[f64]) -> f64 {
        0.5 * self.spec.mu_w * w.iter().map(|x| x * x).sum::<f64>()
    }

    /// Exact block objective phi_i(w, a_i).
    pub fn phi(&self, w: &[f64], a_i: &[f64], i: usize) -> f64 {
        self.w_quad(w) + self.q(&self.atw(w), a_i, i)
    }

    /// The dual search box for block i: all its centers padded by 5 sqrt(nu).
    fn block_box(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let pad = 5.0 * self.spec.nu_syn.sqrt();
        let c = &self.centers[i];
        let mut lo = vec![f64::INFINITY; self.spec.d];
        let mut hi = vec![f64::NEG_INFINITY; self.spec.d];
        for j in 0..self.spec.m {
            for k in 0..self.spec.d {
                lo[k] = lo[k].min(c[[j, k]]);
                hi[k] = hi[k].max(c[[j, k]]);
            }
        }
        for k in 0..self.spec.d {
            lo[k] -= pad;
            hi[k] += pad;
        }
        (lo, hi)
    }
}

impl CompositionalProblem for PlProblem {
    fn n(&self) -> usize {
        self.spec.n
    }
    fn m(&self) -> usize {
        self.spec.m
    }
    fn primal_dim(&self) -> usize {
        self.spec.primal_dim
    }
    fn dual_dim(&self) -> usize {
        self.spec.d
    }
    fn h_dim(&self) -> usize {
        1
    }

    /// grad_w f_i = mu_w w + A a_i (exact per block; stochasticity comes from
    /// the solver's block subsampling).
    fn primal_grad(&self, w: &[f64], a_i: &[f64], _i: usize) -> Result<Vec<f64>> {
        let mut g = vec![0.0; w.len()];
        for (r, gr) in g.iter_mut().enumerate() {
            let mut acc = self.spec.mu_w * w[r];
            for (c, ac) in a_i.iter().enumerate() {
                acc += self.a_mat[[r, c]] * ac;
            }
            *gr = acc;
        }
        Ok(g)
    }

    /// grad_a f_i = A^T w.
    fn dual_f_grad(&self, w: &[f64], a_i: &[f64], _i: usize) -> Result<Vec<f64>> {
        let _ = a_i;
        Ok(self.atw(w))
    }

    fn h_value(&self, a_i: &[f64], i: usize, j: usize) -> Result<Vec<f64>> {
        Ok(vec![self.h_component(a_i, i, j)])
    }

    fn h_jvp(&self, a_i: &[f64], i: usize, j: usize, v: &[f64]) -> Result<Vec<f64>> {
        let g = self.grad_h_component(a_i, i, j);
        Ok(g.iter().map(|x| x * v[0]).collect())
    }

    /// g(u) = -lambda ln u, so grad g(u) = -lambda / u.
    fn g_grad(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u[0] <= 0.0 {
            return Err(CoreError::State(format!(
                "g_grad needs a positive moving average, got {}",
                u[0]
            )));
        }
        Ok(vec![-self.spec.lambda_syn / u[0]])
    }

    fn objective_sample(&self, w: &[f64], a_i: &[f64], i: usize) -> Result<f64> {
        Ok(self.phi(w, a_i, i))
    }
}

/// Result of one oracle evaluation.
#[derive(Debug, Clone, Copy)]
pub struct PrimalEval {
    pub value: f64,
    /// True when a full-box scan peaked on the box edge (box too small).
    pub boundary: bool,
}

/// One block's precomputed scan grid: point coordinates and the
/// w-independent part lambda * ln hbar_i at each point.
struct BlockGrid {
    points: Vec<Vec<f64>>,
    lam_ln_h: Vec<f64>,
    /// Marks points on the outer shell of the box.
    on_edge: Vec<bool>,
    /// Largest per-axis cell size, seeding the local polish radius.
    cell: f64,
}

fn build_block_grid(problem: &PlProblem, i: usize, res: usize) -> BlockGrid {
    let d = problem.spec.d;
    let (lo, hi) = problem.block_box(i);
    let step: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / (res - 1) as f64).collect();
    let mut points = Vec::new();
    let mut lam_ln_h = Vec::new();
    let mut on_edge = Vec::new();
    let mut idx = vec![0usize; d];
    'outer: loop {
        let a: Vec<f64> = (0..d).map(|k| lo[k] + idx[k] as f64 * step[k]).collect();
        lam_ln_h.push(problem.spec.lambda_syn * problem.h_mean(&a, i).ln());
        on_edge.push(idx.iter().any(|&q| q == 0 || q == res - 1));
        points.push(a);
        let mut k = 0;
        loop {
            if k == d {
                break 'outer;
            }
            idx[k] += 1;
            if idx[k] < res {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
    let cell = step.iter().cloned().fold(0.0, f64::max);
    BlockGrid {
        points,
        lam_ln_h,
        on_edge,
        cell,
    }
}

/// Shrinking-grid polish of q_i around `start`: 5 points per axis, radius
/// halved each round until it drops below `stop_radius`. Pure evaluations.
fn polish_block(
    problem: &PlProblem,
    i: usize,
    atw: &[f64],
    start: &[f64],
    start_value: f64,
    start_radius: f64,
    stop_radius: f64,
) -> f64 {
    let d = problem.spec.d;
    let mut best = start_value;
    let mut best_a = start.to_vec();
    let mut radius = start_radius;
    while radius > stop_radius {
        let res = 5usize;
        let mut idx = vec![0usize; d];
        let center = best_a.clone();
        'scan: loop {
            let a: Vec<f64> = (0..d)
                .map(|k| center[k] - radius + idx[k] as f64 * (2.0 * radius / (res - 1) as f64))
                .collect();
            let v = problem.q(atw, &a, i);
            if v > best {
                best = v;
                best_a = a;
            }
            let mut k = 0;
            loop {
                if k == d {
                    break 'scan;
                }
                idx[k] += 1;
                if idx[k] < res {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
        radius *= 0.5;
    }
    best
}

/// Reusable primal-function oracle: the w-independent grids are computed
/// once, so repeated P(w) evaluations only pay a dot product per grid point
/// plus the local polish.
pub struct CachedPrimalOracle<'p> {
    problem: &'p PlProblem,
    blocks: Vec<BlockGrid>,
    refine: bool,
}

impl<'p> CachedPrimalOracle<'p> {
    pub fn new(problem: &'p PlProblem, grid_res: usize, refine: bool) -> Result<Self> {
        if grid_res < 3 {
            return Err(CoreError::Arg("grid resolution must be >= 3".into()));
        }
        let blocks = (0..problem.spec.n)
            .map(|i| build_block_grid(problem, i, grid_res))
            .collect();
        Ok(CachedPrimalOracle {
            problem,
            blocks,
            refine,
        })
    }

    pub fn eval(&self, w: &[f64]) -> Result<PrimalEval> {
        if w.len() != self.problem.spec.primal_dim {
            return Err(CoreError::Shape("w has the wrong dimension".into()));
        }
        let atw = self.problem.atw(w);
        let mut total = 0.0;
        let mut boundary = false;
        for (i, grid) in self.blocks.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0;
            for (p, (point, lam)) in grid.points.iter().zip(&grid.lam_ln_h).enumerate() {
                let v: f64 = atw.iter().zip(point).map(|(x, y)| x * y).sum::<f64>() + lam;
                if v > best {
                    best = v;
                    best_idx = p;
                }
            }
            boundary |= grid.on_edge[best_idx];
            if self.refine {
                best = polish_block(
                    self.problem,
                    i,
                    &atw,
                    &grid.points[best_idx],
                    best,
                    2.0 * grid.cell,
                    1e-4,
                );
            }
            total += best;
        }
        Ok(PrimalEval {
            value: self.problem.w_quad(w) + total / self.problem.spec.n as f64,
            boundary,
        })
    }
}

/// The primal function P(w) = (1/n) sum_i max_a phi_i(w, a), inner maxima by
/// dense grid scan over each block box plus (when `refine`) local polish.
pub fn primal_oracle(
    problem: &PlProblem,
    w: &[f64],
    grid_res: usize,
    refine: bool,
) -> Result<PrimalEval> {
    let eval = CachedPrimalOracle::new(problem, grid_res, refine)?;
    let e = eval.eval(w)?;
    if e.boundary {
        log::warn!("primal_oracle: inner maximizer on the box edge; box too small");
    }
    Ok(e)
}

/// P* = min_w P(w) by grid-plus-shrinking-polish over [-w_box, w_box]^pd.
/// Returns (P*, argmin, boundary_flag).
pub fn p_star(problem: &PlProblem, grid_res: usize) -> Result<(f64, Vec<f64>, bool)> {
    let oracle = CachedPrimalOracle::new(problem, grid_res, true)?;
    let pd = problem.spec.primal_dim;
    let b = problem.spec.w_box;
    let mut best = f64::INFINITY;
    let mut best_w = vec![0.0; pd];
    // Only the incumbent's flag matters: a truncated inner max elsewhere
    // under-reports a value that was not the minimum anyway.
    let mut best_boundary = false;

    // Full-box scan at 15 points per axis.
    let res = 15usize;
    let mut idx = vec![0usize; pd];
    'outer: loop {
        let w: Vec<f64> = (0..pd)
            .map(|k| -b + idx[k] as f64 * (2.0 * b / (res - 1) as f64))
            .collect();
        let e = oracle.eval(&w)?;
        if e.value < best {
            best = e.value;
            best_w = w.clone();
            best_boundary = e.boundary;
        }
        let mut k = 0;
        loop {
            if k == pd {
                break 'outer;
            }
            idx[k] += 1;
            if idx[k] < res {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }

    // Shrinking local grids around the incumbent.
    let mut radius = 2.0 * (2.0 * b / (res - 1) as f64);
    while radius > 1e-5 {
        let loc = 5usize;
        let center = best_w.clone();
        let mut idx = vec![0usize; pd];
        'scan: loop {
            let w: Vec<f64> = (0..pd)
                .map(|k| center[k] - radius + idx[k] as f64 * (2.0 * radius / (loc - 1) as f64))
                .collect();
            let e = oracle.eval(&w)?;
            if e.value < best {
                best = e.value;
                best_w = w.clone();
                best_boundary = e.boundary;
            }
            let mut k = 0;
            loop {
                if k == pd {
                    break 'scan;
                }
                idx[k] += 1;
                if idx[k] < loc {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
        radius *= 0.5;
    }
    let boundary =
        best_boundary || best_w.iter().any(|&w| w.abs() >= b - 1e-9);
    if boundary {
        log::warn!("p_star: minimizer on a box edge; enlarge w_box or the block boxes");
    }
    Ok((best, best_w, boundary))
}

#[derive(Debug)]
pub struct BenchReport {
    pub trace: SolveTrace,
    pub p_star: f64,
    pub final_gap: f64,
    pub final_ma_error: f64,
    /// Pearson correlation between the gap and MA-error columns over the
    /// final half of the recorded rows.
    pub tail_correlation: f64,
    pub boundary_warned: bool,
}

impl BenchReport {
    pub fn summary_csv(&self) -> String {
        format!(
            "P_star,final_gap,final_ma_error,tail_correlation\n{},{},{},{}\n",
            self.p_star, self.final_gap, self.final_ma_error, self.tail_correlation
        )
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Oracle grid resolution used by the bench diagnostics.
pub const BENCH_GRID_RES: usize = 41;

/// Build the problem, locate P* with the independent oracle, run SCAGDA with
/// gap/MA diagnostics attached, and summarize.
pub fn run_bench(spec: &PlProblemSpec, params: &ScagdaParams, seed: u64) -> Result<BenchReport> {
    let problem = build_pl_problem(spec, seed)?;
    let oracle = CachedPrimalOracle::new(&problem, BENCH_GRID_RES, true)?;
    let (star, _w_star, boundary) = p_star(&problem, BENCH_GRID_RES)?;
    let diag = Diagnostics::new()
        .with_exact_p(|w: &[f64]| oracle.eval(w).map(|e| e.value))
        .with_p_star(star)
        .with_exact_h(|a: &[f64], i: usize| Ok(vec![problem.h_mean(a, i)]));
    let init_w = vec![0.0; spec.primal_dim];
    let init_a = vec![vec![0.0; spec.d]; spec.n];
    let out = scagda_run(&problem, params, init_w, init_a, Some(&diag))?;
    let trace = out.trace;
    let final_gap = trace
        .final_gap()
        .ok_or_else(|| CoreError::State("bench trace carries no primal-gap diagnostics".into()))?;
    let final_ma_error = trace
        .final_ma_error()
        .ok_or_else(|| CoreError::State("bench trace carries no MA-error diagnostics".into()))?;
    let rows: Vec<_> = trace
        .rows
        .iter()
        .filter(|r| r.primal_gap.is_some() && r.ma_error.is_some())
        .collect();
    let tail = &rows[rows.len() / 2..];
    let gaps: Vec<f64> = tail.iter().filter_map(|r| r.primal_gap).collect();
    let mas: Vec<f64> = tail.iter().filter_map(|r| r.ma_error).collect();
    let tail_correlation = pearson(&gaps, &mas);
    Ok(BenchReport {
        trace,
        p_star: star,
        final_gap,
        final_ma_error,
        tail_correlation,
        boundary_warned: boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1_spec() -> PlProblemSpec {
        PlProblemSpec {
            m: 1,
            ..PlProblemSpec::default()
        }
    }

    #[test]
    fn h_component_is_one_at_its_center() {
        let p = build_pl_problem(&PlProblemSpec::default(), 3).unwrap();
        for i in 0..p.spec.n {
            for j in 0..p.spec.m {
                let c: Vec<f64> = p.centers[i].row(j).to_vec();
                assert!((p.h_component(&c, i, j) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn m_equals_one_makes_the_sampled_h_exact() {
        let p = build_pl_problem(&m1_spec(), 5).unwrap();
        let a = [0.3, -0.7];
        for i in 0..p.spec.n {
            assert_eq!(p.h_component(&a, i, 0), p.h_mean(&a, i));
        }
    }

    #[test]
    fn grad_h_matches_finite_differences() {
        let p = build_pl_problem(&PlProblemSpec::default(), 7).unwrap();
        let a = [0.4, 0.9];
        let eps = 1e-6;
        for i in 0..p.spec.n {
            for j in 0..p.spec.m {
                let g = p.grad_h_component(&a, i, j);
                for k in 0..2 {
                    let mut ap = a;
                    ap[k] += eps;
                    let fp = p.h_component(&ap, i, j);
                    ap[k] -= 2.0 * eps;
                    let fm = p.h_component(&ap, i, j);
                    let fd = (fp - fm) / (2.0 * eps);
                    assert!(
                        (g[k] - fd).abs() <= 1e-6 * fd.abs().max(1e-6),
                        "block {i} comp {j} coord {k}: {} vs {fd}",
                        g[k]
                    );
                }
            }
        }
    }

    /// With m = 1 the inner maximization has the closed form
    /// a* = c + (nu / (2 lambda)) A^T w, because
    /// phi_i = const(w) + w^T A a - (lambda/nu) ||a - c||^2.
    #[test]
    fn primal_oracle_matches_the_m1_closed_form() {
        let spec = m1_spec();
        let p = build_pl_problem(&spec, 11).unwrap();
        let w = [0.5, -0.8];
        let mut expected = 0.0;
        for i in 0..spec.n {
            let c: Vec<f64> = p.centers[i].row(0).to_vec();
            let mut a_star = c.clone();
            for k in 0..spec.d {
                let mut atw = 0.0;
                for r in 0..spec.primal_dim {
                    atw += p.a_mat[[r, k]] * w[r];
                }
                a_star[k] += spec.nu_syn / (2.0 * spec.lambda_syn) * atw;
            }
            expected += p.phi(&w, &a_star, i);
        }
        expected /= spec.n as f64;
        let got = primal_oracle(&p, &w, 41, true).unwrap();
        assert!(
            (got.value - expected).abs() < 1e-6,
            "oracle {} vs closed form {expected}",
            got.value
        );
        assert!(!got.boundary);
    }

    #[test]
    fn coarse_and_fine_grids_agree_after_refinement() {
        let p = build_pl_problem(&PlProblemSpec::default(), 13).unwrap();
        let w = [0.2, 0.1];
        let a = primal_oracle(&p, &w, 31, true).unwrap().value;
        let b = primal_oracle(&p, &w, 61, true).unwrap().value;
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }

    #[test]
    fn decoupled_problem_has_w_independent_inner_max() {
        let spec = PlProblemSpec {
            coupling_scale: 0.0, // A = 0
            ..PlProblemSpec::default()
        };
        let p = build_pl_problem(&spec, 17).unwrap();
        let p0 = primal_oracle(&p, &[0.0, 0.0], 41, true).unwrap().value;
        let p1 = primal_oracle(&p, &[1.0, -0.5], 41, true).unwrap().value;
        let quad = 0.5 * spec.mu_w * (1.0 * 1.0 + 0.5 * 0.5);
        assert!((p1 - p0 - quad).abs() < 1e-6);
    }

    #[test]
    fn boundary_is_flagged_when_the_box_is_too_small() {
        // Huge coupling drags the maximizer past the padded box.
        let spec = m1_spec();
        let mut p = build_pl_problem(&spec, 19).unwrap();
        p.a_mat = Array2::from_elem((2, 2), 50.0);
        let e = primal_oracle(&p, &[1.0, 1.0], 21, false).unwrap();
        assert!(e.boundary);
    }

    #[test]
    fn beta_one_moving_average_equals_a_single_component() {
        let spec = PlProblemSpec::default();
        let p = build_pl_problem(&spec, 23).unwrap();
        let mut params = ScagdaParams::new(1e-3, 1e-3, 1.0, 1, 29);
        params.trace_every = 1;
        let init_a = vec![vec![0.1; spec.d]; spec.n];
        let out = scagda_run(&p, &params, vec![0.0; 2], init_a.clone(), None).unwrap();
        // Exactly one block was touched; its omega must equal one of the
        // component values h_{i,j}(a_i) bit-for-bit (beta = 1 replacement),
        // so the per-block MA error is the single-sample deviation.
        let touched: Vec<usize> = (0..spec.n).filter(|&i| out.omega[i][0] != 0.0).collect();
        assert_eq!(touched.len(), 1);
        let i = touched[0];
        let matches = (0..spec.m)
            .any(|j| out.omega[i][0].to_bits() == p.h_component(&init_a[i], i, j).to_bits());
        assert!(matches, "omega is not any single-component h value");
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let s = PlProblemSpec::default();
        let a = build_pl_problem(&s, 31).unwrap();
        let b = build_pl_problem(&s, 31).unwrap();
        let c = build_pl_problem(&s, 32).unwrap();
        assert_eq!(a.a_mat, b.a_mat);
        assert_eq!(a.centers, b.centers);
        assert_ne!(a.a_mat, c.a_mat);
    }

    #[test]
    fn spec_validation_rejects_bad_dimensions() {
        let mut s = PlProblemSpec::default();
        s.d = 3;
        assert!(s.validate().is_err());
        let mut s = PlProblemSpec::default();
        s.mu_w = 0.0;
        assert!(s.validate().is_err());
        let mut s = PlProblemSpec::default();
        s.nu_syn = -1.0;
        assert!(s.validate().is_err());
    }

    /// Short smoke run of the full bench plumbing (the acceptance test runs
    /// the long, thresholded version).
    #[test]
    fn bench_smoke_run_produces_finite_diagnostics() {
        let spec = PlProblemSpec::default();
        let mut params = ScagdaParams::new(5e-3, 5e-3, 0.5, 2000, 37);
        params.trace_every = 200;
        let report = run_bench(&spec, &params, 41).unwrap();
        assert!(report.p_star.is_finite());
        assert!(report.final_gap.is_finite());
        assert!(report.final_ma_error.is_finite());
        assert!(!report.boundary_warned);
        let first_gap = report.trace.rows.iter().find_map(|r| r.primal_gap).unwrap();
        assert!(
            report.final_gap < first_gap,
            "gap did not decrease: {} -> {}",
            first_gap,
            report.final_gap
        );
    }
}
