//! DTW and GAK dynamic programs and exact gradients of the log-kernel.

use super::{
    check_band_feasible, check_channels, enumerate_alignments, grad_path_cost, in_band, median,
    path_cost, Alignment, AlignmentSet, GakParams, Norm,
};
use crate::error::CoreError;
use crate::Result;
use ndarray::Array2;

/// Exhaustive log-kernel gradients are limited to this length.
pub const GRAD_ENUM_GUARD_T: usize = 8;

fn cost_matrix(x: &Array2<f64>, y: &Array2<f64>, p: Norm) -> Result<Array2<f64>> {
    check_channels(x, y)?;
    let (t1, t2) = (x.ncols(), y.ncols());
    if t1 == 0 || t2 == 0 {
        return Err(CoreError::Arg("series lengths must be >= 1".into()));
    }
    let mut costs = Array2::zeros((t1, t2));
    for i in 0..t1 {
        for j in 0..t2 {
            costs[[i, j]] = p.eval(x.column(i), y.column(j));
        }
    }
    Ok(costs)
}

/// Minimum-cost alignment via the O(T1*T2) dynamic program, with the argmin
/// path recovered by backtracking. Ties prefer the diagonal predecessor, then
/// the first-series advance.
pub fn dtw_distance(
    x: &Array2<f64>,
    y: &Array2<f64>,
    p: Norm,
    band: Option<f64>,
) -> Result<(f64, Alignment)> {
    let costs = cost_matrix(x, y, p)?;
    let (t1, t2) = costs.dim();
    check_band_feasible(t1, t2, band)?;
    let mut dp = Array2::from_elem((t1, t2), f64::INFINITY);
    let mut choice = Array2::from_elem((t1, t2), 3u8); // 0 diag, 1 up, 2 left, 3 none
    for i in 0..t1 {
        for j in 0..t2 {
            if !in_band(i, j, band) {
                continue;
            }
            if i == 0 && j == 0 {
                dp[[0, 0]] = costs[[0, 0]];
                continue;
            }
            let mut best = f64::INFINITY;
            let mut who = 3u8;
            if i > 0 && j > 0 && dp[[i - 1, j - 1]] < best {
                best = dp[[i - 1, j - 1]];
                who = 0;
            }
            if i > 0 && dp[[i - 1, j]] < best {
                best = dp[[i - 1, j]];
                who = 1;
            }
            if j > 0 && dp[[i, j - 1]] < best {
                best = dp[[i, j - 1]];
                who = 2;
            }
            if who != 3 {
                dp[[i, j]] = costs[[i, j]] + best;
                choice[[i, j]] = who;
            }
        }
    }
    let total = dp[[t1 - 1, t2 - 1]];
    if !total.is_finite() {
        return Err(CoreError::Numeric(
            "DTW accumulation is not finite".into(),
        ));
    }
    let mut cells = vec![(t1 - 1, t2 - 1)];
    let (mut i, mut j) = (t1 - 1, t2 - 1);
    while i != 0 || j != 0 {
        match choice[[i, j]] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            2 => j -= 1,
            _ => unreachable!("reachable cells have a predecessor"),
        }
        cells.push((i, j));
    }
    cells.reverse();
    Ok((total, Alignment::from_cells(&cells)))
}

fn logsumexp3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}

/// Linear-space forward pass. Returns `None` when the accumulation degenerates
/// (underflow to zero or overflow), in which case the caller retries in log space.
fn gak_forward_linear(costs: &Array2<f64>, nu: f64, band: Option<f64>) -> Option<f64> {
    let (t1, t2) = costs.dim();
    let mut m = Array2::zeros((t1, t2));
    for i in 0..t1 {
        for j in 0..t2 {
            if !in_band(i, j, band) {
                continue;
            }
            let kappa = (-costs[[i, j]] / nu).exp();
            if i == 0 && j == 0 {
                m[[0, 0]] = kappa;
                continue;
            }
            let mut pred = 0.0;
            if i > 0 {
                pred += m[[i - 1, j]];
            }
            if j > 0 {
                pred += m[[i, j - 1]];
            }
            if i > 0 && j > 0 {
                pred += m[[i - 1, j - 1]];
            }
            m[[i, j]] = kappa * pred;
        }
    }
    let k = m[[t1 - 1, t2 - 1]];
    if k > 0.0 && k.is_finite() {
        Some(k)
    } else {
        None
    }
}

/// Log-space forward pass. Out-of-band cells carry `-inf` mass.
fn gak_forward_log(costs: &Array2<f64>, nu: f64, band: Option<f64>) -> Result<f64> {
    let (t1, t2) = costs.dim();
    let mut lm = Array2::from_elem((t1, t2), f64::NEG_INFINITY);
    for i in 0..t1 {
        for j in 0..t2 {
            if !in_band(i, j, band) {
                continue;
            }
            let lkappa = -costs[[i, j]] / nu;
            if i == 0 && j == 0 {
                lm[[0, 0]] = lkappa;
                continue;
            }
            let up = if i > 0 { lm[[i - 1, j]] } else { f64::NEG_INFINITY };
            let left = if j > 0 { lm[[i, j - 1]] } else { f64::NEG_INFINITY };
            let diag = if i > 0 && j > 0 {
                lm[[i - 1, j - 1]]
            } else {
                f64::NEG_INFINITY
            };
            lm[[i, j]] = lkappa + logsumexp3(diag, up, left);
        }
    }
    let log_k = lm[[t1 - 1, t2 - 1]];
    if log_k.is_nan() || log_k == f64::INFINITY {
        return Err(CoreError::Numeric(
            "GAK log-space accumulation is not finite".into(),
        ));
    }
    Ok(log_k)
}

struct GakDpOut {
    log_k: f64,
    /// Set when the linear-space pass succeeded; bit-exact kernel value.
    linear_k: Option<f64>,
}

/// Run the forward DP, selecting log space when `nu` is small relative to the
/// median in-band step distance, and falling back to log space whenever the
/// linear accumulation degenerates.
fn gak_dp(costs: &Array2<f64>, nu: f64, band: Option<f64>, force_log: Option<bool>) -> Result<GakDpOut> {
    let in_band_costs: Vec<f64> = costs
        .indexed_iter()
        .filter(|((i, j), _)| in_band(*i, *j, band))
        .map(|(_, &c)| c)
        .collect();
    let med = median(in_band_costs);
    let use_log = force_log.unwrap_or(nu < 0.05 * med);
    if !use_log {
        if let Some(k) = gak_forward_linear(costs, nu, band) {
            return Ok(GakDpOut {
                log_k: k.ln(),
                linear_k: Some(k),
            });
        }
    }
    let log_k = gak_forward_log(costs, nu, band)?;
    Ok(GakDpOut {
        log_k,
        linear_k: None,
    })
}

/// The global-alignment kernel `sum over alignments of exp(-cost/nu)`.
/// Errors when the value is not representable as a positive float; use
/// [`d_gak`] for distances in that regime.
pub fn gak_exact(x: &Array2<f64>, y: &Array2<f64>, params: &GakParams) -> Result<f64> {
    let costs = cost_matrix(x, y, params.p)?;
    check_band_feasible(costs.nrows(), costs.ncols(), params.band)?;
    let out = gak_dp(&costs, params.nu, params.band, None)?;
    let k = out.linear_k.unwrap_or_else(|| out.log_k.exp());
    if !k.is_finite() || k <= 0.0 {
        return Err(CoreError::Numeric(
            "k_GAK is not representable as a positive float at this bandwidth; use d_gak".into(),
        ));
    }
    Ok(k)
}

/// The kernel distance `-nu * ln k_GAK`, computed without materializing the
/// kernel value, so it stays finite where `gak_exact` would underflow.
pub fn d_gak(x: &Array2<f64>, y: &Array2<f64>, params: &GakParams) -> Result<f64> {
    let costs = cost_matrix(x, y, params.p)?;
    check_band_feasible(costs.nrows(), costs.ncols(), params.band)?;
    let out = gak_dp(&costs, params.nu, params.band, None)?;
    let d = -params.nu * out.log_k;
    if !d.is_finite() {
        return Err(CoreError::Numeric("d_GAK is not finite".into()));
    }
    Ok(d)
}

/// Partial kernel sum over an explicit alignment set (no rescaling: callers
/// that need unbiased estimates of the full kernel multiply by `|A| / |set|`
/// themselves; the RO-TS updates use ratios where the scale cancels).
pub fn gak_sampled(
    x: &Array2<f64>,
    y: &Array2<f64>,
    set: &AlignmentSet,
    params: &GakParams,
) -> Result<f64> {
    if set.is_empty() {
        return Err(CoreError::Arg("alignment set is empty".into()));
    }
    if set.t1 != x.ncols() || set.t2 != y.ncols() {
        return Err(CoreError::Arg(format!(
            "alignment set was drawn for lengths ({}, {}), signals have ({}, {})",
            set.t1,
            set.t2,
            x.ncols(),
            y.ncols()
        )));
    }
    let mut total = 0.0;
    for al in &set.alignments {
        total += (-path_cost(x, y, al, params.p)? / params.nu).exp();
    }
    Ok(total)
}

fn check_perturbation_pair(x: &Array2<f64>, a: &Array2<f64>) -> Result<()> {
    if x.dim() != a.dim() {
        return Err(CoreError::Shape(format!(
            "perturbation shape {:?} does not match signal shape {:?}",
            a.dim(),
            x.dim()
        )));
    }
    Ok(())
}

/// Exhaustive gradient of `a -> ln k_GAK(x, x + a)`: a weighted average of
/// per-path cost gradients. Test oracle; guarded to short series.
pub fn grad_log_gak_exact(
    x: &Array2<f64>,
    a: &Array2<f64>,
    params: &GakParams,
) -> Result<Array2<f64>> {
    check_perturbation_pair(x, a)?;
    let t = x.ncols();
    if t > GRAD_ENUM_GUARD_T {
        return Err(CoreError::Size(format!(
            "exhaustive log-kernel gradients are limited to lengths <= {GRAD_ENUM_GUARD_T}, got {t}"
        )));
    }
    let y = x + a;
    let set = enumerate_alignments(t, t, params.band)?;
    let costs: Vec<f64> = set
        .alignments
        .iter()
        .map(|al| path_cost(x, &y, al, params.p))
        .collect::<Result<_>>()?;
    // Shift by the minimum cost so the weights cannot all underflow; the
    // shift cancels in the weighted average.
    let m = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut ksum = 0.0;
    let mut gsum: Array2<f64> = Array2::zeros(a.dim());
    for (al, &c) in set.alignments.iter().zip(&costs) {
        let w = (-(c - m) / params.nu).exp();
        ksum += w;
        let g = grad_path_cost(x, x, a, al, params.p)?;
        gsum.scaled_add(w, &g);
    }
    Ok(gsum * (-1.0 / (params.nu * ksum)))
}

/// Exact gradient of `a -> ln k_GAK(x, x + a)` via the forward-backward
/// dynamic program, O(T^2). Matches [`grad_log_gak_exact`] where both apply
/// and scales to long series.
pub fn grad_log_gak_dp(
    x: &Array2<f64>,
    a: &Array2<f64>,
    params: &GakParams,
) -> Result<Array2<f64>> {
    check_perturbation_pair(x, a)?;
    let y = x + a;
    let costs = cost_matrix(x, &y, params.p)?;
    let (t1, t2) = costs.dim();
    check_band_feasible(t1, t2, params.band)?;
    let nu = params.nu;
    // Forward mass in log space.
    let mut lm = Array2::from_elem((t1, t2), f64::NEG_INFINITY);
    for i in 0..t1 {
        for j in 0..t2 {
            if !in_band(i, j, params.band) {
                continue;
            }
            if i == 0 && j == 0 {
                lm[[0, 0]] = -costs[[0, 0]] / nu;
                continue;
            }
            let up = if i > 0 { lm[[i - 1, j]] } else { f64::NEG_INFINITY };
            let left = if j > 0 { lm[[i, j - 1]] } else { f64::NEG_INFINITY };
            let diag = if i > 0 && j > 0 {
                lm[[i - 1, j - 1]]
            } else {
                f64::NEG_INFINITY
            };
            lm[[i, j]] = -costs[[i, j]] / nu + logsumexp3(diag, up, left);
        }
    }
    let log_k = lm[[t1 - 1, t2 - 1]];
    if !log_k.is_finite() {
        return Err(CoreError::Numeric(
            "GAK forward accumulation is not finite".into(),
        ));
    }
    // Backward suffix mass (excluding the cell's own kernel factor).
    let mut lb = Array2::from_elem((t1, t2), f64::NEG_INFINITY);
    lb[[t1 - 1, t2 - 1]] = 0.0;
    for i in (0..t1).rev() {
        for j in (0..t2).rev() {
            if (i == t1 - 1 && j == t2 - 1) || !in_band(i, j, params.band) {
                continue;
            }
            let mut terms = [f64::NEG_INFINITY; 3];
            if i + 1 < t1 && in_band(i + 1, j, params.band) {
                terms[0] = -costs[[i + 1, j]] / nu + lb[[i + 1, j]];
            }
            if j + 1 < t2 && in_band(i, j + 1, params.band) {
                terms[1] = -costs[[i, j + 1]] / nu + lb[[i, j + 1]];
            }
            if i + 1 < t1 && j + 1 < t2 && in_band(i + 1, j + 1, params.band) {
                terms[2] = -costs[[i + 1, j + 1]] / nu + lb[[i + 1, j + 1]];
            }
            lb[[i, j]] = logsumexp3(terms[0], terms[1], terms[2]);
        }
    }
    // d(ln k)/d(cost_ij) = -resp_ij / nu with resp the path responsibility.
    let mut grad = Array2::zeros(a.dim());
    for i in 0..t1 {
        for j in 0..t2 {
            if !in_band(i, j, params.band) {
                continue;
            }
            let resp = (lm[[i, j]] + lb[[i, j]] - log_k).exp();
            if resp == 0.0 {
                continue;
            }
            let r = &y.column(j) - &x.column(i);
            let g = params.p.grad(r.view())?;
            let mut col = grad.column_mut(j);
            col.scaled_add(-resp / nu, &g);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::sample_alignments;
    use ndarray::array;
    use rand::Rng;

    fn rel_diff(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn random_pair(
        rng: &mut impl Rng,
        c: usize,
        t1: usize,
        t2: usize,
    ) -> (Array2<f64>, Array2<f64>) {
        let x = Array2::from_shape_fn((c, t1), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((c, t2), |_| rng.random_range(-1.0..1.0));
        (x, y)
    }

    /// Enumeration oracle: the kernel is literally the sum over all paths.
    fn gak_bruteforce(x: &Array2<f64>, y: &Array2<f64>, params: &GakParams) -> f64 {
        let set = enumerate_alignments(x.ncols(), y.ncols(), params.band).unwrap();
        set.alignments
            .iter()
            .map(|al| (-path_cost(x, y, al, params.p).unwrap() / params.nu).exp())
            .sum()
    }

    #[test]
    fn frozen_two_point_kernel() {
        // x = (0,0), y = (1,1), nu = 1, p = 1. Three paths with costs
        // 2 (diagonal), 3, 3 -> k = e^-2 + 2 e^-3 ~= 0.23491.
        let x = array![[0.0, 0.0]];
        let y = array![[1.0, 1.0]];
        let params = GakParams::new(1.0, Norm::L1).unwrap();
        let expected = (-2.0f64).exp() + 2.0 * (-3.0f64).exp();
        let k = gak_exact(&x, &y, &params).unwrap();
        assert!(rel_diff(k, expected) < 1e-12, "k = {k}, expected {expected}");

        let d = d_gak(&x, &y, &params).unwrap();
        assert!((d - (-expected.ln())).abs() < 1e-12);
        assert!((d - 1.4486).abs() < 1e-3);

        let (dtw, path) = dtw_distance(&x, &y, Norm::L1, None).unwrap();
        assert_eq!(dtw, 2.0);
        assert_eq!(path.pi1(), &[0, 1]);
        assert_eq!(path.pi2(), &[0, 1]);

        let report = crate::align::prop1_gap(&x, &y, &params).unwrap();
        assert_eq!(report.path_count, 3.0);
        assert!((report.bound - 3.0f64.ln()).abs() < 1e-15);
        assert!((report.gap - (2.0 - d)).abs() < 1e-12);
        assert!(report.gap >= 0.0 && report.gap <= report.bound);
    }

    #[test]
    fn dp_matches_enumeration_oracle() {
        let mut rng = crate::rng::stream(3, "gak-oracle");
        for &(t1, t2) in &[(2usize, 2usize), (3, 5), (4, 4), (6, 5), (6, 6)] {
            for &c in &[1usize, 2] {
                for &p in &[Norm::L1, Norm::L2] {
                    for &nu in &[0.5, 2.0] {
                        let (x, y) = random_pair(&mut rng, c, t1, t2);
                        let params = GakParams::new(nu, p).unwrap();
                        let k = gak_exact(&x, &y, &params).unwrap();
                        let brute = gak_bruteforce(&x, &y, &params);
                        assert!(
                            rel_diff(k, brute) < 1e-9,
                            "({t1},{t2}) c={c} nu={nu}: {k} vs {brute}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn dp_matches_enumeration_with_band() {
        let mut rng = crate::rng::stream(4, "gak-band");
        let (x, y) = random_pair(&mut rng, 2, 5, 6);
        let params = GakParams::new(1.0, Norm::L2)
            .unwrap()
            .with_band(Some(2.5))
            .unwrap();
        let k = gak_exact(&x, &y, &params).unwrap();
        let brute = gak_bruteforce(&x, &y, &params);
        assert!(rel_diff(k, brute) < 1e-9);
    }

    #[test]
    fn dtw_matches_bruteforce_min() {
        let mut rng = crate::rng::stream(5, "dtw-oracle");
        for &(t1, t2) in &[(2usize, 3usize), (4, 4), (5, 3), (6, 6)] {
            let (x, y) = random_pair(&mut rng, 2, t1, t2);
            let set = enumerate_alignments(t1, t2, None).unwrap();
            let brute = set
                .alignments
                .iter()
                .map(|al| path_cost(&x, &y, al, Norm::L2).unwrap())
                .fold(f64::INFINITY, f64::min);
            let (dtw, path) = dtw_distance(&x, &y, Norm::L2, None).unwrap();
            assert_eq!(dtw, brute);
            assert_eq!(path_cost(&x, &y, &path, Norm::L2).unwrap(), dtw);
        }
    }

    #[test]
    fn dtw_of_identical_series_is_zero_on_the_diagonal() {
        let mut rng = crate::rng::stream(6, "dtw-self");
        let x = Array2::from_shape_fn((1, 5), |_| rng.random_range(-1.0..1.0));
        let (d, path) = dtw_distance(&x, &x, Norm::L2, None).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(path.pi1(), &[0, 1, 2, 3, 4]);
        assert_eq!(path.pi2(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn kernel_is_symmetric() {
        let mut rng = crate::rng::stream(7, "sym");
        let (x, y) = random_pair(&mut rng, 2, 5, 5);
        let params = GakParams::new(0.7, Norm::L2).unwrap();
        let a = gak_exact(&x, &y, &params).unwrap();
        let b = gak_exact(&y, &x, &params).unwrap();
        assert!(rel_diff(a, b) < 1e-12);
        let (da, _) = dtw_distance(&x, &y, Norm::L2, None).unwrap();
        let (db, _) = dtw_distance(&y, &x, Norm::L2, None).unwrap();
        assert!((da - db).abs() <= 1e-12 * da.abs().max(1.0));
    }

    #[test]
    fn exhaustive_sampled_sum_equals_exact() {
        let mut rng = crate::rng::stream(8, "sampled");
        let (x, y) = random_pair(&mut rng, 1, 5, 4);
        let params = GakParams::new(1.3, Norm::L1).unwrap();
        let set = enumerate_alignments(5, 4, None).unwrap();
        let sampled = gak_sampled(&x, &y, &set, &params).unwrap();
        let exact = gak_exact(&x, &y, &params).unwrap();
        assert!(rel_diff(sampled, exact) < 1e-9);
    }

    #[test]
    fn band_one_reduces_to_the_diagonal_kernel() {
        let mut rng = crate::rng::stream(9, "band1");
        let (x, y) = random_pair(&mut rng, 1, 6, 6);
        let params = GakParams::new(0.9, Norm::L2)
            .unwrap()
            .with_band(Some(1.0))
            .unwrap();
        let diag_cost: f64 = (0..6).map(|t| Norm::L2.eval(x.column(t), y.column(t))).sum();
        let k = gak_exact(&x, &y, &params).unwrap();
        assert!(rel_diff(k, (-diag_cost / 0.9).exp()) < 1e-12);
        let (dtw, _) = dtw_distance(&x, &y, Norm::L2, Some(1.0)).unwrap();
        assert!((dtw - diag_cost).abs() < 1e-12);
        let d = d_gak(&x, &y, &params).unwrap();
        assert!((d - diag_cost).abs() < 1e-9);
    }

    #[test]
    fn log_and_linear_space_agree() {
        let mut rng = crate::rng::stream(10, "logspace");
        let (x, y) = random_pair(&mut rng, 2, 6, 6);
        let costs = cost_matrix(&x, &y, Norm::L2).unwrap();
        let lin = gak_dp(&costs, 1.0, None, Some(false)).unwrap();
        let log = gak_dp(&costs, 1.0, None, Some(true)).unwrap();
        assert!((lin.log_k - log.log_k).abs() < 1e-9 * lin.log_k.abs().max(1.0));
    }

    #[test]
    fn small_nu_stays_finite_and_respects_the_sandwich() {
        let mut rng = crate::rng::stream(11, "tiny-nu");
        let (x, y) = random_pair(&mut rng, 1, 4, 4);
        for &nu in &[1e-2, 1e-3] {
            let params = GakParams::new(nu, Norm::L2).unwrap();
            let report = crate::align::prop1_gap(&x, &y, &params).unwrap();
            assert!(report.d_gak.is_finite());
            assert!(report.gap >= -1e-12);
            assert!(report.gap <= report.bound * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn gak_exact_underflow_is_an_error_but_d_gak_survives() {
        let x = array![[0.0, 0.0]];
        let y = array![[1000.0, 1000.0]];
        let params = GakParams::new(1e-2, Norm::L2).unwrap();
        assert!(matches!(
            gak_exact(&x, &y, &params),
            Err(CoreError::Numeric(_))
        ));
        let d = d_gak(&x, &y, &params).unwrap();
        assert!(d.is_finite() && d > 1999.0);
    }

    #[test]
    fn dp_gradient_matches_enumeration_gradient() {
        let mut rng = crate::rng::stream(12, "grad-dp");
        for &t in &[3usize, 5, 6] {
            for &p in &[Norm::L1, Norm::L2] {
                let x = Array2::from_shape_fn((2, t), |_| rng.random_range(-1.0..1.0));
                let a = Array2::from_shape_fn((2, t), |_| rng.random_range(-0.3..0.3));
                let params = GakParams::new(0.8, p).unwrap();
                let g_enum = grad_log_gak_exact(&x, &a, &params).unwrap();
                let g_dp = grad_log_gak_dp(&x, &a, &params).unwrap();
                let scale = g_enum.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
                for (u, v) in g_enum.iter().zip(g_dp.iter()) {
                    assert!(
                        (u - v).abs() <= 1e-9 * scale,
                        "t={t}: {u} vs {v} (scale {scale})"
                    );
                }
            }
        }
    }

    #[test]
    fn dp_gradient_respects_band() {
        let mut rng = crate::rng::stream(13, "grad-band");
        let x = Array2::from_shape_fn((1, 6), |_| rng.random_range(-1.0..1.0));
        let a = Array2::from_shape_fn((1, 6), |_| rng.random_range(-0.3..0.3));
        let params = GakParams::new(0.8, Norm::L2)
            .unwrap()
            .with_band(Some(2.0))
            .unwrap();
        let g_enum = grad_log_gak_exact(&x, &a, &params).unwrap();
        let g_dp = grad_log_gak_dp(&x, &a, &params).unwrap();
        let scale = g_enum.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (u, v) in g_enum.iter().zip(g_dp.iter()) {
            assert!((u - v).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn exhaustive_gradient_guard() {
        let x = Array2::zeros((1, 9));
        let a = Array2::zeros((1, 9));
        let params = GakParams::new(1.0, Norm::L2).unwrap();
        assert!(matches!(
            grad_log_gak_exact(&x, &a, &params),
            Err(CoreError::Size(_))
        ));
    }

    #[test]
    fn sampled_set_length_mismatch_rejected() {
        let mut rng = crate::rng::stream(14, "mismatch");
        let set = sample_alignments(4, 4, 8, None, &mut rng).unwrap();
        let x = Array2::zeros((1, 5));
        let y = Array2::zeros((1, 4));
        let params = GakParams::new(1.0, Norm::L2).unwrap();
        assert!(matches!(
            gak_sampled(&x, &y, &set, &params),
            Err(CoreError::Arg(_))
        ));
    }
}
