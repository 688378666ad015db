//! Alignments between time series, their costs, and alignment-kernel distances.
//!
//! An alignment is a pair of nondecreasing index vectors over two series,
//! advancing one or both indices by exactly one per step. The cost of an
//! alignment sums pointwise Minkowski distances along the matched steps; the
//! global-alignment kernel (GAK) aggregates `exp(-cost/nu)` over all
//! alignments and DTW takes the minimum cost.

mod enumerate;
mod gak;

pub use enumerate::{count_alignments, enumerate_alignments, sample_alignments, ENUM_GUARD_T};
pub use gak::{
    d_gak, dtw_distance, gak_exact, gak_sampled, grad_log_gak_dp, grad_log_gak_exact,
    GRAD_ENUM_GUARD_T,
};

use crate::error::CoreError;
use crate::Result;
use ndarray::{Array1, Array2, ArrayView1};

/// Minkowski order for pointwise distances between channel vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    LInf,
}

impl Norm {
    /// `||u - v||_p` over the channel dimension.
    pub fn eval(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        match self {
            Norm::L1 => u.iter().zip(v.iter()).map(|(a, b)| (a - b).abs()).sum(),
            Norm::L2 => u
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            Norm::LInf => u
                .iter()
                .zip(v.iter())
                .fold(0.0, |m, (a, b)| m.max((a - b).abs())),
        }
    }

    /// Subgradient of `r -> ||r||_p` at `r`. Zero residuals get subgradient 0.
    /// Not defined for `p = inf`.
    pub(crate) fn grad(&self, r: ArrayView1<f64>) -> Result<Array1<f64>> {
        match self {
            Norm::L1 => Ok(r.mapv(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })),
            Norm::L2 => {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 {
                    Ok(Array1::zeros(r.len()))
                } else {
                    Ok(r.mapv(|v| v / n))
                }
            }
            Norm::LInf => Err(CoreError::Unsupported(
                "gradient of the L-infinity step distance is not defined".into(),
            )),
        }
    }

    pub fn parse(s: &str) -> Result<Norm> {
        match s {
            "1" => Ok(Norm::L1),
            "2" => Ok(Norm::L2),
            "inf" => Ok(Norm::LInf),
            other => Err(CoreError::Arg(format!(
                "unknown norm {other:?}, expected 1, 2, or inf"
            ))),
        }
    }
}

/// Kernel parameters: bandwidth `nu > 0`, step norm, and an optional Sakoe-Chiba
/// band. When set, only cells with `|i - j| < band` participate.
#[derive(Debug, Clone, Copy)]
pub struct GakParams {
    pub nu: f64,
    pub p: Norm,
    pub band: Option<f64>,
}

impl GakParams {
    pub fn new(nu: f64, p: Norm) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(CoreError::Arg(format!("nu must be finite and > 0, got {nu}")));
        }
        Ok(GakParams { nu, p, band: None })
    }

    pub fn with_band(mut self, band: Option<f64>) -> Result<Self> {
        if let Some(b) = band {
            if !(b >= 1.0) || !b.is_finite() {
                return Err(CoreError::Arg(format!(
                    "band width must be finite and >= 1, got {b}"
                )));
            }
        }
        self.band = band;
        Ok(self)
    }
}

pub(crate) fn in_band(i: usize, j: usize, band: Option<f64>) -> bool {
    match band {
        None => true,
        Some(b) => (i.abs_diff(j) as f64) < b,
    }
}

/// Check there is any band-feasible path between series of the given lengths.
pub(crate) fn check_band_feasible(t1: usize, t2: usize, band: Option<f64>) -> Result<()> {
    if let Some(b) = band {
        if !(b >= 1.0) || !b.is_finite() {
            return Err(CoreError::Arg(format!(
                "band width must be finite and >= 1, got {b}"
            )));
        }
        if (t1.abs_diff(t2) as f64) >= b {
            return Err(CoreError::Band(format!(
                "no path from (1,1) to ({t1},{t2}) stays within band {b}"
            )));
        }
    }
    Ok(())
}

/// One alignment path. Indices are zero-based positions into the two series.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Alignment {
    pi1: Vec<usize>,
    pi2: Vec<usize>,
}

impl Alignment {
    /// Validating constructor: equal lengths, start at (0,0), and every step
    /// advances one or both indices by exactly one.
    pub fn new(pi1: Vec<usize>, pi2: Vec<usize>) -> Result<Alignment> {
        if pi1.is_empty() || pi1.len() != pi2.len() {
            return Err(CoreError::Arg(
                "alignment index vectors must be nonempty and of equal length".into(),
            ));
        }
        if pi1[0] != 0 || pi2[0] != 0 {
            return Err(CoreError::Arg("alignment must start at the first points".into()));
        }
        for k in 1..pi1.len() {
            let d1 = pi1[k].wrapping_sub(pi1[k - 1]);
            let d2 = pi2[k].wrapping_sub(pi2[k - 1]);
            if !matches!((d1, d2), (0, 1) | (1, 0) | (1, 1)) {
                return Err(CoreError::Arg(format!(
                    "invalid alignment step at position {k}: indices must advance one or both by 1"
                )));
            }
        }
        Ok(Alignment { pi1, pi2 })
    }

    pub(crate) fn from_cells(cells: &[(usize, usize)]) -> Alignment {
        Alignment {
            pi1: cells.iter().map(|c| c.0).collect(),
            pi2: cells.iter().map(|c| c.1).collect(),
        }
    }

    pub fn pi1(&self) -> &[usize] {
        &self.pi1
    }

    pub fn pi2(&self) -> &[usize] {
        &self.pi2
    }

    pub fn len(&self) -> usize {
        self.pi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi1.is_empty()
    }
}

/// How an [`AlignmentSet`] was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum AlignmentSource {
    Exhaustive,
    Sampled { requested: usize, band: Option<f64> },
}

/// A collection of alignment paths between series of lengths `t1` and `t2`.
/// Sampled sets may contain duplicates; exhaustive sets never do.
#[derive(Debug, Clone)]
pub struct AlignmentSet {
    pub alignments: Vec<Alignment>,
    pub t1: usize,
    pub t2: usize,
    pub source: AlignmentSource,
}

impl AlignmentSet {
    pub fn len(&self) -> usize {
        self.alignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alignments.is_empty()
    }
}

pub(crate) fn check_channels(x: &Array2<f64>, y: &Array2<f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(CoreError::Shape(format!(
            "channel mismatch: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    Ok(())
}

/// Cost of one alignment: the sum of pointwise step distances along the path.
pub fn path_cost(x: &Array2<f64>, y: &Array2<f64>, align: &Alignment, p: Norm) -> Result<f64> {
    check_channels(x, y)?;
    let (t1, t2) = (x.ncols(), y.ncols());
    let mut total = 0.0;
    for (&i, &j) in align.pi1().iter().zip(align.pi2()) {
        if i >= t1 || j >= t2 {
            return Err(CoreError::Arg(format!(
                "alignment index ({}, {}) out of range for lengths ({t1}, {t2})",
                i + 1,
                j + 1
            )));
        }
        total += p.eval(x.column(i), y.column(j));
    }
    Ok(total)
}

/// Gradient of `a -> path_cost(x, x_base + a, align, p)`, accumulated per
/// matched column of the perturbed signal. Zero residuals contribute zero
/// (subgradient choice); `p = inf` is rejected.
pub fn grad_path_cost(
    x: &Array2<f64>,
    x_base: &Array2<f64>,
    a: &Array2<f64>,
    align: &Alignment,
    p: Norm,
) -> Result<Array2<f64>> {
    check_channels(x, x_base)?;
    if x_base.dim() != a.dim() {
        return Err(CoreError::Shape(format!(
            "perturbation shape {:?} does not match signal shape {:?}",
            a.dim(),
            x_base.dim()
        )));
    }
    let (t1, t2) = (x.ncols(), x_base.ncols());
    let mut grad = Array2::zeros(a.dim());
    for (&i, &j) in align.pi1().iter().zip(align.pi2()) {
        if i >= t1 || j >= t2 {
            return Err(CoreError::Arg(format!(
                "alignment index ({}, {}) out of range for lengths ({t1}, {t2})",
                i + 1,
                j + 1
            )));
        }
        let r = &x_base.column(j) + &a.column(j) - &x.column(i);
        let g = p.grad(r.view())?;
        let mut col = grad.column_mut(j);
        col += &g;
    }
    Ok(grad)
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    median_of_sorted(&v)
}

/// Data-driven kernel bandwidth: the median of sampled cross-series pointwise
/// distances, scaled by the square root of the median series length.
/// Deterministic for a fixed RNG state; floors at 1e-6 for degenerate data.
pub fn estimate_nu(
    ds: &crate::data::Dataset,
    p: Norm,
    rng: &mut impl rand::Rng,
) -> Result<f64> {
    if ds.n() < 2 {
        return Err(CoreError::Arg(
            "bandwidth estimation needs at least two series".into(),
        ));
    }
    const DRAWS: usize = 2000;
    let n = ds.n();
    let mut dists = Vec::with_capacity(DRAWS);
    for _ in 0..DRAWS {
        let i = rng.random_range(0..n);
        let mut i2 = rng.random_range(0..n);
        while i2 == i {
            i2 = rng.random_range(0..n);
        }
        let (a, b) = (&ds.samples[i], &ds.samples[i2]);
        let t = rng.random_range(0..a.len());
        let s = rng.random_range(0..b.len());
        dists.push(p.eval(a.values.column(t), b.values.column(s)));
    }
    let med_dist = median(dists);
    let med_len = median(ds.samples.iter().map(|s| s.len() as f64).collect());
    let nu = med_dist * med_len.sqrt();
    if nu < 1e-6 {
        log::warn!("estimate_nu: degenerate dataset, flooring bandwidth at 1e-6");
        return Ok(1e-6);
    }
    Ok(nu)
}

/// DTW-vs-GAK sandwich report: `0 <= dtw - d_gak <= nu * ln(#alignments)`.
#[derive(Debug, Clone)]
pub struct Prop1Report {
    pub d_dtw: f64,
    pub d_gak: f64,
    pub gap: f64,
    pub bound: f64,
    pub path_count: f64,
}

/// Evaluate both sides of the sandwich for one pair. Path counting is exact,
/// so both lengths must stay within the enumeration guard.
pub fn prop1_gap(x: &Array2<f64>, y: &Array2<f64>, params: &GakParams) -> Result<Prop1Report> {
    let (t1, t2) = (x.ncols(), y.ncols());
    if t1 > ENUM_GUARD_T || t2 > ENUM_GUARD_T {
        return Err(CoreError::Size(format!(
            "path counting is limited to lengths <= {ENUM_GUARD_T}, got ({t1}, {t2})"
        )));
    }
    let count = count_alignments(t1, t2, params.band)?;
    let (d_dtw, _) = dtw_distance(x, y, params.p, params.band)?;
    let d_gak = d_gak(x, y, params)?;
    Ok(Prop1Report {
        d_dtw,
        d_gak,
        gap: d_dtw - d_gak,
        bound: params.nu * count.ln(),
        path_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn norms_on_channel_vectors() {
        let u = array![1.0, -2.0];
        let v = array![0.0, 2.0];
        assert_eq!(Norm::L1.eval(u.view(), v.view()), 5.0);
        assert_eq!(Norm::L2.eval(u.view(), v.view()), (17.0f64).sqrt());
        assert_eq!(Norm::LInf.eval(u.view(), v.view()), 4.0);
    }

    #[test]
    fn alignment_constructor_validates() {
        assert!(Alignment::new(vec![0, 1], vec![0, 1]).is_ok());
        // simultaneous repetition
        assert!(Alignment::new(vec![0, 0], vec![0, 0]).is_err());
        // jump of two
        assert!(Alignment::new(vec![0, 2], vec![0, 1]).is_err());
        // must start at the origin
        assert!(Alignment::new(vec![1, 2], vec![0, 1]).is_err());
        // decreasing
        assert!(Alignment::new(vec![0, 1, 0], vec![0, 1, 2]).is_err());
    }

    #[test]
    fn path_cost_hand_value() {
        // x = (0,2), x' = (1,1), diagonal alignment, p = 1:
        // |0-1| + |2-1| = 2.
        let x = array![[0.0, 2.0]];
        let y = array![[1.0, 1.0]];
        let align = Alignment::new(vec![0, 1], vec![0, 1]).unwrap();
        assert_eq!(path_cost(&x, &y, &align, Norm::L1).unwrap(), 2.0);
    }

    #[test]
    fn path_cost_rejects_out_of_range() {
        let x = array![[0.0, 2.0]];
        let y = array![[1.0]];
        let align = Alignment::new(vec![0, 1], vec![0, 1]).unwrap();
        assert!(matches!(
            path_cost(&x, &y, &align, Norm::L1),
            Err(CoreError::Arg(_))
        ));
    }

    #[test]
    fn path_cost_rejects_channel_mismatch() {
        let x = array![[0.0, 2.0], [1.0, 1.0]];
        let y = array![[1.0, 1.0]];
        let align = Alignment::new(vec![0, 1], vec![0, 1]).unwrap();
        assert!(matches!(
            path_cost(&x, &y, &align, Norm::L1),
            Err(CoreError::Shape(_))
        ));
    }

    #[test]
    fn grad_rejects_linf() {
        let x = array![[0.0, 2.0]];
        let a = Array2::zeros((1, 2));
        let align = Alignment::new(vec![0, 1], vec![0, 1]).unwrap();
        assert!(matches!(
            grad_path_cost(&x, &x, &a, &align, Norm::LInf),
            Err(CoreError::Unsupported(_))
        ));
    }

    #[test]
    fn grad_path_cost_l1_signs() {
        // d/da of |x2 + a - x1| at a = 0 is sign(x2 - x1) per matched column.
        let x = array![[0.0, 2.0]];
        let a = Array2::zeros((1, 2));
        let align = Alignment::new(vec![0, 1], vec![0, 1]).unwrap();
        let g = grad_path_cost(&x, &x, &a, &align, Norm::L1).unwrap();
        // residuals are zero on the diagonal -> subgradient 0
        assert_eq!(g, Array2::<f64>::zeros((1, 2)));

        let y = array![[1.0, 0.0]];
        let g = grad_path_cost(&x, &y, &a, &align, Norm::L1).unwrap();
        // residual col 0: 1 - 0 = 1 -> +1; col 1: 0 - 2 = -2 -> -1
        assert_eq!(g, array![[1.0, -1.0]]);
    }

    #[test]
    fn estimate_nu_hand_value() {
        // Two univariate series (0,0) and (1,1): every cross-series pointwise
        // distance is 1, median length 2 -> nu = 1 * sqrt(2).
        use crate::data::{Dataset, Split, TimeSeries};
        let ds = Dataset {
            samples: vec![
                TimeSeries {
                    values: array![[0.0, 0.0]],
                    label: 0,
                },
                TimeSeries {
                    values: array![[1.0, 1.0]],
                    label: 1,
                },
            ],
            num_classes: 2,
            split: Split::Unspecified,
            label_map: vec!["0".into(), "1".into()],
        };
        let mut rng = crate::rng::stream(0, "test");
        let nu = estimate_nu(&ds, Norm::L2, &mut rng).unwrap();
        assert!((nu - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn estimate_nu_floors_degenerate_data() {
        use crate::data::{Dataset, Split, TimeSeries};
        let s = TimeSeries {
            values: array![[3.0, 3.0, 3.0]],
            label: 0,
        };
        let ds = Dataset {
            samples: vec![s.clone(), s],
            num_classes: 1,
            split: Split::Unspecified,
            label_map: vec!["0".into()],
        };
        let mut rng = crate::rng::stream(0, "test");
        assert_eq!(estimate_nu(&ds, Norm::L2, &mut rng).unwrap(), 1e-6);
    }

    #[test]
    fn estimate_nu_needs_two_series() {
        use crate::data::{Dataset, Split, TimeSeries};
        let ds = Dataset {
            samples: vec![TimeSeries {
                values: array![[3.0, 3.0]],
                label: 0,
            }],
            num_classes: 1,
            split: Split::Unspecified,
            label_map: vec!["0".into()],
        };
        let mut rng = crate::rng::stream(0, "test");
        assert!(estimate_nu(&ds, Norm::L2, &mut rng).is_err());
    }

    #[test]
    fn gak_params_validate() {
        assert!(GakParams::new(0.0, Norm::L2).is_err());
        assert!(GakParams::new(-1.0, Norm::L2).is_err());
        assert!(GakParams::new(1.0, Norm::L2)
            .unwrap()
            .with_band(Some(0.5))
            .is_err());
        assert!(GakParams::new(1.0, Norm::L2)
            .unwrap()
            .with_band(Some(1.0))
            .is_ok());
    }
}
