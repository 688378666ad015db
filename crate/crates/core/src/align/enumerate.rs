//! Exhaustive enumeration, counting, and random sampling of alignment paths.

use super::{check_band_feasible, in_band, Alignment, AlignmentSet, AlignmentSource};
use crate::error::CoreError;
use crate::Result;
use rand::Rng;

/// Enumeration (and path counting) is limited to series of this length.
/// The number of paths between equal-length series grows like the central
/// Delannoy numbers, about 5.8^T.
pub const ENUM_GUARD_T: usize = 12;

fn check_lengths(t1: usize, t2: usize) -> Result<()> {
    if t1 == 0 || t2 == 0 {
        return Err(CoreError::Arg("series lengths must be >= 1".into()));
    }
    Ok(())
}

/// All alignments between series of lengths `t1` and `t2`, in lexicographic
/// order of their cell sequences. Guarded against combinatorial blowup.
pub fn enumerate_alignments(t1: usize, t2: usize, band: Option<f64>) -> Result<AlignmentSet> {
    check_lengths(t1, t2)?;
    if t1 > ENUM_GUARD_T || t2 > ENUM_GUARD_T {
        return Err(CoreError::Size(format!(
            "enumeration is limited to lengths <= {ENUM_GUARD_T}, got ({t1}, {t2})"
        )));
    }
    check_band_feasible(t1, t2, band)?;
    let mut alignments = Vec::new();
    let mut cells = vec![(0usize, 0usize)];
    // Successor order (i, j+1) < (i+1, j) < (i+1, j+1) yields lexicographic
    // output by cell sequence.
    fn dfs(
        cells: &mut Vec<(usize, usize)>,
        t1: usize,
        t2: usize,
        band: Option<f64>,
        out: &mut Vec<Alignment>,
    ) {
        let &(i, j) = cells.last().expect("path is nonempty");
        if i == t1 - 1 && j == t2 - 1 {
            out.push(Alignment::from_cells(cells));
            return;
        }
        for (di, dj) in [(0usize, 1usize), (1, 0), (1, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni <= t1 - 1 && nj <= t2 - 1 && in_band(ni, nj, band) {
                cells.push((ni, nj));
                dfs(cells, t1, t2, band, out);
                cells.pop();
            }
        }
    }
    dfs(&mut cells, t1, t2, band, &mut alignments);
    if alignments.is_empty() {
        return Err(CoreError::Band(format!(
            "no alignment between lengths ({t1}, {t2}) satisfies the band constraint"
        )));
    }
    Ok(AlignmentSet {
        alignments,
        t1,
        t2,
        source: AlignmentSource::Exhaustive,
    })
}

/// Exact number of alignments via the Delannoy-style recurrence, respecting
/// the band. Counts are exact in f64 within the enumeration guard.
pub fn count_alignments(t1: usize, t2: usize, band: Option<f64>) -> Result<f64> {
    check_lengths(t1, t2)?;
    if t1 > ENUM_GUARD_T || t2 > ENUM_GUARD_T {
        return Err(CoreError::Size(format!(
            "path counting is limited to lengths <= {ENUM_GUARD_T}, got ({t1}, {t2})"
        )));
    }
    check_band_feasible(t1, t2, band)?;
    let mut dp = vec![vec![0.0f64; t2]; t1];
    for i in 0..t1 {
        for j in 0..t2 {
            if !in_band(i, j, band) {
                continue;
            }
            if i == 0 && j == 0 {
                dp[i][j] = 1.0;
                continue;
            }
            let mut c = 0.0;
            if i > 0 {
                c += dp[i - 1][j];
            }
            if j > 0 {
                c += dp[i][j - 1];
            }
            if i > 0 && j > 0 {
                c += dp[i - 1][j - 1];
            }
            dp[i][j] = c;
        }
    }
    Ok(dp[t1 - 1][t2 - 1])
}

/// Draw `count` random alignments (duplicates allowed) by walking from the
/// start cell to the end cell, choosing uniformly among feasible steps. Any
/// in-bounds, in-band step keeps the end cell reachable, so the walk never
/// dead-ends.
pub fn sample_alignments(
    t1: usize,
    t2: usize,
    count: usize,
    band: Option<f64>,
    rng: &mut impl Rng,
) -> Result<AlignmentSet> {
    check_lengths(t1, t2)?;
    if count == 0 {
        return Err(CoreError::Arg("sample count must be >= 1".into()));
    }
    check_band_feasible(t1, t2, band)?;
    let mut alignments = Vec::with_capacity(count);
    let mut feasible = Vec::with_capacity(3);
    for _ in 0..count {
        let mut cells = vec![(0usize, 0usize)];
        let (mut i, mut j) = (0usize, 0usize);
        while i != t1 - 1 || j != t2 - 1 {
            feasible.clear();
            for (di, dj) in [(0usize, 1usize), (1, 0), (1, 1)] {
                let (ni, nj) = (i + di, j + dj);
                if ni <= t1 - 1 && nj <= t2 - 1 && in_band(ni, nj, band) {
                    feasible.push((ni, nj));
                }
            }
            debug_assert!(!feasible.is_empty(), "feasible step always exists in-band");
            let pick = feasible[rng.random_range(0..feasible.len())];
            cells.push(pick);
            (i, j) = pick;
        }
        alignments.push(Alignment::from_cells(&cells));
    }
    Ok(AlignmentSet {
        alignments,
        t1,
        t2,
        source: AlignmentSource::Sampled {
            requested: count,
            band,
        },
    })
}
