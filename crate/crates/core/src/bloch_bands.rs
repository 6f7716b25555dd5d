//! Floquet-Bloch bands of the defect-free medium and the high-contrast
//! limit spectrum they converge to.
//!
//! The ε-periodic operator is rescaled to the unit cell: x = εy turns
//! −∇·(a(x/ε)∇) into −∇_y·(ã∇_y) with ã = a₀ on the inclusion and a₁/ε²
//! on the matrix, and leaves the eigenvalues unchanged. Its spectrum is the
//! union over quasimomenta θ of the quasi-periodic cell spectra; per-band
//! hulls over a θ sample set approximate the bands. The limit spectrum is
//! the set where the dispersion function is nonnegative, plus the zero-mean
//! cell eigenvalues that survive as isolated points.

use crate::assembly::{assemble, BoundaryCondition, Grid};
use crate::cell_spectral::{find_gaps, BetaTable, ZERO_MEAN_THRESHOLD};
use crate::eigensolve::{dense_full, eigs_in_interval, smallest_eigs, EigOpts};
use crate::error::{Error, Result};
use crate::geometry::MediumSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest embedded pencil routed to the dense solver instead of Lanczos.
const DENSE_EMBEDDED_CAP: usize = 400;

/// Band structure of the unperturbed ε-periodic operator on a θ sample set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandStructure {
    pub theta_samples: Vec<[f64; 2]>,
    /// `bands[i][j]`: j-th eigenvalue at `theta_samples[i]`, ascending in j.
    pub bands: Vec<Vec<f64>>,
    /// Per-band hull `[min over θ, max over θ]`.
    pub band_intervals: Vec<[f64; 2]>,
    pub eps: f64,
    /// Cell elements per period used by the quasi-periodic solves.
    pub m: u32,
}

impl BandStructure {
    /// True when `lambda` avoids every band hull (closed intervals).
    pub fn excludes(&self, lambda: f64) -> bool {
        self.band_intervals
            .iter()
            .all(|iv| lambda < iv[0] || lambda > iv[1])
    }
}

/// Limit spectrum on a window: dispersion bands plus degenerate points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitSpectrum {
    /// Closure of the nonnegative-dispersion set, disjoint and ascending.
    pub band_set: Vec<[f64; 2]>,
    /// Zero-mean cell eigenvalues inside gaps: degenerate bands.
    pub point_set: Vec<f64>,
}

/// Eigenvalues of the quasi-periodic unit-cell problem at quasimomentum
/// `theta`, ascending, deduplicated from the real 2N embedding.
///
/// `m` is accepted down to 4 so band hulls can be computed at the same
/// micro resolution as a matched fine-scale box solve; coarse hulls are
/// only meaningful against equally coarse box spectra.
pub fn bloch_cell_eigs(
    theta: [f64; 2],
    eps: f64,
    spec: &MediumSpec,
    m: u32,
    k: usize,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps = {eps} must be positive")));
    }
    if m < 4 {
        return Err(Error::invalid(format!("cell resolution m = {m} below 4")));
    }
    if k == 0 || k >= (m as usize).pow(2) {
        return Err(Error::invalid(format!(
            "band count k = {k} outside 1..{}",
            (m as usize).pow(2)
        )));
    }
    let grid = Grid::unit_cell(m, BoundaryCondition::QuasiPeriodic { theta })?;
    let matrix = spec.a1 / (eps * eps);
    let coeff = move |x: f64, y: f64| {
        if spec.cell.contains_local(x, y) {
            spec.a0
        } else {
            matrix
        }
    };
    let pencil = assemble(&grid, &coeff, &|_, _| 1.0)?;
    // Each complex eigenvalue appears twice in the embedding: (Re u, Im u)
    // and (−Im u, Re u) span the same invariant plane. Lanczos alone can
    // drop copies of a high-multiplicity cluster, so the iterative path is
    // re-extracted over an interval, where the count is inertia-certified.
    let doubled = if pencil.dof() <= DENSE_EMBEDDED_CAP {
        let (values, _) = dense_full(&pencil)?;
        values.into_iter().take(2 * k).collect::<Vec<f64>>()
    } else {
        let opts = EigOpts::default();
        let rough = smallest_eigs(&pencil, (2 * k + 4).min(pencil.dof() - 1), &opts)?.values();
        let last = rough[2 * k - 1];
        // Ceiling in the first clear gap at or after the 2k-th value, so a
        // degenerate cluster is never sliced through.
        let mut hi = rough
            .iter()
            .skip(2 * k)
            .find(|v| **v - last > 1e-6 * (1.0 + last.abs()))
            .map_or(last + 1e-3 * (1.0 + last.abs()), |v| 0.5 * (last + v));
        let lo = -1e-9 * (1.0 + rough[0].abs());
        let mut certified = None;
        for _ in 0..5 {
            match eigs_in_interval(&pencil, lo, hi, &opts) {
                Err(Error::SingularShift(_)) => hi += 1e-9 * (1.0 + hi.abs()),
                other => {
                    certified = Some(other?);
                    break;
                }
            }
        }
        let set = certified.ok_or_else(|| {
            Error::RootSearch(format!("no eigenvalue-free ceiling near {hi}"))
        })?;
        set.pairs.iter().map(|p| p.value).take(2 * k).collect()
    };
    let mut out = Vec::with_capacity(k);
    for pair in doubled.chunks(2) {
        let [a, b] = pair else {
            return Err(Error::invalid(format!(
                "embedding returned an odd count {}",
                doubled.len()
            )));
        };
        if (b - a).abs() > 1e-6 * a.abs().max(1.0) {
            return Err(Error::NoConvergence {
                context: format!("embedded pair split: {a} vs {b} at theta = {theta:?}"),
                best_residual: (b - a).abs(),
            });
        }
        out.push(0.5 * (a + b));
    }
    Ok(out)
}

/// The 17-point Γ–X–M–Γ path followed by the off-path members of the 8×8
/// uniform θ grid. The path comes first so plot output can slice it off.
pub fn default_theta_samples() -> Vec<[f64; 2]> {
    let gamma = [0.0, 0.0];
    let x = [PI, 0.0];
    let mm = [PI, PI];
    let mut samples = Vec::new();
    let mut walk = |from: [f64; 2], to: [f64; 2], steps: usize, skip_start: bool| {
        for i in (if skip_start { 1 } else { 0 })..=steps {
            let t = i as f64 / steps as f64;
            samples.push([
                from[0] + t * (to[0] - from[0]),
                from[1] + t * (to[1] - from[1]),
            ]);
        }
    };
    walk(gamma, x, 5, false);
    walk(x, mm, 5, true);
    walk(mm, gamma, 6, true);
    for i in 0..8 {
        for j in 0..8 {
            let th = [2.0 * PI * i as f64 / 8.0, 2.0 * PI * j as f64 / 8.0];
            if !samples
                .iter()
                .any(|s| (s[0] - th[0]).abs() + (s[1] - th[1]).abs() < 1e-12)
            {
                samples.push(th);
            }
        }
    }
    samples
}

/// Solves every θ sample and takes per-band hulls. Samples run in parallel;
/// the result is ordered by sample index.
pub fn band_structure(
    eps: f64,
    spec: &MediumSpec,
    m: u32,
    k: usize,
    thetas: &[[f64; 2]],
) -> Result<BandStructure> {
    if thetas.is_empty() {
        return Err(Error::invalid("no quasimomentum samples"));
    }
    let bands = thetas
        .par_iter()
        .map(|&theta| bloch_cell_eigs(theta, eps, spec, m, k))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut band_intervals = vec![[f64::INFINITY, f64::NEG_INFINITY]; k];
    for list in &bands {
        for (j, &v) in list.iter().enumerate() {
            band_intervals[j][0] = band_intervals[j][0].min(v);
            band_intervals[j][1] = band_intervals[j][1].max(v);
        }
    }
    Ok(BandStructure {
        theta_samples: thetas.to_vec(),
        bands,
        band_intervals,
        eps,
        m,
    })
}

/// Per-band θ-continuity screen along the leading path portion of the
/// samples. Band slopes obey |∂λ/∂θ| ≤ 2·sqrt(λ·a_max) (an equality for
/// constant coefficients), so a jump beyond `factor` times that estimate
/// at the band's hull maximum marks a mislabeled or miscounted band.
pub fn continuity_flags(
    bs: &BandStructure,
    spec: &MediumSpec,
    path_len: usize,
    factor: f64,
) -> Vec<(usize, usize)> {
    let path_len = path_len.min(bs.theta_samples.len());
    let a_max = spec.a0.max(spec.a1 / (bs.eps * bs.eps));
    let mut flagged = Vec::new();
    for j in 0..bs.band_intervals.len() {
        let lipschitz = 2.0 * (bs.band_intervals[j][1].max(0.0) * a_max).sqrt();
        for i in 1..path_len {
            let dt = step_len(bs.theta_samples[i - 1], bs.theta_samples[i]);
            let jump = (bs.bands[i][j] - bs.bands[i - 1][j]).abs();
            if jump > factor * lipschitz * dt + 1e-9 {
                flagged.push((j, i));
            }
        }
    }
    flagged
}

fn step_len(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

/// Limit spectrum on [0, lambda_max]: the complement of the dispersion gaps,
/// plus zero-mean cell eigenvalues as isolated points.
pub fn limit_spectrum(table: &BetaTable, lambda_max: f64) -> Result<LimitSpectrum> {
    let scan = find_gaps(table, lambda_max)?;
    let mut band_set = Vec::new();
    let mut cursor = 0.0;
    for gap in &scan.gaps {
        let lo = gap.lo.min(lambda_max);
        if lo > cursor {
            band_set.push([cursor, lo]);
        }
        cursor = cursor.max(gap.hi);
    }
    if cursor < lambda_max {
        band_set.push([cursor, lambda_max]);
    }
    let point_set = scan
        .degenerate_points
        .iter()
        .copied()
        .filter(|&p| p <= lambda_max)
        .collect();
    Ok(LimitSpectrum {
        band_set,
        point_set,
    })
}

/// A window end just above the second gap, where the spectra comparison is
/// carried out by default.
pub fn default_lambda_max(table: &BetaTable) -> Result<f64> {
    let first_pole = table
        .significant_poles()
        .next()
        .ok_or_else(|| Error::invalid("table has no coupled pole"))?
        .lambda;
    let scan = find_gaps(table, 8.0 * first_pole)?;
    let second = scan
        .gaps
        .get(1)
        .ok_or_else(|| Error::invalid("no second gap below 8x the first pole"))?;
    Ok(1.02 * second.hi)
}

/// Exact Hausdorff distance between the band structure and the limit
/// spectrum, both restricted to `window` and treated as unions of closed
/// intervals (points are degenerate intervals).
pub fn hausdorff_distance(
    bands: &BandStructure,
    limit: &LimitSpectrum,
    window: [f64; 2],
) -> Result<f64> {
    let a = normalize(
        bands
            .band_intervals
            .iter()
            .copied()
            .collect::<Vec<[f64; 2]>>(),
        window,
    );
    let mut b_raw: Vec<[f64; 2]> = limit.band_set.clone();
    b_raw.extend(limit.point_set.iter().map(|&p| [p, p]));
    let b = normalize(b_raw, window);
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid(format!(
            "empty spectrum in window [{}, {}]",
            window[0], window[1]
        )));
    }
    Ok(one_sided(&a, &b).max(one_sided(&b, &a)))
}

/// Clips intervals to the window, drops empties, merges overlaps.
fn normalize(mut ivs: Vec<[f64; 2]>, window: [f64; 2]) -> Vec<[f64; 2]> {
    ivs.retain_mut(|iv| {
        iv[0] = iv[0].max(window[0]);
        iv[1] = iv[1].min(window[1]);
        iv[0] <= iv[1]
    });
    ivs.sort_by(|p, q| p[0].partial_cmp(&q[0]).unwrap());
    let mut merged: Vec<[f64; 2]> = Vec::with_capacity(ivs.len());
    for iv in ivs {
        match merged.last_mut() {
            Some(last) if iv[0] <= last[1] => last[1] = last[1].max(iv[1]),
            _ => merged.push(iv),
        }
    }
    merged
}

/// sup over x in A of dist(x, B), for normalized interval unions. The
/// distance function is piecewise linear with local maxima only at interval
/// endpoints of A and at B-gap midpoints interior to A.
fn one_sided(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let dist = |x: f64| -> f64 {
        b.iter()
            .map(|iv| {
                if x < iv[0] {
                    iv[0] - x
                } else if x > iv[1] {
                    x - iv[1]
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut candidates = Vec::new();
    for iv in a {
        candidates.push(iv[0]);
        candidates.push(iv[1]);
    }
    for w in b.windows(2) {
        let mid = 0.5 * (w[0][1] + w[1][0]);
        if a.iter().any(|iv| iv[0] <= mid && mid <= iv[1]) {
            candidates.push(mid);
        }
    }
    candidates.into_iter().map(dist).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_spectral::discrete_cell_table;
    use crate::geometry::CellGeometry;

    /// Symbol of the 1D consistent-mass element pair at wavenumber kappa.
    fn symbol(kappa: f64, m: u32) -> f64 {
        let h = 1.0 / m as f64;
        (6.0 / (h * h)) * (1.0 - (kappa * h).cos()) / (2.0 + (kappa * h).cos())
    }

    /// ã = c everywhere: inclusion and matrix coefficients agree at eps = 1.
    fn constant_spec(c: f64) -> MediumSpec {
        MediumSpec {
            a0: c,
            a1: c,
            a2: c,
            ..MediumSpec::default()
        }
    }

    #[test]
    fn zero_phase_constant_medium_is_the_discrete_torus() {
        let c = 2.5;
        let m = 8;
        let got = bloch_cell_eigs([0.0, 0.0], 1.0, &constant_spec(c), m, 9).unwrap();
        let mut want = Vec::new();
        for p in 0..m {
            for q in 0..m {
                want.push(c * (symbol(2.0 * PI * p as f64, m) + symbol(2.0 * PI * q as f64, m)));
            }
        }
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(got[0].abs() <= 1e-8, "kernel missing: {}", got[0]);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-7 * (1.0 + w), "{g} vs {w}");
        }
        // The coarse modes converge on the continuum torus values.
        let fine = bloch_cell_eigs([0.0, 0.0], 1.0, &constant_spec(c), 32, 4).unwrap();
        let continuum = c * 4.0 * PI * PI;
        for v in &fine[1..4] {
            assert!((v - continuum).abs() <= 0.02 * continuum, "{v}");
        }
    }

    #[test]
    fn half_phase_ground_state_is_the_antiperiodic_plane_wave() {
        let c = 1.7;
        for m in [8u32, 16, 32] {
            let got = bloch_cell_eigs([PI, PI], 1.0, &constant_spec(c), m, 3).unwrap();
            let want = 2.0 * c * symbol(PI, m);
            assert!(
                (got[0] - want).abs() <= 1e-7 * want,
                "m = {m}: {} vs {want}",
                got[0]
            );
        }
        let fine = bloch_cell_eigs([PI, PI], 1.0, &constant_spec(c), 64, 1).unwrap();
        let continuum = 2.0 * c * PI * PI;
        assert!((fine[0] - continuum).abs() <= 3e-3 * continuum);
    }

    #[test]
    fn bands_obey_time_reversal_symmetry() {
        let spec = MediumSpec::default();
        let theta = [1.3, 0.4];
        let mirror = [2.0 * PI - theta[0], 2.0 * PI - theta[1]];
        let a = bloch_cell_eigs(theta, 0.25, &spec, 8, 8).unwrap();
        let b = bloch_cell_eigs(mirror, 0.25, &spec, 8, 8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn first_band_hull_presses_against_the_first_cell_pole() {
        let spec = MediumSpec::default();
        let m = 16;
        let table = discrete_cell_table(&spec.cell, spec.a0, m).unwrap();
        let pole = table.modes[0].lambda;
        let bs = band_structure(0.0625, &spec, m, 3, &default_theta_samples()).unwrap();
        let top = bs.band_intervals[0][1];
        assert!(top < pole, "band top {top} at pole {pole}");
        assert!(top > 0.93 * pole, "band top {top} far from pole {pole}");
        for list in &bs.bands {
            assert!(list.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        }
        let flags = continuity_flags(&bs, &spec, 17, 1.25);
        assert!(flags.is_empty(), "discontinuous bands: {flags:?}");
    }

    #[test]
    fn limit_spectrum_partitions_the_window() {
        let spec = MediumSpec::default();
        let table = discrete_cell_table(&spec.cell, spec.a0, 8).unwrap();
        let top = default_lambda_max(&table).unwrap();
        let ls = limit_spectrum(&table, top).unwrap();
        assert!(ls.band_set[0][0] == 0.0 && ls.band_set[0][1] > 0.0);
        assert!(ls.band_set.windows(2).all(|w| w[0][1] < w[1][0]));
        // Bands plus gaps tile [0, top] exactly.
        let mut covered = ls.band_set[0][1] - ls.band_set[0][0];
        let scan = find_gaps(&table, top).unwrap();
        for g in &scan.gaps {
            covered += g.hi.min(top) - g.lo;
        }
        for w in ls.band_set.windows(2) {
            covered += w[1][1] - w[1][0];
        }
        assert!((covered - top).abs() <= 1e-9 * top, "covered {covered} of {top}");
        // Degenerate points sit strictly outside the open band interiors.
        for &p in &ls.point_set {
            assert!(
                !ls.band_set.iter().any(|iv| iv[0] < p && p < iv[1]),
                "point {p} inside a band"
            );
        }
        // The disk's angular pair is such a point when it lands in a gap.
        let angular = table
            .modes
            .iter()
            .find(|md| md.mean_sq < ZERO_MEAN_THRESHOLD)
            .expect("angular cell mode");
        if scan.gaps.iter().any(|g| g.contains(angular.lambda)) {
            assert!(ls.point_set.iter().any(|&p| (p - angular.lambda).abs() <= 1e-9));
        }
    }

    #[test]
    fn hausdorff_distance_matches_hand_cases_and_sampling() {
        let bs = |ivs: Vec<[f64; 2]>| BandStructure {
            theta_samples: vec![[0.0, 0.0]],
            bands: vec![vec![]],
            band_intervals: ivs,
            eps: 1.0,
            m: 4,
        };
        let plain = LimitSpectrum {
            band_set: vec![[0.0, 1.0]],
            point_set: vec![],
        };
        let d = hausdorff_distance(&bs(vec![[0.0, 1.0]]), &plain, [0.0, 3.0]).unwrap();
        assert_eq!(d, 0.0);
        let dotted = LimitSpectrum {
            band_set: vec![[0.0, 1.0]],
            point_set: vec![2.0],
        };
        let d = hausdorff_distance(&bs(vec![[0.0, 1.0]]), &dotted, [0.0, 3.0]).unwrap();
        assert!((d - 1.0).abs() <= 1e-15);
        // Interval ends shifted by 0.25 against a two-piece limit set.
        let shifted = bs(vec![[0.25, 1.25], [2.0, 2.5]]);
        let two = LimitSpectrum {
            band_set: vec![[0.0, 1.0], [2.25, 2.75]],
            point_set: vec![],
        };
        let d = hausdorff_distance(&shifted, &two, [0.0, 3.0]).unwrap();
        let mut brute: f64 = 0.0;
        let sets = (
            vec![[0.25, 1.25], [2.0, 2.5]],
            vec![[0.0, 1.0], [2.25, 2.75]],
        );
        let dist = |x: f64, s: &Vec<[f64; 2]>| {
            s.iter()
                .map(|iv| (iv[0] - x).max(x - iv[1]).max(0.0))
                .fold(f64::INFINITY, f64::min)
        };
        let mut t = 0.0;
        while t <= 3.0 {
            if dist(t, &sets.0) == 0.0 {
                brute = brute.max(dist(t, &sets.1));
            }
            if dist(t, &sets.1) == 0.0 {
                brute = brute.max(dist(t, &sets.0));
            }
            t += 1e-4;
        }
        assert!((d - brute).abs() <= 2e-4, "exact {d} vs sampled {brute}");
        assert!(
            hausdorff_distance(&bs(vec![[5.0, 6.0]]), &plain, [0.0, 3.0]).is_err(),
            "empty window must refuse"
        );
    }

    #[test]
    fn band_hulls_shrink_toward_the_limit_spectrum() {
        let spec = MediumSpec::default();
        let m = 8;
        let table = discrete_cell_table(&spec.cell, spec.a0, m).unwrap();
        let top = default_lambda_max(&table).unwrap();
        let limit = limit_spectrum(&table, top).unwrap();
        let thetas = default_theta_samples();
        let mut last = f64::INFINITY;
        for eps in [0.25, 0.125] {
            let bands = band_structure(eps, &spec, m, 12, &thetas).unwrap();
            let d = hausdorff_distance(&bands, &limit, [0.0, top]).unwrap();
            assert!(d < last, "d_H {d} did not shrink from {last} at eps = {eps}");
            last = d;
        }
    }
}
