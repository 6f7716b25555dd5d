//! Material geometry: a periodic lattice of soft inclusions, a bounded
//! defect around the origin, and the classification of any point of the
//! plane into the four coefficient phases.

use crate::error::{Error, Result};

/// Inclusion shape within the open unit cell, in cell-local coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InclusionShape {
    Disk { center: [f64; 2], radius: f64 },
}

/// The soft inclusion of the reference cell [0,1)^2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellGeometry {
    pub inclusion: InclusionShape,
}

impl CellGeometry {
    pub fn disk(center: [f64; 2], radius: f64) -> CellGeometry {
        CellGeometry {
            inclusion: InclusionShape::Disk { center, radius },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let InclusionShape::Disk { center, radius } = self.inclusion;
        if !(radius > 0.0 && radius < 0.5) {
            return Err(Error::invalid(format!(
                "inclusion radius {radius} outside (0, 0.5)"
            )));
        }
        for c in center {
            if !(c - radius > 0.0 && c + radius < 1.0) {
                return Err(Error::invalid(format!(
                    "inclusion closure must stay strictly inside the unit cell \
                     (center {center:?}, radius {radius})"
                )));
            }
        }
        Ok(())
    }

    /// Membership in cell-local coordinates (the open inclusion).
    pub fn contains_local(&self, x: f64, y: f64) -> bool {
        let InclusionShape::Disk { center, radius } = self.inclusion;
        let (dx, dy) = (x - center[0], y - center[1]);
        dx * dx + dy * dy < radius * radius
    }

    /// Area |Q0| of the inclusion; the matrix part has area 1 - |Q0|.
    pub fn inclusion_area(&self) -> f64 {
        let InclusionShape::Disk { radius, .. } = self.inclusion;
        std::f64::consts::PI * radius * radius
    }

    fn disk_center_radius(&self) -> ([f64; 2], f64) {
        let InclusionShape::Disk { center, radius } = self.inclusion;
        (center, radius)
    }
}

/// Defect region around the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DefectShape {
    Disk { radius: f64 },
    Square { side: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefectGeometry {
    pub shape: DefectShape,
}

impl DefectGeometry {
    pub fn disk(radius: f64) -> DefectGeometry {
        DefectGeometry {
            shape: DefectShape::Disk { radius },
        }
    }

    pub fn square(side: f64) -> DefectGeometry {
        DefectGeometry {
            shape: DefectShape::Square { side },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.shape {
            DefectShape::Disk { radius } => radius > 0.0 && radius.is_finite(),
            DefectShape::Square { side } => side > 0.0 && side.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate defect {:?}", self.shape)))
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self.shape {
            DefectShape::Disk { radius } => p[0] * p[0] + p[1] * p[1] < radius * radius,
            DefectShape::Square { side } => p[0].abs().max(p[1].abs()) < 0.5 * side,
        }
    }

    /// Euclidean distance from `p` to the defect boundary.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        match self.shape {
            DefectShape::Disk { radius } => ((p[0] * p[0] + p[1] * p[1]).sqrt() - radius).abs(),
            DefectShape::Square { side } => {
                let (ax, ay) = (p[0].abs(), p[1].abs());
                let half = 0.5 * side;
                if ax <= half && ay <= half {
                    half - ax.max(ay)
                } else {
                    let dx = (ax - half).max(0.0);
                    let dy = (ay - half).max(0.0);
                    (dx * dx + dy * dy).sqrt()
                }
            }
        }
    }

    /// A convenient radius bound: the defect fits inside this circle.
    pub fn outer_radius(&self) -> f64 {
        match self.shape {
            DefectShape::Disk { radius } => radius,
            DefectShape::Square { side } => 0.5 * side * std::f64::consts::SQRT_2,
        }
    }
}

/// Coefficient rule on inclusions that straddle the defect boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryPolicy {
    /// Same soft scaling as interior inclusions.
    Full,
    /// Inclusion erased: the surrounding phase's coefficient applies.
    Removed,
    /// Constant midpoint of an admissible band `[band_lo, band_hi] * eps^{2-theta}`.
    Scaled {
        theta: f64,
        band_lo: f64,
        band_hi: f64,
    },
}

/// Full description of the high-contrast medium with defect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MediumSpec {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub boundary_policy: BoundaryPolicy,
    pub cell: CellGeometry,
    pub defect: DefectGeometry,
}

impl Default for MediumSpec {
    fn default() -> Self {
        MediumSpec {
            a0: 1.0,
            a1: 1.0,
            a2: 1.0,
            boundary_policy: BoundaryPolicy::Full,
            cell: CellGeometry::disk([0.5, 0.5], 0.3),
            defect: DefectGeometry::disk(1.0),
        }
    }
}

impl MediumSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a0", self.a0), ("a1", self.a1), ("a2", self.a2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be positive")));
            }
        }
        if let BoundaryPolicy::Scaled {
            theta,
            band_lo,
            band_hi,
        } = self.boundary_policy
        {
            if !(theta > 0.0 && theta <= 2.0) {
                return Err(Error::invalid(format!("theta = {theta} outside (0, 2]")));
            }
            if !(band_lo > 0.0 && band_lo <= band_hi && band_hi.is_finite()) {
                return Err(Error::invalid(format!(
                    "scaled-policy band [{band_lo}, {band_hi}] must satisfy 0 < lo <= hi"
                )));
            }
        }
        self.cell.validate()?;
        self.defect.validate()
    }
}

/// Which of the four material phases a point belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhaseLabel {
    /// Soft inclusion of a cell lying wholly in the matrix region.
    Inclusion,
    /// The stiff connected matrix.
    Matrix,
    /// The defect region (minus any straddling inclusions).
    Defect,
    /// Inclusion of a cell that straddles the defect boundary.
    BoundaryInclusion,
}

/// Where the scaled inclusion of one lattice cell sits relative to the
/// defect: wholly outside it, straddling its boundary, or swallowed by it.
#[derive(Clone, Copy, Debug, PartialEq)]
enum CellSite {
    InMatrix,
    Straddling,
    InDefect,
}

fn cell_site(cell_idx: [f64; 2], eps: f64, spec: &MediumSpec) -> CellSite {
    let (center, radius) = spec.cell.disk_center_radius();
    let cx = eps * (cell_idx[0] + center[0]);
    let cy = eps * (cell_idx[1] + center[1]);
    let r = eps * radius;
    let d = spec.defect.boundary_distance([cx, cy]);
    if d <= r {
        CellSite::Straddling
    } else if spec.defect.contains([cx, cy]) {
        CellSite::InDefect
    } else {
        CellSite::InMatrix
    }
}

/// Classifies a point of the plane for lattice spacing `eps`: find its cell,
/// test the scaled inclusion, and place straddling inclusions in their own
/// phase.
pub fn classify_point(p: [f64; 2], eps: f64, spec: &MediumSpec) -> PhaseLabel {
    debug_assert!(eps > 0.0);
    let sx = p[0] / eps;
    let sy = p[1] / eps;
    let ix = sx.floor();
    let iy = sy.floor();
    let in_inclusion = spec.cell.contains_local(sx - ix, sy - iy);
    if in_inclusion {
        match cell_site([ix, iy], eps, spec) {
            CellSite::InMatrix => return PhaseLabel::Inclusion,
            CellSite::Straddling => return PhaseLabel::BoundaryInclusion,
            // An inclusion swallowed by the defect is not part of the
            // microstructure; the defect material fills it.
            CellSite::InDefect => return PhaseLabel::Defect,
        }
    }
    if spec.defect.contains(p) {
        PhaseLabel::Defect
    } else {
        PhaseLabel::Matrix
    }
}

/// Coefficient value at a point: `a0 eps^2` on inclusions, `a1` on the
/// matrix, `a2` on the defect, and the boundary policy's value on
/// straddling inclusions.
pub fn coefficient(p: [f64; 2], eps: f64, spec: &MediumSpec) -> f64 {
    match classify_point(p, eps, spec) {
        PhaseLabel::Inclusion => spec.a0 * eps * eps,
        PhaseLabel::Matrix => spec.a1,
        PhaseLabel::Defect => spec.a2,
        PhaseLabel::BoundaryInclusion => match spec.boundary_policy {
            BoundaryPolicy::Full => spec.a0 * eps * eps,
            BoundaryPolicy::Removed => {
                if spec.defect.contains(p) {
                    spec.a2
                } else {
                    spec.a1
                }
            }
            BoundaryPolicy::Scaled {
                theta,
                band_lo,
                band_hi,
            } => 0.5 * (band_lo + band_hi) * eps.powf(2.0 - theta),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn deep_cell_center_is_inclusion_and_corner_is_matrix() {
        let spec = MediumSpec::default();
        for eps in [0.25, 0.125, 1.0 / 16.0] {
            // Pick a lattice cell at least two units away from the defect.
            let cell = (3.0f64 / eps).ceil();
            let c = [(cell + 0.5) * eps, (cell + 0.5) * eps];
            assert_eq!(classify_point(c, eps, &spec), PhaseLabel::Inclusion);
            let corner = [(cell + 0.05) * eps, (cell + 0.05) * eps];
            assert_eq!(classify_point(corner, eps, &spec), PhaseLabel::Matrix);
        }
    }

    #[test]
    fn straddling_inclusion_at_quarter_scale() {
        let spec = MediumSpec::default();
        let eps = 0.25;
        // Cell (3, 1): inclusion center (0.875, 0.375) has |c| ~ 0.95197 and
        // scaled radius 0.075, so it crosses the unit circle.
        let p = [0.875, 0.375];
        assert_eq!(classify_point(p, eps, &spec), PhaseLabel::BoundaryInclusion);
        // Cell (2, 3) is a near miss: |c| - r ~ 1.00029 stays outside.
        let q = [0.625, 0.875];
        assert_eq!(classify_point(q, eps, &spec), PhaseLabel::Inclusion);
        // Points of the straddling inclusion on either side of the defect
        // boundary share the label.
        let (inside, outside) = straddler_probes();
        assert_eq!(
            classify_point(inside, eps, &spec),
            PhaseLabel::BoundaryInclusion
        );
        assert_eq!(
            classify_point(outside, eps, &spec),
            PhaseLabel::BoundaryInclusion
        );
        assert!(spec.defect.contains(inside) && !spec.defect.contains(outside));
    }

    /// Two points of the quarter-scale straddling inclusion (cell (3,1),
    /// center norm ~0.95197, scaled radius 0.075): one 0.05 inward along the
    /// radial ray, one 0.06 outward — both within the inclusion, on opposite
    /// sides of the unit circle.
    fn straddler_probes() -> ([f64; 2], [f64; 2]) {
        let c = [0.875f64, 0.375];
        let norm = (c[0] * c[0] + c[1] * c[1]).sqrt();
        let u = [c[0] / norm, c[1] / norm];
        (
            [c[0] - 0.05 * u[0], c[1] - 0.05 * u[1]],
            [c[0] + 0.06 * u[0], c[1] + 0.06 * u[1]],
        )
    }

    #[test]
    fn defect_interior_and_swallowed_inclusions() {
        let spec = MediumSpec::default();
        let eps = 0.125;
        // Origin cell's inclusion sits at (0.5, 0.5) * eps, well inside the
        // unit defect: it classifies as defect material.
        let p = [0.5 * eps, 0.5 * eps];
        assert_eq!(classify_point(p, eps, &spec), PhaseLabel::Defect);
        let off = [0.05 * eps, 0.05 * eps];
        assert_eq!(classify_point(off, eps, &spec), PhaseLabel::Defect);
    }

    #[test]
    fn coefficient_values_per_phase() {
        let mut spec = MediumSpec::default();
        let eps = 0.125;
        let matrix_p = [10.05 * eps, 10.05 * eps];
        assert_eq!(coefficient(matrix_p, eps, &spec), spec.a1);
        let incl_p = [10.5 * eps, 10.5 * eps];
        assert_relative_eq!(coefficient(incl_p, eps, &spec), 1.0 / 64.0);
        let def_p = [0.0, 0.01];
        assert_eq!(coefficient(def_p, eps, &spec), spec.a2);

        // Straddler under each boundary policy (quarter scale, cell (3,1)).
        let eps = 0.25;
        let (inside, outside) = straddler_probes();
        assert_relative_eq!(coefficient(outside, eps, &spec), spec.a0 * eps * eps);
        spec.boundary_policy = BoundaryPolicy::Removed;
        assert_eq!(coefficient(outside, eps, &spec), spec.a1);
        assert_eq!(coefficient(inside, eps, &spec), spec.a2);
        spec.boundary_policy = BoundaryPolicy::Scaled {
            theta: 1.0,
            band_lo: 2.0,
            band_hi: 4.0,
        };
        assert_relative_eq!(coefficient(outside, eps, &spec), 3.0 * 0.25);
    }

    #[test]
    fn sampled_area_fractions_match_the_disk() {
        let spec = MediumSpec::default();
        let eps = 0.125;
        // Sample one deep-matrix cell on an n x n lattice of midpoints.
        let n = 200;
        let mut hits = 0;
        for i in 0..n {
            for j in 0..n {
                let x = eps * (20.0 + (i as f64 + 0.5) / n as f64);
                let y = eps * (20.0 + (j as f64 + 0.5) / n as f64);
                match classify_point([x, y], eps, &spec) {
                    PhaseLabel::Inclusion => hits += 1,
                    PhaseLabel::Matrix => {}
                    other => panic!("unexpected phase {other:?} deep in the matrix"),
                }
            }
        }
        let frac = hits as f64 / (n * n) as f64;
        assert_relative_eq!(frac, spec.cell.inclusion_area(), epsilon = 2.0 / n as f64);
    }

    #[test]
    fn validation_catches_bad_specs() {
        let mut s = MediumSpec::default();
        assert!(s.validate().is_ok());
        s.a1 = 0.0;
        assert!(s.validate().is_err());
        s = MediumSpec {
            cell: CellGeometry::disk([0.9, 0.5], 0.2),
            ..MediumSpec::default()
        };
        assert!(s.validate().is_err(), "inclusion must not touch the cell edge");
        s = MediumSpec {
            boundary_policy: BoundaryPolicy::Scaled {
                theta: 2.5,
                band_lo: 1.0,
                band_hi: 2.0,
            },
            ..MediumSpec::default()
        };
        assert!(s.validate().is_err());
        assert!(DefectGeometry::square(2.0).validate().is_ok());
    }

    #[test]
    fn square_defect_distances() {
        let d = DefectGeometry::square(2.0);
        assert!(d.contains([0.9, 0.9]));
        assert_relative_eq!(d.boundary_distance([0.9, 0.9]), 0.1, epsilon = 1e-12);
        assert_relative_eq!(d.boundary_distance([1.3, 0.0]), 0.3, epsilon = 1e-12);
        assert_relative_eq!(
            d.boundary_distance([1.3, 1.4]),
            (0.09f64 + 0.16).sqrt(),
            epsilon = 1e-12
        );
    }

    proptest! {
        // Deep inside the matrix region the medium is exactly periodic:
        // classification reduces to cell-local inclusion membership.
        #[test]
        fn periodicity_away_from_the_defect(
            x in 3.0..40.0f64,
            y in 3.0..40.0f64,
            k in 2u32..7,
        ) {
            let spec = MediumSpec::default();
            let eps = 1.0 / f64::from(1u32 << k);
            let p = [x, y];
            let label = classify_point(p, eps, &spec);
            let (sx, sy) = (x / eps, y / eps);
            let local = spec.cell.contains_local(sx - sx.floor(), sy - sy.floor());
            let expect = if local { PhaseLabel::Inclusion } else { PhaseLabel::Matrix };
            prop_assert_eq!(label, expect);
            prop_assert!(coefficient(p, eps, &spec) > 0.0);
        }
    }
}
