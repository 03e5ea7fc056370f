//! Equal-measure partition of a cylinder surface under the linear-density
//! measure.
//!
//! The measure on the curved surface `{ |x_1| <= L, |x_perp| = W }` has
//! density `beta * (1 + (x_1 + Lp) / (2 Lp))` with respect to surface area,
//! rising linearly from `beta` to `2 beta` across `[-Lp, Lp]`. Patches are
//! bands in `x_1` at mass quantiles, crossed with equal-area sphere regions,
//! so all patch masses agree to rounding.

use super::sphere::{eq_partition, sphere_area, SphereRegion};
use crate::error::{GravError, Result};
use crate::quad::integrate_1d;
use serde::Serialize;

/// The linear-density measure on a cylinder surface of radius `w` in `R^d`.
#[derive(Debug, Clone)]
pub struct CylinderMeasure {
    pub dim: usize,
    pub w: f64,
    /// Density profile half-length: `v(x1) = 1 + (x1 + profile_l)/(2 profile_l)`.
    pub profile_l: f64,
    pub beta: f64,
}

impl CylinderMeasure {
    pub fn new(dim: usize, w: f64, profile_l: f64, beta: f64) -> Result<Self> {
        if dim < 3 || w <= 0.0 || profile_l <= 0.0 || beta <= 0.0 {
            return Err(GravError::InvalidParameter(
                "cylinder measure needs d >= 3 and positive w, L, beta".into(),
            ));
        }
        Ok(Self { dim, w, profile_l, beta })
    }

    /// Linear density at `x1`, including the `beta` scale.
    pub fn density(&self, x1: f64) -> f64 {
        self.beta * (1.0 + (x1 + self.profile_l) / (2.0 * self.profile_l))
    }

    /// Cross-section area: the sphere of radius `w` in the `d-1` transverse
    /// coordinates.
    pub fn ring_area(&self) -> f64 {
        crate::geom::unit_sphere_area(self.dim - 1) * self.w.powi(self.dim as i32 - 2)
    }

    /// Mass of the band `[a, b]` (times the full cross section).
    pub fn band_mass(&self, a: f64, b: f64) -> f64 {
        let lp = self.profile_l;
        let prim = |t: f64| t + (t + lp) * (t + lp) / (4.0 * lp);
        self.beta * (prim(b) - prim(a)) * self.ring_area()
    }

    /// Solve for `c` with `band_mass(a, c) = target` by bisection.
    fn mass_quantile(&self, a: f64, hi: f64, target: f64) -> f64 {
        let mut lo = a;
        let mut hi = hi;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.band_mass(a, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Total mass of the measure over the full profile `[-L, L]`:
/// `beta * 3/2 * area`.
pub fn nu_total_mass(measure: &CylinderMeasure) -> f64 {
    measure.band_mass(-measure.profile_l, measure.profile_l)
}

/// One patch: an `x_1` band crossed with a sphere region of the cross
/// section.
#[derive(Debug, Clone)]
pub struct Patch {
    pub x1: (f64, f64),
    pub cross_section: SphereRegion,
    /// Exact nu-mass assigned by construction.
    pub measure: f64,
    /// Fraction of the cross-section sphere this patch occupies.
    pub area_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    pub patch_count: usize,
    pub patch_measure: f64,
    pub max_diameter: f64,
    pub diameter_constant: f64,
    pub count_constant: f64,
}

#[derive(Debug, Clone)]
pub struct PatchDecomposition {
    pub measure: CylinderMeasure,
    /// Interval of `x_1` covered by the patches.
    pub cover: (f64, f64),
    pub target_diameter: f64,
    pub patches: Vec<Patch>,
    pub patch_measure: f64,
}

impl PatchDecomposition {
    /// Partition the band `cover` of the cylinder surface into patches of
    /// exactly equal mass about `tau^{d-1}` each.
    pub fn build(measure: CylinderMeasure, cover: (f64, f64), tau: f64) -> Result<Self> {
        let d = measure.dim;
        if !(tau > 0.0 && tau < measure.w) {
            return Err(GravError::InvalidParameter(format!(
                "tau must lie in (0, W); got tau={tau}, W={}",
                measure.w
            )));
        }
        if cover.1 <= cover.0 {
            return Err(GravError::InvalidParameter("empty cover interval".into()));
        }
        let total = measure.band_mass(cover.0, cover.1);
        let target = tau.powi(d as i32 - 1);
        let count = ((total / target).round() as usize).max(1);
        let mu = total / count as f64;
        let n_bands = (((cover.1 - cover.0) / tau).round() as usize).max(1).min(count);
        // Integer patch counts per band by cumulative rounding.
        let mut counts = vec![0usize; n_bands];
        let mut assigned = 0usize;
        for (b, c) in counts.iter_mut().enumerate() {
            let cum = ((b + 1) as f64 / n_bands as f64 * count as f64).round() as usize;
            *c = cum - assigned;
            assigned = cum;
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(GravError::InvalidParameter(
                "tau infeasible: a band received no patches".into(),
            ));
        }
        let m = d - 2; // cross-section sphere dimension
        let mut patches = Vec::with_capacity(count);
        let mut a = cover.0;
        for (b, &c) in counts.iter().enumerate() {
            let b_hi = if b + 1 == n_bands {
                cover.1
            } else {
                measure.mass_quantile(a, cover.1, c as f64 * mu)
            };
            for region in eq_partition(m, c) {
                patches.push(Patch {
                    x1: (a, b_hi),
                    cross_section: region,
                    measure: mu,
                    area_fraction: 1.0 / c as f64,
                });
            }
            a = b_hi;
        }
        Ok(Self { measure, cover, target_diameter: tau, patches, patch_measure: mu })
    }

    /// Independent quadrature measurement of one patch's nu-mass.
    pub fn patch_mass_quadrature(&self, patch: &Patch) -> f64 {
        let m = self.measure.dim - 2;
        let area = patch.cross_section.area(m) * self.measure.w.powi(self.measure.dim as i32 - 2);
        let (band, _) = integrate_1d(|t| self.measure.density(t), patch.x1.0, patch.x1.1, 1e-13);
        band * area
    }

    /// A point of the patch embedded in `R^d`, from parameters in `[0,1]^{d-1}`.
    pub fn embed(&self, patch: &Patch, q: &[f64]) -> Vec<f64> {
        let d = self.measure.dim;
        let m = d - 2;
        let x1 = patch.x1.0 + (patch.x1.1 - patch.x1.0) * q[0];
        let u = patch.cross_section.point(m, &q[1..]);
        let mut out = Vec::with_capacity(d);
        out.push(x1);
        out.extend(u.into_iter().map(|c| c * self.measure.w));
        out
    }

    /// Measured diameter of a patch from probe points.
    pub fn patch_diameter(&self, patch: &Patch) -> f64 {
        let d = self.measure.dim;
        let m = d - 2;
        let per_axis = if m >= 3 { 3 } else { 4 };
        let sphere_pts = patch.cross_section.probe_points(m, per_axis);
        let mut pts = Vec::new();
        for frac in [0.0, 0.5, 1.0] {
            let x1 = patch.x1.0 + (patch.x1.1 - patch.x1.0) * frac;
            for u in &sphere_pts {
                let mut p = Vec::with_capacity(d);
                p.push(x1);
                p.extend(u.iter().map(|c| c * self.measure.w));
                pts.push(p);
            }
        }
        let mut best = 0.0f64;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                best = best.max(crate::geom::dist2(a, b));
            }
        }
        best.sqrt()
    }

    /// nu-average of the monomial `w^beta_idx` over a patch. The band part
    /// and the sphere part factor exactly.
    pub fn patch_moment(&self, patch: &Patch, beta_idx: &[usize]) -> f64 {
        let d = self.measure.dim;
        let m = d - 2;
        let (band_w, _) = integrate_1d(
            |t| self.measure.density(t) * t.powi(beta_idx[0] as i32),
            patch.x1.0,
            patch.x1.1,
            1e-13,
        );
        let (band_mass, _) =
            integrate_1d(|t| self.measure.density(t), patch.x1.0, patch.x1.1, 1e-13);
        let tail: usize = beta_idx[1..].iter().sum();
        let sphere_m = patch.cross_section.moment(m, &beta_idx[1..]);
        let sphere_area = patch.cross_section.area(m);
        (band_w / band_mass) * (sphere_m / sphere_area) * self.measure.w.powi(tail as i32)
    }

    /// Dense midpoint-product oracle for the same average; an independent
    /// code path used to re-verify certifications.
    pub fn patch_moment_dense(&self, patch: &Patch, beta_idx: &[usize], steps: usize) -> f64 {
        let d = self.measure.dim;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut q = vec![0.0; d - 1];
        let mut counter = vec![0usize; d - 1];
        loop {
            for (i, &c) in counter.iter().enumerate() {
                q[i] = (c as f64 + 0.5) / steps as f64;
            }
            let p = self.embed(patch, &q);
            // Weight: density along x1; the sphere parametrization is
            // area-uniform by construction, so no extra Jacobian appears.
            let wgt = self.measure.density(p[0]);
            num += wgt * crate::cubature::monomial(&p, beta_idx);
            den += wgt;
            let mut i = 0;
            loop {
                counter[i] += 1;
                if counter[i] < steps {
                    break;
                }
                counter[i] = 0;
                i += 1;
                if i == d - 1 {
                    return num / den;
                }
            }
        }
    }
}

/// Standalone partition of the surface `{ |x_1| <= l, |x_perp| = w }` under
/// the unit-scale linear density (`beta = 1`).
pub fn partition_cylinder(d: usize, l: f64, w: f64, tau: f64) -> Result<PatchDecomposition> {
    let measure = CylinderMeasure::new(d, w, l, 1.0)?;
    PatchDecomposition::build(measure, (-l, l), tau)
}

impl PatchDecomposition {
    pub fn report(&self) -> PartitionReport {
        let tau = self.target_diameter;
        let d = self.measure.dim;
        let max_diameter = self
            .patches
            .iter()
            .map(|p| self.patch_diameter(p))
            .fold(0.0, f64::max);
        let k = self.patches.len() as f64;
        let l_scale = 0.5 * (self.cover.1 - self.cover.0);
        let count_constant =
            k / (l_scale * self.measure.w.powi(d as i32 - 2) * tau.powi(-(d as i32 - 1)));
        PartitionReport {
            patch_count: self.patches.len(),
            patch_measure: self.patch_measure,
            max_diameter,
            diameter_constant: max_diameter / tau,
            count_constant,
        }
    }
}
