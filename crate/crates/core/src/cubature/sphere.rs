//! Recursive zonal equal-area partition of unit spheres.
//!
//! `S^1` splits into equal arcs. For `m >= 2`, `S^m` splits into two polar
//! caps and a stack of collars; each collar carries an integer number of
//! regions and is partitioned recursively through its `S^{m-1}` cross
//! section. All regions have exactly equal area by construction (boundaries
//! sit at area quantiles).

use crate::quad::integrate_1d;

/// A region of `S^m` (unit radius).
#[derive(Debug, Clone, PartialEq)]
pub enum SphereRegion {
    /// The whole sphere.
    Full,
    /// `S^1` arc with angle in `[a, b]`.
    Arc { a: f64, b: f64 },
    /// Polar band `theta in [a, b]` crossed with a region of `S^{m-1}`.
    Band { a: f64, b: f64, sub: Box<SphereRegion> },
}

/// Area of `S^m` (unit radius) embedded in `R^{m+1}`.
pub fn sphere_area(m: usize) -> f64 {
    crate::geom::unit_sphere_area(m + 1)
}

/// Area of the polar cap `{theta <= t}` on `S^m`.
pub fn cap_area(m: usize, t: f64) -> f64 {
    if m == 1 {
        return 2.0 * t; // arcs [-t, t]; unused by the partition logic
    }
    let (v, _) = integrate_1d(|u| u.sin().powi(m as i32 - 1), 0.0, t, 1e-13);
    sphere_area(m - 1) * v
}

/// Inverse of `cap_area` by bisection.
pub fn cap_area_inverse(m: usize, target: f64) -> f64 {
    let total = sphere_area(m);
    let mut lo = 0.0f64;
    let mut hi = std::f64::consts::PI;
    if target <= 0.0 {
        return 0.0;
    }
    if target >= total {
        return hi;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if cap_area(m, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Partition `S^m` into `count` regions of exactly equal area.
pub fn eq_partition(m: usize, count: usize) -> Vec<SphereRegion> {
    assert!(count >= 1);
    if count == 1 {
        return vec![SphereRegion::Full];
    }
    if m == 1 {
        let step = 2.0 * std::f64::consts::PI / count as f64;
        return (0..count)
            .map(|i| SphereRegion::Arc { a: i as f64 * step, b: (i + 1) as f64 * step })
            .collect();
    }
    let total = sphere_area(m);
    let v_r = total / count as f64;
    if count == 2 {
        let mid = cap_area_inverse(m, v_r);
        return vec![
            SphereRegion::Band { a: 0.0, b: mid, sub: Box::new(SphereRegion::Full) },
            SphereRegion::Band { a: mid, b: std::f64::consts::PI, sub: Box::new(SphereRegion::Full) },
        ];
    }
    let theta_c = cap_area_inverse(m, v_r);
    let delta_i = v_r.powf(1.0 / m as f64);
    let span = std::f64::consts::PI - 2.0 * theta_c;
    let n_collars = ((span / delta_i).round() as usize).max(1);
    // Integer region counts per collar by cumulative rounding of ideal areas.
    let ideal: Vec<f64> = (0..n_collars)
        .map(|j| {
            let t0 = theta_c + span * j as f64 / n_collars as f64;
            let t1 = theta_c + span * (j + 1) as f64 / n_collars as f64;
            (cap_area(m, t1) - cap_area(m, t0)) / v_r
        })
        .collect();
    let mut counts = vec![0usize; n_collars];
    let mut cum = 0.0;
    let mut assigned = 0usize;
    for j in 0..n_collars {
        cum += ideal[j];
        let c = cum.round() as usize;
        counts[j] = c - assigned;
        assigned = c;
    }
    // Rounding can leave the tail empty; push any shortfall into the last collar.
    let shortfall = (count - 2) as isize - assigned as isize;
    if shortfall != 0 {
        let last = n_collars - 1;
        counts[last] = (counts[last] as isize + shortfall).max(0) as usize;
    }

    let mut regions = Vec::with_capacity(count);
    regions.push(SphereRegion::Band { a: 0.0, b: theta_c, sub: Box::new(SphereRegion::Full) });
    let mut area_done = v_r;
    for &c in counts.iter().filter(|&&c| c > 0) {
        let t0 = cap_area_inverse(m, area_done);
        area_done += c as f64 * v_r;
        let t1 = cap_area_inverse(m, area_done);
        for sub in eq_partition(m - 1, c) {
            regions.push(SphereRegion::Band { a: t0, b: t1, sub: Box::new(sub) });
        }
    }
    regions.push(SphereRegion::Band {
        a: cap_area_inverse(m, area_done),
        b: std::f64::consts::PI,
        sub: Box::new(SphereRegion::Full),
    });
    regions
}

impl SphereRegion {
    /// Area of the region as a subset of `S^m`, by adaptive quadrature
    /// (independent of the quantile construction).
    pub fn area(&self, m: usize) -> f64 {
        match self {
            SphereRegion::Full => sphere_area(m),
            SphereRegion::Arc { a, b } => b - a,
            SphereRegion::Band { a, b, sub } => {
                let sub_area = sub.area(m - 1);
                let (v, _) = integrate_1d(|t| t.sin().powi(m as i32 - 1), *a, *b, 1e-13);
                v * sub_area
            }
        }
    }

    /// `integral over the region of u^gamma dsigma(u)` for `u in S^m`.
    /// The first angle controls `u_1 = cos(theta)`; the remaining
    /// coordinates are `sin(theta)` times an `S^{m-1}` point.
    pub fn moment(&self, m: usize, gamma: &[usize]) -> f64 {
        debug_assert_eq!(gamma.len(), m + 1);
        match self {
            SphereRegion::Full => {
                if m == 1 {
                    SphereRegion::Arc { a: 0.0, b: 2.0 * std::f64::consts::PI }.moment(m, gamma)
                } else {
                    SphereRegion::Band {
                        a: 0.0,
                        b: std::f64::consts::PI,
                        sub: Box::new(SphereRegion::Full),
                    }
                    .moment(m, gamma)
                }
            }
            SphereRegion::Arc { a, b } => {
                let (g0, g1) = (gamma[0] as i32, gamma[1] as i32);
                let (v, _) =
                    integrate_1d(|t| t.cos().powi(g0) * t.sin().powi(g1), *a, *b, 1e-13);
                v
            }
            SphereRegion::Band { a, b, sub } => {
                let g0 = gamma[0] as i32;
                let tail: usize = gamma[1..].iter().sum();
                let sub_m = sub.moment(m - 1, &gamma[1..]);
                let (v, _) = integrate_1d(
                    |t| t.cos().powi(g0) * t.sin().powi(tail as i32 + m as i32 - 1),
                    *a,
                    *b,
                    1e-13,
                );
                v * sub_m
            }
        }
    }

    /// Map `q in [0,1]^m` into the region, area-uniform in each band level.
    pub fn point(&self, m: usize, q: &[f64]) -> Vec<f64> {
        match self {
            SphereRegion::Full => {
                if m == 1 {
                    SphereRegion::Arc { a: 0.0, b: 2.0 * std::f64::consts::PI }.point(m, q)
                } else {
                    SphereRegion::Band {
                        a: 0.0,
                        b: std::f64::consts::PI,
                        sub: Box::new(SphereRegion::Full),
                    }
                    .point(m, q)
                }
            }
            SphereRegion::Arc { a, b } => {
                let t = a + (b - a) * q[0];
                vec![t.cos(), t.sin()]
            }
            SphereRegion::Band { a, b, sub } => {
                // Area quantile between the band's cap areas.
                let ca = cap_area(m, *a);
                let cb = cap_area(m, *b);
                let theta = cap_area_inverse(m, ca + (cb - ca) * q[0]);
                let rest = sub.point(m - 1, &q[1..]);
                let (s, c) = theta.sin_cos();
                let mut out = Vec::with_capacity(m + 1);
                out.push(c);
                out.extend(rest.into_iter().map(|r| s * r));
                out
            }
        }
    }

    /// Representative sample including extreme corners, for diameter bounds.
    pub fn probe_points(&self, m: usize, per_axis: usize) -> Vec<Vec<f64>> {
        let mut qs: Vec<Vec<f64>> = vec![vec![]];
        for _ in 0..m {
            let mut next = Vec::new();
            for q in &qs {
                for i in 0..per_axis {
                    let mut q2 = q.clone();
                    q2.push(i as f64 / (per_axis - 1) as f64);
                    next.push(q2);
                }
            }
            qs = next;
        }
        qs.into_iter().map(|q| self.point(m, &q)).collect()
    }
}
