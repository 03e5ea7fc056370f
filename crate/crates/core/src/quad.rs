//! Numerical integration utilities.
//!
//! Three layers: an adaptive 1-D Gauss-Kronrod rule, an adaptive
//! Genz-Malik cubature over boxes in 2..=6 dimensions, and ray-shooting
//! integrals of the kernels `g(z-x)` and `|z-x|^{2-d}` over convex regions.
//! The radial part of those kernels integrates exactly along rays, so only
//! a smooth angular integrand is left for the cubature.

use crate::error::{GravError, Result};
use crate::geom::Region;

// 7-point Gauss, 15-point Kronrod nodes/weights on [-1, 1] (QUADPACK).
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        kron += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive 1-D integration to absolute tolerance `tol`.
/// Returns `(value, achieved_error_estimate)`.
pub fn integrate_1d<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    // Interval heap ordered by error estimate.
    let (v, e) = gk15(&mut f, a, b);
    let mut intervals = vec![(e, a, b, v)];
    let mut total_v = v;
    let mut total_e = e;
    for _ in 0..10_000 {
        if total_e <= tol {
            break;
        }
        // Split the worst interval.
        let worst = intervals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let (e0, a0, b0, v0) = intervals.swap_remove(worst);
        let m = 0.5 * (a0 + b0);
        if m == a0 || m == b0 {
            // Cannot refine further.
            intervals.push((e0, a0, b0, v0));
            break;
        }
        let (v1, e1) = gk15(&mut f, a0, m);
        let (v2, e2) = gk15(&mut f, m, b0);
        total_v += v1 + v2 - v0;
        total_e += e1 + e2 - e0;
        intervals.push((e1, a0, m, v1));
        intervals.push((e2, m, b0, v2));
    }
    (total_v, total_e)
}

/// Result of an adaptive cubature.
#[derive(Debug, Clone)]
pub struct CubatureResult {
    pub value: Vec<f64>,
    pub error: f64,
}

/// Adaptive Genz-Malik cubature for vector integrands over a box.
/// `n` is the box dimension (>= 2), `m` the integrand dimension.
pub fn integrate_box<F>(f: &F, lo: &[f64], hi: &[f64], m: usize, tol: f64, max_regions: usize) -> CubatureResult
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = lo.len();
    assert!(n >= 2, "Genz-Malik needs dimension >= 2");
    let rule = GmRule::new(n);
    let mut heap: Vec<GmRegion> = Vec::new();
    let first = rule.apply(f, lo, hi, m);
    let mut value = first.value.clone();
    let mut error = first.error;
    heap.push(first);
    while error > tol && heap.len() < max_regions {
        let worst = heap
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.error.partial_cmp(&b.1.error).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let region = heap.swap_remove(worst);
        let (lo0, hi0) = (&region.lo, &region.hi);
        let axis = region.split_axis;
        let mid = 0.5 * (lo0[axis] + hi0[axis]);
        if mid == lo0[axis] || mid == hi0[axis] {
            heap.push(region);
            break;
        }
        let lo1 = lo0.clone();
        let mut hi1 = hi0.clone();
        hi1[axis] = mid;
        let mut lo2 = lo0.clone();
        lo2[axis] = mid;
        let r1 = rule.apply(f, &lo1, &hi1, m);
        let r2 = rule.apply(f, &lo2, hi0, m);
        for k in 0..m {
            value[k] += r1.value[k] + r2.value[k] - region.value[k];
        }
        error += r1.error + r2.error - region.error;
        heap.push(r1);
        heap.push(r2);
    }
    CubatureResult { value, error: error.max(0.0) }
}

struct GmRegion {
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: Vec<f64>,
    error: f64,
    split_axis: usize,
}

/// Genz-Malik degree-7 rule with embedded degree-5 error estimate.
struct GmRule {
    n: usize,
    w: [f64; 5],
    wp: [f64; 4],
}

const GM_L2: f64 = 0.358568582800318; // sqrt(9/70)
const GM_L3: f64 = 0.948683298050514; // sqrt(9/10)
const GM_L4: f64 = 0.948683298050514;
const GM_L5: f64 = 0.688247201611685; // sqrt(9/19)

impl GmRule {
    fn new(n: usize) -> Self {
        let nf = n as f64;
        let two_n = (2.0f64).powi(n as i32);
        let w = [
            two_n * (12824.0 - 9120.0 * nf + 400.0 * nf * nf) / 19683.0,
            two_n * 980.0 / 6561.0,
            two_n * (1820.0 - 400.0 * nf) / 19683.0,
            two_n * 200.0 / 19683.0,
            6859.0 / 19683.0,
        ];
        let wp = [
            two_n * (729.0 - 950.0 * nf + 50.0 * nf * nf) / 729.0,
            two_n * 245.0 / 486.0,
            two_n * (265.0 - 100.0 * nf) / 1458.0,
            two_n * 25.0 / 729.0,
        ];
        Self { n, w, wp }
    }

    fn apply<F>(&self, f: &F, lo: &[f64], hi: &[f64], m: usize) -> GmRegion
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let n = self.n;
        let mut center = vec![0.0; n];
        let mut half = vec![0.0; n];
        let mut jac = 1.0;
        for i in 0..n {
            center[i] = 0.5 * (lo[i] + hi[i]);
            half[i] = 0.5 * (hi[i] - lo[i]);
            jac *= half[i];
        }
        let mut x = center.clone();
        let mut fx = vec![0.0; m];
        let mut sum1 = vec![0.0; m]; // center
        let mut sum2 = vec![0.0; m]; // +-l2 axis points
        let mut sum3 = vec![0.0; m]; // +-l3 axis points
        let mut sum4 = vec![0.0; m]; // l4 double-axis points
        let mut sum5 = vec![0.0; m]; // l5 corners
        let mut diff = vec![0.0; n]; // fourth-difference per axis for split choice

        f(&x, &mut fx);
        for k in 0..m {
            sum1[k] = fx[k];
        }
        let f_center: Vec<f64> = fx.clone();

        for i in 0..n {
            let mut axis2 = vec![0.0; m];
            let mut axis3 = vec![0.0; m];
            for &s in &[-1.0, 1.0] {
                x[i] = center[i] + s * GM_L2 * half[i];
                f(&x, &mut fx);
                for k in 0..m {
                    axis2[k] += fx[k];
                }
                x[i] = center[i] + s * GM_L3 * half[i];
                f(&x, &mut fx);
                for k in 0..m {
                    axis3[k] += fx[k];
                }
            }
            x[i] = center[i];
            for k in 0..m {
                sum2[k] += axis2[k];
                sum3[k] += axis3[k];
            }
            // Fourth difference, summed over output components.
            let mut d = 0.0;
            for k in 0..m {
                d += (axis2[k] - 2.0 * f_center[k]
                    - (GM_L2 / GM_L3).powi(2) * (axis3[k] - 2.0 * f_center[k]))
                    .abs();
            }
            diff[i] = d;
        }
        // l4 points: pairs of axes, all sign combinations.
        for i in 0..n {
            for j in (i + 1)..n {
                for &si in &[-1.0, 1.0] {
                    for &sj in &[-1.0, 1.0] {
                        x[i] = center[i] + si * GM_L4 * half[i];
                        x[j] = center[j] + sj * GM_L4 * half[j];
                        f(&x, &mut fx);
                        for k in 0..m {
                            sum4[k] += fx[k];
                        }
                    }
                }
                x[i] = center[i];
                x[j] = center[j];
            }
        }
        // Corners at l5.
        for bits in 0..(1u32 << n) {
            for i in 0..n {
                let s = if bits >> i & 1 == 1 { 1.0 } else { -1.0 };
                x[i] = center[i] + s * GM_L5 * half[i];
            }
            f(&x, &mut fx);
            for k in 0..m {
                sum5[k] += fx[k];
            }
        }
        for i in 0..n {
            x[i] = center[i];
        }

        let mut val7 = vec![0.0; m];
        let mut err = 0.0;
        for k in 0..m {
            val7[k] = jac
                * (self.w[0] * sum1[k]
                    + self.w[1] * sum2[k]
                    + self.w[2] * sum3[k]
                    + self.w[3] * sum4[k]
                    + self.w[4] * sum5[k]);
            let val5 = jac
                * (self.wp[0] * sum1[k]
                    + self.wp[1] * sum2[k]
                    + self.wp[2] * sum3[k]
                    + self.wp[3] * sum4[k]);
            err += (val7[k] - val5).abs();
        }
        let split_axis = diff
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        GmRegion { lo: lo.to_vec(), hi: hi.to_vec(), value: val7, error: err, split_axis }
    }
}

/// Map spherical angles to a unit direction in `R^d`.
/// `angles[0..d-2]` are polar angles in `[0, pi]`, `angles[d-2]` is the
/// azimuth in `[0, 2 pi)`. The surface Jacobian is
/// `prod_j sin^{d-2-j}(angles[j])` over the polar angles.
pub fn direction_from_angles(d: usize, angles: &[f64], dir: &mut [f64]) -> f64 {
    debug_assert_eq!(angles.len(), d - 1);
    let mut jac = 1.0;
    let mut sin_prod = 1.0;
    for i in 0..d - 1 {
        let (s, c) = angles[i].sin_cos();
        dir[i] = sin_prod * c;
        if i < d - 2 {
            jac *= s.powi((d - 2 - i) as i32);
        }
        sin_prod *= s;
    }
    dir[d - 1] = sin_prod;
    jac
}

/// Radial window selecting `{ a <= |z - x| <= b }` around the base point.
#[derive(Debug, Clone, Copy)]
pub struct RadialWindow {
    pub a: f64,
    pub b: f64,
}

impl RadialWindow {
    pub const FULL: RadialWindow = RadialWindow { a: 0.0, b: f64::INFINITY };
}

/// Kernel choices for ray-shooting integrals centered at `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RayKernel {
    /// `g(z - x) = (z-x)/|z-x|^d`; radial primitive is the ray length, so
    /// the angular integrand is `dir * |interval|`. Output dimension `d`.
    Force,
    /// `|z - x|^{2-d}`; radial primitive `r^2/2`. Output dimension 1.
    PotentialKernel,
}

/// Integrate `g(z-x)` or `|z-x|^{2-d}` over `region ∩ {a <= |z-x| <= b}`
/// by exact radial integration and adaptive angular cubature.
///
/// The region must be convex (`ray_interval` support). Works for any `x`,
/// inside or outside; the kernel singularity at `z = x` integrates away.
pub fn ray_integral(
    x: &[f64],
    region: &Region,
    window: RadialWindow,
    kernel: RayKernel,
    tol: f64,
) -> Result<CubatureResult> {
    let d = x.len();
    let m = match kernel {
        RayKernel::Force => d,
        RayKernel::PotentialKernel => 1,
    };
    let lo = vec![0.0; d - 1];
    let mut hi = vec![std::f64::consts::PI; d - 1];
    hi[d - 2] = 2.0 * std::f64::consts::PI;

    let f = |angles: &[f64], out: &mut [f64]| {
        let mut dir = vec![0.0; d];
        let jac = direction_from_angles(d, angles, &mut dir);
        out.iter_mut().for_each(|o| *o = 0.0);
        if jac == 0.0 {
            return;
        }
        if let Some((t0, t1)) = region.ray_interval(x, &dir) {
            let a = t0.max(window.a).max(0.0);
            let b = t1.min(window.b);
            if b <= a {
                return;
            }
            match kernel {
                RayKernel::Force => {
                    let len = b - a;
                    for k in 0..d {
                        out[k] = jac * dir[k] * len;
                    }
                }
                RayKernel::PotentialKernel => {
                    out[0] = jac * 0.5 * (b * b - a * a);
                }
            }
        }
    };
    let res = integrate_box(&f, &lo, &hi, m, tol, 40_000);
    if res.error > tol * 50.0 {
        return Err(GravError::Quadrature { achieved: res.error, requested: tol });
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::unit_ball_volume;
    use approx::assert_relative_eq;

    #[test]
    fn gk_integrates_smooth_functions() {
        let (v, e) = integrate_1d(|x| x.exp(), 0.0, 1.0, 1e-12);
        assert_relative_eq!(v, std::f64::consts::E - 1.0, epsilon = 1e-11);
        assert!(e < 1e-10);
        let (v, _) = integrate_1d(|x| 1.0 / x.sqrt(), 1e-12, 1.0, 1e-9);
        assert_relative_eq!(v, 2.0, epsilon = 1e-5);
    }

    #[test]
    fn genz_malik_polynomials() {
        // int over [0,1]^3 of x^2 y z = 1/12? (1/3)(1/2)(1/2) = 1/12.
        let f = |x: &[f64], out: &mut [f64]| {
            out[0] = x[0] * x[0] * x[1] * x[2];
        };
        let r = integrate_box(&f, &[0.0; 3], &[1.0; 3], 1, 1e-10, 1000);
        assert_relative_eq!(r.value[0], 1.0 / 12.0, epsilon = 1e-9);
    }

    #[test]
    fn genz_malik_oscillatory() {
        let f = |x: &[f64], out: &mut [f64]| {
            out[0] = (5.0 * x[0]).sin() * (3.0 * x[1]).cos();
        };
        let exact = ((1.0 - (5.0f64).cos()) / 5.0) * ((3.0f64).sin() / 3.0);
        let r = integrate_box(&f, &[0.0; 2], &[1.0; 2], 1, 1e-10, 4000);
        assert_relative_eq!(r.value[0], exact, epsilon = 1e-8);
    }

    #[test]
    fn ray_volume_of_ball_kernel() {
        // Potential kernel over a ball centered at x with d=3:
        // int |z|^{-1} dz over B(0,R) = 4pi R^2/2 = 2 pi R^2.
        let region = Region::ball(vec![0.0; 3], 2.0);
        let r = ray_integral(&[0.0; 3], &region, RadialWindow::FULL, RayKernel::PotentialKernel, 1e-9).unwrap();
        assert_relative_eq!(r.value[0], 2.0 * std::f64::consts::PI * 4.0, epsilon = 1e-6);
    }

    #[test]
    fn ray_force_over_offset_ball_matches_shell_theorem() {
        // Uniform ball not containing x acts as a point mass at its center.
        for d in [3usize, 4] {
            let mut c = vec![0.0; d];
            c[0] = 3.0;
            let region = Region::ball(c.clone(), 1.0);
            let x = vec![0.0; d];
            let r = ray_integral(&x, &region, RadialWindow::FULL, RayKernel::Force, 1e-8).unwrap();
            let vol = unit_ball_volume(d);
            // g(c - x) * vol
            let dist = 3.0f64;
            let expect = vol * dist / dist.powi(d as i32);
            assert_relative_eq!(r.value[0], expect, epsilon = 1e-5);
            for k in 1..d {
                assert!(r.value[k].abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ray_force_inside_box_is_antisymmetric() {
        let region = Region::Box { l: 1.0, w: 1.0 };
        let x = [0.25, -0.1, 0.4];
        let xm = [-0.25, 0.1, -0.4];
        let a = ray_integral(&x, &region, RadialWindow::FULL, RayKernel::Force, 1e-7).unwrap();
        let b = ray_integral(&xm, &region, RadialWindow::FULL, RayKernel::Force, 1e-7).unwrap();
        for k in 0..3 {
            assert!((a.value[k] + b.value[k]).abs() < 5e-6, "{:?} {:?}", a.value, b.value);
        }
    }

    #[test]
    fn radial_window_slices_add_up() {
        let region = Region::Box { l: 1.0, w: 1.0 };
        let x = [0.3, 0.2, -0.5];
        let full = ray_integral(&x, &region, RadialWindow::FULL, RayKernel::Force, 1e-8).unwrap();
        let near = ray_integral(&x, &region, RadialWindow { a: 0.0, b: 0.7 }, RayKernel::Force, 1e-8).unwrap();
        let far = ray_integral(&x, &region, RadialWindow { a: 0.7, b: f64::INFINITY }, RayKernel::Force, 1e-8).unwrap();
        for k in 0..3 {
            assert!((full.value[k] - near.value[k] - far.value[k]).abs() < 1e-5);
        }
    }
}
