//! Geometry primitives: ambient domains, regions, and exact volumes.
//!
//! All boxes and cylinders are centered at the origin and aligned with the
//! axes; the first coordinate is the long axis. `BoxRegion { l, w }` is
//! `{ |x_1| <= l, |x_i| <= w for i >= 2 }` and `Cylinder { l, w }` is
//! `{ |x_1| <= l, x_2^2 + ... + x_d^2 <= w^2 }`, both given by half-lengths.

use crate::error::{GravError, Result};
use serde::{Deserialize, Serialize};

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let hd = d as f64 / 2.0;
    std::f64::consts::PI.powf(hd) / statrs::function::gamma::gamma(hd + 1.0)
}

/// Surface area of the unit sphere `S^{d-1}` in `R^d`, i.e. `d * kappa_d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainMode {
    Box,
    Torus,
}

/// The finite sampling window standing in for `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dim: usize,
    pub mode: DomainMode,
    /// Full side length of the window.
    pub side: f64,
    pub origin_centered: bool,
}

impl DomainSpec {
    pub fn new(dim: usize, mode: DomainMode, side: f64, origin_centered: bool) -> Result<Self> {
        if dim < 3 {
            return Err(GravError::InvalidParameter(format!(
                "dimension must be >= 3, got {dim}"
            )));
        }
        if !(side > 0.0) {
            return Err(GravError::InvalidParameter(format!(
                "side must be positive, got {side}"
            )));
        }
        if mode == DomainMode::Torus && !origin_centered {
            return Err(GravError::InvalidParameter(
                "torus mode requires an origin-centered window".into(),
            ));
        }
        Ok(Self { dim, mode, side, origin_centered })
    }

    pub fn torus(dim: usize, side: f64) -> Result<Self> {
        Self::new(dim, DomainMode::Torus, side, true)
    }

    pub fn boxed(dim: usize, side: f64) -> Result<Self> {
        Self::new(dim, DomainMode::Box, side, true)
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Coordinate range along each axis.
    pub fn coord_range(&self) -> (f64, f64) {
        if self.origin_centered {
            (-self.side / 2.0, self.side / 2.0)
        } else {
            (0.0, self.side)
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let (lo, hi) = self.coord_range();
        x.iter().all(|&c| c >= lo && c <= hi)
    }

    /// Fold a displacement vector into the centered fundamental cell.
    /// Only meaningful in torus mode.
    pub fn min_image(&self, v: &mut [f64]) {
        let s = self.side;
        for c in v.iter_mut() {
            *c -= s * (*c / s).round();
        }
    }
}

/// A measurable subset of `R^d` used to restrict forces and potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Region {
    /// `{ |x_1| <= l, |x_i| <= w }` (half-lengths).
    Box { l: f64, w: f64 },
    /// General axis-aligned box `{ lo_i <= x_i <= hi_i }`.
    Aabb { lo: Vec<f64>, hi: Vec<f64> },
    /// `{ |x_1| <= l, |x_perp| <= w }`.
    Cylinder { l: f64, w: f64 },
    /// Cylinder translated by `offset`.
    ShiftedCylinder { l: f64, w: f64, offset: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// `{ q <= |x - center| <= p }`.
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
    Complement(Box<Region>),
    Intersection(Vec<Region>),
}

impl Region {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Region::Ball { center, radius }
    }

    pub fn annulus(center: Vec<f64>, inner: f64, outer: f64) -> Self {
        Region::Annulus { center, inner, outer }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            Region::Box { l, w } | Region::Cylinder { l, w } => {
                if *l <= 0.0 || *w <= 0.0 {
                    return Err(GravError::InvalidParameter(
                        "box/cylinder half-lengths must be positive".into(),
                    ));
                }
            }
            Region::Aabb { lo, hi } => {
                if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| a >= b) {
                    return Err(GravError::InvalidParameter(
                        "aabb needs lo < hi in every coordinate".into(),
                    ));
                }
            }
            Region::ShiftedCylinder { l, w, offset } => {
                if *l <= 0.0 || *w <= 0.0 {
                    return Err(GravError::InvalidParameter(
                        "cylinder half-lengths must be positive".into(),
                    ));
                }
                if offset.len() != d {
                    return Err(GravError::InvalidParameter("offset dimension mismatch".into()));
                }
            }
            Region::Ball { center, radius } => {
                if *radius <= 0.0 {
                    return Err(GravError::InvalidParameter("ball radius must be positive".into()));
                }
                if center.len() != d {
                    return Err(GravError::InvalidParameter("center dimension mismatch".into()));
                }
            }
            Region::Annulus { center, inner, outer } => {
                if !(*inner >= 0.0 && *outer > *inner) {
                    return Err(GravError::InvalidParameter(
                        "annulus requires 0 <= q < p".into(),
                    ));
                }
                if center.len() != d {
                    return Err(GravError::InvalidParameter("center dimension mismatch".into()));
                }
            }
            Region::Complement(inner) => inner.validate(d)?,
            Region::Intersection(parts) => {
                if parts.is_empty() {
                    return Err(GravError::InvalidParameter("empty intersection".into()));
                }
                for p in parts {
                    p.validate(d)?;
                }
            }
        }
        Ok(())
    }

    pub fn is_bounded(&self) -> bool {
        match self {
            Region::Complement(_) => false,
            Region::Intersection(parts) => parts.iter().any(|p| p.is_bounded()),
            _ => true,
        }
    }

    /// Closed-set membership; boundaries resolve by `<=`.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Box { l, w } => {
                x[0].abs() <= *l && x[1..].iter().all(|&c| c.abs() <= *w)
            }
            Region::Aabb { lo, hi } => {
                x.iter().zip(lo).zip(hi).all(|((&c, &a), &b)| c >= a && c <= b)
            }
            Region::Cylinder { l, w } => {
                x[0].abs() <= *l && perp_norm2(x, None) <= w * w
            }
            Region::ShiftedCylinder { l, w, offset } => {
                (x[0] - offset[0]).abs() <= *l && perp_norm2(x, Some(offset)) <= w * w
            }
            Region::Ball { center, radius } => dist2(x, center) <= radius * radius,
            Region::Annulus { center, inner, outer } => {
                let r2 = dist2(x, center);
                r2 >= inner * inner && r2 <= outer * outer
            }
            Region::Complement(inner) => !inner.contains(x),
            Region::Intersection(parts) => parts.iter().all(|p| p.contains(x)),
        }
    }

    /// Exact volume where a closed form exists; intersections fall back to a
    /// deterministic Monte Carlo estimate with a reported tolerance.
    pub fn volume(&self, d: usize) -> Result<VolumeEstimate> {
        self.validate(d)?;
        let kd = unit_ball_volume(d);
        let v = match self {
            Region::Box { l, w } => (2.0 * l) * (2.0 * w).powi(d as i32 - 1),
            Region::Aabb { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
            Region::Cylinder { l, w } | Region::ShiftedCylinder { l, w, .. } => {
                2.0 * l * unit_ball_volume(d - 1) * w.powi(d as i32 - 1)
            }
            Region::Ball { radius, .. } => kd * radius.powi(d as i32),
            Region::Annulus { inner, outer, .. } => {
                kd * (outer.powi(d as i32) - inner.powi(d as i32))
            }
            Region::Complement(_) => {
                return Err(GravError::Unsupported("volume of an unbounded region".into()))
            }
            Region::Intersection(_) => return self.volume_monte_carlo(d),
        };
        Ok(VolumeEstimate { value: v, tolerance: 0.0 })
    }

    fn volume_monte_carlo(&self, d: usize) -> Result<VolumeEstimate> {
        let (center, radius) = self.bounding_ball(d)?;
        let half = radius;
        let cube_vol = (2.0 * half).powi(d as i32);
        let n = 400_000usize;
        let mut rng = crate::rng::substream(0x7_011, 1, 0);
        let mut hit = 0usize;
        let mut x = vec![0.0; d];
        for _ in 0..n {
            for (i, c) in x.iter_mut().enumerate() {
                *c = center[i] + (2.0 * rand::Rng::gen::<f64>(&mut rng) - 1.0) * half;
            }
            if self.contains(&x) {
                hit += 1;
            }
        }
        let p = hit as f64 / n as f64;
        let value = cube_vol * p;
        let se = cube_vol * (p * (1.0 - p) / n as f64).sqrt();
        Ok(VolumeEstimate { value, tolerance: 3.0 * se })
    }

    /// Center and half-side of an axis-aligned cube certain to contain the
    /// region (bounded regions only).
    pub fn bounding_ball(&self, d: usize) -> Result<(Vec<f64>, f64)> {
        match self {
            Region::Box { l, w } => Ok((vec![0.0; d], l.max(*w))),
            Region::Aabb { lo, hi } => {
                let c: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
                let half = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).fold(0.0f64, f64::max);
                Ok((c, half))
            }
            Region::Cylinder { l, w } => Ok((vec![0.0; d], l.max(*w))),
            Region::ShiftedCylinder { l, w, offset } => Ok((offset.clone(), l.max(*w))),
            Region::Ball { center, radius } => Ok((center.clone(), *radius)),
            Region::Annulus { center, outer, .. } => Ok((center.clone(), *outer)),
            Region::Complement(_) => {
                Err(GravError::Unsupported("bounding ball of an unbounded region".into()))
            }
            Region::Intersection(parts) => {
                for p in parts {
                    if p.is_bounded() {
                        return p.bounding_ball(d);
                    }
                }
                Err(GravError::Unsupported("intersection with no bounded part".into()))
            }
        }
    }

    /// Largest distance from `x` to a point of the region.
    pub fn max_distance_from(&self, x: &[f64], d: usize) -> Result<f64> {
        let (c, half) = self.bounding_ball(d)?;
        let dist_c = dist2(x, &c).sqrt();
        Ok(dist_c + half * (d as f64).sqrt())
    }

    /// Distance from `x` to the region boundary, where a closed form exists.
    pub fn boundary_distance(&self, x: &[f64]) -> Option<f64> {
        match self {
            Region::Box { l, w } => {
                let mut m = f64::INFINITY;
                for (i, &c) in x.iter().enumerate() {
                    let h = if i == 0 { *l } else { *w };
                    m = m.min((h - c.abs()).abs());
                }
                Some(m)
            }
            Region::Aabb { lo, hi } => {
                let mut m = f64::INFINITY;
                for i in 0..x.len() {
                    m = m.min((x[i] - lo[i]).abs()).min((hi[i] - x[i]).abs());
                }
                Some(m)
            }
            Region::Ball { center, radius } => Some((dist2(x, center).sqrt() - radius).abs()),
            Region::Annulus { center, inner, outer } => {
                let r = dist2(x, center).sqrt();
                Some((r - inner).abs().min((outer - r).abs()))
            }
            Region::Cylinder { l, w } => {
                let axial = (l - x[0].abs()).abs();
                let radial = (w - perp_norm2(x, None).sqrt()).abs();
                Some(axial.min(radial))
            }
            Region::ShiftedCylinder { l, w, offset } => {
                let axial = (l - (x[0] - offset[0]).abs()).abs();
                let radial = (w - perp_norm2(x, Some(offset)).sqrt()).abs();
                Some(axial.min(radial))
            }
            _ => None,
        }
    }

    /// Intersection of the ray `x + t*dir` (t >= 0, `dir` unit) with a
    /// convex region, as a parameter interval. Returns `None` for regions
    /// that are not convex or not supported.
    pub fn ray_interval(&self, x: &[f64], dir: &[f64]) -> Option<(f64, f64)> {
        match self {
            Region::Box { l, w } => {
                let mut t0 = 0.0f64;
                let mut t1 = f64::INFINITY;
                for i in 0..x.len() {
                    let h = if i == 0 { *l } else { *w };
                    if !slab_clip(x[i], dir[i], h, &mut t0, &mut t1) {
                        return None;
                    }
                }
                interval_or_none(t0, t1)
            }
            Region::Aabb { lo, hi } => {
                let mut t0 = 0.0f64;
                let mut t1 = f64::INFINITY;
                for i in 0..x.len() {
                    let c = 0.5 * (lo[i] + hi[i]);
                    let h = 0.5 * (hi[i] - lo[i]);
                    if !slab_clip(x[i] - c, dir[i], h, &mut t0, &mut t1) {
                        return None;
                    }
                }
                interval_or_none(t0, t1)
            }
            Region::Cylinder { l, w } => cylinder_ray(x, dir, *l, *w, None),
            Region::ShiftedCylinder { l, w, offset } => cylinder_ray(x, dir, *l, *w, Some(offset)),
            Region::Ball { center, radius } => ball_ray(x, dir, center, *radius),
            Region::Annulus { .. } => None,
            Region::Complement(_) => None,
            Region::Intersection(parts) => {
                let mut t0 = 0.0f64;
                let mut t1 = f64::INFINITY;
                for p in parts {
                    let (a, b) = p.ray_interval(x, dir)?;
                    t0 = t0.max(a);
                    t1 = t1.min(b);
                }
                interval_or_none(t0, t1)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeEstimate {
    pub value: f64,
    /// Zero for closed forms; a 3-sigma radius for sampled estimates.
    pub tolerance: f64,
}

/// The curved part of a cylinder boundary, `{ |x_1| <= l, |x_perp| = w }`;
/// `include_caps = false` models the boundary without its end discs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderSurface {
    pub l: f64,
    pub w: f64,
    pub include_caps: bool,
}

impl CylinderSurface {
    pub fn new(l: f64, w: f64) -> Result<Self> {
        if l <= 0.0 || w <= 0.0 {
            return Err(GravError::InvalidParameter("cylinder surface needs l, w > 0".into()));
        }
        Ok(Self { l, w, include_caps: false })
    }

    /// `(d-1)`-dimensional area of the curved part.
    pub fn curved_area(&self, d: usize) -> f64 {
        2.0 * self.l * unit_sphere_area(d - 1) * self.w.powi(d as i32 - 2)
    }

    /// Area including the two caps.
    pub fn total_area(&self, d: usize) -> f64 {
        let caps = if self.include_caps {
            2.0 * unit_ball_volume(d - 1) * self.w.powi(d as i32 - 1)
        } else {
            0.0
        };
        self.curved_area(d) + caps
    }
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn perp_norm2(x: &[f64], offset: Option<&[f64]>) -> f64 {
    match offset {
        None => x[1..].iter().map(|c| c * c).sum(),
        Some(o) => x[1..].iter().zip(&o[1..]).map(|(c, oc)| (c - oc) * (c - oc)).sum(),
    }
}

fn slab_clip(x: f64, dx: f64, h: f64, t0: &mut f64, t1: &mut f64) -> bool {
    if dx.abs() < 1e-300 {
        return x.abs() <= h;
    }
    let (mut a, mut b) = ((-h - x) / dx, (h - x) / dx);
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    *t0 = t0.max(a);
    *t1 = t1.min(b);
    true
}

fn interval_or_none(t0: f64, t1: f64) -> Option<(f64, f64)> {
    if t1 > t0 {
        Some((t0, t1))
    } else {
        None
    }
}

fn cylinder_ray(x: &[f64], dir: &[f64], l: f64, w: f64, offset: Option<&[f64]>) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    let x0 = x[0] - offset.map_or(0.0, |o| o[0]);
    if !slab_clip(x0, dir[0], l, &mut t0, &mut t1) {
        return None;
    }
    // transverse quadratic |x_perp + t d_perp|^2 <= w^2
    let mut a = 0.0;
    let mut b = 0.0;
    let mut c = -w * w;
    for i in 1..x.len() {
        let xi = x[i] - offset.map_or(0.0, |o| o[i]);
        a += dir[i] * dir[i];
        b += 2.0 * xi * dir[i];
        c += xi * xi;
    }
    if a < 1e-300 {
        if c > 0.0 {
            return None;
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        t0 = t0.max((-b - sq) / (2.0 * a));
        t1 = t1.min((-b + sq) / (2.0 * a));
    }
    interval_or_none(t0, t1)
}

fn ball_ray(x: &[f64], dir: &[f64], center: &[f64], r: f64) -> Option<(f64, f64)> {
    let mut b = 0.0;
    let mut c = -r * r;
    for i in 0..x.len() {
        let xi = x[i] - center[i];
        b += 2.0 * xi * dir[i];
        c += xi * xi;
    }
    let disc = b * b - 4.0 * c;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    interval_or_none(((-b - sq) / 2.0).max(0.0), (-b + sq) / 2.0)
}
