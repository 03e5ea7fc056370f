//! Gravitational flow integration, basin maps, and cell statistics.
//!
//! Trajectories follow `dx/dt = F(x)` with an embedded Dormand-Prince 5(4)
//! pair. A trajectory terminates when it enters the capture ball of a star,
//! exceeds the time budget, or leaves the sampling window. Basin assignment
//! integrates every grid point to capture, with a refinement pass at tighter
//! tolerance where neighboring grid points disagree.

use crate::error::{GravError, Result};
use crate::ewald::TorusForceField;
use crate::force::{self, ForcePolicy, PotentialKind};
use crate::geom::{dist2, Region};
use crate::sample::StarField;
use rayon::prelude::*;
use serde::Serialize;

/// Marker for grid points without an assigned star.
pub const UNALLOCATED: u32 = u32::MAX;

/// The field a trajectory follows.
pub enum FlowField<'a> {
    /// Periodic mean-zero field on a torus.
    Torus(&'a TorusForceField),
    /// Force restricted to a ball or annulus; background and potential are
    /// in closed form, so evaluation costs only the star sum.
    Restricted { field: &'a StarField, region: &'a Region },
    /// Distance-ordered total force over a box window.
    TotalBox { field: &'a StarField, policy: &'a ForcePolicy },
}

impl<'a> FlowField<'a> {
    pub fn dim(&self) -> usize {
        match self {
            FlowField::Torus(tf) => tf.dim(),
            FlowField::Restricted { field, .. } | FlowField::TotalBox { field, .. } => field.dim(),
        }
    }

    fn force_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            FlowField::Torus(tf) => {
                tf.force_into(x, out);
                Ok(())
            }
            FlowField::Restricted { field, region } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for z in field.points() {
                    if region.contains(z) {
                        force::g_accum(z, x, out);
                    }
                }
                let bg = force::background_force(
                    x,
                    region,
                    crate::quad::RadialWindow::FULL,
                    1e-9,
                )?;
                for k in 0..x.len() {
                    out[k] -= bg[k];
                }
                Ok(())
            }
            FlowField::TotalBox { field, policy } => {
                let f = force::force_total(x, field, policy)?;
                out.copy_from_slice(&f.0);
                Ok(())
            }
        }
    }

    /// Potential consistent with the force (up to an additive constant).
    /// For `d = 3, 4` only differences along the trajectory are used.
    fn potential(&self, x: &[f64]) -> Result<f64> {
        match self {
            FlowField::Torus(tf) => Ok(tf.potential(x)),
            FlowField::Restricted { field, region } => {
                let policy = ForcePolicy::default();
                Ok(force::potential(x, field, Some(region), &policy, PotentialKind::Restricted)?
                    .value)
            }
            FlowField::TotalBox { field, policy } => {
                let d = field.dim();
                let (lo, hi) = field.domain().coord_range();
                let window = Region::Aabb { lo: vec![lo; d], hi: vec![hi; d] };
                Ok(force::potential(x, field, Some(&window), policy, PotentialKind::Restricted)?
                    .value)
            }
        }
    }

    pub fn nearest_star(&self, x: &[f64]) -> Option<(usize, f64)> {
        match self {
            FlowField::Torus(tf) => tf.nearest_star(x),
            FlowField::Restricted { field, .. } | FlowField::TotalBox { field, .. } => {
                field.nearest_star(x)
            }
        }
    }

    fn star(&self, i: usize) -> &[f64] {
        match self {
            FlowField::Torus(tf) => tf.star(i),
            FlowField::Restricted { field, .. } | FlowField::TotalBox { field, .. } => {
                field.point(i)
            }
        }
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        match self {
            FlowField::Torus(_) => true,
            FlowField::Restricted { field, .. } | FlowField::TotalBox { field, .. } => {
                field.domain().contains(x)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySample {
    pub time: f64,
    pub position: Vec<f64>,
    /// Potential (or potential difference to the start for d = 3, 4).
    pub potential: Option<f64>,
    pub arclength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Terminal {
    Captured { star: usize, time: f64 },
    Timeout,
    LeftDomain,
    /// Step size underflow near a singularity; samples hold the partial path.
    StepUnderflow,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub terminal: Terminal,
}

impl Trajectory {
    pub fn capture(&self) -> Option<(usize, f64)> {
        match self.terminal {
            Terminal::Captured { star, time } => Some((star, time)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOpts {
    pub capture_radius: f64,
    pub max_time: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    /// Keep per-step samples (positions, arclength, potential).
    pub record: bool,
    /// Evaluate the potential at every recorded sample.
    pub with_potential: bool,
    /// Stop on entry into a certified attraction ball instead of the capture
    /// ball. Identical assignment, fewer steps; capture times then report
    /// entry into the certified ball.
    pub early_capture: Option<f64>,
}

impl Default for IntegrateOpts {
    fn default() -> Self {
        Self {
            capture_radius: 1e-3,
            max_time: 10.0,
            rel_tol: 1e-6,
            max_step: 0.1,
            record: true,
            with_potential: false,
            early_capture: None,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Integrate the gravitational flow from `x0`.
pub fn integrate_flow(field: &FlowField, x0: &[f64], opts: &IntegrateOpts) -> Result<Trajectory> {
    let d = field.dim();
    let (star0, r2) = field
        .nearest_star(x0)
        .ok_or_else(|| GravError::Precondition("field has no stars".into()))?;
    let stop_radius = opts.early_capture.unwrap_or(opts.capture_radius).max(opts.capture_radius);
    if r2.sqrt() < opts.capture_radius {
        return Ok(Trajectory {
            samples: vec![],
            terminal: Terminal::Captured { star: star0, time: 0.0 },
        });
    }

    let mut x = x0.to_vec();
    let mut t = 0.0f64;
    let mut arclen = 0.0f64;
    let mut samples = Vec::new();
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; d]).collect();
    let mut xs = vec![0.0; d];
    let mut xe = vec![0.0; d];

    field.force_into(&x, &mut k[0])?;
    let fmag0: f64 = k[0].iter().map(|c| c * c).sum::<f64>().sqrt();
    let dist0 = r2.sqrt();
    let mut h = opts
        .max_step
        .min(0.1 * dist0 / fmag0.max(1e-12))
        .min(opts.max_time);

    let record_sample =
        |samples: &mut Vec<TrajectorySample>, t: f64, x: &[f64], arclen: f64| -> Result<()> {
            if opts.record {
                let potential = if opts.with_potential { Some(field.potential(x)?) } else { None };
                samples.push(TrajectorySample {
                    time: t,
                    position: x.to_vec(),
                    potential,
                    arclength: arclen,
                });
            }
            Ok(())
        };
    record_sample(&mut samples, t, &x, arclen)?;

    let atol = 1e-12;
    let mut steps = 0usize;
    loop {
        steps += 1;
        if steps > 2_000_000 {
            return Ok(Trajectory { samples, terminal: Terminal::Timeout });
        }
        if h < 1e-14 * t.max(1.0) {
            return Ok(Trajectory { samples, terminal: Terminal::StepUnderflow });
        }
        let h_eff = h.min(opts.max_time - t);
        // Stage evaluations.
        let mut fail = false;
        for s in 0..6 {
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..=s {
                    let a = DP_A[s][j];
                    if a != 0.0 {
                        acc += a * k[j][i];
                    }
                }
                xs[i] = x[i] + h_eff * acc;
            }
            let _ = DP_C;
            if field.force_into(&xs, &mut k[s + 1]).is_err() {
                fail = true;
                break;
            }
        }
        if fail {
            h *= 0.25;
            continue;
        }
        // 5th-order solution is stage 6's abscissa (FSAL).
        xe.copy_from_slice(&xs);
        // Error estimate.
        let mut err = 0.0f64;
        for i in 0..d {
            let mut e = 0.0;
            for j in 0..7 {
                if DP_E[j] != 0.0 {
                    e += DP_E[j] * k[j][i];
                }
            }
            e *= h_eff;
            let scale = atol + opts.rel_tol * x[i].abs().max(xe[i].abs()).max(1.0);
            err = err.max((e / scale).abs());
        }
        if err > 1.0 {
            h = (0.9 * h_eff * err.powf(-0.2)).max(h_eff * 0.2);
            continue;
        }
        // Accept.
        let mut chord = 0.0;
        for i in 0..d {
            let dxi = xe[i] - x[i];
            chord += dxi * dxi;
        }
        arclen += chord.sqrt();
        t += h_eff;
        x.copy_from_slice(&xe);
        k.swap(0, 6); // FSAL
        record_sample(&mut samples, t, &x, arclen)?;

        let (star, r2) = field.nearest_star(&x).unwrap();
        let dist = r2.sqrt();
        if dist < stop_radius {
            return Ok(Trajectory { samples, terminal: Terminal::Captured { star, time: t } });
        }
        if !field.in_domain(&x) {
            return Ok(Trajectory { samples, terminal: Terminal::LeftDomain });
        }
        if t >= opts.max_time {
            return Ok(Trajectory { samples, terminal: Terminal::Timeout });
        }
        // Step-size update with the spatial clamp near stars.
        let fmag: f64 = k[0].iter().map(|c| c * c).sum::<f64>().sqrt();
        let h_clamp = 0.1 * dist / fmag.max(1e-12);
        h = (0.9 * h_eff * err.max(1e-8).powf(-0.2))
            .min(5.0 * h_eff)
            .min(opts.max_step)
            .min(h_clamp);
    }
}

/// Report of the arc-length/time/potential inequality along a trajectory:
/// for every sample prefix, `L(t)^2 <= t * (U(0) - U(t))` up to integrator
/// tolerance. Returns the worst ratio observed.
#[derive(Debug, Clone, Serialize)]
pub struct TimePotentialReport {
    pub worst_ratio: f64,
    pub prefixes: usize,
}

pub fn check_time_potential(traj: &Trajectory) -> Result<TimePotentialReport> {
    if traj.samples.len() < 2 {
        return Ok(TimePotentialReport { worst_ratio: 0.0, prefixes: 0 });
    }
    let u0 = traj.samples[0]
        .potential
        .ok_or_else(|| GravError::Precondition("trajectory lacks potential samples".into()))?;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for s in &traj.samples[1..] {
        let u = s
            .potential
            .ok_or_else(|| GravError::Precondition("trajectory lacks potential samples".into()))?;
        let drop = u0 - u;
        if drop <= 0.0 || s.time <= 0.0 {
            continue;
        }
        let ratio = s.arclength * s.arclength / (s.time * drop);
        worst = worst.max(ratio);
        count += 1;
    }
    Ok(TimePotentialReport { worst_ratio: worst, prefixes: count })
}

/// Grid assignment of a torus to basins of attraction.
#[derive(Debug, Clone)]
pub struct BasinMap {
    pub grid_n: usize,
    pub side: f64,
    pub n_stars: usize,
    /// Star index per grid cell (row-major i, j, k), or `UNALLOCATED`.
    pub assignment: Vec<u32>,
    /// Capture time per grid cell (entry into the stop ball).
    pub capture_time: Vec<f32>,
    pub timeouts: usize,
    pub refined: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BasinOptions {
    pub capture_radius: f64,
    pub max_time: f64,
    pub rel_tol: f64,
    /// Use certified attraction radii to stop early (assignment-identical).
    pub early_capture: bool,
    /// Allowed timeout fraction before the map is rejected.
    pub max_timeout_fraction: f64,
}

impl Default for BasinOptions {
    fn default() -> Self {
        Self {
            capture_radius: 1e-3,
            max_time: 8.0,
            rel_tol: 1e-6,
            early_capture: true,
            max_timeout_fraction: 0.05,
        }
    }
}

/// Largest radius around each star on which its own pull certifiably
/// dominates every other contribution, so entry implies capture.
pub fn certified_capture_radii(tf: &TorusForceField, floor: f64) -> Vec<f64> {
    let n = tf.star_count();
    let d = tf.dim();
    let side = tf.side();
    let mut radii = vec![floor; n];
    let corr_bound = tf.correction_bound();
    for j in 0..n {
        let zj = tf.star(j);
        // Minimum-image distances to the other stars.
        let mut dists = Vec::with_capacity(n - 1);
        for i in 0..n {
            if i == j {
                continue;
            }
            let zi = tf.star(i);
            let mut r2 = 0.0;
            for c in 0..d {
                let mut dv = zi[c] - zj[c];
                dv -= side * (dv / side).round();
                r2 += dv * dv;
            }
            dists.push(r2.sqrt());
        }
        let d_min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut r = (0.45 * d_min).min(0.25 * side);
        while r > floor {
            let mut bound = corr_bound;
            let mut ok = true;
            for &dist in &dists {
                if dist <= r {
                    ok = false;
                    break;
                }
                bound += (dist - r).powi(1 - d as i32);
            }
            if ok && r.powi(1 - d as i32) > 2.0 * bound {
                break;
            }
            r *= 0.8;
        }
        radii[j] = r.max(floor);
    }
    radii
}

/// Integrate every grid point of a `grid_n^3` lattice on the torus to
/// capture. Points whose face neighbors disagree are re-run at 10x tighter
/// tolerance.
pub fn assign_basins(tf: &TorusForceField, grid_n: usize, opts: &BasinOptions) -> Result<BasinMap> {
    if tf.dim() != 3 {
        return Err(GravError::Unsupported("basin grids are computed for d = 3".into()));
    }
    if tf.star_count() == 0 {
        return Err(GravError::Precondition("field has no stars".into()));
    }
    let side = tf.side();
    let n = grid_n;
    let radii = if opts.early_capture {
        certified_capture_radii(tf, opts.capture_radius)
    } else {
        vec![opts.capture_radius; tf.star_count()]
    };

    let run_point = |x: &[f64; 3], rel_tol: f64| -> (u32, f32) {
        match flow_to_capture(tf, x, opts, rel_tol, &radii) {
            Some((star, time)) => (star as u32, time as f32),
            None => (UNALLOCATED, f32::INFINITY),
        }
    };

    let cell = side / n as f64;
    let origin = -side / 2.0 + 0.5 * cell;
    let mut assignment = vec![0u32; n * n * n];
    let mut capture_time = vec![0f32; n * n * n];
    assignment
        .par_chunks_mut(n * n)
        .zip(capture_time.par_chunks_mut(n * n))
        .enumerate()
        .for_each(|(i, (arow, trow))| {
            let x0 = origin + i as f64 * cell;
            for j in 0..n {
                let x1 = origin + j as f64 * cell;
                for kk in 0..n {
                    let x2 = origin + kk as f64 * cell;
                    let (a, t) = run_point(&[x0, x1, x2], opts.rel_tol);
                    arow[j * n + kk] = a;
                    trow[j * n + kk] = t;
                }
            }
        });

    // Refinement pass at tighter tolerance where face neighbors disagree.
    let disputed: Vec<usize> = (0..n * n * n)
        .into_par_iter()
        .filter(|&idx| {
            let a = assignment[idx];
            neighbor_indices(idx, n).into_iter().any(|nb| assignment[nb] != a)
        })
        .collect();
    let refined: Vec<(usize, u32, f32)> = disputed
        .par_iter()
        .map(|&idx| {
            let (i, j, kk) = (idx / (n * n), (idx / n) % n, idx % n);
            let x = [
                origin + i as f64 * cell,
                origin + j as f64 * cell,
                origin + kk as f64 * cell,
            ];
            let (a, t) = run_point(&x, opts.rel_tol / 10.0);
            (idx, a, t)
        })
        .collect();
    let mut refined_changed = 0usize;
    for (idx, a, t) in refined {
        if assignment[idx] != a {
            refined_changed += 1;
        }
        assignment[idx] = a;
        capture_time[idx] = t;
    }

    let timeouts = assignment.iter().filter(|&&a| a == UNALLOCATED).count();
    let map = BasinMap {
        grid_n: n,
        side,
        n_stars: tf.star_count(),
        assignment,
        capture_time,
        timeouts,
        refined: refined_changed,
    };
    let frac = timeouts as f64 / (n * n * n) as f64;
    if frac > opts.max_timeout_fraction {
        return Err(GravError::Quality(format!(
            "{:.2}% of grid points timed out; increase the time budget",
            frac * 100.0
        )));
    }
    Ok(map)
}

/// Fast capture loop used by basin assignment and survival statistics.
/// Returns `(star, capture time)` or `None` on timeout/underflow.
fn flow_to_capture(
    tf: &TorusForceField,
    x0: &[f64],
    opts: &BasinOptions,
    rel_tol: f64,
    stop_radii: &[f64],
) -> Option<(usize, f64)> {
    let d = 3usize;
    let mut x = [x0[0], x0[1], x0[2]];
    let mut t = 0.0f64;
    let mut k = [[0.0f64; 3]; 7];
    let mut xs = [0.0f64; 3];

    let (star, r2) = tf.nearest_star(&x)?;
    if r2.sqrt() < stop_radii[star] {
        return Some((star, 0.0));
    }
    tf.force_into(&x, &mut k[0]);
    let fmag0 = (k[0][0] * k[0][0] + k[0][1] * k[0][1] + k[0][2] * k[0][2]).sqrt();
    let mut h = 0.1f64.min(0.1 * r2.sqrt() / fmag0.max(1e-12));
    let atol = 1e-12;
    loop {
        if h < 1e-14 * t.max(1.0) {
            return None;
        }
        let h_eff = h.min(opts.max_time - t);
        for s in 0..6 {
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..=s {
                    acc += DP_A[s][j] * k[j][i];
                }
                xs[i] = x[i] + h_eff * acc;
            }
            tf.force_into(&xs, &mut k[s + 1]);
        }
        let mut err = 0.0f64;
        for i in 0..d {
            let mut e = 0.0;
            for j in 0..7 {
                e += DP_E[j] * k[j][i];
            }
            e *= h_eff;
            let scale = atol + rel_tol * x[i].abs().max(xs[i].abs()).max(1.0);
            err = err.max((e / scale).abs());
        }
        if err > 1.0 {
            h = (0.9 * h_eff * err.powf(-0.2)).max(h_eff * 0.2);
            continue;
        }
        t += h_eff;
        x = xs;
        k.swap(0, 6);
        let (star, r2) = tf.nearest_star(&x)?;
        let dist = r2.sqrt();
        if dist < stop_radii[star] {
            return Some((star, t));
        }
        if t >= opts.max_time {
            return None;
        }
        let fmag = (k[0][0] * k[0][0] + k[0][1] * k[0][1] + k[0][2] * k[0][2]).sqrt();
        h = (0.9 * h_eff * err.max(1e-8).powf(-0.2))
            .min(5.0 * h_eff)
            .min(0.1)
            .min(0.1 * dist / fmag.max(1e-12));
    }
}

fn neighbor_indices(idx: usize, n: usize) -> [usize; 6] {
    let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
    let wrap = |v: isize| -> usize { v.rem_euclid(n as isize) as usize };
    [
        (wrap(i as isize + 1) * n + j) * n + k,
        (wrap(i as isize - 1) * n + j) * n + k,
        (i * n + wrap(j as isize + 1)) * n + k,
        (i * n + wrap(j as isize - 1)) * n + k,
        (i * n + j) * n + wrap(k as isize + 1),
        (i * n + j) * n + wrap(k as isize - 1),
    ]
}

impl BasinMap {
    pub fn cell_volume(&self) -> f64 {
        (self.side / self.grid_n as f64).powi(3)
    }

    /// Grid-count volume per star.
    pub fn volumes(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_stars];
        for &a in &self.assignment {
            if a != UNALLOCATED {
                counts[a as usize] += 1;
            }
        }
        let cv = self.cell_volume();
        counts.into_iter().map(|c| c as f64 * cv).collect()
    }

    pub fn lookup(&self, x: &[f64]) -> u32 {
        let n = self.grid_n;
        let cell = self.side / n as f64;
        let mut idx = 0usize;
        for c in 0..3 {
            let u = ((x[c] + self.side / 2.0) / cell).floor() as isize;
            idx = idx * n + u.rem_euclid(n as isize) as usize;
        }
        self.assignment[idx]
    }

    fn grid_point(&self, idx: usize) -> [f64; 3] {
        let n = self.grid_n;
        let cell = self.side / n as f64;
        let origin = -self.side / 2.0 + 0.5 * cell;
        let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
        [
            origin + i as f64 * cell,
            origin + j as f64 * cell,
            origin + k as f64 * cell,
        ]
    }
}

/// Statistics of one basin.
#[derive(Debug, Clone, Serialize)]
pub struct CellStats {
    pub star: usize,
    pub volume: f64,
    /// Max pairwise distance over the cell's grid points (unfolded around
    /// the star).
    pub diameter: f64,
    /// Cell volume outside `B(star, R)`.
    pub tentacle_volume: f64,
    pub tentacle_radius: f64,
    /// Distances from uniform cell samples to the star.
    pub star_distance_samples: Vec<f64>,
}

/// Compute volume, diameter, tentacle volume at radius `R`, and uniform
/// star-distance samples for the cell of `star`.
pub fn cell_statistics(
    map: &BasinMap,
    tf: &TorusForceField,
    star: usize,
    tentacle_radius: f64,
    sample_count: usize,
    seed: u64,
) -> Result<CellStats> {
    let n = map.grid_n;
    let side = map.side;
    let z = tf.star(star);
    let cells: Vec<usize> = (0..n * n * n)
        .filter(|&i| map.assignment[i] == star as u32)
        .collect();
    if cells.is_empty() {
        return Err(GravError::DegenerateCell(format!("star {star} owns no grid points")));
    }
    let volume = cells.len() as f64 * map.cell_volume();

    // Unfold each grid point around the star with the minimum image.
    let unfold = |idx: usize| -> [f64; 3] {
        let p = map.grid_point(idx);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let mut dv = p[c] - z[c];
            dv -= side * (dv / side).round();
            out[c] = z[c] + dv;
        }
        out
    };

    // Diameter from boundary points (the max is attained there).
    let boundary: Vec<[f64; 3]> = cells
        .iter()
        .filter(|&&idx| {
            neighbor_indices(idx, n).into_iter().any(|nb| map.assignment[nb] != star as u32)
        })
        .map(|&idx| unfold(idx))
        .collect();
    let diameter = if boundary.is_empty() {
        // Single cell covering the torus.
        side * (3.0f64).sqrt() / 2.0
    } else {
        let mut best = 0.0f64;
        for (i, a) in boundary.iter().enumerate() {
            for b in &boundary[i + 1..] {
                best = best.max(dist2(a, b));
            }
        }
        best.sqrt()
    };

    let mut tentacle = 0usize;
    for &idx in &cells {
        let p = unfold(idx);
        if dist2(&p, z).sqrt() > tentacle_radius {
            tentacle += 1;
        }
    }

    // Uniform samples from the cell by rejection against the grid map.
    let mut rng = crate::rng::substream(seed, crate::rng::purpose::CELL_SAMPLES, star as u64);
    let mut samples = Vec::with_capacity(sample_count);
    let mut attempts = 0usize;
    use rand::Rng;
    while samples.len() < sample_count {
        attempts += 1;
        if attempts > sample_count * 100_000 {
            return Err(GravError::DegenerateCell("rejection sampling starved".into()));
        }
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-side / 2.0..side / 2.0)).collect();
        if map.lookup(&x) == star as u32 {
            let mut r2 = 0.0;
            for c in 0..3 {
                let mut dv = x[c] - z[c];
                dv -= side * (dv / side).round();
                r2 += dv * dv;
            }
            samples.push(r2.sqrt());
        }
    }

    Ok(CellStats {
        star,
        volume,
        diameter,
        tentacle_volume: tentacle as f64 * map.cell_volume(),
        tentacle_radius,
        star_distance_samples: samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    Forward,
    Backward,
}

/// Measured `Vol(A_t) / Vol(A)` for a ball transported by the flow.
///
/// The image volume is estimated by Monte Carlo over a bounding box of the
/// transported cloud, mapping samples back with the reverse flow and testing
/// membership in the original ball. Errors if any transported point is
/// captured before time `t`.
pub fn volume_transport_ratio(
    tf: &TorusForceField,
    center: &[f64],
    radius: f64,
    t: f64,
    direction: FlowDirection,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if t == 0.0 {
        return Ok(1.0);
    }
    let sign = match direction {
        FlowDirection::Forward => 1.0,
        FlowDirection::Backward => -1.0,
    };
    let d = tf.dim();
    use rand::Rng;
    let mut rng = crate::rng::substream(seed, crate::rng::purpose::MONTE_CARLO, 0);

    // Transport a cloud of interior points to bound the image and check the
    // no-capture precondition.
    let n_cloud = 200;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for _ in 0..n_cloud {
        let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scale = radius * rng.gen::<f64>().powf(1.0 / d as f64)
            / x.iter().map(|c| c * c).sum::<f64>().sqrt();
        for c in 0..d {
            x[c] = center[c] + x[c] * scale;
        }
        let y = flow_for_time(tf, &x, sign * t)?;
        for c in 0..d {
            lo[c] = lo[c].min(y[c]);
            hi[c] = hi[c].max(y[c]);
        }
    }
    for c in 0..d {
        let margin = 0.25 * (hi[c] - lo[c]) + 0.05 * radius;
        lo[c] -= margin;
        hi[c] += margin;
    }
    let box_vol: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();

    let hits: usize = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng::substream(seed, crate::rng::purpose::MONTE_CARLO, 1 + i as u64);
            let y: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
            match flow_for_time(tf, &y, -sign * t) {
                Ok(back) => {
                    let mut r2 = 0.0;
                    for c in 0..d {
                        let mut dv = back[c] - center[c];
                        dv -= tf.side() * (dv / tf.side()).round();
                        r2 += dv * dv;
                    }
                    (r2 <= radius * radius) as usize
                }
                Err(_) => 0,
            }
        })
        .sum();
    let vol_image = box_vol * hits as f64 / n_samples as f64;
    let vol_a = crate::geom::unit_ball_volume(d) * radius.powi(d as i32);
    Ok(vol_image / vol_a)
}

/// Flow for a fixed signed time; errors if captured on the way (forward).
fn flow_for_time(tf: &TorusForceField, x0: &[f64], t: f64) -> Result<Vec<f64>> {
    let d = tf.dim();
    let mut x = x0.to_vec();
    let mut time = 0.0f64;
    let total = t.abs();
    let sign = t.signum();
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; d]).collect();
    let mut xs = vec![0.0; d];
    let mut f = vec![0.0; d];
    tf.force_into(&x, &mut f);
    for c in 0..d {
        k[0][c] = sign * f[c];
    }
    let rel_tol = 1e-8;
    let mut h: f64 = 0.01;
    loop {
        if time >= total {
            return Ok(x);
        }
        let h_eff = h.min(total - time);
        for s in 0..6 {
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..=s {
                    acc += DP_A[s][j] * k[j][i];
                }
                xs[i] = x[i] + h_eff * acc;
            }
            tf.force_into(&xs, &mut f);
            for c in 0..d {
                k[s + 1][c] = sign * f[c];
            }
        }
        let mut err = 0.0f64;
        for i in 0..d {
            let mut e = 0.0;
            for j in 0..7 {
                e += DP_E[j] * k[j][i];
            }
            e *= h_eff;
            let scale = 1e-12 + rel_tol * x[i].abs().max(1.0);
            err = err.max((e / scale).abs());
        }
        if err > 1.0 {
            h = (0.9 * h_eff * err.powf(-0.2)).max(h_eff * 0.2);
            continue;
        }
        time += h_eff;
        x.copy_from_slice(&xs);
        k.swap(0, 6);
        if sign > 0.0 {
            if let Some((_, r2)) = tf.nearest_star(&x) {
                if r2.sqrt() < 1e-3 {
                    return Err(GravError::Precondition(
                        "a transported point reached a star during the evolution".into(),
                    ));
                }
            }
        }
        let fmag: f64 = k[0].iter().map(|c| c * c).sum::<f64>().sqrt();
        let clamp = match tf.nearest_star(&x) {
            Some((_, r2)) => 0.1 * r2.sqrt() / fmag.max(1e-12),
            None => f64::INFINITY,
        };
        h = (0.9 * h_eff * err.max(1e-8).powf(-0.2)).min(5.0 * h_eff).min(0.1).min(clamp);
    }
}

/// Fraction of the torus whose capture time is at least each of `ts`.
/// Returns `(t, fraction, binomial standard error)` rows.
pub fn capture_time_survival(
    tf: &TorusForceField,
    ts: &[f64],
    n_samples: usize,
    seed: u64,
    opts: &BasinOptions,
) -> Result<Vec<(f64, f64, f64)>> {
    let radii = vec![opts.capture_radius; tf.star_count()];
    let times: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            use rand::Rng;
            let mut rng = crate::rng::substream(seed, crate::rng::purpose::MONTE_CARLO, i as u64);
            let x: Vec<f64> = (0..3)
                .map(|_| rng.gen_range(-tf.side() / 2.0..tf.side() / 2.0))
                .collect();
            match flow_to_capture(tf, &x, opts, opts.rel_tol, &radii) {
                Some((_, t)) => t,
                None => f64::INFINITY,
            }
        })
        .collect();
    Ok(ts
        .iter()
        .map(|&t| {
            let surv = times.iter().filter(|&&ct| ct >= t).count() as f64 / n_samples as f64;
            let se = (surv * (1.0 - surv) / n_samples as f64).sqrt();
            (t, surv, se)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::DomainSpec;

    fn torus_field(points: Vec<Vec<f64>>, side: f64) -> StarField {
        let dom = DomainSpec::torus(3, side).unwrap();
        StarField::from_points(&dom, 1.0, 0, points).unwrap()
    }

    #[test]
    fn single_star_capture_is_radial() {
        let f = torus_field(vec![vec![0.0, 0.0, 0.0]], 4.0);
        let tf = TorusForceField::new(&f).unwrap();
        let field = FlowField::Torus(&tf);
        let traj = integrate_flow(&field, &[1.0, 0.0, 0.0], &IntegrateOpts::default()).unwrap();
        let (star, time) = traj.capture().expect("should capture");
        assert_eq!(star, 0);
        assert!(time > 0.0 && time < 1.0, "capture time {time}");
        // Radially monotone: x stays on the positive x-axis.
        for s in &traj.samples {
            assert!(s.position[1].abs() < 1e-7 && s.position[2].abs() < 1e-7);
        }
        // Times strictly increasing, arclength nondecreasing.
        for w in traj.samples.windows(2) {
            assert!(w[1].time > w[0].time);
            assert!(w[1].arclength >= w[0].arclength);
        }
    }

    #[test]
    fn midpoint_stays_on_bisector() {
        let f = torus_field(vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]], 4.0);
        let tf = TorusForceField::new(&f).unwrap();
        let field = FlowField::Torus(&tf);
        let opts = IntegrateOpts { max_time: 0.5, ..Default::default() };
        let traj = integrate_flow(&field, &[0.0, 0.7, 0.0], &opts).unwrap();
        for s in &traj.samples {
            assert!(s.position[0].abs() < 1e-6, "left the bisector: {:?}", s.position);
        }
    }

    #[test]
    fn potential_decreases_along_trajectories() {
        let f = torus_field(
            vec![vec![0.9, -0.4, 0.2], vec![-1.2, 0.8, -0.6], vec![0.1, 1.4, 1.1]],
            4.0,
        );
        let tf = TorusForceField::new(&f).unwrap();
        let field = FlowField::Torus(&tf);
        let opts = IntegrateOpts { with_potential: true, ..Default::default() };
        let traj = integrate_flow(&field, &[1.4, 1.9, -1.3], &opts).unwrap();
        assert!(traj.capture().is_some());
        let mut prev = f64::INFINITY;
        for s in &traj.samples {
            let u = s.potential.unwrap();
            assert!(u <= prev + 1e-6, "potential rose: {prev} -> {u}");
            prev = u;
        }
        // Time-potential inequality for every prefix.
        let rep = check_time_potential(&traj).unwrap();
        assert!(rep.prefixes > 0);
        assert!(rep.worst_ratio <= 1.0 + 1e-2, "worst ratio {}", rep.worst_ratio);
    }

    #[test]
    fn single_star_basin_covers_torus() {
        // Sparse fields have weak background divergence, so escape from the
        // repelling stagnation point is slow; give it time.
        let f = torus_field(vec![vec![0.3, -0.2, 0.5]], 3.0);
        let tf = TorusForceField::with_table(&f).unwrap();
        let opts = BasinOptions { max_time: 120.0, ..Default::default() };
        let map = assign_basins(&tf, 12, &opts).unwrap();
        assert_eq!(map.timeouts, 0);
        assert!(map.assignment.iter().all(|&a| a == 0));
        let vols = map.volumes();
        assert!((vols[0] - 27.0).abs() < 1e-9);
    }

    #[test]
    fn two_star_basins_split_evenly() {
        let f = torus_field(vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]], 4.0);
        let tf = TorusForceField::with_table(&f).unwrap();
        let opts = BasinOptions { max_time: 80.0, ..Default::default() };
        let map = assign_basins(&tf, 24, &opts).unwrap();
        assert_eq!(map.timeouts, 0, "timeouts {}", map.timeouts);
        let vols = map.volumes();
        let total = 4.0f64.powi(3);
        assert!((vols[0] - total / 2.0).abs() / (total / 2.0) < 0.02, "vols {vols:?}");
        assert!((vols[1] - total / 2.0).abs() / (total / 2.0) < 0.02, "vols {vols:?}");
    }

    #[test]
    fn early_capture_matches_full_integration() {
        let f = torus_field(
            vec![vec![0.9, -0.4, 0.2], vec![-1.2, 0.8, -0.6], vec![0.1, 1.4, 1.1], vec![1.5, -1.5, -1.0]],
            4.0,
        );
        let tf = TorusForceField::with_table(&f).unwrap();
        let mut opts = BasinOptions::default();
        opts.early_capture = true;
        let a = assign_basins(&tf, 10, &opts).unwrap();
        opts.early_capture = false;
        let b = assign_basins(&tf, 10, &opts).unwrap();
        let agree = a
            .assignment
            .iter()
            .zip(&b.assignment)
            .filter(|(x, y)| x == y)
            .count();
        assert_eq!(agree, a.assignment.len(), "early capture changed assignments");
    }

    #[test]
    fn cell_stats_invariants() {
        let f = torus_field(vec![vec![0.5, 0.0, 0.0], vec![-0.5, 0.0, 0.0]], 3.0);
        let tf = TorusForceField::with_table(&f).unwrap();
        let map = assign_basins(&tf, 16, &BasinOptions::default()).unwrap();
        let stats = cell_statistics(&map, &tf, 0, 0.4, 64, 9).unwrap();
        assert!(stats.tentacle_volume <= stats.volume);
        for &y in &stats.star_distance_samples {
            assert!(y <= stats.diameter + 1e-9, "Y {} > X {}", y, stats.diameter);
        }
        // R beyond the diameter kills the tentacles.
        let far = cell_statistics(&map, &tf, 0, stats.diameter + 0.5, 8, 9).unwrap();
        assert_eq!(far.tentacle_volume, 0.0);
    }

    #[test]
    fn transport_ratio_identity_at_zero_time() {
        let f = torus_field(vec![vec![1.2, 0.3, -0.8]], 4.0);
        let tf = TorusForceField::new(&f).unwrap();
        let r = volume_transport_ratio(&tf, &[0.0, 0.0, 0.0], 0.4, 0.0, FlowDirection::Forward, 10, 3)
            .unwrap();
        assert_eq!(r, 1.0);
    }
}
