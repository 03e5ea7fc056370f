//! Periodic (torus) force and potential by Ewald splitting.
//!
//! The torus field is the minimum-image star sum plus the mean-zero
//! periodic correction: splitting `r^{-(d-2)}` with incomplete gamma
//! functions gives a short-range real-space kernel and a Gaussian-damped
//! reciprocal sum over the dual lattice. The result is the unique periodic
//! field with zero mean whose divergence away from stars is
//! `d * kappa_d * n / side^d`, which is what the volume and equal-cell laws
//! rely on.
//!
//! For hot loops a smooth correction table is precomputed: the field minus a
//! smoothly cut-off singular part is band-limited, so it is evaluated on a
//! grid by FFT and interpolated tricubically.

use crate::error::{GravError, Result};
use crate::force::NEAR_STAR_GUARD;
use crate::geom::DomainMode;
use crate::sample::StarField;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use statrs::function::gamma::{gamma, gamma_lr, gamma_ur};

/// Smooth cutoff: 1 on `r <= r0`, 0 on `r >= r1`, quintic in between.
/// `r0`, `r1` are fractions of the side length.
const CUT_LO: f64 = 0.30;
const CUT_HI: f64 = 0.48;

/// Default correction-table resolution per axis (d = 3 only).
const TABLE_N: usize = 128;

#[inline]
fn smooth_cut(r: f64, r0: f64, r1: f64) -> f64 {
    if r <= r0 {
        1.0
    } else if r >= r1 {
        0.0
    } else {
        let u = (r - r0) / (r1 - r0);
        1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    }
}

/// Short-range force kernel `g_s(v) = v_hat * [ r^{-(nu+1)} Q(nu/2, a^2 r^2)
/// + 2 a^nu e^{-a^2 r^2} / (nu Gamma(nu/2) r) ]` accumulated into `out`.
fn g_short_accum(v: &[f64], alpha: f64, d: usize, out: &mut [f64]) {
    let nu = (d - 2) as f64;
    let a = nu / 2.0;
    let r2: f64 = v.iter().map(|c| c * c).sum();
    let r = r2.sqrt();
    if r == 0.0 {
        return;
    }
    let t = alpha * alpha * r2;
    let q = gamma_ur(a, t);
    let coef = q / (r2 * r.powf(nu))
        + 2.0 * alpha.powf(nu) * (-t).exp() / (nu * gamma(a) * r2);
    for k in 0..v.len() {
        out[k] += v[k] * coef;
    }
}

/// Long-range force kernel `g_l = g - g_s`, evaluated cancellation-free.
/// Smooth with `g_l(0) = 0`.
fn g_long(v: &[f64], alpha: f64, d: usize) -> Vec<f64> {
    let nu = (d - 2) as f64;
    let a = nu / 2.0;
    let r2: f64 = v.iter().map(|c| c * c).sum();
    let r = r2.sqrt();
    let t = alpha * alpha * r2;
    let coef = if t <= 25.0 {
        // alpha^{nu+2} e^{-t} sum_{j>=0} t^j / Gamma(a + j + 2);
        // the k = 0 term of the series for P cancels the Gaussian exactly.
        let mut sum = 0.0;
        let mut term = 1.0 / gamma(a + 2.0);
        let mut j = 0.0;
        loop {
            sum += term;
            j += 1.0;
            term *= t / (a + j + 1.0);
            if term < 1e-18 * sum || j > 200.0 {
                break;
            }
        }
        alpha.powf(nu + 2.0) * (-t).exp() * sum
    } else {
        gamma_lr(a, t) / (r2 * r.powf(nu))
            - 2.0 * alpha.powf(nu) * (-t).exp() / (nu * gamma(a) * r2)
    };
    v.iter().map(|&c| c * coef).collect()
}

/// Long-range potential kernel `phi_l(r) = r^{-nu} P(nu/2, a^2 r^2)`,
/// smooth with `phi_l(0) = alpha^nu / Gamma(nu/2 + 1)`.
fn phi_long(r: f64, alpha: f64, d: usize) -> f64 {
    let nu = (d - 2) as f64;
    let a = nu / 2.0;
    let t = alpha * alpha * r * r;
    if t <= 25.0 {
        let mut sum = 0.0;
        let mut term = 1.0 / gamma(a + 1.0);
        let mut j = 0.0;
        loop {
            sum += term;
            j += 1.0;
            term *= t / (a + j);
            if term < 1e-18 * sum || j > 200.0 {
                break;
            }
        }
        alpha.powf(nu) * (-t).exp() * sum
    } else {
        gamma_lr(a, t) / r.powf(nu)
    }
}

fn phi_short(r: f64, alpha: f64, d: usize) -> f64 {
    let nu = (d - 2) as f64;
    r.powf(-nu) - phi_long(r, alpha, d)
}

/// The periodic mean-zero field of a star configuration on a torus.
pub struct TorusForceField {
    dim: usize,
    side: f64,
    coords: Vec<f64>,
    n_stars: usize,
    alpha: f64,
    /// Reciprocal modes: flattened k-vectors, damping coefficients, and
    /// structure factors.
    kvecs: Vec<f64>,
    kcoef: Vec<f64>,
    s_re: Vec<f64>,
    s_im: Vec<f64>,
    /// Optional smooth correction table (d = 3): 4 channels per node
    /// (force x,y,z and potential), row-major with periodic wrap.
    table: Option<CorrectionTable>,
}

struct CorrectionTable {
    n: usize,
    data: Vec<f64>,
}

impl TorusForceField {
    /// Direct evaluator; per-call cost is the reciprocal sum.
    pub fn new(field: &StarField) -> Result<Self> {
        Self::build(field, false)
    }

    /// Evaluator with the tabulated smooth correction (d = 3).
    pub fn with_table(field: &StarField) -> Result<Self> {
        Self::build(field, field.dim() == 3)
    }

    fn build(field: &StarField, tabulate: bool) -> Result<Self> {
        if field.domain().mode != DomainMode::Torus {
            return Err(GravError::InvalidParameter("torus field needs a torus domain".into()));
        }
        let d = field.dim();
        let side = field.domain().side;
        // Real-space tail must die out within the half cell.
        let alpha = 9.0 / side;
        // Reciprocal cutoff: exp(-K^2 / 4 alpha^2) ~ 1e-10.
        let kmax = 2.0 * alpha * (10.0f64 * std::f64::consts::LN_10).sqrt();
        let m_max = (kmax * side / (2.0 * std::f64::consts::PI)).ceil() as i64;
        let nu = (d - 2) as f64;
        let a = nu / 2.0;
        let vol = side.powi(d as i32);
        let pref = 4.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / gamma(a) / (nu * vol);

        let mut kvecs = Vec::new();
        let mut kcoef = Vec::new();
        let mut m = vec![-m_max; d];
        'outer: loop {
            let k2: f64 = m
                .iter()
                .map(|&mi| {
                    let k = 2.0 * std::f64::consts::PI * mi as f64 / side;
                    k * k
                })
                .sum();
            if k2 > 0.0 && k2 <= kmax * kmax {
                kcoef.push(pref * (-k2 / (4.0 * alpha * alpha)).exp() / k2);
                for &mi in &m {
                    kvecs.push(2.0 * std::f64::consts::PI * mi as f64 / side);
                }
            }
            // Increment the multi-index.
            for i in (0..d).rev() {
                m[i] += 1;
                if m[i] <= m_max {
                    continue 'outer;
                }
                m[i] = -m_max;
            }
            break;
        }

        let nk = kcoef.len();
        let mut s_re = vec![0.0; nk];
        let mut s_im = vec![0.0; nk];
        for z in field.points() {
            for (j, (sr, si)) in s_re.iter_mut().zip(s_im.iter_mut()).enumerate() {
                let kz: f64 = (0..d).map(|c| kvecs[j * d + c] * z[c]).sum();
                let (s, c) = kz.sin_cos();
                *sr += c;
                *si += s;
            }
        }

        let mut tf = Self {
            dim: d,
            side,
            coords: field.coords().to_vec(),
            n_stars: field.len(),
            alpha,
            kvecs,
            kcoef,
            s_re,
            s_im,
            table: None,
        };
        if tabulate {
            tf.table = Some(tf.build_table(TABLE_N)?);
        }
        Ok(tf)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn star_count(&self) -> usize {
        self.n_stars
    }

    pub fn star(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Background density of the neutralizing measure, `n / side^d`.
    pub fn background_density(&self) -> f64 {
        self.n_stars as f64 / self.side.powi(self.dim as i32)
    }

    /// Nearest star in torus metric: `(index, squared distance)`.
    pub fn nearest_star(&self, x: &[f64]) -> Option<(usize, f64)> {
        let d = self.dim;
        let side = self.side;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.n_stars {
            let z = self.star(i);
            let mut r2 = 0.0;
            for k in 0..d {
                let mut dv = z[k] - x[k];
                dv -= side * (dv / side).round();
                r2 += dv * dv;
            }
            if best.map_or(true, |(_, b)| r2 < b) {
                best = Some((i, r2));
            }
        }
        best
    }

    /// Reciprocal-space force contribution at `x`.
    fn force_recip(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for j in 0..self.kcoef.len() {
            let kx: f64 = (0..d).map(|c| self.kvecs[j * d + c] * x[c]).sum();
            let (s, c) = kx.sin_cos();
            // Im(S e^{-i k x}) = s_im * cos(kx) - s_re * sin(kx)
            let im = self.s_im[j] * c - self.s_re[j] * s;
            let w = self.kcoef[j] * im;
            for ccomp in 0..d {
                out[ccomp] += w * self.kvecs[j * d + ccomp];
            }
        }
    }

    /// Full direct evaluation (no table): real-space short kernel over
    /// minimum images plus the reciprocal sum.
    pub fn force_direct(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let side = self.side;
        let mut out = vec![0.0; d];
        let mut v = vec![0.0; d];
        for i in 0..self.n_stars {
            let z = self.star(i);
            for k in 0..d {
                let mut dv = z[k] - x[k];
                dv -= side * (dv / side).round();
                v[k] = dv;
            }
            g_short_accum(&v, self.alpha, d, &mut out);
        }
        self.force_recip(x, &mut out);
        out
    }

    /// Periodic potential (up to an additive constant), direct path.
    pub fn potential_direct(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let nu = (d - 2) as f64;
        let side = self.side;
        let mut sum = 0.0;
        for i in 0..self.n_stars {
            let z = self.star(i);
            let mut r2 = 0.0;
            for k in 0..d {
                let mut dv = z[k] - x[k];
                dv -= side * (dv / side).round();
                r2 += dv * dv;
            }
            sum += phi_short(r2.sqrt(), self.alpha, d);
        }
        // kcoef already carries phi_hat_l / (nu * vol).
        let mut recip = 0.0;
        for j in 0..self.kcoef.len() {
            let kx: f64 = (0..d).map(|c| self.kvecs[j * d + c] * x[c]).sum();
            let (s, c) = kx.sin_cos();
            let re = self.s_re[j] * c + self.s_im[j] * s;
            recip += self.kcoef[j] * re;
        }
        -(sum / nu + recip)
    }

    /// Fast evaluation through the correction table when present.
    pub fn force(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.force_into(x, &mut out);
        out
    }

    /// No-allocation force evaluation (table path when available).
    pub fn force_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.table {
            None => {
                let f = self.force_direct(x);
                out.copy_from_slice(&f);
            }
            Some(t) => {
                let side = self.side;
                let r0 = CUT_LO * side;
                let r1 = CUT_HI * side;
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut v = [0.0f64; 3];
                for i in 0..self.n_stars {
                    let z = self.star(i);
                    let mut r2 = 0.0;
                    for k in 0..3 {
                        let mut dv = z[k] - x[k];
                        dv -= side * (dv / side).round();
                        v[k] = dv;
                        r2 += dv * dv;
                    }
                    let r = r2.sqrt();
                    if r < r1 && r > 0.0 {
                        let chi = smooth_cut(r, r0, r1);
                        let coef = chi / (r2 * r);
                        for k in 0..3 {
                            out[k] += v[k] * coef;
                        }
                    }
                }
                let mut interp = [0.0f64; 4];
                t.sample(x, side, &mut interp);
                out[0] += interp[0];
                out[1] += interp[1];
                out[2] += interp[2];
            }
        }
    }

    /// Upper bound on the non-singular part of the field: the tabulated
    /// correction (with interpolation slack) or a crude reciprocal bound.
    pub fn correction_bound(&self) -> f64 {
        match &self.table {
            Some(t) => {
                let mut worst = 0.0f64;
                for node in t.data.chunks_exact(4) {
                    let m = (node[0] * node[0] + node[1] * node[1] + node[2] * node[2]).sqrt();
                    worst = worst.max(m);
                }
                worst * 1.1
            }
            None => {
                let n = self.n_stars as f64;
                let mut bound = 0.0;
                for j in 0..self.kcoef.len() {
                    let k2: f64 = (0..self.dim).map(|c| self.kvecs[j * self.dim + c].powi(2)).sum();
                    bound += self.kcoef[j] * k2.sqrt() * n;
                }
                bound
            }
        }
    }

    /// Potential matching `force` (gradient identity holds per path).
    pub fn potential(&self, x: &[f64]) -> f64 {
        match &self.table {
            None => self.potential_direct(x),
            Some(t) => {
                let side = self.side;
                let nu = (self.dim - 2) as f64;
                let r0 = CUT_LO * side;
                let r1 = CUT_HI * side;
                let mut sum = 0.0;
                for i in 0..self.n_stars {
                    let z = self.star(i);
                    let mut r2 = 0.0;
                    for k in 0..3 {
                        let mut dv = z[k] - x[k];
                        dv -= side * (dv / side).round();
                        r2 += dv * dv;
                    }
                    let r = r2.sqrt();
                    if r < r1 && r > 0.0 {
                        sum += smooth_cut(r, r0, r1) / r.powf(nu);
                    }
                }
                let mut interp = [0.0f64; 4];
                t.sample(x, side, &mut interp);
                -sum / nu + interp[3]
            }
        }
    }

    /// Force with the near-star singularity guard.
    pub fn force_checked(&self, x: &[f64]) -> Result<Vec<f64>> {
        if let Some((_, r2)) = self.nearest_star(x) {
            let dist = r2.sqrt();
            if dist < NEAR_STAR_GUARD {
                return Err(GravError::Singularity { dist, guard: NEAR_STAR_GUARD });
            }
        }
        Ok(self.force(x))
    }

    /// Build the smooth correction table: `C(x) = F(x) - sum_j g_cut` and the
    /// matching potential channel, on an `n^3` grid via FFT.
    fn build_table(&self, n: usize) -> Result<CorrectionTable> {
        let d = self.dim;
        assert_eq!(d, 3);
        let side = self.side;
        let nu = 1.0;
        let r0 = CUT_LO * side;
        let r1 = CUT_HI * side;

        // Reciprocal part on the grid by FFT. Channel c holds
        // sum_m kcoef_m * k_{m,c} * Im(S_m e^{-i k x}); channel 3 holds
        // -sum_m kcoef_m Re(S_m e^{-i k x}).
        let mut data = vec![0.0f64; n * n * n * 4];
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        for ch in 0..4usize {
            let mut grid = vec![Complex64::default(); n * n * n];
            for j in 0..self.kcoef.len() {
                // Recover integer mode numbers.
                let mut idx = [0usize; 3];
                let mut mode_sum = 0i64;
                for c in 0..3 {
                    let mf = self.kvecs[j * 3 + c] * side / (2.0 * std::f64::consts::PI);
                    let mi = mf.round() as i64;
                    mode_sum += mi;
                    idx[c] = mi.rem_euclid(n as i64) as usize;
                }
                let s = Complex64::new(self.s_re[j], self.s_im[j]);
                // Force channel c needs kcoef * k_c * Im(S e^{-ikx}) =
                // Re[(-i kcoef k_c S) e^{-ikx}]; the potential channel needs
                // -kcoef * Re(S e^{-ikx}). Grid nodes sit at
                // x = p*side/n - side/2, so each mode picks up the half-cell
                // phase e^{i pi (m_0+m_1+m_2)}.
                let mut b = match ch {
                    3 => -self.kcoef[j] * s,
                    c => Complex64::new(0.0, -1.0) * self.kcoef[j] * self.kvecs[j * 3 + c] * s,
                };
                if mode_sum.rem_euclid(2) == 1 {
                    b = -b;
                }
                grid[(idx[0] * n + idx[1]) * n + idx[2]] += b;
            }
            // 3-D forward DFT via axis passes: result_p = sum_m b_m e^{-2pi i m.p/n}.
            // Axis 2 (contiguous).
            for row in grid.chunks_exact_mut(n) {
                fft.process(row);
            }
            // Axis 1.
            let mut buf = vec![Complex64::default(); n];
            for i0 in 0..n {
                for i2 in 0..n {
                    for i1 in 0..n {
                        buf[i1] = grid[(i0 * n + i1) * n + i2];
                    }
                    fft.process(&mut buf);
                    for i1 in 0..n {
                        grid[(i0 * n + i1) * n + i2] = buf[i1];
                    }
                }
            }
            // Axis 0.
            for i1 in 0..n {
                for i2 in 0..n {
                    for i0 in 0..n {
                        buf[i0] = grid[(i0 * n + i1) * n + i2];
                    }
                    fft.process(&mut buf);
                    for i0 in 0..n {
                        grid[(i0 * n + i1) * n + i2] = buf[i0];
                    }
                }
            }
            for (i, g) in grid.iter().enumerate() {
                data[i * 4 + ch] = g.re;
            }
        }

        // Real-space smooth parts at the nodes:
        // force channels += sum_j [ -g_l(v) + g(v)(1 - chi) ]
        // potential       += sum_j [ phi_l(v) + phi(v)(... ) ] assembled so
        // that potential(x) = -sum phi*chi/nu + channel.
        let coords = &self.coords;
        let n_stars = self.n_stars;
        let alpha = self.alpha;
        data.par_chunks_exact_mut(4 * n * n)
            .enumerate()
            .for_each(|(i0, slab)| {
                let x0 = i0 as f64 / n as f64 * side - side / 2.0;
                let mut v = [0.0f64; 3];
                for i1 in 0..n {
                    let x1 = i1 as f64 / n as f64 * side - side / 2.0;
                    for i2 in 0..n {
                        let x2 = i2 as f64 / n as f64 * side - side / 2.0;
                        let x = [x0, x1, x2];
                        let cell = &mut slab[(i1 * n + i2) * 4..(i1 * n + i2) * 4 + 4];
                        for s in 0..n_stars {
                            let z = &coords[s * 3..s * 3 + 3];
                            let mut r2 = 0.0;
                            for k in 0..3 {
                                let mut dv = z[k] - x[k];
                                dv -= side * (dv / side).round();
                                v[k] = dv;
                                r2 += dv * dv;
                            }
                            let r = r2.sqrt();
                            if r == 0.0 {
                                continue;
                            }
                            let gl = g_long(&v, alpha, 3);
                            let chi = smooth_cut(r, r0, r1);
                            let tail = (1.0 - chi) / (r2 * r);
                            for k in 0..3 {
                                cell[k] += -gl[k] + v[k] * tail;
                            }
                            // Potential: want total = -(1/nu)[phi_s + recip']
                            // = -(1/nu) phi chi + channel, so
                            // channel -= (1/nu)(phi_s - phi chi) at nodes;
                            // phi_s - phi chi = -phi_l + phi (1 - chi).
                            cell[3] -= (-phi_long(r, alpha, 3) + (1.0 - chi) / r.powf(nu)) / nu;
                        }
                    }
                }
            });
        Ok(CorrectionTable { n, data })
    }
}

impl CorrectionTable {
    /// Periodic tricubic (Catmull-Rom) interpolation of the 4 channels.
    fn sample(&self, x: &[f64], side: f64, out: &mut [f64; 4]) {
        let n = self.n;
        let nf = n as f64;
        let mut base = [0isize; 3];
        let mut wts = [[0.0f64; 4]; 3];
        for c in 0..3 {
            let u = (x[c] / side + 0.5) * nf;
            let fl = u.floor();
            let t = u - fl;
            let t2 = t * t;
            let t3 = t2 * t;
            wts[c] = [
                -0.5 * t3 + t2 - 0.5 * t,
                1.5 * t3 - 2.5 * t2 + 1.0,
                -1.5 * t3 + 2.0 * t2 + 0.5 * t,
                0.5 * t3 - 0.5 * t2,
            ];
            base[c] = fl as isize;
        }
        out.fill(0.0);
        for (di0, w0) in wts[0].iter().enumerate() {
            let i0 = (base[0] + di0 as isize - 1).rem_euclid(n as isize) as usize;
            for (di1, w1) in wts[1].iter().enumerate() {
                let i1 = (base[1] + di1 as isize - 1).rem_euclid(n as isize) as usize;
                let w01 = w0 * w1;
                for (di2, w2) in wts[2].iter().enumerate() {
                    let i2 = (base[2] + di2 as isize - 1).rem_euclid(n as isize) as usize;
                    let w = w01 * w2;
                    let off = ((i0 * n + i1) * n + i2) * 4;
                    for ch in 0..4 {
                        out[ch] += w * self.data[off + ch];
                    }
                }
            }
        }
    }
}
