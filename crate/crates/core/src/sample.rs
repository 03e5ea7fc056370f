//! Poisson sampling of star configurations.

use crate::error::{GravError, Result};
use crate::geom::DomainSpec;
use crate::rng::{purpose, substream};
use rand::Rng;
use rand_distr::Distribution;

/// A finite point configuration together with its generation record.
/// Rebuilding from `(domain, intensity, seed)` is bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct StarField {
    domain: DomainSpec,
    intensity: f64,
    seed: u64,
    /// Flattened `count * dim` coordinates.
    coords: Vec<f64>,
}

impl StarField {
    pub fn sample(domain: &DomainSpec, intensity: f64, seed: u64) -> Result<Self> {
        if !(intensity > 0.0) {
            return Err(GravError::InvalidParameter(format!(
                "intensity must be positive, got {intensity}"
            )));
        }
        let mean = intensity * domain.volume();
        let mut count_rng = substream(seed, purpose::SAMPLE_COUNT, 0);
        let count = rand_distr::Poisson::new(mean)
            .map_err(|e| GravError::InvalidParameter(format!("poisson mean: {e}")))?
            .sample(&mut count_rng) as usize;
        let mut point_rng = substream(seed, purpose::SAMPLE_POINTS, 0);
        let (lo, hi) = domain.coord_range();
        let mut coords = Vec::with_capacity(count * domain.dim);
        for _ in 0..count * domain.dim {
            coords.push(point_rng.gen_range(lo..hi));
        }
        Ok(Self { domain: domain.clone(), intensity, seed, coords })
    }

    /// Build a field from explicit points (used by the constructions).
    pub fn from_points(domain: &DomainSpec, intensity: f64, seed: u64, points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = domain.dim;
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(GravError::InvalidParameter("point dimension mismatch".into()));
            }
            if !domain.contains(p) {
                return Err(GravError::InvalidParameter(format!(
                    "point {p:?} outside the domain"
                )));
            }
            coords.extend_from_slice(p);
        }
        Ok(Self { domain: domain.clone(), intensity, seed, coords })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn len(&self) -> usize {
        if self.domain.dim == 0 { 0 } else { self.coords.len() / self.domain.dim }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.domain.dim;
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.domain.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Squared distance from `x` to the nearest star and its index.
    pub fn nearest_star(&self, x: &[f64]) -> Option<(usize, f64)> {
        let d = self.domain.dim;
        let torus = self.domain.mode == crate::geom::DomainMode::Torus;
        let side = self.domain.side;
        let mut best: Option<(usize, f64)> = None;
        for (i, z) in self.points().enumerate() {
            let mut r2 = 0.0;
            for k in 0..d {
                let mut dv = z[k] - x[k];
                if torus {
                    dv -= side * (dv / side).round();
                }
                r2 += dv * dv;
            }
            if best.map_or(true, |(_, b)| r2 < b) {
                best = Some((i, r2));
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::DomainMode;
    use crate::poisson;

    #[test]
    fn determinism_contract() {
        let dom = DomainSpec::boxed(3, 4.0).unwrap();
        let a = StarField::sample(&dom, 1.0, 99).unwrap();
        let b = StarField::sample(&dom, 1.0, 99).unwrap();
        assert_eq!(a, b);
        let c = StarField::sample(&dom, 1.0, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_nonpositive_intensity() {
        let dom = DomainSpec::boxed(3, 2.0).unwrap();
        assert!(StarField::sample(&dom, 0.0, 1).is_err());
        assert!(StarField::sample(&dom, -1.0, 1).is_err());
    }

    #[test]
    fn count_moments_match_poisson() {
        // d=3 box of side 4, intensity 1: mean count 64.
        let dom = DomainSpec::boxed(3, 4.0).unwrap();
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for seed in 0..n {
            let f = StarField::sample(&dom, 1.0, seed).unwrap();
            let c = f.len() as f64;
            sum += c;
            sum2 += c * c;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        let lam = 64.0;
        // 3 standard errors of the mean / variance estimators.
        let se_mean = (lam / n as f64).sqrt();
        assert!((mean - lam).abs() < 3.0 * se_mean, "mean {mean} vs {lam}");
        let se_var = lam * (2.0 + 1.0 / lam).sqrt() / (n as f64).sqrt() * 1.5;
        assert!((var - lam).abs() < 3.0 * se_var, "var {var} vs {lam}");
    }

    #[test]
    fn sparse_field_is_usually_empty() {
        // d=3 box of side 2, intensity 0.001: empty with prob e^{-0.008}.
        let dom = DomainSpec::boxed(3, 2.0).unwrap();
        let n = 20_000;
        let empty = (0..n)
            .filter(|&s| StarField::sample(&dom, 0.001, s).unwrap().is_empty())
            .count();
        let p_expected = poisson::pmf(0.008, 0);
        assert!((p_expected - 0.992_031_9).abs() < 1e-6);
        let p_hat = empty as f64 / n as f64;
        let se = (p_expected * (1.0 - p_expected) / n as f64).sqrt();
        assert!((p_hat - p_expected).abs() < 4.0 * se, "p_hat {p_hat} vs {p_expected}");
    }

    #[test]
    fn torus_nearest_uses_min_image() {
        let dom = DomainSpec::torus(3, 4.0).unwrap();
        let f = StarField::from_points(&dom, 1.0, 0, vec![vec![1.9, 0.0, 0.0]]).unwrap();
        let (_, r2) = f.nearest_star(&[-1.9, 0.0, 0.0]).unwrap();
        assert!((r2.sqrt() - 0.2).abs() < 1e-12);
        let dom_box = DomainSpec::new(3, DomainMode::Box, 4.0, true).unwrap();
        let g = StarField::from_points(&dom_box, 1.0, 0, vec![vec![1.9, 0.0, 0.0]]).unwrap();
        let (_, r2) = g.nearest_star(&[-1.9, 0.0, 0.0]).unwrap();
        assert!((r2.sqrt() - 3.8).abs() < 1e-12);
    }
}
