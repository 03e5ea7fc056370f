//! Moment maps, equal-measure cylinder partitions, moment-matched point
//! sets, the kernel Taylor expansion, dominated-box partitions, and the
//! moment-CLT density check.

pub mod boxes;
pub mod density;
pub mod fit;
pub mod partition;
pub mod sphere;
pub mod taylor;

pub use boxes::{partition_dominated_boxes, DominatedBox, DominatedBoxPartition};
pub use density::{empirical_density_check, DensityCheck};
pub use fit::{fit_patch_points, CubatureRule};
pub use partition::{nu_total_mass, partition_cylinder, CylinderMeasure, Patch, PatchDecomposition};
pub use taylor::{check_force_approx_event, ForceApproxCheck, TaylorModel};

use crate::error::{GravError, Result};

/// `polydim(k, d) = C(k+d, d) - 1`, the number of monomials `x^alpha` with
/// `0 < |alpha| <= k`.
pub fn polydim(k: usize, d: usize) -> usize {
    let mut c: u128 = 1;
    for i in 1..=d {
        c = c * (k + i) as u128 / i as u128;
    }
    (c - 1) as usize
}

/// Multi-indices with `0 < |alpha| <= k` in graded lexicographic order:
/// by total degree, then descending lexicographic within a degree.
pub fn multi_indices(k: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(polydim(k, d));
    let mut cur = vec![0usize; d];
    for m in 1..=k {
        compositions(m, 0, &mut cur, &mut out);
    }
    out
}

fn compositions(rem: usize, pos: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if pos == cur.len() - 1 {
        cur[pos] = rem;
        out.push(cur.clone());
        return;
    }
    for v in (0..=rem).rev() {
        cur[pos] = v;
        compositions(rem - v, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// The moment map `P_k^d(x) = (x^alpha)` over `0 < |alpha| <= k` in graded
/// lexicographic order.
pub fn moment_map(x: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 1 {
        return Err(GravError::InvalidParameter("moment map needs degree k >= 1".into()));
    }
    let d = x.len();
    Ok(multi_indices(k, d)
        .iter()
        .map(|alpha| monomial(x, alpha))
        .collect())
}

pub fn monomial(x: &[f64], alpha: &[usize]) -> f64 {
    x.iter()
        .zip(alpha)
        .map(|(&xi, &a)| xi.powi(a as i32))
        .product()
}

/// Smallest integer `m >= 1` with `(k e / (m+1))^{m+1} <= delta / (2 d 2^k)`,
/// evaluated in logs.
pub fn m0(d: usize, k: usize, delta: f64) -> Result<usize> {
    if !(delta > 0.0) {
        return Err(GravError::InvalidParameter("m0 needs delta > 0".into()));
    }
    let rhs = delta.ln() - (2.0 * d as f64).ln() - k as f64 * std::f64::consts::LN_2;
    let kf = k as f64;
    for m in 1..=10_000usize {
        let mp1 = (m + 1) as f64;
        let lhs = mp1 * (kf.ln() + 1.0 - mp1.ln());
        if lhs <= rhs {
            return Ok(m);
        }
    }
    Err(GravError::InvalidParameter("m0 search did not terminate".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polydim_examples() {
        assert_eq!(polydim(1, 3), 3);
        assert_eq!(polydim(2, 3), 9);
        assert_eq!(polydim(2, 2), 5);
        assert_eq!(polydim(6, 5), 461);
    }

    #[test]
    fn moment_map_graded_lex_example() {
        // d=2, k=2, x=(2,3) -> (2, 3, 4, 6, 9)
        let m = moment_map(&[2.0, 3.0], 2).unwrap();
        assert_eq!(m, vec![2.0, 3.0, 4.0, 6.0, 9.0]);
        let z = moment_map(&[0.0, 0.0], 2).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert_eq!(moment_map(&[1.0, 1.0, 1.0], 2).unwrap().len(), polydim(2, 3));
    }

    #[test]
    fn m0_examples() {
        // d=3, k=1, delta=0.1 -> 6.
        assert_eq!(m0(3, 1, 0.1).unwrap(), 6);
        // Monotone nonincreasing in delta.
        let mut prev = usize::MAX;
        for delta in [1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0] {
            let m = m0(3, 2, delta).unwrap();
            assert!(m <= prev);
            prev = m;
        }
        // Huge delta accepts m = 1.
        assert_eq!(m0(3, 1, 1e9).unwrap(), 1);
    }

    #[test]
    fn monomial_consistency() {
        let x = [1.5, -2.0, 0.5];
        let idx = multi_indices(3, 3);
        let m = moment_map(&x, 3).unwrap();
        for (i, alpha) in idx.iter().enumerate() {
            assert_relative_eq!(m[i], monomial(&x, alpha), epsilon = 1e-15);
        }
    }
}
