//! Small numeric helpers shared across modules: order-canonical summation,
//! deterministic low-discrepancy sequences, and sphere meshes.

use nalgebra::DVector;

/// Pairwise (tree) summation of a slice, in slice order.
///
/// Error grows like O(log n) rather than O(n) for sequential summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Sum that is invariant under permutation of its inputs.
///
/// Values are brought into the total order before the pairwise tree sum, so
/// any reordering of the same multiset produces the bitwise-identical result.
/// This is what makes the shared reflection term of a particle ensemble
/// exchangeable at the bit level.
pub fn canonical_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    pairwise_sum(values)
}

/// Component-wise permutation-invariant mean of a set of points.
///
/// `scratch` must have length `points.len()`; it is used to stage each
/// component before sorting.
pub fn canonical_mean(points: &[DVector<f64>], scratch: &mut Vec<f64>, out: &mut DVector<f64>) {
    let n = points.len();
    assert!(n > 0, "mean of empty point set");
    let dim = points[0].len();
    for c in 0..dim {
        scratch.clear();
        scratch.extend(points.iter().map(|p| p[c]));
        out[c] = canonical_sum(scratch) / n as f64;
    }
}

/// Radical-inverse (van der Corput) value of `index` in the given base.
pub fn radical_inverse(mut index: usize, base: usize) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut result = 0.0;
    while index > 0 {
        result += (index % base) as f64 * inv;
        index /= base;
        inv /= b;
    }
    result
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// `index`-th point of the Halton sequence in `dim` dimensions, in [0,1)^dim.
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton supports at most 16 dimensions");
    (0..dim).map(|c| radical_inverse(index, PRIMES[c])).collect()
}

/// Deterministic, seedless set of `count` unit vectors in R^dim.
///
/// Built from Halton points pushed through the Box-Muller map and normalized,
/// so the directions are equidistributed on the sphere and reproducible
/// without any RNG state.
pub fn unit_directions(dim: usize, count: usize) -> Vec<DVector<f64>> {
    assert!(dim >= 1);
    if dim == 1 {
        return (0..count)
            .map(|i| DVector::from_element(1, if i % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
    }
    let pairs = dim.div_ceil(2);
    let mut dirs = Vec::with_capacity(count);
    let mut index = 1usize;
    while dirs.len() < count {
        let u = halton(index, 2 * pairs);
        index += 1;
        let mut coords = Vec::with_capacity(2 * pairs);
        for p in 0..pairs {
            let u1 = u[2 * p].max(1e-12);
            let u2 = u[2 * p + 1];
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            coords.push(r * theta.cos());
            coords.push(r * theta.sin());
        }
        coords.truncate(dim);
        let v = DVector::from_vec(coords);
        let norm = v.norm();
        if norm > 1e-9 {
            dirs.push(v / norm);
        }
    }
    dirs
}

/// Simple ordinary-least-squares slope of `y` against `x` (no intercept term
/// removed; fits y = a + b x and returns b).
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_smooth_data() {
        let values: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let naive: f64 = values.iter().sum();
        assert!((pairwise_sum(&values) - naive).abs() < 1e-9);
    }

    #[test]
    fn canonical_sum_is_permutation_invariant() {
        let base: Vec<f64> = (0..257).map(|i| ((i * 2654435761_usize) % 1000) as f64 * 1e-3 - 0.3).collect();
        let mut a = base.clone();
        let mut b = base.clone();
        b.reverse();
        b.rotate_left(41);
        let sa = canonical_sum(&mut a);
        let sb = canonical_sum(&mut b);
        assert_eq!(sa.to_bits(), sb.to_bits());
    }

    #[test]
    fn halton_is_in_unit_cube_and_low_discrepancy() {
        let mut mean = [0.0; 3];
        let n = 512;
        for i in 1..=n {
            let p = halton(i, 3);
            for c in 0..3 {
                assert!(p[c] >= 0.0 && p[c] < 1.0);
                mean[c] += p[c];
            }
        }
        for m in mean {
            assert!((m / n as f64 - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn unit_directions_have_unit_norm_and_spread() {
        for dim in [1usize, 2, 3, 5] {
            let dirs = unit_directions(dim, 64);
            assert_eq!(dirs.len(), 64);
            let mut mean = DVector::zeros(dim);
            for d in &dirs {
                assert!((d.norm() - 1.0).abs() < 1e-12);
                mean += d;
            }
            mean /= 64.0;
            assert!(mean.norm() < 0.35, "directions cluster in dim {dim}: {}", mean.norm());
        }
    }

    #[test]
    fn ols_slope_recovers_line() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 2.5 * v).collect();
        assert!((ols_slope(&x, &y) - 2.5).abs() < 1e-12);
    }
}
