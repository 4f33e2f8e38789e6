//! Random draws shared by MA generation and the execution oracle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::mass::{ProbInterval, DEFAULT_TOL};

/// Uniform weights on the (n-1)-simplex, i.e. symmetric Dirichlet(1).
pub fn dirichlet_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    assert!(n > 0, "simplex of dimension zero");
    if n == 1 {
        return vec![1.0];
    }
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// True when some vector with `x_i ∈ intervals[i]` sums to one.
pub fn group_feasible(intervals: &[ProbInterval], tol: f64) -> bool {
    let lo: f64 = intervals.iter().map(|i| i.lo).sum();
    let hi: f64 = intervals.iter().map(|i| i.hi).sum();
    !intervals.is_empty() && lo <= 1.0 + tol && hi >= 1.0 - tol
}

/// Draws numbers inside the interval box that sum to one.
///
/// Siblings are visited in random order; each draws uniformly from the range
/// that keeps the remaining siblings feasible, and the last one is forced.
pub fn sample_box_simplex<R: Rng + ?Sized>(
    intervals: &[ProbInterval],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !group_feasible(intervals, DEFAULT_TOL) {
        return Err(Error::InvalidCma(format!(
            "infeasible sibling intervals {intervals:?}"
        )));
    }
    let n = intervals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut later_lo: f64 = intervals.iter().map(|i| i.lo).sum();
    let mut later_hi: f64 = intervals.iter().map(|i| i.hi).sum();
    let mut drawn: f64 = 0.0;
    let mut out = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        let iv = intervals[i];
        later_lo -= iv.lo;
        later_hi -= iv.hi;
        let x = if pos + 1 == n {
            (1.0 - drawn).clamp(iv.lo, iv.hi)
        } else {
            let lower = iv.lo.max(1.0 - later_hi - drawn);
            let upper = iv.hi.min(1.0 - later_lo - drawn);
            if upper <= lower {
                lower.min(iv.hi)
            } else {
                rng.random_range(lower..=upper)
            }
        };
        out[i] = x;
        drawn += x;
    }
    Ok(out)
}

/// A deterministic feasible point: every entry at its lower bound, the
/// remaining mass handed out in index order up to each upper bound.
pub fn box_simplex_point(intervals: &[ProbInterval]) -> Option<Vec<f64>> {
    if !group_feasible(intervals, DEFAULT_TOL) {
        return None;
    }
    let mut out: Vec<f64> = intervals.iter().map(|i| i.lo).collect();
    let mut rest = 1.0 - out.iter().sum::<f64>();
    for (x, iv) in out.iter_mut().zip(intervals) {
        if rest <= 0.0 {
            break;
        }
        let add = (iv.hi - iv.lo).min(rest);
        *x += add;
        rest -= add;
    }
    Some(out)
}

/// Splits a master seed into independent per-index seeds (splitmix64).
pub fn sub_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(master, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> ProbInterval {
        ProbInterval::new(lo, hi).unwrap()
    }

    #[test]
    fn box_samples_stay_in_box_and_sum_to_one() {
        let groups = [
            vec![iv(0.2, 0.5), iv(0.5, 0.8)],
            vec![iv(0.0, 1.0), iv(0.0, 1.0), iv(0.0, 1.0)],
            vec![iv(0.1, 0.2), iv(0.3, 0.3), iv(0.0, 0.9)],
            vec![iv(1.0, 1.0)],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for g in &groups {
            for _ in 0..500 {
                let x = sample_box_simplex(g, &mut rng).unwrap();
                assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (v, i) in x.iter().zip(g) {
                    assert!(i.contains(*v, 1e-12), "{v} not in {i:?}");
                }
            }
        }
    }

    #[test]
    fn infeasible_groups_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_box_simplex(&[iv(0.0, 0.3), iv(0.0, 0.4)], &mut rng).is_err());
        assert!(sample_box_simplex(&[iv(0.6, 0.7), iv(0.5, 0.9)], &mut rng).is_err());
        assert!(box_simplex_point(&[iv(0.6, 0.7), iv(0.5, 0.9)]).is_none());
        let p = box_simplex_point(&[iv(0.1, 0.5), iv(0.2, 0.9)]).unwrap();
        assert!(
            (p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12,
            "{p:?}"
        );
    }

    #[test]
    fn dirichlet_is_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..6 {
            let w = dirichlet_weights(n, &mut rng);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sub_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| sub_seed(42, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
