//! Truncated-normal sampling.
//!
//! Moderate truncations go through the inverse CDF, evaluated in whichever
//! tail carries less mass so precision survives far from the center.
//! One-sided truncations beyond 5 standard deviations use Robert's
//! exponential rejection sampler, which stays exact where the inverse CDF
//! would round to the boundary. Draws are always strictly inside the
//! interval; a draw that lands exactly on a bound is re-sampled.

use super::normal::{std_normal_cdf, std_normal_quantile};
use super::rng::RngStream;
use crate::error::{RdError, Result};

const TAIL_CUTOFF: f64 = 5.0;

/// One draw from N(mean, sd²) restricted to the open interval
/// (lower, upper). Bounds may be ±∞.
pub fn sample_truncated_normal(
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    if !(sd > 0.0) {
        return Err(RdError::Domain(format!("truncated normal: sd must be positive, got {sd}")));
    }
    if !(lower < upper) {
        return Err(RdError::Domain(format!(
            "truncated normal: empty interval ({lower}, {upper})"
        )));
    }
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    loop {
        let t = sample_std(a, b, rng);
        let x = mean + sd * t;
        if x > lower && x < upper {
            return Ok(x);
        }
        // Rounding pushed the draw onto a bound; try again.
    }
}

fn sample_std(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return rng.std_normal();
    }
    if b == f64::INFINITY {
        if a >= TAIL_CUTOFF {
            return robert_tail(a, rng);
        }
        // Sample u in (Φ(a), 1) through the complement to avoid the
        // catastrophic 1 − Φ(a) when a is large.
        let tail = std_normal_cdf(-a); // mass above a
        return -std_normal_quantile(rng.uniform_open() * tail);
    }
    if a == f64::NEG_INFINITY {
        if b <= -TAIL_CUTOFF {
            return -robert_tail(-b, rng);
        }
        let tail = std_normal_cdf(b);
        return std_normal_quantile(rng.uniform_open() * tail);
    }
    // Two-sided: invert in the tail with less mass.
    if a >= 0.0 {
        let hi = std_normal_cdf(-a);
        let lo = std_normal_cdf(-b);
        -std_normal_quantile(lo + rng.uniform_open() * (hi - lo))
    } else {
        let lo = std_normal_cdf(a);
        let hi = std_normal_cdf(b);
        std_normal_quantile(lo + rng.uniform_open() * (hi - lo))
    }
}

/// Robert (1995) rejection sampler for N(0,1) restricted to (a, ∞), a > 0.
fn robert_tail(a: f64, rng: &mut RngStream) -> f64 {
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - rng.uniform_open().ln() / alpha;
        let d = z - alpha;
        if rng.uniform_open() <= (-0.5 * d * d).exp() {
            return z;
        }
    }
}

/// Draw from N(mean, 1) restricted to (0, ∞) when `positive`, otherwise to
/// (−∞, 0). Same algorithm as [`sample_truncated_normal`], specialized for
/// the probit latent-utility draws (unit variance, single bound at zero);
/// the draw is strictly inside the open interval.
pub fn sample_probit_utility(mean: f64, positive: bool, rng: &mut RngStream) -> f64 {
    // Standardize to (a, ∞) with a = −mean for the positive side, and use
    // the reflection −N(−mean,1)|(0,∞) = N(mean,1)|(−∞,0) for the other.
    let (a, sign, m) = if positive { (-mean, 1.0, mean) } else { (mean, -1.0, -mean) };
    loop {
        let t = if a >= TAIL_CUTOFF {
            robert_tail(a, rng)
        } else {
            let tail = std_normal_cdf(-a);
            -std_normal_quantile(rng.uniform_open() * tail)
        };
        let x = m + t;
        if x > 0.0 {
            return sign * x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_of(draws: &[f64]) -> f64 {
        draws.iter().sum::<f64>() / draws.len() as f64
    }

    #[test]
    fn untruncated_mean() {
        let mut rng = RngStream::new(1, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_truncated_normal(2.0, 1.5, f64::NEG_INFINITY, f64::INFINITY, &mut rng).unwrap())
            .collect();
        let tol = 4.0 * 1.5 / (n as f64).sqrt();
        assert!((mean_of(&draws) - 2.0).abs() < tol);
    }

    #[test]
    fn half_normal_mean() {
        // E[N(0,1) | x > 0] = φ(0)/(1−Φ(0)) = √(2/π) ≈ 0.79788.
        let mut rng = RngStream::new(2, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_normal(0.0, 1.0, 0.0, f64::INFINITY, &mut rng).unwrap())
            .collect();
        assert!((mean_of(&draws) - 0.797_884_560_802_865_36).abs() < 0.01);
        assert!(draws.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn lower_half_mean_by_symmetry() {
        let mut rng = RngStream::new(3, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_normal(0.0, 1.0, f64::NEG_INFINITY, 0.0, &mut rng).unwrap())
            .collect();
        assert!((mean_of(&draws) + 0.797_884_560_802_865_36).abs() < 0.01);
        assert!(draws.iter().all(|&x| x < 0.0));
    }

    #[test]
    fn bounds_never_violated_over_many_draws() {
        let mut rng = RngStream::new(4, 0);
        let configs = [
            (0.0, 1.0, -1.0, 1.0),
            (3.0, 0.5, 2.0, f64::INFINITY),
            (0.0, 1.0, 7.5, f64::INFINITY), // deep tail, rejection path
            (0.0, 1.0, f64::NEG_INFINITY, -9.0),
            (-2.0, 4.0, -2.5, -1.5),
            (10.0, 1.0, 15.0, 17.0), // two-sided upper tail
        ];
        for &(mean, sd, lo, hi) in &configs {
            for _ in 0..200_000 {
                let x = sample_truncated_normal(mean, sd, lo, hi, &mut rng).unwrap();
                assert!(x > lo && x < hi, "draw {x} outside ({lo}, {hi})");
            }
        }
    }

    #[test]
    fn deep_tail_mean_matches_mills() {
        // E[N(0,1) | x > a] = φ(a)/(1−Φ(a)); at a = 8 this is ≈ 8.1220.
        let a = 8.0;
        let expect = super::super::normal::std_normal_pdf(a) / std_normal_cdf(-a);
        let mut rng = RngStream::new(5, 0);
        let draws: Vec<f64> = (0..50_000)
            .map(|_| sample_truncated_normal(0.0, 1.0, a, f64::INFINITY, &mut rng).unwrap())
            .collect();
        assert!((mean_of(&draws) - expect).abs() < 0.01, "mean {}", mean_of(&draws));
    }

    #[test]
    fn empty_interval_rejected() {
        let mut rng = RngStream::new(6, 0);
        assert!(sample_truncated_normal(0.0, 1.0, 1.0, 1.0, &mut rng).is_err());
        assert!(sample_truncated_normal(0.0, 1.0, 2.0, 1.0, &mut rng).is_err());
        assert!(sample_truncated_normal(0.0, 0.0, 0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn probit_utility_matches_generic_sampler_moments() {
        let mut rng = RngStream::new(7, 0);
        for &(mean, positive) in
            &[(0.0, true), (-1.5, true), (2.0, false), (-6.5, true), (7.0, false)]
        {
            let n = 200_000;
            let fast: Vec<f64> =
                (0..n).map(|_| sample_probit_utility(mean, positive, &mut rng)).collect();
            let (lo, hi) =
                if positive { (0.0, f64::INFINITY) } else { (f64::NEG_INFINITY, 0.0) };
            let generic: Vec<f64> = (0..n)
                .map(|_| sample_truncated_normal(mean, 1.0, lo, hi, &mut rng).unwrap())
                .collect();
            assert!(fast.iter().all(|&x| if positive { x > 0.0 } else { x < 0.0 }));
            let m1 = mean_of(&fast);
            let m2 = mean_of(&generic);
            let sd = (fast.iter().map(|x| (x - m1) * (x - m1)).sum::<f64>() / n as f64).sqrt();
            let tol = 8.0 * sd / (n as f64).sqrt();
            assert!((m1 - m2).abs() < tol, "mean {mean} positive {positive}: {m1} vs {m2}");
        }
    }

    #[test]
    fn deterministic_given_stream_state() {
        let mut a = RngStream::new(9, 4);
        let mut b = RngStream::new(9, 4);
        for _ in 0..1000 {
            let xa = sample_truncated_normal(1.0, 2.0, 0.0, f64::INFINITY, &mut a).unwrap();
            let xb = sample_truncated_normal(1.0, 2.0, 0.0, f64::INFINITY, &mut b).unwrap();
            assert_eq!(xa.to_bits(), xb.to_bits());
        }
    }
}
