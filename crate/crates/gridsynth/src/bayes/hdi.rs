//! Highest Density Interval over a scalar sample.

use super::BayesError;

/// Shortest contiguous interval containing `ceil(mass * n)` of the sorted
/// samples.
pub fn compute_hdi(samples: &[f64], mass: f64) -> Result<(f64, f64), BayesError> {
    if samples.is_empty() {
        return Err(BayesError::TooFewSamples(1));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(BayesError::BadMass);
    }
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let window = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[window - 1]);
    let mut best_width = best.1 - best.0;
    for i in 1..=(n - window) {
        let width = sorted[i + window - 1] - sorted[i];
        if width < best_width {
            best_width = width;
            best = (sorted[i], sorted[i + window - 1]);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_width_matches_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..100_000).map(|_| rng.gen::<f64>()).collect();
        let (lo, hi) = compute_hdi(&samples, 0.94).unwrap();
        assert!((hi - lo - 0.94).abs() < 0.01, "width {}", hi - lo);
    }

    #[test]
    fn degenerate_point() {
        let samples = vec![5.0; 10];
        assert_eq!(compute_hdi(&samples, 0.94).unwrap(), (5.0, 5.0));
    }

    #[test]
    fn half_mass_window() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let (lo, hi) = compute_hdi(&samples, 0.5).unwrap();
        assert_eq!(hi - lo, 49.0); // a 50-point window
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_hdi(&[], 0.94), Err(BayesError::TooFewSamples(_))));
        assert_eq!(compute_hdi(&[1.0], 0.94).unwrap(), (1.0, 1.0));
        assert!(matches!(compute_hdi(&[1.0, 2.0], 1.0), Err(BayesError::BadMass)));
    }
}
