//! Gamma mixture fitting by expectation-maximization.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaComponent {
    pub shape: f64,
    pub rate: f64,
}

impl GammaComponent {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaMixture {
    pub components: Vec<GammaComponent>,
    /// Global mixture weights from the fit (per-zone weights are learned
    /// separately from soft-assignment counts).
    pub weights: Vec<f64>,
}

impl GammaMixture {
    /// Per-component responsibilities for one observation.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let logs: Vec<f64> = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w.max(1e-300).ln() + c.log_pdf(x))
            .collect();
        softmax(&logs)
    }

    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        data.iter()
            .map(|&x| {
                let logs: Vec<f64> = self
                    .components
                    .iter()
                    .zip(&self.weights)
                    .map(|(c, w)| w.max(1e-300).ln() + c.log_pdf(x))
                    .collect();
                log_sum_exp(&logs)
            })
            .sum()
    }
}

fn softmax(logs: &[f64]) -> Vec<f64> {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|e| e / s).collect()
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

const SHAPE_MIN: f64 = 1e-3;
const SHAPE_MAX: f64 = 1e6;

/// Solve ln(shape) - digamma(shape) = s by bisection. The left side is
/// strictly decreasing from +inf (shape -> 0) to 0 (shape -> inf).
fn solve_shape(s: f64) -> f64 {
    if s <= 0.0 {
        return SHAPE_MAX; // degenerate (near-constant) data
    }
    let f = |a: f64| a.ln() - digamma(a) - s;
    let (mut lo, mut hi) = (SHAPE_MIN, SHAPE_MAX);
    if f(lo) < 0.0 {
        return SHAPE_MIN;
    }
    if f(hi) > 0.0 {
        return SHAPE_MAX;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt(); // geometric bisection suits the scale
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

/// Weighted maximum-likelihood Gamma fit from responsibility-weighted
/// sufficient statistics.
fn fit_component(sum_w: f64, sum_wx: f64, sum_wlnx: f64) -> GammaComponent {
    let mean = (sum_wx / sum_w).max(1e-12);
    let mean_ln = sum_wlnx / sum_w;
    let s = mean.ln() - mean_ln;
    let shape = solve_shape(s).clamp(SHAPE_MIN, SHAPE_MAX);
    GammaComponent { shape, rate: shape / mean }
}

/// EM fit with random restarts; the best-likelihood solution wins and
/// components come back ordered by ascending mean.
pub fn fit_gamma_mixture<R: Rng>(
    data: &[f64],
    k: usize,
    restarts: usize,
    max_iter: usize,
    rel_tol: f64,
    rng: &mut R,
) -> GammaMixture {
    assert!(data.len() >= k, "need at least k observations");
    let mut best: Option<(f64, GammaMixture)> = None;
    for _ in 0..restarts {
        // seed component means from random data points
        let mut seeds: Vec<f64> = data
            .choose_multiple(rng, k)
            .map(|x| x.max(1e-12) * rng.gen_range(0.9..1.1))
            .collect();
        seeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut mix = GammaMixture {
            components: seeds
                .iter()
                .map(|m| GammaComponent { shape: 4.0, rate: 4.0 / m })
                .collect(),
            weights: vec![1.0 / k as f64; k],
        };
        let mut prev_ll = f64::NEG_INFINITY;
        for _ in 0..max_iter {
            // E-step sufficient statistics
            let mut sum_w = vec![0.0; k];
            let mut sum_wx = vec![0.0; k];
            let mut sum_wlnx = vec![0.0; k];
            for &x in data {
                let r = mix.responsibilities(x);
                for j in 0..k {
                    sum_w[j] += r[j];
                    sum_wx[j] += r[j] * x;
                    sum_wlnx[j] += r[j] * x.ln();
                }
            }
            // M-step
            let n = data.len() as f64;
            for j in 0..k {
                mix.weights[j] = (sum_w[j] / n).max(1e-10);
                if sum_w[j] > 1e-8 {
                    mix.components[j] = fit_component(sum_w[j], sum_wx[j], sum_wlnx[j]);
                }
            }
            let wsum: f64 = mix.weights.iter().sum();
            for w in &mut mix.weights {
                *w /= wsum;
            }
            let ll = mix.log_likelihood(data);
            if (ll - prev_ll).abs() < rel_tol * (1.0 + prev_ll.abs()) {
                prev_ll = ll;
                break;
            }
            prev_ll = ll;
        }
        if best.as_ref().map_or(true, |(ll, _)| prev_ll > *ll) {
            best = Some((prev_ll, mix));
        }
    }
    let (_, mut mix) = best.expect("at least one restart");
    // fixed label order: ascending component mean
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| {
        mix.components[*a]
            .mean()
            .partial_cmp(&mix.components[*b].mean())
            .unwrap()
    });
    mix.components = order.iter().map(|i| mix.components[*i]).collect();
    mix.weights = order.iter().map(|i| mix.weights[*i]).collect();
    mix
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    #[test]
    fn shape_solver_inverts() {
        for shape in [0.5, 1.0, 5.0, 50.0] {
            let s = (shape as f64).ln() - digamma(shape);
            let got = solve_shape(s);
            assert!((got - shape).abs() / shape < 1e-4, "shape {shape} got {got}");
        }
    }

    #[test]
    fn two_component_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g1 = Gamma::new(50.0, 0.2 / 50.0).unwrap(); // mean 0.2
        let g2 = Gamma::new(50.0, 0.8 / 50.0).unwrap(); // mean 0.8
        let mut data: Vec<f64> = Vec::new();
        for _ in 0..1500 {
            data.push(g1.sample(&mut rng));
            data.push(g2.sample(&mut rng));
        }
        let mix = fit_gamma_mixture(&data, 3, 10, 500, 1e-8, &mut rng);
        // two components must land near the true means; the third is idle
        let means: Vec<f64> = mix.components.iter().map(|c| c.mean()).collect();
        let near = |target: f64| {
            means
                .iter()
                .zip(&mix.weights)
                .any(|(m, w)| (*m - target).abs() / target < 0.1 && *w > 0.2)
        };
        assert!(near(0.2), "means {means:?} weights {:?}", mix.weights);
        assert!(near(0.8), "means {means:?} weights {:?}", mix.weights);
        let min_weight = mix.weights.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_weight < 0.1, "weights {:?}", mix.weights);
    }

    #[test]
    fn constant_data_degenerates_to_atom() {
        let data = vec![0.4; 100];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mix = fit_gamma_mixture(&data, 3, 3, 100, 1e-8, &mut rng);
        for c in &mix.components {
            assert!((c.mean() - 0.4).abs() < 0.05, "mean {}", c.mean());
        }
    }
}
