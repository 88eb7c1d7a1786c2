//! Interruption frequency model: zone-conditioned negative binomial with a
//! global dispersion, inferred by adaptive Metropolis on log parameters.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::mcmc::{adaptive_metropolis, McmcConfig};
use super::records::{resolve_zones, BusRecord};
use super::{log_normal_prior, BayesError, Priors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyDraw {
    /// Mean failures per year per zone.
    pub mu: Vec<f64>,
    pub alpha_disp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPosterior {
    pub z_count: u32,
    pub draws: Vec<FrequencyDraw>,
}

impl FrequencyPosterior {
    pub fn mean_mu(&self, zone: u32) -> f64 {
        let zi = zone.clamp(1, self.z_count) as usize - 1;
        self.draws.iter().map(|d| d.mu[zi]).sum::<f64>() / self.draws.len() as f64
    }
}

/// Negative binomial log-pmf in (mu, alpha) parameterization.
fn nb_log_pmf(y: f64, mu: f64, alpha: f64) -> f64 {
    ln_gamma(y + alpha) - ln_gamma(alpha) - ln_gamma(y + 1.0)
        + alpha * (alpha.ln() - (alpha + mu).ln())
        + y * (mu.ln() - (alpha + mu).ln())
}

pub fn learn_frequency<R: Rng>(
    records: &[BusRecord],
    z_count: u32,
    priors: &Priors,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<FrequencyPosterior, BayesError> {
    if records.is_empty() {
        return Err(BayesError::EmptyDataset);
    }
    let zones = resolve_zones(
        &records.iter().map(|r| r.hop_zone).collect::<Vec<_>>(),
        &records.iter().map(|r| r.distance_km).collect::<Vec<_>>(),
        z_count,
    )?;
    // histogram of counts per zone keeps the likelihood O(distinct values)
    let mut hist: Vec<BTreeMap<u32, u32>> = vec![BTreeMap::new(); z_count as usize];
    for (rec, z) in records.iter().zip(&zones) {
        *hist[*z as usize - 1].entry(rec.interruptions_per_year).or_insert(0) += 1;
    }

    // theta = [log mu_z ...] ++ [log alpha]
    let dim = z_count as usize + 1;
    let mut init: Vec<f64> = hist
        .iter()
        .map(|h| {
            let (n, sum) = h.iter().fold((0u32, 0u64), |(n, s), (y, c)| {
                (n + c, s + *y as u64 * *c as u64)
            });
            if n == 0 {
                priors.mu_freq_prior.ln()
            } else {
                (sum as f64 / n as f64).max(0.05).ln()
            }
        })
        .collect();
    init.push(priors.alpha_disp_prior.ln());

    let priors_c = priors.clone();
    let log_post = move |theta: &[f64]| -> f64 {
        let alpha = theta[dim - 1].exp();
        let mut lp =
            log_normal_prior(theta[dim - 1], priors_c.alpha_disp_prior, priors_c.alpha_disp_prior_sd);
        for (zi, h) in hist.iter().enumerate() {
            lp += log_normal_prior(theta[zi], priors_c.mu_freq_prior, priors_c.mu_freq_prior_sd);
            let mu = theta[zi].exp();
            for (y, n) in h {
                lp += *n as f64 * nb_log_pmf(*y as f64, mu, alpha);
            }
        }
        lp
    };

    let trace = adaptive_metropolis(log_post, &init, cfg, rng)?;
    let draws = trace
        .into_iter()
        .map(|theta| FrequencyDraw {
            mu: theta[..dim - 1].iter().map(|t| t.exp()).collect(),
            alpha_disp: theta[dim - 1].exp(),
        })
        .collect();
    Ok(FrequencyPosterior { z_count, draws })
}

/// Draw an interruption count for one bus via Gamma-Poisson composition.
pub fn sample_count<R: Rng>(draw: &FrequencyDraw, zone: u32, rng: &mut R) -> u32 {
    let zi = (zone.max(1) as usize - 1).min(draw.mu.len() - 1);
    let mu = draw.mu[zi];
    let alpha = draw.alpha_disp;
    let lambda: f64 = Gamma::new(alpha, mu / alpha).unwrap().sample(rng);
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda.max(1e-12)).unwrap().sample(rng) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::Phase;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bus(zone: u32, count: u32) -> BusRecord {
        BusRecord {
            bus_id: "b".into(),
            distance_km: None,
            hop_zone: Some(zone),
            phase: Phase::A,
            p_kw: [1.0, 0.0, 0.0],
            interruptions_per_year: count,
            interruption_durations_h: Vec::new(),
            building_scale: 1.0,
        }
    }

    fn simulate_nb<R: Rng>(mu: f64, alpha: f64, rng: &mut R) -> u32 {
        let lambda: f64 = Gamma::new(alpha, mu / alpha).unwrap().sample(rng);
        Poisson::new(lambda.max(1e-12)).unwrap().sample(rng) as u32
    }

    #[test]
    fn recovers_simulated_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let records: Vec<BusRecord> =
            (0..2000).map(|_| bus(1, simulate_nb(2.0, 1.5, &mut rng))).collect();
        let cfg = McmcConfig { steps: 8000, burn_in: 4000, thin: 8, ..Default::default() };
        let post = learn_frequency(&records, 1, &Priors::default(), &cfg, &mut rng).unwrap();
        let mu = post.mean_mu(1);
        assert!((mu - 2.0).abs() / 2.0 < 0.1, "mu {mu}");
    }

    #[test]
    fn all_zero_counts_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let records: Vec<BusRecord> = (0..200).map(|_| bus(1, 0)).collect();
        let post =
            learn_frequency(&records, 1, &Priors::default(), &McmcConfig::fast(2), &mut rng)
                .unwrap();
        assert!(post.mean_mu(1) < 0.1, "mu {}", post.mean_mu(1));
    }

    #[test]
    fn zone_ordering_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut records = Vec::new();
        for _ in 0..500 {
            records.push(bus(1, simulate_nb(1.0, 2.0, &mut rng)));
            records.push(bus(2, simulate_nb(10.0, 2.0, &mut rng)));
        }
        let post =
            learn_frequency(&records, 2, &Priors::default(), &McmcConfig::fast(3), &mut rng)
                .unwrap();
        assert!(post.mean_mu(1) < post.mean_mu(2));
    }

    #[test]
    fn sampled_counts_match_degenerate_mean() {
        let draw = FrequencyDraw { mu: vec![3.1], alpha_disp: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| sample_count(&draw, 1, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 3.1).abs() < 0.05, "mean {mean}");
    }
}
