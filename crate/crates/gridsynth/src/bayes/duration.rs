//! Interruption duration model: a two-part hurdle with a conjugate
//! Beta-Bernoulli occurrence gate and zone-conditioned Weibull severity.

use rand::Rng;
use rand_distr::{Beta, Distribution, Weibull};
use serde::{Deserialize, Serialize};

use super::mcmc::{adaptive_metropolis, McmcConfig};
use super::records::{resolve_zones, BusRecord};
use super::{log_normal_prior, BayesError, Priors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationDraw {
    /// Interruption probability per zone.
    pub p: Vec<f64>,
    /// Weibull (shape, scale hours) per zone.
    pub weib: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationPosterior {
    pub z_count: u32,
    /// Beta posterior (successes+1, failures+1) per zone, for conjugate
    /// exactness checks.
    pub beta_params: Vec<(f64, f64)>,
    pub draws: Vec<DurationDraw>,
}

impl DurationPosterior {
    pub fn mean_p(&self, zone: u32) -> f64 {
        let zi = zone.clamp(1, self.z_count) as usize - 1;
        let (a, b) = self.beta_params[zi];
        a / (a + b)
    }
}

fn weibull_log_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let t = x / scale;
    shape.ln() - scale.ln() + (shape - 1.0) * t.ln() - t.powf(shape)
}

/// MH fit of (log shape, log scale) against a duration set; an empty set
/// yields prior draws.
fn fit_weibull<R: Rng>(
    durations: &[f64],
    priors: &Priors,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>, BayesError> {
    let data = durations.to_vec();
    let priors_c = priors.clone();
    let log_post = move |theta: &[f64]| -> f64 {
        let (shape, scale) = (theta[0].exp(), theta[1].exp());
        let mut lp = log_normal_prior(theta[0], priors_c.weibull_shape_prior, priors_c.weibull_shape_prior_sd)
            + log_normal_prior(theta[1], priors_c.weibull_scale_prior_h, priors_c.weibull_scale_prior_sd);
        for &x in &data {
            lp += weibull_log_pdf(x, shape, scale);
        }
        lp
    };
    let init_scale = if durations.is_empty() {
        priors.weibull_scale_prior_h
    } else {
        (durations.iter().sum::<f64>() / durations.len() as f64).max(1e-3)
    };
    let init = vec![priors.weibull_shape_prior.ln(), init_scale.ln()];
    let trace = adaptive_metropolis(log_post, &init, cfg, rng)?;
    Ok(trace.into_iter().map(|t| (t[0].exp(), t[1].exp())).collect())
}

pub fn learn_duration<R: Rng>(
    records: &[BusRecord],
    z_count: u32,
    priors: &Priors,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<DurationPosterior, BayesError> {
    if records.is_empty() {
        return Err(BayesError::EmptyDataset);
    }
    let zones = resolve_zones(
        &records.iter().map(|r| r.hop_zone).collect::<Vec<_>>(),
        &records.iter().map(|r| r.distance_km).collect::<Vec<_>>(),
        z_count,
    )?;

    // Beta(1,1)-Bernoulli conjugate update on "has any duration observation"
    let mut beta_params = vec![(1.0, 1.0); z_count as usize];
    let mut zone_durations: Vec<Vec<f64>> = vec![Vec::new(); z_count as usize];
    let mut all_durations: Vec<f64> = Vec::new();
    for (rec, z) in records.iter().zip(&zones) {
        let zi = *z as usize - 1;
        if rec.interruption_durations_h.is_empty() {
            beta_params[zi].1 += 1.0;
        } else {
            beta_params[zi].0 += 1.0;
            zone_durations[zi].extend(&rec.interruption_durations_h);
            all_durations.extend(&rec.interruption_durations_h);
        }
    }

    // zones without observations inherit the global pooled fit; with no
    // durations anywhere the pooled fit reduces to the prior
    let pooled = fit_weibull(&all_durations, priors, cfg, rng)?;
    let mut per_zone: Vec<Vec<(f64, f64)>> = Vec::with_capacity(z_count as usize);
    for zd in &zone_durations {
        if zd.is_empty() {
            per_zone.push(pooled.clone());
        } else {
            per_zone.push(fit_weibull(zd, priors, cfg, rng)?);
        }
    }

    let n_draws = pooled.len();
    let draws = (0..n_draws)
        .map(|i| DurationDraw {
            p: beta_params
                .iter()
                .map(|(a, b)| Beta::new(*a, *b).unwrap().sample(rng))
                .collect(),
            weib: per_zone.iter().map(|t| t[i % t.len()]).collect(),
        })
        .collect();

    Ok(DurationPosterior { z_count, beta_params, draws })
}

/// Hurdle sample: Bernoulli(p_z) gate, Weibull severity when open, 0 when
/// closed.
pub fn sample_duration<R: Rng>(draw: &DurationDraw, zone: u32, rng: &mut R) -> f64 {
    let zi = (zone.max(1) as usize - 1).min(draw.p.len() - 1);
    if rng.gen::<f64>() >= draw.p[zi] {
        return 0.0;
    }
    let (shape, scale) = draw.weib[zi];
    Weibull::new(scale, shape).unwrap().sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::Phase;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bus(zone: u32, durations: Vec<f64>) -> BusRecord {
        BusRecord {
            bus_id: "b".into(),
            distance_km: None,
            hop_zone: Some(zone),
            phase: Phase::A,
            p_kw: [1.0, 0.0, 0.0],
            interruptions_per_year: 0,
            interruption_durations_h: durations,
            building_scale: 1.0,
        }
    }

    #[test]
    fn beta_conjugate_exact() {
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(bus(1, if i < 3 { vec![2.0] } else { vec![] }));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let post =
            learn_duration(&records, 1, &Priors::default(), &McmcConfig::fast(1), &mut rng)
                .unwrap();
        assert_eq!(post.beta_params[0], (4.0, 8.0));
        assert!((post.mean_p(1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_special_case() {
        // Weibull(shape=1, scale=4) is exponential with mean 4
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gen = Weibull::new(4.0, 1.0).unwrap();
        let records: Vec<BusRecord> =
            (0..2000).map(|_| bus(1, vec![gen.sample(&mut rng)])).collect();
        let cfg = McmcConfig { steps: 6000, burn_in: 3000, thin: 6, ..Default::default() };
        let post = learn_duration(&records, 1, &Priors::default(), &cfg, &mut rng).unwrap();
        let mean_scale: f64 =
            post.draws.iter().map(|d| d.weib[0].1).sum::<f64>() / post.draws.len() as f64;
        let mean_shape: f64 =
            post.draws.iter().map(|d| d.weib[0].0).sum::<f64>() / post.draws.len() as f64;
        assert!((mean_shape - 1.0).abs() < 0.1, "shape {mean_shape}");
        assert!((mean_scale - 4.0).abs() / 4.0 < 0.1, "scale {mean_scale}");
    }

    #[test]
    fn no_durations_inherit_prior_fit() {
        let records: Vec<BusRecord> = (0..20).map(|_| bus(1, vec![])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let post =
            learn_duration(&records, 2, &Priors::default(), &McmcConfig::fast(3), &mut rng)
                .unwrap();
        // both zones carry identical (pooled prior) Weibull draws
        for d in &post.draws {
            assert_eq!(d.weib[0], d.weib[1]);
        }
    }

    #[test]
    fn hurdle_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let closed = DurationDraw { p: vec![0.0], weib: vec![(1.0, 4.0)] };
        for _ in 0..100 {
            assert_eq!(sample_duration(&closed, 1, &mut rng), 0.0);
        }
        let open = DurationDraw { p: vec![1.0], weib: vec![(1.0, 4.0)] };
        let n = 200_000;
        let mean: f64 =
            (0..n).map(|_| sample_duration(&open, 1, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 4.0).abs() / 4.0 < 0.02, "mean {mean}");
    }
}
