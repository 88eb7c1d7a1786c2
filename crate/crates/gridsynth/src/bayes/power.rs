//! Joint phase-allocation and active-power demand model.
//!
//! Phase probabilities are a zone-conditioned Dirichlet-Categorical
//! (conjugate, exact counts); latent potential power per phase count and
//! the global sd are inferred by adaptive Metropolis on log parameters
//! against a truncated-normal likelihood.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::phase::Phase;

use super::mcmc::{adaptive_metropolis, McmcConfig};
use super::records::{resolve_zones, BusRecord};
use super::{log_normal_prior, BayesError, Priors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDraw {
    /// Per-zone categorical simplex over the 7 phase categories.
    pub c: Vec<[f64; 7]>,
    /// Mean potential power (kW) per zone and phase count k in {1,2,3}.
    pub p_pot: Vec<[f64; 3]>,
    pub sigma_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPosterior {
    pub z_count: u32,
    /// Dirichlet posterior concentration per zone (prior + exact counts).
    pub concentration: Vec<[f64; 7]>,
    pub draws: Vec<PowerDraw>,
}

impl PowerPosterior {
    /// Mean simplex over stored draws for one zone (1-based).
    pub fn mean_simplex(&self, zone: u32) -> [f64; 7] {
        let mut acc = [0.0; 7];
        for d in &self.draws {
            for (a, c) in acc.iter_mut().zip(&d.c[zone as usize - 1]) {
                *a += c;
            }
        }
        for a in &mut acc {
            *a /= self.draws.len() as f64;
        }
        acc
    }
}

/// Standard normal CDF.
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Log-density of Normal(mu, sd) truncated to [0, inf).
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn trunc_normal_log_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    if x < 0.0 || sd <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = (x - mu) / sd;
    -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - phi(mu / sd).max(1e-300).ln()
}

/// Rejection sampler for Normal(mu, sd) truncated to [0, inf).
pub(crate) fn sample_trunc_normal<R: Rng>(mu: f64, sd: f64, rng: &mut R) -> f64 {
    for _ in 0..10_000 {
        let z: f64 = StandardNormal.sample(rng);
        let x = mu + sd * z;
        if x >= 0.0 {
            return x;
        }
    }
    // mu far below zero: mass piles up at the boundary
    0.0
}

pub(crate) fn sample_dirichlet<R: Rng>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut g: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a.max(1e-6), 1.0).unwrap().sample(rng).max(1e-300))
        .collect();
    let s: f64 = g.iter().sum();
    for v in &mut g {
        *v /= s;
    }
    g
}

pub(crate) fn sample_categorical<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

struct GroupStats {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

pub fn learn_power<R: Rng>(
    records: &[BusRecord],
    z_count: u32,
    priors: &Priors,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<PowerPosterior, BayesError> {
    if records.is_empty() {
        return Err(BayesError::EmptyDataset);
    }
    let zones = resolve_zones(
        &records.iter().map(|r| r.hop_zone).collect::<Vec<_>>(),
        &records.iter().map(|r| r.distance_km).collect::<Vec<_>>(),
        z_count,
    )?;

    // conjugate Dirichlet update: prior + exact category counts
    let mut concentration = vec![[priors.dirichlet_alpha; 7]; z_count as usize];
    for (rec, z) in records.iter().zip(&zones) {
        concentration[*z as usize - 1][rec.phase.index()] += 1.0;
    }

    // sufficient statistics of scaled per-phase powers per (zone, k)
    let mut stats: Vec<[GroupStats; 3]> = (0..z_count)
        .map(|_| std::array::from_fn(|_| GroupStats { n: 0.0, sum: 0.0, sum_sq: 0.0 }))
        .collect();
    let mut any_positive = false;
    for (rec, z) in records.iter().zip(&zones) {
        let k = rec.phase.count();
        let g = &mut stats[*z as usize - 1][k - 1];
        for slot in rec.phase.active_slots() {
            let x = rec.p_kw[slot] / rec.building_scale.max(1e-9);
            if x > 0.0 {
                any_positive = true;
            }
            g.n += 1.0;
            g.sum += x;
            g.sum_sq += x * x;
        }
    }
    if !any_positive {
        return Err(BayesError::AllZeroPower);
    }

    // theta = [log p_pot(z, k) for all zones and k] ++ [log sigma_p]
    let dim = 3 * z_count as usize + 1;
    let prior_p = priors.p_pot_prior_kw;
    let mut init = vec![prior_p.ln(); dim - 1];
    for z in 0..z_count as usize {
        for k in 0..3 {
            let g = &stats[z][k];
            if g.n > 0.0 && g.sum > 0.0 {
                // empirical per-phase mean times k
                init[3 * z + k] = ((g.sum / g.n) * (k as f64 + 1.0)).max(1e-3).ln();
            }
        }
    }
    init.push(priors.sigma_p_prior_kw.ln());

    let priors_c = priors.clone();
    let log_post = move |theta: &[f64]| -> f64 {
        let sigma = theta[dim - 1].exp();
        let mut lp = log_normal_prior(
            theta[dim - 1],
            priors_c.sigma_p_prior_kw,
            priors_c.sigma_p_prior_sd,
        );
        for z in 0..stats.len() {
            for k in 0..3 {
                let log_p_pot = theta[3 * z + k];
                lp += log_normal_prior(log_p_pot, priors_c.p_pot_prior_kw, priors_c.p_pot_prior_sd);
                let g = &stats[z][k];
                if g.n == 0.0 {
                    continue;
                }
                let mu = log_p_pot.exp() / (k as f64 + 1.0);
                // truncated-normal likelihood from sufficient statistics
                lp += -g.n * (sigma.ln() + phi(mu / sigma).max(1e-300).ln())
                    - (g.sum_sq - 2.0 * mu * g.sum + g.n * mu * mu) / (2.0 * sigma * sigma);
            }
        }
        lp
    };

    let trace = adaptive_metropolis(log_post, &init, cfg, rng)?;
    let draws = trace
        .into_iter()
        .map(|theta| {
            let sigma_p = theta[dim - 1].exp();
            let p_pot: Vec<[f64; 3]> = (0..z_count as usize)
                .map(|z| std::array::from_fn(|k| theta[3 * z + k].exp()))
                .collect();
            let c: Vec<[f64; 7]> = concentration
                .iter()
                .map(|alpha| {
                    let v = sample_dirichlet(alpha, rng);
                    std::array::from_fn(|i| v[i])
                })
                .collect();
            PowerDraw { c, p_pot, sigma_p }
        })
        .collect();

    Ok(PowerPosterior { z_count, concentration, draws })
}

/// Draw (phase, per-phase kW) for one bus. The categorical support is
/// restricted to `allowed` and renormalized; per active phase the power is
/// TruncatedNormal(p_pot(zone,k)/k * building_scale, sigma_p) and inactive
/// phases are exactly zero.
pub fn sample_node_attributes<R: Rng>(
    posterior: &PowerPosterior,
    zone: u32,
    allowed: &[Phase],
    draw_idx: usize,
    building_scale: f64,
    rng: &mut R,
) -> Result<(Phase, [f64; 3]), BayesError> {
    if allowed.is_empty() {
        return Err(BayesError::EmptyAllowedSet);
    }
    let draw = posterior
        .draws
        .get(draw_idx)
        .ok_or(BayesError::BadDrawIndex(draw_idx, posterior.draws.len()))?;
    let zi = zone.clamp(1, posterior.z_count) as usize - 1;
    let weights: Vec<f64> = allowed.iter().map(|p| draw.c[zi][p.index()]).collect();
    let phase = if weights.iter().sum::<f64>() <= 0.0 {
        // zero-probability support after restriction: fall back to uniform
        allowed[rng.gen_range(0..allowed.len())]
    } else {
        allowed[sample_categorical(&weights, rng)]
    };
    let k = phase.count();
    let mu = draw.p_pot[zi][k - 1] / k as f64 * building_scale;
    let mut p = [0.0; 3];
    for slot in phase.active_slots() {
        p[slot] = sample_trunc_normal(mu, draw.sigma_p, rng);
    }
    Ok((phase, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bus(zone: u32, phase: Phase, p: [f64; 3]) -> BusRecord {
        BusRecord {
            bus_id: "b".into(),
            distance_km: None,
            hop_zone: Some(zone),
            phase,
            p_kw: p,
            interruptions_per_year: 0,
            interruption_durations_h: Vec::new(),
            building_scale: 1.0,
        }
    }

    #[test]
    fn conjugate_concentration_exact() {
        let records: Vec<BusRecord> =
            (0..10).map(|_| bus(1, Phase::ABC, [4.0, 4.0, 4.0])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let post =
            learn_power(&records, 1, &Priors::default(), &McmcConfig::fast(1), &mut rng).unwrap();
        assert_eq!(post.z_count, 1);
        assert_eq!(post.concentration[0], [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 11.0]);
        // closed-form posterior mean of the ABC probability: 11/17
        let mean = post.mean_simplex(1);
        assert!((mean[Phase::ABC.index()] - 11.0 / 17.0).abs() < 0.05, "{mean:?}");
    }

    #[test]
    fn p_pot_recovery_from_constant_data() {
        let records: Vec<BusRecord> =
            (0..200).map(|_| bus(1, Phase::A, [5.0, 0.0, 0.0])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = McmcConfig { steps: 8000, burn_in: 4000, thin: 8, ..Default::default() };
        let post = learn_power(&records, 1, &Priors::default(), &cfg, &mut rng).unwrap();
        let mean_p: f64 =
            post.draws.iter().map(|d| d.p_pot[0][0]).sum::<f64>() / post.draws.len() as f64;
        assert!((mean_p - 5.0).abs() / 5.0 < 0.05, "p_pot {mean_p}");
    }

    #[test]
    fn distance_binning_equivalent_to_zones() {
        let mut by_zone = Vec::new();
        let mut by_dist = Vec::new();
        for i in 0..60 {
            let d = i as f64 / 59.0 * 10.0;
            let z = crate::topology::zone_of(d, 10.0, 3);
            let mut a = bus(z, Phase::A, [3.0, 0.0, 0.0]);
            a.hop_zone = Some(z.max(3.min(z)));
            by_zone.push(a);
            let mut b = bus(1, Phase::A, [3.0, 0.0, 0.0]);
            b.hop_zone = None;
            b.distance_km = Some(d);
            by_dist.push(b);
        }
        // force both datasets to the same zone universe
        for r in &mut by_dist {
            r.hop_zone = None;
        }
        let zones_a: Vec<u32> = by_zone.iter().map(|r| r.hop_zone.unwrap()).collect();
        let zones_b = resolve_zones(
            &by_dist.iter().map(|r| r.hop_zone).collect::<Vec<_>>(),
            &by_dist.iter().map(|r| r.distance_km).collect::<Vec<_>>(),
            3,
        )
        .unwrap();
        assert_eq!(zones_a, zones_b);
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            learn_power(&[], 1, &Priors::default(), &McmcConfig::fast(0), &mut rng),
            Err(BayesError::EmptyDataset)
        ));
        let records = vec![bus(1, Phase::A, [0.0, 0.0, 0.0])];
        assert!(matches!(
            learn_power(&records, 1, &Priors::default(), &McmcConfig::fast(0), &mut rng),
            Err(BayesError::AllZeroPower)
        ));
    }

    #[test]
    fn single_element_support() {
        let records: Vec<BusRecord> =
            (0..5).map(|_| bus(1, Phase::ABC, [2.0, 2.0, 2.0])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let post =
            learn_power(&records, 1, &Priors::default(), &McmcConfig::fast(4), &mut rng).unwrap();
        let (phase, p) =
            sample_node_attributes(&post, 1, &[Phase::ABC], 0, 1.0, &mut rng).unwrap();
        assert_eq!(phase, Phase::ABC);
        assert!(p.iter().all(|v| *v >= 0.0));
        let (phase, p) = sample_node_attributes(&post, 1, &[Phase::A], 0, 1.0, &mut rng).unwrap();
        assert_eq!(phase, Phase::A);
        assert_eq!(p[1], 0.0);
        assert_eq!(p[2], 0.0);
        assert!(matches!(
            sample_node_attributes(&post, 1, &[], 0, 1.0, &mut rng),
            Err(BayesError::EmptyAllowedSet)
        ));
    }

    #[test]
    fn trunc_normal_density_normalized() {
        // numeric quadrature of the density integrates to one
        let (mu, sd) = (1.0, 0.8);
        let mut integral = 0.0;
        let h = 1e-3;
        let mut x = h / 2.0;
        while x < 12.0 {
            integral += trunc_normal_log_pdf(x, mu, sd).exp() * h;
            x += h;
        }
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }

    #[test]
    fn phase_order_is_fixed() {
        assert_eq!(crate::phase::PHASE_ORDER[6], Phase::ABC);
    }
}
