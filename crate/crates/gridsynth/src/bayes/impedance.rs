//! Line impedance model: a 3-component Gamma mixture over per-km resistance
//! and over the X/R ratio, with zone-conditioned mixture weights learned as
//! Dirichlet posteriors over soft-assignment counts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gamma_mix::{fit_gamma_mixture, GammaComponent, GammaMixture};
use super::mcmc::McmcConfig;
use super::power::{sample_categorical, sample_dirichlet};
use super::records::{resolve_zones, LineRecord};
use super::{BayesError, Priors};

pub const MIXTURE_K: usize = 3;
const EM_RESTARTS: usize = 10;
const EM_MAX_ITER: usize = 500;
const EM_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceDraw {
    /// Per-zone mixture weights for the per-km resistance, K-simplex each.
    pub w_r: Vec<Vec<f64>>,
    /// Per-zone mixture weights for the X/R ratio.
    pub w_rho: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedancePosterior {
    pub z_count: u32,
    pub k: usize,
    /// Gamma components of resistance per km, shared by all draws.
    pub r_components: Vec<GammaComponent>,
    /// Gamma components of the X/R ratio, shared by all draws.
    pub rho_components: Vec<GammaComponent>,
    /// Dirichlet concentrations behind the per-zone weight draws.
    pub r_concentration: Vec<Vec<f64>>,
    pub rho_concentration: Vec<Vec<f64>>,
    pub draws: Vec<ImpedanceDraw>,
    /// Records skipped because r1 was zero (ratio undefined).
    pub skipped_zero_resistance: u32,
}

pub fn learn_impedance<R: Rng>(
    records: &[LineRecord],
    z_count: u32,
    _priors: &Priors,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<ImpedancePosterior, BayesError> {
    if records.is_empty() {
        return Err(BayesError::EmptyDataset);
    }
    let mut skipped = 0u32;
    let mut usable: Vec<&LineRecord> = Vec::new();
    for r in records {
        if r.r1_ohm <= 0.0 {
            skipped += 1; // X/R undefined for zero-resistance lines
        } else {
            usable.push(r);
        }
    }
    if usable.len() < MIXTURE_K {
        return Err(BayesError::TooFewSamples(MIXTURE_K));
    }
    let zones = resolve_zones(
        &usable.iter().map(|r| r.hop_zone).collect::<Vec<_>>(),
        &usable.iter().map(|r| r.distance_km).collect::<Vec<_>>(),
        z_count,
    )?;

    let r_per_km: Vec<f64> = usable.iter().map(|r| r.r1_ohm / r.length_km).collect();
    let rho: Vec<f64> = usable.iter().map(|r| r.x1_ohm / r.r1_ohm).collect();
    // clamp exact zeros so the Gamma support holds
    let rho: Vec<f64> = rho.iter().map(|x| x.max(1e-9)).collect();

    let r_mix = fit_gamma_mixture(&r_per_km, MIXTURE_K, EM_RESTARTS, EM_MAX_ITER, EM_REL_TOL, rng);
    let rho_mix = fit_gamma_mixture(&rho, MIXTURE_K, EM_RESTARTS, EM_MAX_ITER, EM_REL_TOL, rng);

    let soft_counts = |mix: &GammaMixture, values: &[f64]| -> Vec<Vec<f64>> {
        let mut conc = vec![vec![1.0; MIXTURE_K]; z_count as usize];
        for (x, z) in values.iter().zip(&zones) {
            let resp = mix.responsibilities(*x);
            for (c, r) in conc[*z as usize - 1].iter_mut().zip(&resp) {
                *c += r;
            }
        }
        conc
    };
    let r_concentration = soft_counts(&r_mix, &r_per_km);
    let rho_concentration = soft_counts(&rho_mix, &rho);

    let n_draws = cfg.n_draws_kept().max(1);
    let draws = (0..n_draws)
        .map(|_| ImpedanceDraw {
            w_r: r_concentration.iter().map(|c| sample_dirichlet(c, rng)).collect(),
            w_rho: rho_concentration.iter().map(|c| sample_dirichlet(c, rng)).collect(),
        })
        .collect();

    Ok(ImpedancePosterior {
        z_count,
        k: MIXTURE_K,
        r_components: r_mix.components,
        rho_components: rho_mix.components,
        r_concentration,
        rho_concentration,
        draws,
        skipped_zero_resistance: skipped,
    })
}

/// Sample total (r1, x1) in ohms for a line of the given length:
/// component ~ Categorical(w_z), r/km ~ Gamma, rho ~ Gamma, x1 = r1 * rho.
pub fn sample_line_attributes<R: Rng>(
    posterior: &ImpedancePosterior,
    zone: u32,
    length_km: f64,
    draw_idx: usize,
    rng: &mut R,
) -> Result<(f64, f64), BayesError> {
    if length_km <= 0.0 {
        return Err(BayesError::BadLineLength);
    }
    let draw = posterior
        .draws
        .get(draw_idx)
        .ok_or(BayesError::BadDrawIndex(draw_idx, posterior.draws.len()))?;
    let zi = zone.clamp(1, posterior.z_count) as usize - 1;
    use rand_distr::Distribution;
    let kr = sample_categorical(&draw.w_r[zi], rng);
    let comp = &posterior.r_components[kr];
    let r_per_km = rand_distr::Gamma::new(comp.shape, 1.0 / comp.rate)
        .unwrap()
        .sample(rng);
    let krho = sample_categorical(&draw.w_rho[zi], rng);
    let comp = &posterior.rho_components[krho];
    let ratio = rand_distr::Gamma::new(comp.shape, 1.0 / comp.rate)
        .unwrap()
        .sample(rng);
    let r1 = r_per_km * length_km;
    Ok((r1, r1 * ratio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;

    fn line(zone: u32, length_km: f64, r1: f64, x1: f64) -> LineRecord {
        LineRecord {
            line_id: "l".into(),
            from_bus: "a".into(),
            to_bus: "b".into(),
            length_km,
            r1_ohm: r1,
            x1_ohm: x1,
            distance_km: None,
            hop_zone: Some(zone),
        }
    }

    #[test]
    fn identical_lines_degenerate() {
        let records: Vec<LineRecord> =
            (0..50).map(|_| line(1, 2.0, 0.8, 0.5)).collect(); // 0.4 ohm/km
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let post =
            learn_impedance(&records, 1, &Priors::default(), &McmcConfig::fast(1), &mut rng)
                .unwrap();
        for c in &post.r_components {
            assert!((c.mean() - 0.4).abs() < 0.05, "mean {}", c.mean());
        }
    }

    #[test]
    fn two_component_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g1 = rand_distr::Gamma::new(60.0, 0.2 / 60.0).unwrap();
        let g2 = rand_distr::Gamma::new(60.0, 0.8 / 60.0).unwrap();
        let mut records = Vec::new();
        for i in 0..600 {
            let r = if i % 2 == 0 { g1.sample(&mut rng) } else { g2.sample(&mut rng) };
            records.push(line(1 + (i % 3) as u32, 1.0, r, r * 0.7));
        }
        let post =
            learn_impedance(&records, 3, &Priors::default(), &McmcConfig::fast(2), &mut rng)
                .unwrap();
        let means: Vec<f64> = post.r_components.iter().map(|c| c.mean()).collect();
        assert!(means.iter().any(|m| (m - 0.2).abs() / 0.2 < 0.1), "{means:?}");
        assert!(means.iter().any(|m| (m - 0.8).abs() / 0.8 < 0.1), "{means:?}");
    }

    #[test]
    fn zone_weights_follow_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g1 = rand_distr::Gamma::new(80.0, 0.2 / 80.0).unwrap();
        let g2 = rand_distr::Gamma::new(80.0, 0.8 / 80.0).unwrap();
        let mut records = Vec::new();
        // zone 1 only low-resistance lines, zone 2 only high
        for _ in 0..200 {
            records.push(line(1, 1.0, g1.sample(&mut rng), 0.1));
            records.push(line(2, 1.0, g2.sample(&mut rng), 0.1));
        }
        let post =
            learn_impedance(&records, 2, &Priors::default(), &McmcConfig::fast(3), &mut rng)
                .unwrap();
        // component index of the 0.2-mean component after ascending sort
        let low_idx = post
            .r_components
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.mean().partial_cmp(&b.1.mean()).unwrap())
            .unwrap()
            .0;
        let mean_w: f64 = post.draws.iter().map(|d| d.w_r[0][low_idx]).sum::<f64>()
            / post.draws.len() as f64;
        assert!(mean_w >= 0.8, "zone-1 weight for low component {mean_w}");
    }

    #[test]
    fn zero_resistance_skipped() {
        let mut records: Vec<LineRecord> = (0..10).map(|_| line(1, 1.0, 0.4, 0.2)).collect();
        records.push(line(1, 1.0, 0.0, 0.2));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let post =
            learn_impedance(&records, 1, &Priors::default(), &McmcConfig::fast(4), &mut rng)
                .unwrap();
        assert_eq!(post.skipped_zero_resistance, 1);
    }

    #[test]
    fn bad_length_rejected() {
        let records: Vec<LineRecord> = (0..10).map(|_| line(1, 1.0, 0.4, 0.2)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let post =
            learn_impedance(&records, 1, &Priors::default(), &McmcConfig::fast(5), &mut rng)
                .unwrap();
        assert!(matches!(
            sample_line_attributes(&post, 1, 0.0, 0, &mut rng),
            Err(BayesError::BadLineLength)
        ));
        let (r1, x1) = sample_line_attributes(&post, 1, 2.0, 0, &mut rng).unwrap();
        assert!(r1 > 0.0 && x1 > 0.0);
    }
}
