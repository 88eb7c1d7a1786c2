//! Shipped default posteriors, generated deterministically in code so a
//! user can synthesize grids without any survey data. The phase mixture
//! follows published LV feeder phase-connection shares; impedance and
//! reliability settings are representative overhead-distribution values.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use super::duration::{DurationDraw, DurationPosterior};
use super::frequency::{FrequencyDraw, FrequencyPosterior};
use super::gamma_mix::GammaComponent;
use super::impedance::{ImpedanceDraw, ImpedancePosterior, MIXTURE_K};
use super::posterior::{ModelKind, Posterior};
use super::power::{sample_dirichlet, PowerDraw, PowerPosterior};

pub const DEFAULT_Z_COUNT: u32 = 5;
pub const DEFAULT_DRAWS: usize = 500;

/// Observed phase-connection shares (%) in category order
/// [A, B, C, AB, BC, AC, ABC].
pub const PHASE_SHARES_PCT: [f64; 7] = [39.93, 29.64, 26.46, 0.82, 2.37, 0.65, 0.12];

/// Dirichlet concentration mass of the default phase simplex.
const PHASE_CONCENTRATION_MASS: f64 = 60.0;

/// Mean potential power (kW) per connected phase count k = 1, 2, 3.
const P_POT_KW: [f64; 3] = [6.0, 8.0, 12.0];
const SIGMA_P_KW: f64 = 1.5;

fn phase_concentration() -> [f64; 7] {
    let total: f64 = PHASE_SHARES_PCT.iter().sum();
    let mut c = [0.0; 7];
    for (ci, s) in c.iter_mut().zip(&PHASE_SHARES_PCT) {
        *ci = s / total * PHASE_CONCENTRATION_MASS;
    }
    c
}

fn default_power() -> PowerPosterior {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_0001);
    let conc = phase_concentration();
    let z = DEFAULT_Z_COUNT as usize;
    let jitter = Normal::<f64>::new(0.0, 0.05).unwrap();
    let draws = (0..DEFAULT_DRAWS)
        .map(|_| {
            let c: Vec<[f64; 7]> = (0..z)
                .map(|_| {
                    let v = sample_dirichlet(&conc, &mut rng);
                    let mut a = [0.0; 7];
                    a.copy_from_slice(&v);
                    a
                })
                .collect();
            let p_pot: Vec<[f64; 3]> = (0..z)
                .map(|_| {
                    let mut p = P_POT_KW;
                    for v in &mut p {
                        *v *= (jitter.sample(&mut rng) as f64).exp();
                    }
                    p
                })
                .collect();
            let sigma_p = SIGMA_P_KW * jitter.sample(&mut rng).exp();
            PowerDraw { c, p_pot, sigma_p }
        })
        .collect();
    PowerPosterior { z_count: DEFAULT_Z_COUNT, concentration: vec![conc; z], draws }
}

fn default_impedance() -> ImpedancePosterior {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_0002);
    let z = DEFAULT_Z_COUNT as usize;
    // per-km resistance around 0.25 / 0.40 / 0.60 ohm/km
    let r_components = vec![
        GammaComponent { shape: 40.0, rate: 160.0 },
        GammaComponent { shape: 40.0, rate: 100.0 },
        GammaComponent { shape: 40.0, rate: 200.0 / 3.0 },
    ];
    // X/R ratio rho: E[1/rho] = rate / (shape - 1), centered at 1.5
    let rho_components = vec![
        GammaComponent { shape: 100.0, rate: 140.0 },
        GammaComponent { shape: 100.0, rate: 150.0 },
        GammaComponent { shape: 100.0, rate: 160.0 },
    ];
    // outer zones lean toward thinner, higher-resistance conductors
    let r_concentration: Vec<Vec<f64>> = (0..z)
        .map(|zi| vec![4.0 + (z - 1 - zi) as f64, 4.0, 4.0 + zi as f64])
        .collect();
    let rho_concentration: Vec<Vec<f64>> = (0..z).map(|_| vec![5.0; MIXTURE_K]).collect();
    let draws = (0..DEFAULT_DRAWS)
        .map(|_| ImpedanceDraw {
            w_r: r_concentration.iter().map(|c| sample_dirichlet(c, &mut rng)).collect(),
            w_rho: rho_concentration.iter().map(|c| sample_dirichlet(c, &mut rng)).collect(),
        })
        .collect();
    ImpedancePosterior {
        z_count: DEFAULT_Z_COUNT,
        k: MIXTURE_K,
        r_components,
        rho_components,
        r_concentration,
        rho_concentration,
        draws,
        skipped_zero_resistance: 0,
    }
}

fn default_frequency() -> FrequencyPosterior {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_0003);
    let jitter = Normal::<f64>::new(0.0, 0.05).unwrap();
    let draws = (0..DEFAULT_DRAWS)
        .map(|_| FrequencyDraw {
            mu: (0..DEFAULT_Z_COUNT)
                .map(|zi| (1.0 + 0.5 * zi as f64) * jitter.sample(&mut rng).exp())
                .collect(),
            alpha_disp: 1.5 * jitter.sample(&mut rng).exp(),
        })
        .collect();
    FrequencyPosterior { z_count: DEFAULT_Z_COUNT, draws }
}

fn default_duration() -> DurationPosterior {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_0004);
    let z = DEFAULT_Z_COUNT as usize;
    let beta_params = vec![(3.0, 7.0); z];
    let gate = Beta::new(3.0, 7.0).unwrap();
    let jitter = Normal::<f64>::new(0.0, 0.05).unwrap();
    let draws = (0..DEFAULT_DRAWS)
        .map(|_| DurationDraw {
            p: (0..z).map(|_| gate.sample(&mut rng)).collect(),
            weib: (0..z)
                .map(|_| {
                    (
                        1.2 * jitter.sample(&mut rng).exp(),
                        3.0 * jitter.sample(&mut rng).exp(),
                    )
                })
                .collect(),
        })
        .collect();
    DurationPosterior { z_count: DEFAULT_Z_COUNT, beta_params, draws }
}

pub fn default_posterior(kind: ModelKind) -> Posterior {
    static POWER: OnceLock<PowerPosterior> = OnceLock::new();
    static IMPEDANCE: OnceLock<ImpedancePosterior> = OnceLock::new();
    static FREQUENCY: OnceLock<FrequencyPosterior> = OnceLock::new();
    static DURATION: OnceLock<DurationPosterior> = OnceLock::new();
    match kind {
        ModelKind::Power => Posterior::Power(POWER.get_or_init(default_power).clone()),
        ModelKind::Impedance => {
            Posterior::Impedance(IMPEDANCE.get_or_init(default_impedance).clone())
        }
        ModelKind::Frequency => {
            Posterior::Frequency(FREQUENCY.get_or_init(default_frequency).clone())
        }
        ModelKind::Duration => Posterior::Duration(DURATION.get_or_init(default_duration).clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(default_power(), default_power());
        assert_eq!(default_impedance(), default_impedance());
    }

    #[test]
    fn phase_means_match_shares() {
        let p = default_power();
        let mean = p.mean_simplex(3);
        let total: f64 = PHASE_SHARES_PCT.iter().sum();
        for (m, s) in mean.iter().zip(&PHASE_SHARES_PCT) {
            assert!((m - s / total).abs() < 0.02, "mean {m} vs share {}", s / total);
        }
        // rare three-phase category must stay rare but present
        assert!((mean[6] - 0.0012).abs() < 0.0005, "abc mean {}", mean[6]);
    }

    #[test]
    fn rx_ratio_centered() {
        // mean r1/x1 = E[1/rho] = sum_j w_j rate_j / (shape_j - 1)
        let p = default_impedance();
        for zi in 0..DEFAULT_Z_COUNT as usize {
            let mut acc = 0.0;
            for d in &p.draws {
                for (w, c) in d.w_rho[zi].iter().zip(&p.rho_components) {
                    acc += w * c.rate / (c.shape - 1.0);
                }
            }
            let mean = acc / p.draws.len() as f64;
            assert!((mean - 1.5).abs() < 0.2, "zone {zi} ratio {mean}");
        }
    }

    #[test]
    fn frequency_zone_monotone() {
        let p = default_frequency();
        for zi in 1..DEFAULT_Z_COUNT {
            assert!(p.mean_mu(zi + 1) > p.mean_mu(zi));
        }
    }
}
