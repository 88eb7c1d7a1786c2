//! The four Bayesian hierarchical models (power/phase, impedance,
//! interruption frequency, interruption duration), their learning routines,
//! zone-conditioned posterior sampling and persistence.

pub mod defaults;
pub mod duration;
pub mod frequency;
pub mod gamma_mix;
pub mod hdi;
pub mod impedance;
pub mod mcmc;
pub mod posterior;
pub mod power;
pub mod records;

pub use duration::{learn_duration, DurationPosterior};
pub use frequency::{learn_frequency, FrequencyPosterior};
pub use hdi::compute_hdi;
pub use impedance::{learn_impedance, ImpedancePosterior};
pub use mcmc::{adaptive_metropolis, McmcConfig};
pub use posterior::{load_posterior, save_posterior, ModelKind, Posterior};
pub use power::{learn_power, PowerPosterior};
pub use records::{BusRecord, LineRecord};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BayesError {
    #[error("log posterior is not finite at the initial point")]
    NonFiniteInit,
    #[error("degenerate target: acceptance rate {0:.4} after adaptation")]
    DegenerateTarget(f64),
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("all power observations are zero; potential power is unidentifiable")]
    AllZeroPower,
    #[error("need at least {0} samples")]
    TooFewSamples(usize),
    #[error("hdi mass must lie strictly between 0 and 1")]
    BadMass,
    #[error("allowed phase set is empty")]
    EmptyAllowedSet,
    #[error("line length must be > 0")]
    BadLineLength,
    #[error("draw index {0} out of range ({1} draws stored)")]
    BadDrawIndex(usize, usize),
    #[error("posterior file missing: {0}")]
    MissingFile(String),
    #[error("posterior schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("posterior holds a {found} model, expected {expected}")]
    ModelKindMismatch { expected: String, found: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("record error: {0}")]
    Record(String),
}

/// Weakly-informative prior settings shared by the learners.
#[derive(Debug, Clone)]
pub struct Priors {
    /// Dirichlet prior pseudo-count per phase category.
    pub dirichlet_alpha: f64,
    /// Mean of the log-normal prior on potential power (kW).
    pub p_pot_prior_kw: f64,
    pub p_pot_prior_sd: f64,
    pub sigma_p_prior_kw: f64,
    pub sigma_p_prior_sd: f64,
    pub mu_freq_prior: f64,
    pub mu_freq_prior_sd: f64,
    pub alpha_disp_prior: f64,
    pub alpha_disp_prior_sd: f64,
    pub weibull_shape_prior: f64,
    pub weibull_shape_prior_sd: f64,
    pub weibull_scale_prior_h: f64,
    pub weibull_scale_prior_sd: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            dirichlet_alpha: 1.0,
            p_pot_prior_kw: 6.0,
            p_pot_prior_sd: 1.5,
            sigma_p_prior_kw: 1.5,
            sigma_p_prior_sd: 1.0,
            mu_freq_prior: 1.0,
            mu_freq_prior_sd: 2.0,
            alpha_disp_prior: 1.5,
            alpha_disp_prior_sd: 1.0,
            weibull_shape_prior: 1.2,
            weibull_shape_prior_sd: 0.7,
            weibull_scale_prior_h: 3.0,
            weibull_scale_prior_sd: 1.0,
        }
    }
}

/// Log-density of a normal prior on a log-transformed parameter.
pub(crate) fn log_normal_prior(log_x: f64, prior_mean: f64, prior_sd: f64) -> f64 {
    let d = (log_x - prior_mean.ln()) / prior_sd;
    -0.5 * d * d
}
