//! Probabilistic PV hosting capacity over ensembles: bisection on injected
//! power at a worst-case snapshot, per bus, per transformer and system-wide.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::hdi::compute_hdi;
use crate::bayes::BayesError;
use crate::powerflow::{build_pf_network, solve_fbs, PowerFlowError, ThreePhaseNetwork};
use crate::synthesis::Ensemble;
use crate::topology::{BusId, BusKind, GridTopology, TrafoId};

#[derive(Debug, Error)]
pub enum HcError {
    #[error("base case violates voltage limits with zero PV")]
    BaseCaseViolation,
    #[error("ensemble holds no samples")]
    EmptyEnsemble,
    #[error("bad profile: {0}")]
    BadProfile(String),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
}

/// Hourly load multipliers and normalized PV output, both length 24 or 8760.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotInputs {
    pub load_profile: Vec<f64>,
    pub irradiance: Vec<f64>,
}

impl SnapshotInputs {
    pub fn validate(&self) -> Result<(), HcError> {
        for (name, v) in [("load", &self.load_profile), ("irradiance", &self.irradiance)] {
            if v.len() != 24 && v.len() != 8760 {
                return Err(HcError::BadProfile(format!(
                    "{name} profile has {} entries (need 24 or 8760)",
                    v.len()
                )));
            }
        }
        if self.load_profile.len() != self.irradiance.len() {
            return Err(HcError::BadProfile("profile lengths differ".into()));
        }
        if self.load_profile.iter().any(|m| !(*m >= 0.0)) {
            return Err(HcError::BadProfile("load multipliers must be >= 0".into()));
        }
        if self.irradiance.iter().any(|i| !(0.0..=1.0).contains(i)) {
            return Err(HcError::BadProfile("irradiance must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Hour maximizing PV output minus load: the screening snapshot.
    pub fn worst_case_hour(&self) -> usize {
        (0..self.irradiance.len())
            .max_by(|&a, &b| {
                (self.irradiance[a] - self.load_profile[a])
                    .total_cmp(&(self.irradiance[b] - self.load_profile[b]))
            })
            .unwrap_or(0)
    }
}

/// Synthetic residential stand-in: evening-peaked daily load multipliers.
pub fn default_load_profile() -> Vec<f64> {
    vec![
        0.45, 0.40, 0.38, 0.36, 0.36, 0.40, 0.50, 0.60, 0.62, 0.60, 0.58, 0.58, 0.60, 0.58, 0.56,
        0.58, 0.65, 0.78, 0.95, 1.00, 0.98, 0.90, 0.72, 0.55,
    ]
}

/// Synthetic clear-sky stand-in: zero overnight, noon peak at 1.0.
pub fn default_irradiance() -> Vec<f64> {
    vec![
        0.0, 0.0, 0.0, 0.0, 0.0, 0.02, 0.12, 0.30, 0.52, 0.72, 0.88, 0.97, 1.00, 0.97, 0.88, 0.70,
        0.50, 0.28, 0.10, 0.02, 0.0, 0.0, 0.0, 0.0,
    ]
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchConfig {
    pub lo_kw: f64,
    pub hi_kw: f64,
    pub tol_kw: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { lo_kw: 0.0, hi_kw: 10_000.0, tol_kw: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HcLevel {
    PerBus,
    PerTransformer,
    System,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HcSummaryRow {
    pub label: String,
    pub mean_kw: f64,
    pub hdi_lo_kw: f64,
    pub hdi_hi_kw: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HcDistributions {
    pub per_bus: BTreeMap<BusId, Vec<f64>>,
    pub per_transformer: BTreeMap<TrafoId, Vec<f64>>,
    pub system: Vec<f64>,
    pub summary: Vec<HcSummaryRow>,
}

const PF_TOL: f64 = 1e-6;
const PF_MAX_ITER: u32 = 100;

/// Loads scaled to the snapshot hour; returns the scaled network and the
/// irradiance factor applied to any PV injection.
fn snapshot_network(
    net: &ThreePhaseNetwork,
    snapshot: &SnapshotInputs,
    hour: usize,
) -> (ThreePhaseNetwork, f64) {
    let mut scaled = net.clone();
    let mult = snapshot.load_profile[hour];
    for bus in scaled.s_load_pu.iter_mut() {
        for slot in bus.iter_mut() {
            *slot *= mult;
        }
    }
    (scaled, snapshot.irradiance[hour])
}

/// All active-phase voltage magnitudes stay at or below the upper band edge
/// (overvoltage-only criterion) and the solve converges.
pub fn injection_feasible(
    net: &ThreePhaseNetwork,
    injections_kw: &[(usize, f64)],
    irr: f64,
    band_hi: f64,
) -> bool {
    let mut test = net.clone();
    for &(bus, kw) in injections_kw {
        let mask = test.phase_mask[bus];
        let n_active = mask.count_ones() as f64;
        if n_active == 0.0 {
            continue;
        }
        let p_pu = kw * irr / 1000.0 / test.s_base_mva / n_active;
        for slot in 0..3 {
            if mask & (1 << slot) != 0 {
                test.s_load_pu[bus][slot] -= Complex64::new(p_pu, 0.0);
            }
        }
    }
    let res = solve_fbs(&test, PF_TOL, PF_MAX_ITER);
    if !res.converged {
        return false;
    }
    for (i, bus) in res.v.iter().enumerate() {
        let mask = net.phase_mask[i];
        for slot in 0..3 {
            if mask & (1 << slot) != 0 {
                let (re, im) = bus[slot];
                if Complex64::new(re, im).norm() > band_hi {
                    return false;
                }
            }
        }
    }
    true
}

/// Bisection on a common multiplier over a fixed injection pattern
/// (bus index, weight); weights sum to 1 so the result is total kW.
fn bisect_hc(
    net: &ThreePhaseNetwork,
    pattern: &[(usize, f64)],
    irr: f64,
    band_hi: f64,
    search: &SearchConfig,
) -> Result<f64, HcError> {
    let inject =
        |total: f64| -> Vec<(usize, f64)> { pattern.iter().map(|&(b, w)| (b, total * w)).collect() };
    if !injection_feasible(net, &inject(search.lo_kw), irr, band_hi) {
        return Err(HcError::BaseCaseViolation);
    }
    if injection_feasible(net, &inject(search.hi_kw), irr, band_hi) {
        return Ok(search.hi_kw);
    }
    let (mut lo, mut hi) = (search.lo_kw, search.hi_kw);
    while hi - lo > search.tol_kw {
        let mid = 0.5 * (lo + hi);
        if injection_feasible(net, &inject(mid), irr, band_hi) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Largest PV injection (kW) at one bus keeping the snapshot solve inside
/// the voltage band.
pub fn bus_hosting_capacity(
    net: &ThreePhaseNetwork,
    bus: usize,
    snapshot: &SnapshotInputs,
    band: (f64, f64),
    search: &SearchConfig,
) -> Result<f64, HcError> {
    snapshot.validate()?;
    let hour = snapshot.worst_case_hour();
    let (scaled, irr) = snapshot_network(net, snapshot, hour);
    bisect_hc(&scaled, &[(bus, 1.0)], irr, band.1, search)
}

fn uniform_pattern(buses: &[usize]) -> Vec<(usize, f64)> {
    let w = 1.0 / buses.len() as f64;
    buses.iter().map(|&b| (b, w)).collect()
}

/// LV buses downstream of each transformer, as network indices.
fn transformer_members(
    topology: &GridTopology,
    index_of: &BTreeMap<BusId, usize>,
) -> BTreeMap<TrafoId, Vec<usize>> {
    let mut children: BTreeMap<BusId, Vec<BusId>> = BTreeMap::new();
    for b in &topology.branches {
        children.entry(b.from_bus).or_default().push(b.to_bus);
    }
    let mut members = BTreeMap::new();
    for t in &topology.transformers {
        let mut list = Vec::new();
        let mut stack = vec![t.lv_bus];
        while let Some(b) = stack.pop() {
            list.push(index_of[&b]);
            if let Some(kids) = children.get(&b) {
                stack.extend(kids);
            }
        }
        list.sort_unstable();
        members.insert(t.id, list);
    }
    members
}

pub fn ensemble_hosting_capacity(
    ensemble: &Ensemble,
    topology: &GridTopology,
    snapshot: &SnapshotInputs,
    band: (f64, f64),
    search: &SearchConfig,
    level: HcLevel,
    hdi_mass: f64,
    full_horizon: bool,
) -> Result<HcDistributions, HcError> {
    if ensemble.samples.is_empty() {
        return Err(HcError::EmptyEnsemble);
    }
    snapshot.validate()?;
    let hours: Vec<usize> = if full_horizon {
        (0..snapshot.irradiance.len()).filter(|&h| snapshot.irradiance[h] > 0.0).collect()
    } else {
        vec![snapshot.worst_case_hour()]
    };

    // shared geometry: network index per bus id and LV membership
    let probe = build_pf_network(&ensemble.samples[0], topology, 1.0)?;
    let index_of: BTreeMap<BusId, usize> =
        probe.bus_ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let lv_buses: Vec<usize> = topology
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Lv)
        .map(|b| index_of[&b.id])
        .collect();
    let members = transformer_members(topology, &index_of);

    // over all selected hours the HC is the tightest (minimum) value
    let hc_over_hours = |net: &ThreePhaseNetwork, pattern: &[(usize, f64)]| -> Result<f64, HcError> {
        let mut best = f64::INFINITY;
        for &h in &hours {
            let (scaled, irr) = snapshot_network(net, snapshot, h);
            best = best.min(bisect_hc(&scaled, pattern, irr, band.1, search)?);
        }
        Ok(best)
    };

    type SampleHc = (Vec<(BusId, f64)>, Vec<(TrafoId, f64)>, Option<f64>);
    let per_sample: Result<Vec<SampleHc>, HcError> = ensemble
        .samples
        .par_iter()
        .map(|sample| {
            let net = build_pf_network(sample, topology, 1.0)?;
            let mut bus_rows = Vec::new();
            let mut trafo_rows = Vec::new();
            let mut system = None;
            match level {
                HcLevel::PerBus => {
                    for &b in &lv_buses {
                        bus_rows.push((net.bus_ids[b], hc_over_hours(&net, &[(b, 1.0)])?));
                    }
                }
                HcLevel::PerTransformer => {
                    for (&t, list) in &members {
                        trafo_rows.push((t, hc_over_hours(&net, &uniform_pattern(list))?));
                    }
                }
                HcLevel::System => {
                    system = Some(hc_over_hours(&net, &uniform_pattern(&lv_buses))?);
                }
            }
            Ok((bus_rows, trafo_rows, system))
        })
        .collect();

    let mut out = HcDistributions::default();
    for (bus_rows, trafo_rows, system) in per_sample? {
        for (b, hc) in bus_rows {
            out.per_bus.entry(b).or_default().push(hc);
        }
        for (t, hc) in trafo_rows {
            out.per_transformer.entry(t).or_default().push(hc);
        }
        if let Some(hc) = system {
            out.system.push(hc);
        }
    }

    let mut summary = Vec::new();
    let mut push_row = |label: String, values: &[f64]| -> Result<(), HcError> {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (lo, hi) = compute_hdi(values, hdi_mass)?;
        summary.push(HcSummaryRow { label, mean_kw: mean, hdi_lo_kw: lo, hdi_hi_kw: hi });
        Ok(())
    };
    for (b, values) in &out.per_bus {
        push_row(format!("bus_{b}"), values)?;
    }
    for (t, values) in &out.per_transformer {
        push_row(format!("trafo_{t}"), values)?;
    }
    if !out.system.is_empty() {
        push_row("system".into(), &out.system)?;
    }
    out.summary = summary;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_snapshot() -> SnapshotInputs {
        SnapshotInputs { load_profile: vec![0.0; 24], irradiance: vec![1.0; 24] }
    }

    fn two_bus(r_pu: f64) -> ThreePhaseNetwork {
        ThreePhaseNetwork {
            bus_ids: vec![0, 1],
            parent: vec![None, Some(0)],
            z_pu: vec![
                [Complex64::new(0.0, 0.0); 3],
                [Complex64::new(r_pu, 0.0); 3],
            ],
            s_load_pu: vec![[Complex64::new(0.0, 0.0); 3]; 2],
            phase_mask: vec![0b111, 0b001],
            s_base_mva: 1.0,
        }
    }

    #[test]
    fn zero_impedance_bus_hits_ceiling() {
        let net = two_bus(0.0);
        let hc = bus_hosting_capacity(&net, 1, &flat_snapshot(), (0.9, 1.1), &SearchConfig::default())
            .unwrap();
        assert_eq!(hc, 10_000.0);
    }

    #[test]
    fn analytic_two_bus_limit() {
        // one phase, pure resistance r: at the limit V = 1 + r P / V with
        // V = 1.1, so P = 1.1 * 0.1 / r
        let r = 0.02;
        let net = two_bus(r);
        let search = SearchConfig::default();
        let hc = bus_hosting_capacity(&net, 1, &flat_snapshot(), (0.9, 1.1), &search).unwrap();
        let analytic_kw = 1.1 * 0.1 / r * 1000.0;
        assert!((hc - analytic_kw).abs() < 3.0 * search.tol_kw, "hc {hc} vs {analytic_kw}");
        // bisection endpoint contract
        let (scaled, irr) = snapshot_network(&net, &flat_snapshot(), 12);
        assert!(injection_feasible(&scaled, &[(1, hc)], irr, 1.1));
        assert!(!injection_feasible(&scaled, &[(1, hc + 2.0 * search.tol_kw)], irr, 1.1));
    }

    #[test]
    fn monotone_in_resistance() {
        let snap = flat_snapshot();
        let cfg = SearchConfig::default();
        let a = bus_hosting_capacity(&two_bus(0.02), 1, &snap, (0.9, 1.1), &cfg).unwrap();
        let b = bus_hosting_capacity(&two_bus(0.04), 1, &snap, (0.9, 1.1), &cfg).unwrap();
        assert!(b < a, "{b} !< {a}");
        assert!((a / b - 2.0).abs() < 0.01);
    }

    #[test]
    fn zero_irradiance_never_binds() {
        let snap = SnapshotInputs { load_profile: vec![0.5; 24], irradiance: vec![0.0; 24] };
        let hc =
            bus_hosting_capacity(&two_bus(0.5), 1, &snap, (0.9, 1.1), &SearchConfig::default())
                .unwrap();
        assert_eq!(hc, 10_000.0);
    }

    #[test]
    fn base_case_violation_detected() {
        // heavy load far beyond the band with zero PV
        let mut net = two_bus(0.5);
        net.s_load_pu[1][0] = Complex64::new(0.5, 0.0);
        let snap = SnapshotInputs { load_profile: vec![1.0; 24], irradiance: vec![1.0; 24] };
        assert!(matches!(
            bus_hosting_capacity(&net, 1, &snap, (0.9, 1.1), &SearchConfig::default()),
            Err(HcError::BaseCaseViolation)
        ));
    }

    #[test]
    fn profile_validation() {
        let bad = SnapshotInputs { load_profile: vec![1.0; 23], irradiance: vec![1.0; 23] };
        assert!(matches!(bad.validate(), Err(HcError::BadProfile(_))));
        let bad = SnapshotInputs { load_profile: vec![1.0; 24], irradiance: vec![1.5; 24] };
        assert!(matches!(bad.validate(), Err(HcError::BadProfile(_))));
        assert!(flat_snapshot().validate().is_ok());
        let defaults =
            SnapshotInputs { load_profile: default_load_profile(), irradiance: default_irradiance() };
        defaults.validate().unwrap();
        assert_eq!(defaults.worst_case_hour(), 12);
    }
}
