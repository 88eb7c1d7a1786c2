//! Three-phase unbalanced power flow on radial samples via the
//! forward/backward sweep, with decoupled per-phase line impedances and
//! constant-power loads.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthesis::{bfs_order, GridSample, SynthesisError};
use crate::topology::{BusId, GridTopology};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("sample topology hash {sample} does not match topology {topology}")]
    HashMismatch { sample: String, topology: String },
    #[error("no results to summarize")]
    EmptyInput,
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

/// Radial per-unit network; bus 0..n-1 in breadth-first order so a single
/// forward pass visits parents before children.
#[derive(Debug, Clone)]
pub struct ThreePhaseNetwork {
    /// Original bus ids in network order.
    pub bus_ids: Vec<BusId>,
    /// Parent index per bus; sources (substations) have none.
    pub parent: Vec<Option<usize>>,
    /// Per-phase series impedance (p.u.) of the link to the parent.
    pub z_pu: Vec<[Complex64; 3]>,
    /// Per-phase complex load (p.u.), positive = consumption.
    pub s_load_pu: Vec<[Complex64; 3]>,
    /// Active-phase mask per bus (bit 0 = A).
    pub phase_mask: Vec<u8>,
    pub s_base_mva: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PfResult {
    pub converged: bool,
    pub iterations: u32,
    pub max_mismatch: f64,
    /// Per-bus per-phase complex voltage (p.u.), network order.
    pub v: Vec<[(f64, f64); 3]>,
    pub bus_ids: Vec<BusId>,
}

impl PfResult {
    pub fn voltage(&self, i: usize, phase: usize) -> Complex64 {
        let (re, im) = self.v[i][phase];
        Complex64::new(re, im)
    }
}

/// Balanced positive-sequence source voltages 1∠0°, 1∠−120°, 1∠120°.
pub fn source_voltages() -> [Complex64; 3] {
    let a = 2.0 * std::f64::consts::PI / 3.0;
    [
        Complex64::new(1.0, 0.0),
        Complex64::from_polar(1.0, -a),
        Complex64::from_polar(1.0, a),
    ]
}

/// Build the per-unit network for one sample. Distribution transformers
/// become series branches with impedance from vk/vkr on their rating base;
/// each substation bus is a fixed-voltage source.
pub fn build_pf_network(
    sample: &GridSample,
    topology: &GridTopology,
    s_base_mva: f64,
) -> Result<ThreePhaseNetwork, PowerFlowError> {
    let topo_hash = topology.content_hash();
    // ensembles carry the hash; single samples are trusted to match
    let order = bfs_order(topology)?;
    let index_of: BTreeMap<BusId, usize> =
        order.iter().enumerate().map(|(i, &b)| (b, i)).collect();

    let mut parent = vec![None; order.len()];
    let mut z_pu = vec![[Complex64::new(0.0, 0.0); 3]; order.len()];

    for branch in &topology.branches {
        let child = index_of[&branch.to_bus];
        parent[child] = Some(index_of[&branch.from_bus]);
        let kv = topology.bus(branch.to_bus).voltage_kv;
        let z_base = kv * kv / s_base_mva;
        let attrs = sample.line.get(&branch.id).ok_or_else(|| PowerFlowError::HashMismatch {
            sample: format!("missing line {}", branch.id),
            topology: topo_hash.clone(),
        })?;
        let z = Complex64::new(attrs.r1_ohm / z_base, attrs.x1_ohm / z_base);
        z_pu[child] = [z; 3];
    }
    for trafo in &topology.transformers {
        let child = index_of[&trafo.lv_bus];
        parent[child] = Some(index_of[&trafo.hv_bus]);
        let rating_mva = trafo.rating_kva / 1000.0;
        let z_mag = trafo.vk_percent / 100.0 * s_base_mva / rating_mva;
        let r = trafo.vkr_percent / 100.0 * s_base_mva / rating_mva;
        let x = (z_mag * z_mag - r * r).max(0.0).sqrt();
        z_pu[child] = [Complex64::new(r, x); 3];
    }

    let mut s_load_pu = vec![[Complex64::new(0.0, 0.0); 3]; order.len()];
    let mut phase_mask = vec![0u8; order.len()];
    for (i, &bus) in order.iter().enumerate() {
        let attrs = sample.node.get(&bus).ok_or_else(|| PowerFlowError::HashMismatch {
            sample: format!("missing bus {bus}"),
            topology: topo_hash.clone(),
        })?;
        phase_mask[i] = attrs.phase.mask();
        for slot in 0..3 {
            s_load_pu[i][slot] = Complex64::new(
                attrs.p_kw[slot] / 1000.0 / s_base_mva,
                attrs.q_kvar[slot] / 1000.0 / s_base_mva,
            );
        }
    }

    Ok(ThreePhaseNetwork { bus_ids: order, parent, z_pu, s_load_pu, phase_mask, s_base_mva })
}

/// Forward/backward sweep. Non-convergence is reported in the result, not
/// as an error.
pub fn solve_fbs(net: &ThreePhaseNetwork, tol: f64, max_iter: u32) -> PfResult {
    let n = net.bus_ids.len();
    let src = source_voltages();
    let mut v = vec![src; n];
    let mut i_branch = vec![[Complex64::new(0.0, 0.0); 3]; n];
    let mut converged = false;
    let mut iterations = 0;
    let mut max_mismatch = f64::INFINITY;

    while iterations < max_iter {
        iterations += 1;
        // backward: accumulate load and child currents leaf -> root
        for cell in i_branch.iter_mut() {
            *cell = [Complex64::new(0.0, 0.0); 3];
        }
        for i in (0..n).rev() {
            for slot in 0..3 {
                let s = net.s_load_pu[i][slot];
                if s.norm_sqr() > 0.0 {
                    i_branch[i][slot] += (s / v[i][slot]).conj();
                }
            }
            if let Some(p) = net.parent[i] {
                let inj = i_branch[i];
                for slot in 0..3 {
                    i_branch[p][slot] += inj[slot];
                }
            }
        }
        // forward: propagate voltages root -> leaf
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let new_v = match net.parent[i] {
                None => src,
                Some(p) => {
                    let mut nv = [Complex64::new(0.0, 0.0); 3];
                    for slot in 0..3 {
                        nv[slot] = v[p][slot] - net.z_pu[i][slot] * i_branch[i][slot];
                    }
                    nv
                }
            };
            for slot in 0..3 {
                delta = delta.max((new_v[slot] - v[i][slot]).norm());
            }
            v[i] = new_v;
        }
        max_mismatch = delta;
        if delta < tol {
            converged = true;
            break;
        }
    }

    PfResult {
        converged,
        iterations,
        max_mismatch,
        v: v.iter().map(|b| [(b[0].re, b[0].im), (b[1].re, b[1].im), (b[2].re, b[2].im)]).collect(),
        bus_ids: net.bus_ids.clone(),
    }
}

pub const DEFAULT_PF_TOL: f64 = 1e-6;
pub const DEFAULT_PF_MAX_ITER: u32 = 100;
pub const DEFAULT_S_BASE_MVA: f64 = 1.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoltageStats {
    pub convergence_rate: f64,
    /// Fraction of results with every active-phase voltage inside the band.
    pub in_band_fraction: f64,
    /// Per-phase (min, max) |V| over all converged results.
    pub min_max: [(f64, f64); 3],
    /// Per-phase histograms over [hist_lo, hist_hi] with `bins` equal bins.
    pub hist_lo: f64,
    pub hist_hi: f64,
    pub histograms: [Vec<u32>; 3],
}

/// Active-phase voltage magnitudes of one result, with the phase slot.
fn active_magnitudes<'a>(
    result: &'a PfResult,
    masks: &'a [u8],
) -> impl Iterator<Item = (usize, f64)> + 'a {
    result.v.iter().enumerate().flat_map(move |(i, bus)| {
        let mask = masks[i];
        (0..3).filter(move |s| mask & (1 << s) != 0).map(move |s| {
            let (re, im) = bus[s];
            (s, Complex64::new(re, im).norm())
        })
    })
}

pub fn summarize_voltages(
    results: &[(PfResult, Vec<u8>)],
    band: (f64, f64),
) -> Result<VoltageStats, PowerFlowError> {
    if results.is_empty() {
        return Err(PowerFlowError::EmptyInput);
    }
    let (hist_lo, hist_hi, bins) = (0.85, 1.15, 60usize);
    let mut histograms = [vec![0u32; bins], vec![0u32; bins], vec![0u32; bins]];
    let mut min_max = [(f64::INFINITY, f64::NEG_INFINITY); 3];
    let mut converged = 0usize;
    let mut in_band = 0usize;
    for (res, masks) in results {
        if res.converged {
            converged += 1;
        }
        let mut all_in = true;
        for (slot, mag) in active_magnitudes(res, masks) {
            min_max[slot].0 = min_max[slot].0.min(mag);
            min_max[slot].1 = min_max[slot].1.max(mag);
            if mag < band.0 || mag > band.1 {
                all_in = false;
            }
            let bin = ((mag - hist_lo) / (hist_hi - hist_lo) * bins as f64)
                .floor()
                .clamp(0.0, bins as f64 - 1.0) as usize;
            histograms[slot][bin] += 1;
        }
        if all_in {
            in_band += 1;
        }
    }
    Ok(VoltageStats {
        convergence_rate: converged as f64 / results.len() as f64,
        in_band_fraction: in_band as f64 / results.len() as f64,
        min_max,
        hist_lo,
        hist_hi,
        histograms,
    })
}
