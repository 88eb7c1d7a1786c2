//! Ensemble synthesis: draws fully-parameterized grid samples on a fixed
//! topology from the learned posteriors, enforcing downstream-subset phase
//! consistency in a breadth-first scan from each substation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bayes::duration::{sample_duration, DurationPosterior};
use crate::bayes::frequency::{sample_count, FrequencyPosterior};
use crate::bayes::impedance::{sample_line_attributes, ImpedancePosterior};
use crate::bayes::power::{sample_node_attributes, PowerPosterior};
use crate::bayes::BayesError;
use crate::phase::Phase;
use crate::topology::{BusId, GridTopology, LineId};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("topology is not radial: {0}")]
    NonRadialTopology(String),
    #[error("posterior has {posterior} zones but topology has {topology}")]
    ZoneCountMismatch { posterior: u32, topology: u32 },
    #[error("power factor must lie in (0, 1]")]
    InvalidPowerFactor,
    #[error("non-finite value sampled for {0}")]
    NonFiniteSample(String),
    #[error("sample count must be >= 1")]
    EmptySampleCount,
    #[error("ensemble directory is malformed: {0}")]
    MalformedEnsemble(String),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAttrs {
    pub phase: Phase,
    /// Active power (kW) per phase slot A/B/C; exactly 0 on inactive slots.
    pub p_kw: [f64; 3],
    pub q_kvar: [f64; 3],
    pub interruptions_per_year: u32,
    pub interruption_duration_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineAttrs {
    /// Total series resistance (ohm) over the line length.
    pub r1_ohm: f64,
    pub x1_ohm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSample {
    pub sample_idx: usize,
    pub draw_idx: usize,
    pub node: BTreeMap<BusId, NodeAttrs>,
    pub line: BTreeMap<LineId, LineAttrs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub topology_hash: String,
    pub seed: u64,
    pub power_factor: f64,
    pub samples: Vec<GridSample>,
}

/// Posterior bundle consumed by ensemble generation.
pub struct Posteriors<'a> {
    pub power: &'a PowerPosterior,
    pub impedance: &'a ImpedancePosterior,
    pub frequency: &'a FrequencyPosterior,
    pub duration: &'a DurationPosterior,
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub power_factor: f64,
    /// Per-bus demand scaling from building footprints; absent buses use 1.
    pub building_scales: BTreeMap<BusId, f64>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions { power_factor: 0.95, building_scales: BTreeMap::new() }
    }
}

/// Breadth-first bus order from each substation, children sorted by id.
/// Fails if the parent links do not cover every bus exactly once.
pub fn bfs_order(topology: &GridTopology) -> Result<Vec<BusId>, SynthesisError> {
    let parents = topology.parent_map();
    let mut children: BTreeMap<BusId, Vec<BusId>> = BTreeMap::new();
    for (&child, &parent) in &parents {
        children.entry(parent).or_default().push(child);
    }
    for c in children.values_mut() {
        c.sort_unstable();
    }
    let mut order = Vec::with_capacity(topology.buses.len());
    let mut seen = vec![false; topology.buses.len()];
    let mut queue: std::collections::VecDeque<BusId> = topology.substations.iter().copied().collect();
    for &s in &topology.substations {
        seen[s as usize] = true;
    }
    while let Some(b) = queue.pop_front() {
        order.push(b);
        if let Some(kids) = children.get(&b) {
            for &k in kids {
                if seen[k as usize] {
                    return Err(SynthesisError::NonRadialTopology(format!(
                        "bus {k} reached twice"
                    )));
                }
                seen[k as usize] = true;
                queue.push_back(k);
            }
        }
    }
    if order.len() != topology.buses.len() {
        return Err(SynthesisError::NonRadialTopology(format!(
            "{} of {} buses reachable from substations",
            order.len(),
            topology.buses.len()
        )));
    }
    Ok(order)
}

/// Assign phases top-down: substations are forced to ABC, every other bus
/// draws from the non-empty subsets of its parent's phase set via the
/// callback.
pub fn phase_consistency_scan<F>(
    topology: &GridTopology,
    mut sampler: F,
) -> Result<BTreeMap<BusId, Phase>, SynthesisError>
where
    F: FnMut(BusId, &[Phase]) -> Result<Phase, SynthesisError>,
{
    let order = bfs_order(topology)?;
    let parents = topology.parent_map();
    let mut phases: BTreeMap<BusId, Phase> = BTreeMap::new();
    for bus in order {
        let phase = match parents.get(&bus) {
            None => Phase::ABC,
            Some(parent) => {
                let allowed = Phase::subsets_of(phases[parent]);
                let p = sampler(bus, &allowed)?;
                debug_assert!(allowed.contains(&p));
                p
            }
        };
        phases.insert(bus, phase);
    }
    Ok(phases)
}

/// Per-sample RNG substream: ChaCha8 keyed by sha256(seed || sample_idx) so
/// any sample can be regenerated alone, in any order, on any worker count.
pub fn sample_rng(seed: u64, sample_idx: usize) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((sample_idx as u64).to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn check_zone_counts(topology: &GridTopology, post: &Posteriors) -> Result<(), SynthesisError> {
    let tz = topology.zones.z_count;
    for pz in [post.power.z_count, post.impedance.z_count, post.frequency.z_count, post.duration.z_count] {
        if pz != tz {
            return Err(SynthesisError::ZoneCountMismatch { posterior: pz, topology: tz });
        }
    }
    Ok(())
}

fn tan_phi(power_factor: f64) -> Result<f64, SynthesisError> {
    if !(power_factor > 0.0 && power_factor <= 1.0) {
        return Err(SynthesisError::InvalidPowerFactor);
    }
    Ok(power_factor.acos().tan())
}

/// Fill q_kvar = p_kw * tan(arccos(pf)) on every active phase.
pub fn assign_reactive_power(sample: &mut GridSample, power_factor: f64) -> Result<(), SynthesisError> {
    let t = tan_phi(power_factor)?;
    for attrs in sample.node.values_mut() {
        for s in 0..3 {
            attrs.q_kvar[s] = attrs.p_kw[s] * t;
        }
    }
    Ok(())
}

pub fn generate_sample(
    topology: &GridTopology,
    post: &Posteriors,
    sample_idx: usize,
    seed: u64,
    options: &SynthesisOptions,
) -> Result<GridSample, SynthesisError> {
    check_zone_counts(topology, post)?;
    let t = tan_phi(options.power_factor)?;
    let mut rng = sample_rng(seed, sample_idx);
    let n_draws = post
        .power
        .draws
        .len()
        .min(post.impedance.draws.len())
        .min(post.frequency.draws.len())
        .min(post.duration.draws.len());
    let draw_idx = rng.gen_range(0..n_draws);
    let freq_draw = &post.frequency.draws[draw_idx];
    let dur_draw = &post.duration.draws[draw_idx];

    let zone_of_bus = |b: BusId| topology.zones.node_zone.get(&b).copied().unwrap_or(1);
    let mut node: BTreeMap<BusId, NodeAttrs> = BTreeMap::new();
    let phases = phase_consistency_scan(topology, |bus, allowed| {
        let scale = options.building_scales.get(&bus).copied().unwrap_or(1.0);
        let (phase, p_kw) =
            sample_node_attributes(post.power, zone_of_bus(bus), allowed, draw_idx, scale, &mut rng)?;
        let mut q_kvar = [0.0; 3];
        for s in 0..3 {
            q_kvar[s] = p_kw[s] * t;
        }
        let interruptions = sample_count(freq_draw, zone_of_bus(bus), &mut rng);
        let duration = sample_duration(dur_draw, zone_of_bus(bus), &mut rng);
        if p_kw.iter().any(|v| !v.is_finite()) || !duration.is_finite() {
            return Err(SynthesisError::NonFiniteSample(format!("bus {bus}")));
        }
        node.insert(
            bus,
            NodeAttrs {
                phase,
                p_kw,
                q_kvar,
                interruptions_per_year: interruptions,
                interruption_duration_h: duration,
            },
        );
        Ok(phase)
    })?;
    // substations carry no load but still record their forced ABC phase
    for &s in &topology.substations {
        node.insert(
            s,
            NodeAttrs {
                phase: phases[&s],
                p_kw: [0.0; 3],
                q_kvar: [0.0; 3],
                interruptions_per_year: 0,
                interruption_duration_h: 0.0,
            },
        );
    }

    let mut line: BTreeMap<LineId, LineAttrs> = BTreeMap::new();
    for branch in &topology.branches {
        let zone = topology.zones.line_zone.get(&branch.id).copied().unwrap_or(1);
        let (r1, x1) =
            sample_line_attributes(post.impedance, zone, branch.length_km, draw_idx, &mut rng)?;
        if !r1.is_finite() || !x1.is_finite() {
            return Err(SynthesisError::NonFiniteSample(format!("line {}", branch.id)));
        }
        line.insert(branch.id, LineAttrs { r1_ohm: r1, x1_ohm: x1 });
    }

    Ok(GridSample { sample_idx, draw_idx, node, line })
}

pub fn generate_ensemble(
    topology: &GridTopology,
    post: &Posteriors,
    n: usize,
    seed: u64,
    options: &SynthesisOptions,
) -> Result<Ensemble, SynthesisError> {
    if n == 0 {
        return Err(SynthesisError::EmptySampleCount);
    }
    check_zone_counts(topology, post)?;
    let samples: Result<Vec<GridSample>, SynthesisError> = (0..n)
        .into_par_iter()
        .map(|k| generate_sample(topology, post, k, seed, options))
        .collect();
    Ok(Ensemble {
        topology_hash: topology.content_hash(),
        seed,
        power_factor: options.power_factor,
        samples: samples?,
    })
}

#[derive(Serialize, Deserialize)]
struct EnsembleMeta {
    topology_hash: String,
    seed: u64,
    power_factor: f64,
    sample_count: usize,
}

/// Directory layout: `meta.json` plus one `sample_<k>.json` per sample.
pub fn save_ensemble(ensemble: &Ensemble, dir: &Path) -> Result<(), SynthesisError> {
    std::fs::create_dir_all(dir)?;
    let meta = EnsembleMeta {
        topology_hash: ensemble.topology_hash.clone(),
        seed: ensemble.seed,
        power_factor: ensemble.power_factor,
        sample_count: ensemble.samples.len(),
    };
    let mut bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    bytes.push(b'\n');
    std::fs::write(dir.join("meta.json"), bytes)?;
    for s in &ensemble.samples {
        let mut bytes = serde_json::to_vec(s).expect("sample serializes");
        bytes.push(b'\n');
        std::fs::write(dir.join(format!("sample_{}.json", s.sample_idx)), bytes)?;
    }
    Ok(())
}

pub fn load_ensemble(dir: &Path) -> Result<Ensemble, SynthesisError> {
    let meta_path = dir.join("meta.json");
    if !meta_path.is_file() {
        return Err(SynthesisError::MalformedEnsemble(format!(
            "{} has no meta.json",
            dir.display()
        )));
    }
    let meta: EnsembleMeta = serde_json::from_slice(&std::fs::read(&meta_path)?)
        .map_err(|e| SynthesisError::MalformedEnsemble(e.to_string()))?;
    let mut samples = Vec::with_capacity(meta.sample_count);
    for k in 0..meta.sample_count {
        let path = dir.join(format!("sample_{k}.json"));
        if !path.is_file() {
            return Err(SynthesisError::MalformedEnsemble(format!("missing sample_{k}.json")));
        }
        let s: GridSample = serde_json::from_slice(&std::fs::read(&path)?)
            .map_err(|e| SynthesisError::MalformedEnsemble(format!("sample_{k}: {e}")))?;
        if s.sample_idx != k {
            return Err(SynthesisError::MalformedEnsemble(format!(
                "sample_{k}.json holds index {}",
                s.sample_idx
            )));
        }
        samples.push(s);
    }
    Ok(Ensemble {
        topology_hash: meta.topology_hash,
        seed: meta.seed,
        power_factor: meta.power_factor,
        samples,
    })
}

/// Post-hoc subset-rule audit; returns the list of violating buses.
pub fn phase_violations(topology: &GridTopology, sample: &GridSample) -> Vec<BusId> {
    let parents = topology.parent_map();
    let mut bad = Vec::new();
    for (&bus, attrs) in &sample.node {
        if let Some(parent) = parents.get(&bus) {
            if let Some(pa) = sample.node.get(parent) {
                if !attrs.phase.is_subset_of(pa.phase) {
                    bad.push(bus);
                }
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::defaults::default_posterior;
    use crate::bayes::posterior::{ModelKind, Posterior};
    use crate::geo::haversine_km;
    use crate::osm::{PowerFeatures, StreetEdge, StreetGraph, StreetVertex, Substation};
    use crate::topology::{build_topology, TopologyConfig};

    fn lattice_graph(n: i64) -> StreetGraph {
        let mut vertices = Vec::new();
        let mut edges = Vec::new();
        let at = |i: i64, j: i64| (-23.0 + 0.002 * i as f64, -46.0 + 0.002 * j as f64);
        for i in 0..n {
            for j in 0..n {
                let (lat, lon) = at(i, j);
                vertices.push(StreetVertex { id: i * n + j, lat, lon });
            }
        }
        for i in 0..n {
            for j in 0..n {
                let v = i * n + j;
                let (lat, lon) = at(i, j);
                if j + 1 < n {
                    let (lat2, lon2) = at(i, j + 1);
                    edges.push(StreetEdge {
                        u: v,
                        v: v + 1,
                        length_km: haversine_km(lat, lon, lat2, lon2),
                        way_id: 0,
                    });
                }
                if i + 1 < n {
                    let (lat2, lon2) = at(i + 1, j);
                    edges.push(StreetEdge {
                        u: v,
                        v: v + n,
                        length_km: haversine_km(lat, lon, lat2, lon2),
                        way_id: 0,
                    });
                }
            }
        }
        StreetGraph { vertices, edges, dropped_count: 0 }
    }

    fn fixture() -> (GridTopology, TopologyConfig) {
        let cfg = TopologyConfig::default();
        let graph = lattice_graph(6);
        let mut features = PowerFeatures::default();
        features.substations =
            vec![Substation { id: 1, lat: -23.0, lon: -46.0, tags: Default::default() }];
        let topo = build_topology(&graph, &features, &cfg).unwrap();
        (topo, cfg)
    }

    fn unwrap_posteriors() -> (PowerPosterior, ImpedancePosterior, FrequencyPosterior, DurationPosterior)
    {
        let Posterior::Power(pw) = default_posterior(ModelKind::Power) else { unreachable!() };
        let Posterior::Impedance(im) = default_posterior(ModelKind::Impedance) else {
            unreachable!()
        };
        let Posterior::Frequency(fr) = default_posterior(ModelKind::Frequency) else {
            unreachable!()
        };
        let Posterior::Duration(du) = default_posterior(ModelKind::Duration) else { unreachable!() };
        (pw, im, fr, du)
    }

    #[test]
    fn scan_allowed_sets() {
        let (topo, _) = fixture();
        // always picking the full parent set keeps everything ABC
        let phases = phase_consistency_scan(&topo, |_, allowed| Ok(*allowed.last().unwrap())).unwrap();
        assert!(phases.values().all(|p| *p == Phase::ABC));
        // always picking the first allowed subset yields phase A everywhere below the root
        let phases = phase_consistency_scan(&topo, |_, allowed| Ok(allowed[0])).unwrap();
        for &s in &topo.substations {
            assert_eq!(phases[&s], Phase::ABC);
        }
        let parents = topo.parent_map();
        for (bus, p) in &phases {
            if parents.contains_key(bus) {
                assert_eq!(*p, Phase::A);
            }
        }
    }

    #[test]
    fn ensemble_consistent_and_deterministic() {
        let (topo, _) = fixture();
        let (pw, im, fr, du) = unwrap_posteriors();
        let post = Posteriors { power: &pw, impedance: &im, frequency: &fr, duration: &du };
        let opts = SynthesisOptions::default();
        let a = generate_ensemble(&topo, &post, 5, 42, &opts).unwrap();
        let b = generate_ensemble(&topo, &post, 5, 42, &opts).unwrap();
        assert_eq!(a, b);
        for s in &a.samples {
            assert!(phase_violations(&topo, s).is_empty());
            for attrs in s.node.values() {
                let mask = attrs.phase.mask();
                for slot in 0..3 {
                    let active = mask & (1 << slot) != 0;
                    if !active {
                        assert_eq!(attrs.p_kw[slot], 0.0);
                        assert_eq!(attrs.q_kvar[slot], 0.0);
                    }
                }
            }
        }
        // distinct samples differ
        assert_ne!(a.samples[0].node, a.samples[1].node);
    }

    #[test]
    fn substream_independence() {
        let (topo, _) = fixture();
        let (pw, im, fr, du) = unwrap_posteriors();
        let post = Posteriors { power: &pw, impedance: &im, frequency: &fr, duration: &du };
        let opts = SynthesisOptions::default();
        let full = generate_ensemble(&topo, &post, 4, 7, &opts).unwrap();
        let lone = generate_sample(&topo, &post, 3, 7, &opts).unwrap();
        assert_eq!(full.samples[3], lone);
    }

    #[test]
    fn reactive_power_identity() {
        let (topo, _) = fixture();
        let (pw, im, fr, du) = unwrap_posteriors();
        let post = Posteriors { power: &pw, impedance: &im, frequency: &fr, duration: &du };
        let mut opts = SynthesisOptions::default();
        opts.power_factor = 1.0;
        let s = generate_sample(&topo, &post, 0, 1, &opts).unwrap();
        for attrs in s.node.values() {
            assert_eq!(attrs.q_kvar, [0.0; 3]);
        }
        // 100 kW at pf 0.95 -> about 32.87 kvar
        let mut s2 = s.clone();
        let first = *s2.node.keys().next().unwrap();
        s2.node.get_mut(&first).unwrap().p_kw = [100.0, 0.0, 0.0];
        assign_reactive_power(&mut s2, 0.95).unwrap();
        let q = s2.node[&first].q_kvar[0];
        assert!((q - 32.868).abs() < 0.01, "{q}");
        assert!(matches!(
            assign_reactive_power(&mut s2, 0.0),
            Err(SynthesisError::InvalidPowerFactor)
        ));
    }

    #[test]
    fn zone_mismatch_rejected() {
        let (topo, _) = fixture();
        let (pw, im, fr, mut du) = unwrap_posteriors();
        du.z_count = 3;
        let post = Posteriors { power: &pw, impedance: &im, frequency: &fr, duration: &du };
        assert!(matches!(
            generate_ensemble(&topo, &post, 1, 0, &SynthesisOptions::default()),
            Err(SynthesisError::ZoneCountMismatch { .. })
        ));
    }

    #[test]
    fn persistence_round_trip() {
        let (topo, _) = fixture();
        let (pw, im, fr, du) = unwrap_posteriors();
        let post = Posteriors { power: &pw, impedance: &im, frequency: &fr, duration: &du };
        let e = generate_ensemble(&topo, &post, 3, 9, &SynthesisOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_ensemble(&e, dir.path()).unwrap();
        let loaded = load_ensemble(dir.path()).unwrap();
        assert_eq!(loaded.topology_hash, e.topology_hash);
        assert_eq!(loaded.seed, e.seed);
        assert_eq!(loaded.power_factor, e.power_factor);
        for (a, b) in loaded.samples.iter().zip(&e.samples) {
            assert_eq!(a.sample_idx, b.sample_idx);
            assert_eq!(a.draw_idx, b.draw_idx);
            for (k, av) in &a.node {
                let bv = &b.node[k];
                assert_eq!(av, bv, "node {k}");
            }
            for (k, av) in &a.line {
                let bv = &b.line[k];
                assert_eq!(av, bv, "line {k}");
            }
            assert_eq!(a.node.len(), b.node.len());
            assert_eq!(a.line.len(), b.line.len());
        }
    }
}
