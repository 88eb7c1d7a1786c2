//! Shared fixtures: street-graph builders, hand-built topologies and an
//! independent nodal power-flow solver used as an oracle.

#![allow(dead_code)]

use std::collections::BTreeMap;

use gridsynth::bayes::defaults::default_posterior;
use gridsynth::bayes::posterior::{ModelKind, Posterior};
use gridsynth::bayes::{
    DurationPosterior, FrequencyPosterior, ImpedancePosterior, PowerPosterior,
};
use gridsynth::geo::haversine_km;
use gridsynth::osm::{PowerFeatures, StreetEdge, StreetGraph, StreetVertex, Substation};
use gridsynth::powerflow::{source_voltages, ThreePhaseNetwork};
use gridsynth::topology::{
    build_topology, Branch, Bus, BusKind, Feeder, GridTopology, HopZoneAssignment,
    TopologyConfig, TransmissionLayer,
};
use num_complex::Complex64;

pub fn lattice_graph(n: i64) -> StreetGraph {
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    let at = |i: i64, j: i64| (-23.0 + 4e-4 * i as f64, -46.0 + 4e-4 * j as f64);
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

/// Lattice street graph with one substation at the south-west corner,
/// turned into a full topology with default settings.
pub fn lattice_topology(n: i64) -> GridTopology {
    let cfg = TopologyConfig::default();
    let graph = lattice_graph(n);
    let mut features = PowerFeatures::default();
    features.substations =
        vec![Substation { id: 1, lat: -23.0, lon: -46.0, tags: Default::default() }];
    build_topology(&graph, &features, &cfg).unwrap()
}

/// Hand-built star: one substation feeding `n` MV buses directly, every bus
/// and line in hop zone 1 of a 5-zone labeling. Every bus has an ABC parent,
/// so phase sampling is unrestricted by the consistency scan.
pub fn star_topology(n: u32) -> GridTopology {
    let mut buses = vec![Bus {
        id: 0,
        lat: -23.0,
        lon: -46.0,
        voltage_kv: 13.8,
        kind: BusKind::Substation,
        feeder: 0,
    }];
    let mut branches = Vec::new();
    let mut node_zone = BTreeMap::new();
    let mut line_zone = BTreeMap::new();
    let mut node_distance_km = BTreeMap::new();
    node_distance_km.insert(0u32, 0.0);
    for i in 1..=n {
        buses.push(Bus {
            id: i,
            lat: -23.0 + 1e-5 * i as f64,
            lon: -46.0,
            voltage_kv: 13.8,
            kind: BusKind::Mv,
            feeder: 0,
        });
        branches.push(Branch { id: i, from_bus: 0, to_bus: i, length_km: 0.1 });
        node_zone.insert(i, 1u32);
        line_zone.insert(i, 1u32);
        node_distance_km.insert(i, 0.1);
    }
    GridTopology {
        substations: vec![0],
        transformers: Vec::new(),
        transmission: TransmissionLayer {
            hv_buses: Vec::new(),
            hv_lines: Vec::new(),
            grid_transformers: Vec::new(),
            external_source: None,
        },
        feeders: vec![Feeder {
            index: 0,
            source_bus: 0,
            bus_ids: buses.iter().map(|b| b.id).collect(),
            branch_ids: branches.iter().map(|b| b.id).collect(),
            trafo_ids: Vec::new(),
        }],
        zones: HopZoneAssignment { z_count: 5, node_zone, line_zone, node_distance_km },
        dropped_vertex_count: 0,
        buses,
        branches,
    }
}

pub fn default_posteriors()
-> (PowerPosterior, ImpedancePosterior, FrequencyPosterior, DurationPosterior) {
    let Posterior::Power(pw) = default_posterior(ModelKind::Power) else { unreachable!() };
    let Posterior::Impedance(im) = default_posterior(ModelKind::Impedance) else { unreachable!() };
    let Posterior::Frequency(fr) = default_posterior(ModelKind::Frequency) else { unreachable!() };
    let Posterior::Duration(du) = default_posterior(ModelKind::Duration) else { unreachable!() };
    (pw, im, fr, du)
}

/// Dense complex linear solve by Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / p;
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Independent per-phase nodal solve: fixed-point iteration on
/// V_L = Y_LL^{-1} (I(V) - Y_LS V_S), Ybus assembled from the radial links.
/// Returns per-bus per-phase voltages in network order, or None if the
/// iteration fails to settle.
pub fn nodal_oracle(net: &ThreePhaseNetwork, tol: f64) -> Option<Vec<[Complex64; 3]>> {
    let n = net.bus_ids.len();
    let src = source_voltages();
    let mut v = vec![src; n];
    for phase in 0..3 {
        // unknowns: non-source buses whose phase is active
        let mut unknowns = Vec::new();
        for i in 0..n {
            if net.parent[i].is_some() && net.phase_mask[i] & (1 << phase) != 0 {
                unknowns.push(i);
            }
        }
        if unknowns.is_empty() {
            continue;
        }
        let slot_of: BTreeMap<usize, usize> =
            unknowns.iter().enumerate().map(|(s, &i)| (i, s)).collect();
        let m = unknowns.len();
        let zero = Complex64::new(0.0, 0.0);
        let mut y_ll = vec![vec![zero; m]; m];
        // source contribution moved to the right-hand side
        let mut b_src = vec![zero; m];
        for i in 0..n {
            let Some(p) = net.parent[i] else { continue };
            if net.phase_mask[i] & (1 << phase) == 0 {
                continue;
            }
            let y = Complex64::new(1.0, 0.0) / net.z_pu[i][phase];
            let si = slot_of[&i];
            y_ll[si][si] += y;
            match slot_of.get(&p) {
                Some(&sp) => {
                    y_ll[sp][sp] += y;
                    y_ll[si][sp] -= y;
                    y_ll[sp][si] -= y;
                }
                None => b_src[si] += y * src[phase],
            }
        }
        let mut vm: Vec<Complex64> = unknowns.iter().map(|_| src[phase]).collect();
        let mut settled = false;
        for _ in 0..10_000 {
            let rhs: Vec<Complex64> = unknowns
                .iter()
                .zip(&vm)
                .map(|(&i, &vi)| b_src[slot_of[&i]] - (net.s_load_pu[i][phase] / vi).conj())
                .collect();
            let next = solve_linear(y_ll.clone(), rhs);
            let delta =
                next.iter().zip(&vm).map(|(a, b)| (a - b).norm()).fold(0.0f64, f64::max);
            vm = next;
            if delta < tol {
                settled = true;
                break;
            }
        }
        if !settled {
            return None;
        }
        for (&i, &vi) in unknowns.iter().zip(&vm) {
            v[i][phase] = vi;
        }
    }
    Some(v)
}
