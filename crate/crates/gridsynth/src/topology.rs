//! Radial grid topology construction: service areas, shortest-path feeder
//! trees, hop-zone labeling, distribution transformer placement and the
//! transmission overlay.

use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::haversine_km;
use crate::osm::{PowerFeatures, StreetGraph};

pub type BusId = u32;
pub type LineId = u32;
pub type TrafoId = u32;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("no substations in region; inject one with --inject-substation LAT,LON")]
    NoSubstations,
    #[error("feeder rooted at vertex {0} has no reachable vertices")]
    EmptyFeeder(i64),
    #[error("electrical distance metric requires per-branch impedances")]
    MissingImpedances,
    #[error("zone count must be >= 1")]
    BadZoneCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Substation,
    Mv,
    Lv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub lat: f64,
    pub lon: f64,
    pub voltage_kv: f64,
    pub kind: BusKind,
    pub feeder: u32,
}

/// A series branch; `from_bus` is always the upstream (closer to substation)
/// endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub id: LineId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub length_km: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transformer {
    pub id: TrafoId,
    pub hv_bus: BusId,
    pub lv_bus: BusId,
    pub rating_kva: f64,
    pub vk_percent: f64,
    pub vkr_percent: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HvBus {
    pub id: u32,
    pub lat: f64,
    pub lon: f64,
    pub voltage_kv: f64,
    pub is_generator: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HvLine {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    pub length_km: f64,
    pub r_ohm_per_km: f64,
    pub x_ohm_per_km: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridTransformer {
    pub id: u32,
    pub hv_bus: u32,
    pub substation_bus: BusId,
    pub rating_mva: f64,
    pub vk_percent: f64,
    pub vkr_percent: f64,
}

/// High-voltage overlay connecting substations to an external source.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TransmissionLayer {
    pub hv_buses: Vec<HvBus>,
    pub hv_lines: Vec<HvLine>,
    pub grid_transformers: Vec<GridTransformer>,
    pub external_source: Option<u32>,
}

/// Per-feeder hop-zone labels and path distances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HopZoneAssignment {
    pub z_count: u32,
    pub node_zone: BTreeMap<BusId, u32>,
    pub line_zone: BTreeMap<LineId, u32>,
    pub node_distance_km: BTreeMap<BusId, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Feeder {
    pub index: u32,
    pub source_bus: BusId,
    pub bus_ids: Vec<BusId>,
    pub branch_ids: Vec<LineId>,
    pub trafo_ids: Vec<TrafoId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridTopology {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub substations: Vec<BusId>,
    pub transformers: Vec<Transformer>,
    pub transmission: TransmissionLayer,
    pub feeders: Vec<Feeder>,
    pub zones: HopZoneAssignment,
    /// Street vertices that could not be reached from any substation.
    pub dropped_vertex_count: u32,
}

impl GridTopology {
    pub fn bus(&self, id: BusId) -> &Bus {
        &self.buses[id as usize]
    }

    /// Upstream parent of each bus (substation buses have none);
    /// branches and transformers both count as parent links.
    pub fn parent_map(&self) -> BTreeMap<BusId, BusId> {
        let mut parents = BTreeMap::new();
        for b in &self.branches {
            parents.insert(b.to_bus, b.from_bus);
        }
        for t in &self.transformers {
            parents.insert(t.lv_bus, t.hv_bus);
        }
        parents
    }

    /// sha256 over the canonical serialized form, hex-encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("topology serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Map street-vertex -> substation, nearest by haversine distance, ties
/// broken by lowest substation id.
#[derive(Debug, Clone)]
pub struct ServiceAssignment {
    pub vertex_to_substation: BTreeMap<i64, i64>,
}

pub fn assign_service_areas(
    street: &StreetGraph,
    features: &PowerFeatures,
) -> Result<ServiceAssignment, TopologyError> {
    if features.substations.is_empty() {
        return Err(TopologyError::NoSubstations);
    }
    let mut subs: Vec<_> = features.substations.iter().collect();
    subs.sort_by_key(|s| s.id);
    let mut map = BTreeMap::new();
    for v in &street.vertices {
        let mut best = (f64::INFINITY, i64::MAX);
        for s in &subs {
            let d = haversine_km(v.lat, v.lon, s.lat, s.lon);
            if d < best.0 || (d == best.0 && s.id < best.1) {
                best = (d, s.id);
            }
        }
        map.insert(v.id, best.1);
    }
    Ok(ServiceAssignment { vertex_to_substation: map })
}

/// Shortest-path tree over street vertices rooted at a substation vertex.
#[derive(Debug, Clone)]
pub struct FeederTree {
    pub root: i64,
    /// child vertex -> (parent vertex, edge length km)
    pub parent: BTreeMap<i64, (i64, f64)>,
    pub dist_km: BTreeMap<i64, f64>,
    /// vertices in settle order (root first)
    pub order: Vec<i64>,
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    vertex: i64,
}

impl Eq for HeapEntry {}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap on (dist, vertex)
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap()
            .then(other.vertex.cmp(&self.vertex))
    }
}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra (km weights) restricted to `assigned`, rooted at the substation
/// vertex. Dropped vertices are those in `assigned` but unreachable.
pub fn build_radial_feeder(
    street: &StreetGraph,
    substation_vertex: i64,
    assigned: &HashSet<i64>,
) -> Result<(FeederTree, u32), TopologyError> {
    let adj = street.adjacency();
    let mut dist: BTreeMap<i64, f64> = BTreeMap::new();
    let mut parent: BTreeMap<i64, (i64, f64)> = BTreeMap::new();
    let mut order = Vec::new();
    let mut heap = BinaryHeap::new();
    dist.insert(substation_vertex, 0.0);
    heap.push(HeapEntry { dist: 0.0, vertex: substation_vertex });
    let mut settled: HashSet<i64> = HashSet::new();
    while let Some(HeapEntry { dist: d, vertex: u }) = heap.pop() {
        if !settled.insert(u) {
            continue;
        }
        order.push(u);
        for &(v, w) in adj.get(&u).into_iter().flatten() {
            if !assigned.contains(&v) && v != substation_vertex {
                continue;
            }
            let nd = d + w;
            if nd < *dist.get(&v).unwrap_or(&f64::INFINITY) {
                dist.insert(v, nd);
                parent.insert(v, (u, w));
                heap.push(HeapEntry { dist: nd, vertex: v });
            }
        }
    }
    if order.len() <= 1 && assigned.iter().any(|v| *v != substation_vertex) {
        return Err(TopologyError::EmptyFeeder(substation_vertex));
    }
    let dropped = assigned.iter().filter(|v| !settled.contains(v)).count() as u32;
    Ok((FeederTree { root: substation_vertex, parent, dist_km: dist, order }, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMethod {
    Topological,
    Electrical,
    Euclidean,
}

/// Distance from the feeder root for every vertex in the tree.
pub fn compute_distance_metric(
    feeder: &FeederTree,
    street: &StreetGraph,
    method: DistanceMethod,
    line_impedances: Option<&HashMap<(i64, i64), f64>>,
) -> Result<BTreeMap<i64, f64>, TopologyError> {
    match method {
        DistanceMethod::Topological => Ok(feeder.dist_km.clone()),
        DistanceMethod::Euclidean => {
            let root = street.vertex(feeder.root).expect("root in graph");
            Ok(feeder
                .dist_km
                .keys()
                .map(|id| {
                    let v = street.vertex(*id).expect("vertex in graph");
                    (*id, haversine_km(v.lat, v.lon, root.lat, root.lon))
                })
                .collect())
        }
        DistanceMethod::Electrical => {
            let imp = line_impedances.ok_or(TopologyError::MissingImpedances)?;
            let mut out = BTreeMap::new();
            out.insert(feeder.root, 0.0);
            // settle order guarantees parents are computed first
            for v in &feeder.order {
                if *v == feeder.root {
                    continue;
                }
                let (p, _) = feeder.parent[v];
                let z = imp
                    .get(&(p, *v))
                    .or_else(|| imp.get(&(*v, p)))
                    .ok_or(TopologyError::MissingImpedances)?;
                let d = out[&p] + z;
                out.insert(*v, d);
            }
            Ok(out)
        }
    }
}

/// Equal-width binning of distances into zones {1..Z} over [0, d_max] of one
/// feeder. zone(d) = min(Z, 1 + floor(Z*d/d_max)); a zero-extent feeder is
/// all zone 1.
pub fn zone_of(distance_km: f64, d_max: f64, z_count: u32) -> u32 {
    if d_max <= 0.0 || distance_km <= 0.0 {
        return 1;
    }
    let raw = 1 + (z_count as f64 * distance_km / d_max).floor() as u32;
    raw.min(z_count)
}

/// Greedy bottom-up partition of a feeder tree into contiguous clusters of
/// at most `max_cluster` vertices (root excluded).
pub fn cluster_feeder(feeder: &FeederTree, max_cluster: usize) -> Vec<Vec<i64>> {
    assert!(max_cluster >= 1);
    let mut children: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
    for (child, (parent, _)) in &feeder.parent {
        children.entry(*parent).or_default().push(*child);
    }
    for kids in children.values_mut() {
        kids.sort_unstable();
    }
    let mut clusters: Vec<Vec<i64>> = Vec::new();
    let mut pending: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
    // reverse settle order is a valid post-order substitute: children always
    // settle after parents in Dijkstra, so iterating reversed visits children
    // before their parent
    for v in feeder.order.iter().rev() {
        let mut mine = vec![*v];
        let mut child_chunks: Vec<Vec<i64>> = Vec::new();
        for c in children.get(v).into_iter().flatten() {
            if let Some(chunk) = pending.remove(c) {
                child_chunks.push(chunk);
            }
        }
        // largest chunks first so small remainders merge upward
        child_chunks.sort_by_key(|c| std::cmp::Reverse(c.len()));
        for chunk in child_chunks {
            if mine.len() + chunk.len() <= max_cluster {
                mine.extend(chunk);
            } else {
                clusters.push(chunk);
            }
        }
        if *v == feeder.root {
            mine.retain(|x| *x != feeder.root);
            if !mine.is_empty() {
                clusters.push(mine);
            }
        } else {
            pending.insert(*v, mine);
        }
    }
    for cluster in &mut clusters {
        cluster.sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub z_count: u32,
    pub mv_kv: f64,
    pub lv_kv: f64,
    pub max_cluster: usize,
    pub distance_method: DistanceMethod,
    /// kVA ladder a cluster transformer rating is picked from.
    pub rating_ladder_kva: Vec<f64>,
    /// Expected per-bus peak demand used for transformer sizing.
    pub expected_bus_peak_kw: f64,
    pub trafo_vk_percent: f64,
    pub trafo_vkr_percent: f64,
    pub hv_kv: f64,
    pub hv_r_ohm_per_km: f64,
    pub hv_x_ohm_per_km: f64,
    pub grid_trafo_mva: f64,
    pub grid_trafo_vk_percent: f64,
    pub grid_trafo_vkr_percent: f64,
    /// Manually injected substation for regions where OSM has none.
    pub inject_substation: Option<(f64, f64)>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            z_count: 5,
            mv_kv: 13.8,
            lv_kv: 0.220,
            max_cluster: 8,
            distance_method: DistanceMethod::Topological,
            rating_ladder_kva: vec![75.0, 150.0, 300.0, 500.0],
            expected_bus_peak_kw: 6.0,
            trafo_vk_percent: 4.0,
            trafo_vkr_percent: 1.2,
            hv_kv: 138.0,
            hv_r_ohm_per_km: 0.05,
            hv_x_ohm_per_km: 0.4,
            grid_trafo_mva: 25.0,
            grid_trafo_vk_percent: 10.0,
            grid_trafo_vkr_percent: 0.5,
            inject_substation: None,
        }
    }
}

/// Pick the smallest ladder rating covering 1.2x the cluster's expected peak.
pub fn pick_rating_kva(ladder: &[f64], cluster_size: usize, expected_bus_peak_kw: f64) -> f64 {
    let need = 1.2 * cluster_size as f64 * expected_bus_peak_kw;
    ladder
        .iter()
        .copied()
        .find(|r| *r >= need)
        .unwrap_or_else(|| *ladder.last().expect("non-empty ladder"))
}

/// Full topology construction: service areas, per-substation shortest-path
/// trees, transformer placement, hop zones and the transmission overlay.
pub fn build_topology(
    street: &StreetGraph,
    features: &PowerFeatures,
    cfg: &TopologyConfig,
) -> Result<GridTopology, TopologyError> {
    let mut features = features.clone();
    if let Some((lat, lon)) = cfg.inject_substation {
        features.substations.push(crate::osm::Substation {
            id: -1,
            lat,
            lon,
            tags: Default::default(),
        });
    }
    if features.substations.is_empty() {
        return Err(TopologyError::NoSubstations);
    }

    // snap each substation to its nearest street vertex; substations that
    // snap to the same vertex collapse into one feeder
    let mut subs: Vec<_> = features.substations.clone();
    subs.sort_by_key(|s| s.id);
    let mut snapped: Vec<(i64, i64)> = Vec::new(); // (sub id, vertex id)
    let mut taken: HashSet<i64> = HashSet::new();
    for s in &subs {
        let v = street
            .vertices
            .iter()
            .min_by(|a, b| {
                haversine_km(a.lat, a.lon, s.lat, s.lon)
                    .partial_cmp(&haversine_km(b.lat, b.lon, s.lat, s.lon))
                    .unwrap()
                    .then(a.id.cmp(&b.id))
            })
            .expect("non-empty street graph");
        if taken.insert(v.id) {
            snapped.push((s.id, v.id));
        }
    }

    let assignment = assign_service_areas(street, &features)?;

    // pass 1: restricted Dijkstra per substation
    let mut trees: Vec<FeederTree> = Vec::new();
    let mut reached: HashMap<i64, usize> = HashMap::new(); // vertex -> feeder idx
    for (fi, (sub_id, root)) in snapped.iter().enumerate() {
        let assigned: HashSet<i64> = assignment
            .vertex_to_substation
            .iter()
            .filter(|(_, s)| *s == sub_id)
            .map(|(v, _)| *v)
            .collect();
        let (tree, _) = match build_radial_feeder(street, *root, &assigned) {
            Ok(t) => t,
            Err(TopologyError::EmptyFeeder(_)) => (
                FeederTree {
                    root: *root,
                    parent: BTreeMap::new(),
                    dist_km: [(*root, 0.0)].into_iter().collect(),
                    order: vec![*root],
                },
                0,
            ),
            Err(e) => return Err(e),
        };
        for v in &tree.order {
            reached.entry(*v).or_insert(fi);
        }
        trees.push(tree);
    }

    // pass 2: vertices unreachable inside their own service area join the
    // feeder whose tree reaches them first (joint Dijkstra from all trees)
    let adj = street.adjacency();
    let mut heap = BinaryHeap::new();
    let mut dist: HashMap<i64, f64> = HashMap::new();
    for (fi, tree) in trees.iter().enumerate() {
        for v in &tree.order {
            dist.insert(*v, tree.dist_km[v]);
            heap.push(HeapEntry { dist: tree.dist_km[v], vertex: *v });
        }
        let _ = fi;
    }
    let mut extra_parent: HashMap<i64, (i64, f64)> = HashMap::new();
    let mut settled: HashSet<i64> = HashSet::new();
    while let Some(HeapEntry { dist: d, vertex: u }) = heap.pop() {
        if !settled.insert(u) {
            continue;
        }
        for &(v, w) in adj.get(&u).into_iter().flatten() {
            if reached.contains_key(&v) {
                continue;
            }
            let nd = d + w;
            if nd < *dist.get(&v).unwrap_or(&f64::INFINITY) {
                dist.insert(v, nd);
                extra_parent.insert(v, (u, w));
                heap.push(HeapEntry { dist: nd, vertex: v });
            }
        }
    }
    // attach rescued vertices in settle (distance) order so parents exist
    let mut rescued: Vec<(i64, f64)> = extra_parent
        .keys()
        .filter(|v| settled.contains(v))
        .map(|v| (*v, dist[v]))
        .collect();
    rescued.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    for (v, d) in rescued {
        let (p, w) = extra_parent[&v];
        let fi = reached[&p];
        reached.insert(v, fi);
        trees[fi].parent.insert(v, (p, w));
        trees[fi].dist_km.insert(v, d);
        trees[fi].order.push(v);
    }
    let dropped_vertex_count =
        street.vertices.iter().filter(|v| !reached.contains_key(&v.id)).count() as u32;

    // materialize buses: per feeder, substation + MV buses + transformers + LV buses
    let vertex_pos: HashMap<i64, &crate::osm::StreetVertex> =
        street.vertices.iter().map(|v| (v.id, v)).collect();
    let mut buses: Vec<Bus> = Vec::new();
    let mut branches: Vec<Branch> = Vec::new();
    let mut transformers: Vec<Transformer> = Vec::new();
    let mut feeders: Vec<Feeder> = Vec::new();
    let mut substation_buses: Vec<BusId> = Vec::new();
    let mut node_distance: BTreeMap<BusId, f64> = BTreeMap::new();
    let mut feeder_of_bus: Vec<u32> = Vec::new();

    for (fi, tree) in trees.iter().enumerate() {
        let fi = fi as u32;
        let mut bus_ids = Vec::new();
        let mut branch_ids = Vec::new();
        let mut trafo_ids = Vec::new();
        let mut mv_bus_of: HashMap<i64, BusId> = HashMap::new();

        for v in &tree.order {
            let pos = vertex_pos[v];
            let id = buses.len() as BusId;
            let kind = if *v == tree.root { BusKind::Substation } else { BusKind::Mv };
            buses.push(Bus {
                id,
                lat: pos.lat,
                lon: pos.lon,
                voltage_kv: cfg.mv_kv,
                kind,
                feeder: fi,
            });
            feeder_of_bus.push(fi);
            mv_bus_of.insert(*v, id);
            node_distance.insert(id, tree.dist_km[v]);
            bus_ids.push(id);
            if *v == tree.root {
                substation_buses.push(id);
            }
        }
        for v in &tree.order {
            if *v == tree.root {
                continue;
            }
            let (p, w) = tree.parent[v];
            let id = branches.len() as LineId;
            branches.push(Branch {
                id,
                from_bus: mv_bus_of[&p],
                to_bus: mv_bus_of[v],
                length_km: w,
            });
            branch_ids.push(id);
        }

        // transformer clusters over the MV tree
        for cluster in cluster_feeder(tree, cfg.max_cluster) {
            let head = cluster
                .iter()
                .copied()
                .min_by(|a, b| {
                    tree.dist_km[a]
                        .partial_cmp(&tree.dist_km[b])
                        .unwrap()
                        .then(a.cmp(b))
                })
                .expect("non-empty cluster");
            let head_mv = mv_bus_of[&head];
            let head_pos = vertex_pos[&head];
            // co-located LV bus on the transformer secondary
            let lv_head = buses.len() as BusId;
            buses.push(Bus {
                id: lv_head,
                lat: head_pos.lat,
                lon: head_pos.lon,
                voltage_kv: cfg.lv_kv,
                kind: BusKind::Lv,
                feeder: fi,
            });
            feeder_of_bus.push(fi);
            node_distance.insert(lv_head, tree.dist_km[&head]);
            bus_ids.push(lv_head);
            let tid = transformers.len() as TrafoId;
            transformers.push(Transformer {
                id: tid,
                hv_bus: head_mv,
                lv_bus: lv_head,
                rating_kva: pick_rating_kva(
                    &cfg.rating_ladder_kva,
                    cluster.len(),
                    cfg.expected_bus_peak_kw,
                ),
                vk_percent: cfg.trafo_vk_percent,
                vkr_percent: cfg.trafo_vkr_percent,
            });
            trafo_ids.push(tid);
            // remaining cluster load points hang off the LV head
            for v in cluster.iter().filter(|v| **v != head) {
                let pos = vertex_pos[v];
                let lv = buses.len() as BusId;
                buses.push(Bus {
                    id: lv,
                    lat: pos.lat,
                    lon: pos.lon,
                    voltage_kv: cfg.lv_kv,
                    kind: BusKind::Lv,
                    feeder: fi,
                });
                feeder_of_bus.push(fi);
                bus_ids.push(lv);
                let len = haversine_km(head_pos.lat, head_pos.lon, pos.lat, pos.lon).max(1e-4);
                let id = branches.len() as LineId;
                branches.push(Branch { id, from_bus: lv_head, to_bus: lv, length_km: len });
                branch_ids.push(id);
                node_distance.insert(lv, tree.dist_km[&head] + len);
            }
        }

        feeders.push(Feeder {
            index: fi,
            source_bus: mv_bus_of[&tree.root],
            bus_ids,
            branch_ids,
            trafo_ids,
        });
    }

    // hop zones, per feeder
    let mut node_zone: BTreeMap<BusId, u32> = BTreeMap::new();
    for f in &feeders {
        let d_max = f
            .bus_ids
            .iter()
            .map(|b| node_distance[b])
            .fold(0.0_f64, f64::max);
        for b in &f.bus_ids {
            node_zone.insert(*b, zone_of(node_distance[b], d_max, cfg.z_count));
        }
    }
    let mut line_zone: BTreeMap<LineId, u32> = BTreeMap::new();
    for br in &branches {
        line_zone.insert(br.id, node_zone[&br.from_bus]);
    }

    let zones = HopZoneAssignment {
        z_count: cfg.z_count,
        node_zone,
        line_zone,
        node_distance_km: node_distance,
    };

    let mut topology = GridTopology {
        buses,
        branches,
        substations: substation_buses,
        transformers,
        transmission: TransmissionLayer::default(),
        feeders,
        zones,
        dropped_vertex_count,
    };
    topology.transmission = overlay_transmission(&features, &topology, cfg);
    Ok(topology)
}

/// Build the HV overlay: buses at transmission-way endpoints and generator
/// sites, lines along power=line ways, one grid transformer per substation
/// to its nearest HV bus. Without any transmission ways the layer is a
/// single synthetic external source feeding every substation.
pub fn overlay_transmission(
    features: &PowerFeatures,
    topology: &GridTopology,
    cfg: &TopologyConfig,
) -> TransmissionLayer {
    let mut layer = TransmissionLayer::default();
    let subs: Vec<&Bus> =
        topology.substations.iter().map(|id| topology.bus(*id)).collect();

    if features.transmission_ways.is_empty() && features.generators.is_empty() {
        if subs.is_empty() {
            return layer;
        }
        let lat = subs.iter().map(|b| b.lat).sum::<f64>() / subs.len() as f64;
        let lon = subs.iter().map(|b| b.lon).sum::<f64>() / subs.len() as f64;
        layer.hv_buses.push(HvBus { id: 0, lat, lon, voltage_kv: cfg.hv_kv, is_generator: false });
        layer.external_source = Some(0);
        for (i, s) in subs.iter().enumerate() {
            layer.grid_transformers.push(GridTransformer {
                id: i as u32,
                hv_bus: 0,
                substation_bus: s.id,
                rating_mva: cfg.grid_trafo_mva,
                vk_percent: cfg.grid_trafo_vk_percent,
                vkr_percent: cfg.grid_trafo_vkr_percent,
            });
        }
        return layer;
    }

    // hv buses at way endpoints, deduplicated by coordinate
    let mut bus_at: BTreeMap<(i64, i64), u32> = BTreeMap::new();
    let key = |lat: f64, lon: f64| ((lat * 1e7).round() as i64, (lon * 1e7).round() as i64);
    let mut add_bus = |layer: &mut TransmissionLayer, lat: f64, lon: f64, is_gen: bool| -> u32 {
        let k = key(lat, lon);
        if let Some(id) = bus_at.get(&k) {
            return *id;
        }
        let id = layer.hv_buses.len() as u32;
        layer.hv_buses.push(HvBus { id, lat, lon, voltage_kv: cfg.hv_kv, is_generator: is_gen });
        bus_at.insert(k, id);
        id
    };

    let mut ways: Vec<_> = features.transmission_ways.iter().collect();
    ways.sort_by_key(|w| w.way_id);
    for way in ways {
        let (alat, alon) = way.polyline[0];
        let (blat, blon) = *way.polyline.last().unwrap();
        let from = add_bus(&mut layer, alat, alon, false);
        let to = add_bus(&mut layer, blat, blon, false);
        if from == to {
            continue;
        }
        let length_km: f64 = way
            .polyline
            .windows(2)
            .map(|p| haversine_km(p[0].0, p[0].1, p[1].0, p[1].1))
            .sum();
        let id = layer.hv_lines.len() as u32;
        layer.hv_lines.push(HvLine {
            id,
            from,
            to,
            length_km: length_km.max(1e-4),
            r_ohm_per_km: cfg.hv_r_ohm_per_km,
            x_ohm_per_km: cfg.hv_x_ohm_per_km,
        });
    }
    let mut gens: Vec<_> = features.generators.iter().collect();
    gens.sort_by_key(|g| g.id);
    for g in gens {
        add_bus(&mut layer, g.lat, g.lon, true);
    }

    layer.external_source = Some(0);

    // stitch disconnected HV components to the external source
    let n = layer.hv_buses.len();
    let mut comp: Vec<usize> = (0..n).collect();
    fn find(comp: &mut Vec<usize>, x: usize) -> usize {
        if comp[x] != x {
            let r = find(comp, comp[x]);
            comp[x] = r;
        }
        comp[x]
    }
    for l in &layer.hv_lines {
        let (a, b) = (find(&mut comp, l.from as usize), find(&mut comp, l.to as usize));
        comp[a] = b;
    }
    let src_root = find(&mut comp, 0);
    for i in 1..n {
        if find(&mut comp, i) != src_root {
            let b = &layer.hv_buses[i];
            let s = &layer.hv_buses[0];
            let id = layer.hv_lines.len() as u32;
            layer.hv_lines.push(HvLine {
                id,
                from: 0,
                to: i as u32,
                length_km: haversine_km(s.lat, s.lon, b.lat, b.lon).max(1e-4),
                r_ohm_per_km: cfg.hv_r_ohm_per_km,
                x_ohm_per_km: cfg.hv_x_ohm_per_km,
            });
            let r = find(&mut comp, i);
            comp[r] = src_root;
        }
    }

    for (i, s) in subs.iter().enumerate() {
        let nearest = layer
            .hv_buses
            .iter()
            .min_by(|a, b| {
                haversine_km(a.lat, a.lon, s.lat, s.lon)
                    .partial_cmp(&haversine_km(b.lat, b.lon, s.lat, s.lon))
                    .unwrap()
                    .then(a.id.cmp(&b.id))
            })
            .expect("hv buses non-empty")
            .id;
        layer.grid_transformers.push(GridTransformer {
            id: i as u32,
            hv_bus: nearest,
            substation_bus: s.id,
            rating_mva: cfg.grid_trafo_mva,
            vk_percent: cfg.grid_trafo_vk_percent,
            vkr_percent: cfg.grid_trafo_vkr_percent,
        });
    }
    layer
}

/// Radiality check: per feeder, (branches + transformers) = buses - 1 and
/// the feeder is connected.
pub fn check_radiality(topology: &GridTopology) -> Result<(), String> {
    for f in &topology.feeders {
        let n = f.bus_ids.len();
        let e = f.branch_ids.len() + f.trafo_ids.len();
        if e != n - 1 {
            return Err(format!("feeder {}: {} edges for {} buses", f.index, e, n));
        }
        let members: HashSet<BusId> = f.bus_ids.iter().copied().collect();
        let mut adj: HashMap<BusId, Vec<BusId>> = HashMap::new();
        for bid in &f.branch_ids {
            let b = &topology.branches[*bid as usize];
            adj.entry(b.from_bus).or_default().push(b.to_bus);
            adj.entry(b.to_bus).or_default().push(b.from_bus);
        }
        for tid in &f.trafo_ids {
            let t = &topology.transformers[*tid as usize];
            adj.entry(t.hv_bus).or_default().push(t.lv_bus);
            adj.entry(t.lv_bus).or_default().push(t.hv_bus);
        }
        let mut seen = HashSet::new();
        let mut stack = vec![f.source_bus];
        while let Some(x) = stack.pop() {
            if !seen.insert(x) {
                continue;
            }
            for y in adj.get(&x).into_iter().flatten() {
                stack.push(*y);
            }
        }
        if seen.len() != members.len() {
            return Err(format!(
                "feeder {}: only {}/{} buses reachable",
                f.index,
                seen.len(),
                members.len()
            ));
        }
    }
    Ok(())
}
