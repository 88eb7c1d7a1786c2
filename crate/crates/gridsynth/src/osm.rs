//! OpenStreetMap ingestion: Overpass document parsing, optional live
//! fetching, street-graph extraction and power-feature extraction.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::haversine_km;

pub type Tags = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum OsmError {
    #[error("malformed Overpass document: {0}")]
    MalformedDocument(String),
    #[error("extract contains zero nodes (wrong region or failed query?)")]
    EmptyExtract,
    #[error("extract contains no highway-tagged ways")]
    NoStreets,
    #[error("invalid region query: {0}")]
    InvalidRegion(String),
    #[error("no geocoder configured for city/address queries")]
    GeocodeUnavailable,
    #[error("network error after {attempts} attempts: {message}")]
    NetworkError { attempts: u32, message: String },
}

/// Region selector for topology generation, one of four query modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionQuery {
    City { city_name: String },
    Point { center: (f64, f64), dist_m: f64 },
    Bbox { south: f64, west: f64, north: f64, east: f64 },
    Address { address: String, dist_m: f64 },
}

impl RegionQuery {
    pub fn validate(&self) -> Result<(), OsmError> {
        match self {
            RegionQuery::City { city_name } => {
                if city_name.trim().is_empty() {
                    return Err(OsmError::InvalidRegion("empty city name".into()));
                }
            }
            RegionQuery::Point { dist_m, .. } | RegionQuery::Address { dist_m, .. } => {
                if *dist_m <= 0.0 {
                    return Err(OsmError::InvalidRegion("dist_m must be > 0".into()));
                }
                if let RegionQuery::Point { center: (lat, lon), .. } = self {
                    if !lat.is_finite() || !lon.is_finite() {
                        return Err(OsmError::InvalidRegion("non-finite center".into()));
                    }
                }
            }
            RegionQuery::Bbox { south, west, north, east } => {
                if !(south < north) {
                    return Err(OsmError::InvalidRegion("bbox requires south < north".into()));
                }
                if !(west < east) {
                    return Err(OsmError::InvalidRegion("bbox requires west < east".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsmNode {
    pub id: i64,
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub tags: Tags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsmWay {
    pub id: i64,
    pub nodes: Vec<i64>,
    #[serde(default)]
    pub tags: Tags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    /// Ways dropped because they referenced node ids missing from the extract.
    pub dangling_way_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsmExtract {
    pub nodes: Vec<OsmNode>,
    pub ways: Vec<OsmWay>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreetVertex {
    pub id: i64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreetEdge {
    pub u: i64,
    pub v: i64,
    pub length_km: f64,
    pub way_id: i64,
}

/// Undirected walkable street graph with geodesic edge lengths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreetGraph {
    pub vertices: Vec<StreetVertex>,
    pub edges: Vec<StreetEdge>,
    /// Vertices discarded because they were outside the largest component.
    pub dropped_count: u32,
}

impl StreetGraph {
    pub fn vertex(&self, id: i64) -> Option<&StreetVertex> {
        self.vertices.iter().find(|v| v.id == id)
    }

    /// Adjacency list keyed by vertex id.
    pub fn adjacency(&self) -> HashMap<i64, Vec<(i64, f64)>> {
        let mut adj: HashMap<i64, Vec<(i64, f64)>> = HashMap::new();
        for v in &self.vertices {
            adj.entry(v.id).or_default();
        }
        for e in &self.edges {
            adj.entry(e.u).or_default().push((e.v, e.length_km));
            adj.entry(e.v).or_default().push((e.u, e.length_km));
        }
        adj
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Substation {
    pub id: i64,
    pub lat: f64,
    pub lon: f64,
    pub tags: Tags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransmissionWay {
    pub way_id: i64,
    pub polyline: Vec<(f64, f64)>,
    pub tags: Tags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub id: i64,
    pub lat: f64,
    pub lon: f64,
    pub tags: Tags,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PowerFeatures {
    pub substations: Vec<Substation>,
    pub transmission_ways: Vec<TransmissionWay>,
    pub generators: Vec<Generator>,
    pub buildings: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
struct RawDocument {
    elements: Vec<RawElement>,
}

#[derive(Deserialize)]
struct RawElement {
    #[serde(rename = "type")]
    kind: String,
    id: i64,
    #[serde(default)]
    lat: Option<f64>,
    #[serde(default)]
    lon: Option<f64>,
    #[serde(default)]
    nodes: Option<Vec<i64>>,
    #[serde(default)]
    tags: Option<Tags>,
}

/// Parse an Overpass-API result document (the standard element-array layout).
///
/// Ways referencing node ids absent from the document are dropped; the count
/// of dropped ways is recorded in the provenance.
pub fn parse_overpass_document(raw: &[u8]) -> Result<OsmExtract, OsmError> {
    parse_overpass_with_source(raw, "unknown")
}

pub fn parse_overpass_with_source(raw: &[u8], source: &str) -> Result<OsmExtract, OsmError> {
    let doc: RawDocument =
        serde_json::from_slice(raw).map_err(|e| OsmError::MalformedDocument(e.to_string()))?;
    let mut nodes = Vec::new();
    let mut ways = Vec::new();
    for el in doc.elements {
        match el.kind.as_str() {
            "node" => {
                let (lat, lon) = match (el.lat, el.lon) {
                    (Some(lat), Some(lon)) => (lat, lon),
                    _ => {
                        return Err(OsmError::MalformedDocument(format!(
                            "node {} has no coordinates",
                            el.id
                        )))
                    }
                };
                nodes.push(OsmNode { id: el.id, lat, lon, tags: el.tags.unwrap_or_default() });
            }
            "way" => {
                ways.push(OsmWay {
                    id: el.id,
                    nodes: el.nodes.unwrap_or_default(),
                    tags: el.tags.unwrap_or_default(),
                });
            }
            // relations and other element kinds are out of scope
            _ => {}
        }
    }
    if nodes.is_empty() {
        return Err(OsmError::EmptyExtract);
    }
    let known: HashSet<i64> = nodes.iter().map(|n| n.id).collect();
    let before = ways.len();
    ways.retain(|w| w.nodes.iter().all(|n| known.contains(n)));
    let dangling = (before - ways.len()) as u32;
    Ok(OsmExtract {
        nodes,
        ways,
        provenance: Provenance { source: source.to_string(), dangling_way_count: dangling },
    })
}

/// Pluggable geocoder hook mapping a text query to a (lat, lon) center.
/// The shipped default is unconfigured and raises `GeocodeUnavailable`.
pub trait Geocoder {
    fn geocode(&self, query: &str) -> Result<(f64, f64), OsmError>;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        // Overpass rate limits; start at 2 s and double
        RetryPolicy { max_attempts: 3, backoff_s: 2.0 }
    }
}

/// Build the Overpass QL request body for a region. Requests highways,
/// substations, power lines, generators/plants and buildings.
pub fn overpass_query(query: &RegionQuery, geocoder: Option<&dyn Geocoder>) -> Result<String, OsmError> {
    query.validate()?;
    let filter = match query {
        RegionQuery::Bbox { south, west, north, east } => {
            format!("({south},{west},{north},{east})")
        }
        RegionQuery::Point { center: (lat, lon), dist_m } => {
            format!("(around:{dist_m},{lat},{lon})")
        }
        RegionQuery::Address { address, dist_m } => {
            let gc = geocoder.ok_or(OsmError::GeocodeUnavailable)?;
            let (lat, lon) = gc.geocode(address)?;
            format!("(around:{dist_m},{lat},{lon})")
        }
        RegionQuery::City { city_name } => {
            let gc = geocoder.ok_or(OsmError::GeocodeUnavailable)?;
            let (lat, lon) = gc.geocode(city_name)?;
            // city queries fall back to a fixed 5 km radius around the geocode
            format!("(around:5000,{lat},{lon})")
        }
    };
    Ok(format!(
        "[out:json][timeout:180];(\
         way[\"highway\"]{f};\
         node[\"power\"=\"substation\"]{f};\
         way[\"power\"=\"substation\"]{f};\
         way[\"power\"=\"line\"]{f};\
         node[\"power\"=\"generator\"]{f};\
         node[\"power\"=\"plant\"]{f};\
         way[\"building\"]{f};\
         )->.a;(.a;>;);out body;",
        f = filter
    ))
}

/// Fetch a region from a live Overpass endpoint. Tests never rely on this;
/// the canonical input path is an offline Overpass-result file.
pub fn fetch_region(
    query: &RegionQuery,
    endpoint: &str,
    retry: &RetryPolicy,
    geocoder: Option<&dyn Geocoder>,
) -> Result<OsmExtract, OsmError> {
    let body = overpass_query(query, geocoder)?;
    let mut last_err = String::new();
    let mut backoff = retry.backoff_s;
    for attempt in 0..retry.max_attempts.max(1) {
        if attempt > 0 {
            std::thread::sleep(std::time::Duration::from_secs_f64(backoff));
            backoff *= 2.0;
        }
        match ureq::post(endpoint).send_string(&format!("data={}", urlencode(&body))) {
            Ok(resp) => {
                let mut bytes = Vec::new();
                use std::io::Read;
                if let Err(e) = resp.into_reader().read_to_end(&mut bytes) {
                    last_err = e.to_string();
                    continue;
                }
                return parse_overpass_with_source(&bytes, endpoint);
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(OsmError::NetworkError { attempts: retry.max_attempts, message: last_err })
}

fn urlencode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

/// Build the walkable street graph: one vertex per way-node used by a
/// highway-tagged way, one edge per consecutive node pair, haversine edge
/// lengths, largest connected component only.
pub fn extract_street_graph(extract: &OsmExtract) -> Result<StreetGraph, OsmError> {
    let coords: HashMap<i64, (f64, f64)> =
        extract.nodes.iter().map(|n| (n.id, (n.lat, n.lon))).collect();
    let mut edges = Vec::new();
    let mut used: HashSet<i64> = HashSet::new();
    let mut any_highway = false;
    for way in &extract.ways {
        if !way.tags.contains_key("highway") {
            continue;
        }
        any_highway = true;
        for pair in way.nodes.windows(2) {
            let (u, v) = (pair[0], pair[1]);
            if u == v {
                continue;
            }
            let (alat, alon) = coords[&u];
            let (blat, blon) = coords[&v];
            let length_km = haversine_km(alat, alon, blat, blon);
            if length_km <= 0.0 {
                continue; // coincident nodes
            }
            used.insert(u);
            used.insert(v);
            edges.push(StreetEdge { u, v, length_km, way_id: way.id });
        }
    }
    if !any_highway {
        return Err(OsmError::NoStreets);
    }

    // keep only the largest connected component
    let mut adj: HashMap<i64, Vec<i64>> = HashMap::new();
    for e in &edges {
        adj.entry(e.u).or_default().push(e.v);
        adj.entry(e.v).or_default().push(e.u);
    }
    let mut seen: HashSet<i64> = HashSet::new();
    let mut best: HashSet<i64> = HashSet::new();
    let mut ids: Vec<i64> = used.iter().copied().collect();
    ids.sort_unstable();
    for start in ids {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = HashSet::new();
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            if !comp.insert(x) {
                continue;
            }
            seen.insert(x);
            for &y in adj.get(&x).into_iter().flatten() {
                if !comp.contains(&y) {
                    stack.push(y);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    let dropped_count = (used.len() - best.len()) as u32;
    edges.retain(|e| best.contains(&e.u) && best.contains(&e.v));
    let mut vertices: Vec<StreetVertex> = best
        .iter()
        .map(|id| {
            let (lat, lon) = coords[id];
            StreetVertex { id: *id, lat, lon }
        })
        .collect();
    vertices.sort_by_key(|v| v.id);
    edges.sort_by(|a, b| (a.u, a.v, a.way_id).cmp(&(b.u, b.v, b.way_id)));
    Ok(StreetGraph { vertices, edges, dropped_count })
}

/// Pull substations, transmission ways, generators and building centroids
/// out of an extract. All lists may be empty.
pub fn extract_power_features(extract: &OsmExtract) -> PowerFeatures {
    let coords: HashMap<i64, (f64, f64)> =
        extract.nodes.iter().map(|n| (n.id, (n.lat, n.lon))).collect();
    let mut features = PowerFeatures::default();
    for node in &extract.nodes {
        match node.tags.get("power").map(String::as_str) {
            Some("substation") => features.substations.push(Substation {
                id: node.id,
                lat: node.lat,
                lon: node.lon,
                tags: node.tags.clone(),
            }),
            Some("generator") | Some("plant") => features.generators.push(Generator {
                id: node.id,
                lat: node.lat,
                lon: node.lon,
                tags: node.tags.clone(),
            }),
            _ => {}
        }
    }
    for way in &extract.ways {
        match way.tags.get("power").map(String::as_str) {
            Some("substation") => {
                if let Some((lat, lon)) = way_centroid(way, &coords) {
                    features.substations.push(Substation {
                        id: way.id,
                        lat,
                        lon,
                        tags: way.tags.clone(),
                    });
                }
            }
            Some("line") => {
                let polyline: Vec<(f64, f64)> =
                    way.nodes.iter().map(|n| coords[n]).collect();
                if polyline.len() >= 2 {
                    features.transmission_ways.push(TransmissionWay {
                        way_id: way.id,
                        polyline,
                        tags: way.tags.clone(),
                    });
                }
            }
            _ => {}
        }
        if way.tags.contains_key("building") {
            if let Some(c) = way_centroid(way, &coords) {
                features.buildings.push(c);
            }
        }
    }
    features
}

/// Arithmetic centroid of a way's distinct vertices (closed ways reduce to
/// the mean of their ring vertices, first==last counted once).
fn way_centroid(way: &OsmWay, coords: &HashMap<i64, (f64, f64)>) -> Option<(f64, f64)> {
    let mut pts: Vec<i64> = way.nodes.clone();
    if pts.len() >= 2 && pts.first() == pts.last() {
        pts.pop();
    }
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    let (mut lat, mut lon) = (0.0, 0.0);
    for id in &pts {
        let (a, b) = coords.get(id)?;
        lat += a;
        lon += b;
    }
    Some((lat / n, lon / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(nodes: &[(i64, f64, f64, &[(&str, &str)])], ways: &[(i64, &[i64], &[(&str, &str)])]) -> Vec<u8> {
        let mut elements = Vec::new();
        for (id, lat, lon, tags) in nodes {
            let tags: Tags =
                tags.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            elements.push(serde_json::json!({"type":"node","id":id,"lat":lat,"lon":lon,"tags":tags}));
        }
        for (id, refs, tags) in ways {
            let tags: Tags =
                tags.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            elements.push(serde_json::json!({"type":"way","id":id,"nodes":refs,"tags":tags}));
        }
        serde_json::to_vec(&serde_json::json!({"version":0.6,"elements":elements})).unwrap()
    }

    #[test]
    fn identity_capture() {
        let raw = doc(
            &[(1, 0.0, 0.0, &[]), (2, 0.0, 0.01, &[])],
            &[(10, &[1, 2], &[("highway", "residential")])],
        );
        let ex = parse_overpass_document(&raw).unwrap();
        assert_eq!(ex.nodes.len(), 2);
        assert_eq!(ex.ways.len(), 1);
        assert_eq!(ex.provenance.dangling_way_count, 0);
    }

    #[test]
    fn dangling_way_dropped() {
        let raw = doc(&[(1, 0.0, 0.0, &[])], &[(10, &[1, 99], &[])]);
        let ex = parse_overpass_document(&raw).unwrap();
        assert_eq!(ex.ways.len(), 0);
        assert_eq!(ex.provenance.dangling_way_count, 1);
    }

    #[test]
    fn malformed_and_empty() {
        assert!(matches!(
            parse_overpass_document(b"not json"),
            Err(OsmError::MalformedDocument(_))
        ));
        let raw = serde_json::to_vec(&serde_json::json!({"elements": []})).unwrap();
        assert!(matches!(parse_overpass_document(&raw), Err(OsmError::EmptyExtract)));
    }

    #[test]
    fn parse_serialize_idempotent() {
        let raw = doc(
            &[(1, 0.0, 0.0, &[("power", "substation")]), (2, 0.0, 0.01, &[])],
            &[(10, &[1, 2], &[("highway", "service")])],
        );
        let ex = parse_overpass_document(&raw).unwrap();
        let ser = serde_json::to_vec(&ex).unwrap();
        let back: OsmExtract = serde_json::from_slice(&ser).unwrap();
        assert_eq!(ex, back);
    }

    #[test]
    fn street_graph_two_nodes_one_km() {
        // ~1 km along a meridian: 1/111.195 degrees of latitude
        let dlat = 1.0 / 111.195;
        let raw = doc(
            &[(1, 0.0, 0.0, &[]), (2, dlat, 0.0, &[])],
            &[(10, &[1, 2], &[("highway", "residential")])],
        );
        let g = extract_street_graph(&parse_overpass_document(&raw).unwrap()).unwrap();
        assert_eq!(g.vertices.len(), 2);
        assert_eq!(g.edges.len(), 1);
        assert!((g.edges[0].length_km - 1.0).abs() < 1e-4, "{}", g.edges[0].length_km);
    }

    #[test]
    fn no_streets() {
        let raw = doc(
            &[(1, 0.0, 0.0, &[]), (2, 0.0, 0.01, &[])],
            &[(10, &[1, 2], &[("power", "line")])],
        );
        assert!(matches!(
            extract_street_graph(&parse_overpass_document(&raw).unwrap()),
            Err(OsmError::NoStreets)
        ));
    }

    #[test]
    fn largest_component_kept() {
        // component A: chain of 10 nodes; component B: chain of 3 nodes
        let mut nodes: Vec<(i64, f64, f64, &[(&str, &str)])> = Vec::new();
        for i in 0..10 {
            nodes.push((i, 0.001 * i as f64, 0.0, &[]));
        }
        for i in 100..103 {
            nodes.push((i, 0.001 * i as f64, 1.0, &[]));
        }
        let a: Vec<i64> = (0..10).collect();
        let b: Vec<i64> = (100..103).collect();
        let raw = doc(&nodes, &[
            (10, &a, &[("highway", "residential")]),
            (11, &b, &[("highway", "residential")]),
        ]);
        let g = extract_street_graph(&parse_overpass_document(&raw).unwrap()).unwrap();
        assert_eq!(g.vertices.len(), 10);
        assert_eq!(g.dropped_count, 3);
    }

    #[test]
    fn power_features() {
        let raw = doc(
            &[
                (1, 0.0, 0.0, &[("power", "substation")]),
                (2, 1.0, 0.0, &[]),
                (3, 1.0, 1.0, &[]),
                (4, 0.0, 1.0, &[]),
                (5, 0.5, 0.5, &[("power", "generator")]),
            ],
            &[(10, &[2, 3, 4, 2], &[("power", "substation")])],
        );
        let ex = parse_overpass_document(&raw).unwrap();
        let f = extract_power_features(&ex);
        assert_eq!(f.substations.len(), 2);
        assert_eq!(f.generators.len(), 1);
        // closed-way substation reduces to the arithmetic centroid of its ring
        let way_sub = f.substations.iter().find(|s| s.id == 10).unwrap();
        assert!((way_sub.lat - 2.0 / 3.0).abs() < 1e-12);
        assert!((way_sub.lon - 2.0 / 3.0).abs() < 1e-12);
        // never outside the node bounding box
        for s in &f.substations {
            assert!(s.lat >= 0.0 && s.lat <= 1.0 && s.lon >= 0.0 && s.lon <= 1.0);
        }
    }

    #[test]
    fn power_tags_absent() {
        let raw = doc(&[(1, 0.0, 0.0, &[])], &[]);
        let f = extract_power_features(&parse_overpass_document(&raw).unwrap());
        assert!(f.substations.is_empty());
        assert!(f.transmission_ways.is_empty());
        assert!(f.generators.is_empty());
        assert!(f.buildings.is_empty());
    }

    #[test]
    fn degenerate_bbox_rejected_before_network() {
        let q = RegionQuery::Bbox { south: 1.0, west: 0.0, north: 1.0, east: 2.0 };
        assert!(matches!(overpass_query(&q, None), Err(OsmError::InvalidRegion(_))));
    }

    #[test]
    fn address_without_geocoder() {
        let q = RegionQuery::Address { address: "Sao Paulo, Brazil".into(), dist_m: 1500.0 };
        assert!(matches!(overpass_query(&q, None), Err(OsmError::GeocodeUnavailable)));
    }
}
