//! GeoJSON rendering of a topology, optionally enriched with one sample's
//! electrical attributes. Coordinates are lon-lat per RFC 7946.

use std::path::Path;

use serde_json::{json, Value};

use crate::synthesis::GridSample;
use crate::topology::{BusKind, GridTopology};

use super::GridIoError;

pub fn build_geojson(topology: &GridTopology, sample: Option<&GridSample>) -> Value {
    let kind_str = |k: BusKind| match k {
        BusKind::Substation => "substation",
        BusKind::Mv => "mv",
        BusKind::Lv => "lv",
    };
    let mut features = Vec::new();
    for b in &topology.buses {
        let mut props = json!({
            "element": "bus",
            "id": b.id,
            "kind": kind_str(b.kind),
            "feeder": b.feeder,
        });
        if let Some(z) = topology.zones.node_zone.get(&b.id) {
            props["zone"] = json!(z);
        }
        if let Some(s) = sample {
            let attrs = &s.node[&b.id];
            props["phase"] = json!(attrs.phase.name());
            props["p_kw"] = json!(attrs.p_kw.iter().sum::<f64>());
            props["q_kvar"] = json!(attrs.q_kvar.iter().sum::<f64>());
        }
        features.push(json!({
            "type": "Feature",
            "geometry": { "type": "Point", "coordinates": [b.lon, b.lat] },
            "properties": props,
        }));
    }
    for br in &topology.branches {
        let from = topology.bus(br.from_bus);
        let to = topology.bus(br.to_bus);
        let mut props = json!({
            "element": "line",
            "id": br.id,
            "length_km": br.length_km,
        });
        if let Some(z) = topology.zones.line_zone.get(&br.id) {
            props["zone"] = json!(z);
        }
        if let Some(s) = sample {
            let attrs = &s.line[&br.id];
            props["phases"] = json!(s.node[&br.to_bus].phase.name());
            props["r1_ohm"] = json!(attrs.r1_ohm);
            props["x1_ohm"] = json!(attrs.x1_ohm);
        }
        features.push(json!({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[from.lon, from.lat], [to.lon, to.lat]],
            },
            "properties": props,
        }));
    }
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn write_geojson(
    topology: &GridTopology,
    sample: Option<&GridSample>,
    out: &Path,
) -> Result<(), GridIoError> {
    let doc = build_geojson(topology, sample);
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("geojson serializes");
    bytes.push(b'\n');
    std::fs::write(out, bytes)?;
    Ok(())
}
