//! DSS circuit text writer and the matching (writer-grammar-only) parser.
//! The round trip write -> parse -> write is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use crate::phase::Phase;
use crate::synthesis::GridSample;
use crate::topology::{BusKind, GridTopology};

use super::{fmt_sig, GridIoError};

#[derive(Debug, Clone, PartialEq)]
pub struct DssCircuitHeader {
    pub name: String,
    pub basekv: f64,
    pub source_bus: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DssTransformer {
    pub name: String,
    pub hv_bus: String,
    pub lv_bus: String,
    pub kv_hv: f64,
    pub kv_lv: f64,
    pub kva: f64,
    pub xhl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DssLine {
    pub name: String,
    pub bus1: String,
    pub bus2: String,
    pub phase: Phase,
    /// Per-km values; `length` carries the km.
    pub r1: f64,
    pub x1: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DssLoad {
    pub name: String,
    pub bus: String,
    /// 1 = A, 2 = B, 3 = C.
    pub terminal: u8,
    pub kv: f64,
    pub kw: f64,
    pub kvar: f64,
}

/// Ordered statement list of one exported circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct DssCircuit {
    pub header: DssCircuitHeader,
    pub transformers: Vec<DssTransformer>,
    pub lines: Vec<DssLine>,
    pub loads: Vec<DssLoad>,
}

fn bus_name(id: u32) -> String {
    format!("bus_{id}")
}

/// Dot-notation terminals of a phase set ("1.2" for AB).
fn terminals(phase: Phase) -> String {
    phase
        .active_slots()
        .map(|s| (s + 1).to_string())
        .collect::<Vec<_>>()
        .join(".")
}

/// Assemble the export circuit from one sample on its topology. Line phase
/// sets follow the downstream bus; loads get one statement per active phase.
pub fn build_dss_circuit(sample: &GridSample, topology: &GridTopology) -> DssCircuit {
    let basekv = topology
        .transmission
        .hv_buses
        .first()
        .map(|b| b.voltage_kv)
        .unwrap_or_else(|| topology.buses.first().map(|b| b.voltage_kv).unwrap_or(138.0));
    let header = DssCircuitHeader {
        name: "gridsynth".to_string(),
        basekv,
        source_bus: "sourcebus".to_string(),
    };

    let transformers = topology
        .transformers
        .iter()
        .map(|t| DssTransformer {
            name: format!("trafo_{}", t.id),
            hv_bus: bus_name(t.hv_bus),
            lv_bus: bus_name(t.lv_bus),
            kv_hv: topology.bus(t.hv_bus).voltage_kv,
            kv_lv: topology.bus(t.lv_bus).voltage_kv,
            kva: t.rating_kva,
            xhl: t.vk_percent,
        })
        .collect();

    let lines = topology
        .branches
        .iter()
        .map(|b| {
            let attrs = &sample.line[&b.id];
            let phase = sample.node[&b.to_bus].phase;
            DssLine {
                name: format!("line_{}", b.id),
                bus1: bus_name(b.from_bus),
                bus2: bus_name(b.to_bus),
                phase,
                r1: attrs.r1_ohm / b.length_km,
                x1: attrs.x1_ohm / b.length_km,
                length: b.length_km,
            }
        })
        .collect();

    let mut loads = Vec::new();
    for bus in &topology.buses {
        if bus.kind == BusKind::Substation {
            continue;
        }
        let attrs = &sample.node[&bus.id];
        let kv_phase = bus.voltage_kv / 3f64.sqrt();
        for slot in attrs.phase.active_slots() {
            if attrs.p_kw[slot] == 0.0 && attrs.q_kvar[slot] == 0.0 {
                continue;
            }
            loads.push(DssLoad {
                name: format!("load_{}_{}", bus.id, slot + 1),
                bus: bus_name(bus.id),
                terminal: slot as u8 + 1,
                kv: kv_phase,
                kw: attrs.p_kw[slot],
                kvar: attrs.q_kvar[slot],
            });
        }
    }

    DssCircuit { header, transformers, lines, loads }
}

pub fn write_dss_string(circuit: &DssCircuit) -> String {
    let mut out = String::new();
    let h = &circuit.header;
    out.push_str(&format!(
        "new circuit.{} basekv={} pu=1.0 bus1={}\n",
        h.name,
        fmt_sig(h.basekv),
        h.source_bus
    ));
    for t in &circuit.transformers {
        out.push_str(&format!(
            "new transformer.{} phases=3 windings=2 buses=({}, {}) kvs=({}, {}) kvas=({}, {}) xhl={}\n",
            t.name,
            t.hv_bus,
            t.lv_bus,
            fmt_sig(t.kv_hv),
            fmt_sig(t.kv_lv),
            fmt_sig(t.kva),
            fmt_sig(t.kva),
            fmt_sig(t.xhl)
        ));
    }
    for l in &circuit.lines {
        let term = terminals(l.phase);
        out.push_str(&format!(
            "new line.{} bus1={}.{} bus2={}.{} r1={} x1={} length={} units=km phases={}\n",
            l.name,
            l.bus1,
            term,
            l.bus2,
            term,
            fmt_sig(l.r1),
            fmt_sig(l.x1),
            fmt_sig(l.length),
            l.phase.count()
        ));
    }
    for l in &circuit.loads {
        out.push_str(&format!(
            "new load.{} bus1={}.{} phases=1 kv={} kw={} kvar={} model=1\n",
            l.name,
            l.bus,
            l.terminal,
            fmt_sig(l.kv),
            fmt_sig(l.kw),
            fmt_sig(l.kvar)
        ));
    }
    out
}

pub fn write_opendss(
    sample: &GridSample,
    topology: &GridTopology,
    out_dir: &Path,
) -> Result<(), GridIoError> {
    std::fs::create_dir_all(out_dir)?;
    let circuit = build_dss_circuit(sample, topology);
    std::fs::write(out_dir.join("master.dss"), write_dss_string(&circuit))?;
    Ok(())
}

/// Whitespace tokenizer that keeps parenthesized groups (with their inner
/// spaces) intact.
fn tokenize(line: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut depth = 0u32;
    for ch in line.chars() {
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(ch);
            }
            c if c.is_whitespace() && depth == 0 => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

struct Fields {
    line_no: usize,
    map: BTreeMap<String, String>,
}

impl Fields {
    fn get(&self, key: &str) -> Result<&str, GridIoError> {
        self.map.get(key).map(|s| s.as_str()).ok_or_else(|| GridIoError::MalformedStatement {
            line: self.line_no,
            msg: format!("missing field `{key}`"),
        })
    }

    fn num(&self, key: &str) -> Result<f64, GridIoError> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| GridIoError::MalformedStatement {
            line: self.line_no,
            msg: format!("{key}={raw} is not a number"),
        })
    }

    /// "(a, b)" -> [a, b]
    fn pair(&self, key: &str) -> Result<(String, String), GridIoError> {
        let raw = self.get(key)?;
        let inner = raw
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(|| GridIoError::MalformedStatement {
                line: self.line_no,
                msg: format!("{key}={raw} is not a parenthesized pair"),
            })?;
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(GridIoError::MalformedStatement {
                line: self.line_no,
                msg: format!("{key}={raw} must hold two values"),
            });
        }
        Ok((parts[0].to_string(), parts[1].to_string()))
    }
}

fn split_bus_terminals(line_no: usize, spec: &str) -> Result<(String, Phase), GridIoError> {
    let mut parts = spec.splitn(2, '.');
    let bus = parts.next().unwrap_or_default().to_string();
    let terms = parts.next().ok_or_else(|| GridIoError::MalformedStatement {
        line: line_no,
        msg: format!("bus spec `{spec}` lacks terminals"),
    })?;
    let mut mask = 0u8;
    for t in terms.split('.') {
        match t {
            "1" => mask |= 0b001,
            "2" => mask |= 0b010,
            "3" => mask |= 0b100,
            other => {
                return Err(GridIoError::MalformedStatement {
                    line: line_no,
                    msg: format!("bad terminal `{other}`"),
                })
            }
        }
    }
    let phase = Phase::from_mask(mask).ok_or_else(|| GridIoError::MalformedStatement {
        line: line_no,
        msg: format!("empty terminal list in `{spec}`"),
    })?;
    Ok((bus, phase))
}

pub fn parse_dss_string(text: &str) -> Result<DssCircuit, GridIoError> {
    let mut header = None;
    let mut transformers = Vec::new();
    let mut lines = Vec::new();
    let mut loads = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with("//") || trimmed.starts_with('!') {
            continue;
        }
        let tokens = tokenize(trimmed);
        if tokens.len() < 2 || tokens[0] != "new" {
            return Err(GridIoError::MalformedStatement {
                line: line_no,
                msg: format!("expected `new <element>.<name>`, got `{trimmed}`"),
            });
        }
        let (element, name) = tokens[1].split_once('.').ok_or_else(|| {
            GridIoError::MalformedStatement {
                line: line_no,
                msg: format!("`{}` lacks an element name", tokens[1]),
            }
        })?;
        let mut map = BTreeMap::new();
        for tok in &tokens[2..] {
            if let Some((k, v)) = tok.split_once('=') {
                map.insert(k.to_string(), v.to_string());
            }
        }
        let f = Fields { line_no, map };
        match element {
            "circuit" => {
                header = Some(DssCircuitHeader {
                    name: name.to_string(),
                    basekv: f.num("basekv")?,
                    source_bus: f.get("bus1")?.to_string(),
                });
            }
            "transformer" => {
                let (hv_bus, lv_bus) = f.pair("buses")?;
                let (kv_hv, kv_lv) = f.pair("kvs")?;
                let (kva, _) = f.pair("kvas")?;
                let parse = |v: &str| -> Result<f64, GridIoError> {
                    v.parse().map_err(|_| GridIoError::MalformedStatement {
                        line: line_no,
                        msg: format!("`{v}` is not a number"),
                    })
                };
                transformers.push(DssTransformer {
                    name: name.to_string(),
                    hv_bus,
                    lv_bus,
                    kv_hv: parse(&kv_hv)?,
                    kv_lv: parse(&kv_lv)?,
                    kva: parse(&kva)?,
                    xhl: f.num("xhl")?,
                });
            }
            "line" => {
                let (bus1, phase) = split_bus_terminals(line_no, f.get("bus1")?)?;
                let (bus2, phase2) = split_bus_terminals(line_no, f.get("bus2")?)?;
                if phase != phase2 {
                    return Err(GridIoError::MalformedStatement {
                        line: line_no,
                        msg: "line terminal sets differ between bus1 and bus2".into(),
                    });
                }
                lines.push(DssLine {
                    name: name.to_string(),
                    bus1,
                    bus2,
                    phase,
                    r1: f.num("r1")?,
                    x1: f.num("x1")?,
                    length: f.num("length")?,
                });
            }
            "load" => {
                let spec = f.get("bus1")?;
                let (bus, phase) = split_bus_terminals(line_no, spec)?;
                if phase.count() != 1 {
                    return Err(GridIoError::MalformedStatement {
                        line: line_no,
                        msg: format!("load `{spec}` must connect one terminal"),
                    });
                }
                loads.push(DssLoad {
                    name: name.to_string(),
                    bus,
                    terminal: phase.active_slots().next().unwrap() as u8 + 1,
                    kv: f.num("kv")?,
                    kw: f.num("kw")?,
                    kvar: f.num("kvar")?,
                });
            }
            other => {
                return Err(GridIoError::UnsupportedStatement {
                    line: line_no,
                    stmt: format!("new {other}.{name}"),
                });
            }
        }
    }

    let header = header.ok_or_else(|| GridIoError::MalformedStatement {
        line: 0,
        msg: "no circuit header found".into(),
    })?;
    Ok(DssCircuit { header, transformers, lines, loads })
}

pub fn parse_opendss(dir: &Path) -> Result<DssCircuit, GridIoError> {
    let text = std::fs::read_to_string(dir.join("master.dss"))?;
    parse_dss_string(&text)
}
