//! Ensemble statistics CSV: per-category phase frequencies plus demand,
//! impedance and reliability aggregates, each with mean and HDI.

use std::path::Path;

use crate::bayes::hdi::compute_hdi;
use crate::phase::PHASE_ORDER;
use crate::synthesis::Ensemble;

use super::GridIoError;

#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub metric: String,
    pub mean: f64,
    pub hdi_lo: f64,
    pub hdi_hi: f64,
}

/// One value per sample for each reported metric. Phase rows are in percent
/// of load-carrying buses; CAIFI is interruptions per affected bus, CAIDI
/// mean interruption duration (h) weighted by interruption count.
pub fn ensemble_stats(ensemble: &Ensemble, hdi_mass: f64) -> Result<Vec<StatsRow>, GridIoError> {
    if ensemble.samples.is_empty() {
        return Err(GridIoError::EmptyEnsemble);
    }
    let n = ensemble.samples.len();
    let mut phase_freq = vec![Vec::with_capacity(n); 7];
    let mut total_p = Vec::with_capacity(n);
    let mut total_q = Vec::with_capacity(n);
    let mut mean_r = Vec::with_capacity(n);
    let mut mean_x = Vec::with_capacity(n);
    let mut caifi = Vec::with_capacity(n);
    let mut caidi = Vec::with_capacity(n);

    for s in &ensemble.samples {
        let mut counts = [0usize; 7];
        let mut loaded = 0usize;
        let (mut p, mut q) = (0.0, 0.0);
        let (mut ints, mut affected, mut dur) = (0u64, 0usize, 0.0);
        for attrs in s.node.values() {
            let bus_p: f64 = attrs.p_kw.iter().sum();
            let bus_q: f64 = attrs.q_kvar.iter().sum();
            p += bus_p;
            q += bus_q;
            if bus_p > 0.0 {
                counts[attrs.phase.index()] += 1;
                loaded += 1;
            }
            if attrs.interruptions_per_year > 0 {
                ints += attrs.interruptions_per_year as u64;
                affected += 1;
                dur += attrs.interruption_duration_h * attrs.interruptions_per_year as f64;
            }
        }
        for (i, c) in counts.iter().enumerate() {
            phase_freq[i].push(if loaded > 0 { 100.0 * *c as f64 / loaded as f64 } else { 0.0 });
        }
        total_p.push(p);
        total_q.push(q);
        let lines = s.line.len().max(1) as f64;
        mean_r.push(s.line.values().map(|l| l.r1_ohm).sum::<f64>() / lines);
        mean_x.push(s.line.values().map(|l| l.x1_ohm).sum::<f64>() / lines);
        caifi.push(if affected > 0 { ints as f64 / affected as f64 } else { 0.0 });
        caidi.push(if ints > 0 { dur / ints as f64 } else { 0.0 });
    }

    let mut rows = Vec::with_capacity(13);
    let mut push = |metric: &str, values: &[f64]| -> Result<(), GridIoError> {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (lo, hi) = compute_hdi(values, hdi_mass)?;
        rows.push(StatsRow { metric: metric.to_string(), mean, hdi_lo: lo, hdi_hi: hi });
        Ok(())
    };
    for (i, phase) in PHASE_ORDER.iter().enumerate() {
        push(phase.name(), &phase_freq[i])?;
    }
    push("total_p_kw", &total_p)?;
    push("total_q_kvar", &total_q)?;
    push("mean_r_ohm", &mean_r)?;
    push("mean_x_ohm", &mean_x)?;
    push("caifi", &caifi)?;
    push("caidi", &caidi)?;
    Ok(rows)
}

pub fn write_ensemble_stats(
    ensemble: &Ensemble,
    hdi_mass: f64,
    out: &Path,
) -> Result<Vec<StatsRow>, GridIoError> {
    let rows = ensemble_stats(ensemble, hdi_mass)?;
    let mut w = csv::Writer::from_path(out).map_err(|e| GridIoError::MalformedStatement {
        line: 0,
        msg: e.to_string(),
    })?;
    w.write_record(["metric", "mean", "hdi_lo", "hdi_hi"]).map_err(io_err)?;
    for r in &rows {
        w.write_record([
            r.metric.as_str(),
            &r.mean.to_string(),
            &r.hdi_lo.to_string(),
            &r.hdi_hi.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush()?;
    Ok(rows)
}

fn io_err(e: csv::Error) -> GridIoError {
    GridIoError::MalformedStatement { line: 0, msg: e.to_string() }
}
