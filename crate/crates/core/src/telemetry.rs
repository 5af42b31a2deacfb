//! Export of per-query records (`evals.csv`) and their aggregate (`summary.json`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptive::{EvalRecord, PhaseTimes, Tier, ToleranceEvent};
use crate::error::Result;

/// Columns following the parameter columns `mu_0 .. mu_{p-1}`.
pub const TRAILING_COLUMNS: [&str; 15] = [
    "tier",
    "delta_ml",
    "delta_rb",
    "eps",
    "t_ml_est",
    "t_ml_eval",
    "t_rb_est",
    "t_rb_eval",
    "t_fom",
    "t_rb_build",
    "t_ml_build",
    "basis_dim",
    "ml_size",
    "value",
    "retrained",
];

pub fn csv_header(param_dim: usize) -> Vec<String> {
    let mut h = vec!["index".to_string()];
    h.extend((0..param_dim).map(|i| format!("mu_{i}")));
    h.extend(TRAILING_COLUMNS.iter().map(|s| s.to_string()));
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TierShares {
    pub ml: f64,
    pub rb: f64,
    pub fom: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub evals: usize,
    pub tier_counts: TierShares,
    pub tier_fractions: TierShares,
    pub total_times: PhaseTimes,
    pub final_basis_dim: usize,
    pub final_ml_size: usize,
    pub retrainings: usize,
    pub tolerance_events: Vec<ToleranceEvent>,
}

pub fn summarize(records: &[EvalRecord], events: &[ToleranceEvent]) -> Summary {
    let mut s = Summary { evals: records.len(), tolerance_events: events.to_vec(), ..Default::default() };
    for r in records {
        match r.tier {
            Tier::Ml => s.tier_counts.ml += 1.0,
            Tier::Rb => s.tier_counts.rb += 1.0,
            Tier::Fom => s.tier_counts.fom += 1.0,
        }
        let (t, x) = (&mut s.total_times, &r.times);
        t.ml_est += x.ml_est;
        t.ml_eval += x.ml_eval;
        t.rb_est += x.rb_est;
        t.rb_eval += x.rb_eval;
        t.fom += x.fom;
        t.rb_build += x.rb_build;
        t.ml_build += x.ml_build;
        s.retrainings += usize::from(r.retrained);
    }
    if let Some(last) = records.last() {
        s.final_basis_dim = last.basis_dim;
        s.final_ml_size = last.ml_size;
        let n = records.len() as f64;
        s.tier_fractions =
            TierShares { ml: s.tier_counts.ml / n, rb: s.tier_counts.rb / n, fom: s.tier_counts.fom / n };
    }
    s
}

/// Writes `evals.csv` and `summary.json` into `dir` (created if missing).
pub fn export_telemetry(records: &[EvalRecord], events: &[ToleranceEvent], param_dim: usize, dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("evals.csv"))?;
    w.write_record(csv_header(param_dim))?;
    for r in records {
        let t = &r.times;
        let mut row = vec![r.index.to_string()];
        row.extend(r.mu.iter().map(|v| v.to_string()));
        row.extend([
            r.tier.as_str().to_string(),
            opt(r.delta_ml),
            opt(r.delta_rb),
            r.epsilon.to_string(),
            t.ml_est.to_string(),
            t.ml_eval.to_string(),
            t.rb_est.to_string(),
            t.rb_eval.to_string(),
            t.fom.to_string(),
            t.rb_build.to_string(),
            t.ml_build.to_string(),
            r.basis_dim.to_string(),
            r.ml_size.to_string(),
            opt(r.value),
            u8::from(r.retrained).to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    let summary = summarize(records, events);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
