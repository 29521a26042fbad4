//! Evaluation tables, error distributions, parameter statistics and run manifests.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::dc::{DcParameters, Provenance};
use crate::error::{Error, Result};
use crate::loss::{Evaluator, LossValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub tool_version: String,
    pub case_checksum: String,
    pub dataset_checksum: Option<String>,
    pub seed: Option<u64>,
    pub started_unix_s: u64,
    pub finished_unix_s: Option<u64>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn start(case_checksum: &str) -> Self {
        RunManifest {
            command_line: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            case_checksum: case_checksum.into(),
            dataset_checksum: None,
            seed: None,
            started_unix_s: unix_now(),
            finished_unix_s: None,
        }
    }

    pub fn finish(mut self) -> Self {
        self.finished_unix_s = Some(unix_now());
        self
    }
}

/// Improvement factor `reference / value`; `None` when `value` is an exact fit.
fn factor(reference: f64, value: f64) -> Option<f64> {
    (value > 0.0).then(|| reference / value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub vs_cold: Option<f64>,
    pub vs_cold_r0: Option<f64>,
    pub vs_hot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub provenance: Provenance,
    pub loss: LossValue,
    /// Zero residual on every scenario.
    pub exact_fit: bool,
    pub sq_two_norm_factors: Factors,
    pub inf_norm_factors: Factors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

/// Scores every set on `ev`. Factors are relative to the cold, cold-r0 and
/// hot starts, which are evaluated here if not among `sets`.
pub fn evaluate_table(ev: &Evaluator, sets: &[(String, DcParameters)], refs: &References) -> Result<EvalTable> {
    let r = |p: &Option<DcParameters>| -> Result<Option<LossValue>> { p.as_ref().map(|p| ev.loss(p)).transpose() };
    let (cold, cold_r0, hot) = (r(&refs.cold)?, r(&refs.cold_r0)?, r(&refs.hot)?);
    let make = |value: &LossValue, pick: fn(&LossValue) -> f64| Factors {
        vs_cold: cold.and_then(|c| factor(pick(&c), pick(value))),
        vs_cold_r0: cold_r0.and_then(|c| factor(pick(&c), pick(value))),
        vs_hot: hot.and_then(|c| factor(pick(&c), pick(value))),
    };
    let mut rows = Vec::with_capacity(sets.len());
    for (label, p) in sets {
        let loss = ev.loss(p)?;
        rows.push(EvalRow {
            label: label.clone(),
            provenance: p.provenance,
            exact_fit: loss.inf_norm == 0.0,
            sq_two_norm_factors: make(&loss, |l| l.sq_two_norm),
            inf_norm_factors: make(&loss, |l| l.inf_norm),
            loss,
        });
    }
    Ok(EvalTable { rows })
}

/// Reference sets for improvement factors.
#[derive(Debug, Clone, Default)]
pub struct References {
    pub cold: Option<DcParameters>,
    pub cold_r0: Option<DcParameters>,
    pub hot: Option<DcParameters>,
}

impl EvalTable {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "label,provenance,sq_two_norm,inf_norm,n_scenarios,mean_sq_two_norm,exact_fit,\
             sq_factor_vs_cold,sq_factor_vs_cold_r0,sq_factor_vs_hot,\
             inf_factor_vs_cold,inf_factor_vs_cold_r0,inf_factor_vs_hot"
        )?;
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "exact".into());
        for r in &self.rows {
            let prov = serde_json::to_value(r.provenance)?;
            writeln!(
                w,
                "{},{},{:e},{:e},{},{:e},{},{},{},{},{},{},{}",
                r.label,
                prov.as_str().unwrap_or_default(),
                r.loss.sq_two_norm,
                r.loss.inf_norm,
                r.loss.n_scenarios,
                r.loss.mean_sq_two_norm,
                r.exact_fit,
                cell(r.sq_two_norm_factors.vs_cold),
                cell(r.sq_two_norm_factors.vs_cold_r0),
                cell(r.sq_two_norm_factors.vs_hot),
                cell(r.inf_norm_factors.vs_cold),
                cell(r.inf_norm_factors.vs_cold_r0),
                cell(r.inf_norm_factors.vs_hot),
            )?;
        }
        Ok(())
    }
}

/// Absolute flow errors `|p_dc - p_ac|` over all scenarios and branches, sorted.
pub fn error_samples(ev: &Evaluator, params: &DcParameters) -> Result<Vec<f64>> {
    let mut e: Vec<f64> = ev.residuals(params)?.into_iter().map(f64::abs).collect();
    e.sort_by(f64::total_cmp);
    Ok(e)
}

/// Empirical CDF rows `label,abs_error,cdf` for sorted samples.
pub fn write_cdf_csv(mut w: impl Write, series: &[(String, Vec<f64>)]) -> Result<()> {
    writeln!(w, "label,abs_error,cdf")?;
    for (label, sorted) in series {
        let n = sorted.len() as f64;
        for (k, v) in sorted.iter().enumerate() {
            writeln!(w, "{label},{v:e},{}", (k + 1) as f64 / n)?;
        }
    }
    Ok(())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub p90: f64,
    /// Most extreme samples within 1.5 IQR of the box.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<BoxStats> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&s, 0.25), quantile(&s, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = s.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence);
        let whisker_low = inside.clone().fold(f64::INFINITY, f64::min);
        let whisker_high = inside.fold(f64::NEG_INFINITY, f64::max);
        Some(BoxStats {
            n: s.len(),
            min: s[0],
            q1,
            median: quantile(&s, 0.5),
            q3,
            max: s[s.len() - 1],
            p90: quantile(&s, 0.9),
            whisker_low,
            whisker_high,
            outliers: s.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub label: String,
    pub provenance: Provenance,
    pub b: Option<BoxStats>,
    pub gamma: Option<BoxStats>,
    pub rho: Option<BoxStats>,
}

pub fn param_stats(label: &str, p: &DcParameters) -> ParamStats {
    ParamStats {
        label: label.into(),
        provenance: p.provenance,
        b: BoxStats::from_values(&p.b),
        gamma: BoxStats::from_values(&p.gamma),
        rho: BoxStats::from_values(&p.rho),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub block: String,
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// Paired values of two parameter sets over the same ids, e.g. hot vs optimized.
pub fn scatter(x: &DcParameters, y: &DcParameters) -> Result<Vec<ScatterRow>> {
    if x.branch_ids != y.branch_ids || x.bus_ids != y.bus_ids {
        return Err(Error::Dimension("scatter needs parameter sets over the same ids".into()));
    }
    let mut rows = Vec::new();
    let mut push = |block: &str, ids: &[usize], a: &[f64], b: &[f64]| {
        for ((id, x), y) in ids.iter().zip(a).zip(b) {
            rows.push(ScatterRow { block: block.into(), id: *id, x: *x, y: *y });
        }
    };
    push("b", &x.branch_ids, &x.b, &y.b);
    push("gamma", &x.bus_ids, &x.gamma, &y.gamma);
    push("rho", &x.branch_ids, &x.rho, &y.rho);
    Ok(rows)
}

pub fn write_scatter_csv(mut w: impl Write, rows: &[ScatterRow]) -> Result<()> {
    writeln!(w, "block,id,x,y")?;
    for r in rows {
        writeln!(w, "{},{},{:e},{:e}", r.block, r.id, r.x, r.y)?;
    }
    Ok(())
}
