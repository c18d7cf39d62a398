//! MSE/PLCC computation and per-variant reporting.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::{VideoRecord, METRIC_NAMES, N_METRICS};
use crate::ensemble::{predict_for_variant, TrainedEnsemble, VariantSel};
use crate::error::{Error, Result};
use crate::runtime::par_map;

/// Mean squared error, 64-bit accumulation.
pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::usage(format!(
            "mse: length mismatch {} vs {}",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::usage("mse: empty input"));
    }
    let acc: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(acc / preds.len() as f64)
}

/// Pearson correlation; `None` (flagged-undefined) when either side has zero
/// variance. Undefined values are treated as 0 when aggregating.
pub fn plcc(preds: &[f64], targets: &[f64]) -> Result<Option<f64>> {
    if preds.len() != targets.len() {
        return Err(Error::usage(format!(
            "plcc: length mismatch {} vs {}",
            preds.len(),
            targets.len()
        )));
    }
    if preds.len() < 2 {
        return Err(Error::usage("plcc: need at least 2 samples"));
    }
    let n = preds.len() as f64;
    let mx = preds.iter().sum::<f64>() / n;
    let my = targets.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in preds.iter().zip(targets) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx.sqrt() * syy.sqrt())))
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricCell {
    pub mse: f64,
    /// `None` renders as "n/a".
    pub plcc: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct VariantRow {
    pub variant: String,
    pub cells: [MetricCell; N_METRICS],
}

/// Per (variant × metric) MSE/PLCC in raw-count space, pooled plus a
/// per-author breakdown.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsTable {
    pub overall: Vec<VariantRow>,
    pub per_author: BTreeMap<String, Vec<VariantRow>>,
}

fn build_row(
    variant: &str,
    preds: &[[f64; N_METRICS]],
    targets: &[[f64; N_METRICS]],
) -> Result<VariantRow> {
    let mut cells = Vec::with_capacity(N_METRICS);
    for m in 0..N_METRICS {
        let p: Vec<f64> = preds.iter().map(|r| r[m]).collect();
        let t: Vec<f64> = targets.iter().map(|r| r[m]).collect();
        let mse_v = mse(&p, &t)?;
        let plcc_v = if p.len() >= 2 { plcc(&p, &t)? } else { None };
        cells.push(MetricCell {
            mse: mse_v,
            plcc: plcc_v,
            n: p.len(),
        });
    }
    Ok(VariantRow {
        variant: variant.to_string(),
        cells: cells.try_into().map_err(|_| Error::usage("cell count"))?,
    })
}

/// Predictions via every variant (C always; R where an author model exists;
/// E routed), metrics in raw-count space after the inverse transform.
pub fn evaluate(ensemble: &TrainedEnsemble, records: &[VideoRecord]) -> Result<MetricsTable> {
    let labeled: Vec<&VideoRecord> = records.iter().filter(|r| r.is_labeled()).collect();
    if labeled.is_empty() {
        return Err(Error::usage("evaluate: no labeled records"));
    }

    struct Row {
        author: String,
        target: [f64; N_METRICS],
        c: [f64; N_METRICS],
        r: Option<[f64; N_METRICS]>,
        e: [f64; N_METRICS],
    }
    let rows: Vec<Row> = par_map(&labeled, |r| -> Result<Row> {
        let target = r.targets.as_ref().unwrap().as_array().map(|c| c as f64);
        let c = predict_for_variant(r, ensemble, VariantSel::Global)?
            .as_array()
            .map(|x| x as f64);
        let r_pred = if ensemble.has_author_model(&r.author_id) {
            Some(
                predict_for_variant(r, ensemble, VariantSel::PerAuthor)?
                    .as_array()
                    .map(|x| x as f64),
            )
        } else {
            None
        };
        let e = predict_for_variant(r, ensemble, VariantSel::Selected)?
            .as_array()
            .map(|x| x as f64);
        Ok(Row {
            author: r.author_id.clone(),
            target,
            c,
            r: r_pred,
            e,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let make_rows = |subset: &[&Row]| -> Result<Vec<VariantRow>> {
        let mut out = Vec::new();
        let r_rows: Vec<&Row> = subset.iter().filter(|r| r.r.is_some()).cloned().collect();
        if !r_rows.is_empty() {
            let preds: Vec<[f64; N_METRICS]> = r_rows.iter().map(|r| r.r.unwrap()).collect();
            let tgts: Vec<[f64; N_METRICS]> = r_rows.iter().map(|r| r.target).collect();
            out.push(build_row("R", &preds, &tgts)?);
        }
        let preds: Vec<[f64; N_METRICS]> = subset.iter().map(|r| r.c).collect();
        let tgts: Vec<[f64; N_METRICS]> = subset.iter().map(|r| r.target).collect();
        out.push(build_row("C", &preds, &tgts)?);
        let preds: Vec<[f64; N_METRICS]> = subset.iter().map(|r| r.e).collect();
        out.push(build_row("E", &preds, &tgts)?);
        Ok(out)
    };

    let all: Vec<&Row> = rows.iter().collect();
    let overall = make_rows(&all)?;
    let mut per_author = BTreeMap::new();
    let mut authors: Vec<&str> = rows.iter().map(|r| r.author.as_str()).collect();
    authors.sort();
    authors.dedup();
    for a in authors {
        let subset: Vec<&Row> = rows.iter().filter(|r| r.author == a).collect();
        per_author.insert(a.to_string(), make_rows(&subset)?);
    }
    Ok(MetricsTable {
        overall,
        per_author,
    })
}

fn fmt_plcc(p: Option<f64>) -> String {
    match p {
        Some(v) => format!("{v:.3}"),
        None => "n/a".to_string(),
    }
}

/// Text grid with variants as rows and HEART/SHARE/COMMENT/PLAY × (MSE,
/// PLCC) as columns.
pub fn render_text(table: &MetricsTable) -> String {
    let mut out = String::new();
    let headers: Vec<String> = METRIC_NAMES
        .iter()
        .map(|m| m.trim_end_matches('s').to_uppercase())
        .collect();
    out.push_str(&format!("{:<4}", ""));
    for h in &headers {
        out.push_str(&format!("{:>14} {:>8}", format!("{h} MSE"), "PLCC"));
    }
    out.push('\n');
    for row in &table.overall {
        out.push_str(&format!("{:<4}", row.variant));
        for cell in &row.cells {
            out.push_str(&format!("{:>14.6e} {:>8}", cell.mse, fmt_plcc(cell.plcc)));
        }
        out.push('\n');
    }
    out
}

/// Machine-readable report (same data as the text grid plus the per-author
/// breakdown).
pub fn render_json(table: &MetricsTable) -> String {
    serde_json::to_string_pretty(table).expect("report serializes")
}
