use serde::{Deserialize, Serialize};

use crate::depthnet::sc_inv_from_logs;
use crate::error::{Error, Result};
use crate::grid::DepthMap;

/// The eight depth-accuracy metrics. Errors are lower-is-better, the three
/// threshold accuracies higher-is-better.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub log_rmse: f64,
    pub sc_inv: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl MetricsRow {
    pub const HEADERS: [&'static str; 8] = [
        "AbsRel",
        "SqRel",
        "RMSE",
        "Log RMSE",
        "ScInv",
        "δ<1.25",
        "δ<1.25²",
        "δ<1.25³",
    ];

    /// Whether a larger value is better, per column.
    pub const HIGHER_IS_BETTER: [bool; 8] = [false, false, false, false, false, true, true, true];

    pub fn values(&self) -> [f64; 8] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.log_rmse,
            self.sc_inv,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    fn from_values(v: [f64; 8]) -> Self {
        Self {
            abs_rel: v[0],
            sq_rel: v[1],
            rmse: v[2],
            log_rmse: v[3],
            sc_inv: v[4],
            delta1: v[5],
            delta2: v[6],
            delta3: v[7],
        }
    }

    /// Column-wise mean; `None` for an empty slice.
    pub fn mean(rows: &[MetricsRow]) -> Option<MetricsRow> {
        if rows.is_empty() {
            return None;
        }
        let mut acc = [0.0; 8];
        for r in rows {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        Some(Self::from_values(acc.map(|a| a / rows.len() as f64)))
    }
}

/// All eight metrics over every pixel.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<MetricsRow> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(gt.dims(), pred.dims()));
    }
    // DepthMap already guarantees positivity; this guards maps built elsewhere.
    if pred.values().iter().chain(gt.values()).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("metrics need strictly positive depths".into()));
    }
    let n = gt.values().len() as f64;
    let (mut abs_rel, mut sq_rel, mut sq, mut log_sq) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for (p, d) in pred.values().iter().zip(gt.values()) {
        let diff = p - d;
        abs_rel += diff.abs() / d;
        sq_rel += diff * diff / d;
        sq += diff * diff;
        log_sq += (d.ln() - p.ln()).powi(2);
        let ratio = (p / d).max(d / p);
        for (t, h) in hits.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(t as i32 + 1) {
                *h += 1;
            }
        }
    }
    let pred_log: Vec<f64> = pred.values().iter().map(|v| v.ln()).collect();
    Ok(MetricsRow {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        log_rmse: (log_sq / n).sqrt(),
        sc_inv: sc_inv_from_logs(&pred_log, gt.values()),
        delta1: hits[0] as f64 / n,
        delta2: hits[1] as f64 / n,
        delta3: hits[2] as f64 / n,
    })
}
