use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::SweepRow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub knob: f64,
    pub g_s: f64,
    pub g_f: f64,
}

impl From<&SweepRow> for FrontierPoint {
    fn from(r: &SweepRow) -> Self {
        FrontierPoint {
            knob: r.knob,
            g_s: r.g_s,
            g_f: r.g_f,
        }
    }
}

fn dominates(a: &FrontierPoint, b: &FrontierPoint) -> bool {
    a.g_s <= b.g_s && a.g_f <= b.g_f && (a.g_s < b.g_s || a.g_f < b.g_f)
}

/// Points not dominated in `(g_s, g_f)`, sorted by `g_s`, then `g_f`, then knob.
pub fn frontier(rows: &[SweepRow]) -> Vec<FrontierPoint> {
    let points: Vec<FrontierPoint> = rows.iter().map(FrontierPoint::from).collect();
    let mut out: Vec<FrontierPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .copied()
        .collect();
    out.sort_by(|a, b| {
        a.g_s
            .total_cmp(&b.g_s)
            .then(a.g_f.total_cmp(&b.g_f))
            .then(a.knob.partial_cmp(&b.knob).unwrap_or(Ordering::Equal))
    });
    out
}
