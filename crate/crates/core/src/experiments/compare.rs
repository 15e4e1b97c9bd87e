use serde::{Deserialize, Serialize};

use super::{Case, SweepRow};
use crate::error::{Error, Result};

/// Default `g_s` matching tolerance in nats.
pub const DEFAULT_MATCH_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseComparison {
    /// Case I points with a Case II partner within tolerance.
    pub matched: usize,
    /// Matched points where Case I's `g_f` is no larger than Case II's.
    pub case1_wins: usize,
    pub tolerance: f64,
}

impl CaseComparison {
    /// Share of matched points won by Case I; `None` when nothing matched.
    pub fn win_fraction(&self) -> Option<f64> {
        (self.matched > 0).then(|| self.case1_wins as f64 / self.matched as f64)
    }
}

/// Pairs each Case I row with the Case II row of the same seed whose `g_s`
/// is nearest, keeping pairs within `tolerance`, and counts how often Case I
/// reaches the same safety gap with no worse capability gap.
pub fn compare_cases(
    case1: &[SweepRow],
    case2: &[SweepRow],
    tolerance: f64,
) -> Result<CaseComparison> {
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(Error::InvalidInput(format!(
            "tolerance {tolerance} must be ≥ 0"
        )));
    }
    if case1.iter().any(|r| r.case != Case::I) || case2.iter().any(|r| r.case != Case::II) {
        return Err(Error::InvalidInput(
            "rows passed under the wrong case".into(),
        ));
    }
    let mut matched = 0;
    let mut case1_wins = 0;
    for a in case1 {
        let nearest = case2
            .iter()
            .filter(|b| b.seed == a.seed)
            .min_by(|x, y| (x.g_s - a.g_s).abs().total_cmp(&(y.g_s - a.g_s).abs()));
        if let Some(b) = nearest.filter(|b| (b.g_s - a.g_s).abs() <= tolerance) {
            matched += 1;
            if a.g_f <= b.g_f {
                case1_wins += 1;
            }
        }
    }
    Ok(CaseComparison {
        matched,
        case1_wins,
        tolerance,
    })
}
