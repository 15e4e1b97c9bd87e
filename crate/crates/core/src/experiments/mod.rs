//! Seeded sweeps over the penalty strength (Case I) or ball radius (Case II),
//! with CSV, Pareto-frontier and SVG reporting.

mod compare;
mod csv_io;
mod frontier;
mod plot;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::{
    bound_t1, bound_t2, bound_t3, bound_t4, estimate_lipschitz_s, estimate_smoothness_f,
    SamplingConfig,
};
use crate::error::{Error, Result};
use crate::scenario::{Scenario, ScenarioConfig};
use crate::trainer::{
    gap_capability, gap_safety, solve_case1, solve_case2, CaseIConfig, CaseIIConfig, TrainResult,
};

pub use compare::{compare_cases, CaseComparison, DEFAULT_MATCH_TOLERANCE};
pub use csv_io::{read_csv, rows_from_csv, rows_to_csv, write_csv, CSV_HEADER};
pub use frontier::{frontier, FrontierPoint};
pub use plot::{emit_plot, render_svg};

/// Default penalty strengths for Case I sweeps.
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Case {
    /// Proxy-loss penalty; the knob is `λ`.
    #[serde(rename = "I")]
    I,
    /// Parameter ball around `θ_s`; the knob is `ε₂`.
    #[serde(rename = "II")]
    II,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::I => "I",
            Case::II => "II",
        })
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "i" | "1" => Ok(Case::I),
            "II" | "ii" | "2" => Ok(Case::II),
            other => Err(Error::InvalidInput(format!("unknown case {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    /// A fresh scenario per seed.
    Generated(ScenarioConfig),
    /// One scenario for every seed; the seed then only drives sampling.
    Fixed(Box<Scenario>),
}

impl ScenarioSource {
    fn scenario(&self, seed: u64) -> Result<Scenario> {
        match self {
            ScenarioSource::Generated(cfg) => Scenario::generate(seed, cfg),
            ScenarioSource::Fixed(s) => Ok((**s).clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub source: ScenarioSource,
    pub case: Case,
    /// `λ` values for Case I, `ε₂` values for Case II; strictly increasing.
    pub knobs: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Sample count and safety factor for the Case II constants; the seed
    /// field is replaced by the row seed.
    pub sampling: SamplingConfig,
    /// Logit box half-width as a multiple of the scenario's realizing bound.
    pub box_scale: f64,
}

impl SweepConfig {
    pub fn new(source: ScenarioSource, case: Case, knobs: Vec<f64>, seeds: Vec<u64>) -> Self {
        SweepConfig {
            source,
            case,
            knobs,
            seeds,
            sampling: SamplingConfig::default(),
            box_scale: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knobs.is_empty() {
            return Err(Error::InvalidConfig("knob grid is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list is empty".into()));
        }
        if let Some(bad) = self.knobs.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "knob {bad} must be finite and ≥ 0"
            )));
        }
        if self.knobs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "knob grid must be strictly increasing".into(),
            ));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if !(self.box_scale >= 1.0 && self.box_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "box scale {} must be finite and ≥ 1",
                self.box_scale
            )));
        }
        Ok(())
    }
}

/// One solved sweep point. Case I rows carry bounds 1 and 2, Case II rows
/// bounds 3 and 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub case: Case,
    pub knob: f64,
    pub g_s: f64,
    pub g_f: f64,
    #[serde(with = "crate::json::lenient_f64")]
    pub safety_bound: f64,
    #[serde(with = "crate::json::lenient_f64")]
    pub capability_bound: f64,
    #[serde(with = "crate::json::lenient_f64")]
    pub safety_slack: f64,
    #[serde(with = "crate::json::lenient_f64")]
    pub capability_slack: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Box half-width used for sweeps on `scenario`.
pub fn sweep_box_bound(scenario: &Scenario, box_scale: f64) -> f64 {
    box_scale * scenario.realizing_box_bound()
}

fn solve_point(cfg: &SweepConfig, scenario: &Scenario, seed: u64, knob: f64) -> Result<SweepRow> {
    let theta_s = scenario.aligned_model(sweep_box_bound(scenario, cfg.box_scale))?;
    let (result, safety, capability): (TrainResult, _, _) = match cfg.case {
        Case::I => {
            let result = solve_case1(scenario, &theta_s, &CaseIConfig::with_lambda(knob))?;
            let c_p = theta_s.penalty_constant()?;
            (
                result,
                bound_t1(scenario, knob, c_p)?,
                bound_t2(scenario, knob)?,
            )
        }
        Case::II => {
            let result = solve_case2(scenario, &theta_s, &CaseIIConfig::constrained(knob))?;
            let sampling = SamplingConfig {
                seed,
                ..cfg.sampling
            };
            let l_s = estimate_lipschitz_s(&theta_s, scenario, knob, &sampling)?;
            let l_f = estimate_smoothness_f(&theta_s, scenario, knob, &sampling)?;
            (
                result,
                bound_t3(&theta_s, scenario, knob, &l_s)?,
                bound_t4(&theta_s, scenario, knob, &l_f)?,
            )
        }
    };
    let g_s = gap_safety(&result.model, scenario)?;
    let g_f = gap_capability(&result.model, scenario)?;
    Ok(SweepRow {
        seed,
        case: cfg.case,
        knob,
        g_s,
        g_f,
        safety_bound: safety.bound_value,
        capability_bound: capability.bound_value,
        safety_slack: safety.bound_value - g_s,
        capability_slack: capability.bound_value - g_f,
        iterations: result.iterations,
        converged: result.converged,
    })
}

/// Solves every `(seed, knob)` pair. Rows come back sorted by seed, then knob,
/// whatever order the points were computed in.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    let scenarios = seeds
        .iter()
        .map(|&s| cfg.source.scenario(s))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, f64)> = (0..seeds.len())
        .flat_map(|i| cfg.knobs.iter().map(move |&k| (i, k)))
        .collect();
    let solve = |&(i, knob): &(usize, f64)| solve_point(cfg, &scenarios[i], seeds[i], knob);

    #[cfg(feature = "parallel")]
    let rows = {
        use rayon::prelude::*;
        jobs.par_iter().map(solve).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows = jobs.iter().map(solve).collect::<Result<Vec<_>>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::Alphabet;

    fn small(case: Case, knobs: Vec<f64>, seeds: Vec<u64>, similarity: f64) -> SweepConfig {
        let source = ScenarioSource::Generated(ScenarioConfig {
            alphabet: Alphabet::new(6, 3).unwrap(),
            overlap_frac: 0.5,
            similarity,
            ..Default::default()
        });
        SweepConfig::new(source, case, knobs, seeds)
    }

    #[test]
    fn one_row_per_seed_and_knob() {
        let cfg = small(Case::I, DEFAULT_LAMBDA_GRID.to_vec(), vec![5, 1, 3], 0.5);
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 15);
        let keys: Vec<(u64, f64)> = rows.iter().map(|r| (r.seed, r.knob)).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(keys, sorted);
        assert!(rows.iter().all(|r| r.converged));
    }

    #[test]
    fn exact_proxy_safety_gap_nonincreasing() {
        let cfg = small(Case::I, DEFAULT_LAMBDA_GRID.to_vec(), vec![0, 1, 2], 1.0);
        let rows = run_sweep(&cfg).unwrap();
        for seed_rows in rows.chunks(5) {
            for w in seed_rows.windows(2) {
                assert!(w[1].g_s <= w[0].g_s + 1e-9);
                assert!(w[1].g_f >= w[0].g_f - 1e-9);
            }
        }
    }

    #[test]
    fn case_two_rows_carry_finite_bounds() {
        let cfg = small(Case::II, vec![0.0, 0.5, 1.0], vec![2], 0.5);
        let rows = run_sweep(&cfg).unwrap();
        let scenario = cfg.source.scenario(2).unwrap();
        let theta_s = scenario
            .aligned_model(sweep_box_bound(&scenario, 2.0))
            .unwrap();
        assert_eq!(rows[0].g_s, gap_safety(&theta_s, &scenario).unwrap());
        assert!(rows[0].g_s.abs() < 1e-12);
        for r in &rows {
            assert!(r.safety_bound.is_finite() && r.capability_bound.is_finite());
            assert!(r.safety_slack >= -1e-9);
        }
    }

    #[test]
    fn config_validation() {
        assert!(run_sweep(&small(Case::I, vec![], vec![1], 1.0)).is_err());
        assert!(run_sweep(&small(Case::I, vec![0.5, 0.5], vec![1], 1.0)).is_err());
        assert!(run_sweep(&small(Case::I, vec![0.5], vec![1, 1], 1.0)).is_err());
        assert!(run_sweep(&small(Case::I, vec![-1.0], vec![1], 1.0)).is_err());
        assert_eq!("II".parse::<Case>().unwrap(), Case::II);
        assert!("III".parse::<Case>().is_err());
    }
}
