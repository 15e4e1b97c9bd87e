//! Seeded batch checks: solver/oracle agreement and bound slack.

use serde::Serialize;

use crate::bounds::{bound_t1, bound_t2, bound_t3, bound_t4, estimate_lipschitz_s, SamplingConfig};
use crate::error::Result;
use crate::model::LogitModel;
use crate::oracle::{
    capability_bound_replay, case1_closed_form, case2_grid, grid_smoothness_f, GridSpec,
};
use crate::prob::{tv_slices, Alphabet};
use crate::scenario::{Scenario, ScenarioConfig};
use crate::trainer::{
    distance, gap_capability, gap_safety, solve_case1, solve_case2, CaseIConfig, CaseIIConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seeds: Vec<u64>,
    pub alphabet: Alphabet,
    pub lambdas: Vec<f64>,
    pub radii: Vec<f64>,
    pub samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seeds: (0..20).collect(),
            alphabet: Alphabet {
                contexts: 8,
                outputs: 4,
            },
            lambdas: vec![0.1, 1.0, 10.0],
            radii: vec![0.25, 1.0],
            samples: 256,
        }
    }
}

/// Outcome of one named check over all trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Fraction of trials that must pass.
    pub required_rate: f64,
    /// Largest violation seen (positive means past tolerance).
    #[serde(with = "crate::json::lenient_f64")]
    pub worst: f64,
}

impl CheckOutcome {
    fn new(name: &str, required_rate: f64) -> Self {
        CheckOutcome {
            name: name.to_string(),
            trials: 0,
            failures: 0,
            required_rate,
            worst: f64::NEG_INFINITY,
        }
    }

    /// Records a trial whose violation is `excess` (≤ 0 passes).
    fn record(&mut self, excess: f64) {
        self.trials += 1;
        if excess.is_nan() || excess > 0.0 {
            self.failures += 1;
        }
        self.worst = if excess.is_nan() {
            f64::NAN
        } else {
            self.worst.max(excess)
        };
    }

    pub fn pass_rate(&self) -> f64 {
        if self.trials == 0 {
            1.0
        } else {
            1.0 - self.failures as f64 / self.trials as f64
        }
    }

    pub fn passed(&self) -> bool {
        self.pass_rate() >= self.required_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }
}

fn scenario_for(seed: u64, alphabet: Alphabet) -> Result<Scenario> {
    Scenario::generate(
        seed,
        &ScenarioConfig {
            alphabet,
            overlap_frac: (seed % 5) as f64 / 4.0,
            similarity: ((seed / 5) % 5) as f64 / 4.0,
            ..Default::default()
        },
    )
}

/// Runs every check on every seed.
pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut case1_obj = CheckOutcome::new("case1_objective_vs_closed_form", 1.0);
    let mut case1_tv = CheckOutcome::new("case1_row_tv_vs_closed_form", 1.0);
    let mut t1 = CheckOutcome::new("case1_safety_slack", 1.0);
    let mut t2 = CheckOutcome::new("case1_capability_slack", 1.0);
    let mut replay = CheckOutcome::new("capability_bound_replay", 1.0);
    let mut ball = CheckOutcome::new("case2_ball_feasible", 1.0);
    let mut t3 = CheckOutcome::new("case2_safety_slack_sampled", 0.99);
    let mut grid = CheckOutcome::new("case2_vs_grid", 1.0);
    let mut t4 = CheckOutcome::new("case2_capability_slack_grid", 1.0);

    for &seed in &cfg.seeds {
        let s = scenario_for(seed, cfg.alphabet)?;
        let b = 2.0 * s.realizing_box_bound();
        let theta_s = s.aligned_model(b)?;
        let c_p = theta_s.penalty_constant()?;
        let union: Vec<usize> = (0..cfg.alphabet.contexts)
            .filter(|&x| s.task().d.in_support(x) || s.proxy().d.in_support(x))
            .collect();

        for &lambda in &cfg.lambdas {
            let exact = case1_closed_form(&s, lambda)?;
            let exact_model = exact.to_model(b)?;
            let solved = solve_case1(&s, &theta_s, &CaseIConfig::with_lambda(lambda))?;
            case1_obj.record(solved.objective() - exact.objective(&s)? - 1e-7);
            let p = solved.model.probs_table();
            let tv = union
                .iter()
                .map(|&x| tv_slices(p.row(x), exact.table.row(x)))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            case1_tv.record(tv - 1e-4);

            let g_s = gap_safety(&exact_model, &s)?;
            let g_f = gap_capability(&exact_model, &s)?;
            t1.record(
                -bound_t1(&s, lambda, c_p)?
                    .with_measured(g_s)
                    .slack
                    .unwrap_or(0.0)
                    - 1e-9,
            );
            let r2 = bound_t2(&s, lambda)?;
            t2.record(-r2.clone().with_measured(g_f).slack.unwrap_or(0.0) - 1e-9);
            replay.record((capability_bound_replay(&s, lambda)? - r2.bound_value).abs() - 1e-10);
        }

        for &eps in &cfg.radii {
            let solved = solve_case2(&s, &theta_s, &CaseIIConfig::constrained(eps))?;
            ball.record(distance(solved.model.params(), theta_s.params()) - eps - 1e-12);
            let sampling = SamplingConfig {
                seed,
                samples: cfg.samples,
                ..Default::default()
            };
            let l_s = estimate_lipschitz_s(&theta_s, &s, eps, &sampling)?;
            let g_s = gap_safety(&solved.model, &s)?;
            t3.record(
                -bound_t3(&theta_s, &s, eps, &l_s)?
                    .with_measured(g_s)
                    .slack
                    .unwrap_or(0.0)
                    - 1e-9,
            );
        }

        // two-parameter instance: one context, two outputs
        let tiny = Scenario::generate(
            seed,
            &ScenarioConfig {
                alphabet: Alphabet {
                    contexts: 1,
                    outputs: 2,
                },
                overlap_frac: 1.0,
                similarity: 0.5,
                ..Default::default()
            },
        )?;
        let tiny_theta = LogitModel::realizing(&tiny.safety().mu, 20.0)?;
        for &eps in &cfg.radii {
            let (_, best) = case2_grid(&tiny, &tiny_theta, eps, &GridSpec::default())?;
            let solved = solve_case2(&tiny, &tiny_theta, &CaseIIConfig::constrained(eps))?;
            grid.record((solved.objective() - best).abs() - 1e-4);
            let l_f = grid_smoothness_f(
                &tiny_theta,
                &tiny,
                eps,
                &GridSpec {
                    resolution: 24,
                    refine_levels: 0,
                },
            )?;
            if l_f.value > 0.0 {
                let r4 = bound_t4(&tiny_theta, &tiny, eps, &l_f)?;
                if r4.radius_valid == Some(true) {
                    let g_f = gap_capability(&solved.model, &tiny)?;
                    t4.record(-r4.with_measured(g_f).slack.unwrap_or(0.0) - 1e-9);
                }
            }
        }
    }

    Ok(VerifyReport {
        checks: vec![case1_obj, case1_tv, t1, t2, replay, ball, t3, grid, t4],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_batch_passes() {
        let cfg = VerifyConfig {
            seeds: (0..4).collect(),
            samples: 32,
            ..Default::default()
        };
        let report = run_verify(&cfg).unwrap();
        for c in &report.checks {
            assert!(c.passed(), "{c:?}");
        }
        assert!(report.passed());
    }

    #[test]
    fn outcome_counts_failures() {
        let mut c = CheckOutcome::new("x", 0.5);
        c.record(-1.0);
        c.record(0.5);
        assert_eq!(c.failures, 1);
        assert_eq!(c.worst, 0.5);
        assert!(c.passed());
        c.record(f64::NAN);
        assert!(!c.passed());
    }
}
