//! Independent reference solvers: the closed-form Case I optimum, brute-force
//! grid search for Case II, and grid suprema for the local constants.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::bounds::{EstimateMethod, LipschitzEstimate};
use crate::error::{Error, Result};
use crate::model::{min_realizing_box, LogitModel, LossWeights, Variant};
use crate::prob::{expected_cross_entropy, ConditionalTable};
use crate::scenario::Scenario;
use crate::trainer::{case1_weights, distance, norm};

/// Largest parameter dimension the grid oracles accept.
pub const MAX_GRID_DIM: usize = 6;

/// Step of the finite-difference Hessian.
const HESSIAN_STEP: f64 = 1e-5;

/// Optimum of the Case I objective over all conditional distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSolution {
    pub table: ConditionalTable,
    /// Per context `(w_f, w_p) = (D_f(x), λ·D̂(x))`.
    pub weights: Vec<(f64, f64)>,
    pub lambda: f64,
}

impl MixtureSolution {
    /// Whether a tabular model with half-width `box_bound` can represent the table.
    pub fn fits_box(&self, box_bound: f64) -> bool {
        min_realizing_box(&self.table) <= box_bound * (1.0 + 1e-12)
    }

    /// Case I objective value of the table on `scenario`.
    pub fn objective(&self, scenario: &Scenario) -> Result<f64> {
        case1_weights(scenario, self.lambda)?.loss_of_table(&self.table)
    }

    pub fn to_model(&self, box_bound: f64) -> Result<LogitModel> {
        LogitModel::realizing(&self.table, box_bound)
    }
}

/// Per context, `P*(x) = (w_f·μ_f(x) + w_p·μ̂(x)) / (w_f + w_p)`; contexts
/// outside both supports get the uniform row.
pub fn case1_closed_form(scenario: &Scenario, lambda: f64) -> Result<MixtureSolution> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lambda {lambda} must be finite and ≥ 0"
        )));
    }
    let task = scenario.task();
    let proxy = scenario.proxy();
    let alphabet = scenario.alphabet();
    let uniform = 1.0 / alphabet.outputs as f64;
    let mut weights = Vec::with_capacity(alphabet.contexts);
    let mut flat = Vec::with_capacity(alphabet.contexts * alphabet.outputs);
    for x in 0..alphabet.contexts {
        let w_f = task.d.probs()[x];
        let w_p = lambda * proxy.d.probs()[x];
        weights.push((w_f, w_p));
        let total = w_f + w_p;
        if total > 0.0 {
            flat.extend(
                task.mu
                    .row(x)
                    .iter()
                    .zip(proxy.mu.row(x))
                    .map(|(f, p)| (w_f * f + w_p * p) / total),
            );
        } else {
            flat.extend(std::iter::repeat_n(uniform, alphabet.outputs));
        }
    }
    Ok(MixtureSolution {
        table: ConditionalTable::from_flat(alphabet.contexts, alphabet.outputs, flat)?,
        weights,
        lambda,
    })
}

/// `μ̂_f`: `μ_f` on the task support, `μ̂` elsewhere.
pub fn mu_hat_f(scenario: &Scenario) -> Result<ConditionalTable> {
    let task = scenario.task();
    let proxy = scenario.proxy();
    let rows = (0..scenario.alphabet().contexts)
        .map(|x| {
            if task.d.in_support(x) {
                task.mu.row(x).to_vec()
            } else {
                proxy.mu.row(x).to_vec()
            }
        })
        .collect();
    ConditionalTable::new(rows)
}

/// `λ·(E_{D̂,μ̂}[−ln μ̂_f] − E_{D̂,μ̂}[−ln μ̂])`, the capability bound
/// rebuilt from the hybrid table without going through the KL form.
pub fn capability_bound_replay(scenario: &Scenario, lambda: f64) -> Result<f64> {
    let proxy = scenario.proxy();
    let hybrid = mu_hat_f(scenario)?;
    let cross = expected_cross_entropy(&proxy.d, &proxy.mu, &hybrid)?;
    let entropy = expected_cross_entropy(&proxy.d, &proxy.mu, &proxy.mu)?;
    Ok(if lambda == 0.0 {
        0.0
    } else {
        lambda * (cross - entropy)
    })
}

/// Axis grid over the `ε₂`-ball: `resolution` intervals per axis, then
/// `refine_levels` rounds of zooming onto the incumbent.
///
/// Doubling `resolution` nests the previous grid, so with no refinement the
/// objective never gets worse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub resolution: usize,
    pub refine_levels: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            resolution: 16,
            refine_levels: 8,
        }
    }
}

fn check_grid(model: &LogitModel, epsilon: f64, spec: &GridSpec) -> Result<()> {
    let dim = model.param_dim();
    if dim > MAX_GRID_DIM {
        return Err(Error::Unsupported(format!(
            "grid search over {dim} parameters (limit {MAX_GRID_DIM})"
        )));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "radius {epsilon} must be finite and ≥ 0"
        )));
    }
    if spec.resolution == 0 {
        return Err(Error::InvalidInput("grid resolution must be ≥ 1".into()));
    }
    Ok(())
}

/// Calls `visit` on every point of the cube `center ± half_width` with
/// `resolution` intervals per axis.
fn for_each_cube_point(
    center: &[f64],
    half_width: f64,
    resolution: usize,
    mut visit: impl FnMut(&[f64]),
) {
    let dim = center.len();
    let offsets: Vec<f64> = (0..=resolution)
        .map(|j| half_width * (2.0 * j as f64 / resolution as f64 - 1.0))
        .collect();
    let mut idx = vec![0usize; dim];
    let mut point: Vec<f64> = center.iter().map(|c| c + offsets[0]).collect();
    loop {
        visit(&point);
        let mut axis = 0;
        loop {
            if axis == dim {
                return;
            }
            idx[axis] += 1;
            if idx[axis] <= resolution {
                point[axis] = center[axis] + offsets[idx[axis]];
                break;
            }
            idx[axis] = 0;
            point[axis] = center[axis] + offsets[0];
            axis += 1;
        }
    }
}

fn feasible(model: &LogitModel, point: &[f64], center: &[f64], epsilon: f64) -> bool {
    if distance(point, center) > epsilon {
        return false;
    }
    model.variant() != Variant::Tabular || point.iter().all(|v| v.abs() <= model.box_bound())
}

/// Brute-force Case II: the best task loss over grid points of the ball
/// around `theta_s` that also respect the box (tabular).
pub fn case2_grid(
    scenario: &Scenario,
    theta_s: &LogitModel,
    epsilon_2: f64,
    spec: &GridSpec,
) -> Result<(LogitModel, f64)> {
    check_grid(theta_s, epsilon_2, spec)?;
    let task = scenario.task();
    let weights = LossWeights::single(&task.d, &task.mu)?;
    let center = theta_s.params().to_vec();
    let mut probe = theta_s.clone();
    let mut best = center.clone();
    let mut best_value = theta_s.weighted_loss(&weights);
    if epsilon_2 == 0.0 {
        return Ok((theta_s.clone(), best_value));
    }
    let mut window_center = center.clone();
    let mut half_width = epsilon_2;
    for _ in 0..=spec.refine_levels {
        let mut level_best = (best.clone(), best_value);
        for_each_cube_point(&window_center, half_width, spec.resolution, |p| {
            if !feasible(theta_s, p, &center, epsilon_2) {
                return;
            }
            probe.set_params_unchecked(p);
            let v = probe.weighted_loss(&weights);
            if v < level_best.1 {
                level_best = (p.to_vec(), v);
            }
        });
        (best, best_value) = level_best;
        window_center.clone_from(&best);
        half_width *= 4.0 / spec.resolution.max(4) as f64;
    }
    Ok((theta_s.with_params(best)?, best_value))
}

/// Grid supremum of `‖∇E_{D_s,μ_s}[−ln P_θ]‖` over the `ε₂`-ball.
pub fn grid_lipschitz_s(
    theta_s: &LogitModel,
    scenario: &Scenario,
    epsilon_2: f64,
    spec: &GridSpec,
) -> Result<LipschitzEstimate> {
    check_grid(theta_s, epsilon_2, spec)?;
    let safety = scenario.safety();
    let weights = LossWeights::single(&safety.d, &safety.mu)?;
    let center = theta_s.params().to_vec();
    let mut probe = theta_s.clone();
    let mut best: f64 = 0.0;
    let mut samples = 0;
    for_each_cube_point(&center, epsilon_2, spec.resolution, |p| {
        if distance(p, &center) <= epsilon_2 {
            probe.set_params_unchecked(p);
            best = best.max(norm(&probe.weighted_loss_grad(&weights).1));
            samples += 1;
        }
    });
    Ok(LipschitzEstimate {
        value: best,
        epsilon: epsilon_2,
        samples,
        method: EstimateMethod::GridSup,
        safety_factor: 1.0,
    })
}

/// Symmetrized central-difference Hessian of the loss, built from the
/// analytic gradient.
pub fn loss_hessian(model: &LogitModel, weights: &LossWeights) -> DMatrix<f64> {
    let dim = model.param_dim();
    let base = model.params().to_vec();
    let mut probe = model.clone();
    let mut h = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut p = base.clone();
        p[j] = base[j] + HESSIAN_STEP;
        probe.set_params_unchecked(&p);
        let plus = probe.weighted_loss_grad(weights).1;
        p[j] = base[j] - HESSIAN_STEP;
        probe.set_params_unchecked(&p);
        let minus = probe.weighted_loss_grad(weights).1;
        for i in 0..dim {
            h[(i, j)] = (plus[i] - minus[i]) / (2.0 * HESSIAN_STEP);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Grid supremum of the largest Hessian eigenvalue of the task loss over the
/// `ε₂`-ball.
pub fn grid_smoothness_f(
    theta_s: &LogitModel,
    scenario: &Scenario,
    epsilon_2: f64,
    spec: &GridSpec,
) -> Result<LipschitzEstimate> {
    check_grid(theta_s, epsilon_2, spec)?;
    let task = scenario.task();
    let weights = LossWeights::single(&task.d, &task.mu)?;
    let center = theta_s.params().to_vec();
    let mut probe = theta_s.clone();
    let mut best = f64::NEG_INFINITY;
    let mut samples = 0;
    for_each_cube_point(&center, epsilon_2, spec.resolution, |p| {
        if distance(p, &center) <= epsilon_2 {
            probe.set_params_unchecked(p);
            let eig = SymmetricEigen::new(loss_hessian(&probe, &weights)).eigenvalues;
            best = best.max(eig.max());
            samples += 1;
        }
    });
    Ok(LipschitzEstimate {
        value: best.max(0.0),
        epsilon: epsilon_2,
        samples,
        method: EstimateMethod::GridHessian,
        safety_factor: 1.0,
    })
}
