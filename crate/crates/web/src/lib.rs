//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function has a plain-Rust twin returning `Result<String, String>`
//! so it can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use safetune::bounds::{bound_t1, bound_t2, BoundReport};
use safetune::experiments::{render_svg, run_sweep, Case, ScenarioSource, SweepConfig, SweepRow};
use safetune::oracle::case1_closed_form;
use safetune::trainer::{gap_capability, gap_safety};
use safetune::{Alphabet, Scenario, ScenarioConfig};

/// Keeps a browser tab responsive.
const MAX_CELLS: usize = 256;
const MAX_POINTS: usize = 400;
const DEMO_SAMPLES: usize = 64;

fn scenario_config(
    contexts: usize,
    outputs: usize,
    overlap: f64,
    similarity: f64,
) -> Result<ScenarioConfig, String> {
    if contexts * outputs > MAX_CELLS {
        return Err(format!(
            "alphabet too large for the demo (limit {MAX_CELLS} cells)"
        ));
    }
    Ok(ScenarioConfig {
        alphabet: Alphabet::new(contexts, outputs).map_err(|e| e.to_string())?,
        overlap_frac: overlap,
        similarity,
        ..Default::default()
    })
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("bad {what} {t:?}")))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn sweep_rows(
    case: &str,
    contexts: usize,
    outputs: usize,
    overlap: f64,
    similarity: f64,
    knobs: &str,
    seeds: &str,
) -> Result<Vec<SweepRow>, String> {
    let case: Case = case.parse().map_err(|e: safetune::Error| e.to_string())?;
    let knobs: Vec<f64> = parse_list(knobs, "knob")?;
    let seeds: Vec<u64> = parse_list(seeds, "seed")?;
    if knobs.len() * seeds.len() > MAX_POINTS {
        return Err(format!("too many sweep points (limit {MAX_POINTS})"));
    }
    let source =
        ScenarioSource::Generated(scenario_config(contexts, outputs, overlap, similarity)?);
    let mut cfg = SweepConfig::new(source, case, knobs, seeds);
    cfg.sampling.samples = DEMO_SAMPLES;
    run_sweep(&cfg).map_err(|e| e.to_string())
}

/// Sweep rows as JSON.
pub fn sweep_json_native(
    case: &str,
    contexts: usize,
    outputs: usize,
    overlap: f64,
    similarity: f64,
    knobs: &str,
    seeds: &str,
) -> Result<String, String> {
    let rows = sweep_rows(case, contexts, outputs, overlap, similarity, knobs, seeds)?;
    safetune::json::to_string(&rows).map_err(|e| e.to_string())
}

/// Sweep chart as an SVG document.
pub fn sweep_svg_native(
    case: &str,
    contexts: usize,
    outputs: usize,
    overlap: f64,
    similarity: f64,
    knobs: &str,
    seeds: &str,
) -> Result<String, String> {
    let rows = sweep_rows(case, contexts, outputs, overlap, similarity, knobs, seeds)?;
    render_svg(&rows).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CaseOneBounds {
    g_s: f64,
    g_f: f64,
    box_bound: f64,
    shared_contexts: usize,
    safety: BoundReport,
    capability: BoundReport,
}

/// Exact Case I solution for one `λ` with both bound reports.
pub fn bounds_json_native(
    contexts: usize,
    outputs: usize,
    overlap: f64,
    similarity: f64,
    lambda: f64,
    seed: u64,
) -> Result<String, String> {
    let run = || -> safetune::Result<String> {
        let cfg = scenario_config(contexts, outputs, overlap, similarity)
            .map_err(safetune::Error::InvalidInput)?;
        let s = Scenario::generate(seed, &cfg)?;
        let b = 2.0 * s.realizing_box_bound();
        let model = case1_closed_form(&s, lambda)?.to_model(b)?;
        let g_s = gap_safety(&model, &s)?;
        let g_f = gap_capability(&model, &s)?;
        let out = CaseOneBounds {
            g_s,
            g_f,
            box_bound: b,
            shared_contexts: s.shared_contexts().len(),
            safety: bound_t1(&s, lambda, model.penalty_constant()?)?.with_measured(g_s),
            capability: bound_t2(&s, lambda)?.with_measured(g_f),
        };
        safetune::json::to_string(&out)
    };
    run().map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn sweep_json(
    case: &str,
    contexts: usize,
    outputs: usize,
    overlap: f64,
    similarity: f64,
    knobs: &str,
    seeds: &str,
) -> Result<String, JsValue> {
    sweep_json_native(case, contexts, outputs, overlap, similarity, knobs, seeds)
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn sweep_svg(
    case: &str,
    contexts: usize,
    outputs: usize,
    overlap: f64,
    similarity: f64,
    knobs: &str,
    seeds: &str,
) -> Result<String, JsValue> {
    sweep_svg_native(case, contexts, outputs, overlap, similarity, knobs, seeds)
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn bounds_json(
    contexts: usize,
    outputs: usize,
    overlap: f64,
    similarity: f64,
    lambda: f64,
    seed: u64,
) -> Result<String, JsValue> {
    bounds_json_native(contexts, outputs, overlap, similarity, lambda, seed)
        .map_err(|e| JsValue::from_str(&e))
}
