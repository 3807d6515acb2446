//! Browser bindings. Each export generates a small synthetic dataset in
//! memory and returns its result as a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use skattr::attribution::{AttributionFunction, GMode};
use skattr::benchmark::window_errors_for;
use skattr::pipeline::{evaluate, simulate, weekly_truth, EvalOptions, Level, Profiles, SimOptions, Simulation, Window};
use skattr::privacy::{suppression_report, PrivacyConfig};
use skattr::synthgen::{generate_dataset, Dataset, GenConfig};
use skattr::{Result, SchemaSpec};

const MAX_USERS: usize = 50_000;

fn setup(n_users: u32, seed: u64, schema: &str) -> Result<(Dataset, Simulation)> {
    let cfg = GenConfig {
        n_users: (n_users as usize).clamp(100, MAX_USERS),
        seed,
        ..GenConfig::default()
    };
    let (ds, _) = generate_dataset(&cfg)?;
    let schema: SchemaSpec = schema.parse()?;
    let sim = simulate(&ds, &schema, seed, SimOptions::default())?;
    Ok((ds, sim))
}

#[derive(Debug, Serialize)]
pub struct ModeError {
    pub g: String,
    pub error_usd: f64,
}

#[derive(Debug, Serialize)]
pub struct Explorer {
    pub schema: String,
    pub p: u64,
    pub users: u64,
    pub suppressed_users: u64,
    pub suppressed_fraction: f64,
    pub errors: Vec<ModeError>,
}

/// Campaign-level error at threshold `p` for each null-handling mode.
pub fn privacy_explorer(n_users: u32, seed: u64, schema: &str, p: u64, lambda: f64) -> Result<Explorer> {
    let (ds, sim) = setup(n_users, seed, schema)?;
    let w = Window::first(30);
    let prof = Profiles::build(&ds, &sim, w, false)?;
    let truth = weekly_truth(&ds, &sim, w, Level::Campaign)?;
    let mut funcs = vec![
        AttributionFunction::uniform(),
        AttributionFunction::empirical(),
        AttributionFunction::convex(lambda)?,
    ];
    if p < 2 {
        funcs.insert(0, AttributionFunction::plain());
    }
    let mut errors = Vec::new();
    for f in &funcs {
        let e = evaluate(&ds, &sim, &prof, &truth, p, f, Level::Campaign, EvalOptions::default())?;
        errors.push(ModeError {
            g: f.label(),
            error_usd: e.aggregate / 100.0,
        });
    }
    let (mut users, mut hidden) = (0, 0);
    for m in sim.matrices.values() {
        let s = suppression_report(m, PrivacyConfig::new(p));
        users += s.users;
        hidden += s.suppressed_users;
    }
    Ok(Explorer {
        schema: sim.schema.label(),
        p,
        users,
        suppressed_users: hidden,
        suppressed_fraction: if users == 0 { 0.0 } else { hidden as f64 / users as f64 },
        errors,
    })
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub window: String,
    pub error_usd: f64,
}

/// Error of attributing revenue accrued in days 7-14, 14-30, 30-60, 60-90.
pub fn window_curve(n_users: u32, seed: u64, schema: &str) -> Result<Vec<CurvePoint>> {
    let (ds, sim) = setup(n_users, seed, schema)?;
    let windows: Vec<Window> = [(7, 14), (14, 30), (30, 60), (60, 90)]
        .iter()
        .map(|(lo, hi)| Window { lo: *lo, hi: *hi })
        .collect();
    let func = AttributionFunction::new(GMode::NullUniform, 0.0)?;
    let errors = window_errors_for(&ds, &sim, 0, &func, &windows, EvalOptions::default())?;
    Ok(windows
        .iter()
        .zip(errors)
        .map(|(w, e)| CurvePoint {
            window: format!("{}-{}", w.lo, w.hi),
            error_usd: e / 100.0,
        })
        .collect())
}

#[derive(Debug, Serialize)]
pub struct Histogram {
    pub schema: String,
    pub counts: Vec<u64>,
    pub mean_revenue_usd: Vec<Option<f64>>,
}

/// Postbacks per final conversion value, with each value's mean 30-day revenue.
pub fn value_histogram(n_users: u32, seed: u64, schema: &str) -> Result<Histogram> {
    let (ds, sim) = setup(n_users, seed, schema)?;
    let prof = Profiles::build(&ds, &sim, Window::first(30), false)?;
    let mut counts = vec![0u64; 64];
    for pb in &sim.postbacks {
        counts[pb.final_value as usize] += 1;
    }
    let pooled = prof.pooled();
    Ok(Histogram {
        schema: sim.schema.label(),
        counts,
        mean_revenue_usd: (0..64u8).map(|v| pooled.mean(v).map(|m| m / 100.0)).collect(),
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

#[wasm_bindgen(js_name = privacyExplorer)]
pub fn privacy_explorer_js(n_users: u32, seed: u64, schema: &str, p: u64, lambda: f64) -> std::result::Result<String, JsValue> {
    to_js(privacy_explorer(n_users, seed, schema, p, lambda))
}

#[wasm_bindgen(js_name = windowCurve)]
pub fn window_curve_js(n_users: u32, seed: u64, schema: &str) -> std::result::Result<String, JsValue> {
    to_js(window_curve(n_users, seed, schema))
}

#[wasm_bindgen(js_name = valueHistogram)]
pub fn value_histogram_js(n_users: u32, seed: u64, schema: &str) -> std::result::Result<String, JsValue> {
    to_js(value_histogram(n_users, seed, schema))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explorer_modes() {
        let e = privacy_explorer(2_000, 1, "D7 RR", 0, 0.5).unwrap();
        assert_eq!(e.errors.len(), 4);
        assert_eq!(e.suppressed_users, 0);
        let e = privacy_explorer(2_000, 1, "D7 RR", 10, 0.5).unwrap();
        assert_eq!(e.errors.len(), 3);
        assert!(e.suppressed_users > 0);
    }

    #[test]
    fn histogram_counts_postbacks() {
        let h = value_histogram(2_000, 2, "EV").unwrap();
        assert_eq!(h.counts.len(), 64);
        assert!(h.counts.iter().sum::<u64>() > 0);
        assert!(value_histogram(2_000, 2, "D9 XX").is_err());
    }

    #[test]
    fn curve_has_four_windows() {
        let c = window_curve(2_000, 3, "D7 RR").unwrap();
        assert_eq!(c.len(), 4);
    }
}
