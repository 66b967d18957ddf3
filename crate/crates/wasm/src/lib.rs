//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Every binding returns a JSON string. The `*_json` functions hold the logic
//! so that native tests can call them without a JavaScript host.

use serde_json::{json, Value};
use vbsurv::api::Service;
use vbsurv::dataset::{demo_schema, demo_truth, generate_synthetic, SyntheticConfig};
use vbsurv::predictor::{daily_grid, kaplan_meier};
use vbsurv::stats::{hazard_rate, lognormal_event_density, lognormal_survival, LogNormalParams};
use vbsurv::store::ModelArtifact;
use wasm_bindgen::prelude::*;

const MAX_DAYS: usize = 3650;
const MAX_RECORDS: usize = 20_000;

fn check_days(days: usize) -> Result<(), String> {
    if days == 0 || days > MAX_DAYS {
        return Err(format!("days must be in 1..={MAX_DAYS}"));
    }
    Ok(())
}

/// S(t), f(t) and λ(t) of ln T ~ N(mu, sigma²) on a daily grid.
pub fn lognormal_curves_json(mu: f64, sigma: f64, days: usize) -> Result<String, String> {
    check_days(days)?;
    let p = LogNormalParams::new(mu, sigma).map_err(|e| e.to_string())?;
    let t = daily_grid(days);
    let mut s = Vec::with_capacity(days);
    let mut f = Vec::with_capacity(days);
    let mut h = Vec::with_capacity(days);
    for &ti in &t {
        s.push(lognormal_survival(ti, &p).map_err(|e| e.to_string())?);
        f.push(lognormal_event_density(ti, &p).map_err(|e| e.to_string())?);
        h.push(hazard_rate(ti, &p).map_err(|e| e.to_string())?);
    }
    Ok(json!({"t": t, "survival": s, "density": f, "hazard": h}).to_string())
}

/// Simulates the demo data set and returns its Kaplan-Meier curve next to
/// the population-averaged true survival.
pub fn simulate_km_json(n: usize, censor_window: f64, seed: u64) -> Result<String, String> {
    if n == 0 || n > MAX_RECORDS {
        return Err(format!("n must be in 1..={MAX_RECORDS}"));
    }
    if !(censor_window >= 1.0 && censor_window <= MAX_DAYS as f64) {
        return Err(format!("censor window must be in [1, {MAX_DAYS}] days"));
    }
    let mut cfg = SyntheticConfig::new(n, demo_schema(), seed);
    cfg.censor_window_days = censor_window;
    cfg.truth = Some(demo_truth());
    let (ds, truth) = generate_synthetic(&cfg).map_err(|e| e.to_string())?;
    let km = kaplan_meier(ds.records.iter().map(|r| (r.duration_days(), r.censored))).map_err(|e| e.to_string())?;
    let t = daily_grid(censor_window.floor() as usize);
    let km_curve: Vec<f64> = t.iter().map(|&x| km.survival_at(x)).collect();
    let mut true_curve = Vec::with_capacity(t.len());
    for &x in &t {
        let mut acc = 0.0;
        for r in &ds.raw {
            acc += truth.survival(x, &r.values).map_err(|e| e.to_string())?;
        }
        true_curve.push(acc / ds.len() as f64);
    }
    Ok(json!({
        "t": t,
        "km": km_curve,
        "truth": true_curve,
        "n": ds.len(),
        "censored_fraction": ds.censored_fraction(),
        "km_median": km.median(),
    })
    .to_string())
}

/// A trained model held in the page, answering the same requests as the
/// HTTP service.
#[wasm_bindgen]
pub struct DemoModel {
    service: Service,
}

impl DemoModel {
    pub fn from_json(model_json: &str) -> Result<DemoModel, String> {
        let artifact = ModelArtifact::from_json(model_json).map_err(|e| e.to_string())?;
        let service = Service::new(Some(artifact), None, 0).map_err(|e| e.to_string())?;
        Ok(DemoModel { service })
    }

    fn call(&self, method: &str, path: &str, body: &str) -> Result<String, String> {
        let r = self.service.handle(method, path, body.as_bytes());
        if r.status == 200 {
            Ok(r.body.to_string())
        } else {
            Err(error_text(&r.body))
        }
    }

    pub fn schema_json(&self) -> Result<String, String> {
        self.call("GET", "/schema", "")
    }

    pub fn predict_json(&self, request: &str) -> Result<String, String> {
        self.call("POST", "/predict", request)
    }

    pub fn predict_batch_json(&self, requests: &str) -> Result<String, String> {
        self.call("POST", "/predict-batch", requests)
    }
}

fn error_text(body: &Value) -> String {
    let mut msg = body["error"].as_str().unwrap_or("request failed").to_string();
    if let Some(fields) = body["fields"].as_array() {
        for f in fields {
            msg.push_str(&format!("; {}: {}", f["field"].as_str().unwrap_or("?"), f["message"].as_str().unwrap_or("")));
        }
    }
    msg
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn lognormal_curves(mu: f64, sigma: f64, days: usize) -> Result<String, JsError> {
    js(lognormal_curves_json(mu, sigma, days))
}

#[wasm_bindgen]
pub fn simulate_km(n: usize, censor_window: f64, seed: u64) -> Result<String, JsError> {
    js(simulate_km_json(n, censor_window, seed))
}

#[wasm_bindgen]
impl DemoModel {
    #[wasm_bindgen(constructor)]
    pub fn new(model_json: &str) -> Result<DemoModel, JsError> {
        DemoModel::from_json(model_json).map_err(|e| JsError::new(&e))
    }

    pub fn schema(&self) -> Result<String, JsError> {
        js(self.schema_json())
    }

    pub fn predict(&self, request: &str) -> Result<String, JsError> {
        js(self.predict_json(request))
    }

    #[wasm_bindgen(js_name = predictBatch)]
    pub fn predict_batch(&self, requests: &str) -> Result<String, JsError> {
        js(self.predict_batch_json(requests))
    }
}
