use std::sync::{Arc, OnceLock};

use serde_json::{json, Value};
use vbsurv::api::{Service, MAX_BATCH};
use vbsurv::dataset::{generate_synthetic, Covariate, CovariateSchema, SyntheticConfig};
use vbsurv::network::{Mode, NetworkConfig, RiskNetwork};
use vbsurv::store::ModelArtifact;
use vbsurv::trainer::{train, AftLikelihood, TrainConfig};

fn artifact() -> ModelArtifact {
    static CACHE: OnceLock<ModelArtifact> = OnceLock::new();
    CACHE.get_or_init(build_artifact).clone()
}

fn build_artifact() -> ModelArtifact {
    let schema = CovariateSchema::new(
        vec![
            Covariate::continuous("age"),
            Covariate::categorical("region", 5),
            Covariate::categorical("profession", 3772),
        ],
        "duration",
        "censored",
    )
    .unwrap();
    let (ds, _) = generate_synthetic(&SyntheticConfig::new(400, schema.clone(), 11)).unwrap();
    let net_cfg = NetworkConfig::for_schema(&schema, &[8]).unwrap();
    let net = RiskNetwork::new(net_cfg.clone()).unwrap();
    let cfg = TrainConfig {
        max_iterations: 3,
        seed: 4,
        ..Default::default()
    };
    let mut lik = AftLikelihood::new(&net, &ds.records, Mode::Training);
    let out = train(&mut lik, &cfg).unwrap();
    let state = lik.into_state();
    ModelArtifact::from_training(&ds, net_cfg, &state, &out, &cfg).unwrap()
}

fn service() -> Service {
    Service::new(Some(artifact()), None, 1).unwrap()
}

/// A profession value that occurs in the training data.
fn profession() -> String {
    artifact().vocab.tables[1].values()[0].clone()
}

fn scenario(age: f64, region: &str) -> Value {
    json!({
        "covariates": {"age": age, "region": region, "profession": profession()},
        "n_mcmc": 50,
        "realisations": 10,
    })
}

fn post(svc: &Service, path: &str, body: &Value) -> (u16, Value) {
    let r = svc.handle("POST", path, body.to_string().as_bytes());
    (r.status, r.body)
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn health_reports_version_and_k() {
    let svc = service();
    let r = svc.handle("GET", "/health", b"");
    assert_eq!(r.status, 200);
    assert_eq!(r.body["k"].as_u64().unwrap() as usize, svc.num_params().unwrap());
    assert_eq!(r.body["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn schema_lists_covariates_and_truncates_large_tables() {
    let svc = service();
    let r = svc.handle("GET", "/schema", b"");
    assert_eq!(r.status, 200);
    let covs = r.body["covariates"].as_array().unwrap();
    assert_eq!(covs.len(), 3);
    assert_eq!(covs[0]["kind"], "continuous");
    assert!(covs[0]["mean"].is_number());
    assert_eq!(covs[1]["truncated"], false);
    assert_eq!(covs[1]["values"].as_array().unwrap().len(), 5);
    assert_eq!(covs[2]["cardinality"], 3772);
    assert_eq!(covs[2]["truncated"], true);
    assert!(covs[2]["values"].as_array().unwrap().len() <= 200);
}

#[test]
fn no_model_gives_503() {
    let svc = Service::new(None, None, 0).unwrap();
    assert_eq!(svc.handle("GET", "/schema", b"").status, 503);
    assert_eq!(post(&svc, "/predict", &scenario(1.0, "region_1")).0, 503);
    assert_eq!(svc.handle("GET", "/health", b"").status, 200);
}

#[test]
fn predict_returns_monotone_curve_with_horizon_readout() {
    let svc = service();
    let (status, body) = post(&svc, "/predict", &scenario(0.3, "region_2"));
    assert_eq!(status, 200, "{body}");
    let t = floats(&body["t"]);
    let s = floats(&body["S_hat"]);
    let lo = floats(&body["lo"]);
    let hi = floats(&body["hi"]);
    assert_eq!(t.len(), 365);
    assert!(s.windows(2).all(|w| w[1] <= w[0]));
    assert!((0..s.len()).all(|i| lo[i] <= s[i] && s[i] <= hi[i]));
    assert_eq!(body["s_at_horizon"].as_f64().unwrap(), s[179]);
    assert!(body["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn seeded_requests_replay_exactly() {
    let svc = service();
    let mut req = scenario(0.3, "region_2");
    req["seed"] = json!(99);
    let a = post(&svc, "/predict", &req).1;
    let b = post(&svc, "/predict", &req).1;
    assert_eq!(a, b);

    let fixed = Service::new(Some(artifact()), Some(5), 0).unwrap();
    let req = scenario(0.3, "region_2");
    assert_eq!(post(&fixed, "/predict", &req).1, post(&fixed, "/predict", &req).1);
}

#[test]
fn unseen_category_warns_and_succeeds() {
    let svc = service();
    let (status, body) = post(&svc, "/predict", &scenario(0.0, "atlantis"));
    assert_eq!(status, 200);
    let w = body["warnings"].as_array().unwrap();
    assert_eq!(w.len(), 1);
    assert!(w[0].as_str().unwrap().contains("region"));
}

#[test]
fn request_validation_errors() {
    let svc = service();
    let (status, body) = post(&svc, "/predict", &json!({"covariates": {"age": 1.0, "region": "region_1"}}));
    assert_eq!(status, 400);
    assert_eq!(body["fields"][0]["field"], "profession");

    let mut req = scenario(0.0, "region_1");
    req["covariates"]["age"] = json!("NaN");
    assert_eq!(post(&svc, "/predict", &req).0, 422);

    req["covariates"]["age"] = json!("old");
    assert_eq!(post(&svc, "/predict", &req).0, 400);

    let mut req = scenario(0.0, "region_1");
    req["covariates"]["height"] = json!(2.0);
    let (status, body) = post(&svc, "/predict", &req);
    assert_eq!(status, 400);
    assert_eq!(body["fields"][0]["field"], "height");

    let mut req = scenario(0.0, "region_1");
    req["n_mcmc"] = json!(0);
    assert_eq!(post(&svc, "/predict", &req).0, 400);

    assert_eq!(svc.handle("POST", "/predict", b"{not json").status, 400);
    assert_eq!(svc.handle("GET", "/predict", b"").status, 405);
    assert_eq!(svc.handle("GET", "/nope", b"").status, 404);
}

#[test]
fn batch_shares_a_seed_and_keeps_order() {
    let svc = service();
    let items = json!([scenario(-1.0, "region_1"), scenario(2.0, "region_1")]);
    let (status, body) = post(&svc, "/predict-batch", &items);
    assert_eq!(status, 200);
    let curves = body.as_array().unwrap();
    assert_eq!(curves.len(), 2);
    assert_eq!(curves[0]["seed"], curves[1]["seed"]);
    assert_ne!(curves[0]["S_hat"], curves[1]["S_hat"]);

    // identical scenarios under the shared seed differ by exactly zero
    let same = json!([scenario(0.5, "region_3"), scenario(0.5, "region_3")]);
    let body = post(&svc, "/predict-batch", &same).1;
    let d = body[0]["s_at_horizon"].as_f64().unwrap() - body[1]["s_at_horizon"].as_f64().unwrap();
    assert_eq!(d, 0.0);

    // the first curve of a batch matches a single request with the same seed
    let mut single = scenario(-1.0, "region_1");
    single["seed"] = curves[0]["seed"].clone();
    assert_eq!(post(&svc, "/predict", &single).1, curves[0]);
}

#[test]
fn batch_errors_are_inline_and_size_is_capped() {
    let svc = service();
    let items = json!([scenario(0.0, "region_1"), {"covariates": {"age": 1.0}}, scenario(1.0, "region_2")]);
    let (status, body) = post(&svc, "/predict-batch", &items);
    assert_eq!(status, 200);
    let out = body.as_array().unwrap();
    assert!(out[0]["S_hat"].is_array());
    assert_eq!(out[1]["status"], 400);
    assert!(out[1]["error"].is_string());
    assert!(out[2]["S_hat"].is_array());

    let many = Value::Array(vec![scenario(0.0, "region_1"); MAX_BATCH + 1]);
    assert_eq!(post(&svc, "/predict-batch", &many).0, 413);
}

#[test]
fn concurrent_requests_match_serial() {
    let svc = Arc::new(service());
    let reqs: Vec<Value> = (0..4)
        .map(|i| {
            let mut r = scenario(i as f64 - 1.5, "region_4");
            r["seed"] = json!(i);
            r
        })
        .collect();
    let serial: Vec<Value> = reqs.iter().map(|r| post(&svc, "/predict", r).1).collect();
    let handles: Vec<_> = reqs
        .into_iter()
        .map(|r| {
            let svc = Arc::clone(&svc);
            std::thread::spawn(move || post(&svc, "/predict", &r).1)
        })
        .collect();
    let parallel: Vec<Value> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(serial, parallel);
}
