use parisi_wasm_demo::{certify, optimize_measure, rs_scan};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn optimized_measure_certifies_with_a_small_gap() {
    let model = r#"{"beta": {"2": 1.0}}"#;
    let rs = parse(rs_scan(model, 41, 1001));
    let opt = parse(optimize_measure(model, 2, 200, 1001, 1000));
    assert!(opt["upper"].as_f64().unwrap() <= rs["best_upper"].as_f64().unwrap() + 1e-9);
    let measure = serde_json::json!({ "atoms": opt["atoms"] }).to_string();
    let cert = parse(certify(model, &measure, 1001, 1000));
    assert!(cert["gap"].as_f64().unwrap() < cert_gap_of_rs(model, &rs));
    assert!(cert["lower"].as_f64().unwrap() <= cert["upper"].as_f64().unwrap());
}

fn cert_gap_of_rs(model: &str, rs: &Value) -> f64 {
    let measure = serde_json::json!({ "atoms": [{ "q": rs["best_q"], "w": 1.0 }] }).to_string();
    parse(certify(model, &measure, 1001, 1000))["gap"].as_f64().unwrap()
}

#[test]
fn scan_rejects_a_single_point() {
    assert!(parse(rs_scan("{}", 1, 401))["error"].is_string());
}
