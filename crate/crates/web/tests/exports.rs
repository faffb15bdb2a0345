use rowtag_web::{noninterference_pair, scaling_curve, wavefront};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).expect("valid JSON")
}

const A: [i32; 4] = [1, 2, 3, 4];
const B: [i32; 4] = [5, 6, 7, 8];
const D: [i32; 4] = [1, 1, 1, 1];

#[test]
fn wavefront_computes_and_tags() {
    let v = parse(wavefront(&A, &B, &D, &[0, 5], &[0, 0], &[0, 0]));
    assert_eq!(v["fault"], Value::Null);
    assert_eq!(v["output"]["rows"], serde_json::json!([[20, 23], [44, 51]]));
    assert_eq!(v["output"]["tags"], serde_json::json!([0, 5]));
    let lines: Vec<&str> = v["lines"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l.as_str().unwrap())
        .collect();
    assert!(lines.iter().any(|l| l.contains("out r1:5")), "{lines:?}");
    assert_eq!(v["records"].as_array().unwrap().len(), lines.len());
}

#[test]
fn wavefront_reports_mixing() {
    let v = parse(wavefront(&A, &B, &D, &[0, 0], &[4, 6], &[0, 0]));
    assert!(v["fault"].as_str().unwrap().contains("mixing"), "{v}");
    assert_eq!(v["output"], Value::Null);
}

#[test]
fn wavefront_rejects_bad_shapes() {
    let v = parse(wavefront(&A[..3], &B, &D, &[0, 0], &[0, 0], &[0, 0]));
    assert!(v["error"].is_string());
}

#[test]
fn paired_runs_are_indistinguishable() {
    for os in [false, true] {
        let v = parse(noninterference_pair(4, os, 7, 3, 0, 0));
        assert_eq!(v["verdict"], "indistinguishable", "{v}");
        assert_eq!(v["cycles"][0], v["cycles"][1]);
        assert_eq!(v["public"][0], v["public"][1]);
        // All of C depends on A, so none of it is public.
        assert!(v["public"][0].as_array().unwrap().iter().all(Value::is_null));
        assert_ne!(v["first_row"][0], v["first_row"][1]);
    }
    let v = parse(noninterference_pair(4, false, 7, 1, 2, 0));
    assert_eq!(v["verdict"], "indistinguishable");
    assert!(v["fault"].is_string());
    assert!(parse(noninterference_pair(0, false, 1, 0, 0, 0))["error"].is_string());
}

#[test]
fn scaling_points() {
    let v = parse(scaling_curve(32));
    let points = v.as_array().unwrap();
    let dims: Vec<u64> = points.iter().map(|p| p["dim"].as_u64().unwrap()).collect();
    assert_eq!(dims, vec![2, 4, 8, 16, 32]);
    let ratio = |i: usize| points[i]["ratio"].as_f64().unwrap();
    assert!(ratio(4) / ratio(2) >= 4.0);
}
