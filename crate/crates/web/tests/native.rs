use safetune_web::{bounds_json_native, sweep_json_native, sweep_svg_native};

#[test]
fn sweep_json_has_one_row_per_point() {
    let text = sweep_json_native("I", 6, 3, 0.5, 1.0, "0.1, 0.3,0.5", "0 1").unwrap();
    let rows: serde_json::Value = serde_json::from_str(&text).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0]["case"], "I");
}

#[test]
fn sweep_svg_is_deterministic() {
    let a = sweep_svg_native("II", 6, 3, 0.5, 0.5, "0,0.5,1", "3").unwrap();
    let b = sweep_svg_native("II", 6, 3, 0.5, 0.5, "0,0.5,1", "3").unwrap();
    assert!(a.starts_with("<svg"));
    assert_eq!(a, b);
}

#[test]
fn bounds_hold_and_zero_lambda_is_inf() {
    let v: serde_json::Value =
        serde_json::from_str(&bounds_json_native(8, 4, 0.5, 0.5, 0.7, 2).unwrap()).unwrap();
    assert!(v["safety"]["slack"].as_f64().unwrap() >= -1e-9);
    assert!(v["capability"]["slack"].as_f64().unwrap() >= -1e-9);
    let v: serde_json::Value =
        serde_json::from_str(&bounds_json_native(8, 4, 0.5, 0.5, 0.0, 2).unwrap()).unwrap();
    assert_eq!(v["safety"]["bound_value"], "inf");
}

#[test]
fn bad_inputs_are_messages() {
    assert!(sweep_json_native("III", 6, 3, 0.5, 1.0, "0.1", "0").is_err());
    assert!(sweep_json_native("I", 6, 3, 0.5, 1.0, "0.1,x", "0").is_err());
    assert!(sweep_json_native("I", 64, 8, 0.5, 1.0, "0.1", "0").is_err());
    assert!(bounds_json_native(8, 4, 3.0, 0.5, 1.0, 0).is_err());
}
