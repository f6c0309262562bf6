//! Shared builders for the benchmark targets.

use c2te_core::scenario::Scenario;

/// A fleet of `n` vehicles over five lanes, everything at the switch gap so
/// the whole fleet merges immediately.
pub fn merge_fleet(n: usize) -> Scenario {
    let lanes = [0.0, 2.5, 5.0, 7.5, 10.0];
    let vehicles: Vec<serde_json::Value> = (0..n)
        .map(|i| {
            serde_json::json!({
                "id": i + 1,
                "x_m": 4.0 * i as f64,
                "y_m": lanes[i % lanes.len()],
                "v_mps": 20.0,
                "base_length_m": 2.0,
                "virtual_offset_m": 1.0
            })
        })
        .collect();
    let json = serde_json::json!({
        "lanes_y_m": lanes,
        "desired_lane_y_m": 10.0,
        "dt_s": 0.01,
        "t_end_s": 1.0,
        "target0": {"x_m": 4.0 * n as f64 + 16.0, "y_m": 10.0, "v_mps": 20.0},
        "controller": {
            "sensing_radius_m": 5.0,
            "safe_radius_m": 3.0,
            "switch_gap_m": 4.0,
            "slack_weight": 100.0,
            "gamma": {"power_law": {"gain": 2.0, "exponent": 0.5}}
        },
        "vehicles": vehicles
    });
    Scenario::from_json(&json.to_string()).expect("bench fleet is valid")
}
