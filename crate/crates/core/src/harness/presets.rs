//! Bundled scenarios.
//!
//! `fig1_4x4` is the four-CAV ring tracking two leader/follower HDV pairs.
//! The fault scenarios reuse that road but give every fault-free CAV a second
//! sensor on the HDV the faulty CAV watches. Without that redundancy the
//! faulty CAV is the only source for its HDV's state, the observer follows
//! the bias, and the residual has nothing to separate it from.
//!
//! On the 25-CAV random graph `‖Â‖₂ > 1` for every shared gain, so no
//! covariance bound exists there. That preset minimizes `ρ(Â)` instead and
//! carries no detectors; it serves the baseline comparison.

use serde_json::{json, Value};

pub const NAMES: &[&str] = &["fig1_4x4", "fault_cav2", "fault_cav1_largenoise", "largescale_25x25"];

pub fn preset(name: &str) -> Option<Value> {
    match name {
        "fig1_4x4" => Some(fig1()),
        "fault_cav2" => Some(fault_cav2()),
        "fault_cav1_largenoise" => Some(fault_cav1_largenoise()),
        "largescale_25x25" => Some(largescale()),
        _ => None,
    }
}

fn hdv_params(noise_var: f64) -> Value {
    json!({
        "rho": 0.2,
        "tau_steps": 10,
        "a1": 0.4,
        "a2": 0.1,
        "b1_m": 10.0,
        "b2_s": 0.5,
        "velocity_noise_var": noise_var,
        "scale_by_dt": true
    })
}

fn road_4() -> Value {
    json!([
        {"kind": "car_following", "leader": 2, "initial_position_m": 75.0, "initial_velocity_mps": 30.0},
        {"kind": "car_following", "leader": 3, "initial_position_m": 75.0, "initial_velocity_mps": 30.0},
        {
            "kind": "free_flow",
            "desired_speed_profile": [{"from_step": 0, "speed_mps": 30.0}, {"from_step": 500, "speed_mps": 40.0}],
            "initial_position_m": 100.0,
            "initial_velocity_mps": 30.0
        },
        {
            "kind": "free_flow",
            "desired_speed_profile": [{"from_step": 0, "speed_mps": 30.0}],
            "initial_position_m": 100.0,
            "initial_velocity_mps": 30.0
        }
    ])
}

fn pv(hdv: usize) -> [Value; 2] {
    [
        json!({"hdv": hdv, "component": "position"}),
        json!({"hdv": hdv, "component": "velocity"}),
    ]
}

/// CAV `i` watches HDV `i`; with `witness = Some(h)` every other CAV also
/// watches HDV `h`.
fn cavs_4(noise_var: f64, witness: Option<usize>) -> Value {
    let cavs: Vec<Value> = (0..4)
        .map(|i| {
            let mut measures: Vec<Value> = pv(i).to_vec();
            if let Some(h) = witness.filter(|&h| h != i) {
                measures.extend(pv(h));
            }
            json!({"measures": measures, "noise_var": noise_var})
        })
        .collect();
    Value::Array(cavs)
}

fn ring_4() -> Value {
    json!({"out_neighbors": [[1, 3], [2, 0], [3, 1], [0, 2]]})
}

fn gain() -> Value {
    json!({"epsilon": 0.5, "family": "shared", "objective": "variance_bound"})
}

fn detectors_4() -> Value {
    json!([
        {"mode": "stateless", "detection_level": 2.0},
        {"mode": "stateful", "window": 15, "far": 0.003},
        {"mode": "stateful", "window": 15, "far": 0.05},
        {"mode": "stateful_weighted", "window": 15, "lambda": 0.7, "far": 0.05},
        {"mode": "stateful_weighted", "window": 30, "lambda": 0.8, "far": 0.003}
    ])
}

fn fig1() -> Value {
    json!({
        "name": "fig1_4x4",
        "seed": 1,
        "horizon_steps": 2000,
        "sampling_dt_s": 0.05,
        "model_kind": "ncv",
        "hdv_params": hdv_params(0.1),
        "hdvs": road_4(),
        "cavs": cavs_4(0.15, None),
        "network": ring_4(),
        "consensus_rule": "uniform",
        "gain": gain(),
        "noise": {"process_cov_scale": 0.1},
        "fdi": {"measurement_gain": 1.0, "detectors": detectors_4()},
        "faults": [],
        "metrics": {"steady_fraction": 0.4, "warmup_steps": 100}
    })
}

fn fault_cav2() -> Value {
    json!({
        "name": "fault_cav2",
        "seed": 2,
        "horizon_steps": 800,
        "sampling_dt_s": 0.05,
        "model_kind": "ncv",
        "hdv_params": hdv_params(0.1),
        "hdvs": road_4(),
        "cavs": cavs_4(0.15, Some(1)),
        "network": ring_4(),
        "consensus_rule": "uniform",
        "gain": gain(),
        "noise": {"process_cov_scale": 0.1},
        "fdi": {"measurement_gain": 1.0, "detectors": detectors_4()},
        "faults": [{"cav": 1, "onset_step": 300, "bias_mean": 1.5, "bias_var": 0.25, "active": true}],
        "metrics": {"steady_fraction": 0.4, "warmup_steps": 100}
    })
}

fn fault_cav1_largenoise() -> Value {
    json!({
        "name": "fault_cav1_largenoise",
        "seed": 3,
        "horizon_steps": 800,
        "sampling_dt_s": 0.05,
        "model_kind": "ncv",
        "hdv_params": hdv_params(5.0),
        "hdvs": road_4(),
        "cavs": cavs_4(1.0, Some(0)),
        "network": ring_4(),
        "consensus_rule": "uniform",
        "gain": gain(),
        "noise": {"process_cov_scale": 1.0},
        "fdi": {
            "measurement_gain": 1.0,
            "detectors": [
                {"mode": "stateless", "detection_level": 2.0},
                {"mode": "stateful", "window": 20, "far": 0.05}
            ]
        },
        "faults": [{"cav": 0, "onset_step": 400, "bias_mean": 5.0, "bias_var": 0.5, "active": true}],
        "metrics": {"steady_fraction": 0.4, "warmup_steps": 100}
    })
}

fn largescale() -> Value {
    let n = 25;
    let hdvs: Vec<Value> = (0..n)
        .map(|h| {
            let lane_head = 100.0 + 60.0 * (h / 2) as f64;
            if h % 2 == 0 {
                json!({
                    "kind": "free_flow",
                    "desired_speed_profile": [{"from_step": 0, "speed_mps": 25.0}],
                    "initial_position_m": lane_head,
                    "initial_velocity_mps": 25.0
                })
            } else {
                json!({
                    "kind": "car_following",
                    "leader": h - 1,
                    "initial_position_m": lane_head - 25.0,
                    "initial_velocity_mps": 25.0
                })
            }
        })
        .collect();
    let cavs: Vec<Value> = (0..n)
        .map(|i| json!({"measures": pv(i).to_vec(), "noise_var": 0.15}))
        .collect();
    json!({
        "name": "largescale_25x25",
        "seed": 4,
        "horizon_steps": 3000,
        "sampling_dt_s": 0.1,
        "model_kind": "ncv",
        "hdv_params": hdv_params(0.1),
        "hdvs": hdvs,
        "cavs": cavs,
        "network": {"erdos_renyi": {"p": 0.15, "seed": 15, "require_strong": true}},
        "consensus_rule": "uniform",
        "gain": {"epsilon": 0.5, "family": "shared", "objective": "spectral_radius"},
        "noise": {"process_cov_scale": 0.1},
        "fdi": {"measurement_gain": 1.0, "detectors": []},
        "faults": [],
        "metrics": {"steady_fraction": 0.4, "warmup_steps": 100}
    })
}
