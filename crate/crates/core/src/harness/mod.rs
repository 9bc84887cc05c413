//! Scenario files, end-to-end runs, Monte Carlo campaigns, the baseline
//! comparison and result IO.

pub mod baseline;
pub mod io;
pub mod montecarlo;
pub mod presets;
pub mod run;
pub mod scenario;

pub use baseline::{compare_baseline, BaselineComparison};
pub use montecarlo::{monte_carlo, MonteCarloReport};
pub use run::{compute_metrics, mse_metrics, prepare, realize, run_scenario, run_seeded, run_with, RunResult};
pub use scenario::{parse_scenario, validate_scenario, Scenario};

use serde_json::Value;

use crate::error::{Error, Result};

/// A preset name or a path to a scenario file, as raw JSON.
pub fn load_raw(name_or_path: &str) -> Result<Value> {
    if let Some(v) = presets::preset(name_or_path) {
        return Ok(v);
    }
    let text = std::fs::read_to_string(name_or_path)
        .map_err(|e| Error::Io(format!("{name_or_path}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(vec![format!("$: invalid JSON: {e}")]))
}
