//! Regenerate `scenarios/targets_default.json` from the built-in nominal
//! scenario and the default target bands.
//!
//! ```bash
//! cargo run -p powerbench-core --example generate_default_targets -- scenarios/targets_default.json
//! ```

use powerbench_core::calibrate::{BandTargets, CalibrationTargets};
use powerbench_core::scenario::default_scenario;

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "scenarios/targets_default.json".into());
    let targets = CalibrationTargets {
        base: default_scenario(),
        bands: BandTargets::default(),
        force_beta_pkg: None,
    };
    let mut text = serde_json::to_string_pretty(&targets).expect("targets serialize");
    text.push('\n');
    std::fs::write(&path, text).expect("write targets");
    println!("wrote {path}");
}
