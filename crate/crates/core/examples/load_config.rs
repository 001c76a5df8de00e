//! Loads a TOML configuration and builds the service from it.
//!
//! cargo run --example load_config

use tcm_consult::config::AppConfig;
use tcm_consult::service::Service;

const CONFIG: &str = r#"
[provider]
model = "offline"

[consult]
coverage_threshold = 0.8
gain_threshold = 0.1
question_budget = 4

[storage]
data_dir = "var"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("tcm-consult.toml");
    std::fs::write(&path, CONFIG)?;
    let cfg = AppConfig::load(&path)?;
    println!("thresholds: {:?}", cfg.thresholds()?);
    let svc = Service::from_config(&cfg)?;
    let view = svc.create_session(None)?;
    println!("session {} stored under {}", view.session_id, cfg.storage.data_dir.display());
    Ok(())
}
