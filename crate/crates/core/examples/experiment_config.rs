//! Writes the desk experiment config as TOML and reads it back.

use semcom::harness::ExperimentConfig;

fn main() -> semcom::Result<()> {
    let cfg = ExperimentConfig::desk();
    let text = cfg.to_toml()?;
    print!("{text}");
    let back = ExperimentConfig::from_toml(&text)?;
    eprintln!("round trip equal: {}", back == cfg);
    Ok(())
}
