//! Print the full default run configuration, a starting point for the
//! `tether` binary's `--config` file.
//!
//! cargo run --example default_config > run.json

use tethered_uuv::cli::RunConfig;

fn main() -> tethered_uuv::Result<()> {
    let cfg = RunConfig::default();
    println!("{}", serde_json::to_string_pretty(&cfg)?);
    Ok(())
}
