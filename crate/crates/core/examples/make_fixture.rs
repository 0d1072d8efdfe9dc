//! Regenerates the bundled synthetic macro table.
//!
//! cargo run --example make_fixture [OUTPUT]

use std::path::PathBuf;

use fiscal_ipw::fixture::{fixture_csv, FIXTURE_FILE};

fn main() -> std::io::Result<()> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(FIXTURE_FILE));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&path, fixture_csv())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
