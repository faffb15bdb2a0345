//! Rewrite `workloads/` from `rowtag_cli::bundled`.

use std::path::Path;

fn main() -> std::io::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("workloads");
    std::fs::create_dir_all(&dir)?;
    for b in rowtag_cli::bundled::all() {
        std::fs::write(dir.join(b.file), b.text())?;
        println!("wrote {}", b.file);
    }
    Ok(())
}
