//! Validates every bundled TOML config and runs the cheap ones through the
//! same pipeline as the `nozzle-lab` binary, writing into a temporary
//! directory.

use nozzle_lab::cli::{self, Command, RunOverrides};
use std::path::Path;

fn main() -> nozzle_lab::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for path in &paths {
        let cfg = cli::load_config(path)?;
        println!("{}: valid, hash {}", path.file_name().unwrap().to_string_lossy(), &cfg.hash[..12]);
    }
    let out = std::env::temp_dir().join("nozzle-lab-config-pipeline");
    for (file, command) in [("geometry.toml", Command::GeometryCheck), ("poincare.toml", Command::Poincare)] {
        let cfg = cli::load_config(&dir.join(file))?;
        let overrides = RunOverrides { out: Some(out.join(file.trim_end_matches(".toml"))), ..Default::default() };
        let manifest = cli::run(&cfg, command, &overrides)?;
        for a in &manifest.assertions {
            println!("  [{}] {} = {:.3e} (threshold {})", if a.passed { "PASS" } else { "FAIL" }, a.name, a.value, a.threshold);
        }
        println!("{file}: artifacts {:?}", manifest.artifacts);
    }
    Ok(())
}
