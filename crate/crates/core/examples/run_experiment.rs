//! Drives the batch runner from code: writes a config, runs it into a
//! temporary directory and prints the manifest.

use qplab::cli::{run, Command, ExperimentConfig, RunOptions};

fn main() -> qplab::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig::flagship_localization();
    cfg.params.interval = Some([-100, 100]);
    std::fs::write(dir.path().join("localize.json"), cfg.to_json())?;

    let loaded = ExperimentConfig::load(&dir.path().join("localize.json"))?;
    let opts = RunOptions {
        out_dir: dir.path().to_path_buf(),
        ..RunOptions::default()
    };
    let manifest = run(Command::Localize, &loaded, &opts)?;
    println!("{}", serde_json::to_string_pretty(&manifest).unwrap());
    println!("{}", std::fs::read_to_string(&manifest.outputs[0])?);
    Ok(())
}
