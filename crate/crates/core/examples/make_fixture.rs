//! Regenerates the bundled fixture under `crates/core/fixtures/`.
//!
//! `cargo run -p coldchain-core --example make_fixture` rewrites the input
//! CSVs; add `--expected` to also rerun the pipeline on them and refresh
//! `fixtures/expected/`.

use std::fs::File;
use std::path::{Path, PathBuf};

use coldchain_core::config::RunConfig;
use coldchain_core::cost::write_state_meta;
use coldchain_core::data::{write_population_csv, write_vaccination_csv};
use coldchain_core::pipeline::{files, run_pipeline};
use coldchain_core::synth::{synthesize, SynthConfig};

const STATES: usize = 3;
const DAYS: usize = 60;
const SEED: u64 = 2021;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir)?;
    let data = synthesize(&SynthConfig {
        states: STATES,
        days: DAYS,
        seed: SEED,
        ..SynthConfig::default()
    });
    write_vaccination_csv(File::create(dir.join("vaccinations.csv"))?, &data.records)?;
    write_population_csv(File::create(dir.join("population.csv"))?, &data.populations)?;
    write_state_meta(File::create(dir.join("state_meta.csv"))?, &data.metas)?;
    println!("wrote fixture inputs to {}", dir.display());

    if std::env::args().any(|a| a == "--expected") {
        refresh_expected(&dir)?;
    }
    Ok(())
}

fn refresh_expected(dir: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let mut cfg = RunConfig::load(&dir.join("config.toml"))?;
    cfg.output.dir = scratch.path().to_path_buf();
    run_pipeline(&cfg)?;
    let expected = dir.join("expected");
    std::fs::create_dir_all(&expected)?;
    for name in [files::ALLOCATIONS, files::METRICS, files::COSTS, files::DEMAND] {
        std::fs::copy(scratch.path().join(name), expected.join(name))?;
    }
    println!("refreshed {}", expected.display());
    Ok(())
}
