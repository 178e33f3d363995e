use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use multifid::executor::SyntheticCurve;

/// Dataset names of the bundled benchmark and the synthetic task behind each.
pub const MINI_DATASETS: [(&str, u64); 5] = [
    ("adult", 0),
    ("christine", 1),
    ("fabert", 2),
    ("jasmine", 3),
    ("vehicle", 4),
];

#[derive(Args)]
pub struct FixtureArgs {
    /// Directory receiving `mini_lcbench/<dataset>.json`.
    #[arg(long, default_value = "fixtures")]
    out: PathBuf,
    /// Configurations shared by every dataset.
    #[arg(long, default_value_t = 200)]
    configs: usize,
    #[arg(long, default_value_t = 50)]
    b_max: u64,
    /// Budgets that also get curves from runs scheduled for that budget.
    #[arg(long, value_delimiter = ',', default_value = "12,25")]
    adaptive: Vec<u64>,
    #[arg(long, default_value_t = 2020)]
    seed: u64,
}

pub fn run(a: FixtureArgs) -> Result<Value> {
    let dir = a.out.join("mini_lcbench");
    std::fs::create_dir_all(&dir)?;
    let reference = SyntheticCurve::task(0, 0.0);
    let space = reference.configuration_space();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let configs: Vec<_> = (0..a.configs).map(|_| space.sample_uniform(&mut rng)).collect();
    let mut written = Vec::new();
    for (name, task) in MINI_DATASETS {
        let objective = SyntheticCurve::by_name(&format!("task{task}")).context("task objective")?;
        let mut doc = objective.replay_document(&configs, &[0], a.b_max, &a.adaptive, "../space1.json")?;
        doc.dataset = name.to_string();
        let path = dir.join(format!("{name}.json"));
        let mut text = serde_json::to_string(&doc)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        written.push(path.display().to_string());
    }
    Ok(json!({"command": "gen-fixture", "configs": a.configs, "files": written}))
}
