//! Runs a TOML experiment grid and prints mean accuracy per arm.
//!
//! ```text
//! cargo run --release --example ablation_grid -- experiments/ablation.toml
//! ```
//!
//! Without an argument a two-arm grid on the synthetic set is used.

use bbg::data::{data_root, load_subset};
use bbg::train::{run_grid, GridSpec};

const DEMO: &str = r#"
dataset = "toy-2class"
seeds = [1, 2, 3]
epochs = 2

[[arm]]
name = "balanced-gated"
variant = "gated"
weight-quant = "balanced"

[[arm]]
name = "vanilla-identity"
variant = "vanilla"
weight-quant = "vanilla"
"#;

fn main() -> bbg::Result<()> {
    let text = match std::env::args().nth(1) {
        Some(p) => std::fs::read_to_string(&p).map_err(|e| bbg::Error::io(&p, e))?,
        None => DEMO.to_string(),
    };
    let spec = GridSpec::from_toml(&text)?;
    let splits = load_subset(spec.dataset, &data_root(), spec.seeds[0], None)?;
    let report = run_grid(&spec, &splits, true)?;
    print!("{}", report.table());
    Ok(())
}
