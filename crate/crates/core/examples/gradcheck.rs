//! Finite-difference gradient check of a tiny gated ResNet.

use bbg::layers::{Model, ModelSpec};
use bbg::verify::{check_gradients, GRAD_TOLERANCE};

fn main() -> bbg::Result<()> {
    let seed = std::env::args().nth(1).map_or(1, |s| s.parse().expect("integer seed"));
    let mut spec = ModelSpec::resnet20().with_input([3, 8, 8], 4);
    spec.kernel_stage = [4, 8, 8];
    let mut model = Model::new(&spec, seed)?;
    let r = check_gradients(&mut model, seed, 3)?;
    for e in &r.entries {
        println!(
            "{:<32} [{:>4}] analytic {:+.6e} numeric {:+.6e} rel {:.1e}",
            e.param, e.index, e.analytic, e.numeric, e.rel_err
        );
    }
    println!("{} coordinates, {} above {GRAD_TOLERANCE:e}", r.entries.len(), r.failures().len());
    Ok(())
}
