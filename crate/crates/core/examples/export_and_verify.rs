//! Trains on the synthetic two-class set, exports the bit-packed model,
//! reloads it from disk and checks both engines agree label for label.
//!
//! ```text
//! cargo run --release --example export_and_verify -- [out.bbg]
//! ```

use bbg::bitpack::{read_bbg, write_bbg, PackedModel};
use bbg::data::toy_two_class;
use bbg::train::{evaluate, train, TrainConfig};

fn main() -> bbg::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "toy.bbg".into());
    let splits = toy_two_class(1);
    let (mut model, report) = train(TrainConfig::toy(), &splits)?;
    println!("float test accuracy {:.4}", report.final_accuracy.unwrap_or(0.0));

    write_bbg(&out, &PackedModel::from_model(&model)?)?;
    let packed = read_bbg(&out)?;
    let float = evaluate(&mut model, &splits.test)?.predictions;
    let labels = packed.predict(&splits.test.images)?;
    let agree = labels.iter().zip(&float).filter(|(a, b)| a == b).count();
    println!("wrote {out} ({} bytes)", std::fs::metadata(&out).map(|m| m.len()).unwrap_or(0));
    println!("{agree}/{} labels agree, {} binary layers", labels.len(), packed.binary_layers().count());
    Ok(())
}
