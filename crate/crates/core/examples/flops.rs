//! Per-layer operation counts for ResNet-20 in each residual variant.

use bbg::layers::{count_flops, layer_ops, BlockVariant, LayerRole, Model, ModelSpec};

fn main() -> bbg::Result<()> {
    let gated = Model::<f32>::new(&ModelSpec::resnet20(), 0)?;
    println!("{:<28} {:<10} {:>14} {:>14}", "layer", "role", "output", "ops");
    for l in gated.describe()? {
        let ops = match l.role {
            LayerRole::Gate => (l.out[0] * l.out[1] * l.out[2]) as u64,
            _ => layer_ops(&l),
        };
        println!("{:<28} {:<10} {:>14} {:>14}", l.name, format!("{:?}", l.role), format!("{:?}", l.out), ops);
    }
    println!();
    for variant in BlockVariant::ALL {
        let m = Model::<f32>::new(&ModelSpec::resnet20().with_variant(variant), 0)?;
        let r = count_flops(&m)?;
        println!(
            "{:<14} float {:>10}  binary/64 {:>10.0}  gates {:>7}  total {:>10.0}",
            variant.to_string(),
            r.float_ops,
            r.binary_equivalent,
            r.gate_ops,
            r.total
        );
    }
    Ok(())
}
